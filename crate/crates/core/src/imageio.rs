//! 8-bit image file I/O.
//!
//! PNG goes through the `image` crate; binary PPM (P6) is parsed by hand.
//! Pixel values map to [0,1] reals as v/255 on read and quantize back with
//! round-half-up on write. All writes land via a temporary file plus rename
//! so a failure never leaves a partial output behind.

use std::fs;
use std::path::Path;

use image::ImageEncoder;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// One 8-bit sample to a [0,1] real.
pub fn unit_from_u8<E: Element>(v: u8) -> E {
    E::from_f64(f64::from(v) / 255.0)
}

/// One [0,1] real to an 8-bit sample: clamp, scale, round half up.
pub fn u8_from_unit<E: Element>(v: E) -> u8 {
    let clamped = v.max(E::zero()).min(E::one());
    (clamped.as_f64() * 255.0).round() as u8
}

/// Interleaved RGB bytes of a single (1, 3, h, w) image.
pub fn to_bytes<E: Element>(img: &Tensor<E>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::contract(format!(
            "image write expects shape (1, 3, h, w), got {s}"
        )));
    }
    let mut out = Vec::with_capacity(s.h * s.w * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(u8_from_unit(img.at(0, c, y, x)));
            }
        }
    }
    Ok(out)
}

/// Interleaved RGB bytes back to a (1, 3, h, w) tensor.
pub fn from_bytes<E: Element>(h: usize, w: usize, bytes: &[u8]) -> Result<Tensor<E>> {
    if bytes.len() != h * w * 3 {
        return Err(Error::data(format!(
            "pixel payload holds {} bytes, expected {} for {w}x{h} RGB",
            bytes.len(),
            h * w * 3
        )));
    }
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        unit_from_u8(bytes[(y * w + x) * 3 + c])
    }))
}

/// Write `bytes` to `path` through a sibling temporary file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::data(format!("invalid output path {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

fn encode_ppm(h: usize, w: usize, rgb: &[u8]) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    out
}

fn decode_ppm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut next_token = |what: &str| -> Result<Vec<u8>> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::data(format!("ppm header ends before {what}")));
        }
        Ok(bytes[start..pos].to_vec())
    };

    let magic = next_token("magic")?;
    if magic != b"P6" {
        return Err(Error::data("not a binary ppm (P6) file".to_string()));
    }
    let mut int_field = |what: &str| -> Result<usize> {
        let tok = next_token(what)?;
        std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::data(format!("ppm {what} is not an integer")))
    };
    let w = int_field("width")?;
    let h = int_field("height")?;
    let maxval = int_field("maxval")?;
    if maxval != 255 {
        return Err(Error::data(format!(
            "only 8-bit ppm supported, maxval {maxval}"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::data("ppm header not followed by whitespace".to_string()));
    }
    pos += 1;
    let payload = &bytes[pos..];
    if payload.len() < h * w * 3 {
        return Err(Error::data(format!(
            "ppm payload truncated: {} of {} bytes",
            payload.len(),
            h * w * 3
        )));
    }
    Ok((h, w, payload[..h * w * 3].to_vec()))
}

fn encode_png(h: usize, w: usize, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(rgb, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::data(format!("png encode: {e}")))?;
    Ok(buf)
}

fn extension_of(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

/// Save a (1, 3, h, w) image as 8-bit PNG or binary PPM by extension.
pub fn save_image<E: Element>(path: &Path, img: &Tensor<E>) -> Result<()> {
    let s = img.shape();
    let rgb = to_bytes(img)?;
    let encoded = match extension_of(path).as_str() {
        "png" => encode_png(s.h, s.w, &rgb)?,
        "ppm" => encode_ppm(s.h, s.w, &rgb),
        other => {
            return Err(Error::data(format!(
                "unsupported image extension {other:?} (use png or ppm)"
            )))
        }
    };
    atomic_write(path, &encoded)
}

/// Load an 8-bit PNG or binary PPM as a (1, 3, h, w) tensor in [0,1].
pub fn load_image<E: Element>(path: &Path) -> Result<Tensor<E>> {
    let bytes = fs::read(path)?;
    let (h, w, rgb) = match extension_of(path).as_str() {
        "ppm" => decode_ppm(&bytes)?,
        "png" => {
            let img = image::load_from_memory(&bytes)
                .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            (h, w, img.into_raw())
        }
        other => {
            return Err(Error::data(format!(
                "unsupported image extension {other:?} (use png or ppm)"
            )))
        }
    };
    from_bytes(h, w, &rgb)
}
