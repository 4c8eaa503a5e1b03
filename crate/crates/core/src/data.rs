//! Training-pair synthesis and dataset handling.
//!
//! Blur kernels come from rasterized random sub-pixel trajectories, imitating
//! the averaging of adjacent short-exposure frames. Pairs are formed by true
//! convolution (kernel flipped) with both images cropped to the valid
//! interior so no fabricated boundary pixels distort extreme-channel
//! statistics. Synthesis math stays in f64; training casts as needed.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{atomic_write, load_image, save_image};
use crate::tensor::{Element, Shape, Tensor};

/// A sharp/blurred image pair with the kernel that produced it.
#[derive(Debug, Clone)]
pub struct BlurPair {
    pub sharp: Tensor<f64>,
    pub blur: Tensor<f64>,
    pub kernel: Tensor<f64>,
    pub noise_sigma: f64,
}

/// Evenly spaced arc-length midpoint samples along a polyline, 8 per pixel
/// of trajectory length. A degenerate trajectory collapses to its start.
fn polyline_samples(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let seg_lens: Vec<f64> = points
        .windows(2)
        .map(|p| ((p[1].0 - p[0].0).powi(2) + (p[1].1 - p[0].1).powi(2)).sqrt())
        .collect();
    let total: f64 = seg_lens.iter().sum();
    if total <= 1e-12 {
        return vec![points[0]];
    }
    let m = (total * 8.0).ceil() as usize;
    (0..m)
        .map(|k| {
            let mut s = (k as f64 + 0.5) / m as f64 * total;
            for (seg, &len) in seg_lens.iter().enumerate() {
                if s <= len || seg == seg_lens.len() - 1 {
                    let t = (s / len.max(1e-300)).min(1.0);
                    let (a, b) = (points[seg], points[seg + 1]);
                    return (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
                }
                s -= len;
            }
            unreachable!("arc length walk exhausted segments");
        })
        .collect()
}

/// Rasterize a sub-pixel polyline into a normalized kernel: each arc-length
/// sample deposits equal mass into the pixel cell it falls in, then the grid
/// is cropped to its nonzero bounding box and normalized to sum 1.
pub fn rasterize_polyline(points: &[(f64, f64)]) -> Result<Tensor<f64>> {
    if points.is_empty() {
        return Err(Error::contract("empty trajectory".to_string()));
    }
    let samples = polyline_samples(points);
    let min_x = samples.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_y = samples.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_x = samples.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_y = samples.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let kw = (max_x - min_x).floor() as usize + 1;
    let kh = (max_y - min_y).floor() as usize + 1;
    let mut grid = vec![0.0_f64; kh * kw];
    let mass = 1.0 / samples.len() as f64;
    for (x, y) in samples {
        let cx = ((x - min_x).floor() as usize).min(kw - 1);
        let cy = ((y - min_y).floor() as usize).min(kh - 1);
        grid[cy * kw + cx] += mass;
    }
    // Tight nonzero bounding box, then exact normalization.
    let rows: Vec<usize> = (0..kh)
        .filter(|&r| (0..kw).any(|c| grid[r * kw + c] > 0.0))
        .collect();
    let cols: Vec<usize> = (0..kw)
        .filter(|&c| (0..kh).any(|r| grid[r * kw + c] > 0.0))
        .collect();
    let (r0, r1) = (rows[0], rows[rows.len() - 1]);
    let (c0, c1) = (cols[0], cols[cols.len() - 1]);
    let (oh, ow) = (r1 - r0 + 1, c1 - c0 + 1);
    let mut data = Vec::with_capacity(oh * ow);
    for r in r0..=r1 {
        for c in c0..=c1 {
            data.push(grid[r * kw + c]);
        }
    }
    let sum: f64 = data.iter().sum();
    for v in &mut data {
        *v /= sum;
    }
    Tensor::from_vec(Shape::new(1, 1, oh, ow), data)
}

/// A random motion-blur kernel with support bounded by `max_support` per
/// axis: 1 to 3 straight sub-pixel strokes with random turns, scaled to fit.
pub fn synth_kernel<R: Rng>(rng: &mut R, max_support: usize) -> Result<Tensor<f64>> {
    if max_support < 3 || max_support % 2 == 0 {
        return Err(Error::contract(format!(
            "kernel support must be odd and >= 3, got {max_support}"
        )));
    }
    let segments = rng.gen_range(1..=3);
    // Short-exposure frame averaging produces definite streaks; keep at
    // least a third of the support so kernels blur rather than approximate
    // a delta (the delta case is reachable through `delta_kernel`).
    let cap = (max_support - 1) as f64;
    let total_len = rng.gen_range(cap * 0.35..cap);
    let fracs: Vec<f64> = (0..segments).map(|_| rng.gen_range(0.2..1.0)).collect();
    let frac_sum: f64 = fracs.iter().sum();
    let mut dir = rng.gen_range(0.0..TAU);
    let mut points = vec![(0.0, 0.0)];
    for f in fracs {
        let len = total_len * f / frac_sum;
        let (px, py) = *points.last().unwrap();
        points.push((px + dir.cos() * len, py + dir.sin() * len));
        dir += rng.gen_range(-1.2..1.2);
    }
    let span_x = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let span_y = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
        - points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let fit = cap * 0.999;
    let span = span_x.max(span_y);
    if span > fit {
        let s = fit / span;
        for p in &mut points {
            *p = (p.0 * s, p.1 * s);
        }
    }
    rasterize_polyline(&points)
}

/// The 1x1 identity kernel.
pub fn delta_kernel() -> Tensor<f64> {
    Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap()
}

fn crop_window<E: Element>(
    img: &Tensor<E>,
    oy: usize,
    ox: usize,
    th: usize,
    tw: usize,
) -> Tensor<E> {
    Tensor::from_fn(
        Shape::new(img.shape().n, img.shape().c, th, tw),
        |n, c, y, x| img.at(n, c, oy + y, ox + x),
    )
}

/// Center-crop to (th, tw).
pub fn center_crop<E: Element>(img: &Tensor<E>, th: usize, tw: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if th > s.h || tw > s.w {
        return Err(Error::contract(format!(
            "cannot crop {s} to {th}x{tw}"
        )));
    }
    Ok(crop_window(img, (s.h - th) / 2, (s.w - tw) / 2, th, tw))
}

/// Blur a sharp image by true convolution with the kernel (valid interior
/// only) and crop the sharp image to the matching window, then add clamped
/// Gaussian noise of standard deviation `noise_sigma` to the blurred side.
pub fn make_blur_pair<R: Rng>(
    sharp: &Tensor<f64>,
    kernel: &Tensor<f64>,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<BlurPair> {
    let s = sharp.shape();
    let k = kernel.shape();
    if k.h > s.h || k.w > s.w {
        return Err(Error::contract(format!(
            "kernel {k} larger than image {s}"
        )));
    }
    let (oh, ow) = (s.h - k.h + 1, s.w - k.w + 1);
    let mut blur = Tensor::zeros(Shape::new(s.n, s.c, oh, ow));
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for u in 0..k.h {
                        for v in 0..k.w {
                            // True convolution: the kernel is flipped.
                            acc += kernel.at(0, 0, u, v)
                                * sharp.at(n, c, y + k.h - 1 - u, x + k.w - 1 - v);
                        }
                    }
                    *blur.at_mut(n, c, y, x) = acc.clamp(0.0, 1.0);
                }
            }
        }
    }
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::contract(format!("noise sigma: {e}")))?;
        for v in blur.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    let sharp_cropped = crop_window(sharp, (k.h - 1) / 2, (k.w - 1) / 2, oh, ow);
    Ok(BlurPair {
        sharp: sharp_cropped,
        blur,
        kernel: kernel.clone(),
        noise_sigma,
    })
}

fn shape_color<R: Rng>(rng: &mut R) -> [f64; 3] {
    let roll: f64 = rng.gen_range(0.0..1.0);
    if roll < 0.2 {
        [rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08), rng.gen_range(0.0..0.08)]
    } else if roll < 0.4 {
        [rng.gen_range(0.92..1.0), rng.gen_range(0.92..1.0), rng.gen_range(0.92..1.0)]
    } else {
        [
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..1.0),
        ]
    }
}

fn paint_rect(img: &mut Tensor<f64>, y0: i64, x0: i64, h: i64, w: i64, color: [f64; 3]) {
    let s = img.shape();
    for y in y0.max(0)..(y0 + h).min(s.h as i64) {
        for x in x0.max(0)..(x0 + w).min(s.w as i64) {
            for (c, &v) in color.iter().enumerate() {
                *img.at_mut(0, c, y as usize, x as usize) = v;
            }
        }
    }
}

fn paint_triangle(img: &mut Tensor<f64>, pts: [(f64, f64); 3], color: [f64; 3]) {
    let s = img.shape();
    let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| {
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
    };
    let x_lo = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let x_hi = (pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(s.w);
    let y_lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
    let y_hi = (pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() as usize).min(s.h);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let e0 = edge(pts[0], pts[1], p);
            let e1 = edge(pts[1], pts[2], p);
            let e2 = edge(pts[2], pts[0], p);
            if (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0) {
                for (c, &v) in color.iter().enumerate() {
                    *img.at_mut(0, c, y, x) = v;
                }
            }
        }
    }
}

/// A procedural sharp image: a smooth color gradient under random polygons
/// and scattered thin glyph-like strokes, with both near-black and
/// near-white content guaranteed so extreme-channel structure is present.
/// Smooth regions survive between the shapes, as in natural photographs.
pub fn procedural_sharp<R: Rng>(rng: &mut R, h: usize, w: usize) -> Result<Tensor<f64>> {
    if h < 16 || w < 16 {
        return Err(Error::contract(format!(
            "procedural image needs at least 16x16, got {h}x{w}"
        )));
    }
    let c0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.85));
    let c1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.85));
    let angle = rng.gen_range(0.0..TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let span = (w as f64 * dx.abs() + h as f64 * dy.abs()).max(1.0);
    let mut img = Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        let t = ((x as f64 * dx + y as f64 * dy) / span).rem_euclid(1.0);
        c0[c] + (c1[c] - c0[c]) * t
    });

    for _ in 0..rng.gen_range(3..=6) {
        let rh = rng.gen_range(4..=(h / 2).max(5)) as i64;
        let rw = rng.gen_range(4..=(w / 2).max(5)) as i64;
        let y0 = rng.gen_range(-(rh / 2)..h as i64 - rh / 2);
        let x0 = rng.gen_range(-(rw / 2)..w as i64 - rw / 2);
        paint_rect(&mut img, y0, x0, rh, rw, shape_color(rng));
    }
    for _ in 0..rng.gen_range(2..=4) {
        let pts: [(f64, f64); 3] = std::array::from_fn(|_| {
            (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64))
        });
        paint_triangle(&mut img, pts, shape_color(rng));
    }
    // Scattered text-like strokes, dark and bright ink alternating. Their
    // extreme-channel structure is what blurring visibly destroys, while
    // the smooth background between them stays mostly intact.
    let strokes = ((h * w) / 384).max(3);
    for i in 0..strokes {
        let ink = if i % 2 == 0 {
            rng.gen_range(0.0..0.05)
        } else {
            rng.gen_range(0.95..1.0)
        };
        let by = rng.gen_range(0..h as i64 - 2);
        let bx = rng.gen_range(0..w as i64 - 2);
        let thick = rng.gen_range(1..=2);
        let len = rng.gen_range(4..=10);
        let (sh, sw) = if rng.gen_bool(0.5) { (thick, len) } else { (len, thick) };
        paint_rect(&mut img, by, bx, sh, sw, [ink; 3]);
    }
    // Guaranteed extremes, kept strictly inside the canvas.
    let py = rng.gen_range(2..h as i64 - 4);
    let px = rng.gen_range(2..w as i64 - 4);
    paint_rect(&mut img, py, px, 2, 2, [rng.gen_range(0.0..0.03); 3]);
    let qy = rng.gen_range(2..h as i64 - 4);
    let qx = rng.gen_range(2..w as i64 - 4);
    paint_rect(&mut img, qy, qx, 2, 2, [rng.gen_range(0.97..1.0); 3]);
    Ok(img.map(|v| v.clamp(0.0, 1.0)))
}

fn rot90cw<E: Element>(img: &Tensor<E>) -> Tensor<E> {
    let s = img.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.w, s.h), |n, c, y, x| {
        img.at(n, c, s.h - 1 - x, y)
    })
}

fn flip_h<E: Element>(img: &Tensor<E>) -> Tensor<E> {
    let s = img.shape();
    Tensor::from_fn(s, |n, c, y, x| img.at(n, c, y, s.w - 1 - x))
}

/// One of the 8 dihedral transforms: k%4 clockwise quarter turns, then a
/// horizontal flip if k >= 4. Quarter turns require square images.
pub fn dihedral<E: Element>(img: &Tensor<E>, k: u8) -> Result<Tensor<E>> {
    if k >= 8 {
        return Err(Error::contract(format!("dihedral index {k} out of range")));
    }
    let s = img.shape();
    if k % 2 == 1 && s.h != s.w {
        return Err(Error::contract(format!(
            "quarter turn needs a square image, got {s}"
        )));
    }
    let mut out = img.clone();
    for _ in 0..k % 4 {
        out = rot90cw(&out);
    }
    if k >= 4 {
        out = flip_h(&out);
    }
    Ok(out)
}

/// Identical random dihedral transform on both images, then a fresh noise
/// draw on the blurred side only.
pub fn augment_pair<E: Element, R: Rng>(
    blur: &Tensor<E>,
    sharp: &Tensor<E>,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let k = rng.gen_range(0..8u8);
    let mut x = dihedral(blur, k)?;
    let y = dihedral(sharp, k)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::contract(format!("noise sigma: {e}")))?;
        for v in x.data_mut() {
            let noisy = v.as_f64() + normal.sample(rng);
            *v = E::from_f64(noisy.clamp(0.0, 1.0));
        }
    }
    Ok((x, y))
}

/// An aligned random square crop of both images.
pub fn random_crop<E: Element, R: Rng>(
    blur: &Tensor<E>,
    sharp: &Tensor<E>,
    size: usize,
    rng: &mut R,
) -> Result<(Tensor<E>, Tensor<E>)> {
    let s = blur.shape();
    if sharp.shape() != s {
        return Err(Error::contract(format!(
            "pair shapes differ: {} vs {s}",
            sharp.shape()
        )));
    }
    if size > s.h || size > s.w {
        return Err(Error::contract(format!("crop {size} exceeds image {s}")));
    }
    let oy = rng.gen_range(0..=s.h - size);
    let ox = rng.gen_range(0..=s.w - size);
    Ok((
        crop_window(blur, oy, ox, size, size),
        crop_window(sharp, oy, ox, size, size),
    ))
}

/// In-memory dataset of (blurred input, sharp target) pairs.
#[derive(Debug, Clone)]
pub struct Dataset<E: Element> {
    pub pairs: Vec<(Tensor<E>, Tensor<E>)>,
}

impl<E: Element> Dataset<E> {
    /// Load the `sharp/NNNN.png` + `blur/NNNN.png` directory layout; every
    /// sharp image must have a blurred counterpart of the same name.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let sharp_dir = root.join("sharp");
        let blur_dir = root.join("blur");
        let mut names: Vec<String> = fs::read_dir(&sharp_dir)
            .map_err(|e| Error::data(format!("{}: {e}", sharp_dir.display())))?
            .filter_map(|entry| entry.ok())
            .filter_map(|entry| entry.file_name().into_string().ok())
            .filter(|n| n.ends_with(".png") || n.ends_with(".ppm"))
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::data(format!(
                "no png/ppm images under {}",
                sharp_dir.display()
            )));
        }
        let mut pairs = Vec::with_capacity(names.len());
        for name in &names {
            let sharp: Tensor<E> = load_image(&sharp_dir.join(name))?;
            let blur_path = blur_dir.join(name);
            if !blur_path.exists() {
                return Err(Error::data(format!(
                    "missing blurred counterpart {}",
                    blur_path.display()
                )));
            }
            let blur: Tensor<E> = load_image(&blur_path)?;
            if blur.shape() != sharp.shape() {
                return Err(Error::data(format!(
                    "{name}: blur {} does not match sharp {}",
                    blur.shape(),
                    sharp.shape()
                )));
            }
            pairs.push((blur, sharp));
        }
        Ok(Dataset { pairs })
    }

    /// A training batch: `batch` independent draws of (pair, aligned crop,
    /// optional dihedral transform, fresh noise on the blurred side).
    pub fn sample_batch<R: Rng>(
        &self,
        batch: usize,
        patch: usize,
        augment: bool,
        noise_sigma: f64,
        rng: &mut R,
    ) -> Result<(Tensor<E>, Tensor<E>)> {
        if self.pairs.is_empty() || batch == 0 {
            return Err(Error::contract("empty dataset or zero batch".to_string()));
        }
        let mut xb = Tensor::zeros(Shape::new(batch, 3, patch, patch));
        let mut yb = Tensor::zeros(Shape::new(batch, 3, patch, patch));
        for b in 0..batch {
            let idx = rng.gen_range(0..self.pairs.len());
            let (blur, sharp) = &self.pairs[idx];
            let (cx, cy) = random_crop(blur, sharp, patch, rng)?;
            let (ax, ay) = if augment {
                augment_pair(&cx, &cy, noise_sigma, rng)?
            } else {
                (cx, cy)
            };
            for c in 0..3 {
                for y in 0..patch {
                    for x in 0..patch {
                        *xb.at_mut(b, c, y, x) = ax.at(0, c, y, x);
                        *yb.at_mut(b, c, y, x) = ay.at(0, c, y, x);
                    }
                }
            }
        }
        Ok((xb, yb))
    }
}

/// Parameters for writing a synthetic dataset to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub max_support: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub delta: bool,
}

/// Manifest written alongside a synthetic dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub max_support: usize,
    pub noise_sigma: f64,
    pub delta: bool,
    pub kernel_sums: Vec<f64>,
}

/// Generate one in-memory pair at exactly `size` x `size`.
pub fn synth_pair<R: Rng>(
    rng: &mut R,
    size: usize,
    max_support: usize,
    noise_sigma: f64,
    delta: bool,
) -> Result<BlurPair> {
    let gen_size = size + max_support - 1;
    let sharp = procedural_sharp(rng, gen_size, gen_size)?;
    let kernel = if delta {
        delta_kernel()
    } else {
        synth_kernel(rng, max_support)?
    };
    let mut pair = make_blur_pair(&sharp, &kernel, noise_sigma, rng)?;
    pair.sharp = center_crop(&pair.sharp, size, size)?;
    pair.blur = center_crop(&pair.blur, size, size)?;
    Ok(pair)
}

/// Write `spec.count` synthetic pairs under `out/sharp` and `out/blur` plus
/// a manifest. Fully deterministic in (seed, spec).
pub fn synth_dataset(out: &Path, spec: &SynthSpec) -> Result<Manifest> {
    if spec.count == 0 {
        return Err(Error::contract("dataset count must be positive".to_string()));
    }
    let sharp_dir = out.join("sharp");
    let blur_dir = out.join("blur");
    fs::create_dir_all(&sharp_dir)?;
    fs::create_dir_all(&blur_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut kernel_sums = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let pair = synth_pair(&mut rng, spec.size, spec.max_support, spec.noise_sigma, spec.delta)?;
        kernel_sums.push(pair.kernel.sum().as_f64());
        save_image(&sharp_dir.join(format!("{i:04}.png")), &pair.sharp)?;
        save_image(&blur_dir.join(format!("{i:04}.png")), &pair.blur)?;
    }
    let manifest = Manifest {
        seed: spec.seed,
        count: spec.count,
        size: spec.size,
        max_support: spec.max_support,
        noise_sigma: spec.noise_sigma,
        delta: spec.delta,
        kernel_sums,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::data(format!("manifest encode: {e}")))?;
    atomic_write(&out.join("manifest.json"), &json)?;
    Ok(manifest)
}
