//! Image quality metrics and prior statistics, computed in f64 regardless of
//! the tensor element type. Pixel values are assumed to live in [0, 1].

use crate::ecpel::{bright_channel, dark_channel};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

fn check_same_shape<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "metric inputs differ in shape: {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1.0. Identical images give
/// positive infinity.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    check_same_shape(a, b)?;
    let mut acc = 0.0_f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = x.as_f64() - y.as_f64();
        acc += d * d;
    }
    let mse = acc / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// 11x11 Gaussian window with sigma 1.5, normalized to sum 1.
fn ssim_window() -> [f64; 11] {
    let sigma = 1.5_f64;
    let mut w = [0.0; 11];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - 5.0;
        *v = (-d * d / (2.0 * sigma * sigma)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean structural similarity over valid (fully interior) 11x11 windows of
/// the channel-averaged grayscale image, averaged over the batch.
/// Constants K1 = 0.01, K2 = 0.03 with dynamic range 1.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    check_same_shape(a, b)?;
    let s = a.shape();
    if s.h < 11 || s.w < 11 {
        return Err(Error::contract(format!(
            "ssim needs at least 11x11 images, got {s}"
        )));
    }
    let gray = |t: &Tensor<E>, n: usize| -> Vec<f64> {
        let mut g = vec![0.0; s.h * s.w];
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..s.w {
                    g[y * s.w + x] += t.at(n, c, y, x).as_f64();
                }
            }
        }
        for v in &mut g {
            *v /= s.c as f64;
        }
        g
    };
    let w = ssim_window();
    let c1 = 0.01_f64.powi(2);
    let c2 = 0.03_f64.powi(2);

    let mut batch_acc = 0.0;
    for n in 0..s.n {
        let ga = gray(a, n);
        let gb = gray(b, n);
        let mut acc = 0.0;
        let mut count = 0usize;
        for y0 in 0..=(s.h - 11) {
            for x0 in 0..=(s.w - 11) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in 0..11 {
                    for dx in 0..11 {
                        let wv = w[dy] * w[dx];
                        let va = ga[(y0 + dy) * s.w + x0 + dx];
                        let vb = gb[(y0 + dy) * s.w + x0 + dx];
                        mu_a += wv * va;
                        mu_b += wv * vb;
                        aa += wv * va * va;
                        bb += wv * vb * vb;
                        ab += wv * va * vb;
                    }
                }
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_a * mu_b;
                let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
                let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
                acc += num / den;
                count += 1;
            }
        }
        batch_acc += acc / count as f64;
    }
    Ok(batch_acc / s.n as f64)
}

/// Mean dark- and bright-channel values of an image, using the exact same
/// extraction code the network trains through.
pub fn channel_means<E: Element>(img: &Tensor<E>, window: usize) -> Result<(f64, f64)> {
    let (d, _) = dark_channel(img, window)?;
    let (b, _) = bright_channel(img, window)?;
    let mean = |t: &Tensor<E>| t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.numel() as f64;
    Ok((mean(&d), mean(&b)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn psnr_of_identical_images_is_infinite() {
        let a = Tensor::<f32>::full(Shape::new(1, 3, 8, 8), 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_matches_analytic_uniform_offset() {
        // Every pixel differs by 16/255: PSNR = 20 log10(255 / 16).
        let a = Tensor::<f64>::full(Shape::new(1, 3, 8, 8), 100.0 / 255.0);
        let b = Tensor::<f64>::full(Shape::new(1, 3, 8, 8), 116.0 / 255.0);
        let want = 20.0 * (255.0_f64 / 16.0).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-9, "got {got} want {want}");
        assert!((got - 24.0482).abs() < 1e-3);
    }

    #[test]
    fn psnr_shape_mismatch_is_error() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 3, 8, 8));
        let b = Tensor::<f32>::zeros(Shape::new(1, 3, 8, 4));
        assert!(psnr(&a, &b).is_err());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 3, 16, 16), |_, c, y, x| {
            ((c + 2 * y + 3 * x) % 7) as f64 / 7.0
        });
        let got = ssim(&a, &a).unwrap();
        assert!((got - 1.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn ssim_detects_degradation_and_orders_it() {
        let a = Tensor::<f64>::from_fn(Shape::new(1, 1, 16, 16), |_, _, y, x| {
            if (y / 4 + x / 4) % 2 == 0 { 0.9 } else { 0.1 }
        });
        let slight = a.map(|v| (v + 0.02).min(1.0));
        let heavy = Tensor::full(a.shape(), 0.5);
        let s_slight = ssim(&a, &slight).unwrap();
        let s_heavy = ssim(&a, &heavy).unwrap();
        assert!(s_slight > s_heavy);
        assert!(s_slight > 0.9 && s_heavy < 0.7, "{s_slight} {s_heavy}");
    }

    #[test]
    fn ssim_window_sums_to_one() {
        let w = ssim_window();
        let total: f64 = w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(w[5] > w[0]);
    }

    #[test]
    fn channel_means_agree_with_extractors() {
        let img = Tensor::<f64>::from_fn(Shape::new(1, 3, 9, 9), |_, c, y, x| {
            ((c * 31 + y * 7 + x * 3) % 11) as f64 / 11.0
        });
        let (dm, bm) = channel_means(&img, 5).unwrap();
        let (d, _) = dark_channel(&img, 5).unwrap();
        let (b, _) = bright_channel(&img, 5).unwrap();
        assert!(dm <= bm);
        assert_eq!(dm, d.data().iter().sum::<f64>() / d.numel() as f64);
        assert_eq!(bm, b.data().iter().sum::<f64>() / b.numel() as f64);
    }
}
