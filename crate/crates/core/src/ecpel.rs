//! Dark- and bright-channel extraction with exact index routing.
//!
//! The dark channel of an image takes, at every pixel, the minimum over all
//! channels and over a square window clamped to the image bounds; the bright
//! channel takes the maximum. Both are piecewise-linear selections, so the
//! forward pass records which input element won each pixel and the backward
//! pass scatter-adds the upstream gradient to exactly those elements.
//!
//! Ties resolve to the smallest flat index, which the forward scan realizes
//! by visiting candidates in increasing flat order and replacing the champion
//! only on a strict improvement.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Which extreme an extraction pass selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extreme {
    Min,
    Max,
}

/// Winning flat input index per output element, recorded by the forward pass.
#[derive(Debug, Clone)]
pub struct ExtractMask {
    pub input_shape: Shape,
    pub output_shape: Shape,
    pub window: usize,
    pub extreme: Extreme,
    pub indices: Vec<usize>,
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::contract(format!(
            "extraction window must be odd and positive, got {window}"
        )));
    }
    Ok(())
}

/// Shared forward scan for both channels. Output shape is (N, 1, H, W).
pub fn extract_forward<E: Element>(
    input: &Tensor<E>,
    window: usize,
    extreme: Extreme,
) -> Result<(Tensor<E>, ExtractMask)> {
    check_window(window)?;
    let s = input.shape();
    if s.numel() == 0 {
        return Err(Error::contract(format!("cannot extract from empty tensor {s}")));
    }
    let r = (window / 2) as isize;
    let out_shape = Shape::new(s.n, 1, s.h, s.w);
    let mut values = Vec::with_capacity(out_shape.numel());
    let mut indices = Vec::with_capacity(out_shape.numel());
    let data = input.data();
    for n in 0..s.n {
        for y in 0..s.h {
            let y0 = (y as isize - r).max(0) as usize;
            let y1 = ((y as isize + r).min(s.h as isize - 1)) as usize;
            for x in 0..s.w {
                let x0 = (x as isize - r).max(0) as usize;
                let x1 = ((x as isize + r).min(s.w as isize - 1)) as usize;
                let mut best_idx = usize::MAX;
                let mut best = E::zero();
                for c in 0..s.c {
                    for wy in y0..=y1 {
                        let row = ((n * s.c + c) * s.h + wy) * s.w;
                        for wx in x0..=x1 {
                            let idx = row + wx;
                            let v = data[idx];
                            let better = best_idx == usize::MAX
                                || match extreme {
                                    Extreme::Min => v < best,
                                    Extreme::Max => v > best,
                                };
                            if better {
                                best = v;
                                best_idx = idx;
                            }
                        }
                    }
                }
                values.push(best);
                indices.push(best_idx);
            }
        }
    }
    let out = Tensor::from_vec(out_shape, values)?;
    Ok((
        out,
        ExtractMask { input_shape: s, output_shape: out_shape, window, extreme, indices },
    ))
}

/// Smallest margin between the winning value and the runner-up across all
/// windows. Zero means at least one window holds an exact tie; a comfortably
/// positive value means small input perturbations cannot flip any selection.
/// Windows with a single candidate contribute infinity.
pub fn min_window_gap<E: Element>(input: &Tensor<E>, window: usize, extreme: Extreme) -> Result<f64> {
    check_window(window)?;
    let s = input.shape();
    let r = (window / 2) as isize;
    let data = input.data();
    let mut min_gap = f64::INFINITY;
    for n in 0..s.n {
        for y in 0..s.h as isize {
            let y0 = (y - r).max(0) as usize;
            let y1 = (y + r).min(s.h as isize - 1) as usize;
            for x in 0..s.w as isize {
                let x0 = (x - r).max(0) as usize;
                let x1 = (x + r).min(s.w as isize - 1) as usize;
                let mut best = f64::NAN;
                let mut second = f64::NAN;
                for c in 0..s.c {
                    for wy in y0..=y1 {
                        let row = ((n * s.c + c) * s.h + wy) * s.w;
                        for wx in x0..=x1 {
                            let v = data[row + wx].as_f64();
                            let improves = best.is_nan()
                                || match extreme {
                                    Extreme::Min => v < best,
                                    Extreme::Max => v > best,
                                };
                            if improves {
                                second = best;
                                best = v;
                            } else if second.is_nan()
                                || match extreme {
                                    Extreme::Min => v < second,
                                    Extreme::Max => v > second,
                                }
                            {
                                second = v;
                            }
                        }
                    }
                }
                if !second.is_nan() {
                    min_gap = min_gap.min((best - second).abs());
                }
            }
        }
    }
    Ok(min_gap)
}

pub fn dark_channel<E: Element>(input: &Tensor<E>, window: usize) -> Result<(Tensor<E>, ExtractMask)> {
    extract_forward(input, window, Extreme::Min)
}

pub fn bright_channel<E: Element>(input: &Tensor<E>, window: usize) -> Result<(Tensor<E>, ExtractMask)> {
    extract_forward(input, window, Extreme::Max)
}

/// Scatter-adds the upstream gradient through a recorded mask. Every upstream
/// element lands on exactly one input element, so total gradient mass is
/// conserved bit-for-bit up to addition order.
pub fn extract_backward<E: Element>(mask: &ExtractMask, grad_out: &Tensor<E>) -> Result<Tensor<E>> {
    if grad_out.shape() != mask.output_shape {
        return Err(Error::contract(format!(
            "extraction gradient shape {} does not match recorded output shape {}",
            grad_out.shape(),
            mask.output_shape
        )));
    }
    let mut d = Tensor::zeros(mask.input_shape);
    let dd = d.data_mut();
    for (&idx, &g) in mask.indices.iter().zip(grad_out.data()) {
        dd[idx] = dd[idx] + g;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Candidate-list oracle: collect every (flat index, value) in the window,
    /// then pick the extreme with explicit smallest-index tie handling.
    fn extract_oracle(input: &Tensor<f64>, window: usize, extreme: Extreme) -> (Tensor<f64>, Vec<usize>) {
        let s = input.shape();
        let r = window as isize / 2;
        let mut values = Vec::new();
        let mut indices = Vec::new();
        for n in 0..s.n {
            for y in 0..s.h as isize {
                for x in 0..s.w as isize {
                    let mut cands: Vec<(usize, f64)> = Vec::new();
                    for c in 0..s.c {
                        for wy in (y - r).max(0)..=(y + r).min(s.h as isize - 1) {
                            for wx in (x - r).max(0)..=(x + r).min(s.w as isize - 1) {
                                let idx = s.index(n, c, wy as usize, wx as usize);
                                cands.push((idx, input.data()[idx]));
                            }
                        }
                    }
                    let pick = match extreme {
                        Extreme::Min => cands
                            .iter()
                            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)))
                            .unwrap(),
                        Extreme::Max => cands
                            .iter()
                            .max_by(|a, b| {
                                a.1.partial_cmp(&b.1).unwrap().then(b.0.cmp(&a.0))
                            })
                            .unwrap(),
                    };
                    values.push(pick.1);
                    indices.push(pick.0);
                }
            }
        }
        (
            Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), values).unwrap(),
            indices,
        )
    }

    #[test]
    fn constant_image_extracts_constant() {
        let x = Tensor::full(Shape::new(1, 3, 4, 4), 0.6);
        let (d, _) = dark_channel(&x, 3).unwrap();
        let (b, _) = bright_channel(&x, 3).unwrap();
        for &v in d.data() {
            assert_eq!(v, 0.6);
        }
        for &v in b.data() {
            assert_eq!(v, 0.6);
        }
    }

    #[test]
    fn single_dark_pixel_spreads_over_window() {
        let mut x = Tensor::full(Shape::new(1, 3, 7, 7), 1.0);
        *x.at_mut(0, 1, 3, 3) = 0.0;
        let (d, _) = dark_channel(&x, 3).unwrap();
        for y in 0..7 {
            for x_ in 0..7 {
                let near = (2..=4).contains(&y) && (2..=4).contains(&x_);
                assert_eq!(d.at(0, 0, y, x_), if near { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn window_one_is_channel_extreme_only() {
        let x = Tensor::from_vec(
            Shape::new(1, 2, 1, 2),
            vec![0.2, 0.9, 0.5, 0.1],
        )
        .unwrap();
        let (d, _) = dark_channel(&x, 1).unwrap();
        let (b, _) = bright_channel(&x, 1).unwrap();
        assert_eq!(d.data(), &[0.2, 0.1]);
        assert_eq!(b.data(), &[0.5, 0.9]);
    }

    #[test]
    fn even_or_zero_window_rejected() {
        let x = Tensor::<f64>::ones(Shape::new(1, 1, 2, 2));
        assert!(dark_channel(&x, 2).is_err());
        assert!(dark_channel(&x, 0).is_err());
    }

    #[test]
    fn ties_pick_smallest_flat_index() {
        // Both channels hold the same constant, so every window is all ties;
        // the winner must always come from channel 0, top-left of the window.
        let x = Tensor::full(Shape::new(1, 2, 3, 3), 0.5);
        let (_, mask) = dark_channel(&x, 3).unwrap();
        let s = x.shape();
        for y in 0..3usize {
            for x_ in 0..3usize {
                let expect = s.index(0, 0, y.saturating_sub(1), x_.saturating_sub(1));
                assert_eq!(mask.indices[y * 3 + x_], expect);
            }
        }
        let (_, bmask) = bright_channel(&x, 3).unwrap();
        assert_eq!(bmask.indices, mask.indices);
    }

    #[test]
    fn matches_candidate_list_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let n = rng.gen_range(1..3);
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(1..10);
            let w = rng.gen_range(1..10);
            let window = *[1usize, 3, 5, 7].get(rng.gen_range(0..4)).unwrap();
            let x = Tensor::from_fn(Shape::new(n, c, h, w), |_, _, _, _| {
                // Coarse values force frequent ties.
                (rng.gen_range(0..5) as f64) / 4.0
            });
            for extreme in [Extreme::Min, Extreme::Max] {
                let (got, mask) = extract_forward(&x, window, extreme).unwrap();
                let (want, want_idx) = extract_oracle(&x, window, extreme);
                assert!(got.bit_eq(&want));
                assert_eq!(mask.indices, want_idx);
            }
        }
    }

    #[test]
    fn backward_routes_to_selected_indices() {
        let mut x = Tensor::full(Shape::new(1, 2, 3, 3), 1.0);
        *x.at_mut(0, 1, 1, 1) = -1.0;
        let (_, mask) = dark_channel(&x, 3).unwrap();
        let g = Tensor::<f64>::ones(mask.output_shape);
        let d = extract_backward(&mask, &g).unwrap();
        // The single minimum wins all nine windows.
        assert_eq!(d.at(0, 1, 1, 1), 9.0);
        assert_eq!(d.sum(), 9.0);
    }

    #[test]
    fn window_gap_measures_runner_up_distance() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.1, 0.5]).unwrap();
        let gap = min_window_gap(&x, 1, Extreme::Min).unwrap();
        assert!((gap - 0.4).abs() < 1e-12);
        // Exact tie forces a zero gap.
        let t = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![0.3, 0.3]).unwrap();
        assert_eq!(min_window_gap(&t, 1, Extreme::Max).unwrap(), 0.0);
        // Single candidate per window: no runner-up at all.
        let s = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.3]).unwrap();
        assert_eq!(min_window_gap(&s, 1, Extreme::Min).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gradient_mass_is_conserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..30 {
            let n = rng.gen_range(1..3);
            let c = rng.gen_range(1..4);
            let h = rng.gen_range(1..8);
            let w = rng.gen_range(1..8);
            let x: Tensor<f64> =
                Tensor::from_fn(Shape::new(n, c, h, w), |_, _, _, _| rng.gen_range(-1.0..1.0));
            let window = *[1usize, 3, 5].get(rng.gen_range(0..3)).unwrap();
            let (_, mask) = bright_channel(&x, window).unwrap();
            let g: Tensor<f64> =
                Tensor::from_fn(mask.output_shape, |_, _, _, _| rng.gen_range(-1.0..1.0));
            let d = extract_backward(&mask, &g).unwrap();
            assert!((d.sum() - g.sum()).abs() < 1e-12);
        }
    }
}
