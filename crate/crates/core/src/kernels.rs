//! Raw forward/backward numeric kernels for every differentiable primitive.
//!
//! The tape (`crate::tape`) owns shape contracts and graph bookkeeping; the
//! kernels here assume validated shapes and focus on being fast on one core.
//! Convolutions use same-size edge-replicate padding with stride 1: the inner
//! loops are written as contiguous row AXPY/dot operations over the interior
//! with scalar epilogues for the clamped border columns, which the compiler
//! auto-vectorizes.
//!
//! Reduction order is fixed (plain sequential accumulation), so every kernel
//! is bit-deterministic.

use crate::tensor::{Element, Shape, Tensor};

#[inline(always)]
fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Interior x-range for a horizontal kernel offset `dx`: output columns whose
/// source column `x + dx` needs no clamping.
#[inline(always)]
fn interior(dx: isize, w: usize) -> (usize, usize) {
    let lo = if dx < 0 { (-dx) as usize } else { 0 };
    let hi = if dx > 0 { w - dx as usize } else { w };
    (lo.min(w), hi.max(lo.min(w)))
}

/// Direct convolution, stride 1, same-size output, edge-replicate padding.
///
/// `weight` is (C_out, C_in, k, k) with odd k; `bias` is (1, C_out, 1, 1).
/// Uses the cross-correlation orientation conventional for learned filters.
pub fn conv2d_forward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    bias: &Tensor<E>,
) -> Tensor<E> {
    let ishape = input.shape();
    let wshape = weight.shape();
    let (n_batch, c_in, h, w) = (ishape.n, ishape.c, ishape.h, ishape.w);
    let (c_out, k) = (wshape.n, wshape.h);
    debug_assert_eq!(wshape.c, c_in);
    debug_assert_eq!(wshape.h, wshape.w);
    debug_assert_eq!(k % 2, 1);
    debug_assert_eq!(bias.numel(), c_out);
    let pad = (k / 2) as isize;

    let oshape = Shape::new(n_batch, c_out, h, w);
    let mut out = vec![E::zero(); oshape.numel()];
    let idata = input.data();
    let wdata = weight.data();
    let bdata = bias.data();
    let plane = h * w;

    for n in 0..n_batch {
        for co in 0..c_out {
            let obase = (n * c_out + co) * plane;
            out[obase..obase + plane].fill(bdata[co]);
            for ci in 0..c_in {
                let ibase = (n * c_in + ci) * plane;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdata[((co * c_in + ci) * k + ky) * k + kx];
                        if wv == E::zero() {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let (lo, hi) = interior(dx, w);
                        for y in 0..h {
                            let sy = clamp_idx(y as isize + ky as isize - pad, h);
                            let irow = &idata[ibase + sy * w..ibase + sy * w + w];
                            let orow = &mut out[obase + y * w..obase + y * w + w];
                            for x in 0..lo {
                                orow[x] = orow[x] + wv * irow[0];
                            }
                            if hi > lo {
                                let src = &irow[(lo as isize + dx) as usize
                                    ..(hi as isize + dx) as usize];
                                for (o, &i) in orow[lo..hi].iter_mut().zip(src) {
                                    *o = *o + wv * i;
                                }
                            }
                            for x in hi..w {
                                orow[x] = orow[x] + wv * irow[w - 1];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).unwrap()
}

/// Backward of [`conv2d_forward`]: gradients for input, weight, and bias.
pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weight: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let ishape = input.shape();
    let wshape = weight.shape();
    let (n_batch, c_in, h, w) = (ishape.n, ishape.c, ishape.h, ishape.w);
    let (c_out, k) = (wshape.n, wshape.h);
    let pad = (k / 2) as isize;
    let plane = h * w;

    let idata = input.data();
    let wdata = weight.data();
    let gdata = grad_out.data();

    // d_bias[co] = sum of the gradient plane.
    let mut d_bias = vec![E::zero(); c_out];
    for n in 0..n_batch {
        for co in 0..c_out {
            let gbase = (n * c_out + co) * plane;
            let mut acc = E::zero();
            for &g in &gdata[gbase..gbase + plane] {
                acc = acc + g;
            }
            d_bias[co] = d_bias[co] + acc;
        }
    }

    // d_input: scatter each output gradient back through the clamped taps.
    let mut d_input = vec![E::zero(); ishape.numel()];
    for n in 0..n_batch {
        for ci in 0..c_in {
            let dibase = (n * c_in + ci) * plane;
            for co in 0..c_out {
                let gbase = (n * c_out + co) * plane;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wdata[((co * c_in + ci) * k + ky) * k + kx];
                        if wv == E::zero() {
                            continue;
                        }
                        let dx = kx as isize - pad;
                        let (lo, hi) = interior(dx, w);
                        for y in 0..h {
                            let sy = clamp_idx(y as isize + ky as isize - pad, h);
                            let grow = &gdata[gbase + y * w..gbase + y * w + w];
                            let drow = &mut d_input[dibase + sy * w..dibase + sy * w + w];
                            for x in 0..lo {
                                drow[0] = drow[0] + wv * grow[x];
                            }
                            if hi > lo {
                                let dst = &mut drow[(lo as isize + dx) as usize
                                    ..(hi as isize + dx) as usize];
                                for (d, &g) in dst.iter_mut().zip(&grow[lo..hi]) {
                                    *d = *d + wv * g;
                                }
                            }
                            for x in hi..w {
                                drow[w - 1] = drow[w - 1] + wv * grow[x];
                            }
                        }
                    }
                }
            }
        }
    }

    // d_weight[co,ci,ky,kx] = sum over (n, y, x) of in_clamped * g.
    let mut d_weight = vec![E::zero(); wshape.numel()];
    for n in 0..n_batch {
        for co in 0..c_out {
            let gbase = (n * c_out + co) * plane;
            for ci in 0..c_in {
                let ibase = (n * c_in + ci) * plane;
                for ky in 0..k {
                    for kx in 0..k {
                        let dx = kx as isize - pad;
                        let (lo, hi) = interior(dx, w);
                        let mut acc = E::zero();
                        for y in 0..h {
                            let sy = clamp_idx(y as isize + ky as isize - pad, h);
                            let irow = &idata[ibase + sy * w..ibase + sy * w + w];
                            let grow = &gdata[gbase + y * w..gbase + y * w + w];
                            let mut dot = E::zero();
                            if hi > lo {
                                let src = &irow[(lo as isize + dx) as usize
                                    ..(hi as isize + dx) as usize];
                                for (&i, &g) in src.iter().zip(&grow[lo..hi]) {
                                    dot = dot + i * g;
                                }
                            }
                            let mut left = E::zero();
                            for x in 0..lo {
                                left = left + grow[x];
                            }
                            let mut right = E::zero();
                            for x in hi..w {
                                right = right + grow[x];
                            }
                            acc = acc + dot + irow[0] * left + irow[w - 1] * right;
                        }
                        let widx = ((co * c_in + ci) * k + ky) * k + kx;
                        d_weight[widx] = d_weight[widx] + acc;
                    }
                }
            }
        }
    }

    (
        Tensor::from_vec(ishape, d_input).unwrap(),
        Tensor::from_vec(wshape, d_weight).unwrap(),
        Tensor::from_vec(Shape::new(1, c_out, 1, 1), d_bias).unwrap(),
    )
}

/// PReLU with one learned slope per channel. `slopes` is (1, C, 1, 1).
/// The derivative at exactly zero takes the positive branch.
pub fn prelu_forward<E: Element>(input: &Tensor<E>, slopes: &Tensor<E>) -> Tensor<E> {
    let shape = input.shape();
    debug_assert_eq!(slopes.numel(), shape.c);
    let plane = shape.h * shape.w;
    let mut out = Vec::with_capacity(shape.numel());
    let idata = input.data();
    let sdata = slopes.data();
    for n in 0..shape.n {
        for c in 0..shape.c {
            let s = sdata[c];
            let base = (n * shape.c + c) * plane;
            for &v in &idata[base..base + plane] {
                out.push(if v > E::zero() { v } else { s * v });
            }
        }
    }
    Tensor::from_vec(shape, out).unwrap()
}

pub fn prelu_backward<E: Element>(
    input: &Tensor<E>,
    slopes: &Tensor<E>,
    grad_out: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>) {
    let shape = input.shape();
    let plane = shape.h * shape.w;
    let idata = input.data();
    let sdata = slopes.data();
    let gdata = grad_out.data();
    let mut d_input = Vec::with_capacity(shape.numel());
    let mut d_slopes = vec![E::zero(); shape.c];
    for n in 0..shape.n {
        for c in 0..shape.c {
            let s = sdata[c];
            let base = (n * shape.c + c) * plane;
            let mut sacc = E::zero();
            for (&v, &g) in idata[base..base + plane].iter().zip(&gdata[base..base + plane]) {
                if v >= E::zero() {
                    d_input.push(g);
                } else {
                    d_input.push(g * s);
                    sacc = sacc + g * v;
                }
            }
            d_slopes[c] = d_slopes[c] + sacc;
        }
    }
    (
        Tensor::from_vec(shape, d_input).unwrap(),
        Tensor::from_vec(Shape::new(1, shape.c, 1, 1), d_slopes).unwrap(),
    )
}

pub fn sigmoid_forward<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    input.map(|v| E::one() / (E::one() + (-v).exp()))
}

/// Backward of sigmoid given the saved forward output.
pub fn sigmoid_backward<E: Element>(output: &Tensor<E>, grad_out: &Tensor<E>) -> Tensor<E> {
    let mut d = Vec::with_capacity(output.numel());
    for (&o, &g) in output.data().iter().zip(grad_out.data()) {
        d.push(g * o * (E::one() - o));
    }
    Tensor::from_vec(output.shape(), d).unwrap()
}

/// Space-to-channel rearrangement with factor 2: (N, C, H, W) -> (N, 4C, H/2, W/2).
///
/// Output channel `p*C + c` holds spatial phase `p = 2*row_phase + col_phase`
/// of input channel `c` (row-phase major, column-phase minor).
pub fn pixel_unshuffle<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let s = input.shape();
    debug_assert!(s.h % 2 == 0 && s.w % 2 == 0);
    let (oh, ow) = (s.h / 2, s.w / 2);
    let oshape = Shape::new(s.n, 4 * s.c, oh, ow);
    let mut out = vec![E::zero(); oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for pr in 0..2 {
                for pc in 0..2 {
                    let oc = (2 * pr + pc) * s.c + c;
                    for y in 0..oh {
                        for x in 0..ow {
                            out[oshape.index(n, oc, y, x)] =
                                input.at(n, c, 2 * y + pr, 2 * x + pc);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).unwrap()
}

/// Channel-to-space rearrangement with factor 2: (N, C, H, W) -> (N, C/4, 2H, 2W).
/// Exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let s = input.shape();
    debug_assert_eq!(s.c % 4, 0);
    let oc_total = s.c / 4;
    let oshape = Shape::new(s.n, oc_total, 2 * s.h, 2 * s.w);
    let mut out = vec![E::zero(); oshape.numel()];
    for n in 0..s.n {
        for c in 0..oc_total {
            for pr in 0..2 {
                for pc in 0..2 {
                    let ic = (2 * pr + pc) * oc_total + c;
                    for y in 0..s.h {
                        for x in 0..s.w {
                            out[oshape.index(n, c, 2 * y + pr, 2 * x + pc)] =
                                input.at(n, ic, y, x);
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).unwrap()
}

/// Concatenation along the channel axis. All inputs share N, H, W.
pub fn concat_channels<E: Element>(inputs: &[&Tensor<E>]) -> Tensor<E> {
    debug_assert!(!inputs.is_empty());
    let first = inputs[0].shape();
    let c_total: usize = inputs.iter().map(|t| t.shape().c).sum();
    let oshape = Shape::new(first.n, c_total, first.h, first.w);
    let plane = first.h * first.w;
    let mut out = Vec::with_capacity(oshape.numel());
    for n in 0..first.n {
        for t in inputs {
            let c = t.shape().c;
            let base = n * c * plane;
            out.extend_from_slice(&t.data()[base..base + c * plane]);
        }
    }
    Tensor::from_vec(oshape, out).unwrap()
}

/// Splits a concatenated gradient back into per-input channel ranges.
pub fn concat_channels_backward<E: Element>(
    grad_out: &Tensor<E>,
    input_channels: &[usize],
) -> Vec<Tensor<E>> {
    let s = grad_out.shape();
    let plane = s.h * s.w;
    let mut grads: Vec<Tensor<E>> = input_channels
        .iter()
        .map(|&c| Tensor::zeros(Shape::new(s.n, c, s.h, s.w)))
        .collect();
    for n in 0..s.n {
        let mut c_off = 0;
        for (gi, &c) in input_channels.iter().enumerate() {
            let src = &grad_out.data()[(n * s.c + c_off) * plane..(n * s.c + c_off + c) * plane];
            let dst_base = n * c * plane;
            grads[gi].data_mut()[dst_base..dst_base + c * plane].copy_from_slice(src);
            c_off += c;
        }
    }
    grads
}

/// Mean absolute difference over all elements (the shared L1 normalization).
pub fn l1_distance_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> E {
    debug_assert_eq!(a.shape(), b.shape());
    let mut acc = E::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        acc = acc + (x - y).abs();
    }
    acc / E::from_f64(a.numel() as f64)
}

/// Subgradient of [`l1_distance_forward`] routed to `a` (negate for `b`).
/// `sign(0)` is defined as 0.
pub fn l1_distance_backward<E: Element>(a: &Tensor<E>, b: &Tensor<E>, upstream: E) -> Tensor<E> {
    let scale = upstream / E::from_f64(a.numel() as f64);
    let mut d = Vec::with_capacity(a.numel());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let diff = x - y;
        let s = if diff > E::zero() {
            E::one()
        } else if diff < E::zero() {
            -E::one()
        } else {
            E::zero()
        };
        d.push(s * scale);
    }
    Tensor::from_vec(a.shape(), d).unwrap()
}

pub fn add_forward<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    debug_assert_eq!(a.shape(), b.shape());
    let mut out = Vec::with_capacity(a.numel());
    for (&x, &y) in a.data().iter().zip(b.data()) {
        out.push(x + y);
    }
    Tensor::from_vec(a.shape(), out).unwrap()
}

pub fn scale_forward<E: Element>(a: &Tensor<E>, factor: E) -> Tensor<E> {
    a.map(|v| v * factor)
}

/// Catmull-Rom (bicubic, a = -0.5) factor-2 downsampling, separable with
/// edge-replicate clamping. Each output sample sits at source coordinate
/// 2i + 0.5, so the four taps carry fixed weights (-1/16, 9/16, 9/16, -1/16).
/// Not differentiated; it only ever runs on network inputs and targets.
pub fn bicubic_downsample_half<E: Element>(input: &Tensor<E>) -> Tensor<E> {
    let s = input.shape();
    debug_assert!(s.h % 2 == 0 && s.w % 2 == 0);
    let w0 = E::from_f64(-0.0625);
    let w1 = E::from_f64(0.5625);
    let taps = [(-1isize, w0), (0, w1), (1, w1), (2, w0)];

    // Horizontal pass, then vertical.
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mid_shape = Shape::new(s.n, s.c, s.h, ow);
    let mut mid = vec![E::zero(); mid_shape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..s.h {
                for x in 0..ow {
                    let mut acc = E::zero();
                    for (dx, wv) in taps {
                        let sx = clamp_idx(2 * x as isize + dx, s.w);
                        acc = acc + wv * input.at(n, c, y, sx);
                    }
                    mid[mid_shape.index(n, c, y, x)] = acc;
                }
            }
        }
    }
    let oshape = Shape::new(s.n, s.c, oh, ow);
    let mut out = vec![E::zero(); oshape.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = E::zero();
                    for (dy, wv) in taps {
                        let sy = clamp_idx(2 * y as isize + dy, s.h);
                        acc = acc + wv * mid[mid_shape.index(n, c, sy, x)];
                    }
                    out[oshape.index(n, c, y, x)] = acc;
                }
            }
        }
    }
    Tensor::from_vec(oshape, out).unwrap()
}

/// Image pyramid, finest first: level j+1 is level j downsampled by 2.
/// Requires the spatial dims to stay even through every halving.
pub fn build_pyramid<E: Element>(input: &Tensor<E>, levels: usize) -> Vec<Tensor<E>> {
    debug_assert!(levels >= 1);
    let mut out = Vec::with_capacity(levels);
    out.push(input.clone());
    for _ in 1..levels {
        out.push(bicubic_downsample_half(out.last().unwrap()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
    }

    /// Quadruple-nested-loop reference convolution with explicit clamping.
    /// Kept independent of the production kernel's loop structure.
    fn conv2d_reference(input: &Tensor<f64>, weight: &Tensor<f64>, bias: &Tensor<f64>) -> Tensor<f64> {
        let is = input.shape();
        let ws = weight.shape();
        let k = ws.h as isize;
        let pad = k / 2;
        Tensor::from_fn(Shape::new(is.n, ws.n, is.h, is.w), |n, co, y, x| {
            let mut acc = bias.data()[co];
            for ci in 0..is.c {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = (y as isize + ky - pad).clamp(0, is.h as isize - 1) as usize;
                        let sx = (x as isize + kx - pad).clamp(0, is.w as isize - 1) as usize;
                        acc += weight.at(co, ci, ky as usize, kx as usize) * input.at(n, ci, sy, sx);
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&mut rng, Shape::new(2, 3, 5, 4));
        let w = Tensor::from_fn(Shape::new(3, 3, 1, 1), |co, ci, _, _| {
            if co == ci { 1.0 } else { 0.0 }
        });
        let b = Tensor::zeros(Shape::new(1, 3, 1, 1));
        let y = conv2d_forward(&x, &w, &b);
        assert!(x.bit_eq(&y));
    }

    #[test]
    fn conv_all_ones_on_constant_gives_nine_c() {
        let c = 0.37_f64;
        let x = Tensor::full(Shape::new(1, 1, 6, 6), c);
        let w = Tensor::ones(Shape::new(1, 1, 3, 3));
        let b = Tensor::zeros(Shape::new(1, 1, 1, 1));
        let y = conv2d_forward(&x, &w, &b);
        for &v in y.data() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_nested_loop_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, Shape::new(1, 2, 5, 5));
        let w = random_tensor(&mut rng, Shape::new(4, 2, 3, 3));
        let b = random_tensor(&mut rng, Shape::new(1, 4, 1, 1));
        let got = conv2d_forward(&x, &w, &b);
        let want = conv2d_reference(&x, &w, &b);
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn conv_matches_reference_on_many_random_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..3);
            let ci = rng.gen_range(1..4);
            let co = rng.gen_range(1..4);
            let h = rng.gen_range(1..9);
            let w = rng.gen_range(1..9);
            let k = *[1usize, 3, 5].get(rng.gen_range(0..3)).unwrap();
            let x = random_tensor(&mut rng, Shape::new(n, ci, h, w));
            let wt = random_tensor(&mut rng, Shape::new(co, ci, k, k));
            let b = random_tensor(&mut rng, Shape::new(1, co, 1, 1));
            let got = conv2d_forward(&x, &wt, &b);
            let want = conv2d_reference(&x, &wt, &b);
            assert!(got.max_abs_diff(&want) < 1e-12, "shape {:?} k {}", x.shape(), k);
        }
    }

    #[test]
    fn prelu_values() {
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![2.0, -2.0]).unwrap();
        let s = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.25]).unwrap();
        let y = prelu_forward(&x, &s);
        assert_eq!(y.data(), &[2.0, -0.5]);
    }

    #[test]
    fn prelu_slope_gradient_matches_definition() {
        // d out / d slope at input -2 is -2.
        let x = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![-2.0]).unwrap();
        let s = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.25]).unwrap();
        let g = Tensor::ones(Shape::new(1, 1, 1, 1));
        let (_, d_s) = prelu_backward(&x, &s, &g);
        assert_eq!(d_s.data()[0], -2.0);
        // Central finite difference on the slope.
        let h = 1e-6_f64;
        let fd = {
            let sp = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.25 + h]).unwrap();
            let sm = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![0.25 - h]).unwrap();
            (prelu_forward(&x, &sp).data()[0] - prelu_forward(&x, &sm).data()[0]) / (2.0 * h)
        };
        assert!((fd - (-2.0)).abs() < 1e-7);
    }

    #[test]
    fn unshuffle_phase_order() {
        // [[a,b],[c,d]] -> channels (a, b, c, d) by (row-phase, col-phase).
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = pixel_unshuffle(&x);
        assert_eq!(y.shape(), Shape::new(1, 4, 1, 1));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn shuffle_shapes() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 64, 32, 32));
        assert_eq!(pixel_unshuffle(&x).shape(), Shape::new(1, 256, 16, 16));
        let y = Tensor::<f64>::zeros(Shape::new(1, 256, 16, 16));
        assert_eq!(pixel_shuffle(&y).shape(), Shape::new(1, 64, 32, 32));
    }

    #[test]
    fn shuffle_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let n = rng.gen_range(1..3);
            let c = rng.gen_range(1..5);
            let h = 2 * rng.gen_range(1..6);
            let w = 2 * rng.gen_range(1..6);
            let x = random_tensor(&mut rng, Shape::new(n, c, h, w));
            assert!(pixel_shuffle(&pixel_unshuffle(&x)).bit_eq(&x));
            let y = random_tensor(&mut rng, Shape::new(n, 4 * c, h, w));
            assert!(pixel_unshuffle(&pixel_shuffle(&y)).bit_eq(&y));
        }
    }

    #[test]
    fn concat_shapes_and_single_identity() {
        let a = Tensor::<f64>::ones(Shape::new(2, 3, 4, 4));
        let b = Tensor::<f64>::full(Shape::new(2, 64, 4, 4), 2.0);
        let c = Tensor::<f64>::full(Shape::new(2, 3, 4, 4), 3.0);
        let y = concat_channels(&[&a, &b, &c]);
        assert_eq!(y.shape(), Shape::new(2, 70, 4, 4));
        assert_eq!(y.at(1, 0, 0, 0), 1.0);
        assert_eq!(y.at(1, 3, 0, 0), 2.0);
        assert_eq!(y.at(1, 67, 0, 0), 3.0);
        let single = concat_channels(&[&a]);
        assert!(single.bit_eq(&a));
    }

    #[test]
    fn concat_backward_splits_ranges() {
        let g = Tensor::from_fn(Shape::new(1, 5, 1, 1), |_, c, _, _| c as f64);
        let parts = concat_channels_backward(&g, &[2, 3]);
        assert_eq!(parts[0].data(), &[0.0, 1.0]);
        assert_eq!(parts[1].data(), &[2.0, 3.0, 4.0]);
    }

    #[test]
    fn l1_distance_cases() {
        let a = Tensor::<f64>::ones(Shape::new(1, 1, 2, 2));
        assert_eq!(l1_distance_forward(&a, &a), 0.0);
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert_eq!(l1_distance_forward(&a, &b), 1.0);
    }

    #[test]
    fn bicubic_preserves_constants() {
        let x = Tensor::<f64>::full(Shape::new(1, 2, 8, 8), 0.42);
        let y = bicubic_downsample_half(&x);
        assert_eq!(y.shape(), Shape::new(1, 2, 4, 4));
        for &v in y.data() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn bicubic_reproduces_linear_ramps_in_the_interior() {
        // Catmull-Rom interpolates linear signals exactly away from the
        // clamped borders: output i samples source coordinate 2i + 0.5.
        let x = Tensor::from_fn(Shape::new(1, 1, 2, 16), |_, _, _, col| col as f64);
        let y = bicubic_downsample_half(&x);
        for i in 1..7 {
            let want = 2.0 * i as f64 + 0.5;
            assert!((y.at(0, 0, 0, i) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn bicubic_matches_direct_kernel_evaluation() {
        // Independent oracle: evaluate the cubic kernel W(d) with a = -0.5 at
        // the tap distances instead of hard-coding the weights.
        fn cubic(d: f64) -> f64 {
            let d = d.abs();
            if d <= 1.0 {
                1.5 * d.powi(3) - 2.5 * d * d + 1.0
            } else if d < 2.0 {
                -0.5 * d.powi(3) + 2.5 * d * d - 4.0 * d + 2.0
            } else {
                0.0
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&mut rng, Shape::new(1, 1, 6, 6));
        let y = bicubic_downsample_half(&x);
        for oy in 0..3 {
            for ox in 0..3 {
                let mut want = 0.0;
                for ty in -1isize..=2 {
                    for tx in -1isize..=2 {
                        let wy = cubic(ty as f64 - 0.5);
                        let wx = cubic(tx as f64 - 0.5);
                        let sy = (2 * oy as isize + ty).clamp(0, 5) as usize;
                        let sx = (2 * ox as isize + tx).clamp(0, 5) as usize;
                        want += wy * wx * x.at(0, 0, sy, sx);
                    }
                }
                assert!((y.at(0, 0, oy, ox) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pyramid_levels_halve() {
        let x = Tensor::<f64>::ones(Shape::new(1, 3, 16, 8));
        let p = build_pyramid(&x, 3);
        assert_eq!(p.len(), 3);
        assert_eq!(p[0].shape(), Shape::new(1, 3, 16, 8));
        assert_eq!(p[1].shape(), Shape::new(1, 3, 8, 4));
        assert_eq!(p[2].shape(), Shape::new(1, 3, 4, 2));
    }

    #[test]
    fn l1_distance_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_tensor(&mut rng, Shape::new(2, 3, 4, 5));
        let b = random_tensor(&mut rng, Shape::new(2, 3, 4, 5));
        let got = l1_distance_forward(&a, &b);
        let mut want = 0.0;
        for i in 0..a.numel() {
            want += (a.data()[i] - b.data()[i]).abs();
        }
        want /= a.numel() as f64;
        assert!((got - want).abs() < 1e-12);
    }
}
