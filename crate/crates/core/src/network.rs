//! The three-scale deblurring network.
//!
//! Each scale runs an encoder over the blurry input at that pyramid level,
//! feeds the result through a feature mapper whose weights are physically
//! shared by every scale, and decodes a residual that is added back onto the
//! scale input. Information flows both ways across scales: encoder features
//! travel fine-to-coarse through pixel unshuffling, decoder features travel
//! coarse-to-fine through pixel shuffling, each followed by a fusion conv.
//!
//! The encoder's first stage is the extreme-channel prior layer: a learned
//! mapping produces per-pixel dark-prior (lambda) and bright-prior (omega)
//! maps that are concatenated around the backbone features. The `ecp` switch
//! replaces that branch with a plain conv of equal output width so ablations
//! keep every downstream shape.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::build_pyramid;
use crate::params::ParamSet;
use crate::tape::{Tape, ValueId};
use crate::tensor::{Element, Shape, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Pyramid depth. 1 disables multi-scale processing entirely.
    pub scales: usize,
    /// Feature width of every backbone conv.
    pub base_channels: usize,
    /// Residual-in-residual groups in the shared mapper.
    pub rir_blocks: usize,
    /// Residual blocks per group.
    pub res_blocks: usize,
    /// Extraction window per scale, finest first.
    pub windows: Vec<usize>,
    /// Extreme-channel prior branch on/off.
    pub ecp: bool,
    /// Inter-scale feature flow on/off.
    pub ife: bool,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 {
            return Err(Error::config("scales must be at least 1"));
        }
        if self.windows.len() != self.scales {
            return Err(Error::config(format!(
                "expected {} extraction windows (one per scale), got {}",
                self.scales,
                self.windows.len()
            )));
        }
        for &w in &self.windows {
            if w == 0 || w % 2 == 0 {
                return Err(Error::config(format!(
                    "extraction windows must be odd and positive, got {w}"
                )));
            }
        }
        if self.base_channels == 0 {
            return Err(Error::config("base_channels must be positive"));
        }
        if self.ife && self.scales > 1 && self.base_channels % 4 != 0 {
            return Err(Error::config(format!(
                "inter-scale flow shuffles features by factor 2, so base_channels \
                 must be divisible by 4, got {}",
                self.base_channels
            )));
        }
        if self.rir_blocks == 0 || self.res_blocks == 0 {
            return Err(Error::config("rir_blocks and res_blocks must be positive"));
        }
        Ok(())
    }

    /// Spatial divisibility the input must satisfy so every pyramid level
    /// halves cleanly and stays shuffle-compatible.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.scales - 1)
    }
}

/// Everything the forward pass recorded, ready for loss attachment and
/// backward. Scale indices are finest-first throughout.
pub struct ForwardPass<E: Element> {
    pub tape: Tape<E>,
    pub param_ids: HashMap<String, ValueId>,
    pub input_ids: Vec<ValueId>,
    pub restored: Vec<ValueId>,
    pub lambda_maps: Vec<Option<ValueId>>,
    pub omega_maps: Vec<Option<ValueId>>,
}

impl<E: Element> ForwardPass<E> {
    pub fn restored_finest(&self) -> &Tensor<E> {
        self.tape.value(self.restored[0])
    }
}

#[derive(Clone)]
pub struct Network<E: Element> {
    pub config: NetworkConfig,
    pub params: ParamSet<E>,
}

fn conv_node<E: Element>(
    tape: &mut Tape<E>,
    ids: &HashMap<String, ValueId>,
    prefix: &str,
    x: ValueId,
) -> Result<ValueId> {
    let w = param_id(ids, &format!("{prefix}.w"))?;
    let b = param_id(ids, &format!("{prefix}.b"))?;
    tape.conv2d(x, w, b)
}

fn conv_prelu_node<E: Element>(
    tape: &mut Tape<E>,
    ids: &HashMap<String, ValueId>,
    prefix: &str,
    x: ValueId,
) -> Result<ValueId> {
    let y = conv_node(tape, ids, prefix, x)?;
    let p = param_id(ids, &format!("{prefix}.p"))?;
    tape.prelu(y, p)
}

fn param_id(ids: &HashMap<String, ValueId>, name: &str) -> Result<ValueId> {
    ids.get(name)
        .copied()
        .ok_or_else(|| Error::contract(format!("forward pass references missing parameter {name:?}")))
}

/// Shared feature mapper: residual-in-residual groups of residual blocks.
/// Every skip is bridged by a trailing conv, so zeroing all mapper weights
/// and biases collapses the whole thing to the identity.
fn build_mapper<E: Element>(
    tape: &mut Tape<E>,
    ids: &HashMap<String, ValueId>,
    config: &NetworkConfig,
    x: ValueId,
) -> Result<ValueId> {
    let mut cur = x;
    for r in 0..config.rir_blocks {
        let group_in = cur;
        let mut inner = cur;
        for p in 0..config.res_blocks {
            let c1 = conv_prelu_node(tape, ids, &format!("mapper.rir{r}.res{p}.conv1"), inner)?;
            let c2 = conv_node(tape, ids, &format!("mapper.rir{r}.res{p}.conv2"), c1)?;
            inner = tape.add(inner, c2)?;
        }
        let tail = conv_node(tape, ids, &format!("mapper.rir{r}.tail"), inner)?;
        cur = tape.add(group_in, tail)?;
    }
    let tail = conv_node(tape, ids, "mapper.tail", cur)?;
    tape.add(x, tail)
}

impl<E: Element> Network<E> {
    /// Builds a network with freshly initialized parameters.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let c = config.base_channels;
        let k = 3;

        for j in 0..config.scales {
            let e = format!("s{j}.enc");
            params.add_conv(&mut rng, &format!("{e}.in"), c, 3, k)?;
            params.add_prelu(&format!("{e}.in"), c)?;
            if config.ecp {
                params.add_conv(&mut rng, &format!("{e}.ecpel.theta"), c, c, k)?;
                params.add_prelu(&format!("{e}.ecpel.theta"), c)?;
                params.add_conv(&mut rng, &format!("{e}.ecpel.alpha"), 3, c, k)?;
                params.add_conv(&mut rng, &format!("{e}.ecpel.beta"), 3, c, k)?;
                // Bias the prior maps into their sparse regime (Λ near 0,
                // Ω near 1) from the start. At the sigmoid midpoint the
                // prior terms dwarf the reconstruction term and their
                // gradients dominate the optimizer's moment estimates for
                // the shared trunk during the first few hundred iterations.
                let b = Shape::new(1, 3, 1, 1);
                params.restore(&format!("{e}.ecpel.alpha.b"), Tensor::full(b, E::from_f64(-3.0)))?;
                params.restore(&format!("{e}.ecpel.beta.b"), Tensor::full(b, E::from_f64(3.0)))?;
            } else {
                params.add_conv(&mut rng, &format!("{e}.expand"), c + 6, c, k)?;
                params.add_prelu(&format!("{e}.expand"), c + 6)?;
            }
            params.add_conv(&mut rng, &format!("{e}.conv2"), c, c + 6, k)?;
            params.add_prelu(&format!("{e}.conv2"), c)?;
            for stage in ["conv3", "conv4"] {
                params.add_conv(&mut rng, &format!("{e}.{stage}"), c, c, k)?;
                params.add_prelu(&format!("{e}.{stage}"), c)?;
            }
            if config.ife && j > 0 {
                params.add_conv(&mut rng, &format!("{e}.fuse"), c, 5 * c, k)?;
                params.add_prelu(&format!("{e}.fuse"), c)?;
            }
        }

        for r in 0..config.rir_blocks {
            for p in 0..config.res_blocks {
                let b = format!("mapper.rir{r}.res{p}");
                params.add_conv(&mut rng, &format!("{b}.conv1"), c, c, k)?;
                params.add_prelu(&format!("{b}.conv1"), c)?;
                params.add_conv(&mut rng, &format!("{b}.conv2"), c, c, k)?;
            }
            params.add_conv(&mut rng, &format!("mapper.rir{r}.tail"), c, c, k)?;
        }
        params.add_conv(&mut rng, "mapper.tail", c, c, k)?;

        for j in 0..config.scales {
            let d = format!("s{j}.dec");
            if config.ife && j + 1 < config.scales {
                params.add_conv(&mut rng, &format!("{d}.fuse"), c, c + c / 4, k)?;
                params.add_prelu(&format!("{d}.fuse"), c)?;
            }
            for stage in ["conv1", "conv2", "conv3"] {
                params.add_conv(&mut rng, &format!("{d}.{stage}"), c, c, k)?;
                params.add_prelu(&format!("{d}.{stage}"), c)?;
            }
            params.add_conv(&mut rng, &format!("{d}.out"), 3, c, k)?;
            // Zero the residual head so every scale starts as an exact
            // identity map. From a random head the first phase of training
            // is spent unlearning the arbitrary residual, after which the
            // optimizer lingers near the identity anyway; starting there
            // skips both and the first gradients already point at the
            // true correction.
            params.restore(&format!("{d}.out.w"), Tensor::zeros(Shape::new(3, c, k, k)))?;
        }

        Ok(Network { config, params })
    }

    fn check_level_shape(&self, level: usize, got: Shape, expect: Shape) -> Result<()> {
        if got != expect {
            return Err(Error::contract(format!(
                "pyramid level {level} has shape {got}, expected {expect}"
            )));
        }
        Ok(())
    }

    /// Runs the forward pass on an explicit pyramid (finest first). The
    /// pyramid levels are taken as given, which lets callers probe scale
    /// connectivity independently of pyramid construction.
    pub fn forward_pyramid(
        &self,
        pyramid: &[Tensor<E>],
        param_grads: bool,
        input_grads: bool,
    ) -> Result<ForwardPass<E>> {
        let s = self.config.scales;
        if pyramid.len() != s {
            return Err(Error::contract(format!(
                "expected {} pyramid levels, got {}",
                s,
                pyramid.len()
            )));
        }
        let top = pyramid[0].shape();
        if top.c != 3 {
            return Err(Error::contract(format!(
                "network input must have 3 channels, got {top}"
            )));
        }
        let m = self.config.spatial_multiple();
        if top.h % m != 0 || top.w % m != 0 {
            return Err(Error::contract(format!(
                "input {top} spatial dims must be multiples of {m} for {s} scales"
            )));
        }
        for j in 0..s {
            let expect = Shape::new(top.n, 3, top.h >> j, top.w >> j);
            self.check_level_shape(j, pyramid[j].shape(), expect)?;
        }

        let mut tape = Tape::new();
        let mut ids = HashMap::new();
        for (name, t) in self.params.iter() {
            let id = tape.leaf(t.clone(), param_grads);
            tape.set_label(id, name);
            ids.insert(name.to_string(), id);
        }
        let input_ids: Vec<ValueId> = pyramid
            .iter()
            .enumerate()
            .map(|(j, t)| {
                let id = tape.leaf(t.clone(), input_grads);
                tape.set_label(id, format!("scale {j} input"));
                id
            })
            .collect();

        let mut lambda_maps = vec![None; s];
        let mut omega_maps = vec![None; s];

        // Encoders, finest to coarsest.
        let mut enc = Vec::with_capacity(s);
        for j in 0..s {
            let e = format!("s{j}.enc");
            let f = conv_prelu_node(&mut tape, &ids, &format!("{e}.in"), input_ids[j])?;
            let expanded = if self.config.ecp {
                let t = conv_prelu_node(&mut tape, &ids, &format!("{e}.ecpel.theta"), f)?;
                let lam_pre = conv_node(&mut tape, &ids, &format!("{e}.ecpel.alpha"), t)?;
                let lam = tape.sigmoid(lam_pre);
                tape.set_label(lam, format!("scale {j} lambda map"));
                let om_pre = conv_node(&mut tape, &ids, &format!("{e}.ecpel.beta"), t)?;
                let om = tape.sigmoid(om_pre);
                tape.set_label(om, format!("scale {j} omega map"));
                lambda_maps[j] = Some(lam);
                omega_maps[j] = Some(om);
                tape.concat_channels(&[lam, f, om])?
            } else {
                conv_prelu_node(&mut tape, &ids, &format!("{e}.expand"), f)?
            };
            let h2 = conv_prelu_node(&mut tape, &ids, &format!("{e}.conv2"), expanded)?;
            let h3 = conv_prelu_node(&mut tape, &ids, &format!("{e}.conv3"), h2)?;
            let h4 = conv_prelu_node(&mut tape, &ids, &format!("{e}.conv4"), h3)?;
            let out = if self.config.ife && j > 0 {
                let finer = tape.pixel_unshuffle(enc[j - 1])?;
                let cat = tape.concat_channels(&[h4, finer])?;
                conv_prelu_node(&mut tape, &ids, &format!("{e}.fuse"), cat)?
            } else {
                h4
            };
            tape.set_label(out, format!("scale {j} encoder features"));
            enc.push(out);
        }

        // One mapper, applied per scale with the same parameter leaves.
        let mapped: Vec<ValueId> = enc
            .iter()
            .map(|&e| build_mapper(&mut tape, &ids, &self.config, e))
            .collect::<Result<_>>()?;

        // Decoders, coarsest to finest.
        let mut dec_feat = vec![None; s];
        let mut restored = vec![None; s];
        for j in (0..s).rev() {
            let d = format!("s{j}.dec");
            let head = if self.config.ife && j + 1 < s {
                let coarser = tape.pixel_shuffle(dec_feat[j + 1].unwrap())?;
                let cat = tape.concat_channels(&[mapped[j], coarser])?;
                conv_prelu_node(&mut tape, &ids, &format!("{d}.fuse"), cat)?
            } else {
                mapped[j]
            };
            let d1 = conv_prelu_node(&mut tape, &ids, &format!("{d}.conv1"), head)?;
            let d2 = conv_prelu_node(&mut tape, &ids, &format!("{d}.conv2"), d1)?;
            let d3 = conv_prelu_node(&mut tape, &ids, &format!("{d}.conv3"), d2)?;
            dec_feat[j] = Some(d3);
            let residual = conv_node(&mut tape, &ids, &format!("{d}.out"), d3)?;
            let y = tape.add(input_ids[j], residual)?;
            tape.set_label(y, format!("scale {j} restored"));
            restored[j] = Some(y);
        }

        Ok(ForwardPass {
            tape,
            param_ids: ids,
            input_ids,
            restored: restored.into_iter().map(Option::unwrap).collect(),
            lambda_maps,
            omega_maps,
        })
    }

    /// Convenience wrapper: builds the pyramid from a single finest-scale
    /// input, then runs [`Self::forward_pyramid`].
    pub fn forward(
        &self,
        input: &Tensor<E>,
        param_grads: bool,
        input_grads: bool,
    ) -> Result<ForwardPass<E>> {
        let m = self.config.spatial_multiple();
        let s = input.shape();
        if s.h % m != 0 || s.w % m != 0 {
            return Err(Error::contract(format!(
                "input {s} spatial dims must be multiples of {m} for {} scales",
                self.config.scales
            )));
        }
        let pyramid = build_pyramid(input, self.config.scales);
        self.forward_pyramid(&pyramid, param_grads, input_grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig {
            scales: 2,
            base_channels: 16,
            rir_blocks: 2,
            res_blocks: 2,
            windows: vec![7, 5],
            ecp: true,
            ife: true,
        }
    }

    fn random_image(seed: u64, n: usize, h: usize, w: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(Shape::new(n, 3, h, w), |_, _, _, _| rng.gen_range(0.0..1.0))
    }

    /// Kicks every parameter off the identity start. Connectivity and
    /// gradient-flow probes need a generic point: with the residual heads
    /// still zero, every restored scale equals its input and nothing behind
    /// a head is observable.
    fn randomize<E: Element>(net: &mut Network<E>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = net.params.names().map(String::from).collect();
        for name in names {
            for v in net.params.get_mut(&name).unwrap().data_mut() {
                *v = *v + E::from_f64(rng.gen_range(-0.05..0.05));
            }
        }
    }

    #[test]
    fn config_validation_rejects_bad_setups() {
        let mut c = tiny_config();
        c.windows = vec![7];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.windows = vec![7, 4];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.scales = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.base_channels = 6;
        assert!(c.validate().is_err(), "6 is not shuffle-divisible");
        let mut c = tiny_config();
        c.base_channels = 6;
        c.ife = false;
        assert!(c.validate().is_ok(), "no shuffling without inter-scale flow");
    }

    #[test]
    fn forward_shapes_and_outputs_per_scale() {
        let net = Network::<f32>::new(tiny_config(), 3).unwrap();
        let x = random_image(1, 1, 16, 16);
        let pass = net.forward(&x, false, false).unwrap();
        assert_eq!(pass.restored.len(), 2);
        assert_eq!(pass.tape.shape(pass.restored[0]), Shape::new(1, 3, 16, 16));
        assert_eq!(pass.tape.shape(pass.restored[1]), Shape::new(1, 3, 8, 8));
        for j in 0..2 {
            let lam = pass.lambda_maps[j].unwrap();
            assert_eq!(pass.tape.shape(lam).c, 3);
            for &v in pass.tape.value(lam).data() {
                assert!((0.0..=1.0).contains(&v), "sigmoid output out of range");
            }
        }
    }

    #[test]
    fn zero_residual_decoder_returns_input_exactly() {
        // Whatever the trunk computes, zeroed output heads make every scale
        // an identity map.
        let mut net = Network::<f32>::new(tiny_config(), 4).unwrap();
        randomize(&mut net, 40);
        for j in 0..2 {
            for suffix in ["w", "b"] {
                let name = format!("s{j}.dec.out.{suffix}");
                let t = net.params.get_mut(&name).unwrap();
                *t = Tensor::zeros(t.shape());
            }
        }
        let x = random_image(2, 1, 16, 16);
        let pass = net.forward(&x, false, false).unwrap();
        assert!(pass.restored_finest().bit_eq(&x));
    }

    #[test]
    fn fresh_network_is_an_exact_identity() {
        // Freshly initialized heads are zero, so the first forward pass
        // reproduces the input at every scale before any training.
        let net = Network::<f32>::new(tiny_config(), 4).unwrap();
        let x = random_image(2, 1, 16, 16);
        let pyramid = build_pyramid(&x, 2);
        let pass = net.forward(&x, false, false).unwrap();
        for (j, level) in pyramid.iter().enumerate() {
            assert!(pass.tape.value(pass.restored[j]).bit_eq(level));
        }
    }

    #[test]
    fn mapper_with_zero_weights_is_exact_identity() {
        let mut net = Network::<f64>::new(tiny_config(), 5).unwrap();
        let zero_names: Vec<String> = net
            .params
            .names()
            .filter(|n| n.starts_with("mapper."))
            .map(String::from)
            .collect();
        for name in zero_names {
            let t = net.params.get_mut(&name).unwrap();
            *t = Tensor::zeros(t.shape());
        }
        let mut tape = Tape::new();
        let mut ids = HashMap::new();
        for (name, t) in net.params.iter() {
            ids.insert(name.to_string(), tape.leaf(t.clone(), false));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x_t = Tensor::from_fn(Shape::new(1, 16, 8, 8), |_, _, _, _| rng.gen_range(-1.0..1.0));
        let x = tape.leaf(x_t.clone(), false);
        let y = build_mapper(&mut tape, &ids, &net.config, x).unwrap();
        assert!(tape.value(y).bit_eq(&x_t));
    }

    #[test]
    fn ecp_off_swaps_prior_branch_for_expand() {
        let mut c = tiny_config();
        c.ecp = false;
        let off = Network::<f32>::new(c, 7).unwrap();
        assert!(off.params.names().all(|n| !n.contains("ecpel")));
        assert!(off.params.names().any(|n| n.contains("expand")));
        let x = random_image(3, 1, 16, 16);
        let pass = off.forward(&x, false, false).unwrap();
        assert!(pass.lambda_maps.iter().all(Option::is_none));
        assert_eq!(pass.tape.shape(pass.restored[0]), Shape::new(1, 3, 16, 16));
    }

    #[test]
    fn ife_off_disconnects_scales() {
        let mut c = tiny_config();
        c.ife = false;
        let mut net = Network::<f32>::new(c, 8).unwrap();
        randomize(&mut net, 80);
        assert!(net.params.names().all(|n| !n.contains("fuse")));
        let x = random_image(4, 1, 16, 16);
        let pyramid = build_pyramid(&x, 2);
        let base = net.forward_pyramid(&pyramid, false, false).unwrap();
        let mut perturbed = pyramid.clone();
        *perturbed[0].at_mut(0, 1, 5, 5) += 0.5;
        let moved = net.forward_pyramid(&perturbed, false, false).unwrap();
        let c0 = base.tape.value(base.restored[1]);
        let c1 = moved.tape.value(moved.restored[1]);
        assert!(c0.bit_eq(c1), "coarsest output changed without inter-scale flow");
        assert!(
            !base
                .tape
                .value(base.restored[0])
                .bit_eq(moved.tape.value(moved.restored[0])),
            "finest output must react to its own input"
        );
    }

    #[test]
    fn ife_on_connects_scales_both_ways() {
        let mut net = Network::<f32>::new(tiny_config(), 9).unwrap();
        randomize(&mut net, 90);
        let x = random_image(5, 1, 16, 16);
        let pyramid = build_pyramid(&x, 2);
        let base = net.forward_pyramid(&pyramid, false, false).unwrap();
        let mut perturbed = pyramid.clone();
        *perturbed[0].at_mut(0, 1, 5, 5) += 0.5;
        let moved = net.forward_pyramid(&perturbed, false, false).unwrap();
        assert!(!base
            .tape
            .value(base.restored[1])
            .bit_eq(moved.tape.value(moved.restored[1])));
        let mut perturbed = pyramid.clone();
        *perturbed[1].at_mut(0, 1, 2, 2) += 0.5;
        let moved = net.forward_pyramid(&perturbed, false, false).unwrap();
        assert!(!base
            .tape
            .value(base.restored[0])
            .bit_eq(moved.tape.value(moved.restored[0])));
    }

    #[test]
    fn shared_mapper_receives_gradient_from_every_scale() {
        // With inter-scale flow off and a loss on one scale only, the shared
        // mapper still gets gradient; summing losses over both scales must
        // accumulate both contributions.
        let mut c = tiny_config();
        c.ife = false;
        let mut net = Network::<f64>::new(c, 10).unwrap();
        randomize(&mut net, 100);
        let x = random_image(6, 1, 16, 16).cast::<f64>();
        let mut pass = net.forward(&x, true, false).unwrap();
        let t0 = pass.tape.leaf(Tensor::zeros(Shape::new(1, 3, 16, 16)), false);
        let t1 = pass.tape.leaf(Tensor::zeros(Shape::new(1, 3, 8, 8)), false);
        let l0 = pass.tape.l1_distance(pass.restored[0], t0).unwrap();
        let l1 = pass.tape.l1_distance(pass.restored[1], t1).unwrap();
        let both = pass.tape.add(l0, l1).unwrap();

        let w = pass.param_ids["mapper.rir0.res0.conv1.w"];
        let g0 = pass.tape.backward(l0).unwrap().take(w).unwrap();
        let g1 = pass.tape.backward(l1).unwrap().take(w).unwrap();
        let gb = pass.tape.backward(both).unwrap().take(w).unwrap();
        let mut sum = g0.clone();
        sum.add_assign(&g1);
        assert!(gb.max_abs_diff(&sum) < 1e-12);
        assert!(g0.data().iter().any(|&v| v != 0.0));
        assert!(g1.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn rejects_wrong_channel_count_and_odd_sizes() {
        let net = Network::<f32>::new(tiny_config(), 11).unwrap();
        let bad_c = Tensor::<f32>::ones(Shape::new(1, 4, 16, 16));
        assert!(net.forward(&bad_c, false, false).is_err());
        let bad_s = Tensor::<f32>::ones(Shape::new(1, 3, 18, 17));
        assert!(net.forward(&bad_s, false, false).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let net = Network::<f32>::new(tiny_config(), 12).unwrap();
        let x = random_image(7, 1, 16, 16);
        let a = net.forward(&x, false, false).unwrap();
        let b = net.forward(&x, false, false).unwrap();
        assert!(a.restored_finest().bit_eq(b.restored_finest()));
    }
}
