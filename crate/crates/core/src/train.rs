//! The optimization loop: batch sampling, multi-scale loss, Adam updates,
//! JSON-lines logging, periodic checkpoints, and bit-exact resume.
//!
//! Determinism contract: a run is a pure function of (config, dataset). The
//! checkpoint stores parameters, Adam moments, the iteration counter, and
//! the generator seed plus stream position, so resuming at iteration k and
//! continuing to n produces bit-identical parameters to an uninterrupted
//! n-iteration run. Held-out evaluation consumes no randomness, which keeps
//! its cadence out of the training stream.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::checkpoint::Archive;
use crate::config::RunConfig;
use crate::data::{center_crop, Dataset};
use crate::error::{Error, Result};
use crate::kernels::build_pyramid;
use crate::loss::attach_loss;
use crate::metrics::psnr;
use crate::network::Network;
use crate::tensor::{Element, Tensor};

const CONFIG_KEY: &str = "__config";
const ITER_KEY: &str = "__iter";
const ADAM_STEP_KEY: &str = "__adam.step";
const RNG_SEED_KEY: &str = "__rng.seed";
const RNG_POS_KEY: &str = "__rng.word_pos";

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: u64,
    pub total: f64,
    pub recon: Vec<f64>,
    pub dark: Vec<Option<f64>>,
    pub bright: Vec<Option<f64>>,
    pub eval_psnr: Option<f64>,
}

#[derive(Debug)]
pub struct TrainReport {
    pub iters_run: u64,
    pub early_stopped: bool,
    pub final_eval_psnr: Option<f64>,
    pub final_total: f64,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Write the full training state into an archive.
pub fn save_checkpoint<E: Element>(
    cfg: &RunConfig,
    net: &Network<E>,
    adam: &Adam<E>,
    iter: u64,
    rng: &ChaCha8Rng,
    path: &Path,
) -> Result<()> {
    let mut a = Archive::new();
    a.push_bytes(CONFIG_KEY, &cfg.echo_json())?;
    a.push_u64s(ITER_KEY, &[iter])?;
    a.push_u64s(ADAM_STEP_KEY, &[adam.step_count()])?;
    a.push_bytes(RNG_SEED_KEY, &rng.get_seed())?;
    a.push_bytes(RNG_POS_KEY, &rng.get_word_pos().to_le_bytes())?;
    for (name, p) in net.params.iter() {
        a.push_tensor(name, p)?;
    }
    for (name, m, v) in adam.state(&net.params) {
        a.push_tensor(&format!("__adam.m.{name}"), m)?;
        a.push_tensor(&format!("__adam.v.{name}"), v)?;
    }
    a.save(path)
}

/// Read only the embedded config from a checkpoint.
pub fn peek_config(path: &Path) -> Result<RunConfig> {
    let a = Archive::load(path)?;
    RunConfig::from_echo_json(a.bytes(CONFIG_KEY)?)
}

/// A checkpoint restored into live training state.
pub struct LoadedCheckpoint<E: Element> {
    pub config: RunConfig,
    pub network: Network<E>,
    pub adam: Adam<E>,
    pub iter: u64,
    pub rng: ChaCha8Rng,
}

pub fn load_checkpoint<E: Element>(path: &Path) -> Result<LoadedCheckpoint<E>> {
    let a = Archive::load(path)?;
    let config = RunConfig::from_echo_json(a.bytes(CONFIG_KEY)?)?;
    let iter = *a
        .u64s(ITER_KEY)?
        .first()
        .ok_or_else(|| Error::checkpoint("empty iteration entry".to_string()))?;
    let adam_step = *a
        .u64s(ADAM_STEP_KEY)?
        .first()
        .ok_or_else(|| Error::checkpoint("empty adam step entry".to_string()))?;

    let mut network = Network::<E>::new(config.network_config(), config.seed)?;
    let expected: usize = network.params.len();
    let stored_params = a
        .names()
        .filter(|n| !n.starts_with("__"))
        .count();
    if stored_params != expected {
        return Err(Error::checkpoint(format!(
            "checkpoint holds {stored_params} parameters, configuration needs {expected}"
        )));
    }
    let names: Vec<String> = network.params.names().map(String::from).collect();
    for name in &names {
        network.params.restore(name, a.tensor(name)?)?;
    }

    let mut adam = Adam::new(config.adam_config());
    if adam_step > 0 {
        let mut moments = Vec::with_capacity(names.len());
        for name in &names {
            moments.push((
                name.clone(),
                a.tensor(&format!("__adam.m.{name}"))?,
                a.tensor(&format!("__adam.v.{name}"))?,
            ));
        }
        adam.restore_state(adam_step, moments);
    }

    let seed_bytes = a.bytes(RNG_SEED_KEY)?;
    let seed: [u8; 32] = seed_bytes
        .try_into()
        .map_err(|_| Error::checkpoint("generator seed entry is not 32 bytes".to_string()))?;
    let pos_bytes: [u8; 16] = a
        .bytes(RNG_POS_KEY)?
        .try_into()
        .map_err(|_| Error::checkpoint("generator position entry is not 16 bytes".to_string()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(u128::from_le_bytes(pos_bytes));

    Ok(LoadedCheckpoint {
        config,
        network,
        adam,
        iter,
        rng,
    })
}

/// Evaluation input: the held-out pair cropped to a pyramid-friendly size,
/// with the input pyramid prebuilt. Evaluation draws no randomness.
struct EvalPair<E: Element> {
    input_pyramid: Vec<Tensor<E>>,
    target: Tensor<E>,
}

impl<E: Element> EvalPair<E> {
    fn prepare(blur: &Tensor<E>, sharp: &Tensor<E>, cfg: &RunConfig) -> Result<EvalPair<E>> {
        let multiple = cfg.network_config().spatial_multiple();
        let s = blur.shape();
        let (th, tw) = (s.h / multiple * multiple, s.w / multiple * multiple);
        if th == 0 || tw == 0 {
            return Err(Error::data(format!(
                "held-out pair {s} too small for {} scales",
                cfg.scales
            )));
        }
        let x = center_crop(blur, th, tw)?;
        let y = center_crop(sharp, th, tw)?;
        Ok(EvalPair {
            input_pyramid: build_pyramid(&x, cfg.scales),
            target: y,
        })
    }

    fn psnr(&self, net: &Network<E>) -> Result<f64> {
        let pass = net.forward_pyramid(&self.input_pyramid, false, false)?;
        // The deliverable image lives in [0,1]; clamp like inference output.
        // Comparison form so non-finite values still poison the metric.
        let mut out = pass.restored_finest().clone();
        let (zero, one) = (E::from_f64(0.0), E::from_f64(1.0));
        for v in out.data_mut() {
            if *v < zero {
                *v = zero;
            } else if *v > one {
                *v = one;
            }
        }
        psnr(&out, &self.target)
    }
}

/// Compare configs for resume, ignoring the extended iteration budget.
fn resume_compatible(stored: &RunConfig, current: &RunConfig) -> bool {
    let mut normalized = stored.clone();
    normalized.iters = current.iters;
    normalized == *current
}

pub fn train<E: Element>(
    cfg: &RunConfig,
    dataset: &Dataset<E>,
    out_dir: &Path,
    resume: Option<&Path>,
    mut progress: Option<&mut dyn FnMut(&LogRecord)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.pairs.is_empty() {
        return Err(Error::data("dataset is empty".to_string()));
    }
    fs::create_dir_all(out_dir)?;

    // Hold out the last pair for evaluation when more than one exists;
    // a single-pair dataset evaluates on its training pair (overfit runs).
    let train_view = if dataset.pairs.len() > 1 {
        Dataset {
            pairs: dataset.pairs[..dataset.pairs.len() - 1].to_vec(),
        }
    } else {
        dataset.clone()
    };
    let held_out = dataset.pairs.last().expect("non-empty dataset");
    let eval_pair = EvalPair::prepare(&held_out.0, &held_out.1, cfg)?;

    let (mut net, mut adam, mut rng, start_iter) = match resume {
        Some(path) => {
            let loaded = load_checkpoint::<E>(path)?;
            if !resume_compatible(&loaded.config, cfg) {
                return Err(Error::checkpoint(format!(
                    "checkpoint {} was written with a different configuration",
                    path.display()
                )));
            }
            if loaded.iter > cfg.iters {
                return Err(Error::checkpoint(format!(
                    "checkpoint is at iteration {}, beyond the budget {}",
                    loaded.iter, cfg.iters
                )));
            }
            (loaded.network, loaded.adam, loaded.rng, loaded.iter)
        }
        None => (
            Network::<E>::new(cfg.network_config(), cfg.seed)?,
            Adam::new(cfg.adam_config()),
            ChaCha8Rng::seed_from_u64(cfg.seed),
            0,
        ),
    };

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = std::io::BufWriter::new(if start_iter == 0 {
        fs::File::create(&log_path)?
    } else {
        fs::OpenOptions::new().append(true).create(true).open(&log_path)?
    });

    let checkpoint_path = out_dir.join("model.ckpt");
    let mut final_eval = None;
    let mut final_total = f64::NAN;
    let mut early_stopped = false;
    let mut iters_run = start_iter;

    for iter in start_iter + 1..=cfg.iters {
        let (xb, yb) =
            train_view.sample_batch(cfg.batch, cfg.patch, cfg.augment, cfg.noise_sigma, &mut rng)?;
        let x_pyr = build_pyramid(&xb, cfg.scales);
        let y_pyr = build_pyramid(&yb, cfg.scales);
        let mut pass = net.forward_pyramid(&x_pyr, true, false)?;
        let (root, breakdown) = attach_loss(
            &mut pass,
            &y_pyr,
            &cfg.windows,
            E::from_f64(cfg.lambda),
            E::from_f64(cfg.omega),
        )?;
        if !breakdown.total.is_finite() {
            let culprit = pass
                .tape
                .first_non_finite()
                .map(|id| pass.tape.describe(id))
                .unwrap_or_else(|| "objective".to_string());
            return Err(Error::NonFinite(format!("iteration {iter}, {culprit}")));
        }
        let mut grads = pass.tape.backward(root)?;
        let mut by_name = HashMap::with_capacity(pass.param_ids.len());
        for (name, id) in &pass.param_ids {
            let g = grads.take(*id).ok_or_else(|| {
                Error::contract(format!("no gradient reached parameter {name:?}"))
            })?;
            if !g.all_finite() {
                return Err(Error::NonFinite(format!(
                    "iteration {iter}, gradient of {name}"
                )));
            }
            by_name.insert(name.clone(), g);
        }
        adam.step(&mut net.params, &by_name)?;
        iters_run = iter;
        final_total = breakdown.total;

        let eval_due = cfg.eval_every > 0 && iter % cfg.eval_every == 0;
        let last_iter = iter == cfg.iters;
        let mut eval_psnr = None;
        if eval_due || last_iter {
            let p = eval_pair.psnr(&net)?;
            eval_psnr = Some(p);
            final_eval = Some(p);
        }
        if (cfg.log_every > 0 && iter % cfg.log_every == 0) || eval_psnr.is_some() {
            let record = LogRecord {
                iter,
                total: breakdown.total,
                recon: breakdown.recon.clone(),
                dark: breakdown.dark.clone(),
                bright: breakdown.bright.clone(),
                eval_psnr,
            };
            serde_json::to_writer(&mut log, &record)
                .map_err(|e| Error::data(format!("log write: {e}")))?;
            log.write_all(b"\n")?;
            log.flush()?;
            if let Some(f) = progress.as_deref_mut() {
                f(&record);
            }
        }
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 && !last_iter {
            save_checkpoint(cfg, &net, &adam, iter, &rng, &out_dir.join(format!("ckpt_{iter:06}.ckpt")))?;
        }
        if let (Some(threshold), Some(p)) = (cfg.early_stop_psnr, eval_psnr) {
            if p >= threshold {
                early_stopped = true;
                break;
            }
        }
    }

    save_checkpoint(cfg, &net, &adam, iters_run, &rng, &checkpoint_path)?;
    Ok(TrainReport {
        iters_run,
        early_stopped,
        final_eval_psnr: final_eval,
        final_total,
        checkpoint_path,
        log_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::Rng;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        for (k, v) in [
            ("scales", "2"),
            ("base_channels", "4"),
            ("rir_blocks", "1"),
            ("res_blocks", "1"),
            ("windows", "5,3"),
            ("patch", "16"),
            ("batch", "1"),
            ("lr", "1e-3"),
            ("iters", "30"),
            ("log_every", "1"),
            ("eval_every", "10"),
            ("checkpoint_every", "0"),
            ("noise_sigma", "0"),
            ("seed", "77"),
        ] {
            cfg.apply(k, v, "test").unwrap();
        }
        cfg
    }

    fn tiny_dataset(seed: u64) -> Dataset<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pair = crate::data::synth_pair(&mut rng, 24, 7, 0.0, false).unwrap();
        Dataset {
            pairs: vec![(pair.blur.cast::<f32>(), pair.sharp.cast::<f32>())],
        }
    }

    fn read_log(path: &Path) -> Vec<LogRecord> {
        fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn short_run_reduces_the_objective() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let ds = tiny_dataset(3);
        let report = train(&cfg, &ds, dir.path(), None, None).unwrap();
        assert_eq!(report.iters_run, 30);
        assert!(!report.early_stopped);
        let log = read_log(&report.log_path);
        assert_eq!(log.last().unwrap().iter, 30);
        let first = &log[0];
        let last = log.last().unwrap();
        assert!(
            last.total < first.total,
            "loss went {} -> {}",
            first.total,
            last.total
        );
        assert!(report.final_eval_psnr.is_some());
        assert!(report.checkpoint_path.exists());
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run_bit_for_bit() {
        let straight = tempfile::tempdir().unwrap();
        let split = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.apply("iters", "8", "test").unwrap();
        let ds = tiny_dataset(4);

        let full = train(&cfg, &ds, straight.path(), None, None).unwrap();

        let mut half_cfg = cfg.clone();
        half_cfg.apply("iters", "4", "test").unwrap();
        let half = train(&half_cfg, &ds, split.path(), None, None).unwrap();
        let resumed = train(&cfg, &ds, split.path(), Some(&half.checkpoint_path), None).unwrap();

        let a = Archive::load(&full.checkpoint_path).unwrap();
        let b = Archive::load(&resumed.checkpoint_path).unwrap();
        // Identical bytes: parameters, moments, counters, generator state,
        // and the embedded config all agree.
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn checkpoints_roundtrip_through_load() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let ds = tiny_dataset(5);
        let report = train(&cfg, &ds, dir.path(), None, None).unwrap();
        let loaded = load_checkpoint::<f32>(&report.checkpoint_path).unwrap();
        assert_eq!(loaded.iter, 30);
        assert_eq!(loaded.adam.step_count(), 30);
        assert_eq!(loaded.config, cfg);
        // Saving the loaded state reproduces the file byte for byte.
        let resaved = dir.path().join("resaved.ckpt");
        save_checkpoint(
            &loaded.config,
            &loaded.network,
            &loaded.adam,
            loaded.iter,
            &loaded.rng,
            &resaved,
        )
        .unwrap();
        assert_eq!(fs::read(&resaved).unwrap(), fs::read(&report.checkpoint_path).unwrap());
    }

    #[test]
    fn resume_rejects_mismatched_configuration() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let ds = tiny_dataset(6);
        let report = train(&cfg, &ds, dir.path(), None, None).unwrap();
        let mut other = cfg.clone();
        other.apply("base_channels", "8", "test").unwrap();
        other.apply("iters", "40", "test").unwrap();
        let err = train(&other, &ds, dir.path(), Some(&report.checkpoint_path), None).unwrap_err();
        assert!(err.to_string().contains("different configuration"), "{err}");
    }

    #[test]
    fn non_finite_input_aborts_with_a_named_tensor() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut blur: Tensor<f32> =
            Tensor::from_fn(Shape::new(1, 3, 24, 24), |_, _, _, _| rng.gen_range(0.0..1.0));
        blur.data_mut()[100] = f32::NAN;
        let sharp = Tensor::from_fn(Shape::new(1, 3, 24, 24), |_, _, _, _| rng.gen_range(0.0..1.0));
        let ds = Dataset { pairs: vec![(blur, sharp)] };
        let err = train(&cfg, &ds, dir.path(), None, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("non-finite"), "{msg}");
        assert!(msg.contains("iteration 1"), "{msg}");
    }

    #[test]
    fn held_out_pair_is_not_trained_on() {
        // Poison the held-out pair with NaN. Sampling it for training would
        // abort with a non-finite objective, so a successful run proves the
        // sampler never touches it; evaluation does, and reports NaN.
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.apply("iters", "12", "test").unwrap();
        let mut ds = tiny_dataset(9);
        let mut poisoned = tiny_dataset(10).pairs.remove(0);
        poisoned.0.data_mut()[40] = f32::NAN;
        ds.pairs.push(poisoned);
        let report = train(&cfg, &ds, dir.path(), None, None).unwrap();
        assert_eq!(report.iters_run, 12);
        assert!(report.final_eval_psnr.unwrap().is_nan());
    }
}
