//! Run configuration: defaults, flat `key = value` files, flag overrides.
//!
//! Every field has a default reproducing the full-scale training recipe;
//! config files override defaults and command-line flags override files.
//! The fully resolved configuration is echoed as JSON into every artifact
//! (checkpoints, logs, manifests) so a run can be reproduced from it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::AdamConfig;
use crate::error::{Error, Result};
use crate::network::NetworkConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    // Network.
    pub scales: usize,
    pub base_channels: usize,
    pub rir_blocks: usize,
    pub res_blocks: usize,
    pub windows: Vec<usize>,
    pub ecp: bool,
    pub ife: bool,
    // Objective.
    pub lambda: f64,
    pub omega: f64,
    // Optimization.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iters: u64,
    pub batch: usize,
    pub patch: usize,
    pub seed: u64,
    // Data handling.
    pub augment: bool,
    pub noise_sigma: f64,
    pub data_dir: String,
    // Synthesis.
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_max_support: usize,
    pub synth_delta: bool,
    // Cadence.
    pub log_every: u64,
    pub eval_every: u64,
    pub checkpoint_every: u64,
    pub early_stop_psnr: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scales: 3,
            base_channels: 64,
            rir_blocks: 16,
            res_blocks: 4,
            windows: vec![31, 19, 11],
            ecp: true,
            ife: true,
            lambda: 0.1,
            omega: 0.1,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iters: 600_000,
            batch: 10,
            patch: 256,
            seed: 0,
            augment: true,
            noise_sigma: 0.01,
            data_dir: String::new(),
            synth_count: 20,
            synth_size: 96,
            synth_max_support: 15,
            synth_delta: false,
            log_every: 50,
            eval_every: 200,
            checkpoint_every: 1000,
            early_stop_psnr: None,
        }
    }
}

fn parse_bool(value: &str, at: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!(
            "{at}: expected on/off/true/false, got {value:?}"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(value: &str, at: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("{at}: {value:?} is not a valid {what}")))
}

impl RunConfig {
    /// Set one key; `at` names the source for error messages ("line 3",
    /// "flag --lr").
    pub fn apply(&mut self, key: &str, value: &str, at: &str) -> Result<()> {
        match key {
            "scales" => self.scales = parse_num(value, at, "integer")?,
            "base_channels" => self.base_channels = parse_num(value, at, "integer")?,
            "rir_blocks" => self.rir_blocks = parse_num(value, at, "integer")?,
            "res_blocks" => self.res_blocks = parse_num(value, at, "integer")?,
            "windows" => {
                self.windows = value
                    .split(',')
                    .map(|v| parse_num(v.trim(), at, "window size"))
                    .collect::<Result<_>>()?;
            }
            "ecp" => self.ecp = parse_bool(value, at)?,
            "ife" => self.ife = parse_bool(value, at)?,
            "lambda" => self.lambda = parse_num(value, at, "number")?,
            "omega" => self.omega = parse_num(value, at, "number")?,
            "lr" => self.lr = parse_num(value, at, "number")?,
            "beta1" => self.beta1 = parse_num(value, at, "number")?,
            "beta2" => self.beta2 = parse_num(value, at, "number")?,
            "eps" => self.eps = parse_num(value, at, "number")?,
            "iters" => self.iters = parse_num(value, at, "integer")?,
            "batch" => self.batch = parse_num(value, at, "integer")?,
            "patch" => self.patch = parse_num(value, at, "integer")?,
            "seed" => self.seed = parse_num(value, at, "integer")?,
            "augment" => self.augment = parse_bool(value, at)?,
            "noise_sigma" => self.noise_sigma = parse_num(value, at, "number")?,
            "data_dir" => self.data_dir = value.to_string(),
            "synth_count" => self.synth_count = parse_num(value, at, "integer")?,
            "synth_size" => self.synth_size = parse_num(value, at, "integer")?,
            "synth_max_support" => self.synth_max_support = parse_num(value, at, "integer")?,
            "synth_delta" => self.synth_delta = parse_bool(value, at)?,
            "log_every" => self.log_every = parse_num(value, at, "integer")?,
            "eval_every" => self.eval_every = parse_num(value, at, "integer")?,
            "checkpoint_every" => self.checkpoint_every = parse_num(value, at, "integer")?,
            "early_stop_psnr" => {
                self.early_stop_psnr = if value == "none" {
                    None
                } else {
                    Some(parse_num(value, at, "number")?)
                };
            }
            _ => return Err(Error::config(format!("{at}: unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a flat `key = value` file on top of the current values.
    /// `[section]` headers are allowed as visual grouping and ignored;
    /// `#` starts a comment; keys may not repeat.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let at = format!("line {}", idx + 1);
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(Error::config(format!("{at}: unterminated section header")));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("{at}: expected key = value")))?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("{at}: duplicate key {key:?}")));
            }
            self.apply(key, value, &at)?;
        }
        Ok(())
    }

    /// Defaults overridden by a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_file_text(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            scales: self.scales,
            base_channels: self.base_channels,
            rir_blocks: self.rir_blocks,
            res_blocks: self.res_blocks,
            windows: self.windows.clone(),
            ecp: self.ecp,
            ife: self.ife,
        }
    }

    pub fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network_config().validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.lambda < 0.0 || self.omega < 0.0 {
            return Err(Error::config("lambda and omega must be non-negative".to_string()));
        }
        if self.batch == 0 {
            return Err(Error::config("batch size must be positive".to_string()));
        }
        let multiple = self.network_config().spatial_multiple();
        if self.patch % multiple != 0 || self.patch == 0 {
            return Err(Error::config(format!(
                "patch {} must be a positive multiple of {multiple} for {} scales",
                self.patch, self.scales
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("noise sigma must be non-negative".to_string()));
        }
        Ok(())
    }

    /// Canonical JSON echo embedded in artifacts.
    pub fn echo_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("config serializes")
    }

    pub fn from_echo_json(bytes: &[u8]) -> Result<RunConfig> {
        serde_json::from_slice(bytes)
            .map_err(|e| Error::checkpoint(format!("embedded config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_full_scale_recipe() {
        let c = RunConfig::default();
        assert_eq!(c.scales, 3);
        assert_eq!(c.base_channels, 64);
        assert_eq!(c.rir_blocks, 16);
        assert_eq!(c.res_blocks, 4);
        assert_eq!(c.windows, vec![31, 19, 11]);
        assert_eq!(c.lambda, 0.1);
        assert_eq!(c.omega, 0.1);
        assert_eq!(c.lr, 1e-4);
        assert_eq!(c.beta1, 0.9);
        assert_eq!(c.beta2, 0.999);
        assert_eq!(c.eps, 1e-8);
        assert_eq!(c.iters, 600_000);
        assert_eq!(c.batch, 10);
        assert_eq!(c.patch, 256);
        assert_eq!(c.noise_sigma, 0.01);
        assert!(c.ecp && c.ife && c.augment);
        c.validate().unwrap();
    }

    #[test]
    fn file_text_with_sections_and_comments_parses() {
        let mut c = RunConfig::default();
        c.apply_file_text(
            "# tiny run\n\
             [network]\n\
             scales = 2\n\
             base_channels = 16  # narrow\n\
             windows = 7, 5\n\
             ecp = off\n\
             [train]\n\
             lr = 2e-4\n\
             iters = 100\n\
             early_stop_psnr = 30\n",
        )
        .unwrap();
        assert_eq!(c.scales, 2);
        assert_eq!(c.base_channels, 16);
        assert_eq!(c.windows, vec![7, 5]);
        assert!(!c.ecp);
        assert_eq!(c.lr, 2e-4);
        assert_eq!(c.iters, 100);
        assert_eq!(c.early_stop_psnr, Some(30.0));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut c = RunConfig::default();
        let err = c.apply_file_text("scales = 2\nbogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = c.apply_file_text("lr = fast\n").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
        let err = c.apply_file_text("seed = 1\nseed = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let err = c.apply_file_text("just words\n").unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::default();
        c.apply_file_text("lr = 2e-4\n").unwrap();
        c.apply("lr", "5e-5", "flag --lr").unwrap();
        assert_eq!(c.lr, 5e-5);
        let err = c.apply("lr", "x", "flag --lr").unwrap_err();
        assert!(err.to_string().contains("flag --lr"), "{err}");
    }

    #[test]
    fn echo_roundtrips_losslessly() {
        let mut c = RunConfig::default();
        c.apply_file_text("scales = 2\nwindows = 7,5\nseed = 9\nearly_stop_psnr = 31.5\n")
            .unwrap();
        let back = RunConfig::from_echo_json(&c.echo_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn validation_rejects_inconsistent_configs() {
        let mut c = RunConfig::default();
        c.apply("windows", "7,5", "test").unwrap();
        assert!(c.validate().is_err()); // 2 windows for 3 scales
        let mut c = RunConfig::default();
        c.apply("patch", "66", "test").unwrap();
        assert!(c.validate().is_err()); // not a multiple of 4
        let mut c = RunConfig::default();
        c.apply("lr", "0", "test").unwrap();
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.apply("lambda", "-1", "test").unwrap();
        assert!(c.validate().is_err());
    }
}
