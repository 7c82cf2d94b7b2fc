use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MS_SSIM_MIN_SIDE;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    L2,
    /// L2 training followed by `ms_ssim_iterations` of `1 − MS-SSIM` fine-tuning.
    L2ThenMsSsim,
}

/// Optimization settings shared by both training steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub iterations_step1: usize,
    pub iterations_step2: usize,
    pub augment: bool,
    pub loss: LossKind,
    pub ms_ssim_iterations: usize,
    pub seed: u64,
    /// Fraction of step-2 samples whose reference is taken from another clip.
    pub mismatch_prob: f64,
    /// Validation interval in iterations; 0 validates only at the end.
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            patch_size: 256,
            batch_size: 4,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            iterations_step1: 100_000,
            iterations_step2: 100_000,
            augment: true,
            loss: LossKind::L2,
            ms_ssim_iterations: 0,
            seed: 0,
            mismatch_prob: 0.0,
            val_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small patches and short schedules for single-core CPU training.
    pub fn desk() -> Self {
        TrainConfig {
            patch_size: 48,
            lr: 1e-3,
            iterations_step1: 800,
            iterations_step2: 1500,
            mismatch_prob: 0.25,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::default()),
            other => Err(Error::validation(format!("unknown training preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size < 8 || self.batch_size == 0 {
            return Err(Error::validation("patch_size must be at least 8 and batch_size at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation("learning rate must be positive"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::validation("betas must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.mismatch_prob) {
            return Err(Error::validation("mismatch_prob must lie in [0, 1]"));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::validation("weight_decay must be non-negative and eps positive"));
        }
        if self.loss == LossKind::L2ThenMsSsim && self.patch_size < MS_SSIM_MIN_SIDE {
            return Err(Error::validation(format!(
                "MS-SSIM fine-tuning needs patches of at least {MS_SSIM_MIN_SIDE} pixels"
            )));
        }
        Ok(())
    }

    /// Patch size must fit inside every training frame.
    pub fn check_frames(&self, min_side: usize) -> Result<()> {
        if self.patch_size > min_side {
            return Err(Error::validation(format!(
                "patch_size {} exceeds the smallest training frame side {min_side}",
                self.patch_size
            )));
        }
        Ok(())
    }

    /// Reads a TOML or JSON file, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: TrainConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            _ => toml::from_str(&text).map_err(|e| Error::format(format!("toml: {e}")))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
