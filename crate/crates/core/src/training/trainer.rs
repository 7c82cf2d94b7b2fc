use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{LossKind, TrainConfig};
use super::data::{sample_batch, Batch, PairDataset};
use super::optim::AdamW;
use crate::codecs::Frame;
use crate::error::{Error, Result};
use crate::metrics::{ms_ssim_plane_with_grad, psnr};
use crate::neural::Tensor;
use crate::restoration::{
    restore_frame, step1_backward, step1_forward_train, step2_backward, step2_forward_train, Gradients,
    ReferenceCache, RestoreMode, StepWeights,
};

/// Weights are snapshotted this often so divergence can roll back.
const SNAPSHOT_EVERY: usize = 10;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
}

/// A run that stopped on a non-finite loss. `last_good` holds the weights
/// from the most recent snapshot before the failure.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Box<Checkpoint>,
    pub log: Vec<LogRow>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (rolled back to the last good weights)", self.error)
    }
}

impl std::error::Error for TrainFailure {}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// Which reference step-2 evaluation uses for each clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefChoice {
    /// The clip's own first frame.
    Own,
    /// The first frame of another clip, `shift` positions further on.
    Other { shift: usize },
}

/// Mean per-frame PSNR of compressed and restored frames over a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub compressed: f64,
    pub restored: f64,
    pub frames: usize,
}

/// Restores frames `1..` of every clip (frame 0 is the reference itself)
/// and averages PSNR against the originals.
pub fn evaluate(weights: &StepWeights, data: &PairDataset, mode: RestoreMode, refs: RefChoice) -> Result<EvalSummary> {
    let mut compressed = 0.0;
    let mut restored = 0.0;
    let mut frames = 0usize;
    let n = data.clips.len();
    for (i, clip) in data.clips.iter().enumerate() {
        let cache = match mode {
            RestoreMode::Step1 => None,
            RestoreMode::Step2 => {
                let reference: &Frame = match refs {
                    RefChoice::Own => &clip.reference,
                    RefChoice::Other { shift } => &data.clips[(i + shift) % n].reference,
                };
                Some(ReferenceCache::build(weights, &[(0, reference.clone())])?)
            }
        };
        for t in 1..clip.len() {
            let out = restore_frame(&clip.compressed[t], t, cache.as_ref(), weights, mode)?;
            compressed += psnr(&clip.compressed[t], &clip.original[t])?;
            restored += psnr(&out, &clip.original[t])?;
            frames += 1;
        }
    }
    if frames == 0 {
        return Err(Error::validation("evaluation set has no frames after the references"));
    }
    Ok(EvalSummary {
        compressed: compressed / frames as f64,
        restored: restored / frames as f64,
        frames,
    })
}

/// Loss value and its gradient with respect to `out`.
fn loss_and_grad(out: &Tensor<f32>, target: &Tensor<f32>, kind: LossKind) -> Result<(f64, Tensor<f32>)> {
    match kind {
        LossKind::L2 => {
            let n = out.len() as f64;
            let diff = out.zip_map(target, |a, b| a - b)?;
            let loss = diff.data().iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / n;
            let scale = (2.0 / n) as f32;
            Ok((loss, diff.map(|d| d * scale)))
        }
        LossKind::L2ThenMsSsim => {
            let [b, c, h, w] = out.shape();
            let planes = (b * c) as f64;
            let mut grad = Tensor::zeros(out.shape());
            let mut total = 0.0;
            for i in 0..b {
                for ch in 0..c {
                    let x: Vec<f64> = out.plane(i, ch).iter().map(|&v| v as f64).collect();
                    let y: Vec<f64> = target.plane(i, ch).iter().map(|&v| v as f64).collect();
                    let (s, g) = ms_ssim_plane_with_grad(&x, &y, w, h)?;
                    total += s;
                    for (d, gv) in grad.plane_mut(i, ch).iter_mut().zip(g) {
                        *d = (-gv / planes) as f32;
                    }
                }
            }
            Ok((1.0 - total / planes, grad))
        }
    }
}

fn grads_finite(g: &Gradients) -> bool {
    g.values().all(Tensor::is_finite)
}

struct LoopSpec<'a> {
    iterations: usize,
    loss: LossKind,
    seed_tag: u64,
    val: Option<&'a PairDataset>,
    val_mode: RestoreMode,
}

/// Shared optimization loop. `step` runs forward and backward on one batch
/// and returns the loss.
fn run_loop(
    data: &PairDataset,
    cfg: &TrainConfig,
    weights: &mut StepWeights,
    spec: LoopSpec<'_>,
    log: &mut Vec<LogRow>,
    mut step: impl FnMut(&StepWeights, &Batch, LossKind, &mut Gradients) -> Result<f64>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ spec.seed_tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut opt = AdamW::new(cfg);
    let mut last_good = weights.clone();
    let start = log.last().map_or(0, |r| r.iteration);
    for it in 1..=spec.iterations {
        let batch = sample_batch(data, &mut rng, cfg.batch_size, cfg.patch_size, cfg.augment, cfg.mismatch_prob);
        let mut grads = Gradients::new();
        let loss = step(weights, &batch, spec.loss, &mut grads)?;
        if !loss.is_finite() || !grads_finite(&grads) {
            *weights = last_good;
            return Err(Error::Training(format!("non-finite loss at iteration {}", start + it)));
        }
        opt.update(weights, &grads)?;
        if !weights.is_finite() {
            *weights = last_good;
            return Err(Error::Training(format!("weights diverged at iteration {}", start + it)));
        }
        if it % SNAPSHOT_EVERY == 0 {
            last_good = weights.clone();
        }
        let validate = spec.val.is_some()
            && (it == spec.iterations || (cfg.val_every > 0 && it % cfg.val_every == 0));
        let val_psnr = match (validate, spec.val) {
            (true, Some(v)) => Some(evaluate(weights, v, spec.val_mode, RefChoice::Own)?.restored),
            _ => None,
        };
        if val_psnr.is_some() || it % 50 == 0 || it == 1 {
            log::info!("iter {} loss {loss:.6e} val_psnr {val_psnr:?}", start + it);
        }
        log.push(LogRow {
            iteration: start + it,
            loss,
            val_psnr,
        });
    }
    Ok(())
}

fn check_inputs(data: &PairDataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.clips.is_empty() {
        return Err(Error::validation("training dataset is empty"));
    }
    cfg.check_frames(data.min_side())
}

fn fail(error: Error, weights: StepWeights, cfg: &TrainConfig, frozen: Option<String>, log: Vec<LogRow>) -> TrainFailure {
    TrainFailure {
        error,
        last_good: Box::new(Checkpoint {
            weights,
            train: Some(cfg.clone()),
            step1_frozen_hash: frozen,
        }),
        log,
    }
}

fn step1_step(w: &StepWeights, b: &Batch, kind: LossKind, grads: &mut Gradients) -> Result<f64> {
    let (out, trace) = step1_forward_train(&b.compressed, w)?;
    let (loss, g) = loss_and_grad(&out, &b.original, kind)?;
    step1_backward(w, &trace, g, grads)?;
    Ok(loss)
}

/// Step 1: trains encoder and decoder on single compressed frames.
pub fn train_step1(
    data: &PairDataset,
    cfg: &TrainConfig,
    init: StepWeights,
    val: Option<&PairDataset>,
) -> Result<TrainRun, TrainFailure> {
    let mut weights = init;
    let mut log = Vec::new();
    if let Err(e) = check_inputs(data, cfg) {
        return Err(fail(e, weights, cfg, None, log));
    }
    let mut phases = vec![(cfg.iterations_step1, LossKind::L2)];
    if cfg.loss == LossKind::L2ThenMsSsim {
        phases.push((cfg.ms_ssim_iterations, LossKind::L2ThenMsSsim));
    }
    for (tag, (iterations, loss)) in phases.into_iter().enumerate() {
        let spec = LoopSpec {
            iterations,
            loss,
            seed_tag: 1 + tag as u64,
            val,
            val_mode: RestoreMode::Step1,
        };
        if let Err(e) = run_loop(data, cfg, &mut weights, spec, &mut log, step1_step) {
            return Err(fail(e, weights, cfg, None, log));
        }
    }
    Ok(TrainRun {
        checkpoint: Checkpoint {
            weights,
            train: Some(cfg.clone()),
            step1_frozen_hash: None,
        },
        log,
    })
}

fn step2_step(w: &StepWeights, b: &Batch, kind: LossKind, grads: &mut Gradients) -> Result<f64> {
    let (out, trace) = step2_forward_train(&b.compressed, &b.reference, w, false)?;
    let (loss, g) = loss_and_grad(&out, &b.original, kind)?;
    step2_backward(w, &trace, g, grads)?;
    Ok(loss)
}

/// Step 2: trains the reference branch with every step-1 tensor frozen.
/// The returned checkpoint records the step-1 digest, which is checked
/// again after the last update.
pub fn train_step2(
    data: &PairDataset,
    cfg: &TrainConfig,
    start: Checkpoint,
    val: Option<&PairDataset>,
) -> Result<TrainRun, TrainFailure> {
    let mut weights = start.weights;
    let frozen = weights.step1_digest();
    let mut log = Vec::new();
    if let Err(e) = check_inputs(data, cfg) {
        return Err(fail(e, weights, cfg, Some(frozen), log));
    }
    let spec = LoopSpec {
        iterations: cfg.iterations_step2,
        loss: LossKind::L2,
        seed_tag: 11,
        val,
        val_mode: RestoreMode::Step2,
    };
    if let Err(e) = run_loop(data, cfg, &mut weights, spec, &mut log, step2_step) {
        return Err(fail(e, weights, cfg, Some(frozen), log));
    }
    if weights.step1_digest() != frozen {
        let e = Error::Training("step-1 tensors changed during step-2 training".into());
        return Err(fail(e, weights, cfg, Some(frozen), log));
    }
    Ok(TrainRun {
        checkpoint: Checkpoint {
            weights,
            train: Some(cfg.clone()),
            step1_frozen_hash: Some(frozen),
        },
        log,
    })
}

fn joint_step(w: &StepWeights, b: &Batch, kind: LossKind, grads: &mut Gradients) -> Result<f64> {
    let general = step1_step(w, b, kind, grads)?;
    let (out, trace) = step2_forward_train(&b.compressed, &b.reference, w, true)?;
    let (reference, g) = loss_and_grad(&out, &b.original, kind)?;
    step2_backward(w, &trace, g, grads)?;
    Ok(general + reference)
}

/// One-step ablation: every tensor trained together on the sum of the
/// step-1 and step-2 losses, for the combined iteration budget.
pub fn train_end_to_end(
    data: &PairDataset,
    cfg: &TrainConfig,
    init: StepWeights,
    val: Option<&PairDataset>,
) -> Result<TrainRun, TrainFailure> {
    let mut weights = init;
    let mut log = Vec::new();
    if let Err(e) = check_inputs(data, cfg) {
        return Err(fail(e, weights, cfg, None, log));
    }
    let spec = LoopSpec {
        iterations: cfg.iterations_step1 + cfg.iterations_step2,
        loss: LossKind::L2,
        seed_tag: 21,
        val,
        val_mode: RestoreMode::Step2,
    };
    if let Err(e) = run_loop(data, cfg, &mut weights, spec, &mut log, joint_step) {
        return Err(fail(e, weights, cfg, None, log));
    }
    Ok(TrainRun {
        checkpoint: Checkpoint {
            weights,
            train: Some(cfg.clone()),
            step1_frozen_hash: None,
        },
        log,
    })
}

/// Writes the log as CSV with columns `iteration,loss,val_psnr`.
pub fn write_log_csv(log: &[LogRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    for row in log {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    w.flush()?;
    Ok(())
}

/// Mean loss over consecutive windows of `window` iterations.
pub fn windowed_mean(log: &[LogRow], window: usize) -> Vec<f64> {
    log.chunks(window.max(1))
        .map(|c| c.iter().map(|r| r.loss).sum::<f64>() / c.len() as f64)
        .collect()
}
