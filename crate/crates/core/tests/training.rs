use hybridvc::codecs::CodecConfig;
use hybridvc::restoration::{NetworkSpec, StepWeights};
use hybridvc::training::data::synthetic_clip;
use hybridvc::training::trainer::windowed_mean;
use hybridvc::training::{build_pairs, synthetic_clips, train_end_to_end, train_step1, train_step2, PairDataset, TrainConfig};
use hybridvc::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_cfg(iterations: usize) -> TrainConfig {
    TrainConfig {
        patch_size: 16,
        batch_size: 2,
        iterations_step1: iterations,
        iterations_step2: iterations,
        ..TrainConfig::desk()
    }
}

fn dataset(seed: u64, clips: usize, side: usize) -> PairDataset {
    let videos = synthetic_clips(&mut ChaCha8Rng::seed_from_u64(seed), clips, side, side).unwrap();
    build_pairs(&videos, &CodecConfig::mock_lossy(30)).unwrap()
}

#[test]
fn step1_overfits_a_fixed_batch() {
    // one static clip the size of the patch: every draw is the same batch
    let video = synthetic_clip(&mut ChaCha8Rng::seed_from_u64(3), 16, 16, 7, 0).unwrap();
    let data = build_pairs(&[video], &CodecConfig::mock_lossy(20)).unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        augment: false,
        mismatch_prob: 0.0,
        ..small_cfg(200)
    };
    let init = StepWeights::init(&NetworkSpec::desk(), 1).unwrap();
    let run = train_step1(&data, &cfg, init, None).unwrap();
    assert_eq!(run.log.len(), 200);
    let initial = run.log[0].loss;
    let tail = windowed_mean(&run.log, 20);
    let last = *tail.last().unwrap();
    assert!(last < 0.5 * initial, "loss {initial} -> {last}");
    assert!(tail[0] > last);
}

#[test]
fn same_seed_same_weights() {
    let data = dataset(1, 3, 24);
    let cfg = small_cfg(6);
    let go = || {
        let init = StepWeights::init(&NetworkSpec::desk(), cfg.seed).unwrap();
        let s1 = train_step1(&data, &cfg, init, None).unwrap().checkpoint;
        train_step2(&data, &cfg, s1, None).unwrap().checkpoint
    };
    let (a, b) = (go(), go());
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());

    let other = TrainConfig { seed: 1, ..cfg.clone() };
    let init = StepWeights::init(&NetworkSpec::desk(), 0).unwrap();
    let c = train_step1(&data, &other, init, None).unwrap().checkpoint;
    let init = StepWeights::init(&NetworkSpec::desk(), 0).unwrap();
    let d = train_step1(&data, &cfg, init, None).unwrap().checkpoint;
    assert_ne!(c.weights, d.weights);
}

#[test]
fn step2_leaves_step1_tensors_alone() {
    let data = dataset(2, 3, 24);
    let cfg = small_cfg(12);
    let init = StepWeights::init(&NetworkSpec::desk(), 4).unwrap();
    let s1 = train_step1(&data, &cfg, init, None).unwrap().checkpoint;
    let before = s1.weights.clone();
    let s2 = train_step2(&data, &cfg, s1, None).unwrap().checkpoint;
    assert_eq!(s2.step1_frozen_hash.as_deref(), Some(before.step1_digest().as_str()));
    assert_eq!(s2.weights.step1_digest(), before.step1_digest());
    let mut moved = 0;
    for name in before.names() {
        let same = before.param(name) == s2.weights.param(name);
        if name.starts_with("step1.") {
            assert!(same, "{name} changed");
        } else if !same {
            moved += 1;
        }
    }
    assert!(moved > 0, "no step-2 tensor was updated");
}

#[test]
fn end_to_end_updates_both_steps() {
    let data = dataset(5, 2, 24);
    let cfg = small_cfg(3);
    let init = StepWeights::init(&NetworkSpec::desk(), 2).unwrap();
    let run = train_end_to_end(&data, &cfg, init.clone(), Some(&data)).unwrap();
    assert_eq!(run.log.len(), 6);
    assert!(run.log.last().unwrap().val_psnr.is_some());
    assert_ne!(run.checkpoint.weights.step1_digest(), init.step1_digest());
    assert_ne!(run.checkpoint.weights.digest("step2."), init.digest("step2."));
}

#[test]
fn divergence_rolls_back_to_the_last_snapshot() {
    let data = dataset(3, 2, 24);
    let cfg = TrainConfig { lr: 1e30, ..small_cfg(50) };
    let init = StepWeights::init(&NetworkSpec::desk(), 0).unwrap();
    let failure = train_step1(&data, &cfg, init.clone(), None).unwrap_err();
    assert!(matches!(failure.error, Error::Training(_)), "{failure}");
    assert!(failure.last_good.weights.is_finite());
    // nothing survives past the first snapshot at this learning rate
    assert!(failure.log.len() < 10);
    assert_eq!(failure.last_good.weights, init);
}

#[test]
fn oversized_patches_are_rejected_before_training() {
    let data = dataset(4, 1, 24);
    let cfg = TrainConfig { patch_size: 32, ..small_cfg(1) };
    let init = StepWeights::init(&NetworkSpec::desk(), 0).unwrap();
    let failure = train_step1(&data, &cfg, init, None).unwrap_err();
    assert!(matches!(failure.error, Error::Validation(_)));
    assert!(failure.log.is_empty());
}
