//! The two-step restoration network.
//!
//! Step 1 maps a compressed frame `c_t` through an encoder to general
//! features `f_g` and decodes them into a residual added back onto `c_t`.
//! Step 2 encodes a losslessly transmitted reference frame into `f_r`,
//! predicts deformable offsets and a modulation mask from both feature
//! maps, aligns reference content with one modulated deformable layer that
//! also emits a confidence map `C`, refines the aligned features and fuses
//! them as `f_g + C·f_refine` before the shared step-1 decoder.

mod layers;
pub mod network;
mod spec;
mod weights;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use network::{
    align_and_gate, decode_features, encode_reference, enhance_with_reference, extract_general_features, fuse,
    predict_offsets, refine, step1_backward, step1_forward_train, step2_backward, step2_forward_train, Step1Trace,
    Step2Trace,
};
pub use spec::{DeformSource, NetworkSpec};
pub use weights::{Gradients, StepWeights, CONFIDENCE_OFF_BIAS, STEP1_PREFIX, STEP2_PREFIX};

use crate::codecs::Frame;
use crate::error::{Error, Result};
use crate::neural::{Scalar, Tensor};

/// Sampling offsets, N×2K×H×W (`dy`, `dx` per tap).
#[derive(Clone, Debug, PartialEq)]
pub struct OffsetField<T: Scalar = f32>(pub Tensor<T>);

/// Per-tap modulation in `[0, 1]`, N×K×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulationMask<T: Scalar = f32>(pub Tensor<T>);

/// Per-pixel confidence in `[0, 1]`, N×1×H×W.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap<T: Scalar = f32>(pub Tensor<T>);

impl<T: Scalar> ConfidenceMap<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestoreMode {
    /// General enhancement only.
    #[default]
    Step1,
    /// Reference-guided enhancement.
    Step2,
}

/// Reference features, computed once per reference frame.
#[derive(Clone, Debug, Default)]
pub struct ReferenceCache {
    features: BTreeMap<usize, Tensor<f32>>,
    encoder_passes: usize,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn build(w: &StepWeights, references: &[(usize, Frame)]) -> Result<Self> {
        let mut cache = Self::new();
        for (index, frame) in references {
            cache.insert(w, *index, frame)?;
        }
        Ok(cache)
    }

    /// Encodes `frame` as the reference for frames from `index` on.
    pub fn insert(&mut self, w: &StepWeights, index: usize, frame: &Frame) -> Result<()> {
        let f_r = encode_reference(&frame.to_rgb().to_tensor(), w)?;
        self.encoder_passes += 1;
        self.features.insert(index, f_r);
        Ok(())
    }

    /// Features of the latest reference at or before frame `t`.
    pub fn lookup(&self, t: usize) -> Result<&Tensor<f32>> {
        self.features
            .range(..=t)
            .next_back()
            .map(|(_, f)| f)
            .ok_or_else(|| Error::State(format!("no cached reference applies to frame {t}")))
    }

    /// Number of reference-encoder passes performed so far.
    pub fn encoder_passes(&self) -> usize {
        self.encoder_passes
    }

    pub fn indices(&self) -> Vec<usize> {
        self.features.keys().copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Step-1 restoration of one compressed frame, clamped to `[0, 1]`.
pub fn general_enhance(c_t: &Frame, w: &StepWeights) -> Result<Frame> {
    let c = c_t.to_rgb().to_tensor();
    let f_g = extract_general_features(&c, w)?;
    Frame::from_tensor(&decode_features(&f_g, &c, w)?, c_t.bit_depth())
}

/// Extra knobs for [`restore_frame_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RestoreOptions {
    /// Replace the predicted confidence map by a constant.
    pub confidence_override: Option<f32>,
}

/// Restores frame `t` from its compressed version. Step 2 needs a cached
/// reference at or before `t`.
pub fn restore_frame(
    c_t: &Frame,
    t: usize,
    cache: Option<&ReferenceCache>,
    w: &StepWeights,
    mode: RestoreMode,
) -> Result<Frame> {
    restore_frame_with(c_t, t, cache, w, mode, RestoreOptions::default())
}

pub fn restore_frame_with(
    c_t: &Frame,
    t: usize,
    cache: Option<&ReferenceCache>,
    w: &StepWeights,
    mode: RestoreMode,
    opts: RestoreOptions,
) -> Result<Frame> {
    match mode {
        RestoreMode::Step1 => general_enhance(c_t, w),
        RestoreMode::Step2 => {
            let cache = cache.ok_or_else(|| Error::State("step-2 restoration needs a reference cache".into()))?;
            let f_r = cache.lookup(t)?;
            let c = c_t.to_rgb().to_tensor();
            let f_g = extract_general_features(&c, w)?;
            if f_r.shape() != f_g.shape() {
                return Err(Error::validation(format!(
                    "reference features {:?} do not match frame features {:?}",
                    f_r.shape(),
                    f_g.shape()
                )));
            }
            let out = enhance_with_reference(&c, &f_g, f_r, w, opts.confidence_override)?;
            Frame::from_tensor(&out, c_t.bit_depth())
        }
    }
}

/// Confidence map the network predicts for frame `c_t` against a reference.
pub fn confidence_map(c_t: &Frame, reference: &Frame, w: &StepWeights) -> Result<ConfidenceMap> {
    let f_g = extract_general_features(&c_t.to_rgb().to_tensor(), w)?;
    let f_r = encode_reference(&reference.to_rgb().to_tensor(), w)?;
    let (o, m) = predict_offsets(&f_g, &f_r, w)?;
    let source = match w.spec().deform_source {
        DeformSource::RefFeatures => &f_r,
        DeformSource::GeneralFeatures => &f_g,
    };
    Ok(align_and_gate(source, &o, &m, w)?.1)
}

/// Parameter counts reported for a spec.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total: usize,
    pub step1: usize,
    pub step2: usize,
}

impl ParamReport {
    pub fn of(spec: &NetworkSpec) -> Self {
        let total = spec.param_count();
        let step1 = spec.step1_param_count();
        ParamReport {
            total,
            step1,
            step2: total - step1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn frame(w: usize, h: usize, phase: f32) -> Frame {
        let data = (0..3 * w * h)
            .map(|i| 0.5 + 0.4 * ((i as f32 * 0.37 + phase).sin()))
            .collect();
        Frame::new(w, h, data, crate::codecs::ColorSpace::Rgb, 8).unwrap()
    }

    fn tiny_spec() -> NetworkSpec {
        NetworkSpec {
            channels: 4,
            n_blocks_encoder: 1,
            n_blocks_decoder: 1,
            n_blocks_ref_encoder: 1,
            n_offset_layers: 2,
            n_blocks_refine: 1,
            kernel: 3,
            deform_source: DeformSource::RefFeatures,
        }
    }

    /// Weights with every tensor perturbed, so zero-initialized layers are live.
    fn live_weights(spec: &NetworkSpec) -> StepWeights {
        let mut w = StepWeights::init(spec, 5).unwrap();
        let names: Vec<String> = w.names().map(String::from).collect();
        for (j, n) in names.iter().enumerate() {
            for (i, v) in w.get_mut(n).unwrap().iter_mut().enumerate() {
                *v += 0.05 * ((i * 7 + j * 3) as f32 * 0.91).sin();
            }
        }
        w
    }

    #[test]
    fn resolution_is_preserved() {
        let w = live_weights(&tiny_spec());
        for (wd, ht) in [(8, 8), (13, 9), (21, 10)] {
            let c = frame(wd, ht, 0.0);
            let f_g = extract_general_features(&c.to_tensor(), &w).unwrap();
            assert_eq!(f_g.shape(), [1, 4, ht, wd]);
            let out = general_enhance(&c, &w).unwrap();
            assert_eq!((out.width(), out.height()), (wd, ht));
            assert!(out.is_finite());
        }
    }

    #[test]
    fn zero_weights_give_zero_features() {
        let w = StepWeights::zeros(&tiny_spec()).unwrap();
        let f_g = extract_general_features(&frame(8, 8, 1.0).to_tensor(), &w).unwrap();
        assert!(f_g.data().iter().all(|&v| v == 0.0));
        let (o, m) = predict_offsets(&f_g, &f_g, &w).unwrap();
        assert!(o.0.data().iter().all(|&v| v == 0.0));
        assert!(m.0.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let w = StepWeights::zeros(&tiny_spec()).unwrap();
        let mut t = frame(8, 8, 0.0).to_tensor();
        t.data_mut()[3] = f32::NAN;
        assert!(matches!(extract_general_features(&t, &w), Err(Error::Validation(_))));
    }

    #[test]
    fn fuse_matches_elementwise_loop() {
        let f_g = Tensor::from_fn([2, 3, 4, 5], |[n, c, y, x]| (n * 60 + c * 20 + y * 5 + x) as f32 * 0.01);
        let f_r = Tensor::from_fn([2, 3, 4, 5], |[n, c, y, x]| ((n + c + y * x) as f32).cos());
        let conf = ConfidenceMap(Tensor::from_fn([2, 1, 4, 5], |[n, _, y, x]| ((n + y + x) % 4) as f32 / 3.0));
        let out = fuse(&f_g, &conf, &f_r).unwrap();
        for n in 0..2 {
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..5 {
                        let expect = f_g.get([n, c, y, x]) + conf.0.get([n, 0, y, x]) * f_r.get([n, c, y, x]);
                        assert_eq!(out.get([n, c, y, x]), expect);
                    }
                }
            }
        }
        let zero = ConfidenceMap(Tensor::zeros([2, 1, 4, 5]));
        assert_eq!(fuse(&f_g, &zero, &f_r).unwrap(), f_g);
        let bad = ConfidenceMap(Tensor::zeros([2, 1, 4, 4]));
        assert!(fuse(&f_g, &bad, &f_r).is_err());
    }

    #[test]
    fn zeroed_confidence_reproduces_step1() {
        let mut w = live_weights(&tiny_spec());
        let c = frame(12, 10, 0.3);
        let r = frame(12, 10, 1.7);
        let cache = ReferenceCache::build(&w, &[(0, r.clone())]).unwrap();
        let s1 = restore_frame(&c, 4, None, &w, RestoreMode::Step1).unwrap();
        let s2 = restore_frame(&c, 4, Some(&cache), &w, RestoreMode::Step2).unwrap();
        assert_ne!(s1, s2);
        let forced = restore_frame_with(
            &c,
            4,
            Some(&cache),
            &w,
            RestoreMode::Step2,
            RestoreOptions {
                confidence_override: Some(0.0),
            },
        )
        .unwrap();
        assert_eq!(forced, s1);
        w.zero_confidence_head();
        let cache = ReferenceCache::build(&w, &[(0, r)]).unwrap();
        assert_eq!(restore_frame(&c, 4, Some(&cache), &w, RestoreMode::Step2).unwrap(), s1);
    }

    #[test]
    fn reference_cache_lookup() {
        let w = live_weights(&tiny_spec());
        let cache = ReferenceCache::build(&w, &[(0, frame(8, 8, 0.0)), (70, frame(8, 8, 2.0))]).unwrap();
        assert_eq!(cache.encoder_passes(), 2);
        assert!(std::ptr::eq(cache.lookup(69).unwrap(), cache.lookup(0).unwrap()));
        assert!(std::ptr::eq(cache.lookup(70).unwrap(), cache.lookup(149).unwrap()));
        let late = ReferenceCache::build(&w, &[(5, frame(8, 8, 0.0))]).unwrap();
        assert!(matches!(late.lookup(4), Err(Error::State(_))));
        let c = frame(8, 8, 1.0);
        assert!(matches!(restore_frame(&c, 0, None, &w, RestoreMode::Step2), Err(Error::State(_))));
    }

    #[test]
    fn masks_and_confidence_are_bounded() {
        let w = live_weights(&tiny_spec());
        let c = frame(9, 11, 0.1);
        let r = frame(9, 11, 0.9);
        let f_g = extract_general_features(&c.to_tensor(), &w).unwrap();
        let f_r = encode_reference(&r.to_tensor(), &w).unwrap();
        let (_, m) = predict_offsets(&f_g, &f_r, &w).unwrap();
        assert!(m.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let conf = confidence_map(&c, &r, &w).unwrap();
        assert!(conf.0.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(predict_offsets(&f_g, &Tensor::zeros([1, 4, 9, 10]), &w).is_err());
    }

    #[test]
    fn literal_deform_source_runs() {
        let spec = NetworkSpec {
            deform_source: DeformSource::GeneralFeatures,
            ..tiny_spec()
        };
        let w = live_weights(&spec);
        let cache = ReferenceCache::build(&w, &[(0, frame(8, 8, 0.4))]).unwrap();
        let out = restore_frame(&frame(8, 8, 0.0), 2, Some(&cache), &w, RestoreMode::Step2).unwrap();
        assert!(out.is_finite());
    }

    #[test]
    fn param_report_is_consistent() {
        let r = ParamReport::of(&NetworkSpec::desk());
        assert_eq!(r.total, r.step1 + r.step2);
        assert_eq!(r.total, StepWeights::<f32>::init(&NetworkSpec::desk(), 0).unwrap().param_count());
    }
}
