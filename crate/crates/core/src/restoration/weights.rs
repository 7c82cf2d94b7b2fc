use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::neural::{Scalar, Tensor};

pub const STEP1_PREFIX: &str = "step1.";
pub const STEP2_PREFIX: &str = "step2.";

/// Bias that drives the confidence sigmoid to exactly zero in f32.
pub const CONFIDENCE_OFF_BIAS: f32 = -200.0;

/// Scale applied to the second convolution of every residual block at init.
const RESIDUAL_INIT_SCALE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    Kaiming(f64),
    Zero,
}

#[derive(Clone, Debug)]
pub(crate) struct ParamDesc {
    pub name: String,
    pub shape: [usize; 4],
    pub init: Init,
}

/// Names of the layers making up each sub-network.
pub(crate) mod names {
    pub const ENCODER: &str = "step1.encoder";
    pub const DECODER: &str = "step1.decoder";
    pub const REF_ENCODER: &str = "step2.ref_encoder";
    pub const OFFSET: &str = "step2.offset";
    pub const DEFORM: &str = "step2.deform";
    pub const REFINE: &str = "step2.refine";
}

fn conv(out: &mut Vec<ParamDesc>, name: String, cin: usize, cout: usize, k: usize, init: Init) {
    out.push(ParamDesc {
        name: format!("{name}.weight"),
        shape: [cout, cin, k, k],
        init,
    });
    out.push(ParamDesc {
        name: format!("{name}.bias"),
        shape: [cout, 1, 1, 1],
        init: Init::Zero,
    });
}

fn res_blocks(out: &mut Vec<ParamDesc>, prefix: &str, n: usize, c: usize, k: usize) {
    for i in 0..n {
        conv(out, format!("{prefix}.block{i}.conv1"), c, c, k, Init::Kaiming(1.0));
        conv(out, format!("{prefix}.block{i}.conv2"), c, c, k, Init::Kaiming(RESIDUAL_INIT_SCALE));
    }
}

/// Every tensor of the network, with shape and initializer.
pub(crate) fn layout(spec: &NetworkSpec) -> Vec<ParamDesc> {
    let (c, k) = (spec.channels, spec.kernel);
    let mut out = Vec::new();
    conv(&mut out, format!("{}.head", names::ENCODER), 3, c, k, Init::Kaiming(1.0));
    res_blocks(&mut out, names::ENCODER, spec.n_blocks_encoder, c, k);
    res_blocks(&mut out, names::DECODER, spec.n_blocks_decoder, c, k);
    // Zero output layer: an untrained decoder passes the compressed frame through.
    conv(&mut out, format!("{}.tail", names::DECODER), c, 3, k, Init::Zero);

    conv(&mut out, format!("{}.head", names::REF_ENCODER), 3, c, k, Init::Kaiming(1.0));
    res_blocks(&mut out, names::REF_ENCODER, spec.n_blocks_ref_encoder, c, k);
    let layers = spec.n_offset_layers;
    for l in 0..layers {
        let cin = if l == 0 { 2 * c } else { c };
        let last = l + 1 == layers;
        let cout = if last { 3 * spec.taps() } else { c };
        let init = if last { Init::Zero } else { Init::Kaiming(1.0) };
        conv(&mut out, format!("{}.conv{l}", names::OFFSET), cin, cout, k, init);
    }
    conv(&mut out, names::DEFORM.to_string(), c, c + 1, k, Init::Kaiming(1.0));
    res_blocks(&mut out, names::REFINE, spec.n_blocks_refine, c, k);
    // Zero refinement output: step 2 starts out identical to step 1.
    conv(&mut out, format!("{}.tail", names::REFINE), c, c, k, Init::Zero);
    out
}

/// Gradients keyed like the weights they belong to.
pub type Gradients<T = f32> = BTreeMap<String, Tensor<T>>;

pub(crate) fn accumulate<T: Scalar>(grads: &mut Gradients<T>, name: &str, g: Tensor<T>) -> Result<()> {
    match grads.get_mut(name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name.to_string(), g);
            Ok(())
        }
    }
}

/// All network tensors, keyed by name. Names starting with `step1.` belong
/// to the general-enhancement branch, `step2.` to the reference branch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepWeights<T: Scalar = f32> {
    spec: NetworkSpec,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> StepWeights<T> {
    /// Kaiming-initialized weights drawn from a seeded generator.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for p in layout(spec) {
            let t = match p.init {
                Init::Zero => Tensor::zeros(p.shape),
                Init::Kaiming(scale) => {
                    let fan_in = (p.shape[1] * p.shape[2] * p.shape[3]) as f64;
                    let normal = Normal::new(0.0, scale * (2.0 / fan_in).sqrt()).expect("positive std");
                    Tensor::from_fn(p.shape, |_| T::from_f64(normal.sample(&mut rng)))
                }
            };
            tensors.insert(p.name, t);
        }
        Ok(StepWeights { spec: spec.clone(), tensors })
    }

    /// Every tensor set to zero.
    pub fn zeros(spec: &NetworkSpec) -> Result<Self> {
        spec.validate()?;
        let tensors = layout(spec).into_iter().map(|p| (p.name, Tensor::zeros(p.shape))).collect();
        Ok(StepWeights { spec: spec.clone(), tensors })
    }

    /// Builds weights from named tensors, checking names and shapes against the spec.
    pub fn from_tensors(spec: &NetworkSpec, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        spec.validate()?;
        let expected = layout(spec);
        if tensors.len() != expected.len() {
            return Err(Error::validation(format!(
                "expected {} tensors for this network spec, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for p in &expected {
            let t = tensors
                .get(&p.name)
                .ok_or_else(|| Error::validation(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.shape {
                return Err(Error::validation(format!(
                    "tensor {} has shape {:?}, spec wants {:?}",
                    p.name,
                    t.shape(),
                    p.shape
                )));
            }
        }
        let out = StepWeights {
            spec: spec.clone(),
            tensors,
        };
        if !out.is_finite() {
            return Err(Error::validation("weights contain non-finite values"));
        }
        Ok(out)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<T>> {
        &self.tensors
    }

    /// Tensor by name. Panics on an unknown name: the set of names is fixed
    /// by the spec at construction.
    pub fn param(&self, name: &str) -> &Tensor<T> {
        self.tensors.get(name).unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    /// Mutable access for optimizers and tests; shapes cannot change.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut [T]> {
        self.tensors.get_mut(name).map(|t| t.data_mut())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> StepWeights<U> {
        StepWeights {
            spec: self.spec.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }

    /// Forces the confidence map to zero everywhere: the confidence output
    /// channel gets zero weights and a large negative bias.
    pub fn zero_confidence_head(&mut self) {
        let c = self.spec.channels;
        let w = self.tensors.get_mut(&format!("{}.weight", names::DEFORM)).expect("deform weight");
        w.item_mut(c).iter_mut().for_each(|v| *v = T::zero());
        let b = self.tensors.get_mut(&format!("{}.bias", names::DEFORM)).expect("deform bias");
        b.data_mut()[c] = T::from_f64(CONFIDENCE_OFF_BIAS as f64);
    }
}

impl StepWeights<f32> {
    /// SHA-256 over names, shapes and little-endian payloads of all tensors
    /// whose name starts with `prefix`.
    pub fn digest(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, t) in self.tensors.range(prefix.to_string()..).take_while(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn step1_digest(&self) -> String {
        self.digest(STEP1_PREFIX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_closed_form() {
        for spec in [NetworkSpec::desk(), NetworkSpec::full()] {
            let n: usize = layout(&spec).iter().map(|p| p.shape.iter().product::<usize>()).sum();
            assert_eq!(n, spec.param_count());
            let s1: usize = layout(&spec)
                .iter()
                .filter(|p| p.name.starts_with(STEP1_PREFIX))
                .map(|p| p.shape.iter().product::<usize>())
                .sum();
            assert_eq!(s1, spec.step1_param_count());
        }
    }

    #[test]
    fn every_name_is_partitioned() {
        let w = StepWeights::<f32>::init(&NetworkSpec::desk(), 1).unwrap();
        assert!(w.names().all(|n| n.starts_with(STEP1_PREFIX) || n.starts_with(STEP2_PREFIX)));
        assert_eq!(w.param_count(), NetworkSpec::desk().param_count());
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = StepWeights::<f32>::init(&NetworkSpec::desk(), 9).unwrap();
        let b = StepWeights::<f32>::init(&NetworkSpec::desk(), 9).unwrap();
        let c = StepWeights::<f32>::init(&NetworkSpec::desk(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.step1_digest(), c.step1_digest());
    }

    #[test]
    fn digest_only_covers_prefix() {
        let a = StepWeights::<f32>::init(&NetworkSpec::desk(), 3).unwrap();
        let mut b = a.clone();
        b.get_mut("step2.deform.bias").unwrap()[0] += 1.0;
        assert_eq!(a.step1_digest(), b.step1_digest());
        assert_ne!(a.digest(STEP2_PREFIX), b.digest(STEP2_PREFIX));
        b.get_mut("step1.decoder.tail.bias").unwrap()[0] += 1.0;
        assert_ne!(a.step1_digest(), b.step1_digest());
    }

    #[test]
    fn from_tensors_checks_shapes() {
        let spec = NetworkSpec::desk();
        let w = StepWeights::<f32>::init(&spec, 3).unwrap();
        assert!(StepWeights::from_tensors(&spec, w.tensors().clone()).is_ok());
        let wide = NetworkSpec {
            channels: 64,
            ..spec.clone()
        };
        assert!(matches!(StepWeights::from_tensors(&wide, w.tensors().clone()), Err(Error::Validation(_))));
        let mut missing = w.tensors().clone();
        missing.remove("step2.deform.bias");
        assert!(StepWeights::from_tensors(&spec, missing).is_err());
    }
}
