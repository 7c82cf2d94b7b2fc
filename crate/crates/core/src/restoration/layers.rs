//! Sequential stacks of convolutions and residual blocks, addressed by
//! weight name, with a cached forward pass for backpropagation.

use super::spec::NetworkSpec;
use super::weights::{accumulate, names, Gradients, StepWeights};
use crate::error::Result;
use crate::neural::{conv2d, conv2d_backward, leaky_relu, leaky_relu_backward, Scalar, Tensor};

#[derive(Clone, Debug)]
pub(crate) enum Op {
    /// Convolution, optionally followed by the leaky rectifier.
    Conv { name: String, act: bool },
    /// `x + conv2(act(conv1(x)))`.
    Residual { name: String },
}

#[derive(Clone, Debug)]
pub(crate) struct Stack {
    ops: Vec<Op>,
}

/// Activations saved by a forward pass.
#[derive(Clone, Debug)]
pub(crate) struct StackCache<T> {
    entries: Vec<OpCache<T>>,
}

#[derive(Clone, Debug)]
enum OpCache<T> {
    Conv { input: Tensor<T>, pre: Option<Tensor<T>> },
    Residual { input: Tensor<T>, pre: Tensor<T> },
}

fn conv_fwd<T: Scalar>(w: &StepWeights<T>, name: &str, x: &Tensor<T>) -> Result<Tensor<T>> {
    conv2d(x, w.param(&format!("{name}.weight")), w.param(&format!("{name}.bias")).data())
}

/// Backward of one convolution; parameter gradients go to `grads` when given.
fn conv_bwd<T: Scalar>(
    w: &StepWeights<T>,
    name: &str,
    input: &Tensor<T>,
    grad: &Tensor<T>,
    want_input: bool,
    grads: Option<&mut Gradients<T>>,
) -> Result<Option<Tensor<T>>> {
    let weight_name = format!("{name}.weight");
    let g = conv2d_backward(input, w.param(&weight_name), grad, want_input, grads.is_some())?;
    if let Some(grads) = grads {
        let cout = g.weight.as_ref().map_or(0, |t| t.shape()[0]);
        accumulate(grads, &weight_name, g.weight.expect("weight grad requested"))?;
        let bias = Tensor::from_vec([cout, 1, 1, 1], g.bias.expect("bias grad requested"))?;
        accumulate(grads, &format!("{name}.bias"), bias)?;
    }
    Ok(g.input)
}

impl Stack {
    fn residuals(prefix: &str, n: usize) -> impl Iterator<Item = Op> + '_ {
        (0..n).map(move |i| Op::Residual {
            name: format!("{prefix}.block{i}"),
        })
    }

    fn conv(name: String, act: bool) -> Op {
        Op::Conv { name, act }
    }

    pub fn encoder(spec: &NetworkSpec) -> Self {
        let mut ops = vec![Self::conv(format!("{}.head", names::ENCODER), true)];
        ops.extend(Self::residuals(names::ENCODER, spec.n_blocks_encoder));
        Stack { ops }
    }

    pub fn decoder(spec: &NetworkSpec) -> Self {
        let mut ops: Vec<Op> = Self::residuals(names::DECODER, spec.n_blocks_decoder).collect();
        ops.push(Self::conv(format!("{}.tail", names::DECODER), false));
        Stack { ops }
    }

    pub fn ref_encoder(spec: &NetworkSpec) -> Self {
        let mut ops = vec![Self::conv(format!("{}.head", names::REF_ENCODER), true)];
        ops.extend(Self::residuals(names::REF_ENCODER, spec.n_blocks_ref_encoder));
        Stack { ops }
    }

    pub fn offset(spec: &NetworkSpec) -> Self {
        let n = spec.n_offset_layers;
        let ops = (0..n).map(|l| Self::conv(format!("{}.conv{l}", names::OFFSET), l + 1 < n)).collect();
        Stack { ops }
    }

    pub fn refine(spec: &NetworkSpec) -> Self {
        let mut ops: Vec<Op> = Self::residuals(names::REFINE, spec.n_blocks_refine).collect();
        ops.push(Self::conv(format!("{}.tail", names::REFINE), false));
        Stack { ops }
    }

    /// Forward pass; activations are kept only when a cache is requested.
    pub fn forward<T: Scalar>(
        &self,
        w: &StepWeights<T>,
        x: &Tensor<T>,
        mut cache: Option<&mut StackCache<T>>,
    ) -> Result<Tensor<T>> {
        if let Some(c) = cache.as_deref_mut() {
            c.entries.clear();
        }
        let mut x = x.clone();
        for op in &self.ops {
            let (y, entry) = match op {
                Op::Conv { name, act } => {
                    let pre = conv_fwd(w, name, &x)?;
                    if *act {
                        (leaky_relu(&pre), cache.is_some().then_some(OpCache::Conv { input: x, pre: Some(pre) }))
                    } else {
                        (pre, cache.is_some().then_some(OpCache::Conv { input: x, pre: None }))
                    }
                }
                Op::Residual { name } => {
                    let pre = conv_fwd(w, &format!("{name}.conv1"), &x)?;
                    let mut y = conv_fwd(w, &format!("{name}.conv2"), &leaky_relu(&pre))?;
                    y.add_assign(&x)?;
                    (y, cache.is_some().then_some(OpCache::Residual { input: x, pre }))
                }
            };
            if let (Some(c), Some(e)) = (cache.as_deref_mut(), entry) {
                c.entries.push(e);
            }
            x = y;
        }
        Ok(x)
    }

    /// Backward pass from the output gradient. Returns the input gradient
    /// when `want_input` is set; accumulates parameter gradients into
    /// `grads` when given.
    pub fn backward<T: Scalar>(
        &self,
        w: &StepWeights<T>,
        cache: &StackCache<T>,
        grad: Tensor<T>,
        want_input: bool,
        mut grads: Option<&mut Gradients<T>>,
    ) -> Result<Option<Tensor<T>>> {
        assert_eq!(cache.entries.len(), self.ops.len(), "cache does not belong to this stack");
        let mut g = grad;
        for (i, (op, entry)) in self.ops.iter().zip(&cache.entries).enumerate().rev() {
            let need_input = want_input || i > 0;
            match (op, entry) {
                (Op::Conv { name, .. }, OpCache::Conv { input, pre }) => {
                    let g_pre = match pre {
                        Some(p) => leaky_relu_backward(p, &g)?,
                        None => g,
                    };
                    match conv_bwd(w, name, input, &g_pre, need_input, grads.as_deref_mut())? {
                        Some(gi) => g = gi,
                        None => return Ok(None),
                    }
                }
                (Op::Residual { name }, OpCache::Residual { input, pre }) => {
                    let hidden = leaky_relu(pre);
                    let g_hidden = conv_bwd(w, &format!("{name}.conv2"), &hidden, &g, true, grads.as_deref_mut())?
                        .expect("input grad requested");
                    let g_pre = leaky_relu_backward(pre, &g_hidden)?;
                    if let Some(gi) = conv_bwd(w, &format!("{name}.conv1"), input, &g_pre, need_input, grads.as_deref_mut())? {
                        g.add_assign(&gi)?;
                    } else if !need_input {
                        return Ok(None);
                    }
                }
                _ => unreachable!("cache entry kind matches its op"),
            }
        }
        Ok(Some(g))
    }
}

impl<T> Default for StackCache<T> {
    fn default() -> Self {
        StackCache { entries: Vec::new() }
    }
}
