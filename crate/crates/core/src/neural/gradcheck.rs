//! Central finite-difference checks of the hand-written backward passes.
//!
//! Every check contracts the output with a fixed random tensor `R`, so the
//! scalar loss is `Σ out·R` and the analytic gradient comes from running
//! the backward pass with `grad_out = R`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conv2d, conv2d_backward, deformable_conv, deformable_conv_backward, Tensor};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-3;

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)`; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &[f64], f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    numeric_gradient_with_step(x, FD_STEP, f)
}

pub fn numeric_gradient_with_step(x: &[f64], step: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Relative errors of each gradient of one random instance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradReport {
    pub input: f64,
    pub offset: f64,
    pub mask: f64,
    pub weight: f64,
    pub bias: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        [self.input, self.offset, self.mask, self.weight, self.bias].into_iter().fold(0.0, f64::max)
    }
}

/// Random offsets whose sampling positions stay clear of integer grid
/// lines, where bilinear interpolation is not differentiable.
fn smooth_offsets(rng: &mut impl Rng, shape: [usize; 4], reach: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let whole = rng.gen_range(-reach..=reach).round();
        let frac = rng.gen_range(0.1..0.9);
        whole + frac
    })
}

/// Gradient check of the deformable convolution on a random instance.
/// `reach` bounds the integer part of the offsets; values near the image
/// size push taps across the zero-padded border.
pub fn check_deformable(seed: u64, reach: f64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=2);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let h = rng.gen_range(3..=6);
    let w = rng.gen_range(3..=6);
    let k = 3;
    let taps = k * k;
    let input = random_tensor(&mut rng, [n, cin, h, w], 1.0);
    let offset = smooth_offsets(&mut rng, [n, 2 * taps, h, w], reach);
    let mask = Tensor::from_fn([n, taps, h, w], |_| rng.gen_range(0.05..1.0));
    let weight = random_tensor(&mut rng, [cout, cin, k, k], 0.5);
    let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let proj = random_tensor(&mut rng, [n, cout, h, w], 1.0);

    let g = deformable_conv_backward(&input, &offset, &mask, &weight, &proj, true, true)?;
    let loss = |i: &Tensor<f64>, o: &Tensor<f64>, m: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64]| {
        dot(&deformable_conv(i, o, m, wt, b).expect("shapes are valid"), &proj)
    };
    let rebuild = |t: &Tensor<f64>, v: &[f64]| Tensor::from_vec(t.shape(), v.to_vec()).expect("same length");

    let num_input = numeric_gradient(input.data(), |v| loss(&rebuild(&input, v), &offset, &mask, &weight, &bias));
    let num_offset = numeric_gradient(offset.data(), |v| loss(&input, &rebuild(&offset, v), &mask, &weight, &bias));
    let num_mask = numeric_gradient(mask.data(), |v| loss(&input, &offset, &rebuild(&mask, v), &weight, &bias));
    let num_weight = numeric_gradient(weight.data(), |v| loss(&input, &offset, &mask, &rebuild(&weight, v), &bias));
    let num_bias = numeric_gradient(&bias, |v| loss(&input, &offset, &mask, &weight, v));

    Ok(GradReport {
        input: relative_error(g.input.expect("requested").data(), &num_input),
        offset: relative_error(g.offset.data(), &num_offset),
        mask: relative_error(g.mask.data(), &num_mask),
        weight: relative_error(g.weight.expect("requested").data(), &num_weight),
        bias: relative_error(&g.bias.expect("requested"), &num_bias),
    })
}

/// Gradient check of the plain convolution on a random instance.
pub fn check_conv(seed: u64) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=2);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=3);
    let (h, w) = (rng.gen_range(2..=6), rng.gen_range(2..=6));
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let input = random_tensor(&mut rng, [n, cin, h, w], 1.0);
    let weight = random_tensor(&mut rng, [cout, cin, k, k], 0.5);
    let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let proj = random_tensor(&mut rng, [n, cout, h, w], 1.0);
    let g = conv2d_backward(&input, &weight, &proj, true, true)?;
    let loss = |i: &Tensor<f64>, wt: &Tensor<f64>, b: &[f64]| dot(&conv2d(i, wt, b).expect("valid"), &proj);
    let rebuild = |t: &Tensor<f64>, v: &[f64]| Tensor::from_vec(t.shape(), v.to_vec()).expect("same length");
    Ok(GradReport {
        input: relative_error(
            g.input.expect("requested").data(),
            &numeric_gradient(input.data(), |v| loss(&rebuild(&input, v), &weight, &bias)),
        ),
        weight: relative_error(
            g.weight.expect("requested").data(),
            &numeric_gradient(weight.data(), |v| loss(&input, &rebuild(&weight, v), &bias)),
        ),
        bias: relative_error(&g.bias.expect("requested"), &numeric_gradient(&bias, |v| loss(&input, &weight, v))),
        ..GradReport::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0, 0.0], &[0.0, 0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[1.1, 0.0]) - 0.1 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn numeric_gradient_of_quadratic() {
        let g = numeric_gradient(&[1.0, -2.0], |v| v[0] * v[0] + 3.0 * v[1]);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
