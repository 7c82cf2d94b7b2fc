//! Stride-1, same-padded 2-D convolution via im2col + GEMM.

use super::tensor::{matmul, matmul_nt, matmul_tn, Scalar, Tensor};
use crate::error::{Error, Result};

/// Gradients produced by a convolution backward pass. Fields are `None`
/// when the caller did not request them.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
}

fn check_conv_shapes<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<usize> {
    let [cout, cin, kh, kw] = weight.shape();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::validation(format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if cin != input.channels() {
        return Err(Error::validation(format!(
            "conv expects {cin} input channels, got {}",
            input.channels()
        )));
    }
    if bias.len() != cout {
        return Err(Error::validation(format!("bias length {} != {cout}", bias.len())));
    }
    Ok(kh)
}

/// Unfolds one C×H×W item into a (C·k·k)×(H·W) column matrix with zero padding.
pub(crate) fn im2col<T: Scalar>(item: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &item[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - r;
                let dx = kj as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    drow[..x_lo.min(w)].fill(T::zero());
                    if x_lo < x_hi {
                        let s0 = (x_lo as isize + dx) as usize;
                        drow[x_lo..x_hi].copy_from_slice(&srow[s0..s0 + (x_hi - x_lo)]);
                    }
                    drow[x_hi.max(x_lo)..].fill(T::zero());
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into a C×H×W item.
pub(crate) fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, k: usize, item: &mut [T]) {
    let r = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut item[ch * hw..(ch + 1) * hw];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * hw..(row + 1) * hw];
                let dy = ki as isize - r;
                let dx = kj as isize - r;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    let s0 = (x_lo as isize + dx) as usize;
                    let prow = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (p, &g) in prow.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *p += g;
                    }
                }
            }
        }
    }
}

/// Multiplies a weight matrix with a column buffer and adds the bias:
/// `out (cout × hw) = W (cout × rows) · cols + b`.
pub(crate) fn apply_columns<T: Scalar>(weight: &[T], bias: &[T], cols: &[T], rows: usize, hw: usize, out: &mut [T]) {
    let cout = bias.len();
    for (o, &b) in bias.iter().enumerate() {
        out[o * hw..(o + 1) * hw].fill(b);
    }
    matmul(cout, rows, hw, weight, cols, T::one(), out);
}

/// Backward of [`apply_columns`]: accumulates weight/bias gradients and
/// returns `Wᵀ · grad_out` in `grad_cols` when requested.
pub(crate) fn apply_columns_backward<T: Scalar>(
    weight: &[T],
    cols: &[T],
    grad_out: &[T],
    rows: usize,
    hw: usize,
    cout: usize,
    grad_weight: Option<(&mut [T], &mut [T])>,
    grad_cols: Option<&mut [T]>,
) {
    if let Some((gw, gb)) = grad_weight {
        matmul_nt(cout, hw, rows, grad_out, cols, T::one(), gw);
        for (o, g) in gb.iter_mut().enumerate() {
            *g += grad_out[o * hw..(o + 1) * hw].iter().copied().sum::<T>();
        }
    }
    if let Some(gc) = grad_cols {
        matmul_tn(rows, cout, hw, weight, grad_out, T::zero(), gc);
    }
}

/// Same-padded stride-1 convolution. `weight` is Cout×Cin×k×k.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let k = check_conv_shapes(input, weight, bias)?;
    let [n, cin, h, w] = input.shape();
    let cout = weight.shape()[0];
    let rows = cin * k * k;
    let hw = h * w;
    let mut cols = vec![T::zero(); rows * hw];
    let mut out = Tensor::zeros([n, cout, h, w]);
    for b in 0..n {
        im2col(input.item(b), cin, h, w, k, &mut cols);
        apply_columns(weight.data(), bias, &cols, rows, hw, out.item_mut(b));
    }
    Ok(out)
}

/// Backward pass of [`conv2d`]. The im2col buffers are recomputed rather
/// than cached to keep forward activations small.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> Result<ConvGrads<T>> {
    let [cout, cin, k, _] = weight.shape();
    let [n, _, h, w] = input.shape();
    grad_out.expect_shape([n, cout, h, w], "conv2d_backward grad")?;
    let rows = cin * k * k;
    let hw = h * w;
    let mut cols = vec![T::zero(); rows * hw];
    let mut grad_cols = vec![T::zero(); if want_input { rows * hw } else { 0 }];
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); cout];
    let mut gi = Tensor::zeros(if want_input { input.shape() } else { [0, 0, 0, 0] });
    for b in 0..n {
        if want_params {
            im2col(input.item(b), cin, h, w, k, &mut cols);
        }
        apply_columns_backward(
            weight.data(),
            &cols,
            grad_out.item(b),
            rows,
            hw,
            cout,
            if want_params {
                Some((gw.data_mut(), gb.as_mut_slice()))
            } else {
                None
            },
            if want_input { Some(grad_cols.as_mut_slice()) } else { None },
        );
        if want_input {
            col2im(&grad_cols, cin, h, w, k, gi.item_mut(b));
        }
    }
    Ok(ConvGrads {
        input: want_input.then_some(gi),
        weight: want_params.then_some(gw),
        bias: want_params.then_some(gb),
    })
}
