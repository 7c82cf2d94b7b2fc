//! Bilinear sampling and modulated deformable convolution.
//!
//! Offsets are laid out N×(2K)×H×W with channel `2k` holding the vertical
//! displacement and `2k + 1` the horizontal displacement of tap `k`, taps in
//! row-major kernel order. Samples outside the image read as zero.

use super::conv::{apply_columns, apply_columns_backward};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[inline]
fn fetch<T: Scalar>(plane: &[T], h: usize, w: usize, y: isize, x: isize) -> T {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        T::zero()
    } else {
        plane[y as usize * w + x as usize]
    }
}

#[inline]
fn outside(h: usize, w: usize, y: f64, x: f64) -> bool {
    y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64
}

/// Bilinear read of one H×W plane at a real coordinate.
#[inline]
pub fn sample_plane<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let (yf, xf) = (y.to_f64().unwrap_or(f64::NAN), x.to_f64().unwrap_or(f64::NAN));
    if !(yf.is_finite() && xf.is_finite()) || outside(h, w, yf, xf) {
        return T::zero();
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let ly = y - y0;
    let lx = x - x0;
    let (iy, ix) = (y0.to_isize().unwrap_or(0), x0.to_isize().unwrap_or(0));
    let one = T::one();
    let v00 = fetch(plane, h, w, iy, ix);
    let v01 = fetch(plane, h, w, iy, ix + 1);
    let v10 = fetch(plane, h, w, iy + 1, ix);
    let v11 = fetch(plane, h, w, iy + 1, ix + 1);
    (one - ly) * (one - lx) * v00 + (one - ly) * lx * v01 + ly * (one - lx) * v10 + ly * lx * v11
}

/// Samples every channel of batch item `n` at `(y, x)`.
pub fn bilinear_sample<T: Scalar>(input: &Tensor<T>, n: usize, y: T, x: T) -> Vec<T> {
    let (h, w) = (input.height(), input.width());
    (0..input.channels())
        .map(|c| sample_plane(input.plane(n, c), h, w, y, x))
        .collect()
}

/// Gradients of [`deformable_conv`].
#[derive(Clone, Debug)]
pub struct DeformGrads<T> {
    pub input: Option<Tensor<T>>,
    pub offset: Tensor<T>,
    pub mask: Tensor<T>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Vec<T>>,
}

fn check_deform_shapes<T: Scalar>(
    input: &Tensor<T>,
    offset: &Tensor<T>,
    mask: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<usize> {
    let [cout, cin, kh, kw] = weight.shape();
    if kh != kw || kh % 2 == 0 {
        return Err(Error::validation(format!("deformable kernel must be square and odd, got {kh}x{kw}")));
    }
    let taps = kh * kw;
    let [n, c, h, w] = input.shape();
    if cin != c {
        return Err(Error::validation(format!("deformable conv expects {cin} channels, got {c}")));
    }
    offset.expect_shape([n, 2 * taps, h, w], "deformable offsets")?;
    mask.expect_shape([n, taps, h, w], "deformable mask")?;
    if bias.len() != cout {
        return Err(Error::validation(format!("bias length {} != {cout}", bias.len())));
    }
    Ok(kh)
}

const NO_CORNER: usize = usize::MAX;

/// Where one tap of one output pixel reads from: four corner indices
/// (`NO_CORNER` when outside the image) and the fractional position.
#[derive(Clone, Copy)]
struct Sample<T> {
    corner: [usize; 4],
    ly: T,
    lx: T,
}

impl<T: Scalar> Sample<T> {
    fn locate(h: usize, w: usize, y: T, x: T) -> Self {
        let (yf, xf) = (y.to_f64().unwrap_or(f64::NAN), x.to_f64().unwrap_or(f64::NAN));
        if !(yf.is_finite() && xf.is_finite()) || outside(h, w, yf, xf) {
            return Sample {
                corner: [NO_CORNER; 4],
                ly: T::zero(),
                lx: T::zero(),
            };
        }
        let (y0, x0) = (y.floor(), x.floor());
        let (iy, ix) = (y0.to_isize().unwrap_or(0), x0.to_isize().unwrap_or(0));
        let at = |yy: isize, xx: isize| {
            if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                NO_CORNER
            } else {
                yy as usize * w + xx as usize
            }
        };
        Sample {
            corner: [at(iy, ix), at(iy, ix + 1), at(iy + 1, ix), at(iy + 1, ix + 1)],
            ly: y - y0,
            lx: x - x0,
        }
    }

    #[inline]
    fn weights(&self) -> [T; 4] {
        let one = T::one();
        let (ly, lx) = (self.ly, self.lx);
        [(one - ly) * (one - lx), (one - ly) * lx, ly * (one - lx), ly * lx]
    }

    #[inline]
    fn values(&self, plane: &[T]) -> [T; 4] {
        self.corner.map(|i| if i == NO_CORNER { T::zero() } else { plane[i] })
    }
}

/// Sampling positions of batch item `b`, indexed `tap * hw + p`.
fn locate_all<T: Scalar>(offset: &Tensor<T>, b: usize, k: usize, h: usize, w: usize) -> Vec<Sample<T>> {
    let r = (k / 2) as isize;
    let mut out = Vec::with_capacity(k * k * h * w);
    for tap in 0..k * k {
        let ky = T::from_f64(((tap / k) as isize - r) as f64);
        let kx = T::from_f64(((tap % k) as isize - r) as f64);
        let oy = offset.plane(b, 2 * tap);
        let ox = offset.plane(b, 2 * tap + 1);
        for y in 0..h {
            let yb = T::from_f64(y as f64) + ky;
            for x in 0..w {
                let p = y * w + x;
                out.push(Sample::locate(h, w, yb + oy[p], T::from_f64(x as f64) + kx + ox[p]));
            }
        }
    }
    out
}

/// Fills the modulated, deformed column matrix of batch item `b`.
fn deform_columns<T: Scalar>(input: &Tensor<T>, mask: &Tensor<T>, samples: &[Sample<T>], b: usize, k: usize, cols: &mut [T]) {
    let [_, cin, h, w] = input.shape();
    let hw = h * w;
    let taps = k * k;
    for c in 0..cin {
        let plane = input.plane(b, c);
        for tap in 0..taps {
            let m = mask.plane(b, tap);
            let row = &mut cols[(c * taps + tap) * hw..(c * taps + tap + 1) * hw];
            let s = &samples[tap * hw..(tap + 1) * hw];
            for p in 0..hw {
                let v = s[p].values(plane);
                let wt = s[p].weights();
                row[p] = m[p] * (wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3]);
            }
        }
    }
}

/// Modulated deformable convolution:
/// `out(p) = Σ_k W_k · m_k(p) · x(p + p_k + Δp_k(p)) + b`.
pub fn deformable_conv<T: Scalar>(
    input: &Tensor<T>,
    offset: &Tensor<T>,
    mask: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &[T],
) -> Result<Tensor<T>> {
    let k = check_deform_shapes(input, offset, mask, weight, bias)?;
    let [n, cin, h, w] = input.shape();
    let cout = weight.shape()[0];
    let rows = cin * k * k;
    let hw = h * w;
    let mut cols = vec![T::zero(); rows * hw];
    let mut out = Tensor::zeros([n, cout, h, w]);
    for b in 0..n {
        let samples = locate_all(offset, b, k, h, w);
        deform_columns(input, mask, &samples, b, k, &mut cols);
        apply_columns(weight.data(), bias, &cols, rows, hw, out.item_mut(b));
    }
    Ok(out)
}

/// Backward pass of [`deformable_conv`]. Offset and mask gradients are
/// always produced; input and parameter gradients on request.
pub fn deformable_conv_backward<T: Scalar>(
    input: &Tensor<T>,
    offset: &Tensor<T>,
    mask: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
    want_params: bool,
) -> Result<DeformGrads<T>> {
    let cout = weight.shape()[0];
    let bias_dummy = vec![T::zero(); cout];
    let k = check_deform_shapes(input, offset, mask, weight, &bias_dummy)?;
    let [n, cin, h, w] = input.shape();
    grad_out.expect_shape([n, cout, h, w], "deformable backward grad")?;
    let taps = k * k;
    let rows = cin * taps;
    let hw = h * w;

    let mut cols = vec![T::zero(); rows * hw];
    let mut grad_cols = vec![T::zero(); rows * hw];
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = vec![T::zero(); cout];
    let mut g_in = Tensor::zeros(if want_input { input.shape() } else { [0, 0, 0, 0] });
    let mut g_off = Tensor::zeros(offset.shape());
    let mut g_mask = Tensor::zeros(mask.shape());

    for b in 0..n {
        let samples = locate_all(offset, b, k, h, w);
        if want_params {
            deform_columns(input, mask, &samples, b, k, &mut cols);
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
            Some(grad_cols.as_mut_slice()),
        );
        for tap in 0..taps {
            let s = &samples[tap * hw..(tap + 1) * hw];
            let m = mask.plane(b, tap);
            let mut gm = vec![T::zero(); hw];
            let mut goy = vec![T::zero(); hw];
            let mut gox = vec![T::zero(); hw];
            for c in 0..cin {
                let plane = input.plane(b, c);
                let gc = &grad_cols[(c * taps + tap) * hw..(c * taps + tap + 1) * hw];
                let mut gi = if want_input { Some(g_in.plane_mut(b, c)) } else { None };
                for p in 0..hw {
                    let g = gc[p];
                    if g == T::zero() {
                        continue;
                    }
                    let sp = &s[p];
                    let v = sp.values(plane);
                    let wt = sp.weights();
                    let one = T::one();
                    let val = wt[0] * v[0] + wt[1] * v[1] + wt[2] * v[2] + wt[3] * v[3];
                    let dvy = (one - sp.lx) * (v[2] - v[0]) + sp.lx * (v[3] - v[1]);
                    let dvx = (one - sp.ly) * (v[1] - v[0]) + sp.ly * (v[3] - v[2]);
                    let gmp = g * m[p];
                    gm[p] += g * val;
                    goy[p] += gmp * dvy;
                    gox[p] += gmp * dvx;
                    if let Some(gi) = gi.as_deref_mut() {
                        for (&i, &wj) in sp.corner.iter().zip(&wt) {
                            if i != NO_CORNER {
                                gi[i] += gmp * wj;
                            }
                        }
                    }
                }
            }
            g_mask.plane_mut(b, tap).copy_from_slice(&gm);
            g_off.plane_mut(b, 2 * tap).copy_from_slice(&goy);
            g_off.plane_mut(b, 2 * tap + 1).copy_from_slice(&gox);
        }
    }
    Ok(DeformGrads {
        input: want_input.then_some(g_in),
        offset: g_off,
        mask: g_mask,
        weight: want_params.then_some(gw),
        bias: want_params.then_some(gb),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::conv::conv2d;

    fn ramp(h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_fn([1, 1, h, w], |[_, _, y, x]| (y * w + x) as f64)
    }

    #[test]
    fn lattice_samples_are_exact() {
        let t = ramp(4, 5);
        for y in 0..4 {
            for x in 0..5 {
                assert_eq!(bilinear_sample(&t, 0, y as f64, x as f64)[0], t.get([0, 0, y, x]));
            }
        }
    }

    #[test]
    fn midpoint_and_far_outside() {
        let t = ramp(4, 5);
        let a = t.get([0, 0, 2, 1]);
        let b = t.get([0, 0, 2, 2]);
        assert_eq!(bilinear_sample(&t, 0, 2.0, 1.5)[0], (a + b) / 2.0);
        assert_eq!(bilinear_sample(&t, 0, -5.0, -5.0)[0], 0.0);
        assert_eq!(bilinear_sample(&t, 0, 4.0, 0.0)[0], 0.0);
        // partial overlap blends with zero padding
        assert!((bilinear_sample(&t, 0, -0.5, 0.0)[0] - 0.5 * t.get([0, 0, 0, 0])).abs() < 1e-12);
        assert!((bilinear_sample(&t, 0, 0.0, 4.5)[0] - 0.5 * t.get([0, 0, 0, 4])).abs() < 1e-12);
    }

    #[test]
    fn zero_offsets_unit_mask_equals_conv2d_bitwise() {
        let input = Tensor::from_fn([2, 3, 6, 5], |[n, c, y, x]| ((n * 17 + c * 5 + y * 3 + x) as f32 * 0.3).sin());
        let weight = Tensor::from_fn([4, 3, 3, 3], |[o, c, i, j]| ((o * 7 + c * 3 + i * 2 + j) as f32 * 0.9).cos());
        let bias = [0.5f32, -0.25, 0.0, 1.0];
        let off = Tensor::zeros([2, 18, 6, 5]);
        let mask = Tensor::full([2, 9, 6, 5], 1.0f32);
        let a = deformable_conv(&input, &off, &mask, &weight, &bias).unwrap();
        let b = conv2d(&input, &weight, &bias).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_column_offset_shifts_left() {
        let (h, w) = (5, 6);
        let input = Tensor::from_fn([1, 2, h, w], |[_, c, y, x]| ((c * 31 + y * 7 + x) as f64 * 0.37).sin());
        // identity kernel: only the centre tap, channel to itself
        let weight = Tensor::from_fn([2, 2, 3, 3], |[o, c, i, j]| if o == c && i == 1 && j == 1 { 1.0 } else { 0.0 });
        let off = Tensor::from_fn([1, 18, h, w], |[_, ch, _, _]| if ch % 2 == 1 { 1.0 } else { 0.0 });
        let mask = Tensor::full([1, 9, h, w], 1.0);
        let out = deformable_conv(&input, &off, &mask, &weight, &[0.0, 0.0]).unwrap();
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let expect = if x + 1 < w { input.get([0, c, y, x + 1]) } else { 0.0 };
                    assert!((out.get([0, c, y, x]) - expect).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let input = Tensor::<f32>::zeros([1, 2, 4, 4]);
        let w = Tensor::zeros([1, 2, 3, 3]);
        let ok_mask = Tensor::zeros([1, 9, 4, 4]);
        assert!(deformable_conv(&input, &Tensor::zeros([1, 9, 4, 4]), &ok_mask, &w, &[0.0]).is_err());
        assert!(deformable_conv(&input, &Tensor::zeros([1, 18, 4, 4]), &Tensor::zeros([1, 8, 4, 4]), &w, &[0.0]).is_err());
        assert!(deformable_conv(&input, &Tensor::zeros([1, 18, 4, 4]), &ok_mask, &Tensor::zeros([1, 3, 3, 3]), &[0.0]).is_err());
    }
}
