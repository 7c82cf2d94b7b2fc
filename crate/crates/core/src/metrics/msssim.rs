//! Multi-scale structural similarity.
//!
//! Five scales, 11×11 Gaussian window (σ = 1.5, "valid" filtering), 2×2
//! average-pool downsampling between scales, data range 1. Negative
//! per-scale terms are clamped to zero before exponentiation. Colour frames
//! are scored per channel and averaged.

use crate::codecs::Frame;
use crate::error::{Error, Result};

pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Smallest side for which all five scales still fit the window.
pub const MIN_SIDE: usize = WINDOW << (SCALE_WEIGHTS.len() - 1);

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Row-major single-channel image.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn zeros(w: usize, h: usize) -> Self {
        Plane { w, h, v: vec![0.0; w * h] }
    }

    fn mul(&self, o: &Plane) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Separable valid-mode Gaussian filtering.
fn filter(p: &Plane, g: &[f64; WINDOW]) -> Plane {
    let (ow, oh) = (p.w - WINDOW + 1, p.h - WINDOW + 1);
    let mut tmp = Plane::zeros(ow, p.h);
    for y in 0..p.h {
        let row = &p.v[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            tmp.v[y * ow + x] = g.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = Plane::zeros(ow, oh);
    for y in 0..oh {
        for x in 0..ow {
            out.v[y * ow + x] = (0..WINDOW).map(|i| g[i] * tmp.v[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter`]: maps a gradient on the filtered plane back to the
/// `w × h` input plane.
fn filter_adjoint(grad: &Plane, w: usize, h: usize, g: &[f64; WINDOW]) -> Plane {
    let (ow, oh) = (grad.w, grad.h);
    let mut tmp = Plane::zeros(ow, h);
    for y in 0..oh {
        for x in 0..ow {
            let v = grad.v[y * ow + x];
            for i in 0..WINDOW {
                tmp.v[(y + i) * ow + x] += g[i] * v;
            }
        }
    }
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..ow {
            let v = tmp.v[y * ow + x];
            for i in 0..WINDOW {
                out.v[y * w + x + i] += g[i] * v;
            }
        }
    }
    out
}

fn pool(p: &Plane) -> Plane {
    let (w, h) = (p.w / 2, p.h / 2);
    let mut out = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let s = p.v[2 * y * p.w + 2 * x]
                + p.v[2 * y * p.w + 2 * x + 1]
                + p.v[(2 * y + 1) * p.w + 2 * x]
                + p.v[(2 * y + 1) * p.w + 2 * x + 1];
            out.v[y * w + x] = s / 4.0;
        }
    }
    out
}

fn pool_adjoint(grad: &Plane, w: usize, h: usize) -> Plane {
    let mut out = Plane::zeros(w, h);
    for y in 0..grad.h {
        for x in 0..grad.w {
            let v = grad.v[y * grad.w + x] / 4.0;
            out.v[2 * y * w + 2 * x] += v;
            out.v[2 * y * w + 2 * x + 1] += v;
            out.v[(2 * y + 1) * w + 2 * x] += v;
            out.v[(2 * y + 1) * w + 2 * x + 1] += v;
        }
    }
    out
}

/// Per-scale statistics kept for the backward pass.
struct ScaleStats {
    x: Plane,
    y: Plane,
    mu_x: Plane,
    mu_y: Plane,
    cs: Vec<f64>,
    lum: Vec<f64>,
    denom_cs: Vec<f64>,
    denom_l: Vec<f64>,
    mean: f64,
}

fn scale_stats(x: Plane, y: Plane, g: &[f64; WINDOW], last: bool) -> ScaleStats {
    let mu_x = filter(&x, g);
    let mu_y = filter(&y, g);
    let exx = filter(&x.mul(&x), g);
    let eyy = filter(&y.mul(&y), g);
    let exy = filter(&x.mul(&y), g);
    let n = mu_x.v.len();
    let mut cs = vec![0.0; n];
    let mut lum = vec![0.0; n];
    let mut denom_cs = vec![0.0; n];
    let mut denom_l = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x.v[i], mu_y.v[i]);
        let sxx = exx.v[i] - mx * mx;
        let syy = eyy.v[i] - my * my;
        let sxy = exy.v[i] - mx * my;
        denom_cs[i] = sxx + syy + C2;
        cs[i] = (2.0 * sxy + C2) / denom_cs[i];
        denom_l[i] = mx * mx + my * my + C1;
        lum[i] = (2.0 * mx * my + C1) / denom_l[i];
        acc += if last { lum[i] * cs[i] } else { cs[i] };
    }
    ScaleStats {
        x,
        y,
        mu_x,
        mu_y,
        cs,
        lum,
        denom_cs,
        denom_l,
        mean: acc / n as f64,
    }
}

fn forward(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<Vec<ScaleStats>> {
    if w < MIN_SIDE || h < MIN_SIDE {
        return Err(Error::Scale(format!(
            "MS-SSIM needs at least {MIN_SIDE}x{MIN_SIDE} pixels, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let mut px = Plane { w, h, v: x.to_vec() };
    let mut py = Plane { w, h, v: y.to_vec() };
    let levels = SCALE_WEIGHTS.len();
    let mut stats = Vec::with_capacity(levels);
    for j in 0..levels {
        let (nx, ny) = if j + 1 < levels { (pool(&px), pool(&py)) } else { (Plane::zeros(0, 0), Plane::zeros(0, 0)) };
        stats.push(scale_stats(px, py, &g, j + 1 == levels));
        px = nx;
        py = ny;
    }
    Ok(stats)
}

fn combine(stats: &[ScaleStats]) -> f64 {
    stats
        .iter()
        .zip(SCALE_WEIGHTS)
        .map(|(s, wgt)| s.mean.max(0.0).powf(wgt))
        .product()
}

/// MS-SSIM of two single-channel planes with samples in `[0, 1]`.
pub fn ms_ssim_plane(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<f64> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::validation("plane size does not match dimensions"));
    }
    Ok(combine(&forward(x, y, w, h)?))
}

/// MS-SSIM and its gradient with respect to `x` (the first argument).
pub fn ms_ssim_plane_with_grad(x: &[f64], y: &[f64], w: usize, h: usize) -> Result<(f64, Vec<f64>)> {
    if x.len() != w * h || y.len() != w * h {
        return Err(Error::validation("plane size does not match dimensions"));
    }
    let g = gaussian_window();
    let stats = forward(x, y, w, h)?;
    let score = combine(&stats);
    let levels = stats.len();
    let mut grad_next: Option<Plane> = None;
    for j in (0..levels).rev() {
        let s = &stats[j];
        let (sw, sh) = (s.x.w, s.x.h);
        let mut gx = match grad_next.take() {
            Some(gn) => pool_adjoint(&gn, sw, sh),
            None => Plane::zeros(sw, sh),
        };
        if s.mean > 0.0 && score > 0.0 {
            let d_mean = score * SCALE_WEIGHTS[j] / s.mean;
            let n = s.cs.len() as f64;
            let (ow, oh) = (s.mu_x.w, s.mu_x.h);
            let mut g_mux = Plane::zeros(ow, oh);
            let mut g_exx = Plane::zeros(ow, oh);
            let mut g_exy = Plane::zeros(ow, oh);
            let last = j + 1 == levels;
            for i in 0..s.cs.len() {
                let (g_cs, g_l) = if last {
                    (d_mean * s.lum[i] / n, d_mean * s.cs[i] / n)
                } else {
                    (d_mean / n, 0.0)
                };
                let (mx, my) = (s.mu_x.v[i], s.mu_y.v[i]);
                let b = s.denom_cs[i];
                let d_sxx = -s.cs[i] / b * g_cs;
                let d_sxy = 2.0 / b * g_cs;
                g_exx.v[i] = d_sxx;
                g_exy.v[i] = d_sxy;
                let dl_dmx = 2.0 * (my - s.lum[i] * mx) / s.denom_l[i];
                g_mux.v[i] = d_sxx * (-2.0 * mx) + d_sxy * (-my) + g_l * dl_dmx;
            }
            let a_mu = filter_adjoint(&g_mux, sw, sh, &g);
            let a_xx = filter_adjoint(&g_exx, sw, sh, &g);
            let a_xy = filter_adjoint(&g_exy, sw, sh, &g);
            for i in 0..gx.v.len() {
                gx.v[i] += a_mu.v[i] + 2.0 * s.x.v[i] * a_xx.v[i] + s.y.v[i] * a_xy.v[i];
            }
        }
        grad_next = Some(gx);
    }
    Ok((score, grad_next.map(|p| p.v).unwrap_or_default()))
}

/// Mean per-channel MS-SSIM of two frames.
pub fn ms_ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::validation("ms_ssim: frame size mismatch"));
    }
    let (a, b) = (a.to_rgb(), b.to_rgb());
    let mut total = 0.0;
    for c in 0..Frame::CHANNELS {
        let x: Vec<f64> = a.plane(c).iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = b.plane(c).iter().map(|&v| v as f64).collect();
        total += ms_ssim_plane(&x, &y, a.width(), a.height())?;
    }
    Ok(total / Frame::CHANNELS as f64)
}

/// Mean over frames of [`ms_ssim`].
pub fn ms_ssim_video(a: &[Frame], b: &[Frame]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::validation("ms_ssim_video: sequences differ in length or are empty"));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += ms_ssim(x, y)?;
    }
    Ok(total / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_normalized_and_symmetric() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW {
            assert_eq!(g[i], g[WINDOW - 1 - i]);
        }
        assert_eq!(MIN_SIDE, 176);
    }

    #[test]
    fn adjoints_are_consistent() {
        let g = gaussian_window();
        let (w, h) = (17, 14);
        let p = Plane {
            w,
            h,
            v: (0..w * h).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        let q = Plane {
            w: w - 10,
            h: h - 10,
            v: (0..(w - 10) * (h - 10)).map(|i| (i as f64 * 0.11).cos()).collect(),
        };
        let lhs: f64 = filter(&p, &g).v.iter().zip(&q.v).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.v.iter().zip(&filter_adjoint(&q, w, h, &g).v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);

        let r = Plane {
            w: w / 2,
            h: h / 2,
            v: (0..(w / 2) * (h / 2)).map(|i| i as f64).collect(),
        };
        let lhs: f64 = pool(&p).v.iter().zip(&r.v).map(|(a, b)| a * b).sum();
        let rhs: f64 = p.v.iter().zip(&pool_adjoint(&r, w, h).v).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn too_small_is_scale_error() {
        let v = vec![0.5; 100 * 200];
        assert!(matches!(ms_ssim_plane(&v, &v, 100, 200), Err(Error::Scale(_))));
    }
}
