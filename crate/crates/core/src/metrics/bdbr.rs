//! Bjøntegaard delta bitrate.
//!
//! `log10(rate)` is interpolated as a function of distortion with a
//! monotone piecewise-cubic Hermite (Fritsch–Carlson) interpolant, each
//! curve is integrated exactly over the shared distortion interval, and the
//! mean log-rate difference is reported as a percentage.

use crate::error::{Error, Result};

/// Monotone cubic Hermite interpolant through strictly increasing `xs`.
#[derive(Clone, Debug)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::validation("pchip needs at least two (x, y) pairs"));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) || xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(Error::validation("pchip abscissae must be finite and strictly increasing"));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let m: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / h[k]).collect();
        let mut ds = vec![0.0; n];
        if n == 2 {
            ds[0] = m[0];
            ds[1] = m[0];
        } else {
            for k in 1..n - 1 {
                if m[k - 1] * m[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    ds[k] = (w1 + w2) / (w1 / m[k - 1] + w2 / m[k]);
                }
            }
            ds[0] = end_slope(h[0], h[1], m[0], m[1]);
            ds[n - 1] = end_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
        }
        Ok(Pchip { xs, ys, ds })
    }

    fn segment(&self, k: usize) -> [f64; 4] {
        let h = self.xs[k + 1] - self.xs[k];
        let delta = (self.ys[k + 1] - self.ys[k]) / h;
        let (d0, d1) = (self.ds[k], self.ds[k + 1]);
        [
            self.ys[k],
            d0,
            (3.0 * delta - 2.0 * d0 - d1) / h,
            (d0 + d1 - 2.0 * delta) / (h * h),
        ]
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let k = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let c = self.segment(k);
        let t = x - self.xs[k];
        c[0] + t * (c[1] + t * (c[2] + t * c[3]))
    }

    /// Exact integral over `[a, b]`, which must lie inside the data range.
    pub fn integrate(&self, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        for k in 0..self.xs.len() - 1 {
            let lo = a.max(self.xs[k]);
            let hi = b.min(self.xs[k + 1]);
            if hi <= lo {
                continue;
            }
            let c = self.segment(k);
            let prim = |t: f64| t * (c[0] + t * (c[1] / 2.0 + t * (c[2] / 3.0 + t * c[3] / 4.0)));
            total += prim(hi - self.xs[k]) - prim(lo - self.xs[k]);
        }
        total
    }
}

fn prepare(points: &[(f64, f64)], which: &str) -> Result<Pchip> {
    if points.len() < 4 {
        return Err(Error::validation(format!(
            "{which} curve has {} points, BD-rate needs at least 4",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    if pts.iter().any(|&(r, d)| !(r > 0.0 && r.is_finite() && d.is_finite())) {
        return Err(Error::validation(format!("{which} curve has non-positive rate or non-finite distortion")));
    }
    pts.sort_by(|a, b| a.1.total_cmp(&b.1));
    if pts.windows(2).any(|w| w[1].1 <= w[0].1) {
        return Err(Error::validation(format!("{which} curve repeats a distortion value")));
    }
    Pchip::new(pts.iter().map(|p| p.1).collect(), pts.iter().map(|p| p.0.log10()).collect())
}

/// Average bitrate difference (percent) of `test` relative to `anchor` at
/// equal distortion. Points are `(rate, distortion)`; negative means savings.
pub fn bd_rate(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    let a = prepare(anchor, "anchor")?;
    let t = prepare(test, "test")?;
    let lo = a.xs[0].max(t.xs[0]);
    let hi = a.xs[a.xs.len() - 1].min(t.xs[t.xs.len() - 1]);
    if !(hi > lo) {
        return Err(Error::Domain(format!(
            "distortion ranges do not overlap (common interval [{lo}, {hi}])"
        )));
    }
    let mean_diff = (t.integrate(lo, hi) - a.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(mean_diff) - 1.0) * 100.0)
}
