//! Independent MS-SSIM used as a test oracle.

/// Straight-line MS-SSIM: full 2-D Gaussian window evaluated pixel by
/// pixel, no separable filtering and no shared buffers.
pub fn ms_ssim_oracle(x: &[f64], y: &[f64], w: usize, h: usize) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let (c1, c2) = (1e-4, 9e-4);
    let mut g = [[0.0f64; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            sum += *v;
        }
    }
    let (mut x, mut y, mut w, mut h) = (x.to_vec(), y.to_vec(), w, h);
    let mut result = 1.0;
    for (level, wgt) in WEIGHTS.iter().enumerate() {
        let last = level == WEIGHTS.len() - 1;
        let mut acc = 0.0;
        let mut count = 0usize;
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = g[i][j] / sum;
                        let a = x[(oy + i) * w + ox + j];
                        let b = y[(oy + i) * w + ox + j];
                        mx += k * a;
                        my += k * b;
                        xx += k * a * a;
                        yy += k * b * b;
                        xy += k * a * b;
                    }
                }
                let cs = (2.0 * (xy - mx * my) + c2) / ((xx - mx * mx) + (yy - my * my) + c2);
                let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                acc += if last { l * cs } else { cs };
                count += 1;
            }
        }
        result *= (acc / count as f64).max(0.0).powf(*wgt);
        if !last {
            let (nw, nh) = (w / 2, h / 2);
            let down = |p: &[f64]| -> Vec<f64> {
                let mut out = vec![0.0; nw * nh];
                for yy in 0..nh {
                    for xx in 0..nw {
                        out[yy * nw + xx] = (p[2 * yy * w + 2 * xx]
                            + p[2 * yy * w + 2 * xx + 1]
                            + p[(2 * yy + 1) * w + 2 * xx]
                            + p[(2 * yy + 1) * w + 2 * xx + 1])
                            / 4.0;
                    }
                }
                out
            };
            x = down(&x);
            y = down(&y);
            w = nw;
            h = nh;
        }
    }
    result
}
