//! Orthonormal 8×8 type-II DCT, applied separably.

use std::sync::OnceLock;

pub const BLOCK: usize = 8;

fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let scale = if u == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = scale * (std::f64::consts::PI * (2 * x + 1) as f64 * u as f64 / (2 * BLOCK) as f64).cos();
            }
        }
        m
    })
}

/// Forward transform of a row-major 8×8 block.
pub fn forward(block: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|x| c[u][x] * block[y * BLOCK + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v * BLOCK + u] = (0..BLOCK).map(|y| c[v][y] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Inverse transform (transpose of [`forward`]).
pub fn inverse(coef: &[f64; 64]) -> [f64; 64] {
    let c = basis();
    let mut tmp = [0.0; 64];
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y * BLOCK + u] = (0..BLOCK).map(|v| c[v][y] * coef[v * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|u| c[u][x] * tmp[y * BLOCK + u]).sum();
        }
    }
    out
}

/// Zig-zag scan order of an 8×8 block.
pub fn zigzag() -> &'static [usize; 64] {
    static ORDER: OnceLock<[usize; 64]> = OnceLock::new();
    ORDER.get_or_init(|| {
        let mut order = [0usize; 64];
        let mut i = 0;
        for s in 0..(2 * BLOCK - 1) {
            let range: Vec<usize> = (0..BLOCK).filter(|&y| s >= y && s - y < BLOCK).collect();
            let ys: Vec<usize> = if s % 2 == 0 { range.into_iter().rev().collect() } else { range };
            for y in ys {
                order[i] = y * BLOCK + (s - y);
                i += 1;
            }
        }
        order
    })
}
