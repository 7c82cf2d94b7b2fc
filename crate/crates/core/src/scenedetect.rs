//! Content-based scene cut detection and reference frame selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::Frame;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 27.0;
pub const DEFAULT_MIN_SCENE_LEN: usize = 15;
const MAX_ANALYSIS_SIDE: usize = 128;

/// Detected cuts: the index of the first frame of every new scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutList {
    pub cut_indices: Vec<usize>,
    pub threshold: f64,
    pub frame_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefPolicy {
    /// Only the first frame is sent losslessly.
    #[default]
    FirstOnly,
    /// The first frame plus the first frame of every detected scene.
    SceneCut,
}

/// Hue, saturation and luma planes (0..255) of a downscaled frame.
struct Signature {
    channels: [Vec<f32>; 3],
}

fn signature(frame: &Frame) -> Signature {
    let rgb = frame.to_rgb();
    let (w, h) = (rgb.width(), rgb.height());
    let factor = w.max(h).div_ceil(MAX_ANALYSIS_SIDE).max(1);
    let (sw, sh) = (w.div_ceil(factor), h.div_ceil(factor));
    let mut channels = [vec![0.0; sw * sh], vec![0.0; sw * sh], vec![0.0; sw * sh]];
    for sy in 0..sh {
        for sx in 0..sw {
            let mut acc = [0.0f32; 3];
            let mut n = 0.0;
            for y in sy * factor..((sy + 1) * factor).min(h) {
                for x in sx * factor..((sx + 1) * factor).min(w) {
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += rgb.get(c, y, x);
                    }
                    n += 1.0;
                }
            }
            let [r, g, b] = acc.map(|v| v / n);
            let max = r.max(g).max(b);
            let min = r.min(g).min(b);
            let delta = max - min;
            let hue = if delta <= 0.0 {
                0.0
            } else if max == r {
                ((g - b) / delta).rem_euclid(6.0)
            } else if max == g {
                (b - r) / delta + 2.0
            } else {
                (r - g) / delta + 4.0
            } / 6.0;
            let sat = if max <= 0.0 { 0.0 } else { delta / max };
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            let i = sy * sw + sx;
            channels[0][i] = hue * 255.0;
            channels[1][i] = sat * 255.0;
            channels[2][i] = luma * 255.0;
        }
    }
    Signature { channels }
}

fn score(a: &Signature, b: &Signature) -> f64 {
    let per_channel: f64 = a
        .channels
        .iter()
        .zip(&b.channels)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs() as f64).sum::<f64>() / x.len() as f64)
        .sum();
    per_channel / 3.0
}

/// Content score between every pair of consecutive frames; entry `t - 1`
/// compares frames `t - 1` and `t`. Scale is 0..255.
pub fn content_scores(frames: &[Frame]) -> Vec<f64> {
    let sigs: Vec<Signature> = frames.par_iter().map(signature).collect();
    sigs.windows(2).map(|w| score(&w[0], &w[1])).collect()
}

/// Cuts at `t` when the score between `t - 1` and `t` exceeds `threshold`
/// and at least `min_scene_len` frames have passed since the previous cut
/// (frame 0 counts as the start of the first scene).
pub fn detect_cuts(frames: &[Frame], threshold: f64, min_scene_len: usize) -> Result<CutList> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::validation(format!("scene threshold must be positive, got {threshold}")));
    }
    if frames.len() < 2 {
        return Ok(CutList {
            cut_indices: Vec::new(),
            threshold,
            frame_count: frames.len(),
        });
    }
    Ok(cuts_from_scores(&content_scores(frames), threshold, min_scene_len))
}

/// Applies the cut rule to precomputed consecutive-frame scores.
pub fn cuts_from_scores(scores: &[f64], threshold: f64, min_scene_len: usize) -> CutList {
    let mut cut_indices = Vec::new();
    let mut previous = 0usize;
    for (i, &s) in scores.iter().enumerate() {
        let t = i + 1;
        if s > threshold && t - previous >= min_scene_len {
            cut_indices.push(t);
            previous = t;
        }
    }
    CutList {
        cut_indices,
        threshold,
        frame_count: scores.len() + 1,
    }
}

/// Frame indices to transmit losslessly.
pub fn select_references(frame_count: usize, cuts: &CutList, policy: RefPolicy) -> Vec<usize> {
    let mut refs = vec![0];
    if policy == RefPolicy::SceneCut {
        refs.extend(cuts.cut_indices.iter().copied().filter(|&c| c > 0 && c < frame_count));
        refs.dedup();
    }
    refs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(v: f32, n: usize) -> Vec<Frame> {
        (0..n).map(|_| Frame::filled(16, 16, [v, v, v]).unwrap()).collect()
    }

    #[test]
    fn black_to_white_cut() {
        let mut frames = solid(0.0, 10);
        frames.extend(solid(1.0, 10));
        let cuts = detect_cuts(&frames, DEFAULT_THRESHOLD, 10).unwrap();
        assert_eq!(cuts.cut_indices, [10]);
        assert_eq!(cuts.frame_count, 20);
    }

    #[test]
    fn constant_video_has_no_cuts() {
        let cuts = detect_cuts(&solid(0.4, 12), DEFAULT_THRESHOLD, DEFAULT_MIN_SCENE_LEN).unwrap();
        assert!(cuts.cut_indices.is_empty());
    }

    #[test]
    fn min_scene_len_suppresses_early_cut() {
        let mut frames = solid(0.0, 10);
        frames.extend(solid(1.0, 10));
        let cuts = detect_cuts(&frames, DEFAULT_THRESHOLD, DEFAULT_MIN_SCENE_LEN).unwrap();
        assert!(cuts.cut_indices.is_empty());
    }

    #[test]
    fn rejects_non_positive_threshold() {
        assert!(detect_cuts(&solid(0.0, 3), 0.0, 1).is_err());
    }

    #[test]
    fn reference_selection() {
        let none = CutList {
            cut_indices: vec![],
            threshold: 27.0,
            frame_count: 300,
        };
        assert_eq!(select_references(300, &none, RefPolicy::SceneCut), [0]);
        let one = CutList {
            cut_indices: vec![70],
            threshold: 27.0,
            frame_count: 150,
        };
        assert_eq!(select_references(150, &one, RefPolicy::SceneCut), [0, 70]);
        assert_eq!(select_references(150, &one, RefPolicy::FirstOnly), [0]);
    }
}
