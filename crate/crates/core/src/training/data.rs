//! Procedural training material and (compressed, original) pair datasets.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::codecs::{self, CodecConfig, ColorSpace, Frame, StreamInfo, VideoSequence};
use crate::error::Result;
use crate::neural::Tensor;

/// Frames per generated clip, as in common septuplet datasets.
pub const CLIP_LEN: usize = 7;

struct Canvas {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Canvas {
    fn put(&mut self, y: usize, x: usize, rgb: [f32; 3], alpha: f32) {
        let n = self.w * self.h;
        for (c, v) in rgb.iter().enumerate() {
            let p = &mut self.data[c * n + y * self.w + x];
            *p = *p * (1.0 - alpha) + v * alpha;
        }
    }
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// Fill patterns for shapes.
#[derive(Clone, Copy)]
enum Fill {
    Flat,
    Stripes { freq: f32, angle: f32 },
    Checker { cell: usize },
    Dots { period: usize },
}

fn random_fill(rng: &mut impl Rng) -> Fill {
    match rng.gen_range(0..4) {
        0 => Fill::Flat,
        1 => Fill::Stripes {
            freq: rng.gen_range(0.25..1.3),
            angle: rng.gen_range(0.0..std::f32::consts::PI),
        },
        2 => Fill::Checker {
            cell: rng.gen_range(2..6),
        },
        _ => Fill::Dots {
            period: rng.gen_range(3..7),
        },
    }
}

fn fill_value(fill: Fill, y: usize, x: usize) -> f32 {
    match fill {
        Fill::Flat => 1.0,
        Fill::Stripes { freq, angle } => {
            let u = x as f32 * angle.cos() + y as f32 * angle.sin();
            0.5 + 0.5 * (u * freq).sin()
        }
        Fill::Checker { cell } => ((x / cell + y / cell) % 2) as f32,
        Fill::Dots { period } => {
            let (dx, dy) = ((x % period) as f32 - period as f32 / 2.0, (y % period) as f32 - period as f32 / 2.0);
            if dx * dx + dy * dy < (period * period) as f32 / 8.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// A synthetic scene: smooth background, textured shapes with hard edges,
/// fine high-frequency texture and a little noise. Values in `[0, 1]`,
/// planar RGB.
fn render_scene(rng: &mut impl Rng, w: usize, h: usize) -> Canvas {
    let (c0, c1) = (color(rng), color(rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let span = (w + h) as f32;
    let mut canvas = Canvas {
        w,
        h,
        data: vec![0.0; 3 * w * h],
    };
    for y in 0..h {
        for x in 0..w {
            let t = ((x as f32 * ca + y as f32 * sa) / span + 0.5).clamp(0.0, 1.0);
            let rgb = [0, 1, 2].map(|c| c0[c] * (1.0 - t) + c1[c] * t);
            canvas.put(y, x, rgb, 1.0);
        }
    }
    let shapes = rng.gen_range(5..10);
    for _ in 0..shapes {
        let (fg, bg) = (color(rng), color(rng));
        let fill = random_fill(rng);
        let cx = rng.gen_range(0.0..w as f32);
        let cy = rng.gen_range(0.0..h as f32);
        let rx = rng.gen_range(4.0..w as f32 / 3.0);
        let ry = rng.gen_range(4.0..h as f32 / 3.0);
        let ellipse = rng.gen_bool(0.5);
        let alpha = rng.gen_range(0.7..1.0);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = ((x as f32 - cx) / rx, (y as f32 - cy) / ry);
                let inside = if ellipse { dx * dx + dy * dy <= 1.0 } else { dx.abs() <= 1.0 && dy.abs() <= 1.0 };
                if inside {
                    let f = fill_value(fill, y, x);
                    let rgb = [0, 1, 2].map(|c| fg[c] * f + bg[c] * (1.0 - f));
                    canvas.put(y, x, rgb, alpha);
                }
            }
        }
    }
    // Fine texture across the whole scene.
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.6..1.6),
                rng.gen_range(0.0..std::f32::consts::PI),
                rng.gen_range(0.0..std::f32::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let n = w * h;
    for y in 0..h {
        for x in 0..w {
            let mut t = 0.0;
            for &(freq, ang, phase, amp) in &waves {
                t += amp * ((x as f32 * ang.cos() + y as f32 * ang.sin()) * freq + phase).sin();
            }
            t += rng.gen_range(-0.015..0.015);
            for c in 0..3 {
                let p = &mut canvas.data[c * n + y * w + x];
                *p = (*p + t).clamp(0.0, 1.0);
            }
        }
    }
    canvas
}

fn crop(canvas: &Canvas, x0: usize, y0: usize, w: usize, h: usize) -> Result<Frame> {
    let n = canvas.w * canvas.h;
    let mut data = Vec::with_capacity(3 * w * h);
    for c in 0..3 {
        for y in y0..y0 + h {
            let row = c * n + y * canvas.w;
            data.extend_from_slice(&canvas.data[row + x0..row + x0 + w]);
        }
    }
    // Frames hold 8-bit content like decoded video.
    let data = data.into_iter().map(|v| (v * 255.0).round() / 255.0).collect();
    Frame::new(w, h, data, ColorSpace::Rgb, 8)
}

/// A still synthetic image.
pub fn synthetic_image(rng: &mut impl Rng, width: usize, height: usize) -> Result<Frame> {
    let canvas = render_scene(rng, width, height);
    crop(&canvas, 0, 0, width, height)
}

/// A clip panning across one synthetic scene at a constant integer velocity
/// of at most `max_speed` pixels per frame along each axis.
pub fn synthetic_clip(
    rng: &mut impl Rng,
    width: usize,
    height: usize,
    frames: usize,
    max_speed: usize,
) -> Result<VideoSequence> {
    let margin = max_speed * frames.saturating_sub(1);
    let canvas = render_scene(rng, width + margin, height + margin);
    let speed = max_speed as isize;
    let vx = rng.gen_range(-speed..=speed);
    let vy = rng.gen_range(-speed..=speed);
    let start = |v: isize| if v < 0 { margin } else { 0 };
    let (sx, sy) = (start(vx), start(vy));
    let clip = (0..frames)
        .map(|t| {
            let x0 = (sx as isize + vx * t as isize) as usize;
            let y0 = (sy as isize + vy * t as isize) as usize;
            crop(&canvas, x0, y0, width, height)
        })
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(clip, 30.0)
}

/// Several independent synthetic clips.
pub fn synthetic_clips(rng: &mut impl Rng, count: usize, width: usize, height: usize) -> Result<Vec<VideoSequence>> {
    (0..count).map(|_| synthetic_clip(rng, width, height, CLIP_LEN, 1)).collect()
}

/// One clip's frames before and after compression, plus its reference.
#[derive(Clone, Debug)]
pub struct ClipPairs {
    pub original: Vec<Frame>,
    pub compressed: Vec<Frame>,
    /// Uncompressed first frame of the clip.
    pub reference: Frame,
}

impl ClipPairs {
    pub fn len(&self) -> usize {
        self.original.len()
    }

    pub fn is_empty(&self) -> bool {
        self.original.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
pub struct PairDataset {
    pub clips: Vec<ClipPairs>,
}

impl PairDataset {
    pub fn pair_count(&self) -> usize {
        self.clips.iter().map(ClipPairs::len).sum()
    }

    /// Smallest frame side across the dataset.
    pub fn min_side(&self) -> usize {
        self.clips
            .iter()
            .map(|c| c.reference.width().min(c.reference.height()))
            .min()
            .unwrap_or(0)
    }
}

/// Compresses every clip with `codec` and pairs the result with the
/// originals. Clips shorter than two frames are skipped.
pub fn build_pairs(videos: &[VideoSequence], codec: &CodecConfig) -> Result<PairDataset> {
    let mut clips = Vec::with_capacity(videos.len());
    for (i, video) in videos.iter().enumerate() {
        if video.len() < 2 {
            log::warn!("skipping clip {i}: {} frame(s)", video.len());
            continue;
        }
        let enc = codecs::encode_video(video, codec)?;
        let dec = codecs::decode_video(&enc.bitstream, codec, &StreamInfo::of(video))?;
        clips.push(ClipPairs {
            original: video.frames.iter().map(Frame::to_rgb).collect(),
            compressed: dec.frames.iter().map(Frame::to_rgb).collect(),
            reference: video.frames[0].to_rgb(),
        });
    }
    Ok(PairDataset { clips })
}

/// One of the eight rotations/reflections of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Augment {
    /// Quarter turns counter-clockwise.
    pub rotation: u8,
    pub flip: bool,
}

impl Augment {
    pub const IDENTITY: Augment = Augment { rotation: 0, flip: false };

    pub fn random(rng: &mut impl Rng) -> Self {
        Augment {
            rotation: rng.gen_range(0..4),
            flip: rng.gen_bool(0.5),
        }
    }

    /// Source coordinate read for output pixel `(y, x)` of a `p×p` patch.
    fn source(self, p: usize, y: usize, x: usize) -> (usize, usize) {
        let x = if self.flip { p - 1 - x } else { x };
        match self.rotation % 4 {
            0 => (y, x),
            1 => (x, p - 1 - y),
            2 => (p - 1 - y, p - 1 - x),
            _ => (p - 1 - x, y),
        }
    }
}

/// Copies a `p×p` patch at `(y0, x0)` from `frame`, transformed by `aug`,
/// into item `n` of `dst`.
pub fn write_patch(frame: &Frame, y0: usize, x0: usize, p: usize, aug: Augment, dst: &mut Tensor<f32>, n: usize) {
    for c in 0..3 {
        let plane = frame.plane(c);
        let out = dst.plane_mut(n, c);
        for y in 0..p {
            for x in 0..p {
                let (sy, sx) = aug.source(p, y, x);
                out[y * p + x] = plane[(y0 + sy) * frame.width() + x0 + sx];
            }
        }
    }
}

/// A training batch: compressed input, target and reference patches.
#[derive(Clone, Debug)]
pub struct Batch {
    pub compressed: Tensor<f32>,
    pub original: Tensor<f32>,
    pub reference: Tensor<f32>,
}

/// Draws a batch of co-located patches. The reference patch comes from the
/// same clip and position as the compressed one, except that with
/// probability `mismatch` it is cut from a different clip at a random spot.
pub fn sample_batch(
    data: &PairDataset,
    rng: &mut impl Rng,
    batch: usize,
    patch: usize,
    augment: bool,
    mismatch: f64,
) -> Batch {
    let shape = [batch, 3, patch, patch];
    let mut out = Batch {
        compressed: Tensor::zeros(shape),
        original: Tensor::zeros(shape),
        reference: Tensor::zeros(shape),
    };
    for n in 0..batch {
        let clip = data.clips.choose(rng).expect("non-empty dataset");
        let t = rng.gen_range(0..clip.len());
        let y0 = rng.gen_range(0..=clip.reference.height() - patch);
        let x0 = rng.gen_range(0..=clip.reference.width() - patch);
        let aug = if augment { Augment::random(rng) } else { Augment::IDENTITY };
        write_patch(&clip.compressed[t], y0, x0, patch, aug, &mut out.compressed, n);
        write_patch(&clip.original[t], y0, x0, patch, aug, &mut out.original, n);
        if mismatch > 0.0 && data.clips.len() > 1 && rng.gen_bool(mismatch.min(1.0)) {
            let other = loop {
                let c = data.clips.choose(rng).expect("non-empty dataset");
                if !std::ptr::eq(c, clip) {
                    break c;
                }
            };
            let ry = rng.gen_range(0..=other.reference.height() - patch);
            let rx = rng.gen_range(0..=other.reference.width() - patch);
            write_patch(&other.reference, ry, rx, patch, aug, &mut out.reference, n);
        } else {
            write_patch(&clip.reference, y0, x0, patch, aug, &mut out.reference, n);
        }
    }
    out
}
