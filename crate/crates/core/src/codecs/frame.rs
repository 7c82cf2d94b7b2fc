use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Tensor;

/// Smallest accepted frame side.
pub const MIN_FRAME_SIDE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Rgb,
    YCbCr444,
}

/// A three-channel planar frame with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    color_space: ColorSpace,
    bit_depth: u8,
    /// Planar C×H×W samples.
    data: Vec<f32>,
}

impl Frame {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>, color_space: ColorSpace, bit_depth: u8) -> Result<Self> {
        if width < MIN_FRAME_SIDE || height < MIN_FRAME_SIDE {
            return Err(Error::validation(format!(
                "frame {width}x{height} is smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}"
            )));
        }
        if !(1..=16).contains(&bit_depth) {
            return Err(Error::validation(format!("unsupported bit depth {bit_depth}")));
        }
        if data.len() != width * height * Self::CHANNELS {
            return Err(Error::validation(format!(
                "frame data has {} samples, expected {}",
                data.len(),
                width * height * Self::CHANNELS
            )));
        }
        const EPS: f32 = 1e-6;
        if let Some(bad) = data.iter().find(|v| !(-EPS..=1.0 + EPS).contains(*v)) {
            return Err(Error::validation(format!("sample {bad} outside [0, 1]")));
        }
        Ok(Frame {
            width,
            height,
            color_space,
            bit_depth,
            data,
        })
    }

    /// Builds an RGB frame from interleaved 8-bit samples (`v / 255`).
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != width * height * 3 {
            return Err(Error::validation("rgb buffer length does not match dimensions"));
        }
        let plane = width * height;
        let mut data = vec![0.0; plane * 3];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + i] = px[c] as f32 / 255.0;
            }
        }
        Frame::new(width, height, data, ColorSpace::Rgb, 8)
    }

    /// Solid RGB frame.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Result<Self> {
        let plane = width * height;
        let mut data = Vec::with_capacity(plane * 3);
        for v in rgb {
            data.extend(std::iter::repeat_n(v, plane));
        }
        Frame::new(width, height, data, ColorSpace::Rgb, 8)
    }

    /// Converts a 1×3×H×W tensor, clamping to `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, bit_depth: u8) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 3 {
            return Err(Error::validation(format!("expected a 1x3xHxW tensor, got {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::validation("non-finite tensor cannot become a frame"));
        }
        let data = t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Frame::new(w, h, data, ColorSpace::Rgb, bit_depth)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, 3, self.height, self.width], self.data.clone()).expect("frame shape is consistent")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    #[inline]
    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Samples as integers at the frame's bit depth.
    pub fn quantized(&self) -> Vec<u16> {
        let max = ((1u32 << self.bit_depth) - 1) as f32;
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * max).round() as u16).collect()
    }

    /// Interleaved 8-bit RGB (rounded).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let frame = self.to_rgb();
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                out.push((frame.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    /// Same frame expressed in RGB.
    pub fn to_rgb(&self) -> Frame {
        match self.color_space {
            ColorSpace::Rgb => self.clone(),
            ColorSpace::YCbCr444 => {
                let mut out = self.clone();
                let n = self.width * self.height;
                for i in 0..n {
                    let rgb = ycbcr_to_rgb([self.data[i], self.data[n + i], self.data[2 * n + i]]);
                    for c in 0..3 {
                        out.data[c * n + i] = rgb[c].clamp(0.0, 1.0);
                    }
                }
                out.color_space = ColorSpace::Rgb;
                out
            }
        }
    }

    /// Same frame expressed in full-range YCbCr.
    pub fn to_ycbcr(&self) -> Frame {
        match self.color_space {
            ColorSpace::YCbCr444 => self.clone(),
            ColorSpace::Rgb => {
                let mut out = self.clone();
                let n = self.width * self.height;
                for i in 0..n {
                    let ycc = rgb_to_ycbcr([self.data[i], self.data[n + i], self.data[2 * n + i]]);
                    for c in 0..3 {
                        out.data[c * n + i] = ycc[c].clamp(0.0, 1.0);
                    }
                }
                out.color_space = ColorSpace::YCbCr444;
                out
            }
        }
    }

    /// Luma plane (BT.601 weights) of the RGB representation.
    pub fn luma(&self) -> Vec<f32> {
        match self.color_space {
            ColorSpace::YCbCr444 => self.plane(0).to_vec(),
            ColorSpace::Rgb => {
                let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
                r.iter()
                    .zip(g)
                    .zip(b)
                    .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
                    .collect()
            }
        }
    }

    /// Copies out a rectangular region.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::validation("crop window exceeds frame"));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for c in 0..3 {
            for y in y0..y0 + height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        Frame::new(width, height, data, self.color_space, self.bit_depth)
    }
}

/// Full-range BT.601 RGB → YCbCr on `[0, 1]` samples (chroma centred at 0.5).
#[inline]
pub fn rgb_to_ycbcr(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb;
    [
        0.299 * r + 0.587 * g + 0.114 * b,
        0.5 - 0.168_736 * r - 0.331_264 * g + 0.5 * b,
        0.5 + 0.5 * r - 0.418_688 * g - 0.081_312 * b,
    ]
}

#[inline]
pub fn ycbcr_to_rgb(ycc: [f32; 3]) -> [f32; 3] {
    let [y, cb, cr] = ycc;
    let (cb, cr) = (cb - 0.5, cr - 0.5);
    [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb]
}

/// An ordered list of equally sized frames.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub frames: Vec<Frame>,
    pub fps: f32,
}

impl VideoSequence {
    pub fn new(frames: Vec<Frame>, fps: f32) -> Result<Self> {
        let first = frames.first().ok_or_else(|| Error::validation("video has no frames"))?;
        let (w, h) = (first.width(), first.height());
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::validation("frames of a video must share dimensions"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::validation(format!("invalid frame rate {fps}")));
        }
        Ok(VideoSequence { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }
}
