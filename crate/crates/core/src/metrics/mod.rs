//! Quality and rate measurement.

mod bdbr;
mod msssim;
mod psnr;

use serde::{Deserialize, Serialize};

pub use bdbr::{bd_rate, Pchip};
pub use msssim::{gaussian_window, ms_ssim, ms_ssim_plane, ms_ssim_plane_with_grad, ms_ssim_video, MIN_SIDE as MS_SSIM_MIN_SIDE, SCALE_WEIGHTS};
pub use psnr::{mse, psnr, psnr_from_mse, psnr_per_frame, psnr_video, psnr_y, psnr_y_video};

use crate::error::{Error, Result};

/// Bits per pixel: `total_bits / (W·H·T)`.
pub fn bpp(total_bits: u64, width: usize, height: usize, frames: usize) -> f64 {
    total_bits as f64 / (width * height * frames) as f64
}

/// Rate of a hybrid container split by component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub lossy_bits: u64,
    pub ref_bits: u64,
    pub framing_bits: u64,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl RateBreakdown {
    pub fn total_bits(&self) -> u64 {
        self.lossy_bits + self.ref_bits + self.framing_bits
    }

    fn per_pixel(&self, bits: u64) -> f64 {
        bpp(bits, self.width, self.height, self.frames)
    }

    pub fn lossy_bpp(&self) -> f64 {
        self.per_pixel(self.lossy_bits)
    }

    pub fn ref_bpp(&self) -> f64 {
        self.per_pixel(self.ref_bits)
    }

    pub fn framing_bpp(&self) -> f64 {
        self.per_pixel(self.framing_bits)
    }

    pub fn total_bpp(&self) -> f64 {
        self.per_pixel(self.total_bits())
    }
}

/// Which distortion measure an RD curve carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Psnr,
    PsnrY,
    MsSsim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    /// Bits per pixel, strictly positive.
    pub rate: f64,
    pub distortion: f64,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub points: Vec<RdPoint>,
    pub metric: MetricKind,
}

impl RdCurve {
    /// Sorts by rate and validates the curve. A distortion that falls as
    /// rate rises is logged, not rejected.
    pub fn new(mut points: Vec<RdPoint>, metric: MetricKind) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::validation(format!("an RD curve needs at least 4 points, got {}", points.len())));
        }
        if points.iter().any(|p| !(p.rate > 0.0 && p.rate.is_finite())) {
            return Err(Error::validation("RD point rates must be positive and finite"));
        }
        if points.iter().any(|p| p.distortion.is_nan() || p.distortion == f64::NEG_INFINITY) {
            return Err(Error::validation("RD point distortion must be a number"));
        }
        points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        if points.windows(2).any(|w| w[1].rate <= w[0].rate) {
            return Err(Error::validation("RD curve rates must be strictly increasing"));
        }
        if points.windows(2).any(|w| w[1].distortion < w[0].distortion) {
            log::warn!("RD curve quality decreases with rate; BD-rate may be unreliable");
        }
        Ok(RdCurve { points, metric })
    }

    pub fn is_monotone(&self) -> bool {
        self.points.windows(2).all(|w| w[1].distortion >= w[0].distortion)
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.rate, p.distortion)).collect()
    }
}

/// BD-rate (percent) of `test` against `anchor`.
pub fn bdbr(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    if anchor.metric != test.metric {
        return Err(Error::validation("BD-rate needs curves of the same metric"));
    }
    bd_rate(&anchor.pairs(), &test.pairs())
}
