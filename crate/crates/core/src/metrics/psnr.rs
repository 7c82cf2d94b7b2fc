use crate::codecs::Frame;
use crate::error::{Error, Result};

fn check(a: &Frame, b: &Frame) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::validation(format!(
            "psnr: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// `10·log10(1 / mse)`; identical inputs give `+∞`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len().max(1) as f64
}

/// PSNR over the RGB channels (mean squared error averaged across them).
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    check(a, b)?;
    let (a, b) = (a.to_rgb(), b.to_rgb());
    Ok(psnr_from_mse(mse(a.data(), b.data())))
}

/// PSNR of the BT.601 luma plane only.
pub fn psnr_y(a: &Frame, b: &Frame) -> Result<f64> {
    check(a, b)?;
    Ok(psnr_from_mse(mse(&a.luma(), &b.luma())))
}

fn per_frame(a: &[Frame], b: &[Frame], f: impl Fn(&Frame, &Frame) -> Result<f64>) -> Result<Vec<f64>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::validation(format!(
            "sequences of {} and {} frames cannot be compared",
            a.len(),
            b.len()
        )));
    }
    a.iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

/// Per-frame RGB PSNR.
pub fn psnr_per_frame(a: &[Frame], b: &[Frame]) -> Result<Vec<f64>> {
    per_frame(a, b, psnr)
}

/// RGB PSNR computed per frame, then averaged over frames.
pub fn psnr_video(a: &[Frame], b: &[Frame]) -> Result<f64> {
    let v = psnr_per_frame(a, b)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn psnr_y_video(a: &[Frame], b: &[Frame]) -> Result<f64> {
    let v = per_frame(a, b, psnr_y)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}
