//! Encoder and decoder of the hybrid scheme, plus RD sweeps over them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codecs::{self, CodecConfig, CodecId, Frame, StreamInfo, VideoSequence};
use crate::container::{self, framing_bytes, ReferenceEntry, StreamMeta};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricKind, RateBreakdown, RdCurve, RdPoint, MS_SSIM_MIN_SIDE};
use crate::restoration::{restore_frame, ReferenceCache, RestoreMode, StepWeights};
use crate::scenedetect::{self, RefPolicy, DEFAULT_MIN_SCENE_LEN, DEFAULT_THRESHOLD};

/// Frame rate assumed on decode; the container does not store one.
pub const CONTAINER_FPS: f32 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeSettings {
    pub video: CodecConfig,
    pub reference: CodecConfig,
    pub policy: RefPolicy,
    pub scene_threshold: f64,
    pub min_scene_len: usize,
}

impl EncodeSettings {
    pub fn mock(quality: u32) -> Self {
        EncodeSettings {
            video: CodecConfig::mock_lossy(quality),
            reference: CodecConfig::mock_lossless(),
            policy: RefPolicy::FirstOnly,
            scene_threshold: DEFAULT_THRESHOLD,
            min_scene_len: DEFAULT_MIN_SCENE_LEN,
        }
    }
}

/// What `encode` reports about the container it wrote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodeReport {
    pub lossy_bits: u64,
    pub ref_bits: u64,
    pub framing_bits: u64,
    pub lossy_bpp: f64,
    pub ref_bpp: f64,
    pub framing_bpp: f64,
    pub total_bpp: f64,
    pub ref_indices: Vec<usize>,
    pub cut_indices: Vec<usize>,
    /// The lossy codec's own rate figure (entropy estimate for the mock).
    pub codec_rate_bits: u64,
}

impl EncodeReport {
    pub fn rates(&self, width: usize, height: usize, frames: usize) -> RateBreakdown {
        RateBreakdown {
            lossy_bits: self.lossy_bits,
            ref_bits: self.ref_bits,
            framing_bits: self.framing_bits,
            width,
            height,
            frames,
        }
    }
}

/// Picks reference frame indices for `video` under `settings`.
pub fn reference_indices(video: &VideoSequence, settings: &EncodeSettings) -> Result<(Vec<usize>, Vec<usize>)> {
    match settings.policy {
        RefPolicy::FirstOnly => Ok((vec![0], Vec::new())),
        RefPolicy::SceneCut if video.len() < 2 => Ok((vec![0], Vec::new())),
        RefPolicy::SceneCut => {
            let cuts = scenedetect::detect_cuts(&video.frames, settings.scene_threshold, settings.min_scene_len)?;
            let refs = scenedetect::select_references(video.len(), &cuts, RefPolicy::SceneCut);
            Ok((refs, cuts.cut_indices))
        }
    }
}

/// Compresses `video` into a `.hvc` container. Rates count container bytes.
pub fn encode(video: &VideoSequence, settings: &EncodeSettings) -> Result<(Vec<u8>, EncodeReport)> {
    if settings.video.codec_id.is_lossless() {
        return Err(Error::validation("the video codec must be lossy"));
    }
    if !settings.reference.codec_id.is_lossless() {
        return Err(Error::validation("the reference codec must be lossless"));
    }
    let (ref_indices, cut_indices) = reference_indices(video, settings)?;
    let enc = codecs::encode_video(video, &settings.video)?;
    let references = ref_indices
        .iter()
        .map(|&i| {
            Ok(ReferenceEntry {
                frame_index: i as u32,
                codec_id: settings.reference.codec_id,
                payload: codecs::encode_reference(&video.frames[i], &settings.reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = StreamMeta {
        lossy_codec_id: settings.video.codec_id,
        ref_codec_default: settings.reference.codec_id,
        width: video.width() as u32,
        height: video.height() as u32,
        frame_count: video.len() as u32,
    };
    let bytes = container::mux(&enc.bitstream, &references, &meta)?;
    let rates = RateBreakdown {
        lossy_bits: 8 * enc.bitstream.len() as u64,
        ref_bits: 8 * references.iter().map(|r| r.payload.len() as u64).sum::<u64>(),
        framing_bits: 8 * framing_bytes(references.len()) as u64,
        width: video.width(),
        height: video.height(),
        frames: video.len(),
    };
    debug_assert_eq!(rates.total_bits(), 8 * bytes.len() as u64);
    let report = EncodeReport {
        lossy_bits: rates.lossy_bits,
        ref_bits: rates.ref_bits,
        framing_bits: rates.framing_bits,
        lossy_bpp: rates.lossy_bpp(),
        ref_bpp: rates.ref_bpp(),
        framing_bpp: rates.framing_bpp(),
        total_bpp: rates.total_bpp(),
        ref_indices,
        cut_indices,
        codec_rate_bits: enc.rate_bits,
    };
    Ok((bytes, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    /// Conventional decode only.
    Raw,
    Step1,
    Step2,
}

impl DecodeMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(DecodeMode::Raw),
            "step1" => Ok(DecodeMode::Step1),
            "step2" => Ok(DecodeMode::Step2),
            other => Err(Error::validation(format!("unknown decode mode {other:?}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DecodeMode::Raw => "raw",
            DecodeMode::Step1 => "step1",
            DecodeMode::Step2 => "step2",
        }
    }
}

/// Decoder tools. Unset entries fall back to the defaults for the codec
/// recorded in the container.
#[derive(Clone, Debug, Default)]
pub struct DecodeTools {
    pub video: Option<CodecConfig>,
    pub reference: Option<CodecConfig>,
}

fn default_tool(id: CodecId) -> CodecConfig {
    match id {
        CodecId::MockLossy => CodecConfig::mock_lossy(50),
        CodecId::ExternalVideo => CodecConfig::hevc(32),
        CodecId::MockLossless => CodecConfig::mock_lossless(),
        CodecId::ExternalLossless => CodecConfig::jpeg_xl(),
    }
}

#[derive(Clone, Debug)]
pub struct Decoded {
    pub video: VideoSequence,
    /// Decoded lossless references with their frame indices.
    pub references: Vec<(usize, Frame)>,
}

/// Unpacks a container: conventional video plus lossless references.
pub fn decode_streams(bytes: &[u8], tools: &DecodeTools) -> Result<Decoded> {
    let hvc = container::demux(bytes)?;
    let video_cfg = tools.video.clone().unwrap_or_else(|| default_tool(hvc.meta.lossy_codec_id));
    if video_cfg.codec_id != hvc.meta.lossy_codec_id {
        return Err(Error::validation(format!(
            "container holds {:?} video but the decoder is {:?}",
            hvc.meta.lossy_codec_id, video_cfg.codec_id
        )));
    }
    let info = StreamInfo {
        width: hvc.meta.width as usize,
        height: hvc.meta.height as usize,
        frame_count: hvc.meta.frame_count as usize,
        fps: CONTAINER_FPS,
    };
    let video = codecs::decode_video(&hvc.lossy_bitstream, &video_cfg, &info)?;
    let references = hvc
        .references
        .iter()
        .map(|r| {
            let cfg = match &tools.reference {
                Some(c) if c.codec_id == r.codec_id => c.clone(),
                _ => default_tool(r.codec_id),
            };
            Ok((r.frame_index as usize, codecs::decode_reference(&r.payload, &cfg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Decoded { video, references })
}

/// Restores every frame of a decoded stream. Frames run in parallel on the
/// current rayon pool.
pub fn restore(decoded: &Decoded, mode: DecodeMode, weights: Option<&StepWeights>) -> Result<VideoSequence> {
    let restore_mode = match mode {
        DecodeMode::Raw => return Ok(decoded.video.clone()),
        DecodeMode::Step1 => RestoreMode::Step1,
        DecodeMode::Step2 => RestoreMode::Step2,
    };
    let w = weights.ok_or_else(|| Error::validation(format!("mode {} needs a checkpoint", mode.label())))?;
    let cache = match restore_mode {
        RestoreMode::Step2 => Some(ReferenceCache::build(w, &decoded.references)?),
        RestoreMode::Step1 => None,
    };
    let frames = decoded
        .video
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, c)| restore_frame(&c.to_rgb(), t, cache.as_ref(), w, restore_mode))
        .collect::<Result<Vec<_>>>()?;
    VideoSequence::new(frames, decoded.video.fps)
}

pub fn decode(bytes: &[u8], tools: &DecodeTools, mode: DecodeMode, weights: Option<&StepWeights>) -> Result<VideoSequence> {
    restore(&decode_streams(bytes, tools)?, mode, weights)
}

/// Quality of a decoded video against its source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr_rgb: f64,
    pub psnr_y: f64,
    /// Absent when frames are too small for the five-scale pyramid.
    pub ms_ssim: Option<f64>,
}

pub fn measure(decoded: &[Frame], original: &[Frame]) -> Result<Quality> {
    let ms_ssim = match original.first() {
        Some(f) if f.width().min(f.height()) >= MS_SSIM_MIN_SIDE => Some(metrics::ms_ssim_video(decoded, original)?),
        _ => None,
    };
    Ok(Quality {
        psnr_rgb: metrics::psnr_video(decoded, original)?,
        psnr_y: metrics::psnr_y_video(decoded, original)?,
        ms_ssim,
    })
}

/// One row of an RD sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    pub quality: u32,
    pub bpp: f64,
    pub psnr_rgb: f64,
    pub psnr_y: f64,
    pub ms_ssim: Option<f64>,
}

/// Encodes `video` at every quality and measures each decode mode. The raw
/// anchor is charged the lossy stream only, step 1 likewise, and step 2 the
/// whole container.
pub fn rd_sweep(
    video: &VideoSequence,
    base: &EncodeSettings,
    qualities: &[u32],
    modes: &[DecodeMode],
    tools: &DecodeTools,
    weights: Option<&StepWeights>,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    let original: Vec<Frame> = video.frames.iter().map(Frame::to_rgb).collect();
    for &q in qualities {
        let mut settings = base.clone();
        settings.video.quality = q;
        let (bytes, report) = encode(video, &settings)?;
        let mut tools = tools.clone();
        if tools.video.is_none() {
            tools.video = Some(settings.video.clone());
        }
        let decoded = decode_streams(&bytes, &tools)?;
        for &mode in modes {
            let out = restore(&decoded, mode, weights)?;
            let frames: Vec<Frame> = out.frames.iter().map(Frame::to_rgb).collect();
            let quality = measure(&frames, &original)?;
            let bpp = match mode {
                DecodeMode::Raw | DecodeMode::Step1 => report.lossy_bpp,
                DecodeMode::Step2 => report.total_bpp,
            };
            rows.push(EvalRow {
                label: mode.label().to_string(),
                quality: q,
                bpp,
                psnr_rgb: quality.psnr_rgb,
                psnr_y: quality.psnr_y,
                ms_ssim: quality.ms_ssim,
            });
        }
    }
    Ok(rows)
}

/// Collects the rows with `label` into an RD curve.
pub fn curve(rows: &[EvalRow], label: &str, metric: MetricKind) -> Result<RdCurve> {
    let points = rows
        .iter()
        .filter(|r| r.label == label)
        .map(|r| {
            let distortion = match metric {
                MetricKind::Psnr => r.psnr_rgb,
                MetricKind::PsnrY => r.psnr_y,
                MetricKind::MsSsim => r
                    .ms_ssim
                    .ok_or_else(|| Error::validation("MS-SSIM is unavailable for frames this small"))?,
            };
            Ok(RdPoint {
                rate: r.bpp,
                distortion,
                label: format!("{label}@{}", r.quality),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RdCurve::new(points, metric)
}
