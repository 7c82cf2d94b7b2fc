//! Lossy video and lossless reference codec adapters.
//!
//! Two families live behind one [`CodecConfig`]: external command-line tools
//! (HEVC/VVC encoders, a JPEG-XL tool) and the built-in mock codecs in
//! [`mock`], which need nothing outside this crate.

mod dct;
pub mod external;
mod frame;
pub mod mock;

use serde::{Deserialize, Serialize};

pub use frame::{rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, Frame, VideoSequence, MIN_FRAME_SIDE};

use crate::error::{Error, Result};
use external::TemplateVars;

/// Codec tag stored in the container.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum CodecId {
    MockLossy = 0,
    ExternalVideo = 1,
    MockLossless = 2,
    ExternalLossless = 3,
}

impl CodecId {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(CodecId::MockLossy),
            1 => Some(CodecId::ExternalVideo),
            2 => Some(CodecId::MockLossless),
            3 => Some(CodecId::ExternalLossless),
            _ => None,
        }
    }

    pub fn is_lossless(self) -> bool {
        matches!(self, CodecId::MockLossless | CodecId::ExternalLossless)
    }
}

/// Settings for one codec adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodecConfig {
    pub codec_id: CodecId,
    /// QP for external video codecs (0..=63); quality 1..=100 for the mock.
    pub quality: u32,
    /// Encoder command template (external codecs only).
    #[serde(default)]
    pub command_template: Option<String>,
    /// Decoder command template (external codecs only).
    #[serde(default)]
    pub decode_template: Option<String>,
    #[serde(default = "default_preset")]
    pub preset: String,
}

fn default_preset() -> String {
    "medium".to_string()
}

/// Default ffmpeg/x265 commands for HEVC.
pub const HEVC_ENCODE: &str = "ffmpeg -hide_banner -loglevel error -y -f rawvideo -pix_fmt yuv420p -s:v {width}x{height} -r {fps} -i {input} -c:v libx265 -preset {preset} -x265-params qp={qp}:log-level=error -f hevc {output}";
pub const HEVC_DECODE: &str = "ffmpeg -hide_banner -loglevel error -y -f hevc -i {input} -f rawvideo -pix_fmt yuv420p {output}";
/// Default VVenC/VVdeC commands.
pub const VVC_ENCODE: &str = "vvencapp -i {input} -s {width}x{height} -r {fps} --preset {preset} -q {qp} -o {output}";
pub const VVC_DECODE: &str = "vvdecapp -b {input} -o {output}";
/// Default JPEG-XL lossless commands.
pub const JXL_ENCODE: &str = "cjxl {input} {output} -d 0 -e 7 --quiet";
pub const JXL_DECODE: &str = "djxl {input} {output} --quiet";

impl CodecConfig {
    pub fn mock_lossy(quality: u32) -> Self {
        CodecConfig {
            codec_id: CodecId::MockLossy,
            quality,
            command_template: None,
            decode_template: None,
            preset: default_preset(),
        }
    }

    pub fn mock_lossless() -> Self {
        CodecConfig {
            codec_id: CodecId::MockLossless,
            quality: 100,
            command_template: None,
            decode_template: None,
            preset: default_preset(),
        }
    }

    pub fn external_video(encode: &str, decode: &str, qp: u32) -> Self {
        CodecConfig {
            codec_id: CodecId::ExternalVideo,
            quality: qp,
            command_template: Some(encode.to_string()),
            decode_template: Some(decode.to_string()),
            preset: default_preset(),
        }
    }

    pub fn hevc(qp: u32) -> Self {
        Self::external_video(HEVC_ENCODE, HEVC_DECODE, qp)
    }

    pub fn vvc(qp: u32) -> Self {
        Self::external_video(VVC_ENCODE, VVC_DECODE, qp)
    }

    pub fn external_lossless(encode: &str, decode: &str) -> Self {
        CodecConfig {
            codec_id: CodecId::ExternalLossless,
            quality: 0,
            command_template: Some(encode.to_string()),
            decode_template: Some(decode.to_string()),
            preset: default_preset(),
        }
    }

    pub fn jpeg_xl() -> Self {
        Self::external_lossless(JXL_ENCODE, JXL_DECODE)
    }

    pub fn validate(&self) -> Result<()> {
        match self.codec_id {
            CodecId::MockLossy if !(1..=100).contains(&self.quality) => Err(Error::validation(format!(
                "mock quality {} outside 1..=100",
                self.quality
            ))),
            CodecId::ExternalVideo if self.quality > 63 => {
                Err(Error::validation(format!("QP {} outside 0..=63", self.quality)))
            }
            CodecId::ExternalVideo | CodecId::ExternalLossless
                if self.command_template.is_none() || self.decode_template.is_none() =>
            {
                Err(Error::validation("external codec needs encode and decode command templates"))
            }
            _ => Ok(()),
        }
    }

    fn templates(&self) -> Result<(&str, &str)> {
        match (&self.command_template, &self.decode_template) {
            (Some(e), Some(d)) => Ok((e, d)),
            _ => Err(Error::validation("external codec needs encode and decode command templates")),
        }
    }
}

/// Stream shape needed to interpret raw decoder output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamInfo {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    pub fps: f32,
}

impl StreamInfo {
    pub fn of(video: &VideoSequence) -> Self {
        StreamInfo {
            width: video.width(),
            height: video.height(),
            frame_count: video.len(),
            fps: video.fps,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncodedVideo {
    pub bitstream: Vec<u8>,
    /// `8·len(bitstream)` for external codecs, entropy estimate for the mock.
    pub rate_bits: u64,
}

pub fn encode_video(video: &VideoSequence, cfg: &CodecConfig) -> Result<EncodedVideo> {
    cfg.validate()?;
    if video.is_empty() {
        return Err(Error::validation("cannot encode an empty video"));
    }
    match cfg.codec_id {
        CodecId::MockLossy => {
            let enc = mock::encode_lossy(video, cfg.quality)?;
            Ok(EncodedVideo {
                bitstream: enc.bitstream,
                rate_bits: enc.rate_bits,
            })
        }
        CodecId::ExternalVideo => {
            let (template, _) = cfg.templates()?;
            let raw = external::write_yuv420(video)?;
            let dir = external::scratch_dir()?;
            let input = dir.path().join("input.yuv");
            let output = dir.path().join("output.bit");
            external::write_file(&input, &raw)?;
            let args = external::expand_template(
                template,
                &TemplateVars {
                    input: external::path_str(&input)?,
                    output: external::path_str(&output)?,
                    qp: cfg.quality,
                    preset: &cfg.preset,
                    width: video.width(),
                    height: video.height(),
                    fps: video.fps,
                },
            )?;
            external::run_command(&args)?;
            let bitstream = external::read_output(&output)?;
            let rate_bits = 8 * bitstream.len() as u64;
            Ok(EncodedVideo { bitstream, rate_bits })
        }
        other => Err(Error::validation(format!("{other:?} is not a video codec"))),
    }
}

pub fn decode_video(bitstream: &[u8], cfg: &CodecConfig, info: &StreamInfo) -> Result<VideoSequence> {
    let video = match cfg.codec_id {
        CodecId::MockLossy => mock::decode_lossy(bitstream)?,
        CodecId::ExternalVideo => {
            let (_, template) = cfg.templates()?;
            let dir = external::scratch_dir()?;
            let input = dir.path().join("input.bit");
            let output = dir.path().join("output.yuv");
            external::write_file(&input, bitstream)?;
            let args = external::expand_template(
                template,
                &TemplateVars {
                    input: external::path_str(&input)?,
                    output: external::path_str(&output)?,
                    qp: cfg.quality,
                    preset: &cfg.preset,
                    width: info.width,
                    height: info.height,
                    fps: info.fps,
                },
            )?;
            external::run_command(&args)?;
            let raw = external::read_output(&output)?;
            external::read_yuv420(&raw, info.width, info.height, info.fps)?
        }
        other => return Err(Error::validation(format!("{other:?} is not a video codec"))),
    };
    if video.width() != info.width || video.height() != info.height || video.len() != info.frame_count {
        return Err(Error::format(format!(
            "decoded {}x{}x{} but stream metadata says {}x{}x{}",
            video.width(),
            video.height(),
            video.len(),
            info.width,
            info.height,
            info.frame_count
        )));
    }
    Ok(video)
}

pub fn encode_reference(frame: &Frame, cfg: &CodecConfig) -> Result<Vec<u8>> {
    match cfg.codec_id {
        CodecId::MockLossless => Ok(mock::encode_lossless(frame)),
        CodecId::ExternalLossless => {
            let (template, _) = cfg.templates()?;
            let dir = external::scratch_dir()?;
            let input = dir.path().join("reference.png");
            let output = dir.path().join("reference.bin");
            external::write_file(&input, &external::write_png(frame)?)?;
            let args = external::expand_template(
                template,
                &TemplateVars {
                    input: external::path_str(&input)?,
                    output: external::path_str(&output)?,
                    preset: &cfg.preset,
                    width: frame.width(),
                    height: frame.height(),
                    ..Default::default()
                },
            )?;
            external::run_command(&args)?;
            external::read_output(&output)
        }
        other => Err(Error::validation(format!("{other:?} is not a lossless codec"))),
    }
}

pub fn decode_reference(payload: &[u8], cfg: &CodecConfig) -> Result<Frame> {
    match cfg.codec_id {
        CodecId::MockLossless => mock::decode_lossless(payload),
        CodecId::ExternalLossless => {
            let (_, template) = cfg.templates()?;
            let dir = external::scratch_dir()?;
            let input = dir.path().join("reference.bin");
            let output = dir.path().join("reference.png");
            external::write_file(&input, payload)?;
            let args = external::expand_template(
                template,
                &TemplateVars {
                    input: external::path_str(&input)?,
                    output: external::path_str(&output)?,
                    preset: &cfg.preset,
                    ..Default::default()
                },
            )?;
            external::run_command(&args)?;
            external::read_png(&external::read_output(&output)?)
        }
        other => Err(Error::validation(format!("{other:?} is not a lossless codec"))),
    }
}
