//! Adapters around user-supplied external encoder/decoder commands.
//!
//! Templates are split on whitespace and may contain the placeholders
//! `{input}`, `{output}`, `{qp}`, `{preset}`, `{width}`, `{height}` and
//! `{fps}`. Raw video is exchanged as 8-bit planar YCbCr 4:2:0 (full-range
//! BT.601); reference frames as PNG files.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use super::frame::{ycbcr_to_rgb, ColorSpace, Frame, VideoSequence};
use crate::error::{Error, Result};

/// Environment variable whose directory is searched before `PATH`.
pub const TOOLDIR_ENV: &str = "HYBRIDVC_TOOLDIR";

/// Resolves a program name to an executable path.
pub fn resolve_tool(program: &str) -> Result<PathBuf> {
    let candidate = Path::new(program);
    if candidate.components().count() > 1 {
        return if candidate.is_file() {
            Ok(candidate.to_path_buf())
        } else {
            Err(Error::codec(format!("executable {program} not found")))
        };
    }
    let mut dirs: Vec<PathBuf> = Vec::new();
    if let Some(dir) = env::var_os(TOOLDIR_ENV) {
        dirs.extend(env::split_paths(&dir));
    }
    if let Some(path) = env::var_os("PATH") {
        dirs.extend(env::split_paths(&path));
    }
    dirs.into_iter()
        .map(|d| d.join(program))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::codec(format!("executable {program} not found in {TOOLDIR_ENV} or PATH")))
}

/// Values substituted into a command template.
#[derive(Clone, Debug, Default)]
pub struct TemplateVars<'a> {
    pub input: &'a str,
    pub output: &'a str,
    pub qp: u32,
    pub preset: &'a str,
    pub width: usize,
    pub height: usize,
    pub fps: f32,
}

pub fn expand_template(template: &str, vars: &TemplateVars<'_>) -> Result<Vec<String>> {
    let args: Vec<String> = template
        .split_whitespace()
        .map(|tok| {
            tok.replace("{input}", vars.input)
                .replace("{output}", vars.output)
                .replace("{qp}", &vars.qp.to_string())
                .replace("{preset}", vars.preset)
                .replace("{width}", &vars.width.to_string())
                .replace("{height}", &vars.height.to_string())
                .replace("{fps}", &format!("{}", vars.fps))
        })
        .collect();
    if args.is_empty() {
        return Err(Error::validation("empty command template"));
    }
    Ok(args)
}

/// Runs an expanded command, mapping failures to `CodecProcess`.
pub fn run_command(args: &[String]) -> Result<()> {
    let exe = resolve_tool(&args[0])?;
    log::debug!("running {} {:?}", exe.display(), &args[1..]);
    let output = Command::new(&exe)
        .args(&args[1..])
        .output()
        .map_err(|e| Error::codec(format!("failed to start {}: {e}", exe.display())))?;
    if !output.status.success() {
        return Err(Error::CodecProcess {
            message: format!("{} exited with {}", args[0], output.status),
            stderr: String::from_utf8_lossy(&output.stderr).into_owned(),
        });
    }
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Serializes frames as 8-bit planar 4:2:0 (chroma = 2×2 box average).
pub fn write_yuv420(video: &VideoSequence) -> Result<Vec<u8>> {
    let (w, h) = (video.width(), video.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(Error::validation(format!("4:2:0 interchange needs even dimensions, got {w}x{h}")));
    }
    let mut out = Vec::with_capacity(video.len() * w * h * 3 / 2);
    for frame in &video.frames {
        let ycc = frame.to_ycbcr();
        out.extend(ycc.plane(0).iter().map(|&v| to_u8(v)));
        for c in 1..3 {
            let p = ycc.plane(c);
            for y in (0..h).step_by(2) {
                for x in (0..w).step_by(2) {
                    let s = p[y * w + x] + p[y * w + x + 1] + p[(y + 1) * w + x] + p[(y + 1) * w + x + 1];
                    out.push(to_u8(s / 4.0));
                }
            }
        }
    }
    Ok(out)
}

/// Parses 8-bit planar 4:2:0 into RGB frames (nearest chroma upsampling).
pub fn read_yuv420(bytes: &[u8], width: usize, height: usize, fps: f32) -> Result<VideoSequence> {
    if !width.is_multiple_of(2) || !height.is_multiple_of(2) {
        return Err(Error::validation(format!("4:2:0 interchange needs even dimensions, got {width}x{height}")));
    }
    let frame_len = width * height * 3 / 2;
    if bytes.is_empty() || !bytes.len().is_multiple_of(frame_len) {
        return Err(Error::format(format!(
            "raw 4:2:0 size {} is not a multiple of the frame size {frame_len}",
            bytes.len()
        )));
    }
    let (cw, plane) = (width / 2, width * height);
    let mut frames = Vec::new();
    for chunk in bytes.chunks_exact(frame_len) {
        let (luma, chroma) = chunk.split_at(plane);
        let (cb, cr) = chroma.split_at(plane / 4);
        let mut data = vec![0.0f32; plane * 3];
        for y in 0..height {
            for x in 0..width {
                let ci = (y / 2) * cw + x / 2;
                let rgb = ycbcr_to_rgb([
                    luma[y * width + x] as f32 / 255.0,
                    cb[ci] as f32 / 255.0,
                    cr[ci] as f32 / 255.0,
                ]);
                for c in 0..3 {
                    data[c * plane + y * width + x] = rgb[c].clamp(0.0, 1.0);
                }
            }
        }
        frames.push(Frame::new(width, height, data, ColorSpace::Rgb, 8)?);
    }
    VideoSequence::new(frames, fps)
}

/// Encodes a frame as PNG (8 or 16 bit RGB).
pub fn write_png(frame: &Frame) -> Result<Vec<u8>> {
    let rgb = frame.to_rgb();
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, frame.width() as u32, frame.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        let wide = frame.bit_depth() > 8;
        enc.set_depth(if wide { png::BitDepth::Sixteen } else { png::BitDepth::Eight });
        let mut writer = enc.write_header().map_err(|e| Error::format(format!("png: {e}")))?;
        let plane = frame.width() * frame.height();
        let q = Frame::new(frame.width(), frame.height(), rgb.data().to_vec(), ColorSpace::Rgb, frame.bit_depth())?
            .quantized();
        let mut bytes = Vec::with_capacity(plane * 3 * 2);
        for i in 0..plane {
            for c in 0..3 {
                let s = q[c * plane + i];
                if wide {
                    bytes.extend_from_slice(&s.to_be_bytes());
                } else {
                    bytes.push(s as u8);
                }
            }
        }
        writer.write_image_data(&bytes).map_err(|e| Error::format(format!("png: {e}")))?;
    }
    Ok(buf)
}

pub fn read_png(bytes: &[u8]) -> Result<Frame> {
    let mut decoder = png::Decoder::new(bytes);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| Error::format(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::format(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        other => return Err(Error::format(format!("unsupported png color type {other:?}"))),
    };
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let max = if wide { 65535.0 } else { 255.0 };
    let plane = w * h;
    let mut data = vec![0.0f32; plane * 3];
    for i in 0..plane {
        for c in 0..3 {
            let src = if channels >= 3 { c } else { 0 };
            let idx = i * channels + src;
            let v = if wide {
                u16::from_be_bytes([buf[2 * idx], buf[2 * idx + 1]]) as f32
            } else {
                buf[idx] as f32
            };
            data[c * plane + i] = v / max;
        }
    }
    Frame::new(w, h, data, ColorSpace::Rgb, if wide { 16 } else { 8 })
}

/// Work directory for one external invocation.
pub(crate) fn scratch_dir() -> Result<tempfile::TempDir> {
    Ok(tempfile::Builder::new().prefix("hybridvc-").tempdir()?)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn read_output(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::codec(format!("external tool produced no output at {}: {e}", path.display())))
}

pub(crate) fn path_str(p: &Path) -> Result<&str> {
    p.to_str().ok_or_else(|| Error::validation("non-UTF-8 temp path"))
}
