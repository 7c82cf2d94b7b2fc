//! Reading and writing videos on disk: YUV4MPEG2 (`.y4m`, 8-bit 4:2:0) and
//! headerless planar 4:2:0 (`.yuv`, shape supplied by the caller).

use std::path::Path;

use crate::codecs::external::{read_yuv420, write_yuv420};
use crate::codecs::VideoSequence;
use crate::error::{Error, Result};

const Y4M_MAGIC: &str = "YUV4MPEG2";

/// Shape of a headerless `.yuv` file.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawShape {
    pub width: usize,
    pub height: usize,
    pub fps: f32,
}

fn fps_ratio(fps: f32) -> (u32, u32) {
    if (fps - fps.round()).abs() < 1e-4 {
        (fps.round() as u32, 1)
    } else {
        ((fps * 1001.0).round() as u32, 1001)
    }
}

pub fn write_y4m(video: &VideoSequence) -> Result<Vec<u8>> {
    let raw = write_yuv420(video)?;
    let (w, h) = (video.width(), video.height());
    let (num, den) = fps_ratio(video.fps);
    let frame_len = w * h * 3 / 2;
    let mut out = format!("{Y4M_MAGIC} W{w} H{h} F{num}:{den} Ip A1:1 C420jpeg\n").into_bytes();
    out.reserve(raw.len() + 6 * video.len());
    for chunk in raw.chunks_exact(frame_len) {
        out.extend_from_slice(b"FRAME\n");
        out.extend_from_slice(chunk);
    }
    Ok(out)
}

fn header_line(bytes: &[u8], at: usize) -> Result<(&str, usize)> {
    let end = bytes[at..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| at + p)
        .ok_or_else(|| Error::format("y4m header line is not terminated"))?;
    let line = std::str::from_utf8(&bytes[at..end]).map_err(|_| Error::format("y4m header is not text"))?;
    Ok((line, end + 1))
}

pub fn read_y4m(bytes: &[u8]) -> Result<VideoSequence> {
    let (line, mut pos) = header_line(bytes, 0)?;
    let mut tokens = line.split(' ');
    if tokens.next() != Some(Y4M_MAGIC) {
        return Err(Error::format("missing YUV4MPEG2 signature"));
    }
    let (mut w, mut h, mut fps) = (0usize, 0usize, 30.0f32);
    for tok in tokens {
        let (tag, val) = tok.split_at(tok.len().min(1));
        let bad = || Error::format(format!("bad y4m header field {tok:?}"));
        match tag {
            "W" => w = val.parse().map_err(|_| bad())?,
            "H" => h = val.parse().map_err(|_| bad())?,
            "F" => {
                let (n, d) = val.split_once(':').ok_or_else(bad)?;
                let (n, d): (f32, f32) = (n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
                if d <= 0.0 || n <= 0.0 {
                    return Err(bad());
                }
                fps = n / d;
            }
            "C" if !val.starts_with("420") => {
                return Err(Error::validation(format!("only 8-bit 4:2:0 y4m is supported, got C{val}")));
            }
            _ => {}
        }
    }
    if w == 0 || h == 0 {
        return Err(Error::format("y4m header lacks width or height"));
    }
    let frame_len = w * h * 3 / 2;
    let mut raw = Vec::new();
    while pos < bytes.len() {
        let (line, next) = header_line(bytes, pos)?;
        if !line.starts_with("FRAME") {
            return Err(Error::format("expected a FRAME marker"));
        }
        let end = next + frame_len;
        if end > bytes.len() {
            return Err(Error::format("truncated y4m frame"));
        }
        raw.extend_from_slice(&bytes[next..end]);
        pos = end;
    }
    read_yuv420(&raw, w, h, fps)
}

/// Reads a video, choosing the format by extension. `.yuv` needs `raw`.
pub fn read_video(path: &Path, raw: Option<RawShape>) -> Result<VideoSequence> {
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("y4m") => read_y4m(&bytes),
        Some("yuv") => {
            let s = raw.ok_or_else(|| Error::validation("raw .yuv input needs a size (WxH)"))?;
            read_yuv420(&bytes, s.width, s.height, s.fps)
        }
        _ => Err(Error::validation(format!("unsupported video file {}", path.display()))),
    }
}

pub fn write_video(path: &Path, video: &VideoSequence) -> Result<()> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("y4m") => write_y4m(video)?,
        Some("yuv") => write_yuv420(video)?,
        _ => return Err(Error::validation(format!("unsupported video file {}", path.display()))),
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codecs::Frame;

    fn clip() -> VideoSequence {
        let frames = (0..3)
            .map(|t| {
                let rgb: Vec<u8> = (0..16 * 12 * 3).map(|i| ((i * 7 + t * 31) % 256) as u8).collect();
                Frame::from_rgb8(16, 12, &rgb).unwrap()
            })
            .collect();
        VideoSequence::new(frames, 25.0).unwrap()
    }

    #[test]
    fn y4m_round_trip_matches_raw_interchange() {
        let v = clip();
        let bytes = write_y4m(&v).unwrap();
        assert!(bytes.starts_with(b"YUV4MPEG2 W16 H12 F25:1"));
        let back = read_y4m(&bytes).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.fps, 25.0);
        let direct = read_yuv420(&write_yuv420(&v).unwrap(), 16, 12, 25.0).unwrap();
        assert_eq!(back, direct);
    }

    #[test]
    fn malformed_inputs() {
        assert!(matches!(read_y4m(b"YUV4MPEG3 W2 H2\n"), Err(Error::Format(_))));
        let mut bytes = write_y4m(&clip()).unwrap();
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(read_y4m(&bytes), Err(Error::Format(_))));
        assert!(matches!(read_y4m(b"YUV4MPEG2 W16 H12 C444\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn fractional_rates() {
        assert_eq!(fps_ratio(29.97), (30000, 1001));
        assert_eq!(fps_ratio(30.0), (30, 1));
    }
}
