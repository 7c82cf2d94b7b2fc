//! Built-in deterministic codecs used in place of external tools.
//!
//! The lossy codec is a per-frame 8×8 block DCT with a uniform quantizer
//! applied to full-range YCbCr planes (8-bit sample scale). Reconstructed
//! planes are rounded to 8 bits before conversion back to RGB, like the
//! output of a real 8-bit decoder. The lossless codec stores left-predicted
//! samples behind deflate.

use std::io::{Read, Write};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use super::dct::{self, BLOCK};
use super::frame::{ColorSpace, Frame, VideoSequence};
use crate::error::{Error, Result};

const LOSSY_MAGIC: &[u8; 4] = b"HVML";
const LOSSLESS_MAGIC: &[u8; 4] = b"HVLL";
const MOCK_VERSION: u8 = 1;

/// Quantizer step (8-bit sample units) for a mock quality in 1..=100.
pub fn quant_step(quality: u32) -> f64 {
    2f64.powf((100.0 - quality as f64) / 12.0).clamp(1.0 / 256.0, 64.0)
}

fn to_ycbcr255(frame: &Frame) -> [Vec<f64>; 3] {
    let rgb = frame.to_rgb();
    let (r, g, b) = (rgb.plane(0), rgb.plane(1), rgb.plane(2));
    let n = r.len();
    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n {
        let (r, g, b) = (r[i] as f64 * 255.0, g[i] as f64 * 255.0, b[i] as f64 * 255.0);
        out[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
        out[1][i] = 128.0 - 0.168_736 * r - 0.331_264 * g + 0.5 * b;
        out[2][i] = 128.0 + 0.5 * r - 0.418_688 * g - 0.081_312 * b;
    }
    out
}

fn from_ycbcr255(planes: &[Vec<f64>; 3], width: usize, height: usize) -> Result<Frame> {
    let n = width * height;
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        let y = planes[0][i];
        let cb = planes[1][i] - 128.0;
        let cr = planes[2][i] - 128.0;
        let rgb = [y + 1.402 * cr, y - 0.344_136 * cb - 0.714_136 * cr, y + 1.772 * cb];
        for c in 0..3 {
            data[c * n + i] = (rgb[c] / 255.0).clamp(0.0, 1.0) as f32;
        }
    }
    Frame::new(width, height, data, ColorSpace::Rgb, 8)
}

fn block_grid(width: usize, height: usize) -> (usize, usize) {
    (width.div_ceil(BLOCK), height.div_ceil(BLOCK))
}

/// Quantized coefficients of one plane, block by block in zig-zag order.
fn quantize_plane(plane: &[f64], width: usize, height: usize, step: f64, out: &mut Vec<i32>) {
    let (bw, bh) = block_grid(width, height);
    let zz = dct::zigzag();
    let mut block = [0.0; 64];
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..BLOCK {
                let sy = (by * BLOCK + y).min(height - 1);
                for x in 0..BLOCK {
                    let sx = (bx * BLOCK + x).min(width - 1);
                    block[y * BLOCK + x] = plane[sy * width + sx];
                }
            }
            let coef = dct::forward(&block);
            out.extend(zz.iter().map(|&i| (coef[i] / step).round() as i32));
        }
    }
}

fn dequantize_plane(symbols: &[i32], width: usize, height: usize, step: f64) -> Vec<f64> {
    let (bw, _) = block_grid(width, height);
    let zz = dct::zigzag();
    let mut plane = vec![0.0; width * height];
    for (bi, chunk) in symbols.chunks_exact(64).enumerate() {
        let (by, bx) = (bi / bw, bi % bw);
        let mut coef = [0.0; 64];
        for (k, &q) in chunk.iter().enumerate() {
            coef[zz[k]] = q as f64 * step;
        }
        let px = dct::inverse(&coef);
        for y in 0..BLOCK {
            let sy = by * BLOCK + y;
            if sy >= height {
                break;
            }
            for x in 0..BLOCK {
                let sx = bx * BLOCK + x;
                if sx >= width {
                    break;
                }
                plane[sy * width + sx] = px[y * BLOCK + x].round().clamp(0.0, 255.0);
            }
        }
    }
    plane
}

/// Zero-order Shannon entropy of a symbol stream times its length, in bits.
pub fn entropy_bits(symbols: &[i32]) -> u64 {
    if symbols.is_empty() {
        return 0;
    }
    let mut counts = std::collections::HashMap::new();
    for &s in symbols {
        *counts.entry(s).or_insert(0u64) += 1;
    }
    let n = symbols.len() as f64;
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    (h * n).ceil() as u64
}

fn put_varint(out: &mut Vec<u8>, v: i32) {
    let mut z = ((v << 1) ^ (v >> 31)) as u32;
    loop {
        let byte = (z & 0x7f) as u8;
        z >>= 7;
        if z == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn get_varint(buf: &[u8], pos: &mut usize) -> Result<i32> {
    let mut z: u32 = 0;
    for shift in (0..35).step_by(7) {
        let byte = *buf.get(*pos).ok_or_else(|| Error::format("truncated coefficient stream"))?;
        *pos += 1;
        z |= ((byte & 0x7f) as u32) << shift;
        if byte & 0x80 == 0 {
            return Ok(((z >> 1) as i32) ^ -((z & 1) as i32));
        }
    }
    Err(Error::format("varint too long"))
}

fn deflate(bytes: &[u8]) -> Vec<u8> {
    let mut enc = ZlibEncoder::new(Vec::new(), Compression::best());
    enc.write_all(bytes).expect("writing to a Vec cannot fail");
    enc.finish().expect("writing to a Vec cannot fail")
}

fn inflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    ZlibDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::format(format!("corrupt deflate payload: {e}")))?;
    Ok(out)
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().expect("4-byte slice"))
}

/// Output of the mock lossy encoder.
#[derive(Clone, Debug)]
pub struct MockEncoded {
    pub bitstream: Vec<u8>,
    /// Entropy estimate of the quantized symbol stream.
    pub rate_bits: u64,
}

pub fn encode_lossy(video: &VideoSequence, quality: u32) -> Result<MockEncoded> {
    if !(1..=100).contains(&quality) {
        return Err(Error::validation(format!("mock quality {quality} outside 1..=100")));
    }
    let step = quant_step(quality);
    let (w, h) = (video.width(), video.height());
    let mut symbols = Vec::new();
    for frame in &video.frames {
        for plane in to_ycbcr255(frame).iter() {
            quantize_plane(plane, w, h, step, &mut symbols);
        }
    }
    let mut raw = Vec::with_capacity(symbols.len());
    for &s in &symbols {
        put_varint(&mut raw, s);
    }
    let mut bitstream = Vec::with_capacity(24 + raw.len() / 2);
    bitstream.extend_from_slice(LOSSY_MAGIC);
    bitstream.push(MOCK_VERSION);
    bitstream.push(quality as u8);
    bitstream.extend_from_slice(&[0, 0]);
    bitstream.extend_from_slice(&(w as u32).to_le_bytes());
    bitstream.extend_from_slice(&(h as u32).to_le_bytes());
    bitstream.extend_from_slice(&(video.len() as u32).to_le_bytes());
    bitstream.extend_from_slice(&video.fps.to_le_bytes());
    bitstream.extend_from_slice(&deflate(&raw));
    Ok(MockEncoded {
        bitstream,
        rate_bits: entropy_bits(&symbols),
    })
}

pub fn decode_lossy(bitstream: &[u8]) -> Result<VideoSequence> {
    if bitstream.len() < 24 || &bitstream[..4] != LOSSY_MAGIC {
        return Err(Error::format("not a mock lossy bitstream"));
    }
    if bitstream[4] != MOCK_VERSION {
        return Err(Error::format(format!("unsupported mock lossy version {}", bitstream[4])));
    }
    let quality = bitstream[5] as u32;
    if !(1..=100).contains(&quality) {
        return Err(Error::format(format!("bad quality byte {quality}")));
    }
    let w = read_u32(bitstream, 8) as usize;
    let h = read_u32(bitstream, 12) as usize;
    let count = read_u32(bitstream, 16) as usize;
    let fps = f32::from_le_bytes(bitstream[20..24].try_into().expect("4-byte slice"));
    if w == 0 || h == 0 || count == 0 {
        return Err(Error::format("empty mock lossy stream"));
    }
    let raw = inflate(&bitstream[24..])?;
    let step = quant_step(quality);
    let (bw, bh) = block_grid(w, h);
    let per_plane = bw * bh * 64;
    let mut pos = 0;
    let mut frames = Vec::with_capacity(count);
    let mut symbols = vec![0i32; per_plane];
    for _ in 0..count {
        let mut planes: [Vec<f64>; 3] = Default::default();
        for plane in planes.iter_mut() {
            for s in symbols.iter_mut() {
                *s = get_varint(&raw, &mut pos)?;
            }
            *plane = dequantize_plane(&symbols, w, h, step);
        }
        frames.push(from_ycbcr255(&planes, w, h)?);
    }
    if pos != raw.len() {
        return Err(Error::format("trailing data in mock lossy stream"));
    }
    VideoSequence::new(frames, fps)
}

/// Encodes a frame losslessly at its own bit depth.
pub fn encode_lossless(frame: &Frame) -> Vec<u8> {
    let (w, h) = (frame.width(), frame.height());
    let depth = frame.bit_depth();
    let mask: u32 = (1u32 << depth) - 1;
    let samples = frame.quantized();
    let wide = depth > 8;
    let mut residual = Vec::with_capacity(samples.len() * if wide { 2 } else { 1 });
    for row in samples.chunks_exact(w) {
        let mut prev = 0u32;
        for &s in row {
            let d = (s as u32).wrapping_sub(prev) & mask;
            prev = s as u32;
            if wide {
                residual.extend_from_slice(&(d as u16).to_le_bytes());
            } else {
                residual.push(d as u8);
            }
        }
    }
    let mut out = Vec::with_capacity(16 + residual.len() / 2);
    out.extend_from_slice(LOSSLESS_MAGIC);
    out.push(MOCK_VERSION);
    out.push(depth);
    out.push(Frame::CHANNELS as u8);
    out.push(match frame.color_space() {
        ColorSpace::Rgb => 0,
        ColorSpace::YCbCr444 => 1,
    });
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&deflate(&residual));
    out
}

pub fn decode_lossless(payload: &[u8]) -> Result<Frame> {
    if payload.len() < 16 || &payload[..4] != LOSSLESS_MAGIC {
        return Err(Error::format("not a mock lossless payload"));
    }
    if payload[4] != MOCK_VERSION {
        return Err(Error::format(format!("unsupported mock lossless version {}", payload[4])));
    }
    let depth = payload[5];
    if !(1..=16).contains(&depth) || payload[6] as usize != Frame::CHANNELS {
        return Err(Error::format("bad mock lossless header"));
    }
    let color = match payload[7] {
        0 => ColorSpace::Rgb,
        1 => ColorSpace::YCbCr444,
        other => return Err(Error::format(format!("unknown color space tag {other}"))),
    };
    let w = read_u32(payload, 8) as usize;
    let h = read_u32(payload, 12) as usize;
    let residual = inflate(&payload[16..])?;
    let wide = depth > 8;
    let count = w * h * Frame::CHANNELS;
    if residual.len() != count * if wide { 2 } else { 1 } {
        return Err(Error::format("mock lossless payload has wrong sample count"));
    }
    let mask: u32 = (1u32 << depth) - 1;
    let max = mask as f32;
    let mut data = Vec::with_capacity(count);
    let mut prev = 0u32;
    for i in 0..count {
        if i % w == 0 {
            prev = 0;
        }
        let d = if wide {
            u16::from_le_bytes([residual[2 * i], residual[2 * i + 1]]) as u32
        } else {
            residual[i] as u32
        };
        let s = (prev + d) & mask;
        prev = s;
        data.push(s as f32 / max);
    }
    Frame::new(w, h, data, color, depth)
}
