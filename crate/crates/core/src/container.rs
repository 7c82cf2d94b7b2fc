//! The `.hvc` hybrid container: one lossy video bitstream plus losslessly
//! coded reference frames keyed by frame index.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HVC1" | version u8 | lossy_codec_id u8 | ref_codec_default u8 | reserved u8
//! | width u32 | height u32 | frame_count u32 | ref_count u16
//! | ref_count × (frame_index u32, codec_id u8, reserved [u8; 3], offset u64, length u64)
//! | lossy_len u64 | lossy bytes | reference payloads
//! ```
//!
//! Reference offsets are measured from the start of the file.

use std::collections::HashSet;

use serde::Serialize;

use crate::codecs::CodecId;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HVC1";
pub const VERSION: u8 = 1;

const HEADER_LEN: usize = 22;
const ENTRY_LEN: usize = 24;

/// Bytes of framing for a container holding `ref_count` references.
pub fn framing_bytes(ref_count: usize) -> usize {
    HEADER_LEN + ENTRY_LEN * ref_count + 8
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceEntry {
    pub frame_index: u32,
    pub codec_id: CodecId,
    pub payload: Vec<u8>,
}

/// Stream-level metadata carried in the container header.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StreamMeta {
    pub lossy_codec_id: CodecId,
    pub ref_codec_default: CodecId,
    pub width: u32,
    pub height: u32,
    pub frame_count: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HybridContainer {
    pub version: u8,
    pub meta: StreamMeta,
    pub lossy_bitstream: Vec<u8>,
    /// Sorted ascending by `frame_index`.
    pub references: Vec<ReferenceEntry>,
}

impl HybridContainer {
    /// The reference applicable to frame `t`: the latest one at or before it.
    pub fn reference_for(&self, t: u32) -> Option<&ReferenceEntry> {
        self.references.iter().rev().find(|r| r.frame_index <= t)
    }

    pub fn reference_bytes(&self) -> usize {
        self.references.iter().map(|r| r.payload.len()).sum()
    }
}

fn validate(references: &[ReferenceEntry], meta: &StreamMeta) -> Result<()> {
    if meta.frame_count == 0 {
        return Err(Error::validation("frame_count must be at least 1"));
    }
    if references.is_empty() {
        return Err(Error::validation("a container needs at least one reference frame"));
    }
    if references.len() > u16::MAX as usize {
        return Err(Error::validation("too many references"));
    }
    let mut seen = HashSet::new();
    for r in references {
        if r.frame_index >= meta.frame_count {
            return Err(Error::validation(format!(
                "reference index {} out of range for {} frames",
                r.frame_index, meta.frame_count
            )));
        }
        if !seen.insert(r.frame_index) {
            return Err(Error::validation(format!("duplicate reference index {}", r.frame_index)));
        }
        if r.payload.is_empty() {
            return Err(Error::validation(format!("empty payload for reference {}", r.frame_index)));
        }
        if !r.codec_id.is_lossless() {
            return Err(Error::validation(format!("reference {} uses a lossy codec", r.frame_index)));
        }
    }
    Ok(())
}

/// Serializes a container. References are written in ascending index order.
pub fn mux(lossy_bitstream: &[u8], references: &[ReferenceEntry], meta: &StreamMeta) -> Result<Vec<u8>> {
    validate(references, meta)?;
    let mut refs: Vec<&ReferenceEntry> = references.iter().collect();
    refs.sort_by_key(|r| r.frame_index);

    let payload_total: usize = refs.iter().map(|r| r.payload.len()).sum();
    let framing = framing_bytes(refs.len());
    let mut out = Vec::with_capacity(framing + lossy_bitstream.len() + payload_total);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(meta.lossy_codec_id as u8);
    out.push(meta.ref_codec_default as u8);
    out.push(0);
    out.extend_from_slice(&meta.width.to_le_bytes());
    out.extend_from_slice(&meta.height.to_le_bytes());
    out.extend_from_slice(&meta.frame_count.to_le_bytes());
    out.extend_from_slice(&(refs.len() as u16).to_le_bytes());

    let mut offset = (framing + lossy_bitstream.len()) as u64;
    for r in &refs {
        out.extend_from_slice(&r.frame_index.to_le_bytes());
        out.push(r.codec_id as u8);
        out.extend_from_slice(&[0; 3]);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u64).to_le_bytes());
        offset += r.payload.len() as u64;
    }
    out.extend_from_slice(&(lossy_bitstream.len() as u64).to_le_bytes());
    out.extend_from_slice(lossy_bitstream);
    for r in &refs {
        out.extend_from_slice(&r.payload);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format(format!("truncated container at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn codec(tag: u8) -> Result<CodecId> {
    CodecId::from_u8(tag).ok_or_else(|| Error::format(format!("unknown codec id {tag}")))
}

fn slice_at(buf: &[u8], offset: u64, len: u64) -> Result<&[u8]> {
    let start = usize::try_from(offset).map_err(|_| Error::format("offset overflow"))?;
    let len = usize::try_from(len).map_err(|_| Error::format("length overflow"))?;
    start
        .checked_add(len)
        .filter(|&end| end <= buf.len())
        .map(|end| &buf[start..end])
        .ok_or_else(|| Error::format(format!("payload at {start}+{len} exceeds file size {}", buf.len())))
}

/// Parses a container produced by [`mux`].
pub fn demux(bytes: &[u8]) -> Result<HybridContainer> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::format("file too short for magic"))? != MAGIC {
        return Err(Error::format("bad container magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported container version {version}")));
    }
    let lossy_codec_id = codec(r.u8()?)?;
    let ref_codec_default = codec(r.u8()?)?;
    let _reserved = r.u8()?;
    let meta = StreamMeta {
        lossy_codec_id,
        ref_codec_default,
        width: r.u32()?,
        height: r.u32()?,
        frame_count: r.u32()?,
    };
    let ref_count = r.u16()? as usize;
    let mut table = Vec::with_capacity(ref_count);
    for _ in 0..ref_count {
        let frame_index = r.u32()?;
        let codec_id = codec(r.u8()?)?;
        r.take(3)?;
        let offset = r.u64()?;
        let length = r.u64()?;
        table.push((frame_index, codec_id, offset, length));
    }
    let lossy_len = usize::try_from(r.u64()?).map_err(|_| Error::format("lossy length overflow"))?;
    let lossy_bitstream = r.take(lossy_len)?.to_vec();

    let mut references = Vec::with_capacity(ref_count);
    for (frame_index, codec_id, offset, length) in table {
        references.push(ReferenceEntry {
            frame_index,
            codec_id,
            payload: slice_at(bytes, offset, length)?.to_vec(),
        });
    }
    if references.windows(2).any(|w| w[0].frame_index >= w[1].frame_index) {
        return Err(Error::format("reference table is not strictly ascending"));
    }
    validate(&references, &meta).map_err(|e| Error::format(format!("invalid container: {e}")))?;
    Ok(HybridContainer {
        version,
        meta,
        lossy_bitstream,
        references,
    })
}
