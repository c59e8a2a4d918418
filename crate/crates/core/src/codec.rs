//! CLOM container: bit-exact serialization of cell organization maps.
//!
//! Layout (little-endian): magic "CLOM", version u8 = 1, channel_count u8,
//! reserved u16 = 0, width u32, height u32, mpp_micro u32 (mpp x 1000,
//! rounded), channel class codes u8 x channel_count, then one bit-packed
//! plane per channel (row-major, MSB-first, rows zero-padded to a byte).
//! The container carries no slide identity; decoded maps have empty ids.

use crate::map::{BitPlane, CellOMap, ChannelSpec};
use crate::types::CellClass;
use thiserror::Error;

pub const CLOM_MAGIC: [u8; 4] = *b"CLOM";
pub const CLOM_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u8),
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("nonzero padding bits in channel {channel}")]
    NonzeroPadding { channel: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
}

/// Header length in bytes for a given channel count.
pub fn header_len(channel_count: usize) -> usize {
    20 + channel_count
}

/// Packed payload length in bytes for one plane.
pub fn plane_len(width: u32, height: u32) -> usize {
    width.div_ceil(8) as usize * height as usize
}

/// Serializes a map to the CLOM container.
///
/// Output length is exactly `header_len(C) + C * plane_len(w, h)`.
pub fn encode(map: &CellOMap) -> Vec<u8> {
    let c = map.channels.len();
    let mut out = Vec::with_capacity(header_len(c) + c * plane_len(map.width, map.height));
    out.extend_from_slice(&CLOM_MAGIC);
    out.push(CLOM_VERSION);
    out.push(c as u8);
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&map.width.to_le_bytes());
    out.extend_from_slice(&map.height.to_le_bytes());
    let mpp_micro = (map.mpp * 1000.0).round() as u32;
    out.extend_from_slice(&mpp_micro.to_le_bytes());
    for class in map.channels.classes() {
        out.push(class.code());
    }
    for plane in &map.planes {
        out.extend_from_slice(plane.as_bytes());
    }
    out
}

/// Decodes a CLOM container. Exact inverse of `encode` up to slide identity,
/// which the container does not carry (ids come back empty).
pub fn decode(bytes: &[u8]) -> Result<CellOMap, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::BadMagic);
    }
    if bytes[..4] != CLOM_MAGIC {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < header_len(0) {
        return Err(CodecError::TruncatedPayload {
            expected: header_len(0),
            found: bytes.len(),
        });
    }
    let version = bytes[4];
    if version != CLOM_VERSION {
        return Err(CodecError::UnsupportedVersion(version));
    }
    let channel_count = bytes[5] as usize;
    let width = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    let mpp_micro = u32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if width == 0 || height == 0 {
        return Err(CodecError::MalformedHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    let header = header_len(channel_count);
    if bytes.len() < header {
        return Err(CodecError::TruncatedPayload {
            expected: header,
            found: bytes.len(),
        });
    }
    let mut classes = Vec::with_capacity(channel_count);
    for i in 0..channel_count {
        let code = bytes[20 + i];
        classes.push(CellClass::from_code(code).ok_or_else(|| {
            CodecError::MalformedHeader(format!("unknown class code {code}"))
        })?);
    }
    let channels = ChannelSpec::new(classes)
        .map_err(|e| CodecError::MalformedHeader(e.to_string()))?;

    let plane = plane_len(width, height);
    let expected = header + channel_count * plane;
    if bytes.len() < expected {
        return Err(CodecError::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(CodecError::MalformedHeader(format!(
            "{} trailing bytes",
            bytes.len() - expected
        )));
    }

    let mut planes = Vec::with_capacity(channel_count);
    for c in 0..channel_count {
        let start = header + c * plane;
        let data = bytes[start..start + plane].to_vec();
        let parsed = BitPlane::from_bytes(width, height, data)
            .ok_or(CodecError::NonzeroPadding { channel: c })?;
        planes.push(parsed);
    }

    Ok(CellOMap {
        slide_id: String::new(),
        patient_id: String::new(),
        mpp: mpp_micro as f64 / 1000.0,
        width,
        height,
        channels,
        planes,
    })
}
