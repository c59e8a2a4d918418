//! Multi-channel binary centroid rasters with 1 bit per pixel per channel.

use crate::ingest::SlideNucleiSet;
use crate::types::CellClass;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("channel spec holds duplicate class {0}")]
    DuplicateClass(CellClass),
    #[error("channel count {0} outside 1..=5")]
    InvalidChannelCount(usize),
}

/// Ordered list of cell classes, one per map channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelSpec(Vec<CellClass>);

impl ChannelSpec {
    pub fn new(classes: Vec<CellClass>) -> Result<ChannelSpec, MapError> {
        if classes.is_empty() || classes.len() > 5 {
            return Err(MapError::InvalidChannelCount(classes.len()));
        }
        for (i, class) in classes.iter().enumerate() {
            if classes[..i].contains(class) {
                return Err(MapError::DuplicateClass(*class));
            }
        }
        Ok(ChannelSpec(classes))
    }

    pub fn classes(&self) -> &[CellClass] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn index_of(&self, class: CellClass) -> Option<usize> {
        self.0.iter().position(|c| *c == class)
    }
}

impl Default for ChannelSpec {
    /// The three-channel layout used throughout: neoplastic epithelial,
    /// non-neoplastic epithelial, connective.
    fn default() -> ChannelSpec {
        ChannelSpec(vec![
            CellClass::NeoplasticEpithelial,
            CellClass::NonNeoplasticEpithelial,
            CellClass::Connective,
        ])
    }
}

/// One binary raster, row-major, MSB-first, rows padded to a byte boundary.
///
/// Padding bits are zero by construction; `from_bytes` re-checks them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlane {
    width: u32,
    height: u32,
    bytes: Vec<u8>,
}

impl BitPlane {
    pub fn zeroed(width: u32, height: u32) -> BitPlane {
        assert!(width > 0 && height > 0, "plane dimensions must be nonzero");
        let row = width.div_ceil(8) as usize;
        BitPlane {
            width,
            height,
            bytes: vec![0u8; row * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Bytes per packed row: ceil(width / 8).
    pub fn bytes_per_row(&self) -> usize {
        self.width.div_ceil(8) as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Builds a plane from packed bytes, rejecting set padding bits.
    ///
    /// Returns None when the byte count is wrong or a padding bit is set.
    pub fn from_bytes(width: u32, height: u32, bytes: Vec<u8>) -> Option<BitPlane> {
        if width == 0 || height == 0 {
            return None;
        }
        let row = width.div_ceil(8) as usize;
        if bytes.len() != row * height as usize {
            return None;
        }
        let tail_bits = (width % 8) as u8;
        if tail_bits != 0 {
            let mask = 0xffu8 >> tail_bits;
            for y in 0..height as usize {
                if bytes[y * row + row - 1] & mask != 0 {
                    return None;
                }
            }
        }
        Some(BitPlane {
            width,
            height,
            bytes,
        })
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        let row = self.bytes_per_row();
        let byte = self.bytes[y as usize * row + (x / 8) as usize];
        byte & (0x80 >> (x % 8)) != 0
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        assert!(x < self.width && y < self.height, "bit index out of bounds");
        let row = self.bytes_per_row();
        let idx = y as usize * row + (x / 8) as usize;
        let mask = 0x80 >> (x % 8);
        if value {
            self.bytes[idx] |= mask;
        } else {
            self.bytes[idx] &= !mask;
        }
    }

    /// Number of set bits.
    pub fn count_ones(&self) -> u64 {
        self.bytes.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// Copies the `size`×`size` window at (x0, y0) into a new plane.
    ///
    /// The window must lie fully inside the plane.
    pub fn crop(&self, x0: u32, y0: u32, size: u32) -> BitPlane {
        assert!(
            x0 + size <= self.width && y0 + size <= self.height,
            "crop window out of bounds"
        );
        let mut out = BitPlane::zeroed(size, size);
        for y in 0..size {
            for x in 0..size {
                if self.get(x0 + x, y0 + y) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    /// Bitwise OR with another plane of identical dimensions.
    pub fn union(&self, other: &BitPlane) -> BitPlane {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a | b)
            .collect();
        BitPlane {
            width: self.width,
            height: self.height,
            bytes,
        }
    }
}

/// Multi-channel binary centroid map for one slide (or one tile).
#[derive(Debug, Clone, PartialEq)]
pub struct CellOMap {
    pub slide_id: String,
    pub patient_id: String,
    pub mpp: f64,
    pub width: u32,
    pub height: u32,
    pub channels: ChannelSpec,
    pub planes: Vec<BitPlane>,
}

impl CellOMap {
    /// All-zero map with the given geometry and channel layout.
    pub fn zeroed(
        slide_id: &str,
        patient_id: &str,
        mpp: f64,
        width: u32,
        height: u32,
        channels: ChannelSpec,
    ) -> CellOMap {
        let planes = (0..channels.len())
            .map(|_| BitPlane::zeroed(width, height))
            .collect();
        CellOMap {
            slide_id: slide_id.to_string(),
            patient_id: patient_id.to_string(),
            mpp,
            width,
            height,
            channels,
            planes,
        }
    }

    /// Total set bits across all channels.
    pub fn count_ones(&self) -> u64 {
        self.planes.iter().map(BitPlane::count_ones).sum()
    }

    /// Copies a square window across all channels.
    pub fn crop(&self, x0: u32, y0: u32, size: u32) -> CellOMap {
        CellOMap {
            slide_id: self.slide_id.clone(),
            patient_id: self.patient_id.clone(),
            mpp: self.mpp,
            width: size,
            height: size,
            channels: self.channels.clone(),
            planes: self.planes.iter().map(|p| p.crop(x0, y0, size)).collect(),
        }
    }
}

/// Rasterizes a scaled nuclei set into a multi-channel centroid map.
///
/// Bit (x, y) of channel c is set iff at least one record of class
/// `channels[c]` has floor centroid (x, y). Classes outside the spec are
/// ignored. The set is assumed to be at target resolution already.
pub fn build_cellomap(set: &SlideNucleiSet, channels: &ChannelSpec) -> CellOMap {
    let mut map = CellOMap::zeroed(
        &set.slide_id,
        &set.patient_id,
        set.source_mpp,
        set.width,
        set.height,
        channels.clone(),
    );
    for record in &set.records {
        if let Some(c) = channels.index_of(record.class) {
            let x = record.x.floor() as u32;
            let y = record.y.floor() as u32;
            map.planes[c].set(x.min(set.width - 1), y.min(set.height - 1), true);
        }
    }
    map
}
