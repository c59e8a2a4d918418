//! Shannon entropy of symbol rasters and compression accounting.

use crate::codec::encode;
use crate::map::CellOMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropyError {
    #[error("entropy of an empty tile is undefined")]
    EmptyTile,
}

/// Entropy measurement over one symbol raster.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyReport {
    /// First-order Shannon entropy in bits per pixel.
    pub bits_per_pixel: f64,
    /// Symbol counts, indexed by symbol value; sums to the pixel count.
    pub symbol_histogram: Vec<u64>,
}

/// Computes first-order Shannon entropy of a symbol raster.
///
/// `bits_per_pixel = -sum_v (n_v/N) log2(n_v/N)` over nonzero counts.
/// Every symbol must be below `alphabet_size` (caller contract).
pub fn shannon_entropy(symbols: &[u8], alphabet_size: usize) -> Result<EntropyReport, EntropyError> {
    if symbols.is_empty() {
        return Err(EntropyError::EmptyTile);
    }
    assert!(
        alphabet_size >= 1 && alphabet_size <= 256,
        "alphabet size must be in 1..=256"
    );
    let mut histogram = vec![0u64; alphabet_size];
    for &s in symbols {
        assert!(
            (s as usize) < alphabet_size,
            "symbol {s} outside alphabet of size {alphabet_size}"
        );
        histogram[s as usize] += 1;
    }
    let n = symbols.len() as f64;
    let bits = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0);
    Ok(EntropyReport {
        bits_per_pixel: bits,
        symbol_histogram: histogram,
    })
}

/// Per-pixel composite symbols of a map: bit c of the symbol is channel c's
/// bit at that pixel, so the alphabet is `2^channel_count`.
pub fn composite_symbols(map: &CellOMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(map.width as usize * map.height as usize);
    for y in 0..map.height {
        for x in 0..map.width {
            let mut symbol = 0u8;
            for (c, plane) in map.planes.iter().enumerate() {
                if plane.get(x, y) {
                    symbol |= 1 << c;
                }
            }
            out.push(symbol);
        }
    }
    out
}

/// Entropy of a map under the composite-symbol alphabet.
pub fn map_entropy(map: &CellOMap) -> Result<EntropyReport, EntropyError> {
    shannon_entropy(&composite_symbols(map), 1 << map.channels.len())
}

/// Size ratio of a reference raster to this map's encoded container.
///
/// `ratio = (reference_bits_per_pixel * reference_pixel_count) / (8 * encoded bytes)`.
/// The encoded length includes the container header.
pub fn compression_ratio(
    map: &CellOMap,
    reference_bits_per_pixel: f64,
    reference_pixel_count: u64,
) -> f64 {
    let encoded = encode(map).len();
    (reference_bits_per_pixel * reference_pixel_count as f64) / (8.0 * encoded as f64)
}
