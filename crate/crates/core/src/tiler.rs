//! Tiling of cell organization maps and region-based pattern labeling.

use crate::map::CellOMap;
use crate::types::PatternClass;
use serde::Deserialize;
use std::path::Path;
use thiserror::Error;

/// Tile sizes the pipeline configuration may select.
pub const ALLOWED_TILE_SIZES: [u32; 4] = [224, 256, 448, 1024];

/// Default purity threshold for tile labeling.
pub const DEFAULT_MIN_OVERLAP: f64 = 0.95;

/// Default sparse-tile threshold, calibrated for 448x448 tiles.
pub const DEFAULT_MIN_NUCLEI: u64 = 25;

#[derive(Debug, Error)]
pub enum TilerError {
    #[error("tile size {size} exceeds map dimensions {width}x{height}")]
    TileTooLarge { size: u32, width: u32, height: u32 },
    #[error("malformed annotation: {0}")]
    MalformedAnnotation(String),
}

/// One polygonal region labeled with a growth pattern, at map resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionAnnotation {
    pub polygon: Vec<(f64, f64)>,
    pub label: PatternClass,
}

/// All annotated regions of one slide.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideAnnotations {
    pub slide_id: String,
    pub regions: Vec<RegionAnnotation>,
}

/// A square window into a map, before labeling.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub slide_id: String,
    pub patient_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub pixels: CellOMap,
}

/// A tile that passed the purity rule and carries its pattern label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledTile {
    pub slide_id: String,
    pub patient_id: String,
    pub x: u32,
    pub y: u32,
    pub size: u32,
    pub label: PatternClass,
    pub pixels: CellOMap,
}

/// Cuts a map into full `size`x`size` windows on a `stride` grid.
///
/// Origins are (i*stride, j*stride) in row-major order; windows that would
/// cross the map boundary are discarded.
pub fn tile_map(map: &CellOMap, size: u32, stride: u32) -> Result<Vec<Tile>, TilerError> {
    assert!(stride >= 1, "stride must be at least 1");
    assert!(size >= 1, "tile size must be at least 1");
    if size > map.width || size > map.height {
        return Err(TilerError::TileTooLarge {
            size,
            width: map.width,
            height: map.height,
        });
    }
    let mut tiles = Vec::new();
    let mut y = 0u32;
    while y + size <= map.height {
        let mut x = 0u32;
        while x + size <= map.width {
            tiles.push(Tile {
                slide_id: map.slide_id.clone(),
                patient_id: map.patient_id.clone(),
                x,
                y,
                size,
                pixels: map.crop(x, y, size),
            });
            x += stride;
        }
        y += stride;
    }
    Ok(tiles)
}

/// Signed polygon area by the shoelace formula (positive magnitude).
fn polygon_area(vertices: &[(f64, f64)]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..vertices.len() {
        let (x0, y0) = vertices[i];
        let (x1, y1) = vertices[(i + 1) % vertices.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Clips a polygon to an axis-aligned rectangle (Sutherland-Hodgman).
fn clip_to_rect(
    vertices: &[(f64, f64)],
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
) -> Vec<(f64, f64)> {
    // inside tests for the four half-planes, in clip order
    let edges: [(/*inside*/ fn(f64, f64, f64) -> bool, /*bound*/ f64, /*vertical*/ bool); 4] = [
        (|v, _, b| v >= b, x0, true),
        (|v, _, b| v <= b, x1, true),
        (|v, _, b| v >= b, y0, false),
        (|v, _, b| v <= b, y1, false),
    ];
    let mut current = vertices.to_vec();
    for (inside, bound, vertical) in edges {
        if current.is_empty() {
            break;
        }
        let mut next = Vec::with_capacity(current.len() + 4);
        for i in 0..current.len() {
            let a = current[i];
            let b = current[(i + 1) % current.len()];
            let (va, vb) = if vertical { (a.0, b.0) } else { (a.1, b.1) };
            let a_in = inside(va, 0.0, bound);
            let b_in = inside(vb, 0.0, bound);
            if a_in != b_in {
                // intersection of segment a-b with the clip line
                let t = (bound - va) / (vb - va);
                let point = if vertical {
                    (bound, a.1 + t * (b.1 - a.1))
                } else {
                    (a.0 + t * (b.0 - a.0), bound)
                };
                next.push(point);
            }
            if b_in {
                next.push(b);
            }
        }
        current = next;
    }
    current
}

/// Area of `polygon` intersected with the square tile at (x, y).
pub fn overlap_area(polygon: &[(f64, f64)], x: u32, y: u32, size: u32) -> f64 {
    let clipped = clip_to_rect(
        polygon,
        x as f64,
        y as f64,
        (x + size) as f64,
        (y + size) as f64,
    );
    polygon_area(&clipped)
}

/// Assigns pattern labels to tiles by the purity rule.
///
/// A tile gets label L iff regions labeled L cover at least `min_overlap`
/// of its area and no other label covers more than `1 - min_overlap`.
/// Tiles with no qualifying label are dropped. Regions sharing a label are
/// assumed disjoint; their clipped areas are summed.
pub fn label_tiles(
    tiles: &[Tile],
    annotations: &[RegionAnnotation],
    min_overlap: f64,
) -> Vec<LabeledTile> {
    assert!(
        min_overlap > 0.5 && min_overlap <= 1.0,
        "min_overlap must be in (0.5, 1.0]"
    );
    let mut out = Vec::new();
    for tile in tiles {
        let tile_area = (tile.size as f64) * (tile.size as f64);
        let mut area_by_label = [0.0f64; crate::types::PATTERN_COUNT];
        for region in annotations {
            let a = overlap_area(&region.polygon, tile.x, tile.y, tile.size);
            area_by_label[region.label.index()] += a;
        }
        let winner = PatternClass::ALL.iter().copied().find(|label| {
            let own = area_by_label[label.index()] / tile_area;
            if own < min_overlap {
                return false;
            }
            PatternClass::ALL.iter().all(|other| {
                other == label
                    || area_by_label[other.index()] / tile_area <= (1.0 - min_overlap) + 1e-12
            })
        });
        if let Some(label) = winner {
            out.push(LabeledTile {
                slide_id: tile.slide_id.clone(),
                patient_id: tile.patient_id.clone(),
                x: tile.x,
                y: tile.y,
                size: tile.size,
                label,
                pixels: tile.pixels.clone(),
            });
        }
    }
    out
}

/// Keeps tiles whose total set-bit count across channels is at least `min_nuclei`.
pub fn filter_sparse_tiles(tiles: Vec<Tile>, min_nuclei: u64) -> Vec<Tile> {
    tiles
        .into_iter()
        .filter(|t| t.pixels.count_ones() >= min_nuclei)
        .collect()
}

#[derive(Deserialize)]
struct RawRegion {
    label: String,
    polygon: Vec<(f64, f64)>,
}

#[derive(Deserialize)]
struct RawAnnotations {
    slide_id: String,
    regions: Vec<RawRegion>,
}

/// Parses an annotations JSON document.
pub fn parse_annotations_json(text: &str) -> Result<SlideAnnotations, TilerError> {
    let raw: RawAnnotations =
        serde_json::from_str(text).map_err(|e| TilerError::MalformedAnnotation(e.to_string()))?;
    let mut regions = Vec::with_capacity(raw.regions.len());
    for (i, region) in raw.regions.into_iter().enumerate() {
        let label: PatternClass = region.label.parse().map_err(|_| {
            TilerError::MalformedAnnotation(format!("region {i}: unknown label {:?}", region.label))
        })?;
        if region.polygon.len() < 3 {
            return Err(TilerError::MalformedAnnotation(format!(
                "region {i}: polygon needs at least 3 vertices"
            )));
        }
        if region
            .polygon
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite() || *x < 0.0 || *y < 0.0)
        {
            return Err(TilerError::MalformedAnnotation(format!(
                "region {i}: vertices must be finite and nonnegative"
            )));
        }
        regions.push(RegionAnnotation {
            polygon: region.polygon,
            label,
        });
    }
    Ok(SlideAnnotations {
        slide_id: raw.slide_id,
        regions,
    })
}

/// Serializes annotations back to the JSON document format.
///
/// Parsing the output reproduces the annotations exactly.
pub fn serialize_annotations_json(annotations: &SlideAnnotations) -> String {
    let regions: Vec<serde_json::Value> = annotations
        .regions
        .iter()
        .map(|r| {
            serde_json::json!({
                "label": r.label.name(),
                "polygon": r.polygon,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({
        "slide_id": annotations.slide_id,
        "regions": regions,
    }))
    .expect("annotation JSON serialization cannot fail")
}

/// Reads and parses an annotations JSON file.
pub fn parse_annotations_file(path: &Path) -> Result<SlideAnnotations, TilerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TilerError::MalformedAnnotation(format!("{}: {e}", path.display())))?;
    parse_annotations_json(&text)
}

/// Checks that every vertex lies inside the map bounds.
pub fn validate_annotation_bounds(
    annotations: &SlideAnnotations,
    width: u32,
    height: u32,
) -> Result<(), TilerError> {
    for (i, region) in annotations.regions.iter().enumerate() {
        for &(x, y) in &region.polygon {
            if x > width as f64 || y > height as f64 {
                return Err(TilerError::MalformedAnnotation(format!(
                    "region {i}: vertex ({x}, {y}) outside {width}x{height}"
                )));
            }
        }
    }
    Ok(())
}
