//! Slide-level projection of tile predictions: overlay rasters and pattern
//! fraction feature vectors.

use crate::nn::model::PredictionRecord;
use crate::types::{PatternClass, PATTERN_COUNT};
use serde::{Deserialize, Serialize};
use std::io::Cursor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("prediction origin ({x}, {y}) is not on the size-{tile_size} grid")]
    OffGridOrigin { x: u32, y: u32, tile_size: u32 },
    #[error("two predictions share the origin ({x}, {y})")]
    DuplicateOrigin { x: u32, y: u32 },
    #[error("empty input")]
    EmptyInput,
    #[error("png encoding failed: {0}")]
    Encoding(String),
}

/// Grid of predicted classes, one cell per tile position.
///
/// Cells without a prediction are `None` (unclassified).
#[derive(Debug, Clone, PartialEq)]
pub struct PatternOverlay {
    pub grid_width: u32,
    pub grid_height: u32,
    pub tile_size: u32,
    pub cells: Vec<Option<PatternClass>>,
}

/// Overlay palette, one RGB triple per pattern class.
pub fn overlay_color(class: PatternClass) -> [u8; 3] {
    match class {
        PatternClass::Lepidic => [255, 255, 0],
        PatternClass::Acinar => [255, 165, 0],
        PatternClass::Papillary => [0, 255, 255],
        PatternClass::Micropapillary => [255, 0, 255],
        PatternClass::Solid => [139, 0, 0],
        PatternClass::Normal => [0, 255, 0],
    }
}

pub const UNCLASSIFIED_COLOR: [u8; 3] = [0, 0, 0];

/// Arranges tile predictions on the slide grid.
///
/// Grid dims are `floor(map dims / tile_size)`; every prediction must sit on
/// the stride grid inside those dims, at most one per cell.
pub fn build_overlay(
    predictions: &[PredictionRecord],
    map_width: u32,
    map_height: u32,
    tile_size: u32,
) -> Result<PatternOverlay, ProjectionError> {
    assert!(tile_size > 0, "tile size must be positive");
    let grid_width = map_width / tile_size;
    let grid_height = map_height / tile_size;
    let mut cells: Vec<Option<PatternClass>> =
        vec![None; (grid_width * grid_height) as usize];
    for pred in predictions {
        let on_grid = pred.x % tile_size == 0
            && pred.y % tile_size == 0
            && pred.x / tile_size < grid_width
            && pred.y / tile_size < grid_height;
        if !on_grid {
            return Err(ProjectionError::OffGridOrigin {
                x: pred.x,
                y: pred.y,
                tile_size,
            });
        }
        let cell = (pred.y / tile_size * grid_width + pred.x / tile_size) as usize;
        if cells[cell].is_some() {
            return Err(ProjectionError::DuplicateOrigin {
                x: pred.x,
                y: pred.y,
            });
        }
        cells[cell] = Some(pred.predicted);
    }
    Ok(PatternOverlay {
        grid_width,
        grid_height,
        tile_size,
        cells,
    })
}

/// Per-slide pattern fractions over classified tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlideFeatureVector {
    pub fractions: [f64; PATTERN_COUNT],
}

/// Fraction of predictions landing on each class.
pub fn feature_vector(
    predictions: &[PredictionRecord],
) -> Result<SlideFeatureVector, ProjectionError> {
    if predictions.is_empty() {
        return Err(ProjectionError::EmptyInput);
    }
    let mut counts = [0u64; PATTERN_COUNT];
    for pred in predictions {
        counts[pred.predicted.index()] += 1;
    }
    let total = predictions.len() as f64;
    let mut fractions = [0.0; PATTERN_COUNT];
    for (f, c) in fractions.iter_mut().zip(counts) {
        *f = c as f64 / total;
    }
    Ok(SlideFeatureVector { fractions })
}

/// Legend sidecar describing the overlay palette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayLegend {
    pub tile_size: u32,
    pub block_size: u32,
    pub unclassified: [u8; 3],
    pub classes: Vec<LegendEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub label: String,
    pub color: [u8; 3],
}

pub fn overlay_legend(overlay: &PatternOverlay, block_size: u32) -> OverlayLegend {
    OverlayLegend {
        tile_size: overlay.tile_size,
        block_size,
        unclassified: UNCLASSIFIED_COLOR,
        classes: PatternClass::ALL
            .iter()
            .map(|c| LegendEntry {
                label: c.name().to_string(),
                color: overlay_color(*c),
            })
            .collect(),
    }
}

/// Renders the overlay as a PNG, one `block_size` square per grid cell.
pub fn render_overlay_png(
    overlay: &PatternOverlay,
    block_size: u32,
) -> Result<Vec<u8>, ProjectionError> {
    assert!(block_size > 0, "block size must be positive");
    if overlay.grid_width == 0 || overlay.grid_height == 0 {
        return Err(ProjectionError::EmptyInput);
    }
    let width = overlay.grid_width * block_size;
    let height = overlay.grid_height * block_size;
    let mut image = image::RgbImage::new(width, height);
    for (i, cell) in overlay.cells.iter().enumerate() {
        let gx = i as u32 % overlay.grid_width;
        let gy = i as u32 / overlay.grid_width;
        let color = cell.map_or(UNCLASSIFIED_COLOR, overlay_color);
        for dy in 0..block_size {
            for dx in 0..block_size {
                image.put_pixel(gx * block_size + dx, gy * block_size + dy, image::Rgb(color));
            }
        }
    }
    let mut bytes = Cursor::new(Vec::new());
    image
        .write_to(&mut bytes, image::ImageFormat::Png)
        .map_err(|e| ProjectionError::Encoding(e.to_string()))?;
    Ok(bytes.into_inner())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pred(x: u32, y: u32, class: PatternClass) -> PredictionRecord {
        let mut probabilities = vec![0.0; PATTERN_COUNT];
        probabilities[class.index()] = 1.0;
        PredictionRecord {
            slide_id: "s".into(),
            x,
            y,
            probabilities,
            predicted: class,
        }
    }

    #[test]
    fn single_tile_slide_yields_one_cell() {
        let overlay = build_overlay(&[pred(0, 0, PatternClass::Acinar)], 224, 224, 224).unwrap();
        assert_eq!((overlay.grid_width, overlay.grid_height), (1, 1));
        assert_eq!(overlay.cells, vec![Some(PatternClass::Acinar)]);
    }

    #[test]
    fn duplicate_origin_is_rejected() {
        let preds = [pred(0, 0, PatternClass::Solid), pred(0, 0, PatternClass::Normal)];
        assert!(matches!(
            build_overlay(&preds, 224, 224, 224),
            Err(ProjectionError::DuplicateOrigin { x: 0, y: 0 })
        ));
    }

    #[test]
    fn off_grid_origin_is_rejected() {
        for (x, y) in [(100, 0), (0, 50), (448, 0)] {
            assert!(matches!(
                build_overlay(&[pred(x, y, PatternClass::Solid)], 448, 224, 224),
                Err(ProjectionError::OffGridOrigin { .. })
            ));
        }
    }

    #[test]
    fn checkerboard_projects_positionally() {
        let mut preds = Vec::new();
        for gy in 0..4u32 {
            for gx in 0..4u32 {
                let class = if (gx + gy) % 2 == 0 {
                    PatternClass::Solid
                } else {
                    PatternClass::Normal
                };
                preds.push(pred(gx * 112, gy * 112, class));
            }
        }
        let overlay = build_overlay(&preds, 448, 448, 112).unwrap();
        for (i, cell) in overlay.cells.iter().enumerate() {
            let expected = if (i as u32 % 4 + i as u32 / 4) % 2 == 0 {
                PatternClass::Solid
            } else {
                PatternClass::Normal
            };
            assert_eq!(*cell, Some(expected));
        }
    }

    #[test]
    fn overlay_ignores_prediction_order() {
        let mut preds: Vec<PredictionRecord> = (0..9)
            .map(|i| pred(i % 3 * 64, i / 3 * 64, PatternClass::ALL[i as usize % 6]))
            .collect();
        let forward = build_overlay(&preds, 192, 192, 64).unwrap();
        preds.reverse();
        assert_eq!(build_overlay(&preds, 192, 192, 64).unwrap(), forward);
    }

    #[test]
    fn all_solid_fraction_vector() {
        let preds: Vec<PredictionRecord> =
            (0..5).map(|i| pred(i * 224, 0, PatternClass::Solid)).collect();
        let features = feature_vector(&preds).unwrap();
        assert_eq!(features.fractions, [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mixed_fraction_vector_counts_exactly() {
        let preds = [
            pred(0, 0, PatternClass::Acinar),
            pred(224, 0, PatternClass::Acinar),
            pred(448, 0, PatternClass::Acinar),
            pred(672, 0, PatternClass::Normal),
        ];
        let features = feature_vector(&preds).unwrap();
        assert_eq!(features.fractions, [0.0, 0.75, 0.0, 0.0, 0.0, 0.25]);
    }

    #[test]
    fn fraction_vector_matches_histogram_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let preds: Vec<PredictionRecord> = (0..200)
            .map(|i| pred(i * 32, 0, PatternClass::ALL[rng.random_range(0..6usize)]))
            .collect();
        let features = feature_vector(&preds).unwrap();
        let mut histogram = [0u64; PATTERN_COUNT];
        for p in &preds {
            histogram[p.predicted.index()] += 1;
        }
        for c in 0..PATTERN_COUNT {
            assert_eq!(features.fractions[c], histogram[c] as f64 / 200.0);
        }
        let sum: f64 = features.fractions.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_prediction_list_is_rejected() {
        assert!(matches!(feature_vector(&[]), Err(ProjectionError::EmptyInput)));
    }

    #[test]
    fn unclassified_grid_renders_black() {
        let overlay = build_overlay(&[], 448, 448, 224).unwrap();
        let png = render_overlay_png(&overlay, 4).unwrap();
        let decoded = image::load_from_memory(&png).unwrap().into_rgb8();
        assert_eq!(decoded.dimensions(), (8, 8));
        assert!(decoded.pixels().all(|p| p.0 == UNCLASSIFIED_COLOR));
    }

    #[test]
    fn blocks_scale_and_color_correctly() {
        let preds = [
            pred(0, 0, PatternClass::Lepidic),
            pred(224, 0, PatternClass::Solid),
            pred(0, 224, PatternClass::Papillary),
        ];
        let overlay = build_overlay(&preds, 448, 448, 224).unwrap();
        let png = render_overlay_png(&overlay, 3).unwrap();
        let decoded = image::load_from_memory(&png).unwrap().into_rgb8();
        assert_eq!(decoded.dimensions(), (6, 6));
        assert_eq!(decoded.get_pixel(1, 1).0, [255, 255, 0]);
        assert_eq!(decoded.get_pixel(4, 1).0, [139, 0, 0]);
        assert_eq!(decoded.get_pixel(1, 4).0, [0, 255, 255]);
        assert_eq!(decoded.get_pixel(4, 4).0, UNCLASSIFIED_COLOR);
    }

    #[test]
    fn legend_round_trips_through_json() {
        let overlay = build_overlay(&[], 448, 448, 224).unwrap();
        let legend = overlay_legend(&overlay, 8);
        let text = serde_json::to_string(&legend).unwrap();
        let back: OverlayLegend = serde_json::from_str(&text).unwrap();
        assert_eq!(back, legend);
        assert_eq!(back.classes.len(), PATTERN_COUNT);
        assert_eq!(back.classes[0].label, "Lepidic");
        assert_eq!(back.classes[0].color, [255, 255, 0]);
    }
}
