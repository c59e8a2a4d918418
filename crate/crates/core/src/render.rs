//! Display rendering of cell organization maps as RGB images.

use crate::map::CellOMap;
use crate::types::CellClass;
use image::{ImageFormat, Rgb, RgbImage};
use std::io::Cursor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("cannot render {0} channels as RGB (limit 3)")]
    TooManyChannels(usize),
    #[error("png encoding failed: {0}")]
    Encoding(String),
}

/// Display color for each cell class. The first three are fixed by
/// convention (neoplastic green, connective red, non-neoplastic blue);
/// the remaining two are this toolkit's documented choices.
pub fn class_color(class: CellClass) -> [u8; 3] {
    match class {
        CellClass::NeoplasticEpithelial => [0, 255, 0],
        CellClass::Connective => [255, 0, 0],
        CellClass::NonNeoplasticEpithelial => [0, 0, 255],
        CellClass::Inflammatory => [255, 255, 0],
        CellClass::Necrotic => [255, 0, 255],
    }
}

/// Renders set bits as filled squares of side `2 * dot_radius + 1` on black.
pub fn render_rgb(map: &CellOMap, dot_radius: u32) -> Result<RgbImage, RenderError> {
    if map.channels.len() > 3 {
        return Err(RenderError::TooManyChannels(map.channels.len()));
    }
    let mut image = RgbImage::new(map.width, map.height);
    for (plane, &class) in map.planes.iter().zip(map.channels.classes()) {
        let color = class_color(class);
        for y in 0..map.height {
            for x in 0..map.width {
                if !plane.get(x, y) {
                    continue;
                }
                let x0 = x.saturating_sub(dot_radius);
                let y0 = y.saturating_sub(dot_radius);
                let x1 = (x + dot_radius).min(map.width - 1);
                let y1 = (y + dot_radius).min(map.height - 1);
                for py in y0..=y1 {
                    for px in x0..=x1 {
                        let pixel = image.get_pixel_mut(px, py);
                        for i in 0..3 {
                            pixel.0[i] = pixel.0[i].max(color[i]);
                        }
                    }
                }
            }
        }
    }
    Ok(image)
}

/// Renders the map and encodes it as PNG bytes.
pub fn render_png(map: &CellOMap, dot_radius: u32) -> Result<Vec<u8>, RenderError> {
    let image = render_rgb(map, dot_radius)?;
    let mut bytes = Vec::new();
    image
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| RenderError::Encoding(e.to_string()))?;
    Ok(bytes)
}

/// 8-bit luminance of an RGB image, Rec. 601 weights, for entropy comparisons.
pub fn luminance(image: &RgbImage) -> Vec<u8> {
    image
        .pixels()
        .map(|Rgb([r, g, b])| {
            (0.299 * *r as f64 + 0.587 * *g as f64 + 0.114 * *b as f64).round() as u8
        })
        .collect()
}
