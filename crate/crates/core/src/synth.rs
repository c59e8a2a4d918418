//! Seeded synthetic nuclei corpus mimicking the six growth patterns.
//!
//! Class geometries are tuned so classes separate by spatial arrangement
//! rather than raw point counts. Lepidic and Normal are built from the same
//! alveolar lattice with cell types swapped, so merging channels destroys
//! exactly that distinction.

use crate::eval::{derive_seed, TileRecord};
use crate::ingest::{NucleusRecord, SlideNucleiSet};
use crate::tiler::{RegionAnnotation, SlideAnnotations};
use crate::types::{CellClass, PatternClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Geometry knobs, all in target-scale pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityParams {
    /// Structural points per tile before noise.
    pub points_per_tile: usize,
    /// Micropapillary cluster radius.
    pub cluster_radius: f64,
    /// Acinar gland ring radius.
    pub gland_radius: f64,
    /// Alveolar lattice pitch for Lepidic and Normal.
    pub wall_spacing: f64,
    /// Papillary epithelium offset from the curve core.
    pub curve_half_width: f64,
}

impl Default for DensityParams {
    fn default() -> DensityParams {
        DensityParams {
            points_per_tile: 600,
            cluster_radius: 3.0,
            gland_radius: 8.0,
            wall_spacing: 40.0,
            curve_half_width: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub tiles_per_class: usize,
    /// Tile side in target-scale pixels.
    pub tile_size: u32,
    pub patients: usize,
    pub source_mpp: f64,
    pub target_mpp: f64,
    /// Fraction of extra uniform points with uniformly random class.
    pub noise_fraction: f64,
    pub density: DensityParams,
}

impl Default for SynthConfig {
    fn default() -> SynthConfig {
        SynthConfig {
            seed: 0,
            tiles_per_class: 60,
            tile_size: 224,
            patients: 12,
            source_mpp: 0.5,
            target_mpp: 2.0,
            noise_fraction: 0.05,
            density: DensityParams::default(),
        }
    }
}

fn validate(config: &SynthConfig) {
    assert!(config.tiles_per_class >= 10, "need at least 10 tiles per class");
    assert!(config.tile_size >= 32, "tile size too small for the geometries");
    assert!(config.patients >= 6, "need at least 6 synthetic patients");
    assert!(
        config.source_mpp > 0.0 && config.target_mpp >= config.source_mpp,
        "mpp pair must describe a downscale"
    );
    assert!(
        (0.0..=0.2).contains(&config.noise_fraction),
        "noise fraction must be in [0, 0.2]"
    );
    let d = &config.density;
    assert!(
        d.points_per_tile > 0
            && d.cluster_radius > 0.0
            && d.gland_radius > 0.0
            && d.wall_spacing > 0.0
            && d.curve_half_width > 0.0,
        "density parameters must be positive"
    );
}

/// Generated corpus: one slide per synthetic patient, region annotations in
/// target-scale pixels, and the ground-truth tile manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub slides: Vec<SlideNucleiSet>,
    pub annotations: Vec<SlideAnnotations>,
    pub truth: Vec<TileRecord>,
}

type ClassPoint = (f64, f64, CellClass);

fn clamp_push(points: &mut Vec<ClassPoint>, x: f64, y: f64, side: f64, class: CellClass) {
    points.push((x.clamp(0.01, side - 0.01), y.clamp(0.01, side - 0.01), class));
}

fn solid_tile(rng: &mut ChaCha8Rng, side: f64, d: &DensityParams) -> Vec<ClassPoint> {
    let mut points = Vec::new();
    let cx = side * (0.5 + rng.random_range(-0.03..0.03));
    let cy = side * (0.5 + rng.random_range(-0.03..0.03));
    let radius = 0.42 * side;
    for _ in 0..d.points_per_tile {
        let r = radius * rng.random_range(0.0f64..1.0).sqrt();
        let a = rng.random_range(0.0..TAU);
        clamp_push(
            &mut points,
            cx + r * a.cos(),
            cy + r * a.sin(),
            side,
            CellClass::NeoplasticEpithelial,
        );
    }
    points
}

fn acinar_tile(rng: &mut ChaCha8Rng, side: f64, d: &DensityParams) -> Vec<ClassPoint> {
    let mut points = Vec::new();
    let n_glands = (d.points_per_tile / 50).max(3);
    let margin = 2.0 * d.gland_radius;
    let min_dist2 = (3.0 * d.gland_radius).powi(2);
    let mut centers: Vec<(f64, f64)> = Vec::new();
    let mut attempts = 0;
    while centers.len() < n_glands && attempts < 10_000 {
        attempts += 1;
        let c = (
            rng.random_range(margin..side - margin),
            rng.random_range(margin..side - margin),
        );
        if centers
            .iter()
            .all(|o| (o.0 - c.0).powi(2) + (o.1 - c.1).powi(2) >= min_dist2)
        {
            centers.push(c);
        }
    }
    for (cx, cy) in centers {
        for _ in 0..38 {
            let a = rng.random_range(0.0..TAU);
            let r = d.gland_radius * (1.0 + rng.random_range(-0.12..0.12));
            clamp_push(
                &mut points,
                cx + r * a.cos(),
                cy + r * a.sin(),
                side,
                CellClass::NeoplasticEpithelial,
            );
        }
    }
    for _ in 0..d.points_per_tile / 8 {
        clamp_push(
            &mut points,
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            side,
            CellClass::Connective,
        );
    }
    points
}

fn papillary_tile(rng: &mut ChaCha8Rng, side: f64, d: &DensityParams) -> Vec<ClassPoint> {
    let mut points = Vec::new();
    let n_curves = 4;
    let steps = (d.points_per_tile / (n_curves * 2)).max(10);
    for _ in 0..n_curves {
        // start on a random border heading inward
        let t = rng.random_range(0.1..0.9) * side;
        let (mut x, mut y, mut dir) = match rng.random_range(0..4u8) {
            0 => (t, 1.0, TAU / 4.0),
            1 => (t, side - 1.0, -TAU / 4.0),
            2 => (1.0, t, 0.0),
            _ => (side - 1.0, t, TAU / 2.0),
        };
        dir += rng.random_range(-0.5..0.5);
        for s in 0..steps {
            dir += rng.random_range(-0.35..0.35);
            x += 5.5 * dir.cos();
            y += 5.5 * dir.sin();
            let margin = 4.0;
            if !(margin..side - margin).contains(&x) || !(margin..side - margin).contains(&y) {
                // steer back toward the center
                x = x.clamp(margin, side - margin);
                y = y.clamp(margin, side - margin);
                dir = (side / 2.0 - y).atan2(side / 2.0 - x) + rng.random_range(-0.3..0.3);
            }
            let nx = -dir.sin() * d.curve_half_width;
            let ny = dir.cos() * d.curve_half_width;
            for sign in [1.0, -1.0] {
                clamp_push(
                    &mut points,
                    x + sign * nx + rng.random_range(-0.8..0.8),
                    y + sign * ny + rng.random_range(-0.8..0.8),
                    side,
                    CellClass::NeoplasticEpithelial,
                );
            }
            if s % 3 == 0 {
                clamp_push(&mut points, x, y, side, CellClass::Connective);
            }
        }
    }
    points
}

fn micropapillary_tile(rng: &mut ChaCha8Rng, side: f64, d: &DensityParams) -> Vec<ClassPoint> {
    let mut points = Vec::new();
    let cluster_points = 15;
    let n_clusters = (d.points_per_tile / cluster_points).max(4);
    let margin = 2.0 * d.cluster_radius;
    for _ in 0..n_clusters {
        let cx = rng.random_range(margin..side - margin);
        let cy = rng.random_range(margin..side - margin);
        for _ in 0..cluster_points {
            let r = d.cluster_radius * rng.random_range(0.0f64..1.0).sqrt();
            let a = rng.random_range(0.0..TAU);
            clamp_push(
                &mut points,
                cx + r * a.cos(),
                cy + r * a.sin(),
                side,
                CellClass::NeoplasticEpithelial,
            );
        }
    }
    points
}

/// Shared alveolar lattice: ring walls plus sparse interior points.
///
/// Lepidic and Normal call this with swapped cell classes so their merged
/// single-channel appearance is identically distributed.
fn lattice_tile(
    rng: &mut ChaCha8Rng,
    side: f64,
    d: &DensityParams,
    wall_class: CellClass,
    interior_class: CellClass,
) -> Vec<ClassPoint> {
    let mut points = Vec::new();
    let cells = ((side / d.wall_spacing).floor() as u32).max(1);
    let n_rings = (cells * cells) as usize;
    let per_ring = ((d.points_per_tile * 9 / 10) / n_rings).max(8);
    let ring_r = 0.42 * d.wall_spacing;
    for i in 0..cells {
        for j in 0..cells {
            let cx = (i as f64 + 0.5) * d.wall_spacing
                + rng.random_range(-0.08..0.08) * d.wall_spacing;
            let cy = (j as f64 + 0.5) * d.wall_spacing
                + rng.random_range(-0.08..0.08) * d.wall_spacing;
            for _ in 0..per_ring {
                let a = rng.random_range(0.0..TAU);
                let r = ring_r * (1.0 + rng.random_range(-0.1..0.1));
                clamp_push(&mut points, cx + r * a.cos(), cy + r * a.sin(), side, wall_class);
            }
        }
    }
    for _ in 0..d.points_per_tile / 10 {
        clamp_push(
            &mut points,
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            side,
            interior_class,
        );
    }
    points
}

const CLASS_STREAM: u64 = 0x5354;

/// Deterministic point set for one tile, in target-scale pixels within
/// `[0, tile_size)`.
pub fn generate_class_tile(
    class: PatternClass,
    config: &SynthConfig,
    tile_index: usize,
) -> Vec<ClassPoint> {
    validate(config);
    let seed = derive_seed(
        derive_seed(config.seed, CLASS_STREAM + class.index() as u64),
        tile_index as u64,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.tile_size as f64;
    let d = &config.density;
    let mut points = match class {
        PatternClass::Solid => solid_tile(&mut rng, side, d),
        PatternClass::Acinar => acinar_tile(&mut rng, side, d),
        PatternClass::Papillary => papillary_tile(&mut rng, side, d),
        PatternClass::Micropapillary => micropapillary_tile(&mut rng, side, d),
        PatternClass::Lepidic => lattice_tile(
            &mut rng,
            side,
            d,
            CellClass::NeoplasticEpithelial,
            CellClass::NonNeoplasticEpithelial,
        ),
        PatternClass::Normal => lattice_tile(
            &mut rng,
            side,
            d,
            CellClass::NonNeoplasticEpithelial,
            CellClass::Connective,
        ),
    };
    let n_noise = (points.len() as f64 * config.noise_fraction).round() as usize;
    for _ in 0..n_noise {
        let class = CellClass::from_code(rng.random_range(0..5)).expect("codes 0..4");
        clamp_push(
            &mut points,
            rng.random_range(0.0..side),
            rng.random_range(0.0..side),
            side,
            class,
        );
    }
    points
}

/// Builds the full corpus: slides grouped into synthetic patients with
/// annotations and a truth manifest.
///
/// Tiles of class `c` go to patient `(k + c * stagger) % patients`, which
/// spreads every class over many patients so patient-level stratification is
/// satisfiable.
pub fn generate_corpus(config: &SynthConfig) -> SynthCorpus {
    validate(config);
    let stagger = config.patients.div_ceil(6).max(1);
    let mut per_patient: Vec<Vec<(PatternClass, usize)>> = vec![Vec::new(); config.patients];
    for class in PatternClass::ALL {
        for k in 0..config.tiles_per_class {
            let patient = (k + class.index() * stagger) % config.patients;
            per_patient[patient].push((class, k));
        }
    }

    let t = config.tile_size;
    let ratio = config.target_mpp / config.source_mpp;
    let mut slides = Vec::new();
    let mut annotations = Vec::new();
    let mut truth = Vec::new();
    for (p, assigned) in per_patient.iter().enumerate() {
        let slide_id = format!("slide{p:02}");
        let patient_id = format!("patient{p:02}");
        let cols = (assigned.len() as f64).sqrt().ceil() as u32;
        let rows = (assigned.len() as u32).div_ceil(cols);
        let width_target = cols * t;
        let height_target = rows * t;
        let mut records = Vec::new();
        let mut regions = Vec::new();
        for (slot, &(class, k)) in assigned.iter().enumerate() {
            let col = slot as u32 % cols;
            let row = slot as u32 / cols;
            let (ox, oy) = ((col * t) as f64, (row * t) as f64);
            for (x, y, cell) in generate_class_tile(class, config, k) {
                records.push(NucleusRecord {
                    x: (ox + x) * ratio,
                    y: (oy + y) * ratio,
                    class: cell,
                    confidence: None,
                });
            }
            regions.push(RegionAnnotation {
                polygon: vec![
                    (ox, oy),
                    (ox + t as f64, oy),
                    (ox + t as f64, oy + t as f64),
                    (ox, oy + t as f64),
                ],
                label: class,
            });
            truth.push(TileRecord {
                slide_id: slide_id.clone(),
                patient_id: patient_id.clone(),
                x: col * t,
                y: row * t,
                size: t,
                label: class,
            });
        }
        slides.push(SlideNucleiSet {
            slide_id: slide_id.clone(),
            patient_id,
            source_mpp: config.source_mpp,
            width: (width_target as f64 * ratio).ceil() as u32,
            height: (height_target as f64 * ratio).ceil() as u32,
            records,
        });
        annotations.push(SlideAnnotations { slide_id, regions });
    }
    SynthCorpus {
        slides,
        annotations,
        truth,
    }
}
