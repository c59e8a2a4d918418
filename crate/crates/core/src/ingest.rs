//! Nuclei detection ingestion: JSON parsing, class remapping, resolution scaling.

use crate::types::CellClass;
use serde::Deserialize;
use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("nucleus {index} at ({x}, {y}) lies outside {width}x{height}")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("unknown cell class {0:?}")]
    UnknownClass(String),
    #[error("conflicting remap rules: {0}")]
    ConflictingRules(String),
    #[error("invalid scale: source {source_mpp} mpp to target {target_mpp} mpp")]
    InvalidScale { source_mpp: f64, target_mpp: f64 },
}

/// One detected nucleus, reduced to its centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct NucleusRecord {
    pub x: f64,
    pub y: f64,
    pub class: CellClass,
    pub confidence: Option<f64>,
}

/// All nuclei detected on one slide, with slide geometry and identity.
#[derive(Debug, Clone, PartialEq)]
pub struct SlideNucleiSet {
    pub slide_id: String,
    pub patient_id: String,
    /// Microns per pixel of the coordinate space `records` live in.
    pub source_mpp: f64,
    pub width: u32,
    pub height: u32,
    pub records: Vec<NucleusRecord>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum TypeField {
    Code(i64),
    Name(String),
}

#[derive(Deserialize)]
struct RawNucleus {
    x: f64,
    y: f64,
    #[serde(rename = "type")]
    class: TypeField,
    #[serde(default)]
    confidence: Option<f64>,
}

#[derive(Deserialize)]
struct RawSlide {
    slide_id: String,
    patient_id: String,
    mpp: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    class_codes: Option<HashMap<String, String>>,
    nuclei: Vec<RawNucleus>,
}

/// Parses a nuclei detection JSON document.
///
/// Integer `type` values are resolved through the optional `class_codes`
/// table, keyed by the decimal string of the code. Every centroid must lie
/// inside `[0, width) x [0, height)`.
pub fn parse_nuclei_json(text: &str) -> Result<SlideNucleiSet, IngestError> {
    let raw: RawSlide =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedInput(e.to_string()))?;

    if !(raw.mpp.is_finite() && raw.mpp > 0.0) {
        return Err(IngestError::MalformedInput(format!(
            "mpp must be finite and positive, got {}",
            raw.mpp
        )));
    }
    if raw.width == 0 || raw.height == 0 {
        return Err(IngestError::MalformedInput(format!(
            "slide dimensions must be nonzero, got {}x{}",
            raw.width, raw.height
        )));
    }
    if raw.slide_id.is_empty() || raw.patient_id.is_empty() {
        return Err(IngestError::MalformedInput(
            "slide_id and patient_id must be non-empty".into(),
        ));
    }

    let resolve_code = |code: i64| -> Result<CellClass, IngestError> {
        let key = code.to_string();
        let table = raw
            .class_codes
            .as_ref()
            .ok_or_else(|| IngestError::UnknownClass(key.clone()))?;
        let name = table
            .get(&key)
            .ok_or_else(|| IngestError::UnknownClass(key.clone()))?;
        name.parse()
            .map_err(|_| IngestError::UnknownClass(name.clone()))
    };

    let mut records = Vec::with_capacity(raw.nuclei.len());
    for (index, n) in raw.nuclei.into_iter().enumerate() {
        if !(n.x.is_finite() && n.y.is_finite()) {
            return Err(IngestError::MalformedInput(format!(
                "nucleus {index} has non-finite coordinates"
            )));
        }
        if n.x < 0.0 || n.y < 0.0 || n.x >= raw.width as f64 || n.y >= raw.height as f64 {
            return Err(IngestError::OutOfBounds {
                index,
                x: n.x,
                y: n.y,
                width: raw.width,
                height: raw.height,
            });
        }
        if let Some(c) = n.confidence {
            if !(c.is_finite() && (0.0..=1.0).contains(&c)) {
                return Err(IngestError::MalformedInput(format!(
                    "nucleus {index} confidence {c} outside [0, 1]"
                )));
            }
        }
        let class = match n.class {
            TypeField::Code(code) => resolve_code(code)?,
            TypeField::Name(name) => name
                .parse()
                .map_err(|_| IngestError::UnknownClass(name.clone()))?,
        };
        records.push(NucleusRecord {
            x: n.x,
            y: n.y,
            class,
            confidence: n.confidence,
        });
    }

    Ok(SlideNucleiSet {
        slide_id: raw.slide_id,
        patient_id: raw.patient_id,
        source_mpp: raw.mpp,
        width: raw.width,
        height: raw.height,
        records,
    })
}

/// Reads and parses a nuclei detection JSON file.
pub fn parse_nuclei_file(path: &Path) -> Result<SlideNucleiSet, IngestError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| IngestError::MalformedInput(format!("{}: {e}", path.display())))?;
    parse_nuclei_json(&text)
}

/// Serializes a slide set back to the nuclei JSON schema.
///
/// Classes are written as names, so no `class_codes` table is emitted.
/// Parsing the output reproduces the set exactly.
pub fn serialize_nuclei_json(set: &SlideNucleiSet) -> String {
    let nuclei: Vec<serde_json::Value> = set
        .records
        .iter()
        .map(|n| {
            let mut obj = serde_json::json!({
                "x": n.x,
                "y": n.y,
                "type": n.class.name(),
            });
            if let Some(c) = n.confidence {
                obj["confidence"] = serde_json::json!(c);
            }
            obj
        })
        .collect();
    let doc = serde_json::json!({
        "slide_id": set.slide_id,
        "patient_id": set.patient_id,
        "mpp": set.source_mpp,
        "width": set.width,
        "height": set.height,
        "nuclei": nuclei,
    });
    serde_json::to_string_pretty(&doc).expect("nuclei document serializes")
}

/// Class substitution applied before map construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RemapRule {
    pub from: CellClass,
    pub to: CellClass,
}

impl RemapRule {
    pub fn new(from: CellClass, to: CellClass) -> Result<RemapRule, IngestError> {
        if from == to {
            return Err(IngestError::ConflictingRules(format!(
                "rule maps {from} to itself"
            )));
        }
        Ok(RemapRule { from, to })
    }
}

/// Resolves `class` through `rules` until no rule applies.
///
/// Rules are validated to be acyclic with unique sources, so the chain
/// terminates and a second application changes nothing.
fn resolve(class: CellClass, rules: &[RemapRule]) -> CellClass {
    let mut current = class;
    for _ in 0..=rules.len() {
        match rules.iter().find(|r| r.from == current) {
            Some(rule) => current = rule.to,
            None => return current,
        }
    }
    current
}

fn validate_rules(rules: &[RemapRule]) -> Result<(), IngestError> {
    for (i, rule) in rules.iter().enumerate() {
        if rule.from == rule.to {
            return Err(IngestError::ConflictingRules(format!(
                "rule maps {} to itself",
                rule.from
            )));
        }
        if rules[..i].iter().any(|r| r.from == rule.from) {
            return Err(IngestError::ConflictingRules(format!(
                "duplicate source class {}",
                rule.from
            )));
        }
    }
    // Cycle check: following the chain from any class must terminate.
    for start in CellClass::ALL {
        let mut current = start;
        let mut steps = 0usize;
        while let Some(rule) = rules.iter().find(|r| r.from == current) {
            current = rule.to;
            steps += 1;
            if steps > rules.len() {
                return Err(IngestError::ConflictingRules(format!(
                    "cycle involving {start}"
                )));
            }
        }
    }
    Ok(())
}

/// Applies remap rules to every nucleus, following chains to a fixpoint.
///
/// Applying the same rules twice yields the same result as applying them once.
pub fn apply_remap(
    set: &SlideNucleiSet,
    rules: &[RemapRule],
) -> Result<SlideNucleiSet, IngestError> {
    validate_rules(rules)?;
    let mut out = set.clone();
    for n in &mut out.records {
        n.class = resolve(n.class, rules);
    }
    Ok(out)
}

/// Rescales a slide from its native resolution to `target_mpp` microns per pixel.
///
/// Centroids map to `floor(coord * source_mpp / target_mpp)`; dimensions map
/// to the ceiling of the same ratio, so every scaled centroid stays in bounds.
/// Only downsampling (target coarser than or equal to source) is supported.
pub fn scale_coordinates(
    set: &SlideNucleiSet,
    target_mpp: f64,
) -> Result<SlideNucleiSet, IngestError> {
    if !(target_mpp.is_finite() && target_mpp > 0.0) || target_mpp < set.source_mpp {
        return Err(IngestError::InvalidScale {
            source_mpp: set.source_mpp,
            target_mpp,
        });
    }
    let ratio = set.source_mpp / target_mpp;
    let width = (set.width as f64 * ratio).ceil().max(1.0) as u32;
    let height = (set.height as f64 * ratio).ceil().max(1.0) as u32;
    let records = set
        .records
        .iter()
        .map(|n| NucleusRecord {
            // min() guards the degenerate float case where coord * ratio
            // rounds up to exactly the scaled dimension.
            x: (n.x * ratio).floor().min((width - 1) as f64),
            y: (n.y * ratio).floor().min((height - 1) as f64),
            class: n.class,
            confidence: n.confidence,
        })
        .collect();
    Ok(SlideNucleiSet {
        slide_id: set.slide_id.clone(),
        patient_id: set.patient_id.clone(),
        source_mpp: target_mpp,
        width,
        height,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_json() -> String {
        r#"{
            "slide_id": "s1",
            "patient_id": "p1",
            "mpp": 0.5,
            "width": 100,
            "height": 80,
            "class_codes": {"0": "NeoplasticEpithelial", "2": "Connective"},
            "nuclei": [
                {"x": 10.5, "y": 20.0, "type": "NeoplasticEpithelial", "confidence": 0.9},
                {"x": 3.0, "y": 4.0, "type": 2},
                {"x": 99.9, "y": 79.9, "type": 0}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn parses_names_and_codes() {
        let set = parse_nuclei_json(&sample_json()).unwrap();
        assert_eq!(set.slide_id, "s1");
        assert_eq!(set.patient_id, "p1");
        assert_eq!(set.records.len(), 3);
        assert_eq!(set.records[0].class, CellClass::NeoplasticEpithelial);
        assert_eq!(set.records[0].confidence, Some(0.9));
        assert_eq!(set.records[1].class, CellClass::Connective);
        assert_eq!(set.records[1].confidence, None);
        assert_eq!(set.records[2].class, CellClass::NeoplasticEpithelial);
    }

    #[test]
    fn parse_serialize_parse_is_identity() {
        let set = parse_nuclei_json(&sample_json()).unwrap();
        let round = parse_nuclei_json(&serialize_nuclei_json(&set)).unwrap();
        assert_eq!(set, round);
    }

    #[test]
    fn rejects_empty_ids() {
        let text = sample_json().replace("\"slide_id\": \"s1\"", "\"slide_id\": \"\"");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::MalformedInput(_))
        ));
    }

    #[test]
    fn rejects_out_of_bounds() {
        let text = sample_json().replace("\"x\": 99.9", "\"x\": 100.0");
        match parse_nuclei_json(&text) {
            Err(IngestError::OutOfBounds { index: 2, .. }) => {}
            other => panic!("expected OutOfBounds, got {other:?}"),
        }
        let text = sample_json().replace("\"y\": 4.0", "\"y\": -0.1");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::OutOfBounds { index: 1, .. })
        ));
    }

    #[test]
    fn rejects_unknown_class() {
        let text = sample_json().replace("\"type\": 2", "\"type\": 7");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::UnknownClass(s)) if s == "7"
        ));
        let text = sample_json().replace("NeoplasticEpithelial\", \"confidence", "Stromal\", \"confidence");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::UnknownClass(s)) if s == "Stromal"
        ));
    }

    #[test]
    fn rejects_malformed_documents() {
        assert!(matches!(
            parse_nuclei_json("{not json"),
            Err(IngestError::MalformedInput(_))
        ));
        let text = sample_json().replace("\"mpp\": 0.5", "\"mpp\": 0.0");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::MalformedInput(_))
        ));
        let text = sample_json().replace("\"confidence\": 0.9", "\"confidence\": 1.5");
        assert!(matches!(
            parse_nuclei_json(&text),
            Err(IngestError::MalformedInput(_))
        ));
    }

    #[test]
    fn remap_follows_chains_and_is_idempotent() {
        let set = parse_nuclei_json(&sample_json()).unwrap();
        let rules = vec![
            RemapRule::new(CellClass::Necrotic, CellClass::NeoplasticEpithelial).unwrap(),
            RemapRule::new(CellClass::Connective, CellClass::Necrotic).unwrap(),
        ];
        let once = apply_remap(&set, &rules).unwrap();
        assert_eq!(once.records[1].class, CellClass::NeoplasticEpithelial);
        let twice = apply_remap(&once, &rules).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn remap_rejects_conflicts() {
        assert!(RemapRule::new(CellClass::Necrotic, CellClass::Necrotic).is_err());
        let set = parse_nuclei_json(&sample_json()).unwrap();
        let duplicate = vec![
            RemapRule::new(CellClass::Necrotic, CellClass::NeoplasticEpithelial).unwrap(),
            RemapRule::new(CellClass::Necrotic, CellClass::Connective).unwrap(),
        ];
        assert!(matches!(
            apply_remap(&set, &duplicate),
            Err(IngestError::ConflictingRules(_))
        ));
        let cycle = vec![
            RemapRule::new(CellClass::Necrotic, CellClass::Connective).unwrap(),
            RemapRule::new(CellClass::Connective, CellClass::Necrotic).unwrap(),
        ];
        assert!(matches!(
            apply_remap(&set, &cycle),
            Err(IngestError::ConflictingRules(_))
        ));
    }

    #[test]
    fn scaling_floors_points_and_ceils_dims() {
        let set = SlideNucleiSet {
            slide_id: "s".into(),
            patient_id: "p".into(),
            source_mpp: 0.5,
            width: 1790,
            height: 1790,
            records: vec![NucleusRecord {
                x: 7.0,
                y: 7.0,
                class: CellClass::Connective,
                confidence: None,
            }],
        };
        let scaled = scale_coordinates(&set, 2.0).unwrap();
        assert_eq!(scaled.source_mpp, 2.0);
        assert_eq!((scaled.width, scaled.height), (448, 448));
        assert_eq!((scaled.records[0].x, scaled.records[0].y), (1.0, 1.0));
    }

    #[test]
    fn identity_scale_preserves_integer_coordinates() {
        let set = SlideNucleiSet {
            slide_id: "s".into(),
            patient_id: "p".into(),
            source_mpp: 2.0,
            width: 10,
            height: 10,
            records: vec![NucleusRecord {
                x: 9.0,
                y: 0.0,
                class: CellClass::Inflammatory,
                confidence: None,
            }],
        };
        let scaled = scale_coordinates(&set, 2.0).unwrap();
        assert_eq!(scaled.width, 10);
        assert_eq!(scaled.records[0].x, 9.0);
        assert_eq!(scaled.records[0].y, 0.0);
    }

    #[test]
    fn upsampling_is_rejected() {
        let set = parse_nuclei_json(&sample_json()).unwrap();
        assert!(matches!(
            scale_coordinates(&set, 0.25),
            Err(IngestError::InvalidScale { .. })
        ));
        assert!(matches!(
            scale_coordinates(&set, f64::NAN),
            Err(IngestError::InvalidScale { .. })
        ));
    }

    proptest! {
        #[test]
        fn scaled_centroids_stay_in_bounds(
            width in 1u32..4000,
            height in 1u32..4000,
            source_milli in 100u32..2000,
            factor in 1u32..16,
            xs in proptest::collection::vec(0.0f64..1.0, 1..50),
            ys in proptest::collection::vec(0.0f64..1.0, 1..50),
        ) {
            let source_mpp = source_milli as f64 / 1000.0;
            let target_mpp = source_mpp * factor as f64;
            let n = xs.len().min(ys.len());
            let records = (0..n).map(|i| NucleusRecord {
                // Scale the unit samples onto [0, dim) without touching the bound.
                x: (xs[i] * width as f64).min(width as f64 - 1e-9).max(0.0),
                y: (ys[i] * height as f64).min(height as f64 - 1e-9).max(0.0),
                class: CellClass::ALL[i % 5],
                confidence: None,
            }).collect();
            let set = SlideNucleiSet {
                slide_id: "s".into(),
                patient_id: "p".into(),
                source_mpp,
                width,
                height,
                records,
            };
            let scaled = scale_coordinates(&set, target_mpp).unwrap();
            for nucleus in &scaled.records {
                prop_assert!(nucleus.x >= 0.0 && nucleus.x < scaled.width as f64);
                prop_assert!(nucleus.y >= 0.0 && nucleus.y < scaled.height as f64);
                prop_assert_eq!(nucleus.x, nucleus.x.floor());
                prop_assert_eq!(nucleus.y, nucleus.y.floor());
            }
        }
    }
}
