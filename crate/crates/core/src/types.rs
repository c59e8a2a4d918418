//! Cell and growth-pattern class vocabularies shared across the pipeline.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Nucleus class as produced by the upstream nuclei detector.
///
/// The set is closed; serialized names are exactly the variant names below.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellClass {
    NeoplasticEpithelial,
    NonNeoplasticEpithelial,
    Connective,
    Inflammatory,
    Necrotic,
}

impl CellClass {
    pub const ALL: [CellClass; 5] = [
        CellClass::NeoplasticEpithelial,
        CellClass::NonNeoplasticEpithelial,
        CellClass::Connective,
        CellClass::Inflammatory,
        CellClass::Necrotic,
    ];

    /// Stable wire code used by the CLOM container.
    pub fn code(self) -> u8 {
        match self {
            CellClass::NeoplasticEpithelial => 0,
            CellClass::NonNeoplasticEpithelial => 1,
            CellClass::Connective => 2,
            CellClass::Inflammatory => 3,
            CellClass::Necrotic => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<CellClass> {
        CellClass::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellClass::NeoplasticEpithelial => "NeoplasticEpithelial",
            CellClass::NonNeoplasticEpithelial => "NonNeoplasticEpithelial",
            CellClass::Connective => "Connective",
            CellClass::Inflammatory => "Inflammatory",
            CellClass::Necrotic => "Necrotic",
        }
    }
}

impl FromStr for CellClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CellClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or(())
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Lung adenocarcinoma growth pattern (or normal tissue).
///
/// Canonical index order is the declaration order, 0..=5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PatternClass {
    Lepidic,
    Acinar,
    Papillary,
    Micropapillary,
    Solid,
    Normal,
}

/// Number of growth-pattern classes.
pub const PATTERN_COUNT: usize = 6;

impl PatternClass {
    pub const ALL: [PatternClass; PATTERN_COUNT] = [
        PatternClass::Lepidic,
        PatternClass::Acinar,
        PatternClass::Papillary,
        PatternClass::Micropapillary,
        PatternClass::Solid,
        PatternClass::Normal,
    ];

    /// Canonical index, 0..=5.
    pub fn index(self) -> usize {
        match self {
            PatternClass::Lepidic => 0,
            PatternClass::Acinar => 1,
            PatternClass::Papillary => 2,
            PatternClass::Micropapillary => 3,
            PatternClass::Solid => 4,
            PatternClass::Normal => 5,
        }
    }

    pub fn from_index(index: usize) -> Option<PatternClass> {
        PatternClass::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PatternClass::Lepidic => "Lepidic",
            PatternClass::Acinar => "Acinar",
            PatternClass::Papillary => "Papillary",
            PatternClass::Micropapillary => "Micropapillary",
            PatternClass::Solid => "Solid",
            PatternClass::Normal => "Normal",
        }
    }
}

impl FromStr for PatternClass {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PatternClass::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or(())
    }
}

impl fmt::Display for PatternClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
