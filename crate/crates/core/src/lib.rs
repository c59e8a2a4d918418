//! Cell organization maps: a compact spatial representation of nuclei
//! detections and the models that consume it.
//!
//! The pipeline runs in stages: nuclei JSON is parsed and rescaled
//! ([`ingest`]), rasterized into bit-packed multi-channel centroid maps
//! ([`map`], [`codec`]), cut into labeled tiles ([`tiler`]), classified into
//! growth patterns by a compact CNN ([`nn`]), evaluated under patient-level
//! splits ([`eval`]), and projected back onto slides as pattern feature
//! vectors ([`projection`]) that drive mutational-burden models ([`tmb`]).
//! A seeded synthetic corpus ([`synth`]) exercises everything end to end.

pub mod codec;
pub mod entropy;
pub mod eval;
pub mod ingest;
pub mod map;
pub mod nn;
pub mod pipeline;
pub mod projection;
pub mod render;
pub mod synth;
pub mod tiler;
pub mod tmb;
pub mod types;
