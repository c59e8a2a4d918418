//! Command bodies, grouped by pipeline stage.

mod data;
mod downstream;
mod model;

use crate::config::ConfigFile;
use crate::{input, Cli, CliError, Command};
use cellomaps_core::codec;
use cellomaps_core::map::CellOMap;
use cellomaps_core::pipeline::{read_maps_manifest, MapsManifestRow};
use cellomaps_core::tiler::ALLOWED_TILE_SIZES;
use std::path::Path;

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(args) => data::synth(args, &cfg),
        Command::BuildMaps(args) => data::build_maps(args, &cfg),
        Command::Render(args) => data::render(args, &cfg),
        Command::Entropy(args) => data::entropy(args, &cfg),
        Command::Tile(args) => data::tile(args, &cfg),
        Command::Split(args) => model::split(args, &cfg),
        Command::Train(args) => model::train(args, &cfg),
        Command::Predict(args) => model::predict(args, &cfg),
        Command::Eval(args) => model::eval(args, &cfg),
        Command::Project(args) => downstream::project(args, &cfg),
        Command::Features(args) => downstream::features(args, &cfg),
        Command::Graph(args) => downstream::graph(args, &cfg),
        Command::TmbTrain(args) => downstream::tmb_train(args, &cfg),
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// Tile sides the pipeline commands accept.
pub fn check_tile_size(size: u32) -> Result<(), CliError> {
    if ALLOWED_TILE_SIZES.contains(&size) {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "tile size {size} not supported; expected one of {ALLOWED_TILE_SIZES:?}"
        )))
    }
}

/// Decodes every map in a maps manifest, restoring slide and patient identity
/// from the manifest row (the container itself carries neither).
///
/// Relative map paths resolve against the manifest's directory.
pub fn load_decoded_maps(
    manifest_path: &Path,
) -> Result<Vec<(MapsManifestRow, CellOMap)>, CliError> {
    let rows = read_maps_manifest(manifest_path).map_err(input)?;
    let base = manifest_path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let raw = Path::new(&row.path);
        let path = if raw.is_absolute() {
            raw.to_path_buf()
        } else {
            base.join(raw)
        };
        let bytes = read_bytes(&path)?;
        let mut map = codec::decode(&bytes)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        map.slide_id = row.slide_id.clone();
        map.patient_id = row.patient_id.clone();
        out.push((row, map));
    }
    Ok(out)
}
