//! Data-side commands: corpus generation, map building, rendering, entropy,
//! and tiling.

use super::{check_tile_size, create_dir, load_decoded_maps, read_bytes, write_bytes, write_text};
use crate::config::{ConfigFile, Snapshot};
use crate::workers::run_indexed;
use crate::{input, BuildMapsArgs, CliError, EntropyArgs, RenderArgs, SynthArgs, TileArgs};
use cellomaps_core::entropy::shannon_entropy;
use cellomaps_core::ingest::{apply_remap, parse_nuclei_file, scale_coordinates, RemapRule};
use cellomaps_core::map::{build_cellomap, ChannelSpec};
use cellomaps_core::pipeline::{
    write_corpus, write_manifest_csv, write_maps_manifest, entropy_rows_to_csv, EntropyRow,
    MapsManifestRow,
};
use cellomaps_core::synth::{generate_corpus, SynthConfig};
use cellomaps_core::tiler::{filter_sparse_tiles, label_tiles, parse_annotations_file, tile_map};
use cellomaps_core::types::CellClass;
use cellomaps_core::{codec, eval::TileRecord, render::render_png};
use std::collections::BTreeSet;
use std::str::FromStr;

pub fn synth(args: SynthArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let defaults = SynthConfig::default();
    let seed = cfg.resolve(args.seed, "seed", defaults.seed)?;
    let tiles_per_class =
        cfg.resolve(args.tiles_per_class, "tiles_per_class", defaults.tiles_per_class)?;
    let tile_size = cfg.resolve(args.tile_size, "tile_size", defaults.tile_size)?;
    let patients = cfg.resolve(args.patients, "patients", defaults.patients)?;
    let noise_fraction =
        cfg.resolve(args.noise_fraction, "noise_fraction", defaults.noise_fraction)?;
    let source_mpp = cfg.resolve(args.source_mpp, "source_mpp", defaults.source_mpp)?;
    let target_mpp = cfg.resolve(args.target_mpp, "target_mpp", defaults.target_mpp)?;

    check_tile_size(tile_size)?;
    if tiles_per_class < 10 {
        return Err(CliError::input("tiles-per-class must be at least 10"));
    }
    if patients < 6 {
        return Err(CliError::input(
            "patients must be at least 6 so every class can appear",
        ));
    }
    if !(0.0..=0.2).contains(&noise_fraction) {
        return Err(CliError::input("noise-fraction must be in [0, 0.2]"));
    }
    if !(source_mpp.is_finite() && source_mpp > 0.0) {
        return Err(CliError::input("source-mpp must be positive"));
    }
    if !(target_mpp.is_finite() && target_mpp >= source_mpp) {
        return Err(CliError::input(
            "target-mpp must be at least source-mpp (maps only downsample)",
        ));
    }

    let config = SynthConfig {
        seed,
        tiles_per_class,
        tile_size,
        patients,
        source_mpp,
        target_mpp,
        noise_fraction,
        ..SynthConfig::default()
    };
    let corpus = generate_corpus(&config);
    create_dir(&args.out)?;
    let paths = write_corpus(&args.out, &corpus).map_err(input)?;

    let mut snap = Snapshot::new("synth");
    snap.put("seed", seed)
        .put("tiles_per_class", tiles_per_class)
        .put("tile_size", tile_size)
        .put("patients", patients)
        .put("noise_fraction", noise_fraction)
        .put("source_mpp", source_mpp)
        .put("target_mpp", target_mpp);
    snap.write_in_dir(&args.out)?;

    println!(
        "wrote {} slides, {} annotation files, {} truth rows under {}",
        paths.nuclei.len(),
        paths.annotations.len(),
        corpus.truth.len(),
        args.out.display()
    );
    Ok(())
}

fn parse_channels(spec: &str) -> Result<ChannelSpec, CliError> {
    let mut classes = Vec::new();
    for part in spec.split(',') {
        let name = part.trim();
        if name.is_empty() {
            continue;
        }
        let class = CellClass::from_str(name).map_err(|()| {
            CliError::input(format!(
                "unknown cell class {name:?}; expected one of {:?}",
                CellClass::ALL.map(|c| c.name())
            ))
        })?;
        classes.push(class);
    }
    ChannelSpec::new(classes).map_err(input)
}

pub fn build_maps(args: BuildMapsArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let target_mpp = cfg.resolve(args.target_mpp, "target_mpp", 2.0)?;
    let channels_spec = match args.channels {
        Some(s) => s,
        None => cfg
            .get::<String>("channels")?
            .unwrap_or_else(|| "NeoplasticEpithelial,NonNeoplasticEpithelial,Connective".into()),
    };
    let remap_necrotic = if args.remap_necrotic {
        true
    } else {
        cfg.get::<bool>("remap_necrotic")?.unwrap_or(false)
    };
    let workers = cfg.resolve(args.workers, "workers", 1)?;
    if workers == 0 {
        return Err(CliError::input("workers must be at least 1"));
    }
    let channels = parse_channels(&channels_spec)?;
    if !(target_mpp.is_finite() && target_mpp > 0.0) {
        return Err(CliError::input("target-mpp must be positive"));
    }

    let rules = if remap_necrotic {
        vec![RemapRule::new(CellClass::Necrotic, CellClass::NeoplasticEpithelial).map_err(input)?]
    } else {
        Vec::new()
    };

    create_dir(&args.out)?;
    let inputs = args.inputs.clone();
    let encoded = run_indexed(workers, inputs, |path| -> Result<_, CliError> {
        let set = parse_nuclei_file(&path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let set = apply_remap(&set, &rules).map_err(input)?;
        let set = scale_coordinates(&set, target_mpp)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let map = build_cellomap(&set, &channels);
        Ok((set.slide_id, set.patient_id, codec::encode(&map)))
    });

    let mut seen = BTreeSet::new();
    let mut rows = Vec::new();
    for item in encoded {
        let (slide_id, patient_id, bytes) = item?;
        if !seen.insert(slide_id.clone()) {
            return Err(CliError::input(format!(
                "duplicate slide id {slide_id:?} across inputs"
            )));
        }
        let file_name = format!("{slide_id}.clom");
        write_bytes(&args.out.join(&file_name), &bytes)?;
        rows.push(MapsManifestRow {
            slide_id,
            patient_id,
            path: file_name,
        });
    }
    write_maps_manifest(&args.out.join("maps_manifest.csv"), &rows).map_err(input)?;

    let mut snap = Snapshot::new("build-maps");
    snap.put("target_mpp", target_mpp)
        .put("channels", &channels_spec)
        .put("remap_necrotic", remap_necrotic)
        .put("workers", workers);
    snap.write_in_dir(&args.out)?;

    println!("wrote {} maps under {}", rows.len(), args.out.display());
    Ok(())
}

pub fn render(args: RenderArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let dot_radius = cfg.resolve(args.dot_radius, "dot_radius", 0)?;
    let bytes = read_bytes(&args.map)?;
    let map = codec::decode(&bytes)
        .map_err(|e| CliError::input(format!("{}: {e}", args.map.display())))?;
    let png = render_png(&map, dot_radius).map_err(input)?;
    write_bytes(&args.out, &png)?;

    let mut snap = Snapshot::new("render");
    snap.put("dot_radius", dot_radius);
    snap.write_beside(&args.out)?;

    println!(
        "rendered {}x{} map ({} channels) to {}",
        map.width,
        map.height,
        map.planes.len(),
        args.out.display()
    );
    Ok(())
}

pub fn entropy(args: EntropyArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let tile = cfg.resolve(args.tile, "tile", 448)?;
    check_tile_size(tile)?;
    let bytes = read_bytes(&args.map)?;
    let map = codec::decode(&bytes)
        .map_err(|e| CliError::input(format!("{}: {e}", args.map.display())))?;
    let slide_id = args
        .map
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let alphabet = 1usize << map.planes.len();

    let mut rows = Vec::new();
    let mut y = 0;
    while y + tile <= map.height {
        let mut x = 0;
        while x + tile <= map.width {
            let window = map.crop(x, y, tile);
            let symbols = cellomaps_core::entropy::composite_symbols(&window);
            let report = shannon_entropy(&symbols, alphabet).map_err(input)?;
            rows.push(EntropyRow {
                slide_id: slide_id.clone(),
                x,
                y,
                bits_per_pixel: report.bits_per_pixel,
            });
            x += tile;
        }
        y += tile;
    }
    write_text(&args.out, &entropy_rows_to_csv(&rows))?;

    let mut snap = Snapshot::new("entropy");
    snap.put("tile", tile);
    snap.write_beside(&args.out)?;

    if rows.is_empty() {
        println!("no full {tile}x{tile} tiles fit a {}x{} map", map.width, map.height);
    } else {
        let mean = rows.iter().map(|r| r.bits_per_pixel).sum::<f64>() / rows.len() as f64;
        println!("mean entropy {mean:.6} bits/pixel over {} tiles", rows.len());
    }
    Ok(())
}

pub fn tile(args: TileArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let tile_size = cfg.resolve(args.tile_size, "tile_size", 448)?;
    check_tile_size(tile_size)?;
    let stride = cfg.resolve(args.stride, "stride", tile_size)?;
    let min_overlap = cfg.resolve(
        args.min_overlap,
        "min_overlap",
        cellomaps_core::tiler::DEFAULT_MIN_OVERLAP,
    )?;
    let min_nuclei = cfg.resolve(
        args.min_nuclei,
        "min_nuclei",
        cellomaps_core::tiler::DEFAULT_MIN_NUCLEI,
    )?;
    if stride == 0 {
        return Err(CliError::input("stride must be positive"));
    }
    if !(min_overlap > 0.5 && min_overlap <= 1.0) {
        return Err(CliError::input("min-overlap must be in (0.5, 1.0]"));
    }

    let maps = load_decoded_maps(&args.maps)?;
    let mut records = Vec::new();
    let mut cut = 0usize;
    for (row, map) in &maps {
        let tiles = tile_map(map, tile_size, stride).map_err(input)?;
        cut += tiles.len();
        let dense = filter_sparse_tiles(tiles, min_nuclei);
        let ann_path = args
            .annotations
            .join(format!("{}.annotations.json", row.slide_id));
        let annotations = parse_annotations_file(&ann_path)
            .map_err(|e| CliError::input(format!("{}: {e}", ann_path.display())))?;
        if annotations.slide_id != row.slide_id {
            return Err(CliError::input(format!(
                "{}: annotations are for slide {:?}, expected {:?}",
                ann_path.display(),
                annotations.slide_id,
                row.slide_id
            )));
        }
        for labeled in label_tiles(&dense, &annotations.regions, min_overlap) {
            records.push(TileRecord {
                slide_id: labeled.slide_id,
                patient_id: labeled.patient_id,
                x: labeled.x,
                y: labeled.y,
                size: labeled.size,
                label: labeled.label,
            });
        }
    }
    write_manifest_csv(&args.out, &records).map_err(input)?;

    let mut snap = Snapshot::new("tile");
    snap.put("tile_size", tile_size)
        .put("stride", stride)
        .put("min_overlap", min_overlap)
        .put("min_nuclei", min_nuclei);
    snap.write_beside(&args.out)?;

    println!(
        "kept {} labeled tiles from {} cut across {} slides",
        records.len(),
        cut,
        maps.len()
    );
    Ok(())
}
