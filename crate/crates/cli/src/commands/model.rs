//! Model-side commands: splitting, training, inference, and scoring.

use super::{create_dir, load_decoded_maps, write_text};
use crate::config::{ConfigFile, Snapshot};
use crate::workers::run_indexed;
use crate::{
    input, CliError, EvalArgs, LossArg, PredictArgs, SplitArgs, SplitModeArg, SubsetArg, TrainArgs,
};
use cellomaps_core::eval::{compute_metrics, make_split, SplitMode, SplitPlan, TileRecord};
use cellomaps_core::map::CellOMap;
use cellomaps_core::nn::model::{load_checkpoint_file, save_checkpoint, ClassifierModel};
use cellomaps_core::nn::train::{train_classifier, LossKind, TrainConfig};
use cellomaps_core::pipeline::{
    metrics_table, read_manifest_csv, read_predictions_csv, read_split_plan, training_log_csv,
    write_predictions_csv, write_split_plan,
};
use cellomaps_core::tiler::LabeledTile;
use cellomaps_core::types::PatternClass;
use std::collections::{HashMap, HashSet};

pub fn split(args: SplitArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let mode = cfg.resolve(args.mode, "mode", SplitModeArg::Patient)?;
    let test_patients = cfg.resolve(args.test_patients, "test_patients", 2)?;
    let val_fraction = cfg.resolve(args.val_fraction, "val_fraction", 0.15)?;
    let seed = cfg.resolve(args.seed, "seed", 0)?;

    let records = read_manifest_csv(&args.manifest).map_err(input)?;
    let core_mode = match mode {
        SplitModeArg::Patient => SplitMode::PatientLevel,
        SplitModeArg::Tile => SplitMode::TileLevel,
    };
    let plan = make_split(&records, core_mode, test_patients, val_fraction, seed).map_err(input)?;
    write_split_plan(&args.out, &plan).map_err(input)?;

    let mut snap = Snapshot::new("split");
    snap.put("mode", mode)
        .put("test_patients", test_patients)
        .put("val_fraction", val_fraction)
        .put("seed", seed);
    snap.write_beside(&args.out)?;

    println!(
        "split {} tiles: {} train / {} val / {} test (test patients: {})",
        records.len(),
        plan.train.len(),
        plan.val.len(),
        plan.test.len(),
        plan.test_patients.join(", ")
    );
    Ok(())
}

/// Rebuilds the labeled tile pixels for every manifest record by cropping the
/// decoded slide maps at the recorded origins.
fn reconstruct_tiles(
    maps: &[(cellomaps_core::pipeline::MapsManifestRow, CellOMap)],
    records: &[TileRecord],
) -> Result<Vec<LabeledTile>, CliError> {
    let by_slide: HashMap<&str, &CellOMap> = maps
        .iter()
        .map(|(row, map)| (row.slide_id.as_str(), map))
        .collect();
    let mut tiles = Vec::with_capacity(records.len());
    for record in records {
        let map = by_slide.get(record.slide_id.as_str()).ok_or_else(|| {
            CliError::input(format!(
                "manifest references slide {:?} absent from the maps manifest",
                record.slide_id
            ))
        })?;
        if record.x + record.size > map.width || record.y + record.size > map.height {
            return Err(CliError::input(format!(
                "tile {} lies outside its {}x{} map",
                record.tile_id(),
                map.width,
                map.height
            )));
        }
        tiles.push(LabeledTile {
            slide_id: record.slide_id.clone(),
            patient_id: record.patient_id.clone(),
            x: record.x,
            y: record.y,
            size: record.size,
            label: record.label,
            pixels: map.crop(record.x, record.y, record.size),
        });
    }
    Ok(tiles)
}

fn uniform_tile_size(records: &[TileRecord]) -> Result<u32, CliError> {
    let mut sizes: Vec<u32> = records.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    match sizes.as_slice() {
        [] => Err(CliError::input("tile manifest is empty")),
        [size] => Ok(*size),
        many => Err(CliError::input(format!(
            "tile manifest mixes tile sizes {many:?}"
        ))),
    }
}

/// Picks the tiles a plan subset names, preserving the subset's order.
fn tiles_for_ids<'a>(
    tiles: &'a [LabeledTile],
    records: &[TileRecord],
    ids: &[String],
) -> Result<Vec<LabeledTile>, CliError> {
    let by_id: HashMap<String, &'a LabeledTile> = records
        .iter()
        .zip(tiles)
        .map(|(record, tile)| (record.tile_id(), tile))
        .collect();
    ids.iter()
        .map(|id| {
            by_id.get(id).map(|t| (*t).clone()).ok_or_else(|| {
                CliError::input(format!("plan references tile {id:?} absent from the manifest"))
            })
        })
        .collect()
}

pub fn train(args: TrainArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let defaults = TrainConfig::default();
    let epochs = cfg.resolve(args.epochs, "epochs", defaults.epochs)?;
    let learning_rate = cfg.resolve(args.learning_rate, "learning_rate", defaults.learning_rate)?;
    let batch_size = cfg.resolve(args.batch_size, "batch_size", defaults.batch_size)?;
    let seed = cfg.resolve(args.seed, "seed", defaults.seed)?;
    let loss = cfg.resolve(args.loss, "loss", LossArg::Focal)?;
    let gamma = cfg.resolve(args.gamma, "gamma", defaults.gamma)?;
    let flip_h = cfg.resolve(args.flip_h, "flip_h", defaults.flip_horizontal)?;
    let flip_v = cfg.resolve(args.flip_v, "flip_v", defaults.flip_vertical)?;

    if epochs == 0 {
        return Err(CliError::input("epochs must be at least 1"));
    }
    if batch_size == 0 {
        return Err(CliError::input("batch-size must be at least 1"));
    }
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(CliError::input("learning-rate must be finite and non-negative"));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(CliError::input("gamma must be finite and non-negative"));
    }
    for (name, p) in [("flip-h", flip_h), ("flip-v", flip_v)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(CliError::input(format!("{name} must be in [0, 1]")));
        }
    }

    let maps = load_decoded_maps(&args.maps)?;
    let records = read_manifest_csv(&args.manifest).map_err(input)?;
    let plan = read_split_plan(&args.plan).map_err(input)?;

    let input_side = uniform_tile_size(&records)?;
    let mut channel_counts: Vec<usize> = maps.iter().map(|(_, m)| m.planes.len()).collect();
    channel_counts.sort_unstable();
    channel_counts.dedup();
    let map_channels = match channel_counts.as_slice() {
        [] => return Err(CliError::input("maps manifest is empty")),
        [c] => *c,
        many => {
            return Err(CliError::input(format!(
                "maps mix channel counts {many:?}"
            )))
        }
    };
    let in_channels = cfg.resolve(args.in_channels, "in_channels", map_channels)?;
    if in_channels != map_channels && in_channels != 1 {
        return Err(CliError::input(format!(
            "in-channels must be 1 (merged) or match the {map_channels} map channels"
        )));
    }

    let tiles = reconstruct_tiles(&maps, &records)?;
    let train_tiles = tiles_for_ids(&tiles, &records, &plan.train)?;
    let val_tiles = tiles_for_ids(&tiles, &records, &plan.val)?;

    let config = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        seed,
        flip_horizontal: flip_h,
        flip_vertical: flip_v,
        loss: match loss {
            LossArg::Focal => LossKind::Focal,
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::WeightedCrossEntropy => LossKind::WeightedCrossEntropy,
        },
        gamma,
    };
    let mut model = ClassifierModel::new_seeded(input_side, in_channels, seed).map_err(input)?;
    let report = train_classifier(&mut model, &train_tiles, &val_tiles, &config).map_err(input)?;

    create_dir(&args.out)?;
    write_text(&args.out.join("checkpoint.json"), &save_checkpoint(&model))?;
    write_text(
        &args.out.join("training_log.csv"),
        &training_log_csv(&report.epochs),
    )?;

    let mut snap = Snapshot::new("train");
    snap.put("epochs", epochs)
        .put("learning_rate", learning_rate)
        .put("batch_size", batch_size)
        .put("seed", seed)
        .put("loss", loss)
        .put("gamma", gamma)
        .put("flip_h", flip_h)
        .put("flip_v", flip_v)
        .put("in_channels", in_channels);
    snap.write_in_dir(&args.out)?;

    println!(
        "trained {} epochs on {} tiles (val {}); best epoch {} val macro F1 {:.4}",
        epochs,
        train_tiles.len(),
        val_tiles.len(),
        report.best_epoch,
        report.best_val_macro_f1
    );
    println!("checkpoint: {}", args.out.join("checkpoint.json").display());
    Ok(())
}

/// Resolves the subset of manifest records a plan restricts a command to.
fn select_records(
    records: Vec<TileRecord>,
    plan: Option<&SplitPlan>,
    subset: SubsetArg,
) -> Result<Vec<TileRecord>, CliError> {
    let Some(plan) = plan else {
        if subset != SubsetArg::All {
            return Err(CliError::input(format!(
                "subset {subset} needs --plan to define it"
            )));
        }
        return Ok(records);
    };
    let ids: HashSet<&String> = match subset {
        SubsetArg::Train => plan.train.iter().collect(),
        SubsetArg::Val => plan.val.iter().collect(),
        SubsetArg::Test => plan.test.iter().collect(),
        SubsetArg::All => return Ok(records),
    };
    Ok(records
        .into_iter()
        .filter(|r| ids.contains(&r.tile_id()))
        .collect())
}

pub fn predict(args: PredictArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let workers = cfg.resolve(args.workers, "workers", 1)?;
    if workers == 0 {
        return Err(CliError::input("workers must be at least 1"));
    }
    let subset = match args.subset {
        Some(s) => s,
        None => {
            if args.plan.is_some() {
                SubsetArg::Test
            } else {
                SubsetArg::All
            }
        }
    };

    let model = load_checkpoint_file(&args.checkpoint)
        .map_err(|e| CliError::input(format!("{}: {e}", args.checkpoint.display())))?;
    let maps = load_decoded_maps(&args.maps)?;
    let records = read_manifest_csv(&args.manifest).map_err(input)?;
    let plan = args
        .plan
        .as_deref()
        .map(|p| read_split_plan(p).map_err(input))
        .transpose()?;
    let selected = select_records(records, plan.as_ref(), subset)?;

    let by_slide: HashMap<&str, &CellOMap> = maps
        .iter()
        .map(|(row, map)| (row.slide_id.as_str(), map))
        .collect();
    let predictions = run_indexed(workers, selected, |record| -> Result<_, CliError> {
        let map = by_slide.get(record.slide_id.as_str()).ok_or_else(|| {
            CliError::input(format!(
                "manifest references slide {:?} absent from the maps manifest",
                record.slide_id
            ))
        })?;
        if record.x + record.size > map.width || record.y + record.size > map.height {
            return Err(CliError::input(format!(
                "tile {} lies outside its {}x{} map",
                record.tile_id(),
                map.width,
                map.height
            )));
        }
        let tile = map.crop(record.x, record.y, record.size);
        model.forward(&tile, record.x, record.y).map_err(input)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    write_predictions_csv(&args.out, &predictions).map_err(input)?;

    let mut snap = Snapshot::new("predict");
    snap.put("subset", subset).put("workers", workers);
    snap.write_beside(&args.out)?;

    println!("wrote {} predictions to {}", predictions.len(), args.out.display());
    Ok(())
}

pub fn eval(args: EvalArgs, _cfg: &ConfigFile) -> Result<(), CliError> {
    let subset = match args.subset {
        Some(s) => s,
        None => {
            if args.plan.is_some() {
                SubsetArg::Test
            } else {
                SubsetArg::All
            }
        }
    };

    let predictions = read_predictions_csv(&args.predictions).map_err(input)?;
    let records = read_manifest_csv(&args.manifest).map_err(input)?;
    let plan = args
        .plan
        .as_deref()
        .map(|p| read_split_plan(p).map_err(input))
        .transpose()?;
    let selected = select_records(records, plan.as_ref(), subset)?;

    let by_origin: HashMap<(String, u32, u32), &cellomaps_core::nn::model::PredictionRecord> =
        predictions
            .iter()
            .map(|p| ((p.slide_id.clone(), p.x, p.y), p))
            .collect();
    let mut paired = Vec::with_capacity(selected.len());
    let mut truths: Vec<PatternClass> = Vec::with_capacity(selected.len());
    for record in &selected {
        let key = (record.slide_id.clone(), record.x, record.y);
        let pred = by_origin.get(&key).ok_or_else(|| {
            CliError::input(format!("no prediction for tile {}", record.tile_id()))
        })?;
        paired.push((*pred).clone());
        truths.push(record.label);
    }
    let report = compute_metrics(&paired, &truths).map_err(input)?;

    let mut snap = Snapshot::new("eval");
    snap.put("subset", subset);
    snap.log_to_stderr();

    println!("{}", serde_json::to_string_pretty(&report).expect("metrics serialize"));
    println!("{}", metrics_table(&report));
    Ok(())
}
