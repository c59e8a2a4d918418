//! Slide-level commands downstream of tile predictions: projection,
//! feature vectors, tile graphs, and the TMB model.

use super::{check_tile_size, read_bytes, read_text, write_bytes, write_text};
use crate::config::{ConfigFile, Snapshot};
use crate::{input, CliError, FeaturesArgs, GraphArgs, ProjectArgs, TmbTrainArgs};
use cellomaps_core::codec;
use cellomaps_core::nn::model::PredictionRecord;
use cellomaps_core::pipeline::{
    join_features_with_labels, read_features_csv, read_predictions_csv, write_features_csv,
    SlideFeatures,
};
use cellomaps_core::projection::{
    build_overlay, feature_vector, overlay_legend, render_overlay_png,
};
use cellomaps_core::tmb::{
    build_tile_graph, mlp_to_json, parse_tmb_labels, train_mlp, GraphNode, MlpTrainConfig,
    TmbLabel,
};
use std::collections::BTreeMap;

/// Narrows predictions to one slide: the named one, or the only one present.
fn single_slide(
    predictions: Vec<PredictionRecord>,
    wanted: Option<&str>,
) -> Result<(String, Vec<PredictionRecord>), CliError> {
    let mut slides: Vec<String> = predictions.iter().map(|p| p.slide_id.clone()).collect();
    slides.sort();
    slides.dedup();
    match wanted {
        Some(id) => {
            if !slides.iter().any(|s| s == id) {
                return Err(CliError::input(format!(
                    "slide {id:?} has no predictions; present: {slides:?}"
                )));
            }
            let subset = predictions
                .into_iter()
                .filter(|p| p.slide_id == id)
                .collect();
            Ok((id.to_string(), subset))
        }
        None => match slides.as_slice() {
            [] => Err(CliError::input("predictions file is empty")),
            [only] => Ok((only.clone(), predictions)),
            many => Err(CliError::input(format!(
                "predictions cover {} slides ({many:?}); pick one with --slide",
                many.len()
            ))),
        },
    }
}

pub fn project(args: ProjectArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let tile_size = cfg.resolve(args.tile_size, "tile_size", 448)?;
    check_tile_size(tile_size)?;
    let block_size = cfg.resolve(args.block_size, "block_size", 8)?;
    if block_size == 0 {
        return Err(CliError::input("block-size must be at least 1"));
    }

    let predictions = read_predictions_csv(&args.predictions).map_err(input)?;
    let (slide_id, subset) = single_slide(predictions, args.slide.as_deref())?;
    let bytes = read_bytes(&args.map)?;
    let map = codec::decode(&bytes)
        .map_err(|e| CliError::input(format!("{}: {e}", args.map.display())))?;

    let overlay = build_overlay(&subset, map.width, map.height, tile_size).map_err(input)?;
    let png = render_overlay_png(&overlay, block_size).map_err(input)?;
    write_bytes(&args.out, &png)?;
    let legend = overlay_legend(&overlay, block_size);
    let legend_path = args.out.with_extension("legend.json");
    write_text(
        &legend_path,
        &serde_json::to_string_pretty(&legend).expect("legend serializes"),
    )?;

    let mut snap = Snapshot::new("project");
    snap.put("tile_size", tile_size).put("block_size", block_size);
    if let Some(slide) = &args.slide {
        snap.put("slide", slide);
    }
    snap.write_beside(&args.out)?;

    println!(
        "projected {} tiles of slide {} onto a {}x{} grid: {} (legend {})",
        subset.len(),
        slide_id,
        overlay.grid_width,
        overlay.grid_height,
        args.out.display(),
        legend_path.display()
    );
    Ok(())
}

pub fn features(args: FeaturesArgs, _cfg: &ConfigFile) -> Result<(), CliError> {
    let predictions = read_predictions_csv(&args.predictions).map_err(input)?;
    let manifest = cellomaps_core::pipeline::read_manifest_csv(&args.manifest).map_err(input)?;

    let mut patient_of: BTreeMap<&str, &str> = BTreeMap::new();
    for record in &manifest {
        match patient_of.insert(&record.slide_id, &record.patient_id) {
            Some(previous) if previous != record.patient_id => {
                return Err(CliError::input(format!(
                    "manifest maps slide {:?} to patients {:?} and {:?}",
                    record.slide_id, previous, record.patient_id
                )));
            }
            _ => {}
        }
    }

    let mut by_slide: BTreeMap<String, Vec<PredictionRecord>> = BTreeMap::new();
    for pred in predictions {
        by_slide.entry(pred.slide_id.clone()).or_default().push(pred);
    }
    if by_slide.is_empty() {
        return Err(CliError::input("predictions file is empty"));
    }

    let mut rows = Vec::with_capacity(by_slide.len());
    for (slide_id, preds) in by_slide {
        let patient_id = patient_of.get(slide_id.as_str()).ok_or_else(|| {
            CliError::input(format!(
                "slide {slide_id:?} has predictions but no manifest rows"
            ))
        })?;
        let vector = feature_vector(&preds).map_err(input)?;
        rows.push(SlideFeatures {
            slide_id,
            patient_id: patient_id.to_string(),
            fractions: vector.fractions,
        });
    }
    write_features_csv(&args.out, &rows).map_err(input)?;

    let snap = Snapshot::new("features");
    snap.write_beside(&args.out)?;

    println!("wrote {} slide feature rows to {}", rows.len(), args.out.display());
    Ok(())
}

pub fn graph(args: GraphArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let tile_size = cfg.resolve(args.tile_size, "tile_size", 448)?;
    check_tile_size(tile_size)?;

    let predictions = read_predictions_csv(&args.predictions).map_err(input)?;
    let (slide_id, subset) = single_slide(predictions, args.slide.as_deref())?;

    let mut nodes = Vec::with_capacity(subset.len());
    for pred in &subset {
        if pred.x % tile_size != 0 || pred.y % tile_size != 0 {
            return Err(CliError::input(format!(
                "prediction at ({}, {}) is off the {tile_size}-pixel grid",
                pred.x, pred.y
            )));
        }
        let mut features = [0.0; 6];
        features.copy_from_slice(&pred.probabilities);
        nodes.push(GraphNode {
            gx: pred.x / tile_size,
            gy: pred.y / tile_size,
            features,
        });
    }
    let graph = build_tile_graph(nodes).map_err(input)?;
    write_text(
        &args.out,
        &serde_json::to_string_pretty(&graph).expect("graph serializes"),
    )?;

    let mut snap = Snapshot::new("graph");
    snap.put("tile_size", tile_size);
    if let Some(slide) = &args.slide {
        snap.put("slide", slide);
    }
    snap.write_beside(&args.out)?;

    println!(
        "wrote graph of slide {}: {} nodes, {} edges to {}",
        slide_id,
        graph.nodes.len(),
        graph.edges.len(),
        args.out.display()
    );
    Ok(())
}

pub fn tmb_train(args: TmbTrainArgs, cfg: &ConfigFile) -> Result<(), CliError> {
    let defaults = MlpTrainConfig::default();
    let hidden = cfg.resolve(args.hidden, "hidden", defaults.hidden)?;
    let learning_rate = cfg.resolve(args.learning_rate, "learning_rate", defaults.learning_rate)?;
    let epochs = cfg.resolve(args.epochs, "epochs", defaults.epochs)?;
    let seed = cfg.resolve(args.seed, "seed", defaults.seed)?;
    if hidden == 0 {
        return Err(CliError::input("hidden must be at least 1"));
    }
    if epochs == 0 {
        return Err(CliError::input("epochs must be at least 1"));
    }
    if !(learning_rate.is_finite() && learning_rate >= 0.0) {
        return Err(CliError::input("learning-rate must be finite and non-negative"));
    }

    let features = read_features_csv(&args.features).map_err(input)?;
    let labels_text = read_text(&args.labels)?;
    let labels = parse_tmb_labels(&labels_text)
        .map_err(|e| CliError::input(format!("{}: {e}", args.labels.display())))?;
    let joined = join_features_with_labels(&features, &labels).map_err(input)?;

    let inputs: Vec<[f64; 6]> = joined.iter().map(|(f, _)| *f).collect();
    let targets: Vec<TmbLabel> = joined.iter().map(|(_, l)| *l).collect();
    let config = MlpTrainConfig {
        hidden,
        learning_rate,
        epochs,
        seed,
    };
    let (model, report) = train_mlp(&inputs, &targets, &config).map_err(input)?;

    write_text(&args.out, &mlp_to_json(&model))?;
    let losses_path = args.out.with_extension("losses.csv");
    let mut losses = String::from("epoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{},{}\n", i + 1, loss));
    }
    write_text(&losses_path, &losses)?;

    let mut snap = Snapshot::new("tmb-train");
    snap.put("hidden", hidden)
        .put("learning_rate", learning_rate)
        .put("epochs", epochs)
        .put("seed", seed);
    snap.write_beside(&args.out)?;

    println!(
        "trained TMB MLP on {} slides: train accuracy {:.4}; model {} (losses {})",
        inputs.len(),
        report.train_accuracy,
        args.out.display(),
        losses_path.display()
    );
    Ok(())
}
