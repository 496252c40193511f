use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use signed_gnn::eval::{export_embeddings, predict, Metrics, PredictionSet};
use signed_gnn::explain::topk_edges;
use signed_gnn::graphs::{read_graphs, write_graphs};
use signed_gnn::labels::{fuse_labels, CategoryLexicon, ImageAnnotation, Split};
use signed_gnn::model::checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta};
use signed_gnn::pipeline::{dataset_from_files, explain_model, split_graphs, stage_seed, write_explanation, Stage};
use signed_gnn::synth::{generate, recovery_score, write_synth, GroundTruth, Recovery, SynthConfig};
use signed_gnn::training::train;
use signed_gnn::{Dataset, Params, RngStream};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::run::{hex, RunDir};

const CATEGORIES_FILE: &str = "categories.json";

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    match path {
        None => Err(CliError::MissingInput(format!("{key} is not set"))),
        Some(p) if !p.exists() => Err(CliError::MissingInput(format!("{key}: {} does not exist", p.display()))),
        Some(p) => Ok(p),
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let file = File::open(path).map_err(|e| CliError::MissingInput(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

struct Loaded {
    dataset: Dataset,
    categories: Vec<String>,
}

/// Graphs from `paths.graphs`, or built from `paths.manifest` + `paths.labels`.
fn load_dataset(cfg: &RunConfig) -> Result<(Loaded, bool), CliError> {
    if let Some(graphs) = &cfg.paths.graphs {
        let path = require(&cfg.paths.graphs, "paths.graphs")?;
        let dataset = read_graphs(path)?;
        dataset.check_invariants()?;
        let sidecar = graphs.with_file_name(CATEGORIES_FILE);
        let categories: Vec<String> = if sidecar.exists() {
            read_json(&sidecar)?
        } else {
            (0..dataset.num_classes).map(|c| format!("class_{c}")).collect()
        };
        if categories.len() != dataset.num_classes {
            return Err(CliError::Input(format!("{} names {} categories for {} classes", sidecar.display(), categories.len(), dataset.num_classes)));
        }
        return Ok((Loaded { dataset, categories }, false));
    }
    let manifest = require(&cfg.paths.manifest, "paths.manifest")?;
    let labels = require(&cfg.paths.labels, "paths.labels")?;
    let (labels, dataset) = dataset_from_files(manifest, labels, cfg.block_size, cfg.seed)?;
    Ok((
        Loaded {
            dataset,
            categories: labels.categories,
        },
        true,
    ))
}

fn save_dataset(dir: &RunDir, loaded: &Loaded) -> Result<(), CliError> {
    write_graphs(&dir.file("graphs.bin"), &loaded.dataset)?;
    write_json(&dir.file(CATEGORIES_FILE), &loaded.categories)
}

fn load_model(cfg: &RunConfig, dataset: &Dataset) -> Result<(Params, CheckpointMeta), CliError> {
    let path = require(&cfg.paths.checkpoint, "paths.checkpoint")?;
    let (params, meta) = read_checkpoint(path)?;
    let d = params.dims();
    if d.parcels != dataset.num_parcels || d.classes != dataset.num_classes {
        return Err(CliError::Input(format!(
            "checkpoint expects {} parcels and {} classes, graphs have {} and {}",
            d.parcels, d.classes, dataset.num_parcels, dataset.num_classes
        )));
    }
    Ok((params, meta))
}

fn split_summary(dataset: &Dataset) -> String {
    Split::ALL
        .iter()
        .map(|&s| format!("{s} {}", split_graphs(dataset, s).len()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn fuse(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let annotations: Vec<ImageAnnotation> = read_json(require(&cfg.paths.annotations, "paths.annotations")?)?;
    let mut lexicons: Vec<CategoryLexicon> = read_json(require(&cfg.paths.lexicon, "paths.lexicon")?)?;
    for (name, alpha) in &cfg.alpha {
        let lex = lexicons
            .iter_mut()
            .find(|l| &l.category == name)
            .ok_or_else(|| CliError::Config(format!("alpha.{name}: no such category in the lexicon")))?;
        lex.alpha = *alpha;
    }
    let mut rng = RngStream::new(stage_seed(cfg.seed, Stage::Labels));
    let labels = fuse_labels(&annotations, &lexicons, cfg.split, &mut rng)?;
    write_json(&dir.file("labels.json"), &labels)?;
    println!("scored {} images over {} categories", labels.images.len(), labels.categories.len());
    Ok(())
}

pub fn build_graphs(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let manifest = require(&cfg.paths.manifest, "paths.manifest")?;
    let labels = require(&cfg.paths.labels, "paths.labels")?;
    let (labels, dataset) = dataset_from_files(manifest, labels, cfg.block_size, cfg.seed)?;
    let loaded = Loaded {
        dataset,
        categories: labels.categories,
    };
    save_dataset(dir, &loaded)?;
    println!("built {} graphs ({})", loaded.dataset.graphs.len(), split_summary(&loaded.dataset));
    Ok(())
}

pub fn synth(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let data = generate(&SynthConfig {
        seed: stage_seed(cfg.seed, Stage::Synth),
        ..cfg.synth_config()
    })?;
    write_synth(&dir.path, &data)?;
    println!("generated {} trials", data.trials.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    best_epoch: usize,
    epochs_run: usize,
    stop_reason: String,
    best_val_loss: f64,
    best_val_accuracy: f64,
    class_weights: Vec<f64>,
}

pub fn train_model(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let (loaded, built) = load_dataset(cfg)?;
    if built {
        save_dataset(dir, &loaded)?;
    }
    let outcome = train(&loaded.dataset, &cfg.train_config(stage_seed(cfg.seed, Stage::Train)))?;
    let history = &outcome.history;
    let best = history.epochs[history.best_epoch - 1];
    let meta = CheckpointMeta {
        epoch: history.best_epoch as u32,
        config_hash: dir.hash,
    };
    write_checkpoint(&dir.file("checkpoint.bin"), &outcome.params, &meta)?;
    history.write_csv(BufWriter::new(File::create(dir.file("history.csv"))?))?;
    write_json(
        &dir.file("train_summary.json"),
        &TrainSummary {
            best_epoch: history.best_epoch,
            epochs_run: history.epochs.len(),
            stop_reason: history.stop_reason.to_string(),
            best_val_loss: best.val_loss,
            best_val_accuracy: best.val_accuracy,
            class_weights: outcome.loss.class_weights.clone(),
        },
    )?;
    println!(
        "trained {} epochs ({}), best epoch {} with val loss {:.4} and val accuracy {:.3}",
        history.epochs.len(),
        history.stop_reason,
        history.best_epoch,
        best.val_loss,
        best.val_accuracy
    );
    Ok(())
}

fn write_predictions(path: &Path, preds: &PredictionSet) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path)?);
    let probs: Vec<String> = (0..preds.num_classes).map(|c| format!("p{c}")).collect();
    writeln!(w, "index,label,predicted,{}", probs.join(","))?;
    for (i, p) in preds.entries.iter().enumerate() {
        let scores: Vec<String> = p.scores.iter().map(|s| format!("{s:?}")).collect();
        writeln!(w, "{i},{},{},{}", p.true_label, p.predicted, scores.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn eval(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let (loaded, _) = load_dataset(cfg)?;
    let (params, meta) = load_model(cfg, &loaded.dataset)?;
    let preds = predict(&params, split_graphs(&loaded.dataset, Split::Test))?;
    let metrics = Metrics::compute(&preds, &loaded.categories, cfg.seed, hex(&meta.config_hash))?;
    write_json(&dir.file("metrics.json"), &metrics)?;
    write_predictions(&dir.file("predictions.csv"), &preds)?;
    println!("test accuracy {:.4}, macro-AP {:.4} over {} graphs", metrics.accuracy, metrics.macro_ap, metrics.n_test);
    Ok(())
}

#[derive(Serialize)]
struct ClassRecovery {
    category: String,
    k: usize,
    #[serde(flatten)]
    recovery: Recovery,
}

pub fn explain(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let (loaded, _) = load_dataset(cfg)?;
    let (params, _) = load_model(cfg, &loaded.dataset)?;
    let p = loaded.dataset.num_parcels;
    let available = p * p.saturating_sub(1) / 2;
    if cfg.explain.top_k > available {
        return Err(CliError::Config(format!("explain.top_k: {} exceeds the {available} edges of a {p}-parcel graph", cfg.explain.top_k)));
    }
    let names: Option<Vec<String>> = match &cfg.paths.parcel_names {
        Some(_) => Some(read_json(require(&cfg.paths.parcel_names, "paths.parcel_names")?)?),
        None => None,
    };
    let explanation = explain_model(&params, &loaded.dataset)?;
    for (name, map) in loaded.categories.iter().zip(&explanation.classes) {
        if map.is_none() {
            eprintln!("warning: no correctly classified test graph of class {name}; its map is skipped");
        }
    }
    let written = write_explanation(&dir.path, &explanation, &loaded.categories, cfg.explain.top_k, names.as_deref())?;
    if cfg.paths.ground_truth.is_some() {
        let truth: GroundTruth = read_json(require(&cfg.paths.ground_truth, "paths.ground_truth")?)?;
        let mut rows = Vec::new();
        for (c, (name, map)) in loaded.categories.iter().zip(&explanation.classes).enumerate() {
            let (Some(map), Some(planted)) = (map, truth.classes.get(c)) else {
                continue;
            };
            let k = planted.all_edges().len().min(available);
            let top: Vec<(usize, usize)> = topk_edges(map, k)?.iter().map(|e| (e.i, e.j)).collect();
            rows.push(ClassRecovery {
                category: name.clone(),
                k,
                recovery: recovery_score(&top, &truth, c)?,
            });
        }
        write_json(&dir.file("recovery.json"), &rows)?;
    }
    println!("wrote {} relevance files", written.len());
    Ok(())
}

pub fn embed(cfg: &RunConfig, dir: &RunDir) -> Result<(), CliError> {
    let (loaded, _) = load_dataset(cfg)?;
    let (params, _) = load_model(cfg, &loaded.dataset)?;
    export_embeddings(&params, &loaded.dataset, BufWriter::new(File::create(dir.file("embeddings.csv"))?))?;
    println!("embedded {} graphs", loaded.dataset.graphs.len());
    Ok(())
}
