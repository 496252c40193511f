//! End-to-end stages shared by the command-line tool and integration tests.
//!
//! Every stage draws from its own stream derived from the run seed, so
//! changing one stage's consumption never shifts another's randomness.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::explain::{class_relevance, global_mask_relevance, topk_edges, write_edges_csv, write_nodes_csv, RelevanceMap};
use crate::graphs::{assemble_dataset, load_trials, GraphDataset, SignedGraph, TrialTimeSeries};
use crate::labels::{LabelsFile, Split};
use crate::model::ModelParams;
use crate::numerics::RngStream;
use crate::synth::{generate, SynthConfig, SynthData};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Synth = 1,
    Labels = 2,
    Graphs = 3,
    Train = 4,
}

/// Seed for one stage of a run.
pub fn stage_seed(seed: u64, stage: Stage) -> u64 {
    RngStream::new(seed).fork(stage as u64).next_u64()
}

/// Block assembly with the graph-stage stream of `seed`.
pub fn build_dataset(
    trials: &[TrialTimeSeries<f64>],
    labels: &LabelsFile,
    block_size: usize,
    seed: u64,
) -> Result<GraphDataset<f64>> {
    let mut rng = RngStream::new(stage_seed(seed, Stage::Graphs));
    let dataset = assemble_dataset(trials, labels, block_size, &mut rng)?;
    dataset.check_invariants()?;
    Ok(dataset)
}

/// Loads a trial manifest and a labels file, then assembles graphs.
pub fn dataset_from_files(manifest: &Path, labels: &Path, block_size: usize, seed: u64) -> Result<(LabelsFile, GraphDataset<f64>)> {
    let labels: LabelsFile = serde_json::from_reader(std::io::BufReader::new(File::open(labels)?))?;
    labels.validate()?;
    let trials = load_trials(manifest)?;
    let dataset = build_dataset(&trials, &labels, block_size, seed)?;
    Ok((labels, dataset))
}

/// Generates the synthetic harness with the synth-stage stream and builds
/// its graphs; `cfg.seed` is replaced by the derived stage seed.
pub fn synthetic_dataset(cfg: &SynthConfig, block_size: usize, seed: u64) -> Result<(SynthData, GraphDataset<f64>)> {
    let data = generate(&SynthConfig {
        seed: stage_seed(seed, Stage::Synth),
        ..cfg.clone()
    })?;
    let dataset = build_dataset(&data.trials, &data.labels, block_size, seed)?;
    Ok((data, dataset))
}

pub fn split_graphs<T>(dataset: &GraphDataset<T>, split: Split) -> Vec<&SignedGraph<T>> {
    dataset.graphs.iter().filter(|g| g.split == split).collect()
}

/// Global mask map plus one class map per class; a class map is `None`
/// when no test graph of that class is classified correctly.
#[derive(Debug, Clone)]
pub struct Explanation {
    pub global: RelevanceMap<f64>,
    pub classes: Vec<Option<RelevanceMap<f64>>>,
}

pub fn explain_model(params: &ModelParams<f64>, dataset: &GraphDataset<f64>) -> Result<Explanation> {
    let global = global_mask_relevance(&params.mask())?;
    let test = split_graphs(dataset, Split::Test);
    let classes = (0..dataset.num_classes)
        .map(|c| class_relevance(params, test.iter().copied(), c).ok())
        .collect();
    Ok(Explanation { global, classes })
}

/// Filename-safe form of a category name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' { ch } else { '_' })
        .collect()
}

/// Writes `relevance_<tag>.csv` (top-k edges) and `nodes_<tag>.csv`.
pub fn write_relevance(dir: &Path, tag: &str, map: &RelevanceMap<f64>, k: usize, parcel_names: Option<&[String]>) -> Result<[PathBuf; 2]> {
    let edges_path = dir.join(format!("relevance_{tag}.csv"));
    let nodes_path = dir.join(format!("nodes_{tag}.csv"));
    write_edges_csv(BufWriter::new(File::create(&edges_path)?), &topk_edges(map, k)?)?;
    write_nodes_csv(BufWriter::new(File::create(&nodes_path)?), &map.node_values, parcel_names)?;
    Ok([edges_path, nodes_path])
}

/// Writes every map of `explanation`; class files use `class_<category>`.
pub fn write_explanation(
    dir: &Path,
    explanation: &Explanation,
    categories: &[String],
    k: usize,
    parcel_names: Option<&[String]>,
) -> Result<Vec<PathBuf>> {
    let mut written = write_relevance(dir, "global", &explanation.global, k, parcel_names)?.to_vec();
    for (name, map) in categories.iter().zip(&explanation.classes) {
        if let Some(map) = map {
            let tag = format!("class_{}", file_stem(name));
            written.extend(write_relevance(dir, &tag, map, k, parcel_names)?);
        }
    }
    Ok(written)
}
