//! Synthetic trial generator with planted class-specific subnetworks.
//!
//! Every parcel signal is unit-variance white noise. A planted edge `(i, j)`
//! adds a shared latent `z` to both endpoints:
//! `xᵢ = √ρ·z + √(1−ρ)·εᵢ`, `xⱼ = ±√ρ·z + √(1−ρ)·εⱼ`, giving population
//! correlation `±ρ` exactly when each endpoint belongs to a single planted
//! edge. Parcels on several edges are rescaled back to unit variance, which
//! lowers their pairwise correlations below `ρ`.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{write_trials, TrialTimeSeries};
use crate::labels::{split_images, CategoryScore, LabelsFile, ScoredImage, SplitAssignment, SplitRatios};
use crate::numerics::{DenseMatrix, RngStream};

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub parcels: usize,
    pub timepoints: usize,
    pub classes: usize,
    pub category_names: Vec<String>,
    /// Planted positive edges per class; generated when empty.
    pub positive_edges: Vec<Vec<Edge>>,
    /// Planted negative (anti-coupled) edges per class; may be empty.
    pub negative_edges: Vec<Vec<Edge>>,
    /// Edges drawn per class when `positive_edges` is empty.
    pub edges_per_class: usize,
    pub coupling: f64,
    pub noise_std: f64,
    pub trials_per_class: usize,
    pub split: SplitRatios,
    pub subject_id: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// 30 parcels, 3 classes with 10 disjoint edges each, ρ = 0.7,
    /// 500 trials of 40 timepoints per class. At block size 5 with a
    /// 60/20/20 split this yields 60/20/20 blocks per class.
    fn default() -> Self {
        Self {
            parcels: 30,
            timepoints: 40,
            classes: 3,
            category_names: vec!["sports".into(), "food".into(), "vehicle".into()],
            positive_edges: Vec::new(),
            negative_edges: Vec::new(),
            edges_per_class: 10,
            coupling: 0.7,
            noise_std: 1.0,
            trials_per_class: 500,
            split: SplitRatios::default(),
            subject_id: "synth".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTruth {
    pub positive: Vec<Edge>,
    pub negative: Vec<Edge>,
}

impl ClassTruth {
    pub fn all_edges(&self) -> BTreeSet<Edge> {
        self.positive.iter().chain(&self.negative).copied().collect()
    }
}

/// Contents of `ground_truth.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub classes: Vec<ClassTruth>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub trials: Vec<TrialTimeSeries<f64>>,
    pub truth: GroundTruth,
    pub labels: LabelsFile,
}

fn upper(e: Edge) -> Edge {
    (e.0.min(e.1), e.0.max(e.1))
}

/// Draws vertex-disjoint edges per class with no edge shared across classes.
fn draw_edges(cfg: &SynthConfig, rng: &mut RngStream) -> Result<Vec<Vec<Edge>>> {
    if 2 * cfg.edges_per_class > cfg.parcels {
        return Err(Error::invalid(format!(
            "{} vertex-disjoint edges need at least {} parcels",
            cfg.edges_per_class,
            2 * cfg.edges_per_class
        )));
    }
    let mut taken = BTreeSet::new();
    let mut out = Vec::with_capacity(cfg.classes);
    for class in 0..cfg.classes {
        let mut attempt = 0;
        let edges = loop {
            let mut nodes: Vec<usize> = (0..cfg.parcels).collect();
            rng.shuffle(&mut nodes);
            let edges: Vec<Edge> = nodes
                .chunks_exact(2)
                .take(cfg.edges_per_class)
                .map(|pair| upper((pair[0], pair[1])))
                .collect();
            if edges.iter().all(|e| !taken.contains(e)) {
                break edges;
            }
            attempt += 1;
            if attempt > 1000 {
                return Err(Error::invalid(format!("could not draw disjoint edges for class {class}")));
            }
        };
        taken.extend(edges.iter().copied());
        let mut sorted = edges;
        sorted.sort_unstable();
        out.push(sorted);
    }
    Ok(out)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parcels < 2 || self.timepoints < 2 || self.classes < 2 {
            return Err(Error::invalid("need at least 2 parcels, 2 timepoints and 2 classes"));
        }
        if self.category_names.len() != self.classes {
            return Err(Error::invalid(format!(
                "{} category names for {} classes",
                self.category_names.len(),
                self.classes
            )));
        }
        if !(0.0..1.0).contains(&self.coupling) {
            return Err(Error::invalid(format!("coupling {} outside [0, 1)", self.coupling)));
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if self.trials_per_class == 0 {
            return Err(Error::invalid("trials_per_class must be positive"));
        }
        for (name, sets) in [("positive", &self.positive_edges), ("negative", &self.negative_edges)] {
            if !sets.is_empty() && sets.len() != self.classes {
                return Err(Error::invalid(format!("{name}_edges needs one list per class")));
            }
            for &(i, j) in sets.iter().flatten() {
                if i == j || i >= self.parcels || j >= self.parcels {
                    return Err(Error::invalid(format!("invalid {name} edge ({i}, {j})")));
                }
            }
        }
        self.split.validate()
    }

    /// Resolves planted edges, drawing positive ones if none were given.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        let positive = if self.positive_edges.is_empty() {
            draw_edges(self, &mut RngStream::new(self.seed).fork(u64::MAX))?
        } else {
            self.positive_edges
                .iter()
                .map(|es| es.iter().copied().map(upper).collect())
                .collect()
        };
        let classes = (0..self.classes)
            .map(|c| {
                let negative: Vec<Edge> = self
                    .negative_edges
                    .get(c)
                    .map(|es| es.iter().copied().map(upper).collect())
                    .unwrap_or_default();
                let pos: &Vec<Edge> = &positive[c];
                if let Some(e) = negative.iter().find(|e| pos.contains(e)) {
                    return Err(Error::invalid(format!(
                        "class {c}: edge {e:?} requested both positive and negative"
                    )));
                }
                Ok(ClassTruth {
                    positive: pos.clone(),
                    negative,
                })
            })
            .collect::<Result<_>>()?;
        Ok(GroundTruth { classes })
    }
}

/// One trial of class `truth`: `P × T` samples.
fn generate_trial(cfg: &SynthConfig, truth: &ClassTruth, rng: &mut RngStream) -> Result<DenseMatrix<f64>> {
    let (p, t) = (cfg.parcels, cfg.timepoints);
    let rho = cfg.coupling;
    // (edge index, sign) per parcel
    let mut membership: Vec<Vec<(usize, f64)>> = vec![Vec::new(); p];
    let edges: Vec<(Edge, f64)> = truth
        .positive
        .iter()
        .map(|&e| (e, 1.0))
        .chain(truth.negative.iter().map(|&e| (e, -1.0)))
        .collect();
    for (k, &((i, j), sign)) in edges.iter().enumerate() {
        membership[i].push((k, 1.0));
        membership[j].push((k, sign));
    }
    let noise = rng.normal_draws(p * t, 0.0, 1.0)?;
    let latent = rng.normal_draws(edges.len() * t, 0.0, 1.0)?;
    let (shared, own) = (rho.sqrt(), (1.0 - rho).sqrt());
    let mut data = DenseMatrix::zeros(p, t);
    for i in 0..p {
        let members = &membership[i];
        let norm = if members.is_empty() {
            1.0
        } else {
            (members.len() as f64 * rho + 1.0 - rho).sqrt()
        };
        let row = data.row_mut(i);
        for (s, v) in row.iter_mut().enumerate() {
            let mut x = if members.is_empty() { noise[i * t + s] } else { own * noise[i * t + s] };
            for &(k, sign) in members {
                x += sign * shared * latent[k * t + s];
            }
            *v = cfg.noise_std * x / norm;
        }
    }
    Ok(data)
}

/// Generates trials, ground truth and a `labels.json` with image-level splits.
///
/// Each trial shows its own image, which carries evidence 0.1 (one sample) for
/// its class only. Splits are drawn per class so every class gets the same
/// train/validation/test sizes. Presentation order interleaves the classes.
pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let truth = cfg.ground_truth()?;
    let root = RngStream::new(cfg.seed);
    let n = cfg.trials_per_class;
    let c = cfg.classes;

    let trials = (0..n * c)
        .into_par_iter()
        .map(|order| {
            let (idx, class) = (order / c, order % c);
            let mut rng = root.fork(order as u64);
            Ok(TrialTimeSeries {
                subject_id: cfg.subject_id.clone(),
                trial_id: format!("t{order:06}"),
                image_id: format!("c{class}_i{idx:05}"),
                order: order as u64,
                data: generate_trial(cfg, &truth.classes[class], &mut rng)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut split = SplitAssignment::new();
    let mut images = Vec::with_capacity(n * c);
    for class in 0..c {
        let ids: Vec<String> = (0..n).map(|idx| format!("c{class}_i{idx:05}")).collect();
        let mut rng = root.fork(u64::MAX - 1 - class as u64);
        split.extend(split_images(&ids, cfg.split, &mut rng)?);
        for id in ids {
            let scores = (0..c)
                .map(|k| {
                    let v = if k == class { 0.1 } else { 0.0 };
                    CategoryScore {
                        mask: v,
                        text: v,
                        score: v,
                        count: u32::from(k == class),
                    }
                })
                .collect();
            images.push(ScoredImage { image_id: id, scores });
        }
    }
    let labels = LabelsFile {
        categories: cfg.category_names.clone(),
        images,
        split,
    };
    Ok(SynthData { trials, truth, labels })
}

/// Writes `manifest.json`, `trials/*.csv`, `labels.json` and `ground_truth.json`.
pub fn write_synth(dir: &Path, data: &SynthData) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trials(dir, &data.trials)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("labels.json"))?), &data.labels)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("ground_truth.json"))?), &data.truth)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub precision: f64,
    pub recall: f64,
    pub jaccard: f64,
}

/// Overlap between selected upper-triangle edges and a class's planted edges.
pub fn recovery_score(top_edges: &[Edge], truth: &GroundTruth, class: usize) -> Result<Recovery> {
    let planted = truth
        .classes
        .get(class)
        .ok_or_else(|| Error::invalid(format!("class {class} not in ground truth")))?
        .all_edges();
    let selected: BTreeSet<Edge> = top_edges.iter().copied().map(upper).collect();
    let hits = selected.intersection(&planted).count() as f64;
    let union = selected.union(&planted).count() as f64;
    let ratio = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
    Ok(Recovery {
        precision: ratio(hits, top_edges.len()),
        recall: ratio(hits, planted.len()),
        jaccard: if union == 0.0 { 0.0 } else { hits / union },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::{block_concat, connectivity};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            trials_per_class: 20,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn default_truth_is_disjoint_and_vertex_disjoint() {
        let truth = SynthConfig::default().ground_truth().unwrap();
        let mut all = BTreeSet::new();
        for class in &truth.classes {
            assert_eq!(class.positive.len(), 10);
            let nodes: BTreeSet<usize> = class.positive.iter().flat_map(|&(i, j)| [i, j]).collect();
            assert_eq!(nodes.len(), 20);
            for e in &class.positive {
                assert!(e.0 < e.1);
                assert!(all.insert(*e), "edge {e:?} shared between classes");
            }
        }
    }

    #[test]
    fn contradictory_edges_rejected() {
        let cfg = SynthConfig {
            classes: 2,
            category_names: vec!["a".into(), "b".into()],
            positive_edges: vec![vec![(0, 1)], vec![(2, 3)]],
            negative_edges: vec![vec![(1, 0)], vec![]],
            ..SynthConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn null_model_correlations_small() {
        let cfg = SynthConfig {
            coupling: 0.0,
            positive_edges: vec![vec![]; 3],
            trials_per_class: 5,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        // 5 trials x 40 timepoints = 200 samples per block
        let block: Vec<&DenseMatrix<f64>> = data.trials.iter().filter(|t| t.image_id.starts_with("c0")).map(|t| &t.data).collect();
        let a = connectivity(&block_concat(&block, 5).unwrap()).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                if i != j {
                    assert!(a[(i, j)].abs() < 0.3, "({i},{j}) = {}", a[(i, j)]);
                }
            }
        }
        let off: Vec<f64> = (0..30).flat_map(|i| (0..30).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].abs()).collect();
        let within = off.iter().filter(|v| **v < 0.15).count() as f64 / off.len() as f64;
        assert!(within > 0.9, "{within}");
    }

    #[test]
    fn planted_edge_correlation_close_to_coupling() {
        let cfg = SynthConfig {
            coupling: 0.8,
            positive_edges: vec![vec![(0, 1)], vec![(2, 3)], vec![(4, 5)]],
            negative_edges: vec![vec![(6, 7)], vec![], vec![]],
            trials_per_class: 50,
            ..SynthConfig::default()
        };
        let data = generate(&cfg).unwrap();
        let class0: Vec<&DenseMatrix<f64>> = data.trials.iter().filter(|t| t.image_id.starts_with("c0")).map(|t| &t.data).collect();
        for chunk in class0.chunks(5) {
            let a = connectivity(&block_concat(chunk, 5).unwrap()).unwrap();
            assert!((a[(0, 1)] - 0.8).abs() < 0.1, "{}", a[(0, 1)]);
            assert!((a[(6, 7)] + 0.8).abs() < 0.1, "{}", a[(6, 7)]);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(4)).unwrap();
        let b = generate(&small(4)).unwrap();
        assert_eq!(a.trials, b.trials);
        assert_eq!(a.truth, b.truth);
        assert_eq!(a.labels, b.labels);
        let c = generate(&small(5)).unwrap();
        assert_ne!(a.trials[0].data, c.trials[0].data);
    }

    #[test]
    fn labels_are_valid_and_balanced() {
        let data = generate(&SynthConfig::default()).unwrap();
        data.labels.validate().unwrap();
        let train = data.labels.split.values().filter(|s| **s == crate::labels::Split::Train).count();
        assert_eq!(train, 3 * 300);
    }

    #[test]
    fn recovery_cases() {
        let truth = GroundTruth {
            classes: vec![ClassTruth {
                positive: vec![(0, 1), (2, 3)],
                negative: vec![(4, 5)],
            }],
        };
        let r = recovery_score(&[(1, 0), (2, 3), (4, 5)], &truth, 0).unwrap();
        assert_eq!((r.precision, r.recall, r.jaccard), (1.0, 1.0, 1.0));
        let r = recovery_score(&[(6, 7), (8, 9)], &truth, 0).unwrap();
        assert_eq!((r.precision, r.recall, r.jaccard), (0.0, 0.0, 0.0));
        let r = recovery_score(&[(0, 1), (8, 9)], &truth, 0).unwrap();
        assert_eq!((r.precision, r.recall), (0.5, 1.0 / 3.0));
        assert!((r.jaccard - 0.25).abs() < 1e-15);
    }

    #[test]
    fn random_selection_precision_matches_hypergeometric_mean() {
        let p = 12;
        let truth = GroundTruth {
            classes: vec![ClassTruth {
                positive: vec![(0, 1), (2, 3), (4, 5), (6, 7), (8, 9)],
                negative: vec![],
            }],
        };
        let all: Vec<Edge> = (0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))).collect();
        let expected = 5.0 / all.len() as f64;
        let mut rng = RngStream::new(1);
        let k = 8;
        let mut total = 0.0;
        for _ in 0..1000 {
            let mut pool = all.clone();
            rng.shuffle(&mut pool);
            total += recovery_score(&pool[..k], &truth, 0).unwrap().precision;
        }
        let mean = total / 1000.0;
        // sd of one draw's precision is about 0.095, so of the mean about 0.003
        assert!((mean - expected).abs() < 0.012, "{mean} vs {expected}");
    }
}
