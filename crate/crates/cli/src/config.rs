use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use signed_gnn::labels::SplitRatios;
use signed_gnn::synth::{Edge, SynthConfig};
use signed_gnn::training::{AdamWConfig, ClassWeights, LossSettings, ModelConfig, Schedule, TrainConfig};

use crate::error::CliError;

/// Every field, its default and meaning. Shown by `--help`.
pub const CONFIG_HELP: &str = "\
CONFIG (JSON; unknown keys are rejected, every key is optional)
  seed                      0        run seed; every stage derives its own stream
  block_size                5        trials concatenated per graph (K)
  alpha                     {}       per-category override of the lexicon alpha
  paths.annotations         null     fuse-labels: image annotations JSON
  paths.lexicon             null     fuse-labels: category lexicons JSON
  paths.manifest            null     trial manifest.json (build-graphs, or train/eval/... without graphs)
  paths.labels              null     labels.json paired with paths.manifest
  paths.graphs              null     graphs.bin; takes precedence over manifest + labels
  paths.checkpoint          null     eval/explain/embed: trained checkpoint.bin
  paths.ground_truth        null     explain: ground_truth.json for recovery scores
  paths.parcel_names        null     explain: JSON array of parcel names
  paths.output_dir          \"runs\"   parent of timestamped run directories
  model.conv1               64       first convolution width
  model.conv2               64       second convolution width (embedding size)
  model.hidden              32       MLP hidden width
  model.activation          \"relu\"   relu | identity
  loss.label_smoothing      0.1
  loss.lambda_l1            0.001    weight of mean|M|
  loss.lambda_binary        0.001    weight of mean M(1-M)
  loss.class_weights        \"inverse_frequency\" | \"uniform\" | {\"explicit\": [..]}
  optimizer.lr              0.0003
  optimizer.weight_decay    0.001    decoupled, weights only
  optimizer.beta1           0.9
  optimizer.beta2           0.999
  optimizer.eps             1e-8
  training.batch_size       32
  training.max_epochs       200
  training.patience         10       epochs without validation improvement
  explain.top_k             100      edges written per relevance map
  split.train               0.6
  split.validation          0.2
  split.test                0.2
  synth.parcels             30
  synth.timepoints          40       samples per trial
  synth.classes             3
  synth.category_names      [\"sports\", \"food\", \"vehicle\"]
  synth.positive_edges      []       per-class edge lists; drawn at random when empty
  synth.negative_edges      []       per-class anti-coupled edge lists
  synth.edges_per_class     10       edges drawn per class when positive_edges is empty
  synth.coupling            0.7      planted correlation
  synth.noise_std           1.0      scale of every signal
  synth.trials_per_class    500
  synth.subject_id          \"synth\"

ENVIRONMENT
  RAYON_NUM_THREADS         worker threads (defaults to all cores)

EXIT CODES
  0 success, 2 invalid config, 3 missing or unreadable inputs, 4 invariant violation";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub graphs: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub parcel_names: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Paths {
    fn new() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainSettings {
    pub top_k: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            top_k: signed_gnn::explain::DEFAULT_TOP_K,
        }
    }
}

/// Generator settings; seed and split come from the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSettings {
    pub parcels: usize,
    pub timepoints: usize,
    pub classes: usize,
    pub category_names: Vec<String>,
    pub positive_edges: Vec<Vec<Edge>>,
    pub negative_edges: Vec<Vec<Edge>>,
    pub edges_per_class: usize,
    pub coupling: f64,
    pub noise_std: f64,
    pub trials_per_class: usize,
    pub subject_id: String,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let d = SynthConfig::default();
        Self {
            parcels: d.parcels,
            timepoints: d.timepoints,
            classes: d.classes,
            category_names: d.category_names,
            positive_edges: d.positive_edges,
            negative_edges: d.negative_edges,
            edges_per_class: d.edges_per_class,
            coupling: d.coupling,
            noise_std: d.noise_std,
            trials_per_class: d.trials_per_class,
            subject_id: d.subject_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub block_size: usize,
    pub alpha: BTreeMap<String, f64>,
    pub paths: Paths,
    pub model: ModelConfig,
    pub loss: LossSettings,
    pub optimizer: AdamWConfig,
    pub training: Schedule,
    pub explain: ExplainSettings,
    pub split: SplitRatios,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            block_size: signed_gnn::graphs::DEFAULT_BLOCK_SIZE,
            alpha: BTreeMap::new(),
            paths: Paths::new(),
            model: ModelConfig::default(),
            loss: LossSettings::default(),
            optimizer: AdamWConfig::default(),
            training: Schedule::default(),
            explain: ExplainSettings::default(),
            split: SplitRatios::default(),
            synth: SynthSettings::default(),
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{field}: {reason}")))
    }
}

impl RunConfig {
    /// Parses strictly; errors carry the dotted path of the offending key.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::MissingInput(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        check(self.block_size >= 1, "block_size", "must be at least 1")?;
        for (name, a) in &self.alpha {
            check((0.0..=1.0).contains(a), &format!("alpha.{name}"), "must lie in [0, 1]")?;
        }
        let m = &self.model;
        check(m.conv1 >= 1, "model.conv1", "must be at least 1")?;
        check(m.conv2 >= 1, "model.conv2", "must be at least 1")?;
        check(m.hidden >= 1, "model.hidden", "must be at least 1")?;
        let l = &self.loss;
        check((0.0..1.0).contains(&l.label_smoothing), "loss.label_smoothing", "must lie in [0, 1)")?;
        check(l.lambda_l1 >= 0.0, "loss.lambda_l1", "must be >= 0")?;
        check(l.lambda_binary >= 0.0, "loss.lambda_binary", "must be >= 0")?;
        if let ClassWeights::Explicit(w) = &l.class_weights {
            check(
                !w.is_empty() && w.iter().all(|v| v.is_finite() && *v > 0.0),
                "loss.class_weights",
                "explicit weights must be positive and finite",
            )?;
        }
        let o = &self.optimizer;
        check(o.lr > 0.0 && o.lr.is_finite(), "optimizer.lr", "must be positive")?;
        check(o.weight_decay >= 0.0, "optimizer.weight_decay", "must be >= 0")?;
        check((0.0..1.0).contains(&o.beta1), "optimizer.beta1", "must lie in [0, 1)")?;
        check((0.0..1.0).contains(&o.beta2), "optimizer.beta2", "must lie in [0, 1)")?;
        check(o.eps > 0.0, "optimizer.eps", "must be positive")?;
        check(self.training.batch_size >= 1, "training.batch_size", "must be at least 1")?;
        check(self.training.max_epochs >= 1, "training.max_epochs", "must be at least 1")?;
        check(self.explain.top_k >= 1, "explain.top_k", "must be at least 1")?;
        self.split
            .validate()
            .map_err(|e| CliError::Config(format!("split: {e}")))?;
        self.synth_config()
            .validate()
            .map_err(|e| CliError::Config(format!("synth: {e}")))?;
        Ok(())
    }

    pub fn synth_config(&self) -> SynthConfig {
        let s = self.synth.clone();
        SynthConfig {
            parcels: s.parcels,
            timepoints: s.timepoints,
            classes: s.classes,
            category_names: s.category_names,
            positive_edges: s.positive_edges,
            negative_edges: s.negative_edges,
            edges_per_class: s.edges_per_class,
            coupling: s.coupling,
            noise_std: s.noise_std,
            trials_per_class: s.trials_per_class,
            split: self.split,
            subject_id: s.subject_id,
            seed: self.seed,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            model: self.model,
            loss: self.loss.clone(),
            optimizer: self.optimizer,
            schedule: self.training,
        }
    }

    /// JSON of every setting except file locations, with sorted keys.
    pub fn settings_json(&self) -> serde_json::Value {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = value.as_object_mut() {
            obj.remove("paths");
        }
        value
    }
}
