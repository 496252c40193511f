//! Super-category evidence fusion, duplication counts and image-level splits.
//!
//! Every image receives, for each super-category, a mask score (fraction of
//! the image covered by member objects) and a caption score (fraction of
//! caption tokens that are category terms). The two are blended with a
//! per-category weight and discretized into a sample count.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Default text weight used when a lexicon entry omits `alpha`.
pub const DEFAULT_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Instance {
    pub category: String,
    pub area: f64,
}

/// One annotated image as found in `annotations.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub image_area: f64,
    #[serde(default)]
    pub instances: Vec<Instance>,
    /// Lower-cased caption tokens.
    #[serde(default)]
    pub caption: Vec<String>,
}

impl ImageAnnotation {
    pub fn validate(&self) -> Result<()> {
        if !(self.image_area > 0.0) {
            return Err(Error::invalid(format!(
                "image {}: image_area must be positive, got {}",
                self.image_id, self.image_area
            )));
        }
        for inst in &self.instances {
            if !(inst.area >= 0.0) || inst.area > self.image_area {
                return Err(Error::invalid(format!(
                    "image {}: instance {} area {} outside [0, {}]",
                    self.image_id, inst.category, inst.area, self.image_area
                )));
            }
        }
        Ok(())
    }
}

/// Object names and caption words that count as evidence for one category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryLexicon {
    pub category: String,
    pub objects: BTreeSet<String>,
    pub terms: BTreeSet<String>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl CategoryLexicon {
    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() || self.terms.is_empty() {
            return Err(Error::invalid(format!(
                "lexicon {}: object and term sets must be non-empty",
                self.category
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "lexicon {}: alpha {} outside [0, 1]",
                self.category, self.alpha
            )));
        }
        Ok(())
    }
}

/// Validates a full lexicon list: per-entry checks plus distinct names.
pub fn validate_lexicons(lexicons: &[CategoryLexicon]) -> Result<()> {
    if lexicons.is_empty() {
        return Err(Error::invalid("lexicon list is empty"));
    }
    let mut seen = HashSet::new();
    for lex in lexicons {
        lex.validate()?;
        if !seen.insert(lex.category.as_str()) {
            return Err(Error::invalid(format!("duplicate category {}", lex.category)));
        }
    }
    Ok(())
}

/// Fraction of the image covered by instances belonging to the category.
pub fn mask_evidence(ann: &ImageAnnotation, lex: &CategoryLexicon) -> Result<f64> {
    if !(ann.image_area > 0.0) {
        return Err(Error::invalid(format!(
            "image {}: image_area must be positive",
            ann.image_id
        )));
    }
    let covered: f64 = ann
        .instances
        .iter()
        .filter(|inst| lex.objects.contains(&inst.category))
        .map(|inst| inst.area)
        .sum();
    Ok((covered / ann.image_area).clamp(0.0, 1.0))
}

/// Fraction of caption tokens that are category terms; 0 for an empty caption.
pub fn text_evidence(ann: &ImageAnnotation, lex: &CategoryLexicon) -> f64 {
    if ann.caption.is_empty() {
        return 0.0;
    }
    let hits = ann
        .caption
        .iter()
        .filter(|tok| lex.terms.contains(tok.as_str()))
        .count();
    hits as f64 / ann.caption.len() as f64
}

pub fn fuse_score(text: f64, mask: f64, alpha: f64) -> Result<f64> {
    for (name, v) in [("text", text), ("mask", mask), ("alpha", alpha)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
        }
    }
    Ok(alpha * text + (1.0 - alpha) * mask)
}

/// Samples contributed by an image: `10·score` rounded half away from zero.
pub fn duplication_count(score: f64) -> u32 {
    (10.0 * score).round().clamp(0.0, 10.0) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryScore {
    pub mask: f64,
    pub text: f64,
    pub score: f64,
    pub count: u32,
}

/// Per-category evidence for one image, ordered as the lexicon list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoredImage {
    pub image_id: String,
    pub scores: Vec<CategoryScore>,
}

pub fn score_image(ann: &ImageAnnotation, lexicons: &[CategoryLexicon]) -> Result<ScoredImage> {
    ann.validate()?;
    let scores = lexicons
        .iter()
        .map(|lex| {
            let mask = mask_evidence(ann, lex)?;
            let text = text_evidence(ann, lex);
            let score = fuse_score(text, mask, lex.alpha)?;
            Ok(CategoryScore {
                mask,
                text,
                score,
                count: duplication_count(score),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScoredImage {
        image_id: ann.image_id.clone(),
        scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Split::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitRatios {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.validation, self.test];
        if all.iter().any(|&r| !(r > 0.0)) || (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "split ratios must be positive and sum to 1, got {all:?}"
            )));
        }
        Ok(())
    }
}

/// Image id to split, keyed in sorted order.
pub type SplitAssignment = BTreeMap<String, Split>;

/// Shuffles unique image ids and cuts them into train/validation/test.
///
/// Sizes are `round(n·train)` and `round(n·validation)` with the remainder
/// going to test.
pub fn split_images(ids: &[String], ratios: SplitRatios, rng: &mut RngStream) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::invalid(format!("duplicate image id {id}")));
        }
    }
    let n = ids.len();
    let n_train = ((n as f64) * ratios.train).round() as usize;
    let n_val = (((n as f64) * ratios.validation).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);

    let mut order: Vec<&String> = ids.iter().collect();
    rng.shuffle(&mut order);
    Ok(order
        .into_iter()
        .enumerate()
        .map(|(rank, id)| {
            let split = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Validation
            } else {
                Split::Test
            };
            (id.clone(), split)
        })
        .collect())
}

/// Contents of `labels.json`: the contract consumed by dataset assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub categories: Vec<String>,
    pub images: Vec<ScoredImage>,
    pub split: SplitAssignment,
}

impl LabelsFile {
    /// Checks scores, counts and that every scored image has exactly one split.
    pub fn validate(&self) -> Result<()> {
        let c = self.categories.len();
        let mut ids = HashSet::new();
        for img in &self.images {
            if !ids.insert(img.image_id.as_str()) {
                return Err(Error::invalid(format!("image {} scored twice", img.image_id)));
            }
            if img.scores.len() != c {
                return Err(Error::invalid(format!(
                    "image {} has {} scores for {c} categories",
                    img.image_id,
                    img.scores.len()
                )));
            }
            for s in &img.scores {
                if !(0.0..=1.0).contains(&s.score) || s.count > 10 {
                    return Err(Error::invalid(format!(
                        "image {}: score {} / count {} out of range",
                        img.image_id, s.score, s.count
                    )));
                }
            }
            if !self.split.contains_key(&img.image_id) {
                return Err(Error::invalid(format!("image {} has no split", img.image_id)));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ScoredImage> {
        self.images.iter().find(|img| img.image_id == id)
    }
}

/// Scores every annotation and assigns image-level splits.
pub fn fuse_labels(
    annotations: &[ImageAnnotation],
    lexicons: &[CategoryLexicon],
    ratios: SplitRatios,
    rng: &mut RngStream,
) -> Result<LabelsFile> {
    validate_lexicons(lexicons)?;
    let images = annotations
        .iter()
        .map(|ann| score_image(ann, lexicons))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = images.iter().map(|img| img.image_id.clone()).collect();
    let split = split_images(&ids, ratios, rng)?;
    Ok(LabelsFile {
        categories: lexicons.iter().map(|l| l.category.clone()).collect(),
        images,
        split,
    })
}
