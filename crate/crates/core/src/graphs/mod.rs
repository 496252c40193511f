//! Signed connectivity graphs and dataset assembly from trial time series.

mod connectivity;
mod io;

use std::collections::BTreeMap;

pub use connectivity::{block_concat, connectivity, pearson, signed_split, zscore_rows};
pub use io::{load_trials, read_graphs, write_graphs, write_trials, ManifestEntry, GRAPHS_MAGIC};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::labels::{LabelsFile, Split};
use crate::numerics::{DenseMatrix, RngStream, Scalar};

/// Default number of trials concatenated per block.
pub const DEFAULT_BLOCK_SIZE: usize = 5;

/// Parcel-by-time series of one stimulus presentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTimeSeries<T> {
    pub subject_id: String,
    pub trial_id: String,
    pub image_id: String,
    /// Presentation order within the subject's session.
    pub order: u64,
    pub data: DenseMatrix<T>,
}

/// One block-level sample: nonnegative positive/negative channels plus label.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedGraph<T> {
    pub a_plus: DenseMatrix<T>,
    pub a_minus: DenseMatrix<T>,
    pub label: usize,
    pub split: Split,
    pub image_ids: Vec<String>,
    pub subject_id: String,
}

impl<T: Scalar> SignedGraph<T> {
    /// Builds a graph from a clipped correlation matrix.
    pub fn from_correlation(a: &DenseMatrix<T>, label: usize, split: Split) -> Self {
        let (a_plus, a_minus) = signed_split(a);
        Self {
            a_plus,
            a_minus,
            label,
            split,
            image_ids: Vec::new(),
            subject_id: String::new(),
        }
    }

    pub fn num_parcels(&self) -> usize {
        self.a_plus.rows()
    }

    /// Signed matrix `A⁺ − A⁻`.
    pub fn signed(&self) -> DenseMatrix<T> {
        self.a_plus.sub(&self.a_minus).expect("channels share a shape")
    }

    /// Checks range, disjoint support, symmetry and the unit-diagonal convention.
    pub fn check_invariants(&self) -> Result<()> {
        let p = self.a_plus.rows();
        if self.a_plus.shape() != (p, p) || self.a_minus.shape() != (p, p) {
            return Err(Error::Invariant(format!(
                "channels must be square and equal, got {:?} and {:?}",
                self.a_plus.shape(),
                self.a_minus.shape()
            )));
        }
        let in_range = |v: T| v >= T::zero() && v <= T::one();
        for (idx, (&ap, &am)) in self.a_plus.data().iter().zip(self.a_minus.data()).enumerate() {
            let (i, j) = (idx / p, idx % p);
            if !in_range(ap) || !in_range(am) {
                return Err(Error::Invariant(format!("entry ({i},{j}) outside [0,1]")));
            }
            if ap * am != T::zero() {
                return Err(Error::Invariant(format!("entry ({i},{j}) has both signs")));
            }
            if ap - am != self.a_plus[(j, i)] - self.a_minus[(j, i)] {
                return Err(Error::Invariant(format!("entry ({i},{j}) not symmetric")));
            }
            if i == j && (ap != T::one() || am != T::zero()) {
                return Err(Error::Invariant(format!("diagonal ({i},{i}) is not (1, 0)")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> SignedGraph<U> {
        SignedGraph {
            a_plus: self.a_plus.cast(),
            a_minus: self.a_minus.cast(),
            label: self.label,
            split: self.split,
            image_ids: self.image_ids.clone(),
            subject_id: self.subject_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDataset<T> {
    pub graphs: Vec<SignedGraph<T>>,
    pub num_parcels: usize,
    pub num_classes: usize,
}

impl<T: Scalar> GraphDataset<T> {
    pub fn new(graphs: Vec<SignedGraph<T>>, num_parcels: usize, num_classes: usize) -> Result<Self> {
        for (idx, g) in graphs.iter().enumerate() {
            if g.a_plus.shape() != (num_parcels, num_parcels) {
                return Err(Error::invalid(format!(
                    "graph {idx} has {} parcels, dataset has {num_parcels}",
                    g.a_plus.rows()
                )));
            }
            if g.label >= num_classes {
                return Err(Error::invalid(format!(
                    "graph {idx} label {} out of range for {num_classes} classes",
                    g.label
                )));
            }
        }
        Ok(Self {
            graphs,
            num_parcels,
            num_classes,
        })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SignedGraph<T>> + '_ {
        self.graphs.iter().filter(move |g| g.split == split)
    }

    pub fn class_counts(&self, split: Split) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for g in self.split(split) {
            counts[g.label] += 1;
        }
        counts
    }

    pub fn check_invariants(&self) -> Result<()> {
        for (idx, g) in self.graphs.iter().enumerate() {
            g.check_invariants()
                .map_err(|e| Error::Invariant(format!("graph {idx}: {e}")))?;
        }
        let mut owner: BTreeMap<&str, Split> = BTreeMap::new();
        for g in &self.graphs {
            for id in &g.image_ids {
                if let Some(prev) = owner.insert(id.as_str(), g.split) {
                    if prev != g.split {
                        return Err(Error::Invariant(format!(
                            "image {id} appears in {prev} and {}",
                            g.split
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> GraphDataset<U> {
        GraphDataset {
            graphs: self.graphs.iter().map(SignedGraph::cast).collect(),
            num_parcels: self.num_parcels,
            num_classes: self.num_classes,
        }
    }
}

/// Orders the trials that fill one (subject, category, split) group.
///
/// Images are visited in order of first presentation. An image with count
/// `n` contributes `n` slots: round `r` takes trial `r mod (#trials)` of every
/// image whose count exceeds `r`, so an image's repeats land in different
/// consecutive blocks whenever enough images are in play.
fn duplication_slots<'a, T>(images: &[(u32, Vec<&'a TrialTimeSeries<T>>)]) -> Vec<&'a TrialTimeSeries<T>> {
    let rounds = images.iter().map(|(n, _)| *n).max().unwrap_or(0);
    let mut slots = Vec::new();
    for r in 0..rounds {
        for (n, trials) in images {
            if r < *n {
                slots.push(trials[r as usize % trials.len()]);
            }
        }
    }
    slots
}

/// Builds the signed-graph dataset.
///
/// Trials are grouped per (subject, category, split); within a group the
/// duplicated trial slots are cut into consecutive blocks of `k`, and any
/// remainder shorter than `k` is dropped. The training split is then
/// downsampled with `rng` to the smallest class count; validation and test
/// stay as built.
pub fn assemble_dataset<T: Scalar>(
    trials: &[TrialTimeSeries<T>],
    labels: &LabelsFile,
    k: usize,
    rng: &mut RngStream,
) -> Result<GraphDataset<T>> {
    labels.validate()?;
    if k == 0 {
        return Err(Error::invalid("block size must be positive"));
    }
    let num_classes = labels.categories.len();
    let first = trials.first().ok_or_else(|| Error::invalid("no trials"))?;
    let (p, t) = first.data.shape();
    for trial in trials {
        if trial.data.shape() != (p, t) {
            return Err(Error::invalid(format!(
                "trial {} is {:?}, expected {:?}",
                trial.trial_id,
                trial.data.shape(),
                (p, t)
            )));
        }
        if !labels.split.contains_key(&trial.image_id) {
            return Err(Error::invalid(format!(
                "trial {} references image {} with no split",
                trial.trial_id, trial.image_id
            )));
        }
    }

    // subject -> image -> trials in presentation order
    let mut by_subject: BTreeMap<&str, BTreeMap<&str, Vec<&TrialTimeSeries<T>>>> = BTreeMap::new();
    for trial in trials {
        by_subject
            .entry(trial.subject_id.as_str())
            .or_default()
            .entry(trial.image_id.as_str())
            .or_default()
            .push(trial);
    }

    struct Block<'a, T> {
        members: Vec<&'a TrialTimeSeries<T>>,
        label: usize,
        split: Split,
    }
    let mut blocks: Vec<Block<T>> = Vec::new();
    for images in by_subject.values_mut() {
        for list in images.values_mut() {
            list.sort_by(|a, b| a.order.cmp(&b.order).then_with(|| a.trial_id.cmp(&b.trial_id)));
        }
        let mut ordered: Vec<(&str, &Vec<&TrialTimeSeries<T>>)> =
            images.iter().map(|(id, list)| (*id, list)).collect();
        ordered.sort_by_key(|(id, list)| (list[0].order, *id));

        for label in 0..num_classes {
            for split in Split::ALL {
                let group: Vec<(u32, Vec<&TrialTimeSeries<T>>)> = ordered
                    .iter()
                    .filter(|(id, _)| labels.split.get(*id) == Some(&split))
                    .filter_map(|(id, list)| {
                        let count = labels.image(id).map_or(0, |img| img.scores[label].count);
                        (count > 0).then(|| (count, (*list).clone()))
                    })
                    .collect();
                let slots = duplication_slots(&group);
                for chunk in slots.chunks_exact(k) {
                    blocks.push(Block {
                        members: chunk.to_vec(),
                        label,
                        split,
                    });
                }
            }
        }
    }

    let mut graphs = blocks
        .par_iter()
        .map(|block| {
            let data: Vec<&DenseMatrix<T>> = block.members.iter().map(|t| &t.data).collect();
            let a = connectivity(&block_concat(&data, k)?)?;
            let mut g = SignedGraph::from_correlation(&a, block.label, block.split);
            g.image_ids = block.members.iter().map(|t| t.image_id.clone()).collect();
            g.image_ids.dedup();
            g.subject_id = block.members[0].subject_id.clone();
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut train_by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (idx, g) in graphs.iter().enumerate() {
        if g.split == Split::Train {
            train_by_class[g.label].push(idx);
        }
    }
    if let Some(empty) = train_by_class.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!(
            "category {} yields no training blocks of size {k}",
            labels.categories[empty]
        )));
    }
    let target = train_by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut drop = vec![false; graphs.len()];
    for members in &mut train_by_class {
        rng.shuffle(members);
        for &idx in &members[target..] {
            drop[idx] = true;
        }
    }
    let mut idx = 0;
    graphs.retain(|_| {
        idx += 1;
        !drop[idx - 1]
    });

    GraphDataset::new(graphs, p, num_classes)
}
