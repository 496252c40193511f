//! Accuracy, non-interpolated average precision and embedding export.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::{GraphDataset, SignedGraph};
use crate::model::{argmax, forward, ModelParams};
use crate::numerics::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub true_label: usize,
    pub predicted: usize,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub num_classes: usize,
    pub entries: Vec<Prediction>,
}

impl PredictionSet {
    /// Builds predictions from probability vectors; the prediction is the
    /// argmax with the lowest index winning ties.
    pub fn from_scores(num_classes: usize, rows: Vec<(usize, Vec<f64>)>) -> Result<Self> {
        let entries = rows
            .into_iter()
            .map(|(true_label, scores)| {
                if scores.len() != num_classes || true_label >= num_classes {
                    return Err(Error::invalid("prediction row does not match class count"));
                }
                Ok(Prediction {
                    true_label,
                    predicted: argmax(&scores),
                    scores,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { num_classes, entries })
    }
}

/// Runs the model over `graphs` and collects softmax outputs.
pub fn predict<'a, T: Scalar>(
    params: &ModelParams<T>,
    graphs: impl IntoIterator<Item = &'a SignedGraph<T>>,
) -> Result<PredictionSet> {
    let graphs: Vec<&SignedGraph<T>> = graphs.into_iter().collect();
    let rows = graphs
        .par_iter()
        .map(|g| {
            let cache = forward(params, g)?;
            Ok((g.label, cache.probs.iter().map(|p| p.as_f64()).collect()))
        })
        .collect::<Result<Vec<_>>>()?;
    PredictionSet::from_scores(params.dims().classes, rows)
}

pub fn accuracy(preds: &PredictionSet) -> Result<f64> {
    if preds.entries.is_empty() {
        return Err(Error::invalid("accuracy of an empty prediction set"));
    }
    let correct = preds
        .entries
        .iter()
        .filter(|p| p.predicted == p.true_label)
        .count();
    Ok(correct as f64 / preds.entries.len() as f64)
}

/// Non-interpolated AP: mean of precision at the rank of each positive.
/// Items are ranked by descending score, ties by original index.
pub fn average_precision(scores: &[f64], positives: &[bool]) -> Result<f64> {
    if scores.len() != positives.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return Err(Error::invalid("average precision needs at least one positive"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &idx) in order.iter().enumerate() {
        if positives[idx] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(total / n_pos as f64)
}

/// One-vs-rest AP per class and their unweighted mean.
pub fn macro_ap(preds: &PredictionSet) -> Result<(f64, Vec<f64>)> {
    let per_class = (0..preds.num_classes)
        .map(|c| {
            let scores: Vec<f64> = preds.entries.iter().map(|p| p.scores[c]).collect();
            let positives: Vec<bool> = preds.entries.iter().map(|p| p.true_label == c).collect();
            average_precision(&scores, &positives).map_err(|e| Error::invalid(format!("class {c}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let macro_ap = per_class.iter().sum::<f64>() / per_class.len() as f64;
    Ok((macro_ap, per_class))
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub per_class_ap: BTreeMap<String, f64>,
    pub macro_ap: f64,
    pub n_test: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl Metrics {
    pub fn compute(preds: &PredictionSet, categories: &[String], seed: u64, config_hash: String) -> Result<Self> {
        if categories.len() != preds.num_classes {
            return Err(Error::invalid(format!(
                "{} category names for {} classes",
                categories.len(),
                preds.num_classes
            )));
        }
        let (macro_ap, per_class) = macro_ap(preds)?;
        Ok(Self {
            accuracy: accuracy(preds)?,
            per_class_ap: categories.iter().cloned().zip(per_class).collect(),
            macro_ap,
            n_test: preds.entries.len(),
            seed,
            config_hash,
        })
    }
}

/// Writes `graph_id,split,label,g1..g_d` with the pooled embedding of every graph.
pub fn export_embeddings<T: Scalar>(params: &ModelParams<T>, dataset: &GraphDataset<T>, out: impl Write) -> Result<()> {
    let pooled = dataset
        .graphs
        .par_iter()
        .map(|g| Ok(forward(params, g)?.pooled))
        .collect::<Result<Vec<_>>>()?;
    let d = params.dims().conv2;
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::format("embeddings csv", e.to_string());
    let mut header = vec!["graph_id".to_string(), "split".to_string(), "label".to_string()];
    header.extend((1..=d).map(|k| format!("g{k}")));
    w.write_record(&header).map_err(map)?;
    for (idx, (g, emb)) in dataset.graphs.iter().zip(&pooled).enumerate() {
        let mut row = vec![idx.to_string(), g.split.to_string(), g.label.to_string()];
        row.extend(emb.iter().map(|v| format!("{:?}", v.as_f64())));
        w.write_record(&row).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::connectivity;
    use crate::labels::Split;
    use crate::model::ModelDims;
    use crate::numerics::{DenseMatrix, RngStream};
    use proptest::prelude::*;

    /// Precision at each positive recomputed by rescanning all items:
    /// an item outranks another if its score is higher, or equal with a
    /// lower index.
    fn rescan_ap(scores: &[f64], positives: &[bool]) -> f64 {
        let n_pos = positives.iter().filter(|&&p| p).count();
        let mut total = 0.0;
        for (t, &is_pos) in positives.iter().enumerate() {
            if !is_pos {
                continue;
            }
            let at_or_above = |i: usize| scores[i] > scores[t] || (scores[i] == scores[t] && i <= t);
            let rank = (0..scores.len()).filter(|&i| at_or_above(i)).count();
            let pos_above = (0..scores.len()).filter(|&i| at_or_above(i) && positives[i]).count();
            total += pos_above as f64 / rank as f64;
        }
        total / n_pos as f64
    }

    #[test]
    fn accuracy_cases() {
        let perfect = PredictionSet::from_scores(2, vec![(0, vec![0.9, 0.1]), (1, vec![0.2, 0.8])]).unwrap();
        assert_eq!(accuracy(&perfect).unwrap(), 1.0);
        let rows = vec![(0, vec![0.8, 0.1, 0.1]), (1, vec![0.1, 0.8, 0.1]), (2, vec![0.5, 0.2, 0.3])];
        let preds = PredictionSet::from_scores(3, rows).unwrap();
        assert!((accuracy(&preds).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(accuracy(&PredictionSet::from_scores(2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn ap_hand_example() {
        let ap = average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert!((ap - 0.8333).abs() < 1e-4);
    }

    #[test]
    fn ap_perfect_and_errors() {
        assert_eq!(average_precision(&[0.1, 0.9, 0.8, 0.2], &[false, true, true, false]).unwrap(), 1.0);
        assert!(average_precision(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn ap_ties_use_index_order() {
        // Tied scores: the positive at index 1 ranks after index 0.
        let ap = average_precision(&[0.5, 0.5], &[false, true]).unwrap();
        assert_eq!(ap, 0.5);
    }

    #[test]
    fn macro_ap_is_mean() {
        let perfect = PredictionSet::from_scores(2, vec![(0, vec![0.7, 0.3]), (1, vec![0.3, 0.7])]).unwrap();
        assert_eq!(macro_ap(&perfect).unwrap(), (1.0, vec![1.0, 1.0]));
        let aps = [0.88, 0.92, 0.84];
        assert!((aps.iter().sum::<f64>() / 3.0 - 0.88).abs() < 1e-12);
    }

    #[test]
    fn macro_ap_requires_every_class() {
        let preds = PredictionSet::from_scores(3, vec![(0, vec![0.7, 0.2, 0.1])]).unwrap();
        assert!(macro_ap(&preds).is_err());
    }

    #[test]
    fn embeddings_schema_and_determinism() {
        let mut rng = RngStream::new(3);
        let graphs = (0..4)
            .map(|i| {
                let x = DenseMatrix::new(5, 20, rng.normal_draws(100, 0.0, 1.0).unwrap()).unwrap();
                SignedGraph::from_correlation(&connectivity(&x).unwrap(), i % 2, Split::ALL[i % 3])
            })
            .collect();
        let ds = GraphDataset::new(graphs, 5, 2).unwrap();
        let params = ModelParams::<f64>::init(ModelDims { parcels: 5, classes: 2, conv1: 4, conv2: 3, hidden: 2 }, &mut rng);
        let mut a = Vec::new();
        export_embeddings(&params, &ds, &mut a).unwrap();
        let mut b = Vec::new();
        export_embeddings(&params, &ds, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 4);
        assert!(lines.iter().all(|l| l.split(',').count() == 3 + 3));
        assert!(lines[0].starts_with("graph_id,split,label,g1"));
    }

    proptest! {
        #[test]
        fn ap_matches_rescan(
            data in prop::collection::vec((0u8..6, any::<bool>()), 1..20)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 5.0).collect();
            let positives: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            prop_assume!(positives.iter().any(|&p| p));
            let ap = average_precision(&scores, &positives).unwrap();
            prop_assert!((ap - rescan_ap(&scores, &positives)).abs() < 1e-12);
            prop_assert!(ap > 0.0 && ap <= 1.0);
            let all_above = positives.iter().enumerate().all(|(i, &pi)| !pi || positives.iter().enumerate().all(|(j, &pj)| pj || scores[i] > scores[j] || (scores[i] == scores[j] && i < j)));
            prop_assert_eq!(ap == 1.0, all_above);
        }

        #[test]
        fn ap_invariant_under_monotone_transform(
            data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..20)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let positives: Vec<bool> = data.iter().map(|(_, p)| *p).collect();
            prop_assume!(positives.iter().any(|&p| p));
            let moved: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
            prop_assert_eq!(average_precision(&scores, &positives).unwrap(), average_precision(&moved, &positives).unwrap());
        }

        #[test]
        fn argmax_shift_invariant(logits in prop::collection::vec(-5.0f64..5.0, 2..6), shift in -100.0f64..100.0) {
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let p1 = crate::model::softmax(&logits);
            let p2 = crate::model::softmax(&shifted);
            prop_assert_eq!(argmax(&p1), argmax(&p2));
        }
    }
}
