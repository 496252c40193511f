//! Global mask relevance and class-specific gradient × input saliency.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graphs::SignedGraph;
use crate::model::{argmax, forward, ModelParams};
use crate::numerics::{DenseMatrix, Scalar};
use crate::training::logit_gradients;

/// Default number of edges reported per map.
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelevanceKind {
    Global,
    Class(usize),
}

/// Edge and node importance. Class maps have a zero diagonal; the global map
/// keeps the diagonal of the symmetrized mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMap<T> {
    pub kind: RelevanceKind,
    pub edge_values: DenseMatrix<T>,
    /// Row sums of `edge_values`.
    pub node_values: Vec<T>,
}

impl<T: Scalar> RelevanceMap<T> {
    fn from_edges(kind: RelevanceKind, edge_values: DenseMatrix<T>) -> Self {
        let node_values = edge_values.row_sums();
        Self {
            kind,
            edge_values,
            node_values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedEdge<T> {
    pub i: usize,
    pub j: usize,
    pub value: T,
}

/// `M_sym = ½(M + Mᵀ)` with weighted degree as node relevance.
pub fn global_mask_relevance<T: Scalar>(mask: &DenseMatrix<T>) -> Result<RelevanceMap<T>> {
    Ok(RelevanceMap::from_edges(RelevanceKind::Global, mask.symmetrized()?))
}

/// `½(S + Sᵀ)` with the diagonal set to zero.
fn symmetrize_zero_diagonal<T: Scalar>(s: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let mut out = s.symmetrized()?;
    for i in 0..out.rows() {
        out[(i, i)] = T::zero();
    }
    Ok(out)
}

/// `∂f_c/∂A⁺` and `∂f_c/∂A⁻` of the raw logit, taken through the mask gate.
pub fn saliency_gradients<T: Scalar>(
    params: &ModelParams<T>,
    graph: &SignedGraph<T>,
    class: usize,
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let grads = logit_gradients(params, &graph.a_plus, &graph.a_minus, class)?;
    Ok((grads.a_plus, grads.a_minus))
}

/// Saliency of class `class` on one graph.
///
/// `S± = |∂f_c/∂A± ⊙ A±|` with the gradient of the raw logit taken with
/// respect to the ungated adjacency, fused as `S = S⁺ + S⁻`, then
/// symmetrized with a zeroed diagonal.
pub fn class_saliency<T: Scalar>(
    params: &ModelParams<T>,
    graph: &SignedGraph<T>,
    class: usize,
) -> Result<RelevanceMap<T>> {
    let (d_plus, d_minus) = saliency_gradients(params, graph, class)?;
    let s_plus = d_plus.hadamard(&graph.a_plus)?.map(T::abs);
    let s_minus = d_minus.hadamard(&graph.a_minus)?.map(T::abs);
    let fused = s_plus.add(&s_minus)?;
    Ok(RelevanceMap::from_edges(
        RelevanceKind::Class(class),
        symmetrize_zero_diagonal(&fused)?,
    ))
}

/// Mean of per-graph class saliency over `graphs`, reduced in input order.
pub fn mean_class_saliency<T: Scalar>(
    params: &ModelParams<T>,
    graphs: &[&SignedGraph<T>],
    class: usize,
) -> Result<RelevanceMap<T>> {
    if graphs.is_empty() {
        return Err(Error::invalid(format!("no graphs to aggregate for class {class}")));
    }
    let maps = graphs
        .par_iter()
        .map(|g| class_saliency(params, g, class))
        .collect::<Result<Vec<_>>>()?;
    let mut total = maps[0].edge_values.zeros_like();
    for m in &maps {
        total.add_assign(&m.edge_values)?;
    }
    let n = T::from_usize(maps.len()).unwrap();
    Ok(RelevanceMap::from_edges(
        RelevanceKind::Class(class),
        total.map(|v| v / n),
    ))
}

/// Class-level map: mean saliency over graphs of `class` that the model
/// classifies correctly.
pub fn class_relevance<'a, T: Scalar>(
    params: &ModelParams<T>,
    graphs: impl IntoIterator<Item = &'a SignedGraph<T>>,
    class: usize,
) -> Result<RelevanceMap<T>> {
    let mut selected = Vec::new();
    for g in graphs.into_iter().filter(|g| g.label == class) {
        if argmax(&forward(params, g)?.probs) == class {
            selected.push(g);
        }
    }
    if selected.is_empty() {
        return Err(Error::invalid(format!(
            "no correctly classified graphs of class {class}"
        )));
    }
    mean_class_saliency(params, &selected, class)
}

/// The `k` largest strictly-upper-triangle edges, ties in `(i, j)` order.
pub fn topk_edges<T: Scalar>(map: &RelevanceMap<T>, k: usize) -> Result<Vec<RankedEdge<T>>> {
    let p = map.edge_values.rows();
    let available = p * p.saturating_sub(1) / 2;
    if k > available {
        return Err(Error::invalid(format!(
            "k = {k} exceeds the {available} edges of a {p}-node map"
        )));
    }
    let mut edges: Vec<RankedEdge<T>> = (0..p)
        .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
        .map(|(i, j)| RankedEdge {
            i,
            j,
            value: map.edge_values[(i, j)],
        })
        .collect();
    // stable: equal values keep lexicographic (i, j) order
    edges.sort_by(|a, b| b.value.partial_cmp(&a.value).unwrap_or(std::cmp::Ordering::Equal));
    edges.truncate(k);
    Ok(edges)
}

/// Pairwise Pearson correlation of node-relevance vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Consistency {
    pub correlations: DenseMatrix<f64>,
    pub mean_off_diagonal: f64,
}

/// Correlates every pair of maps; a constant map correlates 0 with others.
pub fn consistency(maps: &[Vec<f64>]) -> Result<Consistency> {
    if maps.len() < 2 {
        return Err(Error::invalid("consistency needs at least two maps"));
    }
    let p = maps[0].len();
    if p < 2 || maps.iter().any(|m| m.len() != p) {
        return Err(Error::invalid("maps must share a length of at least 2"));
    }
    let centered: Vec<(Vec<f64>, f64)> = maps
        .iter()
        .map(|m| {
            let mean = m.iter().sum::<f64>() / p as f64;
            let c: Vec<f64> = m.iter().map(|v| v - mean).collect();
            let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            (c, norm)
        })
        .collect();
    let s = maps.len();
    let mut correlations = DenseMatrix::identity(s);
    let mut total = 0.0;
    for a in 0..s {
        for b in a + 1..s {
            let (ca, na) = &centered[a];
            let (cb, nb) = &centered[b];
            let r = if *na == 0.0 || *nb == 0.0 {
                0.0
            } else {
                let dot: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
                (dot / (na * nb)).clamp(-1.0, 1.0)
            };
            correlations[(a, b)] = r;
            correlations[(b, a)] = r;
            total += r;
        }
    }
    Ok(Consistency {
        correlations,
        mean_off_diagonal: total / (s * (s - 1) / 2) as f64,
    })
}

/// `i,j,value` rows for ranked edges.
pub fn write_edges_csv<T: Scalar>(out: impl Write, edges: &[RankedEdge<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::format("relevance csv", e.to_string());
    w.write_record(["i", "j", "value"]).map_err(map)?;
    for e in edges {
        w.write_record([e.i.to_string(), e.j.to_string(), format!("{:?}", e.value.as_f64())])
            .map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

/// `parcel_index,parcel_name,value` rows; names are blank when not provided.
pub fn write_nodes_csv<T: Scalar>(out: impl Write, nodes: &[T], names: Option<&[String]>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::format("node csv", e.to_string());
    w.write_record(["parcel_index", "parcel_name", "value"]).map_err(map)?;
    for (i, v) in nodes.iter().enumerate() {
        let name = names.and_then(|n| n.get(i)).map_or("", String::as_str);
        w.write_record([i.to_string(), name.to_string(), format!("{:?}", v.as_f64())])
            .map_err(map)?;
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
    use crate::numerics::RngStream;

    type M = DenseMatrix<f64>;

    fn random_graph(p: usize, rng: &mut RngStream) -> SignedGraph<f64> {
        let x = M::new(p, 4 * p, rng.normal_draws(4 * p * p, 0.0, 1.0).unwrap()).unwrap();
        SignedGraph::from_correlation(&connectivity(&x).unwrap(), 0, Split::Test)
    }

    fn params(p: usize, rng: &mut RngStream) -> ModelParams<f64> {
        let mut params = ModelParams::init(ModelDims { parcels: p, classes: 3, conv1: 5, conv2: 5, hidden: 4 }, rng);
        let noise = rng.normal_draws(p * p, 0.0, 1.0).unwrap();
        params.mask_raw = M::new(p, p, noise).unwrap().symmetrized().unwrap();
        params
    }

    #[test]
    fn global_map_cases() {
        let mut rng = RngStream::new(1);
        let sym = M::new(4, 4, rng.normal_draws(16, 0.5, 0.1).unwrap()).unwrap().symmetrized().unwrap();
        assert_eq!(global_mask_relevance(&sym).unwrap().edge_values, sym);
        let half = global_mask_relevance(&M::filled(4, 4, 0.5)).unwrap();
        assert!(half.node_values.iter().all(|&r| r == 2.0));
        let m = M::new(5, 5, (0..25).map(|_| rng.uniform()).collect()).unwrap();
        let map = global_mask_relevance(&m).unwrap();
        for i in 0..5 {
            let mut r = 0.0;
            for j in 0..5 {
                r += 0.5 * (m[(i, j)] + m[(j, i)]);
            }
            assert!((map.node_values[i] - r).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_input_has_zero_saliency() {
        let mut rng = RngStream::new(2);
        let p = params(6, &mut rng);
        let mut g = random_graph(6, &mut rng);
        g.a_plus = M::zeros(6, 6);
        g.a_minus = M::zeros(6, 6);
        let map = class_saliency(&p, &g, 1).unwrap();
        assert!(map.edge_values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn saliency_is_symmetric_with_zero_diagonal() {
        let mut rng = RngStream::new(3);
        for _ in 0..10 {
            let p = params(6, &mut rng);
            let g = random_graph(6, &mut rng);
            for c in 0..3 {
                let map = class_saliency(&p, &g, c).unwrap();
                assert_eq!(map.edge_values, map.edge_values.transpose());
                assert!((0..6).all(|i| map.edge_values[(i, i)] == 0.0));
                assert!(map.edge_values.data().iter().all(|&v| v >= 0.0));
                let sums = map.edge_values.row_sums();
                for (a, b) in sums.iter().zip(&map.node_values) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn saliency_gradients_match_finite_differences() {
        use crate::training::{grad_check, CheckOptions, Objective};
        let mut rng = RngStream::new(7);
        let p = params(6, &mut rng);
        let g = random_graph(6, &mut rng);
        for c in 0..3 {
            let report = grad_check(&p, &g, &Objective::Logit(c), CheckOptions::default()).unwrap();
            let (d_plus, d_minus) = saliency_gradients(&p, &g, c).unwrap();
            let inputs: Vec<_> = report.checks.iter().filter(|k| k.coordinate.is_input()).collect();
            assert!(!inputs.is_empty());
            for check in inputs {
                assert!(check.relative_error < 1e-4, "{}", check.coordinate);
                let analytic = match check.coordinate {
                    crate::training::Coordinate::APlus { row, col } => d_plus[(row, col)],
                    crate::training::Coordinate::AMinus { row, col } => d_minus[(row, col)],
                    _ => unreachable!(),
                };
                assert_eq!(analytic, check.analytic);
            }
        }
    }

    #[test]
    fn zero_entries_have_zero_saliency() {
        let mut rng = RngStream::new(4);
        let p = params(6, &mut rng);
        let mut g = random_graph(6, &mut rng);
        // (1,2) and (2,1) become zero in both channels
        for (i, j) in [(1, 2), (2, 1)] {
            g.a_plus[(i, j)] = 0.0;
            g.a_minus[(i, j)] = 0.0;
        }
        let map = class_saliency(&p, &g, 0).unwrap();
        assert_eq!(map.edge_values[(1, 2)], 0.0);
    }

    fn map_from(values: M) -> RelevanceMap<f64> {
        RelevanceMap::from_edges(RelevanceKind::Class(0), values)
    }

    #[test]
    fn topk_exhaustive_and_ties() {
        let mut v = M::zeros(4, 4);
        v[(0, 1)] = 0.5;
        v[(2, 3)] = 0.5;
        v[(1, 3)] = 0.9;
        let map = map_from(v.symmetrized().unwrap().scale(2.0));
        let all = topk_edges(&map, 6).unwrap();
        assert_eq!(all.len(), 6);
        assert_eq!((all[0].i, all[0].j), (1, 3));
        assert_eq!((all[1].i, all[1].j), (0, 1));
        assert_eq!((all[2].i, all[2].j), (2, 3));
        assert!(topk_edges(&map, 7).is_err());
    }

    #[test]
    fn topk_matches_full_sort() {
        let mut rng = RngStream::new(5);
        for _ in 0..100 {
            let p = 7;
            // coarse values force ties
            let values = M::from_fn(p, p, |_, _| (rng.uniform() * 5.0).floor()).symmetrized().unwrap();
            let map = map_from(values.clone());
            let k = rng.index(21) + 1;
            let mut oracle: Vec<(f64, usize, usize)> = Vec::new();
            for i in 0..p {
                for j in i + 1..p {
                    oracle.push((values[(i, j)], i, j));
                }
            }
            oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
            let got: Vec<(f64, usize, usize)> = topk_edges(&map, k).unwrap().iter().map(|e| (e.value, e.i, e.j)).collect();
            assert_eq!(got, oracle[..k].to_vec());
        }
    }

    #[test]
    fn consistency_cases() {
        let a = vec![0.1, 0.5, 0.2, 0.9];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let c = consistency(&[a.clone(), a.clone(), a.clone()]).unwrap();
        assert!(c.correlations.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!((c.mean_off_diagonal - 1.0).abs() < 1e-12);
        let c = consistency(&[a.clone(), neg]).unwrap();
        assert!((c.correlations[(0, 1)] + 1.0).abs() < 1e-12);
        let c = consistency(&[a.clone(), vec![3.0; 4]]).unwrap();
        assert_eq!(c.correlations[(0, 1)], 0.0);
        assert!(consistency(&[a]).is_err());
    }

    #[test]
    fn consistency_agrees_with_connectivity() {
        let mut rng = RngStream::new(6);
        let maps: Vec<Vec<f64>> = (0..5).map(|_| rng.normal_draws(12, 1.0, 0.5).unwrap()).collect();
        let c = consistency(&maps).unwrap();
        let stacked = M::from_rows(&maps).unwrap();
        let oracle = connectivity(&stacked).unwrap();
        assert!(c.correlations.max_abs_diff(&oracle).unwrap() < 1e-12);
    }

    #[test]
    fn csv_layouts() {
        let mut buf = Vec::new();
        write_edges_csv(&mut buf, &[RankedEdge { i: 0, j: 3, value: 0.25f64 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "i,j,value\n0,3,0.25\n");
        let mut buf = Vec::new();
        write_nodes_csv(&mut buf, &[1.0f64, 2.5], Some(&["V1".to_string()])).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "parcel_index,parcel_name,value\n0,V1,1.0\n1,,2.5\n");
    }
}
