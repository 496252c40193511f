//! Block-level connectivity: concatenation, z-scoring, Pearson, sign split.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, Scalar};

/// Horizontally concatenates exactly `k` equally-shaped trials in order.
pub fn block_concat<T: Scalar>(trials: &[&DenseMatrix<T>], k: usize) -> Result<DenseMatrix<T>> {
    if k == 0 || trials.len() != k {
        return Err(Error::invalid(format!(
            "block needs exactly {k} trials, got {}",
            trials.len()
        )));
    }
    let (p, t) = trials[0].shape();
    if let Some(bad) = trials.iter().find(|m| m.shape() != (p, t)) {
        return Err(Error::shape("block_concat", (p, t), bad.shape()));
    }
    let mut out = DenseMatrix::zeros(p, k * t);
    for i in 0..p {
        let row = out.row_mut(i);
        for (b, trial) in trials.iter().enumerate() {
            row[b * t..(b + 1) * t].copy_from_slice(trial.row(i));
        }
    }
    Ok(out)
}

/// Z-scores each row over time with the population (1/N) standard deviation.
/// Zero-variance rows become all zeros.
pub fn zscore_rows<T: Scalar>(x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    if x.cols() < 2 {
        return Err(Error::invalid(format!(
            "z-scoring needs at least 2 timepoints, got {}",
            x.cols()
        )));
    }
    let n = T::from_usize(x.cols()).unwrap();
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = out.row_mut(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let std = var.sqrt();
        // Relative floor: round-off on a constant row leaves var ~ eps²·mean².
        let floor = T::epsilon() * (T::one() + mean.abs()) * T::lit(16.0);
        if std <= floor {
            row.iter_mut().for_each(|v| *v = T::zero());
        } else {
            row.iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
    }
    Ok(out)
}

/// Pearson matrix of a row-z-scored `P × n` matrix: `⟨xᵢ, xⱼ⟩ / n`, clipped
/// to `[-1, 1]`, unit diagonal. All-zero (constant) rows correlate 0 with
/// every other row.
pub fn pearson<T: Scalar>(z: &DenseMatrix<T>) -> DenseMatrix<T> {
    let p = z.rows();
    let n = T::from_usize(z.cols().max(1)).unwrap();
    let mut a = DenseMatrix::identity(p);
    for i in 0..p {
        for j in i + 1..p {
            let dot: T = z.row(i).iter().zip(z.row(j)).map(|(&u, &v)| u * v).sum();
            let r = (dot / n).max(-T::one()).min(T::one());
            a[(i, j)] = r;
            a[(j, i)] = r;
        }
    }
    a
}

/// Pearson connectivity of a raw (un-normalized) block.
pub fn connectivity<T: Scalar>(x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    Ok(pearson(&zscore_rows(x)?))
}

/// Splits a signed matrix into nonnegative channels `(max(a,0), max(-a,0))`.
pub fn signed_split<T: Scalar>(a: &DenseMatrix<T>) -> (DenseMatrix<T>, DenseMatrix<T>) {
    let plus = a.map(|v| v.max(T::zero()));
    let minus = a.map(|v| (-v).max(T::zero()));
    (plus, minus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    type M = DenseMatrix<f64>;

    fn random(rows: usize, cols: usize, seed: u64) -> M {
        let mut rng = RngStream::new(seed);
        M::new(rows, cols, rng.normal_draws(rows * cols, 0.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn concat_single_is_identity() {
        let x = random(4, 5, 1);
        assert_eq!(block_concat(&[&x], 1).unwrap(), x);
    }

    #[test]
    fn concat_order_and_roundtrip() {
        let a = random(3, 3, 1);
        let b = random(3, 3, 2);
        let c = block_concat(&[&a, &b], 2).unwrap();
        assert_eq!(c.shape(), (3, 6));
        for i in 0..3 {
            assert_eq!(&c.row(i)[0..3], a.row(i));
            assert_eq!(&c.row(i)[3..6], b.row(i));
        }
    }

    #[test]
    fn concat_errors() {
        let a = random(3, 3, 1);
        let b = random(3, 4, 2);
        assert!(block_concat(&[&a, &b], 2).is_err());
        assert!(block_concat(&[&a], 2).is_err());
    }

    #[test]
    fn zscore_simple_rows() {
        let x = M::from_rows(&[vec![1.0, 2.0, 3.0], vec![5.0, 5.0, 5.0]]).unwrap();
        let z = zscore_rows(&x).unwrap();
        let r0 = z.row(0);
        let mean = r0.iter().sum::<f64>() / 3.0;
        let var = r0.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15);
        assert!((var.sqrt() - 1.0).abs() < 1e-15);
        assert_eq!(z.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zscore_random_matrix() {
        let z = zscore_rows(&random(10, 50, 4).map(|v| 3.0 * v + 7.0)).unwrap();
        for i in 0..10 {
            let r = z.row(i);
            let mean = r.iter().sum::<f64>() / 50.0;
            let std = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
            assert!(mean.abs() < 1e-12);
            assert!((std - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zscore_needs_two_columns() {
        assert!(zscore_rows(&M::zeros(3, 1)).is_err());
    }

    #[test]
    fn perfect_correlations() {
        let x = M::from_rows(&[vec![1.0, 4.0, 2.0, 8.0], vec![1.0, 4.0, 2.0, 8.0], vec![-1.0, -4.0, -2.0, -8.0]]).unwrap();
        let a = connectivity(&x).unwrap();
        assert!((a[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((a[(0, 2)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_definitional_pearson() {
        let x = random(6, 40, 11);
        let a = connectivity(&x).unwrap();
        let n = 40.0;
        let stats: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let r = x.row(i);
                let m = r.iter().sum::<f64>() / n;
                (m, (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
            })
            .collect();
        for i in 0..6 {
            for j in 0..6 {
                let cov = x
                    .row(i)
                    .iter()
                    .zip(x.row(j))
                    .map(|(u, v)| (u - stats[i].0) * (v - stats[j].0))
                    .sum::<f64>()
                    / n;
                let expected = cov / (stats[i].1 * stats[j].1);
                assert!((a[(i, j)] - expected).abs() < 1e-10, "({i},{j})");
            }
        }
    }

    #[test]
    fn zero_variance_parcel_convention() {
        let mut x = random(4, 20, 3);
        x.row_mut(2).iter_mut().for_each(|v| *v = 1.5);
        let a = connectivity(&x).unwrap();
        for j in 0..4 {
            let expect = if j == 2 { 1.0 } else { 0.0 };
            assert_eq!(a[(2, j)], expect);
            assert_eq!(a[(j, 2)], expect);
        }
    }

    #[test]
    fn invariant_under_positive_row_rescaling() {
        let x = random(5, 30, 8);
        let mut y = x.clone();
        for (i, s) in [0.1, 3.0, 250.0, 1.0, 0.02].iter().enumerate() {
            y.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        let d = connectivity(&x).unwrap().max_abs_diff(&connectivity(&y).unwrap()).unwrap();
        assert!(d < 1e-10);
    }

    #[test]
    fn split_example() {
        let a = M::from_rows(&[vec![1.0, -0.5], vec![-0.5, 1.0]]).unwrap();
        let (p, m) = signed_split(&a);
        assert_eq!(p.data(), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(m.data(), &[0.0, 0.5, 0.5, 0.0]);
        let (_, m) = signed_split(&a.map(f64::abs));
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_reconstructs_exactly() {
        for seed in 0..100 {
            let x = random(7, 12, seed);
            let a = connectivity(&x).unwrap();
            let (p, m) = signed_split(&a);
            assert_eq!(p.sub(&m).unwrap(), a);
            assert!(p.hadamard(&m).unwrap().data().iter().all(|&v| v == 0.0));
        }
    }
}
