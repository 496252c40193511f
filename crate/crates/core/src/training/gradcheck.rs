//! Central finite-difference verification of [`backprop`](super::backprop).

use std::fmt;

use super::backward::{backward, logit_gradients, sample_loss, Gradients};
use super::loss::LossConfig;
use crate::error::{Error, Result};
use crate::graphs::SignedGraph;
use crate::model::{forward_channels, Activation, ForwardCache, ModelParams, TENSOR_NAMES};
use crate::numerics::DenseMatrix;

/// What is being differentiated.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Total training loss of the graph under its own label.
    Loss(LossConfig),
    /// Raw logit of one class.
    Logit(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    Param { tensor: usize, index: usize },
    APlus { row: usize, col: usize },
    AMinus { row: usize, col: usize },
}

impl Coordinate {
    pub fn is_mask(&self) -> bool {
        matches!(self, Coordinate::Param { tensor: 0, .. })
    }

    pub fn is_input(&self) -> bool {
        !matches!(self, Coordinate::Param { .. })
    }
}

impl fmt::Display for Coordinate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Coordinate::Param { tensor, index } => write!(f, "{}[{index}]", TENSOR_NAMES[tensor]),
            Coordinate::APlus { row, col } => write!(f, "a_plus[{row},{col}]"),
            Coordinate::AMinus { row, col } => write!(f, "a_minus[{row},{col}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates whose perturbation brings any ReLU input within this
    /// distance of 0, or flips its sign, are skipped.
    pub kink_tolerance: f64,
    /// Denominator floor in `|a - n| / max(|a|, |n|, floor)`.
    pub relative_floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            kink_tolerance: 1e-6,
            relative_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordinateCheck {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<CoordinateCheck>,
    pub skipped_kinks: Vec<Coordinate>,
}

impl GradCheckReport {
    /// Worst checked coordinate, if any were checked.
    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.relative_error.total_cmp(&b.relative_error))
    }

    pub fn max_relative_error(&self) -> f64 {
        self.worst().map_or(0.0, |c| c.relative_error)
    }
}

/// ReLU input values, in a fixed order, for kink detection.
fn relu_inputs(cache: &ForwardCache<f64>) -> Vec<f64> {
    cache
        .conv1
        .pre
        .data()
        .iter()
        .chain(cache.conv2.pre.data())
        .chain(&cache.hidden_pre)
        .copied()
        .collect()
}

struct Evaluator<'a> {
    objective: &'a Objective,
    label: usize,
}

impl Evaluator<'_> {
    fn eval(&self, params: &ModelParams<f64>, a_plus: &DenseMatrix<f64>, a_minus: &DenseMatrix<f64>) -> Result<(f64, Vec<f64>)> {
        let cache = forward_channels(params, a_plus, a_minus)?;
        let value = match self.objective {
            Objective::Loss(cfg) => sample_loss(&cache, self.label, cfg)?,
            Objective::Logit(c) => cache.logits[*c],
        };
        Ok((value, relu_inputs(&cache)))
    }
}

fn crosses_kink(base: &[f64], plus: &[f64], minus: &[f64], tol: f64) -> bool {
    base.iter()
        .zip(plus)
        .zip(minus)
        .any(|((&b, &p), &m)| b.abs() < tol || (b > 0.0) != (p > 0.0) || (b > 0.0) != (m > 0.0))
}

/// Compares the analytic gradient of `objective` against central differences
/// for every parameter coordinate and every adjacency entry.
pub fn grad_check(
    params: &ModelParams<f64>,
    graph: &SignedGraph<f64>,
    objective: &Objective,
    opts: CheckOptions,
) -> Result<GradCheckReport> {
    if !(opts.step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let analytic: Gradients<f64> = match objective {
        Objective::Loss(cfg) => {
            let cache = forward_channels(params, &graph.a_plus, &graph.a_minus)?;
            backward(&cache, graph, graph.label, params, cfg)?
        }
        Objective::Logit(c) => logit_gradients(params, &graph.a_plus, &graph.a_minus, *c)?,
    };
    let evaluator = Evaluator {
        objective,
        label: graph.label,
    };
    let (_, base_relu) = evaluator.eval(params, &graph.a_plus, &graph.a_minus)?;
    let check_kinks = params.activation == Activation::Relu;
    let h = opts.step;

    let mut report = GradCheckReport {
        checks: Vec::new(),
        skipped_kinks: Vec::new(),
    };
    let mut record = |coordinate, analytic: f64, plus: (f64, Vec<f64>), minus: (f64, Vec<f64>)| {
        if check_kinks && crosses_kink(&base_relu, &plus.1, &minus.1, opts.kink_tolerance) {
            report.skipped_kinks.push(coordinate);
            return;
        }
        let numeric = (plus.0 - minus.0) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(opts.relative_floor);
        report.checks.push(CoordinateCheck {
            coordinate,
            analytic,
            numeric,
            relative_error: (analytic - numeric).abs() / denom,
        });
    };

    for tensor in 0..TENSOR_NAMES.len() {
        let len = params.tensors()[tensor].data().len();
        for index in 0..len {
            let mut shifted = params.clone();
            let original = shifted.tensors()[tensor].data()[index];
            shifted.tensors_mut()[tensor].data_mut()[index] = original + h;
            let plus = evaluator.eval(&shifted, &graph.a_plus, &graph.a_minus)?;
            shifted.tensors_mut()[tensor].data_mut()[index] = original - h;
            let minus = evaluator.eval(&shifted, &graph.a_plus, &graph.a_minus)?;
            let a = analytic.params.tensors()[tensor].data()[index];
            record(Coordinate::Param { tensor, index }, a, plus, minus);
        }
    }

    let p = graph.num_parcels();
    for channel in 0..2 {
        for row in 0..p {
            for col in 0..p {
                let mut a_plus = graph.a_plus.clone();
                let mut a_minus = graph.a_minus.clone();
                let target = if channel == 0 { &mut a_plus } else { &mut a_minus };
                let original = target[(row, col)];
                target[(row, col)] = original + h;
                let plus = evaluator.eval(params, &a_plus, &a_minus)?;
                let target = if channel == 0 { &mut a_plus } else { &mut a_minus };
                target[(row, col)] = original - h;
                let minus = evaluator.eval(params, &a_plus, &a_minus)?;
                let (coordinate, a) = if channel == 0 {
                    (Coordinate::APlus { row, col }, analytic.a_plus[(row, col)])
                } else {
                    (Coordinate::AMinus { row, col }, analytic.a_minus[(row, col)])
                };
                record(coordinate, a, plus, minus);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphs::connectivity;
    use crate::labels::Split;
    use crate::model::ModelDims;
    use crate::numerics::RngStream;

    fn setup(seed: u64, activation: Activation) -> (ModelParams<f64>, SignedGraph<f64>) {
        let mut rng = RngStream::new(seed);
        let dims = ModelDims {
            parcels: 6,
            classes: 3,
            conv1: 5,
            conv2: 5,
            hidden: 4,
        };
        let mut params = ModelParams::init(dims, &mut rng);
        params.activation = activation;
        for b in [&mut params.b_1, &mut params.b_2, &mut params.b_mlp_1, &mut params.b_mlp_2] {
            for v in b.data_mut() {
                *v = rng.uniform_range(-0.2, 0.2);
            }
        }
        let noise = rng.normal_draws(36, 0.0, 1.0).unwrap();
        params.mask_raw = DenseMatrix::new(6, 6, noise).unwrap().symmetrized().unwrap();
        let x = DenseMatrix::new(6, 20, rng.normal_draws(120, 0.0, 1.0).unwrap()).unwrap();
        let g = SignedGraph::from_correlation(&connectivity(&x).unwrap(), (seed % 3) as usize, Split::Train);
        (params, g)
    }

    #[test]
    fn full_model_loss_gradient() {
        let (params, g) = setup(1, Activation::Relu);
        let report = grad_check(&params, &g, &Objective::Loss(LossConfig::new(3)), CheckOptions::default()).unwrap();
        assert!(report.max_relative_error() < 1e-4, "{:?}", report.worst());
        assert!(report.checks.len() > 200);
    }

    #[test]
    fn linear_slice_is_exact() {
        // With identity activations every logit is linear in each weight and
        // quadratic in each adjacency entry, so central differences are exact
        // up to rounding; the logistic mask is the only curved part.
        let (params, g) = setup(2, Activation::Identity);
        let opts = CheckOptions {
            step: 0.1,
            ..CheckOptions::default()
        };
        let report = grad_check(&params, &g, &Objective::Logit(0), opts).unwrap();
        let worst = report
            .checks
            .iter()
            .filter(|c| !c.coordinate.is_mask())
            .map(|c| c.relative_error)
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
        assert!(report.skipped_kinks.is_empty());
    }

    #[test]
    fn error_shrinks_quadratically_with_step() {
        let (params, g) = setup(3, Activation::Identity);
        let objective = Objective::Loss(LossConfig::new(3));
        let errs: Vec<Vec<f64>> = [1e-3, 1e-4]
            .iter()
            .map(|&step| {
                let opts = CheckOptions {
                    step,
                    ..CheckOptions::default()
                };
                grad_check(&params, &g, &objective, opts)
                    .unwrap()
                    .checks
                    .iter()
                    .map(|c| (c.analytic - c.numeric).abs())
                    .collect()
            })
            .collect();
        // Use coordinates whose truncation error at 1e-3 sits well above rounding.
        let ratios: Vec<f64> = errs[0]
            .iter()
            .zip(&errs[1])
            .filter(|(&e3, _)| e3 > 1e-9)
            .map(|(e3, e4)| e3 / e4)
            .collect();
        assert!(!ratios.is_empty());
        let mut sorted = ratios.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!((50.0..200.0).contains(&median), "median ratio {median}");
    }

    #[test]
    fn nonpositive_step_rejected() {
        let (params, g) = setup(4, Activation::Relu);
        let opts = CheckOptions {
            step: 0.0,
            ..CheckOptions::default()
        };
        assert!(grad_check(&params, &g, &Objective::Logit(0), opts).is_err());
    }
}
