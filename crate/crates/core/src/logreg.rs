//! L2-regularized binary logistic regression trained by full-batch gradient
//! descent with Armijo backtracking.
//!
//! Objective: mean negative log-likelihood plus `(l2_lambda / 2) * ||w||^2`.
//! The intercept is not penalized.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::features::SparseVector;
use crate::numeric::{sigmoid, softplus};

/// Scores are clamped to `[SCORE_FLOOR, 1 - SCORE_FLOOR]`.
pub const SCORE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LogRegError {
    #[error("training data contains a single class; both classes are required")]
    SingleClass,
    #[error("training diverged: non-finite loss at iteration {iteration}")]
    Divergence { iteration: usize },
    #[error("dimension mismatch: model has {expected}, vector has {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("{vectors} vectors but {labels} labels")]
    LengthMismatch { vectors: usize, labels: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// First step tried by the line search on the first iteration.
    pub initial_step: f64,
    /// Later iterations start their search at `step_growth` times the
    /// previously accepted step. Zero restarts every search at
    /// `initial_step`.
    pub step_growth: f64,
    /// Sufficient-decrease constant of the Armijo condition.
    pub armijo_c: f64,
    /// Maximum number of step halvings before the search gives up.
    pub max_halvings: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            l2_lambda: 1e-4,
            max_iters: 500,
            grad_tol: 1e-6,
            initial_step: 1.0,
            step_growth: 2.0,
            armijo_c: 1e-4,
            max_halvings: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LogRegError> {
        let bad = |m: &str| Err(LogRegError::InvalidConfig(m.to_string()));
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return bad("l2_lambda must be a finite non-negative number");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive");
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad("initial_step must be positive");
        }
        if !(self.step_growth >= 0.0 && self.step_growth.is_finite()) {
            return bad("step_growth must be a finite non-negative number");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Weights plus intercept. Serialized with only the non-zero weights, as
/// `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRepr", try_from = "ModelRepr")]
pub struct LinearModel {
    weights: Vec<f64>,
    intercept: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    dim: usize,
    intercept: f64,
    weights: Vec<(u32, f64)>,
}

impl From<LinearModel> for ModelRepr {
    fn from(m: LinearModel) -> Self {
        ModelRepr {
            dim: m.weights.len(),
            intercept: m.intercept,
            weights: m
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, &w)| (i as u32, w))
                .collect(),
        }
    }
}

impl TryFrom<ModelRepr> for LinearModel {
    type Error = String;

    fn try_from(r: ModelRepr) -> Result<Self, String> {
        let mut weights = vec![0.0; r.dim];
        for (i, w) in r.weights {
            let slot = weights
                .get_mut(i as usize)
                .ok_or_else(|| format!("weight index {i} outside dimension {}", r.dim))?;
            *slot = w;
        }
        LinearModel::new(weights, r.intercept).ok_or_else(|| "non-finite model parameter".into())
    }
}

impl LinearModel {
    pub fn zeros(dim: usize) -> Self {
        LinearModel {
            weights: vec![0.0; dim],
            intercept: 0.0,
        }
    }

    /// `None` when any parameter is non-finite.
    pub fn new(weights: Vec<f64>, intercept: f64) -> Option<Self> {
        if intercept.is_finite() && weights.iter().all(|w| w.is_finite()) {
            Some(LinearModel { weights, intercept })
        } else {
            None
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    fn check_dim(&self, x: &SparseVector) -> Result<(), LogRegError> {
        if x.dim() != self.dim() {
            return Err(LogRegError::DimMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    /// `w . x + b`.
    pub fn margin(&self, x: &SparseVector) -> Result<f64, LogRegError> {
        self.check_dim(x)?;
        Ok(x.dot_dense(&self.weights) + self.intercept)
    }

    /// Clamped logistic score.
    pub fn score(&self, x: &SparseVector) -> Result<f64, LogRegError> {
        Ok(clamp_score(sigmoid(self.margin(x)?)))
    }

    pub fn score_all(&self, xs: &[SparseVector]) -> Result<Vec<f64>, LogRegError> {
        xs.iter().map(|x| self.score(x)).collect()
    }
}

pub fn clamp_score(p: f64) -> f64 {
    p.clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR)
}

fn check_data(
    dim: usize,
    xs: &[SparseVector],
    ys: &[Label],
) -> Result<(), LogRegError> {
    if xs.len() != ys.len() {
        return Err(LogRegError::LengthMismatch {
            vectors: xs.len(),
            labels: ys.len(),
        });
    }
    if let Some(x) = xs.iter().find(|x| x.dim() != dim) {
        return Err(LogRegError::DimMismatch {
            expected: dim,
            found: x.dim(),
        });
    }
    let positives = ys.iter().filter(|y| y.is_positive()).count();
    if positives == 0 || positives == ys.len() {
        return Err(LogRegError::SingleClass);
    }
    Ok(())
}

fn target(y: Label) -> f64 {
    if y.is_positive() {
        1.0
    } else {
        0.0
    }
}

/// Mean NLL from precomputed margins: `ln(1 + e^z) - y z`.
fn nll(margins: &[f64], ys: &[Label]) -> f64 {
    let total: f64 = margins
        .iter()
        .zip(ys)
        .map(|(&z, &y)| softplus(z) - target(y) * z)
        .sum();
    total / margins.len() as f64
}

fn sq_norm(w: &[f64]) -> f64 {
    w.iter().map(|v| v * v).sum()
}

/// Regularized objective and its exact gradient. The gradient has `dim + 1`
/// entries; the last is the (unpenalized) intercept component.
pub fn loss_and_gradient(
    model: &LinearModel,
    xs: &[SparseVector],
    ys: &[Label],
    l2_lambda: f64,
) -> Result<(f64, Vec<f64>), LogRegError> {
    check_data(model.dim(), xs, ys)?;
    let margins: Vec<f64> = xs
        .iter()
        .map(|x| x.dot_dense(&model.weights) + model.intercept)
        .collect();
    Ok(objective_and_gradient(model, xs, ys, l2_lambda, &margins))
}

/// Same objective without the class-balance precondition; used where data
/// has been validated already.
fn objective_and_gradient(
    model: &LinearModel,
    xs: &[SparseVector],
    ys: &[Label],
    l2_lambda: f64,
    margins: &[f64],
) -> (f64, Vec<f64>) {
    let n = xs.len() as f64;
    let dim = model.dim();
    let mut grad = vec![0.0; dim + 1];
    let mut intercept_grad = 0.0;
    for ((x, &y), &z) in xs.iter().zip(ys).zip(margins) {
        let r = sigmoid(z) - target(y);
        intercept_grad += r;
        for (i, v) in x.iter() {
            grad[i] += r * v;
        }
    }
    for (g, &w) in grad[..dim].iter_mut().zip(&model.weights) {
        *g = *g / n + l2_lambda * w;
    }
    grad[dim] = intercept_grad / n;
    let loss = nll(margins, ys) + 0.5 * l2_lambda * sq_norm(&model.weights);
    (loss, grad)
}

/// Outcome of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: LinearModel,
    pub iterations: usize,
    pub converged: bool,
    pub final_loss: f64,
}

/// Trains from the zero model.
pub fn train(xs: &[SparseVector], ys: &[Label], cfg: &TrainConfig) -> Result<LinearModel, LogRegError> {
    let dim = xs.first().map(|x| x.dim()).unwrap_or(0);
    Ok(train_from(LinearModel::zeros(dim), xs, ys, cfg)?.model)
}

/// Gradient descent from an arbitrary starting model.
pub fn train_from(
    init: LinearModel,
    xs: &[SparseVector],
    ys: &[Label],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, LogRegError> {
    cfg.validate()?;
    check_data(init.dim(), xs, ys)?;
    let dim = init.dim();
    let lambda = cfg.l2_lambda;
    let mut model = init;
    let mut margins: Vec<f64> = xs
        .iter()
        .map(|x| x.dot_dense(&model.weights) + model.intercept)
        .collect();

    let mut iterations = 0;
    let mut converged = false;
    let mut last_step: Option<f64> = None;
    let mut loss;
    loop {
        let (l, grad) = objective_and_gradient(&model, xs, ys, lambda, &margins);
        loss = l;
        if !loss.is_finite() {
            return Err(LogRegError::Divergence { iteration: iterations });
        }
        let grad_inf = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if grad_inf <= cfg.grad_tol {
            converged = true;
            break;
        }
        if iterations == cfg.max_iters {
            break;
        }

        // Directional change of every margin along -grad, so each trial step
        // costs O(n) instead of a pass over the data.
        let grad_sq = sq_norm(&grad);
        let slope: Vec<f64> = xs
            .iter()
            .map(|x| x.dot_dense(&grad[..dim]) + grad[dim])
            .collect();
        let w_sq = sq_norm(&model.weights);
        let w_dot_g: f64 = model.weights.iter().zip(&grad).map(|(w, g)| w * g).sum();
        let g_w_sq = grad_sq - grad[dim] * grad[dim];

        let mut step = match last_step {
            Some(prev) if cfg.step_growth > 0.0 => prev * cfg.step_growth,
            _ => cfg.initial_step,
        };
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = margins.iter().zip(&slope).map(|(z, d)| z - step * d).collect();
            let trial_w_sq = w_sq - 2.0 * step * w_dot_g + step * step * g_w_sq;
            let trial_loss = nll(&trial, ys) + 0.5 * lambda * trial_w_sq;
            if trial_loss.is_finite() && trial_loss <= loss - cfg.armijo_c * step * grad_sq {
                accepted = Some(step);
                break;
            }
            step *= 0.5;
        }
        let Some(step) = accepted else {
            // no representable descent step: numerically at the optimum
            converged = true;
            break;
        };
        last_step = Some(step);

        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= step * g;
        }
        model.intercept -= step * grad[dim];
        if !model.intercept.is_finite() {
            return Err(LogRegError::Divergence { iteration: iterations });
        }
        for (z, x) in margins.iter_mut().zip(xs) {
            *z = x.dot_dense(&model.weights) + model.intercept;
        }
        iterations += 1;
    }

    Ok(TrainOutcome {
        model,
        iterations,
        converged,
        final_loss: loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec2(a: f64, b: f64) -> SparseVector {
        SparseVector::from_pairs(2, [(0, a), (1, b)]).unwrap()
    }

    #[test]
    fn zero_model_scores_one_half() {
        let m = LinearModel::zeros(4);
        let x = SparseVector::from_pairs(4, [(1, 0.3), (3, 2.0)]).unwrap();
        assert_eq!(m.score(&x).unwrap(), 0.5);
    }

    #[test]
    fn score_of_ln3_margin() {
        let m = LinearModel::new(vec![0.0, 0.0], 3f64.ln()).unwrap();
        assert!((m.score(&vec2(1.0, 1.0)).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn score_is_clamped() {
        assert_eq!(clamp_score(1.0 - 1e-12), 1.0 - 1e-6);
        assert_eq!(clamp_score(0.0), 1e-6);
        let m = LinearModel::new(vec![0.0], 100.0).unwrap();
        assert_eq!(m.score(&SparseVector::empty(1)).unwrap(), 1.0 - 1e-6);
    }

    #[test]
    fn score_rejects_dimension_mismatch() {
        let m = LinearModel::zeros(4);
        assert_eq!(
            m.score(&SparseVector::empty(8)),
            Err(LogRegError::DimMismatch { expected: 4, found: 8 })
        );
    }

    #[test]
    fn non_finite_parameters_rejected() {
        assert!(LinearModel::new(vec![f64::NAN], 0.0).is_none());
        assert!(LinearModel::new(vec![0.0], f64::INFINITY).is_none());
    }

    #[test]
    fn zero_model_balanced_loss_is_ln2() {
        let xs = vec![vec2(1.0, 0.0), vec2(0.0, 1.0)];
        let ys = vec![Label::Positive, Label::Negative];
        let (loss, _) = loss_and_gradient(&LinearModel::zeros(2), &xs, &ys, 0.5).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn intercept_gradient_for_all_positive_labels() {
        // The public entry point refuses single-class data, so evaluate the
        // objective directly.
        let xs = vec![vec2(1.0, 0.0), vec2(0.0, 1.0), vec2(0.5, 0.5)];
        let ys = vec![Label::Positive; 3];
        let m = LinearModel::zeros(2);
        let (_, grad) = objective_and_gradient(&m, &xs, &ys, 0.0, &[0.0; 3]);
        assert_eq!(grad[2], -0.5);
    }

    #[test]
    fn single_class_rejected() {
        let xs = vec![vec2(1.0, 0.0), vec2(0.0, 1.0)];
        let ys = vec![Label::Negative; 2];
        assert_eq!(train(&xs, &ys, &TrainConfig::default()), Err(LogRegError::SingleClass));
    }

    #[test]
    fn uninformative_features_recover_prior() {
        // identical vectors: the optimum puts everything on the intercept,
        // split by the L2 penalty; with a large penalty the weights vanish
        let xs = vec![vec2(0.6, 0.8); 10];
        let ys: Vec<Label> = (0..10)
            .map(|i| if i < 3 { Label::Positive } else { Label::Negative })
            .collect();
        let cfg = TrainConfig {
            l2_lambda: 10.0,
            max_iters: 5000,
            grad_tol: 1e-10,
            ..TrainConfig::default()
        };
        let m = train(&xs, &ys, &cfg).unwrap();
        assert!(m.weights().iter().all(|w| w.abs() < 1e-3), "{:?}", m.weights());
        let logit = (0.3f64 / 0.7).ln();
        assert!((m.intercept() - logit).abs() < 1e-3, "{}", m.intercept());
    }

    #[test]
    fn separable_pair_is_classified() {
        let xs = vec![vec2(1.0, 0.0), vec2(0.0, 1.0)];
        let ys = vec![Label::Positive, Label::Negative];
        let cfg = TrainConfig {
            max_iters: 5000,
            ..TrainConfig::default()
        };
        let m = train(&xs, &ys, &cfg).unwrap();
        assert!(m.score(&xs[0]).unwrap() > 0.5);
        assert!(m.score(&xs[1]).unwrap() < 0.5);
    }

    #[test]
    fn mirrored_data_has_zero_intercept() {
        let xs = vec![vec2(0.6, 0.8), vec2(-0.6, -0.8), vec2(0.8, -0.6), vec2(-0.8, 0.6)];
        let ys = vec![Label::Positive, Label::Negative, Label::Negative, Label::Positive];
        let m = train(&xs, &ys, &TrainConfig::default()).unwrap();
        assert!(m.intercept().abs() < 1e-9, "{}", m.intercept());
    }

    #[test]
    fn training_is_bit_reproducible() {
        let xs = vec![vec2(1.0, 0.2), vec2(0.1, 1.0), vec2(0.7, 0.7), vec2(0.3, 0.1)];
        let ys = vec![Label::Positive, Label::Negative, Label::Positive, Label::Negative];
        let a = train(&xs, &ys, &TrainConfig::default()).unwrap();
        let b = train(&xs, &ys, &TrainConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn optimum_is_independent_of_start_and_schedule() {
        let xs: Vec<SparseVector> = (0..12)
            .map(|i| {
                let a = (i as f64 * 0.7).sin().abs() + 0.1;
                let b = (i as f64 * 1.3).cos().abs() + 0.1;
                SparseVector::from_pairs(3, [(0, a), (1, b), (2, 0.5)]).unwrap()
            })
            .collect();
        let ys: Vec<Label> = (0..12).map(|i| Label::from_int((i * 7 % 5 < 2) as i64).unwrap()).collect();
        let cfg = TrainConfig {
            l2_lambda: 0.05,
            max_iters: 100_000,
            grad_tol: 1e-10,
            ..TrainConfig::default()
        };
        let a = train(&xs, &ys, &cfg).unwrap();
        let start = LinearModel::new(vec![3.0, -2.0, 1.0], -4.0).unwrap();
        let plain = TrainConfig { step_growth: 0.0, ..cfg };
        let b = train_from(start, &xs, &ys, &plain).unwrap();
        assert!(b.converged);
        for x in &xs {
            let d = (a.score(x).unwrap() - b.model.score(x).unwrap()).abs();
            assert!(d <= 1e-6, "{d}");
        }
    }

    #[test]
    fn serde_keeps_only_nonzero_weights() {
        let m = LinearModel::new(vec![0.0, 1.5, 0.0, -2.0], 0.25).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"dim":4,"intercept":0.25,"weights":[[1,1.5],[3,-2.0]]}"#);
        assert_eq!(serde_json::from_str::<LinearModel>(&json).unwrap(), m);
        assert!(serde_json::from_str::<LinearModel>(r#"{"dim":2,"intercept":0,"weights":[[5,1.0]]}"#).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { max_iters: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { grad_tol: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #[test]
        fn score_is_monotone_in_margin(a in -30.0f64..30.0, d in 1e-3f64..5.0) {
            let lo = LinearModel::new(vec![0.0], a).unwrap();
            let hi = LinearModel::new(vec![0.0], a + d).unwrap();
            let x = SparseVector::empty(1);
            prop_assert!(sigmoid(a + d) > sigmoid(a));
            prop_assert!(hi.score(&x).unwrap() >= lo.score(&x).unwrap());
        }
    }
}
