//! Prevalence estimation and probability calibration under prior shift.
//!
//! Held-out scores of each class are summarized by a Beta density (`f1` for
//! positives, `f0` for negatives). A target population's scores are then a
//! two-component mixture `pi * f1 + (1 - pi) * f0`; `pi` is estimated by EM or
//! by the posterior mean under a uniform prior, and each score is mapped to
//! its posterior class probability under the estimated `pi`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::logreg::clamp_score;
use crate::numeric::{pairwise_mean, pairwise_sum, simpson_weights};

/// Floor applied to every density evaluation.
pub const DENSITY_FLOOR: f64 = 1e-300;
/// Minimum sample variance accepted by the moment fit.
pub const MIN_SCORE_VARIANCE: f64 = 1e-6;
const SHAPE_FLOOR: f64 = 0.01;
const IDENTIFIABILITY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("score variance {variance:e} is below {MIN_SCORE_VARIANCE:e}; cannot fit a density")]
    DegenerateScores { variance: f64 },
    #[error("at least {needed} scores are required, got {got}")]
    TooFewScores { needed: usize, got: usize },
    #[error("no target scores supplied")]
    EmptyTarget,
    #[error("grid must have an odd number of points >= 3, got {0}")]
    BadGrid(usize),
    #[error("invalid Beta parameters alpha={alpha}, beta={beta}")]
    BadParams { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, CalibrationError> {
        if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
            Ok(BetaParams { alpha, beta })
        } else {
            Err(CalibrationError::BadParams { alpha, beta })
        }
    }

    /// Moment matching with both shapes floored at 0.01.
    pub fn from_moments(mean: f64, variance: f64) -> Self {
        let c = mean * (1.0 - mean) / variance - 1.0;
        BetaParams {
            alpha: (mean * c).max(SHAPE_FLOOR),
            beta: ((1.0 - mean) * c).max(SHAPE_FLOOR),
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let ln_norm = ln_gamma(self.alpha + self.beta) - ln_gamma(self.alpha) - ln_gamma(self.beta);
        ln_norm + (self.alpha - 1.0) * x.ln() + (self.beta - 1.0) * (-x).ln_1p()
    }

    /// Density at `x`, floored at [`DENSITY_FLOOR`].
    pub fn pdf(&self, x: f64) -> f64 {
        let p = self.ln_pdf(x).exp();
        if p.is_finite() {
            p.max(DENSITY_FLOOR)
        } else if p.is_nan() {
            DENSITY_FLOOR
        } else {
            f64::MAX
        }
    }

    fn coincides(&self, other: &BetaParams) -> bool {
        (self.alpha - other.alpha).abs() <= IDENTIFIABILITY_TOL
            && (self.beta - other.beta).abs() <= IDENTIFIABILITY_TOL
    }
}

/// Method-of-moments Beta fit. Scores are clamped into the scoring range
/// first; the unbiased sample variance is used.
pub fn fit_beta_moments(scores: &[f64]) -> Result<BetaParams, CalibrationError> {
    if scores.len() < 2 {
        return Err(CalibrationError::TooFewScores {
            needed: 2,
            got: scores.len(),
        });
    }
    let clamped: Vec<f64> = scores.iter().map(|&s| clamp_score(s)).collect();
    let mean = pairwise_mean(&clamped);
    let sq: Vec<f64> = clamped.iter().map(|s| (s - mean) * (s - mean)).collect();
    let variance = pairwise_sum(&sq) / (clamped.len() - 1) as f64;
    if !(variance >= MIN_SCORE_VARIANCE) {
        return Err(CalibrationError::DegenerateScores { variance });
    }
    Ok(BetaParams::from_moments(mean, variance))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreDensityPair {
    /// Positive-class score density.
    pub f1: BetaParams,
    /// Negative-class score density.
    pub f0: BetaParams,
    pub n1: usize,
    pub n0: usize,
}

impl ScoreDensityPair {
    /// Fits both class densities from held-out scores.
    pub fn fit(positive_scores: &[f64], negative_scores: &[f64]) -> Result<Self, CalibrationError> {
        Ok(ScoreDensityPair {
            f1: fit_beta_moments(positive_scores)?,
            f0: fit_beta_moments(negative_scores)?,
            n1: positive_scores.len(),
            n0: negative_scores.len(),
        })
    }

    pub fn identifiable(&self) -> bool {
        !self.f1.coincides(&self.f0)
    }

    /// `(f1(s), f0(s))` after clamping `s`.
    pub fn densities_at(&self, s: f64) -> (f64, f64) {
        let s = clamp_score(s);
        (self.f1.pdf(s), self.f0.pdf(s))
    }

    fn evaluate(&self, scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
        scores.iter().map(|&s| self.densities_at(s)).unzip()
    }

    /// Mixture log-likelihood `sum_j ln(pi f1(s_j) + (1 - pi) f0(s_j))`.
    pub fn mixture_log_likelihood(&self, scores: &[f64], pi: f64) -> f64 {
        let (a, b) = self.evaluate(scores);
        log_likelihood(&a, &b, pi)
    }
}

fn log_likelihood(f1: &[f64], f0: &[f64], pi: f64) -> f64 {
    let terms: Vec<f64> = f1
        .iter()
        .zip(f0)
        .map(|(&a, &b)| (pi * a + (1.0 - pi) * b).ln())
        .collect();
    pairwise_sum(&terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    #[serde(alias = "em")]
    EmMl,
    #[default]
    #[serde(alias = "bayes")]
    BayesPosteriorMean,
}

impl CalibrationMethod {
    pub fn short_name(self) -> &'static str {
        match self {
            CalibrationMethod::EmMl => "em",
            CalibrationMethod::BayesPosteriorMean => "bayes",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceEstimate {
    pub pi: f64,
    pub method: CalibrationMethod,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_sd: Option<f64>,
    pub identifiable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            tol: 1e-8,
            max_iter: 10_000,
        }
    }
}

pub const DEFAULT_GRID_POINTS: usize = 2001;

fn posterior_weight(pi: f64, a: f64, b: f64) -> f64 {
    if a == b {
        return pi;
    }
    let num = pi * a;
    let den = num + (1.0 - pi) * b;
    if den > 0.0 && den.is_finite() {
        (num / den).clamp(0.0, 1.0)
    } else {
        pi
    }
}

fn em_step(f1: &[f64], f0: &[f64], pi: f64) -> f64 {
    let post: Vec<f64> = f1
        .iter()
        .zip(f0)
        .map(|(&a, &b)| posterior_weight(pi, a, b))
        .collect();
    pairwise_mean(&post).clamp(0.0, 1.0)
}

/// Every EM iterate, starting at `pi = 0.5` and ending at the returned
/// estimate.
pub fn em_trajectory(
    densities: &ScoreDensityPair,
    target_scores: &[f64],
    opts: EmOptions,
) -> Result<Vec<f64>, CalibrationError> {
    if target_scores.is_empty() {
        return Err(CalibrationError::EmptyTarget);
    }
    let (f1, f0) = densities.evaluate(target_scores);
    let mut path = vec![0.5];
    if !densities.identifiable() {
        return Ok(path);
    }
    let mut pi = 0.5;
    for _ in 0..opts.max_iter {
        let next = em_step(&f1, &f0, pi);
        path.push(next);
        let delta = (next - pi).abs();
        pi = next;
        if delta <= opts.tol {
            break;
        }
    }
    Ok(path)
}

/// Maximum-likelihood mixture weight by EM from `pi = 0.5`.
pub fn estimate_prevalence_em(
    densities: &ScoreDensityPair,
    target_scores: &[f64],
    opts: EmOptions,
) -> Result<PrevalenceEstimate, CalibrationError> {
    let path = em_trajectory(densities, target_scores, opts)?;
    Ok(PrevalenceEstimate {
        pi: *path.last().expect("trajectory starts at 0.5"),
        method: CalibrationMethod::EmMl,
        iterations: path.len() - 1,
        posterior_sd: None,
        identifiable: densities.identifiable(),
    })
}

/// Posterior mean and standard deviation of `pi` under a uniform prior,
/// integrated with Simpson's rule on an odd grid over [0, 1].
pub fn estimate_prevalence_bayes(
    densities: &ScoreDensityPair,
    target_scores: &[f64],
    grid_points: usize,
) -> Result<PrevalenceEstimate, CalibrationError> {
    if grid_points < 3 || grid_points % 2 == 0 {
        return Err(CalibrationError::BadGrid(grid_points));
    }
    if target_scores.is_empty() {
        return Err(CalibrationError::EmptyTarget);
    }
    let (f1, f0) = densities.evaluate(target_scores);
    let step = 1.0 / (grid_points - 1) as f64;
    let log_post: Vec<f64> = (0..grid_points)
        .into_par_iter()
        .map(|k| log_likelihood(&f1, &f0, k as f64 * step))
        .collect();
    let max = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights = simpson_weights(grid_points);

    let mut z = Vec::with_capacity(grid_points);
    let mut m1 = Vec::with_capacity(grid_points);
    let mut m2 = Vec::with_capacity(grid_points);
    for (k, (&lp, &w)) in log_post.iter().zip(&weights).enumerate() {
        let pi = k as f64 * step;
        let p = w * (lp - max).exp();
        z.push(p);
        m1.push(p * pi);
        m2.push(p * pi * pi);
    }
    let z = pairwise_sum(&z);
    let mean = (pairwise_sum(&m1) / z).clamp(0.0, 1.0);
    let var = pairwise_sum(&m2) / z - mean * mean;
    Ok(PrevalenceEstimate {
        pi: mean,
        method: CalibrationMethod::BayesPosteriorMean,
        iterations: grid_points,
        posterior_sd: Some(var.max(0.0).sqrt()),
        identifiable: densities.identifiable(),
    })
}

pub fn estimate_prevalence(
    densities: &ScoreDensityPair,
    target_scores: &[f64],
    method: CalibrationMethod,
) -> Result<PrevalenceEstimate, CalibrationError> {
    match method {
        CalibrationMethod::EmMl => {
            estimate_prevalence_em(densities, target_scores, EmOptions::default())
        }
        CalibrationMethod::BayesPosteriorMean => {
            estimate_prevalence_bayes(densities, target_scores, DEFAULT_GRID_POINTS)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedScore {
    pub q: f64,
    /// Both densities vanished at the score; `q` fell back to `pi`.
    pub fallback: bool,
}

/// Posterior probability of the positive class for one score.
pub fn calibrate_score(s: f64, pi: f64, densities: &ScoreDensityPair) -> CalibratedScore {
    let (a, b) = densities.densities_at(s);
    let den = pi * a + (1.0 - pi) * b;
    CalibratedScore {
        q: posterior_weight(pi, a, b),
        fallback: a != b && !(den > 0.0 && den.is_finite()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub estimate: PrevalenceEstimate,
    pub probabilities: Vec<f64>,
    pub fallbacks: usize,
}

/// Estimates the prevalence of `scores` and calibrates each of them under it.
pub fn calibrate_all(
    scores: &[f64],
    densities: &ScoreDensityPair,
    method: CalibrationMethod,
) -> Result<Calibration, CalibrationError> {
    let estimate = estimate_prevalence(densities, scores, method)?;
    let mut fallbacks = 0;
    let probabilities: Vec<f64> = scores
        .iter()
        .map(|&s| {
            let c = calibrate_score(s, estimate.pi, densities);
            fallbacks += c.fallback as usize;
            c.q
        })
        .collect();
    if method == CalibrationMethod::EmMl {
        debug_assert!(
            (pairwise_mean(&probabilities) - estimate.pi).abs() <= 1e-6,
            "EM fixed point violated"
        );
    }
    Ok(Calibration {
        estimate,
        probabilities,
        fallbacks,
    })
}
