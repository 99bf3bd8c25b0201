//! Multi-seed synthetic experiment: generate, train, estimate with every
//! estimator, and aggregate the bias per estimator across seeds.

use serde::{Deserialize, Serialize};

use super::{estimate_report, train_bundle, CliError, RunConfig};
use crate::ensemble::EstimatorKind;
use crate::metrics::MethodReport;
use crate::synth::{self, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub n_target: u64,
    pub true_positives: u64,
    pub single_model_weight: f64,
    pub member_weights: Vec<f64>,
    pub rows: Vec<MethodReport>,
}

impl SeedRun {
    pub fn bias(&self, kind: EstimatorKind) -> Option<f64> {
        self.rows.iter().find(|r| r.kind == kind).and_then(|r| r.bias)
    }

    /// `|bias|` strictly decreasing from label count to calibrated sum to
    /// the calibrated ensemble.
    pub fn strict_ordering(&self) -> bool {
        match (
            self.bias(EstimatorKind::LabelCount),
            self.bias(EstimatorKind::CalibratedSum),
            self.bias(EstimatorKind::EnsembleCalibrated),
        ) {
            (Some(a), Some(b), Some(c)) => a.abs() > b.abs() && b.abs() > c.abs(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: EstimatorKind,
    pub median_bias: f64,
    pub median_abs_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingSummary {
    /// Median `|bias|`: label count > calibrated sum > calibrated ensemble.
    pub median_ordering_holds: bool,
    pub seeds_with_strict_ordering: usize,
    /// Seeds where the raw probability sum is at least as biased (signed) as
    /// the label count.
    pub seeds_raw_sum_at_least_label_count: usize,
    pub seeds_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub config_digest: String,
    pub runs: Vec<SeedRun>,
    pub summary: Vec<KindSummary>,
    pub ordering: OrderingSummary,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

impl ExperimentReport {
    pub fn summary_for(&self, kind: EstimatorKind) -> Option<&KindSummary> {
        self.summary.iter().find(|s| s.kind == kind)
    }

    /// Two-column `kind,bias` series of median biases.
    pub fn bias_series_csv(&self) -> String {
        let mut out = String::from("kind,bias\n");
        for s in &self.summary {
            out.push_str(&format!("{},{}\n", s.kind, s.median_bias));
        }
        out
    }
}

/// One seed end to end. The seed replaces both the corpus seed and the
/// master model seed of `cfg`.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<SeedRun, CliError> {
    let mut cfg = cfg.clone();
    cfg.synth.seed = seed;
    cfg.master_seed = seed;
    let synth_cfg = SynthConfig::from_profile(&cfg.synth).map_err(|e| CliError::Config(e.to_string()))?;
    let corpus = synth::generate(&synth_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let bundle = train_bundle(&corpus.train, &cfg)?;
    let truth = corpus.target.labels();
    let report = estimate_report(
        &bundle,
        &corpus.target_documents(),
        &EstimatorKind::ALL,
        cfg.ensemble.method,
        Some(&truth),
    )?;
    Ok(SeedRun {
        seed,
        n_target: report.n_target,
        true_positives: corpus.target.positive_count() as u64,
        single_model_weight: bundle.single_model.weight,
        member_weights: bundle.ensemble.members.iter().map(|m| m.weight).collect(),
        rows: report.rows,
    })
}

pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentReport, CliError> {
    cfg.validate()?;
    let runs = cfg
        .experiment
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let summary: Vec<KindSummary> = EstimatorKind::ALL
        .into_iter()
        .map(|kind| {
            let biases: Vec<f64> = runs.iter().filter_map(|r| r.bias(kind)).collect();
            KindSummary {
                kind,
                median_bias: median(biases.clone()),
                median_abs_bias: median(biases.iter().map(|b| b.abs()).collect()),
            }
        })
        .collect();
    let abs = |k: EstimatorKind| {
        summary
            .iter()
            .find(|s| s.kind == k)
            .map(|s| s.median_abs_bias)
            .unwrap_or(f64::NAN)
    };
    let ordering = OrderingSummary {
        median_ordering_holds: abs(EstimatorKind::LabelCount) > abs(EstimatorKind::CalibratedSum)
            && abs(EstimatorKind::CalibratedSum) > abs(EstimatorKind::EnsembleCalibrated),
        seeds_with_strict_ordering: runs.iter().filter(|r| r.strict_ordering()).count(),
        seeds_raw_sum_at_least_label_count: runs
            .iter()
            .filter(|r| {
                matches!(
                    (r.bias(EstimatorKind::RawProbSum), r.bias(EstimatorKind::LabelCount)),
                    (Some(raw), Some(label)) if raw >= label
                )
            })
            .count(),
        seeds_total: runs.len(),
    };
    Ok(ExperimentReport {
        format_version: super::REPORT_FORMAT_VERSION,
        config_digest: cfg.digest(),
        runs,
        summary,
        ordering,
    })
}
