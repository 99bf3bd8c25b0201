//! Member construction, bootstrap ensembles, weighted calibrated voting and
//! the four positive-count estimators.
//!
//! A member is built as: (optional bootstrap) -> stratified split into train,
//! test and validation -> logistic regression on train -> voting weight =
//! validation accuracy at 0.5 -> class score densities fitted on the test
//! part. The single-model path skips the bootstrap.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{calibrate_all, CalibrationError, CalibrationMethod, PrevalenceEstimate, ScoreDensityPair};
use crate::corpus::{bootstrap_resample, stratified_split, CorpusError, Label, LabeledDataset, Split, SplitFractions};
use crate::features::{vectorize_all, SparseVector, VectorizerConfig};
use crate::logreg::{self, LinearModel, LogRegError, TrainConfig};
use crate::numeric::pairwise_sum;
use crate::rng::{mix, Stream};

pub const DEFAULT_MAX_MEMBERS: usize = 10;
pub const BUNDLE_FORMAT_VERSION: u32 = 1;
/// Attempts made with seeds `seed, seed + 1, ...` before a bootstrap member
/// is given up.
pub const BOOTSTRAP_ATTEMPTS: u64 = 100;
/// Label threshold applied to raw scores.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    LogReg(#[from] LogRegError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("member with seed {seed} could not be built: {source}")]
    MemberBuild {
        seed: u64,
        #[source]
        source: Box<EnsembleError>,
    },
    #[error("no usable split after {attempts} bootstrap attempts")]
    DegenerateBootstrap { attempts: u64 },
    #[error("ensemble build failed for member seeds {seeds:?}: {first}")]
    EnsembleBuild { seeds: Vec<u64>, first: Box<EnsembleError> },
    #[error("ensemble size must be between 1 and {max}, got {requested}")]
    BadSize { requested: usize, max: usize },
    #[error("all voting weights are zero")]
    ZeroWeight,
    #[error("expected one value per member ({expected}), got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("no members supplied")]
    NoMembers,
    #[error("target population is empty")]
    EmptyTarget,
    #[error("unsupported bundle format version {0}")]
    UnsupportedVersion(u32),
    #[error("bundle member dimension {found} does not match vectorizer dimension {expected}")]
    BundleDim { expected: usize, found: usize },
}

impl EnsembleError {
    /// Underlying logistic-regression error, if any, looking through member
    /// and ensemble wrappers.
    pub fn logreg_cause(&self) -> Option<&LogRegError> {
        match self {
            EnsembleError::LogReg(e) => Some(e),
            EnsembleError::MemberBuild { source, .. } => source.logreg_cause(),
            EnsembleError::EnsembleBuild { first, .. } => first.logreg_cause(),
            _ => None,
        }
    }
}

/// Everything needed to turn labeled documents into a member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MemberConfig {
    pub vectorizer: VectorizerConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub model: LinearModel,
    pub densities: ScoreDensityPair,
    /// Validation accuracy, used as the voting weight.
    pub weight: f64,
    /// Seed that produced this member (after any bootstrap retries).
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBundle {
    pub members: Vec<Member>,
    pub vectorizer: VectorizerConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
    pub master_seed: u64,
}

/// On-disk model file: the single-model path plus the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub single_model: Member,
    pub ensemble: EnsembleBundle,
    /// Digest of the run configuration that produced the bundle.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl ModelBundle {
    pub fn new(single_model: Member, ensemble: EnsembleBundle) -> Self {
        ModelBundle {
            format_version: BUNDLE_FORMAT_VERSION,
            single_model,
            ensemble,
            config_digest: None,
        }
    }

    /// Version and dimension checks for a bundle read from disk.
    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.format_version != BUNDLE_FORMAT_VERSION {
            return Err(EnsembleError::UnsupportedVersion(self.format_version));
        }
        let expected = self.ensemble.vectorizer.dim;
        for m in std::iter::once(&self.single_model).chain(&self.ensemble.members) {
            if m.model.dim() != expected {
                return Err(EnsembleError::BundleDim {
                    expected,
                    found: m.model.dim(),
                });
            }
        }
        if self.ensemble.members.is_empty() {
            return Err(EnsembleError::NoMembers);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    LabelCount,
    RawProbSum,
    CalibratedSum,
    EnsembleCalibrated,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::LabelCount,
        EstimatorKind::RawProbSum,
        EstimatorKind::CalibratedSum,
        EstimatorKind::EnsembleCalibrated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::LabelCount => "label_count",
            EstimatorKind::RawProbSum => "raw_prob_sum",
            EstimatorKind::CalibratedSum => "calibrated_sum",
            EstimatorKind::EnsembleCalibrated => "ensemble_calibrated",
        }
    }

    pub fn parse(s: &str) -> Option<EstimatorKind> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_ensemble(self) -> bool {
        self == EstimatorKind::EnsembleCalibrated
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn require_both_classes(data: &LabeledDataset) -> Result<(), EnsembleError> {
    if data.positive_count() == 0 || data.negative_count() == 0 {
        return Err(LogRegError::SingleClass.into());
    }
    Ok(())
}

fn split_is_usable(split: &Split) -> bool {
    split.parts().iter().all(|p| {
        p.positive_count() >= 2 && p.negative_count() >= 2
    })
}

fn accuracy_at_threshold(scores: &[f64], labels: &[Label]) -> f64 {
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= THRESHOLD) == y.is_positive())
        .count();
    correct as f64 / scores.len() as f64
}

/// Trains on `split.train`, weights by `split.validation`, fits densities on
/// `split.test`.
fn fit_member(split: &Split, cfg: &MemberConfig, seed: u64) -> Result<Member, EnsembleError> {
    let xs = vectorize_all(split.train.texts(), &cfg.vectorizer);
    let model = logreg::train(&xs, &split.train.labels(), &cfg.train)?;

    let val = vectorize_all(split.validation.texts(), &cfg.vectorizer);
    let weight = accuracy_at_threshold(&model.score_all(&val)?, &split.validation.labels());

    let test = vectorize_all(split.test.texts(), &cfg.vectorizer);
    let scores = model.score_all(&test)?;
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for (s, y) in scores.into_iter().zip(split.test.labels()) {
        if y.is_positive() {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    let densities = ScoreDensityPair::fit(&pos, &neg)?;
    Ok(Member {
        model,
        densities,
        weight,
        seed,
    })
}

fn validate_config(cfg: &MemberConfig) -> Result<(), EnsembleError> {
    cfg.vectorizer
        .validate()
        .map_err(|e| LogRegError::InvalidConfig(e.to_string()))?;
    cfg.train.validate()?;
    cfg.split.with_seed(0).validate()?;
    Ok(())
}

/// Bootstrap member. Resamples whose split leaves a part with fewer than two
/// documents of a class are retried with `seed + 1`, `seed + 2`, ...
pub fn build_member(
    data: &LabeledDataset,
    cfg: &MemberConfig,
    seed: u64,
) -> Result<Member, EnsembleError> {
    validate_config(cfg)?;
    require_both_classes(data)?;
    let wrap = |e: EnsembleError| EnsembleError::MemberBuild {
        seed,
        source: Box::new(e),
    };
    for attempt in 0..BOOTSTRAP_ATTEMPTS {
        let s = seed.wrapping_add(attempt);
        let boot = bootstrap_resample(data, s).map_err(|e| wrap(e.into()))?;
        let split = match stratified_split(&boot, &cfg.split.with_seed(s)) {
            Ok(split) if split_is_usable(&split) => split,
            Ok(_) | Err(CorpusError::InsufficientClass { .. }) => continue,
            Err(e) => return Err(wrap(e.into())),
        };
        return fit_member(&split, cfg, s).map_err(wrap);
    }
    Err(wrap(EnsembleError::DegenerateBootstrap {
        attempts: BOOTSTRAP_ATTEMPTS,
    }))
}

/// Member trained on the full data without resampling.
pub fn build_single_model(
    data: &LabeledDataset,
    cfg: &MemberConfig,
    master_seed: u64,
) -> Result<Member, EnsembleError> {
    validate_config(cfg)?;
    require_both_classes(data)?;
    let seed = master_seed ^ Stream::SingleModel as u64;
    let wrap = |e: EnsembleError| EnsembleError::MemberBuild {
        seed,
        source: Box::new(e),
    };
    let split = stratified_split(data, &cfg.split.with_seed(seed)).map_err(|e| wrap(e.into()))?;
    if !split_is_usable(&split) {
        return Err(wrap(EnsembleError::DegenerateBootstrap { attempts: 0 }));
    }
    fit_member(&split, cfg, seed).map_err(wrap)
}

pub fn member_seed(master_seed: u64, index: usize) -> u64 {
    master_seed ^ mix(index as u64)
}

/// Builds `m` bootstrap members in parallel; member `i` uses
/// `master_seed ^ mix(i)`. Output order is by index whatever the schedule.
pub fn build_ensemble(
    data: &LabeledDataset,
    cfg: &MemberConfig,
    master_seed: u64,
    m: usize,
    max_members: usize,
) -> Result<EnsembleBundle, EnsembleError> {
    if m == 0 || m > max_members {
        return Err(EnsembleError::BadSize {
            requested: m,
            max: max_members,
        });
    }
    validate_config(cfg)?;
    require_both_classes(data)?;
    let results: Vec<Result<Member, EnsembleError>> = (0..m)
        .into_par_iter()
        .map(|i| build_member(data, cfg, member_seed(master_seed, i)))
        .collect();

    let mut members = Vec::with_capacity(m);
    let mut failed = Vec::new();
    let mut first = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(member) => members.push(member),
            Err(e) => {
                failed.push(member_seed(master_seed, i));
                first.get_or_insert(e);
            }
        }
    }
    if let Some(first) = first {
        return Err(EnsembleError::EnsembleBuild {
            seeds: failed,
            first: Box::new(first),
        });
    }
    if members.iter().all(|m| m.weight == 0.0) {
        return Err(EnsembleError::ZeroWeight);
    }
    Ok(EnsembleBundle {
        members,
        vectorizer: cfg.vectorizer,
        train: cfg.train,
        split: cfg.split,
        master_seed,
    })
}

/// Weighted average of per-member probabilities. The result is clamped to
/// the range of the inputs so rounding never leaves the convex hull.
pub fn ensemble_probability(weights: &[f64], values: &[f64]) -> Result<f64, EnsembleError> {
    if weights.len() != values.len() {
        return Err(EnsembleError::ValueCount {
            expected: weights.len(),
            got: values.len(),
        });
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(EnsembleError::ZeroWeight);
    }
    let mut acc = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&w, &q) in weights.iter().zip(values) {
        acc += (w / total) * q;
        lo = lo.min(q);
        hi = hi.max(q);
    }
    Ok(acc.clamp(lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub kind: EstimatorKind,
    pub est_pos: f64,
    pub per_doc: Vec<f64>,
    /// One entry per member that calibrated (empty for uncalibrated kinds).
    pub prevalences: Vec<PrevalenceEstimate>,
}

/// Estimated number of positives in `target`.
///
/// `label_count`, `raw_prob_sum` and `calibrated_sum` use `members[0]`
/// alone; `ensemble_calibrated` calibrates every member against its own
/// target scores and averages by voting weight.
pub fn estimate_positives(
    members: &[Member],
    target: &[SparseVector],
    kind: EstimatorKind,
    method: CalibrationMethod,
) -> Result<Estimate, EnsembleError> {
    let first = members.first().ok_or(EnsembleError::NoMembers)?;
    if target.is_empty() {
        return Err(EnsembleError::EmptyTarget);
    }
    let (per_doc, prevalences) = match kind {
        EstimatorKind::LabelCount => {
            let scores = first.model.score_all(target)?;
            let labels = scores
                .iter()
                .map(|&s| if s >= THRESHOLD { 1.0 } else { 0.0 })
                .collect();
            (labels, Vec::new())
        }
        EstimatorKind::RawProbSum => (first.model.score_all(target)?, Vec::new()),
        EstimatorKind::CalibratedSum => {
            let scores = first.model.score_all(target)?;
            let c = calibrate_all(&scores, &first.densities, method)?;
            (c.probabilities, vec![c.estimate])
        }
        EstimatorKind::EnsembleCalibrated => {
            let calibrated: Vec<_> = members
                .par_iter()
                .map(|m| -> Result<_, EnsembleError> {
                    let scores = m.model.score_all(target)?;
                    Ok(calibrate_all(&scores, &m.densities, method)?)
                })
                .collect::<Result<_, _>>()?;
            let weights: Vec<f64> = members.iter().map(|m| m.weight).collect();
            let mut per_doc = Vec::with_capacity(target.len());
            let mut column = vec![0.0; members.len()];
            for j in 0..target.len() {
                for (slot, c) in column.iter_mut().zip(&calibrated) {
                    *slot = c.probabilities[j];
                }
                per_doc.push(ensemble_probability(&weights, &column)?);
            }
            (per_doc, calibrated.into_iter().map(|c| c.estimate).collect())
        }
    };
    Ok(Estimate {
        kind,
        est_pos: pairwise_sum(&per_doc),
        per_doc,
        prevalences,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::BetaParams;
    use crate::corpus::Document;
    use proptest::prelude::*;

    fn small_cfg() -> MemberConfig {
        MemberConfig {
            vectorizer: VectorizerConfig {
                dim: 1024,
                sublinear_tf: true,
            },
            // plain restarts keep the toy fits short of saturation
            train: TrainConfig {
                max_iters: 200,
                step_growth: 0.0,
                ..TrainConfig::default()
            },
            split: SplitFractions::default(),
        }
    }

    /// Positives say "alpha ...", negatives say "omega ...", each with some
    /// shared filler so score variance is non-zero.
    fn separable(n_pos: usize, n_neg: usize) -> LabeledDataset {
        let mut docs = Vec::new();
        for i in 0..n_pos {
            docs.push(Document::new(
                format!("p{i}"),
                format!("alpha marker filler{} filler{}", i % 7, i % 5),
                Some(Label::Positive),
            ));
        }
        for i in 0..n_neg {
            docs.push(Document::new(
                format!("n{i}"),
                format!("omega common filler{} filler{}", i % 7, i % 3),
                Some(Label::Negative),
            ));
        }
        LabeledDataset::new(docs).unwrap()
    }

    fn member(weight: f64) -> Member {
        Member {
            model: LinearModel::zeros(4),
            densities: ScoreDensityPair {
                f1: BetaParams::new(5.0, 1.0).unwrap(),
                f0: BetaParams::new(1.0, 5.0).unwrap(),
                n1: 10,
                n0: 10,
            },
            weight,
            seed: 0,
        }
    }

    #[test]
    fn weighted_vote_examples() {
        assert_eq!(ensemble_probability(&[0.9, 0.4, 0.7], &[0.3; 3]).unwrap(), 0.3);
        assert_eq!(ensemble_probability(&[1.0, 0.0], &[0.3, 0.9]).unwrap(), 0.3);
        assert!((ensemble_probability(&[1.0, 3.0], &[0.2, 0.6]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            ensemble_probability(&[0.0, 0.0], &[0.2, 0.6]),
            Err(EnsembleError::ZeroWeight)
        ));
        assert!(matches!(
            ensemble_probability(&[1.0], &[0.2, 0.6]),
            Err(EnsembleError::ValueCount { .. })
        ));
    }

    #[test]
    fn separable_member_has_perfect_weight() {
        let m = build_member(&separable(60, 140), &small_cfg(), 3).unwrap();
        assert_eq!(m.weight, 1.0);
        assert!(m.densities.f1.alpha / (m.densities.f1.alpha + m.densities.f1.beta) > 0.5);
    }

    #[test]
    fn member_build_is_deterministic() {
        let d = separable(40, 90);
        assert_eq!(
            build_member(&d, &small_cfg(), 11).unwrap(),
            build_member(&d, &small_cfg(), 11).unwrap()
        );
    }

    #[test]
    fn single_class_data_is_rejected() {
        let d = separable(30, 0);
        let err = build_single_model(&d, &small_cfg(), 1).unwrap_err();
        assert_eq!(err.logreg_cause(), Some(&LogRegError::SingleClass));
        let err = build_ensemble(&d, &small_cfg(), 1, 2, 10).unwrap_err();
        assert_eq!(err.logreg_cause(), Some(&LogRegError::SingleClass));
    }

    #[test]
    fn ensemble_size_is_bounded() {
        let d = separable(30, 60);
        assert!(matches!(
            build_ensemble(&d, &small_cfg(), 1, 0, 10),
            Err(EnsembleError::BadSize { .. })
        ));
        assert!(matches!(
            build_ensemble(&d, &small_cfg(), 1, 11, 10),
            Err(EnsembleError::BadSize { .. })
        ));
    }

    #[test]
    fn tiny_data_fails_after_retries() {
        // 3 documents per class can never give every part two of each
        let d = separable(3, 3);
        match build_member(&d, &small_cfg(), 5) {
            Err(EnsembleError::MemberBuild { seed: 5, source }) => {
                assert!(matches!(*source, EnsembleError::DegenerateBootstrap { attempts: 100 }));
            }
            other => panic!("unexpected {other:?}"),
        }
        match build_ensemble(&d, &small_cfg(), 9, 2, 10) {
            Err(EnsembleError::EnsembleBuild { seeds, .. }) => {
                assert_eq!(seeds, vec![member_seed(9, 0), member_seed(9, 1)]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn member_seeds_follow_mixing_function() {
        let d = separable(40, 80);
        let b = build_ensemble(&d, &small_cfg(), 77, 2, 10).unwrap();
        assert_eq!(b.members.len(), 2);
        // the stored seed is the first attempt that produced a usable split
        for (i, m) in b.members.iter().enumerate() {
            let base = member_seed(77, i);
            assert!(m.seed.wrapping_sub(base) < BOOTSTRAP_ATTEMPTS);
        }
    }

    #[test]
    fn label_count_zero_when_all_scores_low() {
        let mut m = member(1.0);
        m.model = LinearModel::new(vec![0.0; 4], -3.0).unwrap();
        let target = vec![SparseVector::empty(4); 5];
        let e = estimate_positives(&[m], &target, EstimatorKind::LabelCount, CalibrationMethod::EmMl).unwrap();
        assert_eq!(e.est_pos, 0.0);
        assert!(e.per_doc.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_member_ensemble_equals_calibrated_sum() {
        let d = separable(40, 90);
        let b = build_ensemble(&d, &small_cfg(), 5, 1, 10).unwrap();
        let target = vectorize_all(d.texts(), &small_cfg().vectorizer);
        for method in [CalibrationMethod::EmMl, CalibrationMethod::BayesPosteriorMean] {
            let single = estimate_positives(&b.members, &target, EstimatorKind::CalibratedSum, method).unwrap();
            let ens = estimate_positives(&b.members, &target, EstimatorKind::EnsembleCalibrated, method).unwrap();
            assert_eq!(single.per_doc, ens.per_doc);
            assert_eq!(single.est_pos, ens.est_pos);
        }
    }

    #[test]
    fn estimator_kind_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(EstimatorKind::parse(k.name()), Some(k));
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
        assert_eq!(EstimatorKind::parse("all"), None);
    }

    #[test]
    fn bundle_validation() {
        let ens = EnsembleBundle {
            members: vec![member(1.0)],
            vectorizer: VectorizerConfig { dim: 4, sublinear_tf: true },
            train: TrainConfig::default(),
            split: SplitFractions::default(),
            master_seed: 0,
        };
        let mut bundle = ModelBundle::new(member(1.0), ens);
        assert!(bundle.validate().is_ok());
        bundle.ensemble.vectorizer.dim = 8;
        assert!(matches!(bundle.validate(), Err(EnsembleError::BundleDim { .. })));
        bundle.format_version = 2;
        assert!(matches!(bundle.validate(), Err(EnsembleError::UnsupportedVersion(2))));
    }

    proptest! {
        #[test]
        fn weighted_vote_is_convex(entries in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..10)) {
            let (mut weights, values): (Vec<f64>, Vec<f64>) = entries.into_iter().unzip();
            weights[0] += 0.01;
            let v = ensemble_probability(&weights, &values).unwrap();
            let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= v && v <= hi);
        }
    }
}
