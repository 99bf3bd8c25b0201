//! Commands behind the `rare-quant` binary: `synth`, `train`, `estimate` and
//! `experiment`. Every output file is written to a temporary sibling and
//! renamed into place.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 model/data incompatibility, 1 anything else (I/O).

mod config;
mod experiment;

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{EnsembleSettings, ExperimentSettings, RunConfig};
pub use experiment::{
    run_experiment, run_seed, ExperimentReport, KindSummary, OrderingSummary, SeedRun,
};

use crate::calibration::{CalibrationError, CalibrationMethod};
use crate::corpus::{self, CorpusError, Label, LabeledDataset};
use crate::ensemble::{
    build_ensemble, build_single_model, estimate_positives, EnsembleError, EstimatorKind,
    ModelBundle,
};
use crate::features::vectorize_all;
use crate::logreg::LogRegError;
use crate::metrics::{self, MethodReport, MetricsError};
use crate::synth::{self, SynthConfig};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("incompatible model and data: {0}")]
    Incompatible(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Incompatible(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidSplit(m) => CliError::Config(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EnsembleError> for CliError {
    fn from(e: EnsembleError) -> Self {
        if let Some(cause) = e.logreg_cause() {
            return match cause {
                LogRegError::SingleClass => CliError::Data(format!("SingleClassError: {cause}")),
                LogRegError::DimMismatch { .. } => CliError::Incompatible(cause.to_string()),
                LogRegError::InvalidConfig(_) => CliError::Config(cause.to_string()),
                _ => CliError::Data(e.to_string()),
            };
        }
        match e {
            EnsembleError::BundleDim { .. } | EnsembleError::UnsupportedVersion(_) => {
                CliError::Incompatible(e.to_string())
            }
            EnsembleError::BadSize { .. } => CliError::Config(e.to_string()),
            EnsembleError::Corpus(c) => c.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<CalibrationError> for CliError {
    fn from(e: CalibrationError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`. Readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io)?;
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result.map_err(io)
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("report serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub const TRAIN_FILE: &str = "train.jsonl";
pub const TARGET_FILE: &str = "target.jsonl";
pub const TRUTH_FILE: &str = "target_truth.jsonl";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub train_path: PathBuf,
    pub target_path: PathBuf,
    pub truth_path: PathBuf,
    pub train_positives: usize,
    pub train_size: usize,
    pub target_positives: usize,
    pub target_size: usize,
}

/// Generates a corpus and writes the training file, the unlabeled target
/// file and the target ground-truth sidecar into `out_dir`.
pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<SynthSummary, CliError> {
    let synth_cfg = SynthConfig::from_profile(&cfg.synth)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let corpus = synth::generate(&synth_cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let summary = SynthSummary {
        train_path: out_dir.join(TRAIN_FILE),
        target_path: out_dir.join(TARGET_FILE),
        truth_path: out_dir.join(TRUTH_FILE),
        train_positives: corpus.train.positive_count(),
        train_size: corpus.train.len(),
        target_positives: corpus.target.positive_count(),
        target_size: corpus.target.len(),
    };
    write_atomic(
        &summary.train_path,
        corpus::documents_to_jsonl(corpus.train.documents()).as_bytes(),
    )?;
    write_atomic(
        &summary.target_path,
        corpus::documents_to_jsonl(&corpus.target_documents()).as_bytes(),
    )?;
    write_atomic(
        &summary.truth_path,
        corpus::truth_to_jsonl(&corpus.target_truth()).as_bytes(),
    )?;
    Ok(summary)
}

/// Builds the single-model member and the ensemble from labeled data.
pub fn train_bundle(data: &LabeledDataset, cfg: &RunConfig) -> Result<ModelBundle, CliError> {
    let member_cfg = cfg.member_config();
    let single = build_single_model(data, &member_cfg, cfg.master_seed)?;
    let ensemble = build_ensemble(
        data,
        &member_cfg,
        cfg.master_seed,
        cfg.ensemble.models,
        cfg.ensemble.max_models,
    )?;
    let mut bundle = ModelBundle::new(single, ensemble);
    bundle.config_digest = Some(cfg.digest());
    Ok(bundle)
}

pub fn cmd_train(corpus_path: &Path, cfg: &RunConfig, out: &Path) -> Result<ModelBundle, CliError> {
    let docs = corpus::load_documents(corpus_path)?;
    let data = LabeledDataset::new(docs)?;
    let bundle = train_bundle(&data, cfg)?;
    let json = serde_json::to_vec(&bundle).expect("bundle serializes");
    write_atomic(out, &json)?;
    Ok(bundle)
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read bundle {}: {e}", path.display())))?;
    let bundle: ModelBundle = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("bundle {}: {e}", path.display())))?;
    bundle.validate()?;
    Ok(bundle)
}

/// Machine-readable estimate report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format_version: u32,
    pub method: CalibrationMethod,
    pub n_target: u64,
    pub master_seed: u64,
    pub member_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub rows: Vec<MethodReport>,
}

/// Orders `truth` to match the target documents by id.
fn align_truth(target_ids: &[&str], truth: Vec<corpus::TruthRecord>) -> Result<Vec<Label>, CliError> {
    let by_id: HashMap<String, Label> = truth.into_iter().map(|r| (r.id, r.label)).collect();
    target_ids
        .iter()
        .map(|id| {
            by_id
                .get(*id)
                .copied()
                .ok_or_else(|| CliError::Data(format!("no ground truth for target document {id:?}")))
        })
        .collect()
}

/// Runs the requested estimators on already-loaded target documents.
pub fn estimate_report(
    bundle: &ModelBundle,
    target: &[corpus::Document],
    kinds: &[EstimatorKind],
    method: CalibrationMethod,
    truth: Option<&[Label]>,
) -> Result<Report, CliError> {
    if target.is_empty() {
        return Err(CliError::Data("target corpus is empty".into()));
    }
    let vectors = vectorize_all(target.iter().map(|d| d.text.as_str()), &bundle.ensemble.vectorizer);
    let single = std::slice::from_ref(&bundle.single_model);
    let estimates = kinds
        .iter()
        .map(|&kind| {
            let members = if kind.uses_ensemble() {
                &bundle.ensemble.members[..]
            } else {
                single
            };
            estimate_positives(members, &vectors, kind, method)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Report {
        format_version: REPORT_FORMAT_VERSION,
        method,
        n_target: target.len() as u64,
        master_seed: bundle.ensemble.master_seed,
        member_seeds: bundle.ensemble.members.iter().map(|m| m.seed).collect(),
        config_digest: bundle.config_digest.clone(),
        rows: metrics::build_report(&estimates, truth)?,
    })
}

pub fn cmd_estimate(
    bundle_path: &Path,
    target_path: &Path,
    kinds: &[EstimatorKind],
    method: CalibrationMethod,
    truth_path: Option<&Path>,
    out: &Path,
) -> Result<Report, CliError> {
    let bundle = load_bundle(bundle_path)?;
    let target = corpus::load_documents(target_path)?;
    let truth = match truth_path {
        Some(p) => {
            let ids: Vec<&str> = target.iter().map(|d| d.id.as_str()).collect();
            Some(align_truth(&ids, corpus::load_truth(p)?)?)
        }
        None => None,
    };
    let report = estimate_report(&bundle, &target, kinds, method, truth.as_deref())?;
    write_atomic(out, &to_json(&report))?;
    if report.rows.iter().any(|r| r.bias.is_some()) {
        write_atomic(&out.with_extension("bias.csv"), metrics::bias_series_csv(&report.rows).as_bytes())?;
    }
    Ok(report)
}

pub const EXPERIMENT_REPORT: &str = "report.json";
pub const EXPERIMENT_BIAS: &str = "bias.csv";

/// Runs the full pipeline for every configured seed and writes the report
/// and the median bias series into `out_dir`.
pub fn cmd_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<ExperimentReport, CliError> {
    let report = run_experiment(cfg)?;
    write_atomic(&out_dir.join(EXPERIMENT_REPORT), &to_json(&report))?;
    write_atomic(&out_dir.join(EXPERIMENT_BIAS), report.bias_series_csv().as_bytes())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Data("x".into()).exit_code(), 3);
        assert_eq!(CliError::Incompatible("x".into()).exit_code(), 4);
        let single: CliError = EnsembleError::from(LogRegError::SingleClass).into();
        assert_eq!(single.exit_code(), 3);
        assert!(single.to_string().contains("SingleClassError"));
        let dim: CliError = EnsembleError::BundleDim { expected: 4, found: 8 }.into();
        assert_eq!(dim.exit_code(), 4);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(leftovers.len(), 1);
    }

    #[test]
    fn truth_alignment_by_id() {
        let truth = vec![
            corpus::TruthRecord { id: "b".into(), label: Label::Positive },
            corpus::TruthRecord { id: "a".into(), label: Label::Negative },
        ];
        assert_eq!(
            align_truth(&["a", "b"], truth.clone()).unwrap(),
            vec![Label::Negative, Label::Positive]
        );
        assert!(matches!(align_truth(&["c"], truth), Err(CliError::Data(_))));
    }
}
