//! Seeded synthetic corpora with known ground truth.
//!
//! Documents are bags of tokens `t0 .. t{V-1}` drawn from a class-specific
//! multinomial. Both classes share a Zipf-shaped base distribution; the
//! positive class multiplies the weight of a fixed subset of "marker" tokens
//! by `exp(separation)`.

use rand::SeedableRng;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, Label, LabeledDataset, TruthRecord};
use crate::rng::{mix, Prng, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synth config: {field}: {message}")]
    Config { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> SynthError {
    SynthError::Config {
        field,
        message: message.into(),
    }
}

/// Declarative generator settings, as found in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthProfile {
    pub vocab_size: usize,
    pub doc_length_mean: f64,
    pub zipf_exponent: f64,
    /// Share of the vocabulary acting as positive-class markers.
    pub marker_fraction: f64,
    pub separation: f64,
    pub train_size: usize,
    pub train_prevalence: f64,
    pub target_size: usize,
    pub target_prevalence: f64,
    pub seed: u64,
}

impl Default for SynthProfile {
    /// 1669 training documents at 30% positive; rare target at 0.5%.
    fn default() -> Self {
        SynthProfile {
            vocab_size: 2000,
            doc_length_mean: 60.0,
            zipf_exponent: 1.0,
            marker_fraction: 0.05,
            separation: 1.5,
            train_size: 1669,
            train_prevalence: 0.30,
            target_size: 20_000,
            target_prevalence: 0.005,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Token weights for negatives (index 0) and positives (index 1).
    pub class_token_distributions: [Vec<f64>; 2],
    pub doc_length_mean: f64,
    pub train_size: usize,
    pub train_prevalence: f64,
    pub target_size: usize,
    pub target_prevalence: f64,
    pub seed: u64,
}

fn is_marker(token: usize, fraction: f64) -> bool {
    // fixed pseudo-random subset, independent of the corpus seed
    let u = (mix(token as u64 ^ 0x6d61_726b) >> 11) as f64 / (1u64 << 53) as f64;
    u < fraction
}

fn normalized(weights: Vec<f64>) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

impl SynthConfig {
    pub fn from_profile(p: &SynthProfile) -> Result<Self, SynthError> {
        if p.vocab_size < 2 {
            return Err(invalid("vocab_size", "must be at least 2"));
        }
        if !(p.zipf_exponent >= 0.0 && p.zipf_exponent.is_finite()) {
            return Err(invalid("zipf_exponent", "must be a finite non-negative number"));
        }
        if !(p.marker_fraction > 0.0 && p.marker_fraction <= 1.0) {
            return Err(invalid("marker_fraction", "must lie in (0, 1]"));
        }
        if !(p.separation >= 0.0 && p.separation.is_finite()) {
            return Err(invalid("separation", "must be a finite non-negative number"));
        }
        let base: Vec<f64> = (0..p.vocab_size)
            .map(|i| 1.0 / ((i + 1) as f64).powf(p.zipf_exponent))
            .collect();
        let tilt = p.separation.exp();
        let positive: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, &w)| if is_marker(i, p.marker_fraction) { w * tilt } else { w })
            .collect();
        let cfg = SynthConfig {
            class_token_distributions: [normalized(base), normalized(positive)],
            doc_length_mean: p.doc_length_mean,
            train_size: p.train_size,
            train_prevalence: p.train_prevalence,
            target_size: p.target_size,
            target_prevalence: p.target_prevalence,
            seed: p.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let [neg, pos] = &self.class_token_distributions;
        if neg.len() != pos.len() || neg.len() < 2 {
            return Err(invalid(
                "class_token_distributions",
                "both arrays must share a vocabulary of at least 2 tokens",
            ));
        }
        for w in [neg, pos] {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(invalid("class_token_distributions", "weights must be non-negative"));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(invalid(
                    "class_token_distributions",
                    format!("weights must sum to 1, got {total}"),
                ));
            }
        }
        if !(self.doc_length_mean > 0.0 && self.doc_length_mean.is_finite()) {
            return Err(invalid("doc_length_mean", "must be positive"));
        }
        if self.train_size == 0 {
            return Err(invalid("train_size", "must be at least 1"));
        }
        if self.target_size == 0 {
            return Err(invalid("target_size", "must be at least 1"));
        }
        if !(self.train_prevalence > 0.0 && self.train_prevalence < 1.0) {
            return Err(invalid(
                "train_prevalence",
                format!("must lie in (0, 1), got {}", self.train_prevalence),
            ));
        }
        if !(self.target_prevalence > 0.0 && self.target_prevalence < 1.0) {
            return Err(invalid(
                "target_prevalence",
                format!("must lie in (0, 1), got {}", self.target_prevalence),
            ));
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.class_token_distributions[0].len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: LabeledDataset,
    /// Target documents with their hidden labels; estimators only ever see
    /// [`SynthCorpus::target_documents`].
    pub target: LabeledDataset,
}

impl SynthCorpus {
    pub fn target_documents(&self) -> Vec<Document> {
        self.target.without_labels()
    }

    pub fn target_truth(&self) -> Vec<TruthRecord> {
        self.target
            .documents()
            .iter()
            .map(|d| TruthRecord {
                id: d.id.clone(),
                label: d.label.expect("target is labeled"),
            })
            .collect()
    }
}

struct Sampler {
    tokens: [WeightedAliasIndex<f64>; 2],
    length: Poisson<f64>,
}

impl Sampler {
    fn document(&self, rng: &mut Prng, prevalence: f64, id: String) -> Document {
        let label = if rng.random::<f64>() < prevalence {
            Label::Positive
        } else {
            Label::Negative
        };
        let len = (self.length.sample(rng) as usize).max(1);
        let dist = &self.tokens[label.as_int() as usize];
        let mut text = String::with_capacity(len * 6);
        for k in 0..len {
            if k > 0 {
                text.push(' ');
            }
            text.push('t');
            text.push_str(&dist.sample(rng).to_string());
        }
        Document::new(id, text, Some(label))
    }
}

fn partition(
    sampler: &Sampler,
    seed: u64,
    which: Stream,
    size: usize,
    prevalence: f64,
    prefix: &str,
) -> LabeledDataset {
    let docs = (0..size)
        .map(|i| {
            let mut rng = Prng::seed_from_u64(seed ^ which as u64 ^ mix(i as u64));
            sampler.document(&mut rng, prevalence, format!("{prefix}-{i:06}"))
        })
        .collect();
    LabeledDataset::new(docs).expect("generated documents are labeled")
}

/// Generates the training and target partitions. Every document draws from
/// its own stream derived from `(seed, partition, index)`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    cfg.validate()?;
    let alias = |w: &Vec<f64>| {
        WeightedAliasIndex::new(w.clone())
            .map_err(|e| invalid("class_token_distributions", e.to_string()))
    };
    let sampler = Sampler {
        tokens: [
            alias(&cfg.class_token_distributions[0])?,
            alias(&cfg.class_token_distributions[1])?,
        ],
        length: Poisson::new(cfg.doc_length_mean)
            .map_err(|e| invalid("doc_length_mean", e.to_string()))?,
    };
    Ok(SynthCorpus {
        train: partition(&sampler, cfg.seed, Stream::SynthTrain, cfg.train_size, cfg.train_prevalence, "train"),
        target: partition(&sampler, cfg.seed, Stream::SynthTarget, cfg.target_size, cfg.target_prevalence, "target"),
    })
}
