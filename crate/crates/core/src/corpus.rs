//! Documents, labeled datasets, line-delimited ingestion, stratified splits
//! and bootstrap resampling.

use std::collections::HashMap;
use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::rng::{stream, Stream};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate document id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("document {id:?} has no label")]
    Unlabeled { id: String },
    #[error("class {class} has {count} document(s); at least 2 are required")]
    InsufficientClass { class: Label, count: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split: {0}")]
    InvalidSplit(String),
}

/// Binary class of a document. Serialized as the integer 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Label> {
        match v {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            Label::Negative => 0,
            Label::Positive => 1,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Negative => f.write_str("negative (0)"),
            Label::Positive => f.write_str("positive (1)"),
        }
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_int())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        Label::from_int(v)
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<Label>) -> Self {
        Document {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// A collection of documents that all carry a label.
///
/// Ids are unique in datasets built from files; a bootstrap resample is a
/// multiset and may repeat them.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    documents: Vec<Document>,
    positive_count: usize,
    negative_count: usize,
}

impl LabeledDataset {
    pub fn new(documents: Vec<Document>) -> Result<Self, CorpusError> {
        let mut positive_count = 0;
        for doc in &documents {
            match doc.label {
                Some(Label::Positive) => positive_count += 1,
                Some(Label::Negative) => {}
                None => {
                    return Err(CorpusError::Unlabeled { id: doc.id.clone() });
                }
            }
        }
        let negative_count = documents.len() - positive_count;
        Ok(LabeledDataset {
            documents,
            positive_count,
            negative_count,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn positive_count(&self) -> usize {
        self.positive_count
    }

    pub fn negative_count(&self) -> usize {
        self.negative_count
    }

    pub fn count(&self, class: Label) -> usize {
        match class {
            Label::Positive => self.positive_count,
            Label::Negative => self.negative_count,
        }
    }

    pub fn labels(&self) -> Vec<Label> {
        self.documents
            .iter()
            .map(|d| d.label.expect("labeled dataset"))
            .collect()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.documents.iter().map(|d| d.text.as_str())
    }

    /// Copies of the documents with labels removed.
    pub fn without_labels(&self) -> Vec<Document> {
        self.documents
            .iter()
            .map(|d| Document::new(d.id.clone(), d.text.clone(), None))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            validation_fraction_of_train: 0.1,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CorpusError::InvalidSplit(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.validation_fraction_of_train >= 0.0 && self.validation_fraction_of_train < 1.0) {
            return Err(CorpusError::InvalidSplit(format!(
                "validation_fraction_of_train must lie in [0, 1), got {}",
                self.validation_fraction_of_train
            )));
        }
        Ok(())
    }
}

/// Split fractions without a seed, as carried in configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train_fraction: f64,
    pub validation_fraction_of_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        let d = SplitSpec::default();
        SplitFractions {
            train_fraction: d.train_fraction,
            validation_fraction_of_train: d.validation_fraction_of_train,
        }
    }
}

impl SplitFractions {
    pub fn with_seed(self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            validation_fraction_of_train: self.validation_fraction_of_train,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub validation: LabeledDataset,
}

impl Split {
    pub fn parts(&self) -> [&LabeledDataset; 3] {
        [&self.train, &self.test, &self.validation]
    }
}

#[derive(Deserialize)]
struct Record {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<Label>,
}

/// Reads one JSON record per line. Blank lines are skipped; unknown fields
/// are ignored.
pub fn load_documents(path: &Path) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_documents(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_documents<R: BufRead>(reader: R) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: String::new(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(CorpusError::Parse {
                line: line_no,
                message: "empty document id".into(),
            });
        }
        if !seen.insert(rec.id.clone()) {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: rec.id,
            });
        }
        docs.push(Document::new(rec.id, rec.text, rec.label));
    }
    Ok(docs)
}

/// One JSON record per line, in order.
pub fn documents_to_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc).expect("document serializes"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub label: Label,
}

/// Reads a ground-truth sidecar: one `{"id": .., "label": 0|1}` per line.
pub fn load_truth(path: &Path) -> Result<Vec<TruthRecord>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TruthRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn truth_to_jsonl(records: &[TruthRecord]) -> String {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("truth record serializes"));
        out.push('\n');
    }
    out
}

fn rounded(count: usize, fraction: f64) -> usize {
    ((count as f64 * fraction + 0.5).floor() as usize).min(count)
}

/// Stratified three-way split.
///
/// Within each class, documents sharing an id form one unit, so copies of a
/// document produced by bootstrapping never straddle two parts. Units are
/// shuffled with the split stream of `spec.seed`; the first
/// `floor(units * (1 - train_fraction) + 0.5)` go to test, and of the rest the
/// first `floor(units * validation_fraction + 0.5)` go to validation. Each
/// part keeps the input order of its documents.
pub fn stratified_split(data: &LabeledDataset, spec: &SplitSpec) -> Result<Split, CorpusError> {
    spec.validate()?;
    for class in [Label::Positive, Label::Negative] {
        let count = data.count(class);
        if count < 2 {
            return Err(CorpusError::InsufficientClass { class, count });
        }
    }

    let mut rng = stream(spec.seed, Stream::Split);
    // 0 = train, 1 = test, 2 = validation
    let mut assignment = vec![0u8; data.len()];
    for class in [Label::Positive, Label::Negative] {
        let mut unit_of: HashMap<&str, usize> = HashMap::new();
        let mut units: Vec<Vec<usize>> = Vec::new();
        for (i, doc) in data.documents().iter().enumerate() {
            if doc.label != Some(class) {
                continue;
            }
            let next = units.len();
            let u = *unit_of.entry(doc.id.as_str()).or_insert(next);
            if u == next {
                units.push(Vec::new());
            }
            units[u].push(i);
        }
        let mut order: Vec<usize> = (0..units.len()).collect();
        order.shuffle(&mut rng);

        let n_test = rounded(units.len(), 1.0 - spec.train_fraction);
        let n_val = rounded(units.len() - n_test, spec.validation_fraction_of_train);
        for (rank, &u) in order.iter().enumerate() {
            let part = if rank < n_test {
                1
            } else if rank < n_test + n_val {
                2
            } else {
                0
            };
            for &i in &units[u] {
                assignment[i] = part;
            }
        }
    }

    let mut parts: [Vec<Document>; 3] = Default::default();
    for (doc, &part) in data.documents().iter().zip(&assignment) {
        parts[part as usize].push(doc.clone());
    }
    let [train, test, validation] = parts;
    Ok(Split {
        train: LabeledDataset::new(train)?,
        test: LabeledDataset::new(test)?,
        validation: LabeledDataset::new(validation)?,
    })
}

/// Draws `data.len()` documents uniformly with replacement.
pub fn bootstrap_resample(data: &LabeledDataset, seed: u64) -> Result<LabeledDataset, CorpusError> {
    if data.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut rng = stream(seed, Stream::Bootstrap);
    let n = data.len();
    let docs = (0..n)
        .map(|_| data.documents()[rng.random_range(0..n)].clone())
        .collect();
    LabeledDataset::new(docs)
}
