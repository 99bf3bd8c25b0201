//! Estimating the number of rare positives in an unlabeled population with
//! prevalence-calibrated logistic-regression ensembles over hashed text
//! features.
//!
//! The pipeline: [`corpus`] ingestion and splitting, [`features`] hashing,
//! [`logreg`] training, [`calibration`] of scores to the target prevalence,
//! [`ensemble`] voting and the four positive-count estimators, [`metrics`]
//! for reports, and [`synth`] for corpora with known ground truth. [`cli`]
//! wires these into commands.

pub mod calibration;
pub mod cli;
pub mod corpus;
pub mod ensemble;
pub mod features;
pub mod logreg;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod synth;
