use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::calibration::CalibrationMethod;
use crate::corpus::SplitFractions;
use crate::ensemble::{MemberConfig, DEFAULT_MAX_MEMBERS};
use crate::features::VectorizerConfig;
use crate::logreg::TrainConfig;
use crate::synth::{SynthConfig, SynthProfile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSettings {
    pub models: usize,
    pub max_models: usize,
    pub method: CalibrationMethod,
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings {
            models: DEFAULT_MAX_MEMBERS,
            max_models: DEFAULT_MAX_MEMBERS,
            method: CalibrationMethod::BayesPosteriorMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSettings {
    /// Each seed drives both corpus generation and model building.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings { seeds: vec![0] }
    }
}

/// Every setting of a run in one declarative file. Unknown keys are errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub master_seed: u64,
    pub vectorizer: VectorizerConfig,
    pub train: TrainConfig,
    pub split: SplitFractions,
    pub synth: SynthProfile,
    pub ensemble: EnsembleSettings,
    pub experiment: ExperimentSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let config = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.vectorizer.validate() {
            return config(format!("vectorizer.dim: {e}"));
        }
        if let Err(e) = self.train.validate() {
            return config(format!("train: {e}"));
        }
        if let Err(e) = self.split.with_seed(0).validate() {
            return config(format!("split: {e}"));
        }
        if let Err(e) = SynthConfig::from_profile(&self.synth) {
            let crate::synth::SynthError::Config { field, message } = e;
            return config(format!("synth.{field}: {message}"));
        }
        let ens = &self.ensemble;
        if ens.max_models == 0 {
            return config("ensemble.max_models must be at least 1".into());
        }
        if ens.models == 0 || ens.models > ens.max_models {
            return config(format!(
                "ensemble.models must lie in 1..={}, got {}",
                ens.max_models, ens.models
            ));
        }
        if self.experiment.seeds.is_empty() {
            return config("experiment.seeds must not be empty".into());
        }
        Ok(())
    }

    pub fn member_config(&self) -> MemberConfig {
        MemberConfig {
            vectorizer: self.vectorizer,
            train: self.train,
            split: self.split,
        }
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn digest(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.synth.train_size, 1669);
        assert_eq!(cfg.ensemble.models, 10);
        assert_eq!(cfg.split.train_fraction, 0.7);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("colour = 1"), Err(CliError::Config(_))));
        assert!(matches!(
            RunConfig::from_toml("[train]\nlearning_rate = 0.1"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn bad_prevalence_names_field() {
        let err = RunConfig::from_toml("[synth]\ntrain_prevalence = 1.5").unwrap_err();
        assert!(err.to_string().contains("synth.train_prevalence"), "{err}");
    }

    #[test]
    fn method_accepts_short_names() {
        let cfg = RunConfig::from_toml("[ensemble]\nmethod = \"em\"").unwrap();
        assert_eq!(cfg.ensemble.method, CalibrationMethod::EmMl);
        let cfg = RunConfig::from_toml("[ensemble]\nmethod = \"bayes_posterior_mean\"").unwrap();
        assert_eq!(cfg.ensemble.method, CalibrationMethod::BayesPosteriorMean);
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.master_seed = 1;
        assert_eq!(a.digest(), RunConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn ensemble_bounds_checked() {
        assert!(RunConfig::from_toml("[ensemble]\nmodels = 11").is_err());
        assert!(RunConfig::from_toml("[ensemble]\nmodels = 0").is_err());
        assert!(RunConfig::from_toml("[ensemble]\nmodels = 12\nmax_models = 12").is_ok());
    }
}
