//! Run configuration: a versioned TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use gwhi_core::criteria::CriteriaConfig;
use gwhi_core::data::TimeAxis;
use gwhi_core::features::{FeatureConfig, SpMethod};
use gwhi_core::synthgen::SynthSpec;
use gwhi_models::deepsad::DeepSadHyperparams;
use gwhi_models::dtcvae::DtcVaeHyperparams;
use gwhi_models::ModelKind;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Dataset directory: a manifest with payloads, or a `synth.toml` that
    /// is regenerated in memory.
    pub dataset: PathBuf,
    pub out: PathBuf,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default = "default_sp")]
    pub sp_method: SpMethod,
    /// Excitation frequencies in kHz; all frequencies of the dataset when absent.
    #[serde(default)]
    pub frequencies: Option<Vec<u32>>,
    /// Test specimens of the folds to run; every fold when absent.
    #[serde(default)]
    pub folds: Option<Vec<u32>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub time_axis: TimeAxis,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    /// Multiplier applied to every training and pretraining epoch count.
    #[serde(default = "one")]
    pub epoch_scale: f64,
    /// Synthetic dataset written by the generate stage.
    #[serde(default)]
    pub generate: Option<GenerateConfig>,
    #[serde(default)]
    pub features: FeatureConfig,
    #[serde(default)]
    pub criteria: CriteriaConfig,
    /// Weight each frequency by the fitness of its training specimens only,
    /// instead of every specimen of the fold.
    #[serde(default)]
    pub fusion_weights_train_only: bool,
    #[serde(default)]
    pub deepsad: DeepSadHyperparams,
    #[serde(default)]
    pub dtcvae: DtcVaeHyperparams,
    #[serde(default)]
    pub hyperopt: HyperoptConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    /// Write every waveform to disk; otherwise only the spec and ground truth.
    #[serde(default)]
    pub materialize: bool,
    #[serde(default)]
    pub spec: SynthSpec,
}

/// Bayesian optimisation budget per (frequency, fold); 0 evaluations disables it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperoptConfig {
    pub n_init: usize,
    pub n_iter: usize,
    pub seed: u64,
}

impl HyperoptConfig {
    pub fn enabled(&self) -> bool {
        self.n_init + self.n_iter > 0
    }
}

fn default_model() -> ModelKind {
    ModelKind::DtcVae
}

fn default_sp() -> SpMethod {
    SpMethod::Fft
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn one() -> f64 {
    1.0
}

/// Command-line values that replace their config counterparts.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub sp_method: Option<SpMethod>,
    pub frequencies: Option<Vec<u32>>,
    pub folds: Option<Vec<u32>>,
    pub seeds: Option<Vec<u64>>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// A config with defaults for everything but the two paths.
    pub fn new(dataset: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            dataset: dataset.into(),
            out: out.into(),
            model: default_model(),
            sp_method: default_sp(),
            frequencies: None,
            folds: None,
            seeds: default_seeds(),
            time_axis: TimeAxis::default(),
            jobs: 0,
            epoch_scale: 1.0,
            generate: None,
            features: FeatureConfig::default(),
            criteria: CriteriaConfig::default(),
            fusion_weights_train_only: false,
            deepsad: DeepSadHyperparams::default(),
            dtcvae: DtcVaeHyperparams::default(),
            hyperopt: HyperoptConfig::default(),
        }
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::validation(format!("{}: {e}", origin.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        cfg.out = base.join(&cfg.out);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: Overrides) -> Result<()> {
        if let Some(v) = o.model {
            self.model = v;
        }
        if let Some(v) = o.sp_method {
            self.sp_method = v;
        }
        if o.frequencies.is_some() {
            self.frequencies = o.frequencies;
        }
        if o.folds.is_some() {
            self.folds = o.folds;
        }
        if let Some(v) = o.seeds {
            self.seeds = v;
        }
        if let Some(v) = o.jobs {
            self.jobs = v;
        }
        if let Some(v) = o.out {
            self.out = v;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA {
            return Err(Error::validation(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("at least one seed is required"));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::validation("seeds must be distinct"));
        }
        if matches!(&self.frequencies, Some(f) if f.is_empty()) {
            return Err(Error::validation("frequency subset is empty"));
        }
        if matches!(&self.folds, Some(f) if f.is_empty()) {
            return Err(Error::validation("fold subset is empty"));
        }
        if !(self.epoch_scale > 0.0 && self.epoch_scale.is_finite()) {
            return Err(Error::validation("epoch_scale must be positive"));
        }
        if self.hyperopt.enabled() && self.hyperopt.n_init < 2 {
            return Err(Error::validation("hyperopt.n_init must be at least 2"));
        }
        if let Some(g) = &self.generate {
            g.spec.validate()?;
        }
        self.deepsad.validate()?;
        self.dtcvae.validate()?;
        Ok(())
    }

    fn scale(&self, epochs: usize) -> usize {
        ((epochs as f64 * self.epoch_scale).ceil() as usize).max(1)
    }

    /// DeepSAD hyperparameters with the epoch scale applied.
    pub fn deepsad_effective(&self, hp: &DeepSadHyperparams) -> DeepSadHyperparams {
        DeepSadHyperparams {
            epochs: self.scale(hp.epochs),
            epochs_pretrain: self.scale(hp.epochs_pretrain),
            ..hp.clone()
        }
    }

    pub fn dtcvae_effective(&self, hp: &DtcVaeHyperparams) -> DtcVaeHyperparams {
        DtcVaeHyperparams {
            epochs: self.scale(hp.epochs),
            ..hp.clone()
        }
    }

    /// Label used in output paths, e.g. `dtcvae-fft`.
    pub fn run_label(&self) -> String {
        format!("{}-{}", self.model, self.sp_method)
    }
}
