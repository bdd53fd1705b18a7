use gwhi_core::data::{HiCurve, HiSource, MinMaxOutputNormalizer, TimeAxis, ZScoreNormalizer};
use gwhi_core::features::SpecimenSeries;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::deepsad::{self, DeepSadHyperparams};
use crate::dtcvae::{self, DtcVaeHyperparams};
use crate::error::{Error, Result};
use crate::nn::{to_matrix, DenseNet};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    DeepSad,
    DtcVae,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DeepSad => "deepsad",
            ModelKind::DtcVae => "dtcvae",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "deepsad" => Ok(ModelKind::DeepSad),
            "dtcvae" => Ok(ModelKind::DtcVae),
            other => Err(Error::invalid(format!("unknown model `{other}` (expected deepsad or dtcvae)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelNet {
    DeepSad {
        hyperparams: DeepSadHyperparams,
        encoder: DenseNet,
        center: Vec<f64>,
    },
    DtcVae {
        hyperparams: DtcVaeHyperparams,
        rate: f64,
        encoder: DenseNet,
        heads: DenseNet,
        decoder: DenseNet,
        /// `±1`, applied to μ before min-max scaling.
        orientation: f64,
    },
}

/// A trained HI model together with everything needed to apply it to raw
/// (un-normalized) feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub seed: u64,
    pub train_specimens: Vec<u32>,
    pub time_axis: TimeAxis,
    pub zscore: ZScoreNormalizer,
    pub output: MinMaxOutputNormalizer,
    /// Mean loss per epoch; pretraining first for DeepSAD.
    pub pretrain_losses: Vec<f64>,
    pub losses: Vec<f64>,
    pub flags: Vec<String>,
    pub net: ModelNet,
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self.net {
            ModelNet::DeepSad { .. } => ModelKind::DeepSad,
            ModelNet::DtcVae { .. } => ModelKind::DtcVae,
        }
    }

    pub fn input_width(&self) -> usize {
        self.zscore.width()
    }

    /// Model output before min-max scaling for already normalized rows.
    pub fn raw_scores(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        match &self.net {
            ModelNet::DeepSad { encoder, center, .. } => deepsad::distances(encoder, center, x),
            ModelNet::DtcVae {
                encoder,
                heads,
                orientation,
                ..
            } => Ok(dtcvae::latent_means(encoder, heads, x)?
                .into_iter()
                .map(|m| orientation * m)
                .collect()),
        }
    }

    pub fn normalize_rows(&self, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
        let z = rows
            .iter()
            .map(|r| self.zscore.transform(r))
            .collect::<gwhi_core::Result<Vec<_>>>()?;
        to_matrix(&z)
    }

    /// HI curve of one specimen from raw feature rows.
    pub fn infer(&self, series: &SpecimenSeries, source: HiSource) -> Result<HiCurve> {
        if series.rows.first().is_some_and(|r| r.len() != self.input_width()) {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                actual: series.rows[0].len(),
            });
        }
        let x = self.normalize_rows(&series.rows)?;
        let values = self
            .raw_scores(&x)?
            .into_iter()
            .map(|v| self.output.transform(v))
            .collect();
        Ok(HiCurve::new(series.specimen_id, source, series.times(self.time_axis), values)?)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if v.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                v.format_version
            )));
        }
        serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }
}

/// Training rows of one specimen after Z-scoring.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub id: u32,
    pub times: Vec<f64>,
    pub x: Array2<f64>,
}

/// Fits the Z-score normalizer on all training rows and applies it.
pub(crate) fn prepare(train: &[SpecimenSeries], axis: TimeAxis) -> Result<(ZScoreNormalizer, Vec<Prepared>)> {
    if train.is_empty() {
        return Err(Error::invalid("no training specimens"));
    }
    let width = train[0].rows.first().map_or(0, |r| r.len());
    if width == 0 {
        return Err(Error::invalid("training features are empty"));
    }
    let all: Vec<&[f64]> = train.iter().flat_map(|s| s.rows.iter().map(|r| r.as_slice())).collect();
    let zscore = ZScoreNormalizer::fit_rows(&all)?;
    let prepared = train
        .iter()
        .map(|s| {
            if s.rows.len() != s.cycles.len() {
                return Err(Error::ShapeMismatch {
                    expected: s.cycles.len(),
                    actual: s.rows.len(),
                });
            }
            let rows = s
                .rows
                .iter()
                .map(|r| zscore.transform(r))
                .collect::<gwhi_core::Result<Vec<_>>>()?;
            Ok(Prepared {
                id: s.specimen_id,
                times: s.times(axis),
                x: to_matrix(&rows)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((zscore, prepared))
}

pub(crate) fn check_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged(format!("{what} became {v}")))
    }
}
