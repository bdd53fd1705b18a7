use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signal-processing method a feature is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpMethod {
    Raw,
    Fft,
    Ht,
    Emd,
    Stft,
}

impl SpMethod {
    pub const ALL: [SpMethod; 5] = [
        SpMethod::Raw,
        SpMethod::Fft,
        SpMethod::Ht,
        SpMethod::Emd,
        SpMethod::Stft,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SpMethod::Raw => "raw",
            SpMethod::Fft => "fft",
            SpMethod::Ht => "ht",
            SpMethod::Emd => "emd",
            SpMethod::Stft => "stft",
        }
    }
}

impl fmt::Display for SpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpMethod::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::invalid(format!("unknown signal-processing method `{s}`")))
    }
}

pub const TIME_FEATURE_NAMES: [&str; 19] = [
    "mean",
    "std",
    "root_amplitude",
    "rms",
    "rss",
    "peak",
    "skewness",
    "kurtosis",
    "crest_factor",
    "clearance_factor",
    "shape_factor",
    "impulse_factor",
    "max_min",
    "cm3",
    "cm4",
    "cm5",
    "cm6",
    "fm4",
    "median",
];

pub const FREQ_FEATURE_COUNT: usize = 14;
pub const TF_STATS: [&str; 4] = ["mean", "std", "skewness", "kurtosis"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureInfo {
    /// 1-based, dense.
    pub id: u16,
    pub method: SpMethod,
    pub name: String,
}

/// Maps feature ids to their method and name. Ids 1..=71 are fixed; the
/// STFT block spans `72..=71 + 4W` for `W` spectrogram windows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureRegistry {
    stft_windows: usize,
    features: Vec<FeatureInfo>,
}

impl FeatureRegistry {
    pub fn new(stft_windows: usize) -> Self {
        let mut features = Vec::with_capacity(71 + 4 * stft_windows);
        let mut push = |method, name: String| {
            let id = features.len() as u16 + 1;
            features.push(FeatureInfo { id, method, name });
        };
        for n in TIME_FEATURE_NAMES {
            push(SpMethod::Raw, n.to_string());
        }
        for k in 1..=FREQ_FEATURE_COUNT {
            push(SpMethod::Fft, format!("s{k}"));
        }
        for n in TIME_FEATURE_NAMES {
            push(SpMethod::Ht, format!("env_{n}"));
        }
        for n in TIME_FEATURE_NAMES {
            push(SpMethod::Emd, format!("imf_{n}"));
        }
        for w in 1..=stft_windows {
            for s in TF_STATS {
                push(SpMethod::Stft, format!("w{w}_{s}"));
            }
        }
        Self {
            stft_windows,
            features,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn stft_windows(&self) -> usize {
        self.stft_windows
    }

    pub fn features(&self) -> &[FeatureInfo] {
        &self.features
    }

    pub fn info(&self, id: u16) -> Option<&FeatureInfo> {
        (id as usize)
            .checked_sub(1)
            .and_then(|i| self.features.get(i))
    }

    /// Zero-based column range of a method's block.
    pub fn method_range(&self, method: SpMethod) -> Range<usize> {
        match method {
            SpMethod::Raw => 0..19,
            SpMethod::Fft => 19..33,
            SpMethod::Ht => 33..52,
            SpMethod::Emd => 52..71,
            SpMethod::Stft => 71..71 + 4 * self.stft_windows,
        }
    }

    pub fn id_by_name(&self, name: &str) -> Option<u16> {
        self.features.iter().find(|f| f.name == name).map(|f| f.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_layout() {
        let r = FeatureRegistry::new(15);
        assert_eq!(r.len(), 131);
        assert_eq!(r.info(1).unwrap().name, "mean");
        assert_eq!(r.info(4).unwrap().name, "rms");
        assert_eq!(r.info(20).unwrap().name, "s1");
        assert_eq!(r.info(34).unwrap().method, SpMethod::Ht);
        assert_eq!(r.info(53).unwrap().method, SpMethod::Emd);
        assert_eq!(r.info(72).unwrap().name, "w1_mean");
        assert_eq!(r.info(131).unwrap().name, "w15_kurtosis");
        assert!(r.info(132).is_none());
        assert!(r.info(0).is_none());
        assert_eq!(r.method_range(SpMethod::Stft), 71..131);
    }

    #[test]
    fn full_layout_has_139_slots() {
        let r = FeatureRegistry::new(17);
        assert_eq!(r.len(), 139);
        let names: HashSet<_> = r.features().iter().map(|f| &f.name).collect();
        assert_eq!(names.len(), 139);
        for (i, f) in r.features().iter().enumerate() {
            assert_eq!(f.id as usize, i + 1);
            assert!(r.method_range(f.method).contains(&i));
        }
    }

    #[test]
    fn method_round_trip() {
        for m in SpMethod::ALL {
            assert_eq!(m.as_str().parse::<SpMethod>().unwrap(), m);
        }
        assert!("wavelet".parse::<SpMethod>().is_err());
    }
}
