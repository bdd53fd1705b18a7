//! Dataset schema, fold protocol and normalization contracts.

use std::fmt;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Excitation frequencies (kHz) used in the guided-wave campaign.
pub const EXCITATION_FREQS_KHZ: [u32; 6] = [50, 100, 125, 150, 200, 250];

/// Number of transducers; every ordered pair of distinct ones is a path.
pub const TRANSDUCERS: u8 = 8;

/// `8 x 7` actuator-sensor paths.
pub const MAX_PATHS: usize = 56;

/// Default number of samples per recorded waveform.
pub const DEFAULT_SAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathId {
    pub actuator: u8,
    pub sensor: u8,
}

impl PathId {
    pub fn new(actuator: u8, sensor: u8) -> Result<Self> {
        if actuator == sensor {
            return Err(Error::invalid(format!(
                "path actuator and sensor must differ (got {actuator})"
            )));
        }
        for id in [actuator, sensor] {
            if !(1..=TRANSDUCERS).contains(&id) {
                return Err(Error::invalid(format!(
                    "transducer id {id} outside 1..={TRANSDUCERS}"
                )));
            }
        }
        Ok(Self { actuator, sensor })
    }

    /// All 56 paths ordered by actuator, then sensor.
    pub fn all() -> Vec<PathId> {
        let mut out = Vec::with_capacity(MAX_PATHS);
        for a in 1..=TRANSDUCERS {
            for s in 1..=TRANSDUCERS {
                if a != s {
                    out.push(PathId {
                        actuator: a,
                        sensor: s,
                    });
                }
            }
        }
        out
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.actuator, self.sensor)
    }
}

pub fn validate_frequency(freq_khz: u32) -> Result<()> {
    if EXCITATION_FREQS_KHZ.contains(&freq_khz) {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "excitation frequency {freq_khz} kHz not in {EXCITATION_FREQS_KHZ:?}"
        )))
    }
}

/// One raw time-domain measurement of one path at one frequency and timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformRecord {
    pub specimen_id: u32,
    pub freq_khz: u32,
    pub path: PathId,
    pub timestep: u32,
    pub cycles: u64,
    pub samples: Vec<f64>,
}

impl WaveformRecord {
    pub fn new(
        specimen_id: u32,
        freq_khz: u32,
        path: PathId,
        timestep: u32,
        cycles: u64,
        samples: Vec<f64>,
    ) -> Result<Self> {
        validate_frequency(freq_khz)?;
        if timestep < 1 {
            return Err(Error::invalid("timestep index starts at 1"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("waveform has no samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "waveform specimen {specimen_id} {freq_khz} kHz path {path} t{timestep}"
            )));
        }
        Ok(Self {
            specimen_id,
            freq_khz,
            path,
            timestep,
            cycles,
            samples,
        })
    }
}

/// Checks that cycle counts are strictly increasing with timestep.
pub fn validate_cycles(cycles: &[u64]) -> Result<()> {
    if let Some(w) = cycles.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "cycle counts must strictly increase ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// Which quantity plays the role of measurement time in the criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeAxis {
    #[default]
    Cycles,
    Timestep,
}

impl TimeAxis {
    /// Time values for a specimen given its cycle counts (timestep `j` is index `j-1` + 1).
    pub fn times(self, cycles: &[u64]) -> Vec<f64> {
        match self {
            TimeAxis::Cycles => cycles.iter().map(|&c| c as f64).collect(),
            TimeAxis::Timestep => (1..=cycles.len()).map(|j| j as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub test: u32,
    pub train: Vec<u32>,
}

/// Leave-one-specimen-out cross-validation plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    pub fn fold_for_test(&self, test: u32) -> Option<&Fold> {
        self.folds.iter().find(|f| f.test == test)
    }
}

pub fn build_folds(specimen_ids: &[u32]) -> Result<FoldPlan> {
    let mut ids = specimen_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-out folds need at least 2 distinct specimens, got {}",
            ids.len()
        )));
    }
    let folds = ids
        .iter()
        .map(|&test| Fold {
            test,
            train: ids.iter().copied().filter(|&id| id != test).collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Per-feature Z-score statistics fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreNormalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Columns whose training variance was zero; their `std` is 1.
    pub degenerate: Vec<bool>,
}

impl ZScoreNormalizer {
    /// Fits on the rows where `train_mask` is true, using the sample (n-1) std.
    pub fn fit(rows: &[Vec<f64>], train_mask: &[bool]) -> Result<Self> {
        if rows.len() != train_mask.len() {
            return Err(Error::ShapeMismatch {
                expected: rows.len(),
                actual: train_mask.len(),
            });
        }
        let train: Vec<&[f64]> = rows
            .iter()
            .zip(train_mask)
            .filter(|(_, &m)| m)
            .map(|(r, _)| r.as_slice())
            .collect();
        Self::fit_rows(&train)
    }

    pub fn fit_rows(train: &[&[f64]]) -> Result<Self> {
        if train.len() < 2 {
            return Err(Error::invalid(format!(
                "z-score fit needs at least 2 training rows, got {}",
                train.len()
            )));
        }
        let width = train[0].len();
        if let Some(r) = train.iter().find(|r| r.len() != width) {
            return Err(Error::ShapeMismatch {
                expected: width,
                actual: r.len(),
            });
        }
        let n = train.len() as f64;
        let mut mean = vec![0.0; width];
        for r in train {
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in train {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let mut degenerate = vec![false; width];
        let std = var
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let sd = (s / (n - 1.0)).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    degenerate[j] = true;
                    1.0
                }
            })
            .collect();
        let flagged = degenerate.iter().filter(|&&d| d).count();
        if flagged > 0 {
            warn!("{flagged} zero-variance training column(s); std replaced by 1");
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("z-score training rows".into()));
        }
        Ok(Self {
            mean,
            std,
            degenerate,
        })
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn inverse(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.width() {
            return Err(Error::ShapeMismatch {
                expected: self.width(),
                actual: row.len(),
            });
        }
        Ok(())
    }
}

/// Scalar min-max scaling of model outputs, fitted on training HI values.
///
/// Values from test specimens may land outside `[0, 1]`; they are never clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxOutputNormalizer {
    pub min: f64,
    pub max: f64,
}

impl MinMaxOutputNormalizer {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("min-max fit on empty values"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("min-max training values".into()));
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Self { min, max })
    }

    pub fn transform(&self, v: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            (v - self.min) / range
        } else {
            v - self.min
        }
    }
}

/// Origin of an HI curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HiSource {
    Frequency(u32),
    Fused,
}

impl fmt::Display for HiSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HiSource::Frequency(k) => write!(f, "{k}"),
            HiSource::Fused => f.write_str("fused"),
        }
    }
}

impl FromStr for HiSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "fused" {
            return Ok(HiSource::Fused);
        }
        s.parse::<u32>()
            .map(HiSource::Frequency)
            .map_err(|_| Error::invalid(format!("unknown HI source {s:?}")))
    }
}

/// Health-indicator time series of one specimen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiCurve {
    pub specimen_id: u32,
    pub source: HiSource,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl HiCurve {
    pub fn new(specimen_id: u32, source: HiSource, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::ShapeMismatch {
                expected: times.len(),
                actual: values.len(),
            });
        }
        if times.len() < 2 {
            return Err(Error::invalid(format!(
                "HI curve of specimen {specimen_id} needs at least 2 points"
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(format!(
                "HI curve of specimen {specimen_id}: times must strictly increase"
            )));
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("HI curve of specimen {specimen_id}")));
        }
        Ok(Self {
            specimen_id,
            source,
            times,
            values,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Times rescaled to the normalized lifetime `[0, 1]`.
    pub fn lifetime_fractions(&self) -> Vec<f64> {
        let t0 = self.times[0];
        let span = self.times[self.times.len() - 1] - t0;
        self.times.iter().map(|t| (t - t0) / span).collect()
    }

    /// Linear interpolation of the curve at a lifetime fraction in `[0, 1]`.
    pub fn value_at_fraction(&self, fraction: f64) -> f64 {
        let fr = self.lifetime_fractions();
        interpolate(&fr, &self.values, fraction)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.specimen_id, self.source, self.times.clone(), values)
    }

    pub fn with_source(mut self, source: HiSource) -> Self {
        self.source = source;
        self
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.with_values(self.values.iter().map(|&v| f(v)).collect())
    }
}

/// Piecewise-linear interpolation on ascending `xs`, clamped at the ends.
pub fn interpolate(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    let k = xs.partition_point(|&v| v <= x);
    let (x0, x1) = (xs[k - 1], xs[k]);
    let w = (x - x0) / (x1 - x0);
    ys[k - 1] * (1.0 - w) + ys[k] * w
}

/// Curves as delimited text with header `specimen,source,time,value`.
pub fn curves_to_csv(curves: &[HiCurve]) -> String {
    let mut out = String::from("specimen,source,time,value\n");
    for c in curves {
        for (t, v) in c.times.iter().zip(&c.values) {
            out.push_str(&format!("{},{},{t:?},{v:?}\n", c.specimen_id, c.source));
        }
    }
    out
}

/// Inverse of [`curves_to_csv`]; consecutive rows with the same specimen and
/// source form one curve.
pub fn curves_from_csv(text: &str) -> Result<Vec<HiCurve>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("specimen,source,time,value") {
        return Err(Error::invalid("curve table header must be `specimen,source,time,value`"));
    }
    let mut groups: Vec<(u32, HiSource, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::invalid(format!("curve table line {}: malformed row `{line}`", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        let id: u32 = f[0].trim().parse().map_err(|_| bad())?;
        let src: HiSource = f[1].trim().parse()?;
        let t: f64 = f[2].trim().parse().map_err(|_| bad())?;
        let v: f64 = f[3].trim().parse().map_err(|_| bad())?;
        match groups.last_mut() {
            Some(g) if g.0 == id && g.1 == src => {
                g.2.push(t);
                g.3.push(v);
            }
            _ => groups.push((id, src, vec![t], vec![v])),
        }
    }
    groups
        .into_iter()
        .map(|(id, src, t, v)| HiCurve::new(id, src, t, v))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_table_round_trip() {
        let curves = vec![
            HiCurve::new(1, HiSource::Frequency(50), vec![0.0, 0.1, 5000.0], vec![0.1, 1.0 / 3.0, -2.5]).unwrap(),
            HiCurve::new(2, HiSource::Fused, vec![1.0, 2.0], vec![0.0, 1e-300]).unwrap(),
        ];
        let back = curves_from_csv(&curves_to_csv(&curves)).unwrap();
        assert_eq!(back, curves);
        assert!(curves_from_csv("a,b\n").is_err());
        assert!(curves_from_csv("specimen,source,time,value\n1,fused,0.0\n").is_err());
    }
    use proptest::prelude::*;

    #[test]
    fn five_specimens_give_five_folds() {
        let plan = build_folds(&[1, 2, 3, 4, 5]).unwrap();
        assert_eq!(plan.len(), 5);
        for (k, fold) in plan.folds.iter().enumerate() {
            assert_eq!(fold.test, k as u32 + 1);
            assert_eq!(fold.train.len(), 4);
            assert!(!fold.train.contains(&fold.test));
        }
    }

    #[test]
    fn two_specimens_minimal_plan() {
        let plan = build_folds(&[2, 1]).unwrap();
        assert_eq!(plan.folds[0], Fold { test: 1, train: vec![2] });
        assert_eq!(plan.folds[1], Fold { test: 2, train: vec![1] });
    }

    #[test]
    fn single_specimen_is_config_error() {
        assert!(matches!(build_folds(&[1]), Err(Error::Config(_))));
        assert!(matches!(build_folds(&[3, 3]), Err(Error::Config(_))));
    }

    #[test]
    fn zscore_hand_values() {
        let rows = vec![vec![2.0, 5.0], vec![4.0, 5.0], vec![100.0, -7.0]];
        let z = ZScoreNormalizer::fit(&rows, &[true, true, false]).unwrap();
        // sample std of [2, 4] is sqrt(2); the constant column falls back to 1
        assert_eq!(z.mean, vec![3.0, 5.0]);
        assert_eq!(z.std, vec![2f64.sqrt(), 1.0]);
        assert_eq!(z.degenerate, vec![false, true]);
        let t0 = z.transform(&rows[0]).unwrap();
        let t1 = z.transform(&rows[1]).unwrap();
        assert!((t0[0] + 0.5f64.sqrt()).abs() < 1e-15 && t0[1] == 0.0);
        assert!((t1[0] - 0.5f64.sqrt()).abs() < 1e-15 && t1[1] == 0.0);
    }

    #[test]
    fn zscore_needs_two_rows() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(ZScoreNormalizer::fit(&rows, &[true, false]).is_err());
    }

    #[test]
    fn minmax_does_not_clip_test_values() {
        let mm = MinMaxOutputNormalizer::fit(&[1.0, 3.0]).unwrap();
        assert_eq!(mm.transform(1.0), 0.0);
        assert_eq!(mm.transform(3.0), 1.0);
        assert_eq!(mm.transform(4.0), 1.5);
        assert_eq!(mm.transform(0.0), -0.5);
    }

    #[test]
    fn paths_are_56_distinct_pairs() {
        let all = PathId::all();
        assert_eq!(all.len(), MAX_PATHS);
        assert!(all.iter().all(|p| p.actuator != p.sensor));
        assert!(PathId::new(3, 3).is_err());
        assert!(PathId::new(0, 3).is_err());
        assert!(PathId::new(1, 9).is_err());
    }

    #[test]
    fn record_validation() {
        let p = PathId::new(1, 2).unwrap();
        assert!(WaveformRecord::new(1, 50, p, 1, 0, vec![0.0, 1.0]).is_ok());
        assert!(WaveformRecord::new(1, 60, p, 1, 0, vec![0.0]).is_err());
        assert!(WaveformRecord::new(1, 50, p, 0, 0, vec![0.0]).is_err());
        assert!(WaveformRecord::new(1, 50, p, 1, 0, vec![f64::NAN]).is_err());
        assert!(validate_cycles(&[0, 5000, 10000]).is_ok());
        assert!(validate_cycles(&[0, 5000, 5000]).is_err());
    }

    #[test]
    fn curve_rejects_non_increasing_times() {
        assert!(HiCurve::new(1, HiSource::Fused, vec![0.0, 1.0, 1.0], vec![0.0; 3]).is_err());
        assert!(HiCurve::new(1, HiSource::Fused, vec![0.0], vec![0.0]).is_err());
        let c = HiCurve::new(1, HiSource::Frequency(50), vec![10.0, 20.0, 30.0], vec![0.0, 1.0, 4.0])
            .unwrap();
        assert_eq!(c.lifetime_fractions(), vec![0.0, 0.5, 1.0]);
        assert_eq!(c.value_at_fraction(0.75), 2.5);
    }

    proptest! {
        #[test]
        fn fold_plan_partitions_specimens(n in 2usize..=50, offset in 0u32..1000) {
            let ids: Vec<u32> = (0..n as u32).map(|i| offset + 3 * i).collect();
            let plan = build_folds(&ids).unwrap();
            prop_assert_eq!(plan.len(), n);
            let mut tests: Vec<u32> = plan.folds.iter().map(|f| f.test).collect();
            tests.sort_unstable();
            prop_assert_eq!(&tests, &ids);
            for f in &plan.folds {
                prop_assert!(!f.train.contains(&f.test));
                prop_assert_eq!(f.train.len(), n - 1);
            }
        }

        #[test]
        fn zscore_ignores_test_rows_and_round_trips(
            train in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20),
            test in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 1..10),
        ) {
            let mut rows = train.clone();
            rows.extend(test.iter().cloned());
            let mask: Vec<bool> = (0..rows.len()).map(|i| i < train.len()).collect();
            let z = ZScoreNormalizer::fit(&rows, &mask).unwrap();

            let mut permuted = train.clone();
            permuted.extend(test.iter().rev().cloned());
            let z2 = ZScoreNormalizer::fit(&permuted, &mask).unwrap();
            prop_assert_eq!(&z, &z2);

            for r in &rows {
                let back = z.inverse(&z.transform(r).unwrap()).unwrap();
                for (a, b) in back.iter().zip(r) {
                    prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
                }
            }

            let transformed: Vec<Vec<f64>> =
                train.iter().map(|r| z.transform(r).unwrap()).collect();
            let n = transformed.len() as f64;
            for j in 0..3 {
                if z.degenerate[j] { continue; }
                let mean = transformed.iter().map(|r| r[j]).sum::<f64>() / n;
                let var = transformed.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
            }
        }
    }
}
