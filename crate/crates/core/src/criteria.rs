//! Prognostic criteria for sets of HI curves.
//!
//! - monotonicity (`Mo`): modified Mann-Kendall statistic, time-gap weighted
//! - prognosability (`Pr`): spread of end-of-life values relative to the mean HI range
//! - trendability (`Tr`): minimum pairwise Pearson correlation between specimens
//!
//! plus their test-specimen variants and the weighted fitness sums.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{interpolate, HiCurve};
use crate::error::{Error, Result};

/// Standard deviation convention used in prognosability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StdKind {
    #[default]
    Population,
    Sample,
}

impl StdKind {
    pub fn std(self, xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let denom = match self {
            StdKind::Population => n,
            StdKind::Sample => n - 1.0,
        };
        if denom > 0.0 {
            (ss / denom).sqrt()
        } else {
            0.0
        }
    }
}

/// Criterion weights `k_Mo`, `k_Pr`, `k_Tr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub mo: f64,
    pub pr: f64,
    pub tr: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            mo: 1.0,
            pr: 1.0,
            tr: 1.0,
        }
    }
}

impl Weights {
    pub fn total(&self) -> f64 {
        self.mo + self.pr + self.tr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriteriaConfig {
    #[serde(default)]
    pub std_kind: StdKind,
    #[serde(default)]
    pub weights: Weights,
}

/// A criterion value plus whether it hit a degenerate case (division by zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub value: f64,
    pub degenerate: bool,
}

impl Score {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate(value: f64) -> Self {
        Self {
            value,
            degenerate: true,
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Monotonicity of a single curve (the test-specimen form).
pub fn mo_test(curve: &HiCurve) -> Result<f64> {
    let t = curve.times();
    let y = curve.values();
    let n = y.len();
    if n < 3 {
        return Err(Error::invalid(format!(
            "monotonicity needs at least 3 points, specimen {} has {n}",
            curve.specimen_id
        )));
    }
    let mut total = 0.0;
    for i in 0..n - 1 {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in i + 1..n {
            let dt = t[j] - t[i];
            num += dt * sign(y[j] - y[i]);
            den += dt;
        }
        total += num / den;
    }
    Ok((total / (n - 1) as f64).abs())
}

/// Mean single-curve monotonicity over specimens.
pub fn monotonicity(curves: &[HiCurve]) -> Result<f64> {
    if curves.is_empty() {
        return Err(Error::invalid("monotonicity of an empty curve set"));
    }
    let mut sum = 0.0;
    for c in curves {
        sum += mo_test(c)?;
    }
    Ok(sum / curves.len() as f64)
}

fn mean_range(curves: &[&HiCurve]) -> f64 {
    curves.iter().map(|c| (c.first() - c.last()).abs()).sum::<f64>() / curves.len() as f64
}

pub fn prognosability(curves: &[HiCurve], std_kind: StdKind) -> Result<Score> {
    if curves.len() < 2 {
        return Err(Error::invalid("prognosability needs at least 2 curves"));
    }
    let refs: Vec<&HiCurve> = curves.iter().collect();
    let range = mean_range(&refs);
    let ends: Vec<f64> = curves.iter().map(HiCurve::last).collect();
    let spread = std_kind.std(&ends);
    if !(range > 0.0) {
        warn!("prognosability: mean HI range is zero");
        return Ok(Score::degenerate(0.0));
    }
    Ok(Score::ok((-spread / range).exp()))
}

/// Prognosability of the test specimen relative to the mean training end-of-life.
pub fn pr_test(test: &HiCurve, train: &[HiCurve]) -> Result<Score> {
    if train.is_empty() {
        return Err(Error::invalid("pr_test needs at least one training curve"));
    }
    let train_end = train.iter().map(HiCurve::last).sum::<f64>() / train.len() as f64;
    let mut all: Vec<&HiCurve> = train.iter().collect();
    all.push(test);
    let range = mean_range(&all);
    if !(range > 0.0) {
        warn!("pr_test: mean HI range is zero");
        return Ok(Score::degenerate(0.0));
    }
    Ok(Score::ok((-(test.last() - train_end).abs() / range).exp()))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va > 0.0 && vb > 0.0 {
        Some((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Curves on a common lifetime grid: unchanged when they already share one,
/// otherwise linearly resampled to the shortest curve's length.
fn aligned_values(curves: &[HiCurve]) -> Vec<Vec<f64>> {
    let fractions: Vec<Vec<f64>> = curves.iter().map(HiCurve::lifetime_fractions).collect();
    if fractions.iter().all(|f| f == &fractions[0]) {
        return curves.iter().map(|c| c.values().to_vec()).collect();
    }
    let len = curves.iter().map(HiCurve::len).min().unwrap_or(0);
    let grid: Vec<f64> = (0..len).map(|i| i as f64 / (len - 1) as f64).collect();
    curves
        .iter()
        .zip(&fractions)
        .map(|(c, fr)| grid.iter().map(|&g| interpolate(fr, c.values(), g)).collect())
        .collect()
}

pub fn trendability(curves: &[HiCurve]) -> Result<Score> {
    if curves.len() < 2 {
        return Err(Error::invalid("trendability needs at least 2 curves"));
    }
    let values = aligned_values(curves);
    let mut min = f64::INFINITY;
    let mut degenerate = false;
    for a in 0..values.len() {
        for b in a + 1..values.len() {
            let r = pearson(&values[a], &values[b]).unwrap_or_else(|| {
                degenerate = true;
                0.0
            });
            min = min.min(r);
        }
    }
    if degenerate {
        warn!("trendability: zero-variance curve, its correlations set to 0");
    }
    Ok(Score {
        value: min,
        degenerate,
    })
}

pub fn fitness(mo: f64, pr: f64, tr: f64, weights: &Weights) -> f64 {
    weights.mo * mo + weights.pr * pr + weights.tr * tr
}

/// `F_all` of a curve set with no designated test specimen.
pub fn fitness_all(curves: &[HiCurve], config: &CriteriaConfig) -> Result<f64> {
    let mo = monotonicity(curves)?;
    let pr = prognosability(curves, config.std_kind)?.value;
    let tr = trendability(curves)?.value;
    Ok(fitness(mo, pr, tr, &config.weights))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CriteriaValues {
    pub mo: f64,
    pub pr: f64,
    pub tr: f64,
    pub mo_test: f64,
    pub pr_test: f64,
    pub f_all: f64,
    pub f_test: f64,
}

impl CriteriaValues {
    fn fields(&self) -> [f64; 7] {
        [
            self.mo,
            self.pr,
            self.tr,
            self.mo_test,
            self.pr_test,
            self.f_all,
            self.f_test,
        ]
    }

    fn from_fields(f: [f64; 7]) -> Self {
        Self {
            mo: f[0],
            pr: f[1],
            tr: f[2],
            mo_test: f[3],
            pr_test: f[4],
            f_all: f[5],
            f_test: f[6],
        }
    }
}

/// All curves of one evaluation, with exactly one test specimen.
#[derive(Debug, Clone)]
pub struct CurveSet {
    pub curves: Vec<HiCurve>,
    pub test_specimen: u32,
}

impl CurveSet {
    pub fn new(curves: Vec<HiCurve>, test_specimen: u32) -> Result<Self> {
        let hits = curves
            .iter()
            .filter(|c| c.specimen_id == test_specimen)
            .count();
        if hits != 1 {
            return Err(Error::invalid(format!(
                "curve set must contain test specimen {test_specimen} exactly once (found {hits})"
            )));
        }
        Ok(Self {
            curves,
            test_specimen,
        })
    }

    pub fn test(&self) -> &HiCurve {
        self.curves
            .iter()
            .find(|c| c.specimen_id == self.test_specimen)
            .expect("checked in constructor")
    }

    pub fn train(&self) -> Vec<HiCurve> {
        self.curves
            .iter()
            .filter(|c| c.specimen_id != self.test_specimen)
            .cloned()
            .collect()
    }
}

/// Evaluates every criterion; degenerate cases are listed in the returned flags.
pub fn evaluate(set: &CurveSet, config: &CriteriaConfig) -> Result<(CriteriaValues, Vec<String>)> {
    let mut flags = Vec::new();
    let mo = monotonicity(&set.curves)?;
    let pr = prognosability(&set.curves, config.std_kind)?;
    if pr.degenerate {
        flags.push("pr: zero mean range".to_string());
    }
    let tr = trendability(&set.curves)?;
    if tr.degenerate {
        flags.push("tr: zero-variance curve".to_string());
    }
    let mo_t = mo_test(set.test())?;
    let pr_t = pr_test(set.test(), &set.train())?;
    if pr_t.degenerate {
        flags.push("pr_test: zero mean range".to_string());
    }
    let w = &config.weights;
    let values = CriteriaValues {
        mo,
        pr: pr.value,
        tr: tr.value,
        mo_test: mo_t,
        pr_test: pr_t.value,
        f_all: fitness(mo, pr.value, tr.value, w),
        f_test: fitness(mo_t, pr_t.value, tr.value, w),
    };
    Ok((values, flags))
}

/// Criteria of seed-averaged curves together with across-seed statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub values: CriteriaValues,
    pub percent_of_3: f64,
    pub seeds: usize,
    pub seed_mean: CriteriaValues,
    /// Population standard deviation across seeds.
    pub seed_std: CriteriaValues,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl CriteriaReport {
    pub fn new(values: CriteriaValues, per_seed: &[CriteriaValues], weights: &Weights, flags: Vec<String>) -> Self {
        let (mean, std) = seed_stats(per_seed);
        Self {
            values,
            percent_of_3: 100.0 * values.f_all / weights.total(),
            seeds: per_seed.len(),
            seed_mean: mean,
            seed_std: std,
            flags,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("<criteria report>", e.to_string()))
    }
}

fn seed_stats(per_seed: &[CriteriaValues]) -> (CriteriaValues, CriteriaValues) {
    if per_seed.is_empty() {
        return (CriteriaValues::default(), CriteriaValues::default());
    }
    let mut mean = [0.0; 7];
    let mut std = [0.0; 7];
    for k in 0..7 {
        let xs: Vec<f64> = per_seed.iter().map(|v| v.fields()[k]).collect();
        mean[k] = xs.iter().sum::<f64>() / xs.len() as f64;
        std[k] = StdKind::Population.std(&xs);
    }
    (CriteriaValues::from_fields(mean), CriteriaValues::from_fields(std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HiSource;
    use proptest::prelude::*;

    fn curve(id: u32, t: &[f64], y: &[f64]) -> HiCurve {
        HiCurve::new(id, HiSource::Fused, t.to_vec(), y.to_vec()).unwrap()
    }

    fn steps(y: &[f64]) -> Vec<f64> {
        (0..y.len()).map(|i| i as f64).collect()
    }

    fn c(id: u32, y: &[f64]) -> HiCurve {
        curve(id, &steps(y), y)
    }

    #[test]
    fn monotonicity_fixtures() {
        assert_eq!(monotonicity(&[c(1, &[0.0, 0.1, 0.5, 0.9])]).unwrap(), 1.0);
        assert_eq!(monotonicity(&[c(1, &[2.0, 2.0, 2.0])]).unwrap(), 0.0);
        let v = monotonicity(&[c(1, &[0.0, 1.0, 0.5, 2.0])]).unwrap();
        assert!((v - 7.0 / 9.0).abs() < 1e-12);
        // decreasing curves count as monotone
        assert_eq!(monotonicity(&[c(1, &[3.0, 2.0, 1.0])]).unwrap(), 1.0);
        assert!(mo_test(&c(1, &[0.0, 1.0])).is_err());
    }

    #[test]
    fn prognosability_fixtures() {
        let same = [c(1, &[0.0, 0.5, 1.0]), c(2, &[0.2, 0.4, 1.0])];
        assert_eq!(prognosability(&same, StdKind::Population).unwrap().value, 1.0);

        let pair = [c(1, &[0.0, 1.0]), c(2, &[0.0, 0.8])];
        let v = prognosability(&pair, StdKind::Population).unwrap();
        assert!((v.value - (-0.1f64 / 0.9).exp()).abs() < 1e-12);
        assert!((v.value - (-1.0f64 / 9.0).exp()).abs() < 1e-12);

        let flat = [c(1, &[0.0, 0.0]), c(2, &[0.0, 0.0])];
        let v = prognosability(&flat, StdKind::Population).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.value, 0.0);
        assert!(prognosability(&pair[..1], StdKind::Population).is_err());
    }

    #[test]
    fn sample_std_variant() {
        let pair = [c(1, &[0.0, 1.0]), c(2, &[0.0, 0.8])];
        let v = prognosability(&pair, StdKind::Sample).unwrap();
        let sd = (0.02f64).sqrt();
        assert!((v.value - (-sd / 0.9).exp()).abs() < 1e-12);
    }

    #[test]
    fn trendability_fixtures() {
        let y = [0.0, 1.0, 4.0, 2.0];
        assert_eq!(trendability(&[c(1, &y), c(2, &y)]).unwrap().value, 1.0);
        let affine: Vec<f64> = y.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((trendability(&[c(1, &y), c(2, &affine)]).unwrap().value - 1.0).abs() < 1e-12);
        let anti = trendability(&[c(1, &[0.0, 1.0, 2.0]), c(2, &[2.0, 1.0, 0.0])]).unwrap();
        assert!((anti.value + 1.0).abs() < 1e-12);
        let flat = trendability(&[c(1, &[1.0, 1.0, 1.0]), c(2, &[0.0, 1.0, 2.0])]).unwrap();
        assert!(flat.degenerate);
        assert_eq!(flat.value, 0.0);
    }

    #[test]
    fn trendability_resamples_unequal_lengths() {
        let long: Vec<f64> = (0..9).map(|i| i as f64 / 8.0).collect();
        let short = [0.0, 0.5, 1.0];
        let v = trendability(&[c(1, &long), c(2, &short)]).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_variants() {
        let trains = [c(1, &[0.0, 0.5, 1.0]), c(2, &[0.0, 0.4, 1.0])];
        let test = c(3, &[0.0, 0.6, 0.7]);
        let v = pr_test(&test, &trains).unwrap();
        let want = (-0.3f64 / ((1.0 + 1.0 + 0.7) / 3.0)).exp();
        assert!((v.value - want).abs() < 1e-12);

        // ranges all 1.0: test ends at 0.7 -> exp(-0.3)
        let test = curve(3, &[0.0, 1.0, 2.0], &[-0.3, 0.2, 0.7]);
        let v = pr_test(&test, &trains).unwrap();
        assert!((v.value - (-0.3f64).exp()).abs() < 1e-12);

        let on_mean = c(3, &[0.0, 0.1, 1.0]);
        assert_eq!(pr_test(&on_mean, &trains).unwrap().value, 1.0);
        assert_eq!(mo_test(&on_mean).unwrap(), 1.0);
    }

    #[test]
    fn fitness_fixtures() {
        let w = Weights::default();
        assert_eq!(fitness(1.0, 1.0, 1.0, &w), 3.0);
        assert!((fitness(0.94, 0.91, 0.60, &w) - 2.45).abs() < 1e-12);
        let no_tr = Weights { tr: 0.0, ..w };
        assert_eq!(fitness(1.0, 1.0, 0.3, &no_tr), 2.0);
    }

    #[test]
    fn evaluate_and_report_text_round_trip() {
        let curves = vec![
            c(1, &[0.0, 0.5, 1.0]),
            c(2, &[0.0, 0.4, 1.0]),
            c(3, &[0.0, 0.6, 0.9]),
        ];
        let set = CurveSet::new(curves, 3).unwrap();
        let (v, flags) = evaluate(&set, &CriteriaConfig::default()).unwrap();
        assert!(flags.is_empty());
        assert!((v.f_all - (v.mo + v.pr + v.tr)).abs() < 1e-15);
        assert!((v.f_test - (v.mo_test + v.pr_test + v.tr)).abs() < 1e-15);
        let report = CriteriaReport::new(v, &[v, v], &Weights::default(), flags);
        assert_eq!(report.seed_std.f_all, 0.0);
        let text = report.to_text();
        for key in ["mo", "pr", "tr", "mo_test", "pr_test", "f_all", "f_test", "percent_of_3"] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "{key}");
        }
        assert_eq!(CriteriaReport::from_text(&text).unwrap(), report);
        assert!(CurveSet::new(set.curves.clone(), 9).is_err());
    }

    #[test]
    fn test_criteria_match_all_criteria_for_identical_set() {
        let y = [0.0, 0.3, 0.2, 0.8, 1.0];
        let curves = vec![c(1, &y), c(2, &y), c(3, &y)];
        let set = CurveSet::new(curves, 2).unwrap();
        let (v, _) = evaluate(&set, &CriteriaConfig::default()).unwrap();
        assert!((v.f_test - v.f_all).abs() < 1e-12);
    }

    fn arb_curve() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 5..12)
    }

    proptest! {
        #[test]
        fn mo_invariant_to_monotone_transform_and_time_shift(y in arb_curve(), shift in -1e3f64..1e3) {
            let t = steps(&y);
            let base = mo_test(&curve(1, &t, &y)).unwrap();
            let g: Vec<f64> = y.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert!((mo_test(&curve(1, &t, &g)).unwrap() - base).abs() < 1e-12);
            let ts: Vec<f64> = t.iter().map(|v| v * 1000.0 + shift).collect();
            prop_assert!((mo_test(&curve(1, &ts, &y)).unwrap() - base).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn pr_tr_invariant_to_common_affine_map(
            ys in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 2..6),
            a in 0.1f64..10.0,
            b in -5.0f64..5.0,
        ) {
            let curves: Vec<HiCurve> = ys.iter().enumerate().map(|(i, y)| c(i as u32, y)).collect();
            let mapped: Vec<HiCurve> = curves.iter().map(|c| c.map_values(|v| a * v + b).unwrap()).collect();
            let p0 = prognosability(&curves, StdKind::Population).unwrap();
            let p1 = prognosability(&mapped, StdKind::Population).unwrap();
            prop_assert!((p0.value - p1.value).abs() < 1e-9);
            prop_assert!(p0.degenerate || (p0.value > 0.0 && p0.value <= 1.0));
            let t0 = trendability(&curves).unwrap().value;
            let t1 = trendability(&mapped).unwrap().value;
            prop_assert!((t0 - t1).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&t0));
        }

        #[test]
        fn tr_is_order_independent(
            ys in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 6), 2..6),
        ) {
            let curves: Vec<HiCurve> = ys.iter().enumerate().map(|(i, y)| c(i as u32, y)).collect();
            let mut rev = curves.clone();
            rev.reverse();
            prop_assert_eq!(trendability(&curves).unwrap().value, trendability(&rev).unwrap().value);
        }
    }
}
