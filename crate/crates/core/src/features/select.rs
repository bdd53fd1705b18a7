use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::extract::FeatureTensor;
use super::registry::SpMethod;
use crate::criteria::{fitness, monotonicity, prognosability, trendability, CriteriaConfig};
use crate::data::{HiCurve, HiSource, TimeAxis};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub id: u16,
    pub method: SpMethod,
    pub name: String,
    pub mo: f64,
    pub pr: f64,
    pub tr: f64,
    pub f_all: f64,
    pub selected: bool,
}

/// Mean and population std of `F_all` within one method block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: SpMethod,
    pub count_before: usize,
    pub mean_before: f64,
    pub std_before: f64,
    pub count_after: usize,
    pub mean_after: Option<f64>,
    pub std_after: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScoreTable {
    pub benchmark: f64,
    pub scores: Vec<FeatureScore>,
    pub methods: Vec<MethodSummary>,
    pub warnings: Vec<String>,
}

/// Benchmark (mean score) and a strict `score > benchmark` mask.
pub fn select_by_benchmark(scores: &[f64]) -> (f64, Vec<bool>) {
    if scores.is_empty() {
        return (0.0, Vec::new());
    }
    let benchmark = scores.iter().sum::<f64>() / scores.len() as f64;
    (benchmark, scores.iter().map(|&s| s > benchmark).collect())
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Scores every feature trajectory of the frequency-averaged tensor as an
/// HI and keeps those whose fitness exceeds the mean fitness.
pub fn rank_and_select(tensor: &FeatureTensor, cfg: &CriteriaConfig, axis: TimeAxis) -> Result<FeatureScoreTable> {
    let series = tensor.all_series(None)?;
    if series.len() < 2 {
        return Err(Error::invalid("feature ranking needs at least 2 specimens"));
    }
    let mut scores = Vec::with_capacity(tensor.width());
    for info in tensor.registry.features() {
        let col = info.id as usize - 1;
        let curves = series
            .iter()
            .map(|s| HiCurve::new(s.specimen_id, HiSource::Fused, s.times(axis), s.column(col)))
            .collect::<Result<Vec<_>>>()?;
        let mo = monotonicity(&curves)?;
        let pr = prognosability(&curves, cfg.std_kind)?.value;
        let tr = trendability(&curves)?.value;
        scores.push(FeatureScore {
            id: info.id,
            method: info.method,
            name: info.name.clone(),
            mo,
            pr,
            tr,
            f_all: fitness(mo, pr, tr, &cfg.weights),
            selected: false,
        });
    }
    Ok(FeatureScoreTable::from_scores(scores))
}

impl FeatureScoreTable {
    /// Applies the benchmark rule and builds the per-method summaries.
    pub fn from_scores(mut scores: Vec<FeatureScore>) -> Self {
        let f: Vec<f64> = scores.iter().map(|s| s.f_all).collect();
        let (benchmark, mask) = select_by_benchmark(&f);
        for (s, keep) in scores.iter_mut().zip(mask) {
            s.selected = keep;
        }
        let mut warnings = Vec::new();
        if !scores.is_empty() && !scores.iter().any(|s| s.selected) {
            let w = "no feature exceeds the benchmark; all fitness scores are equal".to_string();
            log::warn!("{w}");
            warnings.push(w);
        }
        let methods = SpMethod::ALL
            .into_iter()
            .filter_map(|m| {
                let before: Vec<f64> = scores.iter().filter(|s| s.method == m).map(|s| s.f_all).collect();
                if before.is_empty() {
                    return None;
                }
                let after: Vec<f64> = scores
                    .iter()
                    .filter(|s| s.method == m && s.selected)
                    .map(|s| s.f_all)
                    .collect();
                let (mean_before, std_before) = mean_std(&before);
                let (mean_after, std_after) = if after.is_empty() {
                    (None, None)
                } else {
                    let (a, b) = mean_std(&after);
                    (Some(a), Some(b))
                };
                Some(MethodSummary {
                    method: m,
                    count_before: before.len(),
                    mean_before,
                    std_before,
                    count_after: after.len(),
                    mean_after,
                    std_after,
                })
            })
            .collect();
        Self {
            benchmark,
            scores,
            methods,
            warnings,
        }
    }

    /// Zero-based columns of selected features of `method`, or of all
    /// methods when `None`.
    pub fn selected_columns(&self, method: Option<SpMethod>) -> Vec<usize> {
        self.scores
            .iter()
            .filter(|s| s.selected && method.is_none_or(|m| s.method == m))
            .map(|s| s.id as usize - 1)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "benchmark F_all = {:.6}", self.benchmark);
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<6} {:>6} {:>12} {:>12} {:>6} {:>12} {:>12}",
            "method", "before", "mean", "std", "after", "mean", "std"
        );
        for m in &self.methods {
            let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>12.6} {:>12.6} {:>6} {:>12} {:>12}",
                m.method.as_str(),
                m.count_before,
                m.mean_before,
                m.std_before,
                m.count_after,
                opt(m.mean_after),
                opt(m.std_after)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:>4} {:<6} {:<24} {:>10} {:>10} {:>10} {:>10} {:>8}",
            "id", "method", "name", "Mo", "Pr", "Tr", "F_all", "selected"
        );
        for s in &self.scores {
            let _ = writeln!(
                out,
                "{:>4} {:<6} {:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>8}",
                s.id,
                s.method.as_str(),
                s.name,
                s.mo,
                s.pr,
                s.tr,
                s.f_all,
                if s.selected { "yes" } else { "no" }
            );
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SpecimenLayout;
    use crate::features::FeatureRegistry;
    use std::collections::BTreeMap;

    fn score(id: u16, method: SpMethod, f_all: f64) -> FeatureScore {
        FeatureScore {
            id,
            method,
            name: format!("f{id}"),
            mo: 0.0,
            pr: 0.0,
            tr: 0.0,
            f_all,
            selected: false,
        }
    }

    #[test]
    fn strict_benchmark() {
        let (b, mask) = select_by_benchmark(&[1.0, 2.0, 3.0]);
        assert_eq!(b, 2.0);
        assert_eq!(mask, vec![false, false, true]);
        let (_, mask) = select_by_benchmark(&[0.5; 4]);
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn equal_scores_warn() {
        let t = FeatureScoreTable::from_scores(vec![score(1, SpMethod::Raw, 1.0), score(2, SpMethod::Raw, 1.0)]);
        assert!(t.selected_columns(None).is_empty());
        assert_eq!(t.warnings.len(), 1);
        assert_eq!(t.methods[0].mean_after, None);
    }

    #[test]
    fn method_summaries() {
        let t = FeatureScoreTable::from_scores(vec![
            score(1, SpMethod::Raw, 1.0),
            score(2, SpMethod::Raw, 3.0),
            score(20, SpMethod::Fft, 2.5),
        ]);
        assert!((t.benchmark - 6.5 / 3.0).abs() < 1e-15);
        assert_eq!(t.selected_columns(None), vec![1, 19]);
        assert_eq!(t.selected_columns(Some(SpMethod::Fft)), vec![19]);
        let raw = &t.methods[0];
        assert_eq!((raw.count_before, raw.count_after), (2, 1));
        assert_eq!(raw.mean_before, 2.0);
        assert_eq!(raw.std_before, 1.0);
        assert_eq!(raw.mean_after, Some(3.0));
        assert!(t.to_text().contains("benchmark"));
    }

    #[test]
    fn monotone_feature_outranks_noise() {
        let specimens: Vec<SpecimenLayout> = (1..=3)
            .map(|id| SpecimenLayout {
                id,
                cycles: (0..10 + id as u64).map(|j| j * 100).collect(),
            })
            .collect();
        let mut cells = BTreeMap::new();
        for s in &specimens {
            let n = s.cycles.len();
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let mut r = vec![0.0; 71];
                    for (j, v) in r.iter_mut().enumerate() {
                        // pseudo-random noise, different per feature and specimen
                        *v = (((t * 31 + j * 17 + s.id as usize * 7) * 2654435761) % 1000) as f64 / 1000.0;
                    }
                    r[3] = t as f64 / (n - 1) as f64;
                    r
                })
                .collect();
            cells.insert((s.id, 50), rows);
        }
        let t = FeatureTensor::new(FeatureRegistry::new(0), vec![50], specimens, cells).unwrap();
        let table = rank_and_select(&t, &CriteriaConfig::default(), TimeAxis::Cycles).unwrap();
        let rms = &table.scores[3];
        assert!(rms.selected);
        assert!((rms.f_all - 3.0).abs() < 1e-9);
        assert!(table.scores.iter().all(|s| s.f_all <= rms.f_all));
    }
}
