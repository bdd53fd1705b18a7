//! Report tables: per fold and frequency, plus the fused HI.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::pipeline::FoldEvaluation;

/// Everything `report.md` is rendered from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub model: String,
    pub sp_method: String,
    pub seeds: Vec<u64>,
    pub frequencies: Vec<u32>,
    /// Means over folds of the fused HI.
    pub fused_f_all: f64,
    pub fused_f_test: f64,
    /// Means over folds of the across-seed standard deviation.
    pub fused_seed_std_f_all: f64,
    pub frequency_seed_std_f_all: f64,
    pub folds: Vec<FoldEvaluation>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl Summary {
    pub fn new(cfg: &RunConfig, folds: Vec<FoldEvaluation>) -> Self {
        let frequencies = folds
            .first()
            .map(|f| f.frequencies.iter().map(|r| r.freq_khz).collect())
            .unwrap_or_default();
        Self {
            model: cfg.model.to_string(),
            sp_method: cfg.sp_method.to_string(),
            seeds: cfg.seeds.clone(),
            frequencies,
            fused_f_all: mean(folds.iter().map(|f| f.fused.values.f_all)),
            fused_f_test: mean(folds.iter().map(|f| f.fused.values.f_test)),
            fused_seed_std_f_all: mean(folds.iter().map(|f| f.fused.seed_std.f_all)),
            frequency_seed_std_f_all: mean(
                folds
                    .iter()
                    .flat_map(|f| f.frequencies.iter().map(|r| r.report.seed_std.f_all)),
            ),
            folds,
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn markdown(&self, ranking: &str, notes: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# HI report: {} on {} features", self.model, self.sp_method);
        let _ = writeln!(s);
        let seeds: Vec<String> = self.seeds.iter().map(|x| x.to_string()).collect();
        let _ = writeln!(s, "Seeds: {}. Values are for seed-averaged HIs; `±` is the across-seed standard deviation.", seeds.join(", "));
        let _ = writeln!(s);
        if !notes.trim().is_empty() {
            let _ = writeln!(s, "Notes:");
            for line in notes.lines().filter(|l| !l.trim().is_empty()) {
                let _ = writeln!(s, "- {line}");
            }
            let _ = writeln!(s);
        }
        self.table(&mut s, "F_all", |v| (v.values.f_all, v.seed_std.f_all));
        self.table(&mut s, "F_test", |v| (v.values.f_test, v.seed_std.f_test));

        let _ = writeln!(s, "## Fused criteria per fold");
        let _ = writeln!(s);
        let _ = writeln!(s, "| test | Mo | Pr | Tr | Mo_test | Pr_test | F_all | F_test | % of 3 |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|");
        for f in &self.folds {
            let v = &f.fused.values;
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} | {:.1} |",
                f.test, v.mo, v.pr, v.tr, v.mo_test, v.pr_test, v.f_all, v.f_test, f.fused.percent_of_3
            );
        }
        let _ = writeln!(s);

        let _ = writeln!(s, "## Fusion weights (normalized)");
        let _ = writeln!(s);
        let head: Vec<String> = self.frequencies.iter().map(|f| format!("{f} kHz")).collect();
        let _ = writeln!(s, "| test | {} |", head.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.frequencies.len()));
        for f in &self.folds {
            let w: Vec<String> = f.fusion_weights.iter().map(|w| format!("{:.4}", w.normalized)).collect();
            let _ = writeln!(s, "| {} | {} |", f.test, w.join(" | "));
        }
        let _ = writeln!(s);

        let flagged: Vec<String> = self
            .folds
            .iter()
            .flat_map(|f| {
                let fused = f.fused.flags.iter().map(move |x| format!("fold {}, fused: {x}", f.test));
                let per = f.frequencies.iter().flat_map(move |r| {
                    r.report
                        .flags
                        .iter()
                        .map(move |x| format!("fold {}, {} kHz: {x}", f.test, r.freq_khz))
                });
                fused.chain(per)
            })
            .collect();
        if !flagged.is_empty() {
            let _ = writeln!(s, "## Degenerate criteria");
            let _ = writeln!(s);
            for line in flagged {
                let _ = writeln!(s, "- {line}");
            }
            let _ = writeln!(s);
        }

        let _ = writeln!(s, "## Feature ranking");
        let _ = writeln!(s);
        let _ = writeln!(s, "```text");
        s.push_str(ranking.trim_end());
        let _ = writeln!(s);
        let _ = writeln!(s, "```");
        s
    }

    fn table(&self, s: &mut String, name: &str, pick: impl Fn(&gwhi_core::criteria::CriteriaReport) -> (f64, f64)) {
        let _ = writeln!(s, "## {name}");
        let _ = writeln!(s);
        let head: Vec<String> = self.frequencies.iter().map(|f| format!("{f} kHz")).collect();
        let _ = writeln!(s, "| test | {} | fused |", head.join(" | "));
        let _ = writeln!(s, "|---|{}---|", "---|".repeat(self.frequencies.len()));
        let cell = |(v, sd): (f64, f64)| format!("{v:.3} ± {sd:.3}");
        for f in &self.folds {
            let cells: Vec<String> = f.frequencies.iter().map(|r| cell(pick(&r.report))).collect();
            let _ = writeln!(s, "| {} | {} | {} |", f.test, cells.join(" | "), cell(pick(&f.fused)));
        }
        let col_mean = |k: usize| mean(self.folds.iter().map(|f| pick(&f.frequencies[k].report).0));
        let means: Vec<String> = (0..self.frequencies.len()).map(|k| format!("{:.3}", col_mean(k))).collect();
        let fused = mean(self.folds.iter().map(|f| pick(&f.fused).0));
        let _ = writeln!(s, "| mean | {} | {fused:.3} |", means.join(" | "));
        let _ = writeln!(s);
    }
}
