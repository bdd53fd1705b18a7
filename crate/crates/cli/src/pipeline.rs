//! The seven pipeline stages and the on-disk layout that connects them.
//!
//! ```text
//! <dataset>/                      manifest + payloads, or synth.toml only
//! <out>/features/                 path-averaged feature table
//! <out>/rank/                     feature fitness ranking and selection
//! <out>/train/<run>/f<k>/fold<s>/seed<n>/   curves.csv, model.json
//! <out>/fuse/<run>/fold<s>/       seed-averaged and fused curves, weights
//! <out>/evaluate/<run>/fold<s>.toml
//! <out>/report/<run>/             report.md, summary.toml, curves/, plots/
//! ```
//!
//! `<run>` is `<model>-<sp method>`. Every stage directory carries a stamp
//! (see [`crate::stamp`]); training jobs carry one each.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gwhi_core::criteria::{evaluate, fitness_all, CriteriaReport, CriteriaValues, CurveSet};
use gwhi_core::data::{build_folds, curves_from_csv, curves_to_csv, Fold, HiCurve, HiSource, TimeAxis};
use gwhi_core::dataset::{write_atomic, DiskDataset, Encoding, WaveformSource, MANIFEST_FILE};
use gwhi_core::ensemble::{seed_average, wae_fuse, FrequencyBundle, Fusion, FusionWeight};
use gwhi_core::features::{extract_all, rank_and_select, FeatureTensor, SpMethod, SpecimenSeries};
use gwhi_core::hyperopt::{optimize, BoConfig, SearchSpace};
use gwhi_core::synthgen::{read_spec, SynthDataset, SPEC_FILE};
use gwhi_models::deepsad::{self, DeepSadHyperparams};
use gwhi_models::dtcvae::{self, DtcVaeHyperparams};
use gwhi_models::{ModelKind, TrainedModel};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::{report, stamp};

pub const CURVES_FILE: &str = "curves.csv";
pub const MODEL_FILE: &str = "model.json";
pub const RANKING_FILE: &str = "ranking.txt";
pub const SELECTION_FILE: &str = "selection.toml";
pub const FUSED_FILE: &str = "fused.csv";
pub const TRACE_FILE: &str = "hyperopt.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Extract,
    Rank,
    Train,
    Fuse,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Generate,
        Stage::Extract,
        Stage::Rank,
        Stage::Train,
        Stage::Fuse,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Extract => "extract",
            Stage::Rank => "rank",
            Stage::Train => "train",
            Stage::Fuse => "fuse",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown stage `{s}`")))
    }
}

/// Features selected per SP method, as zero-based columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub benchmark: f64,
    pub selected: BTreeMap<String, Vec<usize>>,
}

/// Hyperparameters of either model.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum ModelHyperparams {
    DeepSad(DeepSadHyperparams),
    DtcVae(DtcVaeHyperparams),
}

impl ModelHyperparams {
    fn search_space(&self) -> SearchSpace {
        match self {
            ModelHyperparams::DeepSad(_) => DeepSadHyperparams::search_space(),
            ModelHyperparams::DtcVae(_) => DtcVaeHyperparams::search_space(),
        }
    }

    fn with_point(&self, p: &[f64]) -> Result<Self> {
        Ok(match self {
            ModelHyperparams::DeepSad(h) => ModelHyperparams::DeepSad(h.with_point(p)?),
            ModelHyperparams::DtcVae(h) => ModelHyperparams::DtcVae(h.with_point(p)?),
        })
    }

    fn scaled(&self, cfg: &RunConfig) -> Self {
        match self {
            ModelHyperparams::DeepSad(h) => ModelHyperparams::DeepSad(cfg.deepsad_effective(h)),
            ModelHyperparams::DtcVae(h) => ModelHyperparams::DtcVae(cfg.dtcvae_effective(h)),
        }
    }

    pub fn train(&self, series: &[SpecimenSeries], axis: TimeAxis, seed: u64) -> Result<TrainedModel> {
        Ok(match self {
            ModelHyperparams::DeepSad(h) => deepsad::train(series, axis, h, seed)?,
            ModelHyperparams::DtcVae(h) => dtcvae::train(series, axis, h, seed)?,
        })
    }

    fn to_toml(&self) -> String {
        toml::to_string(self).expect("hyperparameters serialize")
    }
}

/// One fold's criteria at every frequency and after fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEvaluation {
    pub test: u32,
    pub train: Vec<u32>,
    pub frequencies: Vec<FrequencyReport>,
    pub fusion_weights: Vec<FusionWeight>,
    pub fused: CriteriaReport,
    /// Criteria of each seed's own fused HI, in seed order.
    pub fused_per_seed: Vec<CriteriaValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub freq_khz: u32,
    pub report: CriteriaReport,
}

impl FoldEvaluation {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("evaluation serializes")
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| gwhi_core::Error::parse(path, e.to_string()).into())
    }
}

/// Any waveform source the extract stage can read.
pub enum Dataset {
    Disk(DiskDataset),
    Synthetic(SynthDataset),
}

impl Dataset {
    /// Opens `dir` and returns the source plus a fingerprint of its definition.
    pub fn open(dir: &Path) -> Result<(Self, String)> {
        let manifest = dir.join(MANIFEST_FILE);
        let spec = dir.join(SPEC_FILE);
        if manifest.exists() {
            let bytes = std::fs::read(&manifest).map_err(|e| gwhi_core::Error::io(&manifest, e))?;
            Ok((Dataset::Disk(DiskDataset::open(dir)?), stamp::digest([b"manifest".as_slice(), &bytes])))
        } else if spec.exists() {
            let bytes = std::fs::read(&spec).map_err(|e| gwhi_core::Error::io(&spec, e))?;
            let ds = SynthDataset::new(read_spec(&spec)?)?;
            Ok((Dataset::Synthetic(ds), stamp::digest([b"synth".as_slice(), &bytes])))
        } else {
            Err(Error::MissingStage {
                stage: "generate",
                path: manifest,
            })
        }
    }

    pub fn source(&self) -> &dyn WaveformSource {
        match self {
            Dataset::Disk(d) => d,
            Dataset::Synthetic(s) => s,
        }
    }
}

pub struct Pipeline {
    cfg: RunConfig,
    pool: rayon::ThreadPool,
}

fn require_stamp(dir: &Path, stage: &'static str) -> Result<String> {
    stamp::read(dir).ok_or_else(|| Error::MissingStage {
        stage,
        path: dir.join(stamp::STAMP_FILE),
    })
}

fn read_text(path: &Path, stage: &'static str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|_| Error::MissingStage {
        stage,
        path: path.to_path_buf(),
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn clear_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| gwhi_core::Error::io(dir, e))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| gwhi_core::Error::io(dir, e))?;
    Ok(())
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Pool(e.to_string()))?;
        Ok(Self { cfg, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn features_dir(&self) -> PathBuf {
        self.cfg.out.join("features")
    }

    pub fn rank_dir(&self) -> PathBuf {
        self.cfg.out.join("rank")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.cfg.out.join("train").join(self.cfg.run_label())
    }

    pub fn job_dir(&self, freq: u32, test: u32, seed: u64) -> PathBuf {
        self.group_dir(freq, test).join(format!("seed{seed}"))
    }

    fn group_dir(&self, freq: u32, test: u32) -> PathBuf {
        self.train_dir().join(format!("f{freq}")).join(format!("fold{test}"))
    }

    pub fn fuse_dir(&self) -> PathBuf {
        self.cfg.out.join("fuse").join(self.cfg.run_label())
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.cfg.out.join("evaluate").join(self.cfg.run_label())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.cfg.out.join("report").join(self.cfg.run_label())
    }

    /// Runs the given stages in pipeline order.
    pub fn run(&self, stages: &[Stage]) -> Result<()> {
        let mut stages = stages.to_vec();
        stages.sort_unstable();
        stages.dedup();
        for st in stages {
            info!("stage {st}");
            match st {
                Stage::Generate => self.generate()?,
                Stage::Extract => self.extract()?,
                Stage::Rank => self.rank()?,
                Stage::Train => self.train()?,
                Stage::Fuse => self.fuse()?,
                Stage::Evaluate => self.evaluate()?,
                Stage::Report => self.report()?,
            }
        }
        Ok(())
    }

    /// Every stage, skipping generation when the config has no `[generate]` section.
    pub fn run_all(&self) -> Result<()> {
        let stages: Vec<Stage> = Stage::ALL
            .into_iter()
            .filter(|s| *s != Stage::Generate || self.cfg.generate.is_some())
            .collect();
        self.run(&stages)
    }

    pub fn generate(&self) -> Result<()> {
        let g = self
            .cfg
            .generate
            .as_ref()
            .ok_or_else(|| Error::validation("the generate stage needs a [generate] section in the config"))?;
        let dir = &self.cfg.dataset;
        let spec_text = toml::to_string(&g.spec).expect("spec serializes");
        let hash = stamp::digest(["generate", &spec_text, &g.materialize.to_string()]);
        if stamp::is_current(dir, &hash) {
            info!("generate: up to date");
            return Ok(());
        }
        let ds = SynthDataset::new(g.spec.clone())?;
        clear_dir(dir)?;
        if g.materialize {
            ds.write(dir, "synthetic", Encoding::Binary)?;
        } else {
            write_text(&dir.join(SPEC_FILE), &spec_text)?;
            write_text(
                &dir.join(gwhi_core::synthgen::GROUND_TRUTH_FILE),
                &curves_to_csv(&ds.ground_truth()?),
            )?;
        }
        stamp::write(dir, &hash)
    }

    fn frequencies_of(&self, available: &[u32]) -> Result<Vec<u32>> {
        match &self.cfg.frequencies {
            None => Ok(available.to_vec()),
            Some(fs) => {
                if let Some(f) = fs.iter().find(|f| !available.contains(f)) {
                    return Err(Error::validation(format!(
                        "frequency {f} kHz is not available (have {available:?})"
                    )));
                }
                let mut fs = fs.clone();
                fs.sort_unstable();
                fs.dedup();
                Ok(fs)
            }
        }
    }

    pub fn extract(&self) -> Result<()> {
        let (ds, fingerprint) = Dataset::open(&self.cfg.dataset)?;
        let freqs = self.frequencies_of(&ds.source().layout().frequencies)?;
        let dir = self.features_dir();
        let hash = stamp::digest([
            "extract".to_string(),
            fingerprint,
            toml::to_string(&self.cfg.features).expect("serializes"),
            format!("{freqs:?}"),
        ]);
        if stamp::is_current(&dir, &hash) {
            info!("extract: up to date");
            return Ok(());
        }
        let tensor = self
            .pool
            .install(|| extract_all(ds.source(), &self.cfg.features, &freqs))?;
        clear_dir(&dir)?;
        tensor.write(&dir)?;
        let mut flags = tensor.flags.join("\n");
        if !flags.is_empty() {
            flags.push('\n');
        }
        write_text(&dir.join("flags.txt"), &flags)?;
        stamp::write(&dir, &hash)
    }

    fn load_features(&self) -> Result<(FeatureTensor, String)> {
        let dir = self.features_dir();
        let hash = require_stamp(&dir, "extract")?;
        Ok((FeatureTensor::read(&dir)?, hash))
    }

    pub fn rank(&self) -> Result<()> {
        let feat_hash = require_stamp(&self.features_dir(), "extract")?;
        let dir = self.rank_dir();
        let hash = stamp::digest([
            "rank".to_string(),
            feat_hash,
            toml::to_string(&self.cfg.criteria).expect("serializes"),
            format!("{:?}", self.cfg.time_axis),
        ]);
        if stamp::is_current(&dir, &hash) {
            info!("rank: up to date");
            return Ok(());
        }
        let (tensor, _) = self.load_features()?;
        let table = rank_and_select(&tensor, &self.cfg.criteria, self.cfg.time_axis)?;
        let selection = Selection {
            benchmark: table.benchmark,
            selected: SpMethod::ALL
                .into_iter()
                .map(|m| (m.to_string(), table.selected_columns(Some(m))))
                .collect(),
        };
        clear_dir(&dir)?;
        write_text(&dir.join(RANKING_FILE), &table.to_text())?;
        write_text(
            &dir.join(SELECTION_FILE),
            &toml::to_string(&selection).expect("selection serializes"),
        )?;
        stamp::write(&dir, &hash)
    }

    /// Feature columns used for training, and a note when the method had
    /// no selected feature and all of its features are used instead.
    fn columns(&self, tensor: &FeatureTensor) -> Result<(Vec<usize>, Option<String>)> {
        let path = self.rank_dir().join(SELECTION_FILE);
        let text = read_text(&path, "rank")?;
        let sel: Selection = toml::from_str(&text).map_err(|e| gwhi_core::Error::parse(&path, e.to_string()))?;
        let sp = self.cfg.sp_method;
        match sel.selected.get(sp.as_str()) {
            Some(cols) if !cols.is_empty() => Ok((cols.clone(), None)),
            _ => {
                let note = format!("no {sp} feature passed the benchmark; using all {sp} features");
                warn!("{note}");
                Ok((tensor.registry.method_range(sp).collect(), Some(note)))
            }
        }
    }

    fn folds(&self, ids: &[u32]) -> Result<Vec<Fold>> {
        let plan = build_folds(ids)?;
        match &self.cfg.folds {
            None => Ok(plan.folds),
            Some(tests) => {
                let mut tests = tests.clone();
                tests.sort_unstable();
                tests.dedup();
                tests
                    .iter()
                    .map(|t| {
                        plan.fold_for_test(*t)
                            .cloned()
                            .ok_or_else(|| Error::validation(format!("no specimen {t} to hold out (have {ids:?})")))
                    })
                    .collect()
            }
        }
    }

    fn base_hyperparams(&self) -> ModelHyperparams {
        match self.cfg.model {
            ModelKind::DeepSad => ModelHyperparams::DeepSad(self.cfg.deepsad.clone()),
            ModelKind::DtcVae => ModelHyperparams::DtcVae(self.cfg.dtcvae.clone()),
        }
    }

    /// Fold/frequency layout shared by the stages after rank.
    fn plan(&self, tensor: &FeatureTensor) -> Result<(Vec<u32>, Vec<Fold>)> {
        let freqs = self.frequencies_of(&tensor.frequencies)?;
        let folds = self.folds(&tensor.specimen_ids())?;
        Ok((freqs, folds))
    }

    pub fn train(&self) -> Result<()> {
        let rank_hash = require_stamp(&self.rank_dir(), "rank")?;
        let (tensor, _) = self.load_features()?;
        let (freqs, folds) = self.plan(&tensor)?;
        let (cols, note) = self.columns(&tensor)?;
        let series: BTreeMap<u32, Vec<SpecimenSeries>> = freqs
            .iter()
            .map(|&f| Ok((f, tensor.all_series(Some(f))?.iter().map(|s| s.select(&cols)).collect())))
            .collect::<Result<_>>()?;
        let base = self.base_hyperparams();
        let group_key = |f: u32, fold: &Fold| {
            stamp::digest([
                "train".to_string(),
                rank_hash.clone(),
                self.cfg.run_label(),
                f.to_string(),
                format!("{fold:?}"),
                format!("{cols:?}"),
                format!("{:?}", self.cfg.time_axis),
            ])
        };

        let groups: Vec<(u32, &Fold)> = freqs
            .iter()
            .flat_map(|&f| folds.iter().map(move |fold| (f, fold)))
            .collect();
        let hps: Vec<ModelHyperparams> = if self.cfg.hyperopt.enabled() {
            self.pool.install(|| {
                groups
                    .par_iter()
                    .map(|&(f, fold)| self.tune(&base, &series[&f], fold, f, &group_key(f, fold)))
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            vec![base.scaled(&self.cfg); groups.len()]
        };

        let jobs: Vec<(u32, &Fold, &ModelHyperparams, u64)> = groups
            .iter()
            .zip(&hps)
            .flat_map(|(&(f, fold), hp)| self.cfg.seeds.iter().map(move |&s| (f, fold, hp, s)))
            .collect();
        let hashes = self.pool.install(|| {
            jobs.par_iter()
                .map(|&(f, fold, hp, seed)| {
                    let hash = stamp::digest([group_key(f, fold), hp.to_toml(), seed.to_string()]);
                    self.train_job(&series[&f], fold, f, hp, seed, &hash)?;
                    Ok(hash)
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let dir = self.train_dir();
        write_text(&dir.join("notes.txt"), &note.map(|n| n + "\n").unwrap_or_default())?;
        stamp::write(&dir, &stamp::digest(&hashes))
    }

    fn train_job(
        &self,
        series: &[SpecimenSeries],
        fold: &Fold,
        freq: u32,
        hp: &ModelHyperparams,
        seed: u64,
        hash: &str,
    ) -> Result<()> {
        let dir = self.job_dir(freq, fold.test, seed);
        if stamp::is_current(&dir, hash) {
            return Ok(());
        }
        let train: Vec<SpecimenSeries> = series
            .iter()
            .filter(|s| fold.train.contains(&s.specimen_id))
            .cloned()
            .collect();
        let model = hp.train(&train, self.cfg.time_axis, seed)?;
        for flag in &model.flags {
            warn!("{freq} kHz, fold {}, seed {seed}: {flag}", fold.test);
        }
        let curves = series
            .iter()
            .map(|s| model.infer(s, HiSource::Frequency(freq)))
            .collect::<gwhi_models::Result<Vec<_>>>()?;
        clear_dir(&dir)?;
        write_text(&dir.join(MODEL_FILE), &model.to_json()?)?;
        write_text(&dir.join(CURVES_FILE), &curves_to_csv(&curves))?;
        info!("trained {} at {freq} kHz, fold {}, seed {seed}", self.cfg.model, fold.test);
        stamp::write(&dir, hash)
    }

    /// Bayesian optimisation of the hyperparameters of one (frequency, fold),
    /// scored by `F_all` of the training specimens under the first seed.
    fn tune(
        &self,
        base: &ModelHyperparams,
        series: &[SpecimenSeries],
        fold: &Fold,
        freq: u32,
        key: &str,
    ) -> Result<ModelHyperparams> {
        let dir = self.group_dir(freq, fold.test);
        let h = &self.cfg.hyperopt;
        let hash = stamp::digest([key.to_string(), base.to_toml(), format!("{h:?}"), self.cfg.epoch_scale.to_string()]);
        let trace = dir.join(TRACE_FILE);
        let trace_stamp = dir.join("hyperopt.stamp");
        if std::fs::read_to_string(&trace_stamp).ok().as_deref() != Some(hash.as_str()) && trace.exists() {
            std::fs::remove_file(&trace).map_err(|e| gwhi_core::Error::io(&trace, e))?;
        }
        write_text(&trace_stamp, &hash)?;
        let bo = BoConfig {
            n_init: h.n_init,
            n_iter: h.n_iter,
            seed: h.seed,
            ..BoConfig::default()
        };
        let train: Vec<SpecimenSeries> = series
            .iter()
            .filter(|s| fold.train.contains(&s.specimen_id))
            .cloned()
            .collect();
        let seed = self.cfg.seeds[0];
        let best = optimize(&base.search_space(), &bo, Some(&trace), |p| -> Result<f64> {
            let hp = base.with_point(p)?.scaled(&self.cfg);
            let model = hp.train(&train, self.cfg.time_axis, seed)?;
            let curves = train
                .iter()
                .map(|s| model.infer(s, HiSource::Frequency(freq)))
                .collect::<gwhi_models::Result<Vec<_>>>()?;
            Ok(fitness_all(&curves, &self.cfg.criteria)?)
        })?;
        info!(
            "hyperopt {freq} kHz, fold {}: best F_all {:.4} at {:?}",
            fold.test, best.best_score, best.best
        );
        let hp = base.with_point(&best.best)?;
        write_text(&dir.join("hyperparams.toml"), &hp.to_toml())?;
        Ok(hp.scaled(&self.cfg))
    }

    fn load_curves(&self, freq: u32, test: u32, seed: u64) -> Result<Vec<HiCurve>> {
        let path = self.job_dir(freq, test, seed).join(CURVES_FILE);
        Ok(curves_from_csv(&read_text(&path, "train")?)?)
    }

    pub fn fuse(&self) -> Result<()> {
        let train_hash = require_stamp(&self.train_dir(), "train")?;
        let dir = self.fuse_dir();
        let hash = stamp::digest([
            "fuse".to_string(),
            train_hash,
            toml::to_string(&self.cfg.criteria).expect("serializes"),
            self.cfg.fusion_weights_train_only.to_string(),
        ]);
        if stamp::is_current(&dir, &hash) {
            info!("fuse: up to date");
            return Ok(());
        }
        let (tensor, _) = self.load_features()?;
        let (freqs, folds) = self.plan(&tensor)?;
        clear_dir(&dir)?;
        for fold in &folds {
            let fdir = dir.join(format!("fold{}", fold.test));
            let scored = self.cfg.fusion_weights_train_only.then_some(fold.train.as_slice());
            let mut bundles = Vec::new();
            let mut per_seed: Vec<Vec<FrequencyBundle>> = vec![Vec::new(); self.cfg.seeds.len()];
            for &f in &freqs {
                let runs = self
                    .cfg
                    .seeds
                    .iter()
                    .map(|&s| self.load_curves(f, fold.test, s))
                    .collect::<Result<Vec<_>>>()?;
                for (k, curves) in runs.iter().enumerate() {
                    per_seed[k].push(FrequencyBundle::new(f, curves.clone(), &self.cfg.criteria, scored)?);
                }
                let averaged = seed_averaged(&runs)?;
                write_text(&fdir.join(format!("f{f}.csv")), &curves_to_csv(&averaged))?;
                bundles.push(FrequencyBundle::new(f, averaged, &self.cfg.criteria, scored)?);
            }
            let fusion = wae_fuse(&bundles)?;
            write_fusion(&fdir, FUSED_FILE, &fusion)?;
            for (k, b) in per_seed.iter().enumerate() {
                let seed = self.cfg.seeds[k];
                write_fusion(&fdir, &format!("fused_seed{seed}.csv"), &wae_fuse(b)?)?;
            }
        }
        stamp::write(&dir, &hash)
    }

    pub fn evaluate(&self) -> Result<()> {
        let fuse_hash = require_stamp(&self.fuse_dir(), "fuse")?;
        let dir = self.evaluate_dir();
        let hash = stamp::digest([
            "evaluate".to_string(),
            fuse_hash,
            toml::to_string(&self.cfg.criteria).expect("serializes"),
        ]);
        if stamp::is_current(&dir, &hash) {
            info!("evaluate: up to date");
            return Ok(());
        }
        let (tensor, _) = self.load_features()?;
        let (freqs, folds) = self.plan(&tensor)?;
        let evals = folds
            .iter()
            .map(|fold| self.evaluate_fold(fold, &freqs))
            .collect::<Result<Vec<_>>>()?;
        clear_dir(&dir)?;
        for e in &evals {
            write_text(&dir.join(format!("fold{}.toml", e.test)), &e.to_text())?;
        }
        stamp::write(&dir, &hash)
    }

    /// Criteria of one fold recomputed from the persisted curves.
    pub fn evaluate_fold(&self, fold: &Fold, freqs: &[u32]) -> Result<FoldEvaluation> {
        let fdir = self.fuse_dir().join(format!("fold{}", fold.test));
        let read = |name: &str| -> Result<Vec<HiCurve>> {
            Ok(curves_from_csv(&read_text(&fdir.join(name), "fuse")?)?)
        };
        let frequencies = freqs
            .iter()
            .map(|&f| {
                let per_seed = self
                    .cfg
                    .seeds
                    .iter()
                    .map(|&s| self.load_curves(f, fold.test, s))
                    .collect::<Result<Vec<_>>>()?;
                let averaged = read(&format!("f{f}.csv"))?;
                Ok(FrequencyReport {
                    freq_khz: f,
                    report: self.criteria_report(averaged, &per_seed, fold.test)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let per_seed = self
            .cfg
            .seeds
            .iter()
            .map(|s| read(&format!("fused_seed{s}.csv")))
            .collect::<Result<Vec<_>>>()?;
        let weights_path = fdir.join("weights.toml");
        let weights: WeightsFile = toml::from_str(&read_text(&weights_path, "fuse")?)
            .map_err(|e| gwhi_core::Error::parse(&weights_path, e.to_string()))?;
        let fused_per_seed = self.per_seed_values(&per_seed, fold.test)?;
        Ok(FoldEvaluation {
            test: fold.test,
            train: fold.train.clone(),
            frequencies,
            fusion_weights: weights.weights,
            fused: self.criteria_report(read(FUSED_FILE)?, &per_seed, fold.test)?,
            fused_per_seed,
        })
    }

    fn per_seed_values(&self, per_seed: &[Vec<HiCurve>], test: u32) -> Result<Vec<CriteriaValues>> {
        per_seed
            .iter()
            .map(|c| Ok(evaluate(&CurveSet::new(c.clone(), test)?, &self.cfg.criteria)?.0))
            .collect()
    }

    fn criteria_report(&self, averaged: Vec<HiCurve>, per_seed: &[Vec<HiCurve>], test: u32) -> Result<CriteriaReport> {
        let (values, flags) = evaluate(&CurveSet::new(averaged, test)?, &self.cfg.criteria)?;
        let seeds = self.per_seed_values(per_seed, test)?;
        Ok(CriteriaReport::new(values, &seeds, &self.cfg.criteria.weights, flags))
    }

    pub fn load_evaluations(&self) -> Result<Vec<FoldEvaluation>> {
        let dir = self.evaluate_dir();
        require_stamp(&dir, "evaluate")?;
        let (tensor, _) = self.load_features()?;
        let (_, folds) = self.plan(&tensor)?;
        folds
            .iter()
            .map(|f| {
                let path = dir.join(format!("fold{}.toml", f.test));
                FoldEvaluation::from_text(&read_text(&path, "evaluate")?, &path)
            })
            .collect()
    }

    pub fn report(&self) -> Result<()> {
        let eval_hash = require_stamp(&self.evaluate_dir(), "evaluate")?;
        let dir = self.report_dir();
        let hash = stamp::digest(["report", &eval_hash]);
        if stamp::is_current(&dir, &hash) {
            info!("report: up to date");
            return Ok(());
        }
        let evals = self.load_evaluations()?;
        let ranking = read_text(&self.rank_dir().join(RANKING_FILE), "rank")?;
        let notes = std::fs::read_to_string(self.train_dir().join("notes.txt")).unwrap_or_default();
        clear_dir(&dir)?;
        let summary = report::Summary::new(&self.cfg, evals);
        write_text(&dir.join("report.md"), &summary.markdown(&ranking, &notes))?;
        write_text(&dir.join("summary.toml"), &summary.to_text())?;

        let x_label = match self.cfg.time_axis {
            TimeAxis::Cycles => "cycles",
            TimeAxis::Timestep => "timestep",
        };
        for e in &summary.folds {
            let fdir = self.fuse_dir().join(format!("fold{}", e.test));
            let mut charts = vec![(FUSED_FILE.to_string(), "fused".to_string())];
            charts.extend(e.frequencies.iter().map(|f| (format!("f{}.csv", f.freq_khz), format!("{} kHz", f.freq_khz))));
            for (file, label) in charts {
                let text = read_text(&fdir.join(&file), "fuse")?;
                let curves = curves_from_csv(&text)?;
                let stem = format!("fold{}_{}", e.test, file.trim_end_matches(".csv"));
                write_text(&dir.join("curves").join(format!("{stem}.csv")), &text)?;
                let title = format!("{} {}, {label}, test specimen {}", self.cfg.model, self.cfg.sp_method, e.test);
                write_text(
                    &dir.join("plots").join(format!("{stem}.svg")),
                    &crate::plot::hi_chart(&title, x_label, &curves, Some(e.test)),
                )?;
            }
        }
        stamp::write(&dir, &hash)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsFile {
    weights: Vec<FusionWeight>,
}

fn write_fusion(dir: &Path, name: &str, fusion: &Fusion) -> Result<()> {
    write_text(&dir.join(name), &curves_to_csv(&fusion.curves))?;
    if name == FUSED_FILE {
        write_text(&dir.join("weights.txt"), &fusion.report())?;
        let w = WeightsFile {
            weights: fusion.weights.clone(),
        };
        write_text(&dir.join("weights.toml"), &toml::to_string(&w).expect("weights serialize"))?;
    }
    Ok(())
}

/// Per-specimen average over seeds; runs list curves in the same specimen order.
fn seed_averaged(runs: &[Vec<HiCurve>]) -> Result<Vec<HiCurve>> {
    let first = runs.first().ok_or_else(|| Error::validation("no seeds"))?;
    first
        .iter()
        .map(|c| {
            let same: Vec<HiCurve> = runs
                .iter()
                .map(|r| {
                    r.iter()
                        .find(|x| x.specimen_id == c.specimen_id)
                        .cloned()
                        .ok_or_else(|| Error::validation(format!("seed run lacks specimen {}", c.specimen_id)))
                })
                .collect::<Result<_>>()?;
            Ok(seed_average(&same)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_parse_in_order() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("fit".parse::<Stage>().is_err());
        let mut v = vec![Stage::Report, Stage::Extract, Stage::Report];
        v.sort_unstable();
        v.dedup();
        assert_eq!(v, vec![Stage::Extract, Stage::Report]);
    }

    #[test]
    fn missing_dataset_names_generate() {
        let dir = tempfile::tempdir().unwrap();
        let err = Dataset::open(dir.path()).err().unwrap();
        assert!(err.to_string().contains("generate"));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn downstream_stage_without_upstream_fails_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::new(dir.path().join("data"), dir.path().join("out"));
        let p = Pipeline::new(cfg).unwrap();
        for (stage, upstream) in [
            (Stage::Rank, "extract"),
            (Stage::Train, "rank"),
            (Stage::Fuse, "train"),
            (Stage::Evaluate, "fuse"),
            (Stage::Report, "evaluate"),
        ] {
            let err = p.run(&[stage]).unwrap_err();
            assert!(
                matches!(&err, Error::MissingStage { stage: s, .. } if *s == upstream),
                "{stage}: {err}"
            );
        }
    }
}
