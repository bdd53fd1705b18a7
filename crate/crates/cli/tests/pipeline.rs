//! End-to-end pipeline behavior on a small synthetic dataset.

use std::path::Path;
use std::process::Command;

use gwhi_cli::config::GenerateConfig;
use gwhi_cli::pipeline::{Pipeline, FUSED_FILE, RANKING_FILE};
use gwhi_cli::report::Summary;
use gwhi_cli::{RunConfig, Stage};
use gwhi_core::criteria::{evaluate, CurveSet};
use gwhi_core::data::curves_from_csv;
use gwhi_core::synthgen::SynthSpec;

fn tiny_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(root.join("data"), root.join("out"));
    cfg.seeds = vec![0, 1];
    cfg.epoch_scale = 0.05;
    cfg.generate = Some(GenerateConfig {
        materialize: false,
        spec: SynthSpec {
            seed: 4,
            specimens: 3,
            min_timesteps: 10,
            max_timesteps: 12,
            paths: 3,
            frequencies: vec![100, 200],
            ..SynthSpec::default()
        },
    });
    cfg
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn report_matches_library_recomputation_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny_config(dir.path())).unwrap();
    p.run_all().unwrap();

    let report_dir = p.report_dir();
    let summary = Summary::from_text(&read(&report_dir.join("summary.toml"))).unwrap();
    assert_eq!(summary.folds.len(), 3);
    assert_eq!(summary.frequencies, vec![100, 200]);
    for fold in &summary.folds {
        let fdir = p.fuse_dir().join(format!("fold{}", fold.test));
        let fused = curves_from_csv(&read(&fdir.join(FUSED_FILE))).unwrap();
        let (values, _) = evaluate(&CurveSet::new(fused, fold.test).unwrap(), &p.config().criteria).unwrap();
        assert_eq!(values, fold.fused.values);
        for f in &fold.frequencies {
            let curves = curves_from_csv(&read(&fdir.join(format!("f{}.csv", f.freq_khz)))).unwrap();
            let (values, _) = evaluate(&CurveSet::new(curves, fold.test).unwrap(), &p.config().criteria).unwrap();
            assert_eq!(values, f.report.values);
        }
        assert_eq!(fold.fused.seeds, 2);
        let total: f64 = fold.fusion_weights.iter().map(|w| w.normalized).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    let md = read(&report_dir.join("report.md"));
    for needle in ["## F_all", "## F_test", " ± ", "## Fusion weights", "## Feature ranking"] {
        assert!(md.contains(needle), "report lacks {needle}");
    }
    assert!(report_dir.join("plots").join("fold1_fused.svg").exists());
    assert!(report_dir.join("curves").join("fold1_f100.csv").exists());

    let before = read(&report_dir.join("report.md"));
    let eval_before = read(&p.evaluate_dir().join("fold2.toml"));
    std::fs::remove_dir_all(p.evaluate_dir()).unwrap();
    std::fs::remove_dir_all(&report_dir).unwrap();
    p.run(&[Stage::Evaluate, Stage::Report]).unwrap();
    assert_eq!(read(&report_dir.join("report.md")), before);
    assert_eq!(read(&p.evaluate_dir().join("fold2.toml")), eval_before);

    let ranking = read(&p.rank_dir().join(RANKING_FILE));
    assert!(ranking.starts_with("benchmark F_all = "));
    let header = ranking.lines().find(|l| l.starts_with("method")).unwrap();
    assert!(header.contains("before") && header.contains("after") && header.contains("mean"));
    for m in ["raw", "fft", "ht", "emd", "stft"] {
        assert!(ranking.lines().any(|l| l.split_whitespace().next() == Some(m)), "{m}");
    }
}

#[test]
fn selected_subsets_only_train_what_is_asked() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.frequencies = Some(vec![200]);
    cfg.folds = Some(vec![2]);
    cfg.seeds = vec![3];
    let p = Pipeline::new(cfg).unwrap();
    p.run_all().unwrap();
    let train = p.train_dir();
    assert!(p.job_dir(200, 2, 3).join("curves.csv").exists());
    assert!(!train.join("f100").exists());
    assert!(!train.join("f200").join("fold1").exists());
    let summary = Summary::from_text(&read(&p.report_dir().join("summary.toml"))).unwrap();
    assert_eq!(summary.folds.len(), 1);
    assert_eq!(summary.folds[0].test, 2);
}

fn gwhi(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_gwhi")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let config = path.to_str().unwrap();

    let out = gwhi(&["--config", config, "--stage", "train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rank"));

    assert_eq!(gwhi(&["--config", config, "--stage", "polish"]).status.code(), Some(1));
    assert_eq!(gwhi(&["--config", config, "--sp", "wavelet"]).status.code(), Some(1));
    let missing = dir.path().join("absent.toml");
    assert_ne!(gwhi(&["--config", missing.to_str().unwrap()]).status.code(), Some(0));

    let out = gwhi(&["--config", config, "--stage", "generate,extract"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out").join("features").exists());
}
