use std::fs;
use std::path::Path;

use histofuse::classify::ModelKind;
use histofuse::deepfeat::fixture::{write_fixture_model, FixtureSpec};
use histofuse::pipeline::{
    eval_stage, run_experiment, sweep_stage, toy::write_toy_corpus, toy_config, ExperimentConfig, Manifest, RunDir,
    BASELINE_METHOD,
};
use histofuse::{Error, TrialHistory};

fn toy_setup(root: &Path, spec: &FixtureSpec) -> ExperimentConfig {
    write_toy_corpus(&root.join("data"), 40, 256, 11).unwrap();
    write_fixture_model(&root.join("fixture.onnx"), spec).unwrap();
    toy_config(&root.join("data"), &root.join("fixture.onnx"), &root.join("out"))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn toy_run_artifacts_and_manifest_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_setup(dir.path(), &FixtureSpec::default());
    cfg.svg = true;
    let summary = run_experiment(&cfg).unwrap();
    let rd = RunDir::new(&cfg.output);

    // one clean row per (model, kind), then one per level
    let report = csv_rows(&rd.report());
    assert_eq!(report.iter().filter(|r| r[2].is_empty()).count(), 10);
    assert_eq!(report.len(), 10 + 30);
    assert_eq!(summary.report.len(), 40);

    // 5 models × 2 methods × 3 levels, plus the baseline at each level
    let sweep = csv_rows(&rd.sweep());
    assert_eq!(sweep.iter().filter(|r| r[0] != BASELINE_METHOD).count(), 30);
    assert_eq!(sweep.iter().filter(|r| r[0] == BASELINE_METHOD).count(), 3);

    assert!(!rd.partial().exists());
    for model in ModelKind::ALL {
        assert!(rd.history(histofuse::FeatureKind::Deep, model).is_file());
        assert!(rd.model(histofuse::FeatureKind::Fused, model).is_file());
        assert!(rd.roc_dir(histofuse::FeatureKind::Deep).join(format!("roc_{model}_lung_n.csv")).is_file());
        assert!(rd.roc_dir(histofuse::FeatureKind::Deep).join(format!("roc_{model}_lung_n.svg")).is_file());
    }

    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(rd.manifest()).unwrap()).unwrap();
    assert_eq!(manifest.training, "clean");
    assert_eq!(manifest.inputs.keys().filter(|k| k.starts_with("dataset/")).count(), 200);
    assert!(manifest.outputs.contains_key("report.csv"));
    assert!(manifest.outputs.contains_key("features/fused/train.hfv"));

    // re-running from the manifest alone reproduces every output byte
    let mut again = ExperimentConfig::load(&rd.manifest()).unwrap();
    again.output = dir.path().join("again");
    run_experiment(&again).unwrap();
    let rd2 = RunDir::new(&again.output);
    assert_eq!(fs::read(rd.report()).unwrap(), fs::read(rd2.report()).unwrap());
    assert_eq!(fs::read(rd.sweep()).unwrap(), fs::read(rd2.sweep()).unwrap());
    let m2: Manifest = serde_json::from_str(&fs::read_to_string(rd2.manifest()).unwrap()).unwrap();
    assert_eq!(manifest.outputs.keys().collect::<Vec<_>>(), m2.outputs.keys().collect::<Vec<_>>());
    for (path, hash) in &manifest.outputs {
        if path.starts_with("histories/") {
            // trial wall times are measurements; everything else must agree
            let strip = |root: &Path| {
                let h = TrialHistory::from_json_lines(&fs::read_to_string(root.join(path)).unwrap()).unwrap();
                h.trials.into_iter().map(|t| (t.point, t.hp, t.value, t.error)).collect::<Vec<_>>()
            };
            assert_eq!(strip(rd.root()), strip(rd2.root()), "{path}");
        } else {
            assert_eq!(hash, &m2.outputs[path], "{path}");
        }
    }

    // a near-noiseless sweep matches the clean accuracies
    let high = sweep_stage(&cfg, &rd, &[100.0]).unwrap();
    for clean in summary.report.iter().filter(|r| r.snr_db.is_none()) {
        let noisy = high
            .rows
            .iter()
            .find(|r| r.method == clean.feature_kind && r.model == clean.model)
            .unwrap();
        assert!(
            (noisy.accuracy - clean.accuracy).abs() * 100.0 <= 1.0,
            "{}/{}: {} vs {}",
            clean.feature_kind,
            clean.model,
            noisy.accuracy,
            clean.accuracy
        );
    }

    // test metrics never touch training data
    let before = eval_stage(&cfg, &rd).unwrap();
    for kind in &cfg.kinds {
        fs::remove_file(rd.features(*kind, histofuse::pipeline::Part::Train)).unwrap();
    }
    let split: histofuse::DatasetSplit = histofuse::DatasetSplit::load(&rd.split()).unwrap();
    for id in &split.train {
        fs::remove_file(cfg.dataset.join(id)).unwrap();
    }
    assert_eq!(eval_stage(&cfg, &rd).unwrap(), before);
}

#[test]
fn missing_backend_fails_before_any_compute() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_setup(dir.path(), &FixtureSpec::default());
    cfg.backend.model = dir.path().join("nope.onnx");
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert!(err.to_string().contains("nope.onnx"));
    assert!(!cfg.output.exists());
}

#[test]
fn stage_errors_name_the_stage_and_leave_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), &FixtureSpec::default());
    fs::write(cfg.dataset.join("lung_n").join("broken.png"), b"not a png").unwrap();
    let err = run_experiment(&cfg).unwrap_err().to_string();
    assert!(err.contains("stage `ingest`"), "{err}");
    assert!(err.contains("broken.png"), "{err}");
    let marker = RunDir::new(&cfg.output).partial();
    assert!(fs::read_to_string(marker).unwrap().contains("broken.png"));
}

#[test]
fn headless_backend_skips_the_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = FixtureSpec {
        head: None,
        ..FixtureSpec::default()
    };
    let mut cfg = toy_setup(dir.path(), &spec);
    cfg.models = vec![ModelKind::Knn];
    cfg.kinds = vec![histofuse::FeatureKind::Deep];
    cfg.snr.levels = vec![40.0];
    let s = run_experiment(&cfg).unwrap();
    assert_eq!(s.sweep.len(), 1);
    assert!(s.sweep.iter().all(|r| r.method != BASELINE_METHOD));
}

#[test]
fn hog_only_retuned_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy_setup(dir.path(), &FixtureSpec::default());
    cfg.kinds = vec![histofuse::FeatureKind::Hog];
    cfg.models = vec![ModelKind::Tree, ModelKind::Knn];
    cfg.snr.levels = vec![35.0];
    cfg.retune_per_level = true;
    let s = run_experiment(&cfg).unwrap();
    // the fixture exists, so the baseline is still swept
    assert_eq!(s.sweep.len(), 3);
    let rd = RunDir::new(&cfg.output);
    assert!(rd.root().join("histories/snr_35/hog/knn.jsonl").is_file());
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(rd.manifest()).unwrap()).unwrap();
    assert_eq!(manifest.training, "retuned-per-level");
}

#[test]
fn empty_levels_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_setup(dir.path(), &FixtureSpec::default());
    let rd = RunDir::new(&cfg.output);
    assert!(sweep_stage(&cfg, &rd, &[]).is_err());
}
