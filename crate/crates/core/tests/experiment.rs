use std::fs;
use std::path::Path;

use dgrm::experiment::{audit, metrics_path, run_experiment, ExperimentSpec, RunOptions};
use dgrm::metrics::{read_metrics, Phase};

fn opts(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        workers: Some(2),
        resume: false,
        audit: true,
    }
}

fn chain_spec(extra: &str) -> ExperimentSpec {
    ExperimentSpec::from_json(&format!(
        r#"{{"env": {{"id": "chain", "config": {{"agents": 3}}}}, "algorithm": "tabular",
            "kappas": [0, 1], "seeds": [4, 5, 6], "episodes": 30, "eval_episodes": 5,
            "record_wall_time": false{extra}}}"#
    ))
    .unwrap()
}

fn listing(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn two_kappas_three_seeds_give_six_metrics_files_and_one_summary() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&chain_spec(""), &opts(dir.path())).unwrap();
    assert_eq!(report.cells, 6);
    let names = listing(dir.path());
    assert_eq!(names.iter().filter(|n| n.starts_with("metrics_")).count(), 6);
    assert_eq!(names.iter().filter(|n| *n == "summary.json").count(), 1);
    assert!(names.contains(&"bounds.json".to_string()));
    assert!(!names.iter().any(|n| n.ends_with(".ckpt") || n.ends_with(".tmp")));
    let rows = read_metrics(&metrics_path(dir.path(), 1, 5)).unwrap();
    assert_eq!(rows.iter().filter(|r| r.phase == Phase::Train).count(), 30);
    assert!(rows.iter().all(|r| r.kappa == 1 && r.seed == 5 && r.agent_returns.len() == 3));
    assert_eq!(report.bounds.unwrap().violations, 0);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let spec = chain_spec(r#", "eval_every": 10"#);
    run_experiment(&spec, &opts(a.path())).unwrap();
    let mut o = opts(b.path());
    o.workers = Some(1);
    run_experiment(&spec, &o).unwrap();
    for name in listing(a.path()) {
        assert_eq!(
            fs::read(a.path().join(&name)).unwrap(),
            fs::read(b.path().join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn interrupted_cell_resumes_from_its_checkpoint() {
    let reference = tempfile::tempdir().unwrap();
    let spec = chain_spec(r#", "checkpoint_every": 10, "eval_every": 10"#);
    run_experiment(&spec, &opts(reference.path())).unwrap();

    // A directory squatting on one metrics path makes that cell fail at the
    // final write, after its checkpoints were taken.
    let dir = tempfile::tempdir().unwrap();
    let blocked = metrics_path(dir.path(), 0, 4);
    fs::create_dir(&blocked).unwrap();
    fs::write(blocked.join("keep"), "x").unwrap();
    assert!(run_experiment(&spec, &opts(dir.path())).is_err());
    assert!(dir.path().join("cell_k0_s4.ckpt").exists());
    fs::remove_dir_all(&blocked).unwrap();

    let mut o = opts(dir.path());
    o.resume = true;
    let report = run_experiment(&spec, &o).unwrap();
    assert_eq!(report.reused, 5);
    for name in listing(reference.path()) {
        assert_eq!(
            fs::read(reference.path().join(&name)).unwrap(),
            fs::read(dir.path().join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn deep_cells_resume_too() {
    let spec = ExperimentSpec::from_json(
        r#"{"env": {"id": "chain", "config": {"agents": 2}}, "algorithm": "deep", "kappas": [1], "seeds": [3],
            "episodes": 12, "eval_episodes": 2, "checkpoint_every": 5, "record_wall_time": false,
            "net": {"actor_hidden": [8], "critic_hidden": [8], "clip_norm": 10.0}}"#,
    )
    .unwrap();
    let reference = tempfile::tempdir().unwrap();
    run_experiment(&spec, &opts(reference.path())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocked = metrics_path(dir.path(), 1, 3);
    fs::create_dir_all(blocked.join("x")).unwrap();
    assert!(run_experiment(&spec, &opts(dir.path())).is_err());
    fs::remove_dir_all(&blocked).unwrap();
    let mut o = opts(dir.path());
    o.resume = true;
    run_experiment(&spec, &o).unwrap();
    assert_eq!(
        fs::read(metrics_path(reference.path(), 1, 3)).unwrap(),
        fs::read(metrics_path(dir.path(), 1, 3)).unwrap()
    );
}

#[test]
fn audit_catches_edited_csv() {
    let dir = tempfile::tempdir().unwrap();
    let spec = chain_spec("");
    let report = run_experiment(&spec, &opts(dir.path())).unwrap();
    audit(&spec, dir.path(), &report.summary).unwrap();
    let path = metrics_path(dir.path(), 0, 6);
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.last_mut().unwrap();
    let mut cols: Vec<String> = last.split(',').map(String::from).collect();
    cols[4] = "123.5".into();
    *last = cols.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert!(audit(&spec, dir.path(), &report.summary).is_err());
}

#[test]
fn bang_bang_reports_per_region_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::from_json(
        r#"{"env": {"id": "pandemic"}, "algorithm": "baseline-bang-bang", "seeds": [0], "eval_episodes": 2}"#,
    )
    .unwrap();
    let report = run_experiment(&spec, &opts(dir.path())).unwrap();
    let k = report.summary.kappa(0).unwrap();
    assert_eq!(k.agent_means.len(), 20);
    let mean_of_regions = k.agent_means.iter().sum::<f64>() / 20.0;
    assert!((mean_of_regions - k.mean).abs() < 1e-9);
    assert!(report.bounds.is_none());
}

#[test]
fn random_baseline_runs_on_every_env() {
    for id in ["uav", "pandemic", "chain"] {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec::from_json(&format!(
            r#"{{"env": {{"id": "{id}"}}, "algorithm": "random", "seeds": [0, 1], "eval_episodes": 3}}"#
        ))
        .unwrap();
        let report = run_experiment(&spec, &opts(dir.path())).unwrap();
        assert_eq!(report.cells, 2, "{id}");
        assert!(report.summary.kappa(0).unwrap().mean.is_finite());
    }
}

#[test]
fn shipped_specs_load_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let spec = ExperimentSpec::load(&path).unwrap();
            spec.validate().unwrap();
            dgrm::experiment::BuiltEnv::build(&spec.env).unwrap();
            count += 1;
        }
    }
    assert!(count >= 4);
}

#[test]
fn shipped_env_configs_match_defaults() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/envs");
    let p: dgrm::envs::pandemic::PandemicEnvConfig =
        serde_json::from_str(&fs::read_to_string(root.join("pandemic.json")).unwrap()).unwrap();
    assert_eq!(p, Default::default());
    let u: dgrm::envs::uav::UavEnvConfig =
        serde_json::from_str(&fs::read_to_string(root.join("uav.json")).unwrap()).unwrap();
    assert_eq!(u, Default::default());
}
