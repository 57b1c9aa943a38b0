mod common;

use std::fs;

use koap::baselines::Method;
use koap::harness::run_matrix;

#[test]
fn matrix_writes_one_row_per_cell_and_resumes() {
    let cfg = common::tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let summary = run_matrix(&cfg, dir.path()).unwrap();
    assert!(summary.failures.is_empty(), "{:?}", summary.failures);
    assert_eq!(summary.rows.len(), 4);
    for row in &summary.rows {
        assert_eq!(row.seeds, 3);
        assert!((0.0..=1.0).contains(&row.mean));
    }

    let csv_path = dir.path().join("metrics.csv");
    let first = fs::read_to_string(&csv_path).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines[0], "method,level,obs_fraction,seed,success");
    assert_eq!(lines.len(), 1 + 12);
    assert!(dir.path().join("summary.json").exists());

    // Drop one finished cell: the rerun recomputes it and reproduces the table.
    let cells: Vec<_> = fs::read_dir(dir.path().join("cells"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(cells.len(), 12);
    let victim = cells.iter().find(|p| p.to_string_lossy().contains("dd_")).unwrap();
    fs::remove_file(victim).unwrap();
    run_matrix(&cfg, dir.path()).unwrap();
    assert!(victim.exists());
    assert_eq!(fs::read_to_string(&csv_path).unwrap(), first);

    let koap = summary.get(Method::Koap, 0.05, 1.0).unwrap();
    assert_eq!(koap.method, Method::Koap);
}

#[test]
fn matrix_is_deterministic_across_directories() {
    let mut cfg = common::tiny_config();
    cfg.rollout.seeds = vec![4];
    cfg.matrix.levels = vec![0.05];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_matrix(&cfg, a.path()).unwrap();
    run_matrix(&cfg, b.path()).unwrap();
    assert_eq!(
        fs::read(a.path().join("metrics.csv")).unwrap(),
        fs::read(b.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn invalid_config_is_rejected_before_any_work() {
    let mut cfg = common::tiny_config();
    cfg.rollout.horizon = 5;
    let dir = tempfile::tempdir().unwrap();
    assert!(run_matrix(&cfg, dir.path()).is_err());
    assert!(!dir.path().join("metrics.csv").exists());
}
