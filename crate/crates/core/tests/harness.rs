//! Experiment runner contracts: row counts, resumability, determinism,
//! schemas and the CLI.

use std::fs;
use std::path::Path;
use std::process::Command;

use icl_lab::harness::{
    metrics_columns, run_failure_case, run_lds, run_prior_init, run_sweep, ExperimentConfig, PRIOR_COLUMNS,
};

const TINY: &str = "
K = 2
N = 4
T = 24
T_p = 12
steps = 12
seeds = 0
d_model = 8
d_ff = 16
window = 0
eval_topics = 2
eval_prompts = 4
first_level_sequences = 4
sigma_sequences = 1
l_records = 2
N_prime = 1
save_steps = 5
workers = 2
";

fn tiny(out: &Path, extra: &str) -> ExperimentConfig {
    let base = ExperimentConfig::parse(TINY, ExperimentConfig::sweep()).unwrap();
    let mut c = ExperimentConfig::parse(extra, base).unwrap();
    c.out = out.to_path_buf();
    c
}

fn rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path).unwrap().headers().unwrap().iter().map(str::to_string).collect()
}

#[test]
fn one_point_grid_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_sweep(&tiny(dir.path(), "")).unwrap();
    assert_eq!((s.rows_written, s.error_rows), (1, 0));
    let text = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn grid_cardinality_and_idempotent_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "K = 2, 5\nN = 20, 100\nT = 12\nT_p = 6\nseeds = 0, 1, 2\nsteps = 2\n");
    let s = run_sweep(&cfg).unwrap();
    assert_eq!((s.runs, s.rows_written, s.error_rows), (12, 12, 0));
    let before = fs::read(dir.path().join("metrics.csv")).unwrap();
    let again = run_sweep(&cfg).unwrap();
    assert_eq!((again.skipped, again.rows_written), (12, 0));
    assert_eq!(fs::read(dir.path().join("metrics.csv")).unwrap(), before);
}

#[test]
fn reruns_reproduce_every_column() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let extra = "T_p = 6, 12\nbeta = 1000\n";
    run_sweep(&tiny(a.path(), extra)).unwrap();
    run_sweep(&tiny(b.path(), &format!("{extra}workers = 1\n"))).unwrap();
    assert_eq!(
        fs::read(a.path().join("metrics.csv")).unwrap(),
        fs::read(b.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn decomposition_closes_on_rows() {
    let dir = tempfile::tempdir().unwrap();
    run_sweep(&tiny(dir.path(), "T_p = 4, 12\n")).unwrap();
    let path = dir.path().join("metrics.csv");
    let h = header(&path);
    let col = |r: &csv::StringRecord, name: &str| -> f64 { r[h.iter().position(|c| c == name).unwrap()].parse().unwrap() };
    for r in rows(&path) {
        let parts: f64 = ["part_1", "part_2", "part_3", "part_4"].iter().map(|p| col(&r, p)).sum();
        assert!((parts - col(&r, "population")).abs() <= 1e-12);
        assert!(col(&r, "first_level") <= col(&r, "t1_detailed"));
    }
}

#[test]
fn split_train_and_eval_match_sweep() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_sweep(&tiny(a.path(), "")).unwrap();
    let cfg = tiny(b.path(), "");
    icl_lab::harness::train_only(&cfg).unwrap();
    icl_lab::harness::evaluate_only(&cfg).unwrap();
    assert_eq!(
        fs::read(a.path().join("metrics.csv")).unwrap(),
        fs::read(b.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn diverging_run_becomes_error_row() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_sweep(&tiny(dir.path(), "lr = 1e30\nwarmup = 0\nseeds = 0, 1\n")).unwrap();
    assert_eq!((s.rows_written, s.error_rows), (2, 2));
    let path = dir.path().join("metrics.csv");
    let h = header(&path);
    let err = h.iter().position(|c| c == "error").unwrap();
    assert!(rows(&path).iter().all(|r| r[err].contains("diverged")));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let file = tempfile::NamedTempFile::new().unwrap();
    let cfg = tiny(&file.path().join("sub"), "");
    assert!(matches!(run_sweep(&cfg), Err(icl_lab::LabError::Io(_))));
}

#[test]
fn failure_case_has_control_and_chance() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_failure_case(&tiny(dir.path(), "")).unwrap();
    assert_eq!(s.rows_written, 2);
    let path = dir.path().join("metrics.csv");
    let h = header(&path);
    let at = |name: &str| h.iter().position(|c| c == name).unwrap();
    let rs = rows(&path);
    assert_eq!(&rs[0][at("experiment")], "failure");
    assert_eq!(&rs[0][at("generator")], "random_transition");
    assert_eq!(&rs[1][at("experiment")], "failure_control");
    assert!(rs.iter().all(|r| &r[at("chance")] == "0.02"));
}

#[test]
fn prior_init_censors_and_transfers_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "K = 4\nprior_holdout = 1\nlayers = 1\nsmall_layers = 1\nsmall_d_model = 8\nsmall_steps = 6\ntau = 0\n";
    let s = run_prior_init(&tiny(dir.path(), extra)).unwrap();
    assert_eq!((s.rows_written, s.error_rows), (2, 0));
    let path = dir.path().join("prior_init.csv");
    assert_eq!(header(&path), PRIOR_COLUMNS);
    let at = |name: &str| PRIOR_COLUMNS.iter().position(|c| *c == name).unwrap();
    let rs = rows(&path);
    for r in &rs {
        assert_eq!((&r[at("steps_to_threshold")], &r[at("censored")]), ("12", "true"));
    }
    let prior = rs.iter().find(|r| &r[at("arm")] == "prior").unwrap();
    assert_eq!(&prior[at("initial_loss")], &prior[at("prior_model_loss")]);
}

#[test]
fn lds_rows_share_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse("N = 4\nsteps = 50\nseeds = 0, 1\n", ExperimentConfig::lds()).unwrap();
    cfg.out = dir.path().to_path_buf();
    run_lds(&cfg).unwrap();
    let path = dir.path().join("metrics.csv");
    assert_eq!(header(&path), metrics_columns());
    let at = |name: &str| metrics_columns().iter().position(|c| *c == name).unwrap();
    for r in rows(&path) {
        assert_eq!(&r[at("loss_kind")], "mse");
        assert!(r[at("population_last")].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn manifest_hashes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "");
    run_sweep(&cfg).unwrap();
    let path = icl_lab::harness::write_manifest("sweep", &cfg).unwrap();
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    let arts = m["artifacts"].as_object().unwrap();
    assert!(arts.contains_key("metrics.csv"));
    assert!(arts.keys().any(|k| k.starts_with("checkpoints/")));
    assert_eq!(m["config_text"].as_str().unwrap(), cfg.to_text());
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_icl-lab"))
}

#[test]
fn cli_reports_error_rows_in_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, format!("{TINY}lr = 1e30\nwarmup = 0\n")).unwrap();
    let out = bin()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap(), "--seeds", "3,4"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("o/manifest.json").exists());
}

#[test]
fn cli_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    fs::write(&cfg, "K = 2\nlearning_rate = 0.1\n").unwrap();
    let out = bin().args(["sweep", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key `learning_rate`"));
}

#[test]
fn cli_bound_prints_terms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("b.txt");
    fs::write(
        &cfg,
        "K = 10\nK_prime = 2\nN = 100\nN_prime = 10\nT = 256\nT_p = 64\nT_prime = 5000\nbeta = 1\nS = 0.5\nL = 1\nsigma = 1\neps_opt = 0\nN_param = 5000\n",
    )
    .unwrap();
    let out = bin().args(["bound", "--config", cfg.to_str().unwrap()]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("term,value\n"));
    assert!(text.lines().any(|l| l.starts_with("t1_detailed,")));
    assert!(text.lines().any(|l| l == "t1_general,"));
}
