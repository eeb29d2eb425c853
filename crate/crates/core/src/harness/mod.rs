//! Experiment orchestration: seeded grids, the canonical experiments and
//! their CSV/JSON outputs.
//!
//! Every experiment writes into `config.out`:
//! `metrics.csv` (or `prior_init.csv`), `trajectory_<run_id>.csv`,
//! `checkpoints/<run_id>_*.ckpt` and `manifest.json`. Rows are keyed by
//! `run_id`; rerunning skips runs that already have rows.

mod config;
mod lds;
mod manifest;
mod prior;
mod table;
mod token;

use std::path::PathBuf;

pub use config::{ArchKind, ExperimentConfig, Generator};
pub use lds::{lds_data, run_lds, LdsData};
pub use manifest::write_manifest;
pub use prior::{run_prior_init, steps_to_threshold, PRIOR_COLUMNS};
pub use table::{count_error_rows, run_pool, Row, Table};
pub use token::{
    build_hmm_data, checkpoint_path, evaluate_only, generate_only, load_trained, run_failure_case, run_sweep, train_hmm, train_only,
    HmmData, Trained,
};

use crate::metrics::LossReport;

/// One grid point and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RunKey {
    pub experiment: String,
    pub generator: Generator,
    pub k: usize,
    pub n: usize,
    pub t: usize,
    pub v: usize,
    pub h: usize,
    pub beta: f64,
    pub steps: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn id(&self) -> String {
        format!(
            "{}_K{}_N{}_T{}_V{}_h{}_b{}_st{}_s{}",
            self.experiment, self.k, self.n, self.t, self.v, self.h, self.beta, self.steps, self.seed
        )
    }
}

/// Grid points in config order with the seed varying fastest.
pub fn grid(cfg: &ExperimentConfig, experiment: &str, generator: Generator) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &k in &cfg.k {
        for &n in &cfg.n {
            for &t in &cfg.t {
                for &v in &cfg.v {
                    for &h in &cfg.h {
                        for &beta in &cfg.beta {
                            for &steps in &cfg.steps {
                                for &seed in &cfg.seeds {
                                    keys.push(RunKey {
                                        experiment: experiment.to_string(),
                                        generator,
                                        k,
                                        n,
                                        t,
                                        v,
                                        h,
                                        beta,
                                        steps,
                                        seed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    keys
}

const KEY_COLUMNS: [&str; 16] = [
    "run_id",
    "experiment",
    "generator",
    "arch",
    "loss_kind",
    "K",
    "N",
    "T",
    "T_p",
    "V",
    "h",
    "beta",
    "steps",
    "seed",
    "status",
    "error",
];

const EXTRA_COLUMNS: [&str; 10] = [
    "chance",
    "train_loss",
    "S",
    "L",
    "sigma",
    "capacity_C",
    "t1_detailed",
    "t1_detailed_clamped",
    "t2_detailed",
    "n_param",
];

/// Column set of `metrics.csv`, shared by the sweep, failure and LDS
/// experiments. `loss_kind` is `nll` for token models (KL columns in nats)
/// and `mse` for LDS rows, where `empirical` is the training MSE,
/// `population` the held-out MSE over all positions and `population_last`
/// the held-out MSE at the final position.
pub fn metrics_columns() -> Vec<&'static str> {
    KEY_COLUMNS
        .iter()
        .chain(LossReport::CSV_COLUMNS.iter())
        .chain(EXTRA_COLUMNS.iter())
        .copied()
        .collect()
}

/// Builds a `metrics.csv` row; `fields` fills named columns, the rest stay
/// empty.
pub(crate) fn metrics_row(key: &RunKey, arch: &str, loss_kind: &str, fields: &[(&str, String)]) -> Row {
    let cols = metrics_columns();
    let mut row = vec![String::new(); cols.len()];
    let base = [
        ("run_id", key.id()),
        ("experiment", key.experiment.clone()),
        ("generator", key.generator.name().to_string()),
        ("arch", arch.to_string()),
        ("loss_kind", loss_kind.to_string()),
        ("K", key.k.to_string()),
        ("N", key.n.to_string()),
        ("T", key.t.to_string()),
        ("V", key.v.to_string()),
        ("h", key.h.to_string()),
        ("beta", key.beta.to_string()),
        ("steps", key.steps.to_string()),
        ("seed", key.seed.to_string()),
        ("status", "ok".to_string()),
    ];
    for (name, value) in base.iter().cloned().chain(fields.iter().cloned()) {
        let i = cols.iter().position(|c| *c == name).unwrap_or_else(|| panic!("no metrics column `{name}`"));
        row[i] = value;
    }
    row
}

pub(crate) fn error_row(key: &RunKey, arch: &str, loss_kind: &str, msg: String) -> Row {
    metrics_row(key, arch, loss_kind, &[("status", "error".into()), ("error", msg)])
}

/// What an experiment did.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub table: PathBuf,
    pub runs: usize,
    pub skipped: usize,
    pub rows_written: usize,
    /// Error rows in the whole table after the run.
    pub error_rows: usize,
}

pub(crate) fn progress(msg: impl AsRef<str>) {
    eprintln!("[icl-lab] {}", msg.as_ref());
}
