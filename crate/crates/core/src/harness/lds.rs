use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use super::table::{count_error_rows, run_pool, Table};
use super::token::{mean_tail, train_config, trajectory_path};
use super::{error_row, grid, metrics_columns, metrics_row, progress, ExperimentConfig, Generator, RunKey, RunSummary};
use crate::corpus::{generate_lds_corpus, sample_lds_topic, LdsCorpus, LdsTopic};
use crate::error::{invalid, Result};
use crate::metrics::{lds_losses, lds_view};
use crate::model::SequenceModel;
use crate::optim::train_lds;
use crate::seed::derive;

#[derive(Clone, Debug)]
pub struct LdsData {
    pub topics: Vec<LdsTopic>,
    pub train: LdsCorpus,
    /// Fresh sequences from the same topics.
    pub held_out: LdsCorpus,
}

pub fn lds_data(cfg: &ExperimentConfig, key: &RunKey) -> Result<LdsData> {
    let s = key.seed;
    let topics = (0..key.k)
        .map(|k| {
            sample_lds_topic(
                k,
                cfg.lds_state_dim,
                cfg.lds_obs_dim,
                cfg.lds_radius,
                cfg.lds_noise,
                derive(s, "lds-topic", &[k as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let train = generate_lds_corpus(&topics, key.n, key.t, derive(s, "corpus", &[]))?;
    let held_out = generate_lds_corpus(&topics, cfg.lds_eval_sequences.max(1), key.t, derive(s, "eval", &[]))?;
    Ok(LdsData { topics, train, held_out })
}

fn all(c: &LdsCorpus) -> Vec<Vec<Vec<f64>>> {
    lds_view(c, &(0..c.records.len()).collect::<Vec<_>>())
}

fn run_one(cfg: &ExperimentConfig, key: &RunKey) -> Result<Vec<super::Row>> {
    if key.t < 2 {
        return Err(invalid("LDS sequences need T >= 2"));
    }
    let data = lds_data(cfg, key)?;
    let init = SequenceModel::init(cfg.lds_arch(), cfg.init_std, derive(key.seed, "init", &[]))?;
    let tc = train_config(cfg, key, cfg.lr, key.steps, "train");
    let (model, traj) = train_lds(init, &data.train, &(0..data.train.records.len()).collect::<Vec<_>>(), &tc)?;
    traj.write_csv(&trajectory_path(cfg, &key.id()))?;
    let (train_overall, _) = lds_losses(&model, &all(&data.train))?;
    let (overall, last) = lds_losses(&model, &all(&data.held_out))?;
    let fields = [
        ("T_p", key.t.to_string()),
        ("empirical", train_overall.to_string()),
        ("population", overall.to_string()),
        ("population_samples", data.held_out.records.len().to_string()),
        ("population_last", last.to_string()),
        ("train_loss", mean_tail(&traj.step_losses, cfg.smooth_window).to_string()),
        ("n_param", model.num_params().to_string()),
    ];
    Ok(vec![metrics_row(key, model.arch.kind_name(), "mse", &fields)])
}

/// LDS corpus, linear readout, held-out MSE over all positions
/// (`population`) and at the last position (`population_last`).
pub fn run_lds(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.generator != Generator::Lds {
        return Err(invalid("the lds experiment needs `generator = lds`"));
    }
    let mut table = Table::open(&cfg.out.join("metrics.csv"), &metrics_columns())?;
    let keys = grid(cfg, "lds", Generator::Lds);
    let total = keys.len();
    let todo: Vec<RunKey> = keys.into_iter().filter(|k| !table.contains(&k.id())).collect();
    let skipped = total - todo.len();
    let mut written = 0;
    run_pool(
        &todo,
        cfg.workers,
        |key| {
            let t0 = Instant::now();
            let rows = run_one(cfg, key)?;
            progress(format!("{} done in {:.1}s", key.id(), t0.elapsed().as_secs_f64()));
            Ok(rows)
        },
        |key, msg| vec![error_row(key, "linear_readout_lds", "mse", msg)],
        |_, rows| {
            written += rows.len();
            table.append(&rows)
        },
    )?;
    Ok(RunSummary {
        table: table.path().to_path_buf(),
        runs: total,
        skipped,
        rows_written: written,
        error_rows: count_error_rows(table.path())?,
    })
}

pub(crate) fn generate_lds_files(cfg: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    let keys = grid(cfg, "lds", Generator::Lds);
    for key in &keys {
        let data = lds_data(cfg, key)?;
        let mut w = BufWriter::new(File::create(dir.join(format!("{}_lds.jsonl", key.id())))?);
        for r in &data.train.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    Ok(RunSummary { table: dir.to_path_buf(), runs: keys.len(), skipped: 0, rows_written: 0, error_rows: 0 })
}
