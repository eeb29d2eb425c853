//! Prior-model initialization: train a small model on the prior split,
//! copy its weights into the large model, and race it against a randomly
//! initialized large model on the same minibatch stream.

use std::time::Instant;

use super::table::{count_error_rows, run_pool, Row, Table};
use super::token::{build_hmm_data, context, train_config, trajectory_path};
use super::{grid, progress, ExperimentConfig, Generator, RunKey, RunSummary};
use crate::corpus::split_prior;
use crate::error::Result;
use crate::metrics::corpus_nll;
use crate::model::{init_from_prior, SequenceModel};
use crate::optim::{train, train_prior};
use crate::seed::derive;

/// Column set of `prior_init.csv`; one row per arm (`prior` or `random`).
pub const PRIOR_COLUMNS: [&str; 23] = [
    "run_id",
    "arm",
    "K",
    "N",
    "T",
    "V",
    "h",
    "beta",
    "steps",
    "seed",
    "prior_axis",
    "prior_holdout",
    "small_steps",
    "tau",
    "smooth_window",
    "status",
    "error",
    "steps_to_threshold",
    "censored",
    "initial_loss",
    "final_loss",
    "final_train_loss",
    "prior_model_loss",
];

/// First step whose trailing mean loss over `window` steps (fewer at the
/// start) is `<= tau`; `(losses.len(), true)` when that never happens.
pub fn steps_to_threshold(losses: &[f64], window: usize, tau: f64) -> (usize, bool) {
    let w = window.max(1);
    let mut sum = 0.0;
    for (i, &l) in losses.iter().enumerate() {
        sum += l;
        if i >= w {
            sum -= losses[i - w];
        }
        if sum / (i + 1).min(w) as f64 <= tau {
            return (i + 1, false);
        }
    }
    (losses.len(), true)
}

fn axis_name(cfg: &ExperimentConfig) -> &'static str {
    match cfg.prior_axis {
        crate::corpus::SplitAxis::Sequence => "sequence",
        crate::corpus::SplitAxis::Topic => "topic",
    }
}

fn row(cfg: &ExperimentConfig, key: &RunKey, arm: &str, tail: [String; 8]) -> Row {
    let mut r = vec![
        key.id(),
        arm.to_string(),
        key.k.to_string(),
        key.n.to_string(),
        key.t.to_string(),
        key.v.to_string(),
        key.h.to_string(),
        key.beta.to_string(),
        key.steps.to_string(),
        key.seed.to_string(),
        axis_name(cfg).to_string(),
        cfg.prior_holdout.to_string(),
        cfg.small_steps.to_string(),
        cfg.tau.to_string(),
        cfg.smooth_window.to_string(),
    ];
    r.extend(tail);
    r
}

fn run_one(cfg: &ExperimentConfig, key: &RunKey) -> Result<Vec<Row>> {
    let data = build_hmm_data(cfg, key)?;
    let corpus = &data.corpus;
    let ctx = context(cfg, key);
    let split = split_prior(corpus, cfg.prior_axis, cfg.prior_holdout, derive(key.seed, "split", &[]))?;
    let small_arch = cfg.attention(key.v, ctx, cfg.small_d_model, cfg.small_layers);
    let small_cfg = train_config(cfg, key, cfg.small_lr, cfg.small_steps, "small-train");
    let (small, small_traj) = train_prior(small_arch, &split, corpus, cfg.small_init_std, &small_cfg)?;
    small_traj.write_csv(&trajectory_path(cfg, &format!("{}_small", key.id())))?;
    let prior_loss = corpus_nll(&small, corpus)?;

    let large = cfg.token_arch(key.v, ctx);
    let init_seed = derive(key.seed, "init", &[]);
    let arms = [
        ("prior", init_from_prior(&small, large.clone(), cfg.init_std, init_seed)?),
        ("random", SequenceModel::init(large, cfg.init_std, init_seed)?),
    ];
    let tc = train_config(cfg, key, cfg.lr, key.steps, "train");
    let mut rows = Vec::new();
    for (arm, init) in arms {
        let initial = corpus_nll(&init, corpus)?;
        let (model, traj) = train(init, corpus, &corpus.all_indices(), &tc)?;
        traj.write_csv(&trajectory_path(cfg, &format!("{}_{arm}", key.id())))?;
        let (hit, censored) = steps_to_threshold(&traj.step_losses, cfg.smooth_window, cfg.tau);
        let final_loss = corpus_nll(&model, corpus)?;
        let final_train = super::token::mean_tail(&traj.step_losses, cfg.smooth_window);
        rows.push(row(
            cfg,
            key,
            arm,
            [
                "ok".into(),
                String::new(),
                hit.to_string(),
                censored.to_string(),
                initial.to_string(),
                final_loss.to_string(),
                final_train.to_string(),
                prior_loss.to_string(),
            ],
        ));
    }
    Ok(rows)
}

/// Both arms for every grid point and seed, into `prior_init.csv`.
pub fn run_prior_init(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let mut table = Table::open(&cfg.out.join("prior_init.csv"), &PRIOR_COLUMNS)?;
    let keys = grid(cfg, "prior_init", Generator::Hmm);
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
        |key, msg| {
            progress(format!("{} failed: {msg}", key.id()));
            let blank = || String::new();
            vec![row(cfg, key, "", ["error".into(), msg, blank(), blank(), blank(), blank(), blank(), blank()])]
        },
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_uses_trailing_mean_and_censors() {
        let l = [4.0, 2.0, 1.0, 1.0];
        assert_eq!(steps_to_threshold(&l, 2, 1.5), (3, false));
        assert_eq!(steps_to_threshold(&l, 1, 2.0), (2, false));
        assert_eq!(steps_to_threshold(&l, 4, 0.5), (4, true));
    }
}
