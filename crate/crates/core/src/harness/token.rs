//! Token-corpus pipelines: generate, train, evaluate, and the sweep and
//! failure-case experiments built from them.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::table::{count_error_rows, run_pool, Row, Table};
use super::{error_row, grid, metrics_columns, metrics_row, progress, ExperimentConfig, Generator, RunKey, RunSummary};
use crate::bounds::{estimate_l, estimate_s, estimate_sigma, theorem2_bound, BoundInputs, SSource, Theorem2};
use crate::corpus::{
    generate_corpus, make_random_transition_corpus, write_corpus_jsonl, write_topics, Corpus, TopicHmm, TopicSampler,
};
use crate::error::{invalid, Result};
use crate::metrics::{corpus_losses, corpus_nll, first_level_expected_loss_mc, population_loss_mc, LossReport, PretrainTerms};
use crate::model::{read_checkpoint, write_checkpoint, Arch, SequenceModel};
use crate::optim::{train, Checkpoint, TrainConfig, Trajectory};
use crate::seed::derive;

/// Pre-training data of one run. `topics` are the oracles of the corpus
/// (one pseudo-topic for random-transition data); `sampler` draws the fresh
/// evaluation topics.
#[derive(Clone, Debug)]
pub struct HmmData {
    pub sampler: TopicSampler,
    pub topics: Vec<TopicHmm>,
    pub corpus: Corpus,
}

pub fn build_hmm_data(cfg: &ExperimentConfig, key: &RunKey) -> Result<HmmData> {
    let s = key.seed;
    let sampler = TopicSampler::new(key.h, key.v, cfg.concentration)?
        .with_emission(cfg.emission)
        .with_memory_seed(derive(s, "memory", &[]));
    match key.generator {
        Generator::Hmm => {
            let topics = sampler.sample_many(key.k, derive(s, "topics", &[]));
            let corpus = generate_corpus(&topics, key.n, key.t, derive(s, "corpus", &[]))?;
            Ok(HmmData { sampler, topics, corpus })
        }
        Generator::RandomTransition => {
            let corpus = make_random_transition_corpus(key.h, key.v, key.k * key.n, key.t, derive(s, "corpus", &[]))?;
            let topics = vec![TopicHmm::random_transition(key.h, key.v)?];
            Ok(HmmData { sampler, topics, corpus })
        }
        Generator::Lds => Err(invalid("the lds generator has its own pipeline (`lds` subcommand)")),
    }
}

/// A trained run: the final model, the best candidate checkpoint, and the
/// checkpoint subset used for the bound constants.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: SequenceModel,
    pub best: SequenceModel,
    pub best_step: usize,
    pub eps_opt: f64,
    /// Mean minibatch loss over the last `smooth_window` steps.
    pub train_loss: f64,
    pub subset: Vec<Checkpoint>,
}

fn ckpt_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("checkpoints")
}

/// `<out>/checkpoints/<id>_step<step>.ckpt`.
pub fn checkpoint_path(cfg: &ExperimentConfig, id: &str, step: usize) -> PathBuf {
    ckpt_dir(cfg).join(format!("{id}_step{step}.ckpt"))
}

fn best_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    ckpt_dir(cfg).join(format!("{id}_best.ckpt"))
}

pub(crate) fn trajectory_path(cfg: &ExperimentConfig, id: &str) -> PathBuf {
    cfg.out.join(format!("trajectory_{id}.csv"))
}

pub(crate) fn mean_tail(xs: &[f64], w: usize) -> f64 {
    let tail = &xs[xs.len().saturating_sub(w)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}

pub(crate) fn train_config(cfg: &ExperimentConfig, key: &RunKey, lr: f64, steps: usize, tag: &str) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: cfg.batch,
        window: cfg.window(),
        schedule: cfg.schedule(lr),
        beta: key.beta,
        seed: derive(key.seed, tag, &[]),
        clip_norm: cfg.clip(),
    }
}

/// Largest context any run of `cfg` needs.
pub(crate) fn context(cfg: &ExperimentConfig, key: &RunKey) -> usize {
    key.t.max(cfg.t_p.iter().copied().max().unwrap_or(0))
}

/// `theta_hat`: lowest corpus NLL among the final checkpoint and the two
/// checkpoints with the lowest mean minibatch loss over their preceding
/// interval.
fn select_best(arch: &Arch, traj: &Trajectory, corpus: &Corpus) -> Result<(SequenceModel, usize, f64)> {
    let fin = traj.final_checkpoint();
    let mut scored: Vec<(f64, &Checkpoint)> = traj
        .checkpoints
        .windows(2)
        .filter(|w| w[1].step != fin.step)
        .map(|w| {
            let seg = &traj.step_losses[w[0].step..w[1].step];
            (seg.iter().sum::<f64>() / seg.len() as f64, &w[1])
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.step.cmp(&b.1.step)));
    let final_model = SequenceModel::new(arch.clone(), fin.params.clone())?;
    let final_nll = corpus_nll(&final_model, corpus)?;
    let (mut best, mut best_step, mut best_nll) = (final_model, fin.step, final_nll);
    for (_, c) in scored.into_iter().take(2) {
        let m = SequenceModel::new(arch.clone(), c.params.clone())?;
        let nll = corpus_nll(&m, corpus)?;
        if nll < best_nll {
            (best, best_step, best_nll) = (m, c.step, nll);
        }
    }
    Ok((best, best_step, final_nll - best_nll))
}

/// Trains the run's token model; with `write`, stores the trajectory CSV
/// and the checkpoint subset, `theta_hat` and the final model.
pub fn train_hmm(cfg: &ExperimentConfig, key: &RunKey, data: &HmmData, write: bool) -> Result<Trained> {
    let arch = cfg.token_arch(key.v, context(cfg, key));
    let init = SequenceModel::init(arch.clone(), cfg.init_std, derive(key.seed, "init", &[]))?;
    let tc = train_config(cfg, key, cfg.lr, key.steps, "train");
    let (model, traj) = train(init, &data.corpus, &data.corpus.all_indices(), &tc)?;
    if traj.step_losses.iter().any(|l| !l.is_finite()) {
        return Err(invalid("training diverged (non-finite loss)"));
    }
    let (best, best_step, eps_opt) = select_best(&arch, &traj, &data.corpus)?;
    let mut subset: Vec<Checkpoint> = Vec::new();
    for step in std::iter::once(0).chain(cfg.save_steps.iter().copied()).chain([key.steps]) {
        if let Some(c) = traj.checkpoint_at(step) {
            if !subset.iter().any(|s| s.step == c.step) {
                subset.push(c.clone());
            }
        }
    }
    let train_loss = mean_tail(&traj.step_losses, cfg.smooth_window);
    if write {
        let id = key.id();
        fs::create_dir_all(ckpt_dir(cfg))?;
        traj.write_csv(&trajectory_path(cfg, &id))?;
        let steps: Vec<String> = subset.iter().map(|c| c.step.to_string()).collect();
        for c in &subset {
            let m = SequenceModel::new(arch.clone(), c.params.clone())?;
            let mut meta = vec![("step", c.step.to_string()), ("run_id", id.clone())];
            if c.step == key.steps {
                meta.push(("train_loss", train_loss.to_string()));
                meta.push(("subset_steps", steps.join(",")));
            }
            write_checkpoint(&checkpoint_path(cfg, &id, c.step), &m, &meta)?;
        }
        write_checkpoint(
            &best_path(cfg, &id),
            &best,
            &[("step", best_step.to_string()), ("eps_opt", eps_opt.to_string()), ("run_id", id)],
        )?;
    }
    Ok(Trained { model, best, best_step, eps_opt, train_loss, subset })
}

/// Reads back what [`train_hmm`] wrote for `key`.
pub fn load_trained(cfg: &ExperimentConfig, key: &RunKey) -> Result<Trained> {
    let id = key.id();
    let fin = checkpoint_path(cfg, &id, key.steps);
    let (model, meta) = read_checkpoint(&fin)?;
    let get = |m: &std::collections::BTreeMap<String, String>, k: &str, p: &Path| {
        m.get(k).cloned().ok_or_else(|| invalid(format!("{} lacks `{k}`", p.display())))
    };
    let train_loss: f64 = get(&meta, "train_loss", &fin)?.parse().map_err(|_| invalid("bad train_loss"))?;
    let mut subset = Vec::new();
    for s in get(&meta, "subset_steps", &fin)?.split(',') {
        let step: usize = s.parse().map_err(|_| invalid("bad subset_steps"))?;
        let (m, _) = read_checkpoint(&checkpoint_path(cfg, &id, step))?;
        subset.push(Checkpoint { step, params: m.params });
    }
    let bp = best_path(cfg, &id);
    let (best, bmeta) = read_checkpoint(&bp)?;
    let eps_opt = get(&bmeta, "eps_opt", &bp)?.parse().map_err(|_| invalid("bad eps_opt"))?;
    let best_step = get(&bmeta, "step", &bp)?.parse().map_err(|_| invalid("bad step"))?;
    Ok(Trained { model, best, best_step, eps_opt, train_loss, subset })
}

struct Constants {
    s: f64,
    l: f64,
    sigma: f64,
}

fn constants(cfg: &ExperimentConfig, key: &RunKey, data: &HmmData, tr: &Trained) -> Result<Constants> {
    let arch = &tr.model.arch;
    let s = estimate_s(Some(SSource::Empirical { model: &tr.model, corpus: &data.corpus, topics: &data.topics }))?;
    let total = data.corpus.len();
    let count = cfg.l_records.clamp(1, total);
    let records: Vec<usize> = (0..count).map(|i| i * total / count).collect();
    let l = estimate_l(arch, &tr.subset, &data.corpus, &records)?;
    let sigma = estimate_sigma(arch, &tr.subset, &data.topics, cfg.sigma_sequences.max(1), key.t, derive(key.seed, "sigma", &[]))?;
    Ok(Constants { s, l, sigma })
}

fn bound(cfg: &ExperimentConfig, key: &RunKey, tr: &Trained, c: &Constants, t_p: usize) -> Option<Theorem2> {
    let inputs = BoundInputs {
        k: key.k,
        k_prime: cfg.k_prime,
        n: key.n,
        n_prime: cfg.n_prime,
        t: key.t,
        t_p,
        t_prime: key.steps,
        beta: key.beta,
        s: c.s,
        l: c.l,
        sigma: c.sigma,
        delta: cfg.delta,
        eps_opt: tr.eps_opt,
        n_param: tr.model.num_params(),
        kl_posterior_prior: None,
        scaling: None,
    };
    theorem2_bound(&inputs).ok()
}

/// Loss report rows, one per `T_p`.
pub(crate) fn evaluate_hmm(cfg: &ExperimentConfig, key: &RunKey, data: &HmmData, tr: &Trained) -> Result<Vec<Row>> {
    let model = &tr.model;
    let losses = corpus_losses(model, &data.corpus, &data.topics)?;
    let per_topic = cfg.first_level_sequences.div_ceil(data.topics.len()).max(1);
    let first = first_level_expected_loss_mc(model, &data.topics, per_topic, key.t, derive(key.seed, "first-level", &[]))?;
    let pre = PretrainTerms { corpus: losses, first_level: first, eps_opt: tr.eps_opt };
    let consts = if key.generator == Generator::Hmm { Some(constants(cfg, key, data, tr)?) } else { None };
    let m_prompts = cfg.eval_prompts / cfg.eval_topics;
    let mut rows = Vec::with_capacity(cfg.t_p.len());
    for &t_p in &cfg.t_p {
        let report = population_loss_mc(model, &data.sampler, cfg.eval_topics, m_prompts, t_p, derive(key.seed, "eval", &[]), &pre)?;
        let mut fields: Vec<(&str, String)> = LossReport::CSV_COLUMNS.iter().copied().zip(report.csv_values()).collect();
        fields.push(("T_p", t_p.to_string()));
        fields.push(("chance", (1.0 / key.v as f64).to_string()));
        fields.push(("train_loss", tr.train_loss.to_string()));
        fields.push(("n_param", model.num_params().to_string()));
        if let Some(c) = &consts {
            fields.push(("S", c.s.to_string()));
            fields.push(("L", c.l.to_string()));
            fields.push(("sigma", c.sigma.to_string()));
            if let Some(b) = bound(cfg, key, tr, c, t_p) {
                fields.push(("capacity_C", b.first_level.capacity.to_string()));
                fields.push(("t1_detailed", b.first_level.detailed.to_string()));
                fields.push(("t1_detailed_clamped", b.first_level.detailed_clamped.to_string()));
                fields.push(("t2_detailed", b.detailed.to_string()));
            }
        }
        rows.push(metrics_row(key, model.arch.kind_name(), "nll", &fields));
    }
    Ok(rows)
}

fn run_token_jobs(cfg: &ExperimentConfig, keys: Vec<RunKey>, table_name: &str) -> Result<RunSummary> {
    let mut table = Table::open(&cfg.out.join(table_name), &metrics_columns())?;
    let total = keys.len();
    let todo: Vec<RunKey> = keys.into_iter().filter(|k| !table.contains(&k.id())).collect();
    let skipped = total - todo.len();
    let arch = cfg.token_arch(cfg.v[0], cfg.t[0]).kind_name();
    let mut written = 0;
    run_pool(
        &todo,
        cfg.workers,
        |key| {
            let t0 = Instant::now();
            let data = build_hmm_data(cfg, key)?;
            let tr = train_hmm(cfg, key, &data, true)?;
            let rows = evaluate_hmm(cfg, key, &data, &tr)?;
            progress(format!("{} done in {:.1}s", key.id(), t0.elapsed().as_secs_f64()));
            Ok(rows)
        },
        |key, msg| {
            progress(format!("{} failed: {msg}", key.id()));
            vec![error_row(key, arch, "nll", msg)]
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

/// Generate, train and evaluate every grid point and seed; one
/// `metrics.csv` row per `T_p`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    if cfg.generator == Generator::Lds {
        return super::run_lds(cfg);
    }
    run_token_jobs(cfg, grid(cfg, "sweep", cfg.generator), "metrics.csv")
}

/// Random-transition pre-training (`failure`) next to a structured control
/// (`failure_control`) at every grid point and seed. Both are evaluated on
/// fresh structured topics; `chance` is `1/V`.
pub fn run_failure_case(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let fail = grid(cfg, "failure", Generator::RandomTransition);
    let control = grid(cfg, "failure_control", Generator::Hmm);
    let keys = fail.into_iter().zip(control).flat_map(|(a, b)| [a, b]).collect();
    run_token_jobs(cfg, keys, "metrics.csv")
}

/// Writes the corpus (and topics) of every run under `out/data/`.
pub fn generate_only(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = cfg.out.join("data");
    fs::create_dir_all(&dir)?;
    if cfg.generator == Generator::Lds {
        return super::lds::generate_lds_files(cfg, &dir);
    }
    let keys = grid(cfg, "sweep", cfg.generator);
    for key in &keys {
        let data = build_hmm_data(cfg, key)?;
        write_corpus_jsonl(&dir.join(format!("{}_corpus.jsonl", key.id())), &data.corpus)?;
        write_topics(&dir.join(format!("{}_topics.json", key.id())), &data.topics)?;
    }
    Ok(RunSummary { table: dir, runs: keys.len(), skipped: 0, rows_written: 0, error_rows: 0 })
}

const TRAIN_COLUMNS: [&str; 6] = ["run_id", "status", "error", "train_loss", "eps_opt", "best_step"];

/// Trains every run and stores trajectories and checkpoints; one
/// `train.csv` row per run.
pub fn train_only(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let keys = grid(cfg, "sweep", cfg.generator);
    let mut table = Table::open(&cfg.out.join("train.csv"), &TRAIN_COLUMNS)?;
    let mut written = 0;
    run_pool(
        &keys,
        cfg.workers,
        |key| {
            let data = build_hmm_data(cfg, key)?;
            let tr = train_hmm(cfg, key, &data, true)?;
            progress(format!("{} trained", key.id()));
            Ok(vec![vec![
                key.id(),
                "ok".into(),
                String::new(),
                tr.train_loss.to_string(),
                tr.eps_opt.to_string(),
                tr.best_step.to_string(),
            ]])
        },
        |key, msg| vec![vec![key.id(), "error".into(), msg, String::new(), String::new(), String::new()]],
        |_, rows| {
            written += rows.len();
            table.append(&rows)
        },
    )?;
    Ok(RunSummary {
        table: table.path().to_path_buf(),
        runs: keys.len(),
        skipped: 0,
        rows_written: written,
        error_rows: count_error_rows(table.path())?,
    })
}

/// Evaluates checkpoints written by [`train_only`] into `metrics.csv`.
pub fn evaluate_only(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let keys = grid(cfg, "sweep", cfg.generator);
    let mut table = Table::open(&cfg.out.join("metrics.csv"), &metrics_columns())?;
    let total = keys.len();
    let todo: Vec<RunKey> = keys.into_iter().filter(|k| !table.contains(&k.id())).collect();
    let skipped = total - todo.len();
    let arch = cfg.token_arch(cfg.v[0], cfg.t[0]).kind_name();
    let mut written = 0;
    run_pool(
        &todo,
        cfg.workers,
        |key| {
            let data = build_hmm_data(cfg, key)?;
            let tr = load_trained(cfg, key)?;
            evaluate_hmm(cfg, key, &data, &tr)
        },
        |key, msg| vec![error_row(key, arch, "nll", msg)],
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
