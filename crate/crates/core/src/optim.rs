//! Minibatch SGD and Gradient Langevin Dynamics.
//!
//! One step is `theta <- theta - eta * grad + sqrt(eta / beta) * xi` with
//! `xi ~ N(0, I)`; `beta = inf` is plain SGD and never touches the noise
//! stream. Minibatches and noise come from independent seed sub-streams.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::corpus::{Corpus, LdsCorpus, PriorSplit};
use crate::error::{invalid, Result};
use crate::model::{Arch, SequenceModel};
use crate::seed::{self, LabRng};

/// Learning-rate schedule `(eta_t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// Linear ramp from `lr / warmup` to `lr` over the first `warmup` steps.
    LinearWarmup { lr: f64, warmup: usize },
}

impl Schedule {
    /// Learning rate of step `t` (1-based).
    pub fn lr(&self, t: usize) -> f64 {
        match *self {
            Schedule::Constant(lr) => lr,
            Schedule::LinearWarmup { lr, warmup } if t < warmup => lr * t as f64 / warmup as f64,
            Schedule::LinearWarmup { lr, .. } => lr,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Schedule::Constant(lr) => format!("constant(lr={lr})"),
            Schedule::LinearWarmup { lr, warmup } => format!("linear_warmup(lr={lr},warmup={warmup})"),
        }
    }
}

/// One GLD update in place. `rng` is only consumed when `beta` is finite and
/// `eta > 0`.
pub fn gld_step(theta: &mut [f64], grad: &[f64], eta: f64, beta: f64, rng: &mut LabRng) -> Result<()> {
    if eta.is_nan() || eta < 0.0 {
        return Err(invalid(format!("learning rate must be >= 0, got {eta}")));
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(invalid(format!("beta must be > 0 or infinite, got {beta}")));
    }
    if theta.len() != grad.len() {
        return Err(invalid("parameter and gradient lengths differ"));
    }
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= eta * g;
    }
    if beta.is_finite() && eta > 0.0 {
        let scale = (eta / beta).sqrt();
        for t in theta.iter_mut() {
            *t += scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Sequences per minibatch; `>= |view|` means full batch.
    pub batch_size: usize,
    /// Random contiguous window length for token sequences; `None` uses
    /// whole sequences.
    pub window: Option<usize>,
    pub schedule: Schedule,
    pub beta: f64,
    pub seed: u64,
    /// Rescale the minibatch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
}

impl TrainConfig {
    pub fn sgd(steps: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        TrainConfig { steps, batch_size, window: None, schedule: Schedule::Constant(lr), beta: f64::INFINITY, seed, clip_norm: None }
    }

    /// Checkpoint spacing: `ceil(T' / 100)`.
    pub fn checkpoint_every(&self) -> usize {
        self.steps.div_ceil(100).max(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `theta_0`, every `checkpoint_every` steps, and always the final step.
    pub checkpoints: Vec<Checkpoint>,
    /// Minibatch loss evaluated at `theta_{t-1}`, for `t = 1..=T'`.
    pub step_losses: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub t_prime: usize,
    pub beta: f64,
    pub schedule: String,
    pub seed: u64,
}

impl Trajectory {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("trajectory always holds theta_0")
    }

    /// Checkpoint with the largest step `<= step`.
    pub fn checkpoint_at(&self, step: usize) -> Option<&Checkpoint> {
        self.checkpoints.iter().rev().find(|c| c.step <= step)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "loss", "grad_norm"])?;
        for (i, (l, g)) in self.step_losses.iter().zip(&self.grad_norms).enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string(), g.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draws minibatches of `(item, window start)` pairs.
#[derive(Debug)]
pub struct BatchSampler {
    view: Vec<usize>,
    batch_size: usize,
    window: Option<usize>,
    rng: LabRng,
}

impl BatchSampler {
    pub fn new(view: &[usize], batch_size: usize, window: Option<usize>, seed: u64) -> Result<Self> {
        if view.is_empty() {
            return Err(invalid("training view is empty"));
        }
        if batch_size == 0 {
            return Err(invalid("batch size must be positive"));
        }
        if window.is_some_and(|w| w < 2) {
            return Err(invalid("window must cover at least 2 tokens"));
        }
        Ok(BatchSampler {
            view: view.to_vec(),
            batch_size,
            window,
            rng: seed::child_rng(seed, "batch", &[]),
        })
    }

    /// Full batches take every item in view order; otherwise items are drawn
    /// uniformly with replacement. Window starts are uniform over the
    /// sequence.
    pub fn next_batch(&mut self, seq_len: impl Fn(usize) -> usize) -> Vec<(usize, usize, usize)> {
        let items: Vec<usize> = if self.batch_size >= self.view.len() {
            self.view.clone()
        } else {
            (0..self.batch_size).map(|_| self.view[self.rng.gen_range(0..self.view.len())]).collect()
        };
        items
            .into_iter()
            .map(|i| {
                let len = seq_len(i);
                match self.window {
                    Some(w) if w < len => (i, self.rng.gen_range(0..=len - w), w),
                    _ => (i, 0, len),
                }
            })
            .collect()
    }
}

fn run(
    mut model: SequenceModel,
    view: &[usize],
    cfg: &TrainConfig,
    seq_len: impl Fn(usize) -> usize,
    item_grad: impl Fn(&SequenceModel, usize, usize, usize) -> Result<(f64, Vec<f64>)>,
) -> Result<(SequenceModel, Trajectory)> {
    let mut sampler = BatchSampler::new(view, cfg.batch_size, cfg.window, cfg.seed)?;
    let mut noise = seed::child_rng(cfg.seed, "noise", &[]);
    let every = cfg.checkpoint_every();
    let mut traj = Trajectory {
        checkpoints: vec![Checkpoint { step: 0, params: model.params.clone() }],
        step_losses: Vec::with_capacity(cfg.steps),
        grad_norms: Vec::with_capacity(cfg.steps),
        t_prime: cfg.steps,
        beta: cfg.beta,
        schedule: cfg.schedule.describe(),
        seed: cfg.seed,
    };
    let mut grad = vec![0.0; model.params.len()];
    for t in 1..=cfg.steps {
        let batch = sampler.next_batch(&seq_len);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for &(item, start, len) in &batch {
            let (l, g) = item_grad(&model, item, start, len)?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let m = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        traj.step_losses.push(loss / m);
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        traj.grad_norms.push(norm);
        if let Some(c) = cfg.clip_norm.filter(|&c| norm > c) {
            grad.iter_mut().for_each(|g| *g *= c / norm);
        }
        gld_step(&mut model.params, &grad, cfg.schedule.lr(t), cfg.beta, &mut noise)?;
        if t % every == 0 || t == cfg.steps {
            traj.checkpoints.push(Checkpoint { step: t, params: model.params.clone() });
        }
    }
    Ok((model, traj))
}

/// Trains a token model on the records `view` of `corpus`.
pub fn train(model: SequenceModel, corpus: &Corpus, view: &[usize], cfg: &TrainConfig) -> Result<(SequenceModel, Trajectory)> {
    if !model.arch.is_token_model() {
        return Err(invalid("token corpus given to a continuous-output model"));
    }
    if let Some(&bad) = view.iter().find(|&&i| i >= corpus.len()) {
        return Err(invalid(format!("record {bad} outside corpus of {} records", corpus.len())));
    }
    run(
        model,
        view,
        cfg,
        |i| corpus.records[i].tokens.len(),
        |m, i, start, len| m.segment_nll_and_grad(&corpus.records[i].tokens, start, len),
    )
}

/// Trains an LDS readout on the records `view` of `corpus`.
pub fn train_lds(model: SequenceModel, corpus: &LdsCorpus, view: &[usize], cfg: &TrainConfig) -> Result<(SequenceModel, Trajectory)> {
    if let Some(&bad) = view.iter().find(|&&i| i >= corpus.records.len()) {
        return Err(invalid(format!("record {bad} outside corpus of {} records", corpus.records.len())));
    }
    run(
        model,
        view,
        cfg,
        |i| corpus.records[i].obs.len(),
        |m, i, start, len| m.mse_and_grad(&corpus.records[i].obs[start..start + len]),
    )
}

/// Trains a fresh model of `arch` on the prior subset `E_J` of `split`.
pub fn train_prior(
    arch: Arch,
    split: &PriorSplit,
    corpus: &Corpus,
    init_std: f64,
    cfg: &TrainConfig,
) -> Result<(SequenceModel, Trajectory)> {
    if split.held_out.is_empty() {
        return Err(invalid("prior split holds out nothing"));
    }
    let view = split.prior_records(corpus.num_topics, corpus.per_topic);
    let model = SequenceModel::init(arch, init_std, seed::derive(cfg.seed, "prior-init", &[]))?;
    train(model, corpus, &view, cfg)
}

/// Writes every checkpoint of `traj` for `arch` as `<prefix>_<step>.ckpt`.
pub fn write_checkpoints(dir: &Path, prefix: &str, arch: &Arch, traj: &Trajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    for c in &traj.checkpoints {
        let m = SequenceModel::new(arch.clone(), c.params.clone())?;
        crate::model::write_checkpoint(&dir.join(format!("{prefix}_{}.ckpt", c.step)), &m, &[("step", c.step.to_string())])?;
    }
    let mut f = fs::File::create(dir.join(format!("{prefix}_schedule.txt")))?;
    writeln!(f, "{} beta={} seed={}", traj.schedule, traj.beta, traj.seed)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, TopicSampler};

    fn small_corpus() -> Corpus {
        let topics = TopicSampler::new(3, 6, 1.0).unwrap().sample_many(2, 1);
        generate_corpus(&topics, 4, 12, 2).unwrap()
    }

    #[test]
    fn zero_grad_infinite_beta_is_identity() {
        let mut theta = vec![1.0, -2.0, 3.5];
        let mut rng = seed::rng(0);
        gld_step(&mut theta, &[0.0; 3], 0.3, f64::INFINITY, &mut rng).unwrap();
        assert_eq!(theta, vec![1.0, -2.0, 3.5]);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut theta = vec![1.0, -2.0];
        let mut rng = seed::rng(0);
        gld_step(&mut theta, &[5.0, 7.0], 0.0, 2.0, &mut rng).unwrap();
        assert_eq!(theta, vec![1.0, -2.0]);
    }

    #[test]
    fn negative_lr_rejected() {
        let mut rng = seed::rng(0);
        assert!(gld_step(&mut [0.0], &[0.0], -1e-3, 1.0, &mut rng).is_err());
        assert!(gld_step(&mut [0.0], &[0.0], 1e-3, 0.0, &mut rng).is_err());
    }

    #[test]
    fn warmup_schedule() {
        let s = Schedule::LinearWarmup { lr: 1.0, warmup: 4 };
        assert_eq!(s.lr(1), 0.25);
        assert_eq!(s.lr(4), 1.0);
        assert_eq!(s.lr(100), 1.0);
    }

    #[test]
    fn zero_steps_leaves_model() {
        let c = small_corpus();
        let m = SequenceModel::init(Arch::TabularBigram { vocab: 6 }, 0.1, 3).unwrap();
        let (out, traj) = train(m.clone(), &c, &c.all_indices(), &TrainConfig::sgd(0, 2, 0.1, 0)).unwrap();
        assert_eq!(out, m);
        assert!(traj.step_losses.is_empty());
        assert_eq!(traj.checkpoints.len(), 1);
    }

    #[test]
    fn empty_view_rejected() {
        let c = small_corpus();
        let m = SequenceModel::zeros(Arch::TabularBigram { vocab: 6 }).unwrap();
        assert!(train(m, &c, &[], &TrainConfig::sgd(3, 2, 0.1, 0)).is_err());
    }

    #[test]
    fn checkpoints_thinned_and_final_kept() {
        let c = small_corpus();
        let m = SequenceModel::zeros(Arch::TabularBigram { vocab: 6 }).unwrap();
        let (out, traj) = train(m, &c, &c.all_indices(), &TrainConfig::sgd(250, 3, 0.1, 4)).unwrap();
        assert_eq!(traj.step_losses.len(), 250);
        assert_eq!(traj.grad_norms.len(), 250);
        let steps: Vec<_> = traj.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps[..3], [0, 3, 6]);
        assert_eq!(*steps.last().unwrap(), 250);
        assert_eq!(traj.final_checkpoint().params, out.params);
    }

    #[test]
    fn training_is_deterministic() {
        let c = small_corpus();
        let m = SequenceModel::init(Arch::TabularBigram { vocab: 6 }, 0.1, 3).unwrap();
        let mut cfg = TrainConfig::sgd(40, 2, 0.2, 9);
        cfg.beta = 1e3;
        let a = train(m.clone(), &c, &c.all_indices(), &cfg).unwrap();
        let b = train(m, &c, &c.all_indices(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn windows_stay_inside_sequences() {
        let mut s = BatchSampler::new(&[0, 1, 2], 5, Some(4), 1).unwrap();
        for _ in 0..50 {
            for (_, start, len) in s.next_batch(|_| 10) {
                assert_eq!(len, 4);
                assert!(start + len <= 10);
            }
        }
        let mut s = BatchSampler::new(&[0], 1, Some(40), 1).unwrap();
        assert_eq!(s.next_batch(|_| 10), vec![(0, 0, 10)]);
    }
}
