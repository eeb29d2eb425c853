//! Flat `key = value` experiment configs. Grid keys take comma lists, `#`
//! starts a comment, and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::corpus::{EmissionMode, SplitAxis};
use crate::error::{LabError, Result};
use crate::model::{Arch, AttentionArch};
use crate::optim::Schedule;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Hmm,
    Lds,
    RandomTransition,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Hmm => "hmm",
            Generator::Lds => "lds",
            Generator::RandomTransition => "random_transition",
        }
    }
}

impl FromStr for Generator {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hmm" => Ok(Generator::Hmm),
            "lds" => Ok(Generator::Lds),
            "random_transition" => Ok(Generator::RandomTransition),
            other => Err(format!("unknown generator `{other}` (expected hmm|lds|random_transition)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    TinyAttention,
    TabularBigram,
    LinearReadoutLds,
}

impl FromStr for ArchKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tiny_attention" => Ok(ArchKind::TinyAttention),
            "tabular_bigram" => Ok(ArchKind::TabularBigram),
            "linear_readout_lds" => Ok(ArchKind::LinearReadoutLds),
            other => Err(format!(
                "unknown arch `{other}` (expected tiny_attention|tabular_bigram|linear_readout_lds)"
            )),
        }
    }
}

fn parse_emission(s: &str) -> std::result::Result<EmissionMode, String> {
    match s {
        "shared_memory" => Ok(EmissionMode::SharedMemory),
        "memory" => Ok(EmissionMode::Memory),
        "stochastic" => Ok(EmissionMode::Stochastic),
        other => Err(format!("unknown emission `{other}` (expected shared_memory|memory|stochastic)")),
    }
}

/// Everything one experiment needs. Field names match the config keys
/// listed in [`ExperimentConfig::KEYS`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub generator: Generator,
    // grid
    pub k: Vec<usize>,
    pub n: Vec<usize>,
    pub t: Vec<usize>,
    pub t_p: Vec<usize>,
    pub v: Vec<usize>,
    pub h: Vec<usize>,
    pub beta: Vec<f64>,
    pub steps: Vec<usize>,
    pub seeds: Vec<u64>,
    // data
    pub concentration: f64,
    pub emission: EmissionMode,
    // model
    pub arch: ArchKind,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub pos_scale: f64,
    pub prev_token: bool,
    pub init_std: f64,
    // optimizer
    pub lr: f64,
    pub warmup: usize,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f64,
    pub batch: usize,
    /// 0 trains on whole sequences.
    pub window: usize,
    // evaluation
    pub eval_topics: usize,
    pub eval_prompts: usize,
    pub first_level_sequences: usize,
    pub delta: f64,
    pub n_prime: usize,
    pub k_prime: usize,
    pub sigma_sequences: usize,
    pub l_records: usize,
    pub save_steps: Vec<usize>,
    // prior init
    pub prior_axis: SplitAxis,
    pub prior_holdout: usize,
    pub small_layers: usize,
    pub small_d_model: usize,
    pub small_steps: usize,
    pub small_lr: f64,
    pub small_init_std: f64,
    pub tau: f64,
    pub smooth_window: usize,
    // lds
    pub lds_state_dim: usize,
    pub lds_obs_dim: usize,
    pub lds_lags: usize,
    pub lds_radius: f64,
    pub lds_noise: f64,
    pub lds_eval_sequences: usize,
    // run
    pub workers: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::sweep()
    }
}

impl ExperimentConfig {
    pub const KEYS: [&'static str; 51] = [
        "generator", "K", "N", "T", "T_p", "V", "h", "beta", "steps", "seeds", "concentration", "emission", "arch",
        "d_model", "heads", "layers", "d_ff", "pos_scale", "prev_token", "init_std", "lr", "warmup", "clip_norm",
        "batch",
        "window", "eval_topics", "eval_prompts", "first_level_sequences", "delta", "N_prime", "K_prime",
        "sigma_sequences", "l_records", "save_steps", "prior_axis", "prior_holdout", "small_layers",
        "small_d_model", "small_steps", "small_lr", "small_init_std", "tau", "smooth_window", "lds_state_dim",
        "lds_obs_dim", "lds_lags", "lds_radius", "lds_noise", "lds_eval_sequences", "workers", "out",
    ];

    /// Desk-scale trend sweep: V=50, h=5, K in {2,5,10}, N in {20,100},
    /// T=256, T_p in {16,48,128}, one-layer d=16 attention, 5000 steps.
    pub fn sweep() -> Self {
        ExperimentConfig {
            generator: Generator::Hmm,
            k: vec![2, 5, 10],
            n: vec![20, 100],
            t: vec![256],
            t_p: vec![16, 48, 128],
            v: vec![50],
            h: vec![5],
            beta: vec![1e8],
            steps: vec![5000],
            seeds: vec![0, 1, 2],
            concentration: 1.0,
            emission: EmissionMode::SharedMemory,
            arch: ArchKind::TinyAttention,
            d_model: 16,
            heads: 2,
            layers: 1,
            d_ff: 64,
            pos_scale: 0.0,
            prev_token: true,
            init_std: 0.3,
            lr: 0.5,
            warmup: 300,
            clip_norm: 1.0,
            batch: 4,
            window: 128,
            eval_topics: 64,
            eval_prompts: 512,
            first_level_sequences: 512,
            delta: 0.1,
            n_prime: 4,
            k_prime: 1,
            sigma_sequences: 4,
            l_records: 16,
            save_steps: vec![500],
            prior_axis: SplitAxis::Topic,
            prior_holdout: 5,
            small_layers: 1,
            small_d_model: 16,
            small_steps: 1500,
            small_lr: 0.5,
            small_init_std: 0.3,
            tau: 1.6,
            smooth_window: 100,
            lds_state_dim: 4,
            lds_obs_dim: 2,
            lds_lags: 4,
            lds_radius: 0.9,
            lds_noise: 0.1,
            lds_eval_sequences: 16,
            workers: default_workers(),
            out: PathBuf::from("out"),
        }
    }

    /// Random-transition pre-training at K*N = 1000 sequences, evaluated at
    /// T_p = 128; the structured control uses the same grid point.
    pub fn failure() -> Self {
        ExperimentConfig { k: vec![10], n: vec![100], t_p: vec![128], ..Self::sweep() }
    }

    /// Two-layer target model, one-layer prior model trained on `K'` = 5
    /// held-out topics out of K = 20.
    pub fn prior_init() -> Self {
        ExperimentConfig {
            k: vec![20],
            n: vec![20],
            t_p: vec![128],
            steps: vec![3000],
            layers: 2,
            lr: 0.2,
            init_std: 0.1,
            ..Self::sweep()
        }
    }

    pub fn lds() -> Self {
        ExperimentConfig {
            generator: Generator::Lds,
            k: vec![8],
            n: vec![20],
            t: vec![32],
            t_p: vec![32],
            arch: ArchKind::LinearReadoutLds,
            beta: vec![f64::INFINITY],
            steps: vec![2000],
            lr: 0.05,
            warmup: 0,
            clip_norm: 0.0,
            batch: 8,
            window: 0,
            init_std: 0.0,
            ..Self::sweep()
        }
    }

    /// Defaults for a CLI subcommand name.
    pub fn defaults_for(command: &str) -> Self {
        match command {
            "failure" => Self::failure(),
            "prior-init" => Self::prior_init(),
            "lds" => Self::lds(),
            _ => Self::sweep(),
        }
    }

    pub fn from_file(path: &Path, base: Self) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, base)
    }

    /// Applies the `key = value` lines of `text` on top of `base`.
    pub fn parse(text: &str, base: Self) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", i + 1)))?;
            let key = k.trim();
            if !Self::KEYS.contains(&key) {
                return Err(LabError::Config(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if map.insert(key.to_string(), v.trim().to_string()).is_some() {
                return Err(LabError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        let mut c = base;
        for (key, value) in &map {
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn one<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| LabError::Config(format!("bad value `{v}` for `{key}`")))
        }
        fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
            v.split(',').map(|x| one(key, x.trim())).collect()
        }
        fn named<T>(key: &str, v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> Result<T> {
            f(v).map_err(|e| LabError::Config(format!("`{key}`: {e}")))
        }
        match key {
            "generator" => self.generator = named(key, value, str::parse)?,
            "K" => self.k = list(key, value)?,
            "N" => self.n = list(key, value)?,
            "T" => self.t = list(key, value)?,
            "T_p" => self.t_p = list(key, value)?,
            "V" => self.v = list(key, value)?,
            "h" => self.h = list(key, value)?,
            "beta" => self.beta = list(key, value)?,
            "steps" => self.steps = list(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "concentration" => self.concentration = one(key, value)?,
            "emission" => self.emission = named(key, value, parse_emission)?,
            "arch" => self.arch = named(key, value, str::parse)?,
            "d_model" => self.d_model = one(key, value)?,
            "heads" => self.heads = one(key, value)?,
            "layers" => self.layers = one(key, value)?,
            "d_ff" => self.d_ff = one(key, value)?,
            "pos_scale" => self.pos_scale = one(key, value)?,
            "prev_token" => self.prev_token = one(key, value)?,
            "init_std" => self.init_std = one(key, value)?,
            "lr" => self.lr = one(key, value)?,
            "warmup" => self.warmup = one(key, value)?,
            "clip_norm" => self.clip_norm = one(key, value)?,
            "batch" => self.batch = one(key, value)?,
            "window" => self.window = one(key, value)?,
            "eval_topics" => self.eval_topics = one(key, value)?,
            "eval_prompts" => self.eval_prompts = one(key, value)?,
            "first_level_sequences" => self.first_level_sequences = one(key, value)?,
            "delta" => self.delta = one(key, value)?,
            "N_prime" => self.n_prime = one(key, value)?,
            "K_prime" => self.k_prime = one(key, value)?,
            "sigma_sequences" => self.sigma_sequences = one(key, value)?,
            "l_records" => self.l_records = one(key, value)?,
            "save_steps" => {
                self.save_steps = if value.is_empty() { Vec::new() } else { list(key, value)? }
            }
            "prior_axis" => self.prior_axis = named(key, value, str::parse)?,
            "prior_holdout" => self.prior_holdout = one(key, value)?,
            "small_layers" => self.small_layers = one(key, value)?,
            "small_d_model" => self.small_d_model = one(key, value)?,
            "small_steps" => self.small_steps = one(key, value)?,
            "small_lr" => self.small_lr = one(key, value)?,
            "small_init_std" => self.small_init_std = one(key, value)?,
            "tau" => self.tau = one(key, value)?,
            "smooth_window" => self.smooth_window = one(key, value)?,
            "lds_state_dim" => self.lds_state_dim = one(key, value)?,
            "lds_obs_dim" => self.lds_obs_dim = one(key, value)?,
            "lds_lags" => self.lds_lags = one(key, value)?,
            "lds_radius" => self.lds_radius = one(key, value)?,
            "lds_noise" => self.lds_noise = one(key, value)?,
            "lds_eval_sequences" => self.lds_eval_sequences = one(key, value)?,
            "workers" => self.workers = one(key, value)?,
            "out" => self.out = PathBuf::from(value),
            other => return Err(LabError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        for (name, grid) in [
            ("K", &self.k),
            ("N", &self.n),
            ("T", &self.t),
            ("T_p", &self.t_p),
            ("V", &self.v),
            ("h", &self.h),
            ("steps", &self.steps),
        ] {
            if grid.is_empty() {
                return bad(format!("`{name}` needs at least one value"));
            }
            if grid.contains(&0) {
                return bad(format!("every `{name}` value must be positive"));
            }
        }
        if self.beta.is_empty() || self.beta.iter().any(|b| !(*b > 0.0)) {
            return bad("every `beta` value must be positive (inf allowed)".into());
        }
        if self.seeds.is_empty() {
            return bad("`seeds` must not be empty".into());
        }
        if self.t_p.iter().any(|&tp| tp < 2) {
            return bad("`T_p` values must be at least 2".into());
        }
        if self.t.iter().any(|&t| t < 2) {
            return bad("`T` values must be at least 2".into());
        }
        if !(self.lr >= 0.0) || !(self.init_std >= 0.0) || !(self.small_lr >= 0.0) || !(self.clip_norm >= 0.0) {
            return bad("learning rates and init scales must be >= 0".into());
        }
        if self.batch == 0 || self.eval_topics == 0 || self.eval_prompts == 0 {
            return bad("`batch`, `eval_topics` and `eval_prompts` must be positive".into());
        }
        if self.eval_prompts % self.eval_topics != 0 {
            return bad(format!(
                "`eval_prompts` ({}) must be a multiple of `eval_topics` ({})",
                self.eval_prompts, self.eval_topics
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("`delta` must lie in (0, 1)".into());
        }
        if self.workers == 0 || self.smooth_window == 0 {
            return bad("`workers` and `smooth_window` must be positive".into());
        }
        match (self.generator, self.arch) {
            (Generator::Lds, ArchKind::LinearReadoutLds) => {}
            (Generator::Lds, _) | (_, ArchKind::LinearReadoutLds) => {
                return bad("the lds generator goes with the linear_readout_lds arch and only with it".into())
            }
            _ => {}
        }
        Ok(())
    }

    pub fn schedule(&self, lr: f64) -> Schedule {
        if self.warmup > 0 {
            Schedule::LinearWarmup { lr, warmup: self.warmup }
        } else {
            Schedule::Constant(lr)
        }
    }

    pub fn clip(&self) -> Option<f64> {
        (self.clip_norm > 0.0).then_some(self.clip_norm)
    }

    pub fn window(&self) -> Option<usize> {
        (self.window > 0).then_some(self.window)
    }

    /// Token model for vocabulary `v` and context `t`.
    pub fn token_arch(&self, v: usize, t: usize) -> Arch {
        match self.arch {
            ArchKind::TabularBigram => Arch::TabularBigram { vocab: v },
            _ => self.attention(v, t, self.d_model, self.layers),
        }
    }

    pub fn attention(&self, v: usize, t: usize, d_model: usize, layers: usize) -> Arch {
        let mut a = AttentionArch::new(v, t, d_model, self.heads, layers);
        a.d_ff = if d_model == self.d_model { self.d_ff } else { 4 * d_model };
        a.pos_scale = self.pos_scale;
        a.prev_token = self.prev_token;
        Arch::TinyAttention(a)
    }

    pub fn lds_arch(&self) -> Arch {
        Arch::LinearReadoutLds { obs_dim: self.lds_obs_dim, lags: self.lds_lags }
    }

    /// Canonical `key = value` text; parsing it back gives the same config.
    pub fn to_text(&self) -> String {
        fn join<T: ToString>(xs: &[T]) -> String {
            xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
        }
        let emission = match self.emission {
            EmissionMode::SharedMemory => "shared_memory",
            EmissionMode::Memory => "memory",
            EmissionMode::Stochastic => "stochastic",
        };
        let arch = match self.arch {
            ArchKind::TinyAttention => "tiny_attention",
            ArchKind::TabularBigram => "tabular_bigram",
            ArchKind::LinearReadoutLds => "linear_readout_lds",
        };
        let axis = match self.prior_axis {
            SplitAxis::Sequence => "sequence",
            SplitAxis::Topic => "topic",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("generator", self.generator.name().into()),
            ("K", join(&self.k)),
            ("N", join(&self.n)),
            ("T", join(&self.t)),
            ("T_p", join(&self.t_p)),
            ("V", join(&self.v)),
            ("h", join(&self.h)),
            ("beta", join(&self.beta)),
            ("steps", join(&self.steps)),
            ("seeds", join(&self.seeds)),
            ("concentration", self.concentration.to_string()),
            ("emission", emission.into()),
            ("arch", arch.into()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("layers", self.layers.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("pos_scale", self.pos_scale.to_string()),
            ("prev_token", self.prev_token.to_string()),
            ("init_std", self.init_std.to_string()),
            ("lr", self.lr.to_string()),
            ("warmup", self.warmup.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("batch", self.batch.to_string()),
            ("window", self.window.to_string()),
            ("eval_topics", self.eval_topics.to_string()),
            ("eval_prompts", self.eval_prompts.to_string()),
            ("first_level_sequences", self.first_level_sequences.to_string()),
            ("delta", self.delta.to_string()),
            ("N_prime", self.n_prime.to_string()),
            ("K_prime", self.k_prime.to_string()),
            ("sigma_sequences", self.sigma_sequences.to_string()),
            ("l_records", self.l_records.to_string()),
            ("save_steps", join(&self.save_steps)),
            ("prior_axis", axis.into()),
            ("prior_holdout", self.prior_holdout.to_string()),
            ("small_layers", self.small_layers.to_string()),
            ("small_d_model", self.small_d_model.to_string()),
            ("small_steps", self.small_steps.to_string()),
            ("small_lr", self.small_lr.to_string()),
            ("small_init_std", self.small_init_std.to_string()),
            ("tau", self.tau.to_string()),
            ("smooth_window", self.smooth_window.to_string()),
            ("lds_state_dim", self.lds_state_dim.to_string()),
            ("lds_obs_dim", self.lds_obs_dim.to_string()),
            ("lds_lags", self.lds_lags.to_string()),
            ("lds_radius", self.lds_radius.to_string()),
            ("lds_noise", self.lds_noise.to_string()),
            ("lds_eval_sequences", self.lds_eval_sequences.to_string()),
            ("workers", self.workers.to_string()),
            ("out", self.out.display().to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        for c in [
            ExperimentConfig::sweep(),
            ExperimentConfig::failure(),
            ExperimentConfig::prior_init(),
            ExperimentConfig::lds(),
        ] {
            let back = ExperimentConfig::parse(&c.to_text(), ExperimentConfig::sweep()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = ExperimentConfig::parse("Kk = 3\n", ExperimentConfig::sweep()).unwrap_err();
        assert!(err.to_string().contains("unknown key `Kk`"), "{err}");
    }

    #[test]
    fn lists_and_comments() {
        let c = ExperimentConfig::parse("K = 2, 5 # topics\nseeds=7\nbeta = inf\n", ExperimentConfig::sweep()).unwrap();
        assert_eq!(c.k, vec![2, 5]);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.beta, vec![f64::INFINITY]);
    }

    #[test]
    fn zero_grid_value_and_empty_seeds_fail() {
        assert!(ExperimentConfig::parse("N = 20, 0\n", ExperimentConfig::sweep()).is_err());
        assert!(ExperimentConfig::parse("seeds = \n", ExperimentConfig::sweep()).is_err());
        assert!(ExperimentConfig::parse("K = 3\nK = 4\n", ExperimentConfig::sweep()).is_err());
    }
}
