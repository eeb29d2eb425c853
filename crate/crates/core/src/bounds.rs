//! Closed-form generalization bounds for the first-level and population
//! losses, the capacity term `C(beta, S, T')`, and estimators of the
//! constants they need (loss bound `S`, gradient bound `L`, expected
//! gradient bound `sigma`, Gaussian posterior/prior KL).
//!
//! Hidden big-O constants are taken as 1.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::corpus::{generate_hmm_sequence, Corpus, TopicHmm};
use crate::error::{invalid, LabError, Result};
use crate::model::{Arch, SequenceModel};
use crate::optim::Checkpoint;
use crate::seed;

pub const DEFAULT_DELTA: f64 = 0.1;

/// Scaling-law constants `(N_c, alpha_N)` giving `S = (N_c / N_param)^alpha_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Scaling {
    pub n_c: f64,
    pub alpha_n: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundInputs {
    pub k: usize,
    pub k_prime: usize,
    pub n: usize,
    pub n_prime: usize,
    pub t: usize,
    pub t_p: usize,
    pub t_prime: usize,
    pub beta: f64,
    pub s: f64,
    pub l: f64,
    pub sigma: f64,
    pub delta: f64,
    pub eps_opt: f64,
    pub n_param: usize,
    pub kl_posterior_prior: Option<f64>,
    pub scaling: Option<Scaling>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("K", self.k), ("N", self.n), ("T", self.t), ("T_p", self.t_p), ("N_param", self.n_param)] {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        if self.n_prime == 0 || self.n_prime >= self.n {
            return Err(invalid(format!("need 0 < N' < N, got N' = {} and N = {}", self.n_prime, self.n)));
        }
        if self.k_prime == 0 || self.k_prime >= self.k {
            return Err(invalid(format!("need 0 < K' < K, got K' = {} and K = {}", self.k_prime, self.k)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.beta > 0.0) {
            return Err(invalid(format!("beta must be positive, got {}", self.beta)));
        }
        for (name, v) in [("S", self.s), ("L", self.l), ("sigma", self.sigma)] {
            if !(v >= 0.0) {
                return Err(invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.eps_opt.is_nan() {
            return Err(invalid("eps_opt is NaN"));
        }
        if let Some(kl) = self.kl_posterior_prior {
            if !(kl >= 0.0) {
                return Err(invalid(format!("KL must be >= 0, got {kl}")));
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines (`#` starts a comment). Every field except
    /// `kl_posterior_prior`, `scaling_n_c`/`scaling_alpha_n` and `delta`
    /// (default 0.1) is required; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| LabError::Config(format!("line {}: expected key = value", i + 1)))?;
            if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(LabError::Config(format!("line {}: duplicate key `{}`", i + 1, k.trim())));
            }
        }
        const KNOWN: [&str; 17] = [
            "K", "K_prime", "N", "N_prime", "T", "T_p", "T_prime", "beta", "S", "L", "sigma", "delta", "eps_opt",
            "N_param", "kl_posterior_prior", "scaling_n_c", "scaling_alpha_n",
        ];
        if let Some(bad) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(LabError::Config(format!("unknown key `{bad}`")));
        }
        fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
            map.get(key)
                .map(|v| v.parse().map_err(|_| LabError::Config(format!("bad value `{v}` for `{key}`"))))
                .transpose()
        }
        let req = |key: &str| LabError::Config(format!("missing key `{key}`"));
        macro_rules! need {
            ($key:expr) => {
                get(&map, $key)?.ok_or_else(|| req($key))?
            };
        }
        let scaling = match (get::<f64>(&map, "scaling_n_c")?, get::<f64>(&map, "scaling_alpha_n")?) {
            (Some(n_c), Some(alpha_n)) => Some(Scaling { n_c, alpha_n }),
            (None, None) => None,
            _ => return Err(LabError::Config("scaling_n_c and scaling_alpha_n go together".into())),
        };
        let inputs = BoundInputs {
            k: need!("K"),
            k_prime: need!("K_prime"),
            n: need!("N"),
            n_prime: need!("N_prime"),
            t: need!("T"),
            t_p: need!("T_p"),
            t_prime: need!("T_prime"),
            beta: need!("beta"),
            s: need!("S"),
            l: need!("L"),
            sigma: need!("sigma"),
            delta: get(&map, "delta")?.unwrap_or(DEFAULT_DELTA),
            eps_opt: need!("eps_opt"),
            n_param: need!("N_param"),
            kl_posterior_prior: get(&map, "kl_posterior_prior")?,
            scaling,
        };
        inputs.validate()?;
        Ok(inputs)
    }
}

/// `phi(x) = (1 - e^{-x}) / x`, with `phi(0) = 1`.
fn phi(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        -(-x).exp_m1() / x
    }
}

/// `C = (beta/2) e^{8 beta S} (1 - exp(-T' / e^{8 beta S}))`, evaluated as
/// `(beta/2) T' phi(T' e^{-8 beta S})` so it stays finite when
/// `e^{8 beta S}` overflows.
pub fn capacity_c(beta: f64, s: f64, t_prime: f64) -> Result<f64> {
    if !(beta > 0.0) || !(s >= 0.0) || !(t_prime >= 0.0) {
        return Err(invalid(format!("capacity needs beta > 0, S >= 0, T' >= 0; got {beta}, {s}, {t_prime}")));
    }
    if t_prime == 0.0 {
        return Ok(0.0);
    }
    let x = t_prime * (-8.0 * beta * s).exp();
    Ok(0.5 * beta * t_prime * phi(x))
}

/// `sup_{T'} C = (beta/2) e^{8 beta S}` (may be `inf`).
pub fn capacity_sup(beta: f64, s: f64) -> f64 {
    0.5 * beta * (8.0 * beta * s).exp()
}

/// `sqrt(max(0, x))` and whether clamping happened.
fn clamped_sqrt(x: f64) -> (f64, bool) {
    if x < 0.0 {
        (0.0, true)
    } else {
        (x.sqrt(), false)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Theorem1 {
    pub capacity: f64,
    /// `ln(1/delta)`.
    pub log_inv_delta: f64,
    /// `sqrt(ln(1/delta) / (K N T))`; `None` without a measured KL.
    pub general_confidence: Option<f64>,
    pub general_radicand: Option<f64>,
    pub general: Option<f64>,
    pub general_clamped: bool,
    /// `L^2 C / N'`, stands in for the KL.
    pub kl_proxy: f64,
    /// `sqrt(ln(1/delta) / (K (N - N') T))`.
    pub detailed_confidence: f64,
    pub detailed_radicand: f64,
    pub detailed: f64,
    pub detailed_clamped: bool,
}

/// First-level bound: `sqrt(ln(1/d)/(KNT)) + sqrt((KL + ln(1/d))/(KNT) - eps_opt)`,
/// and the detailed form with `KL -> L^2 C / N'`, `N -> N - N'`.
pub fn theorem1_bound(inputs: &BoundInputs) -> Result<Theorem1> {
    inputs.validate()?;
    let b = inputs;
    let lid = (1.0 / b.delta).ln();
    let capacity = capacity_c(b.beta, b.s, b.t_prime as f64)?;
    let knt = (b.k * b.n * b.t) as f64;
    let (mut general_confidence, mut general_radicand, mut general, mut general_clamped) = (None, None, None, false);
    if let Some(kl) = b.kl_posterior_prior {
        let conf = (lid / knt).sqrt();
        let rad = (kl + lid) / knt - b.eps_opt;
        let (root, clamped) = clamped_sqrt(rad);
        general_confidence = Some(conf);
        general_radicand = Some(rad);
        general = Some(conf + root);
        general_clamped = clamped;
    }
    let kl_proxy = b.l * b.l * capacity / b.n_prime as f64;
    let knt_d = (b.k * (b.n - b.n_prime) * b.t) as f64;
    let detailed_confidence = (lid / knt_d).sqrt();
    let detailed_radicand = (kl_proxy + lid) / knt_d - b.eps_opt;
    let (root, detailed_clamped) = clamped_sqrt(detailed_radicand);
    Ok(Theorem1 {
        capacity,
        log_inv_delta: lid,
        general_confidence,
        general_radicand,
        general,
        general_clamped,
        kl_proxy,
        detailed_confidence,
        detailed_radicand,
        detailed: detailed_confidence + root,
        detailed_clamped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Theorem2 {
    pub first_level: Theorem1,
    /// `sqrt(1/(K T_p)) (KL + ln(1/delta))`.
    pub general_topic_term: Option<f64>,
    pub general: Option<f64>,
    /// `sigma^2 C / K'`.
    pub topic_kl_proxy: f64,
    /// `sqrt(1/((K - K') T_p)) (sigma^2 C / K' + ln(1/delta))`.
    pub detailed_topic_term: f64,
    pub detailed: f64,
}

/// Population bound: topic term plus the detailed first-level bound `U`.
pub fn theorem2_bound(inputs: &BoundInputs) -> Result<Theorem2> {
    let first = theorem1_bound(inputs)?;
    let b = inputs;
    let u = first.detailed;
    let general_topic_term = b
        .kl_posterior_prior
        .map(|kl| (1.0 / (b.k * b.t_p) as f64).sqrt() * (kl + first.log_inv_delta));
    let topic_kl_proxy = b.sigma * b.sigma * first.capacity / b.k_prime as f64;
    let detailed_topic_term =
        (1.0 / ((b.k - b.k_prime) * b.t_p) as f64).sqrt() * (topic_kl_proxy + first.log_inv_delta);
    Ok(Theorem2 {
        first_level: first,
        general_topic_term,
        general: general_topic_term.map(|t| t + u),
        topic_kl_proxy,
        detailed_topic_term,
        detailed: detailed_topic_term + u,
    })
}

/// Every intermediate term as `(name, value)` rows; absent values are empty.
pub fn bound_table(t2: &Theorem2) -> Vec<(&'static str, String)> {
    let f = |x: f64| format!("{x}");
    let o = |x: Option<f64>| x.map(f).unwrap_or_default();
    let t1 = &t2.first_level;
    vec![
        ("capacity_C", f(t1.capacity)),
        ("log_inv_delta", f(t1.log_inv_delta)),
        ("t1_general_confidence", o(t1.general_confidence)),
        ("t1_general_radicand", o(t1.general_radicand)),
        ("t1_general", o(t1.general)),
        ("t1_general_clamped", t1.general_clamped.to_string()),
        ("t1_kl_proxy", f(t1.kl_proxy)),
        ("t1_detailed_confidence", f(t1.detailed_confidence)),
        ("t1_detailed_radicand", f(t1.detailed_radicand)),
        ("t1_detailed", f(t1.detailed)),
        ("t1_detailed_clamped", t1.detailed_clamped.to_string()),
        ("t2_general_topic_term", o(t2.general_topic_term)),
        ("t2_general", o(t2.general)),
        ("t2_topic_kl_proxy", f(t2.topic_kl_proxy)),
        ("t2_detailed_topic_term", f(t2.detailed_topic_term)),
        ("t2_detailed", f(t2.detailed)),
    ]
}

/// Source of the loss bound `S`.
pub enum SSource<'a> {
    /// Max over corpus positions of `ln P(x|prefix,w) - ln P_theta(x|prefix)`.
    Empirical { model: &'a SequenceModel, corpus: &'a Corpus, topics: &'a [TopicHmm] },
    /// `(N_c / N_param)^alpha_N`.
    Scaling { scaling: Scaling, n_param: usize },
}

pub fn estimate_s(source: Option<SSource<'_>>) -> Result<f64> {
    match source {
        None => Err(invalid("estimating S needs a model and corpus or scaling constants")),
        Some(SSource::Scaling { scaling, n_param }) => {
            if n_param == 0 || !(scaling.n_c > 0.0) {
                return Err(invalid("scaling mode needs N_c > 0 and N_param > 0"));
            }
            Ok((scaling.n_c / n_param as f64).powf(scaling.alpha_n))
        }
        Some(SSource::Empirical { model, corpus, topics }) => {
            if topics.len() != corpus.num_topics {
                return Err(invalid("topic count differs from corpus K"));
            }
            let mut s = f64::NEG_INFINITY;
            for r in &corpus.records {
                if r.tokens.len() < 2 {
                    continue;
                }
                let prefix = &r.tokens[..r.tokens.len() - 1];
                let truth = crate::oracle::conditionals_along(&topics[r.topic], prefix)?;
                let pred = model.predict_all(prefix)?;
                for (t, (p, q)) in truth.iter().zip(&pred).enumerate() {
                    let x = r.tokens[t + 1];
                    s = s.max(p[x].ln() - q[x].ln());
                }
            }
            if s == f64::NEG_INFINITY {
                return Err(invalid("corpus has no positions"));
            }
            Ok(s)
        }
    }
}

fn grad_norm(model: &SequenceModel, seq: &[usize]) -> Result<f64> {
    let (_, g) = model.nll_and_grad(seq)?;
    Ok(g.iter().map(|x| x * x).sum::<f64>().sqrt())
}

/// `L`: max over the given checkpoints and corpus records of the
/// whole-sequence gradient norm.
pub fn estimate_l(arch: &Arch, checkpoints: &[Checkpoint], corpus: &Corpus, records: &[usize]) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(invalid("no checkpoints"));
    }
    if records.is_empty() {
        return Err(invalid("no records"));
    }
    let mut l: f64 = 0.0;
    for c in checkpoints {
        let m = SequenceModel::new(arch.clone(), c.params.clone())?;
        for &i in records {
            let r = corpus.records.get(i).ok_or_else(|| invalid(format!("record {i} out of range")))?;
            l = l.max(grad_norm(&m, &r.tokens)?);
        }
    }
    Ok(l)
}

/// `sigma`: max over checkpoints and topics of the norm of the mean
/// gradient over `m` fresh length-`seq_len` sequences.
pub fn estimate_sigma(
    arch: &Arch,
    checkpoints: &[Checkpoint],
    topics: &[TopicHmm],
    m: usize,
    seq_len: usize,
    seed: u64,
) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(invalid("no checkpoints"));
    }
    if m == 0 {
        return Err(invalid("need at least one fresh sequence per topic"));
    }
    let seqs: Vec<Vec<Vec<usize>>> = topics
        .iter()
        .enumerate()
        .map(|(k, t)| {
            (0..m)
                .map(|i| generate_hmm_sequence(t, seq_len, seed::derive(seed, "sigma", &[k as u64, i as u64])))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut sigma: f64 = 0.0;
    for c in checkpoints {
        let model = SequenceModel::new(arch.clone(), c.params.clone())?;
        for topic_seqs in &seqs {
            let mut mean = vec![0.0; model.params.len()];
            for s in topic_seqs {
                let (_, g) = model.nll_and_grad(s)?;
                mean.iter_mut().zip(&g).for_each(|(a, b)| *a += b / m as f64);
            }
            sigma = sigma.max(mean.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
    }
    Ok(sigma)
}

/// Per-coordinate variance floor of the Gaussian fits.
pub const VARIANCE_FLOOR: f64 = 1e-8;

fn diag_gaussian(runs: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = runs.len() as f64;
    let dim = runs[0].len();
    let mut mean = vec![0.0; dim];
    for r in runs {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for r in runs {
        var.iter_mut().zip(r.iter().zip(&mean)).for_each(|(v, (x, m))| *v += (x - m).powi(2) / n);
    }
    var.iter_mut().for_each(|v| *v = v.max(VARIANCE_FLOOR));
    (mean, var)
}

/// `KL(mu || nu)` between diagonal Gaussians fitted (maximum likelihood
/// mean and variance) to two ensembles of final parameter vectors.
pub fn kl_posterior_prior_gaussian(posterior: &[Vec<f64>], prior: &[Vec<f64>]) -> Result<f64> {
    let fewest = posterior.len().min(prior.len());
    if fewest < 2 {
        return Err(LabError::InsufficientEnsemble(fewest));
    }
    let dim = posterior[0].len();
    if posterior.iter().chain(prior).any(|r| r.len() != dim) {
        return Err(invalid("parameter vectors differ in dimension"));
    }
    let (m1, v1) = diag_gaussian(posterior);
    let (m2, v2) = diag_gaussian(prior);
    let mut kl = 0.0;
    for i in 0..dim {
        kl += 0.5 * (v1[i] / v2[i] + (m2[i] - m1[i]).powi(2) / v2[i] - 1.0 + (v2[i] / v1[i]).ln());
    }
    Ok(kl.max(0.0))
}
