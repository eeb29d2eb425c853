//! Linear dynamical system topics: `x_{t+1} = W x_t + noise`, `y_{t+1} = C x_{t+1}`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

/// Slack allowed above spectral radius 1 when validating `W`.
pub const DEFAULT_RADIUS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsTopic {
    pub topic_id: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// `state_dim x state_dim`, row-major.
    pub w: Vec<f64>,
    /// `obs_dim x state_dim`, row-major.
    pub c: Vec<f64>,
    pub noise_std: f64,
}

pub fn spectral_radius(m: &[f64], n: usize) -> f64 {
    let mat = DMatrix::from_row_slice(n, n, m);
    mat.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

impl LdsTopic {
    pub fn new(topic_id: usize, w: Vec<Vec<f64>>, c: Vec<Vec<f64>>, noise_std: f64) -> Result<Self> {
        Self::with_tolerance(topic_id, w, c, noise_std, DEFAULT_RADIUS_TOL)
    }

    pub fn with_tolerance(
        topic_id: usize,
        w: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        noise_std: f64,
        radius_tol: f64,
    ) -> Result<Self> {
        let d = w.len();
        let p = c.len();
        if d == 0 || p == 0 {
            return Err(invalid("LDS needs positive state and observation dimensions"));
        }
        if w.iter().any(|r| r.len() != d) || c.iter().any(|r| r.len() != d) {
            return Err(invalid("LDS matrix dimensions are inconsistent"));
        }
        if !(noise_std >= 0.0) {
            return Err(invalid("noise std must be non-negative"));
        }
        let w: Vec<f64> = w.into_iter().flatten().collect();
        let rho = spectral_radius(&w, d);
        if rho > 1.0 + radius_tol {
            return Err(invalid(format!("spectral radius {rho} of W exceeds 1")));
        }
        Ok(LdsTopic {
            topic_id,
            state_dim: d,
            obs_dim: p,
            w,
            c: c.into_iter().flatten().collect(),
            noise_std,
        })
    }

    fn observe(&self, x: &[f64]) -> Vec<f64> {
        (0..self.obs_dim)
            .map(|i| (0..self.state_dim).map(|j| self.c[i * self.state_dim + j] * x[j]).sum())
            .collect()
    }
}

/// Random topic with Gaussian `W` rescaled to spectral radius `radius` and
/// Gaussian `C` with entries of variance `1 / state_dim`.
pub fn sample_lds_topic(
    topic_id: usize,
    state_dim: usize,
    obs_dim: usize,
    radius: f64,
    noise_std: f64,
    seed: u64,
) -> Result<LdsTopic> {
    if state_dim == 0 || obs_dim == 0 {
        return Err(invalid("LDS dimensions must be positive"));
    }
    if !(0.0..=1.0).contains(&radius) {
        return Err(invalid("target spectral radius must lie in [0, 1]"));
    }
    let mut rng = seed::rng(seed);
    let mut w: Vec<f64> = (0..state_dim * state_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let rho = spectral_radius(&w, state_dim);
    let scale = if rho > 0.0 { radius / rho } else { 0.0 };
    w.iter_mut().for_each(|x| *x *= scale);
    let cs = 1.0 / (state_dim as f64).sqrt();
    let c: Vec<f64> = (0..obs_dim * state_dim).map(|_| cs * rng.sample::<f64, _>(StandardNormal)).collect();
    let rows = |m: &[f64], r: usize, k: usize| (0..r).map(|i| m[i * k..(i + 1) * k].to_vec()).collect::<Vec<_>>();
    LdsTopic::with_tolerance(
        topic_id,
        rows(&w, state_dim, state_dim),
        rows(&c, obs_dim, state_dim),
        noise_std,
        1e-6,
    )
}

/// Observations `y_1..y_len`, where `x_1 = W x0 + noise` and `y_t = C x_t`.
pub fn generate_lds_sequence(topic: &LdsTopic, len: usize, x0: &[f64], seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = topic.state_dim;
    if x0.len() != d {
        return Err(invalid(format!("initial state has dimension {}, expected {d}", x0.len())));
    }
    let mut rng = seed::rng(seed);
    let mut x = x0.to_vec();
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        let mut next: Vec<f64> = (0..d).map(|i| (0..d).map(|j| topic.w[i * d + j] * x[j]).sum()).collect();
        if topic.noise_std > 0.0 {
            for v in next.iter_mut() {
                *v += topic.noise_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        x = next;
        out.push(topic.observe(&x));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdsRecord {
    pub topic: usize,
    pub index: usize,
    pub obs: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdsCorpus {
    pub num_topics: usize,
    pub per_topic: usize,
    pub seq_len: usize,
    pub obs_dim: usize,
    pub seed: u64,
    pub records: Vec<LdsRecord>,
}

/// Sequences with standard-normal initial states, topic-major like [`super::Corpus`].
pub fn generate_lds_corpus(topics: &[LdsTopic], per_topic: usize, seq_len: usize, seed: u64) -> Result<LdsCorpus> {
    let first = topics.first().ok_or_else(|| invalid("topic list is empty"))?;
    if per_topic == 0 || seq_len == 0 {
        return Err(invalid("need at least one sequence of at least one step"));
    }
    let mut records = Vec::with_capacity(topics.len() * per_topic);
    for (k, topic) in topics.iter().enumerate() {
        if topic.obs_dim != first.obs_dim {
            return Err(invalid("topics disagree on observation dimension"));
        }
        for n in 0..per_topic {
            let mut rng = seed::child_rng(seed, "x0", &[k as u64, n as u64]);
            let x0: Vec<f64> = (0..topic.state_dim).map(|_| rng.sample(StandardNormal)).collect();
            let s = seed::derive(seed, "lds-noise", &[k as u64, n as u64]);
            records.push(LdsRecord { topic: k, index: n, obs: generate_lds_sequence(topic, seq_len, &x0, s)? });
        }
    }
    Ok(LdsCorpus {
        num_topics: topics.len(),
        per_topic,
        seq_len,
        obs_dim: first.obs_dim,
        seed,
        records,
    })
}
