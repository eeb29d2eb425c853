//! Parameterised auto-regressive predictors `P_theta(. | prefix)`.
//!
//! Every model is an architecture descriptor plus one flat parameter
//! vector. Three kinds exist: a tabular bigram (analytically checkable), a
//! tiny causal-attention network, and a linear readout for LDS
//! observations.

mod attention;
mod bigram;
mod checkpoint;
mod lds;
pub(crate) mod linalg;

pub use attention::AttentionArch;
pub use checkpoint::{read_checkpoint, write_checkpoint};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::Token;
use crate::error::{invalid, LabError, Result};
use crate::seed;

/// Default standard deviation of the Gaussian parameter initialisation.
pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Arch {
    TabularBigram { vocab: usize },
    TinyAttention(AttentionArch),
    LinearReadoutLds { obs_dim: usize, lags: usize },
}

/// A named parameter block, `rows x cols`, stored row-major at `offset`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Arch {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Arch::TabularBigram { .. } => "tabular_bigram",
            Arch::TinyAttention(_) => "tiny_attention",
            Arch::LinearReadoutLds { .. } => "linear_readout_lds",
        }
    }

    pub fn is_token_model(&self) -> bool {
        !matches!(self, Arch::LinearReadoutLds { .. })
    }

    pub fn vocab(&self) -> Option<usize> {
        match self {
            Arch::TabularBigram { vocab } => Some(*vocab),
            Arch::TinyAttention(a) => Some(a.vocab),
            Arch::LinearReadoutLds { .. } => None,
        }
    }

    /// Longest prefix the model accepts, if bounded.
    pub fn context(&self) -> Option<usize> {
        match self {
            Arch::TinyAttention(a) => Some(a.context),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Arch::TabularBigram { vocab } if *vocab >= 1 => Ok(()),
            Arch::TabularBigram { .. } => Err(invalid("bigram vocabulary must be positive")),
            Arch::TinyAttention(a) => {
                if a.vocab == 0 || a.context == 0 || a.d_model == 0 || a.heads == 0 || a.d_ff == 0 {
                    return Err(invalid("attention dimensions must be positive"));
                }
                if a.d_model % a.heads != 0 {
                    return Err(invalid(format!("d_model {} not divisible by {} heads", a.d_model, a.heads)));
                }
                if !a.pos_scale.is_finite() {
                    return Err(invalid("position scale must be finite"));
                }
                Ok(())
            }
            Arch::LinearReadoutLds { obs_dim, lags } if *obs_dim >= 1 && *lags >= 1 => Ok(()),
            Arch::LinearReadoutLds { .. } => Err(invalid("LDS readout needs obs_dim >= 1 and lags >= 1")),
        }
    }

    /// Parameter blocks in storage order.
    pub fn blocks(&self) -> Vec<Block> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize| {
            out.push(Block { name, rows, cols, offset });
            offset += rows * cols;
        };
        match self {
            Arch::TabularBigram { vocab } => push("table".into(), *vocab, *vocab),
            Arch::TinyAttention(a) => {
                let (v, d, f) = (a.vocab, a.d_model, a.d_ff);
                push("tok_emb".into(), v, d);
                if a.prev_token {
                    push("prev_emb".into(), v + 1, d);
                }
                for l in 0..a.layers {
                    for w in ["wq", "wk", "wv", "wo"] {
                        push(format!("layer{l}.{w}"), d, d);
                    }
                    push(format!("layer{l}.w1"), d, f);
                    push(format!("layer{l}.b1"), 1, f);
                    push(format!("layer{l}.w2"), f, d);
                    push(format!("layer{l}.b2"), 1, d);
                }
                push("out_bias".into(), 1, v);
            }
            Arch::LinearReadoutLds { obs_dim, lags } => {
                for j in 0..*lags {
                    push(format!("lag{j}"), *obs_dim, *obs_dim);
                }
                push("bias".into(), 1, *obs_dim);
            }
        }
        out
    }
}

pub fn count_params(arch: &Arch) -> usize {
    arch.blocks().iter().map(|b| b.rows * b.cols).sum()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceModel {
    pub arch: Arch,
    pub params: Vec<f64>,
}

impl SequenceModel {
    pub fn new(arch: Arch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let expected = count_params(&arch);
        if params.len() != expected {
            return Err(invalid(format!("expected {expected} parameters, got {}", params.len())));
        }
        Ok(SequenceModel { arch, params })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        let n = count_params(&arch);
        Self::new(arch, vec![0.0; n])
    }

    /// I.i.d. `N(0, init_std^2)` parameters; biases start at zero.
    pub fn init(arch: Arch, init_std: f64, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(arch)?;
        let mut rng = seed::rng(seed);
        for b in model.arch.blocks() {
            if is_bias(&b.name) {
                continue;
            }
            for p in &mut model.params[b.offset..b.offset + b.rows * b.cols] {
                *p = init_std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn check_tokens(&self, seq: &[Token]) -> Result<usize> {
        let vocab = self
            .arch
            .vocab()
            .ok_or_else(|| invalid("token input given to a continuous-output model"))?;
        if let Some(&bad) = seq.iter().find(|&&x| x >= vocab) {
            return Err(invalid(format!("token {bad} outside vocabulary of size {vocab}")));
        }
        if let Some(ctx) = self.arch.context() {
            if seq.len() > ctx {
                return Err(invalid(format!("input of length {} exceeds context {ctx}", seq.len())));
            }
        }
        Ok(vocab)
    }

    /// `P_theta(. | prefix)`.
    pub fn predict_dist(&self, prefix: &[Token]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(invalid("prefix must contain at least one token"));
        }
        let vocab = self.check_tokens(prefix)?;
        match &self.arch {
            Arch::TabularBigram { .. } => Ok(bigram::predict(&self.params, vocab, prefix[prefix.len() - 1])),
            Arch::TinyAttention(a) => {
                let fw = attention::forward(a, &self.params, prefix, None, 0);
                Ok(fw.probs[(prefix.len() - 1) * vocab..].to_vec())
            }
            Arch::LinearReadoutLds { .. } => unreachable!("rejected by check_tokens"),
        }
    }

    /// Entry `t` is `P_theta(. | seq[..=t])`, for every `t` in one pass.
    pub fn predict_all(&self, seq: &[Token]) -> Result<Vec<Vec<f64>>> {
        if seq.is_empty() {
            return Ok(Vec::new());
        }
        let vocab = self.check_tokens(seq)?;
        match &self.arch {
            Arch::TabularBigram { .. } => Ok(seq.iter().map(|&a| bigram::predict(&self.params, vocab, a)).collect()),
            Arch::TinyAttention(a) => {
                let fw = attention::forward(a, &self.params, seq, None, 0);
                Ok(fw.probs.chunks(vocab).map(<[f64]>::to_vec).collect())
            }
            Arch::LinearReadoutLds { .. } => unreachable!("rejected by check_tokens"),
        }
    }

    /// Mean next-token NLL over positions `1..len` and its exact gradient.
    pub fn nll_and_grad(&self, seq: &[Token]) -> Result<(f64, Vec<f64>)> {
        self.segment_nll_and_grad(seq, 0, seq.len())
    }

    /// Same as [`Self::nll_and_grad`] on the window `seq[start..start + len]`.
    /// The attention model sees the token before the window through its
    /// previous-token input and positions are absolute.
    pub fn segment_nll_and_grad(&self, seq: &[Token], start: usize, len: usize) -> Result<(f64, Vec<f64>)> {
        if len < 2 {
            return Err(invalid("need a sequence of length at least 2"));
        }
        if start + len > seq.len() {
            return Err(invalid("window exceeds sequence"));
        }
        let window = &seq[start..start + len];
        let vocab = self.arch.vocab().ok_or_else(|| invalid("token input given to an LDS model"))?;
        if let Some(&bad) = window.iter().find(|&&x| x >= vocab) {
            return Err(invalid(format!("token {bad} outside vocabulary of size {vocab}")));
        }
        match &self.arch {
            Arch::TabularBigram { .. } => Ok(bigram::nll_and_grad(&self.params, vocab, window)),
            Arch::TinyAttention(a) => {
                let inputs = &window[..len - 1];
                if start + inputs.len() > a.context {
                    return Err(invalid(format!("window end {} exceeds context {}", start + len - 1, a.context)));
                }
                let before = start.checked_sub(1).map(|i| seq[i]);
                let fw = attention::forward(a, &self.params, inputs, before, start);
                let m = (len - 1) as f64;
                let mut loss = 0.0;
                let mut dlogits = fw.probs.clone();
                for t in 0..len - 1 {
                    let target = window[t + 1];
                    loss -= fw.probs[t * vocab + target].ln();
                    let row = &mut dlogits[t * vocab..(t + 1) * vocab];
                    row[target] -= 1.0;
                    row.iter_mut().for_each(|g| *g /= m);
                }
                let grad = attention::backward(a, &self.params, &fw, &dlogits);
                Ok((loss / m, grad))
            }
            Arch::LinearReadoutLds { .. } => unreachable!(),
        }
    }

    /// Mean next-token NLL without the gradient.
    pub fn nll(&self, seq: &[Token]) -> Result<f64> {
        if seq.len() < 2 {
            return Err(invalid("need a sequence of length at least 2"));
        }
        let dists = self.predict_all(&seq[..seq.len() - 1])?;
        let total: f64 = dists.iter().zip(&seq[1..]).map(|(p, &x)| -p[x].ln()).sum();
        Ok(total / (seq.len() - 1) as f64)
    }

    fn lds_dims(&self) -> Result<(usize, usize)> {
        match self.arch {
            Arch::LinearReadoutLds { obs_dim, lags } => Ok((obs_dim, lags)),
            _ => Err(invalid(format!("{} is not a continuous-output model", self.arch.kind_name()))),
        }
    }

    /// Predicted next observation given `history`.
    pub fn predict_next_obs(&self, history: &[Vec<f64>]) -> Result<Vec<f64>> {
        let (p, lags) = self.lds_dims()?;
        if history.iter().any(|y| y.len() != p) {
            return Err(invalid("observation dimension mismatch"));
        }
        Ok(lds::predict(&self.params, p, lags, history))
    }

    /// Mean squared one-step prediction error over positions `1..len` and its gradient.
    pub fn mse_and_grad(&self, seq: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
        let (p, lags) = self.lds_dims()?;
        if seq.len() < 2 {
            return Err(invalid("need a sequence of length at least 2"));
        }
        if seq.iter().any(|y| y.len() != p) {
            return Err(invalid("observation dimension mismatch"));
        }
        Ok(lds::mse_and_grad(&self.params, p, lags, seq))
    }
}

fn is_bias(name: &str) -> bool {
    name.ends_with(".b1") || name.ends_with(".b2") || name == "out_bias" || name == "bias"
}

fn dims_le(small: &Arch, large: &Arch) -> Result<()> {
    let bad = |what: &str| Err(LabError::IncompatibleArchitecture(format!("source {what} exceeds target")));
    match (small, large) {
        (Arch::TabularBigram { vocab: a }, Arch::TabularBigram { vocab: b }) => {
            if a > b {
                return bad("vocabulary");
            }
        }
        (Arch::TinyAttention(s), Arch::TinyAttention(l)) => {
            for (name, x, y) in [
                ("vocabulary", s.vocab, l.vocab),
                ("context", s.context, l.context),
                ("d_model", s.d_model, l.d_model),
                ("heads", s.heads, l.heads),
                ("layers", s.layers, l.layers),
                ("d_ff", s.d_ff, l.d_ff),
            ] {
                if x > y {
                    return bad(name);
                }
            }
            if s.prev_token != l.prev_token {
                return Err(LabError::IncompatibleArchitecture("previous-token input differs".into()));
            }
        }
        (Arch::LinearReadoutLds { obs_dim: a, lags: x }, Arch::LinearReadoutLds { obs_dim: b, lags: y }) => {
            if a > b || x > y {
                return bad("obs_dim or lags");
            }
        }
        _ => {
            return Err(LabError::IncompatibleArchitecture(format!(
                "cannot transfer {} into {}",
                small.kind_name(),
                large.kind_name()
            )))
        }
    }
    Ok(())
}

/// Builds a model of architecture `large` whose parameter blocks overlap
/// the ones of `small`: every block present in both is copied on its
/// leading `min(rows) x min(cols)` corner; everything else is drawn from
/// `N(0, init_std^2)` (biases from zero).
pub fn init_from_prior(small: &SequenceModel, large: Arch, init_std: f64, seed: u64) -> Result<SequenceModel> {
    large.validate()?;
    dims_le(&small.arch, &large)?;
    let mut out = SequenceModel::init(large, init_std, seed)?;
    let src_blocks = small.arch.blocks();
    let small_vocab = small.arch.vocab();
    let large_vocab = out.arch.vocab();
    for dst in out.arch.blocks() {
        let Some(src) = src_blocks.iter().find(|b| b.name == dst.name) else { continue };
        let rows = src.rows.min(dst.rows);
        let cols = src.cols.min(dst.cols);
        for r in 0..rows {
            let dst_r = if dst.name == "prev_emb" && Some(r) == small_vocab {
                large_vocab.expect("token model")
            } else {
                r
            };
            let s = src.offset + r * src.cols;
            let d = dst.offset + dst_r * dst.cols;
            out.params[d..d + cols].copy_from_slice(&small.params[s..s + cols]);
        }
    }
    Ok(out)
}
