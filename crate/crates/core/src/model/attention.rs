//! Tiny causal transformer with hand-written backward pass.
//!
//! Input at position `t`: token embedding + previous-token embedding +
//! scaled sinusoidal position code. Each layer is multi-head causal
//! self-attention followed by a GELU MLP, both residual. The readout is tied
//! to the token embedding plus an output bias.

use serde::{Deserialize, Serialize};

use super::linalg::{acc_at_b, acc_matmul_bt, axpy, dot, matmul, matmul_bt};
use crate::corpus::Token;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionArch {
    pub vocab: usize,
    /// Number of positions with a position code.
    pub context: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    /// Adds a learned embedding of the previous token (row `vocab` stands
    /// for "no previous token").
    pub prev_token: bool,
    pub pos_scale: f64,
}

impl AttentionArch {
    pub fn new(vocab: usize, context: usize, d_model: usize, heads: usize, layers: usize) -> Self {
        AttentionArch {
            vocab,
            context,
            d_model,
            heads,
            layers,
            d_ff: 4 * d_model,
            prev_token: true,
            pos_scale: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub tok: usize,
    pub prev: Option<usize>,
    pub layers: Vec<LayerOffsets>,
    pub out_bias: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(a: &AttentionArch) -> Self {
        let (v, d, f) = (a.vocab, a.d_model, a.d_ff);
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let tok = take(v * d);
        let prev = a.prev_token.then(|| take((v + 1) * d));
        let layers = (0..a.layers)
            .map(|_| LayerOffsets {
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let out_bias = take(v);
        Layout { tok, prev, layers, out_bias, total: off }
    }
}

fn position_code(pos: usize, d: usize, out: &mut [f64]) {
    for i in 0..d {
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        out[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[inline]
fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

#[inline]
fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

struct LayerCache {
    x_in: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `heads x n x n`, lower triangle used.
    att: Vec<f64>,
    o: Vec<f64>,
    x_mid: Vec<f64>,
    u: Vec<f64>,
    g: Vec<f64>,
}

pub(crate) struct Forward {
    tokens: Vec<Token>,
    prev: Vec<usize>,
    layers: Vec<LayerCache>,
    x_out: Vec<f64>,
    /// `n x vocab` softmax outputs.
    pub probs: Vec<f64>,
}

/// Runs the network on `tokens`. `before` is the token preceding
/// `tokens[0]` (if any) and `pos_offset` the absolute position of `tokens[0]`.
pub(crate) fn forward(a: &AttentionArch, params: &[f64], tokens: &[Token], before: Option<Token>, pos_offset: usize) -> Forward {
    let lay = Layout::new(a);
    let (n, d, v, f, nh) = (tokens.len(), a.d_model, a.vocab, a.d_ff, a.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let prev: Vec<usize> = (0..n)
        .map(|t| if t == 0 { before.unwrap_or(v) } else { tokens[t - 1] })
        .collect();
    let mut x = vec![0.0; n * d];
    let mut pe = vec![0.0; d];
    for t in 0..n {
        let row = &mut x[t * d..(t + 1) * d];
        row.copy_from_slice(&params[lay.tok + tokens[t] * d..lay.tok + (tokens[t] + 1) * d]);
        if let Some(po) = lay.prev {
            axpy(row, 1.0, &params[po + prev[t] * d..po + (prev[t] + 1) * d]);
        }
        if a.pos_scale != 0.0 {
            position_code(pos_offset + t, d, &mut pe);
            axpy(row, a.pos_scale, &pe);
        }
    }

    let mut caches = Vec::with_capacity(a.layers);
    for lo in &lay.layers {
        let q = matmul(&x, &params[lo.wq..lo.wq + d * d], n, d, d);
        let k = matmul(&x, &params[lo.wk..lo.wk + d * d], n, d, d);
        let vv = matmul(&x, &params[lo.wv..lo.wv + d * d], n, d, d);
        let mut att = vec![0.0; nh * n * n];
        let mut o = vec![0.0; n * d];
        for h in 0..nh {
            let hs = h * dh;
            for t in 0..n {
                let arow = &mut att[(h * n + t) * n..(h * n + t) * n + t + 1];
                let qt = &q[t * d + hs..t * d + hs + dh];
                let mut max = f64::NEG_INFINITY;
                for (s, a_ts) in arow.iter_mut().enumerate() {
                    *a_ts = scale * dot(qt, &k[s * d + hs..s * d + hs + dh]);
                    max = max.max(*a_ts);
                }
                let mut sum = 0.0;
                for a_ts in arow.iter_mut() {
                    *a_ts = (*a_ts - max).exp();
                    sum += *a_ts;
                }
                let ot = &mut o[t * d + hs..t * d + hs + dh];
                for (s, a_ts) in arow.iter_mut().enumerate() {
                    *a_ts /= sum;
                    axpy(ot, *a_ts, &vv[s * d + hs..s * d + hs + dh]);
                }
            }
        }
        let mut x_mid = matmul(&o, &params[lo.wo..lo.wo + d * d], n, d, d);
        x_mid.iter_mut().zip(&x).for_each(|(m, xi)| *m += xi);
        let mut u = matmul(&x_mid, &params[lo.w1..lo.w1 + d * f], n, d, f);
        for t in 0..n {
            axpy(&mut u[t * f..(t + 1) * f], 1.0, &params[lo.b1..lo.b1 + f]);
        }
        let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
        let mut x_next = matmul(&g, &params[lo.w2..lo.w2 + f * d], n, f, d);
        for t in 0..n {
            let row = &mut x_next[t * d..(t + 1) * d];
            axpy(row, 1.0, &params[lo.b2..lo.b2 + d]);
            axpy(row, 1.0, &x_mid[t * d..(t + 1) * d]);
        }
        caches.push(LayerCache { x_in: x, q, k, v: vv, att, o, x_mid, u, g });
        x = x_next;
    }

    let mut probs = matmul_bt(&x, &params[lay.tok..lay.tok + v * d], n, d, v);
    for t in 0..n {
        let row = &mut probs[t * v..(t + 1) * v];
        axpy(row, 1.0, &params[lay.out_bias..lay.out_bias + v]);
        crate::prob::softmax_in_place(row);
    }
    Forward { tokens: tokens.to_vec(), prev, layers: caches, x_out: x, probs }
}

/// Gradient of `sum_t sum_x dlogits[t][x] * logits[t][x]` with respect to
/// the parameters, given the cached forward pass.
pub(crate) fn backward(a: &AttentionArch, params: &[f64], fw: &Forward, dlogits: &[f64]) -> Vec<f64> {
    let lay = Layout::new(a);
    let (n, d, v, f, nh) = (fw.tokens.len(), a.d_model, a.vocab, a.d_ff, a.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut grad = vec![0.0; lay.total];

    // readout
    acc_at_b(&mut grad[lay.tok..lay.tok + v * d], dlogits, &fw.x_out, n, v, d);
    let mut dx = matmul(dlogits, &params[lay.tok..lay.tok + v * d], n, v, d);
    for t in 0..n {
        axpy(&mut grad[lay.out_bias..lay.out_bias + v], 1.0, &dlogits[t * v..(t + 1) * v]);
    }

    for (lo, c) in lay.layers.iter().zip(&fw.layers).rev() {
        // MLP
        acc_at_b(&mut grad[lo.w2..lo.w2 + f * d], &c.g, &dx, n, f, d);
        for t in 0..n {
            axpy(&mut grad[lo.b2..lo.b2 + d], 1.0, &dx[t * d..(t + 1) * d]);
        }
        let mut du = matmul_bt(&dx, &params[lo.w2..lo.w2 + f * d], n, d, f);
        du.iter_mut().zip(&c.u).for_each(|(g, &z)| *g *= gelu_grad(z));
        acc_at_b(&mut grad[lo.w1..lo.w1 + d * f], &c.x_mid, &du, n, d, f);
        for t in 0..n {
            axpy(&mut grad[lo.b1..lo.b1 + f], 1.0, &du[t * f..(t + 1) * f]);
        }
        let mut dx_mid = dx;
        acc_matmul_bt(&mut dx_mid, &du, &params[lo.w1..lo.w1 + d * f], n, f, d);

        // attention
        acc_at_b(&mut grad[lo.wo..lo.wo + d * d], &c.o, &dx_mid, n, d, d);
        let d_o = matmul_bt(&dx_mid, &params[lo.wo..lo.wo + d * d], n, d, d);
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for h in 0..nh {
            let hs = h * dh;
            for t in 0..n {
                let arow = &c.att[(h * n + t) * n..(h * n + t) * n + t + 1];
                let dot_t = &d_o[t * d + hs..t * d + hs + dh];
                let mut weighted = 0.0;
                for s in 0..=t {
                    da[s] = dot(dot_t, &c.v[s * d + hs..s * d + hs + dh]);
                    weighted += arow[s] * da[s];
                    axpy(&mut dv[s * d + hs..s * d + hs + dh], arow[s], dot_t);
                }
                for s in 0..=t {
                    let ds = arow[s] * (da[s] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(&mut dq[t * d + hs..t * d + hs + dh], ds, &c.k[s * d + hs..s * d + hs + dh]);
                    axpy(&mut dk[s * d + hs..s * d + hs + dh], ds, &c.q[t * d + hs..t * d + hs + dh]);
                }
            }
        }
        acc_at_b(&mut grad[lo.wq..lo.wq + d * d], &c.x_in, &dq, n, d, d);
        acc_at_b(&mut grad[lo.wk..lo.wk + d * d], &c.x_in, &dk, n, d, d);
        acc_at_b(&mut grad[lo.wv..lo.wv + d * d], &c.x_in, &dv, n, d, d);
        let mut dx_in = dx_mid;
        acc_matmul_bt(&mut dx_in, &dq, &params[lo.wq..lo.wq + d * d], n, d, d);
        acc_matmul_bt(&mut dx_in, &dk, &params[lo.wk..lo.wk + d * d], n, d, d);
        acc_matmul_bt(&mut dx_in, &dv, &params[lo.wv..lo.wv + d * d], n, d, d);
        dx = dx_in;
    }

    for t in 0..n {
        let row = &dx[t * d..(t + 1) * d];
        let tok = fw.tokens[t];
        axpy(&mut grad[lay.tok + tok * d..lay.tok + (tok + 1) * d], 1.0, row);
        if let Some(po) = lay.prev {
            let p = fw.prev[t];
            axpy(&mut grad[po + p * d..po + (p + 1) * d], 1.0, row);
        }
    }
    grad
}
