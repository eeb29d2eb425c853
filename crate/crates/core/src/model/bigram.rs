//! Tabular bigram model: `P(x_{t+1} = b | x_t = a) = softmax(table[a])[b]`.

use crate::corpus::Token;
use crate::prob::softmax;

pub(crate) fn row(params: &[f64], vocab: usize, a: Token) -> &[f64] {
    &params[a * vocab..(a + 1) * vocab]
}

pub(crate) fn predict(params: &[f64], vocab: usize, last: Token) -> Vec<f64> {
    softmax(row(params, vocab, last))
}

/// Mean NLL over the `seq.len() - 1` transitions and its gradient.
pub(crate) fn nll_and_grad(params: &[f64], vocab: usize, seq: &[Token]) -> (f64, Vec<f64>) {
    let m = (seq.len() - 1) as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for w in seq.windows(2) {
        let (a, b) = (w[0], w[1]);
        let p = predict(params, vocab, a);
        loss -= p[b].ln();
        let g = &mut grad[a * vocab..(a + 1) * vocab];
        for (gi, pi) in g.iter_mut().zip(&p) {
            *gi += pi / m;
        }
        g[b] -= 1.0 / m;
    }
    (loss / m, grad)
}
