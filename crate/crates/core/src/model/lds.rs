//! Linear autoregressive readout for LDS observations:
//! `y_hat_{t+1} = b + sum_j A_j y_{t-j}` over `lags` past observations
//! (missing history counts as zero). Loss is squared error averaged over
//! observation components and positions.

pub(crate) fn predict(params: &[f64], p: usize, lags: usize, history: &[Vec<f64>]) -> Vec<f64> {
    let bias = &params[lags * p * p..lags * p * p + p];
    let mut out = bias.to_vec();
    let t = history.len();
    for j in 0..lags.min(t) {
        let y = &history[t - 1 - j];
        let a = &params[j * p * p..(j + 1) * p * p];
        for i in 0..p {
            out[i] += (0..p).map(|c| a[i * p + c] * y[c]).sum::<f64>();
        }
    }
    out
}

pub(crate) fn mse_and_grad(params: &[f64], p: usize, lags: usize, seq: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let m = (seq.len() - 1) as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for t in 0..seq.len() - 1 {
        let pred = predict(params, p, lags, &seq[..=t]);
        let err: Vec<f64> = pred.iter().zip(&seq[t + 1]).map(|(a, b)| a - b).collect();
        loss += err.iter().map(|e| e * e).sum::<f64>() / p as f64;
        // d/dpred of mean_i err_i^2 / m
        let de: Vec<f64> = err.iter().map(|e| 2.0 * e / (p as f64 * m)).collect();
        for (i, g) in grad[lags * p * p..lags * p * p + p].iter_mut().enumerate() {
            *g += de[i];
        }
        for j in 0..lags.min(t + 1) {
            let y = &seq[t - j];
            let ga = &mut grad[j * p * p..(j + 1) * p * p];
            for i in 0..p {
                for c in 0..p {
                    ga[i * p + c] += de[i] * y[c];
                }
            }
        }
    }
    (loss / m, grad)
}
