//! Small helpers shared by the generators, the oracle and the models.

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{invalid, Result};

/// Tolerance for "sums to one" checks on constructed stochastic objects.
pub const SIMPLEX_TOL: f64 = 1e-9;

pub fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(invalid(format!("{what}: empty distribution")));
    }
    let mut sum = 0.0;
    for (i, &x) in p.iter().enumerate() {
        if !(x >= 0.0) || !x.is_finite() {
            return Err(invalid(format!("{what}: entry {i} = {x} is not a probability")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(invalid(format!("{what}: sums to {sum}, not 1")));
    }
    Ok(())
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    p.iter().rposition(|&x| x > 0.0).unwrap_or(p.len() - 1)
}

/// Draws from a symmetric Dirichlet(`alpha`) over `n` categories.
pub fn symmetric_dirichlet<R: Rng + ?Sized>(rng: &mut R, n: usize, alpha: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated by caller");
    let mut w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.iter_mut().for_each(|x| *x /= sum);
    } else {
        w.iter_mut().for_each(|x| *x = 1.0 / n as f64);
    }
    w
}

/// Log-sum-exp of a slice; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}
