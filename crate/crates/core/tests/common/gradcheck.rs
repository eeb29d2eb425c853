use icl_lab::model::{Arch, SequenceModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so coordinates with a vanishing gradient are judged
/// on absolute error.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug)]
pub struct GradReport {
    pub cases: usize,
    pub max_rel_err: f64,
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn compare(model: &SequenceModel, grad: &[f64], loss: impl Fn(&SequenceModel) -> f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = model.params.len();
    let coords: Vec<usize> = if n <= 60 { (0..n).collect() } else { (0..60).map(|_| rng.gen_range(0..n)).collect() };
    let mut worst: f64 = 0.0;
    let mut m = model.clone();
    for i in coords {
        let orig = m.params[i];
        m.params[i] = orig + FD_STEP;
        let up = loss(&m);
        m.params[i] = orig - FD_STEP;
        let down = loss(&m);
        m.params[i] = orig;
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * FD_STEP)));
    }
    worst
}

pub fn check_tokens(arch: &Arch, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SequenceModel::init(arch.clone(), 0.5, seed).unwrap();
    let vocab = arch.vocab().unwrap();
    let len = rng.gen_range(2..=arch.context().unwrap_or(10).min(10));
    let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    let (_, grad) = model.nll_and_grad(&seq).unwrap();
    let mut worst = compare(&model, &grad, |m| m.nll(&seq).unwrap(), &mut rng);
    if len >= 4 {
        let (start, wlen) = (1, len - 2);
        let (_, g) = model.segment_nll_and_grad(&seq, start, wlen).unwrap();
        worst = worst.max(compare(&model, &g, |m| m.segment_nll_and_grad(&seq, start, wlen).unwrap().0, &mut rng));
    }
    GradReport { cases: 1, max_rel_err: worst }
}

pub fn check_lds(arch: &Arch, seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SequenceModel::init(arch.clone(), 0.5, seed).unwrap();
    let Arch::LinearReadoutLds { obs_dim, .. } = *arch else { panic!("not an LDS arch") };
    let len = rng.gen_range(2..8);
    let seq: Vec<Vec<f64>> = (0..len).map(|_| (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let (_, grad) = model.mse_and_grad(&seq).unwrap();
    let worst = compare(&model, &grad, |m| m.mse_and_grad(&seq).unwrap().0, &mut rng);
    GradReport { cases: 1, max_rel_err: worst }
}
