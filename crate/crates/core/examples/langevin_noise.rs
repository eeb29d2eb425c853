//! Gradient Langevin dynamics: one update at several inverse temperatures,
//! and the same training run at beta = inf vs a finite beta.

use icl_lab::corpus::{generate_corpus, TopicSampler};
use icl_lab::metrics::corpus_nll;
use icl_lab::model::{Arch, AttentionArch, SequenceModel};
use icl_lab::optim::{gld_step, train, TrainConfig};
use icl_lab::seed;

fn main() -> icl_lab::Result<()> {
    let (eta, reps) = (0.1, 20_000);
    println!("{:>10}  {:>14}  {:>14}", "beta", "var per coord", "eta / beta");
    for beta in [1.0, 10.0, 1e3, f64::INFINITY] {
        let mut rng = seed::rng(1);
        let mut sum_sq = 0.0;
        for _ in 0..reps {
            let mut theta = [0.0];
            gld_step(&mut theta, &[0.0], eta, beta, &mut rng)?;
            sum_sq += theta[0] * theta[0];
        }
        println!("{beta:>10}  {:>14.6}  {:>14.6}", sum_sq / reps as f64, eta / beta);
    }

    let topics = TopicSampler::new(3, 16, 1.0)?.with_memory_seed(2).sample_many(4, 3);
    let corpus = generate_corpus(&topics, 8, 32, 4)?;
    let arch = Arch::TinyAttention(AttentionArch::new(16, 32, 8, 2, 1));
    let init = SequenceModel::init(arch, 0.3, 5)?;
    for beta in [f64::INFINITY, 1e4, 1e3, 3e2] {
        let cfg = TrainConfig { beta, clip_norm: Some(1.0), ..TrainConfig::sgd(300, 4, 0.3, 6) };
        let (model, traj) = train(init.clone(), &corpus, &corpus.all_indices(), &cfg)?;
        let norm = traj.final_checkpoint().params.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("beta {beta:>8}: corpus NLL after 300 steps {:.4}, |theta| {norm:.2}", corpus_nll(&model, &corpus)?);
    }
    Ok(())
}
