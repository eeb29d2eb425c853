//! Full-batch SGD on a tabular bigram model: training NLL approaches the
//! corpus's own bigram entropy.

use icl_lab::corpus::{generate_corpus, TopicSampler};
use icl_lab::metrics::corpus_nll;
use icl_lab::model::{Arch, SequenceModel};
use icl_lab::optim::{train, TrainConfig};

fn main() -> icl_lab::Result<()> {
    let v = 12;
    let topics = TopicSampler::new(3, v, 1.0)?.with_memory_seed(1).sample_many(3, 2);
    let corpus = generate_corpus(&topics, 20, 48, 3)?;

    let mut counts = vec![0.0; v * v];
    for r in &corpus.records {
        for w in r.tokens.windows(2) {
            counts[w[0] * v + w[1]] += 1.0;
        }
    }
    let mut entropy = 0.0;
    let mut pairs = 0.0;
    for row in counts.chunks(v) {
        let n: f64 = row.iter().sum();
        for &c in row.iter().filter(|&&c| c > 0.0) {
            entropy -= c * (c / n).ln();
        }
        pairs += n;
    }

    let model = SequenceModel::init(Arch::TabularBigram { vocab: v }, 0.0, 0)?;
    let cfg = TrainConfig::sgd(400, corpus.len(), 2.0, 9);
    let (trained, traj) = train(model, &corpus, &corpus.all_indices(), &cfg)?;
    for step in [0, 10, 50, 100, 200, 399] {
        println!("step {step:>3}  loss {:.4}", traj.step_losses[step]);
    }
    println!("final corpus NLL {:.4}", corpus_nll(&trained, &corpus)?);
    println!("empirical conditional entropy (transitions only) {:.4}", entropy / pairs);
    Ok(())
}
