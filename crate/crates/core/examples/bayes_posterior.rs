//! The exact Bayes mixture over a topic family: the posterior concentrates
//! on the generating topic as the prompt grows.

use icl_lab::corpus::{build_prompt, TopicSampler};
use icl_lab::oracle::MixtureFilter;

fn main() -> icl_lab::Result<()> {
    let topics = TopicSampler::new(5, 50, 1.0)?.with_memory_seed(3).sample_many(6, 11);
    let truth = 4;
    let prompt = build_prompt(&topics[truth], 64, 5)?;
    let prior = vec![1.0 / topics.len() as f64; topics.len()];

    let mut filter = MixtureFilter::new(&topics, &prior)?;
    println!("{:>4}  posterior over topics (true topic {truth})", "t");
    for (t, &x) in prompt.iter().enumerate() {
        filter.observe(x)?;
        if [0, 1, 3, 7, 15, 31, 63].contains(&t) {
            let post: Vec<String> = filter.posterior()?.iter().map(|p| format!("{p:.3}")).collect();
            println!("{:>4}  {}", t + 1, post.join(" "));
        }
    }
    let next = filter.predict()?.next_token;
    let best = icl_lab::prob::argmax(&next);
    println!("most likely next token: {best} (p = {:.3})", next[best]);
    Ok(())
}
