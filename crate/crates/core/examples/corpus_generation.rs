//! Sample a topic family, draw a pre-training corpus and an ICL prompt,
//! and write both to JSON.
//!
//!     cargo run --example corpus_generation -- [out_dir]

use icl_lab::corpus::{build_prompt, generate_corpus, token_label, write_corpus_jsonl, write_topics, TopicSampler};

fn main() -> icl_lab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out/corpus_example".into());
    std::fs::create_dir_all(&out)?;

    let sampler = TopicSampler::new(5, 50, 1.0)?.with_memory_seed(7);
    let topics = sampler.sample_many(4, 1);
    let corpus = generate_corpus(&topics, 10, 64, 2)?;
    println!("{} sequences of length {} over V={}", corpus.len(), corpus.seq_len, corpus.vocab);

    let first = &corpus.record(0, 0).tokens;
    let shown: Vec<String> = first.iter().take(16).map(|&t| token_label(t)).collect();
    println!("topic 0, sequence 0: {} ...", shown.join(" "));

    let prompt = build_prompt(&topics[2], 12, 3)?;
    println!("prompt from topic 2: {:?} -> query target {}", &prompt[..11], prompt[11]);

    write_corpus_jsonl(&std::path::Path::new(&out).join("corpus.jsonl"), &corpus)?;
    write_topics(&std::path::Path::new(&out).join("topics.json"), &topics)?;
    println!("wrote {out}/corpus.jsonl and {out}/topics.json");
    Ok(())
}
