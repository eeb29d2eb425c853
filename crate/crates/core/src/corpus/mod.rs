//! Topic and sequence generation.
//!
//! A topic is a hidden Markov model over `h` hidden states emitting tokens
//! from a vocabulary of size `V`. In memory-map mode (the default whenever
//! `h <= V`) every state deterministically emits one token and distinct
//! states emit distinct tokens, so the token stream is a relabelled Markov
//! chain. By default every topic drawn from one [`TopicSampler`] shares a
//! single memory map, so topics differ only in their transitions.

mod io;
mod lds;
mod split;

pub use io::{read_corpus_jsonl, read_topics, write_corpus_jsonl, write_topics};
pub use lds::{generate_lds_corpus, generate_lds_sequence, sample_lds_topic, LdsCorpus, LdsRecord, LdsTopic};
pub use split::{split_prior, PriorSplit, SplitAxis};

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::prob::{check_simplex, sample_categorical, symmetric_dirichlet};
use crate::seed;

pub type Token = usize;
pub type TokenSeq = Vec<Token>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicHmm {
    pub topic_id: usize,
    pub states: usize,
    pub vocab: usize,
    /// `states x states`, row-major, row-stochastic.
    pub transition: Vec<f64>,
    pub start: Vec<f64>,
    /// `states x vocab`, row-major, row-stochastic.
    pub emission: Vec<f64>,
}

impl TopicHmm {
    pub fn new(
        topic_id: usize,
        transition: Vec<Vec<f64>>,
        start: Vec<f64>,
        emission: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let states = start.len();
        let vocab = emission.first().map_or(0, Vec::len);
        let topic = TopicHmm {
            topic_id,
            states,
            vocab,
            transition: transition.into_iter().flatten().collect(),
            start,
            emission: emission.into_iter().flatten().collect(),
        };
        topic.validate()?;
        Ok(topic)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, v) = (self.states, self.vocab);
        if h == 0 || v == 0 {
            return Err(invalid("topic needs at least one state and one token"));
        }
        if self.transition.len() != h * h || self.emission.len() != h * v || self.start.len() != h {
            return Err(invalid("topic matrix dimensions are inconsistent"));
        }
        check_simplex(&self.start, "start distribution")?;
        for i in 0..h {
            check_simplex(self.transition_row(i), "transition row")?;
            check_simplex(self.emission_row(i), "emission row")?;
        }
        Ok(())
    }

    pub fn transition_row(&self, i: usize) -> &[f64] {
        &self.transition[i * self.states..(i + 1) * self.states]
    }

    pub fn emission_row(&self, i: usize) -> &[f64] {
        &self.emission[i * self.vocab..(i + 1) * self.vocab]
    }

    /// Returns the HMM whose tokens are i.i.d. uniform over the vocabulary:
    /// uniform transitions between `states` hidden states and uniform
    /// emissions. Every token transition is equally likely.
    pub fn random_transition(states: usize, vocab: usize) -> Result<Self> {
        if states == 0 || vocab < 2 {
            return Err(invalid("random-transition source needs h >= 1 and V >= 2"));
        }
        let h = states;
        Ok(TopicHmm {
            topic_id: 0,
            states: h,
            vocab,
            transition: vec![1.0 / h as f64; h * h],
            start: vec![1.0 / h as f64; h],
            emission: vec![1.0 / vocab as f64; h * vocab],
        })
    }

    /// Returns a copy with every token id `x` replaced by `perm[x]`.
    pub fn relabel(&self, perm: &[Token]) -> Self {
        let mut out = self.clone();
        for i in 0..self.states {
            for x in 0..self.vocab {
                out.emission[i * self.vocab + perm[x]] = self.emission[i * self.vocab + x];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionMode {
    /// One deterministic injective state-to-token map shared by all topics
    /// of a sampler; falls back to `Stochastic` when there are more states
    /// than tokens.
    SharedMemory,
    /// Like `SharedMemory`, but every topic draws its own map.
    Memory,
    /// Dirichlet emission rows.
    Stochastic,
}

/// The topic distribution: every draw is an independent random HMM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicSampler {
    pub states: usize,
    pub vocab: usize,
    pub concentration: f64,
    pub emission: EmissionMode,
    /// Seed of the shared memory map.
    pub memory_seed: u64,
}

impl TopicSampler {
    pub fn new(states: usize, vocab: usize, concentration: f64) -> Result<Self> {
        if states == 0 {
            return Err(invalid("state count must be positive"));
        }
        if vocab < 2 {
            return Err(invalid("vocabulary needs at least two tokens"));
        }
        if !(concentration > 0.0) || !concentration.is_finite() {
            return Err(invalid(format!("concentration must be positive, got {concentration}")));
        }
        Ok(TopicSampler { states, vocab, concentration, emission: EmissionMode::SharedMemory, memory_seed: 0 })
    }

    pub fn with_emission(mut self, mode: EmissionMode) -> Self {
        self.emission = mode;
        self
    }

    pub fn with_memory_seed(mut self, seed: u64) -> Self {
        self.memory_seed = seed;
        self
    }

    /// Token emitted by each state under the shared map, if there is one.
    pub fn shared_map(&self) -> Option<Vec<Token>> {
        (self.emission == EmissionMode::SharedMemory && self.states <= self.vocab).then(|| {
            let mut rng = seed::child_rng(self.memory_seed, "memory", &[]);
            sample_indices(&mut rng, self.vocab, self.states).into_vec()
        })
    }

    pub fn sample(&self, topic_id: usize, seed: u64) -> TopicHmm {
        let (h, v) = (self.states, self.vocab);
        let mut rng = seed::rng(seed);
        let start = symmetric_dirichlet(&mut rng, h, self.concentration);
        let mut transition = Vec::with_capacity(h * h);
        for _ in 0..h {
            transition.extend(symmetric_dirichlet(&mut rng, h, self.concentration));
        }
        let mut emission = vec![0.0; h * v];
        if let Some(map) = self.shared_map() {
            for (state, token) in map.into_iter().enumerate() {
                emission[state * v + token] = 1.0;
            }
        } else if self.emission == EmissionMode::Memory && h <= v {
            for (state, token) in sample_indices(&mut rng, v, h).into_iter().enumerate() {
                emission[state * v + token] = 1.0;
            }
        } else {
            for state in 0..h {
                let row = symmetric_dirichlet(&mut rng, v, self.concentration);
                emission[state * v..(state + 1) * v].copy_from_slice(&row);
            }
        }
        TopicHmm { topic_id, states: h, vocab: v, transition, start, emission }
    }

    /// Draws `count` topics with ids `0..count`, each from its own derived seed.
    pub fn sample_many(&self, count: usize, seed: u64) -> Vec<TopicHmm> {
        (0..count).map(|k| self.sample(k, seed::derive(seed, "topic", &[k as u64]))).collect()
    }
}

pub fn sample_topic_hmm(states: usize, vocab: usize, concentration: f64, seed: u64) -> Result<TopicHmm> {
    Ok(TopicSampler::new(states, vocab, concentration)?.with_memory_seed(seed).sample(0, seed))
}

pub fn generate_hmm_sequence(topic: &TopicHmm, len: usize, seed: u64) -> Result<TokenSeq> {
    if len == 0 {
        return Err(invalid("sequence length must be at least 1"));
    }
    let mut rng = seed::rng(seed);
    let mut state = sample_categorical(&mut rng, &topic.start);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        out.push(sample_categorical(&mut rng, topic.emission_row(state)));
        if t + 1 < len {
            state = sample_categorical(&mut rng, topic.transition_row(state));
        }
    }
    Ok(out)
}

/// One ICL prompt of length `prompt_len`; the last token is the prediction
/// target and the rest is the context.
pub fn build_prompt(topic: &TopicHmm, prompt_len: usize, seed: u64) -> Result<TokenSeq> {
    if prompt_len < 2 {
        return Err(invalid("prompt length must be at least 2"));
    }
    generate_hmm_sequence(topic, prompt_len, seed)
}

/// Concatenates demonstrations into one prompt, optionally separated by a
/// delimiter token.
pub fn concat_demonstrations(demos: &[TokenSeq], delimiter: Option<Token>) -> TokenSeq {
    let mut out = Vec::new();
    for (i, d) in demos.iter().enumerate() {
        if i > 0 {
            if let Some(tok) = delimiter {
                out.push(tok);
            }
        }
        out.extend_from_slice(d);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Hmm,
    RandomTransition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    #[serde(rename = "k")]
    pub topic: usize,
    #[serde(rename = "n")]
    pub index: usize,
    pub tokens: TokenSeq,
}

/// `K * N` token sequences, stored topic-major: record `k * N + n` is
/// sequence `n` of topic `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub kind: GeneratorKind,
    pub num_topics: usize,
    pub per_topic: usize,
    pub seq_len: usize,
    pub vocab: usize,
    pub seed: u64,
    pub records: Vec<SequenceRecord>,
}

impl Corpus {
    pub fn record(&self, topic: usize, index: usize) -> &SequenceRecord {
        &self.records[topic * self.per_topic + index]
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.records.len()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.records.len() != self.num_topics * self.per_topic {
            return Err(invalid("record count differs from K * N"));
        }
        for r in &self.records {
            if r.tokens.len() != self.seq_len {
                return Err(invalid("sequence length differs from T"));
            }
            if let Some(&bad) = r.tokens.iter().find(|&&x| x >= self.vocab) {
                return Err(invalid(format!("token {bad} outside vocabulary of size {}", self.vocab)));
            }
        }
        Ok(())
    }
}

pub fn generate_corpus(topics: &[TopicHmm], per_topic: usize, seq_len: usize, seed: u64) -> Result<Corpus> {
    let first = topics.first().ok_or_else(|| invalid("topic list is empty"))?;
    if per_topic == 0 {
        return Err(invalid("sequences per topic must be at least 1"));
    }
    if topics.iter().any(|t| t.vocab != first.vocab) {
        return Err(invalid("topics disagree on vocabulary size"));
    }
    let mut records = Vec::with_capacity(topics.len() * per_topic);
    for (k, topic) in topics.iter().enumerate() {
        for n in 0..per_topic {
            let s = seed::derive(seed, "sequence", &[k as u64, n as u64]);
            records.push(SequenceRecord { topic: k, index: n, tokens: generate_hmm_sequence(topic, seq_len, s)? });
        }
    }
    Ok(Corpus {
        kind: GeneratorKind::Hmm,
        num_topics: topics.len(),
        per_topic,
        seq_len,
        vocab: first.vocab,
        seed,
        records,
    })
}

/// Pre-training data without topic structure: every token transition is
/// uniformly random. The corpus has a single pseudo-topic whose oracle is
/// [`TopicHmm::random_transition`].
pub fn make_random_transition_corpus(
    states: usize,
    vocab: usize,
    count: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Corpus> {
    let source = TopicHmm::random_transition(states, vocab)?;
    let mut corpus = generate_corpus(std::slice::from_ref(&source), count, seq_len, seed)?;
    corpus.kind = GeneratorKind::RandomTransition;
    Ok(corpus)
}

/// Display label for a token id: `a..z`, then `aa..az`, `ba..`, and so on.
pub fn token_label(id: Token) -> String {
    let mut n = id + 1;
    let mut out = Vec::new();
    while n > 0 {
        n -= 1;
        out.push(b'a' + (n % 26) as u8);
        n /= 26;
    }
    out.reverse();
    String::from_utf8(out).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degenerate(token: Token, vocab: usize) -> TopicHmm {
        let mut emission = vec![0.0; vocab];
        emission[token] = 1.0;
        TopicHmm::new(0, vec![vec![1.0]], vec![1.0], vec![emission]).unwrap()
    }

    #[test]
    fn single_state_topic_has_unit_transition() {
        let t = sample_topic_hmm(1, 2, 0.3, 5).unwrap();
        assert_eq!(t.transition, vec![1.0]);
    }

    #[test]
    fn sampled_rows_are_stochastic() {
        let t = sample_topic_hmm(3, 50, 1.0, 7).unwrap();
        for i in 0..3 {
            assert!((t.transition_row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        t.validate().unwrap();
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_topic_hmm(2, 4, 1.0, 1).unwrap();
        let b = sample_topic_hmm(2, 4, 1.0, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.transition.iter().zip(&b.transition).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn memory_map_is_injective() {
        let t = sample_topic_hmm(5, 50, 1.0, 11).unwrap();
        let mut tokens: Vec<usize> = (0..5).map(|i| crate::prob::argmax(t.emission_row(i))).collect();
        tokens.sort();
        tokens.dedup();
        assert_eq!(tokens.len(), 5);
    }

    #[test]
    fn more_states_than_tokens_uses_dirichlet_rows() {
        let t = sample_topic_hmm(6, 3, 1.0, 2).unwrap();
        t.validate().unwrap();
        assert!(t.emission.iter().filter(|&&x| x > 0.0).count() > 6);
    }

    #[test]
    fn invalid_sampler_arguments() {
        assert!(sample_topic_hmm(0, 4, 1.0, 0).is_err());
        assert!(sample_topic_hmm(2, 1, 1.0, 0).is_err());
        assert!(sample_topic_hmm(2, 4, 0.0, 0).is_err());
        assert!(sample_topic_hmm(2, 4, -1.0, 0).is_err());
    }

    #[test]
    fn degenerate_chain_repeats_its_token() {
        let t = TopicHmm::new(
            0,
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![1.0, 0.0],
            vec![vec![0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(generate_hmm_sequence(&t, 5, 42).unwrap(), vec![3, 3, 3, 3, 3]);
        assert!(generate_hmm_sequence(&t, 0, 42).is_err());
    }

    #[test]
    fn single_degenerate_corpus() {
        let c = generate_corpus(&[degenerate(3, 4)], 1, 3, 0).unwrap();
        assert_eq!(c.records.len(), 1);
        assert_eq!(c.records[0].tokens, vec![3, 3, 3]);
        assert!(generate_corpus(&[], 1, 3, 0).is_err());
    }

    #[test]
    fn corpus_sizes_match_metadata() {
        let topics = TopicSampler::new(5, 50, 1.0).unwrap().sample_many(10, 3);
        let c = generate_corpus(&topics, 20, 1280, 9).unwrap();
        assert_eq!(c.records.len(), 200);
        assert_eq!((c.num_topics, c.per_topic, c.seq_len, c.vocab), (10, 20, 1280, 50));
        c.validate().unwrap();
        assert_eq!(c.record(3, 7).topic, 3);
        assert_eq!(c.record(3, 7).index, 7);
    }

    #[test]
    fn shared_map_is_common_to_all_topics() {
        let sampler = TopicSampler::new(5, 50, 1.0).unwrap().with_memory_seed(3);
        let topics = sampler.sample_many(4, 8);
        assert!(topics.iter().all(|t| t.emission == topics[0].emission));
        assert_ne!(topics[0].transition, topics[1].transition);
        let a = sampler.sample(0, 8);
        let b = sampler.clone().with_memory_seed(4).sample(0, 8);
        assert_ne!(a.emission, b.emission);
        assert_eq!(a.transition, b.transition);
    }

    #[test]
    fn topic_seed_changes_token_histograms() {
        let sampler = TopicSampler::new(5, 50, 1.0).unwrap().with_emission(EmissionMode::Memory);
        let hist = |seed| {
            let topics = sampler.sample_many(2, seed);
            let c = generate_corpus(&topics, 5, 200, 0).unwrap();
            let mut h = vec![0usize; 50];
            c.records.iter().flat_map(|r| &r.tokens).for_each(|&x| h[x] += 1);
            h
        };
        assert_ne!(hist(1), hist(2));
    }

    #[test]
    fn random_transition_unigrams_are_uniform() {
        let c = make_random_transition_corpus(3, 4, 100, 1000, 5).unwrap();
        let mut counts = [0usize; 4];
        c.records.iter().flat_map(|r| &r.tokens).for_each(|&x| counts[x] += 1);
        let total: usize = counts.iter().sum();
        assert_eq!(total, 100_000);
        for &n in &counts {
            assert!((n as f64 / total as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn random_transition_short_and_deterministic() {
        let a = make_random_transition_corpus(2, 6, 10, 1, 3).unwrap();
        assert!(a.records.iter().all(|r| r.tokens.len() == 1 && r.tokens[0] < 6));
        assert_eq!(a, make_random_transition_corpus(2, 6, 10, 1, 3).unwrap());
    }

    #[test]
    fn prompts() {
        let t = sample_topic_hmm(5, 50, 1.0, 4).unwrap();
        let p = build_prompt(&t, 48, 1).unwrap();
        assert_eq!(p.len(), 48);
        assert!(p.iter().all(|&x| x < 50));
        assert_eq!(build_prompt(&degenerate(2, 5), 6, 0).unwrap(), vec![2; 6]);
        assert!(build_prompt(&t, 1, 0).is_err());
    }

    #[test]
    fn delimiter_defaults_off() {
        let demos = vec![vec![1, 2], vec![3]];
        assert_eq!(concat_demonstrations(&demos, None), vec![1, 2, 3]);
        assert_eq!(concat_demonstrations(&demos, Some(9)), vec![1, 2, 9, 3]);
    }

    #[test]
    fn token_labels() {
        assert_eq!(token_label(0), "a");
        assert_eq!(token_label(25), "z");
        assert_eq!(token_label(26), "aa");
        assert_eq!(token_label(51), "az");
        assert_eq!(token_label(52), "ba");
    }
}
