//! Brute-force HMM evidence by summing over every hidden path.

use icl_lab::corpus::TopicHmm;

pub fn path_sum(topic: &TopicHmm, seq: &[usize]) -> f64 {
    let h = topic.states;
    if seq.is_empty() {
        return 1.0;
    }
    let paths = h.pow(seq.len() as u32);
    let mut total = 0.0;
    for code in 0..paths {
        let mut c = code;
        let mut states = Vec::with_capacity(seq.len());
        for _ in 0..seq.len() {
            states.push(c % h);
            c /= h;
        }
        let mut p = topic.start[states[0]] * topic.emission_row(states[0])[seq[0]];
        for t in 1..seq.len() {
            p *= topic.transition_row(states[t - 1])[states[t]] * topic.emission_row(states[t])[seq[t]];
        }
        total += p;
    }
    total
}

/// Every sequence of length `len` over `vocab` tokens.
pub fn all_sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    (0..vocab.pow(len as u32))
        .map(|mut c| {
            (0..len)
                .map(|_| {
                    let x = c % vocab;
                    c /= vocab;
                    x
                })
                .collect()
        })
        .collect()
}
