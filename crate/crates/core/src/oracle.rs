//! Exact ground truth for HMM topics: forward filtering, the true
//! next-token conditional `P(. | prefix, w)`, and the Bayes mixture
//! predictor over a finite topic family.
//!
//! All evidence arithmetic is in log space; the state belief is
//! renormalised after every token so long prefixes never underflow.

use crate::corpus::{Token, TopicHmm};
use crate::error::{invalid, LabError, Result};
use crate::prob::{check_simplex, logsumexp};

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardState {
    /// Belief over the hidden state that emits the *next* token,
    /// `P(z_{t+1} | x_{1:t})`. All zeros once the evidence is zero.
    pub alpha: Vec<f64>,
    /// `log P(x_{1:t} | topic)`; `-inf` for impossible prefixes.
    pub log_evidence: f64,
}

impl ForwardState {
    pub fn is_possible(&self) -> bool {
        self.log_evidence > f64::NEG_INFINITY
    }
}

/// Incremental forward filter for one topic.
#[derive(Clone, Debug)]
pub struct ForwardFilter<'a> {
    topic: &'a TopicHmm,
    state: ForwardState,
    scratch: Vec<f64>,
}

impl<'a> ForwardFilter<'a> {
    pub fn new(topic: &'a TopicHmm) -> Self {
        ForwardFilter {
            topic,
            state: ForwardState { alpha: topic.start.clone(), log_evidence: 0.0 },
            scratch: vec![0.0; topic.states],
        }
    }

    pub fn state(&self) -> &ForwardState {
        &self.state
    }

    pub fn into_state(self) -> ForwardState {
        self.state
    }

    /// `P(next token = x | prefix so far)` for every `x`.
    pub fn predictive(&self) -> Result<Vec<f64>> {
        if !self.state.is_possible() {
            return Err(LabError::ZeroEvidence(format!(
                "prefix has zero probability under topic {}",
                self.topic.topic_id
            )));
        }
        let v = self.topic.vocab;
        let mut out = vec![0.0; v];
        for (i, &a) in self.state.alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (o, &e) in out.iter_mut().zip(self.topic.emission_row(i)) {
                *o += a * e;
            }
        }
        let sum: f64 = out.iter().sum();
        out.iter_mut().for_each(|x| *x /= sum);
        Ok(out)
    }

    /// Conditions on token `x`; returns `P(x | prefix so far)`.
    pub fn observe(&mut self, x: Token) -> Result<f64> {
        let topic = self.topic;
        if x >= topic.vocab {
            return Err(invalid(format!("token {x} outside vocabulary of size {}", topic.vocab)));
        }
        if !self.state.is_possible() {
            return Ok(0.0);
        }
        let h = topic.states;
        let mut c = 0.0;
        for i in 0..h {
            let w = self.state.alpha[i] * topic.emission[i * topic.vocab + x];
            self.scratch[i] = w;
            c += w;
        }
        if c == 0.0 {
            self.state.alpha.iter_mut().for_each(|a| *a = 0.0);
            self.state.log_evidence = f64::NEG_INFINITY;
            return Ok(0.0);
        }
        self.state.log_evidence += c.ln();
        let alpha = &mut self.state.alpha;
        alpha.iter_mut().for_each(|a| *a = 0.0);
        for i in 0..h {
            let f = self.scratch[i] / c;
            if f == 0.0 {
                continue;
            }
            for (a, &t) in alpha.iter_mut().zip(topic.transition_row(i)) {
                *a += f * t;
            }
        }
        let s: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= s);
        Ok(c)
    }
}

pub fn forward_filter(topic: &TopicHmm, prefix: &[Token]) -> Result<ForwardState> {
    let mut f = ForwardFilter::new(topic);
    for &x in prefix {
        f.observe(x)?;
    }
    Ok(f.into_state())
}

pub fn true_next_token_dist(topic: &TopicHmm, prefix: &[Token]) -> Result<Vec<f64>> {
    let mut f = ForwardFilter::new(topic);
    for &x in prefix {
        f.observe(x)?;
    }
    f.predictive()
}

/// True conditionals along a sequence: entry `t` is `P(. | seq[..=t])`,
/// i.e. the distribution of `seq[t + 1]`. Fails on the first impossible prefix.
pub fn conditionals_along(topic: &TopicHmm, seq: &[Token]) -> Result<Vec<Vec<f64>>> {
    let mut f = ForwardFilter::new(topic);
    let mut out = Vec::with_capacity(seq.len());
    for &x in seq {
        f.observe(x)?;
        out.push(f.predictive()?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixturePrediction {
    /// `sum_w P(w | prefix) P(. | prefix, w)`.
    pub next_token: Vec<f64>,
    /// `P(w | prefix)`.
    pub posterior: Vec<f64>,
}

/// Posterior-weighted mixture of per-topic conditionals, updated token by token.
pub struct MixtureFilter<'a> {
    filters: Vec<ForwardFilter<'a>>,
    log_prior: Vec<f64>,
}

impl<'a> MixtureFilter<'a> {
    pub fn new(topics: &'a [TopicHmm], prior: &[f64]) -> Result<Self> {
        if topics.is_empty() {
            return Err(invalid("topic family is empty"));
        }
        if prior.len() != topics.len() {
            return Err(invalid(format!("prior has {} entries for {} topics", prior.len(), topics.len())));
        }
        check_simplex(prior, "topic prior")?;
        if topics.iter().any(|t| t.vocab != topics[0].vocab) {
            return Err(invalid("topics disagree on vocabulary size"));
        }
        Ok(MixtureFilter {
            filters: topics.iter().map(ForwardFilter::new).collect(),
            log_prior: prior.iter().map(|p| p.ln()).collect(),
        })
    }

    pub fn observe(&mut self, x: Token) -> Result<()> {
        for f in &mut self.filters {
            f.observe(x)?;
        }
        Ok(())
    }

    pub fn posterior(&self) -> Result<Vec<f64>> {
        let logw: Vec<f64> = self
            .filters
            .iter()
            .zip(&self.log_prior)
            .map(|(f, lp)| lp + f.state().log_evidence)
            .collect();
        let z = logsumexp(&logw);
        if z == f64::NEG_INFINITY {
            return Err(LabError::ZeroEvidence("prefix has zero probability under every topic".into()));
        }
        Ok(logw.iter().map(|l| (l - z).exp()).collect())
    }

    pub fn predict(&self) -> Result<MixturePrediction> {
        let posterior = self.posterior()?;
        let vocab = self.filters[0].topic.vocab;
        let mut next_token = vec![0.0; vocab];
        for (f, &w) in self.filters.iter().zip(&posterior) {
            if w == 0.0 {
                continue;
            }
            for (o, p) in next_token.iter_mut().zip(f.predictive()?) {
                *o += w * p;
            }
        }
        Ok(MixturePrediction { next_token, posterior })
    }
}

pub fn bayes_mixture_predictor(topics: &[TopicHmm], prior: &[f64], prefix: &[Token]) -> Result<MixturePrediction> {
    let mut m = MixtureFilter::new(topics, prior)?;
    for &x in prefix {
        m.observe(x)?;
    }
    m.predict()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_token(token: Token, vocab: usize, id: usize) -> TopicHmm {
        let mut e = vec![0.0; vocab];
        e[token] = 1.0;
        TopicHmm::new(id, vec![vec![1.0]], vec![1.0], vec![e]).unwrap()
    }

    #[test]
    fn empty_prefix_returns_start() {
        let t = crate::corpus::sample_topic_hmm(3, 5, 1.0, 2).unwrap();
        let s = forward_filter(&t, &[]).unwrap();
        assert_eq!(s.alpha, t.start);
        assert_eq!(s.log_evidence, 0.0);
    }

    #[test]
    fn degenerate_topic_evidence() {
        let t = one_token(3, 4, 0);
        assert_eq!(forward_filter(&t, &[3, 3]).unwrap().log_evidence, 0.0);
        assert_eq!(forward_filter(&t, &[2]).unwrap().log_evidence, f64::NEG_INFINITY);
        assert_eq!(true_next_token_dist(&t, &[3]).unwrap(), vec![0.0, 0.0, 0.0, 1.0]);
        assert!(matches!(true_next_token_dist(&t, &[2]), Err(LabError::ZeroEvidence(_))));
        assert!(forward_filter(&t, &[4]).is_err());
    }

    #[test]
    fn uniform_topic_predicts_uniform() {
        let t = TopicHmm::random_transition(3, 5).unwrap();
        let p = true_next_token_dist(&t, &[0, 4, 2]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
    }

    #[test]
    fn mixture_identifies_degenerate_topic() {
        let topics = vec![one_token(0, 2, 0), one_token(1, 2, 1)];
        let m = bayes_mixture_predictor(&topics, &[0.5, 0.5], &[0]).unwrap();
        assert_eq!(m.posterior, vec![1.0, 0.0]);
        assert_eq!(m.next_token, vec![1.0, 0.0]);
        let empty = bayes_mixture_predictor(&topics, &[0.3, 0.7], &[]).unwrap();
        assert!((empty.posterior[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mixture_zero_evidence_everywhere() {
        let topics = vec![one_token(0, 3, 0), one_token(1, 3, 1)];
        assert!(matches!(
            bayes_mixture_predictor(&topics, &[0.5, 0.5], &[2]),
            Err(LabError::ZeroEvidence(_))
        ));
        assert!(bayes_mixture_predictor(&topics, &[1.0], &[]).is_err());
    }

    #[test]
    fn long_prefix_does_not_underflow() {
        let t = crate::corpus::sample_topic_hmm(4, 6, 1.0, 8).unwrap();
        let seq = crate::corpus::generate_hmm_sequence(&t, 5000, 1).unwrap();
        let s = forward_filter(&t, &seq).unwrap();
        assert!(s.log_evidence.is_finite() && s.log_evidence < -100.0);
        assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}
