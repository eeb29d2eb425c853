//! Divergences, the loss ladder from empirical to population loss, ICL
//! accuracy and the LDS overall-vs-last-token errors. Natural logs
//! throughout.

use rand::Rng;
use serde::Serialize;

use crate::corpus::{build_prompt, generate_hmm_sequence, Corpus, LdsCorpus, Token, TokenSeq, TopicHmm, TopicSampler};
use crate::error::{invalid, LabError, Result};
use crate::model::SequenceModel;
use crate::oracle::{bayes_mixture_predictor, conditionals_along};
use crate::prob::{argmax, check_simplex, mean_and_stderr};
use crate::seed;

/// `sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("distributions differ in length"));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    kl_unchecked(p, q)
}

fn kl_unchecked(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut kl = 0.0;
    for (i, (&a, &b)) in p.iter().zip(q).enumerate() {
        if a > 0.0 {
            if b <= 0.0 {
                return Err(LabError::AbsoluteContinuity { index: i, p: a });
            }
            kl += a * (a / b).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// `1/2 sum_i |p_i - q_i|`.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(invalid("distributions differ in length"));
    }
    check_simplex(p, "p")?;
    check_simplex(q, "q")?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KlTvCheck {
    pub kl: f64,
    pub tv: f64,
    /// `max_i p_i / q_i`.
    pub ratio_bound: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Slack allowed when comparing KL with its TV upper bound.
pub const KL_TV_SLACK: f64 = 1e-12;

/// Checks `KL(p||q) <= (2 C ln C / (C - 1)) TV(p, q)`. For `C <= 1` (only
/// possible when `p = q`) the factor takes its limit 2.
pub fn kl_tv_bound_check(p: &[f64], q: &[f64]) -> Result<KlTvCheck> {
    let kl = kl_divergence(p, q)?;
    let tv = tv_distance(p, q)?;
    let c = p
        .iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(a, b)| a / b)
        .fold(0.0, f64::max);
    let factor = if c <= 1.0 { 2.0 } else { 2.0 * c * c.ln() / (c - 1.0) };
    let rhs = factor * tv;
    Ok(KlTvCheck { kl, tv, ratio_bound: c, rhs, holds: kl <= rhs + KL_TV_SLACK })
}

/// A Monte Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
    /// Draws dropped because a prefix had zero evidence.
    pub skipped: usize,
}

impl Estimate {
    fn from_samples(xs: &[f64], skipped: usize) -> Self {
        let (mean, stderr) = mean_and_stderr(xs);
        Estimate { mean, stderr, samples: xs.len(), skipped }
    }
}

/// Corpus-level losses that only need the training sequences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CorpusLosses {
    /// `L_E`: mean of `ln P(x_{t+1}|E_t,w_k) - ln P_theta(x_{t+1}|E_t)`.
    pub empirical: f64,
    /// `L'`: mean exact KL at the same corpus prefixes.
    pub partial: f64,
    pub positions: usize,
    pub skipped: usize,
}

fn check_topics(corpus: &Corpus, topics: &[TopicHmm]) -> Result<()> {
    if topics.len() != corpus.num_topics {
        return Err(invalid(format!("{} topics for a corpus with K = {}", topics.len(), corpus.num_topics)));
    }
    Ok(())
}

/// Per-topic averages first, then the mean over topics. Zero-evidence
/// positions are skipped and counted.
pub fn corpus_losses(model: &SequenceModel, corpus: &Corpus, topics: &[TopicHmm]) -> Result<CorpusLosses> {
    check_topics(corpus, topics)?;
    let (mut emp_sum, mut part_sum) = (0.0, 0.0);
    let (mut positions, mut skipped) = (0, 0);
    for (k, topic) in topics.iter().enumerate() {
        let (mut e, mut p, mut count) = (0.0, 0.0, 0usize);
        for n in 0..corpus.per_topic {
            let seq = &corpus.record(k, n).tokens;
            if seq.len() < 2 {
                continue;
            }
            let model_dists = model.predict_all(&seq[..seq.len() - 1])?;
            let truth = truth_along(topic, &seq[..seq.len() - 1]);
            for (t, q) in model_dists.iter().enumerate() {
                let Some(truth_t) = truth.get(t) else {
                    skipped += 1;
                    continue;
                };
                let x = seq[t + 1];
                if truth_t[x] <= 0.0 {
                    skipped += 1;
                    continue;
                }
                e += truth_t[x].ln() - q[x].ln();
                p += kl_unchecked(truth_t, q)?;
                count += 1;
            }
        }
        if count > 0 {
            emp_sum += e / count as f64;
            part_sum += p / count as f64;
            positions += count;
        }
    }
    let k = topics.len() as f64;
    Ok(CorpusLosses { empirical: emp_sum / k, partial: part_sum / k, positions, skipped })
}

/// Oracle conditionals up to the first impossible prefix.
fn truth_along(topic: &TopicHmm, seq: &[Token]) -> Vec<Vec<f64>> {
    let mut f = crate::oracle::ForwardFilter::new(topic);
    let mut out = Vec::with_capacity(seq.len());
    for &x in seq {
        if f.observe(x).is_err() {
            break;
        }
        match f.predictive() {
            Ok(p) => out.push(p),
            Err(_) => break,
        }
    }
    out
}

/// `L_E(theta)`, the training objective measured against the oracle.
pub fn empirical_loss(model: &SequenceModel, corpus: &Corpus, topics: &[TopicHmm]) -> Result<f64> {
    Ok(corpus_losses(model, corpus, topics)?.empirical)
}

/// Mean negative log-likelihood of `model` over every corpus position.
pub fn corpus_nll(model: &SequenceModel, corpus: &Corpus) -> Result<f64> {
    let (mut total, mut count) = (0.0, 0usize);
    for r in &corpus.records {
        if r.tokens.len() < 2 {
            continue;
        }
        let dists = model.predict_all(&r.tokens[..r.tokens.len() - 1])?;
        total -= dists.iter().zip(&r.tokens[1..]).map(|(q, &x)| q[x].ln()).sum::<f64>();
        count += r.tokens.len() - 1;
    }
    if count == 0 {
        return Err(invalid("corpus has no positions"));
    }
    Ok(total / count as f64)
}

/// `eps_opt = mean(ln P_best - ln P_theta)` over all corpus positions,
/// i.e. `NLL(theta) - NLL(best)`. With `best` the lowest-loss checkpoint
/// found, this is an upper-biased proxy of the true optimisation error.
pub fn optimization_error(model: &SequenceModel, best: &SequenceModel, corpus: &Corpus) -> Result<f64> {
    Ok(corpus_nll(model, corpus)? - corpus_nll(best, corpus)?)
}

/// First-level expected loss: fresh length-`seq_len` sequences from each training
/// topic; each sample is one sequence's mean exact KL over prefixes
/// `1..seq_len-1`.
pub fn first_level_expected_loss_mc(
    model: &SequenceModel,
    topics: &[TopicHmm],
    per_topic: usize,
    seq_len: usize,
    seed: u64,
) -> Result<Estimate> {
    if per_topic == 0 {
        return Err(invalid("need at least one fresh sequence per topic"));
    }
    if seq_len < 2 {
        return Err(invalid("sequence length must be at least 2"));
    }
    let mut samples = Vec::with_capacity(topics.len() * per_topic);
    let mut skipped = 0;
    for (k, topic) in topics.iter().enumerate() {
        for m in 0..per_topic {
            let seq = generate_hmm_sequence(topic, seq_len, seed::derive(seed, "first-level", &[k as u64, m as u64]))?;
            match mean_prefix_kl(model, topic, &seq[..seq_len - 1])? {
                Some((mean, _)) => samples.push(mean),
                None => skipped += 1,
            }
        }
    }
    Ok(Estimate::from_samples(&samples, skipped))
}

/// Mean exact KL over every prefix of `seq` (lengths `1..=len`) and the KL
/// list itself; `None` if some prefix is impossible under `topic`.
fn mean_prefix_kl(model: &SequenceModel, topic: &TopicHmm, seq: &[Token]) -> Result<Option<(f64, Vec<f64>)>> {
    let truth = match conditionals_along(topic, seq) {
        Ok(t) => t,
        Err(LabError::ZeroEvidence(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    let pred = model.predict_all(seq)?;
    let kls = truth.iter().zip(&pred).map(|(p, q)| kl_unchecked(p, q)).collect::<Result<Vec<_>>>()?;
    Ok(Some((kls.iter().sum::<f64>() / kls.len() as f64, kls)))
}

/// Population-level Monte Carlo on fresh topics plus the training-side
/// terms needed for the four-part decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub empirical: f64,
    pub partial: f64,
    pub first_level: Estimate,
    /// Mean exact KL over prompt prefixes `1..T_p`.
    pub population: Estimate,
    /// Exact KL at the query position (prefix `T_p - 1`).
    pub population_last: Estimate,
    /// `[L_E, L' - L_E, L - L', L(theta) - L]`.
    pub parts: [f64; 4],
    pub eps_opt: f64,
    pub icl_accuracy: f64,
    pub icl_prompts: usize,
}

impl LossReport {
    pub const CSV_COLUMNS: [&'static str; 18] = [
        "empirical",
        "partial",
        "first_level",
        "first_level_stderr",
        "first_level_samples",
        "population",
        "population_stderr",
        "population_samples",
        "population_skipped",
        "population_last",
        "population_last_stderr",
        "part_1",
        "part_2",
        "part_3",
        "part_4",
        "eps_opt",
        "icl_accuracy",
        "icl_prompts",
    ];

    pub fn csv_values(&self) -> Vec<String> {
        let f = |x: f64| format!("{x}");
        vec![
            f(self.empirical),
            f(self.partial),
            f(self.first_level.mean),
            f(self.first_level.stderr),
            self.first_level.samples.to_string(),
            f(self.population.mean),
            f(self.population.stderr),
            self.population.samples.to_string(),
            self.population.skipped.to_string(),
            f(self.population_last.mean),
            f(self.population_last.stderr),
            f(self.parts[0]),
            f(self.parts[1]),
            f(self.parts[2]),
            f(self.parts[3]),
            f(self.eps_opt),
            f(self.icl_accuracy),
            self.icl_prompts.to_string(),
        ]
    }

    pub fn parts_sum(&self) -> f64 {
        self.parts.iter().sum()
    }
}

/// Training-side inputs of [`population_loss_mc`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainTerms {
    pub corpus: CorpusLosses,
    pub first_level: Estimate,
    pub eps_opt: f64,
}

/// Two-level population loss: `m_topics` fresh topics, `m_prompts` length-`t_p`
/// prompts each. The same prompts give the ICL accuracy: context
/// `prompt[..t_p-1]`, target `prompt[t_p-1]`.
pub fn population_loss_mc(
    model: &SequenceModel,
    sampler: &TopicSampler,
    m_topics: usize,
    m_prompts: usize,
    t_p: usize,
    seed: u64,
    pretrain: &PretrainTerms,
) -> Result<LossReport> {
    if m_topics == 0 || m_prompts == 0 {
        return Err(invalid("need at least one topic and one prompt"));
    }
    if t_p < 2 {
        return Err(invalid("prompt length must be at least 2"));
    }
    let (mut pop, mut last) = (Vec::new(), Vec::new());
    let (mut skipped, mut hits) = (0, 0usize);
    for j in 0..m_topics {
        let topic = sampler.sample(j, seed::derive(seed, "population-topic", &[j as u64]));
        for i in 0..m_prompts {
            let prompt = generate_hmm_sequence(&topic, t_p, seed::derive(seed, "population-prompt", &[j as u64, i as u64]))?;
            let Some((mean, kls)) = mean_prefix_kl(model, &topic, &prompt)? else {
                skipped += 1;
                continue;
            };
            pop.push(mean);
            last.push(kls[t_p - 2]);
            let q = model.predict_dist(&prompt[..t_p - 1])?;
            hits += usize::from(argmax(&q) == prompt[t_p - 1]);
        }
    }
    let population = Estimate::from_samples(&pop, skipped);
    let population_last = Estimate::from_samples(&last, skipped);
    let (le, lp, lf) = (pretrain.corpus.empirical, pretrain.corpus.partial, pretrain.first_level.mean);
    Ok(LossReport {
        empirical: le,
        partial: lp,
        first_level: pretrain.first_level,
        population,
        population_last,
        parts: [le, lp - le, lf - lp, population.mean - lf],
        eps_opt: pretrain.eps_opt,
        icl_accuracy: hits as f64 / pop.len().max(1) as f64,
        icl_prompts: pop.len(),
    })
}

/// Fraction of prompts whose argmax prediction equals the target; ties go
/// to the lowest token id.
pub fn icl_accuracy(model: &SequenceModel, prompts: &[TokenSeq], targets: &[Token]) -> Result<f64> {
    if prompts.is_empty() {
        return Err(invalid("prompt set is empty"));
    }
    if prompts.len() != targets.len() {
        return Err(invalid("prompts and targets differ in count"));
    }
    let mut hits = 0usize;
    for (p, &y) in prompts.iter().zip(targets) {
        hits += usize::from(argmax(&model.predict_dist(p)?) == y);
    }
    Ok(hits as f64 / prompts.len() as f64)
}

/// Standard error of an accuracy estimate `p` from `n` Bernoulli trials.
pub fn binomial_stderr(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// `m_topics x m_prompts` ICL prompts of length `t_p` on fresh topics,
/// split into context and target.
pub fn fresh_icl_prompts(
    sampler: &TopicSampler,
    m_topics: usize,
    m_prompts: usize,
    t_p: usize,
    seed: u64,
) -> Result<(Vec<TokenSeq>, Vec<Token>)> {
    let (mut prompts, mut targets) = (Vec::new(), Vec::new());
    for j in 0..m_topics {
        let topic = sampler.sample(j, seed::derive(seed, "population-topic", &[j as u64]));
        for i in 0..m_prompts {
            let mut p = build_prompt(&topic, t_p, seed::derive(seed, "population-prompt", &[j as u64, i as u64]))?;
            targets.push(p.pop().expect("prompt length >= 2"));
            prompts.push(p);
        }
    }
    Ok((prompts, targets))
}

/// `count` prompts of length `len` from the uniform mixture over `topics`,
/// each tagged with the index of the topic that generated it.
pub fn mixed_prompts(topics: &[TopicHmm], count: usize, len: usize, seed: u64) -> Result<Vec<(usize, TokenSeq)>> {
    if topics.is_empty() {
        return Err(invalid("topic family is empty"));
    }
    (0..count)
        .map(|i| {
            let k = seed::child_rng(seed, "mixed-topic", &[i as u64]).gen_range(0..topics.len());
            Ok((k, build_prompt(&topics[k], len, seed::derive(seed, "mixed-prompt", &[i as u64]))?))
        })
        .collect()
}

/// Mean `KL(Bayes mixture || model)` at the query position of each prompt:
/// both predict `prompt[len-1]` from `prompt[..len-1]` under a uniform prior
/// over `topics`.
pub fn bayes_last_kl(model: &SequenceModel, topics: &[TopicHmm], prompts: &[TokenSeq]) -> Result<Estimate> {
    let prior = vec![1.0 / topics.len() as f64; topics.len()];
    let mut kls = Vec::with_capacity(prompts.len());
    for p in prompts {
        if p.len() < 2 {
            return Err(invalid("prompt length must be at least 2"));
        }
        let ctx = &p[..p.len() - 1];
        let bayes = bayes_mixture_predictor(topics, &prior, ctx)?;
        kls.push(kl_unchecked(&bayes.next_token, &model.predict_dist(ctx)?)?);
    }
    Ok(Estimate::from_samples(&kls, 0))
}

/// `(overall, icl_last)`: one-step squared prediction error averaged over
/// components and all positions `1..T-1`, and at the final position only.
pub fn lds_losses(model: &SequenceModel, sequences: &[Vec<Vec<f64>>]) -> Result<(f64, f64)> {
    if sequences.is_empty() {
        return Err(invalid("no sequences"));
    }
    let (mut overall, mut last, mut count) = (0.0, 0.0, 0usize);
    for seq in sequences {
        if seq.len() < 2 {
            return Err(invalid("sequences need at least 2 observations"));
        }
        for t in 1..seq.len() {
            let pred = model.predict_next_obs(&seq[..t])?;
            let se = pred.iter().zip(&seq[t]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
            overall += se;
            count += 1;
            if t == seq.len() - 1 {
                last += se;
            }
        }
    }
    Ok((overall / count as f64, last / sequences.len() as f64))
}

/// Observation sequences of `corpus` at record indices `view`.
pub fn lds_view(corpus: &LdsCorpus, view: &[usize]) -> Vec<Vec<Vec<f64>>> {
    view.iter().map(|&i| corpus.records[i].obs.clone()).collect()
}
