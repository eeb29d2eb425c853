use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAxis {
    /// Hold out `N'` sequence indices, the same ones under every topic.
    Sequence,
    /// Hold out `K'` whole topics.
    Topic,
}

impl std::str::FromStr for SplitAxis {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sequence" => Ok(SplitAxis::Sequence),
            "topic" => Ok(SplitAxis::Topic),
            other => Err(format!("unknown split axis `{other}` (expected sequence|topic)")),
        }
    }
}

/// Partition of `[axis_size]` into the posterior part `held_in` (I) and the
/// prior part `held_out` (J). Both are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorSplit {
    pub axis: SplitAxis,
    pub axis_size: usize,
    pub held_in: Vec<usize>,
    pub held_out: Vec<usize>,
}

impl PriorSplit {
    /// Draws `holdout` indices uniformly without replacement from `[axis_size]`.
    pub fn sample(axis: SplitAxis, axis_size: usize, holdout: usize, seed: u64) -> Result<Self> {
        if holdout == 0 || holdout >= axis_size {
            return Err(invalid(format!(
                "holdout must satisfy 0 < holdout < {axis_size}, got {holdout}"
            )));
        }
        let mut rng = seed::rng(seed);
        let mut held_out = sample_indices(&mut rng, axis_size, holdout).into_vec();
        held_out.sort_unstable();
        let held_in = (0..axis_size).filter(|i| held_out.binary_search(i).is_err()).collect();
        Ok(PriorSplit { axis, axis_size, held_in, held_out })
    }

    fn records(&self, side: &[usize], num_topics: usize, per_topic: usize) -> Vec<usize> {
        match self.axis {
            SplitAxis::Sequence => (0..num_topics)
                .flat_map(|k| side.iter().map(move |&n| k * per_topic + n))
                .collect(),
            SplitAxis::Topic => side
                .iter()
                .flat_map(|&k| (0..per_topic).map(move |n| k * per_topic + n))
                .collect(),
        }
    }

    /// Record indices (topic-major layout) of the prior subset `E_J`.
    pub fn prior_records(&self, num_topics: usize, per_topic: usize) -> Vec<usize> {
        self.records(&self.held_out, num_topics, per_topic)
    }

    /// Record indices of the posterior subset `E_I`.
    pub fn posterior_records(&self, num_topics: usize, per_topic: usize) -> Vec<usize> {
        self.records(&self.held_in, num_topics, per_topic)
    }
}

pub fn split_prior(corpus: &super::Corpus, axis: SplitAxis, holdout: usize, seed: u64) -> Result<PriorSplit> {
    let size = match axis {
        SplitAxis::Sequence => corpus.per_topic,
        SplitAxis::Topic => corpus.num_topics,
    };
    PriorSplit::sample(axis, size, holdout, seed)
}
