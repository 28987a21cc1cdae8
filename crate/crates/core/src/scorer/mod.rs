//! The scoring contract and its realizations.
//!
//! Every [`Scorer`] maps an (instruction, response) pair to a [`Score`] in
//! [0, 1] and is deterministic for identical inputs.

pub mod checkpoint;
pub mod features;
mod model;
mod optim;
pub mod remote;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, sidecar_path, write_sidecar, Checkpoint, Sidecar};
pub use features::{featurize, SparseFeatures, DEFAULT_FEATURE_DIM, FEATURIZER_VERSION};
pub use model::{Gradient, ScorerModel};
pub use optim::{adamw_step, OptimizerState, TrainConfig};
pub use remote::{remote_score, RemoteScorer};
pub use train::{featurize_dataset, train, train_featurized, train_to_checkpoint, TrainOutcome};

use crate::error::{Error, Result};
use crate::genclient::GeneratorHandle;
use crate::rouge::rouge_l;

/// A correctness estimate in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Score(f64);

impl Score {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Score(value))
        } else {
            Err(Error::precondition(format!("score {value} outside [0, 1]")))
        }
    }

    /// Clamps into [0, 1]; NaN maps to 0.
    pub fn saturating(value: f64) -> Self {
        if value.is_nan() {
            Score(0.0)
        } else {
            Score(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Score {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Score::new(v)
    }
}

impl From<Score> for f64 {
    fn from(s: Score) -> f64 {
        s.0
    }
}

pub trait Scorer: Sync {
    fn score(&self, instruction: &str, response: &str) -> Result<Score>;

    fn score_batch(&self, instruction: &str, responses: &[&str]) -> Result<Vec<Score>> {
        responses.iter().map(|r| self.score(instruction, r)).collect()
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score(&self, instruction: &str, response: &str) -> Result<Score> {
        (**self).score(instruction, response)
    }

    fn score_batch(&self, instruction: &str, responses: &[&str]) -> Result<Vec<Score>> {
        (**self).score_batch(instruction, responses)
    }
}

impl Scorer for ScorerModel {
    fn score(&self, instruction: &str, response: &str) -> Result<Score> {
        self.predict(&self.featurize(instruction, response))
    }
}

/// Rouge-L F1 against a known reference. Ignores the instruction.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    pub reference: String,
}

impl OracleScorer {
    pub fn new(reference: impl Into<String>) -> Self {
        OracleScorer {
            reference: reference.into(),
        }
    }
}

impl Scorer for OracleScorer {
    fn score(&self, _instruction: &str, response: &str) -> Result<Score> {
        Score::new(rouge_l(response, &self.reference).f1)
    }
}

/// `exp(mean token log-likelihood)` under a generator: a monotone image of the
/// mean log-likelihood, so its argmax is the likelihood argmax.
#[derive(Debug)]
pub struct LikelihoodScorer<'a> {
    pub handle: &'a GeneratorHandle,
}

impl Scorer for LikelihoodScorer<'_> {
    fn score(&self, instruction: &str, response: &str) -> Result<Score> {
        let lp = self.handle.loglikelihood(instruction, response)?;
        if lp.is_empty() {
            return Err(Error::precondition("backend returned no token log-probabilities"));
        }
        let mean = lp.iter().sum::<f64>() / lp.len() as f64;
        Ok(Score::saturating(mean.exp()))
    }
}

/// One line of a scoring stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub instruction: String,
    pub response: String,
}

pub fn parse_score_request(line: &str) -> std::result::Result<ScoreRequest, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

/// A constant scorer; useful as a control.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScorer(pub Score);

impl Scorer for ConstantScorer {
    fn score(&self, _: &str, _: &str) -> Result<Score> {
        Ok(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_bounds() {
        assert!(Score::new(1.01).is_err());
        assert!(Score::new(-0.0).is_ok());
        assert_eq!(Score::saturating(7.0).value(), 1.0);
        assert_eq!(Score::saturating(f64::NAN).value(), 0.0);
        assert!(serde_json::from_str::<Score>("1.5").is_err());
        assert_eq!(serde_json::from_str::<Score>("0.25").unwrap().value(), 0.25);
    }

    #[test]
    fn oracle_matches_rouge() {
        let o = OracleScorer::new("the cat sat on the mat");
        assert_eq!(o.score("", "the cat sat on the mat").unwrap().value(), 1.0);
        assert_eq!(o.score("", "").unwrap().value(), 0.0);
    }
}
