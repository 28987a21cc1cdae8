use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_TOKENS: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    PlainSampling,
    Temperature,
    TopK,
    Nucleus,
    Beam,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::PlainSampling,
        Strategy::Temperature,
        Strategy::TopK,
        Strategy::Nucleus,
        Strategy::Beam,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::PlainSampling => "plain_sampling",
            Strategy::Temperature => "temperature",
            Strategy::TopK => "top_k",
            Strategy::Nucleus => "nucleus",
            Strategy::Beam => "beam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::precondition(format!("unknown decoding strategy {s:?}")))
    }
}

/// One decoding setup. Fields irrelevant to the strategy stay at neutral
/// values (temperature 1, k 0 = disabled, p 1, beam width 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub strategy: Strategy,
    pub temperature: f64,
    pub k: u32,
    pub p: f64,
    pub beam_width: u32,
    pub max_tokens: u32,
    pub seed: u64,
}

impl DecodingConfig {
    fn neutral(strategy: Strategy) -> Self {
        DecodingConfig {
            strategy,
            temperature: 1.0,
            k: 0,
            p: 1.0,
            beam_width: 1,
            max_tokens: DEFAULT_MAX_TOKENS,
            seed: 0,
        }
    }

    pub fn plain_sampling() -> Self {
        Self::neutral(Strategy::PlainSampling)
    }

    pub fn temperature(t: f64) -> Self {
        DecodingConfig {
            temperature: t,
            ..Self::neutral(Strategy::Temperature)
        }
    }

    pub fn top_k(k: u32) -> Self {
        DecodingConfig {
            k,
            ..Self::neutral(Strategy::TopK)
        }
    }

    pub fn nucleus(p: f64) -> Self {
        DecodingConfig {
            p,
            ..Self::neutral(Strategy::Nucleus)
        }
    }

    pub fn beam(width: u32) -> Self {
        DecodingConfig {
            beam_width: width,
            ..Self::neutral(Strategy::Beam)
        }
    }

    /// The evaluation suite: temperature 0.9, top-k 40, nucleus 0.95, beam 4.
    pub fn default_for(strategy: Strategy) -> Self {
        match strategy {
            Strategy::PlainSampling => Self::plain_sampling(),
            Strategy::Temperature => Self::temperature(0.9),
            Strategy::TopK => Self::top_k(40),
            Strategy::Nucleus => Self::nucleus(0.95),
            Strategy::Beam => Self::beam(4),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(field, msg));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", "must be a positive finite number");
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p", "must lie in (0, 1]");
        }
        if self.beam_width == 0 {
            return bad("beam_width", "must be positive");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens", "must be positive");
        }
        match self.strategy {
            Strategy::TopK if self.k == 0 => bad("k", "top_k strategy needs k >= 1"),
            _ => Ok(()),
        }
    }
}

/// A generated response. `token_logprobs`, when present, are finite and <= 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<DecodingConfig>,
    #[serde(default)]
    pub rank_in_origin: usize,
}

impl Candidate {
    pub fn plain(text: impl Into<String>) -> Self {
        Candidate {
            text: text.into(),
            token_logprobs: None,
            origin: None,
            rank_in_origin: 0,
        }
    }

    pub fn check_logprobs(&self) -> Result<()> {
        if let Some(lp) = &self.token_logprobs {
            if let Some(bad) = lp.iter().find(|x| !x.is_finite() || **x > 0.0) {
                return Err(Error::precondition(format!(
                    "token log-probability {bad} is not a finite non-positive number"
                )));
            }
        }
        Ok(())
    }
}
