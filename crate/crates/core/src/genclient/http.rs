//! Completion-API backend.
//!
//! Generation: `POST {endpoint}/v1/completions` with
//! `{prompt, n, max_tokens, temperature, top_k, top_p, num_beams, logprobs, seed}`;
//! the reply is `{"choices": [{"text", "logprobs": {"token_logprobs": [...]}}]}`.
//!
//! Scoring: the same path with `{prompt, completion, echo: true, max_tokens: 0,
//! logprobs: 1}`; the first choice's `token_logprobs` are taken as the
//! per-token log-probabilities of `completion`. Null entries (some servers
//! emit one for the first echoed token) are dropped.

use serde::{Deserialize, Serialize};

use super::decoding::{Candidate, DecodingConfig, Strategy};
use crate::error::{Error, Result};
use crate::http::{HttpOptions, JsonClient};

pub const ENDPOINT_ENV: &str = "CAPPY_LLM_ENDPOINT";
pub const TOKEN_ENV: &str = "CAPPY_LLM_TOKEN";
const COMPLETIONS_PATH: &str = "/v1/completions";

#[derive(Debug, Serialize)]
struct CompletionRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    n: usize,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    top_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_beams: Option<u32>,
    logprobs: u32,
    seed: u64,
}

#[derive(Debug, Serialize)]
struct ScoringRequest<'a> {
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<&'a str>,
    prompt: &'a str,
    completion: &'a str,
    echo: bool,
    max_tokens: u32,
    logprobs: u32,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    #[serde(default)]
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[serde(default)]
    token_logprobs: Vec<Option<f64>>,
}

/// Generated text with its token log-probabilities, when the backend sent them.
pub type CompletionChoice = (String, Option<Vec<f64>>);

/// Decodes a completion reply into `(text, token_logprobs)` pairs, rejecting
/// positive or non-finite log-probabilities.
pub fn parse_completion_response(bytes: &[u8]) -> std::result::Result<Vec<CompletionChoice>, String> {
    let resp: CompletionResponse = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    resp.choices
        .into_iter()
        .map(|c| {
            let lp = match c.logprobs {
                None => None,
                Some(l) => {
                    let xs: Vec<f64> = l.token_logprobs.into_iter().flatten().collect();
                    if let Some(bad) = xs.iter().find(|x| !x.is_finite() || **x > 0.0) {
                        return Err(format!("invalid token log-probability {bad}"));
                    }
                    Some(xs)
                }
            };
            Ok((c.text, lp))
        })
        .collect()
}

#[derive(Debug)]
pub struct HttpGenerator {
    client: JsonClient,
    model: Option<String>,
}

impl HttpGenerator {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, model: Option<String>, opts: HttpOptions) -> Self {
        HttpGenerator {
            client: JsonClient::new(endpoint, token, opts),
            model,
        }
    }

    /// Reads `CAPPY_LLM_ENDPOINT` and, optionally, `CAPPY_LLM_TOKEN`.
    pub fn from_env(opts: HttpOptions) -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV)
            .map_err(|_| Error::config(ENDPOINT_ENV, "environment variable not set"))?;
        let token = std::env::var(TOKEN_ENV).ok();
        Ok(Self::new(endpoint, token, None, opts))
    }

    pub fn endpoint(&self) -> &str {
        self.client.endpoint()
    }

    pub fn generate(&self, instruction: &str, config: &DecodingConfig, n: usize) -> Result<Vec<Candidate>> {
        let req = CompletionRequest {
            model: self.model.as_deref(),
            prompt: instruction,
            n,
            max_tokens: config.max_tokens,
            temperature: config.temperature,
            top_k: (config.strategy == Strategy::TopK).then_some(config.k),
            top_p: config.p,
            num_beams: (config.strategy == Strategy::Beam).then_some(config.beam_width),
            logprobs: 1,
            seed: config.seed,
        };
        let bytes = self.client.post(COMPLETIONS_PATH, &req, false)?;
        let choices = parse_completion_response(&bytes).map_err(|message| self.payload(message))?;
        if choices.len() < n {
            return Err(self.payload(format!("asked for {n} choices, got {}", choices.len())));
        }
        Ok(choices
            .into_iter()
            .take(n)
            .enumerate()
            .map(|(rank, (text, token_logprobs))| Candidate {
                text,
                token_logprobs,
                origin: Some(config.clone()),
                rank_in_origin: rank,
            })
            .collect())
    }

    pub fn loglikelihood(&self, instruction: &str, response: &str) -> Result<Vec<f64>> {
        if response.trim().is_empty() {
            return Err(Error::precondition(
                "log-likelihood of an empty response is undefined",
            ));
        }
        let req = ScoringRequest {
            model: self.model.as_deref(),
            prompt: instruction,
            completion: response,
            echo: true,
            max_tokens: 0,
            logprobs: 1,
        };
        let bytes = self.client.post(COMPLETIONS_PATH, &req, true)?;
        let choices = parse_completion_response(&bytes).map_err(|message| self.payload(message))?;
        match choices.into_iter().next() {
            Some((_, Some(lp))) if !lp.is_empty() => Ok(lp),
            _ => Err(self.payload("reply carries no token log-probabilities".into())),
        }
    }

    fn payload(&self, message: String) -> Error {
        Error::Payload {
            endpoint: self.client.endpoint().to_owned(),
            message,
        }
    }
}
