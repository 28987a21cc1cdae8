//! Client for an externally served scorer:
//! `POST /score {"instruction","response"} -> {"score"}` and
//! `POST /score_batch {"pairs":[{"instruction","response"}]} -> {"scores":[...]}`.

use serde::{Deserialize, Serialize};

use super::{Score, Scorer};
use crate::error::{Error, Result};
use crate::http::{HttpOptions, JsonClient};

#[derive(Debug, Serialize)]
struct Pair<'a> {
    instruction: &'a str,
    response: &'a str,
}

#[derive(Debug, Serialize)]
struct BatchRequest<'a> {
    pairs: Vec<Pair<'a>>,
}

#[derive(Debug, Deserialize)]
struct ScoreReply {
    score: f64,
}

#[derive(Debug, Deserialize)]
struct BatchReply {
    scores: Vec<f64>,
}

pub fn parse_score_response(bytes: &[u8]) -> std::result::Result<f64, String> {
    let r: ScoreReply = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    Ok(r.score)
}

pub fn parse_batch_response(bytes: &[u8]) -> std::result::Result<Vec<f64>, String> {
    let r: BatchReply = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    Ok(r.scores)
}

#[derive(Debug)]
pub struct RemoteScorer {
    client: JsonClient,
}

/// A remote score after clamping; `clamped` is set when the backend's value
/// fell outside [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemoteScore {
    pub score: Score,
    pub clamped: bool,
}

impl RemoteScorer {
    pub fn new(endpoint: impl Into<String>, token: Option<String>, opts: HttpOptions) -> Self {
        RemoteScorer {
            client: JsonClient::new(endpoint, token, opts),
        }
    }

    pub fn endpoint(&self) -> &str {
        self.client.endpoint()
    }

    fn clamp(&self, raw: f64) -> Result<RemoteScore> {
        if raw.is_nan() {
            return Err(Error::Payload {
                endpoint: self.endpoint().to_owned(),
                message: "score is NaN".into(),
            });
        }
        let clamped = !(0.0..=1.0).contains(&raw);
        if clamped {
            log::warn!("remote scorer {} returned {raw}; clamping to [0, 1]", self.endpoint());
        }
        Ok(RemoteScore {
            score: Score::saturating(raw),
            clamped,
        })
    }

    pub fn score_detailed(&self, instruction: &str, response: &str) -> Result<RemoteScore> {
        let bytes = self.client.post("/score", &Pair { instruction, response }, true)?;
        let raw = parse_score_response(&bytes).map_err(|message| Error::Payload {
            endpoint: self.endpoint().to_owned(),
            message,
        })?;
        self.clamp(raw)
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, instruction: &str, response: &str) -> Result<Score> {
        Ok(self.score_detailed(instruction, response)?.score)
    }

    fn score_batch(&self, instruction: &str, responses: &[&str]) -> Result<Vec<Score>> {
        let req = BatchRequest {
            pairs: responses.iter().map(|r| Pair { instruction, response: r }).collect(),
        };
        let bytes = self.client.post("/score_batch", &req, true)?;
        let raw = parse_batch_response(&bytes).map_err(|message| Error::Payload {
            endpoint: self.endpoint().to_owned(),
            message,
        })?;
        if raw.len() != responses.len() {
            return Err(Error::Payload {
                endpoint: self.endpoint().to_owned(),
                message: format!("expected {} scores, got {}", responses.len(), raw.len()),
            });
        }
        raw.into_iter().map(|x| Ok(self.clamp(x)?.score)).collect()
    }
}

/// One-shot scoring call with default HTTP options.
pub fn remote_score(endpoint: &str, instruction: &str, response: &str) -> Result<Score> {
    RemoteScorer::new(endpoint, None, HttpOptions::default()).score(instruction, response)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::testing::serve;
    use std::time::Duration;

    fn scorer(url: &str) -> RemoteScorer {
        RemoteScorer::new(
            url,
            None,
            HttpOptions {
                timeout: Duration::from_millis(300),
                max_in_flight: 1,
                retries: 0,
            },
        )
    }

    #[test]
    fn passes_through_in_range() {
        let server = serve(vec![(200, r#"{"score":0.73}"#.into())]);
        let s = scorer(&server.url).score_detailed("i", "r").unwrap();
        assert_eq!(s.score.value(), 0.73);
        assert!(!s.clamped);
        let body = &server.requests.lock().unwrap()[0];
        assert_eq!(body.0, "/score");
        assert_eq!(body.1, r#"{"instruction":"i","response":"r"}"#);
    }

    #[test]
    fn clamps_out_of_range() {
        let server = serve(vec![(200, r#"{"score":1.2}"#.into())]);
        let s = scorer(&server.url).score_detailed("i", "r").unwrap();
        assert_eq!(s.score.value(), 1.0);
        assert!(s.clamped);
    }

    #[test]
    fn non_numeric_payload() {
        let server = serve(vec![(200, r#"{"score":"high"}"#.into())]);
        assert!(matches!(scorer(&server.url).score("i", "r"), Err(Error::Payload { .. })));
    }

    #[test]
    fn timeout_carries_endpoint() {
        let server = serve(vec![(1, String::new())]);
        match scorer(&server.url).score("i", "r") {
            Err(Error::Transport { endpoint, .. }) => assert_eq!(endpoint, format!("{}/score", server.url)),
            other => panic!("expected transport error, got {other:?}"),
        }
    }

    #[test]
    fn batch_endpoint() {
        let server = serve(vec![(200, r#"{"scores":[0.1,-0.5]}"#.into())]);
        let got = scorer(&server.url).score_batch("i", &["a", "b"]).unwrap();
        assert_eq!(got.iter().map(|s| s.value()).collect::<Vec<_>>(), [0.1, 0.0]);
        assert_eq!(server.requests.lock().unwrap()[0].0, "/score_batch");
    }
}
