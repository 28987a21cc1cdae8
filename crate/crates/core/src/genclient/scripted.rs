//! Replays candidates from a JSONL file:
//! `{"instruction": ..., "candidates": [{"text": ..., "token_logprobs": [...]?, "strategy": ...?}]}`.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::decoding::{Candidate, DecodingConfig, Strategy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCandidate {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    /// Restricts the candidate to one strategy; untagged candidates serve any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRecord {
    pub instruction: String,
    pub candidates: Vec<ScriptedCandidate>,
}

/// Parses the scripted JSONL format. Blank lines are skipped.
pub fn parse_scripted(text: &str) -> std::result::Result<Vec<ScriptedRecord>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ScriptedRecord =
            serde_json::from_str(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        for c in &rec.candidates {
            if let Some(lp) = &c.token_logprobs {
                if lp.iter().any(|x| !x.is_finite() || *x > 0.0) {
                    return Err(format!("line {}: token_logprobs must be finite and <= 0", i + 1));
                }
            }
        }
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedGenerator {
    entries: HashMap<String, Vec<ScriptedCandidate>>,
}

impl ScriptedGenerator {
    pub fn from_records(records: Vec<ScriptedRecord>) -> Self {
        let mut entries: HashMap<String, Vec<ScriptedCandidate>> = HashMap::new();
        for r in records {
            entries.entry(r.instruction).or_default().extend(r.candidates);
        }
        ScriptedGenerator { entries }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let records = parse_scripted(&text).map_err(|message| Error::Invalid {
            path: path.to_owned(),
            line: 0,
            message,
        })?;
        Ok(Self::from_records(records))
    }

    pub fn generate(&self, instruction: &str, config: &DecodingConfig, n: usize) -> Result<Vec<Candidate>> {
        let pool = self.entries.get(instruction).map(Vec::as_slice).unwrap_or(&[]);
        let picked: Vec<&ScriptedCandidate> = pool
            .iter()
            .filter(|c| c.strategy.is_none_or(|s| s == config.strategy))
            .take(n)
            .collect();
        if picked.len() < n {
            return Err(Error::precondition(format!(
                "scripted backend has {} candidates for strategy {} but {n} were requested",
                picked.len(),
                config.strategy.as_str()
            )));
        }
        Ok(picked
            .into_iter()
            .enumerate()
            .map(|(rank, c)| Candidate {
                text: c.text.clone(),
                token_logprobs: c.token_logprobs.clone(),
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
        self.entries
            .get(instruction)
            .and_then(|cs| {
                cs.iter()
                    .find(|c| c.text == response)
                    .and_then(|c| c.token_logprobs.clone())
            })
            .ok_or_else(|| {
                Error::precondition(format!(
                    "scripted backend has no log-probabilities for {response:?}"
                ))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCRIPT: &str = r#"{"instruction":"q","candidates":[{"text":"a","token_logprobs":[-1.0]},{"text":"b","strategy":"beam"},{"text":"c"}]}

{"instruction":"q","candidates":[{"text":"d"}]}"#;

    #[test]
    fn filters_by_strategy_and_merges_lines() {
        let g = ScriptedGenerator::from_records(parse_scripted(SCRIPT).unwrap());
        let got = g.generate("q", &DecodingConfig::nucleus(0.95), 3).unwrap();
        let texts: Vec<&str> = got.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["a", "c", "d"]);
        let beam = g.generate("q", &DecodingConfig::beam(4), 1).unwrap();
        assert_eq!(beam[0].text, "a");
        assert!(g.generate("q", &DecodingConfig::nucleus(0.95), 5).is_err());
        assert!(g.generate("unknown", &DecodingConfig::nucleus(0.95), 1).is_err());
    }

    #[test]
    fn loglikelihood_lookup() {
        let g = ScriptedGenerator::from_records(parse_scripted(SCRIPT).unwrap());
        assert_eq!(g.loglikelihood("q", "a").unwrap(), vec![-1.0]);
        assert!(g.loglikelihood("q", "c").is_err());
        assert!(g.loglikelihood("q", "").is_err());
    }

    #[test]
    fn rejects_positive_logprobs() {
        let bad = r#"{"instruction":"q","candidates":[{"text":"a","token_logprobs":[0.5]}]}"#;
        assert!(parse_scripted(bad).is_err());
        assert!(parse_scripted("{").is_err());
    }
}
