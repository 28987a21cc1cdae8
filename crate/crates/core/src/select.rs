//! Picking one response out of a candidate set.
//!
//! All argmax-based methods break ties toward the lowest index, and
//! duplicates in a pool are scored independently.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::genclient::{Candidate, GeneratorHandle};
use crate::hashing::derived_rng;
use crate::scorer::Scorer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    Cappy,
    SelfScoring,
    Random,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen_index: usize,
    pub chosen_text: String,
    pub scores: Vec<f64>,
    pub method: SelectionMethod,
}

/// How self-scoring turns token log-probabilities into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodNorm {
    #[default]
    Mean,
    Sum,
}

/// Index of the maximum; earliest index wins ties. NaN never wins.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best.or(if scores.is_empty() { None } else { Some(0) })
}

fn pick(texts: &[&str], scores: Vec<f64>, method: SelectionMethod) -> Result<SelectionResult> {
    let chosen_index = argmax(&scores).ok_or_else(|| Error::precondition("no candidates to select from"))?;
    Ok(SelectionResult {
        chosen_index,
        chosen_text: texts[chosen_index].to_owned(),
        scores,
        method,
    })
}

fn score_all(scorer: &dyn Scorer, instruction: &str, texts: &[&str]) -> Result<Vec<f64>> {
    Ok(scorer
        .score_batch(instruction, texts)?
        .into_iter()
        .map(|s| s.value())
        .collect())
}

/// Scores every predefined choice and returns the best one.
pub fn select_classification(
    instance: &TaskInstance,
    scorer: &dyn Scorer,
    method: SelectionMethod,
) -> Result<SelectionResult> {
    if instance.kind != TaskKind::Classification {
        return Err(Error::precondition(format!(
            "{} is not a classification instance",
            instance.key()
        )));
    }
    let choices: Vec<&str> = instance.choices.iter().flatten().map(String::as_str).collect();
    let scores = score_all(scorer, &instance.instruction, &choices)?;
    pick(&choices, scores, method)
}

pub fn select_generation(
    instruction: &str,
    candidates: &[Candidate],
    scorer: &dyn Scorer,
    method: SelectionMethod,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::precondition("candidate list is empty"));
    }
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    let scores = score_all(scorer, instruction, &texts)?;
    pick(&texts, scores, method)
}

pub fn normalized_loglikelihood(logprobs: &[f64], norm: LikelihoodNorm) -> f64 {
    let sum: f64 = logprobs.iter().sum();
    match norm {
        LikelihoodNorm::Sum => sum,
        LikelihoodNorm::Mean => sum / logprobs.len().max(1) as f64,
    }
}

/// Ranks candidates by the backbone's own log-likelihood, fetching it from
/// `handle` for candidates that arrived without token log-probabilities.
pub fn self_score_select(
    instruction: &str,
    candidates: &[Candidate],
    handle: &GeneratorHandle,
    norm: LikelihoodNorm,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::precondition("candidate list is empty"));
    }
    if let Some(i) = candidates.iter().position(|c| c.text.is_empty()) {
        return Err(Error::precondition(format!(
            "candidate {i} is empty; its log-likelihood is undefined"
        )));
    }
    let scores = candidates
        .iter()
        .map(|c| {
            c.check_logprobs()?;
            let lp = match &c.token_logprobs {
                Some(lp) if !lp.is_empty() => lp.clone(),
                _ => handle.loglikelihood(instruction, &c.text)?,
            };
            Ok(normalized_loglikelihood(&lp, norm))
        })
        .collect::<Result<Vec<f64>>>()?;
    let texts: Vec<&str> = candidates.iter().map(|c| c.text.as_str()).collect();
    pick(&texts, scores, SelectionMethod::SelfScoring)
}

/// One line of a candidates file: a JSON string, or an object with `text`
/// and optional `token_logprobs`.
pub fn parse_candidate_line(line: &str) -> std::result::Result<Candidate, String> {
    let v: serde_json::Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let c = match v {
        serde_json::Value::String(s) => Candidate::plain(s),
        obj @ serde_json::Value::Object(_) => serde_json::from_value::<Candidate>(obj).map_err(|e| e.to_string())?,
        _ => return Err("expected a string or an object with a `text` field".into()),
    };
    c.check_logprobs().map_err(|e| e.to_string())?;
    Ok(c)
}

pub fn read_candidates(path: &Path) -> Result<Vec<Candidate>> {
    Ok(read_jsonl(path, parse_candidate_line)?
        .into_iter()
        .map(|(_, c)| c)
        .collect())
}

/// Uniform seeded choice.
pub fn random_select(candidates: &[Candidate], seed: u64) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::precondition("candidate list is empty"));
    }
    let mut rng = derived_rng(seed, &["random-select"]);
    let chosen_index = rng.random_range(0..candidates.len());
    Ok(SelectionResult {
        chosen_index,
        chosen_text: candidates[chosen_index].text.clone(),
        scores: vec![0.0; candidates.len()],
        method: SelectionMethod::Random,
    })
}
