//! Deterministic stand-in for a multi-task LLM.
//!
//! The stub knows the hidden reference for each instruction and emits seeded
//! perturbations of it: token dropout, adjacent swap, truncation, prefix
//! duplication, a full echo, or an empty string. Sharper decoding strategies
//! perturb less. The recipe is versioned by [`STUB_RECIPE_VERSION`]; bump it
//! whenever outputs change so frozen expectations can be found and updated.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::decoding::{Candidate, DecodingConfig, Strategy};
use crate::corpus::TaskInstance;
use crate::error::{Error, Result};
use crate::hashing::{derived_rng, hash_parts, mix};
use crate::rouge::tokenize;

pub const STUB_RECIPE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct StubGenerator {
    pub name: String,
    pub seed: u64,
    references: HashMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Dropout,
    Swap,
    Truncate,
    DuplicatePrefix,
}

impl StubGenerator {
    pub fn new(name: impl Into<String>, seed: u64) -> Self {
        StubGenerator {
            name: name.into(),
            seed,
            references: HashMap::new(),
        }
    }

    /// Registers hidden references for every instance's instruction.
    pub fn with_references<'a>(mut self, instances: impl IntoIterator<Item = &'a TaskInstance>) -> Self {
        for inst in instances {
            self.references
                .insert(inst.instruction.clone(), inst.ground_truth.clone());
        }
        self
    }

    pub fn insert_reference(&mut self, instruction: impl Into<String>, reference: impl Into<String>) {
        self.references.insert(instruction.into(), reference.into());
    }

    /// Unknown instructions fall back to echoing the instruction itself.
    fn reference_for<'a>(&'a self, instruction: &'a str) -> &'a str {
        self.references
            .get(instruction)
            .map(String::as_str)
            .unwrap_or(instruction)
    }

    fn noise_level(config: &DecodingConfig) -> f64 {
        let base = match config.strategy {
            Strategy::PlainSampling => 0.6,
            Strategy::Temperature => 0.5,
            Strategy::TopK => 0.4,
            Strategy::Nucleus => 0.35,
            Strategy::Beam => 0.15,
        };
        (base * config.temperature).clamp(0.05, 0.95)
    }

    pub fn generate(&self, instruction: &str, config: &DecodingConfig, n: usize) -> Result<Vec<Candidate>> {
        let reference = self.reference_for(instruction);
        let noise = Self::noise_level(config);
        (0..n)
            .map(|rank| {
                let mut rng = derived_rng(
                    mix(self.seed, config.seed),
                    &[
                        "stub-generate",
                        &STUB_RECIPE_VERSION.to_string(),
                        instruction,
                        config.strategy.as_str(),
                        &rank.to_string(),
                    ],
                );
                let mut text = perturb(reference, noise, &mut rng);
                truncate_tokens(&mut text, config.max_tokens as usize);
                let token_logprobs = if text.trim().is_empty() {
                    None
                } else {
                    Some(self.loglikelihood(instruction, &text)?)
                };
                Ok(Candidate {
                    text,
                    token_logprobs,
                    origin: Some(config.clone()),
                    rank_in_origin: rank,
                })
            })
            .collect()
    }

    /// Pseudo-likelihood: each token gets a hashed value in a high band when it
    /// occurs in the hidden reference and a low band otherwise; tokens used
    /// more often than the reference uses them are penalised. A final
    /// end-of-sequence entry is likely only when the response ends on the
    /// reference's last token. Always finite and non-positive.
    pub fn loglikelihood(&self, instruction: &str, response: &str) -> Result<Vec<f64>> {
        if response.trim().is_empty() {
            return Err(Error::precondition(
                "log-likelihood of an empty response is undefined",
            ));
        }
        let reference = tokenize(self.reference_for(instruction)).into_inner();
        let mut budget: HashMap<&str, usize> = HashMap::new();
        for t in &reference {
            *budget.entry(t.as_str()).or_default() += 1;
        }
        let mut tokens = tokenize(response).into_inner();
        if tokens.is_empty() {
            // Punctuation-only response: a single opaque token.
            tokens.push(response.to_owned());
        }
        let unit = |i: usize| {
            let h = hash_parts(self.seed, &["stub-ll", instruction, response, &i.to_string()]);
            (h >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut out: Vec<f64> = Vec::with_capacity(tokens.len() + 1);
        for (i, tok) in tokens.iter().enumerate() {
            let u = unit(i);
            out.push(match budget.get_mut(tok.as_str()) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    -(0.2 + 1.2 * u)
                }
                Some(_) => -(1.0 + 1.5 * u),
                None => -(0.6 + 2.0 * u),
            });
        }
        let u = unit(tokens.len());
        out.push(if reference.last() == tokens.last() {
            -(0.2 + 0.8 * u)
        } else {
            -(0.8 + 2.0 * u)
        });
        Ok(out)
    }
}

fn truncate_tokens(text: &mut String, max_tokens: usize) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() > max_tokens {
        *text = words[..max_tokens].join(" ");
    }
}

fn perturb(reference: &str, noise: f64, rng: &mut ChaCha8Rng) -> String {
    let mut words: Vec<&str> = reference.split_whitespace().collect();
    let u: f64 = rng.random();
    if u < 0.08 * noise {
        return String::new();
    }
    if u > 1.0 - 0.5 * (1.0 - noise) {
        return reference.to_owned();
    }
    const OPS: [Op; 4] = [Op::Dropout, Op::Swap, Op::Truncate, Op::DuplicatePrefix];
    let n_ops = rng.random_range(1..=3);
    for _ in 0..n_ops {
        if words.is_empty() {
            break;
        }
        match OPS[rng.random_range(0..OPS.len())] {
            Op::Dropout => {
                let p = 0.5 * noise;
                let kept: Vec<&str> = words.iter().copied().filter(|_| !rng.random_bool(p)).collect();
                words = kept;
            }
            Op::Swap => {
                if words.len() >= 2 {
                    let i = rng.random_range(0..words.len() - 1);
                    words.swap(i, i + 1);
                }
            }
            Op::Truncate => {
                let keep = rng.random_range(1..=words.len());
                words.truncate(keep);
            }
            Op::DuplicatePrefix => {
                let k = rng.random_range(1..=words.len().min(3));
                let prefix: Vec<&str> = words[..k].to_vec();
                words.splice(0..0, prefix);
            }
        }
    }
    words.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use crate::rouge::rouge_l;

    fn stub() -> StubGenerator {
        let mut g = StubGenerator::new("stub", 5);
        g.insert_reference("q", "the quick brown fox jumps over the lazy dog");
        g
    }

    #[test]
    fn deterministic() {
        let g = stub();
        let cfg = DecodingConfig::nucleus(0.95).with_seed(3);
        assert_eq!(g.generate("q", &cfg, 6).unwrap(), g.generate("q", &cfg, 6).unwrap());
        let ll = g.loglikelihood("q", "the fox").unwrap();
        assert_eq!(ll, g.loglikelihood("q", "the fox").unwrap());
    }

    #[test]
    fn ranks_are_prefix_stable() {
        let g = stub();
        let cfg = DecodingConfig::top_k(40).with_seed(1);
        let four = g.generate("q", &cfg, 4).unwrap();
        let one = g.generate("q", &cfg, 1).unwrap();
        assert_eq!(one[..], four[..1]);
    }

    #[test]
    fn loglikelihood_bounds() {
        let g = stub();
        for resp in ["the quick", "zebra zebra", "!!", "fox"] {
            let ll = g.loglikelihood("q", resp).unwrap();
            assert!(!ll.is_empty());
            assert!(ll.iter().all(|x| x.is_finite() && *x <= 0.0));
        }
        assert!(g.loglikelihood("q", "").is_err());
        assert!(g.loglikelihood("q", "   ").is_err());
    }

    #[test]
    fn produces_diverse_scores() {
        let g = stub();
        let cfg = DecodingConfig::plain_sampling().with_seed(9);
        let scores: HashSet<u64> = g
            .generate("q", &cfg, 40)
            .unwrap()
            .iter()
            .map(|c| rouge_l(&c.text, "the quick brown fox jumps over the lazy dog").f1.to_bits())
            .collect();
        assert!(scores.len() >= 5, "{scores:?}");
    }

    #[test]
    fn max_tokens_truncates() {
        let g = stub();
        let cfg = DecodingConfig::beam(4).with_max_tokens(2);
        for c in g.generate("q", &cfg, 1).unwrap() {
            assert!(c.text.split_whitespace().count() <= 2);
        }
    }
}
