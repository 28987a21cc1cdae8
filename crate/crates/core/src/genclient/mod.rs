//! Candidate-producing backbones behind one handle type.

mod decoding;
pub mod http;
pub mod scripted;
pub mod stub;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use decoding::{Candidate, DecodingConfig, Strategy, DEFAULT_MAX_TOKENS};
pub use http::HttpGenerator;
pub use scripted::ScriptedGenerator;
pub use stub::{StubGenerator, STUB_RECIPE_VERSION};

use crate::corpus::TaskInstance;
use crate::error::{Error, Result};
use crate::hashing::hash_parts;
use crate::http::HttpOptions;

#[derive(Debug)]
pub enum GeneratorHandle {
    Http(HttpGenerator),
    Stub(StubGenerator),
    Scripted(ScriptedGenerator),
}

impl GeneratorHandle {
    /// Exactly `n` candidates. Beam search yields only its top sample, so beam
    /// requests with `n > 1` are rejected.
    pub fn generate(&self, instruction: &str, config: &DecodingConfig, n: usize) -> Result<Vec<Candidate>> {
        config.validate()?;
        if n == 0 {
            return Ok(Vec::new());
        }
        if config.strategy == Strategy::Beam && n > 1 {
            return Err(Error::precondition(format!(
                "beam search returns only its top sample; requested {n} candidates"
            )));
        }
        let out = match self {
            GeneratorHandle::Http(g) => g.generate(instruction, config, n)?,
            GeneratorHandle::Stub(g) => g.generate(instruction, config, n)?,
            GeneratorHandle::Scripted(g) => g.generate(instruction, config, n)?,
        };
        debug_assert_eq!(out.len(), n);
        for c in &out {
            c.check_logprobs()?;
        }
        Ok(out)
    }

    /// Per-token log-probabilities of `response` given `instruction`.
    pub fn loglikelihood(&self, instruction: &str, response: &str) -> Result<Vec<f64>> {
        if response.is_empty() {
            return Err(Error::precondition(
                "log-likelihood of an empty response is undefined",
            ));
        }
        let lp = match self {
            GeneratorHandle::Http(g) => g.loglikelihood(instruction, response)?,
            GeneratorHandle::Stub(g) => g.loglikelihood(instruction, response)?,
            GeneratorHandle::Scripted(g) => g.loglikelihood(instruction, response)?,
        };
        if lp.iter().any(|x| !x.is_finite() || *x > 0.0) {
            return Err(Error::precondition(
                "backend returned a positive or non-finite log-probability",
            ));
        }
        Ok(lp)
    }

    pub fn describe(&self) -> String {
        match self {
            GeneratorHandle::Http(g) => format!("http:{}", g.endpoint()),
            GeneratorHandle::Stub(g) => format!("stub:{}:v{}", g.name, STUB_RECIPE_VERSION),
            GeneratorHandle::Scripted(_) => "scripted".to_owned(),
        }
    }
}

/// Declarative description of a generator, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    Stub {
        name: String,
        #[serde(default)]
        seed: u64,
    },
    Scripted {
        path: PathBuf,
    },
    Http {
        /// Falls back to `CAPPY_LLM_ENDPOINT` when absent.
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
        #[serde(default = "default_in_flight")]
        max_in_flight: usize,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_in_flight() -> usize {
    8
}
fn default_retries() -> u32 {
    2
}

impl GeneratorSpec {
    /// Builds a handle. Stub generators get hidden access to the references of
    /// `instances`; relative scripted paths resolve against `base_dir`.
    pub fn build<'a>(
        &self,
        base_dir: &Path,
        instances: impl IntoIterator<Item = &'a TaskInstance>,
    ) -> Result<GeneratorHandle> {
        Ok(match self {
            GeneratorSpec::Stub { name, seed } => {
                GeneratorHandle::Stub(StubGenerator::new(name.clone(), *seed).with_references(instances))
            }
            GeneratorSpec::Scripted { path } => {
                GeneratorHandle::Scripted(ScriptedGenerator::load(&base_dir.join(path))?)
            }
            GeneratorSpec::Http {
                endpoint,
                model,
                timeout_ms,
                max_in_flight,
                retries,
            } => {
                let opts = HttpOptions {
                    timeout: Duration::from_millis(*timeout_ms),
                    max_in_flight: *max_in_flight,
                    retries: *retries,
                };
                let endpoint = match endpoint {
                    Some(e) => e.clone(),
                    None => std::env::var(http::ENDPOINT_ENV).map_err(|_| {
                        Error::config("generator.endpoint", "not set and CAPPY_LLM_ENDPOINT is empty")
                    })?,
                };
                let token = std::env::var(http::TOKEN_ENV).ok();
                GeneratorHandle::Http(HttpGenerator::new(endpoint, token, model.clone(), opts))
            }
        })
    }
}

/// A pool request: how many samples to draw from each decoding config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec(pub Vec<(DecodingConfig, usize)>);

impl PoolSpec {
    /// Four samples from each sampling strategy plus the top beam: 4 × 4 + 1.
    pub fn full() -> Self {
        PoolSpec(vec![
            (DecodingConfig::default_for(Strategy::PlainSampling), 4),
            (DecodingConfig::default_for(Strategy::Temperature), 4),
            (DecodingConfig::default_for(Strategy::TopK), 4),
            (DecodingConfig::default_for(Strategy::Nucleus), 4),
            (DecodingConfig::default_for(Strategy::Beam), 1),
        ])
    }

    pub fn single(strategy: Strategy, n: usize) -> Self {
        PoolSpec(vec![(DecodingConfig::default_for(strategy), n)])
    }

    pub fn size(&self) -> usize {
        self.0.iter().map(|(_, n)| n).sum()
    }

    pub fn without(&self, strategy: Strategy) -> Self {
        PoolSpec(self.0.iter().filter(|(c, _)| c.strategy != strategy).cloned().collect())
    }
}

/// Seed given to a strategy's requests within a pool. Depends only on the pool
/// seed and the strategy, so smaller pools are prefixes of larger ones.
pub fn strategy_seed(pool_seed: u64, strategy: Strategy) -> u64 {
    hash_parts(pool_seed, &["pool", strategy.as_str()])
}

/// Concatenates `generate` over the pool entries, in order. Duplicates are kept.
pub fn collect_pool(handle: &GeneratorHandle, instruction: &str, spec: &PoolSpec, seed: u64) -> Result<Vec<Candidate>> {
    let mut out = Vec::with_capacity(spec.size());
    for (config, n) in &spec.0 {
        let config = config.clone().with_seed(strategy_seed(seed, config.strategy));
        out.extend(handle.generate(instruction, &config, *n)?);
    }
    Ok(out)
}

/// The 17-candidate pool used for selection experiments.
pub fn collect_candidate_pool(handle: &GeneratorHandle, instruction: &str, seed: u64) -> Result<Vec<Candidate>> {
    collect_pool(handle, instruction, &PoolSpec::full(), seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn handle() -> GeneratorHandle {
        let mut g = StubGenerator::new("s", 1);
        g.insert_reference("q", "a b c d e f g");
        GeneratorHandle::Stub(g)
    }

    #[test]
    fn zero_request_is_empty() {
        assert!(handle().generate("q", &DecodingConfig::nucleus(0.95), 0).unwrap().is_empty());
        assert!(handle().generate("q", &DecodingConfig::beam(4), 0).unwrap().is_empty());
    }

    #[test]
    fn beam_refuses_multiple_samples() {
        let err = handle().generate("q", &DecodingConfig::beam(4), 4).unwrap_err();
        assert!(err.to_string().contains("top sample"), "{err}");
    }

    #[test]
    fn full_pool_layout() {
        let pool = collect_candidate_pool(&handle(), "q", 42).unwrap();
        assert_eq!(pool.len(), 17);
        let order: Vec<(Strategy, usize)> = pool
            .iter()
            .map(|c| (c.origin.as_ref().unwrap().strategy, c.rank_in_origin))
            .collect();
        let mut expected = Vec::new();
        for s in &Strategy::ALL[..4] {
            expected.extend((0..4).map(|r| (*s, r)));
        }
        expected.push((Strategy::Beam, 0));
        assert_eq!(order, expected);
        assert_eq!(pool, collect_candidate_pool(&handle(), "q", 42).unwrap());
    }

    #[test]
    fn pools_compose() {
        let h = handle();
        let full = PoolSpec::full();
        assert_eq!(collect_pool(&h, "q", &full.without(Strategy::TopK), 5).unwrap().len(), 13);
        let n4 = collect_pool(&h, "q", &PoolSpec::single(Strategy::Nucleus, 4), 5).unwrap();
        let n1 = collect_pool(&h, "q", &PoolSpec::single(Strategy::Nucleus, 1), 5).unwrap();
        let all = collect_pool(&h, "q", &full, 5).unwrap();
        assert_eq!(n4.len(), 4);
        assert_eq!(n1[..], n4[..1]);
        assert_eq!(n4[..], all[12..16]);
    }

    #[test]
    fn spec_parsing() {
        let s: GeneratorSpec = serde_json::from_str(r#"{"backend":"stub","name":"a","seed":3}"#).unwrap();
        assert_eq!(s, GeneratorSpec::Stub { name: "a".into(), seed: 3 });
        let h: GeneratorSpec = serde_json::from_str(r#"{"backend":"http","endpoint":"http://x"}"#).unwrap();
        assert!(matches!(h, GeneratorSpec::Http { timeout_ms: 60_000, .. }));
        assert!(serde_json::from_str::<GeneratorSpec>(r#"{"backend":"gpu"}"#).is_err());
    }
}
