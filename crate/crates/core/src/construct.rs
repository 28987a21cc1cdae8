//! Weakly-supervised regression data from instruction/ground-truth corpora.
//!
//! Three components, each switchable:
//!
//! - ground truth: every `(instruction, ground_truth)` pair at 1.0
//! - incorrect: classification instructions paired with each wrong choice,
//!   generation instructions paired with another instance's ground truth,
//!   both at 0.0
//! - augmentation: generator samples for generation instances, labeled with
//!   Rouge-L F1 against the ground truth
//!
//! Every instance draws from its own RNG stream keyed by
//! `(seed, component, task, template, instance)`, so output does not depend
//! on worker count or on which other components are enabled.

use std::collections::{BTreeMap, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Provenance, RegressionExample, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::genclient::{DecodingConfig, GeneratorHandle, Strategy};
use crate::hashing::{derived_rng, hash_parts};
use crate::rouge::rouge_l;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructionConfig {
    pub enable_ground_truth: bool,
    pub enable_incorrect: bool,
    pub enable_augmentation: bool,
    /// Samples each generator draws with each augmentation strategy.
    pub samples_per_generator_per_strategy: usize,
    pub augmentation_strategies: Vec<DecodingConfig>,
    /// Collapse exact duplicate (instruction, response) rows, keeping the
    /// highest score.
    pub dedup: bool,
    pub seed: u64,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            enable_ground_truth: true,
            enable_incorrect: true,
            enable_augmentation: true,
            samples_per_generator_per_strategy: 2,
            augmentation_strategies: vec![
                DecodingConfig::default_for(Strategy::TopK),
                DecodingConfig::default_for(Strategy::Nucleus),
            ],
            dedup: true,
            seed: 0,
        }
    }
}

impl ConstructionConfig {
    pub fn validate(&self, n_generators: usize) -> Result<()> {
        if self.enable_augmentation {
            if n_generators == 0 {
                return Err(Error::config("generators", "augmentation needs at least one generator"));
            }
            if self.augmentation_strategies.is_empty() {
                return Err(Error::config(
                    "construction.augmentation_strategies",
                    "augmentation needs at least one strategy",
                ));
            }
            if self.samples_per_generator_per_strategy == 0 {
                return Err(Error::config(
                    "construction.samples_per_generator_per_strategy",
                    "must be positive",
                ));
            }
        }
        for (i, s) in self.augmentation_strategies.iter().enumerate() {
            s.validate().map_err(|e| Error::config(format!("construction.augmentation_strategies[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// Stable digest of the configuration, used in report fingerprints.
    pub fn fingerprint(&self) -> String {
        crate::hashing::digest(self)
    }
}

fn key_parts(inst: &TaskInstance) -> [&str; 3] {
    [&inst.task_id, &inst.template_id, &inst.instance_id]
}

fn instance_rng(seed: u64, component: &str, inst: &TaskInstance) -> ChaCha8Rng {
    let [t, p, i] = key_parts(inst);
    derived_rng(seed, &[component, t, p, i])
}

pub fn build_ground_truth(instance: &TaskInstance) -> RegressionExample {
    RegressionExample {
        instruction: instance.instruction.clone(),
        response: instance.ground_truth.clone(),
        score: 1.0,
        provenance: Provenance::GroundTruth,
        source_instance: instance.key(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncorrectOutcome {
    pub examples: Vec<RegressionExample>,
    /// Set when a generation instance had no partner with a different ground
    /// truth and so produced nothing.
    pub warning: Option<String>,
}

/// Incorrect responses for one instance. `task_members` are all instances of
/// the same task (any template), including `instance` itself.
pub fn build_incorrect(instance: &TaskInstance, task_members: &[&TaskInstance], rng: &mut ChaCha8Rng) -> IncorrectOutcome {
    let zero = |response: &str, provenance| RegressionExample {
        instruction: instance.instruction.clone(),
        response: response.to_owned(),
        score: 0.0,
        provenance,
        source_instance: instance.key(),
    };
    match instance.kind {
        TaskKind::Classification => {
            let mut seen = std::collections::HashSet::new();
            let examples = instance
                .choices
                .iter()
                .flatten()
                .filter(|c| **c != instance.ground_truth && seen.insert(c.as_str()))
                .map(|c| zero(c, Provenance::IncorrectChoice))
                .collect();
            IncorrectOutcome { examples, warning: None }
        }
        TaskKind::Generation => {
            let partners: Vec<&&TaskInstance> = task_members
                .iter()
                .filter(|m| m.ground_truth != instance.ground_truth)
                .collect();
            match partners.choose(rng) {
                Some(p) => IncorrectOutcome {
                    examples: vec![zero(&p.ground_truth, Provenance::Mismatch)],
                    warning: None,
                },
                None => IncorrectOutcome {
                    examples: Vec::new(),
                    warning: Some(format!(
                        "{}: no instance in task {:?} has a different ground truth; mismatch skipped",
                        instance.key(),
                        instance.task_id
                    )),
                },
            }
        }
    }
}

/// Augmented rows for one generation instance: for each generator and each
/// strategy, `samples_per_generator_per_strategy` samples scored by Rouge-L F1.
pub fn build_augmented(
    instance: &TaskInstance,
    config: &ConstructionConfig,
    generators: &[GeneratorHandle],
) -> Result<Vec<RegressionExample>> {
    if instance.kind != TaskKind::Generation {
        return Err(Error::precondition(format!(
            "{}: augmentation applies only to generation instances",
            instance.key()
        )));
    }
    let [t, p, i] = key_parts(instance);
    let mut out = Vec::new();
    for (gi, g) in generators.iter().enumerate() {
        for strategy in &config.augmentation_strategies {
            let seed = hash_parts(config.seed, &["augment", t, p, i, &gi.to_string(), strategy.strategy.as_str()]);
            let samples = g
                .generate(&instance.instruction, &strategy.clone().with_seed(seed), config.samples_per_generator_per_strategy)
                .map_err(|e| Error::Generator {
                    instance: instance.key().to_string(),
                    source: Box::new(e),
                })?;
            out.extend(samples.into_iter().map(|c| RegressionExample {
                score: rouge_l(&c.text, &instance.ground_truth).f1,
                instruction: instance.instruction.clone(),
                response: c.text,
                provenance: Provenance::Augmented,
                source_instance: instance.key(),
            }));
        }
    }
    Ok(out)
}

/// Counts and score histogram of a regression dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_examples: usize,
    pub per_provenance: BTreeMap<String, usize>,
    /// Ten equal-width bins over [0, 1]; 1.0 falls in the last.
    pub histogram: Vec<usize>,
    pub distinct_scores: usize,
    /// True when every score is exactly 0.0 or 1.0.
    pub binary_labels: bool,
}

pub fn dataset_stats(examples: &[RegressionExample]) -> DatasetStats {
    let mut per_provenance: BTreeMap<String, usize> =
        Provenance::ALL.iter().map(|p| (p.as_str().to_owned(), 0)).collect();
    let mut histogram = vec![0usize; 10];
    let mut distinct = std::collections::HashSet::new();
    for ex in examples {
        *per_provenance.get_mut(ex.provenance.as_str()).unwrap() += 1;
        histogram[((ex.score * 10.0) as usize).min(9)] += 1;
        distinct.insert(ex.score.to_bits());
    }
    DatasetStats {
        n_examples: examples.len(),
        per_provenance,
        histogram,
        distinct_scores: distinct.len(),
        binary_labels: examples.iter().all(|e| e.score == 0.0 || e.score == 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionSummary {
    pub n_instances: usize,
    pub stats: DatasetStats,
    pub skipped_mismatch: usize,
    pub duplicates_removed: usize,
    pub warnings: Vec<String>,
    pub config_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct Construction {
    pub examples: Vec<RegressionExample>,
    pub summary: ConstructionSummary,
}

/// Collapses exact (instruction, response) duplicates, keeping the highest
/// score; on ties the earliest row wins. Returns the number removed.
pub fn dedup_keep_max(examples: &mut Vec<RegressionExample>) -> usize {
    let mut slot: HashMap<(String, String), usize> = HashMap::new();
    let mut out: Vec<RegressionExample> = Vec::with_capacity(examples.len());
    let before = examples.len();
    for ex in examples.drain(..) {
        match slot.get(&(ex.instruction.clone(), ex.response.clone())) {
            Some(&i) => {
                if ex.score > out[i].score {
                    out[i] = ex;
                }
            }
            None => {
                slot.insert((ex.instruction.clone(), ex.response.clone()), out.len());
                out.push(ex);
            }
        }
    }
    *examples = out;
    before - examples.len()
}

/// Builds the full regression dataset for a corpus.
pub fn build_dataset(corpus: &Corpus, config: &ConstructionConfig, generators: &[GeneratorHandle]) -> Result<Construction> {
    config.validate(generators.len())?;
    let tasks = corpus.tasks();

    struct PerInstance {
        examples: Vec<RegressionExample>,
        warning: Option<String>,
    }

    let per_instance: Vec<PerInstance> = corpus
        .instances
        .par_iter()
        .map(|inst| -> Result<PerInstance> {
            let mut examples = Vec::new();
            let mut warning = None;
            if config.enable_ground_truth {
                examples.push(build_ground_truth(inst));
            }
            if config.enable_incorrect {
                let mut rng = instance_rng(config.seed, "incorrect", inst);
                let out = build_incorrect(inst, &tasks[inst.task_id.as_str()], &mut rng);
                examples.extend(out.examples);
                warning = out.warning;
            }
            if config.enable_augmentation && inst.kind == TaskKind::Generation {
                examples.extend(build_augmented(inst, config, generators)?);
            }
            Ok(PerInstance { examples, warning })
        })
        .collect::<Result<_>>()?;

    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for p in per_instance {
        examples.extend(p.examples);
        warnings.extend(p.warning);
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let duplicates_removed = if config.dedup { dedup_keep_max(&mut examples) } else { 0 };
    let mut rng = derived_rng(config.seed, &["final-shuffle"]);
    examples.shuffle(&mut rng);

    let summary = ConstructionSummary {
        n_instances: corpus.len(),
        stats: dataset_stats(&examples),
        skipped_mismatch: warnings.len(),
        duplicates_removed,
        warnings,
        config_fingerprint: config.fingerprint(),
    };
    Ok(Construction { examples, summary })
}
