use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::adaptation::{params_digest, run_adaptation, AdaptationSetup, Backbone, BaseInit, BaseScorer};
use super::harness::{default_systems, evaluate_systems, EvalContext, ScorerRole, SystemUnderTest};
use super::report::{Ablations, EvalReport, Fingerprint};
use crate::construct::{build_dataset, Construction, ConstructionConfig, DatasetStats};
use crate::corpus::{load_tasks, Corpus, TaskInstance, TaskKind, DEFAULT_TASK_CAP};
use crate::error::{Error, Result};
use crate::genclient::{GeneratorHandle, GeneratorSpec, STUB_RECIPE_VERSION};
use crate::hashing::digest;
use crate::scorer::{load_checkpoint, train, ScorerModel, TrainConfig, DEFAULT_FEATURE_DIM, FEATURIZER_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub name: String,
    pub generator: GeneratorSpec,
}

/// Builds the base scorer from a pretraining corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainStage {
    pub corpus: PathBuf,
    #[serde(default)]
    pub construction: ConstructionConfig,
    #[serde(default = "TrainConfig::pretraining")]
    pub train: TrainConfig,
}

/// One declarative experiment. Relative paths resolve against the config
/// file's directory. `seed` overrides every nested seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_task_cap")]
    pub task_cap: usize,
    pub backbones: Vec<BackboneSpec>,
    /// Generators that label augmented rows during construction.
    #[serde(default)]
    pub augmenters: Vec<GeneratorSpec>,
    #[serde(default)]
    pub pretrain: Option<PretrainStage>,
    #[serde(default)]
    pub base_checkpoint: Option<PathBuf>,
    /// Without a train split the run only evaluates the base scorer.
    #[serde(default)]
    pub train_corpus: Option<PathBuf>,
    pub test_corpus: PathBuf,
    #[serde(default)]
    pub construction: ConstructionConfig,
    #[serde(default = "TrainConfig::adaptation")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub systems: Vec<SystemUnderTest>,
    #[serde(default)]
    pub ablations: Ablations,
}

fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}

fn default_task_cap() -> usize {
    DEFAULT_TASK_CAP
}

impl ExperimentConfig {
    /// Parses JSON, reporting the field path of the first problem.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path.is_empty() { "<root>".to_owned() } else { path }, e.inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.feature_dim.is_power_of_two() {
            return Err(Error::config("feature_dim", "must be a power of two"));
        }
        if self.task_cap == 0 {
            return Err(Error::config("task_cap", "must be positive"));
        }
        if self.backbones.is_empty() {
            return Err(Error::config("backbones", "at least one backbone is required"));
        }
        for (i, b) in self.backbones.iter().enumerate() {
            if self.backbones[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::config(format!("backbones[{i}].name"), "duplicate backbone name"));
            }
        }
        if self.pretrain.is_some() && self.base_checkpoint.is_some() {
            return Err(Error::config("base_checkpoint", "conflicts with pretrain; give one base source"));
        }
        if let Some(p) = &self.pretrain {
            p.construction
                .validate(self.augmenters.len())
                .map_err(|e| Error::config("pretrain.construction", e.to_string()))?;
            p.train.validate().map_err(|e| Error::config("pretrain.train", e.to_string()))?;
        }
        if self.train_corpus.is_some() {
            let mut c = self.construction.clone();
            if self.ablations.no_augmentation {
                c.enable_augmentation = false;
            }
            c.validate(self.augmenters.len())
                .map_err(|e| Error::config("construction", e.to_string()))?;
            self.finetune.validate().map_err(|e| Error::config("finetune", e.to_string()))?;
        }
        for (i, s) in self.systems.iter().enumerate() {
            s.validate().map_err(|e| Error::config(format!("systems[{i}]"), e.to_string()))?;
        }
        Ok(())
    }

    /// Pushes the top-level seed into every nested component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.construction.seed = seed;
        self.finetune.seed = seed;
        if let Some(p) = &mut self.pretrain {
            p.construction.seed = seed;
            p.train.seed = seed;
        }
        self
    }
}

/// Standalone data construction: a corpus, the generators that augment it,
/// and the construction switches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub generators: Vec<GeneratorSpec>,
    #[serde(default)]
    pub construction: ConstructionConfig,
    #[serde(default = "default_task_cap")]
    pub task_cap: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            generators: Vec::new(),
            construction: ConstructionConfig::default(),
            task_cap: DEFAULT_TASK_CAP,
        }
    }
}

impl DataConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))
    }
}

/// Loads and caps `corpus_path`, then builds its regression dataset with
/// every seed set to `seed`. Relative generator paths resolve against
/// `base_dir`.
pub fn build_data(config: &DataConfig, corpus_path: &Path, base_dir: &Path, seed: u64) -> Result<Construction> {
    if config.task_cap == 0 {
        return Err(Error::config("task_cap", "must be positive"));
    }
    let corpus = load_tasks(corpus_path)?.capped(config.task_cap, seed);
    let generators = config
        .generators
        .iter()
        .map(|g| g.build(base_dir, corpus.instances.iter()))
        .collect::<Result<Vec<_>>>()?;
    let mut construction = config.construction.clone();
    construction.seed = seed;
    build_dataset(&corpus, &construction, &generators)
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub report: EvalReport,
    pub table: String,
    pub base: ScorerModel,
    pub finetuned: Option<ScorerModel>,
}

fn load_capped(base_dir: &Path, path: &Path, cap: usize, seed: u64) -> Result<Corpus> {
    let corpus = load_tasks(&base_dir.join(path))?;
    Ok(corpus.capped(cap, seed))
}

fn pretrain(
    stage: &PretrainStage,
    feature_dim: usize,
    augmenters: &[GeneratorHandle],
    corpus: &Corpus,
) -> Result<(ScorerModel, DatasetStats)> {
    let data = build_dataset(corpus, &stage.construction, augmenters)?;
    log::info!("pretraining on {} examples", data.examples.len());
    let out = train(ScorerModel::new(feature_dim)?, &data.examples, &stage.train)?;
    Ok((out.model, data.summary.stats))
}

/// Runs the configured pipeline: optional pretraining, downstream
/// construction and finetuning when a train split is given, then evaluation
/// of every system on the test split for every backbone.
pub fn run_experiment_config(config: &ExperimentConfig, base_dir: &Path) -> Result<ExperimentOutput> {
    config.validate()?;
    let cfg = config.clone().with_seed(config.seed);

    let pretrain_corpus = match &cfg.pretrain {
        Some(p) => Some(load_capped(base_dir, &p.corpus, cfg.task_cap, cfg.seed)?),
        None => None,
    };
    let train_corpus = match &cfg.train_corpus {
        Some(p) => Some(load_capped(base_dir, p, cfg.task_cap, cfg.seed)?),
        None => None,
    };
    let test = load_tasks(&base_dir.join(&cfg.test_corpus))?;

    let every: Vec<&TaskInstance> = pretrain_corpus
        .iter()
        .chain(train_corpus.iter())
        .chain(std::iter::once(&test))
        .flat_map(|c| c.instances.iter())
        .collect();
    let augmenters = cfg
        .augmenters
        .iter()
        .map(|g| g.build(base_dir, every.iter().copied()))
        .collect::<Result<Vec<_>>>()?;
    let backbone_handles = cfg
        .backbones
        .iter()
        .map(|b| b.generator.build(base_dir, every.iter().copied()))
        .collect::<Result<Vec<_>>>()?;

    let mut pretraining_data = None;
    let base = if cfg.ablations.no_pretrained_base {
        None
    } else if let (Some(stage), Some(corpus)) = (&cfg.pretrain, &pretrain_corpus) {
        let (model, stats) = pretrain(stage, cfg.feature_dim, &augmenters, corpus)?;
        pretraining_data = Some(stats);
        Some(BaseScorer {
            model,
            init: BaseInit::Pretrained,
        })
    } else if let Some(path) = &cfg.base_checkpoint {
        let ck = load_checkpoint(&base_dir.join(path))?;
        if ck.model.feature_dim() != cfg.feature_dim {
            return Err(Error::config(
                "base_checkpoint",
                format!("checkpoint has feature_dim {}, config says {}", ck.model.feature_dim(), cfg.feature_dim),
            ));
        }
        Some(BaseScorer {
            model: ck.model,
            init: BaseInit::Checkpoint,
        })
    } else {
        None
    };

    let backbones: Vec<Backbone<'_>> = cfg
        .backbones
        .iter()
        .zip(&backbone_handles)
        .map(|(b, h)| Backbone {
            name: b.name.clone(),
            handle: h,
        })
        .collect();

    let (mut report, base_model, finetuned) = match &train_corpus {
        Some(train_corpus) => {
            let out = run_adaptation(AdaptationSetup {
                train: train_corpus,
                test: &test,
                backbones,
                augmenters: &augmenters,
                base,
                construction: cfg.construction.clone(),
                finetune: cfg.finetune.clone(),
                systems: cfg.systems.clone(),
                ablations: cfg.ablations.clone(),
                seed: cfg.seed,
                feature_dim: cfg.feature_dim,
            })?;
            (out.report, out.base, Some(out.finetuned))
        }
        None => {
            let base = match base {
                Some(b) => b,
                None => BaseScorer {
                    model: ScorerModel::new(cfg.feature_dim)?,
                    init: BaseInit::Fresh,
                },
            };
            let systems = if cfg.systems.is_empty() {
                let has = |k| test.instances.iter().any(|i| i.kind == k);
                default_systems(has(TaskKind::Classification), has(TaskKind::Generation))
                    .into_iter()
                    .filter(|s| s.scorer_role() != Some(ScorerRole::Finetuned))
                    .collect()
            } else {
                cfg.systems.clone()
            };
            let mut per_task = Vec::new();
            for b in &backbones {
                let ctx = EvalContext {
                    backbone_name: b.name.clone(),
                    backbone: b.handle,
                    base: Some(&base.model),
                    finetuned: None,
                    seed: cfg.seed,
                };
                per_task.extend(evaluate_systems(&test, &systems, &ctx)?);
            }
            let mut report = EvalReport::from_results(per_task)?;
            report.fingerprint = Fingerprint {
                seed: cfg.seed,
                featurizer_version: FEATURIZER_VERSION,
                stub_recipe_version: STUB_RECIPE_VERSION,
                feature_dim: cfg.feature_dim,
                generator: backbones
                    .iter()
                    .map(|b| format!("{}={}", b.name, b.handle.describe()))
                    .collect::<Vec<_>>()
                    .join(","),
                construction: None,
                finetune: None,
                base_init: base.init.as_str().to_owned(),
                base_params: Some(params_digest(&base.model)),
                finetuned_params: None,
                config: None,
            };
            report.ablations = cfg.ablations.clone();
            (report, base.model, None)
        }
    };
    report.pretraining_data = pretraining_data;
    report.fingerprint.config = Some(digest(&cfg));
    let table = report.render_table();
    Ok(ExperimentOutput {
        report,
        table,
        base: base_model,
        finetuned,
    })
}

/// Loads a config file and runs it with paths relative to its directory.
pub fn run_experiment(path: &Path) -> Result<ExperimentOutput> {
    let cfg = ExperimentConfig::load(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    run_experiment_config(&cfg, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_paths_in_errors() {
        let err = ExperimentConfig::from_json(r#"{"backbones":[{"name":"a","generator":{"backend":"stub","name":"x"}}],"test_corpus":"t.jsonl","finetune":{"learning_rate":"fast"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("finetune.learning_rate"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"backbones":[],"test_corpus":"t.jsonl"}"#).unwrap_err();
        assert!(err.to_string().contains("backbones"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"backbones":[{"name":"a","generator":{"backend":"stub","name":"x"}}],"test_corpus":"t","surprise":1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("surprise"), "{err}");
    }

    #[test]
    fn seed_reaches_nested_components() {
        let cfg = ExperimentConfig::from_json(
            r#"{"backbones":[{"name":"a","generator":{"backend":"stub","name":"x"}}],"test_corpus":"t.jsonl",
                "augmenters":[{"backend":"stub","name":"g"}],"pretrain":{"corpus":"p.jsonl"}}"#,
        )
        .unwrap()
        .with_seed(11);
        assert_eq!(cfg.construction.seed, 11);
        assert_eq!(cfg.finetune.seed, 11);
        assert_eq!(cfg.pretrain.as_ref().unwrap().train.seed, 11);
        assert_eq!(cfg.pretrain.unwrap().train.learning_rate, TrainConfig::pretraining().learning_rate);
    }

    #[test]
    fn missing_corpus_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::from_json(
            r#"{"backbones":[{"name":"a","generator":{"backend":"stub","name":"x"}}],"test_corpus":"nowhere.jsonl"}"#,
        )
        .unwrap();
        let err = run_experiment_config(&cfg, dir.path()).unwrap_err();
        assert!(err.to_string().contains("nowhere.jsonl"), "{err}");
    }
}
