use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::harness::{evaluate_systems, EvalContext, SystemUnderTest};
use super::report::{Ablations, EvalReport, Fingerprint};
use crate::construct::{build_dataset, Construction, ConstructionConfig};
use crate::corpus::{Corpus, TaskKind};
use crate::error::{Error, Result};
use crate::genclient::{GeneratorHandle, STUB_RECIPE_VERSION};
use crate::hashing::digest;
use crate::scorer::{train, ScorerModel, TrainConfig, FEATURIZER_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseInit {
    Pretrained,
    Checkpoint,
    Fresh,
}

impl BaseInit {
    pub fn as_str(self) -> &'static str {
        match self {
            BaseInit::Pretrained => "pretrained",
            BaseInit::Checkpoint => "checkpoint",
            BaseInit::Fresh => "fresh",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaseScorer {
    pub model: ScorerModel,
    pub init: BaseInit,
}

pub struct Backbone<'a> {
    pub name: String,
    pub handle: &'a GeneratorHandle,
}

pub struct AdaptationSetup<'a> {
    pub train: &'a Corpus,
    pub test: &'a Corpus,
    pub backbones: Vec<Backbone<'a>>,
    /// Generators used to augment the downstream data.
    pub augmenters: &'a [GeneratorHandle],
    /// `None` starts from a fresh scorer.
    pub base: Option<BaseScorer>,
    pub construction: ConstructionConfig,
    pub finetune: TrainConfig,
    pub systems: Vec<SystemUnderTest>,
    pub ablations: Ablations,
    pub seed: u64,
    pub feature_dim: usize,
}

pub struct AdaptationOutcome {
    pub report: EvalReport,
    pub base: ScorerModel,
    pub finetuned: ScorerModel,
    pub downstream: Construction,
}

/// Rejects a train/test pair sharing any instance_id.
pub fn check_disjoint(train: &Corpus, test: &Corpus) -> Result<()> {
    let train_ids = train.instance_ids();
    let mut shared: Vec<&str> = test
        .instances
        .iter()
        .map(|i| i.instance_id.as_str())
        .filter(|id| train_ids.contains(id))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    if shared.is_empty() {
        return Ok(());
    }
    shared.sort();
    let shown: Vec<&str> = shared.iter().take(5).copied().collect();
    Err(Error::precondition(format!(
        "train and test splits share {} instance_id(s), e.g. {}",
        shared.len(),
        shown.join(", ")
    )))
}

pub fn params_digest(model: &ScorerModel) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for p in model.params() {
        h.update(p.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Builds downstream data from the train split, finetunes the base scorer on
/// it, and evaluates every system on the test split for each backbone.
pub fn run_adaptation(setup: AdaptationSetup<'_>) -> Result<AdaptationOutcome> {
    check_disjoint(setup.train, setup.test)?;
    if setup.backbones.is_empty() {
        return Err(Error::config("backbones", "at least one backbone is required"));
    }
    let mut construction = setup.construction.clone();
    if setup.ablations.no_augmentation {
        construction.enable_augmentation = false;
    }
    let downstream = build_dataset(setup.train, &construction, setup.augmenters)?;
    log::info!(
        "downstream data: {} examples from {} instances",
        downstream.examples.len(),
        setup.train.len()
    );

    let base = match setup.base {
        Some(b) if !setup.ablations.no_pretrained_base => b,
        _ => BaseScorer {
            model: ScorerModel::new(setup.feature_dim)?,
            init: BaseInit::Fresh,
        },
    };
    let outcome = train(base.model.clone(), &downstream.examples, &setup.finetune)?;
    let finetuned = outcome.model;

    let systems = if setup.systems.is_empty() {
        let has = |k| setup.test.instances.iter().any(|i| i.kind == k);
        super::harness::default_systems(has(TaskKind::Classification), has(TaskKind::Generation))
    } else {
        setup.systems
    };

    let mut per_task = Vec::new();
    for b in &setup.backbones {
        let ctx = EvalContext {
            backbone_name: b.name.clone(),
            backbone: b.handle,
            base: Some(&base.model),
            finetuned: Some(&finetuned),
            seed: setup.seed,
        };
        per_task.extend(evaluate_systems(setup.test, &systems, &ctx)?);
    }

    let mut report = EvalReport::from_results(per_task)?;
    report.fingerprint = Fingerprint {
        seed: setup.seed,
        featurizer_version: FEATURIZER_VERSION,
        stub_recipe_version: STUB_RECIPE_VERSION,
        feature_dim: base.model.feature_dim(),
        generator: setup
            .backbones
            .iter()
            .map(|b| format!("{}={}", b.name, b.handle.describe()))
            .collect::<Vec<_>>()
            .join(","),
        construction: Some(construction.fingerprint()),
        finetune: Some(digest(&setup.finetune)),
        base_init: base.init.as_str().to_owned(),
        base_params: Some(params_digest(&base.model)),
        finetuned_params: Some(params_digest(&finetuned)),
        config: None,
    };
    report.ablations = setup.ablations;
    report.downstream_data = Some(downstream.summary.stats.clone());
    report.finetune_final_loss = outcome.losses.last().copied();
    Ok(AdaptationOutcome {
        report,
        base: base.model,
        finetuned,
        downstream,
    })
}
