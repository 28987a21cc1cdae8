use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{MetricName, TaskResult};
use crate::corpus::{Corpus, InstanceKey, TaskInstance, TaskKind};
use crate::error::{Error, Result};
use crate::genclient::{strategy_seed, Candidate, DecodingConfig, GeneratorHandle, PoolSpec, Strategy};
use crate::hashing::hash_parts;
use crate::rouge::rouge_l;
use crate::scorer::{LikelihoodScorer, OracleScorer, Scorer};
use crate::select::{self, LikelihoodNorm, SelectionMethod};

/// Which scorer a system consults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerRole {
    /// The scorer before downstream finetuning.
    Base,
    Finetuned,
    /// Rouge-L against the ground truth.
    Oracle,
    /// The backbone's own mean token likelihood.
    Likelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    Cappy {
        scorer: ScorerRole,
    },
    SelfScoring {
        #[serde(default)]
        norm: LikelihoodNorm,
    },
    /// Uniform choice, averaged over `repeats` seeds.
    Random {
        #[serde(default = "default_repeats")]
        repeats: usize,
    },
    Oracle,
}

fn default_repeats() -> usize {
    5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FullPool {
    Full,
}

/// Candidate pool for a selecting system: the full 17-candidate pool, or
/// the first `n` samples of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoolChoice {
    Named(FullPool),
    Single { strategy: Strategy, n: usize },
}

impl Default for PoolChoice {
    fn default() -> Self {
        PoolChoice::Named(FullPool::Full)
    }
}

impl PoolChoice {
    pub fn spec(&self) -> PoolSpec {
        match self {
            PoolChoice::Named(FullPool::Full) => PoolSpec::full(),
            PoolChoice::Single { strategy, n } => PoolSpec::single(*strategy, *n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SystemMode {
    ClassificationScorer { scorer: ScorerRole },
    /// The first sample of one decoding strategy.
    GenerationDecode { strategy: Strategy },
    GenerationSelect {
        selector: Selector,
        #[serde(default)]
        pool: PoolChoice,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemUnderTest {
    pub name: String,
    #[serde(flatten)]
    pub mode: SystemMode,
}

impl SystemUnderTest {
    pub fn new(name: impl Into<String>, mode: SystemMode) -> Self {
        SystemUnderTest { name: name.into(), mode }
    }

    pub fn task_kind(&self) -> TaskKind {
        match self.mode {
            SystemMode::ClassificationScorer { .. } => TaskKind::Classification,
            _ => TaskKind::Generation,
        }
    }

    pub fn metric(&self) -> MetricName {
        match self.task_kind() {
            TaskKind::Classification => MetricName::Accuracy,
            TaskKind::Generation => MetricName::RougeL,
        }
    }

    fn pool_spec(&self) -> Option<PoolSpec> {
        match &self.mode {
            SystemMode::ClassificationScorer { .. } => None,
            SystemMode::GenerationDecode { strategy } => Some(PoolSpec::single(*strategy, 1)),
            SystemMode::GenerationSelect { pool, .. } => Some(pool.spec()),
        }
    }

    pub fn scorer_role(&self) -> Option<ScorerRole> {
        match &self.mode {
            SystemMode::ClassificationScorer { scorer } => Some(*scorer),
            SystemMode::GenerationSelect {
                selector: Selector::Cappy { scorer },
                ..
            } => Some(*scorer),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field = |f: &str| format!("systems[{}].{f}", self.name);
        if self.name.trim().is_empty() {
            return Err(Error::config("systems[].name", "must be non-empty"));
        }
        if let SystemMode::GenerationSelect { selector, pool } = &self.mode {
            if let Selector::Random { repeats: 0 } = selector {
                return Err(Error::config(field("selector.repeats"), "must be positive"));
            }
            if let Selector::Cappy {
                scorer: ScorerRole::Oracle | ScorerRole::Likelihood,
            } = selector
            {
                return Err(Error::config(
                    field("selector.scorer"),
                    "cappy selection uses the base or finetuned scorer",
                ));
            }
            if let PoolChoice::Single { strategy, n } = pool {
                if *n == 0 {
                    return Err(Error::config(field("pool.n"), "must be positive"));
                }
                if *strategy == Strategy::Beam && *n > 1 {
                    return Err(Error::config(field("pool.n"), "beam search yields a single sample"));
                }
            }
        }
        Ok(())
    }
}

/// The baselines and treatments run when a config names no systems.
pub fn default_systems(classification: bool, generation: bool) -> Vec<SystemUnderTest> {
    use SystemMode::*;
    let mut out = Vec::new();
    if classification {
        out.push(SystemUnderTest::new("Choice likelihood", ClassificationScorer { scorer: ScorerRole::Likelihood }));
        out.push(SystemUnderTest::new("Cappy (base, choices)", ClassificationScorer { scorer: ScorerRole::Base }));
        out.push(SystemUnderTest::new("Cappy (finetuned, choices)", ClassificationScorer { scorer: ScorerRole::Finetuned }));
    }
    if generation {
        for (name, s) in [
            ("Sampling", Strategy::PlainSampling),
            ("Temperature", Strategy::Temperature),
            ("Top-K", Strategy::TopK),
            ("Nucleus", Strategy::Nucleus),
            ("Beam Search", Strategy::Beam),
        ] {
            out.push(SystemUnderTest::new(name, GenerationDecode { strategy: s }));
        }
        let select = |name: &str, selector| {
            SystemUnderTest::new(
                name,
                GenerationSelect {
                    selector,
                    pool: PoolChoice::default(),
                },
            )
        };
        out.push(select("Self-scoring", Selector::SelfScoring { norm: LikelihoodNorm::Mean }));
        out.push(select("Random", Selector::Random { repeats: default_repeats() }));
        out.push(select("Cappy (base)", Selector::Cappy { scorer: ScorerRole::Base }));
        out.push(select("Cappy (finetuned)", Selector::Cappy { scorer: ScorerRole::Finetuned }));
    }
    out
}

/// What the systems of one backbone evaluate against.
pub struct EvalContext<'a> {
    pub backbone_name: String,
    pub backbone: &'a GeneratorHandle,
    pub base: Option<&'a dyn Scorer>,
    pub finetuned: Option<&'a dyn Scorer>,
    pub seed: u64,
}

impl EvalContext<'_> {
    fn scorer(&self, role: ScorerRole) -> Result<&dyn Scorer> {
        let (s, what) = match role {
            ScorerRole::Base => (self.base, "base"),
            ScorerRole::Finetuned => (self.finetuned, "finetuned"),
            _ => unreachable!("resolved per instance"),
        };
        s.ok_or_else(|| Error::precondition(format!("no {what} scorer is available")))
    }
}

/// Candidates per instance and strategy, generated once with the largest
/// count any system asks for. Because a strategy's samples depend only on
/// the pool seed and the strategy, every requested pool is a prefix.
#[derive(Debug, Default)]
pub struct PoolCache {
    pools: HashMap<InstanceKey, BTreeMap<Strategy, Vec<Candidate>>>,
}

pub fn pool_seed(seed: u64, inst: &TaskInstance) -> u64 {
    hash_parts(seed, &["eval-pool", &inst.task_id, &inst.template_id, &inst.instance_id])
}

impl PoolCache {
    pub fn build(ctx: &EvalContext<'_>, instances: &[&TaskInstance], systems: &[SystemUnderTest]) -> Result<Self> {
        let mut need: BTreeMap<Strategy, usize> = BTreeMap::new();
        for spec in systems.iter().filter_map(|s| s.pool_spec()) {
            for (cfg, n) in spec.0 {
                let e = need.entry(cfg.strategy).or_default();
                *e = (*e).max(n);
            }
        }
        let pools = instances
            .par_iter()
            .filter(|i| i.kind == TaskKind::Generation)
            .map(|inst| -> Result<(InstanceKey, BTreeMap<Strategy, Vec<Candidate>>)> {
                let seed = pool_seed(ctx.seed, inst);
                let mut by = BTreeMap::new();
                for (&strategy, &n) in &need {
                    let cfg = DecodingConfig::default_for(strategy).with_seed(strategy_seed(seed, strategy));
                    let cands = ctx.backbone.generate(&inst.instruction, &cfg, n).map_err(|e| Error::Generator {
                        instance: inst.key().to_string(),
                        source: Box::new(e),
                    })?;
                    by.insert(strategy, cands);
                }
                Ok((inst.key(), by))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(PoolCache { pools })
    }

    pub fn pool(&self, inst: &TaskInstance, spec: &PoolSpec) -> Result<Vec<Candidate>> {
        let by = self
            .pools
            .get(&inst.key())
            .ok_or_else(|| Error::precondition(format!("no candidate pool for {}", inst.key())))?;
        let mut out = Vec::with_capacity(spec.size());
        for (cfg, n) in &spec.0 {
            let have = by.get(&cfg.strategy).map(Vec::as_slice).unwrap_or(&[]);
            if have.len() < *n {
                return Err(Error::precondition(format!(
                    "pool for {} holds {} {} samples, {} requested",
                    inst.key(),
                    have.len(),
                    cfg.strategy.as_str(),
                    n
                )));
            }
            out.extend_from_slice(&have[..*n]);
        }
        Ok(out)
    }
}

/// Self-scoring over the non-empty candidates; an empty text has no
/// likelihood. With no non-empty candidate the first one is taken.
fn self_score_nonempty(
    instruction: &str,
    pool: &[Candidate],
    handle: &GeneratorHandle,
    norm: LikelihoodNorm,
) -> Result<usize> {
    let idx: Vec<usize> = (0..pool.len()).filter(|&i| !pool[i].text.is_empty()).collect();
    if idx.is_empty() {
        return Ok(0);
    }
    let sub: Vec<Candidate> = idx.iter().map(|&i| pool[i].clone()).collect();
    let r = select::self_score_select(instruction, &sub, handle, norm)?;
    Ok(idx[r.chosen_index])
}

fn rouge_pct(candidate: &str, reference: &str) -> f64 {
    rouge_l(candidate, reference).f1 * 100.0
}

fn score_instance(system: &SystemUnderTest, inst: &TaskInstance, ctx: &EvalContext<'_>, pools: &PoolCache) -> Result<f64> {
    match &system.mode {
        SystemMode::ClassificationScorer { scorer } => {
            let r = match scorer {
                ScorerRole::Oracle => {
                    select::select_classification(inst, &OracleScorer::new(&inst.ground_truth), SelectionMethod::Oracle)?
                }
                ScorerRole::Likelihood => select::select_classification(
                    inst,
                    &LikelihoodScorer { handle: ctx.backbone },
                    SelectionMethod::SelfScoring,
                )?,
                role => select::select_classification(inst, ctx.scorer(*role)?, SelectionMethod::Cappy)?,
            };
            Ok(if r.chosen_text == inst.ground_truth { 1.0 } else { 0.0 })
        }
        SystemMode::GenerationDecode { strategy } => {
            let pool = pools.pool(inst, &PoolSpec::single(*strategy, 1))?;
            Ok(rouge_pct(&pool[0].text, &inst.ground_truth))
        }
        SystemMode::GenerationSelect { selector, pool } => {
            let cands = pools.pool(inst, &pool.spec())?;
            let text = |i: usize| cands[i].text.as_str();
            match selector {
                Selector::Cappy { scorer } => {
                    let r = select::select_generation(&inst.instruction, &cands, ctx.scorer(*scorer)?, SelectionMethod::Cappy)?;
                    Ok(rouge_pct(text(r.chosen_index), &inst.ground_truth))
                }
                Selector::Oracle => {
                    let oracle = OracleScorer::new(&inst.ground_truth);
                    let r = select::select_generation(&inst.instruction, &cands, &oracle, SelectionMethod::Oracle)?;
                    Ok(rouge_pct(text(r.chosen_index), &inst.ground_truth))
                }
                Selector::SelfScoring { norm } => {
                    let i = self_score_nonempty(&inst.instruction, &cands, ctx.backbone, *norm)?;
                    Ok(rouge_pct(text(i), &inst.ground_truth))
                }
                Selector::Random { repeats } => {
                    let mut total = 0.0;
                    for j in 0..*repeats {
                        let seed = hash_parts(
                            ctx.seed,
                            &["random", &j.to_string(), &inst.task_id, &inst.template_id, &inst.instance_id],
                        );
                        let r = select::random_select(&cands, seed)?;
                        total += rouge_pct(text(r.chosen_index), &inst.ground_truth);
                    }
                    Ok(total / *repeats as f64)
                }
            }
        }
    }
}

/// Evaluates one system on the instances of one (task, template) group.
pub fn evaluate_task(
    instances: &[&TaskInstance],
    system: &SystemUnderTest,
    ctx: &EvalContext<'_>,
    pools: &PoolCache,
) -> Result<TaskResult> {
    let first = instances
        .first()
        .ok_or_else(|| Error::precondition(format!("system {}: empty task", system.name)))?;
    for inst in instances {
        if inst.task_id != first.task_id || inst.template_id != first.template_id {
            return Err(Error::precondition(format!(
                "instances of {}/{} and {}/{} evaluated as one task",
                first.task_id, first.template_id, inst.task_id, inst.template_id
            )));
        }
        if inst.kind != system.task_kind() {
            return Err(Error::precondition(format!(
                "system {} cannot evaluate {:?} instance {}",
                system.name,
                inst.kind,
                inst.key()
            )));
        }
    }
    let mut sum = 0.0;
    for inst in instances {
        sum += score_instance(system, inst, ctx, pools)?;
    }
    Ok(TaskResult {
        system: system.name.clone(),
        backbone: ctx.backbone_name.clone(),
        task_id: first.task_id.clone(),
        template_id: first.template_id.clone(),
        metric: system.metric(),
        value: sum / instances.len() as f64,
        n_instances: instances.len(),
    })
}

/// Every system on every compatible (task, template) group of `test`.
/// Results come back ordered by system, then task, then template.
pub fn evaluate_systems(test: &Corpus, systems: &[SystemUnderTest], ctx: &EvalContext<'_>) -> Result<Vec<TaskResult>> {
    for (i, s) in systems.iter().enumerate() {
        s.validate()?;
        if systems[..i].iter().any(|o| o.name == s.name) {
            return Err(Error::config("systems", format!("duplicate system name {:?}", s.name)));
        }
    }
    let mut groups: BTreeMap<(&str, &str), Vec<&TaskInstance>> = BTreeMap::new();
    for inst in &test.instances {
        groups.entry((&inst.task_id, &inst.template_id)).or_default().push(inst);
    }
    let all: Vec<&TaskInstance> = test.instances.iter().collect();
    let pools = PoolCache::build(ctx, &all, systems)?;
    let jobs: Vec<(&SystemUnderTest, &Vec<&TaskInstance>)> = systems
        .iter()
        .flat_map(|s| {
            groups
                .values()
                .filter(move |g| g[0].kind == s.task_kind())
                .map(move |g| (s, g))
        })
        .collect();
    jobs.par_iter()
        .map(|(s, g)| evaluate_task(g, s, ctx, &pools))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genclient::StubGenerator;

    fn gen(task: &str, tpl: &str, id: &str, gt: &str) -> TaskInstance {
        TaskInstance {
            task_id: task.into(),
            template_id: tpl.into(),
            instance_id: id.into(),
            kind: TaskKind::Generation,
            instruction: format!("{task} {tpl} {id}"),
            ground_truth: gt.into(),
            choices: None,
        }
    }

    fn ctx(h: &GeneratorHandle) -> EvalContext<'_> {
        EvalContext {
            backbone_name: "stub".into(),
            backbone: h,
            base: None,
            finetuned: None,
            seed: 3,
        }
    }

    #[test]
    fn system_json_shapes() {
        let s: SystemUnderTest = serde_json::from_str(
            r#"{"name":"C","mode":"generation_select","selector":{"kind":"cappy","scorer":"finetuned"},"pool":{"strategy":"nucleus","n":4}}"#,
        )
        .unwrap();
        assert_eq!(
            s.mode,
            SystemMode::GenerationSelect {
                selector: Selector::Cappy { scorer: ScorerRole::Finetuned },
                pool: PoolChoice::Single { strategy: Strategy::Nucleus, n: 4 },
            }
        );
        let r: SystemUnderTest =
            serde_json::from_str(r#"{"name":"R","mode":"generation_select","selector":{"kind":"random"},"pool":"full"}"#).unwrap();
        assert!(matches!(r.mode, SystemMode::GenerationSelect { selector: Selector::Random { repeats: 5 }, .. }));
        assert!(serde_json::from_str::<SystemUnderTest>(r#"{"name":"x","mode":"telepathy"}"#).is_err());
    }

    #[test]
    fn oracle_pool_and_mode_checks() {
        let insts = [gen("a", "t0", "0", "one two three four"), gen("a", "t0", "1", "five six seven")];
        let h = GeneratorHandle::Stub(StubGenerator::new("s", 1).with_references(insts.iter()));
        let refs: Vec<&TaskInstance> = insts.iter().collect();
        let oracle = SystemUnderTest::new(
            "oracle",
            SystemMode::GenerationSelect { selector: Selector::Oracle, pool: PoolChoice::default() },
        );
        let c = ctx(&h);
        let pools = PoolCache::build(&c, &refs, std::slice::from_ref(&oracle)).unwrap();
        let r = evaluate_task(&refs, &oracle, &c, &pools).unwrap();
        assert!(r.value > 0.0 && r.value <= 100.0);
        assert_eq!(r.n_instances, 2);

        let cls = SystemUnderTest::new("c", SystemMode::ClassificationScorer { scorer: ScorerRole::Oracle });
        assert!(evaluate_task(&refs, &cls, &c, &pools).is_err());
        assert!(evaluate_task(&[], &oracle, &c, &pools).is_err());
    }

    #[test]
    fn missing_scorer_is_an_error() {
        let insts = [gen("a", "t0", "0", "x y")];
        let h = GeneratorHandle::Stub(StubGenerator::new("s", 1).with_references(insts.iter()));
        let refs: Vec<&TaskInstance> = insts.iter().collect();
        let sys = SystemUnderTest::new(
            "c",
            SystemMode::GenerationSelect {
                selector: Selector::Cappy { scorer: ScorerRole::Finetuned },
                pool: PoolChoice::default(),
            },
        );
        let c = ctx(&h);
        let pools = PoolCache::build(&c, &refs, std::slice::from_ref(&sys)).unwrap();
        assert!(evaluate_task(&refs, &sys, &c, &pools).is_err());
    }

    #[test]
    fn validation() {
        let bad = SystemUnderTest::new(
            "b",
            SystemMode::GenerationSelect {
                selector: Selector::Oracle,
                pool: PoolChoice::Single { strategy: Strategy::Beam, n: 2 },
            },
        );
        assert!(bad.validate().is_err());
        let all = default_systems(true, true);
        assert!(all.iter().all(|s| s.validate().is_ok()));
        let mut names: Vec<&str> = all.iter().map(|s| s.name.as_str()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), all.len());
    }
}
