//! Task corpora and regression datasets, both stored as JSONL.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-task cap on instances, applied after template expansion.
pub const DEFAULT_TASK_CAP: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Generation,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub task_id: String,
    pub template_id: String,
    pub instance_id: String,
}

impl std::fmt::Display for InstanceKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.task_id, self.template_id, self.instance_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub task_id: String,
    pub template_id: String,
    pub instance_id: String,
    pub kind: TaskKind,
    pub instruction: String,
    pub ground_truth: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
}

impl TaskInstance {
    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            task_id: self.task_id.clone(),
            template_id: self.template_id.clone(),
            instance_id: self.instance_id.clone(),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match (self.kind, &self.choices) {
            (TaskKind::Classification, None) => {
                Err("classification instance has no choices".into())
            }
            (TaskKind::Classification, Some(choices)) => {
                let distinct: HashSet<&str> = choices.iter().map(String::as_str).collect();
                if distinct.len() < 2 {
                    return Err("classification instance needs at least 2 distinct choices".into());
                }
                if !choices.contains(&self.ground_truth) {
                    return Err(format!(
                        "ground_truth {:?} is not one of the choices",
                        self.ground_truth
                    ));
                }
                Ok(())
            }
            (TaskKind::Generation, Some(_)) => {
                Err("generation instance must not carry choices".into())
            }
            (TaskKind::Generation, None) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    GroundTruth,
    IncorrectChoice,
    Mismatch,
    Augmented,
}

impl Provenance {
    pub const ALL: [Provenance; 4] = [
        Provenance::GroundTruth,
        Provenance::IncorrectChoice,
        Provenance::Mismatch,
        Provenance::Augmented,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::GroundTruth => "ground_truth",
            Provenance::IncorrectChoice => "incorrect_choice",
            Provenance::Mismatch => "mismatch",
            Provenance::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionExample {
    pub instruction: String,
    pub response: String,
    pub score: f64,
    pub provenance: Provenance,
    pub source_instance: InstanceKey,
}

impl RegressionExample {
    /// Score/provenance consistency that can be checked without the source
    /// instance. Augmented rows only need a score in [0, 1] here.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        match self.provenance {
            Provenance::GroundTruth if self.score != 1.0 => {
                Err(format!("ground_truth row has score {}", self.score))
            }
            Provenance::IncorrectChoice | Provenance::Mismatch if self.score != 0.0 => Err(
                format!("{} row has score {}", self.provenance.as_str(), self.score),
            ),
            _ => Ok(()),
        }
    }
}

/// Validated task instances plus the seed that keyed their capping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub instances: Vec<TaskInstance>,
    pub global_seed: u64,
}

impl Corpus {
    pub fn new(instances: Vec<TaskInstance>) -> Result<Self> {
        check_unique(instances.iter().enumerate().map(|(i, t)| (i + 1, t)), Path::new("<memory>"))?;
        for (i, inst) in instances.iter().enumerate() {
            inst.validate().map_err(|message| Error::Invalid {
                path: "<memory>".into(),
                line: i + 1,
                message,
            })?;
        }
        Ok(Corpus {
            instances,
            global_seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances grouped by task id, in task-id order; within a task, file order.
    pub fn tasks(&self) -> BTreeMap<&str, Vec<&TaskInstance>> {
        let mut out: BTreeMap<&str, Vec<&TaskInstance>> = BTreeMap::new();
        for inst in &self.instances {
            out.entry(inst.task_id.as_str()).or_default().push(inst);
        }
        out
    }

    /// Caps every task independently (see [`cap_dataset`]); tasks keep their
    /// relative placement in the instance list.
    pub fn capped(&self, cap: usize, seed: u64) -> Corpus {
        let mut keep: HashSet<InstanceKey> = HashSet::new();
        for (task, members) in self.tasks() {
            let owned: Vec<TaskInstance> = members.into_iter().cloned().collect();
            let task_seed = crate::hashing::hash_parts(seed, &["cap", task]);
            keep.extend(cap_dataset(owned, cap, task_seed).iter().map(TaskInstance::key));
        }
        Corpus {
            instances: self
                .instances
                .iter()
                .filter(|i| keep.contains(&i.key()))
                .cloned()
                .collect(),
            global_seed: seed,
        }
    }

    /// Writes instances in canonical field order.
    pub fn write(&self, path: &Path) -> Result<usize> {
        write_jsonl(path, &self.instances)
    }

    pub fn instance_ids(&self) -> HashSet<&str> {
        self.instances.iter().map(|i| i.instance_id.as_str()).collect()
    }
}

/// Parses and validates one task record.
pub fn parse_task_line(line: &str) -> std::result::Result<TaskInstance, String> {
    let inst: TaskInstance = serde_json::from_str(line).map_err(|e| e.to_string())?;
    inst.validate()?;
    Ok(inst)
}

pub fn parse_regression_line(line: &str) -> std::result::Result<RegressionExample, String> {
    let ex: RegressionExample = serde_json::from_str(line).map_err(|e| e.to_string())?;
    ex.validate()?;
    Ok(ex)
}

fn check_unique<'a>(
    records: impl Iterator<Item = (usize, &'a TaskInstance)>,
    path: &Path,
) -> Result<()> {
    let mut seen = HashSet::new();
    for (line, inst) in records {
        if !seen.insert(inst.key()) {
            return Err(Error::Invalid {
                path: path.to_owned(),
                line,
                message: format!("duplicate instance key {}", inst.key()),
            });
        }
    }
    Ok(())
}

pub(crate) fn read_jsonl<T>(
    path: &Path,
    parse: impl Fn(&str) -> std::result::Result<T, String>,
) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        // Distinguish syntax errors from well-formed records that break an
        // invariant so messages point at the right problem.
        if let Err(e) = serde_json::from_str::<serde_json::Value>(&line) {
            return Err(Error::Json {
                path: path.to_owned(),
                line: lineno,
                message: e.to_string(),
            });
        }
        let rec = parse(&line).map_err(|message| Error::Invalid {
            path: path.to_owned(),
            line: lineno,
            message,
        })?;
        out.push((lineno, rec));
    }
    Ok(out)
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<usize> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(rows.len())
}

/// Loads a task JSONL file, rejecting malformed lines, invariant violations
/// and duplicate `(task_id, template_id, instance_id)` keys.
pub fn load_tasks(path: &Path) -> Result<Corpus> {
    let rows = read_jsonl(path, parse_task_line)?;
    check_unique(rows.iter().map(|(l, t)| (*l, t)), path)?;
    Ok(Corpus {
        instances: rows.into_iter().map(|(_, t)| t).collect(),
        global_seed: 0,
    })
}

/// Keeps at most `cap` instances. Below the cap the input is returned as is;
/// above it, a seeded uniform subsample is kept in original relative order.
pub fn cap_dataset<T>(instances: Vec<T>, cap: usize, seed: u64) -> Vec<T> {
    assert!(cap >= 1, "cap must be at least 1");
    if instances.len() <= cap {
        return instances;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; instances.len()];
    for i in index::sample(&mut rng, instances.len(), cap) {
        keep[i] = true;
    }
    instances
        .into_iter()
        .zip(keep)
        .filter_map(|(x, k)| k.then_some(x))
        .collect()
}

/// Writes a regression dataset. serde_json emits the shortest representation
/// that round-trips, so scores come back bit-identical.
pub fn write_regression_dataset(examples: &[RegressionExample], path: &Path) -> Result<usize> {
    for (i, ex) in examples.iter().enumerate() {
        ex.validate().map_err(|message| Error::Invalid {
            path: path.to_owned(),
            line: i + 1,
            message,
        })?;
    }
    write_jsonl(path, examples)
}

pub fn read_regression_dataset(path: &Path) -> Result<Vec<RegressionExample>> {
    Ok(read_jsonl(path, parse_regression_line)?
        .into_iter()
        .map(|(_, x)| x)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gen(task: &str, id: &str, gt: &str) -> TaskInstance {
        TaskInstance {
            task_id: task.into(),
            template_id: "t0".into(),
            instance_id: id.into(),
            kind: TaskKind::Generation,
            instruction: format!("instr {id}"),
            ground_truth: gt.into(),
            choices: None,
        }
    }

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_valid_generation_lines() {
        let lines: Vec<String> = (0..3)
            .map(|i| serde_json::to_string(&gen("t", &i.to_string(), "x")).unwrap())
            .collect();
        let f = write_tmp(&(lines.join("\n") + "\n"));
        assert_eq!(load_tasks(f.path()).unwrap().len(), 3);
    }

    #[test]
    fn empty_file_is_empty_corpus() {
        let f = write_tmp("");
        assert!(load_tasks(f.path()).unwrap().is_empty());
    }

    #[test]
    fn classification_without_choices_names_line() {
        let good = serde_json::to_string(&gen("t", "0", "x")).unwrap();
        let bad = r#"{"task_id":"t","template_id":"t0","instance_id":"1","kind":"classification","instruction":"i","ground_truth":"yes"}"#;
        let f = write_tmp(&format!("{good}\n{bad}\n"));
        match load_tasks(f.path()) {
            Err(Error::Invalid { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("no choices"), "{message}");
            }
            other => panic!("expected invalid record, got {other:?}"),
        }
    }

    #[test]
    fn ground_truth_outside_choices_rejected() {
        let bad = r#"{"task_id":"t","template_id":"t0","instance_id":"1","kind":"classification","instruction":"i","ground_truth":"maybe","choices":["yes","no"]}"#;
        assert!(parse_task_line(bad).unwrap_err().contains("not one of the choices"));
        let dup = r#"{"task_id":"t","template_id":"t0","instance_id":"1","kind":"classification","instruction":"i","ground_truth":"yes","choices":["yes","yes"]}"#;
        assert!(parse_task_line(dup).is_err());
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_tmp("{\"task_id\": \n");
        assert!(matches!(load_tasks(f.path()), Err(Error::Json { line: 1, .. })));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let line = serde_json::to_string(&gen("t", "0", "x")).unwrap();
        let f = write_tmp(&format!("{line}\n{line}\n"));
        assert!(matches!(load_tasks(f.path()), Err(Error::Invalid { line: 2, .. })));
    }

    #[test]
    fn cap_below_limit_is_identity() {
        let xs: Vec<u32> = (0..10).collect();
        assert_eq!(cap_dataset(xs.clone(), DEFAULT_TASK_CAP, 3), xs);
    }

    #[test]
    fn cap_to_half_million() {
        let xs: Vec<u32> = (0..600_000).collect();
        let a = cap_dataset(xs.clone(), DEFAULT_TASK_CAP, 11);
        assert_eq!(a.len(), 500_000);
        assert!(a.windows(2).all(|w| w[0] < w[1]), "order preserved, no duplicates");
        assert_eq!(a, cap_dataset(xs, DEFAULT_TASK_CAP, 11));
    }

    #[test]
    fn corpus_capping_is_per_task() {
        let mut xs: Vec<TaskInstance> = (0..10).map(|i| gen("a", &i.to_string(), "x")).collect();
        xs.extend((0..3).map(|i| gen("b", &i.to_string(), "y")));
        let c = Corpus::new(xs).unwrap().capped(4, 9);
        let tasks = c.tasks();
        assert_eq!(tasks["a"].len(), 4);
        assert_eq!(tasks["b"].len(), 3);
    }

    #[test]
    fn regression_score_out_of_range_rejected() {
        let line = r#"{"instruction":"i","response":"r","score":1.3,"provenance":"augmented","source_instance":{"task_id":"t","template_id":"t0","instance_id":"0"}}"#;
        let f = write_tmp(&format!("{line}\n"));
        assert!(matches!(read_regression_dataset(f.path()), Err(Error::Invalid { line: 1, .. })));
    }

    #[test]
    fn regression_empty_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert_eq!(write_regression_dataset(&[], f.path()).unwrap(), 0);
        assert_eq!(std::fs::read(f.path()).unwrap().len(), 0);
        assert!(read_regression_dataset(f.path()).unwrap().is_empty());
    }

    #[test]
    fn corpus_reserialization_is_stable() {
        // Field order and whitespace differ from the canonical form.
        let raw = r#"{"kind":"generation","ground_truth":"g","instruction":"i","instance_id":"0","template_id":"t0","task_id":"t"}"#;
        let src = write_tmp(&format!("{raw}\n"));
        let once = tempfile::NamedTempFile::new().unwrap();
        let twice = tempfile::NamedTempFile::new().unwrap();
        load_tasks(src.path()).unwrap().write(once.path()).unwrap();
        load_tasks(once.path()).unwrap().write(twice.path()).unwrap();
        assert_eq!(
            std::fs::read(once.path()).unwrap(),
            std::fs::read(twice.path()).unwrap()
        );
    }

    proptest::proptest! {
        #[test]
        fn regression_round_trip(scores in proptest::collection::vec(0.0f64..=1.0, 0..100)) {
            let xs: Vec<RegressionExample> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| RegressionExample {
                    instruction: format!("instr \"{i}\"\n"),
                    response: format!("resp ✓ {i}"),
                    score: s,
                    provenance: Provenance::Augmented,
                    source_instance: gen("t", &i.to_string(), "x").key(),
                })
                .collect();
            let f = tempfile::NamedTempFile::new().unwrap();
            write_regression_dataset(&xs, f.path()).unwrap();
            let back = read_regression_dataset(f.path()).unwrap();
            proptest::prop_assert_eq!(back.len(), xs.len());
            for (a, b) in back.iter().zip(&xs) {
                proptest::prop_assert_eq!(a.score.to_bits(), b.score.to_bits());
                proptest::prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn cap_never_duplicates(n in 1usize..200, cap in 1usize..50, seed: u64) {
            let xs: Vec<usize> = (0..n).collect();
            let out = cap_dataset(xs, cap, seed);
            proptest::prop_assert_eq!(out.len(), n.min(cap));
            proptest::prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
