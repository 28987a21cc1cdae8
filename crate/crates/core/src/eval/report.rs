use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::construct::DatasetStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    /// Fraction in [0, 1].
    Accuracy,
    /// Rouge-L F1 on a 0-100 scale.
    RougeL,
}

impl MetricName {
    pub fn range(self) -> (f64, f64) {
        match self {
            MetricName::Accuracy => (0.0, 1.0),
            MetricName::RougeL => (0.0, 100.0),
        }
    }

    /// Table cells show both metrics on a 0-100 scale.
    pub fn display_value(self, v: f64) -> f64 {
        match self {
            MetricName::Accuracy => v * 100.0,
            MetricName::RougeL => v,
        }
    }
}

/// One system on one (task, template) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResult {
    pub system: String,
    pub backbone: String,
    pub task_id: String,
    pub template_id: String,
    pub metric: MetricName,
    pub value: f64,
    pub n_instances: usize,
}

/// A task's score for one system: the mean over its templates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMean {
    pub system: String,
    pub backbone: String,
    pub task_id: String,
    pub metric: MetricName,
    pub value: f64,
    pub n_templates: usize,
}

/// Equal-weight mean over a system's tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub system: String,
    pub backbone: String,
    pub metric: MetricName,
    pub value: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ablations {
    /// Downstream data built without generator augmentation.
    pub no_augmentation: bool,
    /// Finetuning starts from a freshly initialized scorer.
    pub no_pretrained_base: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub seed: u64,
    pub featurizer_version: u32,
    pub stub_recipe_version: u32,
    pub feature_dim: usize,
    pub generator: String,
    pub construction: Option<String>,
    pub finetune: Option<String>,
    /// `pretrained`, `checkpoint` or `fresh`.
    pub base_init: String,
    pub base_params: Option<String>,
    pub finetuned_params: Option<String>,
    pub config: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_task: Vec<TaskResult>,
    pub task_means: Vec<TaskMean>,
    pub macro_averages: Vec<MacroRow>,
    pub fingerprint: Fingerprint,
    pub ablations: Ablations,
    pub pretraining_data: Option<DatasetStats>,
    pub downstream_data: Option<DatasetStats>,
    pub finetune_final_loss: Option<f64>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Two-level averaging: templates within a task, then tasks with equal
/// weight, separately for each (system, backbone). Groups keep their order of
/// first appearance; within a group the fold runs over results sorted by
/// (task_id, template_id).
pub fn aggregate(results: &[TaskResult]) -> Result<(Vec<TaskMean>, Vec<MacroRow>)> {
    if results.is_empty() {
        return Err(Error::precondition("nothing to aggregate"));
    }
    let mut groups: Vec<(&str, &str)> = Vec::new();
    for r in results {
        let g = (r.system.as_str(), r.backbone.as_str());
        if !groups.contains(&g) {
            groups.push(g);
        }
        let (lo, hi) = r.metric.range();
        if !(lo..=hi).contains(&r.value) {
            return Err(Error::precondition(format!(
                "{} on {}/{}: value {} outside metric range",
                r.system, r.task_id, r.template_id, r.value
            )));
        }
    }
    let mut task_means = Vec::new();
    let mut macros = Vec::new();
    for (system, backbone) in groups {
        let mut rows: Vec<&TaskResult> = results
            .iter()
            .filter(|r| r.system == system && r.backbone == backbone)
            .collect();
        rows.sort_by(|a, b| (&a.task_id, &a.template_id).cmp(&(&b.task_id, &b.template_id)));
        let metric = rows[0].metric;
        if rows.iter().any(|r| r.metric != metric) {
            return Err(Error::precondition(format!("system {system} mixes metrics")));
        }
        let mut by_task: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            by_task.entry(&r.task_id).or_default().push(r.value);
        }
        let group_means: Vec<TaskMean> = by_task
            .into_iter()
            .map(|(task, vals)| TaskMean {
                system: system.to_owned(),
                backbone: backbone.to_owned(),
                task_id: task.to_owned(),
                metric,
                n_templates: vals.len(),
                value: mean(vals),
            })
            .collect();
        macros.push(MacroRow {
            system: system.to_owned(),
            backbone: backbone.to_owned(),
            metric,
            value: mean(group_means.iter().map(|t| t.value)),
            n_tasks: group_means.len(),
        });
        task_means.extend(group_means);
    }
    Ok((task_means, macros))
}

fn first_seen<'a>(xs: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for x in xs {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn cell(metric: MetricName, v: f64) -> String {
    format!("{:.2}", metric.display_value(v))
}

fn render_grid(out: &mut String, rows: &[Vec<String>]) {
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        }
    }
}

impl EvalReport {
    pub fn from_results(per_task: Vec<TaskResult>) -> Result<Self> {
        let (task_means, macro_averages) = aggregate(&per_task)?;
        Ok(EvalReport {
            per_task,
            task_means,
            macro_averages,
            ..Default::default()
        })
    }

    pub fn to_json(&self, pretty: bool) -> String {
        let s = if pretty {
            serde_json::to_string_pretty(self)
        } else {
            serde_json::to_string(self)
        };
        s.expect("reports serialize")
    }

    /// Aligned text tables. The first has one row per system and one column
    /// per backbone holding macro averages; then one table per backbone with a
    /// column per task. Cells are 0-100 scaled and rounded to two decimals.
    pub fn render_table(&self) -> String {
        let systems = first_seen(self.macro_averages.iter().map(|m| m.system.as_str()));
        let backbones = first_seen(self.macro_averages.iter().map(|m| m.backbone.as_str()));
        let mut out = String::new();

        let mut rows = vec![std::iter::once("system".to_owned())
            .chain(backbones.iter().map(|b| b.to_string()))
            .collect::<Vec<_>>()];
        for s in &systems {
            let mut row = vec![s.to_string()];
            for b in &backbones {
                row.push(
                    self.macro_averages
                        .iter()
                        .find(|m| m.system == *s && m.backbone == *b)
                        .map(|m| cell(m.metric, m.value))
                        .unwrap_or_else(|| "-".to_owned()),
                );
            }
            rows.push(row);
        }
        render_grid(&mut out, &rows);

        for b in &backbones {
            let mut tasks: Vec<&str> = self
                .task_means
                .iter()
                .filter(|t| t.backbone == *b)
                .map(|t| t.task_id.as_str())
                .collect();
            tasks.sort();
            tasks.dedup();
            let _ = writeln!(out, "\n[{b}]");
            let mut header = vec!["system".to_owned()];
            header.extend(tasks.iter().map(|t| t.to_string()));
            header.push("macro".to_owned());
            let mut rows = vec![header];
            for m in self.macro_averages.iter().filter(|m| m.backbone == *b) {
                let mut row = vec![m.system.clone()];
                for t in &tasks {
                    row.push(
                        self.task_means
                            .iter()
                            .find(|x| x.system == m.system && x.backbone == *b && x.task_id == *t)
                            .map(|x| cell(x.metric, x.value))
                            .unwrap_or_else(|| "-".to_owned()),
                    );
                }
                row.push(cell(m.metric, m.value));
                rows.push(row);
            }
            render_grid(&mut out, &rows);
        }
        out
    }
}
