use rand::seq::SliceRandom;
use rayon::prelude::*;

use std::path::Path;

use super::checkpoint::{load_checkpoint, save_checkpoint, write_sidecar, Sidecar, FORMAT_VERSION};
use super::features::SparseFeatures;
use super::model::ScorerModel;
use super::optim::{adamw_step, OptimizerState, TrainConfig};
use crate::corpus::{read_regression_dataset, RegressionExample};
use crate::error::{Error, Result};
use crate::hashing::derived_rng;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ScorerModel,
    pub state: OptimizerState,
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
}

/// Cycles through a dataset in seeded random order, reshuffling per epoch.
struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
}

impl BatchCursor {
    fn new(n: usize, seed: u64) -> Self {
        let mut c = BatchCursor {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            seed,
        };
        c.shuffle();
        c
    }

    fn shuffle(&mut self) {
        let mut rng = derived_rng(self.seed, &["epoch", &self.epoch.to_string()]);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.pos = 0;
                self.shuffle();
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Featurizes the dataset for `model`'s dimension. Order-preserving.
pub fn featurize_dataset(model: &ScorerModel, dataset: &[RegressionExample]) -> Vec<(SparseFeatures, f64)> {
    dataset
        .par_iter()
        .map(|ex| (model.featurize(&ex.instruction, &ex.response), ex.score))
        .collect()
}

/// Runs `config.total_steps` AdamW updates with a fresh optimizer state.
pub fn train(model: ScorerModel, dataset: &[RegressionExample], config: &TrainConfig) -> Result<TrainOutcome> {
    let feats = featurize_dataset(&model, dataset);
    train_featurized(model, &feats, config)
}

pub fn train_featurized(
    mut model: ScorerModel,
    data: &[(SparseFeatures, f64)],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut state = OptimizerState::new(model.params().len());
    if config.total_steps == 0 {
        return Ok(TrainOutcome {
            model,
            state,
            losses: Vec::new(),
        });
    }
    if data.is_empty() {
        return Err(Error::precondition("cannot train on an empty dataset"));
    }

    let dim = model.feature_dim();
    let mut grad = vec![0.0f64; dim + 1];
    let mut touched: Vec<u32> = Vec::new();
    let mut cursor = BatchCursor::new(data.len(), config.seed);
    let mut losses = Vec::with_capacity(config.total_steps as usize);
    let mut batch: Vec<(SparseFeatures, f64)> = Vec::with_capacity(config.batch_size);

    for _ in 0..config.total_steps {
        let idx = cursor.next_batch(config.batch_size);
        let scale = 1.0 / idx.len() as f64;
        let mut loss = 0.0;
        let mut bias_grad = 0.0;
        // Accumulate micro-batches in a fixed order so results don't depend
        // on the chunking.
        for chunk in idx.chunks(config.micro_batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| data[i].clone()));
            loss += model.accumulate(
                &batch,
                scale,
                |i, g| {
                    grad[i as usize] += g;
                    touched.push(i);
                },
                &mut bias_grad,
            )?;
        }
        grad[dim] = bias_grad;
        losses.push(loss * scale);
        adamw_step(model.params_mut(), &mut state, &grad, config)?;
        for i in touched.drain(..) {
            grad[i as usize] = 0.0;
        }
        grad[dim] = 0.0;
    }

    if !model.is_finite() {
        return Err(Error::NonFinite("model parameters after training".into()));
    }
    Ok(TrainOutcome { model, state, losses })
}

/// Trains from a regression dataset file and writes the checkpoint with its
/// sidecar. Starts from `init` when given, otherwise from zeros.
pub fn train_to_checkpoint(
    dataset_path: &Path,
    config: &TrainConfig,
    init: Option<&Path>,
    feature_dim: usize,
    out: &Path,
) -> Result<(TrainOutcome, Sidecar)> {
    let dataset = read_regression_dataset(dataset_path)?;
    let (model, init_label) = match init {
        Some(p) => (load_checkpoint(p)?.model, format!("checkpoint:{}", p.display())),
        None => (ScorerModel::new(feature_dim)?, "fresh".to_owned()),
    };
    let outcome = train(model, &dataset, config)?;
    save_checkpoint(&outcome.model, Some(&outcome.state), out)?;
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        featurizer_version: outcome.model.featurizer_version,
        feature_dim: outcome.model.feature_dim(),
        train_config: Some(config.clone()),
        dataset: Some(dataset_path.display().to_string()),
        dataset_size: Some(dataset.len()),
        init: init_label,
        final_loss: outcome.losses.last().copied(),
    };
    write_sidecar(out, &sidecar)?;
    Ok((outcome, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{InstanceKey, Provenance};

    fn ex(instruction: &str, response: &str, score: f64) -> RegressionExample {
        RegressionExample {
            instruction: instruction.into(),
            response: response.into(),
            score,
            provenance: Provenance::Augmented,
            source_instance: InstanceKey {
                task_id: "t".into(),
                template_id: "t0".into(),
                instance_id: "0".into(),
            },
        }
    }

    #[test]
    fn zero_steps_is_noop() {
        let m = ScorerModel::new(1 << 8).unwrap();
        let cfg = TrainConfig { total_steps: 0, ..TrainConfig::pretraining() };
        let out = train(m.clone(), &[], &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.losses.is_empty());
    }

    #[test]
    fn empty_dataset_rejected() {
        let m = ScorerModel::new(1 << 8).unwrap();
        assert!(train(m, &[], &TrainConfig::pretraining()).is_err());
    }

    #[test]
    fn micro_batching_does_not_change_the_result_shape() {
        let data = vec![ex("a", "good", 1.0), ex("b", "bad", 0.0), ex("c", "good", 1.0)];
        let base = TrainConfig { total_steps: 20, batch_size: 3, ..TrainConfig::pretraining() };
        let m = ScorerModel::new(1 << 8).unwrap();
        let one = train(m.clone(), &data, &base).unwrap();
        let chunked = train(m, &data, &TrainConfig { micro_batch_size: 1, ..base }).unwrap();
        assert_eq!(one.state.step, 20);
        for (a, b) in one.model.params().iter().zip(chunked.model.params()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cursor_visits_every_example_per_epoch() {
        let mut c = BatchCursor::new(7, 3);
        let mut first: Vec<usize> = c.next_batch(7);
        first.sort();
        assert_eq!(first, (0..7).collect::<Vec<_>>());
        assert_eq!(c.next_batch(10).len(), 10);
    }
}
