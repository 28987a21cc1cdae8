//! AdamW with decoupled weight decay and linear warmup.
//!
//! ```text
//! m = b1*m + (1-b1)*g
//! v = b2*v + (1-b2)*g^2
//! theta -= lr_t * ( (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps) + wd*theta )
//! ```
//!
//! `lr_t` ramps linearly from 0 to the configured rate over the first
//! `ceil(warmup_rate * total_steps)` updates, then stays constant.

use rayon::prelude::*;
use serde::de::IntoDeserializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_rate: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Examples per gradient-accumulation chunk.
    pub micro_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::pretraining()
    }
}

impl TrainConfig {
    /// Pretraining recipe sized for the hashed linear scorer.
    pub fn pretraining() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            warmup_rate: 0.1,
            batch_size: 64,
            total_steps: 2000,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            micro_batch_size: 256,
            seed: 0,
        }
    }

    /// Downstream finetuning: 400 steps, lr 2e-5, batch 256.
    pub fn adaptation() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            batch_size: 256,
            total_steps: 400,
            ..Self::pretraining()
        }
    }

    /// Reads a JSON object of overrides on top of `base`. Unknown fields are
    /// rejected with their path.
    pub fn load_over(path: &std::path::Path, base: &TrainConfig) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let overrides: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let serde_json::Value::Object(obj) = overrides else {
            return Err(Error::config("<root>", "train config must be a JSON object"));
        };
        let mut merged = serde_json::to_value(base).expect("train configs serialize");
        for (k, v) in obj {
            merged[k] = v;
        }
        let de = merged.into_deserializer();
        let cfg: TrainConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(e.path().to_string(), e.inner().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn warmup_steps(&self) -> u64 {
        (self.warmup_rate * self.total_steps as f64).ceil() as u64
    }

    /// Learning rate applied on update number `step` (1-based; 0 means
    /// "before any update").
    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = self.warmup_steps();
        if warm == 0 || step >= warm {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / warm as f64
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("train.{field}"), msg))
            }
        };
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", "must be positive")?;
        check((0.0..=1.0).contains(&self.warmup_rate), "warmup_rate", "must lie in [0, 1]")?;
        check(self.batch_size >= 1, "batch_size", "must be positive")?;
        check(self.micro_batch_size >= 1, "micro_batch_size", "must be positive")?;
        check(self.weight_decay >= 0.0, "weight_decay", "must be non-negative")?;
        check(self.adam_beta1 > 0.0 && self.adam_beta1 < 1.0, "adam_beta1", "must lie in (0, 1)")?;
        check(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0, "adam_beta2", "must lie in (0, 1)")?;
        check(self.adam_eps > 0.0, "adam_eps", "must be positive")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        OptimizerState {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

const CHUNK: usize = 1 << 14;

/// One AdamW update of `params` in place. Rejects non-finite gradients before
/// touching any state.
pub fn adamw_step(params: &mut [f32], state: &mut OptimizerState, grad: &[f64], config: &TrainConfig) -> Result<()> {
    if params.len() != grad.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::precondition(format!(
            "shape mismatch: params {}, grad {}, m {}, v {}",
            params.len(),
            grad.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i} is {}", grad[i])));
    }
    let t = state.step + 1;
    let lr = config.lr_at(t);
    let (b1, b2, eps, wd) = (config.adam_beta1, config.adam_beta2, config.adam_eps, config.weight_decay);
    let bc1 = 1.0 - b1.powf(t as f64);
    let bc2 = 1.0 - b2.powf(t as f64);

    params
        .par_chunks_mut(CHUNK)
        .zip(state.m.par_chunks_mut(CHUNK))
        .zip(state.v.par_chunks_mut(CHUNK))
        .zip(grad.par_chunks(CHUNK))
        .for_each(|(((p, m), v), g)| {
            for i in 0..p.len() {
                let gi = g[i];
                let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
                let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta = p[i] as f64;
                p[i] = (theta - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta)) as f32;
                m[i] = mi as f32;
                v[i] = vi as f32;
            }
        });
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            warmup_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::pretraining()
        }
    }

    #[test]
    fn zero_grad_no_decay_is_fixed_point() {
        let mut p = vec![0.5f32, -1.25, 3.0];
        let orig = p.clone();
        let mut s = OptimizerState::new(3);
        adamw_step(&mut p, &mut s, &[0.0; 3], &cfg()).unwrap();
        assert_eq!(p, orig);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_grad_decay_shrinks() {
        let c = TrainConfig { weight_decay: 0.1, ..cfg() };
        let mut p = vec![2.0f32];
        let mut s = OptimizerState::new(1);
        adamw_step(&mut p, &mut s, &[0.0], &c).unwrap();
        let expected = (2.0f64 * (1.0 - c.lr_at(1) * 0.1)) as f32;
        assert_eq!(p[0], expected);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // Bias-corrected moments at t = 1 are g and g^2, so the step is
        // lr * |g| / (|g| + eps).
        for g in [3.0, -0.02, 1e-4] {
            let c = cfg();
            let mut p = vec![0.0f32];
            let mut s = OptimizerState::new(1);
            adamw_step(&mut p, &mut s, &[g], &c).unwrap();
            let expected = c.learning_rate * g.abs() / (g.abs() + c.adam_eps);
            assert!(((p[0] as f64).abs() - expected).abs() < 1e-9, "g={g}: {} vs {expected}", p[0]);
            assert_eq!(p[0].signum() as f64, -g.signum());
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = vec![1.0f32, 1.0];
        let mut s = OptimizerState::new(2);
        assert!(matches!(
            adamw_step(&mut p, &mut s, &[0.1, f64::NAN], &cfg()),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(s.step, 0);
        assert_eq!(p, [1.0, 1.0]);
        assert!(adamw_step(&mut p, &mut s, &[0.1], &cfg()).is_err());
    }

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig { total_steps: 95, ..TrainConfig::pretraining() };
        assert_eq!(c.warmup_steps(), 10);
        assert_eq!(c.lr_at(0), 0.0);
        assert_eq!(c.lr_at(1), c.learning_rate / 10.0);
        assert_eq!(c.lr_at(10), c.learning_rate);
        assert_eq!(c.lr_at(95), c.learning_rate);
        for s in 0..20 {
            assert!(c.lr_at(s + 1) >= c.lr_at(s));
        }
    }

    #[test]
    fn second_moment_stays_non_negative() {
        let mut p = vec![0.0f32; 4];
        let mut s = OptimizerState::new(4);
        for k in 0..10 {
            let g: Vec<f64> = (0..4).map(|i| ((i + k) as f64 - 3.0) * 0.3).collect();
            adamw_step(&mut p, &mut s, &g, &cfg()).unwrap();
        }
        assert!(s.v.iter().all(|v| *v >= 0.0));
        assert_eq!(s.step, 10);
    }

    #[test]
    fn adaptation_defaults() {
        let c = TrainConfig::adaptation();
        assert_eq!((c.total_steps, c.learning_rate, c.batch_size), (400, 2e-5, 256));
        assert_eq!(c.warmup_rate, 0.1);
    }
}
