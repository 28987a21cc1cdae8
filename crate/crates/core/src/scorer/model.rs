use super::features::{featurize, SparseFeatures, DEFAULT_FEATURE_DIM, FEATURIZER_VERSION};
use super::Score;
use crate::error::{Error, Result};

/// Sigmoid-bounded linear regressor over hashed features.
///
/// Parameters live in one flat `f32` vector: `feature_dim` weights followed by
/// the bias, which is also the layout the optimizer state mirrors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerModel {
    feature_dim: usize,
    params: Vec<f32>,
    pub featurizer_version: u32,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sparse gradient of the mean-squared loss; `weights` sorted by index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradient {
    pub weights: Vec<(u32, f64)>,
    pub bias: f64,
}

impl ScorerModel {
    /// All-zero model; predicts 0.5 everywhere.
    pub fn new(feature_dim: usize) -> Result<Self> {
        if !feature_dim.is_power_of_two() || feature_dim > 1 << 31 {
            return Err(Error::config(
                "feature_dim",
                format!("{feature_dim} is not a power of two in [1, 2^31]"),
            ));
        }
        Ok(ScorerModel {
            feature_dim,
            params: vec![0.0; feature_dim + 1],
            featurizer_version: FEATURIZER_VERSION,
        })
    }

    pub fn with_default_dim() -> Self {
        Self::new(DEFAULT_FEATURE_DIM).expect("default dim is valid")
    }

    pub(crate) fn from_params(feature_dim: usize, params: Vec<f32>, featurizer_version: u32) -> Self {
        debug_assert_eq!(params.len(), feature_dim + 1);
        ScorerModel {
            feature_dim,
            params,
            featurizer_version,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.params[..self.feature_dim]
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.params[..self.feature_dim]
    }

    pub fn bias(&self) -> f32 {
        self.params[self.feature_dim]
    }

    pub fn set_bias(&mut self, b: f32) {
        self.params[self.feature_dim] = b;
    }

    /// Weights then bias.
    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }

    pub fn featurize(&self, instruction: &str, response: &str) -> SparseFeatures {
        featurize(instruction, response, self.feature_dim)
    }

    pub fn logit(&self, f: &SparseFeatures) -> Result<f64> {
        if let Some(&bad) = f.indices.iter().find(|&&i| i as usize >= self.feature_dim) {
            return Err(Error::precondition(format!(
                "feature index {bad} out of range for dimension {}",
                self.feature_dim
            )));
        }
        Ok(f.iter().map(|(i, v)| self.params[i] as f64 * v).sum::<f64>() + self.bias() as f64)
    }

    pub fn predict(&self, f: &SparseFeatures) -> Result<Score> {
        Ok(Score::saturating(sigmoid(self.logit(f)?)))
    }

    /// Mean over the batch of `(predict - target)^2`, and its exact gradient.
    pub fn loss_and_grad(&self, batch: &[(SparseFeatures, f64)]) -> Result<(f64, Gradient)> {
        if batch.is_empty() {
            return Err(Error::precondition("loss of an empty batch"));
        }
        let mut raw = Vec::new();
        let mut bias = 0.0;
        let loss_sum = self.accumulate(batch, 1.0 / batch.len() as f64, |i, g| raw.push((i, g)), &mut bias)?;
        let merged = SparseFeatures::from_contributions(raw);
        Ok((
            loss_sum / batch.len() as f64,
            Gradient {
                weights: merged.indices.into_iter().zip(merged.values).collect(),
                bias,
            },
        ))
    }

    /// Adds `scale * d(sum of squared errors)` into `sink` and `bias_grad`
    /// and returns the summed squared error.
    pub(crate) fn accumulate(
        &self,
        batch: &[(SparseFeatures, f64)],
        scale: f64,
        mut sink: impl FnMut(u32, f64),
        bias_grad: &mut f64,
    ) -> Result<f64> {
        let mut loss = 0.0;
        for (f, target) in batch {
            if !(0.0..=1.0).contains(target) {
                return Err(Error::precondition(format!("target {target} outside [0, 1]")));
            }
            let p = sigmoid(self.logit(f)?);
            let err = p - target;
            loss += err * err;
            let dz = scale * 2.0 * err * p * (1.0 - p);
            for (i, v) in f.iter() {
                sink(i as u32, dz * v);
            }
            *bias_grad += dz;
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feats(pairs: &[(u32, f64)]) -> SparseFeatures {
        SparseFeatures::from_contributions(pairs.to_vec())
    }

    #[test]
    fn zero_model_is_one_half() {
        let m = ScorerModel::new(1 << 10).unwrap();
        let f = m.featurize("anything", "at all");
        assert_eq!(m.predict(&f).unwrap().value(), 0.5);
    }

    #[test]
    fn large_bias_saturates_high() {
        let mut m = ScorerModel::new(16).unwrap();
        m.set_bias(10.0);
        assert!(m.predict(&SparseFeatures::default()).unwrap().value() > 0.9999);
    }

    #[test]
    fn monotone_in_present_weight() {
        let mut m = ScorerModel::new(16).unwrap();
        let f = feats(&[(3, 0.7)]);
        let before = m.predict(&f).unwrap().value();
        m.weights_mut()[3] = 0.5;
        assert!(m.predict(&f).unwrap().value() > before);
    }

    #[test]
    fn out_of_range_index() {
        let m = ScorerModel::new(16).unwrap();
        assert!(m.predict(&feats(&[(16, 1.0)])).is_err());
        assert!(ScorerModel::new(12).is_err());
    }

    #[test]
    fn loss_minimum() {
        let m = ScorerModel::new(16).unwrap();
        let (loss, g) = m.loss_and_grad(&[(feats(&[(1, 1.0)]), 0.5)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.weights.iter().all(|(_, x)| *x == 0.0));
        assert_eq!(g.bias, 0.0);
        assert!(m.loss_and_grad(&[]).is_err());
        assert!(m.loss_and_grad(&[(feats(&[]), 1.5)]).is_err());
    }
}
