//! Deterministic mini-batch training of a [`KssModel`].

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::lateral::FeatureMap;
use crate::metrics::{map_score, ScoreMatrix};
use crate::model::{loss_and_gradients, model_forward, KssModel};
use crate::optim::{Adam, AdamConfig};
use crate::synthetic::Dataset;
use crate::{Error, Matrix, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { optimizer: AdamConfig::default(), batch_size: 80, epochs: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's batches.
    pub loss: f64,
    /// mAP of the model after the epoch, on the training set, without dropout.
    pub map: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: KssModel,
    pub history: Vec<EpochRecord>,
}

/// Logits for every input, evaluated in chunks of `batch`.
pub fn predict(model: &KssModel, inputs: &[FeatureMap], e0: &Matrix, batch: usize) -> Result<Matrix> {
    let n = model.n_labels();
    let mut out = Matrix::zeros(inputs.len(), n);
    for (k, chunk) in inputs.chunks(batch.max(1)).enumerate() {
        let logits = model_forward(model, chunk, e0)?;
        for r in 0..chunk.len() {
            out.row_mut(k * batch.max(1) + r).copy_from_slice(logits.row(r));
        }
    }
    Ok(out)
}

/// mAP of `model` on `data`.
pub fn evaluate_map(model: &KssModel, data: &Dataset, e0: &Matrix) -> Result<f64> {
    let scores = predict(model, &data.inputs, e0, 64)?;
    Ok(map_score(&ScoreMatrix::new(scores, data.targets())?)?.map)
}

pub fn train_toy(model: &KssModel, data: &Dataset, e0: &Matrix, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_callback(model, data, e0, cfg, |_, _| {})
}

/// As [`train_toy`], invoking `on_epoch` after every epoch.
pub fn train_with_callback(
    model: &KssModel,
    data: &Dataset,
    e0: &Matrix,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&KssModel, &EpochRecord),
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter { name: "batch_size", value: 0.0, range: ">= 1" });
    }
    let mut model = model.clone();
    let mut adam = Adam::new(cfg.optimizer, model.param_specs())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let targets = data.targets();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<FeatureMap> = idx.iter().map(|&i| data.inputs[i].clone()).collect();
            let batch_targets = Matrix::from_fn(idx.len(), targets.cols(), |r, c| targets[(idx[r], c)]);
            let (loss, grads) = loss_and_gradients(&model, &inputs, &batch_targets, e0, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            adam.step(model.params_mut(), &grads)?;
            total += loss;
            batches += 1;
        }
        let record = EpochRecord { epoch, loss: total / batches as f64, map: evaluate_map(&model, data, e0)? };
        on_epoch(&model, &record);
        history.push(record);
    }
    Ok(TrainOutcome { model, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::graph::AdjacencyMatrix;
    use crate::model::ModelConfig;
    use crate::synthetic::{generate, SyntheticConfig};

    fn setup() -> (KssModel, Dataset, Matrix) {
        let data = generate(&SyntheticConfig { samples: 24, ..SyntheticConfig::default() }).unwrap();
        let cfg = ModelConfig { stage_channels: vec![4, 4, 6, 8], embedding_dim: 6, ..ModelConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = KssModel::new(&cfg, AdjacencyMatrix::identity(8), &mut rng).unwrap();
        let e0 = Matrix::from_fn(8, 6, |i, j| ((i * 7 + j) as f64).sin());
        (model, data, e0)
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let (model, data, e0) = setup();
        let out = train_toy(&model, &data, &e0, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(out.model, model);
        assert!(out.history.is_empty());
    }

    #[test]
    fn same_seed_same_parameters() {
        let (model, data, e0) = setup();
        let cfg = TrainConfig { epochs: 2, batch_size: 8, ..TrainConfig::default() };
        let a = train_toy(&model, &data, &e0, &cfg).unwrap();
        let b = train_toy(&model, &data, &e0, &cfg).unwrap();
        assert_eq!(a.model.flatten(), b.model.flatten());
        assert_eq!(a.history, b.history);
        assert_ne!(a.model.flatten(), model.flatten());
    }

    #[test]
    fn divergence_is_reported() {
        let (mut model, data, e0) = setup();
        model.stages[0].bias[0] = f64::INFINITY;
        let err = train_toy(&model, &data, &e0, &TrainConfig { epochs: 1, ..TrainConfig::default() });
        assert!(matches!(err, Err(Error::Diverged { epoch: 0, batch: 0, .. })));
    }

    #[test]
    fn empty_dataset_rejected() {
        let (model, mut data, e0) = setup();
        data.inputs.clear();
        assert_eq!(train_toy(&model, &data, &e0, &TrainConfig::default()).unwrap_err(), Error::EmptyDataset);
    }
}
