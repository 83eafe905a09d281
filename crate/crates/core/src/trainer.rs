//! Local client update: mini-batch SGD with a per-round decaying step size.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub local_epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            local_epochs: 1,
            batch_size: 64,
            base_lr: 1e-3,
            lr_decay: 0.99,
            shuffle_seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs < 1 {
            return Err(Error::config("federation.local_epochs", "must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::config("trainer.batch_size", "must be >= 1"));
        }
        if !self.base_lr.is_finite() || self.base_lr <= 0.0 {
            return Err(Error::config("trainer.base_lr", "must be > 0"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::config("trainer.lr_decay", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// `base_lr * lr_decay^round`, constant within the round.
pub fn lr_schedule(round: usize, cfg: &TrainerConfig) -> f64 {
    cfg.base_lr * cfg.lr_decay.powi(i32::try_from(round).unwrap_or(i32::MAX))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub params: ParamVector,
    /// Mean loss of `params` on the client's full local data.
    pub loss: f64,
    pub steps: usize,
}

/// Run `local_epochs` epochs of mini-batch SGD from `global` on `data`.
///
/// Epochs reshuffle from one stream addressed by `(shuffle_seed, client,
/// round)`, so results do not depend on the order in which clients are
/// trained. The final batch of an
/// epoch may be smaller than `batch_size`.
pub fn client_update(
    spec: &ModelSpec,
    global: &ParamVector,
    data: &Dataset,
    client: usize,
    round: usize,
    cfg: &TrainerConfig,
) -> Result<ClientUpdate> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let lr = lr_schedule(round, cfg);
    let mut rng = seed::derive_rng(
        cfg.shuffle_seed,
        &[seed::purpose::SHUFFLE, client as u64, round as u64],
    );
    let batch_size = cfg.batch_size.max(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = global.clone().into_inner();
    let mut steps = 0;
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(batch_size) {
            let current = ParamVector::new(std::mem::take(&mut params))
                .map_err(|_| Error::Divergence { round, client })?;
            let grad = spec
                .batch_gradient(&current, data, batch)
                .map_err(|e| match e {
                    Error::NonFiniteParam { .. } => Error::Divergence { round, client },
                    other => other,
                })?;
            params = current.into_inner();
            for (p, g) in params.iter_mut().zip(grad.as_slice()) {
                *p -= lr * g;
            }
            steps += 1;
        }
    }
    let params = ParamVector::new(params).map_err(|_| Error::Divergence { round, client })?;
    let loss = spec.loss(&params, data)?;
    if !loss.is_finite() {
        return Err(Error::Divergence { round, client });
    }
    Ok(ClientUpdate { params, loss, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_blobs;

    #[test]
    fn schedule_values() {
        let cfg = TrainerConfig::default();
        assert_eq!(lr_schedule(0, &cfg), 1e-3);
        assert!((lr_schedule(1, &cfg) - 9.9e-4).abs() < 1e-18);
        let direct = 1e-3 * 0.99f64.powf(100.0);
        assert!((lr_schedule(100, &cfg) - direct).abs() <= 1e-12 * direct);
        assert!((lr_schedule(100, &cfg) - 3.660e-4).abs() < 1e-7);
    }

    #[test]
    fn step_count_is_epochs_times_batches() {
        let data = generate_blobs(2, 50, 2, 3.0, 1).unwrap();
        let spec = ModelSpec::logistic(2, 2, 0);
        let init = spec.init_params();
        for (epochs, batch) in [(1, 64), (3, 64), (2, 7), (1, 100), (2, 1)] {
            let cfg = TrainerConfig {
                local_epochs: epochs,
                batch_size: batch,
                ..Default::default()
            };
            let out = client_update(&spec, &init, &data, 0, 0, &cfg).unwrap();
            assert_eq!(out.steps, epochs * data.len().div_ceil(batch));
        }
    }

    #[test]
    fn zero_learning_rate_is_a_null_update() {
        let data = generate_blobs(3, 20, 2, 3.0, 2).unwrap();
        let spec = ModelSpec::logistic(2, 3, 5);
        let init = spec.init_params();
        let cfg = TrainerConfig {
            base_lr: 0.0,
            local_epochs: 2,
            ..Default::default()
        };
        let out = client_update(&spec, &init, &data, 0, 3, &cfg).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.loss, spec.loss(&init, &data).unwrap());
    }

    #[test]
    fn single_example_loss_decreases_monotonically() {
        let data = Dataset::new(vec![0.5, -1.0, 2.0], vec![2], 3, 3).unwrap();
        let spec = ModelSpec::logistic(3, 3, 8);
        let cfg = TrainerConfig {
            base_lr: 0.5,
            lr_decay: 1.0,
            ..Default::default()
        };
        let mut params = spec.init_params();
        let mut last = spec.loss(&params, &data).unwrap();
        for round in 0..100 {
            let out = client_update(&spec, &params, &data, 0, round, &cfg).unwrap();
            assert!(out.loss < last, "round {round}: {} !< {last}", out.loss);
            last = out.loss;
            params = out.params;
        }
        assert!(last < 1e-2);
    }

    #[test]
    fn deterministic_and_client_addressed() {
        let data = generate_blobs(3, 40, 2, 2.0, 3).unwrap();
        let spec = ModelSpec::mlp(2, vec![4], 3, 1);
        let init = spec.init_params();
        let cfg = TrainerConfig {
            batch_size: 16,
            base_lr: 0.1,
            ..Default::default()
        };
        let a = client_update(&spec, &init, &data, 4, 2, &cfg).unwrap();
        let b = client_update(&spec, &init, &data, 4, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let c = client_update(&spec, &init, &data, 5, 2, &cfg).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn small_steps_do_not_increase_convex_loss() {
        let data = generate_blobs(3, 60, 2, 4.0, 6).unwrap();
        let spec = ModelSpec::logistic(2, 3, 2);
        let init = spec.init_params();
        let before = spec.loss(&init, &data).unwrap();
        let out = client_update(&spec, &init, &data, 0, 0, &TrainerConfig::default()).unwrap();
        assert!(out.loss <= before);
    }

    #[test]
    fn divergence_is_reported() {
        let data = Dataset::new(vec![1e200, -1e200], vec![0, 1], 1, 2).unwrap();
        let spec = ModelSpec::logistic(1, 2, 0);
        let cfg = TrainerConfig {
            base_lr: 1e200,
            batch_size: 1,
            local_epochs: 3,
            ..Default::default()
        };
        let err = client_update(&spec, &spec.init_params(), &data, 7, 4, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { round: 4, client: 7 }));
    }

    #[test]
    fn empty_data_is_rejected() {
        let spec = ModelSpec::logistic(2, 2, 0);
        let empty = Dataset::new(vec![], vec![], 2, 2).unwrap();
        let err = client_update(&spec, &spec.init_params(), &empty, 0, 0, &TrainerConfig::default());
        assert!(matches!(err, Err(Error::EmptyData)));
    }
}
