//! Losses, the minibatch training loop, and evaluation.

use crate::adam::{adam_step, AdamState};
use crate::dataset::{IndicatorTable, SplitPlan};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::model::{Ablation, ModelConfig, TargetTransform, TljdModel};
use crate::params::ParamStore;
use crate::tape::forward_backward;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub target_transform: TargetTransform,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!(
                "loss weight lambda {} outside [0,1]",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be ≥ 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d: self.d,
            layers: self.layers,
            heads: self.heads,
            ablation: self.ablation,
            target_transform: self.target_transform,
        }
    }
}

/// Mean squared error over a batch.
pub fn loss_reg(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if y_hat.len() != y.len() {
        return Err(Error::Shape {
            op: "loss_reg",
            lhs: vec![y_hat.len()],
            rhs: vec![y.len()],
        });
    }
    let n = y_hat.len() as f64;
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Expert responsibility loss −(1/N) Σᵢ log Σₜ aᵢᵗ·exp(−(yᵢ−ŷᵢᵗ)²/2),
/// computed in max-shifted log-sum-exp form. Gate rows must sum to 1
/// within 1e-6; zero-weight experts contribute nothing.
pub fn loss_er(expert_preds: &[[f64; 4]], gates: &[[f64; 4]], y: &[f64]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if expert_preds.len() != y.len() || gates.len() != y.len() {
        return Err(Error::Shape {
            op: "loss_er",
            lhs: vec![expert_preds.len(), gates.len()],
            rhs: vec![y.len()],
        });
    }
    let mut total = 0.0;
    for i in 0..y.len() {
        let gate_sum: f64 = gates[i].iter().sum();
        if (gate_sum - 1.0).abs() > 1e-6 {
            return Err(Error::GateContract(gate_sum));
        }
        // log Σ aₜ·exp(−dₜ) = m + log Σ aₜ·exp(−dₜ−m), m = max(−dₜ).
        let neg_d: Vec<(f64, f64)> = (0..4)
            .filter(|&t| gates[i][t] > 0.0)
            .map(|t| {
                let diff = y[i] - expert_preds[i][t];
                (gates[i][t], -diff * diff / 2.0)
            })
            .collect();
        let m = neg_d
            .iter()
            .map(|&(_, nd)| nd)
            .fold(f64::NEG_INFINITY, f64::max);
        let inner: f64 = neg_d.iter().map(|&(a, nd)| a * (nd - m).exp()).sum();
        total += m + inner.ln();
    }
    Ok(-total / y.len() as f64)
}

/// Joint objective (1−λ)·L_reg + λ·L_er.
pub fn loss_joint(l_reg: f64, l_er: f64, lambda: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0,1]")));
    }
    Ok((1.0 - lambda) * l_reg + lambda * l_er)
}

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val: MetricsReport,
}

/// Result of a training run: the model, the best-validation parameter
/// snapshot, and the per-epoch log.
pub struct TrainOutcome {
    pub model: TljdModel,
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Render the training log, one tab-separated line per epoch.
pub fn format_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\ttrain_loss\tval_r2\tval_rmse\tval_mae\n");
    for entry in log {
        let r2 = match entry.val.r2 {
            Some(v) => format!("{v}"),
            None => "NA".into(),
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            entry.epoch, entry.train_loss, r2, entry.val.rmse, entry.val.mae
        );
    }
    out
}

/// Train on the plan's training rows, selecting the epoch with the lowest
/// validation MAE (ties keep the earlier epoch).
pub fn train(table: &IndicatorTable, split: &SplitPlan, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let model = TljdModel::from_table(config.model_config(), table, &split.train)?;
    let mut params = model.init_params(config.seed)?;
    let mut adam = AdamState::new(&params, config.learning_rate);

    // Scale and transform the training data once; the scaler is frozen.
    let xs: Vec<Vec<f64>> = model.scaler.scale_rows(table, &split.train);
    let ys: Vec<f64> = split
        .train
        .iter()
        .map(|&i| config.target_transform.apply(table.rows()[i].fdi))
        .collect::<Result<_>>()?;
    let n_train = xs.len();

    // Separate stream from parameter initialization.
    let mut shuffle_rng = ChaCha20Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);

    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..n_train).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch_x: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let batch_y: Vec<f64> = chunk.iter().map(|&i| ys[i]).collect();
            let loss = forward_backward(&mut params, |tape, binding| {
                model.loss_graph(tape, binding, &batch_x, &batch_y, config.lambda)
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_idx,
                    loss,
                });
            }
            epoch_loss += loss * chunk.len() as f64;
            adam_step(&mut params, &mut adam)?;
        }
        let train_loss = epoch_loss / n_train as f64;

        let val = evaluate(&model, &params, table, &split.val, "val")?;
        let improved = match &best {
            None => true,
            Some((mae, _, _)) => val.mae < *mae,
        };
        if improved {
            best = Some((val.mae, epoch, params.snapshot()));
        }
        log.push(EpochLog {
            epoch,
            train_loss,
            val,
        });
    }
    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model,
        params: best_params,
        log,
        best_epoch,
    })
}

/// Metrics of `params` on the given table rows, with predictions mapped
/// back through the inverse target transform.
pub fn evaluate(
    model: &TljdModel,
    params: &ParamStore,
    table: &IndicatorTable,
    indices: &[usize],
    split: &str,
) -> Result<MetricsReport> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let preds = model.predict_table(params, table, indices)?;
    let y_pred: Vec<f64> = preds
        .iter()
        .map(|p| model.config.target_transform.invert(p.y_hat))
        .collect();
    let y_true: Vec<f64> = indices.iter().map(|&i| table.rows()[i].fdi).collect();
    compute_metrics(&y_true, &y_pred, split)
}
