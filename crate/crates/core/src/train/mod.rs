//! Training and evaluation for one-step surrogate models.
//!
//! The protocol is next-step supervision over (frame, next-frame) pairs:
//! inputs get Gaussian noise during training, the per-pair loss is the
//! root-mean-square error of the prediction, and each batch averages
//! per-pair gradients before one optimizer step per parameter tensor.
//! Validation runs noise-free; the best-validation parameters are restored
//! at the end. All randomness comes from counter-based generators seeded
//! from the run seed, so equal inputs give bitwise-equal runs.

use rand::seq::SliceRandom;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::MeshGraph;
use crate::model::{
    accumulate_param_grads, build_forward, forward_step, validate_params, ModelConfig, ModelError,
    ModelParams,
};
use crate::pde::Trajectory;
use crate::tensor::{AdamState, Tape, Tensor, TensorError, VarId};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    Config(String),
    #[error("training data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Standard deviation of Gaussian noise injected into training inputs.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 100,
            learning_rate: 1e-4,
            noise_std: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".to_string()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config(
                "batch_size must be positive".to_string(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(
                "learning_rate must be positive and finite".to_string(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(TrainError::Config(
                "noise_std must be non-negative and finite".to_string(),
            ));
        }
        Ok(())
    }
}

/// One logged metric value.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<MetricRecord>,
    /// Epoch whose validation error the returned parameters correspond to.
    pub best_epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub final_train_rmse: f64,
}

// ── data preparation ─────────────────────────────────────────────────────

/// Consecutive-frame training pairs from one trajectory.
pub fn make_pairs(traj: &Trajectory) -> Result<Vec<(Tensor, Tensor)>, TrainError> {
    let n = traj.n_nodes();
    let ch = traj.channels();
    if traj.frames.len() < 2 {
        return Err(TrainError::Data(format!(
            "trajectory has {} frames; need at least 2",
            traj.frames.len()
        )));
    }
    let mut pairs = Vec::with_capacity(traj.frames.len() - 1);
    for w in traj.frames.windows(2) {
        let a = Tensor::new(&[n, ch], w[0].clone())?;
        let b = Tensor::new(&[n, ch], w[1].clone())?;
        pairs.push((a, b));
    }
    Ok(pairs)
}

/// Root-mean-square error over all entries of equally shaped tensors.
pub fn rmse_value(pred: &Tensor, target: &Tensor) -> Result<f64, TrainError> {
    if pred.shape() != target.shape() {
        return Err(TrainError::Data(format!(
            "rmse shapes differ: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok((sum / n).sqrt())
}

/// Builds the RMSE loss node between `pred` and a target constant.
pub fn rmse_node(tape: &mut Tape, pred: VarId, target: &Tensor) -> Result<VarId, TrainError> {
    let t = tape.constant(target);
    let diff = tape.sub(pred, t)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum_all(sq)?;
    let mean = tape.scale(total, 1.0 / target.len() as f64)?;
    Ok(tape.sqrt_scalar(mean)?)
}

/// Deterministic Gaussian input-noise source. A zero standard deviation
/// consumes no random draws, so disabling noise does not shift any other
/// random stream.
pub struct NoiseInjector {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
    std: f64,
    draws: u64,
}

impl NoiseInjector {
    pub fn new(seed: u64, std: f64) -> Result<NoiseInjector, TrainError> {
        if !(std >= 0.0 && std.is_finite()) {
            return Err(TrainError::Config(
                "noise std must be non-negative and finite".to_string(),
            ));
        }
        let normal = Normal::new(0.0, std.max(f64::MIN_POSITIVE))
            .map_err(|e| TrainError::Config(format!("noise distribution: {e}")))?;
        Ok(NoiseInjector {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal,
            std,
            draws: 0,
        })
    }

    /// Number of Gaussian samples drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    pub fn apply(&mut self, t: &Tensor) -> Tensor {
        if self.std == 0.0 {
            return t.clone();
        }
        let values: Vec<f64> = t
            .values()
            .iter()
            .map(|v| {
                self.draws += 1;
                v + self.normal.sample(&mut self.rng)
            })
            .collect();
        Tensor::new(t.shape(), values).expect("noise keeps values finite")
    }
}

// ── training loop ────────────────────────────────────────────────────────

/// Offset separating the noise stream from the shuffle stream.
const NOISE_SEED_OFFSET: u64 = 0x6e6f_6973_65;

/// Trains `params` in place and returns the metric log. The parameters
/// left in `params` are those of the best validation epoch (final epoch
/// when `val_pairs` is empty).
pub fn train(
    mesh: &MeshGraph,
    model_cfg: &ModelConfig,
    params: &mut ModelParams,
    train_pairs: &[(Tensor, Tensor)],
    val_pairs: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    validate_params(model_cfg, params)?;
    if train_pairs.is_empty() {
        return Err(TrainError::Data("no training pairs".to_string()));
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise = NoiseInjector::new(cfg.seed.wrapping_add(NOISE_SEED_OFFSET), cfg.noise_std)?;
    let n_tensors = params.named().len();
    let mut adams: Vec<AdamState> = (0..n_tensors)
        .map(|_| AdamState::new(cfg.learning_rate))
        .collect();

    let mut records = Vec::with_capacity(cfg.epochs * 2);
    let mut best: Option<(usize, f64, Vec<Vec<f64>>)> = None;
    let mut final_train_rmse = f64::NAN;

    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grads();
            let inv_b = 1.0 / batch.len() as f64;
            for &i in batch {
                let (u, target) = &train_pairs[i];
                let noisy = noise.apply(u);
                let mut tape = Tape::new();
                let (pred, loaded) = build_forward(&mut tape, mesh, &noisy, model_cfg, params)?;
                let loss = rmse_node(&mut tape, pred, target)?;
                loss_sum += tape.value(loss)[0];
                let scaled = tape.scale(loss, inv_b)?;
                tape.backward(scaled)?;
                accumulate_param_grads(&tape, &loaded, params)?;
            }
            let mut idx = 0usize;
            let mut failure: Option<TensorError> = None;
            params.for_each_named_mut(&mut |_, t| {
                if failure.is_some() {
                    return;
                }
                if let Err(e) = t.adam_update(&mut adams[idx]) {
                    failure = Some(e);
                }
                idx += 1;
            });
            if let Some(e) = failure {
                return Err(e.into());
            }
        }
        let train_rmse = loss_sum / train_pairs.len() as f64;
        final_train_rmse = train_rmse;
        records.push(MetricRecord {
            epoch,
            split: "train",
            metric: "rmse",
            value: train_rmse,
        });

        if !val_pairs.is_empty() {
            let val_rmse = evaluate_pairs(mesh, model_cfg, params, val_pairs)?;
            records.push(MetricRecord {
                epoch,
                split: "val",
                metric: "rmse",
                value: val_rmse,
            });
            let improved = best.as_ref().is_none_or(|(_, b, _)| val_rmse < *b);
            if improved {
                let mut snapshot = Vec::with_capacity(n_tensors);
                params.for_each_named(&mut |_, t| snapshot.push(t.values().to_vec()));
                best = Some((epoch, val_rmse, snapshot));
            }
        }
    }

    let (best_epoch, best_val_rmse) = match best {
        Some((epoch, rmse, snapshot)) => {
            let mut idx = 0usize;
            params.for_each_named_mut(&mut |_, t| {
                t.values_mut().copy_from_slice(&snapshot[idx]);
                idx += 1;
            });
            (epoch, Some(rmse))
        }
        None => (cfg.epochs - 1, None),
    };

    Ok(TrainReport {
        records,
        best_epoch,
        best_val_rmse,
        final_train_rmse,
    })
}

/// Mean noise-free one-step RMSE over pairs.
pub fn evaluate_pairs(
    mesh: &MeshGraph,
    model_cfg: &ModelConfig,
    params: &ModelParams,
    pairs: &[(Tensor, Tensor)],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::Data("no evaluation pairs".to_string()));
    }
    let mut sum = 0.0;
    for (u, target) in pairs {
        let pred = forward_step(mesh, u, model_cfg, params)?;
        sum += rmse_value(&pred, target)?;
    }
    Ok(sum / pairs.len() as f64)
}

// ── rollout ──────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct RolloutResult {
    /// Predicted frames after 1..=steps model applications.
    pub frames: Vec<Tensor>,
    /// Per-step RMSE against the provided targets, if any.
    pub per_step_rmse: Vec<f64>,
    pub mean_rmse: Option<f64>,
}

/// Autoregressive rollout from `initial`, optionally scored against
/// ground-truth frames (`targets[k]` compared after `k + 1` steps).
pub fn rollout(
    mesh: &MeshGraph,
    model_cfg: &ModelConfig,
    params: &ModelParams,
    initial: &Tensor,
    steps: usize,
    targets: Option<&[Tensor]>,
) -> Result<RolloutResult, TrainError> {
    if steps == 0 {
        return Err(TrainError::Config("rollout needs at least one step".to_string()));
    }
    if let Some(t) = targets {
        if t.len() < steps {
            return Err(TrainError::Data(format!(
                "{} target frames for {steps} rollout steps",
                t.len()
            )));
        }
    }
    let mut frames = Vec::with_capacity(steps);
    let mut per_step_rmse = Vec::new();
    let mut current = initial.clone();
    for k in 0..steps {
        let next = forward_step(mesh, &current, model_cfg, params)?;
        if let Some(t) = targets {
            per_step_rmse.push(rmse_value(&next, &t[k])?);
        }
        frames.push(next.clone());
        current = next;
    }
    let mean_rmse = if per_step_rmse.is_empty() {
        None
    } else {
        Some(per_step_rmse.iter().sum::<f64>() / per_step_rmse.len() as f64)
    };
    Ok(RolloutResult {
        frames,
        per_step_rmse,
        mean_rmse,
    })
}
