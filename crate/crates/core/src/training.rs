//! Imitation learning: fit a decentralized controller to the expert's
//! recorded actions by mean-squared-error regression with ADAM.
//!
//! Training is teacher-forced — features and graphs come from the recorded
//! expert trajectories, never from the student's own rollouts — and is a
//! pure function of (dataset, config): per-trajectory work inside a batch
//! runs in parallel, but losses and gradients are reduced in trajectory
//! order, so reruns reproduce parameters and losses exactly.

use crate::controllers::{backward, forward, forward_with_tape, Arch, ControllerParams};
use crate::error::{Error, Result};
use crate::flocking::{Dataset, TrajectoryRecord};
use crate::graph::{GraphSequence, GraphSnapshot};
use crate::mat::Mat;
use crate::rng::{stream_rng, streams};
use crate::{ACTION_DIM, FEATURE_DIM};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Optimization hyperparameters. Defaults follow the reference protocol:
/// 30 epochs, batches of 20 trajectories, ADAM at 5e-4 with forgetting
/// factors 0.9 / 0.999.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Batch size in trajectories.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    /// Evaluate the validation split every this many epochs.
    pub validation_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 20,
            learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            validation_interval: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.validation_interval == 0 {
            return Err(Error::Config(
                "epochs, batch_size and validation_interval must be positive".into(),
            ));
        }
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) || !positive(self.adam_epsilon) {
            return Err(Error::Config(
                "learning_rate and adam_epsilon must be positive".into(),
            ));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0 < beta && beta < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {beta}")));
            }
        }
        Ok(())
    }
}

/// Mean squared error over all (step, agent, component) entries, and its
/// gradient on the predictions.
pub fn imitation_loss(predicted: &[Mat], expert: &[Mat]) -> Result<(f64, Vec<Mat>)> {
    if predicted.len() != expert.len() {
        return Err(Error::dims(
            "imitation_loss steps",
            format!("{}", expert.len()),
            format!("{}", predicted.len()),
        ));
    }
    let mut count = 0usize;
    for (p, e) in predicted.iter().zip(expert) {
        if p.shape() != e.shape() {
            return Err(Error::dims(
                "imitation_loss step shape",
                format!("{:?}", e.shape()),
                format!("{:?}", p.shape()),
            ));
        }
        count += p.rows() * p.cols();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("empty prediction sequence".into()));
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(predicted.len());
    for (p, e) in predicted.iter().zip(expert) {
        let diff = p.sub(e)?;
        for v in diff.as_slice() {
            loss += v * v * scale;
        }
        let mut g = diff;
        g.scale_assign(2.0 * scale);
        grads.push(g);
    }
    Ok((loss, grads))
}

/// ADAM moment accumulators, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: ControllerParams,
    second_moment: ControllerParams,
    step: u64,
}

impl OptimizerState {
    pub fn new(params: &ControllerParams) -> Self {
        OptimizerState {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One ADAM update with bias correction.
pub fn adam_step(
    params: &mut ControllerParams,
    grads: &ControllerParams,
    state: &mut OptimizerState,
    config: &TrainConfig,
) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&state.first_moment) {
        return Err(Error::InvalidState(
            "adam_step shapes do not match the parameters".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.adam_beta1.powi(t);
    let bias2 = 1.0 - config.adam_beta2.powi(t);

    let grad_tensors = grads.tensors();
    let mut m_tensors = state.first_moment.tensors_mut();
    let mut v_tensors = state.second_moment.tensors_mut();
    for (idx, p) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_tensors[idx].as_slice();
        let m = m_tensors[idx].as_mut_slice();
        let v = v_tensors[idx].as_mut_slice();
        let p = p.as_mut_slice();
        for i in 0..p.len() {
            m[i] = config.adam_beta1 * m[i] + (1.0 - config.adam_beta1) * g[i];
            v[i] = config.adam_beta2 * v[i] + (1.0 - config.adam_beta2) * g[i] * g[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            p[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_epsilon);
        }
    }
    Ok(())
}

/// Losses of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch index.
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    /// Wall-clock seconds; diagnostic only, excluded from any determinism
    /// comparison.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainingLog {
    /// One line per epoch: `epoch train valid wall`.
    pub fn to_plain_text(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tvalid_loss\twall_secs\n");
        for e in &self.epochs {
            let valid = e
                .valid_loss
                .map_or_else(|| "-".to_string(), |v| format!("{v:.9e}"));
            out.push_str(&format!(
                "{}\t{:.9e}\t{}\t{:.3}\n",
                e.epoch, e.train_loss, valid, e.wall_secs
            ));
        }
        out
    }

    /// Loss sequences only — what determinism guarantees cover.
    pub fn losses(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.epochs
            .iter()
            .map(|e| (e.epoch, e.train_loss, e.valid_loss))
            .collect()
    }
}

/// Outcome of a training run: the validation-best parameters plus the
/// final-epoch parameters and the per-epoch log.
#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_params: ControllerParams,
    pub final_params: ControllerParams,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub log: TrainingLog,
}

fn trajectory_loss_and_grads(
    params: &ControllerParams,
    record: &TrajectoryRecord,
) -> Result<(f64, ControllerParams)> {
    let (predicted, tape) = forward_with_tape(params, &record.graphs, &record.features)?;
    let (loss, loss_grads) = imitation_loss(&predicted, &record.actions)?;
    let grads = backward(params, &tape, &loss_grads)?;
    Ok((loss, grads))
}

fn trajectory_loss(params: &ControllerParams, record: &TrajectoryRecord) -> Result<f64> {
    let predicted = forward(params, &record.graphs, &record.features)?;
    Ok(imitation_loss(&predicted, &record.actions)?.0)
}

fn mean_loss(params: &ControllerParams, records: &[TrajectoryRecord]) -> Result<f64> {
    let losses: Vec<f64> = records
        .par_iter()
        .map(|r| trajectory_loss(params, r))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Train one architecture on a dataset. Returns the parameters that achieved
/// the lowest validation loss, which may precede the final epoch.
pub fn train(
    arch: Arch,
    dataset: &Dataset,
    config: &TrainConfig,
    g: usize,
    n_taps: usize,
) -> Result<TrainResult> {
    config.validate()?;
    if dataset.train.is_empty() || dataset.valid.is_empty() {
        return Err(Error::Config(
            "training needs non-empty train and validation splits".into(),
        ));
    }

    let mut params = ControllerParams::init(arch, FEATURE_DIM, g, n_taps, config.seed)?;
    let mut opt = OptimizerState::new(&params);
    let mut shuffle_rng = stream_rng(config.seed, streams::SHUFFLE);

    let mut best_params = params.clone();
    let mut best_valid = f64::INFINITY;
    let mut best_epoch = 0;
    let mut log = TrainingLog::default();

    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let results: Vec<(f64, ControllerParams)> = batch
                .par_iter()
                .map(|&idx| trajectory_loss_and_grads(&params, &dataset.train[idx]))
                .collect::<Result<_>>()?;

            let mut batch_grads = params.zeros_like();
            let inv = 1.0 / batch.len() as f64;
            for (loss, grads) in &results {
                epoch_loss_sum += loss;
                batch_grads.add_scaled_assign(grads, inv)?;
            }
            adam_step(&mut params, &batch_grads, &mut opt, config)?;
        }
        let train_loss = epoch_loss_sum / dataset.train.len() as f64;

        let valid_loss = if epoch % config.validation_interval == 0 || epoch == config.epochs {
            let v = mean_loss(&params, &dataset.valid)?;
            if v < best_valid {
                best_valid = v;
                best_epoch = epoch;
                best_params = params.clone();
            }
            Some(v)
        } else {
            None
        };

        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            valid_loss,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainResult {
        best_params,
        final_params: params,
        best_epoch,
        best_valid_loss: best_valid,
        log,
    })
}

/// Compare the reverse pass against central finite differences (step 1e-6)
/// on a random instance, entry by entry over every parameter tensor, and
/// return the maximum relative error.
pub fn gradient_check(
    arch: Arch,
    g: usize,
    n_taps: usize,
    n_agents: usize,
    n_steps: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = stream_rng(seed, streams::GRADCHECK);
    let graphs: Vec<GraphSnapshot> = (0..n_steps)
        .map(|_| {
            let mut pairs = Vec::new();
            for i in 0..n_agents {
                for j in (i + 1)..n_agents {
                    if rng.random::<f64>() < 0.5 {
                        pairs.push((i, j));
                    }
                }
            }
            GraphSnapshot::symmetric_binary(n_agents, pairs)
        })
        .collect::<Result<_>>()?;
    let graphs = GraphSequence::new(graphs)?;
    let features: Vec<Mat> = (0..n_steps)
        .map(|_| Mat::from_fn(n_agents, FEATURE_DIM, |_, _| rng.random_range(-1.0..1.0)))
        .collect();
    let targets: Vec<Mat> = (0..n_steps)
        .map(|_| Mat::from_fn(n_agents, ACTION_DIM, |_, _| rng.random_range(-1.0..1.0)))
        .collect();

    let params = ControllerParams::init(arch, FEATURE_DIM, g, n_taps, seed)?;
    let (predicted, tape) = forward_with_tape(&params, &graphs, &features)?;
    let (_, loss_grads) = imitation_loss(&predicted, &targets)?;
    let analytic = backward(&params, &tape, &loss_grads)?;

    let loss_at = |p: &ControllerParams| -> Result<f64> {
        let predicted = forward(p, &graphs, &features)?;
        Ok(imitation_loss(&predicted, &targets)?.0)
    };

    let h = 1e-6;
    let n_tensors = params.tensors().len();
    let mut max_rel = 0.0f64;
    for tensor_idx in 0..n_tensors {
        let (rows, cols) = params.tensors()[tensor_idx].shape();
        for i in 0..rows {
            for j in 0..cols {
                let base = params.tensors()[tensor_idx].get(i, j);
                let mut plus = params.clone();
                plus.tensors_mut()[tensor_idx].set(i, j, base + h);
                let mut minus = params.clone();
                minus.tensors_mut()[tensor_idx].set(i, j, base - h);
                let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * h);
                let a = analytic.tensors()[tensor_idx].get(i, j);
                // the floor keeps finite-difference noise on near-zero
                // entries from dominating the ratio
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
                max_rel = max_rel.max(rel);
            }
        }
    }
    Ok(max_rel)
}
