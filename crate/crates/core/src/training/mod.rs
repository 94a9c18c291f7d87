//! Training: loss, exact gradients through the unroll, and the optimization
//! loop over generated batches.
//!
//! Everything is deterministic in the config seed: data streams derive
//! per-step sub-seeds, batch members are processed in index order, and
//! gradient reduction is a fixed-order sum, so two runs of the same config
//! produce bit-identical parameters.

mod backward;
mod loss;
mod optim;

pub use loss::orientation_loss;
pub use optim::{clip_global_norm, cosine_lr, AdamState};

use rayon::prelude::*;
use thiserror::Error;

use crate::kinematics::ParentArray;
use crate::net::{NetError, RingParams, RingState};
use crate::rcmg::{
    generate_batch, subseed, AblationFlags, QuatSeries, RcmgError, RcmgRanges, TrainingPair,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{what}: expected {expected} elements, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("warmup of {warmup} steps consumes the whole sequence of {timesteps}")]
    WarmupTooLong { warmup: usize, timesteps: usize },
    #[error("gradient for parameter block '{tensor}' is non-finite")]
    NonFiniteGradient { tensor: &'static str },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("dataset is empty (or smaller than the validation split)")]
    EmptyDataset,
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Rcmg(#[from] RcmgError),
}

const TAG_TRAIN_BATCH: u64 = 100;
const TAG_VALIDATION: u64 = 101;
const TAG_SHUFFLE: u64 = 102;

// ─── Gradient over a batch ───────────────────────────────────────────────────

/// Exact mean loss over the batch and its gradient with respect to every
/// parameter, via full backpropagation through time.
///
/// Pairs are differentiated in parallel but reduced in index order, so the
/// result is bit-deterministic. `warmup` timesteps are excluded from the
/// loss of every sequence.
pub fn loss_and_gradient(
    params: &RingParams,
    batch: &[TrainingPair],
    warmup: usize,
) -> Result<(f64, RingParams), TrainError> {
    loss_and_gradient_chunked(params, batch, warmup, None)
}

/// Like [`loss_and_gradient`], optionally truncating backpropagation: with
/// `chunk = Some(k)` the state is carried across `k`-step segments but
/// gradients stop at segment boundaries.
pub fn loss_and_gradient_chunked(
    params: &RingParams,
    batch: &[TrainingPair],
    warmup: usize,
    chunk: Option<usize>,
) -> Result<(f64, RingParams), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_pair: Vec<Result<(f64, RingParams), TrainError>> = batch
        .par_iter()
        .map(|pair| pair_loss_and_gradient(params, pair, warmup, chunk))
        .collect();

    let mut total_loss = 0.0;
    let mut grads = RingParams::zeros_like(params.hidden, params.message);
    let scale = 1.0 / batch.len() as f64;
    for result in per_pair {
        let (loss, g) = result?;
        total_loss += loss * scale;
        for (dst, (_, src, _)) in grads.tensors_mut().into_iter().zip(g.tensors()) {
            for (d, s) in dst.iter_mut().zip(src.iter()) {
                *d += s * scale;
            }
        }
    }
    if let Some(tensor) = grads.first_non_finite() {
        return Err(TrainError::NonFiniteGradient { tensor });
    }
    Ok((total_loss, grads))
}

fn pair_loss_and_gradient(
    params: &RingParams,
    pair: &TrainingPair,
    warmup: usize,
    chunk: Option<usize>,
) -> Result<(f64, RingParams), TrainError> {
    let t_count = pair.timesteps();
    let n = pair.nodes();
    if warmup >= t_count {
        return Err(TrainError::WarmupTooLong { warmup, timesteps: t_count });
    }
    let kept = t_count - warmup;
    let weight = 1.0 / (kept * n) as f64;
    let mut grads = RingParams::zeros_like(params.hidden, params.message);
    let mut loss = 0.0;

    let chunk_len = chunk.unwrap_or(t_count).max(1);
    let mut state = RingState::zeros(n, params.hidden);
    let mut start = 0;
    while start < t_count {
        let len = chunk_len.min(t_count - start);
        let x_chunk = crate::rcmg::InputSeries::from_flat(
            pair.x.as_flat()[start * n * crate::rcmg::INPUT_CHANNELS
                ..(start + len) * n * crate::rcmg::INPUT_CHANNELS]
                .to_vec(),
            len,
            n,
        );
        let trace = backward::forward_traced(params, state, &x_chunk, &pair.parents)?;
        // Targets for this window; warmup is global over the sequence.
        let y_chunk = QuatSeries::from_flat(
            pair.y.as_flat()[start * n..(start + len) * n].to_vec(),
            len,
            n,
        );
        let local_warmup = warmup.saturating_sub(start).min(len);
        if local_warmup < len {
            let (chunk_loss, g_outputs) = loss::loss_terms_and_grads(
                &trace.outputs,
                &y_chunk,
                &pair.parents,
                local_warmup,
                weight,
            );
            loss += chunk_loss;
            backward::backward_traced(params, &trace, &pair.parents, &g_outputs, &mut grads);
        }
        state = trace.states.last().expect("trace has a final state").clone();
        start += len;
    }
    Ok((loss, grads))
}

// ─── Training loop ───────────────────────────────────────────────────────────

/// Where training sequences come from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Generate batches on the fly; every step sees fresh sequences.
    Stream {
        timesteps: usize,
        num_bodies: usize,
        flags: AblationFlags,
        rate_set: Vec<f64>,
        ranges: RcmgRanges,
    },
    /// Cycle deterministically shuffled epochs over a fixed dataset; the
    /// last `validation_split` pairs are held out for validation.
    Dataset { pairs: Vec<TrainingPair>, validation_split: usize },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub hidden: usize,
    pub message: usize,
    pub seed: u64,
    pub steps: usize,
    pub batch_size: usize,
    /// Timesteps excluded from the loss at the start of every sequence.
    pub warmup_steps: usize,
    pub learning_rate: f64,
    pub cosine_decay: bool,
    pub clip_norm: f64,
    /// Truncated-unroll segment length; `None` is full backpropagation.
    pub tbptt_chunk: Option<usize>,
    /// Validate every this many steps (0 disables validation).
    pub val_every: usize,
    /// Validation sequences (stream source only; datasets use their split).
    pub val_sequences: usize,
    pub source: DataSource,
}

impl TrainConfig {
    /// Desk-scale defaults on a streaming source.
    pub fn desk(source: DataSource) -> Self {
        Self {
            hidden: 32,
            message: 16,
            seed: 0,
            steps: 200,
            batch_size: 32,
            warmup_steps: 100,
            learning_rate: 3e-3,
            cosine_decay: true,
            clip_norm: 1.0,
            tbptt_chunk: None,
            val_every: 50,
            val_sequences: 8,
            source,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone)]
pub struct TrainLogEntry {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub val_mae_deg: Option<f64>,
    pub wall_s: f64,
}

impl TrainLogEntry {
    /// Render as one line-delimited record.
    pub fn to_line(&self) -> String {
        match self.val_mae_deg {
            Some(mae) => format!(
                "step={} loss={:.6e} grad_norm={:.4e} val_mae_deg={:.3} wall_s={:.3}",
                self.step, self.loss, self.grad_norm, mae, self.wall_s
            ),
            None => format!(
                "step={} loss={:.6e} grad_norm={:.4e} wall_s={:.3}",
                self.step, self.loss, self.grad_norm, self.wall_s
            ),
        }
    }
}

pub struct TrainOutcome {
    pub params: RingParams,
    pub log: Vec<TrainLogEntry>,
}

/// Run the training loop, invoking `on_log` after every step.
///
/// Zero steps returns the initialized parameters unchanged. Aborts with
/// [`TrainError::Diverged`] if the loss becomes non-finite.
pub fn train_with<F: FnMut(&TrainLogEntry)>(
    config: &TrainConfig,
    mut on_log: F,
) -> Result<TrainOutcome, TrainError> {
    let mut params = RingParams::init(config.hidden, config.message, config.seed);
    let mut theta = params.flatten();
    let mut adam = AdamState::new(theta.len());
    let mut log = Vec::new();
    let started = std::time::Instant::now();

    let (val_set, dataset): (Vec<TrainingPair>, Option<(&[TrainingPair], usize)>) =
        match &config.source {
            DataSource::Stream { timesteps, num_bodies, flags, rate_set, ranges } => {
                let val = if config.val_every > 0 && config.val_sequences > 0 {
                    generate_batch(
                        subseed(config.seed, TAG_VALIDATION, 0),
                        config.val_sequences,
                        *timesteps,
                        *num_bodies,
                        *flags,
                        rate_set,
                        ranges,
                    )?
                } else {
                    Vec::new()
                };
                (val, None)
            }
            DataSource::Dataset { pairs, validation_split } => {
                if pairs.len() <= *validation_split {
                    return Err(TrainError::EmptyDataset);
                }
                let split = pairs.len() - validation_split;
                (pairs[split..].to_vec(), Some((&pairs[..split], split)))
            }
        };

    for step in 0..config.steps {
        let batch: Vec<TrainingPair> = match (&config.source, dataset) {
            (DataSource::Stream { timesteps, num_bodies, flags, rate_set, ranges }, _) => {
                generate_batch(
                    subseed(config.seed, TAG_TRAIN_BATCH, step as u64),
                    config.batch_size,
                    *timesteps,
                    *num_bodies,
                    *flags,
                    rate_set,
                    ranges,
                )?
            }
            (_, Some((train_pairs, len))) => {
                let per_epoch = len.div_ceil(config.batch_size);
                let epoch = step / per_epoch;
                let slot = step % per_epoch;
                let order = shuffled_indices(len, subseed(config.seed, TAG_SHUFFLE, epoch as u64));
                order
                    .iter()
                    .cycle()
                    .skip(slot * config.batch_size)
                    .take(config.batch_size)
                    .map(|&i| train_pairs[i].clone())
                    .collect()
            }
            _ => unreachable!(),
        };

        let (loss, grads) =
            loss_and_gradient_chunked(&params, &batch, config.warmup_steps, config.tbptt_chunk)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        let mut grad_flat = grads.flatten();
        let grad_norm = clip_global_norm(&mut grad_flat, config.clip_norm);
        let lr = if config.cosine_decay {
            cosine_lr(config.learning_rate, step, config.steps)
        } else {
            config.learning_rate
        };
        adam.apply(&mut theta, &grad_flat, lr);
        params.assign_from_flat(&theta);

        let val_mae_deg = if config.val_every > 0
            && !val_set.is_empty()
            && (step + 1) % config.val_every == 0
        {
            Some(validation_mae_deg(&params, &val_set, config.warmup_steps)?)
        } else {
            None
        };
        let entry = TrainLogEntry {
            step,
            loss,
            grad_norm,
            val_mae_deg,
            wall_s: started.elapsed().as_secs_f64(),
        };
        on_log(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

pub fn train(config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(config, |_| {})
}

/// Mean MAE (degrees) of the current parameters over held-out pairs,
/// excluding `warmup` steps.
pub fn validation_mae_deg(
    params: &RingParams,
    pairs: &[TrainingPair],
    warmup: usize,
) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    for pair in pairs {
        let predicted = crate::net::ring_apply(&pair.x, &pair.parents, params)?;
        sum += mae_from_step(&predicted, &pair.y, &pair.parents, warmup);
    }
    Ok(sum / pairs.len() as f64)
}

/// Mean absolute angle in degrees from timestep `start` on (inclination-only
/// for the base body). Shared by validation and the evaluation harness.
pub(crate) fn mae_from_step(
    predicted: &QuatSeries,
    target: &QuatSeries,
    parents: &ParentArray,
    start: usize,
) -> f64 {
    use crate::math::{angle_between_rad, inclination_error_rad, Vec3};
    let (t_count, n) = (predicted.timesteps(), predicted.nodes());
    let mut sum = 0.0;
    let kept = t_count.saturating_sub(start).max(1);
    for t in start..t_count {
        for node in 0..n {
            let angle = match parents.parent_node(node) {
                None => inclination_error_rad(predicted.get(t, node), target.get(t, node), Vec3::Z),
                Some(_) => angle_between_rad(predicted.get(t, node), target.get(t, node)),
            };
            sum += angle.to_degrees();
        }
    }
    sum / (kept * n) as f64
}

fn shuffled_indices(len: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    order
}
