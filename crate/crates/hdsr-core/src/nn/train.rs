//! Generic training loop: shuffled mini-batches, momentum SGD, linear
//! learning-rate decay, and early stopping on validation loss.
//!
//! Heads plug in through [`TrainingProblem`]: the loop never sees targets,
//! only per-sample losses and gradients. Per-sample gradients inside a batch
//! are computed in parallel and reduced in index order, so the result is
//! bit-identical whether one or many worker threads run.

use crate::error::{Error, Result};
use crate::nn::network::{BnSampleStats, Gradients, Network};
use crate::nn::scalar::Scalar;
use crate::nn::sgd::{sgd_step, TrainConfig};
use crate::rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Momentum applied to batchnorm running statistics.
pub const BN_STATS_MOMENTUM: f64 = 0.9;

/// Loss, parameter gradients, and batchnorm statistics for one sample.
pub struct SampleGrad<F> {
    pub loss: f64,
    pub grads: Gradients<F>,
    pub bn_stats: BnSampleStats<F>,
}

/// A head-specific training task.
pub trait TrainingProblem<F: Scalar>: Sync {
    fn train_len(&self) -> usize;
    fn val_len(&self) -> usize;
    /// Forward + backward for one training sample.
    fn sample_grad(&self, net: &Network<F>, idx: usize) -> Result<SampleGrad<F>>;
    /// Validation loss for one sample (inference mode).
    fn val_loss(&self, net: &Network<F>, idx: usize) -> Result<f64>;
    /// Optional domain metric recorded alongside the validation loss.
    fn val_metric(&self, _net: &Network<F>) -> Option<f64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
    /// Training aborted on a non-finite loss or gradient; history up to the
    /// abort is preserved and the best weights so far are returned.
    Diverged,
}

pub struct TrainOutcome<F> {
    pub network: Network<F>,
    pub history: Vec<EpochStats>,
    pub stop: StopReason,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mid-training state, sufficient to resume bit-identically.
pub struct TrainState<F> {
    pub next_epoch: usize,
    pub velocity: Gradients<F>,
    pub best_val: f64,
    pub best_params: Vec<F>,
    pub best_epoch: usize,
    pub bad_epochs: usize,
    pub history: Vec<EpochStats>,
}

impl<F: Scalar> TrainState<F> {
    pub fn fresh(net: &Network<F>) -> Self {
        TrainState {
            next_epoch: 0,
            velocity: net.zero_like_params(),
            best_val: f64::INFINITY,
            best_params: net.flat_params(),
            best_epoch: 0,
            bad_epochs: 0,
            history: Vec::new(),
        }
    }
}

/// Flatten gradient-shaped buffers (velocity) for checkpointing.
pub fn flatten_grads<F: Scalar>(grads: &Gradients<F>) -> Vec<F> {
    grads
        .iter()
        .flat_map(|l| l.iter().flat_map(|t| t.data().iter().copied()))
        .collect()
}

/// Inverse of [`flatten_grads`], shaped like `net`'s parameters.
pub fn unflatten_grads<F: Scalar>(net: &Network<F>, flat: &[F]) -> Result<Gradients<F>> {
    let mut out = net.zero_like_params();
    let mut pos = 0usize;
    for l in &mut out {
        for t in l {
            let n = t.numel();
            if pos + n > flat.len() {
                return Err(Error::Data("velocity buffer too short".into()));
            }
            t.data_mut().copy_from_slice(&flat[pos..pos + n]);
            pos += n;
        }
    }
    if pos != flat.len() {
        return Err(Error::Data("velocity buffer too long".into()));
    }
    Ok(out)
}

/// Train from scratch. See [`train_from`] for the resumable variant.
pub fn train<F: Scalar, P: TrainingProblem<F>>(
    net: Network<F>,
    problem: &P,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<F>> {
    let state = TrainState::fresh(&net);
    train_from(net, problem, cfg, state, &mut |_| {})
}

/// Train starting from mid-run `state`. `on_epoch` fires after every epoch
/// with the current state (checkpoint hook). Epoch `e` shuffles with the
/// substream `(seed, "shuffle", e)`, so resuming at epoch `e` is
/// bit-identical to never having stopped.
pub fn train_from<F: Scalar, P: TrainingProblem<F>>(
    mut net: Network<F>,
    problem: &P,
    cfg: &TrainConfig,
    mut state: TrainState<F>,
    on_epoch: &mut dyn FnMut(&TrainSnapshot<'_, F>),
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    if problem.train_len() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    if problem.val_len() == 0 {
        return Err(Error::Data("empty validation set".into()));
    }

    let mut stop = StopReason::MaxEpochs;
    for epoch in state.next_epoch..cfg.max_epochs {
        let mut order: Vec<usize> = (0..problem.train_len()).collect();
        order.shuffle(&mut rng::stream(cfg.rng_seed, "shuffle", epoch as u64));

        let mut train_loss_sum = 0.0f64;
        let mut diverged = false;
        for chunk in order.chunks(cfg.batch_size) {
            let results: Vec<Result<SampleGrad<F>>> = chunk
                .par_iter()
                .map(|&idx| problem.sample_grad(&net, idx))
                .collect();
            let mut batch_grads = net.zero_like_params();
            let mut bn_batch: Vec<BnSampleStats<F>> = Vec::with_capacity(chunk.len());
            let mut batch_loss = 0.0f64;
            for r in results {
                let s = match r {
                    Ok(s) => s,
                    // numerical failures are divergence, not programmer error
                    Err(Error::Numerics(_)) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                };
                batch_loss += s.loss;
                bn_batch.push(s.bn_stats);
                for (acc_l, g_l) in batch_grads.iter_mut().zip(&s.grads) {
                    for (acc, g) in acc_l.iter_mut().zip(g_l) {
                        for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                }
            }
            if diverged || !batch_loss.is_finite() {
                diverged = true;
                break;
            }
            let scale = F::from_f64(1.0 / chunk.len() as f64);
            for l in &mut batch_grads {
                for t in l {
                    for v in t.data_mut() {
                        *v *= scale;
                    }
                }
            }
            net.update_running_stats(&bn_batch, BN_STATS_MOMENTUM);
            if let Err(e) = sgd_step(&mut net, &batch_grads, &mut state.velocity, cfg, epoch) {
                match e {
                    Error::Numerics(_) => {
                        diverged = true;
                        break;
                    }
                    other => return Err(other),
                }
            }
            train_loss_sum += batch_loss;
        }
        if diverged {
            stop = StopReason::Diverged;
            break;
        }
        let train_loss = train_loss_sum / problem.train_len() as f64;

        let val_losses: Vec<Result<f64>> = (0..problem.val_len())
            .into_par_iter()
            .map(|i| problem.val_loss(&net, i))
            .collect();
        let mut val_sum = 0.0f64;
        let mut val_failed = false;
        for v in val_losses {
            match v {
                Ok(l) => val_sum += l,
                Err(Error::Numerics(_)) => {
                    val_failed = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = val_sum / problem.val_len() as f64;
        if val_failed || !val_loss.is_finite() {
            stop = StopReason::Diverged;
            break;
        }
        let val_metric = problem.val_metric(&net).unwrap_or(val_loss);
        state.history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_metric,
        });

        if val_loss < state.best_val {
            state.best_val = val_loss;
            state.best_params = net.flat_params();
            state.best_epoch = epoch;
            state.bad_epochs = 0;
        } else {
            state.bad_epochs += 1;
        }
        state.next_epoch = epoch + 1;
        on_epoch(&TrainSnapshot {
            net: &net,
            state: &state,
        });
        if state.bad_epochs > cfg.patience {
            stop = StopReason::EarlyStopped;
            break;
        }
    }

    net.load_flat_params(&state.best_params)?;
    Ok(TrainOutcome {
        network: net,
        history: state.history,
        stop,
        best_epoch: state.best_epoch,
        best_val_loss: state.best_val,
    })
}

/// What the per-epoch hook sees: live weights plus resumable state.
pub struct TrainSnapshot<'a, F> {
    pub net: &'a Network<F>,
    pub state: &'a TrainState<F>,
}

/// Render history as the `epoch,train_loss,val_loss,val_metric` CSV.
pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_metric\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.train_loss, h.val_loss, h.val_metric
        ));
    }
    out
}
