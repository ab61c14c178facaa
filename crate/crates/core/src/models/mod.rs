//! Learned sequence models: the stage-1 latent-ODE autoencoder over native
//! dynamics, the stage-2 intervention filter built on top of it, and the
//! GRU-update ablation.

pub mod gru_ablation;
pub mod intervention;
pub mod native;

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use gru_ablation::{lr_find_gru_baseline, train_gru_baseline, GruBaselineModel};
pub use intervention::{lr_find_intervention, train_intervention, InterventionModel};
pub use native::{lr_find_native, train_native, NativeModel};

/// Knobs shared by all training loops.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    /// Stage-1 extra weight on the first frame's reconstruction.
    pub beta: f64,
    /// Fraction of episodes held out for validation and checkpoint selection.
    pub val_fraction: f64,
    /// Skip the learning-rate sweep and use this rate when set.
    pub lr_override: Option<f64>,
    /// Steps in the learning-rate sweep.
    pub lr_trials: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 16,
            weight_decay: 1e-2,
            beta: 5.0,
            val_fraction: 0.1,
            lr_override: None,
            lr_trials: 40,
            seed: 0,
        }
    }
}

/// One line of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Full record of a training run.
#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub base_lr: f64,
    pub epochs: Vec<EpochStats>,
    /// Epoch index of the checkpoint that was kept.
    pub best_epoch: usize,
}

impl TrainLog {
    /// One text line per epoch: `epoch train val lr`.
    pub fn to_text(&self) -> String {
        let mut s = format!("base_lr {}\n", self.base_lr);
        for e in &self.epochs {
            s.push_str(&format!(
                "epoch {} train {:.6} val {:.6} lr {:.3e}\n",
                e.epoch, e.train_loss, e.val_loss, e.lr
            ));
        }
        s.push_str(&format!("best_epoch {}\n", self.best_epoch));
        s
    }
}

/// Output of a filtering pass over one episode.
#[derive(Debug, Clone)]
pub struct FilterResult {
    /// Decoded frame probabilities, shape `(T, N, N)`.
    pub x_hat: Array3<f64>,
    /// Dynamics latent trajectory, shape `(T, d_z)`.
    pub z: Array2<f64>,
    /// Intervention latent trajectory, shape `(T, d_a)`; absent for models
    /// without an intervention state.
    pub a: Option<Array2<f64>>,
    /// Per-frame residual stacks, shape `(T, window, M)`; absent for models
    /// that do not form residuals.
    pub residuals: Option<Array3<f64>>,
}

/// Split `n` episode indices into a deterministic shuffled train/validation
/// partition.
pub(crate) fn train_val_split(n: usize, val_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let val = idx.split_off(n - n_val);
    (idx, val)
}

/// Shuffle training indices into minibatches for one epoch.
pub(crate) fn epoch_batches(train_idx: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx = train_idx.to_vec();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
}

/// Stack `k` observation frames starting at `start` into a `(k, side, side)`
/// channel block, zero-padding frames past the end of the sequence.
pub(crate) fn obs_window(y: &Array2<f64>, start: usize, k: usize, side: usize) -> Array3<f64> {
    let t = y.nrows();
    debug_assert_eq!(y.ncols(), side * side, "observation rows must be square");
    Array3::from_shape_fn((k, side, side), |(f, i, j)| {
        let frame = start + f;
        if frame < t {
            y[(frame, i * side + j)]
        } else {
            0.0
        }
    })
}

/// True for errors that mean "the numbers blew up" rather than a programming
/// or I/O fault; training reacts by falling back to the last finite
/// checkpoint instead of propagating.
fn is_divergence(err: &crate::error::Error) -> bool {
    matches!(
        err,
        crate::error::Error::SimulationDiverged { .. } | crate::error::Error::NonFinite { .. }
    )
}

/// Cyclic minibatch starting at `cursor` in the (already shuffled) order.
fn batch_of(cursor: usize, order: &[usize], batch_size: usize) -> Vec<usize> {
    (0..batch_size.min(order.len()))
        .map(|j| order[(cursor + j) % order.len()])
        .collect()
}

/// One optimization step over a batch; returns the mean episode loss.
fn run_batch_step<T>(
    model: &mut T,
    opt: &mut crate::nn::AdamW,
    batch: &[usize],
    episode_grads: &mut dyn FnMut(&T, usize) -> crate::error::Result<(f64, Vec<Option<ndarray::ArrayD<f64>>>)>,
    params_mut: &dyn Fn(&mut T) -> &mut crate::nn::ParamSet,
) -> crate::error::Result<f64> {
    use crate::nn::{accumulate_gradients, scale_gradients};
    let mut acc: Vec<Option<ndarray::ArrayD<f64>>> = Vec::new();
    let mut total = 0.0;
    for &i in batch {
        let (loss, grads) = episode_grads(model, i)?;
        total += loss;
        accumulate_gradients(&mut acc, &grads);
    }
    scale_gradients(&mut acc, 1.0 / batch.len() as f64);
    opt.step(params_mut(model), &acc);
    Ok(total / batch.len() as f64)
}

/// Learning-rate range test on a scratch model, using the same split and
/// batch policy as the full training loop, so its suggestion matches what
/// training would pick on its own.
pub(crate) fn run_lr_sweep<T>(
    init: &dyn Fn() -> crate::error::Result<T>,
    episode_grads: &mut dyn FnMut(&T, usize) -> crate::error::Result<(f64, Vec<Option<ndarray::ArrayD<f64>>>)>,
    params_mut: &dyn Fn(&mut T) -> &mut crate::nn::ParamSet,
    n_episodes: usize,
    cfg: &TrainConfig,
) -> crate::error::Result<crate::nn::LrRangeResult> {
    use crate::nn::{lr_range_test, AdamW};
    if n_episodes < 2 {
        return Err(crate::error::Error::InvalidArgument {
            context: "run_lr_sweep",
            detail: format!("need at least 2 episodes, got {n_episodes}"),
        });
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5011d);
    let (train_idx, _) = train_val_split(n_episodes, cfg.val_fraction, &mut split_rng);
    let mut scratch = init()?;
    let mut opt = AdamW::new(1e-6, cfg.weight_decay);
    let mut cursor = 0usize;
    lr_range_test(
        |lr| {
            opt.lr = lr;
            let batch = batch_of(cursor, &train_idx, cfg.batch_size);
            cursor += cfg.batch_size;
            run_batch_step(&mut scratch, &mut opt, &batch, episode_grads, params_mut)
        },
        1e-7,
        1.0,
        cfg.lr_trials,
    )
}

/// Shared minibatch training loop: deterministic train/validation split,
/// learning-rate sweep on a scratch model, step-decay schedule, gradient
/// accumulation over each batch, and best-validation checkpoint selection.
///
/// `init` builds a freshly initialized model (called once for the sweep and
/// once for the real run). `episode_grads` runs forward+backward on one
/// episode and returns its loss and gradients aligned with the model's
/// trainable [`ParamSet`]; `episode_loss` is the forward-only counterpart.
/// `params_mut` exposes that trainable set for optimizer updates and
/// checkpoint snapshots. If a batch diverges the loop stops and the model is
/// rolled back to the best checkpoint seen so far.
pub(crate) fn run_training_loop<T>(
    init: &dyn Fn() -> crate::error::Result<T>,
    episode_grads: &mut dyn FnMut(&T, usize) -> crate::error::Result<(f64, Vec<Option<ndarray::ArrayD<f64>>>)>,
    episode_loss: &mut dyn FnMut(&T, usize) -> crate::error::Result<f64>,
    params_mut: &dyn Fn(&mut T) -> &mut crate::nn::ParamSet,
    n_episodes: usize,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats),
) -> crate::error::Result<(T, TrainLog)> {
    use crate::error::Error;
    use crate::nn::{step_decay_lr, AdamW};

    if n_episodes < 2 {
        return Err(Error::InvalidArgument {
            context: "run_training_loop",
            detail: format!("need at least 2 episodes, got {n_episodes}"),
        });
    }
    let mut split_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5011d);
    let (train_idx, val_idx) = train_val_split(n_episodes, cfg.val_fraction, &mut split_rng);

    let base_lr = match cfg.lr_override {
        Some(lr) => lr,
        None => run_lr_sweep(init, episode_grads, params_mut, n_episodes, cfg)?.suggested,
    };

    let mut model = init()?;
    let mut opt = AdamW::new(base_lr, cfg.weight_decay);
    let mut log = TrainLog {
        base_lr,
        ..TrainLog::default()
    };
    let mut best_val = f64::INFINITY;
    let mut best_params = params_mut(&mut model).clone();
    let mut best_epoch = 0usize;

    'epochs: for epoch in 0..cfg.epochs {
        opt.lr = step_decay_lr(base_lr, epoch, cfg.epochs);
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (0xE0C0 + epoch as u64));
        let batches = epoch_batches(&train_idx, cfg.batch_size, &mut epoch_rng);
        let mut train_loss = 0.0;
        for batch in &batches {
            match run_batch_step(&mut model, &mut opt, batch, episode_grads, params_mut) {
                Ok(l) => train_loss += l,
                Err(e) if is_divergence(&e) => {
                    *params_mut(&mut model) = best_params.clone();
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        train_loss /= batches.len().max(1) as f64;

        let mut val_loss = 0.0;
        for &i in &val_idx {
            match episode_loss(&model, i) {
                Ok(l) => val_loss += l,
                Err(e) if is_divergence(&e) => {
                    val_loss = f64::INFINITY;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        val_loss /= val_idx.len().max(1) as f64;

        let stats = EpochStats {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr,
        };
        on_epoch(&stats);
        log.epochs.push(stats);
        if val_loss.is_finite() && val_loss < best_val {
            best_val = val_loss;
            best_params = params_mut(&mut model).clone();
            best_epoch = epoch;
        }
    }

    *params_mut(&mut model) = best_params;
    log.best_epoch = best_epoch;
    Ok((model, log))
}
