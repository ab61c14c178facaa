//! AdamW with decoupled weight decay, the learning-rate range test, and the
//! step-decay schedule used by both training stages.

use ndarray::ArrayD;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

/// AdamW: Adam moments plus weight decay applied directly to the weights
/// (not folded into the gradient).
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<Option<(ArrayD<f64>, ArrayD<f64>)>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update. Gradient slots must be index-aligned with the
    /// ParamSet; frozen arrays and arrays without gradients are untouched
    /// (no decay either — frozen means bit-frozen).
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Option<ArrayD<f64>>]) {
        assert_eq!(params.len(), grads.len(), "gradient buffer misaligned");
        if self.moments.len() != params.len() {
            self.moments.resize(params.len(), None);
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (idx, g) in grads.iter().enumerate() {
            let entry = params.get_mut(idx);
            if !entry.trainable {
                continue;
            }
            let Some(g) = g else { continue };
            let (m, v) = self.moments[idx].get_or_insert_with(|| {
                (ArrayD::zeros(g.raw_dim()), ArrayD::zeros(g.raw_dim()))
            });
            m.zip_mut_with(g, |mi, &gi| *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi);
            v.zip_mut_with(g, |vi, &gi| *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi);
            let lr = self.lr;
            let wd = self.weight_decay;
            let eps = self.eps;
            ndarray::Zip::from(&mut entry.data).and(&*m).and(&*v).for_each(|w, &mi, &vi| {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps) + lr * wd * *w;
            });
        }
    }
}

/// Step-decay schedule: halve the base rate at 60% and again at 85% of the
/// epoch budget.
pub fn step_decay_lr(base_lr: f64, epoch: usize, total_epochs: usize) -> f64 {
    let frac = (epoch as f64 + 0.5) / total_epochs.max(1) as f64;
    if frac >= 0.85 {
        base_lr * 0.25
    } else if frac >= 0.60 {
        base_lr * 0.5
    } else {
        base_lr
    }
}

/// Outcome of a learning-rate sweep.
#[derive(Debug, Clone)]
pub struct LrRangeResult {
    /// Learning rate at the steepest smoothed loss descent.
    pub suggested: f64,
    /// Rates actually tried (may stop early on divergence).
    pub lrs: Vec<f64>,
    /// Bias-corrected exponentially smoothed losses, aligned with `lrs`.
    pub smoothed: Vec<f64>,
}

/// Exponentially sweep the learning rate over `[lr_min, lr_max]` in
/// `n_trials` training steps, smooth the recorded losses, and return the
/// rate at the steepest smoothed descent. The sweep stops at the divergence
/// point (smoothed loss above 4× the best seen), and the suggestion never
/// lies beyond it.
///
/// `train_step` performs one real optimization step at the given rate and
/// returns the loss observed *before* that step's update takes effect (or
/// any consistent per-step loss); the caller is responsible for resetting
/// model state afterwards.
pub fn lr_range_test(
    mut train_step: impl FnMut(f64) -> Result<f64>,
    lr_min: f64,
    lr_max: f64,
    n_trials: usize,
) -> Result<LrRangeResult> {
    if n_trials < 10 {
        return Err(Error::InvalidArgument {
            context: "lr_range_test",
            detail: format!("need at least 10 trials, got {n_trials}"),
        });
    }
    if !(lr_min > 0.0 && lr_max > lr_min) {
        return Err(Error::InvalidArgument {
            context: "lr_range_test",
            detail: format!("need 0 < lr_min < lr_max, got [{lr_min}, {lr_max}]"),
        });
    }
    let ratio = lr_max / lr_min;
    let beta = 0.8;
    let mut ema = 0.0;
    let mut lrs = Vec::with_capacity(n_trials);
    let mut smoothed = Vec::with_capacity(n_trials);
    let mut best = f64::INFINITY;
    for i in 0..n_trials {
        let frac = i as f64 / (n_trials - 1) as f64;
        let lr = lr_min * ratio.powf(frac);
        let loss = match train_step(lr) {
            Ok(l) if l.is_finite() => l,
            _ => break, // divergence ends the sweep
        };
        ema = beta * ema + (1.0 - beta) * loss;
        let s = ema / (1.0 - beta.powi(i as i32 + 1));
        if s > 4.0 * best && i > 0 {
            break;
        }
        best = best.min(s);
        lrs.push(lr);
        smoothed.push(s);
    }
    if lrs.is_empty() {
        return Err(Error::LrSweepDiverged { lr_max });
    }
    // Steepest descent of the smoothed curve; fall back to the minimum if
    // the curve never decreases.
    let mut best_drop = 0.0;
    let mut best_idx = None;
    for i in 1..smoothed.len() {
        let drop = smoothed[i] - smoothed[i - 1];
        if drop < best_drop {
            best_drop = drop;
            best_idx = Some(i);
        }
    }
    let idx = best_idx.unwrap_or_else(|| {
        smoothed
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite losses"))
            .map(|(i, _)| i)
            .expect("non-empty sweep")
    });
    Ok(LrRangeResult {
        suggested: lrs[idx],
        lrs,
        smoothed,
    })
}
