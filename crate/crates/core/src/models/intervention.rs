//! Stage-2 model: an intervention latent rides alongside the frozen stage-1
//! dynamics. Between frames the pair `[a, z]` integrates jointly with
//! `da/dt = F_a(a)` and `dz/dt = F_z(z) + F_a(a)`; at each frame the filter
//! rolls the frozen dynamics forward hypothetically, compares the decoded
//! frames against the actual observations, and feeds the absolute residuals
//! through an encoder and a GRU to update `a` — never `z` directly. With the
//! coupling field at its all-zero initialization the filter reduces exactly
//! to the stage-1 reconstruction, bit for bit.

use ndarray::{Array2, Array3, ArrayD, Axis, Ix1, Ix2, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::ForwardOperator;
use crate::models::native::{check_param_layout, NativeModel};
use crate::models::{run_training_loop, EpochStats, FilterResult, TrainConfig, TrainLog};
use crate::nn::layers::{GruCell, Mlp};
use crate::nn::ode::rk4_integrate;
use crate::nn::params::{ParamSet, TapeBinding};
use crate::nn::tape::{Tape, Var};
use crate::sim::VoltageSequence;

/// Structural hyperparameters of the stage-2 filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InterventionArch {
    pub native: crate::models::native::NativeArch,
    /// Intervention latent dimensionality.
    pub d_a: usize,
}

/// Intervention filter over a frozen stage-1 model.
#[derive(Debug, Clone)]
pub struct InterventionModel {
    /// Frozen stage-1 model (all arrays non-trainable).
    pub native: NativeModel,
    /// Trainable stage-2 parameters: coupling field, residual encoder, GRU.
    pub stage2: ParamSet,
    pub arch: InterventionArch,
    f_a: Mlp,
    enc_a: Mlp,
    g_a: GruCell,
}

/// On-tape filtering pass over one episode.
pub struct FilterVars {
    pub x_hat: Vec<Var>,
    pub z: Vec<Var>,
    pub a: Vec<Var>,
    /// Per frame, the `k` residual parts fed to the encoder.
    pub residuals: Vec<Vec<Var>>,
}

impl InterventionModel {
    /// Wrap a trained stage-1 model. Its parameters are frozen; the coupling
    /// field starts with an all-zero output layer so the filter initially
    /// reproduces the stage-1 reconstruction exactly.
    pub fn init(mut native: NativeModel, d_a: usize, seed: u64) -> Result<Self> {
        if d_a == 0 {
            return Err(Error::InvalidArgument {
                context: "InterventionModel::init",
                detail: "d_a must be positive".into(),
            });
        }
        native.params.freeze_all();
        let arch = InterventionArch {
            native: native.arch,
            d_a,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stage2 = ParamSet::new();
        let f_a = Mlp::init_zero_output(&mut stage2, "f_a", &[d_a, 64, 64, d_a], &mut rng);
        let enc_in = arch.native.k * arch.native.obs_count();
        let enc_a = Mlp::init(&mut stage2, "enc_a", &[enc_in, 64, 64, d_a], &mut rng);
        let g_a = GruCell::init(&mut stage2, "g_a", d_a, &mut rng);
        Ok(InterventionModel {
            native,
            stage2,
            arch,
            f_a,
            enc_a,
            g_a,
        })
    }

    /// Rebuild from checkpointed stage-2 parameters.
    pub fn from_params(native: NativeModel, d_a: usize, stage2: ParamSet) -> Result<Self> {
        let mut model = Self::init(native, d_a, 0)?;
        check_param_layout(&model.stage2, &stage2)?;
        model.stage2 = stage2;
        Ok(model)
    }

    /// Hash of the frozen stage-1 weights (must be invariant under stage-2
    /// training).
    pub fn native_hash(&self) -> String {
        self.native.params.full_hash()
    }

    fn check_operator(&self, op: &ForwardOperator, y: &Array2<f64>, frames: usize) -> Result<()> {
        let m = self.arch.native.obs_count();
        if op.grid_size != self.arch.native.grid_size || op.h.nrows() != m {
            return Err(Error::ShapeMismatch {
                context: "InterventionModel",
                expected: format!(
                    "operator for a {0}×{0} grid with {1} electrodes",
                    self.arch.native.grid_size, m
                ),
                got: format!("grid {} with {} electrodes", op.grid_size, op.h.nrows()),
            });
        }
        if y.ncols() != m || y.nrows() < frames {
            return Err(Error::ShapeMismatch {
                context: "InterventionModel",
                expected: format!("at least {frames} observation rows of {m}"),
                got: format!("{} rows of {}", y.nrows(), y.ncols()),
            });
        }
        Ok(())
    }

    /// Build the full filtering graph for one episode. `bn` binds the frozen
    /// stage-1 parameters, `bs` the trainable stage-2 parameters.
    pub fn filter_on(
        &self,
        tape: &mut Tape,
        bn: &TapeBinding,
        bs: &TapeBinding,
        y: &Array2<f64>,
        op: &ForwardOperator,
        frames: usize,
    ) -> Result<FilterVars> {
        if frames == 0 {
            return Err(Error::InvalidArgument {
                context: "InterventionModel::filter_on",
                detail: "need at least one frame".into(),
            });
        }
        self.check_operator(op, y, frames)?;
        let k = self.arch.native.k;
        let n = self.arch.native.grid_size;
        let m = self.arch.native.obs_count();

        let h_leaf = tape.leaf(op.h.clone().into_dyn());
        let zero_resid = tape.leaf(ArrayD::zeros(IxDyn(&[m])));

        let mut z = self.native.encode_window_on(tape, bn, y, 0)?;
        let mut a = tape.leaf(ArrayD::zeros(IxDyn(&[self.arch.d_a])));
        let x0 = self.native.decode_on(tape, bn, z)?;
        let mut vars = FilterVars {
            x_hat: vec![x0],
            z: vec![z],
            a: vec![a],
            residuals: vec![vec![zero_resid; k]],
        };

        for i in 1..frames {
            // Joint prediction of both latents across the frame interval.
            let pred = rk4_integrate(
                tape,
                |t, s| {
                    let da = self.f_a.apply(t, bs, s[0])?;
                    let fz = self.native.field_on(t, bn, s[1])?;
                    let dz = t.add(fz, da)?;
                    Ok(vec![da, dz])
                },
                &[a, z],
                0.0,
                1.0,
                self.arch.native.rk4_steps,
            )?;
            let (a_hat, z_hat) = (pred[0], pred[1]);

            // Hypothetical dynamics-only rollout from the previous filtered
            // latent; its decoded frames are compared against what was
            // actually observed.
            let mut h_state = z;
            let mut parts = Vec::with_capacity(k);
            for j in 0..k {
                h_state = self.native.advance_on(tape, bn, h_state)?;
                let frame = i + j;
                if frame < frames {
                    let x_z = self.native.decode_on(tape, bn, h_state)?;
                    let flat = tape.reshape(x_z, &[n * n])?;
                    let y_hat = tape.matvec(h_leaf, flat)?;
                    let y_leaf = tape.leaf(y.row(frame).to_owned().into_dyn());
                    let diff = tape.sub(y_hat, y_leaf)?;
                    parts.push(tape.abs(diff));
                } else {
                    parts.push(zero_resid);
                }
            }
            let stacked = tape.concat(&parts)?;
            let a_enc = self.enc_a.apply(tape, bs, stacked)?;
            a = self.g_a.apply(tape, bs, a_hat, a_enc)?;
            z = z_hat;

            vars.x_hat.push(self.native.decode_on(tape, bn, z)?);
            vars.z.push(z);
            vars.a.push(a);
            vars.residuals.push(parts);
        }
        Ok(vars)
    }

    /// Episode loss: mean binary cross-entropy over all frames, uniformly
    /// weighted.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        bn: &TapeBinding,
        bs: &TapeBinding,
        y: &Array2<f64>,
        x_bin: &VoltageSequence,
        op: &ForwardOperator,
    ) -> Result<Var> {
        let frames = x_bin.shape()[0];
        let vars = self.filter_on(tape, bn, bs, y, op, frames)?;
        let w = 1.0 / frames as f64;
        let mut total = None;
        for (i, &x_hat) in vars.x_hat.iter().enumerate() {
            let target = tape.leaf(x_bin.index_axis(Axis(0), i).to_owned().into_dyn());
            let b = tape.bce(x_hat, target)?;
            total = Some(match total {
                None => tape.scale(b, w),
                Some(acc) => tape.add_scaled(acc, b, w)?,
            });
        }
        Ok(total.expect("at least one frame"))
    }

    /// Run the filter over an episode (no gradients).
    pub fn filter(&self, y: &Array2<f64>, op: &ForwardOperator, frames: usize) -> Result<FilterResult> {
        let mut tape = Tape::new();
        let bn = TapeBinding::bind(&mut tape, &self.native.params);
        let bs = TapeBinding::bind(&mut tape, &self.stage2);
        let vars = self.filter_on(&mut tape, &bn, &bs, y, op, frames)?;

        let n = self.arch.native.grid_size;
        let k = self.arch.native.k;
        let m = self.arch.native.obs_count();
        let mut x_hat = Array3::zeros((frames, n, n));
        let mut z = Array2::zeros((frames, self.arch.native.d_z));
        let mut a = Array2::zeros((frames, self.arch.d_a));
        let mut residuals = Array3::zeros((frames, k, m));
        for i in 0..frames {
            x_hat
                .index_axis_mut(Axis(0), i)
                .assign(&tape.value(vars.x_hat[i]).view().into_dimensionality::<Ix2>().expect("frame"));
            z.row_mut(i)
                .assign(&tape.value(vars.z[i]).view().into_dimensionality::<Ix1>().expect("latent"));
            a.row_mut(i)
                .assign(&tape.value(vars.a[i]).view().into_dimensionality::<Ix1>().expect("latent"));
            for (j, &part) in vars.residuals[i].iter().enumerate() {
                residuals
                    .index_axis_mut(Axis(0), i)
                    .index_axis_mut(Axis(0), j)
                    .assign(&tape.value(part).view().into_dimensionality::<Ix1>().expect("residual"));
            }
        }
        Ok(FilterResult {
            x_hat,
            z,
            a: Some(a),
            residuals: Some(residuals),
        })
    }

    /// Forward-only episode loss (validation).
    pub fn episode_loss(&self, y: &Array2<f64>, x_bin: &VoltageSequence, op: &ForwardOperator) -> Result<f64> {
        let mut tape = Tape::new();
        let bn = TapeBinding::bind(&mut tape, &self.native.params);
        let bs = TapeBinding::bind(&mut tape, &self.stage2);
        let loss = self.loss_on(&mut tape, &bn, &bs, y, x_bin, op)?;
        Ok(tape.scalar(loss))
    }

    /// Forward+backward on one episode; gradients align with `self.stage2`.
    pub fn episode_grads(
        &self,
        y: &Array2<f64>,
        x_bin: &VoltageSequence,
        op: &ForwardOperator,
    ) -> Result<(f64, Vec<Option<ArrayD<f64>>>)> {
        let mut tape = Tape::new();
        let bn = TapeBinding::bind(&mut tape, &self.native.params);
        let bs = TapeBinding::bind(&mut tape, &self.stage2);
        let loss = self.loss_on(&mut tape, &bn, &bs, y, x_bin, op)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        Ok((value, bs.gradients(&tape)))
    }
}

/// Train the stage-2 filter on binarized episodes with observations. Only
/// the coupling field, residual encoder, and GRU receive updates; the
/// stage-1 weights stay bit-frozen throughout.
pub fn train_intervention(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    op: &ForwardOperator,
    native: NativeModel,
    d_a: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(InterventionModel, TrainLog)> {
    if x_bin.len() != y.len() {
        return Err(Error::InvalidArgument {
            context: "train_intervention",
            detail: format!("{} episodes but {} observation blocks", x_bin.len(), y.len()),
        });
    }
    run_training_loop(
        &|| InterventionModel::init(native.clone(), d_a, cfg.seed),
        &mut |model: &InterventionModel, i: usize| model.episode_grads(&y[i], &x_bin[i], op),
        &mut |model: &InterventionModel, i: usize| model.episode_loss(&y[i], &x_bin[i], op),
        &|model: &mut InterventionModel| &mut model.stage2,
        x_bin.len(),
        cfg,
        &mut on_epoch,
    )
}

/// Run only the learning-rate range test for stage 2.
pub fn lr_find_intervention(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    op: &ForwardOperator,
    native: NativeModel,
    d_a: usize,
    cfg: &TrainConfig,
) -> Result<crate::nn::LrRangeResult> {
    crate::models::run_lr_sweep(
        &|| InterventionModel::init(native.clone(), d_a, cfg.seed),
        &mut |model: &InterventionModel, i: usize| model.episode_grads(&y[i], &x_bin[i], op),
        &|model: &mut InterventionModel| &mut model.stage2,
        x_bin.len(),
        cfg,
    )
}
