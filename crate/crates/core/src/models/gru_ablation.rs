//! Ablation baseline: same encoder, latent ODE, and decoder shapes as the
//! stage-1 model, but the per-frame update is a plain GRU correction of the
//! dynamics latent from a short window of raw observations — no intervention
//! latent, no residual mechanism, and no frozen stage. Everything trains
//! jointly on the combined corpus.

use ndarray::{Array2, Array3, Axis, Ix1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::native::{check_param_layout, ConvDecoder, ConvEncoder, NativeArch};
use crate::models::{obs_window, run_training_loop, EpochStats, FilterResult, TrainConfig, TrainLog};
use crate::nn::layers::{GruCell, Mlp};
use crate::nn::ode::rk4_integrate;
use crate::nn::params::{ParamSet, TapeBinding};
use crate::nn::tape::{Tape, Var};
use crate::sim::VoltageSequence;

/// Structural hyperparameters of the GRU baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruArch {
    pub native: NativeArch,
    /// Raw observation frames fed to the per-step input encoder.
    pub obs_frames: usize,
}

impl GruArch {
    pub fn for_native(native: NativeArch) -> Self {
        GruArch {
            native,
            obs_frames: 3,
        }
    }
}

/// GRU-correction baseline model.
#[derive(Debug, Clone)]
pub struct GruBaselineModel {
    pub params: ParamSet,
    pub arch: GruArch,
    enc_z: ConvEncoder,
    f_z: Mlp,
    dec_z: ConvDecoder,
    enc_y: Mlp,
    gru: GruCell,
}

impl GruBaselineModel {
    pub fn init(arch: GruArch, seed: u64) -> Result<Self> {
        arch.native.validate()?;
        if arch.obs_frames == 0 {
            return Err(Error::InvalidArgument {
                context: "GruBaselineModel::init",
                detail: "obs_frames must be positive".into(),
            });
        }
        let na = arch.native;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let enc_z = ConvEncoder::init(&mut params, "enc_z", na.k, na.obs_side, na.d_z, &mut rng);
        let f_z = Mlp::init(&mut params, "f_z", &[na.d_z, 64, 64, na.d_z], &mut rng);
        let dec_z = ConvDecoder::init(&mut params, "dec_z", na.grid_size, na.d_z, &mut rng);
        let enc_in = arch.obs_frames * na.obs_count();
        let enc_y = Mlp::init(&mut params, "enc_y", &[enc_in, 64, 64, na.d_z], &mut rng);
        let gru = GruCell::init(&mut params, "gru", na.d_z, &mut rng);
        Ok(GruBaselineModel {
            params,
            arch,
            enc_z,
            f_z,
            dec_z,
            enc_y,
            gru,
        })
    }

    /// Rebuild from a checkpointed parameter set.
    pub fn from_params(arch: GruArch, loaded: ParamSet) -> Result<Self> {
        let mut model = Self::init(arch, 0)?;
        check_param_layout(&model.params, &loaded)?;
        model.params = loaded;
        Ok(model)
    }

    fn advance_on(&self, tape: &mut Tape, bind: &TapeBinding, z: Var) -> Result<Var> {
        let out = rk4_integrate(
            tape,
            |t, s| Ok(vec![self.f_z.apply(t, bind, s[0])?]),
            &[z],
            0.0,
            1.0,
            self.arch.native.rk4_steps,
        )?;
        Ok(out[0])
    }

    /// Build the filtering graph: predict with the latent ODE, then correct
    /// the latent with a GRU fed by encoded raw observations.
    pub fn filter_on(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        y: &Array2<f64>,
        frames: usize,
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        if frames == 0 {
            return Err(Error::InvalidArgument {
                context: "GruBaselineModel::filter_on",
                detail: "need at least one frame".into(),
            });
        }
        let na = self.arch.native;
        if y.ncols() != na.obs_count() || y.nrows() < frames {
            return Err(Error::ShapeMismatch {
                context: "GruBaselineModel::filter_on",
                expected: format!("at least {frames} observation rows of {}", na.obs_count()),
                got: format!("{} rows of {}", y.nrows(), y.ncols()),
            });
        }
        let window = obs_window(y, 0, na.k, na.obs_side);
        let w_leaf = tape.leaf(window.into_dyn());
        let mut z = self.enc_z.apply(tape, bind, w_leaf)?;
        let mut x_hats = vec![self.dec_z.apply(tape, bind, z)?];
        let mut zs = vec![z];
        let flat_in = self.arch.obs_frames * na.obs_count();
        for i in 1..frames {
            let z_hat = self.advance_on(tape, bind, z)?;
            let obs = obs_window(y, i, self.arch.obs_frames, na.obs_side);
            let obs_leaf = tape.leaf(obs.into_dyn());
            let obs_flat = tape.reshape(obs_leaf, &[flat_in])?;
            let u = self.enc_y.apply(tape, bind, obs_flat)?;
            z = self.gru.apply(tape, bind, z_hat, u)?;
            x_hats.push(self.dec_z.apply(tape, bind, z)?);
            zs.push(z);
        }
        Ok((x_hats, zs))
    }

    /// Episode loss: mean binary cross-entropy over all frames.
    pub fn loss_on(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        y: &Array2<f64>,
        x_bin: &VoltageSequence,
    ) -> Result<Var> {
        let frames = x_bin.shape()[0];
        let (x_hats, _) = self.filter_on(tape, bind, y, frames)?;
        let w = 1.0 / frames as f64;
        let mut total = None;
        for (i, &x_hat) in x_hats.iter().enumerate() {
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
    pub fn filter(&self, y: &Array2<f64>, frames: usize) -> Result<FilterResult> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let (x_hats, zs) = self.filter_on(&mut tape, &bind, y, frames)?;
        let n = self.arch.native.grid_size;
        let mut x_hat = Array3::zeros((frames, n, n));
        let mut z = Array2::zeros((frames, self.arch.native.d_z));
        for i in 0..frames {
            x_hat
                .index_axis_mut(Axis(0), i)
                .assign(&tape.value(x_hats[i]).view().into_dimensionality::<Ix2>().expect("frame"));
            z.row_mut(i)
                .assign(&tape.value(zs[i]).view().into_dimensionality::<Ix1>().expect("latent"));
        }
        Ok(FilterResult {
            x_hat,
            z,
            a: None,
            residuals: None,
        })
    }

    /// Forward-only episode loss (validation).
    pub fn episode_loss(&self, y: &Array2<f64>, x_bin: &VoltageSequence) -> Result<f64> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let loss = self.loss_on(&mut tape, &bind, y, x_bin)?;
        Ok(tape.scalar(loss))
    }

    /// Forward+backward on one episode; gradients align with `self.params`.
    pub fn episode_grads(
        &self,
        y: &Array2<f64>,
        x_bin: &VoltageSequence,
    ) -> Result<(f64, Vec<Option<ndarray::ArrayD<f64>>>)> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let loss = self.loss_on(&mut tape, &bind, y, x_bin)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        Ok((value, bind.gradients(&tape)))
    }
}

/// Train the GRU baseline end to end (no frozen stage).
pub fn train_gru_baseline(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    arch: GruArch,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(GruBaselineModel, TrainLog)> {
    if x_bin.len() != y.len() {
        return Err(Error::InvalidArgument {
            context: "train_gru_baseline",
            detail: format!("{} episodes but {} observation blocks", x_bin.len(), y.len()),
        });
    }
    run_training_loop(
        &|| GruBaselineModel::init(arch, cfg.seed),
        &mut |model: &GruBaselineModel, i: usize| model.episode_grads(&y[i], &x_bin[i]),
        &mut |model: &GruBaselineModel, i: usize| model.episode_loss(&y[i], &x_bin[i]),
        &|model: &mut GruBaselineModel| &mut model.params,
        x_bin.len(),
        cfg,
        &mut on_epoch,
    )
}

/// Run only the learning-rate range test for the ablation.
pub fn lr_find_gru_baseline(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    arch: GruArch,
    cfg: &TrainConfig,
) -> Result<crate::nn::LrRangeResult> {
    crate::models::run_lr_sweep(
        &|| GruBaselineModel::init(arch, cfg.seed),
        &mut |model: &GruBaselineModel, i: usize| model.episode_grads(&y[i], &x_bin[i]),
        &|model: &mut GruBaselineModel| &mut model.params,
        x_bin.len(),
        cfg,
    )
}
