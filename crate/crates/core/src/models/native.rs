//! Stage-1 model: a convolutional encoder compresses the first observation
//! frames into a latent state, a neural vector field advances that latent
//! with RK4 through time, and a transposed-convolution decoder emits frame
//! probabilities. The whole episode is reconstructed from the opening window
//! alone — later observations never enter this model.

use ndarray::{Array1, Array2, Array3, Axis, Ix1, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{obs_window, run_training_loop, EpochStats, TrainConfig, TrainLog};
use crate::nn::layers::{Conv2dLayer, ConvTranspose2dLayer, Dense, Mlp};
use crate::nn::ode::rk4_integrate;
use crate::nn::params::{ParamSet, TapeBinding};
use crate::nn::tape::{Tape, Var};
use crate::sim::VoltageSequence;

/// Linear leak rate of the latent vector field; see
/// [`NativeModel::field_on`].
pub const LATENT_LEAK: f64 = 0.1;

/// Half-width of the encoder's latent output range: initial latents live in
/// `(-ENCODER_SPAN, ENCODER_SPAN)` per dimension, matching the compact set
/// the leaky vector field keeps trajectories in.
pub const ENCODER_SPAN: f64 = 3.0;

/// Structural hyperparameters of the stage-1 model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NativeArch {
    /// Source grid side length `N`; decoded frames are `N × N`.
    pub grid_size: usize,
    /// Electrode lattice side length; observation rows have `obs_side²`
    /// entries.
    pub obs_side: usize,
    /// Number of opening frames the encoder sees.
    pub k: usize,
    /// Latent dimensionality.
    pub d_z: usize,
    /// RK4 steps per frame interval.
    pub rk4_steps: usize,
}

impl NativeArch {
    /// Desk-scale default: 32×32 grid, 8×8 electrodes, five-frame window,
    /// twelve latent dimensions, four RK4 steps per frame.
    pub fn for_grid(grid_size: usize, obs_side: usize) -> Self {
        NativeArch {
            grid_size,
            obs_side,
            k: 5,
            d_z: 12,
            rk4_steps: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::InvalidArgument {
            context: "NativeArch",
            detail,
        };
        if self.grid_size == 0 || self.grid_size % 8 != 0 {
            return Err(bad(format!(
                "grid_size must be a positive multiple of 8 (three 2× upsamplings), got {}",
                self.grid_size
            )));
        }
        if self.obs_side == 0 || self.obs_side % 8 != 0 {
            return Err(bad(format!(
                "obs_side must be a positive multiple of 8 (three stride-2 convolutions), got {}",
                self.obs_side
            )));
        }
        if self.k == 0 || self.d_z == 0 || self.rk4_steps == 0 {
            return Err(bad(format!(
                "k, d_z and rk4_steps must all be positive, got {} / {} / {}",
                self.k, self.d_z, self.rk4_steps
            )));
        }
        Ok(())
    }

    /// Electrode count `M` = obs_side².
    pub fn obs_count(&self) -> usize {
        self.obs_side * self.obs_side
    }
}

/// Two fixed channels of normalized row/column coordinates in `[-1, 1]`.
/// Concatenated into convolution inputs so that spatial position is locally
/// available: activation fronts and rings become local functions of
/// (coordinates, latent) instead of patterns a translation-equivariant
/// stack would have to synthesize globally.
fn coord_channels(h: usize, w: usize) -> Array3<f64> {
    Array3::from_shape_fn((2, h, w), |(c, i, j)| {
        let (n, idx) = if c == 0 { (h, i) } else { (w, j) };
        if n <= 1 {
            0.0
        } else {
            2.0 * idx as f64 / (n - 1) as f64 - 1.0
        }
    })
}

/// Concatenate `(channels, h, w)` stacks along the channel axis. Channels
/// lead in row-major layout, so this is a flat 1-D concatenation followed by
/// a reshape.
fn concat_channels(tape: &mut Tape, parts: &[(Var, usize)], h: usize, w: usize) -> Result<Var> {
    let mut flats = Vec::with_capacity(parts.len());
    let mut total = 0;
    for &(v, c) in parts {
        flats.push(tape.reshape(v, &[c * h * w])?);
        total += c;
    }
    let cat = tape.concat(&flats)?;
    tape.reshape(cat, &[total, h, w])
}

/// Three stride-2 convolutions over the observation window plus coordinate
/// channels, then a dense projection to the latent.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    c1: Conv2dLayer,
    c2: Conv2dLayer,
    c3: Conv2dLayer,
    dense: Dense,
    pub side: usize,
    in_frames: usize,
    coords: Array3<f64>,
}

impl ConvEncoder {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        in_frames: usize,
        side: usize,
        d_z: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let c1 = Conv2dLayer::init(params, &format!("{name}.c1"), in_frames + 2, 16, 3, 2, 1, rng);
        let c2 = Conv2dLayer::init(params, &format!("{name}.c2"), 16, 32, 3, 2, 1, rng);
        let c3 = Conv2dLayer::init(params, &format!("{name}.c3"), 32, 64, 3, 2, 1, rng);
        let s8 = side / 8;
        let dense = Dense::init(params, &format!("{name}.dense"), 64 * s8 * s8, d_z, rng);
        ConvEncoder {
            c1,
            c2,
            c3,
            dense,
            side,
            in_frames,
            coords: coord_channels(side, side),
        }
    }

    /// `window` has shape `(in_frames, side, side)`; output is the latent
    /// vector, tanh-bounded to `(-ENCODER_SPAN, ENCODER_SPAN)` per entry.
    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, window: Var) -> Result<Var> {
        let coords = tape.leaf(self.coords.clone().into_dyn());
        let h = concat_channels(
            tape,
            &[(window, self.in_frames), (coords, 2)],
            self.side,
            self.side,
        )?;
        let h = self.c1.apply(tape, bind, h)?;
        let h = tape.tanh(h);
        let h = self.c2.apply(tape, bind, h)?;
        let h = tape.tanh(h);
        let h = self.c3.apply(tape, bind, h)?;
        let h = tape.tanh(h);
        let flat = tape.reshape(h, &[self.dense.in_dim])?;
        let head = self.dense.apply(tape, bind, flat)?;
        let bounded = tape.tanh(head);
        Ok(tape.scale(bounded, ENCODER_SPAN))
    }
}

/// Broadcast channels fed to every decoder level alongside the upsampled
/// features and coordinates; each is a learned scalar function of the
/// latent spread over space.
const DEC_BROADCAST: usize = 6;

/// Dense expansion then three stride-2 transposed convolutions up to the
/// full grid, with a sigmoid head so outputs are probabilities. Every level
/// also sees fixed coordinate channels and `DEC_BROADCAST` latent-derived
/// broadcast channels, so position-dependent structure is computed locally.
#[derive(Debug, Clone)]
pub struct ConvDecoder {
    dense: Dense,
    b1: Dense,
    b2: Dense,
    b3: Dense,
    t1: ConvTranspose2dLayer,
    t2: ConvTranspose2dLayer,
    t3: ConvTranspose2dLayer,
    pub grid_size: usize,
}

impl ConvDecoder {
    pub fn init(params: &mut ParamSet, name: &str, grid_size: usize, d_z: usize, rng: &mut ChaCha8Rng) -> Self {
        let s8 = grid_size / 8;
        let aug = 2 + DEC_BROADCAST;
        let dense = Dense::init(params, &format!("{name}.dense"), d_z, 32 * s8 * s8, rng);
        let b1 = Dense::init(params, &format!("{name}.b1"), d_z, DEC_BROADCAST, rng);
        let b2 = Dense::init(params, &format!("{name}.b2"), d_z, DEC_BROADCAST, rng);
        let b3 = Dense::init(params, &format!("{name}.b3"), d_z, DEC_BROADCAST, rng);
        let t1 = ConvTranspose2dLayer::init(params, &format!("{name}.t1"), 32 + aug, 16, 3, 2, 1, 1, rng);
        let t2 = ConvTranspose2dLayer::init(params, &format!("{name}.t2"), 16 + aug, 8, 3, 2, 1, 1, rng);
        let t3 = ConvTranspose2dLayer::init(params, &format!("{name}.t3"), 8 + aug, 1, 3, 2, 1, 1, rng);
        ConvDecoder {
            dense,
            b1,
            b2,
            b3,
            t1,
            t2,
            t3,
            grid_size,
        }
    }

    /// Append coordinate channels and latent broadcast channels to a
    /// `(channels, side, side)` feature stack.
    fn augment(
        &self,
        tape: &mut Tape,
        bind: &TapeBinding,
        h: Var,
        channels: usize,
        side: usize,
        z: Var,
        head: &Dense,
    ) -> Result<Var> {
        let coords = tape.leaf(coord_channels(side, side).into_dyn());
        let scalars = head.apply(tape, bind, z)?;
        let col = tape.reshape(scalars, &[DEC_BROADCAST, 1])?;
        let ones = tape.leaf(Array2::<f64>::ones((1, side * side)).into_dyn());
        let spread = tape.matmul(col, ones)?;
        let bcast = tape.reshape(spread, &[DEC_BROADCAST, side, side])?;
        concat_channels(
            tape,
            &[(h, channels), (coords, 2), (bcast, DEC_BROADCAST)],
            side,
            side,
        )
    }

    /// Latent vector in, `(grid, grid)` frame of probabilities out.
    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, z: Var) -> Result<Var> {
        let s8 = self.grid_size / 8;
        let h = self.dense.apply(tape, bind, z)?;
        let h = tape.tanh(h);
        let h = tape.reshape(h, &[32, s8, s8])?;
        let h = self.augment(tape, bind, h, 32, s8, z, &self.b1)?;
        let h = self.t1.apply(tape, bind, h)?;
        let h = tape.tanh(h);
        let h = self.augment(tape, bind, h, 16, 2 * s8, z, &self.b2)?;
        let h = self.t2.apply(tape, bind, h)?;
        let h = tape.tanh(h);
        let h = self.augment(tape, bind, h, 8, 4 * s8, z, &self.b3)?;
        let h = self.t3.apply(tape, bind, h)?;
        let h = tape.sigmoid(h);
        tape.reshape(h, &[self.grid_size, self.grid_size])
    }
}

/// The stage-1 latent-ODE autoencoder.
#[derive(Debug, Clone)]
pub struct NativeModel {
    pub params: ParamSet,
    pub arch: NativeArch,
    enc_z: ConvEncoder,
    f_z: Mlp,
    dec_z: ConvDecoder,
}

impl NativeModel {
    /// Fresh random initialization (ChaCha8-seeded, deterministic).
    pub fn init(arch: NativeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let enc_z = ConvEncoder::init(&mut params, "enc_z", arch.k, arch.obs_side, arch.d_z, &mut rng);
        let f_z = Mlp::init(&mut params, "f_z", &[arch.d_z, 64, 64, arch.d_z], &mut rng);
        let dec_z = ConvDecoder::init(&mut params, "dec_z", arch.grid_size, arch.d_z, &mut rng);
        Ok(NativeModel {
            params,
            arch,
            enc_z,
            f_z,
            dec_z,
        })
    }

    /// Rebuild a model around an existing parameter set (checkpoint load).
    /// Names and shapes must match what [`NativeModel::init`] produces for
    /// this architecture.
    pub fn from_params(arch: NativeArch, loaded: ParamSet) -> Result<Self> {
        let mut model = Self::init(arch, 0)?;
        check_param_layout(&model.params, &loaded)?;
        model.params = loaded;
        Ok(model)
    }

    /// Latent vector field `F_z` as a tape op: a tanh-bounded learned drift
    /// with a small linear leak. Bounded drift plus leak keeps every latent
    /// trajectory inside the ball `‖z‖_∞ ≤ max(‖z_0‖_∞, 1/LATENT_LEAK)`, so
    /// long rollouts cannot run away into regions where the decoder
    /// saturates and gradients vanish.
    pub fn field_on(&self, tape: &mut Tape, bind: &TapeBinding, z: Var) -> Result<Var> {
        let drift = self.f_z.apply(tape, bind, z)?;
        let bounded = tape.tanh(drift);
        tape.add_scaled(bounded, z, -LATENT_LEAK)
    }

    /// Encode observation frames `start .. start+k` into a latent.
    pub fn encode_window_on(&self, tape: &mut Tape, bind: &TapeBinding, y: &Array2<f64>, start: usize) -> Result<Var> {
        if y.ncols() != self.arch.obs_count() {
            return Err(Error::ShapeMismatch {
                context: "NativeModel::encode_window_on",
                expected: format!("observation rows of {}", self.arch.obs_count()),
                got: format!("{}", y.ncols()),
            });
        }
        let window = obs_window(y, start, self.arch.k, self.arch.obs_side);
        let leaf = tape.leaf(window.into_dyn());
        self.enc_z.apply(tape, bind, leaf)
    }

    /// Advance the latent one frame interval under `F_z` alone.
    pub fn advance_on(&self, tape: &mut Tape, bind: &TapeBinding, z: Var) -> Result<Var> {
        let out = rk4_integrate(
            tape,
            |t, s| Ok(vec![self.field_on(t, bind, s[0])?]),
            &[z],
            0.0,
            1.0,
            self.arch.rk4_steps,
        )?;
        Ok(out[0])
    }

    /// Latent trajectory `[z_0, …, z_{frames−1}]` under `F_z`.
    pub fn rollout_on(&self, tape: &mut Tape, bind: &TapeBinding, z0: Var, frames: usize) -> Result<Vec<Var>> {
        let mut zs = Vec::with_capacity(frames.max(1));
        zs.push(z0);
        for _ in 1..frames {
            let next = self.advance_on(tape, bind, *zs.last().expect("non-empty"))?;
            zs.push(next);
        }
        Ok(zs)
    }

    /// Decode one latent into a frame of probabilities.
    pub fn decode_on(&self, tape: &mut Tape, bind: &TapeBinding, z: Var) -> Result<Var> {
        self.dec_z.apply(tape, bind, z)
    }

    /// Episode loss: `beta`-weighted binary cross-entropy on the first frame
    /// plus the mean over the remaining frames.
    pub fn loss_on(&self, tape: &mut Tape, bind: &TapeBinding, y: &Array2<f64>, x_bin: &VoltageSequence, beta: f64) -> Result<Var> {
        let frames = x_bin.shape()[0];
        if frames == 0 {
            return Err(Error::InvalidArgument {
                context: "NativeModel::loss_on",
                detail: "empty episode".into(),
            });
        }
        let z0 = self.encode_window_on(tape, bind, y, 0)?;
        let zs = self.rollout_on(tape, bind, z0, frames)?;
        let mut total = None;
        for (i, &z) in zs.iter().enumerate() {
            let x_hat = self.decode_on(tape, bind, z)?;
            let target = tape.leaf(x_bin.index_axis(Axis(0), i).to_owned().into_dyn());
            let b = tape.bce(x_hat, target)?;
            let weight = if i == 0 {
                beta
            } else {
                1.0 / (frames - 1) as f64
            };
            total = Some(match total {
                None => tape.scale(b, weight),
                Some(acc) => tape.add_scaled(acc, b, weight)?,
            });
        }
        Ok(total.expect("at least one frame"))
    }

    /// Encode the opening window of an episode (no gradients).
    pub fn encode_initial(&self, y: &Array2<f64>) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let z = self.encode_window_on(&mut tape, &bind, y, 0)?;
        Ok(tape
            .value(z)
            .clone()
            .into_dimensionality::<Ix1>()
            .expect("latent is a vector"))
    }

    /// Integrate the latent forward `steps` frame intervals; returns
    /// `steps + 1` rows starting with `z0` itself.
    pub fn rollout_native(&self, z0: &Array1<f64>, steps: usize) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let z0v = tape.leaf(z0.clone().into_dyn());
        let zs = self.rollout_on(&mut tape, &bind, z0v, steps + 1)?;
        let mut out = Array2::zeros((steps + 1, self.arch.d_z));
        for (i, &z) in zs.iter().enumerate() {
            out.row_mut(i).assign(&tape.value(z).view().into_dimensionality::<Ix1>().expect("latent"));
        }
        Ok(out)
    }

    /// Decode one latent (no gradients).
    pub fn decode(&self, z: &Array1<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let zv = tape.leaf(z.clone().into_dyn());
        let x = self.decode_on(&mut tape, &bind, zv)?;
        Ok(tape
            .value(x)
            .clone()
            .into_dimensionality::<Ix2>()
            .expect("frame is 2-D"))
    }

    /// Reconstruct `frames` frames of an episode from the opening
    /// observation window alone. Returns decoded probabilities
    /// `(frames, N, N)` and the latent trajectory `(frames, d_z)`.
    pub fn reconstruct(&self, y: &Array2<f64>, frames: usize) -> Result<(Array3<f64>, Array2<f64>)> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let z0 = self.encode_window_on(&mut tape, &bind, y, 0)?;
        let zs = self.rollout_on(&mut tape, &bind, z0, frames)?;
        let n = self.arch.grid_size;
        let mut x_hat = Array3::zeros((frames, n, n));
        let mut z_traj = Array2::zeros((frames, self.arch.d_z));
        for (i, &z) in zs.iter().enumerate() {
            let x = self.decode_on(&mut tape, &bind, z)?;
            x_hat
                .index_axis_mut(Axis(0), i)
                .assign(&tape.value(x).view().into_dimensionality::<Ix2>().expect("frame"));
            z_traj
                .row_mut(i)
                .assign(&tape.value(z).view().into_dimensionality::<Ix1>().expect("latent"));
        }
        Ok((x_hat, z_traj))
    }

    /// Forward-only episode loss (validation).
    pub fn episode_loss(&self, y: &Array2<f64>, x_bin: &VoltageSequence, beta: f64) -> Result<f64> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let loss = self.loss_on(&mut tape, &bind, y, x_bin, beta)?;
        Ok(tape.scalar(loss))
    }

    /// Forward+backward on one episode; gradients align with `self.params`.
    pub fn episode_grads(&self, y: &Array2<f64>, x_bin: &VoltageSequence, beta: f64) -> Result<(f64, Vec<Option<ndarray::ArrayD<f64>>>)> {
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &self.params);
        let loss = self.loss_on(&mut tape, &bind, y, x_bin, beta)?;
        let value = tape.scalar(loss);
        tape.backward(loss)?;
        Ok((value, bind.gradients(&tape)))
    }
}

/// Verify that a loaded parameter set matches the layout a fresh
/// initialization would produce.
pub(crate) fn check_param_layout(fresh: &ParamSet, loaded: &ParamSet) -> Result<()> {
    if fresh.len() != loaded.len() {
        return Err(Error::CheckpointMismatch {
            detail: format!("expected {} parameter arrays, found {}", fresh.len(), loaded.len()),
        });
    }
    for i in 0..fresh.len() {
        let (f, l) = (fresh.get(i), loaded.get(i));
        if f.name != l.name {
            return Err(Error::CheckpointMismatch {
                detail: format!("parameter {i} should be {}, found {}", f.name, l.name),
            });
        }
        if f.data.shape() != l.data.shape() {
            return Err(Error::CheckpointMismatch {
                detail: format!(
                    "parameter {} should have shape {:?}, found {:?}",
                    f.name,
                    f.data.shape(),
                    l.data.shape()
                ),
            });
        }
    }
    Ok(())
}

/// Train a stage-1 model on binarized episodes `x_bin` with observations
/// `y` (one `(T, M)` block per episode).
pub fn train_native(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    arch: NativeArch,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(NativeModel, TrainLog)> {
    if x_bin.len() != y.len() {
        return Err(Error::InvalidArgument {
            context: "train_native",
            detail: format!("{} episodes but {} observation blocks", x_bin.len(), y.len()),
        });
    }
    let beta = cfg.beta;
    run_training_loop(
        &|| NativeModel::init(arch, cfg.seed),
        &mut |model: &NativeModel, i: usize| model.episode_grads(&y[i], &x_bin[i], beta),
        &mut |model: &NativeModel, i: usize| model.episode_loss(&y[i], &x_bin[i], beta),
        &|model: &mut NativeModel| &mut model.params,
        x_bin.len(),
        cfg,
        &mut on_epoch,
    )
}

/// Run only the learning-rate range test for stage 1.
pub fn lr_find_native(
    x_bin: &[VoltageSequence],
    y: &[Array2<f64>],
    arch: NativeArch,
    cfg: &TrainConfig,
) -> Result<crate::nn::LrRangeResult> {
    let beta = cfg.beta;
    crate::models::run_lr_sweep(
        &|| NativeModel::init(arch, cfg.seed),
        &mut |model: &NativeModel, i: usize| model.episode_grads(&y[i], &x_bin[i], beta),
        &|model: &mut NativeModel| &mut model.params,
        x_bin.len(),
        cfg,
    )
}
