//! 2-D FitzHugh-Nagumo excitable-media simulator and episode generation.
//!
//! The tissue is a square N×N grid with spacing `dx` mm over a 100×100 mm
//! domain. Dynamics are the two-variable FitzHugh-Nagumo kinetics with
//! diffusive coupling in the activation variable:
//!
//! ```text
//! dv/dt = D ∇²v + v (v − a_exc)(1 − v) − w + I_stim
//! dw/dt = eps (v − gamma w)
//! ```
//!
//! integrated with explicit Euler steps and zero-flux (Neumann) boundaries.
//! The rest state (v, w) = (0, 0) is an exact equilibrium, so an unstimulated
//! medium stays identically at rest. A suprathreshold stimulus ignites a
//! traveling activation wave followed by a refractory wake.
//!
//! Episodes come in two kinds: *native* episodes carry one or two early
//! stimuli (onset within the first few frames), while *intervention* episodes
//! add a later ectopic focus at a site and time where the tissue has
//! recovered, so the focus reliably ignites a second wave.

use ndarray::{Array2, Array3, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::detect_foci;

/// A saved activation sequence, shape `(frames, N, N)`.
pub type VoltageSequence = Array3<f64>;

/// Physical and numerical constants of the medium.
#[derive(Debug, Clone, PartialEq)]
pub struct FhnParams {
    /// Excitation threshold of the cubic reaction term (dimensionless).
    pub a_exc: f64,
    /// Recovery time-scale ratio.
    pub eps: f64,
    /// Recovery decay coefficient.
    pub gamma: f64,
    /// Diffusion coefficient (mm² per time unit).
    pub diffusion: f64,
    /// Integration step (time units).
    pub dt: f64,
    /// Grid spacing (mm).
    pub dx: f64,
    /// Integrator steps per saved frame.
    pub save_every: usize,
}

impl FhnParams {
    /// Domain edge length in mm; grids of any resolution span this square.
    pub const DOMAIN_MM: f64 = 100.0;

    /// Defaults for an N×N grid: an excitable regime in which a 3-pixel
    /// stimulus ignites, the wave crosses the domain within an episode, and
    /// the medium returns to rest before the episode ends.
    pub fn for_grid(n: usize) -> Self {
        FhnParams {
            a_exc: 0.1,
            eps: 0.0125,
            gamma: 4.0,
            diffusion: 8.0,
            dt: 0.1,
            dx: Self::DOMAIN_MM / n as f64,
            save_every: 30,
        }
    }

    /// Explicit-Euler stability bound for the diffusion term.
    pub fn dt_stable_max(&self) -> f64 {
        self.dx * self.dx / (4.0 * self.diffusion)
    }

    /// Check positivity and the diffusion stability bound.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dx > 0.0 && self.save_every > 0) {
            return Err(Error::InvalidArgument {
                context: "FhnParams",
                detail: format!("dt={}, dx={}, save_every={} must be positive", self.dt, self.dx, self.save_every),
            });
        }
        if self.dt > self.dt_stable_max() {
            return Err(Error::InvalidArgument {
                context: "FhnParams",
                detail: format!(
                    "dt={} violates diffusion stability bound dx²/(4D)={}",
                    self.dt,
                    self.dt_stable_max()
                ),
            });
        }
        Ok(())
    }
}

impl Default for FhnParams {
    fn default() -> Self {
        Self::for_grid(32)
    }
}

/// Instantaneous state of the medium.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// Activation variable (rest = 0).
    pub v: Array2<f64>,
    /// Recovery variable.
    pub w: Array2<f64>,
}

impl GridState {
    /// The rest state for an N×N grid.
    pub fn rest(n: usize) -> Self {
        GridState {
            v: Array2::zeros((n, n)),
            w: Array2::zeros((n, n)),
        }
    }

    fn check_finite(&self, step: usize) -> Result<()> {
        if self.v.iter().chain(self.w.iter()).all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::SimulationDiverged {
                step,
                detail: "non-finite activation or recovery value".into(),
            })
        }
    }
}

/// A circular additive-current stimulus applied over a frame window.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEvent {
    /// Grid coordinates (row, col) of the stimulus center.
    pub center: (usize, usize),
    /// Radius in pixels.
    pub radius_px: f64,
    /// Additive current amplitude.
    pub amplitude: f64,
    /// First saved frame during which the stimulus is active.
    pub onset_frame: usize,
    /// Number of consecutive frames the stimulus stays active.
    pub duration_frames: usize,
}

impl StimulusEvent {
    /// Paint this stimulus into an additive current field.
    pub fn paint(&self, field: &mut Array2<f64>) {
        let (cr, cc) = self.center;
        let r2 = self.radius_px * self.radius_px;
        for ((i, j), x) in field.indexed_iter_mut() {
            let dr = i as f64 - cr as f64;
            let dc = j as f64 - cc as f64;
            if dr * dr + dc * dc <= r2 {
                *x += self.amplitude;
            }
        }
    }

    fn active_at(&self, frame: usize) -> bool {
        frame >= self.onset_frame && frame < self.onset_frame + self.duration_frames
    }
}

/// Bookkeeping for one generated episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMeta {
    /// One or two early excitations (native activity).
    pub initial_stims: Vec<StimulusEvent>,
    /// The ectopic focus; absent for native episodes.
    pub foci_stim: Option<StimulusEvent>,
    /// Per-episode RNG seed.
    pub seed: u64,
    /// Grid edge length N.
    pub grid_size: usize,
    /// Saved frames T.
    pub frames: usize,
}

impl EpisodeMeta {
    fn validate(&self) -> Result<()> {
        let n = self.grid_size;
        for s in self.initial_stims.iter().chain(self.foci_stim.iter()) {
            if s.center.0 >= n || s.center.1 >= n {
                return Err(Error::InvalidArgument {
                    context: "EpisodeMeta",
                    detail: format!("stimulus center {:?} outside {n}×{n} grid", s.center),
                });
            }
        }
        if self.initial_stims.is_empty() {
            return Err(Error::InvalidArgument {
                context: "EpisodeMeta",
                detail: "episode has no initial stimulus".into(),
            });
        }
        Ok(())
    }
}

/// Five-point Laplacian with zero-flux boundaries (edge replication).
fn laplacian_into(v: &Array2<f64>, dx: f64, out: &mut Array2<f64>) {
    let n = v.nrows();
    let m = v.ncols();
    let inv_dx2 = 1.0 / (dx * dx);
    for i in 0..n {
        for j in 0..m {
            let c = v[(i, j)];
            let up = v[(i.saturating_sub(1), j)];
            let down = v[(if i + 1 < n { i + 1 } else { i }, j)];
            let left = v[(i, j.saturating_sub(1))];
            let right = v[(i, if j + 1 < m { j + 1 } else { j })];
            out[(i, j)] = (up + down + left + right - 4.0 * c) * inv_dx2;
        }
    }
}

/// Advance the state by one in-place Euler step. Buffers must match shapes.
fn step_into(state: &GridState, params: &FhnParams, stim: &Array2<f64>, lap: &mut Array2<f64>, next: &mut GridState) {
    laplacian_into(&state.v, params.dx, lap);
    let (a, eps, gamma, d, dt) = (params.a_exc, params.eps, params.gamma, params.diffusion, params.dt);
    Zip::from(&mut next.v)
        .and(&state.v)
        .and(&state.w)
        .and(&*lap)
        .and(stim)
        .for_each(|nv, &v, &w, &l, &s| {
            *nv = v + dt * (d * l + v * (v - a) * (1.0 - v) - w + s);
        });
    Zip::from(&mut next.w).and(&state.v).and(&state.w).for_each(|nw, &v, &w| {
        *nw = w + dt * eps * (v - gamma * w);
    });
}

/// One explicit Euler step of the reaction-diffusion system.
///
/// `stim_field` is an additive current applied to the activation equation.
pub fn fhn_step(state: &GridState, params: &FhnParams, stim_field: &Array2<f64>) -> Result<GridState> {
    params.validate()?;
    if state.v.dim() != state.w.dim() || state.v.dim() != stim_field.dim() {
        return Err(Error::ShapeMismatch {
            context: "fhn_step",
            expected: format!("{:?}", state.v.dim()),
            got: format!("v {:?}, w {:?}, stim {:?}", state.v.dim(), state.w.dim(), stim_field.dim()),
        });
    }
    state.check_finite(0)?;
    let mut next = state.clone();
    let mut lap = Array2::zeros(state.v.dim());
    step_into(state, params, stim_field, &mut lap, &mut next);
    next.check_finite(1)?;
    Ok(next)
}

/// Simulate an episode and save one frame per `save_every` steps.
///
/// Frame `t` holds the state *after* the `t`-th block of steps, so a stimulus
/// with `onset_frame = f` is first visible in frame `f`.
pub fn simulate_episode(meta: &EpisodeMeta, params: &FhnParams) -> Result<VoltageSequence> {
    let frames = simulate_episode_states(meta, params)?;
    let n = meta.grid_size;
    let mut out = Array3::zeros((meta.frames, n, n));
    for (t, st) in frames.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), t).assign(&st.v);
    }
    Ok(out)
}

/// As [`simulate_episode`], but keep the full per-frame `(v, w)` states.
/// Used by the generator to test tissue recovery at candidate foci sites.
pub fn simulate_episode_states(meta: &EpisodeMeta, params: &FhnParams) -> Result<Vec<GridState>> {
    params.validate()?;
    meta.validate()?;
    let n = meta.grid_size;
    let mut state = GridState::rest(n);
    let mut next = GridState::rest(n);
    let mut lap = Array2::zeros((n, n));
    let mut stim = Array2::zeros((n, n));
    let mut out = Vec::with_capacity(meta.frames);
    for t in 0..meta.frames {
        stim.fill(0.0);
        for s in meta.initial_stims.iter().chain(meta.foci_stim.iter()) {
            if s.active_at(t) {
                s.paint(&mut stim);
            }
        }
        for _ in 0..params.save_every {
            step_into(&state, params, &stim, &mut lap, &mut next);
            std::mem::swap(&mut state, &mut next);
        }
        state.check_finite((t + 1) * params.save_every)?;
        out.push(state.clone());
    }
    Ok(out)
}

/// Min-max normalize a sequence to `[0, 1]` over the whole episode, then
/// threshold at 0.5 to produce a `{0, 1}` activation map per frame.
pub fn binarize_sequence(x: &VoltageSequence) -> Result<VoltageSequence> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &val in x.iter() {
        if !val.is_finite() {
            return Err(Error::InvalidArgument {
                context: "binarize_sequence",
                detail: "non-finite entry".into(),
            });
        }
        lo = lo.min(val);
        hi = hi.max(val);
    }
    if hi <= lo {
        return Err(Error::DegenerateNormalization { value: lo });
    }
    let mid = lo + 0.5 * (hi - lo);
    Ok(x.mapv(|val| if val > mid { 1.0 } else { 0.0 }))
}

/// Which dataset flavor to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Intervention-free propagation; one or two early stimuli.
    Native,
    /// Native activity plus one later ectopic focus.
    Intervention,
}

/// A generated dataset: binarized episodes plus their metadata, index-aligned.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Binarized activation sequences, one per episode.
    pub episodes: Vec<VoltageSequence>,
    /// Episode bookkeeping, index-aligned with `episodes`.
    pub metas: Vec<EpisodeMeta>,
}

/// Generation knobs beyond the physical constants.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// Grid edge length N.
    pub grid_size: usize,
    /// Saved frames per episode.
    pub frames: usize,
    /// Latest onset frame (inclusive) for initial stimuli.
    pub initial_onset_max: usize,
    /// Inclusive frame window for the ectopic focus onset.
    pub foci_onset_window: (usize, usize),
    /// Probability that a native episode has a second early stimulus.
    pub double_excitation_prob: f64,
}

impl GeneratorConfig {
    pub fn for_grid(n: usize, frames: usize) -> Self {
        // Leave a couple of post-onset frames so a focus is detectable even
        // when episodes are shorter than the default window.
        let latest = frames.saturating_sub(3).max(1);
        GeneratorConfig {
            grid_size: n,
            frames,
            initial_onset_max: 3,
            foci_onset_window: (10.min(latest), 30.min(latest)),
            double_excitation_prob: 0.5,
        }
    }

    /// Pixel scale factor relative to the reference 32-grid.
    fn px(&self, at32: f64) -> f64 {
        at32 * self.grid_size as f64 / 32.0
    }
}

fn stim_at(center: (usize, usize), radius_px: f64, onset_frame: usize) -> StimulusEvent {
    StimulusEvent {
        center,
        radius_px,
        amplitude: 0.5,
        onset_frame,
        duration_frames: 1,
    }
}

fn random_site(rng: &mut ChaCha8Rng, n: usize, margin: usize) -> (usize, usize) {
    (
        rng.gen_range(margin..n - margin),
        rng.gen_range(margin..n - margin),
    )
}

fn dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0 as f64 - b.0 as f64;
    let dc = a.1 as f64 - b.1 as f64;
    (dr * dr + dc * dc).sqrt()
}

/// True when the neighborhood of `site` is close enough to rest at `state`
/// for a fresh stimulus there to ignite.
fn site_recovered(state: &GridState, site: (usize, usize), radius_px: f64) -> bool {
    let r2 = radius_px * radius_px;
    for ((i, j), &v) in state.v.indexed_iter() {
        let dr = i as f64 - site.0 as f64;
        let dc = j as f64 - site.1 as f64;
        if dr * dr + dc * dc <= r2 {
            if v.abs() > 0.05 || state.w[(i, j)] > 0.008 {
                return false;
            }
        }
    }
    true
}

fn generate_native_meta(rng: &mut ChaCha8Rng, cfg: &GeneratorConfig, seed: u64) -> EpisodeMeta {
    let n = cfg.grid_size;
    let margin = cfg.px(3.0).ceil() as usize;
    let radius = cfg.px(3.0);
    let first = random_site(rng, n, margin);
    let onset1 = rng.gen_range(0..=cfg.initial_onset_max);
    let mut stims = vec![stim_at(first, radius, onset1)];
    if rng.gen_bool(cfg.double_excitation_prob) {
        let min_sep = cfg.px(10.0);
        let second = loop {
            let s = random_site(rng, n, margin);
            if dist(s, first) >= min_sep {
                break s;
            }
        };
        stims.push(stim_at(second, radius, rng.gen_range(0..=cfg.initial_onset_max)));
    }
    EpisodeMeta {
        initial_stims: stims,
        foci_stim: None,
        seed,
        grid_size: n,
        frames: cfg.frames,
    }
}

/// Generate one intervention episode: sample a native background, then place
/// the focus at a recovered site and verify (via the ground-truth detector)
/// that it actually ignites a second, detectable wave.
fn generate_intervention_episode(
    rng: &mut ChaCha8Rng,
    cfg: &GeneratorConfig,
    params: &FhnParams,
    seed: u64,
) -> Result<(VoltageSequence, EpisodeMeta)> {
    let n = cfg.grid_size;
    let margin = cfg.px(3.0).ceil() as usize;
    let radius = cfg.px(3.0);
    for _attempt in 0..40 {
        let base = EpisodeMeta {
            initial_stims: vec![stim_at(
                random_site(rng, n, margin),
                radius,
                rng.gen_range(0..=cfg.initial_onset_max),
            )],
            foci_stim: None,
            seed,
            grid_size: n,
            frames: cfg.frames,
        };
        let states = simulate_episode_states(&base, params)?;
        for _try in 0..60 {
            let onset = rng.gen_range(cfg.foci_onset_window.0..=cfg.foci_onset_window.1);
            let site = random_site(rng, n, margin);
            if !site_recovered(&states[onset - 1], site, cfg.px(7.0)) {
                continue;
            }
            let mut meta = base.clone();
            meta.foci_stim = Some(stim_at(site, radius, onset));
            let x = simulate_episode(&meta, params)?;
            let bin = binarize_sequence(&x)?;
            let det = detect_foci(&bin, &crate::eval::DetectorConfig::for_grid(n));
            let ok = det.found
                && det.onset_frame.abs_diff(onset) <= 1
                && dist_f(det.location_px, (site.0 as f64, site.1 as f64)) <= 1.5;
            if ok {
                return Ok((x, meta));
            }
        }
    }
    Err(Error::InvalidArgument {
        context: "generate_dataset",
        detail: "could not place a viable ectopic focus after many attempts".into(),
    })
}

fn dist_f(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn episode_rng(seed: u64, index: usize) -> ChaCha8Rng {
    // Golden-ratio stride keeps per-episode streams decorrelated.
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Generate `count` seeded episodes, binarized, in deterministic index order.
///
/// Native episodes mix single and double early excitations; intervention
/// episodes add one ectopic focus, rejection-sampled so the focus lands on
/// recovered tissue and provably ignites.
pub fn generate_dataset(kind: DatasetKind, count: usize, cfg: &GeneratorConfig, params: &FhnParams, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument {
            context: "generate_dataset",
            detail: "count must be at least 1".into(),
        });
    }
    let (w0, w1) = cfg.foci_onset_window;
    if kind == DatasetKind::Intervention && (w0 < 1 || w0 > w1 || w1 + 1 >= cfg.frames) {
        return Err(Error::InvalidArgument {
            context: "generate_dataset",
            detail: format!(
                "foci onset window [{w0}, {w1}] does not fit {} frames",
                cfg.frames
            ),
        });
    }
    params.validate()?;
    let results: Vec<Result<(VoltageSequence, EpisodeMeta)>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            match kind {
                DatasetKind::Native => {
                    let meta = generate_native_meta(&mut rng, cfg, seed);
                    let x = simulate_episode(&meta, params)?;
                    let bin = binarize_sequence(&x)?;
                    Ok((bin, meta))
                }
                DatasetKind::Intervention => {
                    let (x, meta) = generate_intervention_episode(&mut rng, cfg, params, seed)?;
                    let bin = binarize_sequence(&x)?;
                    Ok((bin, meta))
                }
            }
        })
        .collect();
    let mut episodes = Vec::with_capacity(count);
    let mut metas = Vec::with_capacity(count);
    for r in results {
        let (x, meta) = r?;
        episodes.push(x);
        metas.push(meta);
    }
    Ok(Dataset { episodes, metas })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn params32() -> FhnParams {
        FhnParams::for_grid(32)
    }

    #[test]
    fn rest_state_is_exact_equilibrium() {
        let p = params32();
        let mut s = GridState::rest(16);
        let stim = Array2::zeros((16, 16));
        for _ in 0..50 {
            s = fhn_step(&s, &p, &stim).unwrap();
        }
        assert!(s.v.iter().all(|&v| v == 0.0));
        assert!(s.w.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn reaction_term_pushes_suprathreshold_node_up() {
        // With diffusion off, v(v - a_exc)(1 - v) at v = 0.5 is
        // 0.5 · 0.4 · 0.5 = 0.1 > 0, so the node must rise.
        let mut p = params32();
        p.diffusion = 0.0;
        let mut s = GridState::rest(4);
        s.v[(2, 2)] = 0.5;
        let next = fhn_step(&s, &p, &Array2::zeros((4, 4))).unwrap();
        assert!(next.v[(2, 2)] > 0.5);
        assert!((next.v[(2, 2)] - (0.5 + p.dt * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn default_dt_respects_stability_bound() {
        let p = params32();
        assert!(p.dt <= p.dt_stable_max());
        p.validate().unwrap();
    }

    #[test]
    fn unstable_dt_is_rejected() {
        let mut p = params32();
        p.dt = p.dt_stable_max() * 1.01;
        assert!(p.validate().is_err());
    }

    #[test]
    fn simulate_is_deterministic() {
        let p = params32();
        let meta = EpisodeMeta {
            initial_stims: vec![stim_at((16, 16), 3.0, 1)],
            foci_stim: None,
            seed: 7,
            grid_size: 32,
            frames: 12,
        };
        let a = simulate_episode(&meta, &p).unwrap();
        let b = simulate_episode(&meta, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stimulus_first_visible_in_its_onset_frame() {
        let p = params32();
        let meta = EpisodeMeta {
            initial_stims: vec![stim_at((16, 16), 3.0, 2)],
            foci_stim: None,
            seed: 0,
            grid_size: 32,
            frames: 5,
        };
        let x = simulate_episode(&meta, &p).unwrap();
        for t in 0..2 {
            assert!(x.index_axis(ndarray::Axis(0), t).iter().all(|&v| v == 0.0), "frame {t} should be at rest");
        }
        assert!(x.index_axis(ndarray::Axis(0), 2).iter().any(|&v| v > 0.5));
    }

    #[test]
    fn binarize_passes_binary_input_through() {
        let mut x = Array3::zeros((2, 4, 4));
        x[(0, 1, 1)] = 1.0;
        x[(1, 2, 2)] = 1.0;
        let b = binarize_sequence(&x).unwrap();
        assert_eq!(b, x);
    }

    #[test]
    fn binarize_thresholds_at_midpoint() {
        let mut x = Array3::from_elem((1, 3, 3), 0.3);
        x[(0, 1, 1)] = 0.9;
        let b = binarize_sequence(&x).unwrap();
        assert_eq!(b.sum(), 1.0);
        assert_eq!(b[(0, 1, 1)], 1.0);
    }

    #[test]
    fn binarize_rejects_constant_sequence() {
        let x = Array3::from_elem((2, 3, 3), 0.4);
        assert!(matches!(
            binarize_sequence(&x),
            Err(Error::DegenerateNormalization { .. })
        ));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let cfg = GeneratorConfig::for_grid(16, 10);
        let err = generate_dataset(DatasetKind::Native, 0, &cfg, &FhnParams::for_grid(16), 1);
        assert!(err.is_err());
    }

    #[test]
    fn native_dataset_has_no_foci() {
        let cfg = GeneratorConfig::for_grid(32, 12);
        let ds = generate_dataset(DatasetKind::Native, 3, &cfg, &params32(), 11).unwrap();
        assert_eq!(ds.episodes.len(), 3);
        assert!(ds.metas.iter().all(|m| m.foci_stim.is_none()));
        assert!(ds.metas.iter().all(|m| !m.initial_stims.is_empty()));
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let cfg = GeneratorConfig::for_grid(32, 12);
        let a = generate_dataset(DatasetKind::Native, 4, &cfg, &params32(), 3).unwrap();
        let b = generate_dataset(DatasetKind::Native, 4, &cfg, &params32(), 3).unwrap();
        assert_eq!(a.episodes, b.episodes);
        assert_eq!(a.metas, b.metas);
    }

    #[test]
    fn diverged_simulation_is_reported() {
        let mut p = params32();
        p.dt = 0.1;
        p.dx = 100.0 / 32.0;
        let mut s = GridState::rest(8);
        s.v[(4, 4)] = f64::NAN;
        let err = fhn_step(&s, &p, &Array2::zeros((8, 8)));
        assert!(matches!(err, Err(Error::SimulationDiverged { .. })));
    }
}
