//! Shared fixture builders for the criterion benchmarks.
//!
//! Everything here is deterministic so benchmark numbers are comparable
//! across runs and machines.

use ndarray::Array2;

use foci_core::forward::{build_forward_operator, observe, ForwardOperator};
use foci_core::models::native::NativeArch;
use foci_core::models::{InterventionModel, NativeModel};
use foci_core::sim::{
    generate_dataset, DatasetKind, FhnParams, GeneratorConfig, GridState, VoltageSequence,
};

/// Standard desk-scale grid for the benchmarks.
pub const GRID: usize = 32;
/// Short sequence length keeping single iterations under a second.
pub const FRAMES: usize = 20;

/// One simulated intervention episode plus its observations.
pub struct EpisodeFixture {
    pub x_bin: VoltageSequence,
    pub y: Array2<f64>,
    pub op: ForwardOperator,
}

pub fn fhn_params() -> FhnParams {
    FhnParams::for_grid(GRID)
}

/// Mid-pulse state: a plane wave partway across the grid, for stepping
/// benchmarks on non-trivial data.
pub fn mid_pulse_state() -> GridState {
    let params = fhn_params();
    let gen = GeneratorConfig::for_grid(GRID, FRAMES);
    let ds = generate_dataset(DatasetKind::Native, 1, &gen, &params, 11).unwrap();
    // Re-simulate to states and take a frame in mid-propagation.
    let states = foci_core::sim::simulate_episode_states(&ds.metas[0], &params).unwrap();
    states[FRAMES / 2].clone()
}

pub fn episode_fixture() -> EpisodeFixture {
    let params = fhn_params();
    let gen = GeneratorConfig::for_grid(GRID, FRAMES);
    let ds = generate_dataset(DatasetKind::Intervention, 1, &gen, &params, 7).unwrap();
    let op = build_forward_operator(GRID, 8, 8, 20.0).unwrap();
    let x_bin = ds.episodes[0].clone();
    let y = observe(&op, &x_bin).unwrap();
    EpisodeFixture { x_bin, y, op }
}

pub fn desk_arch() -> NativeArch {
    NativeArch {
        grid_size: GRID,
        obs_side: 8,
        k: 5,
        d_z: 12,
        rk4_steps: 4,
    }
}

pub fn native_model() -> NativeModel {
    NativeModel::init(desk_arch(), 3).unwrap()
}

pub fn intervention_model() -> InterventionModel {
    InterventionModel::init(native_model(), 12, 4).unwrap()
}
