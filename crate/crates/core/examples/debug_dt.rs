//! Throwaway probe for the dt-halving refinement check.

use foci_core::sim::{simulate_episode, EpisodeMeta, FhnParams, StimulusEvent, VoltageSequence};
use ndarray::Array2;

fn activation_frames(x: &VoltageSequence) -> Array2<f64> {
    let (frames, n, m) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Array2::from_shape_fn((n, m), |(i, j)| {
        (0..frames)
            .find(|&f| x[(f, i, j)] >= 0.5)
            .map_or(f64::NAN, |f| f as f64)
    })
}

fn main() {
    let n = 32usize;
    let params = FhnParams::for_grid(n);
    let meta = EpisodeMeta {
        initial_stims: vec![StimulusEvent {
            center: (n * 3 / 8, n * 5 / 8),
            radius_px: 3.0 * n as f64 / 32.0,
            amplitude: 0.5,
            onset_frame: 0,
            duration_frames: 1,
        }],
        foci_stim: None,
        seed: 0,
        grid_size: n,
        frames: 120,
    };
    let coarse = simulate_episode(&meta, &params).unwrap();
    let mut fine_params = params.clone();
    fine_params.dt /= 2.0;
    fine_params.save_every *= 2;
    let fine = simulate_episode(&meta, &fine_params).unwrap();
    let fa = activation_frames(&coarse);
    let fb = activation_frames(&fine);
    let mut max_shift = 0.0f64;
    let mut sided = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (fa[(i, j)], fb[(i, j)]);
            match (a.is_nan(), b.is_nan()) {
                (false, false) => max_shift = max_shift.max((a - b).abs()),
                (true, true) => {}
                _ => sided.push((i, j, a, b)),
            }
        }
    }
    println!("max shift among both-activated: {max_shift}");
    println!("one-sided count: {}", sided.len());
    for &(i, j, a, b) in sided.iter().take(30) {
        let vmax_c = (0..120).map(|f| coarse[(f, i, j)]).fold(f64::MIN, f64::max);
        let vmax_f = (0..120).map(|f| fine[(f, i, j)]).fold(f64::MIN, f64::max);
        println!(
            "  ({i:2},{j:2}) coarse act {a:5.1} (vmax {vmax_c:.3}) | fine act {b:5.1} (vmax {vmax_f:.3})"
        );
    }
    // Count total activated in each run.
    let ca = fa.iter().filter(|v| !v.is_nan()).count();
    let cf = fb.iter().filter(|v| !v.is_nan()).count();
    println!("activated: coarse {ca} / fine {cf} of {}", n * n);

    // Does a line-source plane wave sustain across the whole grid?
    let line_meta = EpisodeMeta {
        initial_stims: (0..n)
            .map(|r| StimulusEvent {
                center: (r, 1),
                radius_px: 1.2,
                amplitude: 0.5,
                onset_frame: 0,
                duration_frames: 1,
            })
            .collect(),
        foci_stim: None,
        seed: 0,
        grid_size: n,
        frames: 120,
    };
    let plane = simulate_episode(&line_meta, &params).unwrap();
    let plane_fine = simulate_episode(&line_meta, &fine_params).unwrap();
    let mid = n / 2;
    println!("plane wave vmax by column (mid row), coarse:");
    for j in 0..n {
        let vmax = (0..120).map(|f| plane[(f, mid, j)]).fold(f64::MIN, f64::max);
        print!(" {vmax:.2}");
    }
    println!();
    let pa = activation_frames(&plane);
    let pb = activation_frames(&plane_fine);
    let mut p_shift = 0.0f64;
    let mut p_sided = 0usize;
    let (mut p_both, mut p_neither) = (0usize, 0usize);
    for (a, b) in pa.iter().zip(pb.iter()) {
        match (a.is_nan(), b.is_nan()) {
            (false, false) => {
                p_shift = p_shift.max((a - b).abs());
                p_both += 1;
            }
            (true, true) => p_neither += 1,
            _ => p_sided += 1,
        }
    }
    println!("plane: both {p_both} neither {p_neither} one-sided {p_sided} max shift {p_shift}");

    // Stronger point source: does a big ignition sustain?
    let strong_meta = EpisodeMeta {
        initial_stims: vec![StimulusEvent {
            center: (n * 3 / 8, n * 5 / 8),
            radius_px: 5.0,
            amplitude: 1.0,
            onset_frame: 0,
            duration_frames: 2,
        }],
        foci_stim: None,
        seed: 0,
        grid_size: n,
        frames: 120,
    };
    let strong = simulate_episode(&strong_meta, &params).unwrap();
    let sa = activation_frames(&strong);
    let s_on = sa.iter().filter(|v| !v.is_nan()).count();
    println!("strong point: activated {s_on} of {}", n * n);
}
