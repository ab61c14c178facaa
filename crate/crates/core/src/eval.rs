//! Foci localization scoring and latent-trajectory diagnostics.
//!
//! The detector scans a binarized sequence for the first frame in which a new
//! 4-connected active component appears far from the previously active
//! tissue. On ground-truth data that event is exactly the ignition of an
//! ectopic focus; on reconstructions it measures whether a method actually
//! renders the hidden focus. Scores aggregate into the found-fraction, onset
//! mean absolute error (frames), and Euclidean location error (mm).

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::sim::{EpisodeMeta, FhnParams, VoltageSequence};

/// Detector thresholds; pixel quantities scale linearly with the grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    /// Minimum pixel count for a component to qualify as a wave.
    pub min_component_px: usize,
    /// Minimum distance (pixels) from the previous frame's active set.
    pub min_distance_px: f64,
    /// Earliest frame considered; skips the window in which native double
    /// excitations legitimately ignite far apart.
    pub min_onset_frame: usize,
}

impl DetectorConfig {
    /// Reference thresholds at N=32 (3 px / 3 px / frame 5), scaled to `n`.
    pub fn for_grid(n: usize) -> Self {
        let scale = n as f64 / 32.0;
        DetectorConfig {
            min_component_px: ((3.0 * scale).round() as usize).max(1),
            min_distance_px: 3.0 * scale,
            min_onset_frame: 5,
        }
    }
}

/// Outcome of a foci scan over one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Whether a new distant component was found at all.
    pub found: bool,
    /// Frame of first appearance (meaningful only when `found`).
    pub onset_frame: usize,
    /// Component centroid in grid coordinates (row, col).
    pub location_px: (f64, f64),
    /// Component size in pixels.
    pub component_size: usize,
}

impl Detection {
    fn none() -> Self {
        Detection {
            found: false,
            onset_frame: 0,
            location_px: (0.0, 0.0),
            component_size: 0,
        }
    }
}

/// 4-connected components of a binary frame; returns (labels, count).
fn components(frame: &ndarray::ArrayView2<f64>) -> (Array2<u32>, u32) {
    let (n, m) = frame.dim();
    let mut labels = Array2::<u32>::zeros((n, m));
    let mut count = 0;
    let mut stack = Vec::new();
    for i in 0..n {
        for j in 0..m {
            if frame[(i, j)] > 0.5 && labels[(i, j)] == 0 {
                count += 1;
                labels[(i, j)] = count;
                stack.push((i, j));
                while let Some((r, c)) = stack.pop() {
                    let visit = |rr: usize, cc: usize, labels: &mut Array2<u32>, stack: &mut Vec<(usize, usize)>| {
                        if frame[(rr, cc)] > 0.5 && labels[(rr, cc)] == 0 {
                            labels[(rr, cc)] = count;
                            stack.push((rr, cc));
                        }
                    };
                    if r > 0 {
                        visit(r - 1, c, &mut labels, &mut stack);
                    }
                    if r + 1 < n {
                        visit(r + 1, c, &mut labels, &mut stack);
                    }
                    if c > 0 {
                        visit(r, c - 1, &mut labels, &mut stack);
                    }
                    if c + 1 < m {
                        visit(r, c + 1, &mut labels, &mut stack);
                    }
                }
            }
        }
    }
    (labels, count)
}

/// Scan a binarized sequence for the earliest new component of size at least
/// `min_component_px` whose distance to the previous frame's active set is at
/// least `min_distance_px`. Frames before `min_onset_frame` are skipped.
pub fn detect_foci(bin: &VoltageSequence, cfg: &DetectorConfig) -> Detection {
    let frames = bin.dim().0;
    let start = cfg.min_onset_frame.max(1);
    for t in start..frames {
        let prev = bin.index_axis(ndarray::Axis(0), t - 1);
        let active: Vec<(f64, f64)> = prev
            .indexed_iter()
            .filter(|(_, &v)| v > 0.5)
            .map(|((i, j), _)| (i as f64, j as f64))
            .collect();
        if active.is_empty() {
            continue;
        }
        let cur = bin.index_axis(ndarray::Axis(0), t);
        let (labels, count) = components(&cur);
        for label in 1..=count {
            let pixels: Vec<(usize, usize)> = labels
                .indexed_iter()
                .filter(|(_, &l)| l == label)
                .map(|(ij, _)| ij)
                .collect();
            if pixels.len() < cfg.min_component_px {
                continue;
            }
            let min_d = pixels
                .iter()
                .map(|&(r, c)| {
                    active
                        .iter()
                        .map(|&(ar, ac)| {
                            let dr = r as f64 - ar;
                            let dc = c as f64 - ac;
                            (dr * dr + dc * dc).sqrt()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::INFINITY, f64::min);
            if min_d >= cfg.min_distance_px {
                let sum = pixels.iter().fold((0.0, 0.0), |acc, &(r, c)| (acc.0 + r as f64, acc.1 + c as f64));
                let k = pixels.len() as f64;
                return Detection {
                    found: true,
                    onset_frame: t,
                    location_px: (sum.0 / k, sum.1 / k),
                    component_size: pixels.len(),
                };
            }
        }
    }
    Detection::none()
}

/// Per-episode scoring row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeScore {
    pub found: bool,
    /// Detected minus true onset in frames (when found).
    pub onset_error_frames: Option<f64>,
    /// Euclidean distance between detected centroid and true site, in mm.
    pub location_error_mm: Option<f64>,
}

/// Aggregated localization quality for one method over a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationReport {
    /// Fraction of episodes in which a focus was detected at all.
    pub pct_identified: f64,
    /// Mean |onset error| in frames over detected episodes (NaN if none).
    pub timestep_mae: f64,
    /// Mean location error in mm over detected episodes (NaN if none).
    pub location_error_mm: f64,
    /// Per-episode rows, index-aligned with the inputs.
    pub rows: Vec<EpisodeScore>,
}

/// Score detections against intervention-episode ground truth.
///
/// `pct_identified` counts every detection; onset and location errors average
/// over detected episodes only.
pub fn localization_metrics(detections: &[Detection], metas: &[EpisodeMeta]) -> Result<LocalizationReport> {
    if detections.is_empty() || detections.len() != metas.len() {
        return Err(Error::InvalidArgument {
            context: "localization_metrics",
            detail: format!("{} detections vs {} metas", detections.len(), metas.len()),
        });
    }
    let mut rows = Vec::with_capacity(detections.len());
    let mut found = 0usize;
    let mut mae_sum = 0.0;
    let mut loc_sum = 0.0;
    for (det, meta) in detections.iter().zip(metas) {
        let stim = meta.foci_stim.as_ref().ok_or_else(|| Error::InvalidArgument {
            context: "localization_metrics",
            detail: "meta without foci_stim (native episode in an intervention scoring set)".into(),
        })?;
        if det.found {
            found += 1;
            let dt = det.onset_frame as f64 - stim.onset_frame as f64;
            let dx_mm = FhnParams::DOMAIN_MM / meta.grid_size as f64;
            let dr = det.location_px.0 - stim.center.0 as f64;
            let dc = det.location_px.1 - stim.center.1 as f64;
            let derr = (dr * dr + dc * dc).sqrt() * dx_mm;
            mae_sum += dt.abs();
            loc_sum += derr;
            rows.push(EpisodeScore {
                found: true,
                onset_error_frames: Some(dt),
                location_error_mm: Some(derr),
            });
        } else {
            rows.push(EpisodeScore {
                found: false,
                onset_error_frames: None,
                location_error_mm: None,
            });
        }
    }
    let nf = found as f64;
    Ok(LocalizationReport {
        pct_identified: nf / detections.len() as f64,
        timestep_mae: if found > 0 { mae_sum / nf } else { f64::NAN },
        location_error_mm: if found > 0 { loc_sum / nf } else { f64::NAN },
        rows,
    })
}

/// Per-frame L2 norm of a latent trajectory (rows = frames), min-max
/// normalized to `[0, 1]`. A constant curve maps to all zeros.
pub fn norm_curve(traj: &Array2<f64>) -> Vec<f64> {
    let norms: Vec<f64> = traj
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|&x| x * x).sum::<f64>().sqrt())
        .collect();
    let lo = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; norms.len()];
    }
    norms.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Normalized norm curves for the dynamics latent `z` and, when present, the
/// intervention latent `a`; each curve is normalized independently.
pub fn latent_norm_curves(z: &Array2<f64>, a: Option<&Array2<f64>>) -> (Vec<f64>, Option<Vec<f64>>) {
    (norm_curve(z), a.map(norm_curve))
}

/// Dice overlap `2|A∩B| / (|A|+|B|)` between two binarized sequences,
/// averaged over frames. Values ≥ 0.5 in `a` count as active; `b` must be
/// strictly binary ground truth. A frame empty in both sequences scores 1.
pub fn dice(a: &VoltageSequence, b: &VoltageSequence) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "dice",
            expected: format!("{:?}", b.shape()),
            got: format!("{:?}", a.shape()),
        });
    }
    let frames = a.shape()[0];
    if frames == 0 {
        return Err(Error::InvalidArgument {
            context: "dice",
            detail: "empty sequence".into(),
        });
    }
    let mut total = 0.0;
    for f in 0..frames {
        let fa = a.index_axis(Axis(0), f);
        let fb = b.index_axis(Axis(0), f);
        let mut inter = 0usize;
        let mut na = 0usize;
        let mut nb = 0usize;
        for (&pa, &pb) in fa.iter().zip(fb.iter()) {
            let xa = pa >= 0.5;
            let xb = pb >= 0.5;
            na += usize::from(xa);
            nb += usize::from(xb);
            inter += usize::from(xa && xb);
        }
        total += if na + nb == 0 {
            1.0
        } else {
            2.0 * inter as f64 / (na + nb) as f64
        };
    }
    Ok(total / frames as f64)
}
