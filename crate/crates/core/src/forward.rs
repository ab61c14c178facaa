//! Remote-observation forward operator and the Tikhonov inverse baseline.
//!
//! Observations mimic body-surface measurement of tissue potentials: a planar
//! lattice of M electrodes hovers `height_mm` above the tissue plane, and
//! each electrode sees a distance-weighted average of the whole grid with an
//! inverse-square kernel, `w = 1/(4π r²)`, row-normalized so a uniform field
//! observes as itself. Stacking per-node weights gives the dense lead-field
//! matrix `H` with `Y_t = H · vec(x_t)`.
//!
//! The classical inverse baseline (ECGI) recovers `x` frame by frame with
//! first-order Tikhonov regularization: minimize `‖Hx − y‖² + λ‖Lx‖²` where
//! `L` differences neighboring grid nodes, solved through the normal
//! equations with a symmetric positive-definite factorization.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::sim::{FhnParams, VoltageSequence};

/// Dense lead-field operator with its generating geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    /// M×(N·N) row-normalized weights.
    pub h: Array2<f64>,
    /// Electrode positions in mm, one `[x, y, z]` triple per row of `h`.
    pub electrode_positions: Vec<[f64; 3]>,
    /// Grid-node positions in mm on the z=0 plane, row-major.
    pub grid_positions: Vec<[f64; 3]>,
    /// Tissue grid edge length N.
    pub grid_size: usize,
}

fn inverse_square_kernel(r_mm: f64) -> f64 {
    1.0 / (4.0 * std::f64::consts::PI * r_mm * r_mm)
}

/// Build the lead field for an N×N grid observed by a `rows×cols` electrode
/// lattice at `height_mm` above the tissue.
pub fn build_forward_operator(grid_size: usize, rows: usize, cols: usize, height_mm: f64) -> Result<ForwardOperator> {
    if grid_size < 4 || rows * cols < 4 {
        return Err(Error::InvalidArgument {
            context: "build_forward_operator",
            detail: format!("need N ≥ 4 and M ≥ 4, got N={grid_size}, M={}", rows * cols),
        });
    }
    if height_mm <= 0.0 {
        return Err(Error::InvalidArgument {
            context: "build_forward_operator",
            detail: format!("electrode height must be positive, got {height_mm} (degenerate geometry)"),
        });
    }
    let span = FhnParams::DOMAIN_MM;
    let dx = span / grid_size as f64;
    let mut electrode_positions = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            electrode_positions.push([
                (c as f64 + 0.5) * span / cols as f64,
                (r as f64 + 0.5) * span / rows as f64,
                height_mm,
            ]);
        }
    }
    let mut grid_positions = Vec::with_capacity(grid_size * grid_size);
    for i in 0..grid_size {
        for j in 0..grid_size {
            grid_positions.push([(j as f64 + 0.5) * dx, (i as f64 + 0.5) * dx, 0.0]);
        }
    }
    let mut h = Array2::zeros((electrode_positions.len(), grid_positions.len()));
    for (m, e) in electrode_positions.iter().enumerate() {
        let mut row_sum = 0.0;
        for (n, g) in grid_positions.iter().enumerate() {
            let r2 = (e[0] - g[0]).powi(2) + (e[1] - g[1]).powi(2) + (e[2] - g[2]).powi(2);
            let r = r2.sqrt();
            if r == 0.0 {
                return Err(Error::InvalidArgument {
                    context: "build_forward_operator",
                    detail: "electrode coincides with a grid node".into(),
                });
            }
            let w = inverse_square_kernel(r);
            h[(m, n)] = w;
            row_sum += w;
        }
        for n in 0..grid_positions.len() {
            h[(m, n)] /= row_sum;
        }
    }
    Ok(ForwardOperator {
        h,
        electrode_positions,
        grid_positions,
        grid_size,
    })
}

/// Observe a sequence: `Y_t = H · vec(x_t)`, output shape `(T, M)`.
pub fn observe(op: &ForwardOperator, x: &VoltageSequence) -> Result<Array2<f64>> {
    let (t, n, m) = x.dim();
    if n * m != op.h.ncols() {
        return Err(Error::ShapeMismatch {
            context: "observe",
            expected: format!("frames of {} nodes", op.h.ncols()),
            got: format!("{n}×{m}"),
        });
    }
    let flat = x.to_shape((t, n * m)).expect("contiguous sequence");
    Ok(flat.dot(&op.h.t()))
}

/// Add i.i.d. Gaussian noise to an observation sequence in place.
pub fn add_observation_noise<R: Rng>(y: &mut Array2<f64>, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    for v in y.iter_mut() {
        *v += normal.sample(rng);
    }
}

/// First-order difference regularizer over the grid graph.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSpec {
    /// Edge-difference operator: one row per grid edge with entries ±1.
    pub l: Array2<f64>,
    /// Regularization weight, λ ≥ 0.
    pub lambda: f64,
}

impl RegularizerSpec {
    /// Horizontal and vertical neighbor differences on an N×N grid.
    pub fn first_order(grid_size: usize, lambda: f64) -> Self {
        let n = grid_size;
        let mut rows = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if j + 1 < n {
                    rows.push((i * n + j, i * n + j + 1));
                }
                if i + 1 < n {
                    rows.push((i * n + j, (i + 1) * n + j));
                }
            }
        }
        let mut l = Array2::zeros((rows.len(), n * n));
        for (e, (p, q)) in rows.into_iter().enumerate() {
            l[(e, p)] = 1.0;
            l[(e, q)] = -1.0;
        }
        RegularizerSpec { l, lambda }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        RegularizerSpec {
            l: self.l.clone(),
            lambda,
        }
    }
}

/// Factored normal-equation solver, reusable across frames.
pub struct TikhonovSolver {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    ht: Array2<f64>,
    lambda: f64,
}

impl TikhonovSolver {
    /// Factor `HᵀH + λLᵀL` once for repeated right-hand sides.
    pub fn new(h: &Array2<f64>, reg: &RegularizerSpec) -> Result<Self> {
        if reg.lambda < 0.0 {
            return Err(Error::InvalidArgument {
                context: "TikhonovSolver",
                detail: format!("lambda must be nonnegative, got {}", reg.lambda),
            });
        }
        if h.ncols() != reg.l.ncols() {
            return Err(Error::ShapeMismatch {
                context: "TikhonovSolver",
                expected: format!("L with {} columns", h.ncols()),
                got: format!("{}", reg.l.ncols()),
            });
        }
        let mut a = h.t().dot(h);
        if reg.lambda > 0.0 {
            let ltl = reg.l.t().dot(&reg.l);
            a.scaled_add(reg.lambda, &ltl);
        }
        let n = a.nrows();
        let na = nalgebra::DMatrix::from_row_iterator(n, n, a.iter().cloned());
        let chol = na.cholesky().ok_or_else(|| Error::SolverFailure {
            lambda: reg.lambda,
            detail: format!("HᵀH + λLᵀL is not positive definite ({n}×{n}); H may be rank-deficient for this λ"),
        })?;
        Ok(TikhonovSolver {
            chol,
            ht: h.t().to_owned(),
            lambda: reg.lambda,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Solve one frame: `x̂ = (HᵀH + λLᵀL)⁻¹ Hᵀ y`.
    pub fn solve(&self, y: ArrayView1<f64>) -> Result<Array1<f64>> {
        if y.len() != self.ht.ncols() {
            return Err(Error::ShapeMismatch {
                context: "TikhonovSolver::solve",
                expected: format!("{} electrodes", self.ht.ncols()),
                got: format!("{}", y.len()),
            });
        }
        let b = self.ht.dot(&y);
        let nb = nalgebra::DVector::from_iterator(b.len(), b.iter().cloned());
        let x = self.chol.solve(&nb);
        Ok(Array1::from_iter(x.iter().cloned()))
    }
}

/// One-shot Tikhonov solve for a single observation vector.
pub fn tikhonov_solve(h: &Array2<f64>, y: ArrayView1<f64>, reg: &RegularizerSpec) -> Result<Array1<f64>> {
    TikhonovSolver::new(h, reg)?.solve(y)
}

/// Frame-wise Tikhonov reconstruction of a whole observation sequence.
///
/// Returns the raw (unbinarized) reconstruction with shape `(T, N, N)`;
/// callers binarize with [`crate::sim::binarize_sequence`] before scoring so
/// reconstructions face the same evaluation as the simulator output.
pub fn ecgi_reconstruct(y: &Array2<f64>, op: &ForwardOperator, reg: &RegularizerSpec) -> Result<VoltageSequence> {
    let solver = TikhonovSolver::new(&op.h, reg)?;
    let n = op.grid_size;
    let t = y.nrows();
    let mut out = ndarray::Array3::zeros((t, n, n));
    for (ti, row) in y.axis_iter(Axis(0)).enumerate() {
        let x = solver.solve(row)?;
        out.index_axis_mut(Axis(0), ti)
            .assign(&x.to_shape((n, n)).expect("square frame"));
    }
    Ok(out)
}

/// Pick λ for the ECGI baseline on a validation split by minimizing the
/// miss-penalized localization error: a found focus contributes its location
/// error in mm, a miss contributes the domain diagonal. Returns the winning
/// λ and the per-candidate scores.
pub fn select_lambda(
    op: &ForwardOperator,
    ys: &[Array2<f64>],
    metas: &[crate::sim::EpisodeMeta],
    candidates: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if ys.is_empty() || ys.len() != metas.len() || candidates.is_empty() {
        return Err(Error::InvalidArgument {
            context: "select_lambda",
            detail: format!(
                "{} sequences, {} metas, {} candidates",
                ys.len(),
                metas.len(),
                candidates.len()
            ),
        });
    }
    let diag = FhnParams::DOMAIN_MM * std::f64::consts::SQRT_2;
    let det_cfg = crate::eval::DetectorConfig::for_grid(op.grid_size);
    let base_reg = RegularizerSpec::first_order(op.grid_size, 0.0);
    let mut scores = Vec::with_capacity(candidates.len());
    for &lambda in candidates {
        let reg = base_reg.with_lambda(lambda);
        let mut total = 0.0;
        for (y, meta) in ys.iter().zip(metas) {
            let recon = ecgi_reconstruct(y, op, &reg)?;
            let bin = crate::sim::binarize_sequence(&recon)?;
            let det = crate::eval::detect_foci(&bin, &det_cfg);
            let stim = meta.foci_stim.as_ref().ok_or_else(|| Error::InvalidArgument {
                context: "select_lambda",
                detail: "validation split contains a native episode".into(),
            })?;
            if det.found {
                let dx = FhnParams::DOMAIN_MM / meta.grid_size as f64;
                let dr = det.location_px.0 - stim.center.0 as f64;
                let dc = det.location_px.1 - stim.center.1 as f64;
                total += (dr * dr + dc * dc).sqrt() * dx;
            } else {
                total += diag;
            }
        }
        scores.push(total / ys.len() as f64);
    }
    let best = scores
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).expect("finite scores"))
        .map(|(i, _)| candidates[i])
        .expect("non-empty candidates");
    Ok((best, scores))
}
