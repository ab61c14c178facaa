//! Finite-difference gradient verification.
//!
//! The oracle is the definition of the derivative: central differences of a
//! freshly evaluated loss under single-entry perturbations of the parameter
//! set. Any reverse-mode gradient the tape produces must agree to the stated
//! relative tolerance on sampled entries.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::params::ParamSet;

/// Compare analytic gradients against central finite differences.
///
/// `loss` must re-evaluate the full forward pass from the given parameters.
/// For every trainable array with a gradient, up to `samples_per_array`
/// entries (sampled without replacement) are perturbed by ±`step`. Returns
/// the maximum relative error; errors out if it exceeds `rel_tol`.
/// Agreement better than `1e-8` absolute passes regardless of relative
/// error, which keeps near-zero gradients from tripping the ratio.
pub fn finite_difference_check(
    loss: &dyn Fn(&ParamSet) -> Result<f64>,
    params: &ParamSet,
    grads: &[Option<ndarray::ArrayD<f64>>],
    samples_per_array: usize,
    step: f64,
    rel_tol: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument {
            context: "finite_difference_check",
            detail: format!("{} params vs {} gradient slots", params.len(), grads.len()),
        });
    }
    let mut max_rel: f64 = 0.0;
    for (idx, g) in grads.iter().enumerate() {
        let entry = params.get(idx);
        if !entry.trainable {
            continue;
        }
        let Some(g) = g else { continue };
        let len = entry.data.len();
        let mut picks: Vec<usize> = (0..len).collect();
        if len > samples_per_array {
            for i in 0..samples_per_array {
                let j = rng.gen_range(i..len);
                picks.swap(i, j);
            }
            picks.truncate(samples_per_array);
        }
        for &flat in &picks {
            let analytic = g.as_slice().expect("standard layout")[flat];
            let mut plus = params.clone();
            plus.get_mut(idx).data.as_slice_mut().expect("standard layout")[flat] += step;
            let mut minus = params.clone();
            minus.get_mut(idx).data.as_slice_mut().expect("standard layout")[flat] -= step;
            let fd = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
            let diff = (fd - analytic).abs();
            if diff < 1e-8 {
                continue;
            }
            let rel = diff / fd.abs().max(analytic.abs()).max(1e-12);
            max_rel = max_rel.max(rel);
            if rel > rel_tol {
                return Err(Error::InvalidArgument {
                    context: "finite_difference_check",
                    detail: format!(
                        "gradient mismatch in {}[{flat}]: analytic {analytic:.6e}, finite-difference {fd:.6e} (rel {rel:.3e})",
                        entry.name
                    ),
                });
            }
        }
    }
    Ok(max_rel)
}
