//! Differentiable fixed-step Runge-Kutta integration on the tape.
//!
//! The integrator is discretize-then-differentiate: every stage is an
//! ordinary tape op, so reverse-mode gradients flow through the whole
//! numerical trajectory exactly as computed. State is a list of parts so
//! coupled systems (for instance `[z, a]` with `dz/dt = F_z(z) + F_a(a)` and
//! `da/dt = F_a(a)`) integrate jointly without concatenation.

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};

/// Classic RK4 over `[t0, t1]` in `n_steps` fixed steps.
///
/// `field` maps the state parts to their time derivatives (same shapes, same
/// order). Returns the final state parts. Errors if any step produces a
/// non-finite value.
pub fn rk4_integrate<F>(tape: &mut Tape, field: F, s0: &[Var], t0: f64, t1: f64, n_steps: usize) -> Result<Vec<Var>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Vec<Var>>,
{
    if n_steps == 0 {
        return Err(Error::InvalidArgument {
            context: "rk4_integrate",
            detail: "n_steps must be at least 1".into(),
        });
    }
    let h = (t1 - t0) / n_steps as f64;
    let mut s: Vec<Var> = s0.to_vec();
    for step in 0..n_steps {
        let k1 = field(tape, &s)?;
        let s2 = offset(tape, &s, &k1, 0.5 * h)?;
        let k2 = field(tape, &s2)?;
        let s3 = offset(tape, &s, &k2, 0.5 * h)?;
        let k3 = field(tape, &s3)?;
        let s4 = offset(tape, &s, &k3, h)?;
        let k4 = field(tape, &s4)?;
        let mut next = Vec::with_capacity(s.len());
        for i in 0..s.len() {
            let mut acc = tape.add_scaled(s[i], k1[i], h / 6.0)?;
            acc = tape.add_scaled(acc, k2[i], h / 3.0)?;
            acc = tape.add_scaled(acc, k3[i], h / 3.0)?;
            acc = tape.add_scaled(acc, k4[i], h / 6.0)?;
            next.push(acc);
        }
        for (i, &part) in next.iter().enumerate() {
            if !tape.value(part).iter().all(|v| v.is_finite()) {
                return Err(Error::SimulationDiverged {
                    step,
                    detail: format!("RK4 state part {i} became non-finite"),
                });
            }
        }
        s = next;
    }
    Ok(s)
}

fn offset(tape: &mut Tape, s: &[Var], k: &[Var], c: f64) -> Result<Vec<Var>> {
    if s.len() != k.len() {
        return Err(Error::ShapeMismatch {
            context: "rk4_integrate",
            expected: format!("{} state parts from the field", s.len()),
            got: format!("{}", k.len()),
        });
    }
    s.iter()
        .zip(k)
        .map(|(&si, &ki)| tape.add_scaled(si, ki, c))
        .collect()
}
