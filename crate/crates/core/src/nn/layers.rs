//! Reusable differentiable layers over the tape: dense, convolution,
//! transposed convolution, multilayer perceptrons, and the GRU cell.
//!
//! A layer struct owns nothing but indices into the [`ParamSet`] it was
//! initialized against; applying it replays the computation on a [`Tape`]
//! through a [`TapeBinding`] of that same set.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::params::{uniform_init, zeros, ParamSet, TapeBinding};
use crate::nn::tape::{Tape, Var};

/// Fully connected layer `y = Wx + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    w: usize,
    b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn init(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = params.add(format!("{name}.w"), uniform_init(rng, &[out_dim, in_dim], in_dim), true);
        let b = params.add(format!("{name}.b"), zeros(&[out_dim]), true);
        Dense { w, b, in_dim, out_dim }
    }

    /// All-zero weights and bias: the layer's output is identically zero
    /// until training moves it (used for coupling terms that must start
    /// exactly inactive).
    pub fn init_zero(params: &mut ParamSet, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let w = params.add(format!("{name}.w"), zeros(&[out_dim, in_dim]), true);
        let b = params.add(format!("{name}.b"), zeros(&[out_dim]), true);
        Dense { w, b, in_dim, out_dim }
    }

    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, x: Var) -> Result<Var> {
        let wx = tape.matvec(bind.var(self.w), x)?;
        tape.add(wx, bind.var(self.b))
    }
}

/// Strided 3×3 convolution layer with bias.
#[derive(Debug, Clone)]
pub struct Conv2dLayer {
    w: usize,
    b: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2dLayer {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = params.add(
            format!("{name}.w"),
            uniform_init(rng, &[c_out, c_in, kernel, kernel], fan_in),
            true,
        );
        let b = params.add(format!("{name}.b"), zeros(&[c_out]), true);
        Conv2dLayer { w, b, stride, pad }
    }

    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, x: Var) -> Result<Var> {
        tape.conv2d(x, bind.var(self.w), bind.var(self.b), self.stride, self.pad)
    }
}

/// Strided 3×3 transposed-convolution layer with bias (2× upsampling at
/// stride 2, pad 1, output padding 1).
#[derive(Debug, Clone)]
pub struct ConvTranspose2dLayer {
    w: usize,
    b: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_pad: usize,
}

impl ConvTranspose2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        out_pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = params.add(
            format!("{name}.w"),
            uniform_init(rng, &[c_in, c_out, kernel, kernel], fan_in),
            true,
        );
        let b = params.add(format!("{name}.b"), zeros(&[c_out]), true);
        ConvTranspose2dLayer {
            w,
            b,
            stride,
            pad,
            out_pad,
        }
    }

    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, x: Var) -> Result<Var> {
        tape.conv2d_transpose(
            x,
            bind.var(self.w),
            bind.var(self.b),
            self.stride,
            self.pad,
            self.out_pad,
        )
    }
}

/// Multilayer perceptron with tanh hidden activations and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    /// `dims = [in, hidden…, out]`; at least one layer.
    pub fn init(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self::init_inner(params, name, dims, rng, false)
    }

    /// As [`Mlp::init`] but with the final layer all-zero, so the whole
    /// network's output starts identically zero.
    pub fn init_zero_output(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut ChaCha8Rng) -> Self {
        Self::init_inner(params, name, dims, rng, true)
    }

    fn init_inner(params: &mut ParamSet, name: &str, dims: &[usize], rng: &mut ChaCha8Rng, zero_last: bool) -> Self {
        assert!(dims.len() >= 2, "MLP needs at least input and output dims");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let lname = format!("{name}.l{i}");
            let last = i == dims.len() - 2;
            let layer = if last && zero_last {
                Dense::init_zero(params, &lname, pair[0], pair[1])
            } else {
                Dense::init(params, &lname, pair[0], pair[1], rng)
            };
            layers.push(layer);
        }
        Mlp { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().expect("non-empty MLP").in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty MLP").out_dim
    }

    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, x: Var) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.apply(tape, bind, h)?;
            if i != last {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }
}

/// Standard GRU cell.
///
/// ```text
/// r  = σ(W_r x + U_r h + b_r)
/// u  = σ(W_u x + U_u h + b_u)
/// c  = tanh(W_c x + U_c (r ∘ h) + b_c)
/// h' = u ∘ h + (1 − u) ∘ c
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    w_r: usize,
    u_r: usize,
    b_r: usize,
    w_u: usize,
    u_u: usize,
    b_u: usize,
    w_c: usize,
    u_c: usize,
    b_c: usize,
    pub dim: usize,
}

impl GruCell {
    pub fn init(params: &mut ParamSet, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut gate = |g: &str| {
            (
                params.add(format!("{name}.w_{g}"), uniform_init(rng, &[dim, dim], dim), true),
                params.add(format!("{name}.u_{g}"), uniform_init(rng, &[dim, dim], dim), true),
                params.add(format!("{name}.b_{g}"), zeros(&[dim]), true),
            )
        };
        let (w_r, u_r, b_r) = gate("r");
        let (w_u, u_u, b_u) = gate("u");
        let (w_c, u_c, b_c) = gate("c");
        GruCell {
            w_r,
            u_r,
            b_r,
            w_u,
            u_u,
            b_u,
            w_c,
            u_c,
            b_c,
            dim,
        }
    }

    /// One cell step: hidden state `h`, input `x`.
    pub fn apply(&self, tape: &mut Tape, bind: &TapeBinding, h: Var, x: Var) -> Result<Var> {
        let pre_r = {
            let wx = tape.matvec(bind.var(self.w_r), x)?;
            let uh = tape.matvec(bind.var(self.u_r), h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, bind.var(self.b_r))?
        };
        let r = tape.sigmoid(pre_r);
        let pre_u = {
            let wx = tape.matvec(bind.var(self.w_u), x)?;
            let uh = tape.matvec(bind.var(self.u_u), h)?;
            let s = tape.add(wx, uh)?;
            tape.add(s, bind.var(self.b_u))?
        };
        let u = tape.sigmoid(pre_u);
        let rh = tape.mul(r, h)?;
        let pre_c = {
            let wx = tape.matvec(bind.var(self.w_c), x)?;
            let urh = tape.matvec(bind.var(self.u_c), rh)?;
            let s = tape.add(wx, urh)?;
            tape.add(s, bind.var(self.b_c))?
        };
        let c = tape.tanh(pre_c);
        // h' = c + u∘h − u∘c
        let uh = tape.mul(u, h)?;
        let uc = tape.mul(u, c)?;
        let partial = tape.add(c, uh)?;
        tape.sub(partial, uc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, ArrayD, IxDyn};
    use rand::Rng;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn vec_leaf(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Array1::from_vec(v.to_vec()).into_dyn())
    }

    #[test]
    fn dense_applies_affine_map() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let d = Dense::init(&mut params, "d", 3, 2, &mut r);
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let x = vec_leaf(&mut tape, &[1.0, -0.5, 2.0]);
        let y = d.apply(&mut tape, &bind, x).unwrap();
        let w = &params.by_name("d.w").unwrap().data;
        let expect0 = w[[0, 0]] * 1.0 + w[[0, 1]] * -0.5 + w[[0, 2]] * 2.0;
        assert!((tape.value(y)[[0]] - expect0).abs() < 1e-14);
    }

    #[test]
    fn zero_parameter_gru_halves_hidden_state() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let cell = GruCell::init(&mut params, "g", 4, &mut r);
        for e in params.entries_mut() {
            e.data.fill(0.0);
        }
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let h = vec_leaf(&mut tape, &[1.0, -2.0, 0.5, 4.0]);
        let x = vec_leaf(&mut tape, &[0.3, 0.1, -0.7, 0.9]);
        let out = cell.apply(&mut tape, &bind, h, x).unwrap();
        // σ(0) = 0.5, tanh(0) = 0, so h' = 0.5·h.
        let got = tape.value(out);
        for (g, e) in got.iter().zip([0.5, -1.0, 0.25, 2.0]) {
            assert!((g - e).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_update_gate_passes_hidden_state_through() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let cell = GruCell::init(&mut params, "g", 3, &mut r);
        let bu = params.index_of("g.b_u").unwrap();
        params.get_mut(bu).data.fill(50.0);
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let h = vec_leaf(&mut tape, &[0.4, -1.2, 2.2]);
        let x = vec_leaf(&mut tape, &[1.0, 1.0, 1.0]);
        let out = cell.apply(&mut tape, &bind, h, x).unwrap();
        for (g, e) in tape.value(out).iter().zip([0.4, -1.2, 2.2]) {
            assert!((g - e).abs() < 1e-8);
        }
    }

    #[test]
    fn gru_matches_elementwise_oracle() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let dim = 5;
        let cell = GruCell::init(&mut params, "g", dim, &mut r);
        let h0: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let h = vec_leaf(&mut tape, &h0);
        let x = vec_leaf(&mut tape, &x0);
        let out = cell.apply(&mut tape, &bind, h, x).unwrap();

        // Independent scalar-loop evaluation of the same equations.
        let g = |name: &str| params.by_name(name).unwrap().data.clone();
        let mv = |m: &ArrayD<f64>, v: &[f64]| -> Vec<f64> {
            (0..dim)
                .map(|i| (0..dim).map(|j| m[[i, j]] * v[j]).sum::<f64>())
                .collect()
        };
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let wr = mv(&g("g.w_r"), &x0);
        let ur = mv(&g("g.u_r"), &h0);
        let br = g("g.b_r");
        let r_gate: Vec<f64> = (0..dim).map(|i| sig(wr[i] + ur[i] + br[[i]])).collect();
        let wu = mv(&g("g.w_u"), &x0);
        let uu = mv(&g("g.u_u"), &h0);
        let bu = g("g.b_u");
        let u_gate: Vec<f64> = (0..dim).map(|i| sig(wu[i] + uu[i] + bu[[i]])).collect();
        let rh: Vec<f64> = (0..dim).map(|i| r_gate[i] * h0[i]).collect();
        let wc = mv(&g("g.w_c"), &x0);
        let uc = mv(&g("g.u_c"), &rh);
        let bc = g("g.b_c");
        let c: Vec<f64> = (0..dim).map(|i| (wc[i] + uc[i] + bc[[i]]).tanh()).collect();
        for i in 0..dim {
            let expect = u_gate[i] * h0[i] + (1.0 - u_gate[i]) * c[i];
            assert!((tape.value(out)[[i]] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_output_mlp_emits_exact_zeros() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let mlp = Mlp::init_zero_output(&mut params, "f", &[4, 8, 4], &mut r);
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let x = vec_leaf(&mut tape, &[0.5, -0.5, 1.0, 2.0]);
        let y = mlp.apply(&mut tape, &bind, x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_dims_round_trip() {
        let mut params = ParamSet::new();
        let mut r = rng();
        let mlp = Mlp::init(&mut params, "f", &[12, 64, 64, 12], &mut r);
        assert_eq!(mlp.in_dim(), 12);
        assert_eq!(mlp.out_dim(), 12);
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &params);
        let x = tape.leaf(ArrayD::zeros(IxDyn(&[12])));
        let y = mlp.apply(&mut tape, &bind, x).unwrap();
        assert_eq!(tape.value(y).shape(), &[12]);
    }
}
