//! Named parameter collections with per-array trainability.
//!
//! Models keep their weights in a [`ParamSet`]: an ordered list of named
//! arrays. The order is the serialization order of checkpoints and the
//! alignment key for optimizer state and gradient buffers. Arrays marked
//! `trainable = false` are frozen: the optimizer never touches them and
//! their bytes hash identically before and after training.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};

/// One named weight array.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub name: String,
    pub data: ArrayD<f64>,
    pub trainable: bool,
}

/// Ordered, name-addressable set of weight arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<ParamArray>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Append an array; names must be unique.
    pub fn add(&mut self, name: impl Into<String>, data: ArrayD<f64>, trainable: bool) -> usize {
        let name = name.into();
        debug_assert!(
            self.index_of(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.entries.push(ParamArray {
            name,
            data,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn get(&self, idx: usize) -> &ParamArray {
        &self.entries[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut ParamArray {
        &mut self.entries[idx]
    }

    pub fn by_name(&self, name: &str) -> Result<&ParamArray> {
        self.index_of(name)
            .map(|i| &self.entries[i])
            .ok_or_else(|| Error::InvalidArgument {
                context: "ParamSet",
                detail: format!("unknown parameter {name}"),
            })
    }

    pub fn entries(&self) -> &[ParamArray] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamArray] {
        &mut self.entries
    }

    /// Mark every array frozen (used when folding a trained model into a
    /// larger one as a fixed component).
    pub fn freeze_all(&mut self) {
        for e in &mut self.entries {
            e.trainable = false;
        }
    }

    /// Append all entries of `other` under a `prefix.` namespace.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet) {
        for e in other.entries {
            self.add(format!("{prefix}.{}", e.name), e.data, e.trainable);
        }
    }

    /// Total scalar count over all arrays.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// SHA-256 over name, shape, and little-endian f64 bytes of every entry
    /// selected by `filter`, in declaration order.
    pub fn hash_arrays(&self, filter: impl Fn(&ParamArray) -> bool) -> String {
        let mut hasher = Sha256::new();
        for e in self.entries.iter().filter(|e| filter(e)) {
            hasher.update(e.name.as_bytes());
            hasher.update([0u8]);
            for &d in e.data.shape() {
                hasher.update((d as u64).to_le_bytes());
            }
            for &v in e.data.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Hash of the frozen subset only.
    pub fn frozen_hash(&self) -> String {
        self.hash_arrays(|e| !e.trainable)
    }

    /// Hash of every array.
    pub fn full_hash(&self) -> String {
        self.hash_arrays(|_| true)
    }
}

/// Tape leaves for every entry of a [`ParamSet`], index-aligned.
pub struct TapeBinding {
    vars: Vec<Var>,
}

impl TapeBinding {
    /// Create one leaf per parameter; trainable entries get gradients.
    pub fn bind(tape: &mut Tape, params: &ParamSet) -> Self {
        let vars = params
            .entries()
            .iter()
            .map(|e| {
                let v = if e.trainable {
                    tape.leaf_grad(e.data.clone())
                } else {
                    tape.leaf(e.data.clone())
                };
                tape.set_label(v, e.name.clone());
                v
            })
            .collect();
        TapeBinding { vars }
    }

    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn var_of(&self, params: &ParamSet, name: &str) -> Result<Var> {
        params
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::InvalidArgument {
                context: "TapeBinding",
                detail: format!("unknown parameter {name}"),
            })
    }

    /// Gradients after a backward pass, index-aligned with the ParamSet
    /// (None for frozen or unused arrays).
    pub fn gradients(&self, tape: &Tape) -> Vec<Option<ArrayD<f64>>> {
        self.vars.iter().map(|&v| tape.grad(v).cloned()).collect()
    }
}

/// Accumulate `delta` gradients into `acc` elementwise (None = zero).
pub fn accumulate_gradients(acc: &mut Vec<Option<ArrayD<f64>>>, delta: &[Option<ArrayD<f64>>]) {
    if acc.is_empty() {
        acc.extend(delta.iter().cloned());
        return;
    }
    assert_eq!(acc.len(), delta.len(), "gradient buffers misaligned");
    for (a, d) in acc.iter_mut().zip(delta) {
        match (a.as_mut(), d) {
            (Some(a), Some(d)) => *a += d,
            (None, Some(d)) => *a = Some(d.clone()),
            _ => {}
        }
    }
}

/// Scale every gradient in place (batch averaging).
pub fn scale_gradients(grads: &mut [Option<ArrayD<f64>>], factor: f64) {
    for g in grads.iter_mut().flatten() {
        g.mapv_inplace(|v| v * factor);
    }
}

/// Uniform fan-in initialization: `U(−1/√fan_in, 1/√fan_in)`.
pub fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> ArrayD<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
}

/// All-zero array (biases, zero-coupling output layers).
pub fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_resolve_to_indices() {
        let mut p = ParamSet::new();
        let i0 = p.add("w", zeros(&[2, 3]), true);
        let i1 = p.add("b", zeros(&[3]), false);
        assert_eq!(p.index_of("w"), Some(i0));
        assert_eq!(p.index_of("b"), Some(i1));
        assert!(p.by_name("nope").is_err());
        assert_eq!(p.scalar_count(), 9);
    }

    #[test]
    fn frozen_hash_ignores_trainable_arrays() {
        let mut p = ParamSet::new();
        p.add("frozen", ArrayD::from_elem(IxDyn(&[2]), 1.0), false);
        p.add("live", ArrayD::from_elem(IxDyn(&[2]), 2.0), true);
        let h0 = p.frozen_hash();
        p.get_mut(1).data[[0]] = 99.0;
        assert_eq!(p.frozen_hash(), h0);
        p.get_mut(0).data[[0]] = 99.0;
        assert_ne!(p.frozen_hash(), h0);
    }

    #[test]
    fn absorb_namespaces_entries() {
        let mut inner = ParamSet::new();
        inner.add("w", zeros(&[2]), true);
        let mut outer = ParamSet::new();
        outer.absorb("enc", inner);
        assert!(outer.index_of("enc.w").is_some());
    }

    #[test]
    fn binding_freezes_non_trainable_leaves() {
        let mut p = ParamSet::new();
        p.add("w", ArrayD::from_elem(IxDyn(&[2]), 1.5), true);
        p.add("frozen", ArrayD::from_elem(IxDyn(&[2]), 2.5), false);
        let mut tape = Tape::new();
        let bind = TapeBinding::bind(&mut tape, &p);
        let w = bind.var(0);
        let f = bind.var(1);
        let s = tape.mul(w, f).unwrap();
        let l = tape.sum(s);
        tape.backward(l).unwrap();
        let grads = bind.gradients(&tape);
        assert!(grads[0].is_some());
        assert!(grads[1].is_none());
    }

    #[test]
    fn gradient_accumulation_averages() {
        let mut acc: Vec<Option<ArrayD<f64>>> = Vec::new();
        let g1 = vec![Some(ArrayD::from_elem(IxDyn(&[2]), 1.0)), None];
        let g2 = vec![Some(ArrayD::from_elem(IxDyn(&[2]), 3.0)), None];
        accumulate_gradients(&mut acc, &g1);
        accumulate_gradients(&mut acc, &g2);
        scale_gradients(&mut acc, 0.5);
        assert_eq!(acc[0].as_ref().unwrap()[[0]], 2.0);
        assert!(acc[1].is_none());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = uniform_init(&mut rng, &[64, 16], 16);
        let bound = 0.25;
        assert!(w.iter().all(|&v| v.abs() <= bound));
        assert!(w.iter().any(|&v| v.abs() > bound * 0.5));
    }
}
