//! Named parameter store, deterministic initialization and the forward-pass
//! binding context.
//!
//! Parameters live in a [`ParamStore`] keyed by dotted names
//! (`mafe.stage1.block0.attn.q.weight`, `prompt.RGB`, ...). A [`Ctx`] binds
//! store entries to tape leaves on demand during a forward pass, so one
//! backward sweep yields gradients for exactly the parameters the pass
//! touched.

use std::cell::RefCell;
use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Ordered map of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.entries.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    /// Total scalar count of tensors whose name starts with `prefix`.
    pub fn scalar_count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, v)| v.len())
            .sum()
    }

    /// Checks that `other` has exactly the same names and shapes, naming the
    /// first offending parameter otherwise.
    pub fn validate_shapes(&self, other: &ParamStore) -> Result<()> {
        for (name, value) in &self.entries {
            match other.get(name) {
                None => {
                    return Err(Error::Checkpoint(format!("missing parameter '{name}'")));
                }
                Some(o) if o.shape() != value.shape() => {
                    return Err(Error::Checkpoint(format!(
                        "shape mismatch for parameter '{name}': {:?} vs {:?}",
                        value.shape(),
                        o.shape()
                    )));
                }
                _ => {}
            }
        }
        for name in other.names() {
            if !self.contains(name) {
                return Err(Error::Checkpoint(format!("unexpected parameter '{name}'")));
            }
        }
        Ok(())
    }
}

/// FNV-1a hash of a name, mixed with a seed; used to derive one RNG stream
/// per parameter so initialization is independent of insertion order.
pub fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for b in name.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic per-name initializers.
pub struct Init<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        Init { store, seed }
    }

    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(name_seed(self.seed, name))
    }

    /// He/Kaiming normal: std = sqrt(2 / fan_in).
    pub fn kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        let std = (2.0 / fan_in as f64).sqrt();
        self.normal(name, shape, std);
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) {
        let mut rng = self.rng(name);
        let dist = Normal::new(0.0, std).unwrap();
        let value = ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(&mut rng));
        self.store.insert(name, value);
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) {
        self.store.insert(name, ArrayD::zeros(IxDyn(shape)));
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) {
        self.store.insert(name, ArrayD::ones(IxDyn(shape)));
    }

    /// A linear layer: `{prefix}.weight` (in x out, Kaiming) and
    /// `{prefix}.bias` (out, zero).
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) {
        self.kaiming(&format!("{prefix}.weight"), &[fan_in, fan_out], fan_in);
        self.zeros(&format!("{prefix}.bias"), &[fan_out]);
    }

    /// A layer norm: `{prefix}.gamma` ones and `{prefix}.beta` zeros.
    pub fn layer_norm(&mut self, prefix: &str, dim: usize) {
        self.ones(&format!("{prefix}.gamma"), &[dim]);
        self.zeros(&format!("{prefix}.beta"), &[dim]);
    }

    /// A 2-d convolution: `{prefix}.weight` (cout, cin, k, k) and zero bias.
    pub fn conv(&mut self, prefix: &str, cout: usize, cin: usize, k: usize) {
        self.kaiming(&format!("{prefix}.weight"), &[cout, cin, k, k], cin * k * k);
        self.zeros(&format!("{prefix}.bias"), &[cout]);
    }
}

/// Binds [`ParamStore`] entries to leaves of a [`Tape`] during one forward
/// pass, memoizing so each parameter appears on the tape once.
pub struct Ctx<'a> {
    pub tape: &'a Tape,
    store: &'a ParamStore,
    bound: RefCell<BTreeMap<String, Var>>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Ctx { tape, store, bound: RefCell::new(BTreeMap::new()) }
    }

    /// The tape leaf holding parameter `name`. Panics on unknown names:
    /// parameter layout is fixed by the model config, so a miss is a bug.
    pub fn param(&self, name: &str) -> Var {
        if let Some(v) = self.bound.borrow().get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not in store"))
            .clone();
        let var = self.tape.leaf(value);
        self.bound.borrow_mut().insert(name.to_string(), var);
        var
    }

    /// All parameters bound so far, by name.
    pub fn bound_params(&self) -> Vec<(String, Var)> {
        self.bound.borrow().iter().map(|(n, v)| (n.clone(), *v)).collect()
    }

    // ---- layer helpers over named parameters ----

    pub fn linear(&self, x: Var, prefix: &str) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        self.tape.linear(x, w, b)
    }

    pub fn layer_norm(&self, x: Var, prefix: &str) -> Var {
        let gamma = self.param(&format!("{prefix}.gamma"));
        let beta = self.param(&format!("{prefix}.beta"));
        self.tape.layer_norm(x, gamma, beta, 1e-6)
    }

    /// Two-layer feed-forward with GELU: `fc2(gelu(fc1(x)))`.
    pub fn ffn(&self, x: Var, prefix: &str) -> Var {
        let h = self.linear(x, &format!("{prefix}.fc1"));
        let h = self.tape.gelu(h);
        self.linear(h, &format!("{prefix}.fc2"))
    }

    pub fn conv2d(&self, x: Var, prefix: &str, pad: usize) -> Var {
        let w = self.param(&format!("{prefix}.weight"));
        let b = self.param(&format!("{prefix}.bias"));
        self.tape.conv2d(x, w, Some(b), pad)
    }
}
