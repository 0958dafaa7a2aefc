//! Named parameter tensors, deterministic initialization, and the Adam
//! optimizer with global-norm gradient clipping.
//!
//! Parameters live outside the autodiff tape in a name-keyed store; each
//! forward pass binds them onto a fresh [`Graph`] as leaves, and gradients are
//! collected back into a name-keyed map for the optimizer.  Initialization
//! draws a separate RNG stream per tensor name, so the values of one tensor
//! never depend on the order tensors are created.

use std::collections::BTreeMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{Graph, Grads, NodeId};
use crate::rng::{normal, rng_for};
use crate::scalar::{s, Scalar};

/// Ordered name -> tensor map holding every learnable parameter of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T: Scalar> {
    map: BTreeMap<String, Array2<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<T>) {
        let name = name.into();
        let prev = self.map.insert(name.clone(), value);
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    pub fn get(&self, name: &str) -> Result<&Array2<T>> {
        self.map.get(name).ok_or_else(|| Error::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<T>> {
        self.map.get_mut(name).ok_or_else(|| Error::MissingParam {
            name: name.to_string(),
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Array2<T>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let map = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), v.mapv(|x| s::<U>(x.to_f64_lossy()))))
            .collect();
        ParamStore { map }
    }
}

/// Leaves bound onto a graph for one forward pass, by parameter name.
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.ids.keys()
    }
}

/// Bind every parameter as a leaf node.
pub fn bind_all<T: Scalar>(graph: &mut Graph<T>, store: &ParamStore<T>) -> Bound {
    let mut ids = BTreeMap::new();
    for (name, value) in store.iter() {
        ids.insert(name.clone(), graph.leaf(value.clone()));
    }
    Bound { ids }
}

/// Collect gradients for bound parameters.  Parameters the loss never touched
/// are omitted (not zeros), so optimizer steps can target submodels.
pub fn collect_grads<T: Scalar>(grads: &Grads<T>, bound: &Bound) -> BTreeMap<String, Array2<T>> {
    let mut out = BTreeMap::new();
    for (name, &id) in &bound.ids {
        if let Some(g) = grads.get(id) {
            out.insert(name.clone(), g.clone());
        }
    }
    out
}

/// Merge gradient maps (summing overlaps), e.g. across a batch.
pub fn merge_grads<T: Scalar>(
    into: &mut BTreeMap<String, Array2<T>>,
    from: BTreeMap<String, Array2<T>>,
) {
    for (name, g) in from {
        match into.get_mut(&name) {
            Some(acc) => *acc += &g,
            None => {
                into.insert(name, g);
            }
        }
    }
}

pub fn scale_grads<T: Scalar>(grads: &mut BTreeMap<String, Array2<T>>, factor: f64) {
    let f = s::<T>(factor);
    for g in grads.values_mut() {
        g.mapv_inplace(|x| x * f);
    }
}

/// Deterministic per-tensor initializers for a fixed base seed.
pub struct Init {
    seed: u64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { seed }
    }

    /// Glorot-style scaled normal draw, stream keyed by tensor name.
    pub fn xavier<T: Scalar>(&self, store: &mut ParamStore<T>, name: &str, rows: usize, cols: usize) {
        let mut rng = rng_for(self.seed, name, 0);
        let std = (2.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| s::<T>(normal(&mut rng) * std));
        store.insert(name, value);
    }

    pub fn zeros<T: Scalar>(&self, store: &mut ParamStore<T>, name: &str, rows: usize, cols: usize) {
        store.insert(name, Array2::zeros((rows, cols)));
    }

    pub fn ones<T: Scalar>(&self, store: &mut ParamStore<T>, name: &str, rows: usize, cols: usize) {
        store.insert(name, Array2::from_elem((rows, cols), T::one()));
    }

    pub fn constant<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        name: &str,
        rows: usize,
        cols: usize,
        value: f64,
    ) {
        store.insert(name, Array2::from_elem((rows, cols), s::<T>(value)));
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut BTreeMap<String, Array2<T>>, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    for g in grads.values() {
        for &x in g.iter() {
            let v = x.to_f64_lossy();
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = s::<T>(max_norm / norm);
        for g in grads.values_mut() {
            g.mapv_inplace(|x| x * factor);
        }
    }
    norm
}

/// Adam with bias correction.  Moment buffers are keyed by parameter name and
/// created lazily, so steps may target any subset of the store.
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Array2<T>>,
    v: BTreeMap<String, Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Array2<T>>,
    ) -> Result<()> {
        self.t += 1;
        let b1 = s::<T>(self.beta1);
        let b2 = s::<T>(self.beta2);
        let one = T::one();
        let inv_bc1 = s::<T>(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let inv_bc2 = s::<T>(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = s::<T>(self.lr);
        let eps = s::<T>(self.eps);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &gv| {
                *m = b1 * *m + (one - b1) * gv;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &gv| {
                *v = b2 * *v + (one - b2) * gv * gv;
            });
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                let m_hat = m * inv_bc1;
                let v_hat = v * inv_bc2;
                *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}
