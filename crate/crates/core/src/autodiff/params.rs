//! Named parameter storage with Adam updates.
//!
//! Parameters live outside any tape. Each training step binds them onto a
//! fresh [`Tape`](super::Tape) as trainable leaves, runs backward, then copies
//! node gradients back here for the optimizer.

use super::tape::{NodeId, Tape, TapeError};
use crate::mat::Mat;
use crate::scalar::{real, Real};

/// Handle to one parameter in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Mat<T>,
    pub grad: Mat<T>,
    pub adam_m: Mat<T>,
    pub adam_v: Mat<T>,
}

/// Ordered collection of named parameter matrices plus optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: Vec<ParamEntry<T>>,
    step: u64,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            step: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat<T>) -> ParamId {
        let (m, n) = value.shape();
        self.entries.push(ParamEntry {
            name: name.into(),
            value,
            grad: Mat::zeros(m, n),
            adam_m: Mat::zeros(m, n),
            adam_v: Mat::zeros(m, n),
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Mat<T> {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat<T> {
        &mut self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Mat<T> {
        &self.entries[id.0].grad
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry<T>] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn adam_step_count(&self) -> u64 {
        self.step
    }

    pub fn set_adam_step_count(&mut self, step: u64) {
        self.step = step;
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            for g in e.grad.as_mut_slice() {
                *g = T::zero();
            }
        }
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<TapeBinding, TapeError> {
        let mut ids = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            ids.push(tape.var(e.value.clone())?);
        }
        Ok(TapeBinding { ids })
    }

    /// Adds the tape gradients of a completed backward sweep into the stored
    /// gradients. Parameters unreachable from the root are left untouched.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, binding: &TapeBinding) {
        for (e, &nid) in self.entries.iter_mut().zip(&binding.ids) {
            if let Some(g) = tape.grad(nid) {
                e.grad.add_assign(g);
            }
        }
    }

    /// One Adam update with bias correction. Parameters whose gradient
    /// contains a non-finite entry are skipped and reported through `log`.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = real::<T>(cfg.beta1);
        let b2 = real::<T>(cfg.beta2);
        let lr = real::<T>(cfg.lr);
        let eps = real::<T>(cfg.eps);
        let one = T::one();
        let bc1 = one - b1.powi(t);
        let bc2 = one - b2.powi(t);
        for e in &mut self.entries {
            if !e.grad.all_finite() {
                log::warn!(
                    "adam: skipping update of '{}' at step {}: non-finite gradient",
                    e.name,
                    self.step
                );
                continue;
            }
            let g = e.grad.as_slice();
            let m = e.adam_m.as_mut_slice();
            let v = e.adam_v.as_mut_slice();
            let x = e.value.as_mut_slice();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                x[i] = x[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Node ids of one [`ParamSet::bind`] call, aligned with parameter order.
pub struct TapeBinding {
    ids: Vec<NodeId>,
}

impl TapeBinding {
    pub fn node(&self, id: ParamId) -> NodeId {
        self.ids[id.0]
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.ids
    }
}

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Central finite difference of `eval` with respect to one scalar element of
/// one parameter. Restores the original value before returning.
pub fn central_diff_param<T: Real>(
    set: &mut ParamSet<T>,
    id: ParamId,
    elem: usize,
    h: T,
    mut eval: impl FnMut(&ParamSet<T>) -> T,
) -> T {
    let base = set.entries[id.0].value.as_slice()[elem];
    set.entries[id.0].value.as_mut_slice()[elem] = base + h;
    let fp = eval(set);
    set.entries[id.0].value.as_mut_slice()[elem] = base - h;
    let fm = eval(set);
    set.entries[id.0].value.as_mut_slice()[elem] = base;
    (fp - fm) / (h + h)
}
