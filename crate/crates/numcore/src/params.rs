//! Named trainable parameters with explicit storage sharing.
//!
//! A [`ParamLayout`] maps slot names to storages. Several slots may point at
//! the same storage: they then alias one tensor and one gradient accumulator.
//! Weight tying is nothing more than rebinding slots before allocation.

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NumError, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StorageId(pub usize);

/// How a storage is filled by [`ParamRegistry::initialize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitRule {
    /// Uniform in `[-range, range]`.
    Uniform,
    /// Every value set to the constant.
    Constant(f64),
    /// LSTM bias `[4 * hidden]` in gate order (input, forget, cell, output):
    /// forget slice set to the constant, the rest uniform.
    LstmBias { hidden: usize, forget: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSpec {
    pub shape: Vec<usize>,
    pub init: InitRule,
}

impl StorageSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Structural description of the parameters: slot names, shapes, sharing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    slots: IndexMap<String, StorageId>,
    storages: Vec<StorageSpec>,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Declares a slot backed by a fresh storage.
    pub fn declare(&mut self, name: &str, shape: &[usize], init: InitRule) -> Result<StorageId> {
        if self.slots.contains_key(name) {
            return Err(NumError::DuplicateSlot(name.to_string()));
        }
        let id = StorageId(self.storages.len());
        self.storages.push(StorageSpec {
            shape: shape.to_vec(),
            init,
        });
        self.slots.insert(name.to_string(), id);
        Ok(id)
    }

    /// Points slot `name` at the storage currently used by slot `target`.
    ///
    /// Shapes must agree. Storages left without any slot are dropped and ids
    /// are renumbered in first-use order.
    pub fn tie(&mut self, name: &str, target: &str) -> Result<()> {
        let src = self.storage_of(name)?;
        let dst = self.storage_of(target)?;
        if src == dst {
            return Ok(());
        }
        let (a, b) = (&self.storages[src.0].shape, &self.storages[dst.0].shape);
        if a != b {
            return Err(NumError::ShapeMismatch {
                op: "tie",
                left: a.clone(),
                right: b.clone(),
            });
        }
        self.slots.insert(name.to_string(), dst);
        self.compact();
        Ok(())
    }

    fn compact(&mut self) {
        let mut remap: Vec<Option<usize>> = vec![None; self.storages.len()];
        let mut kept = Vec::new();
        for id in self.slots.values_mut() {
            let new = match remap[id.0] {
                Some(n) => n,
                None => {
                    remap[id.0] = Some(kept.len());
                    kept.push(self.storages[id.0].clone());
                    kept.len() - 1
                }
            };
            *id = StorageId(new);
        }
        self.storages = kept;
    }

    pub fn storage_of(&self, name: &str) -> Result<StorageId> {
        self.slots
            .get(name)
            .copied()
            .ok_or_else(|| NumError::UnknownSlot(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.slots.contains_key(name)
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, StorageId)> {
        self.slots.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn storages(&self) -> &[StorageSpec] {
        &self.storages
    }

    pub fn storage(&self, id: StorageId) -> &StorageSpec {
        &self.storages[id.0]
    }

    pub fn shape_of(&self, name: &str) -> Result<&[usize]> {
        Ok(&self.storages[self.storage_of(name)?.0].shape)
    }

    /// Trainable scalar count over distinct storages (the reported model size).
    pub fn unique_param_count(&self) -> usize {
        self.storages.iter().map(StorageSpec::numel).sum()
    }

    /// Scalar count if every slot had its own storage.
    pub fn total_slot_param_count(&self) -> usize {
        self.slots
            .values()
            .map(|id| self.storages[id.0].numel())
            .sum()
    }

    pub fn shares_storage(&self, a: &str, b: &str) -> Result<bool> {
        Ok(self.storage_of(a)? == self.storage_of(b)?)
    }
}

/// Gradients keyed by storage, as produced by a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub(crate) by_storage: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, id: StorageId) -> Option<&Tensor<F>> {
        self.by_storage.get(id.0).and_then(Option::as_ref)
    }
}

/// Allocated parameter values and gradient accumulators for a layout.
#[derive(Debug, Clone)]
pub struct ParamRegistry<F> {
    layout: ParamLayout,
    values: Vec<Tensor<F>>,
    grads: Vec<Tensor<F>>,
    version: u64,
}

impl<F: Scalar> ParamRegistry<F> {
    pub fn zeros(layout: ParamLayout) -> Self {
        let values: Vec<_> = layout
            .storages()
            .iter()
            .map(|s| Tensor::zeros(&s.shape))
            .collect();
        let grads = values.clone();
        ParamRegistry {
            layout,
            values,
            grads,
            version: 0,
        }
    }

    /// Allocates from existing storage values (e.g. a checkpoint).
    pub fn from_values(layout: ParamLayout, values: Vec<Tensor<F>>) -> Result<Self> {
        if values.len() != layout.storages().len() {
            return Err(NumError::Checkpoint(format!(
                "expected {} storages, got {}",
                layout.storages().len(),
                values.len()
            )));
        }
        for (spec, v) in layout.storages().iter().zip(&values) {
            if spec.shape != v.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "from_values",
                    left: spec.shape.clone(),
                    right: v.shape().to_vec(),
                });
            }
        }
        let grads = values.iter().map(|v| Tensor::zeros(v.shape())).collect();
        Ok(ParamRegistry {
            layout,
            values,
            grads,
            version: 0,
        })
    }

    /// Fills every storage according to its [`InitRule`]. Each storage is
    /// visited once, so tied slots are initialized once.
    pub fn initialize<R: Rng>(&mut self, rng: &mut R, range: f64) {
        for (spec, value) in self.layout.storages.iter().zip(self.values.iter_mut()) {
            let uniform = |rng: &mut R| F::from_f64_lossy(rng.gen_range(-range..=range));
            match spec.init {
                InitRule::Uniform => {
                    for v in value.data_mut() {
                        *v = uniform(rng);
                    }
                }
                InitRule::Constant(c) => value.fill(F::from_f64_lossy(c)),
                InitRule::LstmBias { hidden, forget } => {
                    for (i, v) in value.data_mut().iter_mut().enumerate() {
                        *v = if (hidden..2 * hidden).contains(&i) {
                            F::from_f64_lossy(forget)
                        } else {
                            uniform(rng)
                        };
                    }
                }
            }
        }
        self.version += 1;
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Monotone counter bumped on every mutation of parameter values.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(&self.values[self.layout.storage_of(name)?.0])
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        let id = self.layout.storage_of(name)?;
        self.version += 1;
        Ok(&mut self.values[id.0])
    }

    pub fn storage_value(&self, id: StorageId) -> &Tensor<F> {
        &self.values[id.0]
    }

    pub fn storage_value_mut(&mut self, id: StorageId) -> &mut Tensor<F> {
        self.version += 1;
        &mut self.values[id.0]
    }

    pub fn storage_values(&self) -> &[Tensor<F>] {
        &self.values
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor<F>> {
        Ok(&self.grads[self.layout.storage_of(name)?.0])
    }

    pub fn storage_grad(&self, id: StorageId) -> &Tensor<F> {
        &self.grads[id.0]
    }

    pub fn accumulate(&mut self, grads: &Gradients<F>) {
        for (acc, g) in self.grads.iter_mut().zip(&grads.by_storage) {
            if let Some(g) = g {
                acc.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(F::zero());
        }
    }

    pub fn unique_param_count(&self) -> usize {
        self.layout.unique_param_count()
    }

    /// Global L2 norm over unique storages.
    pub fn grad_norm(&self) -> F {
        self.grads
            .iter()
            .map(|g| g.sum_of_squares())
            .sum::<F>()
            .sqrt()
    }

    /// Divides gradients by `batch_size`, then rescales them so their global
    /// norm does not exceed `max_norm`. Returns the clipping factor applied
    /// after the batch normalization (1 when no clipping happened).
    pub fn clip_global_norm(&mut self, max_norm: F, batch_size: usize) -> F {
        let inv = F::one() / F::from_usize(batch_size.max(1)).expect("batch size");
        for g in &mut self.grads {
            g.scale_in_place(inv);
        }
        let norm = self.grad_norm();
        if norm > max_norm && norm > F::zero() {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.scale_in_place(scale);
            }
            scale
        } else {
            F::one()
        }
    }

    /// `p <- p - lr * grad` once per storage, then zeroes gradients.
    pub fn sgd_step(&mut self, lr: F) {
        for (v, g) in self.values.iter_mut().zip(self.grads.iter_mut()) {
            for (p, &d) in v.data_mut().iter_mut().zip(g.data()) {
                *p = *p - lr * d;
            }
            g.fill(F::zero());
        }
        self.version += 1;
    }

    /// Copy of the registry in another precision (gradients reset).
    pub fn cast<G: Scalar>(&self) -> ParamRegistry<G> {
        let values: Vec<Tensor<G>> = self.values.iter().map(Tensor::cast).collect();
        let grads = values.iter().map(|v| Tensor::zeros(v.shape())).collect();
        ParamRegistry {
            layout: self.layout.clone(),
            values,
            grads,
            version: 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_slot_layout() -> ParamLayout {
        let mut l = ParamLayout::new();
        l.declare("a", &[2, 3], InitRule::Uniform).unwrap();
        l.declare("b", &[2, 3], InitRule::Uniform).unwrap();
        l.declare("c", &[4], InitRule::Constant(-2.0)).unwrap();
        l
    }

    #[test]
    fn tying_reduces_unique_count() {
        let mut l = two_slot_layout();
        assert_eq!(l.unique_param_count(), 16);
        l.tie("b", "a").unwrap();
        assert_eq!(l.unique_param_count(), 10);
        assert_eq!(l.total_slot_param_count(), 16);
        assert!(l.shares_storage("a", "b").unwrap());
        assert_eq!(l.storages().len(), 2);
    }

    #[test]
    fn tie_shape_mismatch() {
        let mut l = two_slot_layout();
        assert!(matches!(l.tie("c", "a"), Err(NumError::ShapeMismatch { .. })));
    }

    #[test]
    fn duplicate_slot_rejected() {
        let mut l = two_slot_layout();
        assert!(l.declare("a", &[1], InitRule::Uniform).is_err());
    }

    #[test]
    fn clip_examples() {
        let mut l = ParamLayout::new();
        l.declare("x", &[1], InitRule::Uniform).unwrap();
        l.declare("y", &[1], InitRule::Uniform).unwrap();
        let mut r = ParamRegistry::<f64>::zeros(l);
        r.grads[0].data_mut()[0] = 3.0;
        r.grads[1].data_mut()[0] = 4.0;
        assert_eq!(r.grad_norm(), 5.0);
        // norm 10 with max 5 -> 0.5
        r.grads[0].data_mut()[0] = 6.0;
        r.grads[1].data_mut()[0] = 8.0;
        assert_eq!(r.clip_global_norm(5.0, 1), 0.5);
        assert!((r.grad_norm() - 5.0).abs() < 1e-12);
        // norm 3 with max 5 -> untouched
        r.grads[0].data_mut()[0] = 3.0;
        r.grads[1].data_mut()[0] = 0.0;
        assert_eq!(r.clip_global_norm(5.0, 1), 1.0);
        assert_eq!(r.grads[0].data()[0], 3.0);
    }

    #[test]
    fn clip_normalizes_by_batch_first() {
        let mut l = ParamLayout::new();
        l.declare("x", &[1], InitRule::Uniform).unwrap();
        let mut r = ParamRegistry::<f64>::zeros(l);
        r.grads[0].data_mut()[0] = 40.0;
        assert_eq!(r.clip_global_norm(5.0, 20), 1.0);
        assert_eq!(r.grads[0].data()[0], 2.0);
    }

    #[test]
    fn sgd_examples() {
        let mut l = ParamLayout::new();
        l.declare("p", &[1], InitRule::Uniform).unwrap();
        l.declare("q", &[1], InitRule::Uniform).unwrap();
        l.tie("q", "p").unwrap();
        let mut r = ParamRegistry::<f64>::zeros(l);
        r.values[0].data_mut()[0] = 1.0;
        r.grads[0].data_mut()[0] = 0.5;
        r.sgd_step(0.2);
        // one update for two names
        assert!((r.value("q").unwrap().data()[0] - 0.9).abs() < 1e-12);
        assert_eq!(r.grad("p").unwrap().data()[0], 0.0);
        r.grads[0].data_mut()[0] = 0.5;
        r.sgd_step(0.0);
        assert!((r.value("p").unwrap().data()[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn init_rules_and_determinism() {
        let mut l = ParamLayout::new();
        l.declare("w", &[50], InitRule::Uniform).unwrap();
        l.declare("hw.c", &[5], InitRule::Constant(-2.0)).unwrap();
        l.declare("lstm.b", &[12], InitRule::LstmBias { hidden: 3, forget: 1.0 })
            .unwrap();
        let mut a = ParamRegistry::<f32>::zeros(l.clone());
        let mut b = ParamRegistry::<f32>::zeros(l);
        a.initialize(&mut rand::rngs::StdRng::seed_from_u64(7), 0.1);
        b.initialize(&mut rand::rngs::StdRng::seed_from_u64(7), 0.1);
        assert_eq!(a.storage_values(), b.storage_values());
        assert!(a.value("w").unwrap().data().iter().all(|v| v.abs() <= 0.1));
        assert!(a.value("hw.c").unwrap().data().iter().all(|&v| v == -2.0));
        let bias = a.value("lstm.b").unwrap().data();
        assert!(bias[3..6].iter().all(|&v| v == 1.0));
        assert!(bias[..3].iter().chain(&bias[6..]).all(|v| v.abs() <= 0.1));
    }
}
