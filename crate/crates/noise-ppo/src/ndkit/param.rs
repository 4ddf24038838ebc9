//! Named parameter sets with matching gradient buffers.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::ndkit::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
struct Slot {
    value: Tensor,
    grad: Tensor,
}

/// A map `name -> parameter tensor` plus a gradient buffer of identical
/// shape per name. Iteration order is always sorted by name, which makes
/// optimizer updates, checkpoints, and the gradient checker deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    slots: BTreeMap<String, Slot>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    /// Registers a parameter; its gradient buffer starts at zero.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.slots.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.slots.insert(name, Slot { value, grad });
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.value)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.slots
            .get(name)
            .map(|s| &s.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.slots
            .get_mut(name)
            .map(|s| &mut s.grad)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    /// Accumulates `delta` into the gradient buffer for `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &Tensor) -> Result<()> {
        self.grad_mut(name)?.axpy(1.0, delta)
    }

    /// Sorted parameter names.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.keys().map(|s| s.as_str())
    }

    /// (name, value, grad) triples in sorted name order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor, &Tensor)> {
        self.slots.iter().map(|(n, s)| (n.as_str(), &s.value, &s.grad))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Total number of scalar coordinates across all parameters.
    pub fn coord_count(&self) -> usize {
        self.slots.values().map(|s| s.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for slot in self.slots.values_mut() {
            for g in slot.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn scale_grads(&mut self, k: f64) {
        for slot in self.slots.values_mut() {
            for g in slot.grad.data_mut() {
                *g *= k;
            }
        }
    }

    /// Global L2 norm over every gradient coordinate of every parameter.
    pub fn grad_l2_norm(&self) -> f64 {
        self.slots
            .values()
            .map(|s| s.grad.data().iter().map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn grads_finite(&self) -> bool {
        self.slots
            .values()
            .all(|s| s.grad.data().iter().all(|g| g.is_finite()))
    }

    /// Flat view of parameter coordinates in (sorted name, offset) order.
    pub fn get_coord(&self, index: usize) -> f64 {
        let (slot, off) = self.locate(index);
        slot.value.data()[off]
    }

    pub fn set_coord(&mut self, index: usize, v: f64) {
        let mut remaining = index;
        for slot in self.slots.values_mut() {
            let n = slot.value.len();
            if remaining < n {
                slot.value.data_mut()[remaining] = v;
                return;
            }
            remaining -= n;
        }
        panic!("coordinate index {index} out of range");
    }

    pub fn get_grad_coord(&self, index: usize) -> f64 {
        let (slot, off) = self.locate(index);
        slot.grad.data()[off]
    }

    /// Name and offset of a flat coordinate, for diagnostics.
    pub fn coord_name(&self, index: usize) -> String {
        let mut remaining = index;
        for (name, slot) in &self.slots {
            let n = slot.value.len();
            if remaining < n {
                return format!("{name}[{remaining}]");
            }
            remaining -= n;
        }
        panic!("coordinate index {index} out of range");
    }

    fn locate(&self, index: usize) -> (&Slot, usize) {
        let mut remaining = index;
        for slot in self.slots.values() {
            let n = slot.value.len();
            if remaining < n {
                return (slot, remaining);
            }
            remaining -= n;
        }
        panic!("coordinate index {index} out of range");
    }

    /// SHA-256 over names, shapes, and little-endian value bytes. Used to
    /// verify that frozen parameters stayed frozen.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, slot) in &self.slots {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in slot.value.shape() {
                hasher.update(d.to_le_bytes());
            }
            for v in slot.value.data() {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut s = String::with_capacity(64);
        for b in digest {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![3.0, 4.0]).unwrap()).unwrap();
        p.insert("a", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        p
    }

    #[test]
    fn names_are_sorted() {
        let p = sample();
        let names: Vec<&str> = p.names().collect();
        assert_eq!(names, vec!["a", "b"]);
    }

    #[test]
    fn grad_shapes_mirror_values() {
        let p = sample();
        for (_, v, g) in p.iter() {
            assert_eq!(v.shape(), g.shape());
        }
    }

    #[test]
    fn duplicate_insert_rejected() {
        let mut p = sample();
        assert!(p.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn flat_coords_follow_sorted_order() {
        let mut p = sample();
        assert_eq!(p.coord_count(), 3);
        assert_eq!(p.get_coord(0), 1.0); // a[0]
        assert_eq!(p.get_coord(2), 4.0); // b[1]
        p.set_coord(2, 9.0);
        assert_eq!(p.value("b").unwrap().data(), &[3.0, 9.0]);
        assert_eq!(p.coord_name(1), "b[0]");
    }

    #[test]
    fn content_hash_tracks_values() {
        let p = sample();
        let h1 = p.content_hash();
        let mut q = p.clone();
        assert_eq!(h1, q.content_hash());
        q.set_coord(0, 5.0);
        assert_ne!(h1, q.content_hash());
    }
}
