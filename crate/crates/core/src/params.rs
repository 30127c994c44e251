//! Flat parameter storage. Every trainable tensor lives in one contiguous
//! buffer; components hold [`ParamId`]s and the optimizer walks the flat view.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

/// Handle to one named parameter tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Named parameter tensors backed by a single flat buffer.
#[derive(Debug, Clone)]
pub struct ParamStore<E: Elem> {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
    data: Vec<E>,
}

impl<E: Elem> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        }
    }

    /// Register a zero-initialized parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let len: usize = shape.iter().product();
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.clone(),
            shape: shape.to_vec(),
            offset: self.data.len(),
            len,
        });
        self.index.insert(name, id);
        self.data.extend(std::iter::repeat(E::zero()).take(len));
        id
    }

    pub fn len_flat(&self) -> usize {
        self.data.len()
    }

    pub fn count(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn slice(&self, id: ParamId) -> &[E] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len]
    }

    pub fn slice_mut(&mut self, id: ParamId) -> &mut [E] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len]
    }

    /// Copy the parameter out as an owned tensor in its registered shape.
    pub fn tensor(&self, id: ParamId) -> Tensor<E> {
        let e = &self.entries[id.0];
        Tensor::from_shape_vec(
            ndarray::IxDyn(&e.shape),
            self.data[e.offset..e.offset + e.len].to_vec(),
        )
        .expect("entry shape matches len")
    }

    pub fn set(&mut self, id: ParamId, values: &[E]) -> Result<()> {
        let e = &self.entries[id.0];
        if values.len() != e.len {
            return Err(Error::shape(
                format!("set parameter {}", e.name),
                format!("{} values", e.len),
                format!("{} values", values.len()),
            ));
        }
        self.data[e.offset..e.offset + e.len].copy_from_slice(values);
        Ok(())
    }

    /// Copy `src`'s values into `dst`. Shapes must match.
    pub fn copy_values(&mut self, src: ParamId, dst: ParamId) -> Result<()> {
        let se = &self.entries[src.0];
        let de = &self.entries[dst.0];
        if se.shape != de.shape {
            return Err(Error::shape(
                format!("copy {} into {}", se.name, de.name),
                format!("{:?}", se.shape),
                format!("{:?}", de.shape),
            ));
        }
        let (soff, doff, len) = (se.offset, de.offset, se.len);
        let src_vals: Vec<E> = self.data[soff..soff + len].to_vec();
        self.data[doff..doff + len].copy_from_slice(&src_vals);
        Ok(())
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn set_data(&mut self, values: &[E]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(Error::shape(
                "set parameter buffer",
                format!("{} values", self.data.len()),
                format!("{} values", values.len()),
            ));
        }
        self.data.copy_from_slice(values);
        Ok(())
    }
}

impl<E: Elem> Default for ParamStore<E> {
    fn default() -> Self {
        Self::new()
    }
}

/// Fill with truncated normal samples: normal(0, std) resampled while
/// outside two standard deviations. Sampling happens in f64 so f32 and f64
/// stores built from the same seed agree to rounding.
pub fn fill_trunc_normal<E: Elem>(slice: &mut [E], std: f64, rng: &mut ChaCha8Rng) {
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    for v in slice.iter_mut() {
        let mut s = dist.sample(rng);
        while s.abs() > 2.0 * std {
            s = dist.sample(rng);
        }
        *v = E::from_f64(s);
    }
}

pub fn fill_constant<E: Elem>(slice: &mut [E], value: f64) {
    let v = E::from_f64(value);
    for s in slice.iter_mut() {
        *s = v;
    }
}

/// Uniform sample in [lo, hi) drawn in f64, for reproducible auxiliary draws.
pub fn uniform_f64(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn add_and_lookup() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let a = store.add("a.weight", &[2, 3]);
        let b = store.add("b.bias", &[4]);
        assert_eq!(store.len_flat(), 10);
        assert_eq!(store.id("a.weight"), Some(a));
        assert_eq!(store.id("b.bias"), Some(b));
        assert_eq!(store.id("missing"), None);
        assert_eq!(store.entry(b).offset, 6);
        assert_eq!(store.tensor(a).shape(), &[2, 3]);
    }

    #[test]
    fn copy_values_requires_matching_shape() {
        let mut store: ParamStore<f32> = ParamStore::new();
        let a = store.add("a", &[2, 2]);
        let b = store.add("b", &[2, 2]);
        let c = store.add("c", &[3]);
        store.set(a, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        store.copy_values(a, b).unwrap();
        assert_eq!(store.slice(b), &[1.0, 2.0, 3.0, 4.0]);
        assert!(store.copy_values(a, c).is_err());
    }

    #[test]
    fn trunc_normal_is_bounded_and_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut buf = vec![0f32; 4096];
        fill_trunc_normal(&mut buf, 0.02, &mut rng);
        assert!(buf.iter().all(|v| v.abs() <= 0.04 + 1e-7));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let mut buf2 = vec![0f32; 4096];
        fill_trunc_normal(&mut buf2, 0.02, &mut rng2);
        assert_eq!(buf, buf2);
        // not degenerate
        let nonzero = buf.iter().filter(|v| v.abs() > 1e-8).count();
        assert!(nonzero > 4000);
    }

    #[test]
    fn f32_and_f64_stores_share_draws() {
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let mut a = vec![0f32; 16];
        let mut b = vec![0f64; 16];
        fill_trunc_normal(&mut a, 0.02, &mut r1);
        fill_trunc_normal(&mut b, 0.02, &mut r2);
        for (x, y) in a.iter().zip(&b) {
            assert!((f64::from(*x) - y).abs() < 1e-7);
        }
    }
}
