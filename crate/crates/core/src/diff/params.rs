//! Named parameter tensors with a flat-vector view.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, LeafKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    specs: Vec<ParamSpec>,
    tensors: Vec<Array2<f64>>,
    len: usize,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let (rows, cols) = value.dim();
        self.specs.push(ParamSpec { name: name.into(), rows, cols, offset: self.len });
        self.len += rows * cols;
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn spec(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id.0]
    }

    /// Records the tensor as a differentiable leaf on `b`.
    pub fn leaf<B: Backend>(&self, b: &mut B, id: ParamId) -> B::T {
        b.leaf(LeafKey::Param(id.0), &self.tensors[id.0])
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for t in &self.tensors {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.len, "parameter vector length");
        for (spec, t) in self.specs.iter().zip(self.tensors.iter_mut()) {
            let src = &v[spec.offset..spec.offset + spec.rows * spec.cols];
            for (d, s) in t.iter_mut().zip(src) {
                *d = *s;
            }
        }
    }

    /// Adds `step` to the flat vector.
    pub fn add_flat(&mut self, step: &[f64]) {
        assert_eq!(step.len(), self.len, "parameter vector length");
        for (spec, t) in self.specs.iter().zip(self.tensors.iter_mut()) {
            let src = &step[spec.offset..spec.offset + spec.rows * spec.cols];
            for (d, s) in t.iter_mut().zip(src) {
                *d += *s;
            }
        }
    }

    /// Little-endian `f64` serialization of the flat vector.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.flat().iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn load_le_bytes(&mut self, bytes: &[u8]) -> Result<(), String> {
        if bytes.len() != 8 * self.len {
            return Err(format!("expected {} bytes of parameters, found {}", 8 * self.len, bytes.len()));
        }
        let v: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        self.set_flat(&v);
        Ok(())
    }
}
