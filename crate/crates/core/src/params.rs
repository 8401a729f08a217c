//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout (little-endian): version byte, `u32` entry count, then per
//! entry `u32` path length, path bytes, `u32` rank and `u64` extents; finally
//! every element of every entry as `f64`, in entry order.

use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterStore<T> {
    entries: IndexMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParameterStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameters recorded as leaves on one tape.
pub struct Bound<'a, T> {
    store: &'a ParameterStore<T>,
    vars: Vec<Var>,
}

impl<T: Real> Bound<'_, T> {
    pub fn var(&self, path: &str) -> Var {
        let idx = self
            .store
            .entries
            .get_index_of(path)
            .unwrap_or_else(|| panic!("parameter `{path}` not registered"));
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl<T: Real> ParameterStore<T> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Tensor<T>) {
        self.entries.insert(path.into(), value);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.entries.get_mut(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<U: Real>(&self) -> ParameterStore<U> {
        ParameterStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Record every parameter as a differentiable leaf.
    pub fn bind<'a>(&'a self, tape: &mut Tape<T>) -> Bound<'a, T> {
        let vars = self
            .entries
            .values()
            .map(|t| tape.param(t.clone()))
            .collect();
        Bound { store: self, vars }
    }

    /// Gradients in store order.
    pub fn collect_grads(&self, grads: &mut Gradients<T>, bound: &Bound<'_, T>) -> Vec<Tensor<T>> {
        bound.vars.iter().map(|&v| grads.take(v)).collect()
    }

    pub fn zeros_like(&self) -> Vec<Tensor<T>> {
        self.entries
            .values()
            .map(|t| Tensor::zeros(t.shape()))
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![CHECKPOINT_VERSION];
        out.extend((self.entries.len() as u32).to_le_bytes());
        for (path, t) in &self.entries {
            out.extend((path.len() as u32).to_le_bytes());
            out.extend(path.as_bytes());
            out.extend((t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend((d as u64).to_le_bytes());
            }
        }
        for t in self.entries.values() {
            for &v in t.data() {
                out.extend(v.to_f64_lossy().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let version = read_array::<1>(&mut r)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
        let mut table = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            if r.len() < len {
                return Err(Error::Checkpoint("truncated path table".into()));
            }
            let path = std::str::from_utf8(&r[..len])
                .map_err(|_| Error::Checkpoint("path is not UTF-8".into()))?
                .to_string();
            r = &r[len..];
            let ndim = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
            }
            table.push((path, shape));
        }
        let mut entries = IndexMap::new();
        for (path, shape) in table {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(T::lit(f64::from_le_bytes(read_array(&mut r)?)));
            }
            entries.insert(path, Tensor::new(shape, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    if r.len() < N {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let mut a = [0u8; N];
    a.copy_from_slice(&r[..N]);
    *r = &r[N..];
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip() {
        let mut s = ParameterStore::<f64>::new();
        s.insert(
            "a.w",
            Tensor::from_f64(&[2, 2], &[1., -2., 3.5, 1e-300]).unwrap(),
        );
        s.insert("b", Tensor::scalar(0.25));
        let back = ParameterStore::<f64>::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn header_layout() {
        let mut s = ParameterStore::<f32>::new();
        s.insert("x", Tensor::from_f64(&[1], &[2.0]).unwrap());
        let b = s.to_bytes();
        assert_eq!(b[0], 1);
        assert_eq!(&b[1..5], &1u32.to_le_bytes());
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(b[9], b'x');
        assert_eq!(&b[10..14], &1u32.to_le_bytes());
        assert_eq!(&b[14..22], &1u64.to_le_bytes());
        assert_eq!(&b[22..30], &2.0f64.to_le_bytes());
        assert_eq!(b.len(), 30);
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let mut s = ParameterStore::<f64>::new();
        s.insert("x", Tensor::zeros(&[3]));
        let b = s.to_bytes();
        assert!(ParameterStore::<f64>::from_bytes(&b[..b.len() - 1]).is_err());
    }
}
