//! Named parameter tensors with paired gradient buffers, plus a versioned
//! binary checkpoint format that round-trips bit-exactly.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::tape::{Tape, TensorId};
use crate::nn::NnError;

/// Index of a parameter inside a [`ParamStore`]; stable for the store's life.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ParamId(pub(crate) usize);

/// All learnable tensors of a model, iterated in insertion order so that
/// optimizer updates are deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<Array2<f64>>,
    grads: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Names must be unique.
    pub fn insert(&mut self, name: &str, value: Array2<f64>) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.values.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.grads.push(Array2::zeros(value.dim()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.grads[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Push every parameter onto a tape as a differentiable leaf, returning
    /// the tape ids aligned with [`ParamStore::ids`] order.
    pub fn lease(&self, tape: &mut Tape) -> Vec<TensorId> {
        self.values
            .iter()
            .map(|v| tape.param(v.clone()))
            .collect()
    }

    /// Add the tape's adjoints for a leased parameter set into the store's
    /// gradient buffers (accumulating across windows).
    pub fn absorb(&mut self, tape: &Tape, lease: &[TensorId], grads: &super::tape::Gradients) {
        for (i, tid) in lease.iter().enumerate() {
            if let Some(g) = grads.get(*tid) {
                self.grads[i] += g;
            }
        }
        let _ = tape;
    }

    /// Sum of squared gradient entries across all parameters.
    pub fn grad_sq_norm(&self) -> f64 {
        self.grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum()
    }

    /// Scale every gradient so the global L2 norm does not exceed `max_norm`.
    /// Returns the pre-clip norm.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_sq_norm().sqrt();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for g in &mut self.grads {
                g.mapv_inplace(|x| x * scale);
            }
        }
        norm
    }

    /// Write a versioned checkpoint: magic, version, a caller-supplied
    /// metadata blob, then each tensor as name/shape/little-endian f64 data.
    pub fn save(&self, path: &Path, meta: &str) -> Result<(), NnError> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(b"DCCKPT\0\0");
        buf.extend_from_slice(&1u32.to_le_bytes());
        write_bytes(&mut buf, meta.as_bytes());
        buf.extend_from_slice(&(self.values.len() as u32).to_le_bytes());
        for (name, value) in self.names.iter().zip(&self.values) {
            write_bytes(&mut buf, name.as_bytes());
            buf.extend_from_slice(&(value.nrows() as u32).to_le_bytes());
            buf.extend_from_slice(&(value.ncols() as u32).to_le_bytes());
            for x in value.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    /// Load a checkpoint, returning the store and the metadata blob.
    pub fn load(path: &Path) -> Result<(Self, String), NnError> {
        let mut raw = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut raw)?;
        let mut cur = Cursor { raw: &raw, pos: 0 };

        if cur.take(8)? != b"DCCKPT\0\0" {
            return Err(NnError::BadCheckpoint("bad magic".into()));
        }
        let version = cur.u32()?;
        if version != 1 {
            return Err(NnError::BadCheckpoint(format!("unknown version {version}")));
        }
        let meta = String::from_utf8(cur.bytes_field()?.to_vec())
            .map_err(|_| NnError::BadCheckpoint("metadata not utf-8".into()))?;
        let count = cur.u32()? as usize;

        let mut store = ParamStore::new();
        for _ in 0..count {
            let name = String::from_utf8(cur.bytes_field()?.to_vec())
                .map_err(|_| NnError::BadCheckpoint("name not utf-8".into()))?;
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows * cols {
                data.push(cur.f64()?);
            }
            let arr = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| NnError::BadCheckpoint(e.to_string()))?;
            store.insert(&name, arr)?;
        }
        Ok((store, meta))
    }
}

fn write_bytes(buf: &mut Vec<u8>, data: &[u8]) {
    buf.extend_from_slice(&(data.len() as u32).to_le_bytes());
    buf.extend_from_slice(data);
}

struct Cursor<'a> {
    raw: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.raw.len() {
            return Err(NnError::BadCheckpoint("truncated file".into()));
        }
        let out = &self.raw[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, NnError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn bytes_field(&mut self) -> Result<&'a [u8], NnError> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", array![[1.0]]).unwrap();
        assert!(matches!(
            store.insert("w", array![[2.0]]),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn checkpoint_round_trips_bit_exactly() {
        let mut store = ParamStore::new();
        store
            .insert("w", array![[1.0, f64::MIN_POSITIVE], [-0.0, 3.5e300]])
            .unwrap();
        store.insert("b", array![[0.1, 0.2, 0.3]]).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.dcckpt");
        store.save(&path, "{\"k\":5}").unwrap();
        let (loaded, meta) = ParamStore::load(&path).unwrap();

        assert_eq!(meta, "{\"k\":5}");
        assert_eq!(loaded.len(), store.len());
        for id in store.ids() {
            assert_eq!(loaded.name(id), store.name(id));
            let (a, b) = (store.value(id), loaded.value(id));
            assert_eq!(a.dim(), b.dim());
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }

        // writing again yields identical bytes
        let path2 = dir.path().join("model2.dcckpt");
        loaded.save(&path2, &meta).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn clip_scales_down_large_gradients() {
        let mut store = ParamStore::new();
        let id = store.insert("w", array![[0.0, 0.0]]).unwrap();
        store.grad_mut(id).assign(&array![[3.0, 4.0]]);
        let pre = store.clip_global_norm(5.0);
        assert!((pre - 5.0).abs() < 1e-12);
        // exactly at the limit: untouched
        assert_eq!(store.grad(id), &array![[3.0, 4.0]]);

        store.grad_mut(id).assign(&array![[30.0, 40.0]]);
        let pre = store.clip_global_norm(5.0);
        assert!((pre - 50.0).abs() < 1e-12);
        let g = store.grad(id);
        let norm = (g[[0, 0]].powi(2) + g[[0, 1]].powi(2)).sqrt();
        assert!((norm - 5.0).abs() < 1e-12);
    }
}
