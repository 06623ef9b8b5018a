use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

fn fresh_key() -> u64 {
    NEXT_KEY.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameters in insertion order, each with a gradient buffer.
///
/// Every store carries a process-unique key so a tape can tell which store a
/// parameter node was read from. Cloning produces a new key.
#[derive(Debug)]
pub struct ParamStore {
    key: u64,
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl Default for ParamStore {
    fn default() -> Self {
        ParamStore::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        ParamStore {
            key: fresh_key(),
            names: self.names.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
        }
    }
}

impl PartialEq for ParamStore {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.values == other.values
    }
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore {
            key: fresh_key(),
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if self.names.iter().any(|n| n == name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.to_string());
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of every node on `tape` that reads from this store.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) {
        for (var, id) in tape.param_nodes(self.key) {
            if let Some(g) = grads.get(var) {
                self.grads[id.0].add_assign(g);
            }
        }
    }

    fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.names != other.names {
            return Err(Error::Config("parameter stores have different layouts".into()));
        }
        for (a, b) in self.values.iter().zip(&other.values) {
            if a.shape() != b.shape() {
                return Err(Error::shape("parameter layout", &a.shape(), &b.shape()));
            }
        }
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * source`.
    pub fn soft_update_from(&mut self, source: &ParamStore, tau: f64) -> Result<()> {
        self.check_same_layout(source)?;
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            for (a, &b) in t.data_mut().iter_mut().zip(s.data()) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }

    pub fn copy_values_from(&mut self, source: &ParamStore) -> Result<()> {
        self.check_same_layout(source)?;
        self.values.clone_from(&source.values);
        Ok(())
    }

    /// Writes `<prefix>.json` (names, shapes, offsets) and `<prefix>.bin`
    /// (little-endian f64 values in parameter order).
    pub fn save(&self, prefix: &Path) -> Result<()> {
        let mut entries = Vec::with_capacity(self.len());
        let mut bytes = Vec::with_capacity(self.scalar_count() * 8);
        for (name, value) in self.names.iter().zip(&self.values) {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: value.shape(),
                offset: bytes.len() / 8,
            });
            for v in value.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: MANIFEST_FORMAT.to_string(),
            params: entries,
        };
        let (json, bin) = checkpoint_paths(prefix);
        fs::write(json, serde_json::to_string_pretty(&manifest)?)?;
        fs::write(bin, bytes)?;
        Ok(())
    }

    pub fn load(prefix: &Path) -> Result<ParamStore> {
        let (json, bin) = checkpoint_paths(prefix);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(json)?)?;
        if manifest.format != MANIFEST_FORMAT {
            return Err(Error::Config(format!("unknown checkpoint format {:?}", manifest.format)));
        }
        let bytes = fs::read(bin)?;
        let mut store = ParamStore::new();
        for e in manifest.params {
            let n = e.shape[0] * e.shape[1];
            let range = e.offset * 8..(e.offset + n) * 8;
            let chunk = bytes
                .get(range)
                .ok_or_else(|| Error::Config(format!("checkpoint data too short for {}", e.name)))?;
            let data = chunk
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            store.add(&e.name, Tensor::new(e.shape[0], e.shape[1], data)?)?;
        }
        Ok(store)
    }
}

const MANIFEST_FORMAT: &str = "paramstore-v1";

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    offset: usize,
}

fn checkpoint_paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut json = prefix.as_os_str().to_owned();
    json.push(".json");
    let mut bin = prefix.as_os_str().to_owned();
    bin.push(".bin");
    (PathBuf::from(json), PathBuf::from(bin))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update from the store's gradient buffers, then clears them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            self.m = store.grads.iter().map(|g| Tensor::zeros(g.rows(), g.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != store.len() {
            return Err(Error::Config("optimizer state does not match the parameter store".into()));
        }
        if let Some(bad) = store.grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {}", store.names[bad])));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..store.len() {
            let g = store.grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = store.values[i].data_mut();
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                p[j] -= self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_update_examples() {
        let mut target = ParamStore::new();
        target.add("w", Tensor::scalar(0.0)).unwrap();
        let mut source = target.clone();
        source.get_mut(ParamId(0)).data_mut()[0] = 1.0;
        target.soft_update_from(&source, 0.005).unwrap();
        assert!((target.get(ParamId(0)).item() - 0.005).abs() < 1e-15);
        target.soft_update_from(&source, 0.0).unwrap();
        assert!((target.get(ParamId(0)).item() - 0.005).abs() < 1e-15);
        target.soft_update_from(&source, 1.0).unwrap();
        assert_eq!(target.get(ParamId(0)).item(), 1.0);
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(2, 1)).unwrap();
        assert!(target.soft_update_from(&other, 0.5).is_err());
    }

    #[test]
    fn clones_get_new_keys() {
        let a = ParamStore::new();
        assert_ne!(a.key(), a.clone().key());
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(0.0)).unwrap();
        assert!(s.add("w", Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(2, 2, vec![0.1, -1e-300, f64::MAX, 3.0]).unwrap()).unwrap();
        s.add("b", Tensor::row(vec![std::f64::consts::PI])).unwrap();
        let prefix = dir.path().join("ckpt");
        s.save(&prefix).unwrap();
        assert_eq!(ParamStore::load(&prefix).unwrap(), s);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::row(vec![3.0, -2.0])).unwrap();
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let mut t = Tape::new();
            let p = t.param(&s, w);
            let sq = t.mul(p, p).unwrap();
            let loss = t.sum(sq);
            let g = t.backward(loss).unwrap();
            s.accumulate(&t, &g);
            opt.step(&mut s).unwrap();
        }
        assert!(s.get(w).data().iter().all(|v| v.abs() < 1e-2));
    }
}
