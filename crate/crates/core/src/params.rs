//! Named parameter registry and its binary checkpoint format.
//!
//! Parameters live in a sorted map so iteration order — and therefore
//! checkpoint bytes and training behavior — is identical across runs.
//!
//! Checkpoint layout: magic `MMFT`, u32 version, u32 record count, then per
//! parameter: u32 name length, UTF-8 name, u32 rank, u64 dims, f64 data.
//! All integers and floats little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, NodeId};
use crate::numerics::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MMFT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// All learnable tensors of a model, keyed by dotted path names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register or replace a parameter. Gradient tracking is implied.
    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor) {
        tensor.requires_grad = true;
        tensor.grad = None;
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::param(name, "not registered"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::param(name, "not registered"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    /// Insert every parameter into a graph as a gradient-tracked leaf and
    /// return the name → node map used to assemble the forward pass.
    pub fn bind(&self, graph: &mut Graph) -> BTreeMap<String, NodeId> {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), graph.leaf(t.clone().with_grad())))
            .collect()
    }

    /// Pull gradients for every bound parameter out of a finished graph.
    /// Parameters the loss never touched get zero gradients.
    pub fn collect_grads(
        &self,
        graph: &Graph,
        bound: &BTreeMap<String, NodeId>,
    ) -> Result<BTreeMap<String, Vec<f64>>> {
        let mut grads = BTreeMap::new();
        for (name, tensor) in &self.params {
            let id = bound
                .get(name)
                .ok_or_else(|| Error::param(name, "not bound into graph"))?;
            let g = graph
                .grad(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; tensor.numel()]);
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&CHECKPOINT_MAGIC).map_err(io)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes()).map_err(io)?;
        for (name, tensor) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&(tensor.shape.len() as u32).to_le_bytes()).map_err(io)?;
            for &dim in &tensor.shape {
                w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
            }
            for &v in &tensor.data {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |detail: String| Error::Input(format!("checkpoint {}: {detail}", path.display()));

        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if magic != CHECKPOINT_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r, path)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let count = read_u32(&mut r, path)? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = read_u32(&mut r, path)? as usize;
            let mut name_bytes = vec![0u8; name_len];
            r.read_exact(&mut name_bytes).map_err(|e| Error::io(path, e))?;
            let name = String::from_utf8(name_bytes)
                .map_err(|e| bad(format!("non-UTF-8 parameter name: {e}")))?;
            let rank = read_u32(&mut r, path)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(read_u64(&mut r, path)? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            let mut buf = [0u8; 8];
            for _ in 0..numel {
                r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(name, Tensor::new(shape, data)?);
        }
        Ok(store)
    }
}

/// Finite-difference check of every parameter in a store, plus optional
/// extra named inputs, through an arbitrary scalar-valued forward build.
pub fn grad_check_store<F>(
    store: &ParamStore,
    extras: &[(&str, &Tensor)],
    build: F,
) -> Result<Vec<crate::numerics::gradcheck::GradCheckReport>>
where
    F: Fn(&mut Graph, &BTreeMap<String, NodeId>, &[NodeId]) -> Result<NodeId>,
{
    let named: Vec<(String, Tensor)> = store
        .iter()
        .map(|(n, t)| (n.clone(), t.clone()))
        .collect();
    let names: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
    let mut inputs: Vec<(&str, &Tensor)> =
        named.iter().map(|(n, t)| (n.as_str(), t)).collect();
    inputs.extend_from_slice(extras);
    let n_params = names.len();
    crate::numerics::gradcheck::grad_check_multi(&inputs, |g, ids| {
        let map: BTreeMap<String, NodeId> = names
            .iter()
            .cloned()
            .zip(ids[..n_params].iter().copied())
            .collect();
        build(g, &map, &ids[n_params..])
    })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, path: &Path) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::init;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mmft");
        let mut store = ParamStore::new();
        store.insert("b.bias", Tensor::from_vec(vec![0.5, -1.25]));
        store.insert("a.weight", init::xavier_matrix(3, "a.weight", 4, 2));
        store.insert("z.scalar", Tensor::scalar(1e-300));
        store.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn identical_stores_serialize_identically() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.mmft"), dir.path().join("b.mmft"));
        let mut store = ParamStore::new();
        store.insert("w", init::xavier_matrix(9, "w", 5, 5));
        store.save(&p1).unwrap();
        store.clone().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn unknown_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("future.mmft");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        let err = ParamStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.mmft");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        assert!(ParamStore::load(&path).is_err());
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.mmft");
        let mut store = ParamStore::new();
        store.insert("w", init::xavier_matrix(1, "w", 8, 8));
        store.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(ParamStore::load(&path).is_err());
    }

    #[test]
    fn gradients_collect_with_zero_fill() {
        let mut store = ParamStore::new();
        store.insert("used", Tensor::from_vec(vec![2.0, 3.0]));
        store.insert("unused", Tensor::from_vec(vec![1.0]));
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let x = bound["used"];
        let loss = g.dot(x, x).unwrap();
        g.backward(loss).unwrap();
        let grads = store.collect_grads(&g, &bound).unwrap();
        assert_eq!(grads["used"], vec![4.0, 6.0]);
        assert_eq!(grads["unused"], vec![0.0]);
    }
}
