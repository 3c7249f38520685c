//! Named parameter collections and the checkpoint file format.
//!
//! Checkpoints are a flat binary dump: header, agent kind tag, then each
//! tensor as name / shape / raw f64 bits. Values round-trip bit-exactly
//! because they are written with `to_bits` and restored with `from_bits`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use super::AutodiffError;

const MAGIC: &[u8; 4] = b"TXLB";
const VERSION: u32 = 1;

/// Ordered set of named tensors. Iteration follows insertion order so that
/// seeded initialization and optimizer sweeps are reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), AutodiffError> {
        if self.index.contains_key(name) {
            return Err(AutodiffError::DuplicateParam { name: name.to_string() });
        }
        self.index.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.values.push(value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.index
            .get(name)
            .map(|&i| &self.values[i])
            .ok_or_else(|| AutodiffError::UnknownParam { name: name.to_string() })
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, AutodiffError> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.values[i]),
            None => Err(AutodiffError::UnknownParam { name: name.to_string() }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Copy values in from another set holding exactly the same tensor names
    /// and shapes; the first mismatch is reported by tensor name.
    pub fn adopt_values(&mut self, other: &ParamSet) -> Result<(), AutodiffError> {
        for name in &other.names {
            if !self.index.contains_key(name) {
                return Err(AutodiffError::CheckpointMismatch {
                    name: name.clone(),
                    detail: "unexpected tensor".into(),
                });
            }
        }
        for (i, name) in self.names.clone().iter().enumerate() {
            let theirs = other.get(name).map_err(|_| AutodiffError::CheckpointMismatch {
                name: name.clone(),
                detail: "missing tensor".into(),
            })?;
            if theirs.shape != self.values[i].shape {
                return Err(AutodiffError::CheckpointMismatch {
                    name: name.clone(),
                    detail: format!("shape {:?} vs expected {:?}", theirs.shape, self.values[i].shape),
                });
            }
            self.values[i] = theirs.clone();
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, kind: &str, params: &ParamSet) -> Result<(), AutodiffError> {
    let file = File::create(path).map_err(|e| AutodiffError::Io { path: path.display().to_string(), source: e })?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| -> Result<(), AutodiffError> {
        w.write_all(bytes).map_err(|e| AutodiffError::Io { path: path.display().to_string(), source: e })
    };
    write(MAGIC)?;
    write(&VERSION.to_le_bytes())?;
    write(&(kind.len() as u32).to_le_bytes())?;
    write(kind.as_bytes())?;
    write(&(params.len() as u32).to_le_bytes())?;
    for (name, tensor) in params.iter() {
        write(&(name.len() as u32).to_le_bytes())?;
        write(name.as_bytes())?;
        write(&(tensor.shape.len() as u32).to_le_bytes())?;
        for &d in &tensor.shape {
            write(&(d as u64).to_le_bytes())?;
        }
        for &x in &tensor.data {
            write(&x.to_bits().to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, ParamSet), AutodiffError> {
    let file = File::open(path).map_err(|e| AutodiffError::Io { path: path.display().to_string(), source: e })?;
    let mut r = BufReader::new(file);
    let bad = |detail: &str| AutodiffError::Checkpoint {
        path: path.display().to_string(),
        detail: detail.to_string(),
    };

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = read_u32(&mut r).map_err(|_| bad("truncated version"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {}", version)));
    }
    let kind_len = read_u32(&mut r).map_err(|_| bad("truncated kind"))? as usize;
    let mut kind_bytes = vec![0u8; kind_len];
    r.read_exact(&mut kind_bytes).map_err(|_| bad("truncated kind"))?;
    let kind = String::from_utf8(kind_bytes).map_err(|_| bad("kind is not utf-8"))?;

    let count = read_u32(&mut r).map_err(|_| bad("truncated tensor count"))? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(|_| bad("truncated tensor name"))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes).map_err(|_| bad("truncated tensor name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| bad("tensor name is not utf-8"))?;
        let ndim = read_u32(&mut r).map_err(|_| bad("truncated shape"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated shape"))?;
            shape.push(u64::from_le_bytes(buf) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        params.insert(&name, Tensor { shape, data })?;
    }
    Ok((kind, params))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}
