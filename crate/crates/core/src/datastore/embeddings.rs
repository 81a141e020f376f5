//! `DIMEMB01` embedding tables.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "DIMEMB01"
//! version u32      1
//! dim     u32
//! count   u64
//! count × { id_len u16, id bytes (UTF-8), dim × f32 }
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::datastore::{write_atomic, Reader};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"DIMEMB01";
pub const EMBEDDING_VERSION: u32 = 1;

/// Id-keyed real32 vectors of a fixed dimension, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Dimension(format!(
                "embedding {id} has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("embedding {id} has a non-finite entry")));
        }
        if self.index.contains_key(&id) {
            return Err(Error::Data(format!("duplicate embedding id {id}")));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(vector);
        Ok(())
    }

    /// Round to real32 and insert.
    pub fn insert_f64(&mut self, id: impl Into<String>, vector: &[f64]) -> Result<()> {
        let v: Vec<f32> = vector.iter().map(|x| *x as f32).collect();
        self.insert(id, &v)
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Vector promoted to real64.
    pub fn get_f64(&self, id: &str) -> Option<Vec<f64>> {
        self.get(id).map(|v| v.iter().map(|x| f64::from(*x)).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), &self.values[i * self.dim..(i + 1) * self.dim]))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if self.dim == 0 {
            return Err(Error::Format("embedding dim must be at least 1".into()));
        }
        let dim = u32::try_from(self.dim)
            .map_err(|_| Error::Format(format!("embedding dim {} exceeds u32", self.dim)))?;
        let mut out = Vec::with_capacity(24 + self.values.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
        out.extend_from_slice(&dim.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::Format(format!("id of {} bytes exceeds u16", id.len())))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic = r.take(8)?;
        if magic != EMBEDDING_MAGIC {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected DIMEMB01",
                String::from_utf8_lossy(magic)
            )));
        }
        let version = r.u32()?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!("unsupported embedding version {version}")));
        }
        let dim = r.u32()? as usize;
        if dim == 0 {
            return Err(Error::Format("embedding dim is 0".into()));
        }
        let count = r.u64()?;
        let mut table = EmbeddingTable::new(dim);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|e| Error::Format(format!("id is not UTF-8: {e}")))?
                .to_string();
            let raw = r.take(dim * 4)?;
            let v: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            table
                .insert(id, &v)
                .map_err(|e| Error::Format(format!("record at byte {}: {e}", r.offset())))?;
        }
        r.finish()?;
        Ok(table)
    }
}

pub fn write_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &table.to_bytes()?)
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}
