//! File formats, dataset loading, statistics, synthetic data and checkpoints.

mod checkpoint;
mod dataset;
mod embeddings;
mod mockgen;
mod records;
mod stats;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_tensors_from_bytes, checkpoint_to_bytes, load_checkpoint,
    save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{Dataset, DatasetPaths};
pub use embeddings::{read_embeddings, write_embeddings, EmbeddingTable, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use mockgen::{mock_generate, MockConfig};
pub use records::{
    read_candidates, read_entities, read_samples, validate_references, write_candidates,
    write_entities, write_samples, EntityRecord, MentionSample, RepresentationSource,
};
pub use stats::{compute_stats, DatasetStats};

/// Write through a temp file in the destination directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Little-endian cursor that reports truncation with byte counts.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(Error::Format(format!(
                "truncated payload: expected {n} bytes at offset {}, {available} available",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after offset {}",
                self.bytes.len() - self.pos,
                self.pos
            )));
        }
        Ok(())
    }
}
