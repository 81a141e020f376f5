use std::path::{Path, PathBuf};

use crate::datastore::embeddings::{read_embeddings, write_embeddings, EmbeddingTable};
use crate::datastore::records::{
    read_entities, read_samples, validate_references, write_entities, write_samples, EntityRecord,
    MentionSample,
};
use crate::error::{Error, Result};
use crate::fusion::FeatureBundle;
use crate::numkernel::Tensor2;

/// Standard file names inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetPaths {
    pub samples: PathBuf,
    pub entities: PathBuf,
    pub text: PathBuf,
    pub image: PathBuf,
    pub expert: PathBuf,
    pub mention: PathBuf,
    pub entity: PathBuf,
}

impl DatasetPaths {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        DatasetPaths {
            samples: dir.join("samples.jsonl"),
            entities: dir.join("entities.jsonl"),
            text: dir.join("text.emb"),
            image: dir.join("image.emb"),
            expert: dir.join("expert.emb"),
            mention: dir.join("mention.emb"),
            entity: dir.join("entity.emb"),
        }
    }
}

/// Records plus the feature tables produced by the external encoders.
///
/// Text features are keyed by sample id, image features by image id, expert
/// and mention features by sample id, entity features by entity id. A
/// sequence of `L` rows is stored under `key#0 .. key#{L-1}`; a bare `key`
/// is a pooled single row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<MentionSample>,
    pub entities: Vec<EntityRecord>,
    pub text: EmbeddingTable,
    pub image: EmbeddingTable,
    pub expert: EmbeddingTable,
    pub mention: Option<EmbeddingTable>,
    pub entity: EmbeddingTable,
}

fn sequence(table: &EmbeddingTable, key: &str, what: &str) -> Result<Tensor2> {
    if let Some(v) = table.get(key) {
        let data = v.iter().map(|x| f64::from(*x)).collect();
        return Tensor2::new(1, table.dim(), data);
    }
    let mut data = Vec::new();
    let mut rows = 0;
    while let Some(v) = table.get(&format!("{key}#{rows}")) {
        data.extend(v.iter().map(|x| f64::from(*x)));
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data(format!("no {what} features for {key}")));
    }
    Tensor2::new(rows, table.dim(), data)
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.expert.dim()
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let paths = DatasetPaths::in_dir(dir);
        let mention = if paths.mention.exists() {
            Some(read_embeddings(&paths.mention)?)
        } else {
            None
        };
        let ds = Dataset {
            samples: read_samples(&paths.samples)?,
            entities: read_entities(&paths.entities)?,
            text: read_embeddings(&paths.text)?,
            image: read_embeddings(&paths.image)?,
            expert: read_embeddings(&paths.expert)?,
            mention,
            entity: read_embeddings(&paths.entity)?,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DatasetPaths::in_dir(dir);
        write_samples(&paths.samples, &self.samples)?;
        write_entities(&paths.entities, &self.entities)?;
        write_embeddings(&self.text, &paths.text)?;
        write_embeddings(&self.image, &paths.image)?;
        write_embeddings(&self.expert, &paths.expert)?;
        if let Some(m) = &self.mention {
            write_embeddings(m, &paths.mention)?;
        }
        write_embeddings(&self.entity, &paths.entity)?;
        Ok(())
    }

    /// Cross-reference and dimension checks; every sample must resolve to a
    /// complete feature bundle.
    pub fn validate(&self) -> Result<()> {
        validate_references(&self.samples, &self.entities)?;
        let d = self.expert.dim();
        let mut tables = vec![("text", &self.text), ("image", &self.image), ("entity", &self.entity)];
        if let Some(m) = &self.mention {
            tables.push(("mention", m));
        }
        for (name, t) in tables {
            if t.dim() != d {
                return Err(Error::Dimension(format!(
                    "{name} table has dim {}, expert table has dim {d}",
                    t.dim()
                )));
            }
        }
        for s in &self.samples {
            self.bundle(s)?;
        }
        Ok(())
    }

    pub fn bundle(&self, sample: &MentionSample) -> Result<FeatureBundle> {
        let text = sequence(&self.text, &sample.id, "text")?;
        let image = sequence(&self.image, &sample.image_id, "image")?;
        let expert = self
            .expert
            .get_f64(&sample.id)
            .ok_or_else(|| Error::Data(format!("no expert feature for sample {}", sample.id)))?;
        let mention = match &self.mention {
            Some(t) => Some(
                t.get_f64(&sample.id)
                    .ok_or_else(|| Error::Data(format!("no mention feature for sample {}", sample.id)))?,
            ),
            None => None,
        };
        Ok(FeatureBundle {
            text,
            image,
            expert,
            mention,
        })
    }

    pub fn entity_embedding(&self, id: &str) -> Result<Vec<f64>> {
        self.entity
            .get_f64(id)
            .ok_or_else(|| Error::Data(format!("missing embedding for entity {id}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{mock_generate, MockConfig};

    #[test]
    fn sequences_resolve_from_row_keys() {
        let mut t = EmbeddingTable::new(2);
        t.insert("s#0", &[1.0, 2.0]).unwrap();
        t.insert("s#1", &[3.0, 4.0]).unwrap();
        t.insert("p", &[5.0, 6.0]).unwrap();
        assert_eq!(sequence(&t, "s", "text").unwrap().shape(), (2, 2));
        assert_eq!(sequence(&t, "p", "text").unwrap().shape(), (1, 2));
        assert!(matches!(sequence(&t, "q", "text"), Err(Error::Data(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = MockConfig {
            samples: 12,
            entities: 20,
            dim: 8,
            ..MockConfig::default()
        };
        let ds = mock_generate(&cfg).unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_features_fail_validation() {
        let cfg = MockConfig {
            samples: 3,
            entities: 4,
            dim: 4,
            heads: 2,
            ..MockConfig::default()
        };
        let mut ds = mock_generate(&cfg).unwrap();
        ds.expert = EmbeddingTable::new(4);
        assert!(matches!(ds.validate(), Err(Error::Data(_))));
    }
}
