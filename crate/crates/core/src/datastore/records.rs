use std::collections::HashMap;
use std::fmt::Debug;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::candgen::CandidateSet;
use crate::datastore::write_atomic;
use crate::error::{Error, Result};

/// One linking instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MentionSample {
    pub id: String,
    pub text: String,
    pub mention: String,
    pub image_id: String,
    pub expert_c1: String,
    pub expert_c2: String,
    pub gold_entity_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RepresentationSource {
    Original,
    Enhanced,
}

/// Knowledge-base entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub id: String,
    pub name: String,
    pub representation: String,
    pub representation_source: RepresentationSource,
}

fn read_lines<T: DeserializeOwned>(path: &Path, mut check: impl FnMut(&T, usize) -> Result<()>) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let record: T = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        check(&record, lineno)?;
        out.push(record);
    }
    Ok(out)
}

fn unique_ids<'a>(path: &'a Path) -> impl FnMut(&str, usize) -> Result<()> + 'a {
    let mut seen: HashMap<String, usize> = HashMap::new();
    move |id: &str, line: usize| {
        if let Some(first) = seen.insert(id.to_string(), line) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate id {id} (first seen on line {first})"),
            });
        }
        Ok(())
    }
}

fn encode_lines<T: Serialize + Debug>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::Format(format!("cannot encode {r:?}: {e}")))?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_samples(path: impl AsRef<Path>) -> Result<Vec<MentionSample>> {
    let path = path.as_ref();
    let mut unique = unique_ids(path);
    read_lines(path, |s: &MentionSample, line| unique(&s.id, line))
}

pub fn read_entities(path: impl AsRef<Path>) -> Result<Vec<EntityRecord>> {
    let path = path.as_ref();
    let mut unique = unique_ids(path);
    read_lines(path, |e: &EntityRecord, line| {
        unique(&e.id, line)?;
        if e.representation.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("entity {} has an empty representation", e.id),
            });
        }
        Ok(())
    })
}

pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<CandidateSet>> {
    let path = path.as_ref();
    let mut seen: HashMap<String, usize> = HashMap::new();
    read_lines(path, |c: &CandidateSet, line| {
        if seen.insert(c.mention_id.clone(), line).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("duplicate candidate set for {}", c.mention_id),
            });
        }
        c.validate(None).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        })
    })
}

pub fn write_samples(path: impl AsRef<Path>, samples: &[MentionSample]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_lines(samples)?)
}

pub fn write_entities(path: impl AsRef<Path>, entities: &[EntityRecord]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_lines(entities)?)
}

pub fn write_candidates(path: impl AsRef<Path>, sets: &[CandidateSet]) -> Result<()> {
    write_atomic(path.as_ref(), &encode_lines(sets)?)
}

/// Every sample's gold entity must exist.
pub fn validate_references(samples: &[MentionSample], entities: &[EntityRecord]) -> Result<()> {
    let ids: std::collections::HashSet<&str> = entities.iter().map(|e| e.id.as_str()).collect();
    for (i, s) in samples.iter().enumerate() {
        if !ids.contains(s.gold_entity_id.as_str()) {
            return Err(Error::Referential(format!(
                "sample {} (record {}) references unknown entity {}",
                s.id,
                i + 1,
                s.gold_entity_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, gold: &str) -> MentionSample {
        MentionSample {
            id: id.into(),
            text: "Trump and his wife Melania at Wedding".into(),
            mention: "Trump".into(),
            image_id: format!("img-{id}"),
            expert_c1: "A man and a woman on the red carpet".into(),
            expert_c2: "Donald Trump".into(),
            gold_entity_id: gold.into(),
        }
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "").unwrap();
        assert!(read_samples(&p).unwrap().is_empty());
        assert!(read_entities(&p).unwrap().is_empty());
    }

    #[test]
    fn order_preserved_and_bytes_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let recs = vec![sample("c", "Q1"), sample("a", "Q2"), sample("b", "Q1")];
        write_samples(&p, &recs).unwrap();
        let first = fs::read(&p).unwrap();
        let back = read_samples(&p).unwrap();
        assert_eq!(back, recs);
        write_samples(&p, &back).unwrap();
        assert_eq!(fs::read(&p).unwrap(), first);
    }

    #[test]
    fn duplicate_on_line_seven_is_cited() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let mut recs: Vec<MentionSample> = (0..6).map(|i| sample(&format!("s{i}"), "Q1")).collect();
        recs.push(sample("s2", "Q1"));
        write_samples(&p, &recs).unwrap();
        match read_samples(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 7);
                assert!(message.contains("s2"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_and_unknown_fields_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let good = r#"{"id":"Q1","name":"A","representation":"x","representation_source":"original"}"#;
        fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        assert!(matches!(read_entities(&p), Err(Error::Parse { line: 2, .. })));

        let extra = r#"{"id":"Q1","name":"A","representation":"x","representation_source":"original","x":1}"#;
        fs::write(&p, format!("{extra}\n")).unwrap();
        assert!(matches!(read_entities(&p), Err(Error::Parse { line: 1, .. })));

        let empty = r#"{"id":"Q1","name":"A","representation":"","representation_source":"original"}"#;
        fs::write(&p, format!("{empty}\n")).unwrap();
        assert!(matches!(read_entities(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn dangling_gold_is_referential_error() {
        let ents = vec![EntityRecord {
            id: "Q1".into(),
            name: "A".into(),
            representation: "x".into(),
            representation_source: RepresentationSource::Original,
        }];
        validate_references(&[sample("s", "Q1")], &ents).unwrap();
        assert!(matches!(
            validate_references(&[sample("s", "Q9")], &ents),
            Err(Error::Referential(m)) if m.contains("Q9")
        ));
    }
}
