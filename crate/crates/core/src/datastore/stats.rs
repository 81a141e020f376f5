use std::collections::HashSet;
use std::fmt;

use crate::datastore::records::{EntityRecord, MentionSample};

/// Dataset size and length summary.
///
/// A *sample* is a distinct (text, image) context; a *mention* is one
/// linking record, so one context can contribute several mentions. Text
/// length is in whitespace-separated words, averaged over contexts; entity
/// representation length is in characters, averaged over entities.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub samples: usize,
    pub entities: usize,
    pub mentions: usize,
    pub mean_text_words: f64,
    pub mean_representation_chars: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples\t{}", self.samples)?;
        writeln!(f, "entities\t{}", self.entities)?;
        writeln!(f, "mentions\t{}", self.mentions)?;
        writeln!(f, "text_words\t{:.1}", self.mean_text_words)?;
        writeln!(f, "representation_chars\t{:.0}", self.mean_representation_chars)
    }
}

pub fn compute_stats(samples: &[MentionSample], entities: &[EntityRecord]) -> DatasetStats {
    let mut contexts = HashSet::new();
    let mut words = 0usize;
    for s in samples {
        if contexts.insert((s.text.as_str(), s.image_id.as_str())) {
            words += s.text.split_whitespace().count();
        }
    }
    let chars: usize = entities.iter().map(|e| e.representation.chars().count()).sum();
    let mean = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
    DatasetStats {
        samples: contexts.len(),
        entities: entities.len(),
        mentions: samples.len(),
        mean_text_words: mean(words, contexts.len()),
        mean_representation_chars: mean(chars, entities.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::RepresentationSource;

    fn sample(id: usize, text: &str, image: &str) -> MentionSample {
        MentionSample {
            id: format!("s{id}"),
            text: text.into(),
            mention: "m".into(),
            image_id: image.into(),
            expert_c1: String::new(),
            expert_c2: String::new(),
            gold_entity_id: "Q".into(),
        }
    }

    fn entity(id: usize, rep: String) -> EntityRecord {
        EntityRecord {
            id: format!("Q{id}"),
            name: "n".into(),
            representation: rep,
            representation_source: RepresentationSource::Original,
        }
    }

    #[test]
    fn single_sample() {
        let s = compute_stats(&[sample(0, "a b c", "i")], &[]);
        assert_eq!(s.samples, 1);
        assert_eq!(s.mentions, 1);
        assert_eq!(s.mean_text_words, 3.0);
        assert_eq!(s.mean_representation_chars, 0.0);
    }

    #[test]
    fn hand_computed_fixture() {
        // Contexts: "a b" (2 words, shared by two mentions), "a b c d" (4), "x" (1).
        let samples = [
            sample(0, "a b", "i1"),
            sample(1, "a b", "i1"),
            sample(2, "a  b c d", "i2"),
            sample(3, "x", "i3"),
        ];
        let entities = [entity(0, "abcd".into()), entity(1, "é".repeat(6))];
        let s = compute_stats(&samples, &entities);
        assert_eq!(s.samples, 3);
        assert_eq!(s.mentions, 4);
        assert_eq!(s.entities, 2);
        assert!((s.mean_text_words - 7.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.mean_representation_chars, 5.0);
    }

    #[test]
    fn wiki_plus_shaped_dataset() {
        // 18880 contexts, 3776 of which have 9 words and the rest 8 (mean 8.2),
        // 25846 mention records, 17391 entities of 1318 characters.
        let mut samples = Vec::with_capacity(25846);
        for c in 0..18880usize {
            let n = if c < 3776 { 9 } else { 8 };
            let text = (0..n).map(|w| format!("w{c}x{w}")).collect::<Vec<_>>().join(" ");
            samples.push(sample(c, &text, &format!("img{c}")));
        }
        for extra in 0..(25846 - 18880) {
            let mut s = samples[extra].clone();
            s.id = format!("extra{extra}");
            samples.push(s);
        }
        let rep = "r".repeat(1318);
        let entities: Vec<EntityRecord> = (0..17391).map(|i| entity(i, rep.clone())).collect();
        let s = compute_stats(&samples, &entities);
        assert_eq!((s.samples, s.entities, s.mentions), (18880, 17391, 25846));
        assert!((s.mean_text_words - 8.2).abs() < 1e-12);
        assert_eq!(s.mean_representation_chars, 1318.0);
        assert_eq!(
            s.to_string(),
            "samples\t18880\nentities\t17391\nmentions\t25846\ntext_words\t8.2\nrepresentation_chars\t1318\n"
        );
    }
}
