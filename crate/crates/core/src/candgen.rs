//! Fuzzy string matching and per-mention candidate selection.
//!
//! The score of two strings is `max(full, partial)` where, after lowercasing
//! and collapsing whitespace, `full = 1 − lev(a, b) / max(|a|, |b|)` and
//! `partial` is the best `full` ratio of the shorter string against every
//! window of the same length in the longer one. Lengths count chars.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datastore::EntityRecord;
use crate::error::{Error, Result};

fn normalize(s: &str) -> Vec<char> {
    let mut out = Vec::with_capacity(s.len());
    for (i, word) in s.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        for c in word.chars() {
            if (c as u32) <= 0xFFFF {
                out.extend(c.to_lowercase());
            } else {
                out.push(c);
            }
        }
    }
    out
}

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn full_ratio(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - levenshtein(a, b) as f64 / longest as f64
}

fn partial_ratio(a: &[char], b: &[char]) -> f64 {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return if long.is_empty() { 1.0 } else { 0.0 };
    }
    let mut best = 0.0f64;
    for window in long.windows(short.len()) {
        best = best.max(full_ratio(short, window));
        if best == 1.0 {
            break;
        }
    }
    best
}

/// Fuzzy similarity in `[0, 1]`. Two empty strings score 1; an empty string
/// against a non-empty one scores 0.
pub fn similarity_ratio(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize(a), normalize(b));
    full_ratio(&a, &b).max(partial_ratio(&a, &b))
}

/// Candidates for one mention, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention_id: String,
    pub entity_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub gold_included: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entity_ids.iter().any(|e| e == id)
    }

    pub fn validate(&self, k: Option<usize>) -> Result<()> {
        if self.entity_ids.len() != self.scores.len() {
            return Err(Error::Data(format!(
                "candidate set {} has {} ids but {} scores",
                self.mention_id,
                self.entity_ids.len(),
                self.scores.len()
            )));
        }
        if self.scores.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::Data(format!(
                "candidate set {} scores are not best-first",
                self.mention_id
            )));
        }
        if self.scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::Data(format!(
                "candidate set {} has a score outside [0, 1]",
                self.mention_id
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = self.entity_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Data(format!(
                "candidate set {} lists entity {dup} twice",
                self.mention_id
            )));
        }
        if let Some(k) = k {
            if self.len() > k {
                return Err(Error::Data(format!(
                    "candidate set {} has {} entries, limit {k}",
                    self.mention_id,
                    self.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateOptions {
    pub k: usize,
    /// Put the gold entity into the last slot when fuzzy matching misses it.
    pub inject_gold: bool,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        CandidateOptions {
            k: 100,
            inject_gold: true,
        }
    }
}

/// Top-k entities by fuzzy similarity of the mention to each entity name.
/// Ties go to the smaller entity id.
pub fn generate_candidates(
    mention_id: &str,
    mention: &str,
    entities: &[EntityRecord],
    options: CandidateOptions,
    gold_id: Option<&str>,
) -> Result<CandidateSet> {
    if options.k == 0 {
        return Err(Error::Configuration("candidate k must be at least 1".into()));
    }
    if entities.is_empty() {
        return Err(Error::Data("no entities to generate candidates from".into()));
    }
    let gold_index = match gold_id {
        Some(g) => Some(
            entities
                .iter()
                .position(|e| e.id == g)
                .ok_or_else(|| Error::Data(format!("gold entity {g} is not in the entity list")))?,
        ),
        None => None,
    };

    let needle = normalize(mention);
    let mut scored: Vec<(f64, usize)> = entities
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let name = normalize(&e.name);
            (full_ratio(&needle, &name).max(partial_ratio(&needle, &name)), i)
        })
        .collect();
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| entities[a.1].id.cmp(&entities[b.1].id))
    });
    scored.truncate(options.k);

    let mut gold_included = false;
    if let Some(gi) = gold_index {
        gold_included = scored.iter().any(|(_, i)| *i == gi);
        if !gold_included && options.inject_gold {
            let gold_score = scored_of(&needle, &entities[gi].name);
            let last = scored.len() - 1;
            scored[last] = (gold_score, gi);
            gold_included = true;
        }
    }

    Ok(CandidateSet {
        mention_id: mention_id.to_string(),
        entity_ids: scored.iter().map(|(_, i)| entities[*i].id.clone()).collect(),
        scores: scored.iter().map(|(s, _)| *s).collect(),
        gold_included,
    })
}

fn scored_of(needle: &[char], name: &str) -> f64 {
    let name = normalize(name);
    full_ratio(needle, &name).max(partial_ratio(needle, &name))
}
