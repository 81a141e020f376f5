use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementCategory {
    Enhanced,
    Empty,
    Refusal,
    Speculative,
    NeedsVerification,
    Fictional,
}

impl EnhancementCategory {
    pub const ALL: [EnhancementCategory; 6] = [
        EnhancementCategory::Enhanced,
        EnhancementCategory::Empty,
        EnhancementCategory::Refusal,
        EnhancementCategory::Speculative,
        EnhancementCategory::NeedsVerification,
        EnhancementCategory::Fictional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnhancementCategory::Enhanced => "enhanced",
            EnhancementCategory::Empty => "empty",
            EnhancementCategory::Refusal => "refusal",
            EnhancementCategory::Speculative => "speculative",
            EnhancementCategory::NeedsVerification => "needs_verification",
            EnhancementCategory::Fictional => "fictional",
        }
    }
}

impl fmt::Display for EnhancementCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnhancementCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnhancementCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Input(format!("unknown enhancement category {s:?}")))
    }
}

/// Phrase lists for the rule cascade. Matching is case-insensitive substring
/// search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classifier {
    pub refusal: Vec<String>,
    pub fictional: Vec<String>,
    pub needs_verification: Vec<String>,
    /// Each entry matches when both parts occur, the second after the first.
    pub speculative: Vec<(String, String)>,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier {
            refusal: vec!["sorry, i cannot provide".into()],
            fictional: vec!["is a fictional name".into()],
            needs_verification: vec!["it is possible that".into()],
            speculative: vec![("is a common".into(), "name".into())],
        }
    }
}

impl Classifier {
    /// Add patterns from `category=phrase` lines; speculative entries use
    /// `speculative=first|second`.
    pub fn extend_from_str(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (cat, phrase) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("pattern line {}: expected category=phrase", i + 1)))?;
            let phrase = phrase.trim().to_lowercase();
            if phrase.is_empty() {
                return Err(Error::Input(format!("pattern line {}: empty phrase", i + 1)));
            }
            match cat.trim().parse::<EnhancementCategory>()? {
                EnhancementCategory::Refusal => self.refusal.push(phrase),
                EnhancementCategory::Fictional => self.fictional.push(phrase),
                EnhancementCategory::NeedsVerification => self.needs_verification.push(phrase),
                EnhancementCategory::Speculative => {
                    let (a, b) = phrase.split_once('|').unwrap_or((phrase.as_str(), ""));
                    self.speculative.push((a.trim().to_string(), b.trim().to_string()));
                }
                other => {
                    return Err(Error::Input(format!(
                        "pattern line {}: category {other} takes no patterns",
                        i + 1
                    )))
                }
            }
        }
        Ok(())
    }

    /// First matching rule wins: empty, refusal, fictional, needs
    /// verification, speculative, otherwise enhanced.
    pub fn classify(&self, text: &str) -> EnhancementCategory {
        if text.trim().is_empty() {
            return EnhancementCategory::Empty;
        }
        let lower = text.to_lowercase();
        let any = |list: &[String]| list.iter().any(|p| lower.contains(p.as_str()));
        if any(&self.refusal) {
            EnhancementCategory::Refusal
        } else if any(&self.fictional) {
            EnhancementCategory::Fictional
        } else if any(&self.needs_verification) {
            EnhancementCategory::NeedsVerification
        } else if self.speculative.iter().any(|(a, b)| {
            lower
                .find(a.as_str())
                .is_some_and(|at| lower[at + a.len()..].contains(b.as_str()))
        }) {
            EnhancementCategory::Speculative
        } else {
            EnhancementCategory::Enhanced
        }
    }
}

/// Classify with the default phrase lists.
pub fn classify_response(text: &str) -> EnhancementCategory {
    Classifier::default().classify(text)
}
