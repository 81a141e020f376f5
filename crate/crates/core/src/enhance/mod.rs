//! Entity-representation enhancement through a chat model, with
//! category-based fallback to the original text.

mod classify;
mod provider;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use classify::{classify_response, Classifier, EnhancementCategory};
pub use provider::{
    build_prompt, parse_reply, request_body, HttpProvider, MockProvider, Prompt, Provider, ProviderConfig,
    ProviderKind, ScriptEntry, SYSTEM_PROMPT,
};

use crate::datastore::{EntityRecord, RepresentationSource};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhancementReport {
    /// Indexed like [`EnhancementCategory::ALL`].
    pub counts: [usize; 6],
    pub total: usize,
    pub enhanced: usize,
    pub fallback: usize,
}

impl EnhancementReport {
    pub fn count(&self, category: EnhancementCategory) -> usize {
        let i = EnhancementCategory::ALL.iter().position(|c| *c == category).expect("listed");
        self.counts[i]
    }

    fn tally(&mut self, category: EnhancementCategory) {
        let i = EnhancementCategory::ALL.iter().position(|c| *c == category).expect("listed");
        self.counts[i] += 1;
        self.total += 1;
        if category == EnhancementCategory::Enhanced {
            self.enhanced += 1;
        } else {
            self.fallback += 1;
        }
    }
}

impl fmt::Display for EnhancementReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (c, n) in EnhancementCategory::ALL.iter().zip(self.counts) {
            writeln!(f, "{c}\t{n}")?;
        }
        writeln!(f, "total\t{}", self.total)?;
        writeln!(f, "fallback\t{}", self.fallback)
    }
}

/// What the provider said about one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub id: String,
    pub category: EnhancementCategory,
    /// Raw reply text; `None` when no usable reply arrived.
    pub response: Option<String>,
    /// Final error for this entity, if any.
    pub error: Option<String>,
}

impl AuditRecord {
    /// SHA-256 of the raw reply, hex encoded. Empty replies hash the empty string.
    pub fn digest(&self) -> String {
        let digest = Sha256::digest(self.response.as_deref().unwrap_or("").as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn log_line(&self) -> String {
        format!("{}\t{}\t{}", self.id, self.category, self.digest())
    }
}

#[derive(Debug, Clone)]
pub struct EnhancementOutcome {
    pub entities: Vec<EntityRecord>,
    pub report: EnhancementReport,
    /// One record per entity, in input order.
    pub audit: Vec<AuditRecord>,
}

impl EnhancementOutcome {
    pub fn audit_log(&self) -> String {
        self.audit.iter().map(|a| a.log_line() + "\n").collect()
    }

    /// Raw replies as JSON lines, one per entity.
    pub fn responses_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for a in &self.audit {
            out.push_str(&serde_json::to_string(a).map_err(|e| Error::Format(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }
}

fn backoff_delay(base: Duration, attempt: u32) -> Duration {
    if base.is_zero() {
        return Duration::ZERO;
    }
    let factor = 2f64.powi(attempt.min(16) as i32);
    let jitter = rand::rng().random_range(0.5..1.5);
    base.mul_f64(factor * jitter)
}

/// Ask `provider` about one entity, retrying transient failures.
fn query(provider: &dyn Provider, entity: &EntityRecord, cfg: &ProviderConfig) -> Result<String> {
    let prompt = build_prompt(&entity.name)?;
    let mut attempt = 0;
    loop {
        match provider.complete(&entity.id, &prompt) {
            Err(Error::Provider(msg)) if attempt < cfg.max_retries => {
                let delay = backoff_delay(cfg.backoff_base, attempt);
                log::debug!("{}: attempt {} failed ({msg}), retrying in {delay:?}", entity.id, attempt + 1);
                std::thread::sleep(delay);
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Query every entity with at most `cfg.concurrency` requests in flight.
/// Results are folded in input order, so the outcome depends only on the
/// provider's replies.
pub fn enhance_entities(
    entities: &[EntityRecord],
    provider: &dyn Provider,
    cfg: &ProviderConfig,
    classifier: &Classifier,
) -> Result<EnhancementOutcome> {
    cfg.validate()?;
    let n = entities.len();
    let workers = cfg.concurrency.min(n).max(1);
    let next = AtomicUsize::new(0);
    let mut replies: Vec<Option<Result<String>>> = (0..n).map(|_| None).collect();

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                if tx.send((i, query(provider, &entities[i], cfg))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (i, reply) in rx {
            replies[i] = Some(reply);
        }
    });

    let mut report = EnhancementReport::default();
    let mut updated = Vec::with_capacity(n);
    let mut audit = Vec::with_capacity(n);
    for (entity, reply) in entities.iter().zip(replies) {
        let reply = reply.expect("every entity is answered");
        let (category, response, error) = match reply {
            Ok(text) => (classifier.classify(&text), Some(text), None),
            Err(e) => {
                log::warn!("{}: {e}", entity.id);
                (EnhancementCategory::Empty, None, Some(e.to_string()))
            }
        };
        report.tally(category);
        let mut record = entity.clone();
        if category == EnhancementCategory::Enhanced {
            record.representation = response.clone().expect("enhanced implies a reply");
            record.representation_source = RepresentationSource::Enhanced;
        }
        updated.push(record);
        audit.push(AuditRecord {
            id: entity.id.clone(),
            category,
            response,
            error,
        });
    }
    Ok(EnhancementOutcome {
        entities: updated,
        report,
        audit,
    })
}
