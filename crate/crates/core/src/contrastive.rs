//! N-pair contrastive objective over cosine similarities.
//!
//! Two forms are provided:
//!
//! * [`LossMode::Standard`]: `Σ_i log(1 + Σ_j exp(s(g_i, n_j) − s(g_i, p_i)))`,
//!   evaluated as a log-sum-exp with a leading zero term.
//! * [`LossMode::Paper`]: `Σ_i [−s(g_i, p_i) / Σ_j s(g_i, n_j) + log Σ_j exp(s(g_i, n_j))]`.
//!   The denominator is a plain sum of cosines and may vanish, so pairs
//!   whose denominator magnitude falls below [`PAPER_DENOMINATOR_MIN`] are
//!   rejected rather than stabilized.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numkernel::{Tape, Tensor2, Var};

pub const PAPER_DENOMINATOR_MIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    #[default]
    Standard,
    Paper,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Standard => "standard",
            LossMode::Paper => "paper",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossMode::Standard),
            "paper" => Ok(LossMode::Paper),
            other => Err(Error::Configuration(format!(
                "loss_mode must be standard or paper, got {other:?}"
            ))),
        }
    }
}

/// One anchor with its positive and K negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct LossPair {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBatch {
    pub pairs: Vec<LossPair>,
}

impl LossPair {
    pub fn validate(&self) -> Result<()> {
        let d = self.anchor.len();
        if self.negatives.is_empty() {
            return Err(Error::Configuration("loss pair has no negatives".into()));
        }
        if self.positive.len() != d || self.negatives.iter().any(|n| n.len() != d) {
            return Err(Error::Dimension(format!(
                "loss pair vectors must all have dim {d}"
            )));
        }
        let all = std::iter::once(&self.anchor)
            .chain(std::iter::once(&self.positive))
            .chain(&self.negatives);
        for v in all {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Contract("NaN in loss input".into()));
            }
        }
        Ok(())
    }
}

/// Record one pair's loss on the tape. `positive` is 1×d, `negatives` K×d.
pub fn pair_loss_on_tape(
    tape: &mut Tape,
    anchor: Var,
    positive: Var,
    negatives: Var,
    mode: LossMode,
) -> Result<Var> {
    let sim_pos = tape.cosine_rows(anchor, positive)?;
    let sim_neg = tape.cosine_rows(anchor, negatives)?;
    match mode {
        LossMode::Standard => {
            let k = tape.value(sim_neg).cols();
            let ones = tape.constant(Tensor2::filled(1, k, 1.0));
            let pos_rep = tape.matmul(sim_pos, ones)?;
            let margins = tape.sub(sim_neg, pos_rep)?;
            let zero = tape.constant(Tensor2::scalar(0.0));
            let terms = tape.concat_cols(&[zero, margins])?;
            tape.log_sum_exp(terms)
        }
        LossMode::Paper => {
            let denom = tape.sum(sim_neg);
            let s = tape.value(denom).get(0, 0);
            if s.abs() < PAPER_DENOMINATOR_MIN {
                return Err(Error::DegenerateBatch(format!(
                    "sum of negative similarities is {s:e}; resample the batch or use loss_mode=standard"
                )));
            }
            let ratio = tape.div(sim_pos, denom)?;
            let neg_ratio = tape.scale(ratio, -1.0);
            let lse = tape.log_sum_exp(sim_neg)?;
            tape.add(neg_ratio, lse)
        }
    }
}

fn record_pair(tape: &mut Tape, pair: &LossPair, mode: LossMode) -> Result<Var> {
    pair.validate()?;
    let g = tape.param(Tensor2::row_vector(pair.anchor.clone())?);
    let p = tape.constant(Tensor2::row_vector(pair.positive.clone())?);
    let n = tape.constant(Tensor2::from_rows(&pair.negatives)?);
    pair_loss_on_tape(tape, g, p, n, mode)
}

/// Batch loss for either mode.
pub fn npair_loss(batch: &LossBatch, mode: LossMode) -> Result<f64> {
    let mut total = 0.0;
    for pair in &batch.pairs {
        let mut tape = Tape::new();
        let loss = record_pair(&mut tape, pair, mode)?;
        total += tape.value(loss).get(0, 0);
    }
    Ok(total)
}

pub fn npair_paper(batch: &LossBatch) -> Result<f64> {
    npair_loss(batch, LossMode::Paper)
}

pub fn npair_standard(batch: &LossBatch) -> Result<f64> {
    npair_loss(batch, LossMode::Standard)
}

/// Loss and its gradient with respect to every anchor.
pub fn npair_loss_with_anchor_grads(batch: &LossBatch, mode: LossMode) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.pairs.len());
    for pair in &batch.pairs {
        pair.validate()?;
        let mut tape = Tape::new();
        let g = tape.param(Tensor2::row_vector(pair.anchor.clone())?);
        let p = tape.constant(Tensor2::row_vector(pair.positive.clone())?);
        let n = tape.constant(Tensor2::from_rows(&pair.negatives)?);
        let loss = pair_loss_on_tape(&mut tape, g, p, n, mode)?;
        total += tape.value(loss).get(0, 0);
        grads.push(tape.backward(loss)?.take(g).into_data());
    }
    Ok((total, grads))
}

/// Build a pair whose negatives are every candidate except the gold id.
pub fn batch_from_candidates(
    anchor: &[f64],
    gold_id: &str,
    gold_embedding: &[f64],
    candidates: &[(&str, &[f64])],
) -> Result<LossPair> {
    let negatives: Vec<Vec<f64>> = candidates
        .iter()
        .filter(|(id, _)| *id != gold_id)
        .map(|(_, e)| e.to_vec())
        .collect();
    if negatives.is_empty() {
        return Err(Error::Configuration(format!(
            "no negatives left for gold entity {gold_id}"
        )));
    }
    Ok(LossPair {
        anchor: anchor.to_vec(),
        positive: gold_embedding.to_vec(),
        negatives,
    })
}
