//! Mini-batch AdamW training of the fusion model under the N-pair objective.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::candgen::CandidateSet;
use crate::contrastive::{pair_loss_on_tape, LossMode};
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{forward_on_tape, AttentionParams, BundleVars, FeatureBundle};
use crate::numkernel::{AdamWConfig, AdamWState, Tape, Tensor2};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub heads: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_mode: LossMode,
    pub seed: u64,
    pub fuse_mention: bool,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 512,
            heads: 8,
            batch_size: 64,
            epochs: 300,
            loss_mode: LossMode::Standard,
            seed: 0,
            fuse_mention: false,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub initial: AttentionParams,
    pub last: AttentionParams,
    pub best: AttentionParams,
    /// 1-based epoch of `best`; 0 when no epoch ran.
    pub best_epoch: usize,
    /// Mean per-sample loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// One sample prepared for repeated forward/backward passes.
struct Example {
    sample_id: String,
    bundle: FeatureBundle,
    positive: Tensor2,
    negatives: Tensor2,
}

fn prepare(dataset: &Dataset, candidates: &[CandidateSet]) -> Result<Vec<Example>> {
    let by_mention: HashMap<&str, &CandidateSet> =
        candidates.iter().map(|c| (c.mention_id.as_str(), c)).collect();
    dataset
        .samples
        .iter()
        .map(|s| {
            let set = by_mention
                .get(s.id.as_str())
                .ok_or_else(|| Error::Data(format!("no candidate set for sample {}", s.id)))?;
            if !set.contains(&s.gold_entity_id) {
                return Err(Error::Data(format!(
                    "candidate set of sample {} does not contain gold entity {}",
                    s.id, s.gold_entity_id
                )));
            }
            let negatives = set
                .entity_ids
                .iter()
                .filter(|id| **id != s.gold_entity_id)
                .map(|id| dataset.entity_embedding(id))
                .collect::<Result<Vec<_>>>()?;
            if negatives.is_empty() {
                return Err(Error::Configuration(format!(
                    "sample {} has no negative candidates",
                    s.id
                )));
            }
            Ok(Example {
                sample_id: s.id.clone(),
                bundle: dataset.bundle(s)?,
                positive: Tensor2::row_vector(dataset.entity_embedding(&s.gold_entity_id)?)?,
                negatives: Tensor2::from_rows(&negatives)?,
            })
        })
        .collect()
}

fn prepare_checked(cfg: &TrainConfig, dataset: &Dataset, candidates: &[CandidateSet]) -> Result<Vec<Example>> {
    if cfg.batch_size == 0 {
        return Err(Error::Configuration("batch_size must be at least 1".into()));
    }
    if dataset.dim() != cfg.dim {
        return Err(Error::Dimension(format!(
            "dataset features have dim {}, configuration has d={}",
            dataset.dim(),
            cfg.dim
        )));
    }
    if dataset.samples.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    cfg.optimizer.validate()?;
    AttentionParams::init(cfg.seed, cfg.dim, cfg.heads, cfg.fuse_mention)?;
    prepare(dataset, candidates)
}

/// Run every check `train` makes before its first step.
pub fn check_inputs(cfg: &TrainConfig, dataset: &Dataset, candidates: &[CandidateSet]) -> Result<()> {
    prepare_checked(cfg, dataset, candidates).map(|_| ())
}

/// Loss of one example and its gradient for every parameter tensor.
fn example_grad(
    example: &Example,
    params: &AttentionParams,
    mode: LossMode,
) -> Result<(f64, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, true);
    let bundle = BundleVars::record(&mut tape, &example.bundle, false)?;
    let fused = forward_on_tape(&mut tape, &bundle, params, &vars)?;
    let pos = tape.constant(example.positive.clone());
    let neg = tape.constant(example.negatives.clone());
    let loss = pair_loss_on_tape(&mut tape, fused.fused, pos, neg, mode).map_err(|e| match e {
        Error::DegenerateBatch(m) => Error::DegenerateBatch(format!("sample {}: {m}", example.sample_id)),
        other => other,
    })?;
    let value = tape.value(loss).get(0, 0);
    let mut grads = tape.backward(loss)?;
    Ok((value, vars.vars().iter().map(|v| grads.take(*v)).collect()))
}

/// Per-epoch sample order, keyed by (seed, epoch) so any epoch can be
/// replayed without the ones before it.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Train from a seeded initialization. `on_epoch` sees (epoch, mean loss)
/// after each epoch.
pub fn train(
    cfg: &TrainConfig,
    dataset: &Dataset,
    candidates: &[CandidateSet],
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    let examples = prepare_checked(cfg, dataset, candidates)?;
    let initial = AttentionParams::init(cfg.seed, cfg.dim, cfg.heads, cfg.fuse_mention)?;
    let mut params = initial.clone();
    let mut optimizer = AdamWState::new(cfg.optimizer, params.params())?;
    let mut best = initial.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(cfg.seed, epoch as u64, examples.len());
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_example: Vec<Result<(f64, Vec<Tensor2>)>> = batch
                .par_iter()
                .map(|i| example_grad(&examples[*i], &params, cfg.loss_mode))
                .collect();
            let mut sum: Option<Vec<Tensor2>> = None;
            for r in per_example {
                let (loss, grads) = r?;
                total += loss;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.add_assign(g);
                        }
                    }
                }
            }
            let grads = sum.expect("batches are non-empty");
            optimizer.step(params.params_mut(), &grads)?;
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training(format!("epoch {epoch} loss is {mean}")));
        }
        epoch_losses.push(mean);
        if mean < best_loss {
            best_loss = mean;
            best = params.clone();
            best_epoch = epoch;
        }
        log::info!("epoch {epoch} loss {mean:.6}");
        on_epoch(epoch, mean);
    }

    Ok(TrainOutcome {
        initial,
        last: params,
        best,
        best_epoch,
        epoch_losses,
    })
}

/// Trailing moving averages of `values` over `window` entries.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candgen::{generate_candidates, CandidateOptions};
    use crate::datastore::{mock_generate, MockConfig};

    fn small() -> (Dataset, Vec<CandidateSet>) {
        let ds = mock_generate(&MockConfig {
            samples: 40,
            entities: 60,
            dim: 8,
            heads: 2,
            ..MockConfig::default()
        })
        .unwrap();
        let opts = CandidateOptions { k: 10, inject_gold: true };
        let cands = ds
            .samples
            .iter()
            .map(|s| generate_candidates(&s.id, &s.mention, &ds.entities, opts, Some(&s.gold_entity_id)).unwrap())
            .collect();
        (ds, cands)
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            dim: 8,
            heads: 2,
            batch_size: 16,
            epochs,
            seed: 3,
            optimizer: AdamWConfig {
                lr: 1e-2,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (ds, cands) = small();
        let out = train(&cfg(0), &ds, &cands, |_, _| {}).unwrap();
        assert_eq!(out.last, out.initial);
        assert_eq!(out.best, out.initial);
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.last, AttentionParams::init(3, 8, 2, false).unwrap());
    }

    #[test]
    fn training_is_bit_reproducible_and_reduces_loss() {
        let (ds, cands) = small();
        let mut seen = Vec::new();
        let a = train(&cfg(15), &ds, &cands, |e, l| seen.push((e, l))).unwrap();
        let b = train(&cfg(15), &ds, &cands, |_, _| {}).unwrap();
        assert_eq!(a.last, b.last);
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(seen.len(), 15);
        assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0]);
        let best = a.epoch_losses.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.epoch_losses[a.best_epoch - 1], best);
    }

    #[test]
    fn epoch_order_is_a_keyed_permutation() {
        let a = epoch_order(7, 3, 50);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(7, 3, 50));
        assert_ne!(a, epoch_order(7, 4, 50));
    }

    #[test]
    fn missing_gold_in_candidates_is_rejected() {
        let (ds, mut cands) = small();
        let gold = ds.samples[0].gold_entity_id.clone();
        let c = &mut cands[0];
        let pos = c.entity_ids.iter().position(|x| *x == gold).unwrap();
        c.entity_ids.remove(pos);
        c.scores.remove(pos);
        assert!(matches!(train(&cfg(1), &ds, &cands, |_, _| {}), Err(Error::Data(_))));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (ds, cands) = small();
        let bad = TrainConfig { dim: 16, heads: 2, ..cfg(1) };
        assert!(matches!(train(&bad, &ds, &cands, |_, _| {}), Err(Error::Dimension(_))));
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
