//! Cosine ranking of fused features against candidate entities and top-k
//! accuracy.
//!
//! Ties are pessimistic: every non-gold candidate whose similarity is greater
//! than or equal to the gold similarity is ranked ahead of the gold entity.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::candgen::CandidateSet;
use crate::datastore::Dataset;
use crate::error::{Error, Result};
use crate::fusion::{self, AttentionParams};
use crate::numkernel::cosine;

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 20];

#[derive(Debug, Clone, PartialEq)]
pub struct RankResult {
    pub sample_id: String,
    /// 1-based.
    pub gold_rank: usize,
    pub candidate_count: usize,
    pub gold_similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    pub accuracies: Vec<f64>,
    pub results: Vec<RankResult>,
}

impl EvalReport {
    pub fn sample_count(&self) -> usize {
        self.results.len()
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|x| *x == k).map(|i| self.accuracies[i])
    }

    pub fn is_monotone(&self) -> bool {
        self.accuracies.windows(2).all(|w| w[0] <= w[1])
    }

    /// Text form: header, one accuracy line per k, then optionally one line
    /// per sample.
    pub fn render(&self, dataset_name: &str, dump_ranks: bool) -> String {
        let mut out = String::new();
        let ks: Vec<String> = self.ks.iter().map(|k| k.to_string()).collect();
        writeln!(out, "dataset\t{dataset_name}").unwrap();
        writeln!(out, "ks\t{}", ks.join(",")).unwrap();
        writeln!(out, "samples\t{}", self.sample_count()).unwrap();
        for (k, acc) in self.ks.iter().zip(&self.accuracies) {
            writeln!(out, "T@{k}\t{acc:.6}").unwrap();
        }
        if dump_ranks {
            for r in &self.results {
                writeln!(
                    out,
                    "rank\t{}\t{}\t{}\t{:.9}",
                    r.sample_id, r.gold_rank, r.candidate_count, r.gold_similarity
                )
                .unwrap();
            }
        }
        out
    }
}

/// Rank of the gold entity among `candidates` by cosine similarity to `fused`.
pub fn rank_of_gold(
    sample_id: &str,
    fused: &[f64],
    gold_id: &str,
    gold_embedding: &[f64],
    candidates: &[(&str, &[f64])],
) -> Result<RankResult> {
    if !candidates.iter().any(|(id, _)| *id == gold_id) {
        return Err(Error::Evaluation(format!(
            "gold entity {gold_id} is not among the candidates of sample {sample_id}"
        )));
    }
    let gold_similarity = cosine(fused, gold_embedding)?;
    let mut ahead = 0;
    for (id, emb) in candidates {
        if *id == gold_id {
            continue;
        }
        if cosine(fused, emb)? >= gold_similarity {
            ahead += 1;
        }
    }
    Ok(RankResult {
        sample_id: sample_id.to_string(),
        gold_rank: ahead + 1,
        candidate_count: candidates.len(),
        gold_similarity,
    })
}

/// Fraction of results with `gold_rank <= k`, for each k.
pub fn topk_accuracy(results: Vec<RankResult>, ks: &[usize]) -> Result<EvalReport> {
    if results.is_empty() {
        return Err(Error::Evaluation("no results to aggregate".into()));
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(Error::Evaluation(format!(
            "k list must be positive and strictly ascending, got {ks:?}"
        )));
    }
    let n = results.len() as f64;
    let accuracies = ks
        .iter()
        .map(|k| results.iter().filter(|r| r.gold_rank <= *k).count() as f64 / n)
        .collect();
    Ok(EvalReport {
        ks: ks.to_vec(),
        accuracies,
        results,
    })
}

/// Rank every sample of `dataset` against its candidate set.
pub fn evaluate(
    params: &AttentionParams,
    dataset: &Dataset,
    candidates: &[CandidateSet],
    ks: &[usize],
) -> Result<EvalReport> {
    let by_mention: HashMap<&str, &CandidateSet> =
        candidates.iter().map(|c| (c.mention_id.as_str(), c)).collect();
    let results: Vec<Result<RankResult>> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let set = by_mention.get(sample.id.as_str()).ok_or_else(|| {
                Error::Data(format!("no candidate set for sample {}", sample.id))
            })?;
            let bundle = dataset.bundle(sample)?;
            let fused = fusion::forward(&bundle, params)?.fused;
            let embs = set
                .entity_ids
                .iter()
                .map(|id| dataset.entity_embedding(id).map(|e| (id.as_str(), e)))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<(&str, &[f64])> = embs.iter().map(|(id, e)| (*id, e.as_slice())).collect();
            let gold = dataset.entity_embedding(&sample.gold_entity_id)?;
            rank_of_gold(&sample.id, &fused, &sample.gold_entity_id, &gold, &refs)
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    topk_accuracy(results, ks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rr(rank: usize) -> RankResult {
        RankResult {
            sample_id: "s".into(),
            gold_rank: rank,
            candidate_count: 100,
            gold_similarity: 0.0,
        }
    }

    /// Direction at angle `t` in the plane, so cos similarity to (1, 0) is cos(t).
    fn at(t: f64) -> Vec<f64> {
        vec![t.cos(), t.sin()]
    }

    #[test]
    fn gold_highest_is_rank_one() {
        let (g, a, b) = (at(0.1), at(1.0), at(2.0));
        let c = [("g", g.as_slice()), ("a", a.as_slice()), ("b", b.as_slice())];
        let r = rank_of_gold("s", &[1.0, 0.0], "g", &g, &c).unwrap();
        assert_eq!(r.gold_rank, 1);
        assert_eq!(r.candidate_count, 3);
    }

    #[test]
    fn counting_example() {
        let others = [0.9f64, 0.5];
        let embs: Vec<Vec<f64>> = others.iter().map(|s| at(s.acos())).collect();
        let gold = at(0.7f64.acos());
        let c = [("a", embs[0].as_slice()), ("g", gold.as_slice()), ("b", embs[1].as_slice())];
        assert_eq!(rank_of_gold("s", &[1.0, 0.0], "g", &gold, &c).unwrap().gold_rank, 2);
    }

    #[test]
    fn exact_tie_counts_against_gold() {
        let gold = vec![1.0, 1.0];
        let twin = vec![2.0, 2.0];
        let c = [("g", gold.as_slice()), ("t", twin.as_slice())];
        assert_eq!(rank_of_gold("s", &[3.0, 1.0], "g", &gold, &c).unwrap().gold_rank, 2);
    }

    #[test]
    fn missing_gold_and_zero_norm() {
        let a = vec![1.0, 0.0];
        assert!(matches!(
            rank_of_gold("s", &[1.0, 0.0], "g", &a, &[("a", &a)]),
            Err(Error::Evaluation(_))
        ));
        assert!(matches!(
            rank_of_gold("s", &[0.0, 0.0], "a", &a, &[("a", &a)]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn accuracy_examples() {
        let rep = topk_accuracy(vec![rr(1), rr(3), rr(7)], &[5]).unwrap();
        assert!((rep.accuracies[0] - 2.0 / 3.0).abs() < 1e-15);

        let rep = topk_accuracy(vec![rr(1); 4], &DEFAULT_KS).unwrap();
        assert_eq!(rep.accuracies, vec![1.0; 4]);

        let rep = topk_accuracy(vec![rr(6)], &DEFAULT_KS).unwrap();
        assert_eq!(rep.accuracies, vec![0.0, 0.0, 1.0, 1.0]);

        assert!(topk_accuracy(vec![], &DEFAULT_KS).is_err());
        assert!(topk_accuracy(vec![rr(1)], &[5, 1]).is_err());
    }

    #[test]
    fn render_layout() {
        let rep = topk_accuracy(vec![rr(1), rr(3)], &[1, 5]).unwrap();
        let text = rep.render("toy", true);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "dataset\ttoy");
        assert_eq!(lines[1], "ks\t1,5");
        assert_eq!(lines[2], "samples\t2");
        assert_eq!(lines[3], "T@1\t0.500000");
        assert_eq!(lines[4], "T@5\t1.000000");
        assert!(lines[5].starts_with("rank\ts\t1\t100\t"));
        assert_eq!(rep.render("toy", false).lines().count(), 5);
    }

    proptest! {
        #[test]
        fn monotone_in_k(ranks in prop::collection::vec(1usize..40, 1..50)) {
            let rep = topk_accuracy(ranks.into_iter().map(rr).collect(), &DEFAULT_KS).unwrap();
            prop_assert!(rep.is_monotone());
        }

        #[test]
        fn scale_invariant(
            g in prop::collection::vec(-1.0f64..1.0, 3),
            cands in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 2..8),
            scale in 0.01f64..100.0,
        ) {
            prop_assume!(g.iter().any(|x| x.abs() > 1e-3));
            prop_assume!(cands.iter().all(|c| c.iter().any(|x| x.abs() > 1e-3)));
            let ids: Vec<String> = (0..cands.len()).map(|i| i.to_string()).collect();
            let refs: Vec<(&str, &[f64])> = ids.iter().map(|s| s.as_str()).zip(cands.iter().map(|c| c.as_slice())).collect();
            let scaled: Vec<f64> = g.iter().map(|x| x * scale).collect();
            let a = rank_of_gold("s", &g, "0", &cands[0], &refs).unwrap();
            let b = rank_of_gold("s", &scaled, "0", &cands[0], &refs).unwrap();
            prop_assert_eq!(a.gold_rank, b.gold_rank);
        }
    }
}
