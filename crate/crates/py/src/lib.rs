//! Python bindings for the dimlink core.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use dimlink::candgen::{self, CandidateOptions};
use dimlink::config;
use dimlink::contrastive::{self, LossBatch, LossMode, LossPair};
use dimlink::datastore::{self, EmbeddingTable, EntityRecord, MockConfig, RepresentationSource};
use dimlink::enhance;
use dimlink::fusion::{self, FeatureBundle};
use dimlink::numkernel::{self, Tensor2};
use dimlink::rankeval::{self, RankResult};

fn err(e: dimlink::Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        dimlink::Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Tensor2> {
    Tensor2::from_rows(&rows).map_err(err)
}

fn loss_mode(mode: &str) -> PyResult<LossMode> {
    mode.parse().map_err(err)
}

#[pyfunction]
fn expert_concat(caption: &str, identity: &str) -> String {
    fusion::expert_concat(caption, identity)
}

#[pyfunction]
fn similarity_ratio(a: &str, b: &str) -> f64 {
    candgen::similarity_ratio(a, b)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    numkernel::cosine(&a, &b).map_err(err)
}

#[pyfunction]
fn softmax(x: Vec<f64>) -> PyResult<Vec<f64>> {
    numkernel::softmax(&x).map_err(err)
}

#[pyfunction]
fn truncate_chars(text: &str, budget: usize) -> String {
    config::truncate_chars(text, budget).to_string()
}

/// Returns (system, user).
#[pyfunction]
fn build_prompt(name: &str) -> PyResult<(String, String)> {
    let p = enhance::build_prompt(name).map_err(err)?;
    Ok((p.system, p.user))
}

#[pyfunction]
fn classify_response(text: &str) -> &'static str {
    enhance::classify_response(text).as_str()
}

/// Loss of one (anchor, positive, negatives) triple.
#[pyfunction]
#[pyo3(signature = (anchor, positive, negatives, mode = "standard"))]
fn npair_loss(anchor: Vec<f64>, positive: Vec<f64>, negatives: Vec<Vec<f64>>, mode: &str) -> PyResult<f64> {
    let batch = LossBatch {
        pairs: vec![LossPair {
            anchor,
            positive,
            negatives,
        }],
    };
    contrastive::npair_loss(&batch, loss_mode(mode)?).map_err(err)
}

/// 1-based rank of the gold entity; ties count against it.
#[pyfunction]
fn rank_of_gold(fused: Vec<f64>, gold_id: &str, candidates: Vec<(String, Vec<f64>)>) -> PyResult<usize> {
    let gold = candidates
        .iter()
        .find(|(id, _)| id == gold_id)
        .map(|(_, e)| e.clone())
        .ok_or_else(|| PyValueError::new_err(format!("gold entity {gold_id} is not among the candidates")))?;
    let refs: Vec<(&str, &[f64])> = candidates.iter().map(|(id, e)| (id.as_str(), e.as_slice())).collect();
    let r = rankeval::rank_of_gold("sample", &fused, gold_id, &gold, &refs).map_err(err)?;
    Ok(r.gold_rank)
}

#[pyfunction]
#[pyo3(signature = (ranks, ks = vec![1, 5, 10, 20]))]
fn topk_accuracy(ranks: Vec<usize>, ks: Vec<usize>) -> PyResult<Vec<f64>> {
    let results = ranks
        .iter()
        .enumerate()
        .map(|(i, r)| RankResult {
            sample_id: i.to_string(),
            gold_rank: *r,
            candidate_count: *r,
            gold_similarity: 0.0,
        })
        .collect();
    Ok(rankeval::topk_accuracy(results, &ks).map_err(err)?.accuracies)
}

/// Candidates for `mention` among (id, name) pairs. Returns (ids, scores, gold_included).
#[pyfunction]
#[pyo3(signature = (mention, entities, k = 100, gold_id = None))]
fn generate_candidates(
    mention: &str,
    entities: Vec<(String, String)>,
    k: usize,
    gold_id: Option<&str>,
) -> PyResult<(Vec<String>, Vec<f64>, bool)> {
    let records: Vec<EntityRecord> = entities
        .into_iter()
        .map(|(id, name)| EntityRecord {
            id,
            representation: name.clone(),
            name,
            representation_source: RepresentationSource::Original,
        })
        .collect();
    let opts = CandidateOptions {
        k,
        inject_gold: gold_id.is_some(),
    };
    let set = candgen::generate_candidates("mention", mention, &records, opts, gold_id).map_err(err)?;
    Ok((set.entity_ids, set.scores, set.gold_included))
}

/// Returns (dim, {id: vector}).
#[pyfunction]
fn read_embeddings(path: &str) -> PyResult<(usize, BTreeMap<String, Vec<f32>>)> {
    let table = datastore::read_embeddings(path).map_err(err)?;
    let map = table.iter().map(|(id, v)| (id.to_string(), v.to_vec())).collect();
    Ok((table.dim(), map))
}

/// Writes records in the given order.
#[pyfunction]
fn write_embeddings(path: &str, dim: usize, records: Vec<(String, Vec<f32>)>) -> PyResult<()> {
    let mut table = EmbeddingTable::new(dim);
    for (id, v) in records {
        table.insert(id, &v).map_err(err)?;
    }
    datastore::write_embeddings(&table, path).map_err(err)
}

#[pyfunction]
fn compute_stats(samples_path: &str, entities_path: &str) -> PyResult<BTreeMap<&'static str, f64>> {
    let samples = datastore::read_samples(samples_path).map_err(err)?;
    let entities = datastore::read_entities(entities_path).map_err(err)?;
    datastore::validate_references(&samples, &entities).map_err(err)?;
    let s = datastore::compute_stats(&samples, &entities);
    Ok(BTreeMap::from([
        ("samples", s.samples as f64),
        ("entities", s.entities as f64),
        ("mentions", s.mentions as f64),
        ("mean_text_words", s.mean_text_words),
        ("mean_representation_chars", s.mean_representation_chars),
    ]))
}

/// Write a planted-solution dataset directory.
#[pyfunction]
#[pyo3(signature = (out_dir, seed = 7, samples = 500, entities = 1000, dim = 64, heads = 8, noise_sigma = 0.05))]
fn mock_generate(
    out_dir: &str,
    seed: u64,
    samples: usize,
    entities: usize,
    dim: usize,
    heads: usize,
    noise_sigma: f64,
) -> PyResult<()> {
    let ds = datastore::mock_generate(&MockConfig {
        seed,
        samples,
        entities,
        dim,
        heads,
        noise_sigma,
        ..MockConfig::default()
    })
    .map_err(err)?;
    ds.save(out_dir).map_err(err)
}

/// Cross-attention fusion weights.
#[pyclass(name = "AttentionParams", module = "dimlink_py")]
struct PyAttentionParams {
    inner: fusion::AttentionParams,
}

#[pymethods]
impl PyAttentionParams {
    /// Seeded Xavier-uniform initialization.
    #[staticmethod]
    #[pyo3(signature = (seed, dim, heads, fuse_mention = false))]
    fn init(seed: u64, dim: usize, heads: usize, fuse_mention: bool) -> PyResult<Self> {
        Ok(PyAttentionParams {
            inner: fusion::AttentionParams::init(seed, dim, heads, fuse_mention).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (dim, heads, fuse_mention = false))]
    fn identity(dim: usize, heads: usize, fuse_mention: bool) -> PyResult<Self> {
        Ok(PyAttentionParams {
            inner: fusion::AttentionParams::identity(dim, heads, fuse_mention).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, dim = None))]
    fn load(path: &str, dim: Option<usize>) -> PyResult<Self> {
        Ok(PyAttentionParams {
            inner: datastore::load_checkpoint(path, dim).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        datastore::save_checkpoint(&self.inner, path).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn heads(&self) -> usize {
        self.inner.heads()
    }

    fn names(&self) -> Vec<String> {
        self.inner.params().iter().map(|p| p.name.clone()).collect()
    }

    /// Rows of the named weight matrix.
    fn weight(&self, name: &str) -> PyResult<Vec<Vec<f64>>> {
        let p = self
            .inner
            .params()
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| PyValueError::new_err(format!("no tensor named {name}")))?;
        Ok((0..p.value.rows()).map(|r| p.value.row(r).to_vec()).collect())
    }

    /// Returns {"f_text", "f_image", "fused"}.
    #[pyo3(signature = (text, image, expert, mention = None))]
    fn forward(
        &self,
        text: Vec<Vec<f64>>,
        image: Vec<Vec<f64>>,
        expert: Vec<f64>,
        mention: Option<Vec<f64>>,
    ) -> PyResult<BTreeMap<&'static str, Vec<f64>>> {
        let bundle = FeatureBundle {
            text: matrix(text)?,
            image: matrix(image)?,
            expert,
            mention,
        };
        let out = fusion::forward(&bundle, &self.inner).map_err(err)?;
        Ok(BTreeMap::from([
            ("f_text", out.f_text),
            ("f_image", out.f_image),
            ("fused", out.fused),
        ]))
    }

    fn __repr__(&self) -> String {
        format!("AttentionParams(dim={}, heads={})", self.inner.dim(), self.inner.heads())
    }
}

#[pymodule]
fn dimlink_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAttentionParams>()?;
    m.add_function(wrap_pyfunction!(expert_concat, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(truncate_chars, m)?)?;
    m.add_function(wrap_pyfunction!(build_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(classify_response, m)?)?;
    m.add_function(wrap_pyfunction!(npair_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rank_of_gold, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(generate_candidates, m)?)?;
    m.add_function(wrap_pyfunction!(read_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(write_embeddings, m)?)?;
    m.add_function(wrap_pyfunction!(compute_stats, m)?)?;
    m.add_function(wrap_pyfunction!(mock_generate, m)?)?;
    Ok(())
}
