//! Multi-head cross-attention of the expert feature over text and image
//! features, followed by additive fusion.
//!
//! The expert feature acts as a single query. For each head the scores are
//! `(W_q f_c) · (W_k row) / sqrt(d_k)` over the rows of the attended
//! sequence, softmax-normalized, and used to average the value projections
//! `W_v row`. Head outputs are concatenated back to `d` with no output
//! projection. The fused feature is `g = f_v + f_c + f_t`.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkernel::{Param, Tape, Tensor2, Var};

pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";

/// Assemble the expert string from an image caption and an identity answer.
pub fn expert_concat(caption: &str, identity: &str) -> String {
    let mut out = String::with_capacity(caption.len() + identity.len() + 10);
    out.push_str(CLS_TOKEN);
    out.push_str(caption);
    out.push_str(SEP_TOKEN);
    out.push_str(identity);
    out
}

/// Caption, identity answer and their assembled form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertInfo {
    pub caption: String,
    pub identity: String,
    pub assembled: String,
}

impl ExpertInfo {
    pub fn new(caption: impl Into<String>, identity: impl Into<String>) -> Self {
        let caption = caption.into();
        let identity = identity.into();
        let assembled = expert_concat(&caption, &identity);
        ExpertInfo {
            caption,
            identity,
            assembled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Text,
    Image,
}

impl Branch {
    pub fn prefix(self) -> &'static str {
        match self {
            Branch::Text => "text",
            Branch::Image => "image",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Projection {
    Query,
    Key,
    Value,
}

impl Projection {
    fn suffix(self) -> &'static str {
        match self {
            Projection::Query => "wq",
            Projection::Key => "wk",
            Projection::Value => "wv",
        }
    }
}

pub const MENTION_PROJ: &str = "mention.proj";

pub fn weight_name(branch: Branch, head: usize, proj: Projection) -> String {
    format!("{}.head{head:03}.{}", branch.prefix(), proj.suffix())
}

/// Inputs for one linking instance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    /// L_t × d
    pub text: Tensor2,
    /// L_v × d
    pub image: Tensor2,
    pub expert: Vec<f64>,
    pub mention: Option<Vec<f64>>,
}

impl FeatureBundle {
    pub fn dim(&self) -> usize {
        self.expert.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.expert.len();
        if d == 0 {
            return Err(Error::Dimension("expert feature is empty".into()));
        }
        for (name, seq) in [("text", &self.text), ("image", &self.image)] {
            if seq.rows() == 0 {
                return Err(Error::Dimension(format!("{name} sequence has no rows")));
            }
            if seq.cols() != d {
                return Err(Error::Dimension(format!(
                    "{name} sequence is {}x{}, expert feature has dim {d}",
                    seq.rows(),
                    seq.cols()
                )));
            }
        }
        if let Some(m) = &self.mention {
            if m.len() != d {
                return Err(Error::Dimension(format!(
                    "mention feature has dim {}, expected {d}",
                    m.len()
                )));
            }
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.expert) || !self.mention.as_deref().is_none_or(finite) {
            return Err(Error::Domain("non-finite feature entry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatures {
    pub f_text: Vec<f64>,
    pub f_image: Vec<f64>,
    pub fused: Vec<f64>,
}

/// All learnable weights of the fusion model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    dim: usize,
    heads: usize,
    fuse_mention: bool,
    tensors: Vec<Param>,
    index: HashMap<String, usize>,
}

fn check_heads(d: usize, h: usize) -> Result<usize> {
    if d == 0 || h == 0 || !d.is_multiple_of(h) {
        return Err(Error::Configuration(format!(
            "hidden size {d} is not divisible by {h} heads"
        )));
    }
    Ok(d / h)
}

impl AttentionParams {
    fn expected_shapes(d: usize, h: usize, fuse_mention: bool) -> Vec<(String, (usize, usize))> {
        let dk = d / h;
        let mut out = Vec::new();
        for branch in [Branch::Text, Branch::Image] {
            for head in 0..h {
                for proj in [Projection::Query, Projection::Key, Projection::Value] {
                    out.push((weight_name(branch, head, proj), (d, dk)));
                }
            }
        }
        if fuse_mention {
            out.push((MENTION_PROJ.to_string(), (d, d)));
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    fn build(d: usize, h: usize, fuse_mention: bool, mut fill: impl FnMut(&str, usize, usize) -> Tensor2) -> Result<Self> {
        check_heads(d, h)?;
        let tensors: Vec<Param> = Self::expected_shapes(d, h, fuse_mention)
            .into_iter()
            .map(|(name, (r, c))| {
                let value = fill(&name, r, c);
                Param::new(name, value)
            })
            .collect();
        Ok(Self::from_sorted(d, h, fuse_mention, tensors))
    }

    fn from_sorted(dim: usize, heads: usize, fuse_mention: bool, tensors: Vec<Param>) -> Self {
        let index = tensors
            .iter()
            .enumerate()
            .map(|(i, p)| (p.name.clone(), i))
            .collect();
        AttentionParams {
            dim,
            heads,
            fuse_mention,
            tensors,
            index,
        }
    }

    /// Xavier-uniform initialization, deterministic in `seed`.
    pub fn init(seed: u64, d: usize, h: usize, fuse_mention: bool) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(d, h, fuse_mention, |_, r, c| {
            let bound = (6.0 / (r + c) as f64).sqrt();
            let data = (0..r * c).map(|_| rng.random_range(-bound..=bound)).collect();
            Tensor2::from_raw(r, c, data)
        })
    }

    /// Every head projects onto its own slice of the identity, so each head
    /// attends in its own coordinate block and values pass through unchanged.
    pub fn identity(d: usize, h: usize, fuse_mention: bool) -> Result<Self> {
        let dk = check_heads(d, h)?;
        Self::build(d, h, fuse_mention, |name, r, c| {
            let mut t = Tensor2::zeros(r, c);
            if name == MENTION_PROJ {
                return Tensor2::identity(d);
            }
            let head: usize = name
                .split('.')
                .nth(1)
                .and_then(|s| s.strip_prefix("head"))
                .and_then(|s| s.parse().ok())
                .expect("generated weight names carry a head index");
            for j in 0..dk {
                t.set(head * dk + j, j, 1.0);
            }
            t
        })
    }

    /// Rebuild from named tensors (e.g. a loaded checkpoint).
    pub fn from_params(d: usize, h: usize, fuse_mention: bool, params: Vec<Param>) -> Result<Self> {
        check_heads(d, h)?;
        let mut by_name: HashMap<String, Tensor2> =
            params.into_iter().map(|p| (p.name, p.value)).collect();
        let mut tensors = Vec::new();
        for (name, shape) in Self::expected_shapes(d, h, fuse_mention) {
            let value = by_name
                .remove(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if value.shape() != shape {
                return Err(Error::Dimension(format!(
                    "tensor {name} is {}x{}, expected {}x{} for d={d}, h={h}",
                    value.rows(),
                    value.cols(),
                    shape.0,
                    shape.1
                )));
            }
            tensors.push(Param::new(name, value));
        }
        if let Some(extra) = by_name.keys().min() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Self::from_sorted(d, h, fuse_mention, tensors))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn fuse_mention(&self) -> bool {
        self.fuse_mention
    }

    /// Named tensors, sorted by name.
    pub fn params(&self) -> &[Param] {
        &self.tensors
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.tensors
    }

    pub fn into_params(self) -> Vec<Param> {
        self.tensors
    }

    pub fn weight(&self, branch: Branch, head: usize, proj: Projection) -> &Tensor2 {
        &self.tensors[self.index[&weight_name(branch, head, proj)]].value
    }

    pub fn mention_projection(&self) -> Option<&Tensor2> {
        self.index.get(MENTION_PROJ).map(|i| &self.tensors[*i].value)
    }

    /// Put every tensor on `tape`, trainable or constant.
    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ParamVars {
        let vars = self
            .tensors
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect();
        ParamVars {
            vars,
            index: self.index.clone(),
        }
    }
}

/// Tape handles for an [`AttentionParams`], parallel to [`AttentionParams::params`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn weight(&self, branch: Branch, head: usize, proj: Projection) -> Var {
        self.vars[self.index[&weight_name(branch, head, proj)]]
    }

    fn mention_projection(&self) -> Option<Var> {
        self.index.get(MENTION_PROJ).map(|i| self.vars[*i])
    }
}

/// Tape handles for a [`FeatureBundle`].
#[derive(Debug, Clone, Copy)]
pub struct BundleVars {
    pub text: Var,
    pub image: Var,
    pub expert: Var,
    pub mention: Option<Var>,
}

impl BundleVars {
    pub fn record(tape: &mut Tape, bundle: &FeatureBundle, trainable: bool) -> Result<Self> {
        let mut put = |t: Tensor2| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t)
            }
        };
        let text = put(bundle.text.clone());
        let image = put(bundle.image.clone());
        let expert = put(Tensor2::row_vector(bundle.expert.clone())?);
        let mention = match &bundle.mention {
            Some(m) => Some(put(Tensor2::row_vector(m.clone())?)),
            None => None,
        };
        Ok(BundleVars {
            text,
            image,
            expert,
            mention,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FusedVars {
    pub f_text: Var,
    pub f_image: Var,
    pub fused: Var,
}

/// Cross-attention of a 1×d query over an L×d sequence, on the tape.
pub fn cross_attention_on_tape(
    tape: &mut Tape,
    query: Var,
    seq: Var,
    params: &AttentionParams,
    vars: &ParamVars,
    branch: Branch,
) -> Result<Var> {
    let d = params.dim();
    let (qr, qc) = tape.value(query).shape();
    let (rows, cols) = tape.value(seq).shape();
    if qr != 1 || qc != d || cols != d {
        return Err(Error::Dimension(format!(
            "cross-attention with hidden size {d} given a {qr}x{qc} query and a {rows}x{cols} sequence"
        )));
    }
    if rows == 0 {
        return Err(Error::Dimension("cross-attention over an empty sequence".into()));
    }
    let scale = 1.0 / (params.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(params.heads());
    for head in 0..params.heads() {
        let q = tape.matmul(query, vars.weight(branch, head, Projection::Query))?;
        let k = tape.matmul(seq, vars.weight(branch, head, Projection::Key))?;
        let v = tape.matmul(seq, vars.weight(branch, head, Projection::Value))?;
        let kt = tape.transpose(k);
        let raw = tape.matmul(q, kt)?;
        let scores = tape.scale(raw, scale);
        let weights = tape.softmax_rows(scores)?;
        heads.push(tape.matmul(weights, v)?);
    }
    tape.concat_cols(&heads)
}

/// Full fusion forward pass on the tape.
pub fn forward_on_tape(
    tape: &mut Tape,
    bundle: &BundleVars,
    params: &AttentionParams,
    vars: &ParamVars,
) -> Result<FusedVars> {
    let f_text = cross_attention_on_tape(tape, bundle.expert, bundle.text, params, vars, Branch::Text)?;
    let f_image =
        cross_attention_on_tape(tape, bundle.expert, bundle.image, params, vars, Branch::Image)?;
    let partial = tape.add(f_image, bundle.expert)?;
    let mut fused = tape.add(partial, f_text)?;
    if let Some(proj) = vars.mention_projection() {
        let m = bundle.mention.ok_or_else(|| {
            Error::Configuration("fuse_mention is on but the sample has no mention feature".into())
        })?;
        let pm = tape.matmul(m, proj)?;
        fused = tape.add(fused, pm)?;
    }
    Ok(FusedVars {
        f_text,
        f_image,
        fused,
    })
}

/// Cross-attention of `query` over `seq` for one branch.
pub fn cross_attention(
    query: &[f64],
    seq: &Tensor2,
    params: &AttentionParams,
    branch: Branch,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let q = tape.constant(Tensor2::row_vector(query.to_vec())?);
    let s = tape.constant(seq.clone());
    let out = cross_attention_on_tape(&mut tape, q, s, params, &vars, branch)?;
    Ok(tape.value(out).data().to_vec())
}

/// Elementwise sum of the three branch outputs.
pub fn fuse(f_text: &[f64], f_image: &[f64], f_expert: &[f64]) -> Result<Vec<f64>> {
    if f_text.len() != f_image.len() || f_text.len() != f_expert.len() {
        return Err(Error::Dimension(format!(
            "fusing vectors of dims {}, {}, {}",
            f_text.len(),
            f_image.len(),
            f_expert.len()
        )));
    }
    Ok(f_image
        .iter()
        .zip(f_expert)
        .zip(f_text)
        .map(|((v, c), t)| v + c + t)
        .collect())
}

/// Evaluate the fusion model on one bundle.
pub fn forward(bundle: &FeatureBundle, params: &AttentionParams) -> Result<FusedFeatures> {
    bundle.validate()?;
    if bundle.dim() != params.dim() {
        return Err(Error::Dimension(format!(
            "bundle has dim {}, model has hidden size {}",
            bundle.dim(),
            params.dim()
        )));
    }
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, false);
    let bv = BundleVars::record(&mut tape, bundle, false)?;
    let out = forward_on_tape(&mut tape, &bv, params, &vars)?;
    Ok(FusedFeatures {
        f_text: tape.value(out.f_text).data().to_vec(),
        f_image: tape.value(out.f_image).data().to_vec(),
        fused: tape.value(out.fused).data().to_vec(),
    })
}

/// Xavier-uniform parameters without the mention projection.
pub fn init_params(seed: u64, d: usize, h: usize) -> Result<AttentionParams> {
    AttentionParams::init(seed, d, h, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_difference, max_relative_error};

    fn random_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor2 {
        Tensor2::from_raw(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn random_bundle(rng: &mut ChaCha8Rng, d: usize, lt: usize, lv: usize) -> FeatureBundle {
        FeatureBundle {
            text: random_tensor(rng, lt, d),
            image: random_tensor(rng, lv, d),
            expert: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            mention: Some((0..d).map(|_| rng.random_range(-1.0..1.0)).collect()),
        }
    }

    /// Per-head loops over plain slices; shares nothing with the tape path.
    fn reference_attention(q: &[f64], seq: &Tensor2, p: &AttentionParams, branch: Branch) -> Vec<f64> {
        let d = p.dim();
        let dk = p.head_dim();
        let project = |x: &[f64], w: &Tensor2| -> Vec<f64> {
            (0..dk).map(|j| (0..d).map(|i| x[i] * w.get(i, j)).sum()).collect()
        };
        let mut out = Vec::new();
        for head in 0..p.heads() {
            let wq = p.weight(branch, head, Projection::Query);
            let wk = p.weight(branch, head, Projection::Key);
            let wv = p.weight(branch, head, Projection::Value);
            let qh = project(q, wq);
            let scores: Vec<f64> = (0..seq.rows())
                .map(|r| {
                    let kh = project(seq.row(r), wk);
                    qh.iter().zip(&kh).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut acc = vec![0.0; dk];
            for (r, er) in e.iter().enumerate() {
                let vh = project(seq.row(r), wv);
                for j in 0..dk {
                    acc[j] += er / z * vh[j];
                }
            }
            out.extend(acc);
        }
        out
    }

    #[test]
    fn expert_concat_examples() {
        let c = expert_concat("A man and a woman on the red carpet", "Donald Trump");
        assert_eq!(c, "[CLS]A man and a woman on the red carpet[SEP]Donald Trump");
        assert_eq!(expert_concat("", ""), "[CLS][SEP]");
        let (a, b) = ("caption ü", "who");
        assert_eq!(expert_concat(a, b).len(), a.len() + b.len() + 10);
        assert_eq!(ExpertInfo::new(a, b).assembled, expert_concat(a, b));
    }

    #[test]
    fn single_row_attention_is_projected_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_params(5, 8, 2).unwrap();
        let row = random_tensor(&mut rng, 1, 8);
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = cross_attention(&q, &row, &p, Branch::Text).unwrap();
        let mut expected = Vec::new();
        for head in 0..2 {
            expected.extend(row.matmul(p.weight(Branch::Text, head, Projection::Value)).unwrap().into_data());
        }
        assert_eq!(out, expected);
    }

    #[test]
    fn identical_rows_match_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(6, 8, 4).unwrap();
        let row = random_tensor(&mut rng, 1, 8);
        let stacked = Tensor2::from_rows(&vec![row.row(0).to_vec(); 3]).unwrap();
        let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = cross_attention(&q, &row, &p, Branch::Image).unwrap();
        let b = cross_attention(&q, &stacked, &p, Branch::Image).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..10 {
            let p = init_params(seed, 8, 2).unwrap();
            let seq = random_tensor(&mut rng, 3, 8);
            let q: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            for branch in [Branch::Text, Branch::Image] {
                let got = cross_attention(&q, &seq, &p, branch).unwrap();
                let want = reference_attention(&q, &seq, &p, branch);
                for (x, y) in got.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn attention_output_in_convex_hull_per_coordinate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = init_params(1, 16, 4).unwrap();
        let seq = random_tensor(&mut rng, 5, 16);
        let q: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
        let out = cross_attention(&q, &seq, &p, Branch::Text).unwrap();
        let dk = p.head_dim();
        for head in 0..4 {
            let values = seq.matmul(p.weight(Branch::Text, head, Projection::Value)).unwrap();
            for j in 0..dk {
                let col: Vec<f64> = (0..5).map(|r| values.get(r, j)).collect();
                let lo = col.iter().cloned().fold(f64::MAX, f64::min);
                let hi = col.iter().cloned().fold(f64::MIN, f64::max);
                let x = out[head * dk + j];
                assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn fuse_examples() {
        assert_eq!(fuse(&[0.0; 3], &[0.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        let e = |i: usize| {
            let mut v = vec![0.0; 3];
            v[i] = 1.0;
            v
        };
        assert_eq!(fuse(&e(0), &e(1), &e(2)).unwrap(), vec![1.0; 3]);
        let (a, b, c) = (vec![0.1, -2.0], vec![3.5, 0.25], vec![-1.0, 7.0]);
        assert_eq!(fuse(&a, &b, &c).unwrap(), fuse(&c, &a, &b).unwrap());
        assert!(fuse(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn zero_inputs_fuse_to_zero() {
        let p = init_params(2, 8, 2).unwrap();
        let bundle = FeatureBundle {
            text: Tensor2::zeros(1, 8),
            image: Tensor2::zeros(1, 8),
            expert: vec![0.0; 8],
            mention: None,
        };
        assert_eq!(forward(&bundle, &p).unwrap().fused, vec![0.0; 8]);
    }

    #[test]
    fn fused_is_exact_sum_of_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = init_params(3, 16, 4).unwrap();
        for _ in 0..20 {
            let bundle = random_bundle(&mut rng, 16, 3, 2);
            let out = forward(&bundle, &p).unwrap();
            for i in 0..16 {
                assert_eq!(out.fused[i], out.f_image[i] + bundle.expert[i] + out.f_text[i]);
            }
        }
    }

    #[test]
    fn mention_is_ignored_unless_enabled() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let p = init_params(3, 8, 2).unwrap();
        let mut bundle = random_bundle(&mut rng, 8, 2, 2);
        let a = forward(&bundle, &p).unwrap();
        bundle.mention = Some(vec![5.0; 8]);
        assert_eq!(a, forward(&bundle, &p).unwrap());

        let pm = AttentionParams::init(3, 8, 2, true).unwrap();
        let with = forward(&bundle, &pm).unwrap();
        let proj = Tensor2::row_vector(vec![5.0; 8]).unwrap().matmul(pm.mention_projection().unwrap()).unwrap();
        for i in 0..8 {
            let base = with.f_image[i] + bundle.expert[i] + with.f_text[i];
            assert!((with.fused[i] - base - proj.data()[i]).abs() < 1e-12);
        }
        bundle.mention = None;
        assert!(matches!(forward(&bundle, &pm), Err(Error::Configuration(_))));
    }

    #[test]
    fn init_is_deterministic_with_expected_shapes_and_bounds() {
        let a = init_params(42, 512, 8).unwrap();
        let b = init_params(42, 512, 8).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.params().len(), 2 * 8 * 3);
        let bound = (6.0f64 / (512.0 + 64.0)).sqrt();
        for p in a.params() {
            assert_eq!(p.value.shape(), (512, 64));
            assert!(p.value.data().iter().all(|x| x.abs() <= bound));
        }
        assert_ne!(a, init_params(43, 512, 8).unwrap());
    }

    #[test]
    fn indivisible_heads_rejected() {
        assert!(matches!(init_params(0, 10, 3), Err(Error::Configuration(_))));
        assert!(matches!(AttentionParams::identity(10, 4, false), Err(Error::Configuration(_))));
    }

    #[test]
    fn identity_params_average_rows_per_block() {
        let p = AttentionParams::identity(4, 2, false).unwrap();
        let seq = Tensor2::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let out = cross_attention(&[0.5, 0.5, 0.5, 0.5], &seq, &p, Branch::Text).unwrap();
        assert_eq!(out, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn from_params_validates() {
        let p = init_params(1, 8, 2).unwrap();
        let named = p.clone().into_params();
        assert_eq!(AttentionParams::from_params(8, 2, false, named.clone()).unwrap(), p);
        let mut missing = named.clone();
        missing.remove(0);
        assert!(matches!(
            AttentionParams::from_params(8, 2, false, missing),
            Err(Error::Checkpoint(m)) if m.contains("image.head000")
        ));
        assert!(matches!(
            AttentionParams::from_params(16, 4, false, named),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn squared_norm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for (d, h) in [(8, 1), (8, 2), (16, 4)] {
            let params = AttentionParams::init(rng.random(), d, h, false).unwrap();
            let bundle = random_bundle(&mut rng, d, 3, 2);
            let loss_of = |p: &AttentionParams| -> f64 {
                forward(&bundle, p).unwrap().fused.iter().map(|x| x * x).sum()
            };
            let mut tape = Tape::new();
            let pv = params.record(&mut tape, true);
            let bv = BundleVars::record(&mut tape, &bundle, false).unwrap();
            let out = forward_on_tape(&mut tape, &bv, &params, &pv).unwrap();
            let sq = tape.mul(out.fused, out.fused).unwrap();
            let loss = tape.sum(sq);
            let grads = tape.backward(loss).unwrap();
            for (i, var) in pv.vars().iter().enumerate() {
                let numeric = finite_difference(&params.params()[i].value, 1e-5, |w| {
                    let mut probe = params.clone();
                    probe.params_mut()[i].value = w.clone();
                    loss_of(&probe)
                });
                let err = max_relative_error(&grads.get(*var), &numeric, 1e-6);
                assert!(err < 1e-4, "d={d} h={h} {}: {err}", params.params()[i].name);
            }
        }
    }
}
