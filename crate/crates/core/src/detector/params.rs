//! Detector parameters and the per-piece forward passes.
//!
//! Shapes, with `d` the token width, `g` the graph width:
//!
//! | block    | shape            |
//! |----------|------------------|
//! | tok      | vocab × d        |
//! | tag_w1   | h_tag × 3d       |
//! | tag_w2   | 3 × h_tag        |
//! | w3       | d × (d + g)      |
//! | w4       | h_cls × d        |
//! | w5       | h_cls            |
//!
//! The tagger reads a one-token window on each side so that B and I can be
//! told apart.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Bio;
use crate::error::{Error, Result};
use crate::kge::gradcheck::FlatParams;
use crate::linalg::{axpy, Matrix};
use crate::num::{relu, sigmoid, softmax, Scalar};

pub const EPS: f64 = 1e-12;
pub const UNK: usize = 0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from(vec!["<unk>".to_string()])
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    fn push(&mut self, token: &str) -> bool {
        if self.index.contains_key(token) {
            return false;
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        true
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub d_tok: usize,
    pub hidden_tag: usize,
    pub hidden_cls: usize,
    pub dropout: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            d_tok: 16,
            hidden_tag: 16,
            hidden_cls: 16,
            dropout: 0.1,
            lambda: 1.0,
            learning_rate: 0.1,
            epochs: 50,
            batch_size: 16,
            threshold: 0.5,
            seed: 0,
        }
    }
}

/// Dropout masks are drawn only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub(crate) fn mask<T: Scalar>(&mut self, n: usize, rate: f64) -> Vec<T> {
        match self {
            Mode::Train(rng) if rate > 0.0 => {
                let keep = T::of(1.0 / (1.0 - rate));
                (0..n)
                    .map(|_| if rng.gen_bool(rate) { T::zero() } else { keep })
                    .collect()
            }
            _ => vec![T::one(); n],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DetectorParams<T> {
    pub vocab: Vocab,
    pub d_tok: usize,
    pub d_graph: usize,
    pub tok: Vec<T>,
    pub tag_w1: Matrix<T>,
    pub tag_b1: Vec<T>,
    pub tag_w2: Matrix<T>,
    pub tag_b2: Vec<T>,
    pub w3: Matrix<T>,
    pub w4: Matrix<T>,
    pub b3: Vec<T>,
    pub w5: Vec<T>,
    pub b4: T,
    pub empty: Vec<T>,
    pub dropout: f64,
    pub lambda: f64,
}

fn glorot(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Scalar> DetectorParams<T> {
    pub fn init(vocab: Vocab, d_graph: usize, cfg: &DetectorConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if cfg.d_tok == 0 || cfg.hidden_tag == 0 || cfg.hidden_cls == 0 || d_graph == 0 {
            return Err(Error::InvalidArgument("detector widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.dropout) {
            return Err(Error::InvalidArgument(format!("dropout {} outside [0, 1)", cfg.dropout)));
        }
        let d = cfg.d_tok;
        let tb = 1.0 / (d as f64).sqrt();
        let tok = (0..vocab.len() * d).map(|_| T::of(rng.gen_range(-tb..tb))).collect();
        let tag_w1 = Matrix::uniform(cfg.hidden_tag, 3 * d, glorot(3 * d, cfg.hidden_tag), rng);
        let tag_w2 = Matrix::uniform(3, cfg.hidden_tag, glorot(cfg.hidden_tag, 3), rng);
        let w3 = Matrix::uniform(d, d + d_graph, glorot(d + d_graph, d), rng);
        let w4 = Matrix::uniform(cfg.hidden_cls, d, glorot(d, cfg.hidden_cls), rng);
        let b5 = glorot(cfg.hidden_cls, 1);
        let w5 = (0..cfg.hidden_cls).map(|_| T::of(rng.gen_range(-b5..b5))).collect();
        let empty = (0..d).map(|_| T::of(rng.gen_range(-tb..tb))).collect();
        Ok(DetectorParams {
            vocab,
            d_tok: d,
            d_graph,
            tok,
            tag_w1,
            tag_b1: vec![T::zero(); cfg.hidden_tag],
            tag_w2,
            tag_b2: vec![T::zero(); 3],
            w3,
            w4,
            b3: vec![T::zero(); cfg.hidden_cls],
            w5,
            b4: T::zero(),
            empty,
            dropout: cfg.dropout,
            lambda: cfg.lambda,
        })
    }

    /// Adds unseen tokens in the given order with fresh random rows.
    pub fn grow_vocab<'a>(&mut self, tokens: impl IntoIterator<Item = &'a str>, rng: &mut ChaCha8Rng) -> usize {
        let b = 1.0 / (self.d_tok as f64).sqrt();
        let mut added = 0;
        for t in tokens {
            if self.vocab.push(t) {
                self.tok.extend((0..self.d_tok).map(|_| T::of(rng.gen_range(-b..b))));
                added += 1;
            }
        }
        added
    }

    pub fn token_row(&self, id: usize) -> &[T] {
        &self.tok[id * self.d_tok..(id + 1) * self.d_tok]
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id(t)).collect()
    }

    fn window(&self, ids: &[usize], i: usize) -> Vec<T> {
        let d = self.d_tok;
        let mut x = vec![T::zero(); 3 * d];
        if i > 0 {
            x[..d].copy_from_slice(self.token_row(ids[i - 1]));
        }
        x[d..2 * d].copy_from_slice(self.token_row(ids[i]));
        if i + 1 < ids.len() {
            x[2 * d..].copy_from_slice(self.token_row(ids[i + 1]));
        }
        x
    }

    /// BIO probabilities for each token of one post.
    pub fn tag_forward(&self, ids: &[usize], mode: &mut Mode) -> TagCache<T> {
        let mut cache = TagCache::default();
        for i in 0..ids.len() {
            let x = self.window(ids, i);
            let mut pre = self.tag_w1.matvec(&x);
            axpy(&mut pre, T::one(), &self.tag_b1);
            let mask = mode.mask::<T>(pre.len(), self.dropout);
            let h: Vec<T> = pre.iter().zip(&mask).map(|(&p, &m)| relu(p) * m).collect();
            let mut z = self.tag_w2.matvec(&h);
            axpy(&mut z, T::one(), &self.tag_b2);
            let p = softmax(&z);
            cache.probs.push([p[0], p[1], p[2]]);
            cache.x.push(x);
            cache.pre.push(pre);
            cache.mask.push(mask);
            cache.h.push(h);
        }
        cache
    }

    /// Evaluation-mode tagger over raw tokens.
    pub fn tagger_forward(&self, tokens: &[String]) -> Result<Vec<[T; 3]>> {
        if tokens.is_empty() {
            return Err(Error::Empty("token list".into()));
        }
        Ok(self.tag_forward(&self.ids(tokens), &mut Mode::Eval).probs)
    }

    /// Mean token embedding over a span.
    pub fn span_embedding(&self, ids: &[usize]) -> Vec<T> {
        let mut out = vec![T::zero(); self.d_tok];
        if ids.is_empty() {
            return out;
        }
        for &id in ids {
            axpy(&mut out, T::one(), self.token_row(id));
        }
        let inv = T::one() / T::of(ids.len() as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        out
    }

    /// Residual fusion with a caller-supplied dropout mask. Returns the fused
    /// vector and the pre-activation.
    pub fn fuse_with(&self, e_ner: &[T], e_graph: &[T], mask: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        if e_ner.len() != self.d_tok {
            return Err(Error::DimensionMismatch { expected: self.d_tok, got: e_ner.len() });
        }
        if e_graph.len() != self.d_graph {
            return Err(Error::DimensionMismatch { expected: self.d_graph, got: e_graph.len() });
        }
        let u = self.w3.matvec_concat(e_ner, e_graph);
        let out = e_ner
            .iter()
            .zip(&u)
            .zip(mask)
            .map(|((&e, &ui), &m)| e + relu(ui) * m)
            .collect();
        Ok((out, u))
    }

    pub fn fuse(&self, e_ner: &[T], e_graph: &[T]) -> Result<Vec<T>> {
        let ones = vec![T::one(); self.d_tok];
        self.fuse_with(e_ner, e_graph, &ones).map(|(f, _)| f)
    }

    /// Importance-weighted mean of the fused vectors, or the empty-user
    /// vector when there are none.
    pub fn pool(&self, fused: &[Vec<T>], weights: &[T]) -> (Vec<T>, T) {
        if fused.is_empty() {
            return (self.empty.clone(), T::zero());
        }
        let sum = weights.iter().fold(T::zero(), |a, &w| a + w);
        let denom = sum.max(T::of(EPS));
        let mut pooled = vec![T::zero(); self.d_tok];
        for (f, &w) in fused.iter().zip(weights) {
            axpy(&mut pooled, w / denom, f);
        }
        (pooled, denom)
    }

    /// Classifier head on a pooled vector; returns (pre-activation, mask, logit).
    pub fn head(&self, pooled: &[T], mode: &mut Mode) -> (Vec<T>, Vec<T>, T) {
        let mut pre = self.w4.matvec(pooled);
        axpy(&mut pre, T::one(), &self.b3);
        let mask = mode.mask::<T>(pre.len(), self.dropout);
        let z = pre
            .iter()
            .zip(&mask)
            .zip(&self.w5)
            .fold(self.b4, |acc, ((&p, &m), &w)| acc + w * relu(p) * m);
        (pre, mask, z)
    }

    /// Evaluation-mode probability for already fused entity vectors.
    pub fn classify(&self, fused: &[Vec<T>], weights: &[T]) -> Result<T> {
        if fused.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: fused.len(), got: weights.len() });
        }
        if let Some(f) = fused.iter().find(|f| f.len() != self.d_tok) {
            return Err(Error::DimensionMismatch { expected: self.d_tok, got: f.len() });
        }
        let (pooled, _) = self.pool(fused, weights);
        let (_, _, z) = self.head(&pooled, &mut Mode::Eval);
        Ok(sigmoid(z))
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn blocks(&self) -> Vec<&[T]> {
        vec![
            &self.tok,
            self.tag_w1.data(),
            &self.tag_b1,
            self.tag_w2.data(),
            &self.tag_b2,
            self.w3.data(),
            self.w4.data(),
            &self.b3,
            &self.w5,
            std::slice::from_ref(&self.b4),
            &self.empty,
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        vec![
            &mut self.tok,
            self.tag_w1.data_mut(),
            &mut self.tag_b1,
            self.tag_w2.data_mut(),
            &mut self.tag_b2,
            self.w3.data_mut(),
            self.w4.data_mut(),
            &mut self.b3,
            &mut self.w5,
            std::slice::from_mut(&mut self.b4),
            &mut self.empty,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (k, b) in self.blocks().iter().enumerate() {
            if i < b.len() {
                return (k, i);
            }
            i -= b.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, i: usize) -> T {
        let (k, j) = self.locate(i);
        self.blocks()[k][j]
    }

    pub fn set_param(&mut self, i: usize, v: T) {
        let (k, j) = self.locate(i);
        self.blocks_mut()[k][j] = v;
    }

    /// `self -= lr · grad`
    pub fn apply(&mut self, lr: T, grad: &DetectorGrad<T>) {
        let d = self.d_tok;
        for (&id, g) in &grad.tok {
            axpy(&mut self.tok[id * d..(id + 1) * d], -lr, g);
        }
        let dense = grad.dense_blocks();
        for (p, g) in self.blocks_mut().into_iter().skip(1).zip(dense) {
            axpy(p, -lr, g);
        }
    }
}

impl FlatParams for DetectorParams<f64> {
    fn num_params(&self) -> usize {
        DetectorParams::num_params(self)
    }
    fn param(&self, i: usize) -> f64 {
        DetectorParams::param(self, i)
    }
    fn set_param(&mut self, i: usize, v: f64) {
        DetectorParams::set_param(self, i, v)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TagCache<T> {
    pub probs: Vec<[T; 3]>,
    x: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    mask: Vec<Vec<T>>,
    h: Vec<Vec<T>>,
}

/// Forward state of one user through fusion, pooling and the head.
#[derive(Clone, Debug)]
pub struct DepCache<T> {
    pub e_ner: Vec<Vec<T>>,
    pub u: Vec<Vec<T>>,
    pub fuse_mask: Vec<Vec<T>>,
    pub denom: T,
    pub pooled: Vec<T>,
    pub pre: Vec<T>,
    pub head_mask: Vec<T>,
    pub logit: T,
    pub prob: T,
}

/// Gradient with the same layout as [`DetectorParams`]; token rows are sparse.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorGrad<T> {
    pub tok: BTreeMap<usize, Vec<T>>,
    pub tag_w1: Matrix<T>,
    pub tag_b1: Vec<T>,
    pub tag_w2: Matrix<T>,
    pub tag_b2: Vec<T>,
    pub w3: Matrix<T>,
    pub w4: Matrix<T>,
    pub b3: Vec<T>,
    pub w5: Vec<T>,
    pub b4: T,
    pub empty: Vec<T>,
}

impl<T: Scalar> DetectorGrad<T> {
    pub fn zeros(p: &DetectorParams<T>) -> Self {
        DetectorGrad {
            tok: BTreeMap::new(),
            tag_w1: Matrix::zeros(p.tag_w1.rows(), p.tag_w1.cols()),
            tag_b1: vec![T::zero(); p.tag_b1.len()],
            tag_w2: Matrix::zeros(p.tag_w2.rows(), p.tag_w2.cols()),
            tag_b2: vec![T::zero(); 3],
            w3: Matrix::zeros(p.w3.rows(), p.w3.cols()),
            w4: Matrix::zeros(p.w4.rows(), p.w4.cols()),
            b3: vec![T::zero(); p.b3.len()],
            w5: vec![T::zero(); p.w5.len()],
            b4: T::zero(),
            empty: vec![T::zero(); p.empty.len()],
        }
    }

    pub fn tok_row(&mut self, id: usize, d: usize) -> &mut Vec<T> {
        self.tok.entry(id).or_insert_with(|| vec![T::zero(); d])
    }

    fn dense_blocks(&self) -> Vec<&[T]> {
        vec![
            self.tag_w1.data(),
            &self.tag_b1,
            self.tag_w2.data(),
            &self.tag_b2,
            self.w3.data(),
            self.w4.data(),
            &self.b3,
            &self.w5,
            std::slice::from_ref(&self.b4),
            &self.empty,
        ]
    }

    /// Flattened in parameter order, token rows expanded to the full table.
    pub fn to_flat(&self, p: &DetectorParams<T>) -> Vec<f64> {
        let mut out = vec![0.0; p.tok.len()];
        for (&id, g) in &self.tok {
            for (k, v) in g.iter().enumerate() {
                out[id * p.d_tok + k] = v.f64();
            }
        }
        for b in self.dense_blocks() {
            out.extend(b.iter().map(|v| v.f64()));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tok.values().all(|r| r.iter().all(|v| v.is_finite()))
            && self.dense_blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Backward through one post of the tagger given `∂L/∂logits` per token.
    pub(crate) fn tag_backward(&mut self, p: &DetectorParams<T>, ids: &[usize], cache: &TagCache<T>, dlogits: &[[T; 3]]) {
        let d = p.d_tok;
        for i in 0..ids.len() {
            let dz = &dlogits[i];
            self.tag_w2.add_outer(T::one(), dz, &cache.h[i]);
            axpy(&mut self.tag_b2, T::one(), dz);
            let mut dh = p.tag_w2.matvec_t(dz);
            for (k, g) in dh.iter_mut().enumerate() {
                if cache.pre[i][k] <= T::zero() {
                    *g = T::zero();
                } else {
                    *g *= cache.mask[i][k];
                }
            }
            self.tag_w1.add_outer(T::one(), &dh, &cache.x[i]);
            axpy(&mut self.tag_b1, T::one(), &dh);
            let dx = p.tag_w1.matvec_t(&dh);
            if i > 0 {
                axpy(self.tok_row(ids[i - 1], d), T::one(), &dx[..d]);
            }
            axpy(self.tok_row(ids[i], d), T::one(), &dx[d..2 * d]);
            if i + 1 < ids.len() {
                axpy(self.tok_row(ids[i + 1], d), T::one(), &dx[2 * d..]);
            }
        }
    }
}

/// Mean token cross-entropy against gold tags, probabilities clamped at [`EPS`].
pub fn ner_loss<T: Scalar>(probs: &[[T; 3]], gold: &[Bio]) -> Result<T> {
    if probs.len() != gold.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: gold.len() });
    }
    if probs.is_empty() {
        return Err(Error::Empty("tag sequence".into()));
    }
    let eps = T::of(EPS);
    let sum = probs
        .iter()
        .zip(gold)
        .fold(T::zero(), |acc, (p, g)| acc - p[g.index()].max(eps).ln());
    Ok(sum / T::of(probs.len() as f64))
}

/// Binary cross-entropy of one prediction with [`EPS`] clamping.
pub fn bce<T: Scalar>(prob: T, label: bool) -> T {
    let eps = T::of(EPS);
    if label {
        -prob.max(eps).ln()
    } else {
        -(T::one() - prob).max(eps).ln()
    }
}

pub fn detection_loss<T: Scalar>(probs: &[T], labels: &[bool]) -> Result<T> {
    if probs.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: probs.len(), got: labels.len() });
    }
    if probs.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let sum = probs.iter().zip(labels).fold(T::zero(), |a, (&p, &y)| a + bce(p, y));
    Ok(sum / T::of(probs.len() as f64))
}
