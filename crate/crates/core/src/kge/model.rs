//! Trainable graph model: embeddings, ConvE scorer and attention encoder,
//! with a shared weighted-logistic loss used by pretraining and refinement.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvEGeometry, ConvEParams, EmbeddingTable};
use crate::attention::{self, AttentionCache, AttentionParams};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, RelationKind, TripletKey};
use crate::linalg::axpy;
use crate::num::{log_sigmoid, sigmoid, Scalar};

/// How entity vectors are fed to the scorer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoder {
    /// raw table rows
    Plain,
    /// one attention-weighted aggregation step over the graph
    #[default]
    Attention,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Model<T> {
    pub emb: EmbeddingTable<T>,
    pub conve: ConvEParams<T>,
    pub attn: AttentionParams<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init<R: Rng>(kg: &KnowledgeGraph, geometry: ConvEGeometry, rng: &mut R) -> Result<Self> {
        geometry.validate()?;
        let emb = EmbeddingTable::init(kg, geometry.d, rng);
        let conve = ConvEParams::init(geometry, rng)?;
        let attn = AttentionParams::init(geometry.d, rng);
        Ok(Model { emb, conve, attn })
    }

    pub fn dim(&self) -> usize {
        self.emb.dim()
    }

    pub fn is_finite(&self) -> bool {
        self.emb.is_finite() && self.conve.is_finite() && self.attn.is_finite()
    }

    /// Entity vector as seen by the scorer.
    pub fn encode(&self, kg: &KnowledgeGraph, encoder: Encoder, slot: usize) -> Result<Vec<T>> {
        Ok(Encoding::build(self, kg, encoder, slot)?.out)
    }

    /// The head goes through the encoder; the tail is the raw table row, so
    /// the final dot product can take either sign.
    pub fn score(&self, kg: &KnowledgeGraph, encoder: Encoder, key: &TripletKey) -> Result<T> {
        let (h, t) = self.slots(key)?;
        let hv = self.encode(kg, encoder, h)?;
        self.conve.score(&hv, self.emb.relation(key.relation), self.emb.entity_at(t))
    }

    pub fn slots(&self, key: &TripletKey) -> Result<(usize, usize)> {
        let h = self
            .emb
            .slot(&key.head)
            .ok_or_else(|| Error::UnknownEntity(key.head.to_string()))?;
        let t = self
            .emb
            .slot(&key.tail)
            .ok_or_else(|| Error::UnknownEntity(key.tail.to_string()))?;
        Ok((h, t))
    }

    /// `self -= lr · grad`
    pub fn apply(&mut self, lr: T, grad: &ModelGrad<T>) {
        for (&slot, g) in &grad.entities {
            axpy(self.emb.entity_at_mut(slot), -lr, g);
        }
        for r in RelationKind::ALL {
            axpy(self.emb.relation_mut(r), -lr, &grad.relations[r.index()]);
        }
        self.conve.axpy(-lr, &grad.conve);
        self.attn.axpy(-lr, &grad.attn);
    }

    pub fn num_params(&self) -> usize {
        self.emb.flat_len() + self.conve.flat_len() + self.attn.flat_len()
    }

    pub fn param(&self, i: usize) -> T {
        let a = self.emb.flat_len();
        let b = a + self.conve.flat_len();
        if i < a {
            self.emb.flat_get(i)
        } else if i < b {
            self.conve.flat_get(i - a)
        } else {
            self.attn.flat_get(i - b)
        }
    }

    pub fn set_param(&mut self, i: usize, v: T) {
        let a = self.emb.flat_len();
        let b = a + self.conve.flat_len();
        if i < a {
            self.emb.flat_set(i, v)
        } else if i < b {
            self.conve.flat_set(i - a, v)
        } else {
            self.attn.flat_set(i - b, v)
        }
    }
}

/// Sparse-in-entities gradient of a [`Model`].
#[derive(Clone, Debug)]
pub struct ModelGrad<T> {
    pub entities: BTreeMap<usize, Vec<T>>,
    pub relations: Vec<Vec<T>>,
    pub conve: ConvEParams<T>,
    pub attn: AttentionParams<T>,
}

impl<T: Scalar> ModelGrad<T> {
    pub fn zeros(model: &Model<T>) -> Self {
        let d = model.dim();
        ModelGrad {
            entities: BTreeMap::new(),
            relations: vec![vec![T::zero(); d]; RelationKind::ALL.len()],
            conve: ConvEParams::zeros(model.conve.geometry),
            attn: model.attn.zeros_like(),
        }
    }

    fn entity(&mut self, slot: usize, d: usize) -> &mut Vec<T> {
        self.entities.entry(slot).or_insert_with(|| vec![T::zero(); d])
    }

    /// Dense vector in the same order as [`Model::param`].
    pub fn to_flat(&self, model: &Model<T>) -> Vec<T> {
        let d = model.dim();
        let n_ent = model.emb.len();
        let mut out = vec![T::zero(); model.num_params()];
        for (&slot, g) in &self.entities {
            out[slot * d..(slot + 1) * d].copy_from_slice(g);
        }
        for (r, g) in self.relations.iter().enumerate() {
            let at = (n_ent + r) * d;
            out[at..at + d].copy_from_slice(g);
        }
        let mut at = model.emb.flat_len();
        for i in 0..self.conve.flat_len() {
            out[at + i] = self.conve.flat_get(i);
        }
        at += self.conve.flat_len();
        for i in 0..self.attn.flat_len() {
            out[at + i] = self.attn.flat_get(i);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.entities.values().chain(&self.relations).all(|v| v.iter().all(|x| x.is_finite()))
            && self.conve.is_finite()
            && self.attn.is_finite()
    }
}

struct Encoding<T> {
    out: Vec<T>,
    slots: Vec<(RelationKind, Vec<usize>)>,
    cache: Option<AttentionCache<T>>,
}

impl<T: Scalar> Encoding<T> {
    fn build(model: &Model<T>, kg: &KnowledgeGraph, encoder: Encoder, slot: usize) -> Result<Self> {
        let hv = model.emb.entity_at(slot);
        if encoder == Encoder::Plain {
            return Ok(Encoding {
                out: hv.to_vec(),
                slots: Vec::new(),
                cache: None,
            });
        }
        let slots = attention::neighborhood_slots(kg, &model.emb, model.emb.id_at(slot))?;
        let groups = attention::groups_from_slots(&model.emb, &slots);
        Ok(match attention::forward(hv, &groups, &model.attn) {
            Some((out, cache)) => Encoding {
                out,
                slots,
                cache: Some(cache),
            },
            None => Encoding {
                out: hv.to_vec(),
                slots: Vec::new(),
                cache: None,
            },
        })
    }
}

/// One term of a weighted logistic loss:
/// `weight · −ln σ(f)` for positives, `weight · −ln σ(−f)` for negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm<T> {
    pub key: TripletKey,
    pub positive: bool,
    pub weight: T,
}

impl<T: Scalar> LossTerm<T> {
    pub fn positive(key: TripletKey) -> Self {
        LossTerm {
            key,
            positive: true,
            weight: T::one(),
        }
    }

    pub fn negative(key: TripletKey, weight: T) -> Self {
        LossTerm {
            key,
            positive: false,
            weight,
        }
    }
}

/// `scale · Σ weight · −ln σ(±f)` over `terms`.
pub fn logistic_loss<T: Scalar>(
    model: &Model<T>,
    kg: &KnowledgeGraph,
    encoder: Encoder,
    terms: &[LossTerm<T>],
    scale: T,
) -> Result<T> {
    let mut cache: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    let mut total = T::zero();
    for term in terms {
        let (h, t) = model.slots(&term.key)?;
        if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(h) {
            e.insert(model.encode(kg, encoder, h)?);
        }
        let f = model
            .conve
            .score(&cache[&h], model.emb.relation(term.key.relation), model.emb.entity_at(t))?;
        let sign = if term.positive { f } else { -f };
        total += term.weight * -log_sigmoid(sign);
    }
    Ok(scale * total)
}

/// Value and gradient of [`logistic_loss`].
pub fn logistic_loss_grad<T: Scalar>(
    model: &Model<T>,
    kg: &KnowledgeGraph,
    encoder: Encoder,
    terms: &[LossTerm<T>],
    scale: T,
) -> Result<(T, ModelGrad<T>)> {
    let d = model.dim();
    let mut enc: BTreeMap<usize, Encoding<T>> = BTreeMap::new();
    for term in terms {
        let (h, _) = model.slots(&term.key)?;
        if let std::collections::btree_map::Entry::Vacant(e) = enc.entry(h) {
            e.insert(Encoding::build(model, kg, encoder, h)?);
        }
    }

    let mut grad = ModelGrad::zeros(model);
    let mut d_enc: BTreeMap<usize, Vec<T>> = BTreeMap::new();
    let mut total = T::zero();
    for term in terms {
        let (h, t) = model.slots(&term.key)?;
        let r = model.emb.relation(term.key.relation);
        let (hv, tv) = (&enc[&h].out, model.emb.entity_at(t));
        let (f, conv_cache) = model.conve.forward(hv, r, tv);
        let sign = if term.positive { T::one() } else { -T::one() };
        total += term.weight * -log_sigmoid(sign * f);
        // d/df of −ln σ(s·f) is −s·σ(−s·f)
        let up = scale * term.weight * -sign * sigmoid(-sign * f);
        if up == T::zero() {
            continue;
        }
        let g = model.conve.backward(tv, &conv_cache, up, &mut grad.conve);
        axpy(&mut grad.relations[term.key.relation.index()], T::one(), &g.r);
        axpy(d_enc.entry(h).or_insert_with(|| vec![T::zero(); d]), T::one(), &g.h);
        axpy(grad.entity(t, d), T::one(), &g.t);
    }

    for (slot, up) in d_enc {
        let e = &enc[&slot];
        match &e.cache {
            None => axpy(grad.entity(slot, d), T::one(), &up),
            Some(cache) => {
                let groups = attention::groups_from_slots(&model.emb, &e.slots);
                let ag = attention::backward(model.emb.entity_at(slot), &groups, &model.attn, cache, &up, &mut grad.attn);
                axpy(grad.entity(slot, d), T::one(), &ag.h);
                for (gi, (rel, tails)) in e.slots.iter().enumerate() {
                    axpy(&mut grad.relations[rel.index()], T::one(), &ag.v_r[gi]);
                    for (k, &ts) in tails.iter().enumerate() {
                        axpy(grad.entity(ts, d), T::one(), &ag.tails[gi][k]);
                    }
                }
            }
        }
    }
    Ok((scale * total, grad))
}
