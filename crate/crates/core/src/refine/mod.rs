//! Evidence harvesting and penalty-weighted refinement of the embeddings.
//!
//! Entities recognised in the same post are paired. A pair mentioned by a
//! depressed author counts as positive evidence for the triplet, one by a
//! non-depressed author as negative evidence. Triplets with both kinds of
//! evidence form conflict sets; refinement pushes their scores down in
//! proportion to how often the negative side was observed.

mod harvest;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use harvest::{apply_harvest, harvest, Harvest, HarvestApplied, PairCount, MAX_PROVENANCE};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind, TripletKey};
use crate::kge::{logistic_loss, logistic_loss_grad, Encoder, LossTerm, Model, NegativeSampler};
use crate::num::{softmax, Scalar};

/// `softmax(f / τ)` over one conflict set.
pub fn matching_weight<T: Scalar>(scores: &[T], tau: T) -> Result<Vec<T>> {
    if !(tau > T::zero()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    if scores.is_empty() {
        return Err(Error::Empty("conflict set".into()));
    }
    let scaled: Vec<T> = scores.iter().map(|&s| s / tau).collect();
    Ok(softmax(&scaled))
}

/// Share of negative co-mentions.
pub fn plausibility(pos: u64, neg: u64) -> Result<f64> {
    if pos + neg == 0 {
        return Err(Error::InvalidArgument("plausibility needs at least one co-mention".into()));
    }
    Ok(neg as f64 / (pos + neg) as f64)
}

pub fn penalty<T: Scalar>(p: T, w_s: T) -> T {
    p * w_s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ConflictRecord<T> {
    pub key: TripletKey,
    pub pos: u64,
    pub neg: u64,
    pub score: T,
    pub w_s: T,
    pub p: T,
    pub w_c: T,
}

/// Groups contested triplets by (head, relation), scores them and fills in
/// the matching and penalty weights. Records come back in key order.
pub fn conflict_records<T: Scalar>(
    kg: &KnowledgeGraph,
    model: &Model<T>,
    encoder: Encoder,
    contested: &[TripletKey],
    tau: f64,
) -> Result<Vec<ConflictRecord<T>>> {
    let mut sets: BTreeMap<(EntityId, RelationKind), Vec<&TripletKey>> = BTreeMap::new();
    for k in contested {
        sets.entry((k.head.clone(), k.relation)).or_default().push(k);
    }
    let mut out = Vec::with_capacity(contested.len());
    for keys in sets.values() {
        let scores: Vec<T> = keys
            .iter()
            .map(|k| model.score(kg, encoder, k))
            .collect::<Result<_>>()?;
        let w = matching_weight(&scores, T::of(tau))?;
        for ((k, &score), &w_s) in keys.iter().zip(&scores).zip(&w) {
            let t = kg.triplet(k).ok_or_else(|| Error::UnknownEntity(k.to_string()))?;
            let p = T::of(plausibility(t.pos_count, t.neg_count)?);
            out.push(ConflictRecord {
                key: (*k).clone(),
                pos: t.pos_count,
                neg: t.neg_count,
                score,
                w_s,
                p,
                w_c: penalty(p, w_s),
            });
        }
    }
    out.sort_by(|a, b| a.key.cmp(&b.key));
    Ok(out)
}

/// Splits harvested co-mention keys that exist in the graph into clean
/// positives (no negative evidence so far) and contested triplets.
pub fn partition_evidence(kg: &KnowledgeGraph, harvest: &Harvest) -> (Vec<TripletKey>, Vec<TripletKey>) {
    let mut clean = Vec::new();
    let mut contested = Vec::new();
    for key in harvest.pairs.keys() {
        let Some(t) = kg.triplet(key) else { continue };
        if !kg.is_active(key) {
            continue;
        }
        match (t.pos_count > 0, t.neg_count > 0) {
            (true, false) => clean.push(key.clone()),
            (true, true) => contested.push(key.clone()),
            _ => {}
        }
    }
    (clean, contested)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub tau: f64,
    pub learning_rate: f64,
    pub steps: usize,
    /// corruptions sampled per clean positive each step
    pub negatives: usize,
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            tau: 1.0,
            learning_rate: 1.0,
            steps: 200,
            negatives: 1,
            seed: 0,
        }
    }
}

/// Positive terms for `clean`, penalised negatives for every conflict record
/// and unit-weight negatives for the sampled corruptions.
pub fn refine_terms<T: Scalar>(
    clean: &[TripletKey],
    conflicts: &[ConflictRecord<T>],
    sampled: &[TripletKey],
) -> Vec<LossTerm<T>> {
    let mut terms: Vec<LossTerm<T>> = clean.iter().cloned().map(LossTerm::positive).collect();
    terms.extend(conflicts.iter().map(|c| LossTerm::negative(c.key.clone(), c.w_c)));
    terms.extend(sampled.iter().cloned().map(|k| LossTerm::negative(k, T::one())));
    terms
}

/// `−Σ_P ln σ(f) − Σ_N w_c ln σ(−f)`, summed.
pub fn refine_loss<T: Scalar>(
    model: &Model<T>,
    kg: &KnowledgeGraph,
    encoder: Encoder,
    terms: &[LossTerm<T>],
) -> Result<T> {
    logistic_loss(model, kg, encoder, terms, T::one())
}

pub fn refine_loss_grad<T: Scalar>(
    model: &Model<T>,
    kg: &KnowledgeGraph,
    encoder: Encoder,
    terms: &[LossTerm<T>],
) -> Result<(T, crate::kge::ModelGrad<T>)> {
    logistic_loss_grad(model, kg, encoder, terms, T::one())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    /// summed loss per step, measured before the step
    pub losses: Vec<f64>,
}

/// Full-batch gradient steps on the refinement loss. Each step draws fresh
/// corruptions of the clean positives, where any exist. The step on the
/// summed loss is divided by the number of terms, so the learning rate does
/// not have to track the evidence volume.
pub fn refine<T: Scalar>(
    kg: &KnowledgeGraph,
    model: &mut Model<T>,
    encoder: Encoder,
    clean: &[TripletKey],
    conflicts: &[ConflictRecord<T>],
    weight: f64,
    cfg: &RefineConfig,
) -> Result<RefineReport> {
    let mut report = RefineReport::default();
    if clean.is_empty() && conflicts.is_empty() {
        return Ok(report);
    }
    let sampler = NegativeSampler::new(kg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for step in 0..cfg.steps {
        let mut sampled = Vec::with_capacity(clean.len() * cfg.negatives);
        for k in clean {
            sampled.extend(sampler.sample_available(k, cfg.negatives, &mut rng)?);
        }
        let terms = refine_terms(clean, conflicts, &sampled);
        let (loss, grad) = refine_loss_grad(model, kg, encoder, &terms)?;
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::Divergence(format!("refinement step {step}: loss {loss}")));
        }
        let lr = T::of(weight * cfg.learning_rate / terms.len() as f64);
        model.apply(lr, &grad);
        report.losses.push(loss.f64());
    }
    if !model.is_finite() {
        return Err(Error::Divergence("non-finite parameters after refinement".into()));
    }
    Ok(report)
}
