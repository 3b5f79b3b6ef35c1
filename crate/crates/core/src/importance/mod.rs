//! Entity importance from maximum-probability paths to the depression node.
//!
//! Every factor entity's outgoing edges get a transition score from its
//! attention weights and co-mention counts, normalised per source. A class
//! node moves to the depression node with a smoothed class-frequency
//! score. The best path product `r_path` is searched with UCT (or by
//! exhaustive enumeration on small graphs), and a recognised entity's
//! weight is the similarity-weighted sum of the `r_path` of its top-M
//! nearest graph entities.

mod brute;
mod mcts;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::attention::{self, normalize_transitions, transition_score};
use crate::error::{Error, Result};
use crate::kg::{top_m_similar, EntityClass, EntityId, FactorClass, KnowledgeGraph, RelationKind, TripletKey};
use crate::kge::Model;
use crate::num::Scalar;

pub use brute::{brute_force_best_path, MAX_BRUTE_FORCE_NODES};
pub use mcts::{mcts_best_path, MctsConfig};

/// Smoothed class frequency `(count_c + 1) / (Σ count + 5)`, where a
/// class's count is the total mention count on its members' `r_subcat`
/// edges. Per-class overrides replace the formula.
pub fn class_hop_scores(kg: &KnowledgeGraph, overrides: &BTreeMap<FactorClass, f64>) -> BTreeMap<FactorClass, f64> {
    let mut counts: BTreeMap<FactorClass, u64> = FactorClass::ALL.iter().map(|&c| (c, 0)).collect();
    for t in kg.active_triplets().filter(|t| t.relation == RelationKind::Subcat) {
        if let Some(c) = FactorClass::from_class_node_id(&t.tail) {
            *counts.get_mut(&c).expect("all classes present") += t.pos_count + t.neg_count;
        }
    }
    class_hop_from_counts(&counts, overrides)
}

pub fn class_hop_from_counts(
    counts: &BTreeMap<FactorClass, u64>,
    overrides: &BTreeMap<FactorClass, f64>,
) -> BTreeMap<FactorClass, f64> {
    let total: u64 = counts.values().sum();
    FactorClass::ALL
        .iter()
        .map(|&c| {
            let v = overrides.get(&c).copied().unwrap_or_else(|| {
                (counts.get(&c).copied().unwrap_or(0) + 1) as f64 / (total + 5) as f64
            });
            (c, v)
        })
        .collect()
}

/// Normalised transition probabilities over the whole graph.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionGraph {
    ids: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
    class: Vec<EntityClass>,
    /// per node: `(target, probability)` sorted by target id
    out: Vec<Vec<(usize, f64)>>,
    /// class node → depression probability
    class_hop: Vec<f64>,
    depression: usize,
}

impl TransitionGraph {
    /// Scores every factor entity's neighbourhood with the model's
    /// attention weights.
    pub fn build<T: Scalar>(
        kg: &KnowledgeGraph,
        model: &Model<T>,
        class_hop_overrides: &BTreeMap<FactorClass, f64>,
    ) -> Result<Self> {
        let hops = class_hop_scores(kg, class_hop_overrides);
        let mut edges = Vec::new();
        for e in kg.factor_entities() {
            let slot = model
                .emb
                .slot(&e.id)
                .ok_or_else(|| Error::Empty(format!("no embedding for `{}`", e.id)))?;
            let slots = attention::neighborhood_slots(kg, &model.emb, &e.id)?;
            let groups = attention::groups_from_slots(&model.emb, &slots);
            let Some((_, cache)) = attention::forward(model.emb.entity_at(slot), &groups, &model.attn) else {
                continue;
            };
            let mut targets = Vec::new();
            let mut raw = Vec::new();
            for (gi, (r, tails)) in slots.iter().enumerate() {
                let n_ht = tails.len() as u64;
                for (k, &ts) in tails.iter().enumerate() {
                    let t = model.emb.id_at(ts);
                    let key = TripletKey::canonical(e.id.clone(), *r, t.clone());
                    let c_t = kg.triplet(&key).map(|tr| tr.comention_count()).unwrap_or(1);
                    let gamma = cache.gamma(gi, k).f64().clamp(0.0, 1.0);
                    raw.push(transition_score(gamma, n_ht, c_t)?);
                    targets.push(t.clone());
                }
            }
            let probs = normalize_transitions(&raw)?;
            edges.push((e.id.clone(), targets.into_iter().zip(probs).collect::<Vec<_>>()));
        }
        let mut tg = Self::from_parts(kg, edges)?;
        for (c, p) in hops {
            let i = tg.index[&c.class_node_id()];
            tg.class_hop[i] = p;
        }
        Ok(tg)
    }

    /// Graph over `kg`'s entities with explicit outgoing probabilities;
    /// class hops default to zero.
    pub fn from_parts(kg: &KnowledgeGraph, edges: Vec<(EntityId, Vec<(EntityId, f64)>)>) -> Result<Self> {
        let ids: Vec<EntityId> = kg.entity_ids().cloned().collect();
        let index: HashMap<EntityId, usize> = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let class = ids
            .iter()
            .map(|id| kg.entity(id).expect("listed entity").class)
            .collect();
        let mut out = vec![Vec::new(); ids.len()];
        for (src, targets) in edges {
            let s = *index.get(&src).ok_or_else(|| Error::UnknownEntity(src.to_string()))?;
            let mut merged: BTreeMap<usize, f64> = BTreeMap::new();
            for (t, p) in targets {
                let ti = *index.get(&t).ok_or_else(|| Error::UnknownEntity(t.to_string()))?;
                *merged.entry(ti).or_insert(0.0) += p;
            }
            out[s] = merged.into_iter().collect();
        }
        let depression = *index
            .get(&EntityId::new(crate::kg::DEPRESSION_ID))
            .ok_or_else(|| Error::Schema("graph has no depression node".into()))?;
        Ok(TransitionGraph {
            class_hop: vec![0.0; ids.len()],
            ids,
            index,
            class,
            out,
            depression,
        })
    }

    pub fn set_class_hop(&mut self, class: FactorClass, p: f64) {
        let i = self.index[&class.class_node_id()];
        self.class_hop[i] = p;
    }

    pub fn node(&self, id: &EntityId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, i: usize) -> &EntityId {
        &self.ids[i]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn out(&self, i: usize) -> &[(usize, f64)] {
        &self.out[i]
    }

    pub fn probability(&self, from: &EntityId, to: &EntityId) -> Option<f64> {
        let (f, t) = (self.node(from)?, self.node(to)?);
        self.out[f].iter().find(|(x, _)| *x == t).map(|(_, p)| *p)
    }

    pub fn is_class_node(&self, i: usize) -> bool {
        self.class[i] == EntityClass::ClassNode
    }

    pub fn is_factor(&self, i: usize) -> bool {
        self.class[i].factor().is_some()
    }

    pub fn class_hop(&self, i: usize) -> f64 {
        self.class_hop[i]
    }

    /// Completes a node sequence `e1 … en class` into a [`PathResult`].
    pub(crate) fn finish(&self, seq: &[usize]) -> PathResult {
        let mut hop_scores = Vec::with_capacity(seq.len());
        for w in seq.windows(2) {
            let p = self.out[w[0]]
                .iter()
                .find(|(t, _)| *t == w[1])
                .map(|(_, p)| *p)
                .unwrap_or(0.0);
            hop_scores.push(p);
        }
        let last = *seq.last().expect("non-empty path");
        hop_scores.push(self.class_hop[last]);
        let r_path = hop_scores.iter().product();
        let mut nodes: Vec<EntityId> = seq.iter().map(|&i| self.ids[i].clone()).collect();
        nodes.push(self.ids[self.depression].clone());
        PathResult {
            nodes,
            hop_scores,
            r_path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    /// `e1 → … → class node → depression`
    pub nodes: Vec<EntityId>,
    pub hop_scores: Vec<f64>,
    pub r_path: f64,
}

impl PathResult {
    pub fn hops(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Higher score wins; exact ties go to the lexicographically smaller
    /// node sequence.
    pub fn better_than(&self, other: &PathResult) -> bool {
        self.r_path > other.r_path || (self.r_path == other.r_path && self.nodes < other.nodes)
    }

    pub fn render(&self) -> String {
        self.nodes.iter().map(EntityId::as_str).collect::<Vec<_>>().join(" > ")
    }
}

/// Best path of every factor entity that has one.
pub type PathCache = BTreeMap<EntityId, PathResult>;

/// How best paths are searched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathSearch {
    Mcts,
    Exhaustive,
}

/// UCT search from every factor entity, each with its own stream seeded by
/// the entity id.
pub fn compute_paths(tg: &TransitionGraph, kg: &KnowledgeGraph, cfg: &MctsConfig) -> PathCache {
    let mut cache = PathCache::new();
    for e in kg.factor_entities() {
        let local = MctsConfig {
            seed: cfg.seed ^ crate::seed::fnv1a(e.id.as_str().as_bytes()),
            ..*cfg
        };
        if let Ok(p) = mcts_best_path(tg, &e.id, &local) {
            cache.insert(e.id.clone(), p);
        }
    }
    cache
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceMatch {
    pub entity: EntityId,
    pub similarity: f64,
    pub r_path: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScore {
    pub matches: Vec<ImportanceMatch>,
    pub weight: f64,
}

/// `w_F = Σ_m sim(F, G_m) · r_path(G_m)` over the top-M graph entities
/// nearest to `query` in embedding space. Entities without a path
/// contribute zero.
pub fn entity_importance<T: Scalar>(
    kg: &KnowledgeGraph,
    model: &Model<T>,
    paths: &PathCache,
    query: &[T],
    m: usize,
) -> Result<ImportanceScore> {
    if kg.factor_entities().next().is_none() {
        return Err(Error::Empty("graph has no factor entities".into()));
    }
    let top = top_m_similar(kg, &model.emb, query, m)?;
    let matches: Vec<ImportanceMatch> = top
        .into_iter()
        .map(|(id, sim)| ImportanceMatch {
            r_path: paths.get(&id).map(|p| p.r_path).unwrap_or(0.0),
            similarity: sim.f64(),
            entity: id,
        })
        .collect();
    let weight = matches.iter().map(|m| m.similarity * m.r_path).sum();
    Ok(ImportanceScore { matches, weight })
}

/// Importance of every factor entity, querying with its own embedding.
pub fn importance_table<T: Scalar>(
    kg: &KnowledgeGraph,
    model: &Model<T>,
    paths: &PathCache,
    m: usize,
) -> Result<BTreeMap<EntityId, f64>> {
    let mut out = BTreeMap::new();
    for e in kg.factor_entities() {
        let q = model
            .emb
            .entity(&e.id)
            .ok_or_else(|| Error::Empty(format!("no embedding for `{}`", e.id)))?;
        out.insert(e.id.clone(), entity_importance(kg, model, paths, q, m)?.weight);
    }
    Ok(out)
}
