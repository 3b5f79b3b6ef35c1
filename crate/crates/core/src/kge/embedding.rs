use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};
use crate::linalg::uniform_vec;
use crate::num::Scalar;

/// One vector per entity and one `v_r` per relation kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", from = "RawTable<T>", into = "RawTable<T>")]
pub struct EmbeddingTable<T> {
    d: usize,
    ids: Vec<EntityId>,
    index: HashMap<EntityId, usize>,
    entities: Vec<Vec<T>>,
    relations: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawTable<T> {
    d: usize,
    ids: Vec<EntityId>,
    entities: Vec<Vec<T>>,
    relations: Vec<Vec<T>>,
}

impl<T: Scalar> From<RawTable<T>> for EmbeddingTable<T> {
    fn from(r: RawTable<T>) -> Self {
        let index = r.ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        EmbeddingTable {
            d: r.d,
            ids: r.ids,
            index,
            entities: r.entities,
            relations: r.relations,
        }
    }
}

impl<T: Scalar> From<EmbeddingTable<T>> for RawTable<T> {
    fn from(t: EmbeddingTable<T>) -> Self {
        RawTable {
            d: t.d,
            ids: t.ids,
            entities: t.entities,
            relations: t.relations,
        }
    }
}

impl<T: Scalar> EmbeddingTable<T> {
    /// Uniform(-1/sqrt(d), 1/sqrt(d)) vectors for every entity of `kg`
    /// (in id order) and every relation kind.
    pub fn init<R: Rng>(kg: &KnowledgeGraph, d: usize, rng: &mut R) -> Self {
        let bound = init_bound(d);
        let relations = RelationKind::ALL
            .iter()
            .map(|_| uniform_vec(d, bound, rng))
            .collect();
        let mut table = EmbeddingTable {
            d,
            ids: Vec::new(),
            index: HashMap::new(),
            entities: Vec::new(),
            relations,
        };
        table.ensure_entities(kg, rng);
        table
    }

    /// Adds fresh vectors for graph entities that have none, in id order.
    /// Returns how many were added.
    pub fn ensure_entities<R: Rng>(&mut self, kg: &KnowledgeGraph, rng: &mut R) -> usize {
        let bound = init_bound(self.d);
        let mut added = 0;
        for id in kg.entity_ids() {
            if !self.index.contains_key(id) {
                self.push(id.clone(), uniform_vec(self.d, bound, rng));
                added += 1;
            }
        }
        added
    }

    pub fn insert(&mut self, id: EntityId, v: Vec<T>) -> Result<()> {
        if v.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        match self.index.get(&id) {
            Some(&i) => self.entities[i] = v,
            None => self.push(id, v),
        }
        Ok(())
    }

    fn push(&mut self, id: EntityId, v: Vec<T>) {
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.entities.push(v);
    }

    pub(crate) fn from_parts(d: usize, rows: Vec<(EntityId, Vec<T>)>, relations: Vec<Vec<T>>) -> Self {
        let mut t = EmbeddingTable {
            d,
            ids: Vec::new(),
            index: HashMap::new(),
            entities: Vec::new(),
            relations,
        };
        for (id, v) in rows {
            t.push(id, v);
        }
        t
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    #[inline]
    pub fn slot(&self, id: &EntityId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id_at(&self, slot: usize) -> &EntityId {
        &self.ids[slot]
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn entity(&self, id: &EntityId) -> Option<&[T]> {
        self.slot(id).map(|i| self.entities[i].as_slice())
    }

    #[inline]
    pub fn entity_at(&self, slot: usize) -> &[T] {
        &self.entities[slot]
    }

    #[inline]
    pub fn entity_at_mut(&mut self, slot: usize) -> &mut [T] {
        &mut self.entities[slot]
    }

    #[inline]
    pub fn relation(&self, r: RelationKind) -> &[T] {
        &self.relations[r.index()]
    }

    #[inline]
    pub fn relation_mut(&mut self, r: RelationKind) -> &mut [T] {
        &mut self.relations[r.index()]
    }

    /// Slots sorted by entity id, the canonical order for files.
    pub fn sorted_slots(&self) -> Vec<usize> {
        let mut slots: Vec<usize> = (0..self.ids.len()).collect();
        slots.sort_by(|&a, &b| self.ids[a].cmp(&self.ids[b]));
        slots
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Flat parameter count: all entity vectors then all relation vectors.
    pub(crate) fn flat_len(&self) -> usize {
        (self.entities.len() + self.relations.len()) * self.d
    }

    pub(crate) fn flat_get(&self, i: usize) -> T {
        let (row, col) = (i / self.d, i % self.d);
        if row < self.entities.len() {
            self.entities[row][col]
        } else {
            self.relations[row - self.entities.len()][col]
        }
    }

    pub(crate) fn flat_set(&mut self, i: usize, v: T) {
        let (row, col) = (i / self.d, i % self.d);
        if row < self.entities.len() {
            self.entities[row][col] = v;
        } else {
            let r = row - self.entities.len();
            self.relations[r][col] = v;
        }
    }
}

pub(crate) fn init_bound(d: usize) -> f64 {
    1.0 / (d as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityClass};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_covers_graph_and_respects_bound() {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        kg.add_entity(Entity::seed("sad", EntityClass::PsySym, "sad")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = EmbeddingTable::<f64>::init(&kg, 16, &mut rng);
        assert_eq!(t.len(), 7);
        let b = 0.25;
        for id in kg.entity_ids() {
            assert!(t.entity(id).unwrap().iter().all(|x| x.abs() <= b));
        }
        for r in RelationKind::ALL {
            assert_eq!(t.relation(r).len(), 16);
        }
    }

    #[test]
    fn ensure_entities_only_adds_missing() {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut t = EmbeddingTable::<f32>::init(&kg, 4, &mut rng);
        let before = t.entity(&"depression".into()).unwrap().to_vec();
        kg.add_entity(Entity::seed("fog", EntityClass::PhySym, "brain fog")).unwrap();
        assert_eq!(t.ensure_entities(&kg, &mut rng), 1);
        assert_eq!(t.ensure_entities(&kg, &mut rng), 0);
        assert_eq!(t.entity(&"depression".into()).unwrap(), before.as_slice());
    }

    #[test]
    fn serde_roundtrip_rebuilds_index() {
        let kg = KnowledgeGraph::with_reserved_nodes();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = EmbeddingTable::<f64>::init(&kg, 4, &mut rng);
        let json = serde_json::to_string(&t).unwrap();
        let back: EmbeddingTable<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.slot(&"depression".into()), t.slot(&"depression".into()));
    }
}
