//! Negative sampling by endpoint corruption within the entity class.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityClass, EntityId, KnowledgeGraph, TripletKey};

pub const MAX_ATTEMPTS: usize = 100;

/// Class membership lists, built once per graph snapshot.
pub struct NegativeSampler<'g> {
    kg: &'g KnowledgeGraph,
    by_class: BTreeMap<EntityClass, Vec<EntityId>>,
}

impl<'g> NegativeSampler<'g> {
    pub fn new(kg: &'g KnowledgeGraph) -> Self {
        let mut by_class: BTreeMap<EntityClass, Vec<EntityId>> = BTreeMap::new();
        for e in kg.entities() {
            by_class.entry(e.class).or_default().push(e.id.clone());
        }
        NegativeSampler { kg, by_class }
    }

    fn pool(&self, id: &EntityId) -> &[EntityId] {
        match self.kg.entity(id) {
            Some(e) => self.by_class.get(&e.class).map(Vec::as_slice).unwrap_or(&[]),
            None => &[],
        }
    }

    /// `n` corruptions of `key`. Each replaces the head or the tail with a
    /// uniformly drawn entity of the same class and is never an active
    /// triplet. Repeats among the returned negatives are allowed.
    pub fn sample<R: Rng>(&self, key: &TripletKey, n: usize, rng: &mut R) -> Result<Vec<TripletKey>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let usable = |pool: &[EntityId]| pool.iter().any(|c| *c != key.head && *c != key.tail);
        let heads = self.pool(&key.head);
        let tails = self.pool(&key.tail);
        let (can_h, can_t) = (usable(heads), usable(tails));
        if !can_h && !can_t {
            return Err(Error::SamplingExhausted(format!("no class-mates to corrupt {key}")));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut found = None;
            for _ in 0..MAX_ATTEMPTS {
                let corrupt_head = match (can_h, can_t) {
                    (true, true) => rng.gen_bool(0.5),
                    (h, _) => h,
                };
                let pool = if corrupt_head { heads } else { tails };
                let pick = &pool[rng.gen_range(0..pool.len())];
                if *pick == key.head || *pick == key.tail {
                    continue;
                }
                let cand = if corrupt_head {
                    TripletKey::canonical(pick.clone(), key.relation, key.tail.clone())
                } else {
                    TripletKey::canonical(key.head.clone(), key.relation, pick.clone())
                };
                if !self.kg.is_active(&cand) {
                    found = Some(cand);
                    break;
                }
            }
            let found = match found {
                Some(c) => Some(c),
                None => self.enumerate(key, can_h, can_t, rng),
            };
            match found {
                Some(c) => out.push(c),
                None => return Err(Error::SamplingExhausted(format!("every corruption of {key} is active"))),
            }
        }
        Ok(out)
    }
}

impl NegativeSampler<'_> {
    /// Like [`NegativeSampler::sample`], but a triplet whose every
    /// corruption is active gets no negatives instead of an error.
    pub fn sample_available<R: Rng>(&self, key: &TripletKey, n: usize, rng: &mut R) -> Result<Vec<TripletKey>> {
        match self.sample(key, n, rng) {
            Err(Error::SamplingExhausted(_)) => Ok(Vec::new()),
            r => r,
        }
    }

    /// Uniform pick among all free corruptions, for when random draws keep
    /// hitting active triplets.
    fn enumerate<R: Rng>(&self, key: &TripletKey, can_h: bool, can_t: bool, rng: &mut R) -> Option<TripletKey> {
        let mut free = Vec::new();
        for (ok, side_head) in [(can_h, true), (can_t, false)] {
            if !ok {
                continue;
            }
            let pool = if side_head { self.pool(&key.head) } else { self.pool(&key.tail) };
            for pick in pool.iter().filter(|c| **c != key.head && **c != key.tail) {
                let cand = if side_head {
                    TripletKey::canonical(pick.clone(), key.relation, key.tail.clone())
                } else {
                    TripletKey::canonical(key.head.clone(), key.relation, pick.clone())
                };
                if !self.kg.is_active(&cand) {
                    free.push(cand);
                }
            }
        }
        (!free.is_empty()).then(|| free.swap_remove(rng.gen_range(0..free.len())))
    }
}

pub fn sample_negatives<R: Rng>(kg: &KnowledgeGraph, key: &TripletKey, n: usize, rng: &mut R) -> Result<Vec<TripletKey>> {
    NegativeSampler::new(kg).sample(key, n, rng)
}
