//! Synthetic time-sliced corpora with a known importance ranking.
//!
//! Posts are filler words with entity mentions dropped in, each mention
//! usually preceded by a cue word of its class. Depressed users mention
//! signal entities at their positive rate, everyone mentions common
//! entities at the shared rate. From an emergent entity's onset period on,
//! a growing share of depressed users stop showing the classic signal and
//! talk about one active emergent entity instead.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::UserDocument;
use crate::error::{Error, Result};
use crate::kg::{Entity, EntityClass, FactorClass, KnowledgeGraph, RelationKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntitySpec {
    pub surface: String,
    pub class: FactorClass,
    /// per-post mention probability for depressed authors
    pub pos_rate: f64,
    pub neg_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergentSpec {
    pub surface: String,
    pub class: FactorClass,
    pub onset: u32,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub users_per_period: usize,
    /// users in period 0, the pretraining slice
    pub pretrain_users: usize,
    pub depressed_fraction: f64,
    pub posts_per_user: usize,
    pub filler_per_post: usize,
    pub signal: Vec<EntitySpec>,
    pub common: Vec<EntitySpec>,
    pub emergent: Vec<EmergentSpec>,
    /// share of depressed users on the emergent profile, per active emergent entity
    pub emergent_share: f64,
    /// probability that a mention is preceded by a class cue word
    pub cue_rate: f64,
    pub filler: Vec<String>,
    pub seed: u64,
}

const FILLER: &[&str] = &[
    "today", "really", "just", "think", "know", "went", "with", "friends", "work", "home", "morning", "night",
    "weekend", "coffee", "movie", "music", "game", "dinner", "lunch", "walk", "park", "city", "train", "bus",
    "phone", "email", "call", "meeting", "project", "class", "book", "read", "watch", "show", "funny", "weird",
    "maybe", "probably", "anyway", "still", "again", "always", "never", "sometimes", "pretty", "kind", "stuff",
    "thing", "people", "guy", "girl", "family", "dog", "cat", "weather", "rain", "sunny", "cold", "hot", "week",
];

fn cues(class: FactorClass) -> [&'static str; 3] {
    match class {
        FactorClass::PsySym => ["feeling", "emotionally", "mood"],
        FactorClass::PhySym => ["body", "physically", "symptoms"],
        FactorClass::Event => ["happened", "after", "life"],
        FactorClass::Med => ["prescribed", "dose", "taking"],
        FactorClass::Therapy => ["session", "therapist", "practice"],
    }
}

fn spec(surface: &str, class: FactorClass, pos_rate: f64, neg_rate: f64) -> EntitySpec {
    EntitySpec {
        surface: surface.into(),
        class,
        pos_rate,
        neg_rate,
    }
}

impl Default for SynthConfig {
    fn default() -> Self {
        use FactorClass::*;
        let emergent = |surface: &str, onset| EmergentSpec {
            surface: surface.into(),
            class: PhySym,
            onset,
            rate: 0.35,
        };
        SynthConfig {
            users_per_period: 200,
            pretrain_users: 500,
            depressed_fraction: 0.5,
            posts_per_user: 6,
            filler_per_post: 8,
            signal: vec![
                spec("hopeless", PsySym, 0.12, 0.004),
                spec("worthless", PsySym, 0.10, 0.004),
                spec("insomnia", PhySym, 0.08, 0.004),
                spec("fatigue", PhySym, 0.06, 0.006),
                spec("divorce", Event, 0.06, 0.004),
                spec("sertraline", Med, 0.06, 0.002),
                spec("counseling", Therapy, 0.06, 0.002),
            ],
            common: vec![
                spec("bored", PsySym, 0.04, 0.04),
                spec("awkward", PsySym, 0.04, 0.04),
                spec("annoyed", PsySym, 0.03, 0.03),
                spec("headache", PhySym, 0.04, 0.04),
                spec("back pain", PhySym, 0.03, 0.03),
                spec("sore throat", PhySym, 0.03, 0.03),
                spec("exam", Event, 0.04, 0.04),
                spec("moving", Event, 0.03, 0.03),
                spec("wedding", Event, 0.03, 0.03),
                spec("ibuprofen", Med, 0.03, 0.03),
                spec("antibiotics", Med, 0.03, 0.03),
                spec("vitamins", Med, 0.03, 0.03),
                spec("yoga", Therapy, 0.03, 0.03),
                spec("massage", Therapy, 0.03, 0.03),
                spec("meditation", Therapy, 0.03, 0.03),
            ],
            emergent: vec![
                emergent("brain fog", 3),
                emergent("breathlessness", 4),
                emergent("smell loss", 5),
            ],
            emergent_share: 0.2,
            cue_rate: 0.8,
            // cue words double as filler so that every user writes them
            filler: FILLER
                .iter()
                .copied()
                .chain(FactorClass::ALL.iter().flat_map(|&c| cues(c)))
                .map(|s| s.to_string())
                .collect(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad_rate = |r: f64| !(0.0..=1.0).contains(&r);
        if bad_rate(self.depressed_fraction) || bad_rate(self.emergent_share) || bad_rate(self.cue_rate) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        for s in self.signal.iter().chain(&self.common) {
            if bad_rate(s.pos_rate) || bad_rate(s.neg_rate) {
                return Err(Error::Config(format!("rate of `{}` outside [0, 1]", s.surface)));
            }
        }
        for e in &self.emergent {
            if bad_rate(e.rate) {
                return Err(Error::Config(format!("rate of `{}` outside [0, 1]", e.surface)));
            }
            if e.onset < 2 {
                return Err(Error::Config(format!("onset of `{}` must be at least 2", e.surface)));
            }
        }
        if self.filler.is_empty() {
            return Err(Error::Config("filler vocabulary is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for s in self.surfaces() {
            if !seen.insert(s) {
                return Err(Error::Config(format!("surface `{s}` listed twice")));
            }
        }
        Ok(())
    }

    fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.signal
            .iter()
            .chain(&self.common)
            .map(|s| s.surface.as_str())
            .chain(self.emergent.iter().map(|e| e.surface.as_str()))
    }

    pub fn active_emergent(&self, period: u32) -> Vec<&EmergentSpec> {
        self.emergent.iter().filter(|e| e.onset <= period).collect()
    }

    /// Graph id for a surface.
    pub fn entity_id(surface: &str) -> String {
        surface.split_whitespace().collect::<Vec<_>>().join("_")
    }

    /// Reserved nodes plus every signal and common entity, linked to their
    /// class nodes. Emergent entities are left for discovery.
    pub fn seed_graph(&self) -> Result<KnowledgeGraph> {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        for s in self.signal.iter().chain(&self.common) {
            kg.add_entity(Entity::seed(Self::entity_id(&s.surface), s.class.into(), &s.surface))?;
        }
        kg.link_class_nodes()?;
        Ok(kg)
    }

    /// What a reviewer who knows the generator would accept.
    pub fn truth(&self) -> BTreeMap<String, FactorClass> {
        self.emergent.iter().map(|e| (e.surface.clone(), e.class)).collect()
    }
}

const RATIO_EPS: f64 = 1e-3;

/// Entities of `period` ordered by smoothed positive-to-negative rate
/// ratio, highest first; ties by surface.
pub fn ground_truth(cfg: &SynthConfig, period: u32) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64)> = cfg
        .signal
        .iter()
        .chain(&cfg.common)
        .map(|s| (s.surface.clone(), (s.pos_rate + RATIO_EPS) / (s.neg_rate + RATIO_EPS)))
        .chain(
            cfg.active_emergent(period)
                .into_iter()
                .map(|e| (e.surface.clone(), (e.rate + RATIO_EPS) / RATIO_EPS)),
        )
        .collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Users of one period. Period 0 holds the pretraining users.
pub fn synth_corpus(cfg: &SynthConfig, period: u32) -> Result<Vec<UserDocument>> {
    cfg.validate()?;
    let mut rng = crate::seed::rng(cfg.seed, period, "synth");
    let n = if period == 0 { cfg.pretrain_users } else { cfg.users_per_period };
    let active = cfg.active_emergent(period);
    let share = (cfg.emergent_share * active.len() as f64).min(1.0);
    let mut users = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.gen_bool(cfg.depressed_fraction);
        let emergent = if label && !active.is_empty() && rng.gen_bool(share) {
            Some(active[rng.gen_range(0..active.len())])
        } else {
            None
        };
        let mut rates: Vec<(&str, FactorClass, f64)> = Vec::new();
        for s in &cfg.signal {
            let r = if label && emergent.is_none() { s.pos_rate } else { s.neg_rate };
            rates.push((&s.surface, s.class, r));
        }
        for s in &cfg.common {
            rates.push((&s.surface, s.class, if label { s.pos_rate } else { s.neg_rate }));
        }
        if let Some(e) = emergent {
            rates.push((&e.surface, e.class, e.rate));
        }
        let posts = (0..cfg.posts_per_user)
            .map(|_| post(cfg, &rates, &mut rng))
            .collect();
        users.push(UserDocument {
            user_id: format!("p{period}-u{i:04}"),
            label,
            period,
            posts,
        });
    }
    Ok(users)
}

fn post<R: Rng>(cfg: &SynthConfig, rates: &[(&str, FactorClass, f64)], rng: &mut R) -> Vec<String> {
    let mut blocks: Vec<Vec<String>> = (0..cfg.filler_per_post)
        .map(|_| vec![cfg.filler[rng.gen_range(0..cfg.filler.len())].clone()])
        .collect();
    for &(surface, class, rate) in rates {
        if rate > 0.0 && rng.gen_bool(rate) {
            let mut block = Vec::new();
            if rng.gen_bool(cfg.cue_rate) {
                block.push(cues(class)[rng.gen_range(0..3)].to_string());
            }
            block.extend(surface.split_whitespace().map(str::to_string));
            let at = rng.gen_range(0..=blocks.len());
            blocks.insert(at, block);
        }
    }
    blocks.into_iter().flatten().collect()
}

/// Seed files at a fixed scale: `factor` entities spread over the five
/// classes, each linked to its class node, plus `pairs` random co-mention
/// triplets. Returns (entities file, triplets file).
pub fn scale_fixture(factor: usize, pairs: usize, seed: u64) -> Result<(String, String)> {
    let max_pairs = factor * factor.saturating_sub(1) / 2;
    if pairs > max_pairs {
        return Err(Error::InvalidArgument(format!("{pairs} pairs exceed the {max_pairs} possible")));
    }
    let mut rng = crate::seed::rng(seed, 0, "scale");
    let mut ents = String::new();
    for e in crate::kg::reserved_entities() {
        let _ = writeln!(ents, "{}\t{}\t{}\t", e.id, e.class.name(), e.surface);
    }
    let classes: Vec<FactorClass> = (0..factor).map(|i| FactorClass::ALL[i % 5]).collect();
    for (i, c) in classes.iter().enumerate() {
        let _ = writeln!(ents, "f{i:04}\t{}\tfactor {i}\t", EntityClass::from(*c).name());
    }
    let mut all: Vec<(usize, usize)> = (0..factor).flat_map(|i| (i + 1..factor).map(move |j| (i, j))).collect();
    all.shuffle(&mut rng);
    all.truncate(pairs);
    all.sort_unstable();
    let mut trips = String::new();
    for (i, j) in all {
        let r = RelationKind::between(classes[i], classes[j]);
        let _ = writeln!(
            trips,
            "f{i:04}\t{}\tf{j:04}\t{}\t{}",
            r.name(),
            rng.gen_range(1..20),
            rng.gen_range(0..5)
        );
    }
    Ok((ents, trips))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_depressed_fraction_means_no_positives() {
        let cfg = SynthConfig {
            depressed_fraction: 0.0,
            users_per_period: 50,
            ..SynthConfig::default()
        };
        assert!(synth_corpus(&cfg, 3).unwrap().iter().all(|u| !u.label));
    }

    #[test]
    fn equal_rates_tie_the_ranking() {
        let mut cfg = SynthConfig::default();
        cfg.emergent.clear();
        for s in cfg.signal.iter_mut().chain(cfg.common.iter_mut()) {
            s.pos_rate = 0.05;
            s.neg_rate = 0.05;
        }
        let gt = ground_truth(&cfg, 1);
        assert!(gt.iter().all(|(_, r)| *r == gt[0].1));
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            users_per_period: 30,
            ..SynthConfig::default()
        };
        assert_eq!(synth_corpus(&cfg, 4).unwrap(), synth_corpus(&cfg, 4).unwrap());
        assert_ne!(synth_corpus(&cfg, 4).unwrap(), synth_corpus(&cfg, 5).unwrap());
    }

    #[test]
    fn emergent_entities_wait_for_onset() {
        let cfg = SynthConfig::default();
        let mentions = |period| {
            synth_corpus(&cfg, period)
                .unwrap()
                .iter()
                .flat_map(|u| u.posts.iter())
                .filter(|p| p.windows(2).any(|w| w[0] == "brain" && w[1] == "fog"))
                .count()
        };
        assert_eq!(mentions(2), 0);
        assert!(mentions(3) > 10);
    }

    #[test]
    fn onset_before_two_is_rejected() {
        let mut cfg = SynthConfig::default();
        cfg.emergent[0].onset = 1;
        assert!(cfg.validate().is_err());
    }
}
