//! Per-post co-mention counting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::detector::{recognize_lexicon, Lexicon, UserDocument};
use crate::kg::{clean_snippet, EntityId, KnowledgeGraph, Provenance, RelationKind, TripletKey};

/// Provenance entries kept per key per harvest.
pub const MAX_PROVENANCE: usize = 3;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub pos: u64,
    pub neg: u64,
    pub provenance: Vec<Provenance>,
}

impl PairCount {
    fn add(&mut self, label: bool, user: &str, period: u32, post: &[String]) {
        if label {
            self.pos += 1;
        } else {
            self.neg += 1;
        }
        if self.provenance.len() < MAX_PROVENANCE {
            self.provenance.push(Provenance {
                user: user.to_string(),
                period,
                snippet: clean_snippet(&post.join(" ")),
            });
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Harvest {
    /// co-mention triplets in canonical orientation
    pub pairs: BTreeMap<TripletKey, PairCount>,
    /// posts mentioning each entity
    pub mentions: BTreeMap<EntityId, PairCount>,
    /// pairs with no admissible relation
    pub skipped: usize,
}

impl Harvest {
    pub fn positives(&self) -> impl Iterator<Item = &TripletKey> {
        self.pairs.iter().filter(|(_, c)| c.pos > 0).map(|(k, _)| k)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &TripletKey> {
        self.pairs.iter().filter(|(_, c)| c.neg > 0).map(|(k, _)| k)
    }
}

/// Every distinct pair of entities recognised in one post is one
/// co-mention, credited to the author's label.
pub fn harvest(docs: &[UserDocument], lex: &Lexicon, kg: &KnowledgeGraph, period: u32) -> Harvest {
    let mut out = Harvest::default();
    for doc in docs {
        let found = recognize_lexicon(doc, lex);
        for (p, post) in doc.posts.iter().enumerate() {
            let ids: BTreeSet<&EntityId> = found
                .iter()
                .filter(|e| e.post == p)
                .filter_map(|e| e.entity.as_ref())
                .collect();
            for id in &ids {
                out.mentions
                    .entry((*id).clone())
                    .or_default()
                    .add(doc.label, &doc.user_id, period, post);
            }
            let ids: Vec<&EntityId> = ids.into_iter().collect();
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    let classes = (
                        kg.entity(ids[i]).and_then(|e| e.class.factor()),
                        kg.entity(ids[j]).and_then(|e| e.class.factor()),
                    );
                    let (Some(a), Some(b)) = classes else {
                        out.skipped += 1;
                        continue;
                    };
                    let key = TripletKey::canonical(ids[i].clone(), RelationKind::between(a, b), ids[j].clone());
                    out.pairs.entry(key).or_default().add(doc.label, &doc.user_id, period, post);
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarvestApplied {
    pub bumped: usize,
    /// co-mentioned entity pairs with no triplet in the graph
    pub unlinked: usize,
}

/// Adds harvested counts to existing triplets. Mention counts go onto each
/// entity's subcategory link; pairs without a triplet are only counted.
pub fn apply_harvest(kg: &mut KnowledgeGraph, h: &Harvest) -> HarvestApplied {
    let mut applied = HarvestApplied::default();
    for (key, c) in &h.pairs {
        if kg.bump_counts(key, c.pos, c.neg, &c.provenance) {
            applied.bumped += 1;
        } else {
            applied.unlinked += 1;
        }
    }
    for (id, c) in &h.mentions {
        let Some(class) = kg.entity(id).and_then(|e| e.class.factor()) else { continue };
        let key = TripletKey::canonical(id.clone(), RelationKind::Subcat, class.class_node_id());
        if kg.bump_counts(&key, c.pos, c.neg, &[]) {
            applied.bumped += 1;
        }
    }
    applied
}
