//! Longest-match gazetteer over entity surfaces and aliases.

use std::collections::BTreeMap;

use super::{Bio, RecognizedEntity, UserDocument};
use crate::kg::{EntityId, KnowledgeGraph};

/// Surfaces keyed by first token, longest first within each bucket.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    by_first: BTreeMap<String, Vec<(Vec<String>, EntityId)>>,
}

impl Lexicon {
    /// Factor entities only; class and depression nodes are schema
    /// scaffolding, not things users mention.
    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        let mut lex = Lexicon::default();
        for e in kg.factor_entities() {
            for s in e.surfaces() {
                lex.insert(s, e.id.clone());
            }
        }
        lex
    }

    pub fn insert(&mut self, surface: &str, id: EntityId) {
        let toks: Vec<String> = surface.split(' ').map(str::to_string).collect();
        if toks.is_empty() || toks[0].is_empty() {
            return;
        }
        let bucket = self.by_first.entry(toks[0].clone()).or_default();
        bucket.push((toks, id));
        // longest first, then lexicographic for a stable tie order
        bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    }

    pub fn is_empty(&self) -> bool {
        self.by_first.is_empty()
    }

    /// Left-to-right scan; at each position the longest surface wins and
    /// the scan resumes after it.
    pub fn scan(&self, post_index: usize, tokens: &[String]) -> Vec<RecognizedEntity> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.by_first.get(&tokens[i]).and_then(|bucket| {
                bucket
                    .iter()
                    .find(|(s, _)| i + s.len() <= tokens.len() && tokens[i..i + s.len()] == s[..])
            });
            match hit {
                Some((s, id)) => {
                    let n = s.len();
                    let mut tags = vec![Bio::I; n];
                    tags[0] = Bio::B;
                    out.push(RecognizedEntity {
                        surface: s.join(" "),
                        post: post_index,
                        start: i,
                        end: i + n,
                        tags,
                        entity: Some(id.clone()),
                    });
                    i += n;
                }
                None => i += 1,
            }
        }
        out
    }
}

pub fn recognize_lexicon(doc: &UserDocument, lex: &Lexicon) -> Vec<RecognizedEntity> {
    doc.posts
        .iter()
        .enumerate()
        .flat_map(|(p, toks)| lex.scan(p, toks))
        .collect()
}

/// BIO labels for one post from the entities recognised in it.
pub fn silver_tags(len: usize, entities: &[RecognizedEntity]) -> Vec<Bio> {
    let mut tags = vec![Bio::O; len];
    for e in entities {
        tags[e.start..e.end].copy_from_slice(&e.tags);
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::tokenize;
    use crate::kg::{Entity, EntityClass};

    fn graph() -> KnowledgeGraph {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        kg.add_entity(Entity::seed("anxious", EntityClass::PsySym, "anxious")).unwrap();
        kg.add_entity(Entity::seed("self_harm", EntityClass::PsySym, "self harm")).unwrap();
        kg.add_entity(Entity::seed("harm", EntityClass::Event, "harm")).unwrap();
        kg.add_entity(Entity::seed("ssri", EntityClass::Med, "ssri").with_aliases(&["sertraline"])).unwrap();
        kg
    }

    #[test]
    fn single_token_match() {
        let lex = Lexicon::from_graph(&graph());
        let hits = lex.scan(0, &tokenize("i feel anxious today"));
        assert_eq!(hits.len(), 1);
        assert_eq!((hits[0].start, hits[0].end), (2, 3));
        assert_eq!(hits[0].tags, [Bio::B]);
    }

    #[test]
    fn longest_match_wins() {
        let lex = Lexicon::from_graph(&graph());
        let hits = lex.scan(0, &tokenize("thoughts of self harm again"));
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].entity.as_ref().unwrap().as_str(), "self_harm");
        assert_eq!(hits[0].tags, [Bio::B, Bio::I]);
        assert_eq!(
            silver_tags(5, &hits),
            [Bio::O, Bio::O, Bio::B, Bio::I, Bio::O]
        );
    }

    #[test]
    fn aliases_and_misses() {
        let lex = Lexicon::from_graph(&graph());
        assert_eq!(lex.scan(0, &tokenize("started sertraline")).len(), 1);
        assert!(lex.scan(0, &tokenize("nothing to see here")).is_empty());
        assert!(lex.scan(0, &tokenize("depression")).is_empty());
    }

    #[test]
    fn document_scan_keeps_post_index() {
        let lex = Lexicon::from_graph(&graph());
        let doc = UserDocument::new("u", true, 1, &["fine", "so anxious", "harm and anxious"]);
        let hits = recognize_lexicon(&doc, &lex);
        let at: Vec<_> = hits.iter().map(|h| (h.post, h.start)).collect();
        assert_eq!(at, [(1, 1), (2, 0), (2, 2)]);
    }
}
