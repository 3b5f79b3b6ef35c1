//! Seed schema files: a tab-separated entity list and a triplet list.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Entity, EntityId, EntityStatus, KnowledgeGraph, RelationKind, Triplet};
use crate::error::{Error, Result};

/// Reads the entities and triplets files and builds a validated graph.
/// Every factor entity is linked to its class node.
pub fn load_schema(entities_path: &Path, triplets_path: &Path) -> Result<KnowledgeGraph> {
    let entities = fs::read_to_string(entities_path)?;
    let triplets = fs::read_to_string(triplets_path)?;
    parse_schema(
        &entities_path.display().to_string(),
        &entities,
        &triplets_path.display().to_string(),
        &triplets,
    )
}

pub fn parse_schema(
    entities_name: &str,
    entities: &str,
    triplets_name: &str,
    triplets: &str,
) -> Result<KnowledgeGraph> {
    let mut kg = KnowledgeGraph::empty();
    for (lineno, line) in data_lines(entities) {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::parse(
                entities_name,
                lineno,
                format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
            ));
        }
        let class = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(entities_name, lineno, e.to_string()))?;
        let aliases = fields
            .get(3)
            .map(|a| {
                a.split('|')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::to_string)
                    .collect()
            })
            .unwrap_or_default();
        let entity = Entity {
            id: EntityId::new(fields[0]),
            surface: fields[2].to_string(),
            aliases,
            class,
            first_period: 0,
            status: EntityStatus::Seed,
        };
        kg.add_entity(entity)
            .map_err(|e| Error::parse(entities_name, lineno, e.to_string()))?;
    }
    kg.validate()?;

    for (lineno, line) in data_lines(triplets) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                triplets_name,
                lineno,
                format!("expected 5 tab-separated fields, got {}", fields.len()),
            ));
        }
        let relation: RelationKind = fields[1]
            .parse()
            .map_err(|e: Error| Error::parse(triplets_name, lineno, e.to_string()))?;
        let count = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(triplets_name, lineno, format!("bad count `{s}`")))
        };
        let t = Triplet::new(fields[0], relation, fields[2]).with_counts(count(fields[3])?, count(fields[4])?);
        kg.add_triplet(t)
            .map_err(|e| Error::parse(triplets_name, lineno, e.to_string()))?;
    }
    kg.link_class_nodes()?;
    Ok(kg)
}

/// Renders a graph back to the two seed files (entities, triplets).
pub fn write_schema(kg: &KnowledgeGraph) -> (String, String) {
    let mut ents = String::from("# id\tclass\tsurface\taliases\n");
    for e in kg.entities() {
        let _ = writeln!(ents, "{}\t{}\t{}\t{}", e.id, e.class.name(), e.surface, e.aliases.join("|"));
    }
    let mut trips = String::from("# head\trelation\ttail\tpos\tneg\n");
    for t in kg.active_triplets() {
        let _ = writeln!(
            trips,
            "{}\t{}\t{}\t{}\t{}",
            t.head, t.relation, t.tail, t.pos_count, t.neg_count
        );
    }
    (ents, trips)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}
