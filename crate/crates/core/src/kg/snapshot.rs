//! `KGLOOP-KG v1` snapshot files.
//!
//! ```text
//! KGLOOP-KG v1
//! period  <k>
//! entities  <n>
//! <id> <class> <status> <first_period> <surface> <alias|alias>
//! triplets  <m>
//! <head> <relation> <tail> <pos> <neg> <status> <n_prov>
//! + <user> <period> <snippet>
//! END
//! ```
//! All separators are tabs. Entities and triplets appear in key order, so
//! equal graphs serialise to equal bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{clean_snippet, Entity, EntityId, KnowledgeGraph, Provenance, Triplet};
use crate::error::{Error, Result};

pub const SNAPSHOT_HEADER: &str = "KGLOOP-KG v1";

pub fn snapshot_string(kg: &KnowledgeGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{SNAPSHOT_HEADER}");
    let _ = writeln!(out, "period\t{}", kg.period);
    let _ = writeln!(out, "entities\t{}", kg.num_entities());
    for e in kg.entities() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            e.id,
            e.class.name(),
            e.status.name(),
            e.first_period,
            e.surface,
            e.aliases.join("|")
        );
    }
    let _ = writeln!(out, "triplets\t{}", kg.triplets().count());
    for t in kg.triplets() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            t.head,
            t.relation,
            t.tail,
            t.pos_count,
            t.neg_count,
            t.status.name(),
            t.provenance.len()
        );
        for p in &t.provenance {
            let _ = writeln!(out, "+\t{}\t{}\t{}", clean_snippet(&p.user), p.period, p.snippet);
        }
    }
    out.push_str("END\n");
    out
}

/// Writes to a sibling temp file and renames, so readers never see a
/// half-written snapshot.
pub fn save_snapshot(kg: &KnowledgeGraph, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, snapshot_string(kg))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_snapshot(path: &Path) -> Result<KnowledgeGraph> {
    let text = fs::read_to_string(path)?;
    parse_snapshot(&path.display().to_string(), &text)
}

pub fn parse_snapshot(name: &str, text: &str) -> Result<KnowledgeGraph> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::Version(format!("{name}: truncated before {what}")))
    };

    let (_, header) = next("header")?;
    if header != SNAPSHOT_HEADER {
        return Err(Error::Version(format!("{name}: expected `{SNAPSHOT_HEADER}`, got `{header}`")));
    }
    let period = tagged_count(name, next("period")?, "period")?;
    let n_entities = tagged_count(name, next("entities")?, "entities")?;

    let mut kg = KnowledgeGraph::empty();
    kg.period = u32::try_from(period).map_err(|_| Error::parse(name, 2, "period out of range"))?;
    for _ in 0..n_entities {
        let (lineno, line) = next("entity record")?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(name, lineno, "entity record needs 6 fields"));
        }
        let wrap = |e: Error| Error::parse(name, lineno, e.to_string());
        let entity = Entity {
            id: EntityId::new(f[0]),
            class: f[1].parse().map_err(wrap)?,
            status: f[2].parse().map_err(wrap)?,
            first_period: f[3]
                .parse()
                .map_err(|_| Error::parse(name, lineno, "bad first_period"))?,
            surface: f[4].to_string(),
            aliases: if f[5].is_empty() {
                Vec::new()
            } else {
                f[5].split('|').map(str::to_string).collect()
            },
        };
        kg.add_entity(entity).map_err(wrap)?;
    }

    let n_triplets = tagged_count(name, next("triplets")?, "triplets")?;
    for _ in 0..n_triplets {
        let (lineno, line) = next("triplet record")?;
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(Error::parse(name, lineno, "triplet record needs 7 fields"));
        }
        let wrap = |e: Error| Error::parse(name, lineno, e.to_string());
        let num = |s: &str| {
            s.parse::<u64>()
                .map_err(|_| Error::parse(name, lineno, format!("bad count `{s}`")))
        };
        let mut t = Triplet::new(f[0], f[1].parse().map_err(wrap)?, f[2]).with_counts(num(f[3])?, num(f[4])?);
        t.status = f[5].parse().map_err(wrap)?;
        for _ in 0..num(f[6])? {
            let (pl, pline) = next("provenance record")?;
            let mut parts = pline.splitn(4, '\t');
            let (Some("+"), Some(user), Some(per), Some(snippet)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(Error::parse(name, pl, "malformed provenance record"));
            };
            t.provenance.push(Provenance {
                user: user.to_string(),
                period: per
                    .parse()
                    .map_err(|_| Error::parse(name, pl, "bad provenance period"))?,
                snippet: snippet.to_string(),
            });
        }
        let key = t.key();
        if key.head != t.head {
            return Err(Error::parse(name, lineno, "triplet not in canonical orientation"));
        }
        if kg.triplet(&key).is_some() {
            return Err(Error::parse(name, lineno, format!("duplicate triplet {key}")));
        }
        kg.add_triplet(t).map_err(wrap)?;
    }

    match next("END trailer")? {
        (_, "END") => {}
        (lineno, _) => return Err(Error::parse(name, lineno, "expected END")),
    }
    kg.validate()?;
    Ok(kg)
}

fn tagged_count(name: &str, (lineno, line): (usize, &str), tag: &str) -> Result<u64> {
    line.strip_prefix(tag)
        .and_then(|r| r.strip_prefix('\t'))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::parse(name, lineno, format!("expected `{tag}<TAB>count`")))
}
