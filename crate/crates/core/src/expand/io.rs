//! `KGLOOP-CAND v1` candidate files and tab-separated decision logs.
//!
//! ```text
//! KGLOOP-CAND v1
//! cand <id> <period> <scenario> <surface> <class> <flag> <relation> <kind> <endpoint> <endpoint_class> <pos> <neg> <mention_pos> <mention_neg> <state>
//! + <user> <period> <snippet>      (provenance of the preceding candidate)
//! END
//! ```
//!
//! `kind` is `entity`, `new` or `class`; `endpoint_class` is `-` for graph
//! entities. A decision log line is
//! `<reviewer> <candidate> <q1 yes|no> <q2 yes|no> <timestamp>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{CandidateTriplet, Endpoint, ReviewDecision, ReviewState, Scenario};
use crate::error::{Error, Result};
use crate::kg::{EntityId, FactorClass, Provenance, RelationKind};

pub const CAND_HEADER: &str = "KGLOOP-CAND v1";

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

pub fn candidates_to_string<'a>(cands: impl IntoIterator<Item = &'a CandidateTriplet>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CAND_HEADER}");
    for c in cands {
        let (kind, endpoint, endpoint_class) = match &c.endpoint {
            Endpoint::Entity { id } => ("entity", id.0.as_str(), "-"),
            Endpoint::New { surface, class } => ("new", surface.as_str(), class.name()),
            Endpoint::ClassNode { class } => ("class", class.name(), class.name()),
        };
        let _ = writeln!(
            out,
            "cand\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{kind}\t{endpoint}\t{endpoint_class}\t{}\t{}\t{}\t{}\t{}",
            c.id,
            c.period,
            c.scenario.name(),
            c.surface,
            c.class.name(),
            yes_no(c.new_category_flag),
            c.relation.name(),
            c.pos_count,
            c.neg_count,
            c.mention_pos,
            c.mention_neg,
            c.review_state.name()
        );
        for p in &c.provenance {
            let _ = writeln!(out, "+\t{}\t{}\t{}", p.user, p.period, p.snippet);
        }
    }
    out.push_str("END\n");
    out
}

pub fn save_candidates<'a>(cands: impl IntoIterator<Item = &'a CandidateTriplet>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, candidates_to_string(cands))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_candidates(path: &Path) -> Result<Vec<CandidateTriplet>> {
    parse_candidates(&path.display().to_string(), &fs::read_to_string(path)?)
}

pub fn parse_candidates(name: &str, text: &str) -> Result<Vec<CandidateTriplet>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, CAND_HEADER)) => {}
        other => {
            return Err(Error::Version(format!(
                "{name}: expected `{CAND_HEADER}`, got `{}`",
                other.map(|(_, l)| l).unwrap_or("")
            )))
        }
    }
    let mut out: Vec<CandidateTriplet> = Vec::new();
    let mut ended = false;
    for (lineno, line) in lines {
        let err = |m: &str| Error::parse(name, lineno, m.to_string());
        if ended {
            return Err(err("content after END"));
        }
        let f: Vec<&str> = line.split('\t').collect();
        match f[0] {
            "END" => ended = true,
            "+" => {
                if f.len() != 4 {
                    return Err(err("provenance needs 3 fields"));
                }
                let c = out.last_mut().ok_or_else(|| err("provenance before any candidate"))?;
                c.provenance.push(Provenance {
                    user: f[1].to_string(),
                    period: f[2].parse().map_err(|_| err("bad period"))?,
                    snippet: f[3].to_string(),
                });
            }
            "cand" => {
                if f.len() != 16 {
                    return Err(err("candidate needs 15 fields"));
                }
                let class = |s: &str| s.parse::<FactorClass>().map_err(|e| err(&e.to_string()));
                let count = |s: &str| s.parse::<u64>().map_err(|_| err(&format!("bad count `{s}`")));
                let endpoint = match f[8] {
                    "entity" => Endpoint::Entity { id: EntityId::new(f[9]) },
                    "new" => Endpoint::New {
                        surface: f[9].to_string(),
                        class: class(f[10])?,
                    },
                    "class" => Endpoint::ClassNode { class: class(f[9])? },
                    k => return Err(err(&format!("unknown endpoint kind `{k}`"))),
                };
                let flag = match f[6] {
                    "yes" => true,
                    "no" => false,
                    _ => return Err(err("flag must be yes or no")),
                };
                let c = CandidateTriplet {
                    id: f[1].to_string(),
                    period: f[2].parse().map_err(|_| err("bad period"))?,
                    scenario: f[3].parse::<Scenario>().map_err(|e| err(&e.to_string()))?,
                    surface: f[4].to_string(),
                    class: class(f[5])?,
                    new_category_flag: flag,
                    relation: f[7].parse::<RelationKind>().map_err(|e| err(&e.to_string()))?,
                    endpoint,
                    pos_count: count(f[11])?,
                    neg_count: count(f[12])?,
                    mention_pos: count(f[13])?,
                    mention_neg: count(f[14])?,
                    provenance: Vec::new(),
                    review_state: f[15].parse::<ReviewState>().map_err(|e| err(&e.to_string()))?,
                };
                if out.iter().any(|o| o.id == c.id) {
                    return Err(err(&format!("duplicate candidate `{}`", c.id)));
                }
                out.push(c);
            }
            "" => {}
            other => return Err(err(&format!("unknown record `{other}`"))),
        }
    }
    if !ended {
        return Err(Error::Version(format!("{name}: missing END")));
    }
    Ok(out)
}

pub fn decision_log_line(d: &ReviewDecision) -> String {
    format!(
        "{}\t{}\t{}\t{}\t{}",
        d.reviewer_id,
        d.candidate_id,
        yes_no(d.q1_relevant),
        yes_no(d.q2_relation_ok),
        d.timestamp
    )
}

pub fn parse_decision_log(name: &str, text: &str) -> Result<Vec<ReviewDecision>> {
    let answer = |s: &str, lineno| match s {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err(Error::parse(name, lineno, format!("expected yes or no, got `{s}`"))),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return Err(Error::parse(name, i + 1, "decision needs 5 fields"));
            }
            Ok(ReviewDecision {
                reviewer_id: f[0].to_string(),
                candidate_id: f[1].to_string(),
                q1_relevant: answer(f[2], i + 1)?,
                q2_relation_ok: answer(f[3], i + 1)?,
                timestamp: f[4].to_string(),
            })
        })
        .collect()
}

pub fn load_decision_log(path: &Path) -> Result<Vec<ReviewDecision>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    parse_decision_log(&path.display().to_string(), &fs::read_to_string(path)?)
}
