//! Corpus files and run reports.
//!
//! A corpus file has one post per line:
//! `user_id<TAB>label<TAB>period<TAB>post_text`, label `1` for depressed.
//! A report directory holds `metrics.tsv`, one
//! `importance-<period>.tsv` per period, the candidate file and the
//! decision log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LoopState, PeriodMetrics};
use crate::detector::{tokenize, UserDocument};
use crate::error::{Error, Result};
use crate::expand::{candidates_to_string, decision_log_line};
use crate::num::Scalar;

pub const METRICS_HEADER: &str =
    "period\tnodes\tedges\tprecision\trecall\tf1\tconflicts\tcandidates\tnew_entities\tloss_ner\tloss_dep\tloss_refine\tloss_kg\tobjective";

pub fn metrics_tsv(metrics: &[PeriodMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for m in metrics {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            m.period,
            m.nodes,
            m.edges,
            m.precision,
            m.recall,
            m.f1,
            m.conflicts,
            m.candidates,
            m.new_entities,
            m.loss_ner,
            m.loss_dep,
            m.loss_refine,
            m.loss_kg,
            m.objective
        );
    }
    out
}

/// `entity<TAB>w_F`, by descending weight then id.
pub fn importance_tsv(m: &PeriodMetrics) -> String {
    let mut rows: Vec<_> = m.importance.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    let mut out = String::from("entity\tw_F\n");
    for (id, w) in rows {
        let _ = writeln!(out, "{id}\t{w}");
    }
    out
}

/// Name and contents of every report file of the committed state.
pub fn report_files<T: Scalar>(state: &LoopState<T>) -> Vec<(String, String)> {
    let mut out = vec![("metrics.tsv".to_string(), metrics_tsv(&state.metrics))];
    for m in &state.metrics {
        out.push((format!("importance-{}.tsv", m.period), importance_tsv(m)));
    }
    out.push(("candidates.cand".into(), candidates_to_string(state.queue.candidates())));
    let log: String = state.queue.log().iter().map(|d| decision_log_line(d) + "\n").collect();
    out.push(("decisions.log".into(), log));
    out
}

/// Writes the committed state's report files into `dir`.
pub fn write_report<T: Scalar>(state: &LoopState<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, text) in report_files(state) {
        fs::write(dir.join(name), text)?;
    }
    Ok(())
}

pub fn corpus_to_string(docs: &[UserDocument]) -> String {
    let mut out = String::new();
    for d in docs {
        for p in &d.posts {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", d.user_id, u8::from(d.label), d.period, p.join(" "));
        }
    }
    out
}

pub fn save_corpus(docs: &[UserDocument], path: &Path) -> Result<()> {
    fs::write(path, corpus_to_string(docs))?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<UserDocument>> {
    parse_corpus(&path.display().to_string(), &fs::read_to_string(path)?)
}

/// Users in order of first appearance; a user's lines must agree on label
/// and period.
pub fn parse_corpus(name: &str, text: &str) -> Result<Vec<UserDocument>> {
    let mut out: Vec<UserDocument> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.splitn(4, '\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(name, i + 1, "expected user_id, label, period and text"));
        }
        let label = match f[1] {
            "1" => true,
            "0" => false,
            l => return Err(Error::parse(name, i + 1, format!("label must be 0 or 1, got `{l}`"))),
        };
        let period: u32 = f[2].parse().map_err(|_| Error::parse(name, i + 1, "bad period"))?;
        let at = *index.entry(f[0].to_string()).or_insert_with(|| {
            out.push(UserDocument {
                user_id: f[0].to_string(),
                label,
                period,
                posts: Vec::new(),
            });
            out.len() - 1
        });
        let doc = &mut out[at];
        if doc.label != label || doc.period != period {
            return Err(Error::parse(name, i + 1, format!("user `{}` changes label or period", f[0])));
        }
        doc.posts.push(tokenize(f[3]));
    }
    Ok(out)
}
