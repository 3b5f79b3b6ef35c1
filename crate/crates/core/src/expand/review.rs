//! Two-reviewer gate over candidate triplets.
//!
//! A verdict is a yes when both questions are answered yes. Two yes
//! verdicts approve, two no verdicts reject and a split leaves the
//! candidate inconsistent. The decision log is append-only and replaying it
//! over the same candidates reproduces every state.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{CandidateTriplet, Endpoint};
use crate::error::{Error, Result};
use crate::kg::FactorClass;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReviewState {
    Pending,
    /// one verdict in, waiting for the second reviewer
    Awaiting,
    Approved,
    Rejected,
    Inconsistent,
}

impl ReviewState {
    pub const ALL: [ReviewState; 5] = [
        ReviewState::Pending,
        ReviewState::Awaiting,
        ReviewState::Approved,
        ReviewState::Rejected,
        ReviewState::Inconsistent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReviewState::Pending => "pending",
            ReviewState::Awaiting => "awaiting",
            ReviewState::Approved => "approved",
            ReviewState::Rejected => "rejected",
            ReviewState::Inconsistent => "inconsistent",
        }
    }

    pub fn is_decided(self) -> bool {
        matches!(self, ReviewState::Approved | ReviewState::Rejected | ReviewState::Inconsistent)
    }
}

impl std::str::FromStr for ReviewState {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ReviewState::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown review state `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub candidate_id: String,
    pub reviewer_id: String,
    /// helpful for depression diagnosis
    pub q1_relevant: bool,
    /// the proposed relation is reasonable
    pub q2_relation_ok: bool,
    /// ISO-8601, UTC
    pub timestamp: String,
}

impl ReviewDecision {
    pub fn yes(&self) -> bool {
        self.q1_relevant && self.q2_relation_ok
    }
}

/// Outcome of two verdicts.
pub fn gate(first: bool, second: bool) -> ReviewState {
    match (first, second) {
        (true, true) => ReviewState::Approved,
        (false, false) => ReviewState::Rejected,
        _ => ReviewState::Inconsistent,
    }
}

/// Normalises an RFC 3339 timestamp to UTC with second precision.
pub fn normalize_timestamp(ts: &str) -> Result<String> {
    let t = DateTime::parse_from_rfc3339(ts)
        .map_err(|e| Error::InvalidArgument(format!("timestamp `{ts}`: {e}")))?;
    Ok(t.with_timezone(&Utc).to_rfc3339_opts(SecondsFormat::Secs, true))
}

pub fn now_timestamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Page {
    pub total: usize,
    /// 1-based
    pub page: usize,
    pub page_size: usize,
    pub items: Vec<CandidateTriplet>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    candidates: BTreeMap<String, CandidateTriplet>,
    log: Vec<ReviewDecision>,
    applied: BTreeSet<String>,
}

impl ReviewQueue {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a candidate in the pending state.
    pub fn add(&mut self, mut c: CandidateTriplet) -> Result<()> {
        if self.candidates.contains_key(&c.id) {
            return Err(Error::InvalidArgument(format!("candidate id `{}` already queued", c.id)));
        }
        c.review_state = ReviewState::Pending;
        self.candidates.insert(c.id.clone(), c);
        Ok(())
    }

    /// True when an undecided or approved candidate already proposes the same
    /// triplet.
    pub fn proposes(&self, c: &CandidateTriplet) -> bool {
        self.candidates.values().any(|q| {
            q.review_state != ReviewState::Rejected && q.surface == c.surface && q.relation == c.relation && q.endpoint == c.endpoint
        })
    }

    pub fn get(&self, id: &str) -> Option<&CandidateTriplet> {
        self.candidates.get(id)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &CandidateTriplet> {
        self.candidates.values()
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn log(&self) -> &[ReviewDecision] {
        &self.log
    }

    pub fn verdicts<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a ReviewDecision> + 'a {
        self.log.iter().filter(move |d| d.candidate_id == id)
    }

    /// Records one verdict and returns the candidate's new state.
    pub fn post(&mut self, d: ReviewDecision) -> Result<ReviewState> {
        let timestamp = normalize_timestamp(&d.timestamp)?;
        if d.reviewer_id.trim().is_empty() {
            return Err(Error::InvalidArgument("reviewer id is empty".into()));
        }
        let state = self
            .candidates
            .get(&d.candidate_id)
            .ok_or_else(|| Error::UnknownCandidate(d.candidate_id.clone()))?
            .review_state;
        if self.verdicts(&d.candidate_id).any(|v| v.reviewer_id == d.reviewer_id) {
            return Err(Error::DuplicateVerdict {
                candidate: d.candidate_id,
                reviewer: d.reviewer_id,
            });
        }
        let next = match state {
            ReviewState::Pending => ReviewState::Awaiting,
            ReviewState::Awaiting => {
                let first = self.verdicts(&d.candidate_id).next().expect("awaiting has one verdict").yes();
                gate(first, d.yes())
            }
            _ => return Err(Error::AlreadyDecided(d.candidate_id)),
        };
        self.candidates.get_mut(&d.candidate_id).expect("checked").review_state = next;
        self.log.push(ReviewDecision { timestamp, ..d });
        Ok(next)
    }

    /// Fresh queue over `candidates` with `log` replayed in order.
    pub fn replay(candidates: impl IntoIterator<Item = CandidateTriplet>, log: &[ReviewDecision]) -> Result<Self> {
        let mut q = ReviewQueue::new();
        for c in candidates {
            q.add(c)?;
        }
        for d in log {
            q.post(d.clone())?;
        }
        Ok(q)
    }

    /// Filtered candidates, pending first, then by (period, id).
    pub fn list(&self, filter: Option<ReviewState>, page: usize, page_size: usize) -> Result<Page> {
        if page == 0 || page_size == 0 {
            return Err(Error::InvalidArgument("page and page size start at 1".into()));
        }
        let mut items: Vec<&CandidateTriplet> = self
            .candidates
            .values()
            .filter(|c| filter.is_none_or(|f| c.review_state == f))
            .collect();
        items.sort_by(|a, b| {
            (a.review_state != ReviewState::Pending, a.period, &a.id).cmp(&(
                b.review_state != ReviewState::Pending,
                b.period,
                &b.id,
            ))
        });
        let total = items.len();
        let items = items
            .into_iter()
            .skip((page - 1) * page_size)
            .take(page_size)
            .cloned()
            .collect();
        Ok(Page {
            total,
            page,
            page_size,
            items,
        })
    }

    pub fn counts(&self) -> BTreeMap<ReviewState, usize> {
        let mut out: BTreeMap<ReviewState, usize> = ReviewState::ALL.iter().map(|&s| (s, 0)).collect();
        for c in self.candidates.values() {
            *out.get_mut(&c.review_state).expect("all states") += 1;
        }
        out
    }

    /// Approved candidates not yet written into a graph, in id order.
    pub fn unapplied(&self) -> Vec<&CandidateTriplet> {
        self.candidates
            .values()
            .filter(|c| c.review_state == ReviewState::Approved && !self.applied.contains(&c.id))
            .collect()
    }

    pub(crate) fn mark_applied(&mut self, id: &str) {
        self.applied.insert(id.to_string());
    }
}

/// Reviewer pair that knows the true emergent surfaces and their classes.
/// Both reviewers give the same verdict: relevant iff every new surface in
/// the triplet is a true one, relation fine iff every proposed class is the
/// true class.
pub fn oracle_decisions(queue: &ReviewQueue, truth: &BTreeMap<String, FactorClass>, timestamp: &str) -> Vec<ReviewDecision> {
    let mut out = Vec::new();
    for c in queue.candidates().filter(|c| c.review_state == ReviewState::Pending) {
        let mut news = vec![(c.surface.as_str(), c.class)];
        if let Endpoint::New { surface, class } = &c.endpoint {
            news.push((surface.as_str(), *class));
        }
        let q1 = news.iter().all(|(s, _)| truth.contains_key(*s));
        let q2 = q1 && news.iter().all(|(s, cl)| truth.get(*s) == Some(cl));
        for reviewer in ["oracle-a", "oracle-b"] {
            out.push(ReviewDecision {
                candidate_id: c.id.clone(),
                reviewer_id: reviewer.into(),
                q1_relevant: q1,
                q2_relation_ok: q2,
                timestamp: timestamp.into(),
            });
        }
    }
    out
}

/// Deterministic timestamp for automated reviews of `period`.
pub fn period_timestamp(period: u32) -> String {
    DateTime::<Utc>::from_timestamp(i64::from(period) * 86_400, 0)
        .expect("in range")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expand::tests::candidate;

    fn decision(c: &str, r: &str, q1: bool, q2: bool) -> ReviewDecision {
        ReviewDecision {
            candidate_id: c.into(),
            reviewer_id: r.into(),
            q1_relevant: q1,
            q2_relation_ok: q2,
            timestamp: "2024-03-01T10:00:00Z".into(),
        }
    }

    fn queue(n: usize) -> ReviewQueue {
        let mut q = ReviewQueue::new();
        for i in 0..n {
            q.add(candidate(&format!("c1-{i:03}"), 1)).unwrap();
        }
        q
    }

    #[test]
    fn gate_table() {
        for (a1, a2, b1, b2, want) in [
            (true, true, true, true, ReviewState::Approved),
            (true, true, true, false, ReviewState::Inconsistent),
            (false, true, false, false, ReviewState::Rejected),
            (false, false, true, true, ReviewState::Inconsistent),
            (true, false, false, true, ReviewState::Rejected),
        ] {
            let mut q = queue(1);
            assert_eq!(q.post(decision("c1-000", "a", a1, a2)).unwrap(), ReviewState::Awaiting);
            assert_eq!(q.post(decision("c1-000", "b", b1, b2)).unwrap(), want);
        }
    }

    #[test]
    fn duplicate_unknown_and_decided() {
        let mut q = queue(1);
        q.post(decision("c1-000", "a", true, true)).unwrap();
        assert!(matches!(
            q.post(decision("c1-000", "a", true, true)),
            Err(Error::DuplicateVerdict { .. })
        ));
        assert!(matches!(
            q.post(decision("nope", "a", true, true)),
            Err(Error::UnknownCandidate(_))
        ));
        q.post(decision("c1-000", "b", true, true)).unwrap();
        assert!(matches!(
            q.post(decision("c1-000", "c", true, true)),
            Err(Error::AlreadyDecided(_))
        ));
        assert_eq!(q.log().len(), 2);
    }

    #[test]
    fn bad_timestamp_is_refused() {
        let mut q = queue(1);
        let mut d = decision("c1-000", "a", true, true);
        d.timestamp = "yesterday".into();
        assert!(q.post(d).is_err());
        assert!(q.log().is_empty());
    }

    #[test]
    fn pagination_is_stable() {
        let q = queue(5);
        let sizes: Vec<usize> = (1..=3).map(|p| q.list(None, p, 2).unwrap().items.len()).collect();
        assert_eq!(sizes, [2, 2, 1]);
        let ids: Vec<String> = (1..=3)
            .flat_map(|p| q.list(None, p, 2).unwrap().items)
            .map(|c| c.id)
            .collect();
        assert_eq!(ids, ["c1-000", "c1-001", "c1-002", "c1-003", "c1-004"]);
        assert_eq!(q.list(None, 4, 2).unwrap().items.len(), 0);
        assert_eq!(ReviewQueue::new().list(None, 1, 20).unwrap().total, 0);
    }

    #[test]
    fn filter_and_pending_first() {
        let mut q = queue(4);
        q.post(decision("c1-000", "a", true, true)).unwrap();
        q.post(decision("c1-000", "b", true, true)).unwrap();
        assert_eq!(q.list(Some(ReviewState::Pending), 1, 10).unwrap().total, 3);
        let all = q.list(None, 1, 10).unwrap();
        assert_eq!(all.items.last().unwrap().id, "c1-000");
    }

    #[test]
    fn replay_reproduces_states() {
        let mut q = queue(3);
        q.post(decision("c1-000", "a", true, true)).unwrap();
        q.post(decision("c1-001", "a", false, false)).unwrap();
        q.post(decision("c1-000", "b", true, true)).unwrap();
        q.post(decision("c1-001", "b", true, true)).unwrap();
        q.post(decision("c1-002", "b", true, true)).unwrap();
        let fresh: Vec<CandidateTriplet> = q.candidates().cloned().collect();
        let r = ReviewQueue::replay(fresh, q.log()).unwrap();
        assert_eq!(r, q);
    }

    #[test]
    fn timestamps_normalise_to_utc() {
        assert_eq!(normalize_timestamp("2024-03-01T12:00:00+02:00").unwrap(), "2024-03-01T10:00:00Z");
        assert_eq!(period_timestamp(2), "1970-01-03T00:00:00Z");
    }
}
