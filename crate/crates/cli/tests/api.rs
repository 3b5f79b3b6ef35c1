use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use kgloop_cli::api::{router, DecisionReply, Report, Service, Status};
use kgloop_cli::commands::{self, Ctx, GraphSource};
use kgloop_cli::workspace::{load_config, Workspace};
use kgloop_core::closed_loop::Mode;
use kgloop_core::expand::{
    load_decision_log, CandidateTriplet, Endpoint, Page, ReviewDecision, ReviewQueue, ReviewState, Scenario,
};
use kgloop_core::kg::{FactorClass, Provenance, RelationKind};
use serde_json::{json, Value};
use tower::ServiceExt;

const TINY: [&str; 7] = [
    "periods=1",
    "synth.pretrain_users=80",
    "synth.users_per_period=40",
    "kge.epochs=3",
    "detector.epochs=3",
    "refine.steps=5",
    "mcts.budget=100",
];

fn ctx(dir: &std::path::Path) -> Ctx {
    let overrides: Vec<String> = TINY.iter().map(|s| s.to_string()).collect();
    Ctx {
        ws: Workspace::new(dir),
        cfg: load_config(None, &overrides, Some(9)).unwrap(),
    }
}

fn candidate(i: usize, period: u32) -> CandidateTriplet {
    CandidateTriplet {
        id: format!("c{period}-{i:03}"),
        period,
        scenario: Scenario::Iii,
        surface: format!("new thing {i}"),
        class: FactorClass::PhySym,
        new_category_flag: false,
        relation: RelationKind::Subcat,
        endpoint: Endpoint::ClassNode { class: FactorClass::PhySym },
        pos_count: 4,
        neg_count: 1,
        mention_pos: 4,
        mention_neg: 1,
        provenance: vec![Provenance {
            user: "u1".into(),
            period,
            snippet: format!("my new thing {i} again"),
        }],
        review_state: ReviewState::Pending,
    }
}

fn verdict(id: &str, reviewer: &str, yes: bool) -> ReviewDecision {
    ReviewDecision {
        candidate_id: id.into(),
        reviewer_id: reviewer.into(),
        q1_relevant: yes,
        q2_relation_ok: yes,
        timestamp: "2024-03-01T10:00:00Z".into(),
    }
}

/// Pretrained workspace whose queue holds `n` candidates spread over two
/// periods, with `approved` of them already decided.
fn workspace(n: usize, approved: usize) -> (tempfile::TempDir, Ctx) {
    let dir = tempfile::tempdir().unwrap();
    let c = ctx(dir.path());
    let none = GraphSource {
        snapshot: None,
        entities: None,
        triplets: None,
    };
    commands::init(&c, None, none, false).unwrap();
    commands::pretrain(&c, Mode::Full).unwrap();
    let mut state = c.ws.state().unwrap();
    for i in (0..n).rev() {
        state.queue.add(candidate(i, 1 + (i % 2) as u32)).unwrap();
    }
    let mut ids: Vec<String> = state.queue.candidates().map(|c| c.id.clone()).collect();
    ids.sort();
    for id in ids.iter().take(approved) {
        state.queue.post(verdict(id, "r1", true)).unwrap();
        state.queue.post(verdict(id, "r2", true)).unwrap();
    }
    c.ws.commit(&state).unwrap();
    (dir, c)
}

fn app(c: &Ctx) -> Router {
    router(Arc::new(Service::open(c.ws.clone()).unwrap()))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(app: &Router, reviewer: Option<&str>, body: Value) -> (StatusCode, Value) {
    let mut req = Request::post("/api/decisions").header("content-type", "application/json");
    if let Some(r) = reviewer {
        req = req.header("X-Reviewer-Id", r);
    }
    call(app, req.body(Body::from(body.to_string())).unwrap()).await
}

fn page(v: Value) -> Page {
    serde_json::from_value(v).unwrap()
}

#[tokio::test]
async fn empty_queue_gives_an_empty_page() {
    let (_d, c) = workspace(0, 0);
    let (s, v) = get(&app(&c), "/api/candidates").await;
    assert_eq!(s, StatusCode::OK);
    let p = page(v);
    assert_eq!((p.total, p.items.len()), (0, 0));
}

#[tokio::test]
async fn state_filter_counts_only_matching_candidates() {
    let (_d, c) = workspace(4, 1);
    let app = app(&c);
    let p = page(get(&app, "/api/candidates?state=pending").await.1);
    assert_eq!(p.total, 3);
    assert!(p.items.iter().all(|c| c.review_state == ReviewState::Pending));
    let all = page(get(&app, "/api/candidates?page_size=10").await.1);
    assert_eq!(all.total, 4);
    // pending first
    assert_eq!(all.items.last().unwrap().review_state, ReviewState::Approved);
    let (s, _) = get(&app, "/api/candidates?state=maybe").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn pages_partition_the_queue_in_a_stable_order() {
    let (_d, c) = workspace(5, 0);
    let app = app(&c);
    let mut seen = Vec::new();
    for (n, size) in [(1, 2), (2, 2), (3, 1)] {
        let p = page(get(&app, &format!("/api/candidates?state=pending&page={n}&page_size=2")).await.1);
        assert_eq!((p.total, p.items.len()), (5, size));
        seen.extend(p.items.into_iter().map(|c| (c.period, c.id)));
    }
    let mut sorted = seen.clone();
    sorted.sort();
    assert_eq!(seen, sorted);
    sorted.dedup();
    assert_eq!(sorted.len(), 5);
    let again = page(get(&app, "/api/candidates?state=pending&page=2&page_size=2").await.1);
    assert_eq!(again.items.iter().map(|c| (c.period, c.id.clone())).collect::<Vec<_>>(), seen[2..4]);
    let (s, _) = get(&app, "/api/candidates?page=0").await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn decisions_follow_the_gate_and_reject_repeats() {
    let (_d, c) = workspace(3, 0);
    let app = app(&c);
    let yes = |id: &str| json!({ "candidate_id": id, "q1_relevant": true, "q2_relation_ok": true });
    let reply = |v: Value| -> DecisionReply { serde_json::from_value(v).unwrap() };

    let (s, v) = post(&app, Some("ana"), yes("c1-000")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(reply(v).review_state, ReviewState::Awaiting);
    let (s, _) = post(&app, Some("ana"), yes("c1-000")).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, v) = post(&app, Some("ben"), yes("c1-000")).await;
    assert_eq!((s, reply(v).review_state), (StatusCode::OK, ReviewState::Approved));
    let (s, _) = post(&app, Some("cai"), yes("c1-000")).await;
    assert_eq!(s, StatusCode::CONFLICT);

    let no = json!({ "candidate_id": "c2-001", "q1_relevant": false, "q2_relation_ok": true });
    post(&app, Some("ana"), no.clone()).await;
    let (_, v) = post(&app, Some("ben"), no).await;
    assert_eq!(reply(v).review_state, ReviewState::Rejected);

    post(&app, Some("ana"), yes("c1-002")).await;
    let split = json!({ "candidate_id": "c1-002", "q1_relevant": true, "q2_relation_ok": false });
    let (_, v) = post(&app, Some("ben"), split).await;
    assert_eq!(reply(v).review_state, ReviewState::Inconsistent);

    let (s, _) = post(&app, Some("ana"), yes("c9-999")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = post(&app, None, yes("c1-000")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().contains("X-Reviewer-Id"));
    let body = json!({ "candidate_id": "c1-002", "reviewer_id": "dan", "q1_relevant": true, "q2_relation_ok": true });
    let (s, _) = post(&app, Some("eve"), body).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let stamped = json!({ "candidate_id": "c1-002", "q1_relevant": true, "q2_relation_ok": true, "timestamp": "yesterday" });
    let (s, _) = post(&app, Some("fay"), stamped).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    // the log on disk replays to the committed queue
    let state = c.ws.state().unwrap();
    let log = load_decision_log(&c.ws.log_path()).unwrap();
    assert_eq!(log.len(), 6);
    assert_eq!(log, state.queue.log());
    let mut fresh: Vec<CandidateTriplet> = state.queue.candidates().cloned().collect();
    for f in &mut fresh {
        f.review_state = ReviewState::Pending;
    }
    assert_eq!(ReviewQueue::replay(fresh, &log).unwrap().counts(), state.queue.counts());
    assert!(log.iter().all(|d| d.timestamp.ends_with('Z')));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_reviewers_all_land() {
    let (_d, c) = workspace(6, 0);
    let app = app(&c);
    let mut tasks = Vec::new();
    for i in 0..6 {
        for r in ["ana", "ben"] {
            let app = app.clone();
            let body = json!({ "candidate_id": format!("c{}-{i:03}", 1 + i % 2), "q1_relevant": true, "q2_relation_ok": true });
            tasks.push(tokio::spawn(async move { post(&app, Some(r), body).await.0 }));
        }
    }
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let status: Status = serde_json::from_value(get(&app, "/api/status").await.1).unwrap();
    assert_eq!(status.candidates[&ReviewState::Approved], 6);
    assert_eq!(status.decisions, 12);
    assert_eq!(load_decision_log(&c.ws.log_path()).unwrap().len(), 12);
}

#[tokio::test]
async fn status_reflects_commits_from_other_writers() {
    let (_d, c) = workspace(2, 1);
    let app = app(&c);
    let status: Status = serde_json::from_value(get(&app, "/api/status").await.1).unwrap();
    assert_eq!((status.period, status.mode.as_str()), (0, "full"));
    assert_eq!(status.candidates[&ReviewState::Pending], 1);
    assert_eq!(status.decisions, 2);
    assert!(status.last.is_none());

    // a loop process commits a period while the server runs
    commands::run_loop(&c, Mode::Full, None).unwrap();
    let status: Status = serde_json::from_value(get(&app, "/api/status").await.1).unwrap();
    assert_eq!(status.period, 1);
    assert_eq!(status.last.unwrap().period, 1);
}

#[tokio::test]
async fn reports_are_stable_and_unknown_runs_are_missing() {
    let (_d, c) = workspace(1, 0);
    commands::run_loop(&c, Mode::Full, Some("one")).unwrap();
    let app = app(&c);
    let (s, v) = get(&app, "/api/report/one").await;
    assert_eq!(s, StatusCode::OK);
    let one: Report = serde_json::from_value(v).unwrap();
    assert_eq!(one.files["metrics.tsv"].lines().count(), 2);
    assert!(one.files.contains_key("importance-1.tsv"));

    commands::report(&c, "again").unwrap();
    let again: Report = serde_json::from_value(get(&app, "/api/report/again").await.1).unwrap();
    assert_eq!(again.files, one.files);
    let current: Report = serde_json::from_value(get(&app, "/api/report/current").await.1).unwrap();
    assert_eq!(current.files, one.files);

    assert_eq!(get(&app, "/api/report/nope").await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(&app, "/api/report/..").await.0, StatusCode::BAD_REQUEST);
}
