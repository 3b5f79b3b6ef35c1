//! The closed loop over time-sliced corpora.
//!
//! Period 0 seeds the graph with the co-mentioned pairs that lean towards
//! depressed authors and pretrains the embeddings. Every later
//! period trains the detector on all training users so far, evaluates it on
//! a held-out set fixed at the start, harvests co-mentions from the new
//! slice, refines the embeddings and, every `expansion_interval` periods,
//! proposes and applies reviewed candidates before retraining the graph
//! loss. Importance weights are recomputed at the end of each period and
//! used by the detector in the next one.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, LoopConfig, Reviewer};
pub use report::{
    corpus_to_string, importance_tsv, load_corpus, metrics_tsv, parse_corpus, report_files, save_corpus,
    write_report, METRICS_HEADER,
};

use crate::detector::{
    featurize, predict, train_joint, Confusion, DetectorParams, Lexicon, UserDocument, UserFeatures, Vocab,
};
use crate::error::{Error, Result};
use crate::expand::{
    apply_decisions, generate_candidates, oracle_decisions, period_timestamp, ReviewDecision, ReviewQueue,
};
use crate::importance::{class_hop_from_counts, compute_paths, importance_table, MctsConfig, TransitionGraph};
use crate::kg::{EntityId, FactorClass, KnowledgeGraph, Triplet, TripletKey};
use crate::kge::{pretrain, Model, TrainConfig};
use crate::num::Scalar;
use crate::refine::{apply_harvest, conflict_records, harvest, partition_evidence, refine, Harvest, RefineConfig};
use crate::seed;
use crate::synth::synth_corpus;

/// Which pathway is switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Full,
    NoExpansion,
    NoRefine,
    NoImportance,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Full, Mode::NoExpansion, Mode::NoRefine, Mode::NoImportance];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::NoExpansion => "no-expansion",
            Mode::NoRefine => "no-refine",
            Mode::NoImportance => "no-importance",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownMode(s.to_string()))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodMetrics {
    pub period: u32,
    pub nodes: usize,
    pub edges: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub conflicts: usize,
    /// candidates queued this period
    pub candidates: usize,
    /// entities added this period
    pub new_entities: usize,
    pub loss_ner: f64,
    pub loss_dep: f64,
    pub loss_refine: f64,
    pub loss_kg: f64,
    /// `ner + λ·dep + γ·refine (+ μ·kg)`
    pub objective: f64,
    /// w_F of every factor entity after the period
    pub importance: BTreeMap<EntityId, f64>,
}

/// Everything carried from one committed period to the next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LoopState<T> {
    pub mode: Mode,
    /// last committed period
    pub period: u32,
    pub kg: KnowledgeGraph,
    pub model: Model<T>,
    pub detector: DetectorParams<T>,
    pub queue: ReviewQueue,
    pub holdout: Vec<UserDocument>,
    /// training users of periods 1..=period
    pub train_docs: Vec<UserDocument>,
    pub weights: BTreeMap<EntityId, f64>,
    pub pretrain_losses: Vec<f64>,
    pub metrics: Vec<PeriodMetrics>,
}

impl<T: Scalar> LoopState<T> {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_json()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn is_held_out(&self) -> BTreeSet<&str> {
        self.holdout.iter().map(|d| d.user_id.as_str()).collect()
    }
}

/// Users of periods ≥ 1 drawn once for evaluation.
pub fn select_holdout(corpus: &[UserDocument], fraction: f64, seed: u64) -> Vec<UserDocument> {
    let mut ids: Vec<&str> = corpus
        .iter()
        .filter(|d| d.period >= 1)
        .map(|d| d.user_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    ids.shuffle(&mut seed::rng(seed, 0, "holdout"));
    let n = (fraction * ids.len() as f64).round() as usize;
    let chosen: BTreeSet<&str> = ids.into_iter().take(n).collect();
    let mut out: Vec<UserDocument> = corpus
        .iter()
        .filter(|d| d.period >= 1 && chosen.contains(d.user_id.as_str()))
        .cloned()
        .collect();
    out.sort_by(|a, b| a.user_id.cmp(&b.user_id));
    out
}

fn class_counts(h: &Harvest, kg: &KnowledgeGraph) -> BTreeMap<FactorClass, u64> {
    let mut counts: BTreeMap<FactorClass, u64> = FactorClass::ALL.iter().map(|&c| (c, 0)).collect();
    for (id, c) in &h.mentions {
        if let Some(class) = kg.entity(id).and_then(|e| e.class.factor()) {
            *counts.entry(class).or_default() += c.pos + c.neg;
        }
    }
    counts
}

/// Importance weights with class hops taken from the mentions in `docs`.
fn importance_weights<T: Scalar>(
    kg: &KnowledgeGraph,
    model: &Model<T>,
    docs: &[UserDocument],
    cfg: &LoopConfig,
    mode: Mode,
    period: u32,
) -> Result<BTreeMap<EntityId, f64>> {
    if mode == Mode::NoImportance {
        return Ok(kg.factor_entities().map(|e| (e.id.clone(), 1.0)).collect());
    }
    let h = harvest(docs, &Lexicon::from_graph(kg), kg, period);
    let hops = class_hop_from_counts(&class_counts(&h, kg), &cfg.class_hop);
    let tg = TransitionGraph::build(kg, model, &hops)?;
    let mcts = MctsConfig {
        seed: seed::derive(cfg.seed, period, "mcts"),
        ..cfg.mcts
    };
    let paths = compute_paths(&tg, kg, &mcts);
    importance_table(kg, model, &paths, cfg.top_m)
}

fn kge_positives(kg: &KnowledgeGraph) -> Vec<TripletKey> {
    kg.active_triplets().filter(|t| t.pos_count > 0).map(Triplet::key).collect()
}

fn train_config(cfg: &LoopConfig, lr: f64, epochs: usize, period: u32, purpose: &str) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        negatives: cfg.negatives,
        seed: seed::derive(cfg.seed, period, purpose),
        d: cfg.geometry.d,
        ..cfg.train.clone()
    }
}

/// Seeds the graph from the period-0 users, pretrains the embeddings and
/// computes the first importance weights. `corpus` holds every period; the
/// held-out users are drawn from periods ≥ 1.
pub fn init_state<T: Scalar>(
    cfg: &LoopConfig,
    mode: Mode,
    seed_kg: KnowledgeGraph,
    corpus: &[UserDocument],
) -> Result<LoopState<T>> {
    cfg.validate()?;
    let mut kg = seed_kg;
    kg.validate()?;
    let period0: Vec<UserDocument> = corpus.iter().filter(|d| d.period == 0).cloned().collect();
    let mut h = harvest(&period0, &Lexicon::from_graph(&kg), &kg, 0);
    for (key, c) in &h.pairs {
        let leans_positive = c.neg as f64 <= cfg.seed_max_negative_share * (c.pos + c.neg) as f64;
        if c.pos >= cfg.seed_min_support && leans_positive && kg.triplet(key).is_none() {
            let mut t = Triplet::new(key.head.0.clone(), key.relation, key.tail.0.clone());
            t.provenance = c.provenance.clone();
            kg.add_triplet(t)?;
        }
    }
    h.pairs.retain(|k, _| kg.triplet(k).is_some());
    apply_harvest(&mut kg, &h);
    kg.validate()?;

    let mut model = Model::init(&kg, cfg.geometry, &mut seed::rng(cfg.seed, 0, "model"))?;
    let report = pretrain(
        &kg,
        &kge_positives(&kg),
        &mut model,
        &train_config(cfg, cfg.train.learning_rate, cfg.train.epochs, 0, "pretrain"),
    )?;
    let detector_cfg = crate::detector::DetectorConfig {
        lambda: cfg.lambda,
        ..cfg.detector.clone()
    };
    let detector = DetectorParams::init(
        Vocab::default(),
        model.dim(),
        &detector_cfg,
        &mut seed::rng(cfg.seed, 0, "detector"),
    )?;
    let weights = importance_weights(&kg, &model, &period0, cfg, mode, 0)?;
    Ok(LoopState {
        mode,
        period: 0,
        kg,
        model,
        detector,
        queue: ReviewQueue::new(),
        holdout: select_holdout(corpus, cfg.holdout_fraction, cfg.seed),
        train_docs: Vec::new(),
        weights,
        pretrain_losses: report.epoch_losses,
        metrics: Vec::new(),
    })
}

fn features<T: Scalar>(
    docs: &[UserDocument],
    lex: &Lexicon,
    state: &LoopState<T>,
) -> Vec<UserFeatures<T>> {
    docs.iter()
        .map(|d| featurize(d, lex, &state.detector, &state.model.emb, Some(&state.weights)))
        .collect()
}

/// One period on a copy of `state`; the input state is left untouched when
/// any step fails. `slice` may contain held-out users, which are skipped.
/// The oracle reviews new candidates when `cfg.reviewer` asks for it;
/// otherwise decisions already in the queue are applied.
pub fn run_period<T: Scalar>(
    state: &LoopState<T>,
    slice: &[UserDocument],
    cfg: &LoopConfig,
) -> Result<LoopState<T>> {
    let truth = cfg.synth.truth();
    run_period_with(state, slice, cfg, |queue, k| match cfg.reviewer {
        Reviewer::Oracle => oracle_decisions(queue, &truth, &period_timestamp(k)),
        Reviewer::External => Vec::new(),
    })
}

/// [`run_period`] with `review` called on the queue, after this period's
/// candidates are added, to supply decisions before they are applied.
pub fn run_period_with<T: Scalar>(
    state: &LoopState<T>,
    slice: &[UserDocument],
    cfg: &LoopConfig,
    mut review: impl FnMut(&ReviewQueue, u32) -> Vec<ReviewDecision>,
) -> Result<LoopState<T>> {
    let k = state.period + 1;
    if let Some(d) = slice.iter().find(|d| d.period != k) {
        return Err(Error::InvalidArgument(format!(
            "user `{}` belongs to period {}, expected {k}",
            d.user_id, d.period
        )));
    }
    let mut s = state.clone();
    let held_out = state.is_held_out();
    let train: Vec<UserDocument> = slice
        .iter()
        .filter(|d| !held_out.contains(d.user_id.as_str()))
        .cloned()
        .collect();
    if train.is_empty() {
        return Err(Error::Empty(format!("training users of period {k}")));
    }
    s.train_docs.extend(train.iter().cloned());

    // detect
    let mut rng = seed::rng(cfg.seed, k, "vocab");
    let tokens: Vec<&str> = train.iter().flat_map(|d| d.posts.iter().flatten()).map(String::as_str).collect();
    s.detector.grow_vocab(tokens, &mut rng);
    let lex = Lexicon::from_graph(&s.kg);
    let users = features(&s.train_docs, &lex, &s);
    let joint = train_joint(&users, &mut s.detector, &cfg.detector, &mut seed::rng(cfg.seed, k, "detector"))?;

    // evaluate
    let mut confusion = Confusion::default();
    for u in features(&s.holdout, &lex, &s) {
        confusion.add(predict(&s.detector, &u)?.f64() >= cfg.detector.threshold, u.label);
    }
    let prf = confusion.prf();

    // harvest and refine
    let h = harvest(&train, &lex, &s.kg, k);
    apply_harvest(&mut s.kg, &h);
    let (clean, contested) = partition_evidence(&s.kg, &h);
    let conflicts = conflict_records(&s.kg, &s.model, cfg.train.encoder, &contested, cfg.tau)?;
    let loss_refine = if s.mode == Mode::NoRefine {
        0.0
    } else {
        let rcfg = RefineConfig {
            tau: cfg.tau,
            negatives: cfg.negatives,
            seed: seed::derive(cfg.seed, k, "refine"),
            ..cfg.refine.clone()
        };
        let r = refine(&s.kg, &mut s.model, cfg.train.encoder, &clean, &conflicts, cfg.gamma_loss, &rcfg)?;
        r.losses.last().copied().unwrap_or(0.0)
    };

    // expand
    let mut candidates = 0;
    let mut new_entities = 0;
    let mut loss_kg = None;
    if s.mode != Mode::NoExpansion && k.is_multiple_of(cfg.expansion_interval) {
        for c in generate_candidates(&train, &s.kg, &s.detector, k, &cfg.expand) {
            if !s.queue.proposes(&c) {
                s.queue.add(c)?;
                candidates += 1;
            }
        }
        for d in review(&s.queue, k) {
            s.queue.post(d)?;
        }
        let applied = apply_decisions(&mut s.kg, &mut s.queue)?;
        new_entities = applied.entities.len();
        s.kg.validate()?;
        s.model.emb.ensure_entities(&s.kg, &mut seed::rng(cfg.seed, k, "expand"));
        let tcfg = train_config(cfg, cfg.train.learning_rate * cfg.mu, cfg.retrain_epochs, k, "retrain");
        let r = pretrain(&s.kg, &kge_positives(&s.kg), &mut s.model, &tcfg)?;
        loss_kg = Some(r.final_loss().unwrap_or(0.0));
    }

    // importance for the next period
    s.weights = importance_weights(&s.kg, &s.model, &train, cfg, s.mode, k)?;

    let loss_ner = joint.ner.last().copied().unwrap_or(0.0);
    let loss_dep = joint.dep.last().copied().unwrap_or(0.0);
    let objective =
        loss_ner + cfg.lambda * loss_dep + cfg.gamma_loss * loss_refine + loss_kg.map_or(0.0, |l| cfg.mu * l);
    let (nodes, edges) = s.kg.stats();
    s.metrics.push(PeriodMetrics {
        period: k,
        nodes,
        edges,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        conflicts: conflicts.len(),
        candidates,
        new_entities,
        loss_ner,
        loss_dep,
        loss_refine,
        loss_kg: loss_kg.unwrap_or(0.0),
        objective,
        importance: s.weights.clone(),
    });
    s.kg.period = k;
    s.period = k;
    Ok(s)
}

/// All periods of the configured synthetic corpus, period 0 first.
pub fn synthetic_corpus(cfg: &LoopConfig) -> Result<Vec<UserDocument>> {
    let mut out = Vec::new();
    for p in 0..=cfg.periods {
        out.extend(synth_corpus(&cfg.synth, p)?);
    }
    Ok(out)
}

/// Runs periods `state.period + 1 ..= cfg.periods`.
pub fn resume<T: Scalar>(mut state: LoopState<T>, corpus: &[UserDocument], cfg: &LoopConfig) -> Result<LoopState<T>> {
    while state.period < cfg.periods {
        let k = state.period + 1;
        let slice: Vec<UserDocument> = corpus.iter().filter(|d| d.period == k).cloned().collect();
        state = run_period(&state, &slice, cfg)?;
    }
    Ok(state)
}

pub fn run_loop<T: Scalar>(
    cfg: &LoopConfig,
    mode: Mode,
    seed_kg: KnowledgeGraph,
    corpus: &[UserDocument],
) -> Result<LoopState<T>> {
    let state = init_state(cfg, mode, seed_kg, corpus)?;
    resume(state, corpus, cfg)
}

/// The loop with one pathway disabled, on the configured synthetic corpus.
pub fn ablation<T: Scalar>(cfg: &LoopConfig, mode: &str) -> Result<Vec<PeriodMetrics>> {
    let mode: Mode = mode.parse()?;
    let corpus = synthetic_corpus(cfg)?;
    Ok(run_loop::<T>(cfg, mode, cfg.synth.seed_graph()?, &corpus)?.metrics)
}

/// w_F of one entity per period, `None` where it was not in the graph.
/// The entity may be given by id or by surface.
pub fn importance_trajectory(history: &[PeriodMetrics], entity: &str) -> Result<Vec<(u32, Option<f64>)>> {
    let id = EntityId(entity.split_whitespace().collect::<Vec<_>>().join("_"));
    let series: Vec<(u32, Option<f64>)> = history.iter().map(|m| (m.period, m.importance.get(&id).copied())).collect();
    if series.iter().all(|(_, v)| v.is_none()) {
        return Err(Error::UnknownEntity(entity.to_string()));
    }
    Ok(series)
}
