//! The verbs. Each returns the text it prints.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use kgloop_core::attention::attention_scores;
use kgloop_core::closed_loop::{
    importance_trajectory, init_state, metrics_tsv, run_period, save_corpus, synthetic_corpus, write_report,
    LoopConfig, Mode,
};
use kgloop_core::detector::{featurize, predict, Confusion, Lexicon, UserDocument};
use kgloop_core::expand::{apply_decisions, generate_candidates};
use kgloop_core::kg::{load_schema, load_snapshot, save_snapshot, EntityId, KnowledgeGraph};
use kgloop_core::num::Scalar;
use kgloop_core::refine::{conflict_records, harvest, partition_evidence, refine, RefineConfig};
use kgloop_core::seed;

use crate::workspace::{State, Workspace};

pub struct Ctx {
    pub ws: Workspace,
    pub cfg: LoopConfig,
}

/// Writes the configured synthetic corpus to `out`, or into the workspace.
pub fn synth(ctx: &Ctx, out: Option<&Path>) -> Result<String> {
    let corpus = synthetic_corpus(&ctx.cfg)?;
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => {
            fs::create_dir_all(ctx.ws.root())?;
            ctx.ws.corpus_path()
        }
    };
    save_corpus(&corpus, &path)?;
    Ok(format!("{} users over {} periods -> {}\n", corpus.len(), ctx.cfg.periods + 1, path.display()))
}

pub struct GraphSource<'a> {
    pub snapshot: Option<&'a Path>,
    pub entities: Option<&'a Path>,
    pub triplets: Option<&'a Path>,
}

/// Stores the corpus and the seed graph. An existing state is kept unless
/// `force` is set.
pub fn init(ctx: &Ctx, corpus: Option<&Path>, graph: GraphSource<'_>, force: bool) -> Result<String> {
    let ws = &ctx.ws;
    if ws.has_state() && !force {
        bail!("{} already has a loop state; pass --force to start over", ws.root().display());
    }
    fs::create_dir_all(ws.root())?;
    let docs = match corpus {
        Some(p) => kgloop_core::closed_loop::load_corpus(p).with_context(|| format!("reading {}", p.display()))?,
        None => synthetic_corpus(&ctx.cfg)?,
    };
    let kg = match graph {
        GraphSource { snapshot: Some(p), .. } => load_snapshot(p)?,
        GraphSource {
            entities: Some(e),
            triplets: Some(t),
            ..
        } => load_schema(e, t)?,
        GraphSource {
            entities: None,
            triplets: None,
            ..
        } => ctx.cfg.synth.seed_graph()?,
        _ => bail!("--entities and --triplets go together"),
    };
    kg.validate()?;
    save_corpus(&docs, &ws.corpus_path())?;
    save_snapshot(&kg, &ws.seed_graph_path())?;
    for stale in [ws.state_path(), ws.log_path()] {
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    let (nodes, edges) = kg.stats();
    Ok(format!(
        "{}: {} users, seed graph {nodes} nodes / {edges} edges\n",
        ws.root().display(),
        docs.len()
    ))
}

/// Seeds the graph from period 0, pretrains and commits period 0.
pub fn pretrain(ctx: &Ctx, mode: Mode) -> Result<String> {
    let state: State = init_state(&ctx.cfg, mode, ctx.ws.seed_graph()?, &ctx.ws.corpus()?)?;
    ctx.ws.commit(&state)?;
    let mut out = String::new();
    for (i, l) in state.pretrain_losses.iter().enumerate() {
        writeln!(out, "epoch {}\t{l}", i + 1)?;
    }
    let (nodes, edges) = state.kg.stats();
    writeln!(out, "graph {nodes} nodes / {edges} edges, {} held-out users", state.holdout.len())?;
    Ok(out)
}

/// Depression probability per user of `corpus`, or of the held-out set.
pub fn detect(ctx: &Ctx, corpus: Option<&Path>) -> Result<String> {
    let state = ctx.ws.state()?;
    let docs = match corpus {
        Some(p) => kgloop_core::closed_loop::load_corpus(p)?,
        None => state.holdout.clone(),
    };
    let lex = Lexicon::from_graph(&state.kg);
    let mut out = String::from("user\tlabel\tprobability\n");
    let mut confusion = Confusion::default();
    for d in &docs {
        let u = featurize(d, &lex, &state.detector, &state.model.emb, Some(&state.weights));
        let p = predict(&state.detector, &u)?.f64();
        confusion.add(p >= ctx.cfg.detector.threshold, d.label);
        writeln!(out, "{}\t{}\t{p}", d.user_id, u8::from(d.label))?;
    }
    let prf = confusion.prf();
    writeln!(out, "# precision {} recall {} f1 {}", prf.precision, prf.recall, prf.f1)?;
    Ok(out)
}

/// Conflict table over the training users so far; `apply` runs the
/// refinement steps and commits the embeddings.
pub fn refine_cmd(ctx: &Ctx, apply: bool) -> Result<String> {
    let mut state = ctx.ws.state()?;
    let enc = ctx.cfg.train.encoder;
    let h = harvest(&state.train_docs, &Lexicon::from_graph(&state.kg), &state.kg, state.period);
    let (clean, contested) = partition_evidence(&state.kg, &h);
    let records = conflict_records(&state.kg, &state.model, enc, &contested, ctx.cfg.tau)?;
    let mut out = String::from("triplet\tpos\tneg\tscore\tmatching\tplausibility\tpenalty\n");
    for r in &records {
        writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}\t{}", r.key, r.pos, r.neg, r.score, r.w_s, r.p, r.w_c)?;
    }
    if apply {
        let rcfg = RefineConfig {
            tau: ctx.cfg.tau,
            negatives: ctx.cfg.negatives,
            seed: seed::derive(ctx.cfg.seed, state.period, "refine"),
            ..ctx.cfg.refine.clone()
        };
        let report = refine(&state.kg, &mut state.model, enc, &clean, &records, ctx.cfg.gamma_loss, &rcfg)?;
        ctx.ws.commit(&state)?;
        writeln!(out, "# refined {} steps, final loss {}", report.losses.len(), report.losses.last().copied().unwrap_or(0.0))?;
    }
    Ok(out)
}

fn training_slice(state: &State, corpus: &[UserDocument], period: u32) -> Vec<UserDocument> {
    let held: BTreeSet<&str> = state.holdout.iter().map(|d| d.user_id.as_str()).collect();
    corpus
        .iter()
        .filter(|d| d.period == period && !held.contains(d.user_id.as_str()))
        .cloned()
        .collect()
}

/// Queues candidates mined from one period's training users; `apply`
/// writes approved candidates into the graph.
pub fn expand(ctx: &Ctx, period: Option<u32>, apply: bool) -> Result<String> {
    let mut state = ctx.ws.state()?;
    let k = period.unwrap_or(state.period);
    let slice = training_slice(&state, &ctx.ws.corpus()?, k);
    if slice.is_empty() {
        bail!("no training users in period {k}");
    }
    let mut out = String::from("id\tscenario\tsurface\tclass\trelation\tpos\tneg\n");
    for c in generate_candidates(&slice, &state.kg, &state.detector, k, &ctx.cfg.expand) {
        if state.queue.proposes(&c) {
            continue;
        }
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.id,
            c.scenario.name(),
            c.surface,
            c.class.name(),
            c.relation,
            c.pos_count,
            c.neg_count
        )?;
        state.queue.add(c)?;
    }
    if apply {
        let applied = apply_decisions(&mut state.kg, &mut state.queue)?;
        state.kg.validate()?;
        state
            .model
            .emb
            .ensure_entities(&state.kg, &mut seed::rng(ctx.cfg.seed, k, "expand"));
        let names: Vec<&str> = applied.entities.iter().map(EntityId::as_str).collect();
        writeln!(out, "# added entities: {}", names.join(" "))?;
    }
    ctx.ws.commit(&state)?;
    Ok(out)
}

/// Runs the remaining periods, committing after each one, and exports the
/// report as `run`.
pub fn run_loop(ctx: &Ctx, mode: Mode, run: Option<&str>) -> Result<String> {
    let corpus = ctx.ws.corpus()?;
    let mut state: State = if ctx.ws.has_state() {
        ctx.ws.state()?
    } else {
        let s = init_state(&ctx.cfg, mode, ctx.ws.seed_graph()?, &corpus)?;
        ctx.ws.commit(&s)?;
        s
    };
    if state.mode != mode {
        bail!("the stored state runs in mode {}, not {}", state.mode.name(), mode.name());
    }
    while state.period < ctx.cfg.periods {
        let k = state.period + 1;
        let slice: Vec<UserDocument> = corpus.iter().filter(|d| d.period == k).cloned().collect();
        state = run_period(&state, &slice, &ctx.cfg)?;
        ctx.ws.commit(&state)?;
    }
    let name = run.unwrap_or(mode.name());
    write_report(&state, &ctx.ws.run_dir(name)?)?;
    Ok(metrics_tsv(&state.metrics))
}

/// w_F of every factor entity, or one entity's trajectory.
pub fn importance(ctx: &Ctx, entity: Option<&str>) -> Result<String> {
    let state = ctx.ws.state()?;
    let mut out = String::new();
    match entity {
        Some(e) => {
            out.push_str("period\tweight\n");
            for (p, w) in importance_trajectory(&state.metrics, e)? {
                let w = w.map_or_else(|| "-".to_string(), |w| w.to_string());
                writeln!(out, "{p}\t{w}")?;
            }
        }
        None => {
            let mut rows: Vec<_> = state.weights.iter().collect();
            rows.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
            out.push_str("entity\tweight\n");
            for (id, w) in rows {
                writeln!(out, "{id}\t{w}")?;
            }
        }
    }
    Ok(out)
}

fn resolve(kg: &KnowledgeGraph, entity: &str) -> Result<EntityId> {
    if let Some(id) = kg.lookup_surface(entity) {
        return Ok(id.clone());
    }
    let id = EntityId::new(entity);
    if kg.entity(&id).is_none() {
        bail!("unknown entity `{entity}`");
    }
    Ok(id)
}

/// Relation, neighbour and combined attention of one entity.
pub fn attention(ctx: &Ctx, entity: &str) -> Result<String> {
    let state = ctx.ws.state()?;
    let id = resolve(&state.kg, entity)?;
    let s = attention_scores(&id, &state.kg, &state.model.emb, &state.model.attn)?;
    let mut out = String::from("level\trelation\tneighbour\tweight\n");
    for (r, a) in &s.alpha {
        writeln!(out, "alpha\t{r}\t-\t{a}")?;
    }
    for (r, t, b) in &s.beta {
        writeln!(out, "beta\t{r}\t{t}\t{b}")?;
    }
    for (r, t, g) in &s.gamma {
        writeln!(out, "gamma\t{r}\t{t}\t{g}")?;
    }
    Ok(out)
}

/// Exports the committed state as `run`.
pub fn report(ctx: &Ctx, run: &str) -> Result<String> {
    let state = ctx.ws.state()?;
    let dir = ctx.ws.run_dir(run)?;
    write_report(&state, &dir)?;
    Ok(format!("{}\n", dir.display()))
}
