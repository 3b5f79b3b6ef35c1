//! Discovery of entities the graph does not know yet, candidate triplets
//! for them and application of reviewed candidates.
//!
//! Word n-grams that occur in markedly more depressed than non-depressed
//! users' histories are mined outside recognised spans. A mined surface is
//! new when its token embedding is not close to any graph surface. Its class
//! is the nearest class prototype in context space: each mention is
//! described by the words around it, an entity by the mean over its
//! mentions and a class by the mean over its members, centred on the
//! mean prototype. Candidates pair the new surface with co-mentioned graph
//! entities (scenario i), with other new surfaces (scenario ii), or link it
//! to its class node when it is never co-mentioned (scenario iii).

mod io;
mod review;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use io::{
    candidates_to_string, load_candidates, load_decision_log, parse_candidates, parse_decision_log, save_candidates,
    CAND_HEADER, decision_log_line,
};
pub use review::{
    gate, normalize_timestamp, now_timestamp, oracle_decisions, period_timestamp, Page, ReviewDecision, ReviewQueue,
    ReviewState,
};

use crate::detector::{DetectorParams, Lexicon, UserDocument};
use crate::error::{Error, Result};
use crate::kg::{
    clean_snippet, cosine_similarity, Entity, EntityId, EntityStatus, FactorClass, KnowledgeGraph, Provenance,
    RelationKind, Triplet, TripletKey,
};
use crate::num::Scalar;
use crate::refine::MAX_PROVENANCE;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpandConfig {
    /// a surface is new when its best cosine to a graph surface is below this
    pub new_entity_threshold: f64,
    /// below this prototype similarity a surface is flagged as a new category
    pub prototype_floor: f64,
    /// minimum number of depressed users using the n-gram
    pub min_support: usize,
    /// minimum smoothed ratio of depressed to non-depressed usage rates
    pub min_ratio: f64,
    pub max_ngram: usize,
    /// context words on each side of a mention
    pub window: usize,
    /// scenario i partners kept per new surface
    pub top_k: usize,
    /// minimum depressed co-mentions for a pair candidate
    pub min_pair_support: u64,
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig {
            new_entity_threshold: 0.85,
            prototype_floor: 0.2,
            min_support: 8,
            min_ratio: 5.0,
            max_ngram: 2,
            window: 3,
            top_k: 2,
            min_pair_support: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    Ii,
    #[serde(rename = "iii")]
    Iii,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::I => "i",
            Scenario::Ii => "ii",
            Scenario::Iii => "iii",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "i" => Ok(Scenario::I),
            "ii" => Ok(Scenario::Ii),
            "iii" => Ok(Scenario::Iii),
            _ => Err(Error::InvalidArgument(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Endpoint {
    Entity { id: EntityId },
    New { surface: String, class: FactorClass },
    ClassNode { class: FactorClass },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTriplet {
    pub id: String,
    pub period: u32,
    pub surface: String,
    pub class: FactorClass,
    pub relation: RelationKind,
    pub endpoint: Endpoint,
    pub scenario: Scenario,
    pub new_category_flag: bool,
    /// co-mentions by depressed and non-depressed authors
    pub pos_count: u64,
    pub neg_count: u64,
    /// posts mentioning the new surface, by author label
    pub mention_pos: u64,
    pub mention_neg: u64,
    pub provenance: Vec<Provenance>,
    pub review_state: ReviewState,
}

/// A mined surface that passed the novelty check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Discovery {
    pub surface: String,
    pub class: FactorClass,
    pub class_similarity: f64,
    pub new_category_flag: bool,
    /// best cosine to any graph surface
    pub graph_similarity: f64,
    pub pos_docs: usize,
    pub neg_docs: usize,
}

fn masks(doc: &UserDocument, lex: &Lexicon) -> Vec<Vec<bool>> {
    doc.posts
        .iter()
        .enumerate()
        .map(|(p, toks)| {
            let mut m = vec![false; toks.len()];
            for e in lex.scan(p, toks) {
                m[e.start..e.end].iter_mut().for_each(|v| *v = true);
            }
            m
        })
        .collect()
}

/// Per-n-gram (depressed users, non-depressed users) counts over tokens
/// outside recognised spans.
fn mine(docs: &[UserDocument], lex: &Lexicon, max_n: usize) -> BTreeMap<Vec<String>, (usize, usize)> {
    let mut counts: BTreeMap<Vec<String>, (usize, usize)> = BTreeMap::new();
    for doc in docs {
        let mut seen: BTreeSet<&[String]> = BTreeSet::new();
        for (toks, mask) in doc.posts.iter().zip(masks(doc, lex)) {
            for i in 0..toks.len() {
                for n in 1..=max_n {
                    if i + n > toks.len() || mask[i..i + n].iter().any(|&m| m) {
                        break;
                    }
                    seen.insert(&toks[i..i + n]);
                }
            }
        }
        for g in seen {
            let c = counts.entry(g.to_vec()).or_default();
            if doc.label {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    counts
}

fn surface_tokens(s: &str) -> Vec<String> {
    s.split(' ').map(str::to_string).collect()
}

/// Bag of context words, normalised to unit mass.
type Context = BTreeMap<String, f64>;

fn add_scaled(acc: &mut Context, v: &Context, scale: f64) {
    for (k, x) in v {
        *acc.entry(k.clone()).or_default() += scale * x;
    }
}

fn mean_context<'a>(vs: impl IntoIterator<Item = &'a Context>) -> Option<Context> {
    let mut acc = Context::new();
    let mut n = 0usize;
    for v in vs {
        add_scaled(&mut acc, v, 1.0);
        n += 1;
    }
    (n > 0).then(|| {
        acc.values_mut().for_each(|x| *x /= n as f64);
        acc
    })
}

fn sparse_cosine(a: &Context, b: &Context) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// One post's mentions of graph entities and of new surfaces, with the
/// context bag around each.
struct PostScan {
    known: BTreeSet<EntityId>,
    new: BTreeSet<usize>,
}

struct Scanned {
    posts: Vec<(usize, usize, PostScan)>,
    known_ctx: BTreeMap<EntityId, Vec<Context>>,
    new_ctx: BTreeMap<usize, Vec<Context>>,
}

fn new_id(i: usize) -> EntityId {
    // tabs never occur in graph ids
    EntityId(format!("\tnew{i}"))
}

fn scan(docs: &[UserDocument], kg: &KnowledgeGraph, surfaces: &[String], window: usize) -> Scanned {
    let mut lex = Lexicon::from_graph(kg);
    let mut pseudo: HashMap<EntityId, usize> = HashMap::new();
    for (i, s) in surfaces.iter().enumerate() {
        lex.insert(s, new_id(i));
        pseudo.insert(new_id(i), i);
    }
    let mut out = Scanned {
        posts: Vec::new(),
        known_ctx: BTreeMap::new(),
        new_ctx: BTreeMap::new(),
    };
    for (d, doc) in docs.iter().enumerate() {
        for (p, toks) in doc.posts.iter().enumerate() {
            let found = lex.scan(p, toks);
            let mut covered = vec![false; toks.len()];
            for e in &found {
                covered[e.start..e.end].iter_mut().for_each(|v| *v = true);
            }
            let mut ps = PostScan {
                known: BTreeSet::new(),
                new: BTreeSet::new(),
            };
            for e in &found {
                let lo = e.start.saturating_sub(window);
                let hi = (e.end + window).min(toks.len());
                let words: Vec<&String> = (lo..hi).filter(|&i| !covered[i]).map(|i| &toks[i]).collect();
                let mut ctx = Context::new();
                for w in &words {
                    *ctx.entry((*w).clone()).or_default() += 1.0 / words.len() as f64;
                }
                let id = e.entity.clone().expect("lexicon hits carry ids");
                match pseudo.get(&id) {
                    Some(&i) => {
                        ps.new.insert(i);
                        out.new_ctx.entry(i).or_default().push(ctx);
                    }
                    None => {
                        ps.known.insert(id.clone());
                        out.known_ctx.entry(id).or_default().push(ctx);
                    }
                }
            }
            out.posts.push((d, p, ps));
        }
    }
    out
}

/// Mean context of each class's members, centred on the mean prototype.
fn prototypes(kg: &KnowledgeGraph, known_ctx: &BTreeMap<EntityId, Vec<Context>>) -> BTreeMap<FactorClass, Context> {
    let mut members: BTreeMap<FactorClass, Vec<Context>> = BTreeMap::new();
    for (id, ctxs) in known_ctx {
        let Some(class) = kg.entity(id).and_then(|e| e.class.factor()) else { continue };
        if let Some(m) = mean_context(ctxs) {
            members.entry(class).or_default().push(m);
        }
    }
    let raw: BTreeMap<FactorClass, Context> = members
        .iter()
        .filter_map(|(c, ms)| Some((*c, mean_context(ms)?)))
        .collect();
    let centre = mean_context(raw.values()).unwrap_or_default();
    raw.into_iter()
        .map(|(c, mut p)| {
            add_scaled(&mut p, &centre, -1.0);
            (c, p)
        })
        .collect()
}

/// Nearest centred class prototype for a context and its cosine. Words
/// every class shares cancel out of the prototypes, so a context unlike all
/// classes scores near zero.
fn nearest_class(protos: &BTreeMap<FactorClass, Context>, ctx: &Context) -> Option<(FactorClass, f64)> {
    protos
        .iter()
        .map(|(c, p)| (*c, sparse_cosine(ctx, p)))
        .fold(None, |best: Option<(FactorClass, f64)>, (c, s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((c, s)),
        })
}

/// Best cosine between the surface's mean token embedding and any graph
/// surface's.
fn graph_similarity<T: Scalar>(kg: &KnowledgeGraph, det: &DetectorParams<T>, surface: &str) -> f64 {
    let q = det.span_embedding(&det.ids(&surface_tokens(surface)));
    kg.factor_entities()
        .flat_map(|e| e.surfaces())
        .filter_map(|s| {
            let v = det.span_embedding(&det.ids(&surface_tokens(s)));
            cosine_similarity(&q, &v).ok().map(|c| c.f64())
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Surfaces associated with depressed users that the graph does not know.
pub fn discover<T: Scalar>(
    docs: &[UserDocument],
    kg: &KnowledgeGraph,
    det: &DetectorParams<T>,
    cfg: &ExpandConfig,
) -> Vec<Discovery> {
    let lex = Lexicon::from_graph(kg);
    let n_pos = docs.iter().filter(|d| d.label).count().max(1) as f64;
    let n_neg = docs.iter().filter(|d| !d.label).count().max(1) as f64;
    let delta = 1.0 / n_pos.max(n_neg);
    let counts = mine(docs, &lex, cfg.max_ngram.max(1));
    let skewed = |(p, n): (usize, usize)| (p as f64 / n_pos + delta) / (n as f64 / n_neg + delta) >= cfg.min_ratio;
    // every word of a kept n-gram has to be skewed on its own
    let word_ok = |w: &String| counts.get(std::slice::from_ref(w)).is_some_and(|&c| skewed(c));
    let mut mined: Vec<(Vec<String>, usize, usize)> = counts
        .iter()
        .filter(|(g, &(p, n))| p >= cfg.min_support && skewed((p, n)) && g.iter().all(word_ok))
        .map(|(g, &(p, n))| (g.clone(), p, n))
        .collect();
    mined.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.len().cmp(&a.0.len())).then_with(|| a.0.cmp(&b.0)));
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut picked = Vec::new();
    for (g, p, n) in mined {
        if g.iter().any(|t| used.contains(t)) {
            continue;
        }
        used.extend(g.iter().cloned());
        let surface = g.join(" ");
        let sim = graph_similarity(kg, det, &surface);
        if sim < cfg.new_entity_threshold {
            picked.push((surface, p, n, sim));
        }
    }
    picked.sort_by(|a, b| a.0.cmp(&b.0));
    let surfaces: Vec<String> = picked.iter().map(|x| x.0.clone()).collect();
    let scanned = scan(docs, kg, &surfaces, cfg.window);
    let protos = prototypes(kg, &scanned.known_ctx);
    picked
        .into_iter()
        .enumerate()
        .map(|(i, (surface, pos_docs, neg_docs, graph_similarity))| {
            let ctx = scanned.new_ctx.get(&i).and_then(mean_context).unwrap_or_default();
            let (class, class_similarity) = nearest_class(&protos, &ctx).unwrap_or((FactorClass::PsySym, 0.0));
            Discovery {
                surface,
                class,
                class_similarity,
                new_category_flag: class_similarity < cfg.prototype_floor,
                graph_similarity,
                pos_docs,
                neg_docs,
            }
        })
        .collect()
}

#[derive(Default)]
struct PairTally {
    pos: u64,
    neg: u64,
    provenance: Vec<Provenance>,
}

impl PairTally {
    fn add(&mut self, doc: &UserDocument, post: usize) {
        if doc.label {
            self.pos += 1;
        } else {
            self.neg += 1;
        }
        if self.provenance.len() < MAX_PROVENANCE {
            self.provenance.push(Provenance {
                user: doc.user_id.clone(),
                period: doc.period,
                snippet: clean_snippet(&doc.posts[post].join(" ")),
            });
        }
    }
}

/// Candidates for the surfaces found in `docs`, with ids `c{period}-NNN`.
pub fn generate_candidates<T: Scalar>(
    docs: &[UserDocument],
    kg: &KnowledgeGraph,
    det: &DetectorParams<T>,
    period: u32,
    cfg: &ExpandConfig,
) -> Vec<CandidateTriplet> {
    let found = discover(docs, kg, det, cfg);
    candidates_for(docs, kg, &found, period, cfg)
}

/// Candidate triplets for already discovered surfaces.
pub fn candidates_for(
    docs: &[UserDocument],
    kg: &KnowledgeGraph,
    found: &[Discovery],
    period: u32,
    cfg: &ExpandConfig,
) -> Vec<CandidateTriplet> {
    let surfaces: Vec<String> = found.iter().map(|d| d.surface.clone()).collect();
    let scanned = scan(docs, kg, &surfaces, cfg.window);
    let mut mentions: BTreeMap<usize, PairTally> = BTreeMap::new();
    let mut with_known: BTreeMap<(usize, EntityId), PairTally> = BTreeMap::new();
    let mut with_new: BTreeMap<(usize, usize), PairTally> = BTreeMap::new();
    for (d, p, ps) in &scanned.posts {
        let doc = &docs[*d];
        for &i in &ps.new {
            mentions.entry(i).or_default().add(doc, *p);
            for e in &ps.known {
                with_known.entry((i, e.clone())).or_default().add(doc, *p);
            }
            for &j in ps.new.range(i + 1..) {
                with_new.entry((i, j)).or_default().add(doc, *p);
            }
        }
    }
    let mut out: Vec<CandidateTriplet> = Vec::new();
    let mut involved: BTreeSet<usize> = BTreeSet::new();
    let base = |i: usize, tally: &PairTally, relation, endpoint, scenario| {
        let m = mentions.get(&i);
        CandidateTriplet {
            id: String::new(),
            period,
            surface: found[i].surface.clone(),
            class: found[i].class,
            relation,
            endpoint,
            scenario,
            new_category_flag: found[i].new_category_flag,
            pos_count: tally.pos,
            neg_count: tally.neg,
            mention_pos: m.map_or(0, |t| t.pos),
            mention_neg: m.map_or(0, |t| t.neg),
            provenance: tally.provenance.clone(),
            review_state: ReviewState::Pending,
        }
    };
    for (i, d) in found.iter().enumerate() {
        let mut partners: Vec<(&EntityId, &PairTally)> = with_known
            .iter()
            .filter(|((a, _), t)| *a == i && t.pos >= cfg.min_pair_support)
            .map(|((_, e), t)| (e, t))
            .collect();
        partners.sort_by(|a, b| b.1.pos.cmp(&a.1.pos).then_with(|| a.0.cmp(b.0)));
        for (e, t) in partners.into_iter().take(cfg.top_k) {
            let Some(other) = kg.entity(e).and_then(|x| x.class.factor()) else { continue };
            out.push(base(i, t, RelationKind::between(d.class, other), Endpoint::Entity { id: e.clone() }, Scenario::I));
            involved.insert(i);
        }
        for ((_, j), t) in with_new.range((i, 0)..(i + 1, 0)) {
            if t.pos < cfg.min_pair_support {
                continue;
            }
            let endpoint = Endpoint::New {
                surface: found[*j].surface.clone(),
                class: found[*j].class,
            };
            out.push(base(i, t, RelationKind::between(d.class, found[*j].class), endpoint, Scenario::Ii));
            involved.insert(i);
            involved.insert(*j);
        }
    }
    for (i, d) in found.iter().enumerate() {
        if involved.contains(&i) {
            continue;
        }
        let none = PairTally::default();
        let t = mentions.get(&i).unwrap_or(&none);
        out.push(base(i, t, RelationKind::Subcat, Endpoint::ClassNode { class: d.class }, Scenario::Iii));
    }
    out.sort_by(|a, b| a.surface.cmp(&b.surface).then(a.scenario.cmp(&b.scenario)));
    for (k, c) in out.iter_mut().enumerate() {
        c.id = format!("c{period}-{k:03}");
    }
    out
}

/// Graph id for a new surface: its words joined by underscores, suffixed
/// with the period on a clash.
fn entity_id_for(kg: &KnowledgeGraph, surface: &str, period: u32) -> EntityId {
    let base = surface.split_whitespace().collect::<Vec<_>>().join("_");
    let id = EntityId(base.clone());
    if kg.entity(&id).is_none() {
        id
    } else {
        EntityId(format!("{base}_{period}"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Applied {
    pub entities: Vec<EntityId>,
    pub triplets: Vec<TripletKey>,
}

/// Writes every approved, not yet applied candidate into the graph. A new
/// surface becomes a discovered entity linked to its class node, with the
/// surface's mention counts on that link.
pub fn apply_decisions(kg: &mut KnowledgeGraph, queue: &mut ReviewQueue) -> Result<Applied> {
    let todo: Vec<CandidateTriplet> = queue.unapplied().into_iter().cloned().collect();
    let mention_counts: BTreeMap<String, (u64, u64)> = queue
        .candidates()
        .map(|c| (c.surface.clone(), (c.mention_pos, c.mention_neg)))
        .collect();
    let mut applied = Applied::default();
    for c in todo {
        let head = ensure_entity(kg, &c.surface, c.class, c.period, &mention_counts, &mut applied)?;
        let tail = match &c.endpoint {
            Endpoint::Entity { id } => {
                if kg.entity(id).is_none() {
                    return Err(Error::UnknownEntity(id.0.clone()));
                }
                Some(id.clone())
            }
            Endpoint::New { surface, class } => {
                Some(ensure_entity(kg, surface, *class, c.period, &mention_counts, &mut applied)?)
            }
            Endpoint::ClassNode { .. } => None,
        };
        if let Some(tail) = tail {
            let mut t = Triplet::new(head.0, c.relation, tail.0).with_counts(c.pos_count, c.neg_count);
            t.provenance = c.provenance.clone();
            applied.triplets.push(kg.add_triplet(t)?);
        }
        queue.mark_applied(&c.id);
    }
    Ok(applied)
}

fn ensure_entity(
    kg: &mut KnowledgeGraph,
    surface: &str,
    class: FactorClass,
    period: u32,
    mentions: &BTreeMap<String, (u64, u64)>,
    applied: &mut Applied,
) -> Result<EntityId> {
    if let Some(id) = kg.lookup_surface(surface) {
        return Ok(id.clone());
    }
    let id = entity_id_for(kg, surface, period);
    kg.add_entity(Entity {
        status: EntityStatus::Discovered,
        first_period: period,
        ..Entity::seed(id.0.clone(), class.into(), surface)
    })?;
    let (pos, neg) = mentions.get(surface).copied().unwrap_or((0, 0));
    let sub = Triplet::new(id.0.clone(), RelationKind::Subcat, class.class_node_id().0).with_counts(pos, neg);
    applied.triplets.push(kg.add_triplet(sub)?);
    applied.entities.push(id.clone());
    Ok(id)
}
