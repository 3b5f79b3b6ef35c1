#![allow(dead_code)]

use kgloop_core::detector::{
    dep_loss_grad, ner_loss_grad, Bio, DetectorConfig, DetectorParams, EntityFeature, Mode, UserFeatures, Vocab,
};
use kgloop_core::kg::{Entity, EntityClass, EntityId, FactorClass, KnowledgeGraph, RelationKind, Triplet, TripletKey};
use kgloop_core::kge::gradcheck::{grad_check, sample_coords};
use kgloop_core::kge::{kg_loss, kg_loss_grad, ConvEGeometry, Encoder, Model, NegativeSampler, Sample};
use kgloop_core::refine::{conflict_records, refine_loss, refine_loss_grad, refine_terms};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small enough for the curvature, large enough that cancellation stays
/// below the tolerance on gradients near 1e-6.
pub const FD_EPS: f64 = 1e-5;
/// The detector stacks ReLU layers and has larger gradients; a shorter
/// step rarely straddles a kink.
pub const FD_EPS_RELU: f64 = 1e-6;
pub const COORDS: usize = 10;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph with `n` factor entities, random subcat mention counts and
/// co-mention edges drawn with probability `p`.
pub fn random_graph(seed: u64, n: usize, p: f64) -> KnowledgeGraph {
    let mut r = rng(seed);
    let mut kg = KnowledgeGraph::with_reserved_nodes();
    for i in 0..n {
        let class: EntityClass = FactorClass::ALL[r.gen_range(0..5)].into();
        kg.add_entity(Entity::seed(format!("e{i:02}"), class, &format!("entity {i}")))
            .unwrap();
    }
    let ids: Vec<_> = kg.factor_entities().map(|e| (e.id.clone(), e.class)).collect();
    for (id, class) in &ids {
        let c = class.factor().unwrap();
        let mut t = Triplet::new(id.as_str(), RelationKind::Subcat, c.class_node_id().as_str());
        t.pos_count = r.gen_range(0..20);
        t.neg_count = r.gen_range(0..5);
        kg.add_triplet(t).unwrap();
    }
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            if r.gen_bool(p) {
                let rel = RelationKind::between(ids[i].1.factor().unwrap(), ids[j].1.factor().unwrap());
                let t = Triplet::new(ids[i].0.as_str(), rel, ids[j].0.as_str())
                    .with_counts(r.gen_range(0..12), r.gen_range(0..6));
                kg.add_triplet(t).unwrap();
            }
        }
    }
    kg
}

pub fn tiny_geometry() -> ConvEGeometry {
    ConvEGeometry {
        d: 9,
        rows: 3,
        cols: 3,
        filters: 2,
        kernel_h: 2,
        kernel_w: 2,
    }
}

pub fn random_model(kg: &KnowledgeGraph, seed: u64) -> Model<f64> {
    Model::init(kg, tiny_geometry(), &mut rng(seed)).unwrap()
}

pub fn active_keys(kg: &KnowledgeGraph) -> Vec<TripletKey> {
    kg.active_triplets().map(Triplet::key).collect()
}

pub struct ConflictFixture {
    pub kg: KnowledgeGraph,
    pub model: Model<f64>,
    pub clean: Vec<TripletKey>,
    /// (high plausibility, low plausibility)
    pub contested: (TripletKey, TripletKey),
}

/// A head with two structurally identical contested tails carrying equal
/// initial scores, one observed mostly in negative posts (p = 0.9) and one
/// mostly in positive posts (p = 0.1), plus a ring of clean positives.
pub fn conflict_fixture(seed: u64) -> ConflictFixture {
    let mut kg = KnowledgeGraph::with_reserved_nodes();
    for i in 0..8 {
        kg.add_entity(Entity::seed(format!("p{i}"), EntityClass::PsySym, &format!("psy {i}"))).unwrap();
    }
    for i in 0..4 {
        kg.add_entity(Entity::seed(format!("q{i}"), EntityClass::PhySym, &format!("phy {i}"))).unwrap();
    }
    kg.link_class_nodes().unwrap();
    let mut clean = Vec::new();
    let add = |kg: &mut KnowledgeGraph, h: &str, t: &str, pos: u64, neg: u64| {
        let (hc, tc) = (kg.entity(&h.into()).unwrap().class, kg.entity(&t.into()).unwrap().class);
        let rel = RelationKind::between(hc.factor().unwrap(), tc.factor().unwrap());
        kg.add_triplet(Triplet::new(h, rel, t).with_counts(pos, neg)).unwrap()
    };
    for (h, t) in [("p0", "p3"), ("p3", "p4"), ("p4", "p5"), ("p5", "p6"), ("p6", "p7"), ("p0", "q0"), ("q0", "q1"), ("q1", "q2"), ("q2", "q3"), ("p7", "q3")] {
        clean.push(add(&mut kg, h, t, 5, 0));
    }
    let hi = add(&mut kg, "p0", "p1", 1, 9);
    let lo = add(&mut kg, "p0", "p2", 9, 1);
    let mut model = Model::init(&kg, ConvEGeometry::compact(), &mut rng(seed)).unwrap();
    let v = model.emb.entity(&"p1".into()).unwrap().to_vec();
    let s = model.emb.slot(&"p2".into()).unwrap();
    model.emb.entity_at_mut(s).copy_from_slice(&v);
    ConflictFixture { kg, model, clean, contested: (hi, lo) }
}

/// Graph, model and one corruption per active triplet.
fn loss_setup(seed: u64) -> (KnowledgeGraph, Model<f64>, Vec<Sample>) {
    let kg = random_graph(seed, 8, 0.4);
    let model = random_model(&kg, seed + 7);
    let sampler = NegativeSampler::new(&kg);
    let mut r = rng(seed + 13);
    let batch = active_keys(&kg)
        .into_iter()
        .map(|k| {
            let negs = sampler.sample_available(&k, 1, &mut r).unwrap();
            (k, negs)
        })
        .collect();
    (kg, model, batch)
}

/// Worst relative error of the pairwise logistic graph loss gradient.
/// With `attention_only`, the coordinates are drawn from the attention
/// parameters.
pub fn kg_loss_check(seed: u64, encoder: Encoder, attention_only: bool) -> f64 {
    let (kg, mut model, batch) = loss_setup(seed);
    let (_, g) = kg_loss_grad(&model, &kg, encoder, &batch).unwrap();
    let flat = g.to_flat(&model);
    let coords = if attention_only {
        let start = model.num_params() - model.attn.flat_len();
        sample_coords(&flat[start..], COORDS, &mut rng(seed))
            .into_iter()
            .map(|i| i + start)
            .collect()
    } else {
        sample_coords(&flat, COORDS, &mut rng(seed))
    };
    let loss = |m: &Model<f64>| kg_loss(m, &kg, encoder, &batch);
    grad_check(&mut model, loss, &flat, &coords, FD_EPS).unwrap()
}

/// Worst relative error of the refinement loss gradient, with half the
/// active triplets clean and the rest contested.
pub fn refine_loss_check(seed: u64) -> f64 {
    let (kg, mut model, batch) = loss_setup(seed);
    let keys: Vec<TripletKey> = batch.iter().map(|(k, _)| k.clone()).collect();
    let (clean, rest) = keys.split_at(keys.len() / 2);
    let contested: Vec<TripletKey> = rest
        .iter()
        .filter(|k| k.relation != RelationKind::Subcat && { let t = kg.triplet(k).unwrap(); t.pos_count + t.neg_count > 0 })
        .cloned()
        .collect();
    let enc = Encoder::Attention;
    let records = conflict_records(&kg, &model, enc, &contested, 1.0).unwrap();
    let sampled: Vec<TripletKey> = batch[..clean.len()].iter().flat_map(|(_, n)| n.clone()).collect();
    let terms = refine_terms(clean, &records, &sampled);
    let (_, g) = refine_loss_grad(&model, &kg, enc, &terms).unwrap();
    let flat = g.to_flat(&model);
    let coords = sample_coords(&flat, COORDS, &mut rng(seed));
    let loss = |m: &Model<f64>| refine_loss(m, &kg, enc, &terms);
    grad_check(&mut model, loss, &flat, &coords, FD_EPS).unwrap()
}

pub fn random_users(p: &DetectorParams<f64>, n: usize, r: &mut ChaCha8Rng) -> Vec<UserFeatures<f64>> {
    (0..n)
        .map(|k| {
            let posts: Vec<Vec<usize>> = (0..2)
                .map(|_| (0..r.gen_range(1..6)).map(|_| r.gen_range(0..p.vocab.len())).collect())
                .collect();
            let tags = posts
                .iter()
                .map(|ids| ids.iter().map(|_| [Bio::B, Bio::I, Bio::O][r.gen_range(0..3)]).collect())
                .collect();
            let entities = (0..r.gen_range(1..4))
                .map(|_| EntityFeature {
                    entity: EntityId::new("x"),
                    span: (0..r.gen_range(1..3)).map(|_| r.gen_range(0..p.vocab.len())).collect(),
                    graph: (0..p.d_graph).map(|_| r.gen_range(-1.0..1.0)).collect(),
                    weight: r.gen_range(0.05..1.0),
                })
                .collect();
            UserFeatures {
                user_id: format!("u{k}"),
                label: r.gen_bool(0.5),
                posts,
                tags,
                entities,
            }
        })
        .collect()
}

fn detector_setup(seed: u64) -> (DetectorParams<f64>, Vec<UserFeatures<f64>>) {
    let mut r = rng(seed);
    let vocab = Vocab::from((0..10).map(|i| format!("t{i}")).collect::<Vec<_>>());
    let cfg = DetectorConfig {
        d_tok: 5,
        hidden_tag: 6,
        hidden_cls: 6,
        ..DetectorConfig::default()
    };
    let p = DetectorParams::init(vocab, 4, &cfg, &mut r).unwrap();
    let users = random_users(&p, 6, &mut r);
    (p, users)
}

/// Worst relative error of the tagging (`ner`) or detection loss gradient.
pub fn detector_loss_check(seed: u64, ner: bool) -> f64 {
    let (mut p, users) = detector_setup(seed);
    let refs: Vec<_> = users.iter().collect();
    let eval = |q: &DetectorParams<f64>| {
        if ner {
            ner_loss_grad(q, &refs, &mut Mode::Eval)
        } else {
            dep_loss_grad(q, &refs, &mut Mode::Eval)
        }
    };
    let flat = eval(&p).unwrap().1.to_flat(&p);
    let coords = sample_coords(&flat, COORDS, &mut rng(seed + 1));
    grad_check(&mut p, |q| eval(q).map(|r| r.0), &flat, &coords, FD_EPS_RELU).unwrap()
}
