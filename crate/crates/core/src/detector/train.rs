//! Feature extraction, losses with hand-written gradients and the
//! alternating joint training schedule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{recognize_lexicon, silver_tags, Lexicon};
use super::params::{bce, DepCache, DetectorConfig, DetectorGrad, DetectorParams, Mode, EPS};
use super::{Bio, UserDocument};
use crate::error::{Error, Result};
use crate::kg::EntityId;
use crate::kge::EmbeddingTable;
use crate::linalg::axpy;
use crate::num::{sigmoid, softmax_backward, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct EntityFeature<T> {
    pub entity: EntityId,
    pub span: Vec<usize>,
    pub graph: Vec<T>,
    pub weight: T,
}

/// A user reduced to token ids, silver tags and matched entities.
#[derive(Clone, Debug, PartialEq)]
pub struct UserFeatures<T> {
    pub user_id: String,
    pub label: bool,
    pub posts: Vec<Vec<usize>>,
    pub tags: Vec<Vec<Bio>>,
    pub entities: Vec<EntityFeature<T>>,
}

/// `weights = None` gives every entity weight 1. Entities missing from the
/// table, or with a negative score, get weight 0.
pub fn featurize<T: Scalar>(
    doc: &UserDocument,
    lex: &Lexicon,
    params: &DetectorParams<T>,
    emb: &EmbeddingTable<T>,
    weights: Option<&BTreeMap<EntityId, f64>>,
) -> UserFeatures<T> {
    let found = recognize_lexicon(doc, lex);
    let mut tags = Vec::with_capacity(doc.posts.len());
    for (p, toks) in doc.posts.iter().enumerate() {
        let in_post: Vec<_> = found.iter().filter(|e| e.post == p).cloned().collect();
        tags.push(silver_tags(toks.len(), &in_post));
    }
    let posts: Vec<Vec<usize>> = doc.posts.iter().map(|t| params.ids(t)).collect();
    let entities = found
        .iter()
        .filter_map(|r| {
            let id = r.entity.clone()?;
            let graph = emb.entity(&id)?.to_vec();
            let weight = match weights {
                None => 1.0,
                Some(w) => w.get(&id).copied().unwrap_or(0.0).max(0.0),
            };
            Some(EntityFeature {
                span: posts[r.post][r.start..r.end].to_vec(),
                entity: id,
                graph,
                weight: T::of(weight),
            })
        })
        .collect();
    UserFeatures {
        user_id: doc.user_id.clone(),
        label: doc.label,
        posts,
        tags,
        entities,
    }
}

pub fn dep_forward<T: Scalar>(p: &DetectorParams<T>, user: &UserFeatures<T>, mode: &mut Mode) -> Result<DepCache<T>> {
    let mut e_ner = Vec::with_capacity(user.entities.len());
    let mut us = Vec::with_capacity(user.entities.len());
    let mut masks = Vec::with_capacity(user.entities.len());
    let mut fused = Vec::with_capacity(user.entities.len());
    for e in &user.entities {
        let ner = p.span_embedding(&e.span);
        let mask = mode.mask::<T>(p.d_tok, p.dropout);
        let (f, u) = p.fuse_with(&ner, &e.graph, &mask)?;
        e_ner.push(ner);
        us.push(u);
        masks.push(mask);
        fused.push(f);
    }
    let weights: Vec<T> = user.entities.iter().map(|e| e.weight).collect();
    let (pooled, denom) = p.pool(&fused, &weights);
    let (pre, head_mask, logit) = p.head(&pooled, mode);
    Ok(DepCache {
        e_ner,
        u: us,
        fuse_mask: masks,
        denom,
        pooled,
        pre,
        head_mask,
        logit,
        prob: sigmoid(logit),
    })
}

fn dep_backward<T: Scalar>(
    p: &DetectorParams<T>,
    user: &UserFeatures<T>,
    c: &DepCache<T>,
    dlogit: T,
    g: &mut DetectorGrad<T>,
) {
    let d = p.d_tok;
    g.b4 += dlogit;
    let mut dpre = vec![T::zero(); p.w5.len()];
    for k in 0..p.w5.len() {
        let act = if c.pre[k] > T::zero() { c.pre[k] * c.head_mask[k] } else { T::zero() };
        g.w5[k] += dlogit * act;
        if c.pre[k] > T::zero() {
            dpre[k] = dlogit * p.w5[k] * c.head_mask[k];
        }
    }
    g.w4.add_outer(T::one(), &dpre, &c.pooled);
    axpy(&mut g.b3, T::one(), &dpre);
    let dpooled = p.w4.matvec_t(&dpre);
    if user.entities.is_empty() {
        axpy(&mut g.empty, T::one(), &dpooled);
        return;
    }
    for (i, e) in user.entities.iter().enumerate() {
        let scale = e.weight / c.denom;
        let dfused: Vec<T> = dpooled.iter().map(|&v| v * scale).collect();
        let du: Vec<T> = (0..d)
            .map(|k| if c.u[i][k] > T::zero() { dfused[k] * c.fuse_mask[i][k] } else { T::zero() })
            .collect();
        g.w3.add_outer_concat(T::one(), &du, &c.e_ner[i], &e.graph);
        let back = p.w3.matvec_t(&du);
        let mut dner = dfused;
        axpy(&mut dner, T::one(), &back[..d]);
        if !e.span.is_empty() {
            let inv = T::one() / T::of(e.span.len() as f64);
            for &t in &e.span {
                axpy(g.tok_row(t, d), inv, &dner);
            }
        }
    }
}

/// Mean BCE over `users` and its gradient scaled by `λ / |users|`.
pub fn dep_loss_grad<T: Scalar>(
    p: &DetectorParams<T>,
    users: &[&UserFeatures<T>],
    mode: &mut Mode,
) -> Result<(T, DetectorGrad<T>)> {
    if users.is_empty() {
        return Err(Error::Empty("batch".into()));
    }
    let n = T::of(users.len() as f64);
    let scale = T::of(p.lambda) / n;
    let eps = T::of(EPS);
    let mut g = DetectorGrad::zeros(p);
    let mut loss = T::zero();
    for u in users {
        let c = dep_forward(p, u, mode)?;
        loss += bce(c.prob, u.label);
        let dz = if u.label {
            if c.prob >= eps { c.prob - T::one() } else { T::zero() }
        } else if T::one() - c.prob >= eps {
            c.prob
        } else {
            T::zero()
        };
        if scale != T::zero() {
            dep_backward(p, u, &c, dz * scale, &mut g);
        }
    }
    Ok((loss / n, g))
}

/// Token-mean tagging loss over every post of `users` and its gradient.
pub fn ner_loss_grad<T: Scalar>(
    p: &DetectorParams<T>,
    users: &[&UserFeatures<T>],
    mode: &mut Mode,
) -> Result<(T, DetectorGrad<T>)> {
    let total: usize = users.iter().flat_map(|u| u.posts.iter()).map(Vec::len).sum();
    if total == 0 {
        return Err(Error::Empty("no tokens in batch".into()));
    }
    let n = T::of(total as f64);
    let eps = T::of(EPS);
    let mut g = DetectorGrad::zeros(p);
    let mut loss = T::zero();
    for u in users {
        for (ids, gold) in u.posts.iter().zip(&u.tags) {
            if ids.is_empty() {
                continue;
            }
            let cache = p.tag_forward(ids, mode);
            let mut dlogits = Vec::with_capacity(ids.len());
            for (probs, tag) in cache.probs.iter().zip(gold) {
                let k = tag.index();
                loss -= probs[k].max(eps).ln();
                let mut up = [T::zero(); 3];
                if probs[k] >= eps {
                    up[k] = -T::one() / (probs[k] * n);
                }
                let dz = softmax_backward(probs, &up);
                dlogits.push([dz[0], dz[1], dz[2]]);
            }
            g.tag_backward(p, ids, &cache, &dlogits);
        }
    }
    Ok((loss / n, g))
}

pub fn predict<T: Scalar>(p: &DetectorParams<T>, user: &UserFeatures<T>) -> Result<T> {
    Ok(dep_forward(p, user, &mut Mode::Eval)?.prob)
}

/// Full-set evaluation-mode losses recorded after every epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointReport {
    pub ner: Vec<f64>,
    pub dep: Vec<f64>,
}

/// Odd epochs step the tagging loss, even epochs step `λ·` detection loss.
pub fn train_joint<T: Scalar>(
    users: &[UserFeatures<T>],
    params: &mut DetectorParams<T>,
    cfg: &DetectorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<JointReport> {
    if users.is_empty() {
        return Err(Error::Empty("training users".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let lr = T::of(cfg.learning_rate);
    let mut order: Vec<usize> = (0..users.len()).collect();
    let mut report = JointReport::default();
    let all: Vec<&UserFeatures<T>> = users.iter().collect();
    let has_tokens = users.iter().any(|u| u.posts.iter().any(|p| !p.is_empty()));
    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let ner_phase = epoch % 2 == 1;
        if ner_phase && !has_tokens {
            continue;
        }
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&UserFeatures<T>> = chunk.iter().map(|&i| &users[i]).collect();
            let mut mode = Mode::Train(rng);
            let (_, g) = if ner_phase {
                match ner_loss_grad(params, &batch, &mut mode) {
                    Err(Error::Empty(_)) => continue,
                    r => r?,
                }
            } else {
                dep_loss_grad(params, &batch, &mut mode)?
            };
            if !g.is_finite() {
                return Err(Error::Divergence(format!("non-finite detector gradient in epoch {epoch}")));
            }
            params.apply(lr, &g);
        }
        if !params.is_finite() {
            return Err(Error::Divergence(format!("non-finite detector parameters after epoch {epoch}")));
        }
        if has_tokens {
            report.ner.push(ner_loss_grad(params, &all, &mut Mode::Eval)?.0.f64());
        }
        report.dep.push(dep_loss_grad(params, &all, &mut Mode::Eval)?.0.f64());
    }
    Ok(report)
}
