//! Hierarchical attention over an entity's neighbourhood.
//!
//! For entity `h` with relation groups `N_h` and tails `N_{h,r}`:
//!
//! ```text
//! a_r   = W1 [h ‖ v_r]
//! α_r   = softmax_r  lrelu(p · a_r)
//! b_rt  = W2 [a_r ‖ t]
//! β_rt  = softmax_t  lrelu(q · b_rt)
//! γ_rt  = α_r β_rt
//! h'    = relu( Σ γ_rt W1 [t ‖ v_r] + h )
//! ```
//!
//! The core routines work on plain vectors and an explicit neighbour list
//! so that ordering can be permuted in tests. Thin wrappers resolve ids
//! through a [`KnowledgeGraph`] and [`EmbeddingTable`].

mod transition;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationKind};
use crate::kge::EmbeddingTable;
use crate::linalg::{axpy, dot, Matrix};
use crate::num::{leaky_relu, leaky_relu_grad, relu, softmax, softmax_backward, Scalar};

pub use transition::{normalize_transitions, transition_score};

pub const DEFAULT_LEAK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttentionParams<T> {
    pub w1: Matrix<T>,
    pub w2: Matrix<T>,
    pub p: Vec<T>,
    pub q: Vec<T>,
    pub leak: T,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d as f64).sqrt();
        AttentionParams {
            w1: Matrix::uniform(d, 2 * d, bound, rng),
            w2: Matrix::uniform(d, 2 * d, bound, rng),
            p: crate::linalg::uniform_vec(d, bound, rng),
            q: crate::linalg::uniform_vec(d, bound, rng),
            leak: T::of(DEFAULT_LEAK),
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let d = self.p.len();
        AttentionParams {
            w1: Matrix::zeros(d, 2 * d),
            w2: Matrix::zeros(d, 2 * d),
            p: vec![T::zero(); d],
            q: vec![T::zero(); d],
            leak: self.leak,
        }
    }

    pub fn dim(&self) -> usize {
        self.p.len()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.is_finite()
            && self.w2.is_finite()
            && self.p.iter().chain(&self.q).all(|x| x.is_finite())
    }

    /// `self += scale · other` over the trainable tensors.
    pub fn axpy(&mut self, scale: T, other: &AttentionParams<T>) {
        self.w1.axpy(scale, &other.w1);
        self.w2.axpy(scale, &other.w2);
        axpy(&mut self.p, scale, &other.p);
        axpy(&mut self.q, scale, &other.q);
    }

    pub fn flat_len(&self) -> usize {
        self.w1.data().len() + self.w2.data().len() + 2 * self.p.len()
    }

    fn locate(&self, i: usize) -> (usize, usize) {
        let a = self.w1.data().len();
        let b = a + self.w2.data().len();
        let c = b + self.p.len();
        if i < a {
            (0, i)
        } else if i < b {
            (1, i - a)
        } else if i < c {
            (2, i - b)
        } else {
            (3, i - c)
        }
    }

    pub(crate) fn flat_get(&self, i: usize) -> T {
        match self.locate(i) {
            (0, j) => self.w1.data()[j],
            (1, j) => self.w2.data()[j],
            (2, j) => self.p[j],
            (_, j) => self.q[j],
        }
    }

    pub(crate) fn flat_set(&mut self, i: usize, v: T) {
        match self.locate(i) {
            (0, j) => self.w1.data_mut()[j] = v,
            (1, j) => self.w2.data_mut()[j] = v,
            (2, j) => self.p[j] = v,
            (_, j) => self.q[j] = v,
        }
    }
}

/// One relation group of a neighbourhood, as borrowed vectors.
pub struct Group<'a, T> {
    pub v_r: &'a [T],
    pub tails: Vec<&'a [T]>,
}

/// Forward values for one entity, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct AttentionCache<T> {
    pub alpha: Vec<T>,
    pub beta: Vec<Vec<T>>,
    a: Vec<Vec<T>>,
    s: Vec<T>,
    b: Vec<Vec<Vec<T>>>,
    u: Vec<Vec<T>>,
    msg: Vec<Vec<Vec<T>>>,
    z: Vec<T>,
}

impl<T: Scalar> AttentionCache<T> {
    pub fn gamma(&self, g: usize, k: usize) -> T {
        self.alpha[g] * self.beta[g][k]
    }
}

/// Input gradients of one aggregation.
pub struct AggregateGrads<T> {
    pub h: Vec<T>,
    /// per group, per tail
    pub tails: Vec<Vec<Vec<T>>>,
    /// per group
    pub v_r: Vec<Vec<T>>,
}

/// Attention and aggregation for `h` over `groups`. `None` when the
/// neighbourhood is empty, in which case `h' = h`.
pub fn forward<T: Scalar>(
    h: &[T],
    groups: &[Group<'_, T>],
    params: &AttentionParams<T>,
) -> Option<(Vec<T>, AttentionCache<T>)> {
    if groups.is_empty() || groups.iter().any(|g| g.tails.is_empty()) {
        return None;
    }
    let leak = params.leak;
    let a: Vec<Vec<T>> = groups.iter().map(|g| params.w1.matvec_concat(h, g.v_r)).collect();
    let s: Vec<T> = a.iter().map(|a_r| dot(&params.p, a_r)).collect();
    let alpha = softmax(&s.iter().map(|&x| leaky_relu(x, leak)).collect::<Vec<_>>());

    let mut b = Vec::with_capacity(groups.len());
    let mut u = Vec::with_capacity(groups.len());
    let mut beta = Vec::with_capacity(groups.len());
    let mut msg = Vec::with_capacity(groups.len());
    let mut z = h.to_vec();
    for (gi, g) in groups.iter().enumerate() {
        let b_r: Vec<Vec<T>> = g.tails.iter().map(|t| params.w2.matvec_concat(&a[gi], t)).collect();
        let u_r: Vec<T> = b_r.iter().map(|b_rt| dot(&params.q, b_rt)).collect();
        let beta_r = softmax(&u_r.iter().map(|&x| leaky_relu(x, leak)).collect::<Vec<_>>());
        let msg_r: Vec<Vec<T>> = g.tails.iter().map(|t| params.w1.matvec_concat(t, g.v_r)).collect();
        for (k, m) in msg_r.iter().enumerate() {
            axpy(&mut z, alpha[gi] * beta_r[k], m);
        }
        b.push(b_r);
        u.push(u_r);
        beta.push(beta_r);
        msg.push(msg_r);
    }
    let out = z.iter().map(|&x| relu(x)).collect();
    Some((
        out,
        AttentionCache {
            alpha,
            beta,
            a,
            s,
            b,
            u,
            msg,
            z,
        },
    ))
}

/// Backward pass of [`forward`]. Parameter gradients are accumulated into
/// `grad`; input gradients are returned.
pub fn backward<T: Scalar>(
    h: &[T],
    groups: &[Group<'_, T>],
    params: &AttentionParams<T>,
    cache: &AttentionCache<T>,
    upstream: &[T],
    grad: &mut AttentionParams<T>,
) -> AggregateGrads<T> {
    let d = h.len();
    let leak = params.leak;
    let dz: Vec<T> = upstream
        .iter()
        .zip(&cache.z)
        .map(|(&g, &z)| if z > T::zero() { g } else { T::zero() })
        .collect();
    let mut dh = dz.clone();
    let mut dtails: Vec<Vec<Vec<T>>> = groups.iter().map(|g| vec![vec![T::zero(); d]; g.tails.len()]).collect();
    let mut dv: Vec<Vec<T>> = vec![vec![T::zero(); d]; groups.len()];
    let mut dalpha = vec![T::zero(); groups.len()];
    let mut da: Vec<Vec<T>> = vec![vec![T::zero(); d]; groups.len()];
    // both are shared by every (r, t) term
    let dtv = params.w1.matvec_t(&dz);
    let dat = params.w2.matvec_t(&params.q);

    for (gi, g) in groups.iter().enumerate() {
        let alpha = cache.alpha[gi];
        let beta = &cache.beta[gi];
        let mut dbeta = vec![T::zero(); g.tails.len()];
        for (k, t) in g.tails.iter().enumerate() {
            let gamma = alpha * beta[k];
            let dgamma = dot(&dz, &cache.msg[gi][k]);
            dalpha[gi] += dgamma * beta[k];
            dbeta[k] = dgamma * alpha;
            // message W1 [t ‖ v_r]
            grad.w1.add_outer_concat(gamma, &dz, t, g.v_r);
            axpy(&mut dtails[gi][k], gamma, &dtv[..d]);
            axpy(&mut dv[gi], gamma, &dtv[d..]);
        }
        let dm = softmax_backward(beta, &dbeta);
        for (k, t) in g.tails.iter().enumerate() {
            let du = dm[k] * leaky_relu_grad(cache.u[gi][k], leak);
            if du == T::zero() {
                continue;
            }
            axpy(&mut grad.q, du, &cache.b[gi][k]);
            // b = W2 [a ‖ t], db = du · q
            grad.w2.add_outer_concat(du, &params.q, &cache.a[gi], t);
            axpy(&mut da[gi], du, &dat[..d]);
            axpy(&mut dtails[gi][k], du, &dat[d..]);
        }
    }

    let dl = softmax_backward(&cache.alpha, &dalpha);
    for (gi, g) in groups.iter().enumerate() {
        let ds = dl[gi] * leaky_relu_grad(cache.s[gi], leak);
        axpy(&mut grad.p, ds, &cache.a[gi]);
        axpy(&mut da[gi], ds, &params.p);
        // a = W1 [h ‖ v_r]
        grad.w1.add_outer_concat(T::one(), &da[gi], h, g.v_r);
        let dhv = params.w1.matvec_t(&da[gi]);
        axpy(&mut dh, T::one(), &dhv[..d]);
        axpy(&mut dv[gi], T::one(), &dhv[d..]);
    }

    AggregateGrads {
        h: dh,
        tails: dtails,
        v_r: dv,
    }
}

/// Neighbourhood of `h` resolved to embedding slots: `(relation, tail slots)`.
pub fn neighborhood_slots<T: Scalar>(
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    h: &EntityId,
) -> Result<Vec<(RelationKind, Vec<usize>)>> {
    kg.neighborhood(h)
        .into_iter()
        .map(|(r, tails)| {
            let slots = tails
                .iter()
                .map(|t| emb.slot(t).ok_or_else(|| Error::Empty(format!("no embedding for `{t}`"))))
                .collect::<Result<Vec<_>>>()?;
            Ok((r, slots))
        })
        .collect()
}

pub fn groups_from_slots<'a, T: Scalar>(
    emb: &'a EmbeddingTable<T>,
    slots: &[(RelationKind, Vec<usize>)],
) -> Vec<Group<'a, T>> {
    slots
        .iter()
        .map(|(r, tails)| Group {
            v_r: emb.relation(*r),
            tails: tails.iter().map(|&s| emb.entity_at(s)).collect(),
        })
        .collect()
}

/// α, β and γ of one entity, keyed by relation and tail id.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct AttentionScores<T> {
    pub alpha: Vec<(RelationKind, T)>,
    pub beta: Vec<(RelationKind, EntityId, T)>,
    pub gamma: Vec<(RelationKind, EntityId, T)>,
}

fn resolve<'a, T: Scalar>(
    h: &EntityId,
    kg: &KnowledgeGraph,
    emb: &'a EmbeddingTable<T>,
) -> Result<(&'a [T], Vec<(RelationKind, Vec<usize>)>)> {
    let hv = emb
        .entity(h)
        .ok_or_else(|| Error::UnknownEntity(h.to_string()))?;
    Ok((hv, neighborhood_slots(kg, emb, h)?))
}

/// All attention levels for `h`.
pub fn attention_scores<T: Scalar>(
    h: &EntityId,
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    params: &AttentionParams<T>,
) -> Result<AttentionScores<T>> {
    let (hv, slots) = resolve(h, kg, emb)?;
    let groups = groups_from_slots(emb, &slots);
    let (_, cache) = forward(hv, &groups, params).ok_or_else(|| Error::EmptyNeighborhood(h.to_string()))?;
    let mut out = AttentionScores {
        alpha: Vec::new(),
        beta: Vec::new(),
        gamma: Vec::new(),
    };
    for (gi, (r, tails)) in slots.iter().enumerate() {
        out.alpha.push((*r, cache.alpha[gi]));
        for (k, &slot) in tails.iter().enumerate() {
            let id = emb.id_at(slot).clone();
            out.beta.push((*r, id.clone(), cache.beta[gi][k]));
            out.gamma.push((*r, id, cache.gamma(gi, k)));
        }
    }
    Ok(out)
}

pub fn relation_attention<T: Scalar>(
    h: &EntityId,
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    params: &AttentionParams<T>,
) -> Result<Vec<(RelationKind, T)>> {
    Ok(attention_scores(h, kg, emb, params)?.alpha)
}

/// `β` over the tails of `h` under `r`, given the pre-activation `a_{h,r}`.
pub fn entity_attention<T: Scalar>(
    h: &EntityId,
    r: RelationKind,
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    params: &AttentionParams<T>,
    a_hr: &[T],
) -> Result<Vec<(EntityId, T)>> {
    let tails = kg.neighbors(h, r);
    if tails.is_empty() {
        return Err(Error::EmptyNeighborhood(format!("{h} under {r}")));
    }
    let logits = tails
        .iter()
        .map(|t| {
            let tv = emb
                .entity(t)
                .ok_or_else(|| Error::UnknownEntity(t.to_string()))?;
            Ok(leaky_relu(dot(&params.q, &params.w2.matvec_concat(a_hr, tv)), params.leak))
        })
        .collect::<Result<Vec<T>>>()?;
    Ok(tails.iter().cloned().zip(softmax(&logits)).collect())
}

/// `a_{h,r} = W1 [h ‖ v_r]`
pub fn relation_preactivation<T: Scalar>(h: &[T], v_r: &[T], params: &AttentionParams<T>) -> Vec<T> {
    params.w1.matvec_concat(h, v_r)
}

/// Attention-weighted update of `h`. Isolated entities pass through.
pub fn aggregate<T: Scalar>(
    h: &EntityId,
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    params: &AttentionParams<T>,
) -> Result<Vec<T>> {
    let (hv, slots) = resolve(h, kg, emb)?;
    let groups = groups_from_slots(emb, &slots);
    Ok(match forward(hv, &groups, params) {
        Some((out, _)) => out,
        None => hv.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vecs(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n).map(|_| crate::linalg::uniform_vec(d, 1.0, rng)).collect()
    }

    #[test]
    fn single_relation_and_single_tail_are_certain() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = AttentionParams::<f64>::init(4, &mut rng);
        let v = rand_vecs(3, 4, &mut rng);
        let groups = [Group {
            v_r: &v[1],
            tails: vec![&v[2][..]],
        }];
        let (out, cache) = forward(&v[0], &groups, &params).unwrap();
        assert_eq!(cache.alpha, vec![1.0]);
        assert_eq!(cache.beta, vec![vec![1.0]]);
        let msg = params.w1.matvec_concat(&v[2], &v[1]);
        let want: Vec<f64> = msg.iter().zip(&v[0]).map(|(m, h)| (m + h).max(0.0)).collect();
        assert_eq!(out, want);
    }

    #[test]
    fn identical_relation_vectors_split_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = AttentionParams::<f64>::init(4, &mut rng);
        let v = rand_vecs(4, 4, &mut rng);
        let groups = [
            Group {
                v_r: &v[1],
                tails: vec![&v[2][..], &v[2][..]],
            },
            Group {
                v_r: &v[1],
                tails: vec![&v[3][..]],
            },
        ];
        let (_, cache) = forward(&v[0], &groups, &params).unwrap();
        assert!((cache.alpha[0] - 0.5).abs() < 1e-15);
        assert!((cache.beta[0][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn straight_line_oracle() {
        let d = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = AttentionParams::<f64>::init(d, &mut rng);
        let v = rand_vecs(7, d, &mut rng);
        let groups = [
            Group {
                v_r: &v[1],
                tails: vec![&v[4][..], &v[5][..]],
            },
            Group {
                v_r: &v[2],
                tails: vec![&v[6][..]],
            },
            Group {
                v_r: &v[3],
                tails: vec![&v[5][..], &v[6][..], &v[4][..]],
            },
        ];
        let (out, cache) = forward(&v[0], &groups, &params).unwrap();

        let lrelu = |x: f64| if x > 0.0 { x } else { 0.2 * x };
        let mv = |m: &Matrix<f64>, a: &[f64], b: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|i| {
                    let mut s = 0.0;
                    for j in 0..d {
                        s += m.get(i, j) * a[j];
                        s += m.get(i, d + j) * b[j];
                    }
                    s
                })
                .collect()
        };
        let dotf = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut e_alpha = Vec::new();
        for g in &groups {
            e_alpha.push(lrelu(dotf(&params.p, &mv(&params.w1, &v[0], g.v_r))).exp());
        }
        let za: f64 = e_alpha.iter().sum();
        let mut z = v[0].clone();
        for (gi, g) in groups.iter().enumerate() {
            let alpha = e_alpha[gi] / za;
            assert!((alpha - cache.alpha[gi]).abs() < 1e-12);
            let a = mv(&params.w1, &v[0], g.v_r);
            let e_beta: Vec<f64> = g
                .tails
                .iter()
                .map(|t| lrelu(dotf(&params.q, &mv(&params.w2, &a, t))).exp())
                .collect();
            let zb: f64 = e_beta.iter().sum();
            for (k, t) in g.tails.iter().enumerate() {
                let beta = e_beta[k] / zb;
                assert!((beta - cache.beta[gi][k]).abs() < 1e-12);
                let m = mv(&params.w1, t, g.v_r);
                for i in 0..d {
                    z[i] += alpha * beta * m[i];
                }
            }
        }
        for i in 0..d {
            assert!((z[i].max(0.0) - out[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_neighbourhood_returns_none() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = AttentionParams::<f64>::init(3, &mut rng);
        assert!(forward(&[1.0, 2.0, 3.0], &[], &params).is_none());
    }
}
