use super::{EntityId, KnowledgeGraph};
use crate::error::{Error, Result};
use crate::kge::EmbeddingTable;
use crate::linalg::{dot, norm};
use crate::num::Scalar;

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroNorm);
    }
    let c = dot(a, b) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Top-`m` factor entities by cosine similarity to `query`, descending,
/// ties broken by ascending id. Class and depression nodes are excluded.
pub fn top_m_similar<T: Scalar>(
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable<T>,
    query: &[T],
    m: usize,
) -> Result<Vec<(EntityId, T)>> {
    if m == 0 {
        return Err(Error::InvalidArgument("M must be positive".into()));
    }
    if query.len() != emb.dim() {
        return Err(Error::DimensionMismatch {
            expected: emb.dim(),
            got: query.len(),
        });
    }
    let mut scored = Vec::new();
    for e in kg.factor_entities() {
        let v = emb
            .entity(&e.id)
            .ok_or_else(|| Error::Empty(format!("no embedding for `{}`", e.id)))?;
        scored.push((e.id.clone(), cosine_similarity(query, v)?));
    }
    // ids arrive sorted, so a stable sort keeps ascending id among ties
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    scored.truncate(m);
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_fixtures() {
        let v = [0.3f64, -1.0, 2.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!((cosine_similarity(&v, &neg).unwrap() + 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0f64, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(matches!(cosine_similarity(&[0.0f64, 0.0], &[1.0, 1.0]), Err(Error::ZeroNorm)));
        assert!(cosine_similarity(&[1.0f64], &[1.0, 1.0]).is_err());
    }
}
