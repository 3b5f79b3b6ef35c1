use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{logistic_loss, logistic_loss_grad, Encoder, LossTerm, Model, ModelGrad};
use super::sampling::NegativeSampler;
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, TripletKey};
use crate::num::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// negatives per positive
    pub negatives: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d: usize,
    pub encoder: Encoder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            negatives: 1,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            d: 64,
            encoder: Encoder::Attention,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(
                "learning rate, batch size and d must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A positive triplet with its sampled corruptions.
pub type Sample = (TripletKey, Vec<TripletKey>);

fn eq6_terms<T: Scalar>(batch: &[Sample]) -> Vec<LossTerm<T>> {
    let mut terms = Vec::new();
    for (pos, negs) in batch {
        terms.push(LossTerm::positive(pos.clone()));
        terms.extend(negs.iter().map(|n| LossTerm::negative(n.clone(), T::one())));
    }
    terms
}

/// Mean over the batch of `−ln σ(f⁺) − Σ ln σ(−f⁻)`.
pub fn kg_loss<T: Scalar>(model: &Model<T>, kg: &KnowledgeGraph, encoder: Encoder, batch: &[Sample]) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let scale = T::one() / T::of(batch.len() as f64);
    logistic_loss(model, kg, encoder, &eq6_terms(batch), scale)
}

pub fn kg_loss_grad<T: Scalar>(
    model: &Model<T>,
    kg: &KnowledgeGraph,
    encoder: Encoder,
    batch: &[Sample],
) -> Result<(T, ModelGrad<T>)> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let scale = T::one() / T::of(batch.len() as f64);
    logistic_loss_grad(model, kg, encoder, &eq6_terms(batch), scale)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// mean batch loss per epoch, measured before each step
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Plain SGD on the pairwise logistic loss over `positives`, with fresh
/// negatives drawn every epoch. A positive with no free corruption trains
/// without negatives.
pub fn pretrain<T: Scalar>(
    kg: &KnowledgeGraph,
    positives: &[TripletKey],
    model: &mut Model<T>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport::default();
    if cfg.epochs == 0 || positives.is_empty() {
        return Ok(report);
    }
    let sampler = NegativeSampler::new(kg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<TripletKey> = positives.to_vec();
    let lr = T::of(cfg.learning_rate);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|k| Ok((k.clone(), sampler.sample_available(k, cfg.negatives, &mut rng)?)))
                .collect::<Result<_>>()?;
            let (loss, grad) = kg_loss_grad(model, kg, cfg.encoder, &batch)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence(format!(
                    "epoch {epoch}, batch {batches}: loss {loss}"
                )));
            }
            model.apply(lr, &grad);
            sum += loss.f64();
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::Divergence(format!("non-finite parameters after epoch {epoch}")));
        }
        report.epoch_losses.push(sum / batches as f64);
    }
    Ok(report)
}

/// Trailing-window means, used to judge whether a noisy loss curve trends down.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || values.len() < window {
        return Vec::new();
    }
    values.windows(window).map(|w| w.iter().sum::<f64>() / window as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Entity, EntityClass, RelationKind, Triplet};
    use crate::kge::ConvEGeometry;
    use rand::SeedableRng;

    fn toy() -> (KnowledgeGraph, Vec<TripletKey>) {
        let mut kg = KnowledgeGraph::with_reserved_nodes();
        for (id, class) in [
            ("a", EntityClass::PsySym),
            ("b", EntityClass::PsySym),
            ("c", EntityClass::PsySym),
            ("m", EntityClass::Med),
            ("n", EntityClass::Med),
            ("e", EntityClass::Event),
        ] {
            kg.add_entity(Entity::seed(id, class, id)).unwrap();
        }
        kg.link_class_nodes().unwrap();
        kg.add_triplet(Triplet::new("a", RelationKind::PsyCo, "b")).unwrap();
        kg.add_triplet(Triplet::new("m", RelationKind::MedPsy, "a")).unwrap();
        kg.add_triplet(Triplet::new("e", RelationKind::LifePsy, "c")).unwrap();
        let keys = kg.active_triplets().map(Triplet::key).collect();
        (kg, keys)
    }

    fn small_geometry() -> ConvEGeometry {
        ConvEGeometry {
            d: 9,
            rows: 3,
            cols: 3,
            filters: 2,
            kernel_h: 2,
            kernel_w: 2,
        }
    }

    #[test]
    fn zero_scores_give_ln2_per_term() {
        let (kg, keys) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Model::<f64>::init(&kg, small_geometry(), &mut rng).unwrap();
        model.conve.filter = crate::linalg::Matrix::zeros(2, 4);
        let sampler = NegativeSampler::new(&kg);
        for n in [1, 3] {
            let batch: Vec<Sample> = keys[..2]
                .iter()
                .map(|k| (k.clone(), sampler.sample(k, n, &mut rng).unwrap()))
                .collect();
            let loss = kg_loss(&model, &kg, Encoder::Attention, &batch).unwrap();
            let want = (n as f64 + 1.0) * std::f64::consts::LN_2;
            assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
        }
        assert!(kg_loss(&model, &kg, Encoder::Plain, &[]).is_err());
    }

    #[test]
    fn training_lowers_loss_and_is_reproducible() {
        let (kg, keys) = toy();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 4,
            d: 9,
            learning_rate: 0.05,
            seed: 11,
            ..TrainConfig::default()
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut model = Model::<f64>::init(&kg, small_geometry(), &mut rng).unwrap();
            let report = pretrain(&kg, &keys, &mut model, &cfg).unwrap();
            (model, report)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1, m2);
        assert_eq!(r1, r2);
        let s = smoothed(&r1.epoch_losses, 5);
        assert!(s.last().unwrap() < s.first().unwrap());
        assert!(m1.is_finite());
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let (kg, keys) = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = Model::<f32>::init(&kg, small_geometry(), &mut rng).unwrap();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 0,
            d: 9,
            ..TrainConfig::default()
        };
        pretrain(&kg, &keys, &mut model, &cfg).unwrap();
        assert_eq!(model, before);
    }
}
