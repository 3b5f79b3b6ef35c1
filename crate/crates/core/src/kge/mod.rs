//! Graph embedding: ConvE scoring, negative sampling, the pairwise
//! logistic loss and SGD training of every embedding parameter.

mod conve;
mod embedding;
pub mod gradcheck;
mod io;
mod model;
mod sampling;
mod train;

pub use conve::{ConvECache, ConvEGeometry, ConvEGrads, ConvEParams};
pub use embedding::EmbeddingTable;
pub use io::{load_model, model_to_string, parse_model, save_model, EMB_HEADER};
pub use model::{logistic_loss, logistic_loss_grad, Encoder, LossTerm, Model, ModelGrad};
pub use sampling::{sample_negatives, NegativeSampler, MAX_ATTEMPTS};
pub use train::{kg_loss, kg_loss_grad, pretrain, smoothed, Sample, TrainConfig, TrainReport};
