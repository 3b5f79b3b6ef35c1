//! Closed-loop knowledge-graph learning for depression detection.
//!
//! A typed knowledge graph of depression-related factors is embedded with
//! ConvE and hierarchical attention, entity importance is read off
//! maximum-probability paths to the depression node, and a small
//! detector classifies users from the entities they mention. Each period
//! the detector's evidence refines the embeddings and, every few periods,
//! reviewed candidate triplets expand the graph.
//!
//! Numeric code is generic over [`num::Scalar`]; the aliases below fix the
//! scalar type for the common cases.

pub mod attention;
pub mod closed_loop;
pub mod detector;
pub mod error;
pub mod expand;
pub mod importance;
pub mod kg;
pub mod kge;
pub mod linalg;
pub mod num;
pub mod refine;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};

pub type Model64 = kge::Model<f64>;
pub type Model32 = kge::Model<f32>;
pub type Embeddings64 = kge::EmbeddingTable<f64>;
pub type Embeddings32 = kge::EmbeddingTable<f32>;
pub type Attention64 = attention::AttentionParams<f64>;
pub type Attention32 = attention::AttentionParams<f32>;
