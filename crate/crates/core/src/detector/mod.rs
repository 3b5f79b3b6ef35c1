//! Entity recognition and knowledge-aware user classification.
//!
//! Recognition is a longest-match gazetteer over graph surfaces; its output
//! doubles as silver BIO labels for a small trainable tagger that shares
//! token embeddings with the classifier. The classifier fuses each
//! recognised entity's token-level embedding with its graph embedding,
//! pools the fused vectors weighted by entity importance and scores the
//! user with a two-layer perceptron.

mod lexicon;
mod metrics;
mod params;
mod train;

use serde::{Deserialize, Serialize};

pub use lexicon::{recognize_lexicon, silver_tags, Lexicon};
pub use metrics::{Confusion, Prf};
pub use params::{
    bce, detection_loss, ner_loss, DepCache, DetectorConfig, DetectorGrad, DetectorParams, Mode, TagCache, Vocab,
    EPS, UNK,
};
pub use train::{
    dep_loss_grad, featurize, ner_loss_grad, predict, train_joint, EntityFeature, JointReport, UserFeatures,
};

/// One user's labelled post history.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserDocument {
    pub user_id: String,
    pub label: bool,
    pub period: u32,
    pub posts: Vec<Vec<String>>,
}

impl UserDocument {
    pub fn new(user_id: impl Into<String>, label: bool, period: u32, posts: &[&str]) -> Self {
        UserDocument {
            user_id: user_id.into(),
            label,
            period,
            posts: posts.iter().map(|p| tokenize(p)).collect(),
        }
    }

    pub fn num_tokens(&self) -> usize {
        self.posts.iter().map(Vec::len).sum()
    }
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
/// Inner hyphens and apostrophes are kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Bio {
    B = 0,
    I = 1,
    O = 2,
}

impl Bio {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecognizedEntity {
    pub surface: String,
    pub post: usize,
    /// token range, end exclusive
    pub start: usize,
    pub end: usize,
    pub tags: Vec<Bio>,
    pub entity: Option<crate::kg::EntityId>,
}

impl RecognizedEntity {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_strips_punctuation() {
        assert_eq!(tokenize("I feel  Anxious, today!"), ["i", "feel", "anxious", "today"]);
        assert_eq!(tokenize("black-and-white thinking..."), ["black-and-white", "thinking"]);
        assert_eq!(tokenize("  -- "), Vec::<String>::new());
    }
}
