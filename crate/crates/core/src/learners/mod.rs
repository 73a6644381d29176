//! Embedding network and the per-episode adaptation heads.

mod checkpoint;
mod head;
mod net;

pub use checkpoint::{Checkpoint, CheckpointHeader, ModelState};
pub use head::{
    accuracy_from_logits, adapt, adapt_episode, argmax_lowest, loss_and_gradients, mean_log_odds,
    score_episode, AdaptedClassifier, HeadConfig, HeadKind, QueryScore,
};
pub use net::{embed, EmbeddingNet, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
