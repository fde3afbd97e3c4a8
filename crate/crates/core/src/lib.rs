//! Factual and counterfactual explanations for session-based recommenders.
//!
//! A reinforcement-learning agent walks a session item by item and decides
//! which items form the explanation: a sub-session that on its own keeps the
//! recommended item in the top-K list, and whose removal pushes it out. An
//! exhaustive oracle certifies the agent on short sessions, and the
//! explanations double as positive/negative views for contrastive
//! fine-tuning of the recommender.

// NaN-rejecting `!(x > 0.0)` checks and index loops in the math kernels are intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checkpoint;
pub mod contrastive;
pub mod data;
pub mod env;
pub mod error;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod params;
pub mod policy;
pub mod recommender;
pub mod seed;

pub use error::{Error, Result};
pub use model::{
    apply_mask, mask_complexity, Catalog, ExplanationRecord, ExplanationView, ItemId, Mask, RecList,
    RewardBreakdown, Session,
};
pub use recommender::{AnyRecommender, MarkovCountRecommender, NeuralEmbeddingRecommender, Recommender};
