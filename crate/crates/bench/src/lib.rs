//! Shared fixtures for the benchmarks.

use fcesr_core::data::{generate_synthetic, SynthSpec};
use fcesr_core::{MarkovCountRecommender, NeuralEmbeddingRecommender, Session};

pub struct Fixture {
    pub sessions: Vec<Session>,
    pub markov: MarkovCountRecommender,
    pub neural: NeuralEmbeddingRecommender,
}

/// Default planted dataset with a fitted Markov model and an untrained
/// neural model (timing does not depend on the weights).
pub fn fixture() -> Fixture {
    let data = generate_synthetic(&SynthSpec::default()).expect("synthetic data");
    let n = data.split.catalog.item_count();
    Fixture {
        sessions: data.split.all_sessions(),
        markov: MarkovCountRecommender::fit(&data.split.train_sessions(), n, 0.1).expect("markov fit"),
        neural: NeuralEmbeddingRecommender::new(n, 16, 0.3, 0).expect("neural init"),
    }
}

/// The longest sessions of at most `max_len` items.
pub fn longest(sessions: &[Session], max_len: usize, count: usize) -> Vec<Session> {
    let mut picked: Vec<Session> = sessions.iter().filter(|s| s.len() <= max_len).cloned().collect();
    picked.sort_by_key(|s| std::cmp::Reverse(s.len()));
    picked.truncate(count);
    picked
}
