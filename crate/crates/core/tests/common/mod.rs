#![allow(dead_code)]

use fcesr_core::params::ParamStore;
use fcesr_core::{ItemId, MarkovCountRecommender};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-10 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// Central differences of `f` at `coords` of `params`; returns the worst
/// relative error against `analytic`.
pub fn fd_check<F>(params: &mut ParamStore, analytic: &ParamStore, coords: &[(String, usize)], mut f: F) -> f64
where
    F: FnMut(&ParamStore) -> f64,
{
    let mut worst = 0.0f64;
    for (name, i) in coords {
        let orig = params.expect(name).data[*i];
        params.expect_mut(name).data[*i] = orig + FD_STEP;
        let up = f(params);
        params.expect_mut(name).data[*i] = orig - FD_STEP;
        let down = f(params);
        params.expect_mut(name).data[*i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let err = rel_err(analytic.expect(name).data[*i], numeric);
        assert!(err.is_finite());
        worst = worst.max(err);
    }
    worst
}

/// `count` coordinates with a non-negligible analytic gradient, drawn at
/// random, plus a few arbitrary ones.
pub fn pick_coords(grads: &ParamStore, count: usize, rng: &mut ChaCha8Rng) -> Vec<(String, usize)> {
    let all = grads.coordinates();
    let mut live: Vec<_> = all
        .iter()
        .filter(|(n, i)| grads.expect(n).data[*i].abs() > 1e-6)
        .cloned()
        .collect();
    assert!(live.len() >= count, "only {} live coordinates", live.len());
    live.shuffle(rng);
    live.truncate(count);
    live.extend(all.choose_multiple(rng, 5).cloned());
    live
}

pub fn random_session(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<ItemId> {
    (0..len).map(|_| rng.gen_range(0..n)).collect()
}

/// Markov model with sparse random transition counts.
pub fn random_markov(rng: &mut ChaCha8Rng, n: usize) -> MarkovCountRecommender {
    let transitions = (0..n * n)
        .map(|_| if rng.gen_bool(0.3) { rng.gen_range(1..6) } else { 0 })
        .collect();
    let popularity = (0..n).map(|_| rng.gen_range(0..10)).collect();
    MarkovCountRecommender::new(n, transitions, popularity, 0.5).unwrap()
}
