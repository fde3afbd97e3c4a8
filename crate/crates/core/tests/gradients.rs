mod common;

use common::*;
use fcesr_core::contrastive::{contrastive_loss, ContrastiveMode, FinetuneTriple};
use fcesr_core::policy::PolicyParams;
use fcesr_core::seed::rng;
use fcesr_core::NeuralEmbeddingRecommender;
use rand::Rng;

const INSTANCES: u64 = 5;
const COORDS: usize = 20;

#[test]
fn policy_log_prob_gradient() {
    for inst in 0..INSTANCES {
        let mut r = rng(100 + inst);
        let policy = PolicyParams::new(12, 8, inst).unwrap();
        let x: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
        for action in [0u8, 1] {
            let (_, grads) = policy.log_prob_grad(&x, action).unwrap();
            let coords = pick_coords(&grads, COORDS, &mut r);
            let mut store = policy.store().clone();
            let worst = fd_check(&mut store, &grads, &coords, |s| {
                let p = PolicyParams::from_store(s.clone()).unwrap();
                p.log_prob_grad(&x, action).unwrap().0
            });
            assert!(worst <= FD_TOL, "instance {inst} action {action}: {worst:e}");
        }
    }
}

#[test]
fn recommender_cross_entropy_gradient() {
    for inst in 0..INSTANCES {
        let mut r = rng(200 + inst);
        let (n, d) = (15, 6);
        let rec = NeuralEmbeddingRecommender::new(n, d, 0.7, inst).unwrap();
        let batch: Vec<_> = (0..6)
            .map(|_| {
                let len = r.gen_range(1..6);
                (random_session(&mut r, n, len), r.gen_range(0..n))
            })
            .collect();
        let (_, grads) = rec.loss_and_grads(&batch).unwrap();
        let coords = pick_coords(&grads, COORDS, &mut r);
        let mut store = rec.params().clone();
        let worst = fd_check(&mut store, &grads, &coords, |s| {
            let m = NeuralEmbeddingRecommender::from_params(n, d, 0.7, s.clone()).unwrap();
            m.loss_and_grads(&batch).unwrap().0
        });
        assert!(worst <= FD_TOL, "instance {inst}: {worst:e}");
    }
}

fn random_triples(r: &mut rand_chacha::ChaCha8Rng, n: usize, count: usize) -> Vec<FinetuneTriple> {
    (0..count)
        .map(|_| {
            let len = r.gen_range(2..7);
            let anchor = random_session(r, n, len);
            let (mut pos, mut neg) = (Vec::new(), Vec::new());
            for &v in &anchor {
                if r.gen_bool(0.5) {
                    pos.push(v)
                } else {
                    neg.push(v)
                }
            }
            if pos.is_empty() {
                pos.push(neg.pop().unwrap());
            }
            FinetuneTriple {
                anchor,
                positive: pos,
                negative: neg,
                target: 0,
            }
        })
        .collect()
}

#[test]
fn contrastive_loss_gradient_all_modes() {
    for inst in 0..INSTANCES {
        let mut r = rng(300 + inst);
        let (n, d) = (12, 5);
        let rec = NeuralEmbeddingRecommender::new(n, d, 0.8, inst).unwrap();
        let batch = random_triples(&mut r, n, 5);
        for (mode, tau) in [
            (ContrastiveMode::Both, 1.0),
            (ContrastiveMode::Both, 0.3),
            (ContrastiveMode::PosOnly, 0.5),
            (ContrastiveMode::NegOnly, 0.5),
        ] {
            let c = contrastive_loss(&batch, &rec, tau, mode).unwrap();
            let coords = pick_coords(&c.grads, COORDS, &mut r);
            let mut store = rec.params().clone();
            let worst = fd_check(&mut store, &c.grads, &coords, |s| {
                let m = NeuralEmbeddingRecommender::from_params(n, d, 0.8, s.clone()).unwrap();
                contrastive_loss(&batch, &m, tau, mode).unwrap().loss
            });
            assert!(worst <= FD_TOL, "instance {inst} {mode:?}: {worst:e}");
        }
    }
}

#[test]
fn combined_objective_gradient() {
    let lambda = 0.7;
    for inst in 0..INSTANCES {
        let mut r = rng(400 + inst);
        let (n, d) = (12, 5);
        let rec = NeuralEmbeddingRecommender::new(n, d, 0.6, inst).unwrap();
        let triples = random_triples(&mut r, n, 4);
        let pairs: Vec<_> = (0..5).map(|_| (random_session(&mut r, n, 3), r.gen_range(0..n))).collect();
        let objective = |m: &NeuralEmbeddingRecommender| {
            let (l, mut g) = m.loss_and_grads(&pairs).unwrap();
            let c = contrastive_loss(&triples, m, 1.0, ContrastiveMode::Both).unwrap();
            g.add_scaled(&c.grads, lambda).unwrap();
            (l + lambda * c.loss, g)
        };
        let (_, grads) = objective(&rec);
        let coords = pick_coords(&grads, COORDS, &mut r);
        let mut store = rec.params().clone();
        let worst = fd_check(&mut store, &grads, &coords, |s| {
            objective(&NeuralEmbeddingRecommender::from_params(n, d, 0.6, s.clone()).unwrap()).0
        });
        assert!(worst <= FD_TOL, "instance {inst}: {worst:e}");
    }
}
