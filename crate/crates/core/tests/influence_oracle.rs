//! Influence solves checked against explicit-inverse computation, Fisher
//! matrix properties, damping monotonicity, and the large-damping
//! degeneracy to pure BM25 selection.

use std::collections::HashMap;

use icsel_core::influence::{accumulate_fisher, fuse_and_select, influence_sq, Damping, Fusion};
use icsel_core::model_slice::MetaGradient;
use icsel_core::recall::RecallSet;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

fn random_grads(
    rng: &mut ChaCha8Rng,
    count: usize,
    d_prime: usize,
    cols: usize,
) -> Vec<MetaGradient> {
    (0..count)
        .map(|example_id| MetaGradient {
            g: random_matrix(rng, d_prime, cols),
            example_id,
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting; independent of the Cholesky
/// path under test.
fn invert(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut work = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[[i, col]].abs().partial_cmp(&work[[j, col]].abs()).unwrap())
            .unwrap();
        if pivot != col {
            for k in 0..n {
                work.swap([pivot, k], [col, k]);
                inv.swap([pivot, k], [col, k]);
            }
        }
        let diag = work[[col, col]];
        assert!(diag.abs() > 1e-300, "singular matrix in oracle");
        for k in 0..n {
            work[[col, k]] /= diag;
            inv[[col, k]] /= diag;
        }
        for row in 0..n {
            if row != col {
                let factor = work[[row, col]];
                for k in 0..n {
                    work[[row, k]] -= factor * work[[col, k]];
                    inv[[row, k]] -= factor * inv[[col, k]];
                }
            }
        }
    }
    inv
}

fn frob_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// Cyclic Jacobi eigenvalues for small symmetric matrices.
fn jacobi_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..200 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off = off.max(m[[p, q]].abs());
                }
            }
        }
        if off < 1e-13 {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
            }
        }
    }
    (0..n).map(|i| m[[i, i]]).collect()
}

#[test]
fn influence_matches_explicit_inverse_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1F0);
    for round in 0..200 {
        let count = rng.gen_range(2..=10);
        let grads = random_grads(&mut rng, count, 8, 4);
        let lambda = rng.gen_range(0.05..2.0);
        let fisher = accumulate_fisher(&grads, Damping::Fixed(lambda)).unwrap();

        let mut damped = fisher.matrix().clone();
        for i in 0..8 {
            damped[[i, i]] += lambda;
        }
        let inv = invert(&damped);

        let g = MetaGradient {
            g: random_matrix(&mut rng, 8, 4),
            example_id: 0,
        };
        let want = frob_sq(&inv.dot(&g.g));
        let got = influence_sq(&fisher, &g).unwrap();
        assert!(
            (got - want).abs() <= 1e-6 * want.abs().max(1e-300),
            "round {round}: got {got}, oracle {want}"
        );
    }
}

#[test]
fn solve_residual_is_tiny() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2E5);
    for _ in 0..100 {
        let grads = random_grads(&mut rng, 4, 8, 4);
        let lambda = rng.gen_range(0.05..2.0);
        let fisher = accumulate_fisher(&grads, Damping::Fixed(lambda)).unwrap();
        let solver = fisher.solver().unwrap();

        let g = random_matrix(&mut rng, 8, 4);
        let x = solver.solve(&g);
        let mut damped = fisher.matrix().clone();
        for i in 0..8 {
            damped[[i, i]] += lambda;
        }
        let residual = frob_sq(&(damped.dot(&x) - &g)).sqrt();
        let g_norm = frob_sq(&g).sqrt();
        assert!(residual <= 1e-8 * g_norm, "residual {residual} vs {g_norm}");
    }
}

#[test]
fn fisher_is_symmetric_and_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF15);
    for _ in 0..100 {
        let d_prime = rng.gen_range(2..=8);
        let cols = rng.gen_range(1..=6);
        let count = rng.gen_range(1..=10);
        let grads = random_grads(&mut rng, count, d_prime, cols);
        let fisher = accumulate_fisher(&grads, Damping::Auto).unwrap();
        let h = fisher.matrix();

        let max_abs = h.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let asym = (h - &h.t()).iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        assert!(asym <= 1e-10 * max_abs.max(1e-300));

        let min_eig = jacobi_eigenvalues(h)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(
            min_eig >= -1e-8 * fisher.trace() / d_prime as f64,
            "min eigenvalue {min_eig} for trace {}",
            fisher.trace()
        );
    }
}

#[test]
fn influence_is_monotone_decreasing_in_damping() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x300);
    for _ in 0..100 {
        let grads = random_grads(&mut rng, 4, 6, 3);
        let lambda1 = rng.gen_range(0.01..1.0);
        let lambda2 = lambda1 + rng.gen_range(0.01..5.0);
        let g = MetaGradient {
            g: random_matrix(&mut rng, 6, 3),
            example_id: 0,
        };
        let low = influence_sq(
            &accumulate_fisher(&grads, Damping::Fixed(lambda1)).unwrap(),
            &g,
        )
        .unwrap();
        let high = influence_sq(
            &accumulate_fisher(&grads, Damping::Fixed(lambda2)).unwrap(),
            &g,
        )
        .unwrap();
        assert!(
            low >= high,
            "influence should shrink with damping: {low} < {high}"
        );
    }
}

#[test]
fn huge_damping_degenerates_to_bm25_top_k() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1e12);
    for _ in 0..100 {
        let n_candidates = rng.gen_range(3..=12);
        let k = rng.gen_range(1..=n_candidates);
        let grads = random_grads(&mut rng, n_candidates, 5, 3);

        let mut entries: Vec<(usize, f64)> = (0..n_candidates)
            .map(|id| (id, rng.gen_range(0.1..10.0)))
            .collect();
        entries.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let recall = RecallSet {
            query_id: 0,
            entries,
        };

        let fisher = accumulate_fisher(&grads, Damping::Fixed(1.0)).unwrap();
        let lambda = 1e12 * fisher.trace();
        let fisher = accumulate_fisher(&grads, Damping::Fixed(lambda)).unwrap();
        let solver = fisher.solver().unwrap();
        let influences: HashMap<usize, f64> = grads
            .iter()
            .map(|g| (g.example_id, solver.influence_sq(g).unwrap()))
            .collect();

        let fused = fuse_and_select(&recall, &influences, k, Fusion::Sum).unwrap();
        let mut fused_ids: Vec<usize> = fused.chosen.iter().map(|s| s.id).collect();
        fused_ids.sort_unstable();
        let mut bm25_ids: Vec<usize> =
            recall.entries.iter().take(k).map(|&(id, _)| id).collect();
        bm25_ids.sort_unstable();
        assert_eq!(fused_ids, bm25_ids);
    }
}

#[test]
fn fused_scores_scale_invariance_keeps_the_chosen_set() {
    // Multiplying relevance and influence by c > 0 scales fused scores by c
    // and must not change the selected ids.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACE);
    for _ in 0..50 {
        let n_candidates = rng.gen_range(3..=10);
        let k = rng.gen_range(1..=n_candidates);
        let c = rng.gen_range(0.01..100.0);
        let entries: Vec<(usize, f64)> = (0..n_candidates)
            .map(|id| (id, rng.gen_range(0.0..5.0)))
            .collect();
        let influences: HashMap<usize, f64> = (0..n_candidates)
            .map(|id| (id, rng.gen_range(0.0..5.0)))
            .collect();

        let base = RecallSet {
            query_id: 0,
            entries: entries.clone(),
        };
        let scaled = RecallSet {
            query_id: 0,
            entries: entries.iter().map(|&(id, r)| (id, c * r)).collect(),
        };
        let scaled_influences: HashMap<usize, f64> =
            influences.iter().map(|(&id, &v)| (id, c * v)).collect();

        let a = fuse_and_select(&base, &influences, k, Fusion::Sum).unwrap();
        let b = fuse_and_select(&scaled, &scaled_influences, k, Fusion::Sum).unwrap();
        let ids = |r: &icsel_core::SelectionResult| {
            let mut v: Vec<usize> = r.chosen.iter().map(|s| s.id).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(ids(&a), ids(&b));
    }
}
