//! Fisher approximation of the Hessian, damped influence solves, and the
//! fused relevance + influence selection of the final demonstration set.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_slice::MetaGradient;
use crate::recall::RecallSet;

/// Auto damping coefficient: lambda = 1e-3 * trace(H) / d'.
const AUTO_DAMPING_REL: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum InfluenceError {
    #[error("cannot accumulate a Fisher matrix from zero meta-gradients")]
    EmptyGradients,
    #[error("meta-gradient of example {example_id} contains non-finite values")]
    NonFiniteGradient { example_id: usize },
    #[error("meta-gradient of example {example_id} has {got} rows, expected {expected}")]
    DimensionMismatch {
        example_id: usize,
        got: usize,
        expected: usize,
    },
    #[error("damping must be positive, got {0}")]
    BadDamping(f64),
    #[error(
        "factorization of H + lambda*I failed at pivot {pivot} (value {value:.3e}, \
         trace {trace:.3e}, lambda {lambda:.3e})"
    )]
    NotPositiveDefinite {
        pivot: usize,
        value: f64,
        trace: f64,
        lambda: f64,
    },
    #[error("recalled example {id} has no influence score")]
    MissingInfluence { id: usize },
    #[error("selection requires k >= 1")]
    BadK,
}

/// How the damping term is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Scale-relative default, `1e-3 * trace(H) / d'`.
    Auto,
    Fixed(f64),
}

/// How influence and relevance are combined into the selection score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fusion {
    /// Raw sum `influence_sq + relevance`.
    Sum,
    /// Min-max normalize each term over the recall set before summing.
    Minmax,
    /// Relevance only.
    Bm25Only,
}

/// `H = (1/n) sum G_i G_i^T` with a positive damping term for solves.
pub struct FisherMatrix {
    h: Array2<f64>,
    n_contrib: usize,
    lambda: f64,
}

/// Accumulate the Fisher approximation over a batch of meta-gradients in
/// ascending example-id order (bit-reproducible), then symmetrize.
pub fn accumulate_fisher(
    grads: &[MetaGradient],
    damping: Damping,
) -> Result<FisherMatrix, InfluenceError> {
    if grads.is_empty() {
        return Err(InfluenceError::EmptyGradients);
    }
    let d_prime = grads[0].g.nrows();
    let mut order: Vec<&MetaGradient> = grads.iter().collect();
    order.sort_by_key(|g| g.example_id);

    let mut h = Array2::<f64>::zeros((d_prime, d_prime));
    for grad in order {
        if grad.g.nrows() != d_prime {
            return Err(InfluenceError::DimensionMismatch {
                example_id: grad.example_id,
                got: grad.g.nrows(),
                expected: d_prime,
            });
        }
        if grad.g.iter().any(|v| !v.is_finite()) {
            return Err(InfluenceError::NonFiniteGradient {
                example_id: grad.example_id,
            });
        }
        h = h + grad.g.dot(&grad.g.t());
    }
    h.mapv_inplace(|v| v / grads.len() as f64);
    // Exact symmetry despite floating-point accumulation order.
    h = (&h + &h.t()) * 0.5;

    let trace: f64 = h.diag().sum();
    let lambda = match damping {
        Damping::Auto => {
            let auto = AUTO_DAMPING_REL * trace / d_prime as f64;
            // Gram matrices of all-zero gradients still need a usable solve.
            if auto > 0.0 {
                auto
            } else {
                AUTO_DAMPING_REL
            }
        }
        Damping::Fixed(value) => value,
    };
    if !(lambda > 0.0) {
        return Err(InfluenceError::BadDamping(lambda));
    }

    Ok(FisherMatrix {
        h,
        n_contrib: grads.len(),
        lambda,
    })
}

impl FisherMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn n_contrib(&self) -> usize {
        self.n_contrib
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn d_prime(&self) -> usize {
        self.h.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.h.diag().sum()
    }

    /// Cholesky-factor `H + lambda*I` once for repeated solves.
    pub fn solver(&self) -> Result<DampedSolver, InfluenceError> {
        let d = self.d_prime();
        let mut damped = self.h.clone();
        for i in 0..d {
            damped[[i, i]] += self.lambda;
        }
        let lower = cholesky_lower(&damped).map_err(|(pivot, value)| {
            InfluenceError::NotPositiveDefinite {
                pivot,
                value,
                trace: self.trace(),
                lambda: self.lambda,
            }
        })?;
        Ok(DampedSolver { lower })
    }
}

/// Squared Frobenius norm of `(H + lambda*I)^-1 G`; convenience wrapper that
/// factors per call. Use [`FisherMatrix::solver`] when scoring many
/// candidates against one Fisher matrix.
pub fn influence_sq(fisher: &FisherMatrix, grad: &MetaGradient) -> Result<f64, InfluenceError> {
    fisher.solver()?.influence_sq(grad)
}

/// Lower-triangular Cholesky factor of the damped Fisher matrix.
pub struct DampedSolver {
    lower: Array2<f64>,
}

impl DampedSolver {
    /// Solve column-by-column and return `||X||_F^2`. The minus sign of the
    /// influence function vanishes under the squared norm.
    pub fn influence_sq(&self, grad: &MetaGradient) -> Result<f64, InfluenceError> {
        let d = self.lower.nrows();
        if grad.g.nrows() != d {
            return Err(InfluenceError::DimensionMismatch {
                example_id: grad.example_id,
                got: grad.g.nrows(),
                expected: d,
            });
        }
        if grad.g.iter().any(|v| !v.is_finite()) {
            return Err(InfluenceError::NonFiniteGradient {
                example_id: grad.example_id,
            });
        }
        let mut total = 0.0;
        let mut y = vec![0.0; d];
        for col in grad.g.columns() {
            // forward: L y = b
            for i in 0..d {
                let mut sum = col[i];
                for j in 0..i {
                    sum -= self.lower[[i, j]] * y[j];
                }
                y[i] = sum / self.lower[[i, i]];
            }
            // backward: L^T x = y
            for i in (0..d).rev() {
                let mut sum = y[i];
                for j in i + 1..d {
                    sum -= self.lower[[j, i]] * y[j];
                }
                y[i] = sum / self.lower[[i, i]];
            }
            total += y.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(total)
    }

    /// Solve `(H + lambda*I) X = G` and return X (test and diagnostic use).
    pub fn solve(&self, g: &Array2<f64>) -> Array2<f64> {
        let d = self.lower.nrows();
        let mut x = g.clone();
        for mut col in x.columns_mut() {
            for i in 0..d {
                let mut sum = col[i];
                for j in 0..i {
                    sum -= self.lower[[i, j]] * col[j];
                }
                col[i] = sum / self.lower[[i, i]];
            }
            for i in (0..d).rev() {
                let mut sum = col[i];
                for j in i + 1..d {
                    sum -= self.lower[[j, i]] * col[j];
                }
                col[i] = sum / self.lower[[i, i]];
            }
        }
        x
    }
}

/// Standard Cholesky; fails with the offending pivot instead of producing
/// NaNs.
fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>, (usize, f64)> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err((i, sum));
                }
                l[[i, j]] = sum.sqrt();
            } else {
                l[[i, j]] = sum / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// One candidate with its relevance, influence, and fused score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: usize,
    pub relevance: f64,
    pub influence_sq: f64,
    pub fused: f64,
}

/// The final demonstration set for one query, ordered ascending by fused
/// score so the strongest demonstration sits next to the query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionResult {
    pub query_id: usize,
    pub chosen: Vec<ScoredExample>,
}

/// Fuse influence with relevance and keep the top `min(k, |C1|)` by fused
/// score, ties broken by ascending example id.
pub fn fuse_and_select(
    recall: &RecallSet,
    influences: &HashMap<usize, f64>,
    k: usize,
    fusion: Fusion,
) -> Result<SelectionResult, InfluenceError> {
    if k == 0 {
        return Err(InfluenceError::BadK);
    }
    let mut scored = Vec::with_capacity(recall.entries.len());
    for &(id, relevance) in &recall.entries {
        let influence = match fusion {
            Fusion::Bm25Only => *influences.get(&id).unwrap_or(&0.0),
            _ => *influences
                .get(&id)
                .ok_or(InfluenceError::MissingInfluence { id })?,
        };
        scored.push(ScoredExample {
            id,
            relevance,
            influence_sq: influence,
            fused: 0.0,
        });
    }

    match fusion {
        Fusion::Sum => {
            for s in &mut scored {
                s.fused = s.influence_sq + s.relevance;
            }
        }
        Fusion::Minmax => {
            let norm = |values: Vec<f64>| -> Vec<f64> {
                let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if max > min {
                    values.iter().map(|v| (v - min) / (max - min)).collect()
                } else {
                    vec![0.0; values.len()]
                }
            };
            let ni = norm(scored.iter().map(|s| s.influence_sq).collect());
            let nr = norm(scored.iter().map(|s| s.relevance).collect());
            for (s, (a, b)) in scored.iter_mut().zip(ni.into_iter().zip(nr)) {
                s.fused = a + b;
            }
        }
        Fusion::Bm25Only => {
            for s in &mut scored {
                s.fused = s.relevance;
            }
        }
    }

    scored.sort_by(|a, b| b.fused.partial_cmp(&a.fused).unwrap().then(a.id.cmp(&b.id)));
    scored.truncate(k.min(recall.entries.len()));
    scored.sort_by(|a, b| a.fused.partial_cmp(&b.fused).unwrap().then(a.id.cmp(&b.id)));

    Ok(SelectionResult {
        query_id: recall.query_id,
        chosen: scored,
    })
}
