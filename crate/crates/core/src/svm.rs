//! L2-regularized L1-hinge linear SVM trained by dual coordinate descent.
//!
//! The bias is handled by augmenting each point with a constant 1 feature,
//! so it is regularized together with the weights. The dual problem is
//! strongly convex per coordinate and the solver is deterministic: a fixed
//! sweep order, no shrinking, no randomization.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    /// Misclassification penalty C.
    pub c: f64,
    /// Stop when the largest projected gradient over a sweep falls below this.
    pub tol: f64,
    /// Maximum full sweeps over the data.
    pub max_passes: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 100.0,
            tol: 1e-4,
            max_passes: 1000,
        }
    }
}

/// A trained per-bit classifier with its dual variables, kept for warm starts.
#[derive(Debug, Clone)]
pub struct SvmSolution {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub alphas: Vec<f64>,
}

/// Primal objective 0.5*(||w||^2 + b^2) + C * sum hinge(1 - y (w.x + b)).
pub fn primal_objective(
    weights: &DVector<f64>,
    bias: f64,
    x: &DMatrix<f64>,
    labels: &[f64],
    c: f64,
) -> f64 {
    let mut loss = 0.0;
    for (n, &y) in labels.iter().enumerate() {
        let margin = 1.0 - y * (weights.dot(&x.column(n).into_owned()) + bias);
        loss += margin.max(0.0);
    }
    0.5 * (weights.norm_squared() + bias * bias) + c * loss
}

/// Trains on `x` (D x N, column per point) with +-1 `labels`. An initial
/// dual vector clamped to [0, C] may be supplied; the primal weights are
/// reconstructed from it before the first sweep.
pub fn train(
    x: &DMatrix<f64>,
    labels: &[f64],
    cfg: &SvmConfig,
    warm_alphas: Option<&[f64]>,
) -> SvmSolution {
    let d = x.nrows();
    let n = x.ncols();
    assert_eq!(labels.len(), n);

    let mut alphas = match warm_alphas {
        Some(a) if a.len() == n => a.iter().map(|&v| v.clamp(0.0, cfg.c)).collect(),
        _ => vec![0.0; n],
    };
    // augmented weight vector: [w; bias]
    let mut w = DVector::zeros(d + 1);
    for i in 0..n {
        if alphas[i] != 0.0 {
            let coeff = alphas[i] * labels[i];
            for row in 0..d {
                w[row] += coeff * x[(row, i)];
            }
            w[d] += coeff;
        }
    }
    // diagonal of the dual Hessian: ||x_i||^2 + 1 for the bias feature
    let qdiag: Vec<f64> = (0..n)
        .map(|i| x.column(i).norm_squared() + 1.0)
        .collect();

    for _ in 0..cfg.max_passes {
        let mut max_pg = 0.0f64;
        for i in 0..n {
            let y = labels[i];
            let mut dot = w[d];
            for row in 0..d {
                dot += w[row] * x[(row, i)];
            }
            let grad: f64 = y * dot - 1.0;
            let pg = if alphas[i] <= 0.0 {
                grad.min(0.0)
            } else if alphas[i] >= cfg.c {
                grad.max(0.0)
            } else {
                grad
            };
            max_pg = max_pg.max(pg.abs());
            if pg.abs() > 1e-14 {
                let a_new = (alphas[i] - grad / qdiag[i]).clamp(0.0, cfg.c);
                let delta = (a_new - alphas[i]) * y;
                if delta != 0.0 {
                    for row in 0..d {
                        w[row] += delta * x[(row, i)];
                    }
                    w[d] += delta;
                    alphas[i] = a_new;
                }
            }
        }
        if max_pg < cfg.tol {
            break;
        }
    }

    let bias = w[d];
    let weights = w.rows(0, d).into_owned();
    SvmSolution {
        weights,
        bias,
        alphas,
    }
}
