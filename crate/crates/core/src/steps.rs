//! The two parameter updates of the alternating training loop: the decoder
//! least-squares fit (f step) and the per-bit max-margin classifier fit
//! (h step). The L classifiers are independent and trained in parallel.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::codes::BinaryCodeMatrix;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{LinearDecoder, LinearEncoder};
use crate::svm::{self, SvmConfig};

/// Fits the affine decoder minimizing sum_n ||x_n - A z_n - b||^2.
///
/// Solved through an SVD of the augmented code matrix (codes plus a
/// constant-1 row) rather than the normal equations, which would square the
/// condition number. Rank-deficient code matrices get the minimum-norm fit.
pub fn f_step(z: &BinaryCodeMatrix, x: &FeatureMatrix) -> Result<LinearDecoder> {
    let n = x.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "codes have {} points, features have {n}",
            z.len()
        )));
    }
    let l = z.bits();
    if n < l + 1 {
        eprintln!("warning: f-step underdetermined (N={n} < L+1={})", l + 1);
    }
    // rows of zt are augmented codes [z_n, 1]
    let mut zt = DMatrix::zeros(n, l + 1);
    for row in 0..n {
        let w = z.word(row);
        for bit in 0..l {
            zt[(row, bit)] = ((w >> bit) & 1) as f64;
        }
        zt[(row, l)] = 1.0;
    }
    let svd = zt.svd(true, true);
    let eps = 1e-12 * (n.max(l + 1)) as f64;
    // solve Zt * Ct = X^T for Ct, column per output dimension
    let ct = svd
        .solve(&x.matrix().transpose(), eps)
        .map_err(|e| Error::Numeric(format!("f-step SVD solve failed: {e}")))?;
    let c = ct.transpose(); // D x (L+1)
    Ok(LinearDecoder {
        weights: c.columns(0, l).into_owned(),
        bias: c.column(l).into_owned(),
    })
}

/// Warm-start state carried between h steps: the previous encoder and the
/// dual variables of each per-bit classifier (empty for constant bits).
#[derive(Debug, Clone)]
pub struct HStepState {
    pub encoder: LinearEncoder,
    pub alphas: Vec<Vec<f64>>,
}

/// Fits one max-margin linear classifier per bit, labels taken from Z.
///
/// Bits whose labels are constant short-circuit to the constant classifier
/// (w = 0, bias of the matching sign). When a warm state is given, each
/// bit's result is the better of the fresh fit and the warm classifier
/// under the primal objective, so a warm start can only help or tie.
pub fn h_step(
    x: &FeatureMatrix,
    z: &BinaryCodeMatrix,
    cfg: &SvmConfig,
    warm: Option<&HStepState>,
) -> Result<HStepState> {
    let n = x.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "codes have {} points, features have {n}",
            z.len()
        )));
    }
    let l = z.bits();
    let d = x.dims();

    let per_bit: Vec<(DVector<f64>, f64, Vec<f64>)> = (0..l)
        .into_par_iter()
        .map(|bit| {
            let labels = z.bit_labels(bit);
            let n_pos = labels.iter().filter(|&&y| y > 0.0).count();
            if n_pos == 0 || n_pos == n {
                // constant bit: any zero weight vector with a bias of the
                // right sign reproduces the labels exactly
                let bias = if n_pos == n { 1.0 } else { -1.0 };
                return (DVector::zeros(d), bias, Vec::new());
            }
            let warm_alphas = warm.and_then(|s| {
                let a = &s.alphas[bit];
                (a.len() == n).then_some(a.as_slice())
            });
            let sol = svm::train(x.matrix(), &labels, cfg, warm_alphas);
            if let Some(state) = warm {
                let w_old = state.encoder.weights.row(bit).transpose();
                let b_old = state.encoder.bias[bit];
                let obj_new =
                    svm::primal_objective(&sol.weights, sol.bias, x.matrix(), &labels, cfg.c);
                let obj_old = svm::primal_objective(&w_old, b_old, x.matrix(), &labels, cfg.c);
                if obj_old < obj_new {
                    return (w_old, b_old, sol.alphas);
                }
            }
            (sol.weights, sol.bias, sol.alphas)
        })
        .collect();

    let mut weights = DMatrix::zeros(l, d);
    let mut bias = DVector::zeros(l);
    let mut alphas = Vec::with_capacity(l);
    for (bit, (w, b, a)) in per_bit.into_iter().enumerate() {
        weights.set_row(bit, &w.transpose());
        bias[bit] = b;
        alphas.push(a);
    }
    Ok(HStepState {
        encoder: LinearEncoder { weights, bias },
        alphas,
    })
}
