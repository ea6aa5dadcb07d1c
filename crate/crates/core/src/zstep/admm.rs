//! Batch ADMM for the box-relaxed code subproblems.
//!
//! Each point asks for min over u in [0,1]^L of ||y - R u||^2 + mu ||u - a||^2,
//! a strongly convex QP. All N problems share the matrix R, so a single
//! Cholesky factorization of (2 R^T R + (2 mu + rho) I) serves every point
//! and every iteration; the per-iteration work is one triangular solve over
//! the whole batch plus elementwise clamps.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::codes::code_to_vector;

use super::{ZStepProblem, ZStepShared};

pub const DEFAULT_MAX_ITERS: usize = 500;
pub const EPS_ABS: f64 = 1e-7;
pub const EPS_REL: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct RelaxedQpResult {
    /// Box-feasible solutions, one column per problem.
    pub solutions: DMatrix<f64>,
    pub converged: Vec<bool>,
    pub iterations: usize,
}

/// Solves the whole batch. `warm` supplies initial iterates (the previous
/// iteration's continuous solutions); columns are clamped into the box.
pub fn solve_relaxed_qp_batch(
    shared: &ZStepShared,
    problems: &[ZStepProblem],
    warm: Option<&DMatrix<f64>>,
) -> RelaxedQpResult {
    let l = shared.bits();
    let n = problems.len();
    let mu = shared.mu;

    let m = shared.r.transpose() * &shared.r + DMatrix::identity(l, l) * mu;
    // penalty parameter: geometric mean of the Hessian's extreme
    // eigenvalues, which keeps the iteration count flat in mu (tying rho
    // to mu alone stalls badly when mu is small against R)
    let eigs = m.clone().symmetric_eigen().eigenvalues;
    let lmax = eigs.iter().cloned().fold(f64::MIN, f64::max).max(mu);
    let rho = 2.0 * (mu * lmax).sqrt();
    let f = &m * 2.0 + DMatrix::identity(l, l) * rho;
    let chol: Cholesky<f64, Dyn> = f
        .cholesky()
        .expect("2M + rho I is positive definite for mu > 0");

    // linear terms, one column per problem: c = R^T y + mu a
    let mut c2 = DMatrix::zeros(l, n);
    for (i, p) in problems.iter().enumerate() {
        let c = shared.r.transpose() * &p.y + mu * code_to_vector(p.anchor, l);
        c2.set_column(i, &(c * 2.0));
    }

    let mut v = match warm {
        Some(w) if w.nrows() == l && w.ncols() == n => w.map(|x| x.clamp(0.0, 1.0)),
        _ => {
            let mut init = DMatrix::zeros(l, n);
            for (i, p) in problems.iter().enumerate() {
                init.set_column(i, &code_to_vector(p.anchor, l));
            }
            init
        }
    };
    let mut w_dual = DMatrix::zeros(l, n);
    let mut converged = vec![false; n];
    let mut iterations = 0;

    for iter in 1..=DEFAULT_MAX_ITERS {
        iterations = iter;
        // u-update: (2M + rho I) u = 2c + rho (v - w)
        let rhs = &c2 + (&v - &w_dual) * rho;
        let u = chol.solve(&rhs);
        let v_old = v.clone();
        // v-update: project u + w onto the box
        v = (&u + &w_dual).map(|x| x.clamp(0.0, 1.0));
        w_dual += &u - &v;

        let mut all_done = true;
        for col in 0..n {
            let mut r_pri = 0.0f64;
            let mut r_dual = 0.0f64;
            let mut scale = 0.0f64;
            for row in 0..l {
                r_pri = r_pri.max((u[(row, col)] - v[(row, col)]).abs());
                r_dual = r_dual.max(rho * (v[(row, col)] - v_old[(row, col)]).abs());
                scale = scale.max(u[(row, col)].abs()).max(v[(row, col)].abs());
            }
            let eps = EPS_ABS + EPS_REL * scale.max(1.0);
            converged[col] = r_pri <= eps && r_dual <= eps;
            if !converged[col] {
                all_done = false;
            }
        }
        if all_done {
            break;
        }
    }

    RelaxedQpResult {
        solutions: v,
        converged,
        iterations,
    }
}
