//! Global-optimality certificates for binary quadratics
//! min 0.5 s^T Q s + b^T s over s in {-1,+1}^n.
//!
//! Two sufficient conditions (an eigenvalue bound and a diagonal-dominance
//! bound) prove a candidate globally optimal; two necessary conditions prove
//! it suboptimal. Evaluating a certificate costs about as much as one
//! objective evaluation once the per-matrix data is precomputed.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certificate {
    /// The candidate is provably a global minimizer.
    SufficientHit,
    /// The candidate is provably not a global minimizer.
    NecessaryFailed,
    Inconclusive,
}

/// Data derived from Q once and reused for every candidate (and, in the
/// code-optimization setting, for every data point, since they share Q).
#[derive(Debug, Clone)]
pub struct CertifyContext {
    pub q: DMatrix<f64>,
    pub lambda_min: f64,
    /// q_tilde_i = q_ii - sum_{j != i} |q_ij|
    pub q_tilde: DVector<f64>,
    pub diag: DVector<f64>,
    /// Q e, the row sums.
    pub row_sums: DVector<f64>,
}

impl CertifyContext {
    pub fn new(q: DMatrix<f64>) -> Self {
        let n = q.nrows();
        assert_eq!(n, q.ncols());
        let lambda_min = q
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let mut q_tilde = DVector::zeros(n);
        let mut diag = DVector::zeros(n);
        for i in 0..n {
            diag[i] = q[(i, i)];
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| q[(i, j)].abs()).sum();
            q_tilde[i] = q[(i, i)] - off;
        }
        let row_sums = &q * DVector::from_element(n, 1.0);
        Self {
            q,
            lambda_min,
            q_tilde,
            diag,
            row_sums,
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    fn qs(&self, s: &DVector<f64>) -> DVector<f64> {
        &self.q * s
    }

    /// Checks the candidate `s` against the sufficient and necessary
    /// conditions. A hit on either sufficient condition proves global
    /// optimality; a violated necessary condition proves suboptimality.
    pub fn certify(&self, b: &DVector<f64>, s: &DVector<f64>) -> Certificate {
        let n = self.dim();
        let t = self.qs(s) + b;
        // v_i = s_i (Q s + b)_i, the componentwise condition value
        let mut suff_eig = true;
        let mut suff_diagdom = true;
        let mut nec_diag = true;
        for i in 0..n {
            let v = s[i] * t[i];
            if self.lambda_min < v {
                suff_eig = false;
            }
            if self.q_tilde[i] < v {
                suff_diagdom = false;
            }
            if v > self.diag[i] {
                nec_diag = false;
            }
        }
        if suff_eig || suff_diagdom {
            return Certificate::SufficientHit;
        }
        if !nec_diag || b.dot(s) > 0.0 {
            return Certificate::NecessaryFailed;
        }
        Certificate::Inconclusive
    }

    /// Relaxed-solution certificates for PSD Q. Given a minimizer `x` of the
    /// box relaxation over [-1,1]^n, returns a proven binary global optimizer
    /// when one of the two conditions fires: `x` itself is binary and
    /// stationarity-certified, or its sign rounding is close enough to `x`.
    pub fn certify_relaxed(&self, b: &DVector<f64>, x: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        let binary = x.iter().all(|&v| (v.abs() - 1.0).abs() < 1e-12);
        if binary {
            let t = self.qs(x) + b;
            if (0..n).all(|i| x[i] * t[i] <= 1e-12) {
                return Some(x.clone());
            }
        }
        // sgn with sgn(0) = +1
        let y = DVector::from_fn(n, |i, _| if x[i] >= 0.0 { 1.0 } else { -1.0 });
        let qd = &self.q * (&y - x);
        if (0..n).all(|i| y[i] * qd[i] <= self.lambda_min + 1e-12) {
            return Some(y);
        }
        None
    }
}

/// One-shot certificate check; precomputes the eigenvalue internally.
pub fn certify_global(q: &DMatrix<f64>, b: &DVector<f64>, s: &DVector<f64>) -> Certificate {
    CertifyContext::new(q.clone()).certify(b, s)
}

/// One-shot relaxed-solution check for PSD Q.
pub fn certify_relaxed(
    q: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
) -> Option<DVector<f64>> {
    CertifyContext::new(q.clone()).certify_relaxed(b, x)
}
