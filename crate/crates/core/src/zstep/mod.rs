//! The per-point binary code subproblem (binary proximal operator):
//!
//! min over z in {0,1}^L of ||x - f(z)||^2 + mu * ||z - h(x)||^2
//!
//! A QR reduction replaces the D x L decoder with an upper-triangular L x L
//! system sharing the same minimizers. The exact solver enumerates codes in
//! increasing Hamming distance from the anchor h(x) with a running upper
//! bound, radius pruning, incremental evaluation with early abort, and a
//! global-optimality certificate that can stop the search early. Inexact
//! variants run alternating optimization over g-bit groups, initialized from
//! a box-relaxed QP solved by a batch ADMM scheme plus greedy binarization.

pub mod admm;
pub mod certify;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::codes::{hamming, low_mask, BinaryCodeMatrix, code_to_vector};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::LinearDecoder;
use certify::{Certificate, CertifyContext};

/// Exact enumeration is guarded to this many bits.
pub const MAX_EXACT_BITS: usize = 24;

/// Per-batch data shared by all N per-point problems: the reduced decoder
/// R, the penalty mu, and the certificate context for the +-1 form of the
/// objective (computed once, reused for every point).
#[derive(Debug, Clone)]
pub struct ZStepShared {
    pub r: DMatrix<f64>,
    pub mu: f64,
    pub rank_deficient: bool,
    cert: CertifyContext,
}

impl ZStepShared {
    pub fn new(r: DMatrix<f64>, mu: f64) -> Result<Self> {
        let l = r.ncols();
        if r.nrows() != l {
            return Err(Error::DimensionMismatch("R must be square".into()));
        }
        if mu <= 0.0 {
            return Err(Error::InvalidArgument("mu must be positive".into()));
        }
        let rank_deficient = (0..l).any(|i| r[(i, i)].abs() < 1e-10);
        // +-1 form of e(z): with M = R^T R + mu I the binary objective is
        // z^T M z - 2 c^T z + k; substituting z = (s+1)/2 gives
        // Q = M/2 and linear term b = Q e - c.
        let m = r.transpose() * &r + DMatrix::identity(l, l) * mu;
        let cert = CertifyContext::new(m * 0.5);
        Ok(Self {
            r,
            mu,
            rank_deficient,
            cert,
        })
    }

    pub fn bits(&self) -> usize {
        self.r.ncols()
    }

    pub fn certify_context(&self) -> &CertifyContext {
        &self.cert
    }
}

/// One point's reduced instance: target y = Q^T (x - b), anchor code h(x),
/// and the z-independent remainder ||Q_perp^T (x - b)||^2 kept for reporting.
#[derive(Debug, Clone)]
pub struct ZStepProblem {
    pub y: DVector<f64>,
    pub anchor: u64,
    pub constant: f64,
}

impl ZStepProblem {
    /// Linear term of the +-1 certificate form, b = Q e - (R^T y + mu a).
    fn linear_pm(&self, shared: &ZStepShared) -> DVector<f64> {
        let c = shared.r.transpose() * &self.y
            + shared.mu * code_to_vector(self.anchor, shared.bits());
        shared.cert.row_sums.clone() - c
    }
}

/// Builds reduced per-point problems from a decoder via one thin QR.
#[derive(Debug, Clone)]
pub struct ZStepReducer {
    q_thin: DMatrix<f64>,
    bias: DVector<f64>,
    pub shared: ZStepShared,
}

impl ZStepReducer {
    pub fn new(decoder: &LinearDecoder, mu: f64) -> Result<Self> {
        let d = decoder.dims();
        let l = decoder.bits();
        if d < l {
            return Err(Error::InvalidArgument(format!(
                "QR reduction needs D >= L, got D={d}, L={l}"
            )));
        }
        let qr = decoder.weights.clone().qr();
        let q_thin = qr.q();
        let r = qr.r();
        Ok(Self {
            q_thin,
            bias: decoder.bias.clone(),
            shared: ZStepShared::new(r, mu)?,
        })
    }

    pub fn reduce(&self, x: &DVector<f64>, anchor: u64) -> ZStepProblem {
        let centered = x - &self.bias;
        let y = self.q_thin.transpose() * &centered;
        let constant = centered.norm_squared() - y.norm_squared();
        ZStepProblem {
            y,
            anchor,
            constant,
        }
    }
}

/// How a returned code is qualified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveCertificate {
    /// The optimality certificate fired: provably a global minimizer.
    ProvenGlobal,
    /// The pruned enumeration was exhausted: global by exhaustion.
    BoundExhausted,
    /// Local minimum with respect to g-bit group moves.
    LocalMinGroup(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZStepSolution {
    pub code: u64,
    /// Reduced objective ||y - R z||^2 + mu * d(z, anchor). Add the
    /// problem's `constant` for the full-space value.
    pub objective: f64,
    pub certificate: SolveCertificate,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZStepStats {
    pub evaluated: u64,
    pub aborted: u64,
    pub certificate_fired: bool,
    pub max_distance: u32,
}

/// Full evaluation of the reduced objective.
pub fn reduced_objective(shared: &ZStepShared, p: &ZStepProblem, z: u64) -> f64 {
    let l = shared.bits();
    let mut total = shared.mu * hamming(z, p.anchor) as f64;
    for i in 0..l {
        let mut ri = p.y[i];
        let mut rest = (z >> i) << i & low_mask(l);
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            ri -= shared.r[(i, j)];
            rest &= rest - 1;
        }
        total += ri * ri;
    }
    total
}

/// Mixed objective for a real-valued code in [0,1]^L.
pub fn mixed_objective(shared: &ZStepShared, p: &ZStepProblem, v: &DVector<f64>) -> f64 {
    let a = code_to_vector(p.anchor, shared.bits());
    (&p.y - &shared.r * v).norm_squared() + shared.mu * (v - a).norm_squared()
}

/// Evaluates e(z) dimension by dimension (rows L down to 1, so each row of
/// the triangular R touches few bits) and gives up once the partial sum
/// reaches `bound`. Returns None when aborted.
fn eval_bounded(
    shared: &ZStepShared,
    p: &ZStepProblem,
    z: u64,
    dist: u32,
    bound: f64,
) -> Option<f64> {
    let l = shared.bits();
    let mut total = shared.mu * dist as f64;
    if total >= bound {
        return None;
    }
    for i in (0..l).rev() {
        let mut ri = p.y[i];
        let mut rest = (z >> i) << i;
        while rest != 0 {
            let j = rest.trailing_zeros() as usize;
            ri -= shared.r[(i, j)];
            rest &= rest - 1;
        }
        total += ri * ri;
        if total >= bound {
            return None;
        }
    }
    Some(total)
}

fn check_sufficient(shared: &ZStepShared, b_pm: &DVector<f64>, code: u64) -> bool {
    let l = shared.bits();
    let s = DVector::from_fn(l, |i, _| if (code >> i) & 1 == 1 { 1.0 } else { -1.0 });
    shared.cert.certify(b_pm, &s) == Certificate::SufficientHit
}

/// Yields bit masks of all size-d subsets of {0..l-1}, subsets in
/// lexicographic order of bit indices.
struct Combinations {
    l: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Combinations {
    fn new(l: usize, d: usize) -> Self {
        Self {
            l,
            idx: (0..d).collect(),
            done: d > l,
        }
    }
}

impl Iterator for Combinations {
    type Item = u64;

    fn next(&mut self) -> Option<u64> {
        if self.done {
            return None;
        }
        let mask = self.idx.iter().fold(0u64, |m, &i| m | (1 << i));
        // advance to the next combination
        let d = self.idx.len();
        let mut i = d;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.idx[i] < self.l - (d - i) {
                self.idx[i] += 1;
                for j in i + 1..d {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                break;
            }
        }
        Some(mask)
    }
}

/// Exact global minimization by pruned enumeration around the anchor.
///
/// Candidates are scanned in increasing Hamming distance from the anchor
/// (lexicographic within a distance); the first code reaching the running
/// minimum wins, which makes ties deterministic.
pub fn solve_exact(shared: &ZStepShared, p: &ZStepProblem) -> (ZStepSolution, ZStepStats) {
    let l = shared.bits();
    assert!(
        l <= MAX_EXACT_BITS,
        "exact enumeration is limited to {MAX_EXACT_BITS} bits"
    );
    let mut stats = ZStepStats::default();
    let b_pm = p.linear_pm(shared);

    let mut best = p.anchor;
    let mut bound = reduced_objective(shared, p, best);
    stats.evaluated = 1;
    if check_sufficient(shared, &b_pm, best) {
        stats.certificate_fired = true;
        return (
            ZStepSolution {
                code: best,
                objective: bound,
                certificate: SolveCertificate::ProvenGlobal,
            },
            stats,
        );
    }

    let mu = shared.mu;
    let mut dist = 1u32;
    while dist as usize <= l && (mu * dist as f64) < bound {
        stats.max_distance = dist;
        for mask in Combinations::new(l, dist as usize) {
            // the running bound may have shrunk below this shell's floor
            if mu * dist as f64 >= bound {
                break;
            }
            let z = p.anchor ^ mask;
            match eval_bounded(shared, p, z, dist, bound) {
                Some(e) => {
                    stats.evaluated += 1;
                    if e < bound {
                        best = z;
                        bound = e;
                        if check_sufficient(shared, &b_pm, best) {
                            stats.certificate_fired = true;
                            return (
                                ZStepSolution {
                                    code: best,
                                    objective: bound,
                                    certificate: SolveCertificate::ProvenGlobal,
                                },
                                stats,
                            );
                        }
                    }
                }
                None => {
                    stats.aborted += 1;
                }
            }
        }
        dist += 1;
    }
    (
        ZStepSolution {
            code: best,
            objective: bound,
            certificate: SolveCertificate::BoundExhausted,
        },
        stats,
    )
}

/// Alternating optimization over fixed contiguous groups of `g` bits; each
/// group is minimized exactly by enumeration with the others held fixed.
/// Sweeps repeat until a full sweep changes nothing.
pub fn solve_group_alternating(
    shared: &ZStepShared,
    p: &ZStepProblem,
    g: usize,
    z0: u64,
) -> (ZStepSolution, ZStepStats) {
    let l = shared.bits();
    assert!(g >= 1 && g <= l, "group size must lie in 1..=L");
    let mut stats = ZStepStats::default();
    let mut z = z0 & low_mask(l);
    let mut e_cur = reduced_objective(shared, p, z);
    stats.evaluated = 1;

    loop {
        let mut changed = false;
        let mut offset = 0;
        while offset < l {
            let size = g.min(l - offset);
            let gmask = low_mask(size) << offset;
            for v in 0u64..(1 << size) {
                let cand = (z & !gmask) | (v << offset);
                if cand == z {
                    continue;
                }
                let dist = hamming(cand, p.anchor);
                match eval_bounded(shared, p, cand, dist, e_cur) {
                    Some(e) => {
                        stats.evaluated += 1;
                        if e < e_cur {
                            z = cand;
                            e_cur = e;
                            changed = true;
                        }
                    }
                    None => stats.aborted += 1,
                }
            }
            offset += size;
        }
        if !changed {
            break;
        }
    }

    let b_pm = p.linear_pm(shared);
    let certificate = if check_sufficient(shared, &b_pm, z) {
        stats.certificate_fired = true;
        SolveCertificate::ProvenGlobal
    } else if g >= l {
        SolveCertificate::BoundExhausted
    } else {
        SolveCertificate::LocalMinGroup(g)
    };
    (
        ZStepSolution {
            code: z,
            objective: e_cur,
            certificate,
        },
        stats,
    )
}

/// Sequentially binarizes a relaxed solution: at step l bits below l are
/// already binary, bits above keep their continuous values, and bit l takes
/// whichever of {0,1} gives the lower mixed objective.
pub fn greedy_binarize(shared: &ZStepShared, p: &ZStepProblem, u: &DVector<f64>) -> u64 {
    let l = shared.bits();
    assert_eq!(u.len(), l);
    let mut v = u.clone();
    let mut code = 0u64;
    for bit in 0..l {
        v[bit] = 0.0;
        let e0 = mixed_objective(shared, p, &v);
        v[bit] = 1.0;
        let e1 = mixed_objective(shared, p, &v);
        if e1 < e0 {
            code |= 1 << bit;
        } else {
            v[bit] = 0.0;
        }
    }
    code
}

/// Inexact Z step: the better of the binarized relaxed solution and the
/// warm-start code seeds alternating optimization. The result never exceeds
/// e(warm), which is what makes the outer penalty objective monotone.
pub fn zstep_inexact(
    shared: &ZStepShared,
    p: &ZStepProblem,
    g: usize,
    warm: u64,
    relaxed: &DVector<f64>,
) -> (ZStepSolution, ZStepStats) {
    let binarized = greedy_binarize(shared, p, relaxed);
    let e_bin = reduced_objective(shared, p, binarized);
    let e_warm = reduced_objective(shared, p, warm);
    let start = if e_bin < e_warm { binarized } else { warm };
    solve_group_alternating(shared, p, g, start)
}

/// Z-step strategy for a whole training iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZStepMode {
    Exact,
    Group(usize),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZStepBatchStats {
    pub codes_changed: usize,
    pub certificates_fired: usize,
    pub evaluated: u64,
    pub aborted: u64,
}

/// Solves the N independent per-point problems. Points are processed by a
/// worker pool; the output is bitwise identical for any worker count.
/// Returns the new codes, the relaxed continuous solutions (group mode, for
/// warm-starting the next iteration's QP), and aggregate statistics.
pub fn zstep_batch(
    decoder: &LinearDecoder,
    x: &FeatureMatrix,
    anchors: &BinaryCodeMatrix,
    warm: &BinaryCodeMatrix,
    mu: f64,
    mode: ZStepMode,
    relaxed_warm: Option<&DMatrix<f64>>,
) -> Result<(BinaryCodeMatrix, Option<DMatrix<f64>>, ZStepBatchStats)> {
    let n = x.len();
    if anchors.len() != n || warm.len() != n {
        return Err(Error::DimensionMismatch(
            "anchors/warm codes must match the feature count".into(),
        ));
    }
    let reducer = ZStepReducer::new(decoder, mu)?;
    let problems: Vec<ZStepProblem> = (0..n)
        .into_par_iter()
        .map(|i| reducer.reduce(&x.point(i), anchors.word(i)))
        .collect();

    let (results, relaxed_out): (Vec<(ZStepSolution, ZStepStats)>, Option<DMatrix<f64>>) =
        match mode {
            ZStepMode::Exact => (
                problems
                    .par_iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let (sol, st) = solve_exact(&reducer.shared, p);
                        // the exact optimum can only improve on the warm code
                        debug_assert!(
                            sol.objective
                                <= reduced_objective(&reducer.shared, p, warm.word(i)) + 1e-9
                        );
                        (sol, st)
                    })
                    .collect(),
                None,
            ),
            ZStepMode::Group(g) => {
                let relaxed =
                    admm::solve_relaxed_qp_batch(&reducer.shared, &problems, relaxed_warm);
                let res = problems
                    .par_iter()
                    .enumerate()
                    .map(|(i, p)| {
                        let u = relaxed.solutions.column(i).into_owned();
                        zstep_inexact(&reducer.shared, p, g, warm.word(i), &u)
                    })
                    .collect();
                (res, Some(relaxed.solutions))
            }
        };

    let mut stats = ZStepBatchStats::default();
    let mut words = Vec::with_capacity(n);
    for (i, (sol, st)) in results.iter().enumerate() {
        if sol.code != warm.word(i) {
            stats.codes_changed += 1;
        }
        if st.certificate_fired {
            stats.certificates_fired += 1;
        }
        stats.evaluated += st.evaluated;
        stats.aborted += st.aborted;
        words.push(sol.code);
    }
    Ok((
        BinaryCodeMatrix::new(anchors.bits(), words)?,
        relaxed_out,
        stats,
    ))
}
