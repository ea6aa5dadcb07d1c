//! Retrieval evaluation: exact Euclidean ground truth, Hamming-space
//! retrieval (k-NN and radius), precision/recall, and the entropy-based
//! code-utilization measure (effective number of bits).

use std::collections::HashMap;

use rayon::prelude::*;

use crate::codes::{hamming, BinaryCodeMatrix};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

/// Per-query lists of the K Euclidean-nearest base points, by index,
/// distances non-decreasing, ties broken by lower index.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub k: usize,
    pub neighbors: Vec<Vec<usize>>,
}

/// Exact brute-force K-NN in squared Euclidean distance.
pub fn build_ground_truth(
    queries: &FeatureMatrix,
    base: &FeatureMatrix,
    k: usize,
) -> Result<GroundTruth> {
    if k >= base.len() {
        return Err(Error::InvalidArgument(format!(
            "K={k} must be below the base size {}",
            base.len()
        )));
    }
    if queries.dims() != base.dims() {
        return Err(Error::DimensionMismatch(
            "query and base dimensionality differ".into(),
        ));
    }
    let neighbors: Vec<Vec<usize>> = (0..queries.len())
        .into_par_iter()
        .map(|q| {
            let qv = queries.point(q);
            let mut dists: Vec<(f64, usize)> = (0..base.len())
                .map(|i| ((base.matrix().column(i) - &qv).norm_squared(), i))
                .collect();
            dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
            dists[..k].iter().map(|&(_, i)| i).collect()
        })
        .collect();
    Ok(GroundTruth { k, neighbors })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetrievalMode {
    Knn(usize),
    Radius(u32),
}

/// Hamming retrieval for a single query code. k-NN ties break by lower base
/// index; radius mode may return an empty set.
pub fn retrieve(base: &BinaryCodeMatrix, query: u64, mode: RetrievalMode) -> Vec<usize> {
    match mode {
        RetrievalMode::Knn(k) => {
            let mut dists: Vec<(u32, usize)> = base
                .words()
                .iter()
                .enumerate()
                .map(|(i, &w)| (hamming(w, query), i))
                .collect();
            let k = k.min(dists.len());
            dists.select_nth_unstable(k.saturating_sub(1));
            dists.truncate(k.max(1));
            // re-sort the selected prefix for deterministic order
            dists.sort_unstable();
            dists.truncate(k);
            dists.into_iter().map(|(_, i)| i).collect()
        }
        RetrievalMode::Radius(r) => base
            .words()
            .iter()
            .enumerate()
            .filter(|&(_, &w)| hamming(w, query) <= r)
            .map(|(i, _)| i)
            .collect(),
    }
}

/// How queries with empty retrieved sets enter the averages: scored as zero
/// precision (the convention for scalar precision tables) or skipped
/// entirely (the convention for precision/recall curves).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyPolicy {
    ScoreZero,
    Skip,
}

/// Average precision and recall in percent over the query set.
pub fn precision_recall(
    gt: &GroundTruth,
    retrieved: &[Vec<usize>],
    empty: EmptyPolicy,
) -> (f64, f64) {
    assert_eq!(gt.neighbors.len(), retrieved.len());
    let mut p_sum = 0.0;
    let mut r_sum = 0.0;
    let mut counted = 0usize;
    for (truth, ret) in gt.neighbors.iter().zip(retrieved) {
        if ret.is_empty() {
            match empty {
                EmptyPolicy::ScoreZero => {
                    counted += 1; // precision and recall both 0
                }
                EmptyPolicy::Skip => {}
            }
            continue;
        }
        let truth_set: std::collections::HashSet<usize> = truth.iter().cloned().collect();
        let inter = ret.iter().filter(|i| truth_set.contains(i)).count();
        p_sum += inter as f64 / ret.len() as f64;
        r_sum += inter as f64 / gt.k as f64;
        counted += 1;
    }
    if counted == 0 {
        return (0.0, 0.0);
    }
    (
        100.0 * p_sum / counted as f64,
        100.0 * r_sum / counted as f64,
    )
}

/// One precision/recall point per Hamming radius 0..=r_max. Curve points
/// use the skip-empty convention unless told otherwise.
pub fn pr_curve(
    gt: &GroundTruth,
    base: &BinaryCodeMatrix,
    queries: &BinaryCodeMatrix,
    r_max: u32,
    empty: EmptyPolicy,
) -> Vec<(u32, f64, f64)> {
    (0..=r_max)
        .map(|r| {
            let retrieved: Vec<Vec<usize>> = (0..queries.len())
                .into_par_iter()
                .map(|q| retrieve(base, queries.word(q), RetrievalMode::Radius(r)))
                .collect();
            let (p, rec) = precision_recall(gt, &retrieved, empty);
            (r, p, rec)
        })
        .collect()
}

/// Histogram of code usage over a dataset.
#[derive(Debug, Clone)]
pub struct CodeHistogram {
    pub bits: usize,
    pub count: usize,
    pub counts: HashMap<u64, u64>,
}

pub fn code_histogram(codes: &BinaryCodeMatrix) -> CodeHistogram {
    let mut counts = HashMap::new();
    for &w in codes.words() {
        *counts.entry(w).or_insert(0u64) += 1;
    }
    CodeHistogram {
        bits: codes.bits(),
        count: codes.len(),
        counts,
    }
}

/// Entropy of the empirical code distribution, in bits: the effective
/// number of bits. Lies in [0, min(L, log2 N)].
pub fn code_entropy(hist: &CodeHistogram) -> f64 {
    let n = hist.count as f64;
    let s: f64 = hist
        .counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    let bound = (hist.bits as f64).min(n.log2());
    debug_assert!(s >= -1e-9 && s <= bound + 1e-9, "entropy {s} out of [0, {bound}]");
    s.clamp(0.0, bound)
}
