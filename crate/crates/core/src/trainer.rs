//! The outer training loop: alternate the parameter steps (h, f) with the
//! per-point code step (Z) while the quadratic penalty mu increases on a
//! geometric schedule. Stops when the codes become a fixed point of the
//! hash function (Z = h(X)), when validation precision drops below the best
//! seen, or at the iteration cap. A fixed-mu variant keeps mu pinned at its
//! initial small value and refits the hash function to the final codes.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baselines::{fit_itq, fit_pca, tpca_encode};
use crate::codes::{hamming, low_mask, BinaryCodeMatrix};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::metrics::{build_ground_truth, precision_recall, retrieve, EmptyPolicy, GroundTruth, RetrievalMode};
use crate::model::{LinearDecoder, LinearEncoder};
use crate::split::DatasetSplit;
use crate::steps::{f_step, h_step, HStepState};
use crate::svm::SvmConfig;
use crate::zstep::{zstep_batch, ZStepMode};

/// Geometric penalty schedule mu_1, growth * mu_1, growth^2 * mu_1, ...
#[derive(Debug, Clone, Copy)]
pub struct PenaltySchedule {
    pub mu1: f64,
    pub growth: f64,
    pub max_iters: usize,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        Self {
            mu1: 0.01,
            growth: 2.0,
            max_iters: 30,
        }
    }
}

impl PenaltySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.mu1 <= 0.0 || self.growth <= 1.0 || self.max_iters == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs mu1 > 0, growth > 1 and at least one iteration".into(),
            ));
        }
        Ok(())
    }
}

/// Full optimization with increasing mu, or the fixed-small-mu variant that
/// only alternates the decoder fit and the code step and fits the hash
/// function to the final codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Ba,
    Bfa,
}

/// Held-out precision monitoring: a fraction of the points is split off,
/// their `ground_truth_k` Euclidean neighbors in the training part are the
/// relevant set, and precision of Hamming `retrieval_k`-NN with the current
/// hash function decides early stopping.
#[derive(Debug, Clone, Copy)]
pub struct ValidationConfig {
    pub fraction: f64,
    pub ground_truth_k: usize,
    pub retrieval_k: usize,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            fraction: 0.1,
            ground_truth_k: 50,
            retrieval_k: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub zstep: ZStepMode,
    pub svm: SvmConfig,
    /// The classifier penalty doubles along with mu, capped here, so the
    /// hash function tracks the codes more tightly as constraints harden.
    pub svm_c_max: f64,
    pub schedule: PenaltySchedule,
    /// None disables early stopping and trains on every point, which is
    /// what lets the finite-mu fixed point be observed directly.
    pub validation: Option<ValidationConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Ba,
            zstep: ZStepMode::Exact,
            svm: SvmConfig::default(),
            svm_c_max: 1e4,
            schedule: PenaltySchedule::default(),
            validation: Some(ValidationConfig::default()),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Z = h(X) after a Z step: nothing can change at any larger mu.
    CodesFixed,
    /// Validation precision fell below the best seen so far.
    ValidationDrop,
    MaxIters,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mu: f64,
    /// Penalty objective after the parameter steps, before the Z step.
    pub e_q_before_z: f64,
    /// Penalty objective after the Z step.
    pub e_q: f64,
    /// Autoencoder reconstruction error of the current (h, f).
    pub e_ba: f64,
    pub constraint_violation: f64,
    pub validation_precision: Option<f64>,
    pub codes_changed: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Iteration whose snapshot was returned (differs from the last one
    /// when validation rolls back to the best model).
    pub returned_iteration: usize,
}

impl TrainReport {
    /// One CSV row per iteration.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "iteration,mu,e_q_before_z,e_q,e_ba,violation,val_precision,codes_changed,seconds"
        )?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.iteration,
                r.mu,
                r.e_q_before_z,
                r.e_q,
                r.e_ba,
                r.constraint_violation,
                r.validation_precision
                    .map_or(String::new(), |p| format!("{p}")),
                r.codes_changed,
                r.wall_seconds
            )?;
        }
        Ok(())
    }
}

/// Everything train() produces: the model, the final training codes (which
/// cover the training part of the split when validation is enabled), and
/// the per-iteration report.
#[derive(Debug, Clone)]
pub struct Trained {
    pub encoder: LinearEncoder,
    pub decoder: LinearDecoder,
    pub codes: BinaryCodeMatrix,
    pub report: TrainReport,
    /// Present when validation was enabled; `split.train[i]` is the column
    /// of X that `codes` row i belongs to.
    pub split: Option<DatasetSplit>,
}

/// Exact sums of the penalty objective, the autoencoder reconstruction
/// error, and the constraint violation sum ||z_n - h(x_n)||^2.
pub fn evaluate_penalty(
    h: &LinearEncoder,
    f: &LinearDecoder,
    z: &BinaryCodeMatrix,
    x: &FeatureMatrix,
    mu: f64,
) -> (f64, f64, f64) {
    let hx = h.encode(x).expect("dimension mismatch in evaluate_penalty");
    let mut recon_z = 0.0;
    let mut e_ba = 0.0;
    let mut violation = 0.0;
    for n in 0..x.len() {
        let xn = x.point(n);
        recon_z += f.residual_sq(&xn, z.word(n));
        e_ba += f.residual_sq(&xn, hx.word(n));
        // binary vectors: the squared distance is the Hamming distance
        violation += hamming(z.word(n), hx.word(n)) as f64;
    }
    (recon_z + mu * violation, e_ba, violation)
}

/// Choice of initial codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeInit {
    Itq { iters: usize, seed: u64 },
    Tpca,
    Random { seed: u64 },
}

pub fn init_codes(x: &FeatureMatrix, l: usize, method: CodeInit) -> Result<BinaryCodeMatrix> {
    match method {
        CodeInit::Itq { iters, seed } => fit_itq(x, l, iters, seed)?.encode(x),
        CodeInit::Tpca => {
            let pca = fit_pca(x, l)?;
            tpca_encode(&pca, x)
        }
        CodeInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = low_mask(l);
            BinaryCodeMatrix::new(l, (0..x.len()).map(|_| rng.gen::<u64>() & mask).collect())
        }
    }
}

struct Snapshot {
    encoder: LinearEncoder,
    decoder: LinearDecoder,
    codes: BinaryCodeMatrix,
    iteration: usize,
    precision: f64,
}

fn validation_precision(
    h: &LinearEncoder,
    x_train: &FeatureMatrix,
    x_val: &FeatureMatrix,
    gt: &GroundTruth,
    k: usize,
) -> Result<f64> {
    let base = h.encode(x_train)?;
    let queries = h.encode(x_val)?;
    let retrieved: Vec<Vec<usize>> = (0..queries.len())
        .map(|q| retrieve(&base, queries.word(q), RetrievalMode::Knn(k)))
        .collect();
    let (p, _) = precision_recall(gt, &retrieved, EmptyPolicy::ScoreZero);
    Ok(p)
}

/// Runs the alternating optimization starting from the codes `z0`.
pub fn train(x: &FeatureMatrix, z0: &BinaryCodeMatrix, cfg: &TrainConfig) -> Result<Trained> {
    cfg.schedule.validate()?;
    if z0.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "initial codes cover {} points, features have {}",
            z0.len(),
            x.len()
        )));
    }
    if x.normalization().is_none() {
        eprintln!("warning: training on non-normalized features");
    }

    // held-out split and fixed Euclidean ground truth for precision checks
    let (x_train, mut z, x_val, gt, split) = match &cfg.validation {
        Some(vc) => {
            let split = DatasetSplit::new(x.len(), vc.fraction, 0.0, cfg.seed)?;
            let x_train = x.select(&split.train);
            let z = z0.select(&split.train);
            let x_val = x.select(&split.validation);
            let gt = build_ground_truth(&x_val, &x_train, vc.ground_truth_k)?;
            (x_train, z, Some(x_val), Some(gt), Some(split))
        }
        None => (x.clone(), z0.clone(), None, None, None),
    };

    let mut mu = cfg.schedule.mu1;
    let mut svm_cfg = cfg.svm.clone();
    let mut h_state: Option<HStepState> = None;
    let mut relaxed_warm = None;
    let mut best: Option<Snapshot> = None;
    let mut records = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut fixed: Option<Snapshot> = None;

    for iteration in 0..cfg.schedule.max_iters {
        let t0 = Instant::now();

        let state = h_step(&x_train, &z, &svm_cfg, h_state.as_ref())?;
        let decoder = f_step(&z, &x_train)?;
        let (e_q_before_z, _, _) = evaluate_penalty(&state.encoder, &decoder, &z, &x_train, mu);

        let anchors = state.encoder.encode(&x_train)?;
        let (z_new, relaxed, stats) = zstep_batch(
            &decoder,
            &x_train,
            &anchors,
            &z,
            mu,
            cfg.zstep,
            relaxed_warm.as_ref(),
        )?;
        relaxed_warm = relaxed;
        z = z_new;
        h_state = Some(state);
        let encoder = &h_state.as_ref().unwrap().encoder;

        let (e_q, e_ba, violation) = evaluate_penalty(encoder, &decoder, &z, &x_train, mu);
        let precision = match (&x_val, &gt, &cfg.validation) {
            (Some(xv), Some(gt), Some(vc)) => Some(validation_precision(
                encoder,
                &x_train,
                xv,
                gt,
                vc.retrieval_k,
            )?),
            _ => None,
        };
        records.push(IterationRecord {
            iteration,
            mu,
            e_q_before_z,
            e_q,
            e_ba,
            constraint_violation: violation,
            validation_precision: precision,
            codes_changed: stats.codes_changed,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });

        let codes_fixed = violation == 0.0;
        if codes_fixed {
            // Z = h(X): with exact parameter steps nothing changes at any
            // larger mu, so this is the final model
            fixed = Some(Snapshot {
                encoder: encoder.clone(),
                decoder: decoder.clone(),
                codes: z.clone(),
                iteration,
                precision: precision.unwrap_or(0.0),
            });
            stop = StopReason::CodesFixed;
            break;
        }

        if let Some(p) = precision {
            let best_p = best.as_ref().map_or(f64::NEG_INFINITY, |s| s.precision);
            if p > best_p {
                best = Some(Snapshot {
                    encoder: encoder.clone(),
                    decoder: decoder.clone(),
                    codes: z.clone(),
                    iteration,
                    precision: p,
                });
            } else if p < best_p {
                stop = StopReason::ValidationDrop;
                break;
            }
        } else {
            best = Some(Snapshot {
                encoder: encoder.clone(),
                decoder: decoder.clone(),
                codes: z.clone(),
                iteration,
                precision: 0.0,
            });
        }

        if cfg.mode == TrainMode::Ba {
            mu *= cfg.schedule.growth;
            svm_cfg.c = (svm_cfg.c * 2.0).min(cfg.svm_c_max);
        }
    }

    let chosen = fixed.or(best).ok_or_else(|| {
        Error::Numeric("training produced no usable iteration".into())
    })?;
    let mut encoder = chosen.encoder;
    let decoder = chosen.decoder;
    let codes = chosen.codes;

    if cfg.mode == TrainMode::Bfa && stop != StopReason::CodesFixed {
        // the fixed-mu variant defines the hash function as a classifier
        // fit to the final codes
        encoder = h_step(&x_train, &codes, &svm_cfg, h_state.as_ref())?.encoder;
    }

    Ok(Trained {
        encoder,
        decoder,
        codes,
        report: TrainReport {
            records,
            stop,
            returned_iteration: chosen.iteration,
        },
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    use crate::synth::gaussian_blobs;

    /// Four exact cluster centers at square corners in 2D: codes equal the
    /// coordinate signs, are linearly separable, and reconstruct exactly.
    fn corner_dataset(n: usize) -> (FeatureMatrix, BinaryCodeMatrix) {
        let mut xm = DMatrix::zeros(2, n);
        let mut words = Vec::with_capacity(n);
        for i in 0..n {
            let sx = if i % 2 == 0 { 1.0 } else { -1.0 };
            let sy = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
            xm[(0, i)] = sx;
            xm[(1, i)] = sy;
            let mut w = 0u64;
            if sx > 0.0 {
                w |= 1;
            }
            if sy > 0.0 {
                w |= 2;
            }
            words.push(w);
        }
        (
            FeatureMatrix::new(xm).unwrap(),
            BinaryCodeMatrix::new(2, words).unwrap(),
        )
    }

    #[test]
    fn reconstructible_input_stops_at_first_mu() {
        let (x, z0) = corner_dataset(40);
        let cfg = TrainConfig {
            validation: None,
            schedule: PenaltySchedule {
                max_iters: 10,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(&x, &z0, &cfg).unwrap();
        assert_eq!(out.report.stop, StopReason::CodesFixed);
        assert_eq!(out.report.records.len(), 1);
        assert!((out.report.records[0].mu - 0.01).abs() < 1e-15);
        assert!(out.report.records[0].e_ba < 1e-12);
        assert_eq!(out.encoder.encode(&x).unwrap(), out.codes);
    }

    #[test]
    fn evaluate_penalty_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (d, l, n) = (5, 4, 30);
        let x = FeatureMatrix::new(DMatrix::from_fn(d, n, |_, _| rng.gen_range(-1.0..1.0)))
            .unwrap();
        let z = BinaryCodeMatrix::new(
            l,
            (0..n).map(|_| rng.gen::<u64>() & low_mask(l)).collect(),
        )
        .unwrap();
        let h = LinearEncoder {
            weights: DMatrix::from_fn(l, d, |_, _| rng.gen_range(-1.0..1.0)),
            bias: DVector::from_fn(l, |_, _| rng.gen_range(-0.5..0.5)),
        };
        let f = LinearDecoder {
            weights: DMatrix::from_fn(d, l, |_, _| rng.gen_range(-1.0..1.0)),
            bias: DVector::from_fn(d, |_, _| rng.gen_range(-0.5..0.5)),
        };
        let mu = 0.7;
        let (e_q, e_ba, viol) = evaluate_penalty(&h, &f, &z, &x, mu);

        // scalar loops over every entry
        let mut e_q_o = 0.0;
        let mut e_ba_o = 0.0;
        let mut viol_o = 0.0;
        for c in 0..n {
            let xn = x.point(c);
            let hx = h.encode_point(&xn);
            for row in 0..d {
                let mut rz = f.bias[row];
                let mut rh = f.bias[row];
                for bit in 0..l {
                    if (z.word(c) >> bit) & 1 == 1 {
                        rz += f.weights[(row, bit)];
                    }
                    if (hx >> bit) & 1 == 1 {
                        rh += f.weights[(row, bit)];
                    }
                }
                e_q_o += (xn[row] - rz).powi(2);
                e_ba_o += (xn[row] - rh).powi(2);
            }
            for bit in 0..l {
                let dz = ((z.word(c) >> bit) & 1) as f64 - ((hx >> bit) & 1) as f64;
                viol_o += dz * dz;
            }
        }
        e_q_o += mu * viol_o;
        assert!((e_q - e_q_o).abs() < 1e-9);
        assert!((e_ba - e_ba_o).abs() < 1e-9);
        assert!((viol - viol_o).abs() < 1e-9);

        // on the constraint manifold E_Q = E_BA with zero violation
        let hz = h.encode(&x).unwrap();
        let (e_q, e_ba, viol) = evaluate_penalty(&h, &f, &hz, &x, mu);
        assert_eq!(viol, 0.0);
        assert!((e_q - e_ba).abs() < 1e-12);

        // mu = 0 reduces to the plain reconstruction error of the codes
        let (e_q0, _, _) = evaluate_penalty(&h, &f, &z, &x, 0.0);
        let recon: f64 = (0..n).map(|c| f.residual_sq(&x.point(c), z.word(c))).sum();
        assert!((e_q0 - recon).abs() < 1e-9);
    }

    #[test]
    fn bfa_mode_never_changes_mu() {
        let x = gaussian_blobs(6, 120, 4, 0.1, 3).unwrap().normalize().unwrap();
        let z0 = init_codes(&x, 4, CodeInit::Tpca).unwrap();
        let cfg = TrainConfig {
            mode: TrainMode::Bfa,
            validation: None,
            schedule: PenaltySchedule {
                max_iters: 5,
                ..Default::default()
            },
            ..Default::default()
        };
        let out = train(&x, &z0, &cfg).unwrap();
        for r in &out.report.records {
            assert_eq!(r.mu, 0.01);
        }
    }

    #[test]
    fn penalty_never_increases_across_z_step() {
        let x = gaussian_blobs(8, 200, 5, 0.15, 7).unwrap().normalize().unwrap();
        let z0 = init_codes(&x, 6, CodeInit::Random { seed: 9 }).unwrap();
        for zmode in [ZStepMode::Exact, ZStepMode::Group(1)] {
            let cfg = TrainConfig {
                zstep: zmode,
                validation: None,
                schedule: PenaltySchedule {
                    max_iters: 6,
                    ..Default::default()
                },
                ..Default::default()
            };
            let out = train(&x, &z0, &cfg).unwrap();
            for r in &out.report.records {
                assert!(
                    r.e_q <= r.e_q_before_z + 1e-9,
                    "Z step raised E_Q at iteration {} ({zmode:?})",
                    r.iteration
                );
            }
        }
    }

    #[test]
    fn init_codes_methods() {
        let x = gaussian_blobs(6, 80, 3, 0.1, 11).unwrap();
        let a = init_codes(&x, 5, CodeInit::Random { seed: 1 }).unwrap();
        let b = init_codes(&x, 5, CodeInit::Random { seed: 1 }).unwrap();
        assert_eq!(a, b);
        let c = init_codes(&x, 5, CodeInit::Random { seed: 2 }).unwrap();
        assert_ne!(a, c);

        let pca = fit_pca(&x, 5).unwrap();
        let direct = tpca_encode(&pca, &x).unwrap();
        assert_eq!(init_codes(&x, 5, CodeInit::Tpca).unwrap(), direct);

        let itq = fit_itq(&x, 5, 50, 4).unwrap().encode(&x).unwrap();
        assert_eq!(
            init_codes(&x, 5, CodeInit::Itq { iters: 50, seed: 4 }).unwrap(),
            itq
        );
    }

    #[test]
    fn training_is_reproducible() {
        let x = gaussian_blobs(8, 150, 4, 0.1, 13).unwrap().normalize().unwrap();
        let z0 = init_codes(&x, 6, CodeInit::Tpca).unwrap();
        let cfg = TrainConfig {
            zstep: ZStepMode::Group(1),
            schedule: PenaltySchedule {
                max_iters: 4,
                ..Default::default()
            },
            validation: Some(ValidationConfig {
                fraction: 0.2,
                ground_truth_k: 10,
                retrieval_k: 10,
            }),
            seed: 5,
            ..Default::default()
        };
        let a = train(&x, &z0, &cfg).unwrap();
        let b = train(&x, &z0, &cfg).unwrap();
        assert_eq!(a.codes, b.codes);
        assert_eq!(a.encoder.weights, b.encoder.weights);
        assert_eq!(a.report.records.len(), b.report.records.len());
        assert_eq!(a.report.stop, b.report.stop);
        // validation actually ran and produced precisions
        assert!(a.report.records[0].validation_precision.is_some());
        // codes belong to the training part of the split
        assert_eq!(a.codes.len(), a.split.as_ref().unwrap().train.len());
    }

    #[test]
    fn csv_report_has_one_row_per_iteration() {
        let (x, z0) = corner_dataset(20);
        let cfg = TrainConfig {
            validation: None,
            ..Default::default()
        };
        let out = train(&x, &z0, &cfg).unwrap();
        let mut buf = Vec::new();
        out.report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + out.report.records.len());
        assert!(text.starts_with("iteration,mu,"));
    }
}
