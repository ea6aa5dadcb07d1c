//! Reference hashers: PCA, thresholded PCA (tPCA), and Iterative
//! Quantization (ITQ), plus optimal-decoder refitting so reconstruction
//! errors are compared against each method's best achievable decoder.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codes::BinaryCodeMatrix;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{LinearDecoder, LinearEncoder};
use crate::steps::f_step;

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// L x D, orthonormal rows, sorted by non-increasing eigenvalue.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

/// Top-L principal directions of the centered data, via an eigendecomposition
/// of the D x D covariance. The sign of each component is fixed by making its
/// largest-magnitude entry positive.
pub fn fit_pca(x: &FeatureMatrix, l: usize) -> Result<PcaModel> {
    let d = x.dims();
    let n = x.len();
    if n <= l {
        return Err(Error::InvalidArgument(format!(
            "PCA needs N > L, got N={n}, L={l}"
        )));
    }
    if l == 0 || l > d {
        return Err(Error::InvalidArgument(format!(
            "component count {l} out of range for D={d}"
        )));
    }
    let mean = x.matrix().column_mean();
    let mut centered = x.matrix().clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let cov = (&centered * centered.transpose()) / n as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let lam_max = eig.eigenvalues[order[0]].max(0.0);
    if eig.eigenvalues[order[l - 1]] <= 1e-12 * lam_max.max(1e-300) {
        return Err(Error::InvalidArgument(format!(
            "requested {l} components but data rank is lower"
        )));
    }
    let mut components = DMatrix::zeros(l, d);
    let mut eigenvalues = Vec::with_capacity(l);
    for (row, &idx) in order[..l].iter().enumerate() {
        let mut v = eig.eigenvectors.column(idx).into_owned();
        // deterministic sign: largest-magnitude entry positive
        let mut argmax = 0;
        for i in 1..d {
            if v[i].abs() > v[argmax].abs() {
                argmax = i;
            }
        }
        if v[argmax] < 0.0 {
            v = -v;
        }
        components.set_row(row, &v.transpose());
        eigenvalues.push(eig.eigenvalues[idx]);
    }
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

impl PcaModel {
    pub fn bits(&self) -> usize {
        self.components.nrows()
    }

    /// Projections of the points onto the components, N x L, row per point.
    pub fn project(&self, x: &FeatureMatrix) -> DMatrix<f64> {
        let mut centered = x.matrix().clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mean;
        }
        (&self.components * centered).transpose()
    }

    /// Thresholded-PCA hash as a linear encoder (threshold at 0).
    pub fn encoder(&self) -> LinearEncoder {
        LinearEncoder {
            weights: self.components.clone(),
            bias: -(&self.components * &self.mean),
        }
    }
}

/// Thresholds the principal projections at 0; projections of exactly 0 map
/// to bit 1, matching the encoder's step convention.
pub fn tpca_encode(model: &PcaModel, x: &FeatureMatrix) -> Result<BinaryCodeMatrix> {
    model.encoder().encode(x)
}

#[derive(Debug, Clone)]
pub struct ItqModel {
    pub pca: PcaModel,
    /// L x L orthogonal rotation of the PCA projections.
    pub rotation: DMatrix<f64>,
    /// Quantization objective after every half-step (code update, then
    /// rotation update), for monitoring the alternation.
    pub objective_trace: Vec<f64>,
}

fn sgn_matrix(v: &DMatrix<f64>) -> DMatrix<f64> {
    v.map(|x| if x >= 0.0 { 1.0 } else { -1.0 })
}

/// Iterative quantization: alternates code quantization B = sgn(VR) with the
/// orthogonal-Procrustes rotation update (from an SVD of V^T B), starting
/// from a seeded random rotation. Stops early when the codes stop changing.
pub fn fit_itq(x: &FeatureMatrix, l: usize, iters: usize, seed: u64) -> Result<ItqModel> {
    let pca = fit_pca(x, l)?;
    let v = pca.project(x); // N x L
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = DMatrix::from_fn(l, l, |_, _| {
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        (-2.0 * u1.ln()).sqrt() * u2.cos()
    });
    let mut rotation = gauss.qr().q();

    let mut objective_trace = Vec::new();
    let mut prev_b: Option<DMatrix<f64>> = None;
    for _ in 0..iters {
        let vr = &v * &rotation;
        let b = sgn_matrix(&vr);
        objective_trace.push((&b - &vr).norm_squared());
        if prev_b.as_ref() == Some(&b) {
            break;
        }
        // Procrustes: max tr(R^T V^T B) via SVD of V^T B
        let svd = (v.transpose() * &b).svd(true, true);
        rotation = svd.u.as_ref().unwrap() * svd.v_t.as_ref().unwrap();
        objective_trace.push((&b - &v * &rotation).norm_squared());
        prev_b = Some(b);
    }
    Ok(ItqModel {
        pca,
        rotation,
        objective_trace,
    })
}

impl ItqModel {
    pub fn bits(&self) -> usize {
        self.pca.bits()
    }

    /// The learned hash as a thresholded linear projection.
    pub fn encoder(&self) -> LinearEncoder {
        let weights = self.rotation.transpose() * &self.pca.components;
        let bias = -(&weights * &self.pca.mean);
        LinearEncoder { weights, bias }
    }

    pub fn encode(&self, x: &FeatureMatrix) -> Result<BinaryCodeMatrix> {
        self.encoder().encode(x)
    }
}

/// Reconstruction error sum_n ||x_n - f(z_n)||^2 for a fixed decoder.
pub fn reconstruction_error(decoder: &LinearDecoder, z: &BinaryCodeMatrix, x: &FeatureMatrix) -> f64 {
    (0..x.len())
        .map(|n| decoder.residual_sq(&x.point(n), z.word(n)))
        .sum()
}

/// Fits the optimal decoder to the given codes and reports the resulting
/// reconstruction error, so every method is compared at its best decoder.
pub fn refit_decoder(z: &BinaryCodeMatrix, x: &FeatureMatrix) -> Result<(LinearDecoder, f64)> {
    let decoder = f_step(z, x)?;
    let err = reconstruction_error(&decoder, z, x);
    Ok((decoder, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn pca_finds_line_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dir = DVector::from_vec(vec![3.0, 4.0]) / 5.0;
        let mut data = DMatrix::zeros(2, 50);
        for n in 0..50 {
            let t: f64 = rng.gen_range(-2.0..2.0);
            data.set_column(n, &(&dir * t));
        }
        let x = FeatureMatrix::new(data).unwrap();
        let pca = fit_pca(&x, 1).unwrap();
        let c = pca.components.row(0).transpose();
        assert_relative_eq!(c.dot(&dir).abs(), 1.0, epsilon = 1e-9);
        // second component would exceed the rank
        assert!(fit_pca(&x, 2).is_err());
    }

    #[test]
    fn projection_variance_matches_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = DMatrix::from_fn(10, 200, |r, _| rng.gen_range(-1.0..1.0) * (r as f64 + 1.0));
        let x = FeatureMatrix::new(data).unwrap();
        let pca = fit_pca(&x, 6).unwrap();
        let proj = pca.project(&x);
        for l in 0..6 {
            let col = proj.column(l);
            let mean = col.sum() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert_relative_eq!(var, pca.eigenvalues[l], epsilon = 1e-8);
        }
        // eigenvalues sorted non-increasing, rows orthonormal
        for l in 1..6 {
            assert!(pca.eigenvalues[l] <= pca.eigenvalues[l - 1] + 1e-12);
        }
        let gram = &pca.components * pca.components.transpose();
        assert_relative_eq!(gram, DMatrix::identity(6, 6), epsilon = 1e-8);
    }

    #[test]
    fn tpca_point_at_mean_gets_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = DMatrix::from_fn(4, 60, |_, _| rng.gen_range(-1.0..1.0));
        let x = FeatureMatrix::new(data).unwrap();
        let pca = fit_pca(&x, 3).unwrap();
        let mean_point =
            FeatureMatrix::new(DMatrix::from_column_slice(4, 1, pca.mean.as_slice())).unwrap();
        let z = tpca_encode(&pca, &mean_point).unwrap();
        assert_eq!(z.word(0), 0b111);
    }

    #[test]
    fn tpca_matches_scalar_reimplementation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = DMatrix::from_fn(5, 80, |_, _| rng.gen_range(-1.0..1.0));
        let x = FeatureMatrix::new(data).unwrap();
        let pca = fit_pca(&x, 4).unwrap();
        let z = tpca_encode(&pca, &x).unwrap();
        for n in 0..x.len() {
            for l in 0..4 {
                let proj = pca
                    .components
                    .row(l)
                    .transpose()
                    .dot(&(x.point(n) - &pca.mean));
                assert_eq!(z.bit(n, l), proj >= 0.0);
            }
        }
    }

    #[test]
    fn itq_quantized_input_is_fixed_point() {
        // projections already in {-1,+1}: identity rotation reaches objective 0
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(6, 100, |_, _| rng.gen_range(-2.0..2.0));
        let x = FeatureMatrix::new(data).unwrap();
        let itq = fit_itq(&x, 3, 100, 0).unwrap();
        let last = *itq.objective_trace.last().unwrap();
        let first = itq.objective_trace[0];
        assert!(last <= first + 1e-9);
    }

    #[test]
    fn itq_objective_non_increasing() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let data = DMatrix::from_fn(8, 120, |_, _| rng.gen_range(-1.0..1.0));
            let x = FeatureMatrix::new(data).unwrap();
            let itq = fit_itq(&x, 6, 50, seed).unwrap();
            for w in itq.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8, "objective increased: {w:?}");
            }
            // terminal codes consistent: B = sgn(VR)
            let v = itq.pca.project(&x);
            let vr = &v * &itq.rotation;
            let b = sgn_matrix(&vr);
            let z = itq.encode(&x).unwrap();
            for n in 0..x.len() {
                for l in 0..6 {
                    assert_eq!(z.bit(n, l), b[(n, l)] > 0.0);
                }
            }
        }
    }

    #[test]
    fn itq_beats_tpca_reconstruction() {
        let x = crate::synth::gaussian_blobs(12, 400, 6, 0.2, 7)
            .unwrap()
            .normalize()
            .unwrap();
        let pca = fit_pca(&x, 6).unwrap();
        let z_tpca = tpca_encode(&pca, &x).unwrap();
        let itq = fit_itq(&x, 6, 50, 7).unwrap();
        let z_itq = itq.encode(&x).unwrap();
        let (_, e_tpca) = refit_decoder(&z_tpca, &x).unwrap();
        let (_, e_itq) = refit_decoder(&z_itq, &x).unwrap();
        assert!(
            e_itq <= e_tpca + 1e-9,
            "ITQ {e_itq} should not exceed tPCA {e_tpca}"
        );
    }

    #[test]
    fn random_codes_worse_than_itq() {
        let x = crate::synth::gaussian_blobs(10, 300, 5, 0.2, 8)
            .unwrap()
            .normalize()
            .unwrap();
        let itq = fit_itq(&x, 5, 50, 8).unwrap();
        let z_itq = itq.encode(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z_rand = BinaryCodeMatrix::new(
            5,
            (0..x.len()).map(|_| rng.gen::<u64>() & 0x1F).collect(),
        )
        .unwrap();
        let (_, e_itq) = refit_decoder(&z_itq, &x).unwrap();
        let (_, e_rand) = refit_decoder(&z_rand, &x).unwrap();
        assert!(e_rand >= e_itq);
    }
}
