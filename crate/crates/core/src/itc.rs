//! Identification test criterion.
//!
//! For a fitted θ̂ the Hessian-like matrix
//!
//! ```text
//! F̂ = n⁻² Σᵢⱼ ∇θφ(xᵢ) k(zᵢ, zⱼ) ∇θφ(xⱼ)ᵀ = n⁻² Gᵀ K G
//! ```
//!
//! has full rank when the instrument space identifies θ. The test statistic
//! is the squared smallest eigenvalue T̂ = λ̂_c², scaled by the pair variance
//! Λ̂ = (Ĉ⊗Ĉ)ᵀ Ω̂ (Ĉ⊗Ĉ) estimated on a disjoint half of the sample:
//! ITC = n_A·T̂/Λ̂, compared against the (1 − α) quantile of χ²(1).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{gram, GramMatrix, KernelSpec};
use crate::models::{GradMask, Model};
use crate::numerics::{chi2_quantile_1df, sym_eigen, RngStream, SymMatrix};

#[derive(Debug, Clone)]
pub struct FMatrix {
    pub matrix: SymMatrix,
    pub kernel: KernelSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItcReport {
    pub t_hat: f64,
    pub lambda_hat: f64,
    pub itc_value: f64,
    /// (n_A, n_B): sizes of the halves used for T̂ and Λ̂.
    pub n_used: (usize, usize),
    pub identifiable: bool,
    pub alpha: f64,
    pub degenerate_flag: bool,
}

/// n⁻² Gᵀ K G for a Jacobian `grads` (n × c) and Gram matrix `k` (n × n).
pub fn f_matrix_from_parts(grads: &DMatrix<f64>, k: &SymMatrix) -> Result<SymMatrix> {
    let n = grads.nrows();
    if k.dim() != n {
        return Err(Error::Dimension(format!("gram dim {} != jacobian rows {}", k.dim(), n)));
    }
    let nn = (n * n) as f64;
    SymMatrix::new(grads.transpose() * (k.as_matrix() * grads) / nn)
}

pub fn f_matrix(data: &Dataset, gram: &GramMatrix, model: &Model, mask: GradMask) -> Result<FMatrix> {
    let g = model.residual_jacobian(&data.x, mask);
    Ok(FMatrix { matrix: f_matrix_from_parts(&g, &gram.matrix)?, kernel: gram.spec })
}

/// T̂ = max(λ̂_c, 0)² and the matching unit eigenvector Ĉ.
pub fn test_statistic(f: &SymMatrix) -> Result<(f64, DVector<f64>)> {
    let eig = sym_eigen(f)?;
    let (lam, c) = eig.smallest();
    let lam = lam.max(0.0);
    Ok((lam * lam, c))
}

/// Λ̂ as the population variance of Ĉᵀ u(s_ij) Ĉ = (Ĉᵀgᵢ) kᵢⱼ (Ĉᵀgⱼ) over
/// all ordered pairs, which equals (Ĉ⊗Ĉ)ᵀ Ω̂ (Ĉ⊗Ĉ) without forming Ω̂.
pub fn lambda_hat_from_parts(grads: &DMatrix<f64>, k: &SymMatrix, c_hat: &DVector<f64>) -> Result<f64> {
    let n = grads.nrows();
    if k.dim() != n || grads.ncols() != c_hat.len() {
        return Err(Error::Dimension("lambda_hat inputs disagree in shape".into()));
    }
    let s = grads * c_hat;
    let km = k.as_matrix();
    let nn = (n * n) as f64;
    let mut total = 0.0;
    for j in 0..n {
        let col = km.column(j);
        for i in 0..n {
            total += s[i] * col[i] * s[j];
        }
    }
    let mu = total / nn;
    let mut ss = 0.0;
    for j in 0..n {
        let col = km.column(j);
        for i in 0..n {
            let d = s[i] * col[i] * s[j] - mu;
            ss += d * d;
        }
    }
    Ok(ss / nn)
}

pub fn lambda_hat(data_b: &Dataset, gram_b: &GramMatrix, model: &Model, mask: GradMask, c_hat: &DVector<f64>) -> Result<f64> {
    let g = model.residual_jacobian(&data_b.x, mask);
    lambda_hat_from_parts(&g, &gram_b.matrix, c_hat)
}

/// Deterministic 50/50 split: the first ⌊n/2⌋ shuffled indices form half A.
pub fn split_halves(n: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = RngStream::new(split_seed);
    let perm = rng.permutation(n);
    let (a, b) = perm.split_at(n / 2);
    (a.to_vec(), b.to_vec())
}

fn select_rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |r, c| m[(idx[r], c)])
}

/// The criterion from precomputed half-sample Jacobians and Gram matrices.
pub fn itc_from_halves(
    grads_a: &DMatrix<f64>,
    k_a: &SymMatrix,
    grads_b: &DMatrix<f64>,
    k_b: &SymMatrix,
    alpha: f64,
) -> Result<ItcReport> {
    let q = chi2_quantile_1df(1.0 - alpha)?;
    let f = f_matrix_from_parts(grads_a, k_a)?;
    let (t_hat, c_hat) = test_statistic(&f)?;
    let lam = lambda_hat_from_parts(grads_b, k_b, &c_hat)?;
    let n_a = grads_a.nrows();
    let n_used = (n_a, grads_b.nrows());
    if lam < 1e-12 * t_hat.max(1.0) {
        return Ok(ItcReport {
            t_hat,
            lambda_hat: lam,
            itc_value: 0.0,
            n_used,
            identifiable: false,
            alpha,
            degenerate_flag: true,
        });
    }
    let itc_value = n_a as f64 * t_hat / lam;
    Ok(ItcReport {
        t_hat,
        lambda_hat: lam,
        itc_value,
        n_used,
        identifiable: itc_value > q,
        alpha,
        degenerate_flag: false,
    })
}

/// ITC on a dataset given a fitted model and the full-sample Gram matrix.
pub fn itc_from_parts(grads: &DMatrix<f64>, k: &SymMatrix, alpha: f64, split_seed: u64) -> Result<ItcReport> {
    let n = grads.nrows();
    if n < 4 {
        return Err(Error::Dimension(format!("ITC needs at least 4 samples, got {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let (a, b) = split_halves(n, split_seed);
    itc_from_halves(&select_rows(grads, &a), &k.select(&a), &select_rows(grads, &b), &k.select(&b), alpha)
}

/// θ̂ (inside `model`) is reused as given on both halves.
pub fn itc(data: &Dataset, gram: &GramMatrix, model: &Model, mask: GradMask, alpha: f64, split_seed: u64) -> Result<ItcReport> {
    if gram.dim() != data.len() {
        return Err(Error::Dimension("gram does not match dataset".into()));
    }
    let g = model.residual_jacobian(&data.x, mask);
    itc_from_parts(&g, &gram.matrix, alpha, split_seed)
}

/// Gradient design used to check the calibration and power of the test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationDesign {
    /// Gradient columns (1, 1 + η) with η ~ N(0, 1) independent of z: the
    /// population F has rank c − 1 while the per-pair terms still vary.
    RankDeficient,
    /// Gradient columns (1, x) with x = z + N(0, 1): F has full rank.
    FullRank,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSpec {
    pub design: CalibrationDesign,
    pub n: usize,
    pub kernel: KernelSpec,
    pub seed: u64,
}

/// Draws the design for replication `rep` and returns the ITC values.
fn calibration_itc(spec: &CalibrationSpec, rep: u64, alpha: f64) -> Result<ItcReport> {
    let seed = spec.seed.wrapping_add(rep);
    let mut rng = RngStream::substream(seed, "calibration");
    let n = spec.n;
    let mut z = DMatrix::zeros(n, 1);
    let mut g = DMatrix::zeros(n, 2);
    for i in 0..n {
        let zi = rng.uniform(-3.0, 3.0);
        let noise = rng.normal();
        z[(i, 0)] = zi;
        g[(i, 0)] = -1.0;
        g[(i, 1)] = match spec.design {
            CalibrationDesign::RankDeficient => -(1.0 + noise),
            CalibrationDesign::FullRank => -(zi + noise),
        };
    }
    let (a, b) = split_halves(n, RngStream::derive_seed(seed, "itc-split"));
    let ka = gram(&spec.kernel, &select_rows(&z, &a))?;
    let kb = gram(&spec.kernel, &select_rows(&z, &b))?;
    itc_from_halves(&select_rows(&g, &a), &ka.matrix, &select_rows(&g, &b), &kb.matrix, alpha)
}

/// ITC values of `replications` seeded draws of the design.
pub fn calibration_values(spec: &CalibrationSpec, replications: usize) -> Result<Vec<f64>> {
    (0..replications as u64)
        .map(|r| calibration_itc(spec, r, 0.05).map(|rep| rep.itc_value))
        .collect()
}

/// Monte Carlo rejection frequency of the test at level `alpha`.
pub fn null_calibration(spec: &CalibrationSpec, replications: usize, alpha: f64) -> Result<f64> {
    let q = chi2_quantile_1df(1.0 - alpha)?;
    let values = calibration_values(spec, replications)?;
    Ok(rejection_rate(&values, q))
}

pub fn rejection_rate(values: &[f64], threshold: f64) -> f64 {
    values.iter().filter(|v| **v > threshold).count() as f64 / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Split;
    use crate::kernels::gram;
    use crate::models::PolyModel;
    use crate::numerics::RngStream;

    fn random_problem(n: usize, c: usize, seed: u64) -> (DMatrix<f64>, SymMatrix) {
        let mut r = RngStream::new(seed);
        let g = DMatrix::from_fn(n, c, |_, _| r.normal());
        let z = DMatrix::from_fn(n, 1, |_, _| r.uniform(-3.0, 3.0));
        let k = gram(&KernelSpec::gaussian(1.0).unwrap(), &z).unwrap().matrix;
        (g, k)
    }

    #[test]
    fn poly_f_matrix_is_scaled_normal_matrix() {
        let mut r = RngStream::new(1);
        let n = 20;
        let z = DMatrix::from_fn(n, 1, |_, _| r.uniform(-3.0, 3.0));
        let x: Vec<f64> = (0..n).map(|i| z[(i, 0)] + r.normal()).collect();
        let d = Dataset::new(x.clone(), vec![0.0; n], z, 0.0, 1.0, Split::Train).unwrap();
        let k = gram(&KernelSpec::polynomial(2, 1.0).unwrap(), &d.z).unwrap();
        let m = Model::Poly(PolyModel::zeros(2));
        let f = f_matrix(&d, &k, &m, GradMask::Full).unwrap();
        let phi = crate::models::basis_matrix(2, &x);
        let expect = phi.transpose() * k.matrix.as_matrix() * &phi / (n * n) as f64;
        assert!((f.matrix.as_matrix() - expect).amax() < 1e-10);
    }

    #[test]
    fn duplicate_column_is_exactly_singular() {
        let (g, k) = random_problem(30, 2, 3);
        let mut dup = DMatrix::zeros(30, 3);
        dup.set_column(0, &g.column(0));
        dup.set_column(1, &g.column(1));
        dup.set_column(2, &g.column(0));
        let f = f_matrix_from_parts(&dup, &k).unwrap();
        let eig = sym_eigen(&f).unwrap();
        assert!(eig.smallest().0 <= 1e-12 * eig.largest());
        let rep = itc_from_parts(&dup, &k, 0.05, 9).unwrap();
        assert!(!rep.identifiable);
        assert!(rep.t_hat < 1e-24);
    }

    #[test]
    fn test_statistic_examples() {
        let (t, c) = test_statistic(&SymMatrix::from_diagonal(&[4.0, 1.0])).unwrap();
        assert_eq!(t, 1.0);
        assert_eq!(c.as_slice(), &[0.0, 1.0]);
        let singular = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0])).unwrap();
        assert!(test_statistic(&singular).unwrap().0 < 1e-30);
    }

    #[test]
    fn test_statistic_permutation_invariant() {
        let (g, k) = random_problem(15, 4, 5);
        let f = f_matrix_from_parts(&g, &k).unwrap();
        let perm = [2usize, 0, 3, 1];
        let pf = f.select(&perm);
        let (t1, _) = test_statistic(&f).unwrap();
        let (t2, _) = test_statistic(&pf).unwrap();
        assert!((t1 - t2).abs() <= 1e-10 * t1.max(1e-300));
    }

    #[test]
    fn lambda_hat_zero_for_constant_pairs() {
        let g = DMatrix::from_element(6, 1, 1.0);
        let k = SymMatrix::new(DMatrix::from_element(6, 6, 1.0)).unwrap();
        let c = DVector::from_element(1, 1.0);
        assert_eq!(lambda_hat_from_parts(&g, &k, &c).unwrap(), 0.0);
    }

    #[test]
    fn lambda_hat_scalar_reduction() {
        let (g, k) = random_problem(12, 1, 6);
        let c = DVector::from_element(1, 1.0);
        let mut vals = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                vals.push(g[(i, 0)] * k.get(i, j) * g[(j, 0)]);
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!((lambda_hat_from_parts(&g, &k, &c).unwrap() - var).abs() < 1e-12 * var.max(1.0));
    }

    #[test]
    fn kernel_scale_leaves_itc_invariant() {
        let (g, k) = random_problem(40, 3, 8);
        let base = itc_from_parts(&g, &k, 0.05, 1).unwrap();
        let scaled = itc_from_parts(&g, &k.scaled(7.5), 0.05, 1).unwrap();
        assert!((scaled.itc_value / base.itc_value - 1.0).abs() < 1e-10);
        assert!((scaled.t_hat / base.t_hat / 56.25 - 1.0).abs() < 1e-10);
        assert!((scaled.lambda_hat / base.lambda_hat / 56.25 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn split_is_deterministic() {
        let (g, k) = random_problem(30, 2, 2);
        assert_eq!(itc_from_parts(&g, &k, 0.05, 4).unwrap(), itc_from_parts(&g, &k, 0.05, 4).unwrap());
        let (a, b) = split_halves(31, 4);
        assert_eq!((a.len(), b.len()), (15, 16));
    }

    #[test]
    fn too_small_dataset_rejected() {
        let (g, k) = random_problem(3, 1, 2);
        assert!(itc_from_parts(&g, &k, 0.05, 0).is_err());
    }

    #[test]
    fn degenerate_lambda_flagged() {
        // constant gradients and an all-ones kernel give identical pair terms
        let g = DMatrix::from_element(10, 1, 1.0);
        let k = SymMatrix::new(DMatrix::from_element(10, 10, 1.0)).unwrap();
        let rep = itc_from_parts(&g, &k, 0.05, 3).unwrap();
        assert!(rep.degenerate_flag);
        assert_eq!(rep.itc_value, 0.0);
        assert!(!rep.identifiable);
    }
}
