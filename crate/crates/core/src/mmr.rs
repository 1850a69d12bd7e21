//! Empirical KMMR risk and parameter fitting.
//!
//! The empirical risk is the V-statistic
//!
//! ```text
//! R̂(θ) = n⁻² Σᵢⱼ φ_θ(xᵢ, yᵢ) k(zᵢ, zⱼ) φ_θ(xⱼ, yⱼ) = n⁻² rᵀ K r
//! ```
//!
//! including the diagonal i = j terms. For polynomial models it is an exact
//! quadratic in the coefficients and is minimized in closed form; networks
//! are fit by full-batch Adam with early stopping on a validation split.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::models::{basis_matrix, GradMask, Model, ModelSpec, PolyModel};
use crate::numerics::{solve_spd, sym_eigen, SymMatrix};

/// A dataset paired with the Gram matrix of one candidate kernel on its instruments.
#[derive(Debug, Clone, Copy)]
pub struct MmrProblem<'a> {
    pub data: &'a Dataset,
    pub gram: &'a GramMatrix,
}

impl<'a> MmrProblem<'a> {
    pub fn new(data: &'a Dataset, gram: &'a GramMatrix) -> Result<Self> {
        if gram.dim() != data.len() {
            return Err(Error::Dimension(format!(
                "gram dimension {} does not match dataset size {}",
                gram.dim(),
                data.len()
            )));
        }
        Ok(Self { data, gram })
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }
}

/// n⁻² rᵀ K r
pub fn risk_from_residuals(gram: &SymMatrix, residuals: &[f64]) -> f64 {
    let n = residuals.len() as f64;
    gram.quad_form(residuals) / (n * n)
}

pub fn empirical_risk(problem: &MmrProblem<'_>, model: &Model) -> f64 {
    let r = model.residuals(&problem.data.x, &problem.data.y);
    risk_from_residuals(&problem.gram.matrix, r.as_slice())
}

/// ∇θ R̂ = (2/n²) Jᵀ K r with J the n × c matrix of ∇θφ rows.
pub fn risk_gradient(problem: &MmrProblem<'_>, model: &Model) -> DVector<f64> {
    let n = problem.n() as f64;
    let r = model.residuals(&problem.data.x, &problem.data.y);
    let kr = problem.gram.matrix.as_matrix() * r;
    let j = model.residual_jacobian(&problem.data.x, GradMask::Full);
    j.transpose() * kr * (2.0 / (n * n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub ridge: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub risk: f64,
    pub diagnostics: FitDiagnostics,
}

/// Full-batch Adam settings for network fits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamOptions {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Stop after this many iterations without a validation improvement.
    pub patience: usize,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 2000,
            patience: 50,
        }
    }
}

/// Closed-form minimizer for a polynomial model: (ΦᵀKΦ) c = ΦᵀK y, with a
/// small ridge when the normal matrix is numerically singular.
pub fn fit_linear(problem: &MmrProblem<'_>, degree: usize) -> Result<FitResult> {
    let n = problem.n() as f64;
    let phi = basis_matrix(degree, &problem.data.x);
    let k = problem.gram.matrix.as_matrix();
    let kphi = k * &phi;
    let normal = SymMatrix::new(phi.transpose() * &kphi / (n * n))?;
    let y = DVector::from_column_slice(&problem.data.y);
    let rhs = kphi.transpose() * y / (n * n);

    let eig = sym_eigen(&normal)?;
    let (lo, _) = eig.smallest();
    let hi = eig.largest();
    let ridge = if lo < 1e-12 * hi { 1e-10 * normal.trace() / (degree + 1) as f64 } else { 0.0 };
    let coef = solve_spd(&normal, rhs.as_slice(), ridge)?;
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(Error::NumericalFailure("closed-form fit produced non-finite coefficients".into()));
    }
    let model = Model::Poly(PolyModel::from_coefficients(coef));
    let risk = empirical_risk(problem, &model);
    let grad_norm = risk_gradient(problem, &model).norm();
    Ok(FitResult { model, risk, diagnostics: FitDiagnostics { iterations: 0, grad_norm, ridge } })
}

/// Minimizes the empirical risk of a network from `init` with full-batch Adam,
/// returning the parameters with the best validation risk. Without a
/// validation problem the training risk drives early stopping.
pub fn fit_gradient(
    problem: &MmrProblem<'_>,
    init: Model,
    valid: Option<&MmrProblem<'_>>,
    opts: &AdamOptions,
) -> Result<FitResult> {
    let mut model = init;
    let c = model.n_params();
    let mut m = vec![0.0; c];
    let mut v = vec![0.0; c];
    let monitor = |model: &Model| match valid {
        Some(vp) => empirical_risk(vp, model),
        None => empirical_risk(problem, model),
    };

    let mut best_score = monitor(&model);
    let mut best_values = model.values().to_vec();
    let mut since_best = 0;
    let mut iterations = 0;
    let mut grad_norm = f64::NAN;
    let mut theta = model.values().to_vec();

    for t in 1..=opts.max_iterations {
        iterations = t;
        let g = risk_gradient(problem, &model);
        grad_norm = g.norm();
        if !grad_norm.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite gradient at iteration {t} (last risk {best_score:e})"
            )));
        }
        let bc1 = 1.0 - opts.beta1.powi(t as i32);
        let bc2 = 1.0 - opts.beta2.powi(t as i32);
        for k in 0..c {
            m[k] = opts.beta1 * m[k] + (1.0 - opts.beta1) * g[k];
            v[k] = opts.beta2 * v[k] + (1.0 - opts.beta2) * g[k] * g[k];
            let mhat = m[k] / bc1;
            let vhat = v[k] / bc2;
            theta[k] -= opts.learning_rate * mhat / (vhat.sqrt() + opts.epsilon);
        }
        model.set_values(&theta);

        let score = monitor(&model);
        if !score.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "loss became non-finite at iteration {t} (gradient norm {grad_norm:e})"
            )));
        }
        if score < best_score {
            best_score = score;
            best_values.copy_from_slice(&theta);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.patience {
                break;
            }
        }
    }
    model.set_values(&best_values);
    let risk = empirical_risk(problem, &model);
    Ok(FitResult { model, risk, diagnostics: FitDiagnostics { iterations, grad_norm, ridge: 0.0 } })
}

/// Everything a fit needs besides the training problem.
#[derive(Debug, Clone, Copy)]
pub struct FitContext<'a> {
    pub init_seed: u64,
    pub valid: Option<MmrProblem<'a>>,
    pub adam: AdamOptions,
}

impl<'a> FitContext<'a> {
    pub fn new(init_seed: u64) -> Self {
        Self { init_seed, valid: None, adam: AdamOptions::default() }
    }

    pub fn with_valid(mut self, valid: MmrProblem<'a>) -> Self {
        self.valid = Some(valid);
        self
    }
}

/// Fits `spec` on `problem`: closed form for polynomials, Adam for networks.
pub fn fit(problem: &MmrProblem<'_>, spec: &ModelSpec, ctx: &FitContext<'_>) -> Result<FitResult> {
    match spec {
        ModelSpec::Poly { degree } => fit_linear(problem, *degree),
        ModelSpec::Mlp { .. } => {
            let init = spec.instantiate(ctx.init_seed)?;
            fit_gradient(problem, init, ctx.valid.as_ref(), &ctx.adam)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scenario, ScenarioSpec, Split, TrueFunction};
    use crate::kernels::{gram, KernelSpec};
    use crate::models::MlpModel;
    use crate::numerics::RngStream;
    use nalgebra::DMatrix;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut r = RngStream::new(seed);
        let z = DMatrix::from_fn(n, 1, |_, _| r.uniform(-3.0, 3.0));
        let x: Vec<f64> = (0..n).map(|i| z[(i, 0)] + 0.5 * r.normal()).collect();
        let y: Vec<f64> = x.iter().map(|x| 0.5 * x + 0.3 * r.normal()).collect();
        Dataset::new(x, y, z, 0.0, 1.0, Split::Train).unwrap()
    }

    fn gram_of(d: &Dataset, label: &str) -> GramMatrix {
        gram(&label.parse::<KernelSpec>().unwrap(), &d.z).unwrap()
    }

    #[test]
    fn zero_residual_zero_risk() {
        let z = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let x = vec![0.0, 1.0, 2.0];
        let d = Dataset::new(x.clone(), x, z, 0.0, 1.0, Split::Train).unwrap();
        let g = gram_of(&d, "G-1");
        let p = MmrProblem::new(&d, &g).unwrap();
        let m = Model::Poly(PolyModel::from_coefficients(vec![0.0, 1.0]));
        assert_eq!(empirical_risk(&p, &m), 0.0);
        assert!(risk_gradient(&p, &m).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_point_hand_expansion() {
        let k = SymMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])).unwrap();
        assert!((risk_from_residuals(&k, &[1.0, -1.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ordinary_least_squares_reduction() {
        let z = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        let d = Dataset::new(vec![0.0, 0.0], vec![1.0, 3.0], z, 0.0, 1.0, Split::Train).unwrap();
        let g = GramMatrix { matrix: SymMatrix::identity(2), spec: KernelSpec::Linear, sample: String::new() };
        let p = MmrProblem::new(&d, &g).unwrap();
        let fit = fit_linear(&p, 0).unwrap();
        assert!((fit.model.values()[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_beats_random_probes() {
        let d = toy(80, 1);
        let g = gram_of(&d, "G-1");
        let p = MmrProblem::new(&d, &g).unwrap();
        let fit = fit_linear(&p, 2).unwrap();
        assert!((fit.risk - empirical_risk(&p, &fit.model)).abs() < 1e-10);
        assert!(fit.diagnostics.grad_norm < 1e-8);
        let mut r = RngStream::new(2);
        for _ in 0..50 {
            let c: Vec<f64> = fit.model.values().iter().map(|v| v + r.normal()).collect();
            let probe = Model::Poly(PolyModel::from_coefficients(c));
            assert!(fit.risk <= empirical_risk(&p, &probe));
        }
    }

    #[test]
    fn unidentified_fit_reaches_grid_minimum() {
        // linear kernel, quadratic model: the normal matrix has rank one
        let d = toy(60, 3);
        let g = gram_of(&d, "L");
        let p = MmrProblem::new(&d, &g).unwrap();
        let fit = fit_linear(&p, 2).unwrap();
        assert!(fit.diagnostics.ridge > 0.0);
        assert!(fit.model.values().iter().all(|v| v.is_finite()));
        let mut grid_min = f64::INFINITY;
        for a in -20..=20 {
            for b in -20..=20 {
                for c in -10..=10 {
                    let m = Model::Poly(PolyModel::from_coefficients(vec![
                        a as f64 * 0.1,
                        b as f64 * 0.1,
                        c as f64 * 0.1,
                    ]));
                    grid_min = grid_min.min(empirical_risk(&p, &m));
                }
            }
        }
        assert!(fit.risk <= grid_min + 1e-12, "{} vs {}", fit.risk, grid_min);
    }

    fn fd_gradient(p: &MmrProblem<'_>, model: &Model, h: f64) -> Vec<f64> {
        let base = model.values().to_vec();
        (0..base.len())
            .map(|k| {
                let mut plus = model.clone();
                let mut minus = model.clone();
                let mut vp = base.clone();
                let mut vm = base.clone();
                vp[k] += h;
                vm[k] -= h;
                plus.set_values(&vp);
                minus.set_values(&vm);
                (empirical_risk(p, &plus) - empirical_risk(p, &minus)) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-12);
        a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
    }

    #[test]
    fn poly_risk_gradient_matches_finite_differences() {
        let d = toy(40, 5);
        let g = gram_of(&d, "P2-1");
        let p = MmrProblem::new(&d, &g).unwrap();
        let model = Model::Poly(PolyModel::from_coefficients(vec![0.3, -0.2, 0.1]));
        let analytic = risk_gradient(&p, &model);
        // closed form −(2/n²)ΦᵀK r
        let phi = basis_matrix(2, &d.x);
        let r = model.residuals(&d.x, &d.y);
        let direct = -(phi.transpose() * (g.matrix.as_matrix() * r)) * (2.0 / 1600.0);
        assert!((&analytic - direct).amax() < 1e-12);
        assert!(rel_err(analytic.as_slice(), &fd_gradient(&p, &model, 1e-5)) < 1e-6);
    }

    #[test]
    fn mlp_risk_gradient_matches_finite_differences() {
        let d = toy(30, 6);
        let g = gram_of(&d, "G-1");
        let p = MmrProblem::new(&d, &g).unwrap();
        let mut r = RngStream::new(7);
        let model = Model::Mlp(MlpModel::init(&[10], &mut r).unwrap());
        let analytic = risk_gradient(&p, &model);
        assert!(rel_err(analytic.as_slice(), &fd_gradient(&p, &model, 1e-5)) < 1e-4);
    }

    #[test]
    fn adam_descends_and_fits() {
        let s = generate(&ScenarioSpec::new(Scenario::LS, TrueFunction::Linear, 200, 527)).unwrap();
        let k = KernelSpec::gaussian(1.0).unwrap();
        let gt = gram(&k, &s.train.z).unwrap();
        let gv = gram(&k, &s.valid.z).unwrap();
        let p = MmrProblem::new(&s.train, &gt).unwrap();
        let pv = MmrProblem::new(&s.valid, &gv).unwrap();
        let spec: ModelSpec = "mlp:10".parse().unwrap();
        let init = spec.instantiate(11).unwrap();
        let initial = empirical_risk(&p, &init);
        let fit = fit_gradient(&p, init, Some(&pv), &AdamOptions::default()).unwrap();
        assert!(fit.risk <= initial);
        assert!((fit.risk - empirical_risk(&p, &fit.model)).abs() < 1e-12);
    }

    #[test]
    fn closed_form_not_worse_than_gradient_descent() {
        let d = toy(60, 9);
        let g = gram_of(&d, "G-0.5");
        let p = MmrProblem::new(&d, &g).unwrap();
        let exact = fit_linear(&p, 2).unwrap();
        let opts = AdamOptions { patience: 2000, ..AdamOptions::default() };
        let gd = fit_gradient(&p, Model::Poly(PolyModel::zeros(2)), None, &opts).unwrap();
        assert!(exact.risk <= gd.risk + 1e-15);
    }

    #[test]
    fn risk_is_permutation_invariant() {
        let d = toy(25, 12);
        let g = gram_of(&d, "G-1");
        let m = Model::Poly(PolyModel::from_coefficients(vec![0.1, 0.4]));
        let base = empirical_risk(&MmrProblem::new(&d, &g).unwrap(), &m);
        let mut r = RngStream::new(1);
        let perm = r.permutation(25);
        let dp = d.subset(&perm);
        let gp = gram_of(&dp, "G-1");
        let permuted = empirical_risk(&MmrProblem::new(&dp, &gp).unwrap(), &m);
        assert!((base - permuted).abs() < 1e-14);
    }

    #[test]
    fn mismatched_gram_rejected() {
        let d = toy(10, 1);
        let g = gram(&KernelSpec::Linear, &DMatrix::from_element(3, 1, 1.0)).unwrap();
        assert!(MmrProblem::new(&d, &g).is_err());
    }
}
