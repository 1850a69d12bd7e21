//! Effective dimension of a Gram matrix and the kernel effective information
//! criterion n·R̂ + Ê_k·ln n.

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::kernels::GramMatrix;
use crate::mmr::{empirical_risk, fit, FitContext, MmrProblem};
use crate::models::ModelSpec;
use crate::numerics::{RngStream, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeicReport {
    pub risk_cv: f64,
    pub eff_dim: f64,
    pub keic_value: f64,
    pub n: usize,
}

impl KeicReport {
    pub fn assemble(n: usize, risk_cv: f64, eff_dim: f64) -> Self {
        let keic_value = n as f64 * risk_cv + eff_dim * (n as f64).ln();
        Self { risk_cv, eff_dim, keic_value, n }
    }
}

/// tr(K) / sqrt(Σᵢⱼ Kᵢⱼ²).
pub fn effective_dimension(k: &SymMatrix) -> Result<f64> {
    let fro = k.frobenius_sq();
    if !(fro > 0.0) || !fro.is_finite() {
        return Err(Error::DegenerateKernel("effective dimension of a zero or non-finite Gram matrix".into()));
    }
    Ok(k.trace() / fro.sqrt())
}

/// Two deterministic folds; the first ⌊n/2⌋ shuffled indices form fold A.
pub fn cv_folds(n: usize, fold_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let perm = RngStream::new(fold_seed).permutation(n);
    let (a, b) = perm.split_at(n / 2);
    (a.to_vec(), b.to_vec())
}

/// Mean held-out risk over the two folds, each fit on the other fold.
pub fn cv_risk(data: &Dataset, gram: &GramMatrix, spec: &ModelSpec, ctx: &FitContext<'_>, fold_seed: u64) -> Result<f64> {
    let n = data.len();
    if n < 4 {
        return Err(Error::Dimension(format!("cross-validated risk needs at least 4 samples, got {n}")));
    }
    if gram.dim() != n {
        return Err(Error::Dimension("gram does not match dataset".into()));
    }
    let (a, b) = cv_folds(n, fold_seed);
    let mut total = 0.0;
    for (train, held) in [(&a, &b), (&b, &a)] {
        let (d_train, g_train) = (data.subset(train), gram.select(train));
        let (d_held, g_held) = (data.subset(held), gram.select(held));
        let fitted = fit(&MmrProblem::new(&d_train, &g_train)?, spec, ctx)?;
        total += empirical_risk(&MmrProblem::new(&d_held, &g_held)?, &fitted.model);
    }
    Ok(total / 2.0)
}

pub fn keic(data: &Dataset, gram: &GramMatrix, spec: &ModelSpec, ctx: &FitContext<'_>, fold_seed: u64) -> Result<KeicReport> {
    let risk = cv_risk(data, gram, spec, ctx, fold_seed)?;
    let eff = effective_dimension(&gram.matrix)?;
    Ok(KeicReport::assemble(data.len(), risk, eff))
}
