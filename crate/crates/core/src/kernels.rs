//! Kernel families, Gram matrices and the data-driven Gaussian bandwidths
//! used as baselines.
//!
//! Kernels are written with labels `L`, `P<degree>-<offset>` and
//! `G-<bandwidth>`, e.g. `P2-1` or `G-0.5`. The Gaussian kernel is integrally
//! strictly positive definite; the linear and polynomial kernels are not,
//! which is why they can under-identify a model with more parameters than
//! their feature dimension.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum KernelSpec {
    /// k(z, z') = ⟨z, z'⟩
    Linear,
    /// k(z, z') = (⟨z, z'⟩ + offset)^degree
    Polynomial { degree: u32, offset: f64 },
    /// k(z, z') = exp(−‖z − z'‖² / (2·bandwidth²))
    Gaussian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        if degree < 1 {
            return Err(Error::Config("polynomial degree must be >= 1".into()));
        }
        if !(offset >= 0.0 && offset.is_finite()) {
            return Err(Error::Config(format!("polynomial offset must be >= 0, got {offset}")));
        }
        Ok(KernelSpec::Polynomial { degree, offset })
    }

    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("gaussian bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(KernelSpec::Gaussian { bandwidth })
    }

    pub fn label(&self) -> String {
        self.to_string()
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, KernelSpec::Gaussian { .. })
    }

    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "L"),
            KernelSpec::Polynomial { degree, offset } => write!(f, "P{degree}-{offset}"),
            KernelSpec::Gaussian { bandwidth } => write!(f, "G-{bandwidth}"),
        }
    }
}

impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid kernel label {s:?}"));
        let s = s.trim();
        if s == "L" {
            return Ok(KernelSpec::Linear);
        }
        if let Some(rest) = s.strip_prefix("G-") {
            let p: f64 = rest.parse().map_err(|_| bad())?;
            return KernelSpec::gaussian(p);
        }
        if let Some(rest) = s.strip_prefix('P') {
            let (deg, off) = rest.split_once('-').ok_or_else(bad)?;
            if deg.is_empty() || !deg.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let degree: u32 = deg.parse().map_err(|_| bad())?;
            let offset: f64 = off.parse().map_err(|_| bad())?;
            return KernelSpec::polynomial(degree, offset);
        }
        Err(bad())
    }
}

impl TryFrom<String> for KernelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<KernelSpec> for String {
    fn from(k: KernelSpec) -> String {
        k.to_string()
    }
}

/// The candidate grid used throughout the experiments, in tie-breaking order.
pub fn default_grid() -> Vec<KernelSpec> {
    ["L", "P2-1", "P2-2", "P4-1", "P4-2", "G-2", "G-1", "G-0.5", "G-0.2", "G-0.1"]
        .iter()
        .map(|l| l.parse().expect("static grid label"))
        .collect()
}

pub fn eval_kernel(spec: &KernelSpec, z: &[f64], z2: &[f64]) -> Result<f64> {
    if z.len() != z2.len() || z.is_empty() {
        return Err(Error::Dimension(format!(
            "kernel inputs have dimensions {} and {}",
            z.len(),
            z2.len()
        )));
    }
    Ok(spec.eval_unchecked(z, z2))
}

/// Kernel matrix `[K]ᵢⱼ = k(zᵢ, zⱼ)` on one sample.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub matrix: SymMatrix,
    pub spec: KernelSpec,
    pub sample: String,
}

impl GramMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// Gram matrix restricted to a subsample.
    pub fn select(&self, idx: &[usize]) -> GramMatrix {
        GramMatrix { matrix: self.matrix.select(idx), spec: self.spec, sample: self.sample.clone() }
    }

    /// The Gram matrix of the kernel `factor·k`.
    pub fn scaled(&self, factor: f64) -> GramMatrix {
        GramMatrix { matrix: self.matrix.scaled(factor), spec: self.spec, sample: self.sample.clone() }
    }
}

fn rows(z: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect()
}

/// Gram matrix of `spec` on the rows of `z` (n × d).
pub fn gram(spec: &KernelSpec, z: &DMatrix<f64>) -> Result<GramMatrix> {
    gram_labeled(spec, z, "")
}

pub fn gram_labeled(spec: &KernelSpec, z: &DMatrix<f64>, sample: &str) -> Result<GramMatrix> {
    let n = z.nrows();
    if n < 2 || z.ncols() == 0 {
        return Err(Error::Dimension(format!("gram needs n >= 2 and d >= 1, got {}x{}", n, z.ncols())));
    }
    let pts = rows(z);
    let matrix = SymMatrix::from_upper_fn(n, |i, j| spec.eval_unchecked(&pts[i], &pts[j]));
    Ok(GramMatrix { matrix, spec: *spec, sample: sample.to_string() })
}

/// Median of the pairwise Euclidean distances ‖zᵢ − zⱼ‖, i < j.
pub fn median_heuristic_bandwidth(z: &DMatrix<f64>) -> Result<f64> {
    let n = z.nrows();
    if n < 2 {
        return Err(Error::DegenerateSample("median heuristic needs n >= 2".into()));
    }
    let pts = rows(z);
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    dists.sort_unstable_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 { dists[m / 2] } else { 0.5 * (dists[m / 2 - 1] + dists[m / 2]) };
    if !(med > 0.0) {
        if dists[m - 1] > 0.0 {
            // more than half the pairs coincide; fall back to the smallest positive distance
            let first = dists.iter().copied().find(|d| *d > 0.0).unwrap_or(0.0);
            return Ok(first);
        }
        return Err(Error::DegenerateSample("all sample points are identical".into()));
    }
    Ok(med)
}

/// Silverman's rule of thumb. For d = 1 this is 1.06·σ̂·n^(−1/5); for d > 1
/// the multivariate rule (4/(d+2))^(1/(d+4))·n^(−1/(d+4))·σ̄ with σ̄ the mean of
/// per-coordinate standard deviations.
pub fn silverman_bandwidth(z: &DMatrix<f64>) -> Result<f64> {
    let (n, d) = z.shape();
    if n < 2 || d == 0 {
        return Err(Error::DegenerateSample("silverman rule needs n >= 2".into()));
    }
    let stds: Vec<f64> = (0..d)
        .map(|j| sample_std(z.column(j).as_slice()))
        .collect();
    let sigma = mean(&stds);
    if !(sigma > 0.0) {
        return Err(Error::DegenerateSample("sample has zero variance".into()));
    }
    let n = n as f64;
    if d == 1 {
        Ok(1.06 * sigma * n.powf(-0.2))
    } else {
        let d = d as f64;
        Ok((4.0 / (d + 2.0)).powf(1.0 / (d + 4.0)) * n.powf(-1.0 / (d + 4.0)) * sigma)
    }
}
