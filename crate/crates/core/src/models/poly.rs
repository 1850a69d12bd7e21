use nalgebra::DMatrix;

use super::params::{ParamBlock, ParamLayout, ParamVector};

/// f(x) = Σᵢ cᵢ xⁱ, i = 0..=degree.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyModel {
    pub coefficients: Vec<f64>,
}

impl PolyModel {
    pub fn zeros(degree: usize) -> Self {
        Self { coefficients: vec![0.0; degree + 1] }
    }

    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        assert!(!coefficients.is_empty(), "polynomial needs at least one coefficient");
        Self { coefficients }
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn layout(&self) -> ParamLayout {
        let c = self.n_params();
        ParamLayout {
            blocks: vec![ParamBlock { name: "c".into(), offset: 0, rows: 1, cols: c }],
            output: 0..c,
        }
    }

    pub fn params(&self) -> ParamVector {
        ParamVector { values: self.coefficients.clone(), layout: self.layout() }
    }

    pub fn predict(&self, x: f64) -> f64 {
        // Horner
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    /// (1, x, …, x^m)
    pub fn basis(&self, x: f64) -> Vec<f64> {
        basis_row(x, self.degree())
    }
}

pub(crate) fn basis_row(x: f64, degree: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(degree + 1);
    let mut p = 1.0;
    for _ in 0..=degree {
        row.push(p);
        p *= x;
    }
    row
}

/// Design matrix with rows (1, xᵢ, …, xᵢ^m).
pub fn basis_matrix(degree: usize, xs: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(xs.len(), degree + 1);
    for (i, &x) in xs.iter().enumerate() {
        for (j, v) in basis_row(x, degree).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}
