//! Parametric residual models φ_θ(x, y) = y − f(x; θ).

mod mlp;
mod params;
mod poly;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use mlp::MlpModel;
pub use params::{ParamBlock, ParamLayout, ParamVector};
pub use poly::{basis_matrix, PolyModel};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Which parameters a gradient is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradMask {
    Full,
    /// Only (W₀, b₀): the hidden stack Φ is treated as a fixed basis.
    OutputLayer,
}

/// Model family as written in configuration: `poly:<m>` or `mlp:<w1>[,<w2>...]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ModelSpec {
    Poly { degree: usize },
    Mlp { hidden: Vec<usize> },
}

impl ModelSpec {
    pub fn is_linear(&self) -> bool {
        matches!(self, ModelSpec::Poly { .. })
    }

    /// A fresh model; network weights are drawn from `init_seed`.
    pub fn instantiate(&self, init_seed: u64) -> Result<Model> {
        match self {
            ModelSpec::Poly { degree } => Ok(Model::Poly(PolyModel::zeros(*degree))),
            ModelSpec::Mlp { hidden } => {
                let mut rng = RngStream::new(init_seed);
                Ok(Model::Mlp(MlpModel::init(hidden, &mut rng)?))
            }
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Model> {
        match self {
            ModelSpec::Poly { degree } => {
                if values.len() != degree + 1 {
                    return Err(Error::Dimension(format!(
                        "poly:{degree} needs {} coefficients, got {}",
                        degree + 1,
                        values.len()
                    )));
                }
                Ok(Model::Poly(PolyModel::from_coefficients(values)))
            }
            ModelSpec::Mlp { hidden } => Ok(Model::Mlp(MlpModel::from_params(hidden, values)?)),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Poly { degree } => write!(f, "poly:{degree}"),
            ModelSpec::Mlp { hidden } => {
                let w: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                write!(f, "mlp:{}", w.join(","))
            }
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("invalid model spec {s:?}"));
        let (family, arg) = s.trim().split_once(':').ok_or_else(bad)?;
        let parse_usize = |t: &str| -> Result<usize> {
            let t = t.trim();
            if t.is_empty() || !t.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            t.parse().map_err(|_| bad())
        };
        match family.trim() {
            "poly" => {
                let degree = parse_usize(arg)?;
                if degree > 32 {
                    return Err(Error::Config(format!("polynomial degree {degree} is too large")));
                }
                Ok(ModelSpec::Poly { degree })
            }
            "mlp" => {
                let hidden = arg.split(',').map(parse_usize).collect::<Result<Vec<_>>>()?;
                if hidden.is_empty() || hidden.contains(&0) || hidden.len() > 8 || hidden.iter().any(|h| *h > 4096) {
                    return Err(bad());
                }
                Ok(ModelSpec::Mlp { hidden })
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ModelSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ModelSpec> for String {
    fn from(m: ModelSpec) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Poly(PolyModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn spec(&self) -> ModelSpec {
        match self {
            Model::Poly(p) => ModelSpec::Poly { degree: p.degree() },
            Model::Mlp(m) => ModelSpec::Mlp { hidden: m.hidden().to_vec() },
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Poly(p) => p.n_params(),
            Model::Mlp(m) => m.n_params(),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Model::Poly(p) => &p.coefficients,
            Model::Mlp(m) => &m.params().values,
        }
    }

    pub fn set_values(&mut self, values: &[f64]) {
        match self {
            Model::Poly(p) => {
                assert_eq!(values.len(), p.coefficients.len(), "parameter length mismatch");
                p.coefficients.copy_from_slice(values);
            }
            Model::Mlp(m) => m.set_values(values),
        }
    }

    pub fn params(&self) -> ParamVector {
        match self {
            Model::Poly(p) => p.params(),
            Model::Mlp(m) => m.params().clone(),
        }
    }

    pub fn predict(&self, x: f64) -> f64 {
        match self {
            Model::Poly(p) => p.predict(x),
            Model::Mlp(m) => m.predict(x),
        }
    }

    /// y − f(x; θ)
    pub fn residual(&self, x: f64, y: f64) -> f64 {
        y - self.predict(x)
    }

    /// Number of entries in a gradient under `mask`.
    pub fn grad_len(&self, mask: GradMask) -> usize {
        match (self, mask) {
            (Model::Mlp(m), GradMask::OutputLayer) => m.params().layout.output.len(),
            _ => self.n_params(),
        }
    }

    /// ∇θ φ_θ(x, y) = −∇θ f(x; θ). The residual gradient does not depend on y.
    /// For polynomials the output layer is the whole coefficient vector.
    pub fn residual_grad(&self, x: f64, mask: GradMask) -> Vec<f64> {
        let mut g = match (self, mask) {
            (Model::Poly(p), _) => p.basis(x),
            (Model::Mlp(m), GradMask::Full) => m.grad_full(x),
            (Model::Mlp(m), GradMask::OutputLayer) => m.grad_output(x),
        };
        for v in &mut g {
            *v = -*v;
        }
        g
    }

    pub fn residuals(&self, xs: &[f64], ys: &[f64]) -> DVector<f64> {
        DVector::from_iterator(xs.len(), xs.iter().zip(ys).map(|(x, y)| self.residual(*x, *y)))
    }

    /// n × c matrix whose rows are ∇θ φ_θ(xᵢ).
    pub fn residual_jacobian(&self, xs: &[f64], mask: GradMask) -> DMatrix<f64> {
        let c = self.grad_len(mask);
        let mut j = DMatrix::zeros(xs.len(), c);
        for (i, &x) in xs.iter().enumerate() {
            for (k, v) in self.residual_grad(x, mask).into_iter().enumerate() {
                j[(i, k)] = v;
            }
        }
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(c: &[f64]) -> Model {
        Model::Poly(PolyModel::from_coefficients(c.to_vec()))
    }

    #[test]
    fn residual_examples() {
        assert_eq!(poly(&[0.0, 1.0]).residual(2.0, 2.0), 0.0);
        assert_eq!(poly(&[1.0, 0.0, 1.0]).residual(2.0, 0.0), -5.0);
        let zero = Model::Mlp(MlpModel::zeros(&[10]).unwrap());
        assert_eq!(zero.residual(0.7, 3.0), 3.0);
    }

    #[test]
    fn poly_gradient_is_negative_basis() {
        let m = PolyModel::zeros(2);
        assert_eq!(Model::Poly(m).residual_grad(3.0, GradMask::Full), vec![-1.0, -3.0, -9.0]);
    }

    #[test]
    fn basis_matrix_examples() {
        assert_eq!(basis_matrix(1, &[0.0, 1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 1.0]));
        assert_eq!(basis_matrix(3, &[2.0]), DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 4.0, 8.0]));
        let xs = [0.3, -1.2, 2.5];
        let m = Model::Poly(PolyModel::zeros(3));
        assert_eq!(basis_matrix(3, &xs), -m.residual_jacobian(&xs, GradMask::Full));
    }

    #[test]
    fn output_mask_shape() {
        let mut rng = RngStream::new(1);
        let m = Model::Mlp(MlpModel::init(&[10], &mut rng).unwrap());
        let g = m.residual_grad(0.4, GradMask::OutputLayer);
        assert_eq!(g.len(), 11);
        assert_eq!(g[10], -1.0);
        let m2 = Model::Mlp(MlpModel::init(&[5, 5], &mut rng).unwrap());
        assert_eq!(m2.grad_len(GradMask::OutputLayer), 6);
        assert_eq!(m2.n_params(), 10 + 30 + 6);
        // output-layer gradient is the tail of the full gradient
        let full = m2.residual_grad(-0.8, GradMask::Full);
        let out = m2.residual_grad(-0.8, GradMask::OutputLayer);
        assert_eq!(&full[full.len() - 6..], &out[..]);
    }

    #[test]
    fn glorot_init_ranges() {
        let mut rng = RngStream::new(9);
        let m = MlpModel::init(&[5, 5], &mut rng).unwrap();
        for block in &m.params().layout.blocks {
            let vals = &m.params().values[block.range()];
            if block.name.starts_with('b') {
                assert!(vals.iter().all(|v| *v == 0.0));
            } else {
                let a = (6.0 / (block.rows + block.cols) as f64).sqrt();
                assert!(vals.iter().all(|v| v.abs() <= a));
            }
        }
    }

    #[test]
    fn spec_grammar() {
        for s in ["poly:2", "poly:4", "mlp:10", "mlp:5,5"] {
            assert_eq!(s.parse::<ModelSpec>().unwrap().to_string(), s);
        }
        for bad in ["poly", "poly:", "poly:-1", "mlp:", "mlp:0", "mlp:5,,5", "nn:3", "poly:1e3"] {
            assert!(bad.parse::<ModelSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn flatten_round_trip() {
        let mut rng = RngStream::new(2);
        let m = MlpModel::init(&[5, 5], &mut rng).unwrap();
        let values = m.params().values.clone();
        let back = MlpModel::from_params(&[5, 5], values.clone()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.params().values, values);
        let spec: ModelSpec = "poly:4".parse().unwrap();
        let p = spec.with_values(vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(p.values(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(spec.with_values(vec![1.0]).is_err());
    }
}
