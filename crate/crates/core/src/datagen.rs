//! Simulated IV data.
//!
//! Y = f*(X) + e + δ and X = d⁻¹ Σᵢ g(Zᵢ) + e + γ with Z ~ Uniform[−3, 3]^d,
//! e ~ N(0, 1) the confounder shared by both equations and δ, γ ~ N(0, 0.1²).
//! g is the identity for the LS and LW scenarios and sin for NS.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean, sample_std, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TrueFunction {
    Abs,
    Linear,
    Quad,
    Sin,
}

impl TrueFunction {
    pub const ALL: [TrueFunction; 4] =
        [TrueFunction::Abs, TrueFunction::Linear, TrueFunction::Quad, TrueFunction::Sin];

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            TrueFunction::Abs => x.abs(),
            TrueFunction::Linear => x,
            TrueFunction::Quad => x * x + x,
            TrueFunction::Sin => x.sin(),
        }
    }
}

/// f*(x) for a function given by name.
pub fn true_function_value(name: &str, x: f64) -> Result<f64> {
    Ok(name.parse::<TrueFunction>()?.eval(x))
}

impl fmt::Display for TrueFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrueFunction::Abs => "abs",
            TrueFunction::Linear => "linear",
            TrueFunction::Quad => "quad",
            TrueFunction::Sin => "sin",
        })
    }
}

impl FromStr for TrueFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "abs" => Ok(TrueFunction::Abs),
            "linear" => Ok(TrueFunction::Linear),
            "quad" | "quadratic" => Ok(TrueFunction::Quad),
            "sin" => Ok(TrueFunction::Sin),
            other => Err(Error::Config(format!("unknown true function {other:?}"))),
        }
    }
}

impl TryFrom<String> for TrueFunction {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TrueFunction> for String {
    fn from(f: TrueFunction) -> String {
        f.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Scenario {
    /// linearly strong instrument: d = 1, g(Z) = Z
    LS,
    /// linearly weak instruments: d averaged coordinates, g(Z) = Z
    LW,
    /// nonlinearly strong instrument: d = 1, g(Z) = sin(Z)
    NS,
}

impl Scenario {
    pub fn default_dim(&self) -> usize {
        match self {
            Scenario::LW => 6,
            _ => 1,
        }
    }

    fn g(&self, z: f64) -> f64 {
        match self {
            Scenario::NS => z.sin(),
            _ => z,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::LS => "LS",
            Scenario::LW => "LW",
            Scenario::NS => "NS",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "LS" => Ok(Scenario::LS),
            "LW" => Ok(Scenario::LW),
            "NS" => Ok(Scenario::NS),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

impl TryFrom<String> for Scenario {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Scenario> for String {
    fn from(s: Scenario) -> String {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub true_function: TrueFunction,
    pub scenario: Scenario,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, true_function: TrueFunction, n: usize, seed: u64) -> Self {
        Self { true_function, scenario, d: scenario.default_dim(), n, seed }
    }

    pub fn with_dim(mut self, d: usize) -> Self {
        self.d = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        if self.d == 0 {
            return Err(Error::Config("d must be >= 1".into()));
        }
        if matches!(self.scenario, Scenario::LS | Scenario::NS) && self.d != 1 {
            return Err(Error::Config(format!("scenario {} requires d = 1", self.scenario)));
        }
        Ok(())
    }
}

/// Standard deviations of the three noise sources. Zeroing them gives the
/// noiseless process used by tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub confounder: f64,
    pub x_noise: f64,
    pub y_noise: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self { confounder: 1.0, x_noise: 0.1, y_noise: 0.1 }
    }
}

impl NoiseLevels {
    pub fn none() -> Self {
        Self { confounder: 0.0, x_noise: 0.0, y_noise: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// Aligned samples (xᵢ, yᵢ, zᵢ). `y` is standardized with `y_mean`/`y_std`,
/// which always come from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: DMatrix<f64>,
    pub y_mean: f64,
    pub y_std: f64,
    pub split: Split,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: DMatrix<f64>, y_mean: f64, y_std: f64, split: Split) -> Result<Self> {
        if x.len() != y.len() || x.len() != z.nrows() {
            return Err(Error::Dimension(format!(
                "dataset columns disagree: x {}, y {}, z {}",
                x.len(),
                y.len(),
                z.nrows()
            )));
        }
        if !(y_std > 0.0 && y_std.is_finite() && y_mean.is_finite()) {
            return Err(Error::Config(format!("invalid standardization constants ({y_mean}, {y_std})")));
        }
        Ok(Self { x, y, z, y_mean, y_std, split })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    /// Y on its original scale.
    pub fn raw_y(&self) -> Vec<f64> {
        self.y.iter().map(|y| y * self.y_std + self.y_mean).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let z = DMatrix::from_fn(idx.len(), self.dim(), |r, c| self.z[(idx[r], c)]);
        Dataset {
            x: idx.iter().map(|&i| self.x[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z,
            y_mean: self.y_mean,
            y_std: self.y_std,
            split: self.split,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

pub fn generate(spec: &ScenarioSpec) -> Result<DatasetSplits> {
    generate_with_noise(spec, NoiseLevels::default())
}

struct RawSplit {
    x: Vec<f64>,
    y: Vec<f64>,
    z: DMatrix<f64>,
}

/// Draws train, valid and test splits of size n each. Within a sample the
/// draw order is (Z₁..Z_d, e, γ, δ).
pub fn generate_with_noise(spec: &ScenarioSpec, noise: NoiseLevels) -> Result<DatasetSplits> {
    spec.validate()?;
    let mut rng = RngStream::substream(spec.seed, "data");
    let draw = |rng: &mut RngStream| {
        let (n, d) = (spec.n, spec.d);
        let mut z = DMatrix::zeros(n, d);
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let mut gsum = 0.0;
            for j in 0..d {
                let zij = rng.uniform(-3.0, 3.0);
                z[(i, j)] = zij;
                gsum += spec.scenario.g(zij);
            }
            let e = rng.normal() * noise.confounder;
            let gamma = rng.normal() * noise.x_noise;
            let delta = rng.normal() * noise.y_noise;
            let xi = gsum / d as f64 + e + gamma;
            x.push(xi);
            y.push(spec.true_function.eval(xi) + e + delta);
        }
        RawSplit { x, y, z }
    };
    let train = draw(&mut rng);
    let valid = draw(&mut rng);
    let test = draw(&mut rng);

    let y_mean = mean(&train.y);
    let mut y_std = sample_std(&train.y);
    if !(y_std > 0.0) {
        y_std = 1.0;
    }
    let finish = |raw: RawSplit, split: Split| {
        let y = raw.y.iter().map(|v| (v - y_mean) / y_std).collect();
        Dataset::new(raw.x, y, raw.z, y_mean, y_std, split)
    };
    Ok(DatasetSplits {
        train: finish(train, Split::Train)?,
        valid: finish(valid, Split::Valid)?,
        test: finish(test, Split::Test)?,
    })
}
