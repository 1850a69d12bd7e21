//! Experiment configuration, read from a flat TOML file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::{Scenario, ScenarioSpec, TrueFunction};
use crate::error::{Error, Result};
use crate::kernels::{default_grid, KernelSpec};
use crate::models::{GradMask, ModelSpec};

fn default_scenarios() -> Vec<Scenario> {
    vec![Scenario::LS]
}

fn default_true_functions() -> Vec<TrueFunction> {
    TrueFunction::ALL.to_vec()
}

fn default_model() -> ModelSpec {
    ModelSpec::Poly { degree: 4 }
}

fn default_n() -> Vec<usize> {
    vec![500]
}

fn default_replications() -> usize {
    10
}

fn default_seed() -> u64 {
    527
}

fn default_alpha() -> f64 {
    0.05
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_true_functions")]
    pub true_functions: Vec<TrueFunction>,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default = "default_grid")]
    pub candidates: Vec<KernelSpec>,
    #[serde(default = "default_n")]
    pub n: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Instrument dimension for LW; LS and NS always use 1.
    #[serde(default)]
    pub d: Option<usize>,
    /// ITC gradient mask; networks default to the output layer.
    #[serde(default)]
    pub grad_mask: Option<GradMask>,
    #[serde(default)]
    pub refit_per_half: bool,
    /// Cap on Adam iterations for network fits.
    #[serde(default)]
    pub max_iterations: Option<usize>,
    /// Early-stopping patience for network fits.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: default_scenarios(),
            true_functions: default_true_functions(),
            model: default_model(),
            candidates: default_grid(),
            n: default_n(),
            replications: default_replications(),
            seed: default_seed(),
            alpha: default_alpha(),
            output_dir: default_output_dir(),
            d: None,
            grad_mask: None,
            refit_per_half: false,
            max_iterations: None,
            patience: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses without validating; call [`validate`](Self::validate) after overrides.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let nonempty = |len: usize, what: &str| {
            if len == 0 {
                Err(Error::Config(format!("{what} must not be empty")))
            } else {
                Ok(())
            }
        };
        nonempty(self.scenarios.len(), "scenarios")?;
        nonempty(self.true_functions.len(), "true_functions")?;
        nonempty(self.candidates.len(), "candidates")?;
        nonempty(self.n.len(), "n")?;
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if let Some(&n) = self.n.iter().find(|n| **n < 4) {
            return Err(Error::Config(format!("n must be at least 4, got {n}")));
        }
        let mut seen = HashSet::new();
        for k in &self.candidates {
            if !seen.insert(k.label()) {
                return Err(Error::Config(format!("duplicate candidate {k}")));
            }
        }
        if self.max_iterations == Some(0) || self.patience == Some(0) {
            return Err(Error::Config("max_iterations and patience must be at least 1".into()));
        }
        for s in &self.scenarios {
            self.scenario_spec(*s, self.true_functions[0], self.n[0], self.seed).validate()?;
        }
        Ok(())
    }

    /// Data-generating spec for one sweep cell; `d` applies to LW only.
    pub fn scenario_spec(&self, scenario: Scenario, f: TrueFunction, n: usize, seed: u64) -> ScenarioSpec {
        let spec = ScenarioSpec::new(scenario, f, n, seed);
        match (scenario, self.d) {
            (Scenario::LW, Some(d)) => spec.with_dim(d),
            _ => spec,
        }
    }

    /// Hex FNV-1a digest of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in text.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
