//! Instrument-space selection: filter candidates by the identification test,
//! take the least KEIC among the identifiable ones, and fall back to the
//! KEIC/ITC ratio when none pass. Gaussian-bandwidth baselines live here too.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, TrueFunction};
use crate::error::{Error, Result};
use crate::itc::{itc, itc_from_halves, split_halves, ItcReport};
use crate::keic::{keic, KeicReport};
use crate::kernels::{gram, median_heuristic_bandwidth, silverman_bandwidth, GramMatrix, KernelSpec};
use crate::mmr::{fit, AdamOptions, FitContext, FitResult, MmrProblem};
use crate::models::{GradMask, Model, ModelSpec};
use crate::numerics::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineRule {
    Median,
    Silverman,
}

impl BaselineRule {
    pub fn bandwidth(&self, z: &nalgebra::DMatrix<f64>) -> Result<f64> {
        match self {
            BaselineRule::Median => median_heuristic_bandwidth(z),
            BaselineRule::Silverman => silverman_bandwidth(z),
        }
    }
}

impl fmt::Display for BaselineRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineRule::Median => "median",
            BaselineRule::Silverman => "silverman",
        })
    }
}

/// How the chosen space was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPath {
    /// At least one candidate passed the test; least KEIC among those.
    TwoStep,
    /// No candidate passed; least KEIC/ITC among non-degenerate candidates.
    Ratio,
    /// Every candidate had a degenerate Λ̂; least KEIC overall.
    AllDegenerate,
    Baseline(BaselineRule),
}

impl fmt::Display for SelectionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionPath::TwoStep => f.write_str("two_step"),
            SelectionPath::Ratio => f.write_str("ratio"),
            SelectionPath::AllDegenerate => f.write_str("all_degenerate"),
            SelectionPath::Baseline(rule) => write!(f, "baseline_{rule}"),
        }
    }
}

/// Seeds for the random pieces of one selection run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionSeeds {
    pub split: u64,
    pub folds: u64,
    pub init: u64,
}

impl SelectionSeeds {
    pub fn derive(seed: u64) -> Self {
        Self {
            split: RngStream::derive_seed(seed, "itc-split"),
            folds: RngStream::derive_seed(seed, "keic-folds"),
            init: RngStream::derive_seed(seed, "mlp-init"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionOptions {
    pub alpha: f64,
    /// Gradient mask for the ITC. Networks default to the output layer.
    pub mask: GradMask,
    pub seeds: SelectionSeeds,
    pub adam: AdamOptions,
    /// Refit θ̂ separately on each ITC half instead of reusing the full-data fit.
    pub refit_per_half: bool,
}

impl SelectionOptions {
    pub fn new(seed: u64, model: &ModelSpec) -> Self {
        Self {
            alpha: 0.05,
            mask: if model.is_linear() { GradMask::Full } else { GradMask::OutputLayer },
            seeds: SelectionSeeds::derive(seed),
            adam: AdamOptions::default(),
            refit_per_half: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub kernel: KernelSpec,
    /// Absent for baselines, which are not tested.
    pub itc: Option<ItcReport>,
    pub keic: Option<KeicReport>,
    pub ratio: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub chosen: KernelSpec,
    pub path: SelectionPath,
    pub candidates: Vec<CandidateRow>,
    pub model: ModelSpec,
    /// Parameters fitted on the full training split under the chosen space.
    pub params: Vec<f64>,
    pub train_risk: f64,
    pub alpha: f64,
    pub seeds: SelectionSeeds,
}

impl SelectionResult {
    pub fn fitted_model(&self) -> Result<Model> {
        self.model.with_values(self.params.clone())
    }

    /// Structural checks for results read back from disk.
    pub fn validate(&self) -> Result<()> {
        let chosen: Vec<&CandidateRow> = self.candidates.iter().filter(|r| r.chosen).collect();
        if chosen.len() != 1 || chosen[0].kernel != self.chosen {
            return Err(Error::Config(format!("report must mark exactly one chosen row labelled {}", self.chosen)));
        }
        self.fitted_model()?;
        Ok(())
    }

    pub fn chosen_row(&self) -> &CandidateRow {
        self.candidates.iter().find(|r| r.chosen).expect("chosen candidate is in the table")
    }

    /// Fixed-width text table of the candidates.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>14} {:>6} {:>14} {:>14}  chosen\n",
            "kernel", "itc", "ident", "keic", "keic/itc"
        );
        let num = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
        for row in &self.candidates {
            let ident = match &row.itc {
                Some(r) if r.degenerate_flag => "degen",
                Some(r) if r.identifiable => "yes",
                Some(_) => "no",
                None => "-",
            };
            out.push_str(&format!(
                "{:<8} {:>14} {:>6} {:>14} {:>14}  {}\n",
                row.kernel.label(),
                num(row.itc.as_ref().map(|r| r.itc_value)),
                ident,
                num(row.keic.as_ref().map(|r| r.keic_value)),
                num(row.ratio),
                if row.chosen { "*" } else { "" }
            ));
        }
        out.push_str(&format!("chosen: {} ({})\n", self.chosen, self.path));
        out
    }
}

/// The per-candidate numbers the decision rule looks at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Criteria {
    pub itc: f64,
    pub identifiable: bool,
    pub degenerate: bool,
    pub keic: f64,
}

impl Criteria {
    /// KEIC/ITC, undefined for degenerate or zero ITC.
    pub fn ratio(&self) -> Option<f64> {
        (!self.degenerate && self.itc > 0.0).then(|| self.keic / self.itc)
    }
}

fn argmin_by<I: Iterator<Item = (usize, f64)>>(it: I) -> Option<usize> {
    // strict comparison keeps the earliest index on ties
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in it {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Index of the chosen candidate and the path that chose it.
pub fn choose(criteria: &[Criteria]) -> Result<(usize, SelectionPath)> {
    if criteria.is_empty() {
        return Err(Error::Config("no candidate instrument spaces".into()));
    }
    let enumerated = || criteria.iter().enumerate();
    if let Some(i) = argmin_by(enumerated().filter(|(_, c)| c.identifiable).map(|(i, c)| (i, c.keic))) {
        return Ok((i, SelectionPath::TwoStep));
    }
    if let Some(i) = argmin_by(enumerated().filter_map(|(i, c)| c.ratio().map(|r| (i, r)))) {
        return Ok((i, SelectionPath::Ratio));
    }
    let i = argmin_by(enumerated().map(|(i, c)| (i, c.keic))).expect("non-empty");
    Ok((i, SelectionPath::AllDegenerate))
}

struct Evaluated {
    fit: FitResult,
    itc: ItcReport,
    keic: KeicReport,
}

fn fit_context<'a>(valid: Option<&'a (Dataset, GramMatrix)>, spec: &ModelSpec, opts: &SelectionOptions) -> Result<FitContext<'a>> {
    let mut ctx = FitContext::new(opts.seeds.init);
    ctx.adam = opts.adam;
    if let (Some((vd, vg)), false) = (valid, spec.is_linear()) {
        ctx = ctx.with_valid(MmrProblem::new(vd, vg)?);
    }
    Ok(ctx)
}

fn evaluate_candidate(
    train: &Dataset,
    valid: Option<&Dataset>,
    kernel: &KernelSpec,
    spec: &ModelSpec,
    opts: &SelectionOptions,
) -> Result<Evaluated> {
    let g = gram(kernel, &train.z)?;
    let valid = match valid {
        Some(v) => Some((v.clone(), gram(kernel, &v.z)?)),
        None => None,
    };
    let ctx = fit_context(valid.as_ref(), spec, opts)?;
    let full = fit(&MmrProblem::new(train, &g)?, spec, &ctx)?;
    let itc_report = if opts.refit_per_half {
        let (a, b) = split_halves(train.len(), opts.seeds.split);
        let mut parts = Vec::with_capacity(2);
        for idx in [&a, &b] {
            let (d, k) = (train.subset(idx), g.select(idx));
            let m = fit(&MmrProblem::new(&d, &k)?, spec, &ctx)?.model;
            parts.push((m.residual_jacobian(&d.x, opts.mask), k));
        }
        itc_from_halves(&parts[0].0, &parts[0].1.matrix, &parts[1].0, &parts[1].1.matrix, opts.alpha)?
    } else {
        itc(train, &g, &full.model, opts.mask, opts.alpha, opts.seeds.split)?
    };
    let keic_report = keic(train, &g, spec, &ctx, opts.seeds.folds)?;
    Ok(Evaluated { fit: full, itc: itc_report, keic: keic_report })
}

/// Runs the test and the information criterion on every candidate and picks
/// one. `valid` is only used for early stopping of network fits.
pub fn lisc_select(
    train: &Dataset,
    valid: Option<&Dataset>,
    candidates: &[KernelSpec],
    spec: &ModelSpec,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate instrument spaces".into()));
    }
    let evaluated: Vec<Evaluated> = candidates
        .par_iter()
        .map(|k| evaluate_candidate(train, valid, k, spec, opts))
        .collect::<Result<_>>()?;
    let criteria: Vec<Criteria> = evaluated
        .iter()
        .map(|e| Criteria {
            itc: e.itc.itc_value,
            identifiable: e.itc.identifiable,
            degenerate: e.itc.degenerate_flag,
            keic: e.keic.keic_value,
        })
        .collect();
    let (idx, path) = choose(&criteria)?;
    let rows = candidates
        .iter()
        .zip(&evaluated)
        .zip(&criteria)
        .enumerate()
        .map(|(i, ((k, e), c))| CandidateRow {
            kernel: *k,
            itc: Some(e.itc.clone()),
            keic: Some(e.keic.clone()),
            ratio: c.ratio(),
            chosen: i == idx,
        })
        .collect();
    let best = &evaluated[idx].fit;
    Ok(SelectionResult {
        chosen: candidates[idx],
        path,
        candidates: rows,
        model: spec.clone(),
        params: best.model.values().to_vec(),
        train_risk: best.risk,
        alpha: opts.alpha,
        seeds: opts.seeds,
    })
}

/// Fits under a Gaussian kernel whose bandwidth comes from `rule` applied to Z.
pub fn baseline_select(
    train: &Dataset,
    valid: Option<&Dataset>,
    rule: BaselineRule,
    spec: &ModelSpec,
    opts: &SelectionOptions,
) -> Result<SelectionResult> {
    let kernel = KernelSpec::gaussian(rule.bandwidth(&train.z)?)?;
    let g = gram(&kernel, &train.z)?;
    let valid = match valid {
        Some(v) => Some((v.clone(), gram(&kernel, &v.z)?)),
        None => None,
    };
    let ctx = fit_context(valid.as_ref(), spec, opts)?;
    let fitted = fit(&MmrProblem::new(train, &g)?, spec, &ctx)?;
    Ok(SelectionResult {
        chosen: kernel,
        path: SelectionPath::Baseline(rule),
        candidates: vec![CandidateRow { kernel, itc: None, keic: None, ratio: None, chosen: true }],
        model: spec.clone(),
        params: fitted.model.values().to_vec(),
        train_risk: fitted.risk,
        alpha: opts.alpha,
        seeds: opts.seeds,
    })
}

/// Mean squared error of the de-standardized prediction against f* on `test`.
pub fn evaluate_mse(model: &Model, test: &Dataset, truth: TrueFunction) -> f64 {
    let total: f64 = test
        .x
        .iter()
        .map(|&x| {
            let pred = model.predict(x) * test.y_std + test.y_mean;
            (pred - truth.eval(x)).powi(2)
        })
        .sum();
    total / test.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, Scenario, ScenarioSpec, Split};
    use crate::kernels::default_grid;
    use crate::models::PolyModel;
    use crate::numerics::chi2_quantile_1df;
    use nalgebra::DMatrix;

    fn crit(itc: f64, keic: f64) -> Criteria {
        let q = chi2_quantile_1df(0.95).unwrap();
        Criteria { itc, identifiable: itc > q, degenerate: false, keic }
    }

    #[test]
    fn two_step_example() {
        let c = [crit(0.1, 1.0), crit(5.0, 10.0), crit(7.2, 8.0)];
        assert_eq!(choose(&c).unwrap(), (2, SelectionPath::TwoStep));
    }

    #[test]
    fn ratio_example() {
        let c = [crit(1.0, 4.0), crit(1.0, 2.0), crit(1.0, 9.0)];
        assert_eq!(choose(&c).unwrap(), (1, SelectionPath::Ratio));
    }

    #[test]
    fn degenerate_candidates_are_skipped_by_ratio() {
        let mut c = [crit(0.0, 0.5), crit(2.0, 8.0)];
        c[0].degenerate = true;
        assert_eq!(choose(&c).unwrap(), (1, SelectionPath::Ratio));
        c[1].degenerate = true;
        assert_eq!(choose(&c).unwrap(), (0, SelectionPath::AllDegenerate));
    }

    #[test]
    fn ties_go_to_grid_order() {
        let c = [crit(1.0, 3.0), crit(9.0, 5.0), crit(8.0, 5.0)];
        assert_eq!(choose(&c).unwrap(), (1, SelectionPath::TwoStep));
        assert!(choose(&[]).is_err());
    }

    #[test]
    fn mse_identities() {
        let data = generate(&ScenarioSpec::new(Scenario::LS, TrueFunction::Linear, 50, 1)).unwrap();
        let test = &data.test;
        // prediction on the standardized scale that de-standardizes to x
        let exact = Model::Poly(PolyModel::from_coefficients(vec![-test.y_mean / test.y_std, 1.0 / test.y_std]));
        assert!(evaluate_mse(&exact, test, TrueFunction::Linear) < 1e-20);

        let truth: Vec<f64> = test.x.iter().map(|x| TrueFunction::Abs.eval(*x)).collect();
        let m = truth.iter().sum::<f64>() / truth.len() as f64;
        let var = truth.iter().map(|t| (t - m).powi(2)).sum::<f64>() / truth.len() as f64;
        let constant = Model::Poly(PolyModel::from_coefficients(vec![(m - test.y_mean) / test.y_std]));
        assert!((evaluate_mse(&constant, test, TrueFunction::Abs) - var).abs() < 1e-12);
    }

    #[test]
    fn median_baseline_bandwidth() {
        let z = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 3.0]);
        let d = Dataset::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0], z, 0.0, 1.0, Split::Train).unwrap();
        let spec: ModelSpec = "poly:1".parse().unwrap();
        let opts = SelectionOptions::new(0, &spec);
        let r = baseline_select(&d, None, BaselineRule::Median, &spec, &opts).unwrap();
        assert_eq!(r.chosen, KernelSpec::Gaussian { bandwidth: 2.0 });
        assert_eq!(r.path, SelectionPath::Baseline(BaselineRule::Median));
        let s = baseline_select(&d, None, BaselineRule::Silverman, &spec, &opts).unwrap();
        assert!(s.chosen.is_gaussian());
    }

    #[test]
    fn selection_invariants_and_determinism() {
        let data = generate(&ScenarioSpec::new(Scenario::LS, TrueFunction::Abs, 200, 4)).unwrap();
        let spec: ModelSpec = "poly:2".parse().unwrap();
        let opts = SelectionOptions::new(4, &spec);
        let a = lisc_select(&data.train, Some(&data.valid), &default_grid(), &spec, &opts).unwrap();
        let b = lisc_select(&data.train, Some(&data.valid), &default_grid(), &spec, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.candidates.iter().filter(|r| r.chosen).count(), 1);
        assert_eq!(a.chosen_row().kernel, a.chosen);
        let any_ident = a.candidates.iter().any(|r| r.itc.as_ref().unwrap().identifiable);
        assert_eq!(any_ident, a.path == SelectionPath::TwoStep);
        if a.path == SelectionPath::TwoStep {
            let best = a.chosen_row().keic.as_ref().unwrap().keic_value;
            for r in a.candidates.iter().filter(|r| r.itc.as_ref().unwrap().identifiable) {
                assert!(best <= r.keic.as_ref().unwrap().keic_value);
            }
        }
        assert_eq!(a.fitted_model().unwrap().n_params(), 3);
    }

    #[test]
    fn looser_alpha_gives_superset() {
        let data = generate(&ScenarioSpec::new(Scenario::LS, TrueFunction::Sin, 150, 9)).unwrap();
        let spec: ModelSpec = "poly:2".parse().unwrap();
        let mut opts = SelectionOptions::new(9, &spec);
        let strict = lisc_select(&data.train, None, &default_grid(), &spec, &opts).unwrap();
        opts.alpha = 0.5;
        let loose = lisc_select(&data.train, None, &default_grid(), &spec, &opts).unwrap();
        for (s, l) in strict.candidates.iter().zip(&loose.candidates) {
            let (s, l) = (s.itc.as_ref().unwrap(), l.itc.as_ref().unwrap());
            assert_eq!(s.itc_value, l.itc_value);
            assert!(!s.identifiable || l.identifiable);
        }
    }

    #[test]
    fn refit_per_half_runs() {
        let data = generate(&ScenarioSpec::new(Scenario::LS, TrueFunction::Quad, 100, 2)).unwrap();
        let spec: ModelSpec = "poly:2".parse().unwrap();
        let mut opts = SelectionOptions::new(2, &spec);
        opts.refit_per_half = true;
        let r = lisc_select(&data.train, None, &default_grid()[..3], &spec, &opts).unwrap();
        assert_eq!(r.candidates.len(), 3);
    }
}
