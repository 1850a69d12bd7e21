//! Sweeps over scenarios, true functions, sample sizes and replications, and
//! the files each command writes.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{generate, DatasetSplits, Scenario, TrueFunction};
use crate::error::{Error, Result};
use crate::io::{atomic_write, candidates_csv, dataset_stem, read_dataset_files, to_json_pretty, write_dataset_files};
use crate::numerics::{chi2_quantile_1df, mean, population_std};
use crate::selection::{
    baseline_select, evaluate_mse, lisc_select, BaselineRule, SelectionOptions, SelectionResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Lisc,
    Median,
    Silverman,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lisc, Method::Median, Method::Silverman];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lisc => "lisc",
            Method::Median => "median",
            Method::Silverman => "silverman",
        })
    }
}

/// Selection options for one replication seed under `cfg`.
pub fn selection_options(cfg: &ExperimentConfig, seed: u64) -> SelectionOptions {
    let mut opts = SelectionOptions::new(seed, &cfg.model);
    opts.alpha = cfg.alpha;
    opts.refit_per_half = cfg.refit_per_half;
    if let Some(mask) = cfg.grad_mask {
        opts.mask = mask;
    }
    if let Some(iters) = cfg.max_iterations {
        opts.adam.max_iterations = iters;
    }
    if let Some(p) = cfg.patience {
        opts.adam.patience = p;
    }
    opts
}

/// Runs one method on one dataset draw.
pub fn run_method(cfg: &ExperimentConfig, data: &DatasetSplits, method: Method, seed: u64) -> Result<SelectionResult> {
    let opts = selection_options(cfg, seed);
    let valid = Some(&data.valid);
    match method {
        Method::Lisc => lisc_select(&data.train, valid, &cfg.candidates, &cfg.model, &opts),
        Method::Median => baseline_select(&data.train, valid, BaselineRule::Median, &cfg.model, &opts),
        Method::Silverman => baseline_select(&data.train, valid, BaselineRule::Silverman, &cfg.model, &opts),
    }
}

/// One (scenario, f*, n, method, replication) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub scenario: Scenario,
    pub f_star: TrueFunction,
    pub n: usize,
    pub method: Method,
    pub rep: usize,
    pub seed: u64,
    pub mse: Option<f64>,
    pub error: Option<String>,
    pub selection: Option<SelectionResult>,
}

impl RepRecord {
    pub fn failed(&self) -> bool {
        self.mse.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: Scenario,
    pub f_star: TrueFunction,
    pub n: usize,
    pub method: Method,
    pub mean: Option<f64>,
    /// Population standard deviation (zero for a single replication).
    pub std: Option<f64>,
    pub reps_ok: usize,
    pub reps_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_fingerprint: String,
    pub config: ExperimentConfig,
    pub reps: Vec<RepRecord>,
    pub aggregate: Vec<AggregateRow>,
}

impl RunRecord {
    pub fn failures(&self) -> usize {
        self.reps.iter().filter(|r| r.failed()).count()
    }

    pub fn aggregate_for(&self, scenario: Scenario, f: TrueFunction, n: usize, method: Method) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|a| a.scenario == scenario && a.f_star == f && a.n == n && a.method == method)
    }
}

fn run_cell(cfg: &ExperimentConfig, scenario: Scenario, f: TrueFunction, n: usize, rep: usize) -> Vec<RepRecord> {
    let seed = cfg.seed.wrapping_add(rep as u64);
    let record = |method, outcome: Result<(SelectionResult, f64)>| match outcome {
        Ok((sel, mse)) => RepRecord {
            scenario,
            f_star: f,
            n,
            method,
            rep,
            seed,
            mse: Some(mse),
            error: None,
            selection: Some(sel),
        },
        Err(e) => RepRecord {
            scenario,
            f_star: f,
            n,
            method,
            rep,
            seed,
            mse: None,
            error: Some(e.to_string()),
            selection: None,
        },
    };
    let data = match generate(&cfg.scenario_spec(scenario, f, n, seed)) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return Method::ALL
                .iter()
                .map(|m| record(*m, Err(Error::NumericalFailure(msg.clone()))))
                .collect();
        }
    };
    Method::ALL
        .iter()
        .map(|&method| {
            let outcome = run_method(cfg, &data, method, seed).and_then(|sel| {
                let mse = evaluate_mse(&sel.fitted_model()?, &data.test, f);
                if mse.is_finite() {
                    Ok((sel, mse))
                } else {
                    Err(Error::NumericalFailure("non-finite test error".into()))
                }
            });
            record(method, outcome)
        })
        .collect()
}

pub fn aggregate(reps: &[RepRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(usize, Scenario, TrueFunction, Method)> = Vec::new();
    for r in reps {
        let key = (r.n, r.scenario, r.f_star, r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(n, scenario, f_star, method)| {
            let cell: Vec<&RepRecord> = reps
                .iter()
                .filter(|r| r.n == n && r.scenario == scenario && r.f_star == f_star && r.method == method)
                .collect();
            let ok: Vec<f64> = cell.iter().filter_map(|r| r.mse).collect();
            let (m, s) = if ok.is_empty() { (None, None) } else { (Some(mean(&ok)), Some(population_std(&ok))) };
            AggregateRow {
                scenario,
                f_star,
                n,
                method,
                mean: m,
                std: s,
                reps_ok: ok.len(),
                reps_failed: cell.len() - ok.len(),
            }
        })
        .collect()
}

/// Every cell of the sweep, in deterministic (n, scenario, f*, rep, method) order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &n in &cfg.n {
        for &scenario in &cfg.scenarios {
            for &f in &cfg.true_functions {
                for rep in 0..cfg.replications {
                    cells.push((scenario, f, n, rep));
                }
            }
        }
    }
    let reps: Vec<RepRecord> = cells
        .par_iter()
        .map(|&(scenario, f, n, rep)| run_cell(cfg, scenario, f, n, rep))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let aggregate = aggregate(&reps);
    Ok(RunRecord { config_fingerprint: cfg.fingerprint(), config: cfg.clone(), reps, aggregate })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish(wtr: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = wtr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// `scenario,f_star,method,rep,mse,chosen_label,path` for one sample size.
/// Failed replications have an empty mse and path `error`.
pub fn rows_csv(reps: &[RepRecord], n: usize) -> Result<String> {
    let mut wtr = csv_writer();
    wtr.write_record(["scenario", "f_star", "method", "rep", "mse", "chosen_label", "path"])?;
    for r in reps.iter().filter(|r| r.n == n) {
        let (label, path) = match &r.selection {
            Some(sel) => (sel.chosen.label(), sel.path.to_string()),
            None => (String::new(), "error".to_string()),
        };
        wtr.write_record([
            r.scenario.to_string(),
            r.f_star.to_string(),
            r.method.to_string(),
            r.rep.to_string(),
            opt_num(r.mse),
            label,
            path,
        ])?;
    }
    finish(wtr)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Result<String> {
    let mut wtr = csv_writer();
    wtr.write_record(["scenario", "f_star", "n", "method", "mean", "std", "reps_ok", "reps_failed"])?;
    for a in rows {
        wtr.write_record([
            a.scenario.to_string(),
            a.f_star.to_string(),
            a.n.to_string(),
            a.method.to_string(),
            opt_num(a.mean),
            opt_num(a.std),
            a.reps_ok.to_string(),
            a.reps_failed.to_string(),
        ])?;
    }
    finish(wtr)
}

/// Text table in the "mean ± std" layout.
pub fn render_aggregate(rows: &[AggregateRow]) -> String {
    let mut out = format!("{:<4} {:<7} {:>6} {:<10} {:>22} {:>7}\n", "scen", "f*", "n", "method", "mse", "failed");
    for a in rows {
        let cell = match (a.mean, a.std) {
            (Some(m), Some(s)) => format!("{m:.3} ± {s:.3}"),
            _ => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<4} {:<7} {:>6} {:<10} {:>22} {:>7}\n",
            a.scenario.to_string(),
            a.f_star.to_string(),
            a.n,
            a.method.to_string(),
            cell,
            a.reps_failed
        ));
    }
    out
}

/// Writes `rows_n<n>.csv` per sample size, `aggregate.csv` and `run.json`.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for &n in &record.config.n {
        let path = dir.join(format!("rows_n{n}.csv"));
        atomic_write(&path, rows_csv(&record.reps, n)?.as_bytes())?;
        written.push(path);
    }
    let path = dir.join("aggregate.csv");
    atomic_write(&path, aggregate_csv(&record.aggregate)?.as_bytes())?;
    written.push(path);
    let path = dir.join("run.json");
    atomic_write(&path, to_json_pretty(record)?.as_bytes())?;
    written.push(path);
    Ok(written)
}

/// Runs the sweep and writes its files into the configured output directory.
pub fn cmd_experiment(cfg: &ExperimentConfig) -> Result<(RunRecord, Vec<PathBuf>)> {
    let record = run_experiment(cfg)?;
    let files = write_run(&cfg.output_dir, &record)?;
    Ok((record, files))
}

/// Dataset files for every (scenario, f*, n) at the base seed, under `<output_dir>/data`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let dir = cfg.output_dir.join("data");
    let mut written = Vec::new();
    for &scenario in &cfg.scenarios {
        for &f in &cfg.true_functions {
            for &n in &cfg.n {
                let spec = cfg.scenario_spec(scenario, f, n, cfg.seed);
                written.extend(write_dataset_files(&dir, &spec, &generate(&spec)?)?);
            }
        }
    }
    Ok(written)
}

/// Where `cmd_select` takes its data from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// Draw the first (scenario, f*, n) cell of the config at the base seed.
    Generated,
    /// Read `<stem>_{train,valid,test}.csv` and `<stem>_meta.json` from a directory.
    Files { dir: PathBuf, stem: String },
}

#[derive(Debug, Clone)]
pub struct SelectOutcome {
    pub result: SelectionResult,
    pub mse: Option<f64>,
    pub stem: String,
    pub files: Vec<PathBuf>,
}

/// One selection on one dataset; writes `select_<stem>.json` and
/// `select_<stem>_candidates.csv`.
pub fn cmd_select(cfg: &ExperimentConfig, source: &DataSource) -> Result<SelectOutcome> {
    cfg.validate()?;
    let (stem, data, truth) = match source {
        DataSource::Generated => {
            let spec = cfg.scenario_spec(cfg.scenarios[0], cfg.true_functions[0], cfg.n[0], cfg.seed);
            (dataset_stem(&spec), generate(&spec)?, Some(spec.true_function))
        }
        DataSource::Files { dir, stem } => {
            let (meta, splits) = read_dataset_files(dir, stem)?;
            (stem.clone(), splits, meta.true_function.parse().ok())
        }
    };
    let result = run_method(cfg, &data, Method::Lisc, cfg.seed)?;
    let mse = match truth {
        Some(f) => Some(evaluate_mse(&result.fitted_model()?, &data.test, f)),
        None => None,
    };
    let json = cfg.output_dir.join(format!("select_{stem}.json"));
    atomic_write(&json, to_json_pretty(&result)?.as_bytes())?;
    let table = cfg.output_dir.join(format!("select_{stem}_candidates.csv"));
    atomic_write(&table, candidates_csv(&result)?.as_bytes())?;
    Ok(SelectOutcome { result, mse, stem, files: vec![json, table] })
}

/// One point of an ITC plot.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotPoint {
    pub n: usize,
    pub label: String,
    pub itc: f64,
    pub normalized: f64,
    pub identifiable: bool,
    pub chosen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub scenario: Scenario,
    pub f_star: TrueFunction,
    pub points: Vec<PlotPoint>,
    pub threshold: f64,
    pub normalized_threshold: f64,
}

/// Raw ITC per candidate and n, max-normalized over the whole plot.
pub fn plot_table(cfg: &ExperimentConfig, scenario: Scenario, f: TrueFunction) -> Result<PlotTable> {
    let mut points = Vec::new();
    for &n in &cfg.n {
        let data = generate(&cfg.scenario_spec(scenario, f, n, cfg.seed))?;
        let sel = run_method(cfg, &data, Method::Lisc, cfg.seed)?;
        for row in &sel.candidates {
            let itc = row.itc.as_ref().expect("lisc rows carry ITC reports");
            points.push(PlotPoint {
                n,
                label: row.kernel.label(),
                itc: itc.itc_value,
                normalized: 0.0,
                identifiable: itc.identifiable,
                chosen: row.chosen,
            });
        }
    }
    let max = points.iter().map(|p| p.itc).fold(0.0, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    for p in &mut points {
        p.normalized = p.itc / scale;
    }
    let threshold = chi2_quantile_1df(1.0 - cfg.alpha)?;
    Ok(PlotTable { scenario, f_star: f, points, threshold, normalized_threshold: threshold / scale })
}

/// `n,label,itc,normalized_itc,identifiable,chosen`, ending with a `threshold` row.
pub fn plot_csv(table: &PlotTable) -> Result<String> {
    let mut wtr = csv_writer();
    wtr.write_record(["n", "label", "itc", "normalized_itc", "identifiable", "chosen"])?;
    for p in &table.points {
        wtr.write_record([
            p.n.to_string(),
            p.label.clone(),
            p.itc.to_string(),
            p.normalized.to_string(),
            p.identifiable.to_string(),
            p.chosen.to_string(),
        ])?;
    }
    wtr.write_record([
        String::new(),
        "threshold".into(),
        table.threshold.to_string(),
        table.normalized_threshold.to_string(),
        String::new(),
        String::new(),
    ])?;
    finish(wtr)
}

/// One `plot_<scenario>_<f*>.csv` per (scenario, f*).
pub fn cmd_plotdata(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = Vec::new();
    for &scenario in &cfg.scenarios {
        for &f in &cfg.true_functions {
            let table = plot_table(cfg, scenario, f)?;
            let path = cfg.output_dir.join(format!("plot_{scenario}_{f}.csv"));
            atomic_write(&path, plot_csv(&table)?.as_bytes())?;
            written.push(path);
        }
    }
    Ok(written)
}
