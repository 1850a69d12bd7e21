use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kmmr::config::ExperimentConfig;
use kmmr::datagen::{Scenario, TrueFunction};
use kmmr::experiment::{cmd_experiment, cmd_generate, cmd_plotdata, cmd_select, render_aggregate, DataSource};
use kmmr::kernels::KernelSpec;
use kmmr::models::{GradMask, ModelSpec};
use kmmr::Error;

#[derive(Parser)]
#[command(name = "kmmr", version, about = "Kernel MMR IV regression with instrument-space selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/valid/test CSVs and a metadata sidecar for each sweep cell.
    Generate(Overrides),
    /// Run one selection and print the candidate table.
    Select {
        #[command(flatten)]
        overrides: Overrides,
        /// Read datasets from this directory instead of generating them.
        #[arg(long, requires = "stem")]
        data_dir: Option<PathBuf>,
        /// File stem of the dataset to read, e.g. LS_linear_n100_seed527.
        #[arg(long, requires = "data_dir")]
        stem: Option<String>,
    },
    /// Run the full sweep with replications and write row and aggregate tables.
    Experiment(Overrides),
    /// Export raw and max-normalized ITC values per candidate and n.
    Plotdata(Overrides),
}

/// Flags override keys from the config file.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<Scenario>>,
    #[arg(long = "f-star", value_delimiter = ',')]
    true_functions: Option<Vec<TrueFunction>>,
    #[arg(long)]
    model: Option<ModelSpec>,
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<KernelSpec>>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_parser = parse_mask)]
    grad_mask: Option<GradMask>,
    #[arg(long)]
    refit_per_half: bool,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

fn parse_mask(s: &str) -> Result<GradMask, String> {
    match s {
        "full" => Ok(GradMask::Full),
        "output_layer" | "output-layer" => Ok(GradMask::OutputLayer),
        _ => Err(format!("expected full or output_layer, got {s:?}")),
    }
}

impl Overrides {
    fn resolve(self) -> kmmr::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.scenarios {
            cfg.scenarios = v;
        }
        if let Some(v) = self.true_functions {
            cfg.true_functions = v;
        }
        if let Some(v) = self.model {
            cfg.model = v;
        }
        if let Some(v) = self.candidates {
            cfg.candidates = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.replications {
            cfg.replications = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.output_dir {
            cfg.output_dir = v;
        }
        if self.d.is_some() {
            cfg.d = self.d;
        }
        if self.grad_mask.is_some() {
            cfg.grad_mask = self.grad_mask;
        }
        if self.refit_per_half {
            cfg.refit_per_half = true;
        }
        if self.max_iterations.is_some() {
            cfg.max_iterations = self.max_iterations;
        }
        if self.patience.is_some() {
            cfg.patience = self.patience;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> kmmr::Result<u8> {
    match cli.command {
        Command::Generate(o) => {
            let cfg = o.resolve()?;
            for path in cmd_generate(&cfg)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
        Command::Select { overrides, data_dir, stem } => {
            let cfg = overrides.resolve()?;
            let source = match (data_dir, stem) {
                (Some(dir), Some(stem)) => DataSource::Files { dir, stem },
                _ => DataSource::Generated,
            };
            let out = cmd_select(&cfg, &source)?;
            println!("dataset: {}", out.stem);
            print!("{}", out.result.render_table());
            if let Some(mse) = out.mse {
                println!("test mse: {mse:.6}");
            }
            for path in &out.files {
                println!("wrote {}", path.display());
            }
            Ok(0)
        }
        Command::Experiment(o) => {
            let cfg = o.resolve()?;
            let (record, files) = cmd_experiment(&cfg)?;
            print!("{}", render_aggregate(&record.aggregate));
            for path in &files {
                println!("wrote {}", path.display());
            }
            for r in record.reps.iter().filter(|r| r.failed()) {
                eprintln!(
                    "failed: {} {} n={} {} rep {}: {}",
                    r.scenario,
                    r.f_star,
                    r.n,
                    r.method,
                    r.rep,
                    r.error.as_deref().unwrap_or("")
                );
            }
            Ok(if record.failures() > 0 { 4 } else { 0 })
        }
        Command::Plotdata(o) => {
            let cfg = o.resolve()?;
            for path in cmd_plotdata(&cfg)? {
                println!("{}", path.display());
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
