use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use epicscore::data::{generate_bimodal_dgp_with, generate_blobs_classification, NoiseConvention};
use epicscore::experiment::{
    aggregate, aggregate_to_csv, band_dump_csv, reports_to_csv, run_experiment, run_single, DatasetSpec,
    ExperimentConfig, ExperimentReport,
};
use epicscore::{Error, Result};

#[derive(Parser)]
#[command(name = "epicscore", version, about = "Conformal benchmark runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[arg(long, value_enum, default_value_t = Synthetic::Bimodal)]
        dataset: Synthetic,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 1.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Convention::Sd)]
        variance_convention: Convention,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment from a JSON config and write the per-run report.
    Run(RunArgs),
    /// Combine run reports into mean and 2 sd per method and metric.
    Aggregate {
        /// Report JSON files written by `run`.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Dump per-point bands of one run for plotting.
    Bands {
        #[command(flatten)]
        run: RunArgs,
        /// Method whose bands are written.
        #[arg(long)]
        method: String,
        /// Run index.
        #[arg(long, default_value_t = 0)]
        run_index: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, value_enum)]
    variance_convention: Option<Convention>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Synthetic {
    Bimodal,
    Blobs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Sd,
    Var,
}

impl From<Convention> for NoiseConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Sd => NoiseConvention::Sd,
            Convention::Var => NoiseConvention::Var,
        }
    }
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        // an unreadable config is bad input, not a failed computation
        let mut cfg = ExperimentConfig::load(&self.config).map_err(|e| match e {
            Error::Io { .. } => Error::Config(e.to_string()),
            e => e,
        })?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(r) = self.runs {
            cfg.n_runs = r;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        if let Some(c) = self.variance_convention {
            match &mut cfg.dataset {
                DatasetSpec::Bimodal { convention, .. } => *convention = c.into(),
                _ => return Err(Error::Config("--variance-convention applies to the bimodal dataset only".into())),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn report_text(report: &ExperimentReport, format: Format) -> Result<String> {
    match format {
        Format::Json => report.to_canonical_json(),
        Format::Csv => reports_to_csv(report),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { dataset, n, classes, spread, seed, variance_convention, out } => {
            let ds = match dataset {
                Synthetic::Bimodal => generate_bimodal_dgp_with(n, seed, variance_convention.into())?,
                Synthetic::Blobs => generate_blobs_classification(n, classes, spread, seed)?.data,
            };
            ds.write_csv(&out)
        }
        Command::Run(args) => {
            let cfg = args.config()?;
            let report = run_experiment(&cfg)?;
            for f in &report.failures {
                eprintln!("run {} ({}): {} failed: {}", f.run, f.seed, f.method, f.error);
            }
            write_out(cfg.out.as_deref(), &report_text(&report, args.format)?)
        }
        Command::Aggregate { reports, out, format } => {
            let parsed = reports
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    Ok(serde_json::from_str::<ExperimentReport>(&text)?)
                })
                .collect::<Result<Vec<_>>>()?;
            let agg = aggregate(&parsed)?;
            let text = match format {
                Format::Json => agg.to_canonical_json()?,
                Format::Csv => aggregate_to_csv(&agg)?,
            };
            write_out(out.as_deref(), &text)
        }
        Command::Bands { run, method, run_index } => {
            let mut cfg = run.config()?;
            if !cfg.methods.contains(&method) {
                cfg.methods.push(method.clone());
                cfg.validate()?;
            }
            let output = run_single(&cfg, run_index)?;
            if let Some(f) = output.failures.iter().find(|f| f.method == method) {
                return Err(Error::Config(format!("{method} failed on run {run_index}: {}", f.error)));
            }
            write_out(cfg.out.as_deref(), &band_dump_csv(&output, &method)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
