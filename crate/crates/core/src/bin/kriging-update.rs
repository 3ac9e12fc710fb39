use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use kriging_update::bench::{self, BenchConfig, BenchError};
use kriging_update::io::{self as data, DataError, OutputFormat};
use kriging_update::verify::{self, VerifyConfig};
use kriging_update::{counterexample, Kernel, KernelFamily, KrigingError, KrigingState, UpdateBatch};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "kriging-update", version, about = "Simple Kriging with batch-sequential updates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two simultaneous observations of a Wiener process: correct versus
    /// diagonal-only variance update.
    Counterexample {
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Check the update formulas against brute-force refits on seeded
    /// random instances.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long = "n", value_delimiter = ',', default_value = "0,5,20")]
        n: Vec<usize>,
        #[arg(long = "k", value_delimiter = ',', default_value = "1,2,5")]
        k: Vec<usize>,
        #[arg(long = "d", value_delimiter = ',', default_value = "1,3")]
        d: Vec<usize>,
        /// Kernel families (comma separated) or `all`.
        #[arg(long, default_value = "se")]
        kernel: String,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        /// Defaults to 0.05 for d = 1 and 0.3 otherwise.
        #[arg(long)]
        lengthscale: Option<f64>,
        #[arg(long, default_value_t = 1e-10)]
        jitter: f64,
        /// Random query points per instance.
        #[arg(long, default_value_t = 20)]
        queries: usize,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Time block-extended assimilation against a full refit.
    Bench {
        #[arg(long = "n", value_delimiter = ',', default_value = "0,100,500,2000")]
        n: Vec<usize>,
        #[arg(long = "k", value_delimiter = ',', default_value = "1,10")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "se")]
        kernel: KernelFamily,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long, default_value_t = 0.3)]
        lengthscale: f64,
        #[arg(long, default_value_t = 1e-10)]
        jitter: f64,
        #[arg(long = "d", default_value_t = 3)]
        d: usize,
        /// Output CSV file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict mean and variance at query points from CSV observations,
    /// optionally assimilating a second batch.
    Predict {
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        batch: Option<PathBuf>,
        #[arg(long)]
        query: PathBuf,
        #[arg(long, default_value = "se")]
        kernel: KernelFamily,
        #[arg(long, default_value_t = 1.0)]
        variance: f64,
        #[arg(long, default_value_t = 0.3)]
        lengthscale: f64,
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Kriging(#[from] KrigingError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Kriging(KrigingError::NotPositiveDefinite { .. })
            | CliError::Kriging(KrigingError::DegenerateNewPoint { .. })
            | CliError::Bench(BenchError::Kriging(KrigingError::NotPositiveDefinite { .. })) => EXIT_NUMERIC,
            CliError::Bench(BenchError::Disagreement { .. }) | CliError::Failed(_) => EXIT_FAILURE,
            _ => EXIT_USAGE,
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|source| DataError::Io { path: p.to_path_buf(), source })?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_families(s: &str) -> Result<Vec<KernelFamily>, CliError> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(KernelFamily::ALL.to_vec());
    }
    s.split(',').map(|f| f.parse().map_err(CliError::from)).collect()
}

fn print_json(value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Counterexample { format } => {
            let report = counterexample::run()?;
            match format {
                ReportFormat::Text => print!("{}", report.render()),
                ReportFormat::Json => print_json(&report)?,
            }
            if !report.passed() {
                return Err(CliError::Failed("counter-example values deviate beyond 1e-12".into()));
            }
        }
        Command::Verify { seed, trials, n, k, d, kernel, variance, lengthscale, jitter, queries, format } => {
            let families = parse_families(&kernel)?;
            let cfg = VerifyConfig {
                seed,
                trials,
                n_values: n,
                k_values: k,
                d_values: d,
                families,
                variance,
                lengthscale,
                jitter,
                queries,
            };
            let report = verify::run(&cfg)?;
            match format {
                ReportFormat::Text => print!("{}", report.render()),
                ReportFormat::Json => print_json(&report)?,
            }
            if !report.passed() {
                return Err(CliError::Failed("verification failed".into()));
            }
        }
        Command::Bench { n, k, trials, seed, kernel, variance, lengthscale, jitter, d, out } => {
            let cfg = BenchConfig {
                n_values: n,
                k_values: k,
                trials,
                seed,
                kernel: Kernel::new(kernel, variance, lengthscale)?,
                jitter,
                dim: d,
                ..BenchConfig::default()
            };
            if kernel == KernelFamily::Brownian && d != 1 {
                return Err(CliError::Usage("brownian kernel requires --d 1".into()));
            }
            let rows = bench::run(&cfg)?;
            let mut w = output(out.as_deref())?;
            data::write_bench_rows(&mut w, &rows)?;
            w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
        }
        Command::Predict { obs, batch, query, kernel, variance, lengthscale, jitter, format, out } => {
            let kernel = Kernel::new(kernel, variance, lengthscale)?;
            let observations = data::read_observations(&obs)?;
            let (qdim, queries) = data::read_queries(&query)?;
            let check_dim = |what: &str, d: Option<usize>| match d {
                Some(d) if d != qdim => Err(CliError::Usage(format!(
                    "{what} have {d} coordinate columns but queries have {qdim}"
                ))),
                _ => Ok(()),
            };
            check_dim("observations", observations.dim)?;
            let mut state = KrigingState::fit(kernel, observations.points, observations.values, jitter)?;
            if let Some(batch_path) = batch {
                let b = data::read_observations(&batch_path)?;
                check_dim("batch observations", b.dim)?;
                if !b.points.is_empty() {
                    state = state.assimilate(&UpdateBatch::new(b.points, b.values)?)?;
                }
            }
            let predictions = queries.iter().map(|q| state.predict(q)).collect::<Result<Vec<_>, _>>()?;
            let format = match format {
                Format::Json => OutputFormat::Json,
                Format::Csv => OutputFormat::Csv,
            };
            let mut w = output(out.as_deref())?;
            data::write_predictions(&mut w, format, &queries, &predictions)?;
            w.flush().map_err(|e| CliError::Failed(e.to_string()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Kriging(KrigingError::NotPositiveDefinite { .. })) {
                eprintln!("hint: check for duplicated points or pass a larger --jitter (e.g. 1e-10)");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
