//! Survey utilization toolkit: one binary, one subcommand per workflow stage.
//!
//! Exit codes: 0 on success, 1 on a domain error (the message names the
//! failing stage), 2 on a usage error (clap).

mod error;
mod ops;
mod report;
mod serving;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hutil_core::pipeline::{DEFAULT_SEED, ManifestEntry, CycleManifest};
use hutil_core::table::Subgroup;

use error::CliError;

#[derive(Parser)]
#[command(name = "hutil", version, about = "Survey ingestion, modeling, and serving toolkit")]
struct Cli {
    /// Log at debug level instead of info.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a SAS transport (.xpt) or CSV file into a survey table.
    Ingest {
        /// Input file; format inferred from the extension.
        #[arg(long = "in")]
        input: PathBuf,
        /// Cycle label to stamp on every row, e.g. "2015-2016".
        #[arg(long)]
        cycle: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Join tables from one cycle on the respondent id.
    Merge {
        /// Input tables; repeat the flag once per file.
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        /// Index of the table whose respondents define the output rows.
        #[arg(long, default_value_t = 0)]
        base: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concatenate per-cycle tables into one multi-cycle table.
    Stack {
        #[arg(long = "in", required = true)]
        input: Vec<PathBuf>,
        /// TOML map of per-cycle variable renames applied before stacking.
        #[arg(long)]
        harmonize: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a recode specification (band numerics, collapse categories).
    Recode {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add the binary utilization outcome column.
    DeriveOutcome {
        #[arg(long = "in")]
        input: PathBuf,
        /// Utilization count variable.
        #[arg(long, default_value = "HUQ050")]
        source: String,
        /// Smallest count coded as high utilization.
        #[arg(long, default_value_t = 5)]
        threshold: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep only rows in a clinical subgroup.
    Subgroup {
        #[arg(long = "in")]
        input: PathBuf,
        /// One of: diabetes, obesity, cardiovascular.
        #[arg(long)]
        group: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fill missing values: predictive mean matching for numerics,
    /// polytomous regression for categoricals.
    Impute {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variables missing more than this fraction are dropped listwise.
        #[arg(long, default_value_t = 0.05)]
        threshold: f64,
        /// Donor pool size for mean matching.
        #[arg(long, default_value_t = hutil_core::impute::DEFAULT_DONORS)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Optional JSON report of what was imputed where.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit one logistic model from a TOML formula file.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        formula: PathBuf,
        /// Model JSON output.
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON fit report (coefficients, Wald and bivariate tests).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Select a model: forward steps over covariate classes, then backward
    /// elimination.
    Stepwise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
        /// Optional JSON log of every step's test statistics.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Relative-risk table with case-base bootstrap intervals.
    RrTable {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        formula: PathBuf,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Report directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cycle significance matrix across a stacked table.
    Trend {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        classes: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Banded admission-count histogram per cycle.
    Histogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "HUQ050")]
        variable: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Socio-economic model over the high-utilization subpopulation.
    Socio {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated socio-economic variables.
        #[arg(long, value_delimiter = ',', required = true)]
        vars: Vec<String>,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic survey table from a TOML specification.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a cycle manifest for a set of table files.
    Manifest {
        /// Table files, as `path=cycle` pairs (role defaults to
        /// questionnaire) or `path=cycle:role`.
        #[arg(long = "entry", required = true)]
        entries: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the whole workflow: ingest, prepare, select, analyze, report.
    Pipeline {
        /// TOML pipeline configuration; replaces the manual flags.
        #[arg(long, conflicts_with_all = ["input", "classes", "out", "socio_vars"])]
        config: Option<PathBuf>,
        #[arg(long = "in", required_unless_present = "config")]
        input: Vec<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        classes: Option<PathBuf>,
        #[arg(long, required_unless_present = "config")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long = "socio-vars", value_delimiter = ',')]
        socio_vars: Vec<String>,
        #[arg(long, default_value_t = 200)]
        bootstrap: usize,
    },
    /// Train a deployable model artifact with a train/validation/test split.
    Train {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        formula: PathBuf,
        /// Comma-separated train,validation,test fractions.
        #[arg(long, default_value = "0.6,0.2,0.2")]
        split: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Manifest content hash to stamp into the artifact.
        #[arg(long, default_value = "")]
        manifest_hash: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a trained artifact over HTTP.
    Serve {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Bearer token for /admin/reload and /notify.
        #[arg(long, env = "HUTIL_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
    /// Serve and retrain: poll a manifest, retrain on change, promote
    /// through a quality gate.
    Watch {
        #[arg(long)]
        manifest: PathBuf,
        /// Pipeline configuration reused for retraining.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        audit: PathBuf,
        /// Poll interval in seconds.
        #[arg(long, default_value_t = 300)]
        interval: u64,
        /// Promotion gate as metric:epsilon, e.g. auc:0.01.
        #[arg(long, default_value = "auc:0.01")]
        gate: String,
        /// Smallest test split the gate will accept.
        #[arg(long, default_value_t = 20)]
        min_test_rows: usize,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, env = "HUTIL_ADMIN_TOKEN")]
        admin_token: Option<String>,
    },
}

fn manifest_cmd(entries: &[String], out: &PathBuf) -> Result<(), CliError> {
    let mut parsed = Vec::new();
    for text in entries {
        let (path, rest) = text.split_once('=').ok_or_else(|| {
            CliError::Config(format!("entry {text:?} is not path=cycle or path=cycle:role"))
        })?;
        let (cycle, role) = match rest.split_once(':') {
            Some((c, r)) => (c, r),
            None => (rest, "questionnaire"),
        };
        parsed.push(ManifestEntry::for_file(std::path::Path::new(path), cycle, role)?);
    }
    let manifest = CycleManifest { entries: parsed };
    manifest.validate()?;
    let text = toml::to_string(&manifest)
        .map_err(|e| CliError::Config(format!("cannot serialize manifest: {e}")))?;
    std::fs::write(out, text).map_err(|e| CliError::io(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { input, cycle, out } => ops::ingest(&input, &cycle, &out),
        Command::Merge { input, base, out } => ops::merge(&input, base, &out),
        Command::Stack { input, harmonize, out } => {
            ops::stack(&input, harmonize.as_deref(), &out)
        }
        Command::Recode { spec, input, out } => ops::recode(&spec, &input, &out),
        Command::DeriveOutcome { input, source, threshold, out } => {
            ops::derive_outcome_cmd(&input, &source, threshold, &out)
        }
        Command::Subgroup { input, group, out } => {
            let group: Subgroup = group
                .parse()
                .map_err(|e: String| CliError::Config(e))?;
            ops::subgroup(&input, group, &out)
        }
        Command::Impute { input, out, threshold, k, seed, report } => {
            ops::impute(&input, &out, threshold, k, seed, report.as_deref())
        }
        Command::Fit { input, formula, out, report } => {
            ops::fit(&input, &formula, &out, report.as_deref())
        }
        Command::Stepwise { input, classes, alpha, out, trace } => {
            ops::stepwise(&input, &classes, alpha, &out, trace.as_deref())
        }
        Command::RrTable { input, formula, bootstrap, seed, out } => {
            ops::rr_table(&input, &formula, bootstrap, seed, &out)
        }
        Command::Trend { input, classes, alpha, out } => {
            ops::trend(&input, &classes, alpha, &out)
        }
        Command::Histogram { input, variable, out } => {
            ops::histogram(&input, &variable, &out)
        }
        Command::Socio { input, vars, bootstrap, seed, out } => {
            ops::socio(&input, &vars, bootstrap, seed, &out)
        }
        Command::Synth { spec, out } => ops::synth(&spec, &out),
        Command::Manifest { entries, out } => manifest_cmd(&entries, &out),
        Command::Pipeline { config, input, classes, out, seed, socio_vars, bootstrap } => {
            ops::pipeline(
                config.as_deref(),
                &input,
                classes.as_deref(),
                out.as_deref(),
                seed,
                &socio_vars,
                bootstrap,
            )
        }
        Command::Train { input, formula, split, seed, manifest_hash, out } => {
            serving::train(&input, &formula, &split, seed, &manifest_hash, &out)
        }
        Command::Serve { artifact, host, port, admin_token } => {
            serving::serve(&artifact, &host, port, admin_token)
        }
        Command::Watch {
            manifest,
            config,
            artifact,
            audit,
            interval,
            gate,
            min_test_rows,
            host,
            port,
            admin_token,
        } => serving::watch(
            &manifest,
            &config,
            &artifact,
            &audit,
            interval,
            &gate,
            min_test_rows,
            &host,
            port,
            admin_token,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_target(false)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
