//! `conjoint`: validate designs, generate plans, simulate respondents,
//! estimate effects, render reports and run the survey service.

use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use conjoint_core::dataset::ChoiceDataset;
use conjoint_core::design::{parse_design, validate_design, DesignSpec};
use conjoint_core::estimator::{estimate_acie, estimate_amce, estimate_conditional, VarianceMethod};
use conjoint_core::randomizer::{generate_plans, plans_to_toml};
use conjoint_core::report::{
    plotdata_csv, render_file, render_svg_file, EstimateFile, TitledTable, AMCE_TITLE,
};
use conjoint_core::simulator::{parse_truth, simulate_dataset};
use conjoint_service::{Entropy, OsEntropy, ServiceConfig, SurveyService};

#[derive(Debug, Parser)]
#[command(name = "conjoint", version, about = "Conjoint experiment toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a design file; exits 2 and lists violations if it is invalid.
    Validate {
        design: PathBuf,
    },
    /// Write randomized session plans.
    Generate {
        design: PathBuf,
        /// Number of sessions.
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        /// Master seed; falls back to CONJOINT_SEED, then to a random seed.
        #[arg(long, env = "CONJOINT_SEED")]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate respondents from a truth file and write a choice CSV.
    Simulate {
        design: PathBuf,
        truth: PathBuf,
        #[arg(long)]
        respondents: usize,
        /// Falls back to CONJOINT_SEED, then to a random seed.
        #[arg(long, env = "CONJOINT_SEED")]
        seed: Option<u64>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate AMCEs and print the table; optionally save it for `report`.
    Estimate {
        design: PathBuf,
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Variance::Cluster)]
        variance: Variance,
        /// Bootstrap replicates.
        #[arg(long = "B", default_value_t = 1000)]
        replicates: usize,
        /// Bootstrap seed; falls back to CONJOINT_SEED, then 0.
        #[arg(long, env = "CONJOINT_SEED")]
        seed: Option<u64>,
        /// One table per observed value of this covariate (e.g. resp_polint).
        #[arg(long)]
        by: Option<String>,
        /// Interacted attribute pair, written `First:Second`.
        #[arg(long)]
        interaction: Option<String>,
        /// Estimate file (JSON) for `report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render an estimate file.
    Report {
        table: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the survey service.
    Serve {
        design: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory holding the event log.
        #[arg(long)]
        store: PathBuf,
        /// Allowed browser origin; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
        /// Idle hours after which an unfinished session is abandoned.
        #[arg(long, default_value_t = 24)]
        abandon_after_hours: i64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variance {
    Cluster,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Plotdata,
    Svg,
}

/// Failure with its exit code; printed as `error: <category>: <message>`.
#[derive(Debug)]
enum CliError {
    Validation(String),
    Estimation(String),
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Estimation(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (category, msg) = match self {
            CliError::Validation(m) => ("validation", m),
            CliError::Estimation(m) => ("estimation", m),
            CliError::Io(m) => ("io", m),
        };
        // Keep the report on one line.
        write!(f, "error: {category}: {}", msg.replace('\n', " "))
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_design(path: &Path) -> Result<Arc<DesignSpec>> {
    let spec = parse_design(&read(path)?).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let violations = validate_design(&spec);
    if let Some(v) = violations.first() {
        return Err(CliError::Validation(format!("{}: {v}", path.display())));
    }
    Ok(Arc::new(spec))
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = OsEntropy.seed();
        eprintln!("seed: {s}");
        s
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { design } => {
            let spec = parse_design(&read(&design)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", design.display())))?;
            let violations = validate_design(&spec);
            for v in &violations {
                eprintln!("{v}");
            }
            if !violations.is_empty() {
                return Err(CliError::Validation(format!(
                    "{}: {} violation(s)",
                    design.display(),
                    violations.len()
                )));
            }
            println!(
                "ok: {} attributes, {} levels, {} dummy columns",
                spec.attributes.len(),
                spec.total_level_count(),
                spec.dummy_column_count()
            );
            Ok(())
        }
        Command::Generate { design, sessions, seed, out } => {
            let spec = load_design(&design)?;
            let plans = generate_plans(&spec, sessions, seed_or_random(seed))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_or_print(out.as_deref(), &plans_to_toml(&spec, &plans))
        }
        Command::Simulate { design, truth, respondents, seed, out } => {
            let spec = load_design(&design)?;
            let (effects, covariates) = parse_truth(&spec, &read(&truth)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", truth.display())))?;
            let ds = simulate_dataset(spec, &effects, &covariates, respondents, seed_or_random(seed))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            write_or_print(out.as_deref(), &ds.export_csv())
        }
        Command::Estimate { design, data, variance, replicates, seed, by, interaction, out } => {
            let spec = load_design(&design)?;
            let ds = ChoiceDataset::ingest_csv(&read(&data)?, spec)
                .map_err(|e| CliError::Validation(format!("{}: {e}", data.display())))?;
            let method = match variance {
                Variance::Cluster => VarianceMethod::ClusterRobust,
                Variance::Bootstrap => VarianceMethod::Bootstrap { replicates, seed: seed.unwrap_or(0) },
            };
            let file = estimate(&ds, method, by.as_deref(), interaction.as_deref())?;
            if let Some(p) = &out {
                write_or_print(Some(p), &file.to_json())?;
            }
            print!("{}", render_file(&file));
            Ok(())
        }
        Command::Report { table, format, out } => {
            let file = EstimateFile::from_json(&read(&table)?)
                .map_err(|e| CliError::Validation(format!("{}: {e}", table.display())))?;
            let text = match format {
                Format::Text => render_file(&file),
                Format::Plotdata => plotdata_csv(&file),
                Format::Svg => render_svg_file(&file),
            };
            write_or_print(out.as_deref(), &text)
        }
        Command::Serve { design, port, host, store, cors_origin, abandon_after_hours } => {
            let spec = load_design(&design)?;
            serve(spec, &host, port, &store, cors_origin, abandon_after_hours)
        }
    }
}

fn estimate(ds: &ChoiceDataset, method: VarianceMethod, by: Option<&str>, interaction: Option<&str>) -> Result<EstimateFile> {
    let failed = |e: conjoint_core::EstimatorError| CliError::Estimation(e.to_string());
    if by.is_some() && interaction.is_some() {
        return Err(CliError::Validation("--by and --interaction cannot be combined".into()));
    }
    if let Some(cov) = by {
        let tables = estimate_conditional(ds, cov, method).map_err(failed)?;
        let name = ds
            .covariate_position(cov)
            .map(|q| format!("resp_{}", ds.design().questionnaire[q].key))
            .map_err(|e| CliError::Validation(e.to_string()))?;
        return Ok(EstimateFile {
            tables: tables
                .into_iter()
                .map(|(value, table)| TitledTable {
                    title: format!("Conditional AMCE ({name} = {value})"),
                    table,
                })
                .collect(),
        });
    }
    if let Some(pair) = interaction {
        let (a, b) = pair
            .split_once(':')
            .ok_or_else(|| CliError::Validation(format!("--interaction expects First:Second, got {pair:?}")))?;
        let acie = estimate_acie(ds, a, b, method).map_err(failed)?;
        return Ok(EstimateFile {
            tables: vec![
                TitledTable {
                    title: format!("AMCE with {a} × {b} interaction"),
                    table: acie.main_effects,
                },
                TitledTable {
                    title: format!("ACIE ({a} × {b})"),
                    table: acie.interactions,
                },
            ],
        });
    }
    let table = estimate_amce(ds, method).map_err(failed)?;
    Ok(EstimateFile::single(AMCE_TITLE, table))
}

fn serve(
    spec: Arc<DesignSpec>,
    host: &str,
    port: u16,
    store: &Path,
    cors_origin: Option<String>,
    abandon_after_hours: i64,
) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let config = ServiceConfig::default().with_abandon_after_hours(abandon_after_hours);
    let service = SurveyService::open(spec, store, config).map_err(|e| CliError::Io(e.to_string()))?;
    let app = conjoint_service::router(Arc::new(service), cors_origin.as_deref());
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Validation(format!("address {host}:{port}: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Io(format!("bind {addr}: {e}")))?;
        eprintln!("listening on http://{}", listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?);
        axum_serve(listener, app).await
    })
}

async fn axum_serve(listener: tokio::net::TcpListener, app: axum::Router) -> Result<()> {
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| CliError::Io(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
