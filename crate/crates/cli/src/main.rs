use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use psmw_core::dataset::ingest;
use psmw_core::pipeline::{execute, execute_sensitivity, ProgressSink};
use psmw_core::{canonical, AnalysisDataset, DatasetSchema, RunManifest, Stage};
use psmw_service::{AppState, ServiceConfig};

const EXIT_INVALID: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(name = "psmw", version, about = "Propensity score matching workbench")]
struct Cli {
    /// Log stage transitions and progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest against its dataset without running anything.
    Validate(Inputs),
    /// Run the full analysis and write results.json and diagnostics.json.
    Run {
        #[command(flatten)]
        inputs: Inputs,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run only the unobserved-confounder sweep and write sweep.json.
    Sensitivity {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        /// Directory for uploaded datasets and runs.
        #[arg(long, default_value = "psmw-data")]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Runs executed concurrently.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Threads per run.
        #[arg(long, env = "PSMW_THREADS")]
        threads: Option<usize>,
        /// Allowed browser origin (default: any).
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args)]
struct Inputs {
    /// Run manifest (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// CSV file; defaults to the manifest's `dataset`, relative to the manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema JSON; defaults to `<data stem>.schema.json` next to the data.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "PSMW_THREADS")]
    threads: Option<usize>,
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Invalid(_) => EXIT_INVALID,
            Failure::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Invalid(m) | Failure::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate(inputs) => {
            let (manifest, data) = load(&inputs)?;
            check(&manifest, &data)?;
            println!("ok: {} rows, manifest valid", data.len());
            Ok(())
        }
        Command::Run { inputs, out } => {
            let (manifest, data) = load(&inputs)?;
            check(&manifest, &data)?;
            let results = in_pool(inputs.threads, || execute(&data, &manifest, &LogProgress))?
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            write(&out, "results.json", &results)?;
            write(&out, "diagnostics.json", &results.diagnostics)?;
            println!("{}", results.summary_line);
            Ok(())
        }
        Command::Sensitivity { inputs, out } => {
            let (manifest, data) = load(&inputs)?;
            check(&manifest, &data)?;
            let sweep = in_pool(inputs.threads, || execute_sensitivity(&data, &manifest, &LogProgress))?
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            write(&out, "sweep.json", &sweep)?;
            for p in &sweep.points {
                let shift = p.mean_att_shift.map_or_else(|| "n/a".to_string(), |s| format!("{s:.6}"));
                println!(
                    "w={:.1} n_ok={} coef={:.6} se={:.6} att_shift={shift}",
                    p.w, p.n_ok, p.mean_injected_coefficient, p.se_injected_coefficient
                );
            }
            Ok(())
        }
        Command::Serve { root, host, port, workers, threads, cors_origin } => {
            let addr: SocketAddr =
                format!("{host}:{port}").parse().map_err(|e| Failure::Invalid(format!("bad address: {e}")))?;
            let state = AppState::open(ServiceConfig { root, workers, threads, cors_origin })
                .map_err(|e| Failure::Runtime(e.to_string()))?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            eprintln!("serving on http://{addr}/api/v1");
            rt.block_on(psmw_service::serve(addr, state)).map_err(|e| Failure::Runtime(e.to_string()))
        }
    }
}

fn load(inputs: &Inputs) -> Result<(RunManifest, AnalysisDataset), Failure> {
    let invalid = |what: &Path, e: &dyn std::fmt::Display| Failure::Invalid(format!("{}: {e}", what.display()));
    let text = fs::read_to_string(&inputs.manifest).map_err(|e| invalid(&inputs.manifest, &e))?;
    let mut manifest = RunManifest::from_json(&text).map_err(|e| invalid(&inputs.manifest, &e))?;
    if let Some(seed) = inputs.seed {
        manifest.seed = seed;
    }
    let data = match (&inputs.data, &manifest.dataset) {
        (Some(d), _) => d.clone(),
        (None, Some(d)) => inputs.manifest.parent().unwrap_or(Path::new(".")).join(d),
        (None, None) => return Err(Failure::Invalid("no dataset: pass --data or set `dataset` in the manifest".into())),
    };
    let schema_path = inputs.schema.clone().unwrap_or_else(|| sibling_schema(&data));
    let schema_text = fs::read_to_string(&schema_path).map_err(|e| invalid(&schema_path, &e))?;
    let schema = DatasetSchema::from_json(&schema_text).map_err(|e| invalid(&schema_path, &e))?;
    log::info!("ingesting {}", data.display());
    let ds = ingest(&data, &schema).map_err(|e| invalid(&data, &e))?;
    Ok((manifest, ds))
}

fn sibling_schema(data: &Path) -> PathBuf {
    let stem = data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    data.with_file_name(format!("{stem}.schema.json"))
}

fn check(manifest: &RunManifest, data: &AnalysisDataset) -> Result<(), Failure> {
    manifest.validate(data).map_err(|e| {
        let lines: Vec<String> = e.field_errors.iter().map(|(k, v)| format!("  {k}: {v}")).collect();
        Failure::Invalid(format!("invalid manifest\n{}", lines.join("\n")))
    })
}

fn in_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, Failure> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    Ok(b.build().map_err(|e| Failure::Runtime(e.to_string()))?.install(f))
}

fn write<T: serde::Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<(), Failure> {
    let runtime = |e: &dyn std::fmt::Display| Failure::Runtime(format!("{}: {e}", dir.join(name).display()));
    fs::create_dir_all(dir).map_err(|e| runtime(&e))?;
    let text = canonical::to_file_string(value).map_err(|e| runtime(&e))?;
    fs::write(dir.join(name), text).map_err(|e| runtime(&e))
}

struct LogProgress;

impl ProgressSink for LogProgress {
    fn stage(&self, stage: Stage) {
        log::info!("stage {stage}");
    }
}
