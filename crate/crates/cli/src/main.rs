use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use scoregap::annotate::{run_batch, AnnotationCache, RunSet};
use scoregap::calibration::{fit_calibration, CalibrationMap};
use scoregap::ingest::{self, Format};
use scoregap::pipeline::{
    self, read_run, run_pipeline, write_json, write_records, write_run, PipelineConfig, PipelineError,
    ProviderKind, Scenario, Stage,
};
use scoregap::report::{build_bundle, emit_plotdata, emit_reports, ReportBundle, ReportFormat};
use scoregap::simulator::SimParams;
use scoregap::stability::stability;
use scoregap::{Error, SessionRecord};

#[derive(Parser)]
#[command(name = "scoregap", version, about = "Check text-predicted satisfaction scores against self-reported ratings")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Key-value TOML config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["remote", "lexicon"])]
    provider: Option<String>,
    #[arg(long, global = true)]
    runs: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["csv", "markdown", "md"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an export and write normalized records.
    Ingest {
        input: PathBuf,
        #[arg(long, value_parser = ["jsonl", "csv"])]
        input_format: Option<String>,
    },
    /// Generate a synthetic corpus with latent ground truth.
    Simulate {
        #[arg(long, value_parser = ["default", "friction_ramp", "ablation"])]
        scenario: Option<String>,
        #[arg(long)]
        size: Option<usize>,
        /// Full simulator parameter file, replacing the bundled defaults.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Annotate records with the configured provider, once per run.
    Annotate {
        #[arg(long)]
        records: PathBuf,
    },
    /// Compute every analysis and write bundle.json.
    Evaluate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long = "run", required = true)]
        run_files: Vec<PathBuf>,
    },
    /// Repeated-run agreement; prints JSON.
    Stability {
        #[arg(long = "run", required = true)]
        run_files: Vec<PathBuf>,
    },
    /// Fit a calibration map from one run.
    Calibrate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long = "run")]
        run_file: PathBuf,
    },
    /// Render reports and plot data from a bundle.json.
    Report {
        #[arg(long)]
        bundle: PathBuf,
    },
    /// Every stage end to end.
    Pipeline,
}

struct Failure {
    stage: Stage,
    source: Error,
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure { stage: e.stage, source: e.source }
    }
}

fn at(stage: Stage) -> impl Fn(Error) -> Failure {
    move |source| Failure { stage, source }
}

fn build_config(g: &GlobalArgs) -> Result<PipelineConfig, Error> {
    let mut c = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &g.provider {
        c.provider = p.parse::<ProviderKind>()?;
    }
    if let Some(n) = g.runs {
        c.runs = n;
        if c.run_ids.as_ref().is_some_and(|ids| ids.len() != n) {
            c.run_ids = None;
        }
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(o) = &g.out {
        c.out = o.clone();
    }
    if let Some(f) = &g.format {
        c.format = f.parse::<ReportFormat>()?;
    }
    c.validate()?;
    Ok(c)
}

fn load_records(path: &Path) -> Result<Vec<SessionRecord>, Failure> {
    let (records, summary) = ingest::load_path(path, None).map_err(at(Stage::Ingest))?;
    if records.is_empty() {
        return Err(Failure { stage: Stage::Ingest, source: Error::Ingest(format!("no valid records in {}", path.display())) });
    }
    log::info!("loaded {} of {} records from {}", summary.accepted, summary.rows_read, path.display());
    Ok(records)
}

fn load_runs(paths: &[PathBuf]) -> Result<Vec<RunSet>, Failure> {
    paths.iter().map(|p| read_run(p).map_err(at(Stage::Evaluate))).collect()
}

fn mkdir(path: &Path, stage: Stage) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure { stage, source: Error::Io { path: path.to_path_buf(), source: e } })
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = build_config(&cli.global).map_err(at(Stage::Config))?;
    let out = config.out.clone();
    match cli.command {
        Command::Pipeline => {
            let outcome = run_pipeline(&config)?;
            for n in &outcome.notices {
                eprintln!("notice: {n}");
            }
            let a = outcome.bundle.primary().alignment.as_ref();
            if let Some(a) = a {
                println!(
                    "n={} exact={:.1}% within_1={:.1}% mae={:.2} bias={:.2}",
                    a.n,
                    100.0 * a.exact_rate,
                    100.0 * a.within_1_rate,
                    a.mae,
                    a.bias
                );
            }
            println!("outputs in {}", outcome.out_dir.display());
        }
        Command::Ingest { input, input_format } => {
            let s = at(Stage::Ingest);
            let format = input_format.as_deref().map(str::parse::<Format>).transpose().map_err(at(Stage::Config))?;
            let (records, summary) = ingest::load_path(&input, format).map_err(&s)?;
            if records.is_empty() {
                return Err(s(Error::Ingest(format!("no valid records in {}", input.display()))));
            }
            let dir = out.join("data");
            mkdir(&dir, Stage::Ingest)?;
            write_records(&dir.join("records.jsonl"), &records).map_err(&s)?;
            write_json(&dir.join("ingest_summary.json"), &summary).map_err(&s)?;
            println!(
                "rows_read={} accepted={} invalid_rating={} empty_text={} malformed={}",
                summary.rows_read,
                summary.accepted,
                summary.rejected_invalid_rating,
                summary.rejected_empty_text,
                summary.rejected_malformed
            );
        }
        Command::Simulate { scenario, size, params } => {
            let c = at(Stage::Config);
            let mut p = match &params {
                Some(path) => {
                    let src = fs::read_to_string(path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
                        .map_err(&c)?;
                    SimParams::from_toml(&src).map_err(&c)?
                }
                None => SimParams::default(),
            };
            p.seed = config.seed;
            p.corpus_size = size.unwrap_or(config.sim_size);
            let scenario = match scenario {
                Some(s) => s.parse::<Scenario>().map_err(&c)?,
                None => config.scenario,
            };
            let p = scenario.apply(&p);
            p.validate().map_err(&c)?;
            let dir = out.join("data");
            let records = pipeline::simulate_to(&p, &dir).map_err(at(Stage::Ingest))?;
            println!("simulated {} records into {}", records.len(), dir.display());
        }
        Command::Annotate { records } => {
            let records = load_records(&records)?;
            let s = at(Stage::Annotate);
            let dir = out.join("runs");
            mkdir(&dir, Stage::Annotate)?;
            let cache = AnnotationCache::new();
            let options = config.batch_options();
            for (i, run_id) in config.run_ids().iter().enumerate() {
                let provider = config.provider(i).map_err(&s)?;
                let rs = run_batch(provider.as_ref(), &records, run_id, &options, Some(&cache)).map_err(&s)?;
                let path = dir.join(format!("{run_id}.jsonl"));
                write_run(&path, &rs).map_err(&s)?;
                println!("{run_id}: {} null, {} errors -> {}", rs.null_count, rs.error_count, path.display());
            }
        }
        Command::Evaluate { records, run_files } => {
            let records = load_records(&records)?;
            let runs = load_runs(&run_files)?;
            let s = at(Stage::Evaluate);
            if runs.len() < 2 {
                eprintln!("notice: stability skipped: fewer than 2 runs");
            }
            let bundle = build_bundle(&records, &runs, None, &config.analysis_options()).map_err(&s)?;
            mkdir(&out, Stage::Evaluate)?;
            let path = out.join("bundle.json");
            write_json(&path, &bundle).map_err(&s)?;
            println!("wrote {}", path.display());
        }
        Command::Stability { run_files } => {
            let runs = load_runs(&run_files)?;
            if runs.len() < 2 {
                eprintln!("notice: stability skipped: fewer than 2 runs");
                return Ok(());
            }
            let report = stability(&runs).map_err(at(Stage::Evaluate))?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
        }
        Command::Calibrate { records, run_file } => {
            let records = load_records(&records)?;
            let run = read_run(&run_file).map_err(at(Stage::Evaluate))?;
            let s = at(Stage::Evaluate);
            let pairs = run.pairs(&records);
            let map: CalibrationMap = fit_calibration(&pairs).map_err(&s)?;
            let dir = out.join("artifacts");
            mkdir(&dir, Stage::Report)?;
            let path = dir.join("calibration_map.csv");
            let file = fs::File::create(&path)
                .map_err(|e| Error::Io { path: path.clone(), source: e })
                .map_err(at(Stage::Report))?;
            map.write_csv(file).map_err(at(Stage::Report))?;
            println!("wrote {}", path.display());
        }
        Command::Report { bundle } => {
            let s = at(Stage::Report);
            let text = fs::read_to_string(&bundle)
                .map_err(|e| Error::Io { path: bundle.clone(), source: e })
                .map_err(&s)?;
            let b: ReportBundle = serde_json::from_str(&text).map_err(|e| s(e.into()))?;
            let mut written = emit_reports(&b, config.format, &out.join("reports")).map_err(&s)?;
            written.extend(emit_plotdata(&b, &out.join("plotdata")).map_err(&s)?);
            for p in written {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let e = PipelineError { stage: f.stage, source: f.source };
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
