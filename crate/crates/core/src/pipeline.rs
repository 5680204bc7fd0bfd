//! End-to-end orchestration: ingest or simulate, annotate, evaluate, report.
//!
//! Output directory layout:
//!
//! ```text
//! config.toml            effective configuration (provenance)
//! data/records.jsonl     normalized records
//! data/latents.jsonl     simulator latents (simulated input only)
//! data/ingest_summary.json
//! runs/<run_id>.jsonl    one annotation run each
//! bundle.json            every analysis result
//! reports/<table>.<csv|md>
//! plotdata/<figure>.csv
//! artifacts/calibration_map.csv
//! stages/<n>-<stage>.done
//! FAILED                 written when a stage fails
//! ```

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::annotate::{
    run_batch, AnnotationCache, BatchOptions, HttpProvider, LexiconProvider, NoisyLexiconProvider,
    Provider, RetryPolicy, RunSet,
};
use crate::divergence::DivergenceThresholds;
use crate::error::{Error, Result};
use crate::ingest::{self, Format, IngestSummary};
use crate::model::SessionRecord;
use crate::report::{build_bundle, emit_plotdata, emit_reports, AnalysisOptions, ReportBundle, ReportFormat};
use crate::simulator::{self, SimParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Lexicon,
    Remote,
}

impl std::str::FromStr for ProviderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexicon" => Ok(ProviderKind::Lexicon),
            "remote" => Ok(ProviderKind::Remote),
            other => Err(Error::Config(format!("unknown provider {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Default,
    FrictionRamp,
    Ablation,
}

impl Scenario {
    pub fn apply(self, p: &SimParams) -> SimParams {
        match self {
            Scenario::Default => p.clone(),
            // text-only friction rising over the season, on top of the ablated model
            // so the gap starts near zero and the widening is visible
            Scenario::FrictionRamp => SimParams { friction_ramp: 1.0, ..p.ablated() },
            Scenario::Ablation => p.ablated(),
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Scenario::Default),
            "friction_ramp" | "friction-ramp" => Ok(Scenario::FrictionRamp),
            "ablation" => Ok(Scenario::Ablation),
            other => Err(Error::Config(format!("unknown scenario {other:?}"))),
        }
    }
}

/// Flat key-value configuration. Every key is optional in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Records to evaluate; when absent a corpus is simulated.
    pub input: Option<PathBuf>,
    pub input_format: Option<String>,
    pub seed: u64,
    pub sim_size: usize,
    pub scenario: Scenario,
    pub provider: ProviderKind,
    pub endpoint: Option<String>,
    pub concurrency: usize,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    /// Noise sd for the lexicon provider; 0 keeps it deterministic.
    pub noise_temperature: f64,
    pub runs: usize,
    pub run_ids: Option<Vec<String>>,
    pub clean_max_abs_delta: u8,
    pub high_actual_min: u8,
    pub friction_predicted_max: u8,
    pub fragile_predicted_max: u8,
    pub low_actual_max: u8,
    pub reverse_predicted_min: u8,
    pub gap_window: u32,
    pub alert_threshold: f64,
    pub format: ReportFormat,
    /// Not written back into the output directory's copy.
    #[serde(skip_serializing)]
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = DivergenceThresholds::default();
        let sim = SimParams::default();
        PipelineConfig {
            input: None,
            input_format: None,
            seed: sim.seed,
            sim_size: sim.corpus_size,
            scenario: Scenario::Default,
            provider: ProviderKind::Lexicon,
            endpoint: None,
            concurrency: 4,
            timeout_secs: 30,
            max_attempts: 3,
            noise_temperature: 0.0,
            runs: 3,
            run_ids: None,
            clean_max_abs_delta: t.clean_max_abs_delta,
            high_actual_min: t.high_actual_min,
            friction_predicted_max: t.friction_predicted_max,
            fragile_predicted_max: t.fragile_predicted_max,
            low_actual_max: t.low_actual_max,
            reverse_predicted_min: t.reverse_predicted_min,
            gap_window: crate::divergence::DEFAULT_GAP_WINDOW,
            alert_threshold: crate::divergence::DEFAULT_ALERT_THRESHOLD,
            format: ReportFormat::Csv,
            out: PathBuf::from("scoregap-out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(src: &str) -> Result<Self> {
        toml::from_str(src).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.concurrency == 0 {
            return bad("concurrency must be at least 1".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be at least 1".into());
        }
        if self.sim_size == 0 && self.input.is_none() {
            return bad("sim_size must be at least 1".into());
        }
        if self.gap_window == 0 {
            return bad("gap_window must be at least 1".into());
        }
        if !(self.alert_threshold.is_finite() && self.alert_threshold >= 0.0) {
            return bad(format!("alert_threshold must be >= 0, got {}", self.alert_threshold));
        }
        if !(self.noise_temperature.is_finite() && self.noise_temperature >= 0.0) {
            return bad(format!("noise_temperature must be >= 0, got {}", self.noise_temperature));
        }
        if let Some(f) = &self.input_format {
            f.parse::<Format>().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(ids) = &self.run_ids {
            if ids.len() != self.runs {
                return bad(format!("{} run_ids given for {} runs", ids.len(), self.runs));
            }
            let mut seen = std::collections::BTreeSet::new();
            for id in ids {
                let ok = !id.is_empty()
                    && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
                if !ok || !seen.insert(id) {
                    return bad(format!("run id {id:?} is empty, repeated or not a plain name"));
                }
            }
        }
        for v in [
            self.clean_max_abs_delta,
            self.high_actual_min,
            self.friction_predicted_max,
            self.fragile_predicted_max,
            self.low_actual_max,
            self.reverse_predicted_min,
        ] {
            if v > 10 {
                return bad(format!("divergence threshold {v} outside 0-10"));
            }
        }
        Ok(())
    }

    pub fn run_ids(&self) -> Vec<String> {
        match &self.run_ids {
            Some(ids) => ids.clone(),
            None => (1..=self.runs).map(|i| format!("run_{i}")).collect(),
        }
    }

    pub fn thresholds(&self) -> DivergenceThresholds {
        DivergenceThresholds {
            clean_max_abs_delta: self.clean_max_abs_delta,
            high_actual_min: self.high_actual_min,
            friction_predicted_max: self.friction_predicted_max,
            fragile_predicted_max: self.fragile_predicted_max,
            low_actual_max: self.low_actual_max,
            reverse_predicted_min: self.reverse_predicted_min,
        }
    }

    pub fn analysis_options(&self) -> AnalysisOptions {
        AnalysisOptions {
            thresholds: self.thresholds(),
            gap_window: self.gap_window,
            alert_threshold: self.alert_threshold,
        }
    }

    pub fn sim_params(&self) -> SimParams {
        let base = SimParams { seed: self.seed, corpus_size: self.sim_size, ..SimParams::default() };
        self.scenario.apply(&base)
    }

    pub fn batch_options(&self) -> BatchOptions {
        let retry = match self.provider {
            ProviderKind::Lexicon => RetryPolicy::immediate(),
            ProviderKind::Remote => RetryPolicy::default(),
        };
        BatchOptions {
            retry: RetryPolicy { max_attempts: self.max_attempts, ..retry },
            concurrency: self.concurrency,
        }
    }

    /// Provider for run number `index` (0-based). Fails before any network
    /// traffic when the remote provider lacks a credential or endpoint.
    pub fn provider(&self, index: usize) -> Result<Box<dyn Provider>> {
        match self.provider {
            ProviderKind::Lexicon if self.noise_temperature > 0.0 => Ok(Box::new(
                NoisyLexiconProvider::new(self.noise_temperature, self.seed.wrapping_add(index as u64)),
            )),
            ProviderKind::Lexicon => Ok(Box::new(LexiconProvider::new())),
            ProviderKind::Remote => Ok(Box::new(HttpProvider::from_env(
                self.endpoint.as_deref(),
                Duration::from_secs(self.timeout_secs),
            )?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Annotate,
    Evaluate,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Annotate => "annotate",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    fn ordinal(self) -> u8 {
        self as u8 + 1
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl PipelineError {
    /// 2 config, 3 ingest, 4 provider unusable, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match (&self.source, self.stage) {
            (Error::Config(_), _) => 2,
            (Error::ProviderUnusable(_), _) => 4,
            (Error::Ingest(_), _) | (_, Stage::Ingest) => 3,
            (_, Stage::Config) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub bundle: ReportBundle,
    pub out_dir: PathBuf,
    /// Human-readable notes, such as skipped stages.
    pub notices: Vec<String>,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn write_records(path: &Path, records: &[SessionRecord]) -> Result<()> {
    let mut w = create_file(path)?;
    ingest::write_jsonl(records, &mut w)?;
    finish(w, path)
}

pub fn write_run(path: &Path, run: &RunSet) -> Result<()> {
    let mut w = create_file(path)?;
    run.write_jsonl(&mut w)?;
    finish(w, path)
}

pub fn read_run(path: &Path) -> Result<RunSet> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    RunSet::read_jsonl(BufReader::new(f))
}

/// Simulates a corpus and writes records plus the latents sidecar into `dir`.
pub fn simulate_to(params: &SimParams, dir: &Path) -> Result<Vec<SessionRecord>> {
    let corpus = simulator::sample_corpus(params)?;
    create_dir(dir)?;
    let records = simulator::records(&corpus);
    write_records(&dir.join("records.jsonl"), &records)?;
    let latents = dir.join("latents.jsonl");
    let mut w = create_file(&latents)?;
    simulator::write_latents_jsonl(&corpus, &mut w)?;
    finish(w, &latents)?;
    Ok(records)
}

struct Markers {
    dir: PathBuf,
}

impl Markers {
    fn done(&self, stage: Stage) -> Result<()> {
        let path = self.dir.join(format!("{}-{}.done", stage.ordinal(), stage.name()));
        fs::write(&path, "ok\n").map_err(|e| Error::io(&path, e))
    }
}

/// Runs every stage in order. On failure a `FAILED` file naming the stage is
/// left in the output directory (when it exists) and completed stages keep
/// their markers.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<PipelineOutcome, PipelineError> {
    let out = config.out.clone();
    let result = run_stages(config);
    if let Err(e) = &result {
        if out.is_dir() {
            let _ = fs::write(out.join("FAILED"), format!("stage: {}\nerror: {}\n", e.stage, e.source));
        }
    }
    result
}

fn at(stage: Stage) -> impl Fn(Error) -> PipelineError {
    move |source| PipelineError { stage, source }
}

fn run_stages(config: &PipelineConfig) -> std::result::Result<PipelineOutcome, PipelineError> {
    let mut notices = Vec::new();
    let out = config.out.clone();

    // config
    let markers = {
        let s = at(Stage::Config);
        config.validate().map_err(&s)?;
        // surface a missing credential before any data is touched
        if config.provider == ProviderKind::Remote {
            config.provider(0).map_err(&s)?;
        }
        fs::create_dir_all(&out)
            .map_err(|e| Error::Config(format!("output directory {} not writable: {e}", out.display())))
            .map_err(&s)?;
        let stages = out.join("stages");
        if stages.exists() {
            fs::remove_dir_all(&stages).map_err(|e| s(Error::io(&stages, e)))?;
        }
        let _ = fs::remove_file(out.join("FAILED"));
        create_dir(&stages).map_err(&s)?;
        fs::write(out.join("config.toml"), config.to_toml())
            .map_err(|e| Error::Config(format!("output directory {} not writable: {e}", out.display())))
            .map_err(&s)?;
        let m = Markers { dir: stages };
        m.done(Stage::Config).map_err(&s)?;
        m
    };

    // ingest
    let (records, summary) = {
        let s = at(Stage::Ingest);
        let data = out.join("data");
        create_dir(&data).map_err(&s)?;
        let (records, summary) = match &config.input {
            Some(path) => {
                let format = config
                    .input_format
                    .as_deref()
                    .map(str::parse::<Format>)
                    .transpose()
                    .map_err(&s)?;
                let (records, summary) = ingest::load_path(path, format).map_err(&s)?;
                write_records(&data.join("records.jsonl"), &records).map_err(&s)?;
                (records, summary)
            }
            None => {
                let records = simulate_to(&config.sim_params(), &data).map_err(&s)?;
                let n = records.len();
                let summary = IngestSummary { rows_read: n, accepted: n, ..Default::default() };
                (records, summary)
            }
        };
        if records.is_empty() {
            return Err(s(Error::Ingest("no valid records".into())));
        }
        write_json(&data.join("ingest_summary.json"), &summary).map_err(&s)?;
        log::info!(
            "ingest: {} rows read, {} accepted, {} invalid rating, {} empty text, {} malformed",
            summary.rows_read,
            summary.accepted,
            summary.rejected_invalid_rating,
            summary.rejected_empty_text,
            summary.rejected_malformed
        );
        markers.done(Stage::Ingest).map_err(&s)?;
        (records, summary)
    };

    // annotate
    let runs = {
        let s = at(Stage::Annotate);
        let dir = out.join("runs");
        create_dir(&dir).map_err(&s)?;
        let options = config.batch_options();
        let cache = AnnotationCache::new();
        let mut runs = Vec::new();
        for (i, run_id) in config.run_ids().iter().enumerate() {
            let provider = config.provider(i).map_err(&s)?;
            let run = run_batch(provider.as_ref(), &records, run_id, &options, Some(&cache)).map_err(&s)?;
            log::info!(
                "annotate: run {run_id} with {}: {} annotated, {} null, {} errors",
                run.provider_id,
                run.annotations.len(),
                run.null_count,
                run.error_count
            );
            write_run(&dir.join(format!("{run_id}.jsonl")), &run).map_err(&s)?;
            runs.push(run);
        }
        markers.done(Stage::Annotate).map_err(&s)?;
        runs
    };

    // evaluate
    let bundle = {
        let s = at(Stage::Evaluate);
        if runs.len() < 2 {
            let msg = "stability skipped: fewer than 2 runs".to_string();
            log::warn!("{msg}");
            notices.push(msg);
        }
        let bundle = build_bundle(&records, &runs, Some(summary), &config.analysis_options()).map_err(&s)?;
        write_json(&out.join("bundle.json"), &bundle).map_err(&s)?;
        markers.done(Stage::Evaluate).map_err(&s)?;
        bundle
    };

    // report
    {
        let s = at(Stage::Report);
        emit_reports(&bundle, config.format, &out.join("reports")).map_err(&s)?;
        emit_plotdata(&bundle, &out.join("plotdata")).map_err(&s)?;
        let artifacts = out.join("artifacts");
        create_dir(&artifacts).map_err(&s)?;
        let path = artifacts.join("calibration_map.csv");
        let mut w = create_file(&path).map_err(&s)?;
        bundle.calibration.write_csv(&mut w).map_err(&s)?;
        finish(w, &path).map_err(&s)?;
        markers.done(Stage::Report).map_err(&s)?;
    }

    Ok(PipelineOutcome { bundle, out_dir: out, notices })
}
