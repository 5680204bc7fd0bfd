//! Collected analysis outputs and their table and plot-data renderings.
//!
//! Percentages are written with one decimal and rating statistics with two;
//! everything upstream keeps full precision.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotate::RunSet;
use crate::calibration::{calibrated_bias, fit_calibration, CalibrationMap};
use crate::divergence::{
    divergence_incidence, gap_series, DivergenceIncidence, DivergenceLabel, DivergenceThresholds,
    GapSeries,
};
use crate::error::{Error, Result};
use crate::ingest::IngestSummary;
use crate::metrics::{
    alignment, band_breakdown, calibration_curve, confidence_breakdown, correlation_profile,
    daily_trend, AlignmentReport, CalibrationCurve, Correlation, CorrelationProfile, DailyTrend,
};
use crate::model::{Confidence, ScoreBand, SessionRecord};
use crate::stability::{stability, StabilityReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub provider_id: String,
    pub attempted: usize,
    pub null_count: usize,
    pub error_count: usize,
    pub null_rate: f64,
    /// Absent when the run produced no pairs.
    pub alignment: Option<AlignmentReport>,
    /// Predicted score counts 0-10.
    pub distribution: [usize; 11],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub thresholds: DivergenceThresholds,
    pub gap_window: u32,
    pub alert_threshold: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            thresholds: DivergenceThresholds::default(),
            gap_window: crate::divergence::DEFAULT_GAP_WINDOW,
            alert_threshold: crate::divergence::DEFAULT_ALERT_THRESHOLD,
        }
    }
}

/// Everything one evaluation produces. Stratified analyses use the first run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub ingest: Option<IngestSummary>,
    pub options: AnalysisOptions,
    pub primary_run: String,
    pub runs: Vec<RunSummary>,
    /// Self-reported score counts 0-10 over all records.
    pub actual_distribution: [usize; 11],
    pub bands: BTreeMap<ScoreBand, AlignmentReport>,
    pub confidence: BTreeMap<Confidence, AlignmentReport>,
    pub curve: CalibrationCurve,
    pub correlations: CorrelationProfile,
    pub trend: DailyTrend,
    /// Absent with fewer than two runs.
    pub stability: Option<StabilityReport>,
    pub divergence: DivergenceIncidence,
    pub gap: GapSeries,
    pub calibration: CalibrationMap,
    pub calibrated_bias: f64,
}

impl ReportBundle {
    pub fn primary(&self) -> &RunSummary {
        &self.runs[0]
    }
}

/// Runs every analysis over the records and annotation runs.
pub fn build_bundle(
    records: &[SessionRecord],
    runs: &[RunSet],
    ingest: Option<IngestSummary>,
    options: &AnalysisOptions,
) -> Result<ReportBundle> {
    let first = runs
        .first()
        .ok_or_else(|| Error::domain("evaluation needs at least one run"))?;
    let mut ids = std::collections::BTreeSet::new();
    if let Some(dup) = runs.iter().find(|r| !ids.insert(r.run_id.as_str())) {
        return Err(Error::domain(format!("duplicate run id {:?}", dup.run_id)));
    }
    let pairs = first.pairs(records);
    if pairs.is_empty() {
        return Err(Error::domain(format!("run {} has no usable predictions", first.run_id)));
    }
    let summaries = runs
        .iter()
        .map(|run| {
            let run_pairs = run.pairs(records);
            let mut distribution = [0usize; 11];
            for (_, r) in run.predictions() {
                distribution[r.index()] += 1;
            }
            Ok(RunSummary {
                run_id: run.run_id.clone(),
                provider_id: run.provider_id.clone(),
                attempted: run.attempted(),
                null_count: run.null_count,
                error_count: run.error_count,
                null_rate: run.null_rate(),
                alignment: if run_pairs.is_empty() { None } else { Some(alignment(&run_pairs)?) },
                distribution,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut actual_distribution = [0usize; 11];
    for r in records {
        actual_distribution[r.overall_rating.index()] += 1;
    }
    let calibration = fit_calibration(&pairs)?;
    Ok(ReportBundle {
        ingest,
        options: *options,
        primary_run: first.run_id.clone(),
        runs: summaries,
        actual_distribution,
        bands: band_breakdown(&pairs)?,
        confidence: confidence_breakdown(&pairs)?,
        curve: calibration_curve(&pairs)?,
        correlations: correlation_profile(&pairs),
        trend: daily_trend(&pairs),
        stability: if runs.len() >= 2 { Some(stability(runs)?) } else { None },
        divergence: divergence_incidence(&pairs, &options.thresholds)?,
        gap: gap_series(&pairs, options.gap_window, options.alert_threshold)?,
        calibrated_bias: calibrated_bias(&pairs, &calibration)?,
        calibration,
    })
}

/// A rendered table: header plus rows of already-formatted cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub title: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::domain(format!("csv buffer: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("## {}\n\n", self.title);
        let _ = writeln!(out, "| {} |", self.header.join(" | "));
        let _ = writeln!(out, "|{}", self.header.iter().map(|_| "---|").collect::<String>());
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| if c.is_empty() { "n/a".to_string() } else { c.replace('|', "\\|") })
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => Ok(self.to_markdown()),
        }
    }
}

pub fn pct(p: f64) -> String {
    format!("{:.1}", 100.0 * p)
}

pub fn stat(x: f64) -> String {
    format!("{x:.2}")
}

fn opt_stat(x: Option<f64>) -> String {
    x.map(stat).unwrap_or_default()
}

fn corr(c: &Correlation) -> String {
    opt_stat(c.as_ref().ok().copied())
}

const BATTERY_HEADER: [&str; 9] = [
    "n",
    "exact_pct",
    "within_1_pct",
    "mae",
    "bias",
    "spearman_rho",
    "pearson_r",
    "moe_exact_pp",
    "moe_within_1_pp",
];

fn battery_cells(r: &AlignmentReport) -> Vec<String> {
    vec![
        r.n.to_string(),
        pct(r.exact_rate),
        pct(r.within_1_rate),
        stat(r.mae),
        stat(r.bias),
        opt_stat(r.spearman_rho),
        opt_stat(r.pearson_r),
        stat(r.moe_exact),
        stat(r.moe_within_1),
    ]
}

fn with_key(key: &'static str, rest: &[&'static str]) -> Vec<&'static str> {
    std::iter::once(key).chain(rest.iter().copied()).collect()
}

pub fn alignment_table(b: &ReportBundle) -> Table {
    let mut header = with_key("run", &BATTERY_HEADER);
    header.extend(["null_count", "error_count"]);
    let rows = b
        .runs
        .iter()
        .map(|run| {
            let mut row = vec![run.run_id.clone()];
            match &run.alignment {
                Some(a) => row.extend(battery_cells(a)),
                None => row.extend(std::iter::once("0".to_string()).chain((1..9).map(|_| String::new()))),
            }
            row.push(run.null_count.to_string());
            row.push(run.error_count.to_string());
            row
        })
        .collect();
    Table { name: "alignment", title: "Alignment by run", header, rows }
}

pub fn bands_table(b: &ReportBundle) -> Table {
    let rows = b
        .bands
        .iter()
        .map(|(band, r)| {
            let mut row = vec![band.label().to_string()];
            row.extend(battery_cells(r));
            row
        })
        .collect();
    Table {
        name: "bands",
        title: "Alignment by self-reported score band",
        header: with_key("band", &BATTERY_HEADER),
        rows,
    }
}

pub fn confidence_table(b: &ReportBundle) -> Table {
    let rows = b
        .confidence
        .iter()
        .map(|(c, r)| {
            let mut row = vec![c.label().to_string()];
            row.extend(battery_cells(r));
            row
        })
        .collect();
    Table {
        name: "confidence",
        title: "Alignment by confidence label",
        header: with_key("confidence", &BATTERY_HEADER),
        rows,
    }
}

pub fn stability_table(b: &ReportBundle) -> Table {
    let rows = match &b.stability {
        Some(s) => vec![
            vec!["runs".into(), s.runs.to_string()],
            vec!["shared_sessions".into(), s.shared_n.to_string()],
            vec!["excluded_sessions".into(), s.excluded_n.to_string()],
            vec!["pairwise_exact_pct".into(), pct(s.pairwise_exact)],
            vec!["pairwise_within_1_pct".into(), pct(s.pairwise_within_1)],
            vec!["pairwise_pearson_r".into(), opt_stat(s.pairwise_pearson)],
            vec!["all_runs_identical_pct".into(), pct(s.all_identical_rate)],
            vec!["pairwise_tvd".into(), format!("{:.3}", s.pairwise_tvd)],
        ],
        None => vec![vec!["skipped".into(), "fewer than 2 runs".into()]],
    };
    Table {
        name: "stability",
        title: "Run-to-run stability",
        header: vec!["metric", "value"],
        rows,
    }
}

pub fn correlations_table(b: &ReportBundle) -> Table {
    let mut rows = vec![vec![
        "overall".to_string(),
        b.correlations.n.to_string(),
        corr(&b.correlations.predicted_vs_overall),
        String::from("1.00"),
        String::new(),
    ]];
    rows.extend(b.correlations.aspects.iter().map(|a| {
        vec![
            a.aspect.name().to_string(),
            a.n.to_string(),
            corr(&a.with_predicted),
            corr(&a.with_overall),
            corr(&a.with_delta),
        ]
    }));
    Table {
        name: "correlations",
        title: "Aspect correlation profile",
        header: vec!["aspect", "n", "corr_with_predicted", "corr_with_overall", "corr_with_delta"],
        rows,
    }
}

pub fn divergence_table(b: &ReportBundle) -> Table {
    let mut rows: Vec<Vec<String>> = DivergenceLabel::ALL
        .iter()
        .map(|l| {
            let c = b.divergence.labels[l];
            vec![l.id().to_string(), c.count.to_string(), pct(c.share)]
        })
        .collect();
    let fragile = b.divergence.labels[&DivergenceLabel::FragileSatisfaction].count;
    rows.push(vec![
        "fragile_among_high".into(),
        fragile.to_string(),
        b.divergence.fragile_share_among_high.map(pct).unwrap_or_default(),
    ]);
    Table {
        name: "divergence",
        title: "Divergence incidence",
        header: vec!["label", "count", "share_pct"],
        rows,
    }
}

pub fn calibration_table(b: &ReportBundle) -> Table {
    let rows = (0..11)
        .map(|i| {
            vec![
                i.to_string(),
                stat(b.calibration.expected[i]),
                b.calibration.bucket_n[i].to_string(),
            ]
        })
        .collect();
    Table {
        name: "calibration_map",
        title: "Calibration map",
        header: vec!["predicted", "expected_actual", "n"],
        rows,
    }
}

pub fn gap_table(b: &ReportBundle) -> Table {
    let rows = b
        .gap
        .points
        .iter()
        .map(|p| {
            vec![
                p.date.to_string(),
                p.n.to_string(),
                stat(p.mean_delta),
                stat(p.rolling_mean_delta),
                if p.alert { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    Table {
        name: "gap_series",
        title: "Daily predicted minus self-reported gap",
        header: vec!["date", "n", "mean_delta", "rolling_mean_delta", "alert"],
        rows,
    }
}

pub fn report_tables(b: &ReportBundle) -> Vec<Table> {
    vec![
        alignment_table(b),
        bands_table(b),
        confidence_table(b),
        stability_table(b),
        correlations_table(b),
        divergence_table(b),
        calibration_table(b),
        gap_table(b),
    ]
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// One file per table in `dir`, named `<table>.<csv|md>`.
pub fn emit_reports(b: &ReportBundle, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    report_tables(b)
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.{}", t.name, format.extension()));
            write_file(&path, &t.render(format)?)?;
            Ok(path)
        })
        .collect()
}

// Plot data keeps full precision (shortest round-trip form) so shares sum to 1.
fn fixed(x: f64) -> String {
    x.to_string()
}

pub fn distribution_plot(b: &ReportBundle) -> Table {
    let mut rows = Vec::new();
    let sources = b
        .runs
        .iter()
        .map(|r| (r.run_id.as_str(), &r.distribution))
        .chain(std::iter::once(("actual", &b.actual_distribution)));
    for (source, counts) in sources {
        let total: usize = counts.iter().sum();
        for (score, &c) in counts.iter().enumerate() {
            let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            rows.push(vec![source.to_string(), score.to_string(), c.to_string(), fixed(share)]);
        }
    }
    Table {
        name: "score_distribution",
        title: "Predicted and self-reported score distributions",
        header: vec!["source", "score", "count", "share"],
        rows,
    }
}

pub fn curve_plot(b: &ReportBundle) -> Table {
    let rows = b
        .curve
        .buckets
        .iter()
        .enumerate()
        .map(|(i, bucket)| {
            vec![
                i.to_string(),
                bucket.n.to_string(),
                bucket.mean_actual.map(fixed).unwrap_or_default(),
                fixed(b.calibration.expected[i]),
            ]
        })
        .collect();
    Table {
        name: "calibration_curve",
        title: "Mean self-reported score per predicted score",
        header: vec!["predicted", "n", "mean_actual", "calibrated"],
        rows,
    }
}

pub fn aspect_plot(b: &ReportBundle) -> Table {
    let c = |x: &Correlation| x.as_ref().ok().map(|v| fixed(*v)).unwrap_or_default();
    let rows = b
        .correlations
        .aspects
        .iter()
        .map(|a| {
            vec![
                a.aspect.name().to_string(),
                a.n.to_string(),
                c(&a.with_predicted),
                c(&a.with_overall),
                c(&a.with_delta),
            ]
        })
        .collect();
    Table {
        name: "aspect_profile",
        title: "Aspect correlation profile",
        header: vec!["aspect", "n", "corr_with_predicted", "corr_with_overall", "corr_with_delta"],
        rows,
    }
}

pub fn gap_plot(b: &ReportBundle) -> Table {
    let rows = b
        .gap
        .points
        .iter()
        .map(|p| {
            vec![
                p.date.to_string(),
                p.n.to_string(),
                fixed(p.mean_delta),
                fixed(p.rolling_mean_delta),
                u8::from(p.alert).to_string(),
            ]
        })
        .collect();
    Table {
        name: "gap_series",
        title: "Gap series",
        header: vec!["date", "n", "mean_delta", "rolling_mean_delta", "alert"],
        rows,
    }
}

/// Plot-ready CSVs in `dir`.
pub fn emit_plotdata(b: &ReportBundle, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    [distribution_plot(b), curve_plot(b), aspect_plot(b), gap_plot(b)]
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.csv", t.name));
            write_file(&path, &t.to_csv()?)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AspectRatings, Rating};
    use chrono::NaiveDate;

    fn fixture(preds: &[(u8, u8)]) -> (Vec<SessionRecord>, RunSet) {
        let records: Vec<_> = preds
            .iter()
            .enumerate()
            .map(|(i, &(_, a))| {
                SessionRecord::new(
                    format!("s{i}"),
                    "t",
                    NaiveDate::from_ymd_opt(2025, 4, 1 + (i as u32 % 3)).unwrap(),
                    "text",
                    Rating::new(i64::from(a)).unwrap(),
                    AspectRatings::new(),
                )
                .unwrap()
            })
            .collect();
        let run = RunSet::from_predictions(
            "run_1",
            preds.iter().enumerate().map(|(i, &(p, _))| (format!("s{i}"), Some(p))),
        );
        (records, run)
    }

    #[test]
    fn identity_alignment_row() {
        let (records, run) = fixture(&[(3, 3), (7, 7), (9, 9), (10, 10)]);
        let b = build_bundle(&records, &[run], None, &AnalysisOptions::default()).unwrap();
        let t = alignment_table(&b);
        assert_eq!(&t.rows[0][2..6], ["100.0", "100.0", "0.00", "0.00"]);
        assert_eq!(stability_table(&b).rows[0][0], "skipped");
    }

    #[test]
    fn curve_has_eleven_rows_and_shares_sum() {
        let (records, run) = fixture(&[(3, 4), (7, 8), (9, 9), (9, 10), (2, 2)]);
        assert!(build_bundle(&records, &[run.clone(), run.clone()], None, &AnalysisOptions::default()).is_err());
        let mut second = run.clone();
        second.run_id = "run_2".into();
        let b = build_bundle(&records, &[run, second], None, &AnalysisOptions::default()).unwrap();
        assert_eq!(curve_plot(&b).rows.len(), 11);
        let dist = distribution_plot(&b);
        for source in ["run_1", "actual"] {
            let s: f64 = dist
                .rows
                .iter()
                .filter(|r| r[0] == source)
                .map(|r| r[3].parse::<f64>().unwrap())
                .sum();
            assert!((s - 1.0).abs() < 1e-5, "{source} {s}");
        }
    }

    #[test]
    fn markdown_shape() {
        let (records, run) = fixture(&[(3, 4), (7, 8)]);
        let b = build_bundle(&records, &[run], None, &AnalysisOptions::default()).unwrap();
        let md = bands_table(&b).to_markdown();
        assert!(md.starts_with("## Alignment by self-reported score band\n\n| band | n |"));
        assert_eq!(md.lines().filter(|l| l.starts_with("| ")).count(), 3);
    }

    #[test]
    fn bundle_json_round_trip() {
        let (records, run) = fixture(&[(3, 4), (7, 8), (9, 9), (5, 5)]);
        let mut second = run.clone();
        second.run_id = "run_2".into();
        let b = build_bundle(&records, &[run, second], None, &AnalysisOptions::default()).unwrap();
        let json = serde_json::to_string(&b).unwrap();
        let back: ReportBundle = serde_json::from_str(&json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn format_parse() {
        assert_eq!("csv".parse::<ReportFormat>().unwrap(), ReportFormat::Csv);
        assert_eq!("markdown".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
        assert!("html".parse::<ReportFormat>().is_err());
    }

    #[test]
    fn unwritable_destination_names_path() {
        let (records, run) = fixture(&[(3, 4)]);
        let b = build_bundle(&records, &[run], None, &AnalysisOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_reports(&b, ReportFormat::Csv, &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
