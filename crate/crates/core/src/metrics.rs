//! Alignment battery and derived analyses over [`EvaluationPair`]s.
//!
//! Rates are proportions in `[0, 1]`; margins of error are in percentage
//! points. Correlations of degenerate series are reported as undefined,
//! never as zero.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify_band, Aspect, Confidence, EvaluationPair, ScoreBand};

/// z for a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

/// Why a correlation could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Undefined {
    TooFewObservations,
    ConstantSeries,
}

impl std::fmt::Display for Undefined {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Undefined::TooFewObservations => f.write_str("fewer than 2 observations"),
            Undefined::ConstantSeries => f.write_str("constant series"),
        }
    }
}

pub type Correlation = std::result::Result<f64, Undefined>;

/// Pearson correlation (two-pass, centered).
pub fn pearson(x: &[f64], y: &[f64]) -> Correlation {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    let n = x.len();
    if n < 2 {
        return Err(Undefined::TooFewObservations);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Undefined::ConstantSeries);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Correlation {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Half-width of the 95% Wald interval, in percentage points.
pub fn margin_of_error(p: f64, n: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!("proportion {p} outside [0, 1]")));
    }
    if n == 0 {
        return Err(Error::domain("margin of error needs n >= 1"));
    }
    Ok(100.0 * Z95 * (p * (1.0 - p) / n as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub n: usize,
    pub exact_rate: f64,
    pub within_1_rate: f64,
    pub mae: f64,
    pub bias: f64,
    pub spearman_rho: Option<f64>,
    pub pearson_r: Option<f64>,
    /// Percentage points.
    pub moe_exact: f64,
    /// Percentage points.
    pub moe_within_1: f64,
}

pub fn alignment(pairs: &[EvaluationPair]) -> Result<AlignmentReport> {
    if pairs.is_empty() {
        return Err(Error::domain("alignment needs at least one pair"));
    }
    let n = pairs.len();
    let nf = n as f64;
    let exact = pairs.iter().filter(|p| p.delta == 0).count();
    let within = pairs.iter().filter(|p| p.abs_delta() <= 1).count();
    let abs_sum: i64 = pairs.iter().map(|p| i64::from(p.abs_delta())).sum();
    let signed_sum: i64 = pairs.iter().map(|p| i64::from(p.delta)).sum();
    let predicted: Vec<f64> = pairs.iter().map(|p| p.predicted.as_f64()).collect();
    let actual: Vec<f64> = pairs.iter().map(|p| p.actual.as_f64()).collect();
    let exact_rate = exact as f64 / nf;
    let within_1_rate = within as f64 / nf;
    Ok(AlignmentReport {
        n,
        exact_rate,
        within_1_rate,
        mae: abs_sum as f64 / nf,
        bias: signed_sum as f64 / nf,
        spearman_rho: spearman(&predicted, &actual).ok(),
        pearson_r: pearson(&predicted, &actual).ok(),
        moe_exact: margin_of_error(exact_rate, n)?,
        moe_within_1: margin_of_error(within_1_rate, n)?,
    })
}

/// Battery per self-reported score band; empty bands are omitted.
pub fn band_breakdown(pairs: &[EvaluationPair]) -> Result<BTreeMap<ScoreBand, AlignmentReport>> {
    stratify(pairs, |p| classify_band(p.actual))
}

/// Battery per confidence label; empty strata are omitted.
pub fn confidence_breakdown(
    pairs: &[EvaluationPair],
) -> Result<BTreeMap<Confidence, AlignmentReport>> {
    stratify(pairs, |p| p.confidence)
}

fn stratify<K: Ord>(
    pairs: &[EvaluationPair],
    key: impl Fn(&EvaluationPair) -> K,
) -> Result<BTreeMap<K, AlignmentReport>> {
    if pairs.is_empty() {
        return Err(Error::domain("breakdown needs at least one pair"));
    }
    let mut groups: BTreeMap<K, Vec<EvaluationPair>> = BTreeMap::new();
    for p in pairs {
        groups.entry(key(p)).or_default().push(p.clone());
    }
    groups
        .into_iter()
        .map(|(k, g)| alignment(&g).map(|r| (k, r)))
        .collect()
}

/// Summary statistics of one stratum, as published in per-score tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub n: usize,
    pub exact: f64,
    pub within_1: f64,
    pub mae: f64,
    pub bias: f64,
}

impl From<&AlignmentReport> for SummaryRow {
    fn from(r: &AlignmentReport) -> Self {
        SummaryRow {
            n: r.n,
            exact: r.exact_rate,
            within_1: r.within_1_rate,
            mae: r.mae,
            bias: r.bias,
        }
    }
}

/// Pools stratum summaries by n-weighted means. All five statistics are means,
/// so pooling disjoint strata reproduces the whole-set values.
pub fn pool_summaries(rows: &[SummaryRow]) -> Result<SummaryRow> {
    if rows.is_empty() {
        return Err(Error::domain("pool_summaries needs at least one row"));
    }
    if let Some(r) = rows.iter().find(|r| r.n == 0) {
        return Err(Error::domain(format!("row with n = 0: {r:?}")));
    }
    let total: usize = rows.iter().map(|r| r.n).sum();
    let weighted = |f: fn(&SummaryRow) -> f64| {
        rows.iter().map(|r| r.n as f64 * f(r)).sum::<f64>() / total as f64
    };
    Ok(SummaryRow {
        n: total,
        exact: weighted(|r| r.exact),
        within_1: weighted(|r| r.within_1),
        mae: weighted(|r| r.mae),
        bias: weighted(|r| r.bias),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CurveBucket {
    pub n: usize,
    pub mean_actual: Option<f64>,
}

/// Mean self-reported score per predicted value 0–10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub buckets: [CurveBucket; 11],
}

impl CalibrationCurve {
    pub fn total_n(&self) -> usize {
        self.buckets.iter().map(|b| b.n).sum()
    }
}

pub fn calibration_curve(pairs: &[EvaluationPair]) -> Result<CalibrationCurve> {
    if pairs.is_empty() {
        return Err(Error::domain("calibration curve needs at least one pair"));
    }
    let mut sums = [0u64; 11];
    let mut counts = [0usize; 11];
    for p in pairs {
        sums[p.predicted.index()] += u64::from(p.actual.value());
        counts[p.predicted.index()] += 1;
    }
    let mut buckets = [CurveBucket::default(); 11];
    for (i, b) in buckets.iter_mut().enumerate() {
        b.n = counts[i];
        b.mean_actual = (counts[i] > 0).then(|| sums[i] as f64 / counts[i] as f64);
    }
    Ok(CalibrationCurve { buckets })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCorrelation {
    pub aspect: Aspect,
    /// Pairwise-complete observations.
    pub n: usize,
    pub with_predicted: Correlation,
    pub with_overall: Correlation,
    pub with_delta: Correlation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationProfile {
    pub n: usize,
    pub predicted_vs_overall: Correlation,
    pub aspects: Vec<AspectCorrelation>,
}

/// Pearson correlations of each known aspect with predicted, overall and delta.
pub fn correlation_profile(pairs: &[EvaluationPair]) -> CorrelationProfile {
    let predicted: Vec<f64> = pairs.iter().map(|p| p.predicted.as_f64()).collect();
    let actual: Vec<f64> = pairs.iter().map(|p| p.actual.as_f64()).collect();
    let aspects = Aspect::ALL
        .iter()
        .map(|&aspect| {
            let (mut a, mut pr, mut ov, mut de) = (vec![], vec![], vec![], vec![]);
            for p in pairs {
                if let Some(r) = p.aspect_ratings.get(aspect) {
                    a.push(r.as_f64());
                    pr.push(p.predicted.as_f64());
                    ov.push(p.actual.as_f64());
                    de.push(f64::from(p.delta));
                }
            }
            AspectCorrelation {
                aspect,
                n: a.len(),
                with_predicted: pearson(&a, &pr),
                with_overall: pearson(&a, &ov),
                with_delta: pearson(&a, &de),
            }
        })
        .collect();
    CorrelationProfile {
        n: pairs.len(),
        predicted_vs_overall: pearson(&predicted, &actual),
        aspects,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DailyMeans {
    pub mean_predicted: f64,
    pub mean_actual: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTrend {
    pub series: BTreeMap<NaiveDate, DailyMeans>,
    /// Correlation of the daily mean series; absent below two dates or when
    /// either series is flat.
    pub trend_r: Option<f64>,
}

pub fn daily_trend(pairs: &[EvaluationPair]) -> DailyTrend {
    let mut acc: BTreeMap<NaiveDate, (u64, u64, usize)> = BTreeMap::new();
    for p in pairs {
        let e = acc.entry(p.game_date).or_default();
        e.0 += u64::from(p.predicted.value());
        e.1 += u64::from(p.actual.value());
        e.2 += 1;
    }
    let series: BTreeMap<NaiveDate, DailyMeans> = acc
        .into_iter()
        .map(|(d, (sp, sa, n))| {
            (
                d,
                DailyMeans {
                    mean_predicted: sp as f64 / n as f64,
                    mean_actual: sa as f64 / n as f64,
                    n,
                },
            )
        })
        .collect();
    let xs: Vec<f64> = series.values().map(|m| m.mean_predicted).collect();
    let ys: Vec<f64> = series.values().map(|m| m.mean_actual).collect();
    DailyTrend {
        trend_r: pearson(&xs, &ys).ok(),
        series,
    }
}
