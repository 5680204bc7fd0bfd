//! Fixtures and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scoregap::metrics::SummaryRow;
use scoregap::{Confidence, EvaluationPair, Rating};

pub fn date(day: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 4, 1).unwrap() + chrono::Days::new(u64::from(day))
}

pub fn pair(predicted: u8, actual: u8) -> EvaluationPair {
    EvaluationPair::new(
        "s",
        Rating::new(predicted.into()).unwrap(),
        Rating::new(actual.into()).unwrap(),
        Confidence::High,
        date(0),
    )
}

pub fn pairs_from(values: &[(u8, u8)]) -> Vec<EvaluationPair> {
    values
        .iter()
        .enumerate()
        .map(|(i, &(p, a))| {
            let mut pr = pair(p, a);
            pr.session_id = format!("s{i}");
            pr
        })
        .collect()
}

pub fn random_values(rng: &mut ChaCha8Rng, min_len: usize, max_len: usize) -> Vec<(u8, u8)> {
    let n = rng.random_range(min_len..=max_len);
    (0..n).map(|_| (rng.random_range(0..=10), rng.random_range(0..=10))).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-score rows for run p2_1: (actual, n, exact %, within-1 %, mae, bias).
pub const SCORE_LEVEL_ROWS: [(u8, usize, f64, f64, f64, f64); 11] = [
    (0, 234, 12.8, 34.2, 1.86, 1.86),
    (1, 185, 17.8, 68.1, 1.34, 1.34),
    (2, 249, 36.1, 82.7, 0.89, 0.36),
    (3, 268, 39.6, 85.1, 0.81, -0.07),
    (4, 267, 24.0, 66.3, 1.17, -0.77),
    (5, 603, 12.4, 39.6, 1.72, -1.43),
    (6, 540, 12.4, 34.4, 2.11, -1.96),
    (7, 1144, 23.3, 45.5, 2.01, -1.82),
    (8, 1751, 26.8, 57.7, 1.79, -1.54),
    (9, 1547, 29.9, 69.3, 1.44, -1.19),
    (10, 3187, 61.7, 89.5, 0.52, -0.48),
];

pub fn score_level_summaries() -> Vec<SummaryRow> {
    SCORE_LEVEL_ROWS
        .iter()
        .map(|&(_, n, exact, within, mae, bias)| SummaryRow {
            n,
            exact: exact / 100.0,
            within_1: within / 100.0,
            mae,
            bias,
        })
        .collect()
}

// ---- oracles: deliberately naive, written without looking at the library ----

pub struct OracleAlignment {
    pub exact: f64,
    pub within_1: f64,
    pub mae: f64,
    pub bias: f64,
}

pub fn oracle_alignment(values: &[(u8, u8)]) -> OracleAlignment {
    let n = values.len() as f64;
    let mut exact = 0.0;
    let mut within = 0.0;
    let mut abs = 0.0;
    let mut signed = 0.0;
    for &(p, a) in values {
        let d = f64::from(p) - f64::from(a);
        if d == 0.0 {
            exact += 1.0;
        }
        if d.abs() <= 1.0 {
            within += 1.0;
        }
        abs += d.abs();
        signed += d;
    }
    OracleAlignment { exact: exact / n, within_1: within / n, mae: abs / n, bias: signed / n }
}

/// Textbook product-moment correlation; None when undefined.
pub fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Rank of each value as 1 + (#smaller) + (#ties - 1) / 2, computed quadratically.
pub fn oracle_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let smaller = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

pub fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    oracle_pearson(&oracle_ranks(x), &oracle_ranks(y))
}

/// Half the L1 distance between two normalized 0-10 histograms.
pub fn oracle_tvd(a: &[u8], b: &[u8]) -> f64 {
    let mut d = 0.0;
    for score in 0..=10u8 {
        let pa = a.iter().filter(|&&v| v == score).count() as f64 / a.len() as f64;
        let pb = b.iter().filter(|&&v| v == score).count() as f64 / b.len() as f64;
        d += (pa - pb).abs();
    }
    d / 2.0
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}
