//! Monotone lookup from predicted score to expected self-reported score.
//!
//! Bucket means are pooled with weighted pool-adjacent-violators, then empty
//! buckets are interpolated from their fitted neighbors. Weighted pooling
//! preserves the bucket-weighted mean, so the in-sample calibrated bias is zero
//! up to float rounding.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::calibration_curve;
use crate::model::{EvaluationPair, Rating};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationMap {
    pub expected: [f64; 11],
    pub bucket_n: [usize; 11],
    pub training_n: usize,
}

impl CalibrationMap {
    pub fn identity() -> Self {
        CalibrationMap {
            expected: std::array::from_fn(|i| i as f64),
            bucket_n: [0; 11],
            training_n: 0,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.expected.windows(2).all(|w| w[0] <= w[1])
    }

    /// 11 rows: `predicted,expected_actual,n`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["predicted", "expected_actual", "n"])?;
        for i in 0..11 {
            w.write_record([
                i.to_string(),
                format!("{}", self.expected[i]),
                self.bucket_n[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<calibration csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            predicted: usize,
            expected_actual: f64,
            n: usize,
        }
        let mut map = CalibrationMap { expected: [f64::NAN; 11], bucket_n: [0; 11], training_n: 0 };
        let mut seen = [false; 11];
        for row in csv::Reader::from_reader(input).deserialize::<Row>() {
            let row = row?;
            if row.predicted > 10 || seen[row.predicted] {
                return Err(Error::Config(format!(
                    "calibration map: bad or repeated predicted value {}",
                    row.predicted
                )));
            }
            if !(0.0..=10.0).contains(&row.expected_actual) {
                return Err(Error::Config(format!(
                    "calibration map: expected_actual {} outside [0, 10]",
                    row.expected_actual
                )));
            }
            seen[row.predicted] = true;
            map.expected[row.predicted] = row.expected_actual;
            map.bucket_n[row.predicted] = row.n;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("calibration map needs exactly 11 rows (0-10)".into()));
        }
        if !map.is_monotone() {
            return Err(Error::Config("calibration map is not monotone".into()));
        }
        map.training_n = map.bucket_n.iter().sum();
        Ok(map)
    }
}

/// Weighted pool-adjacent-violators; returns one fitted value per input.
pub fn pava(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // blocks of (weighted mean, total weight, length)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            blocks.push(((m1 * w1 + m2 * w2) / (w1 + w2), w1 + w2, l1 + l2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

pub fn fit_calibration(pairs: &[EvaluationPair]) -> Result<CalibrationMap> {
    let curve = calibration_curve(pairs)?;
    let filled: Vec<usize> = (0..11).filter(|&i| curve.buckets[i].n > 0).collect();
    let means: Vec<f64> = filled
        .iter()
        .map(|&i| curve.buckets[i].mean_actual.expect("nonempty bucket"))
        .collect();
    let weights: Vec<f64> = filled.iter().map(|&i| curve.buckets[i].n as f64).collect();
    let fitted = pava(&means, &weights);

    let mut expected = [0.0; 11];
    for (k, &i) in filled.iter().enumerate() {
        expected[i] = fitted[k];
    }
    for (i, slot) in expected.iter_mut().enumerate() {
        if curve.buckets[i].n > 0 {
            continue;
        }
        let below = filled.iter().rposition(|&j| j < i);
        let above = filled.iter().position(|&j| j > i);
        *slot = match (below, above) {
            (Some(b), Some(a)) => {
                let (x0, x1) = (filled[b] as f64, filled[a] as f64);
                let t = (i as f64 - x0) / (x1 - x0);
                fitted[b] + t * (fitted[a] - fitted[b])
            }
            (Some(b), None) => fitted[b],
            (None, Some(a)) => fitted[a],
            (None, None) => unreachable!("calibration_curve rejects empty input"),
        };
    }
    Ok(CalibrationMap {
        expected: expected.map(|v| v.clamp(0.0, 10.0)),
        bucket_n: curve.buckets.map(|b| b.n),
        training_n: pairs.len(),
    })
}

/// One map per team, for callers that opt out of the pooled default.
pub fn fit_calibration_per_team(pairs: &[EvaluationPair]) -> Result<BTreeMap<String, CalibrationMap>> {
    if pairs.is_empty() {
        return Err(Error::domain("calibration needs at least one pair"));
    }
    let mut by_team: BTreeMap<String, Vec<EvaluationPair>> = BTreeMap::new();
    for p in pairs {
        by_team.entry(p.team_id.clone()).or_default().push(p.clone());
    }
    by_team
        .into_iter()
        .map(|(team, ps)| fit_calibration(&ps).map(|m| (team, m)))
        .collect()
}

pub fn apply_calibration(map: &CalibrationMap, predicted: i64) -> Result<f64> {
    let r = Rating::new(predicted)?;
    Ok(map.expected[r.index()])
}

/// Mean of calibrated prediction minus actual.
pub fn calibrated_bias(pairs: &[EvaluationPair], map: &CalibrationMap) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::domain("calibrated bias needs at least one pair"));
    }
    let sum: f64 = pairs
        .iter()
        .map(|p| map.expected[p.predicted.index()] - p.actual.as_f64())
        .sum();
    Ok(sum / pairs.len() as f64)
}
