//! Divergence taxonomy for individual pairs and the dated predicted-minus-actual gap.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EvaluationPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceLabel {
    CleanAlignment,
    FragileSatisfaction,
    TextDominatedFriction,
    ReverseDivergence,
    ModerateDivergence,
}

impl DivergenceLabel {
    pub const ALL: [DivergenceLabel; 5] = [
        DivergenceLabel::CleanAlignment,
        DivergenceLabel::FragileSatisfaction,
        DivergenceLabel::TextDominatedFriction,
        DivergenceLabel::ReverseDivergence,
        DivergenceLabel::ModerateDivergence,
    ];

    pub fn id(self) -> &'static str {
        match self {
            DivergenceLabel::CleanAlignment => "clean_alignment",
            DivergenceLabel::FragileSatisfaction => "fragile_satisfaction",
            DivergenceLabel::TextDominatedFriction => "text_dominated_friction",
            DivergenceLabel::ReverseDivergence => "reverse_divergence",
            DivergenceLabel::ModerateDivergence => "moderate_divergence",
        }
    }
}

impl fmt::Display for DivergenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Cut points for the numeric classification. Ratings compare inclusively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceThresholds {
    /// |delta| at or below this is clean alignment.
    pub clean_max_abs_delta: u8,
    /// Actual at or above this counts as a high score.
    pub high_actual_min: u8,
    /// Predicted at or below this, with a high actual, is text-dominated friction.
    pub friction_predicted_max: u8,
    /// Predicted at or below this, with a high actual, is fragile satisfaction.
    pub fragile_predicted_max: u8,
    /// Actual at or below this counts as a low score.
    pub low_actual_max: u8,
    /// Predicted at or above this, with a low actual, is reverse divergence.
    pub reverse_predicted_min: u8,
}

impl Default for DivergenceThresholds {
    fn default() -> Self {
        DivergenceThresholds {
            clean_max_abs_delta: 1,
            high_actual_min: 9,
            friction_predicted_max: 2,
            fragile_predicted_max: 6,
            low_actual_max: 2,
            reverse_predicted_min: 7,
        }
    }
}

pub fn classify_divergence(pair: &EvaluationPair, t: &DivergenceThresholds) -> DivergenceLabel {
    let (p, a) = (pair.predicted.value(), pair.actual.value());
    if pair.abs_delta() <= t.clean_max_abs_delta {
        DivergenceLabel::CleanAlignment
    } else if a >= t.high_actual_min && p <= t.friction_predicted_max {
        DivergenceLabel::TextDominatedFriction
    } else if a >= t.high_actual_min && p <= t.fragile_predicted_max {
        DivergenceLabel::FragileSatisfaction
    } else if a <= t.low_actual_max && p >= t.reverse_predicted_min {
        DivergenceLabel::ReverseDivergence
    } else {
        DivergenceLabel::ModerateDivergence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelCount {
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceIncidence {
    pub n: usize,
    /// Every label is present, including those with zero count.
    pub labels: BTreeMap<DivergenceLabel, LabelCount>,
    pub high_n: usize,
    /// Fragile pairs over pairs with a high actual; absent when there are none.
    pub fragile_share_among_high: Option<f64>,
}

pub fn divergence_incidence(
    pairs: &[EvaluationPair],
    t: &DivergenceThresholds,
) -> Result<DivergenceIncidence> {
    if pairs.is_empty() {
        return Err(Error::domain("divergence incidence needs at least one pair"));
    }
    let mut counts: BTreeMap<DivergenceLabel, usize> =
        DivergenceLabel::ALL.iter().map(|&l| (l, 0)).collect();
    let mut high_n = 0;
    let mut fragile_high = 0;
    for p in pairs {
        let label = classify_divergence(p, t);
        *counts.get_mut(&label).expect("all labels seeded") += 1;
        if p.actual.value() >= t.high_actual_min {
            high_n += 1;
            fragile_high += usize::from(label == DivergenceLabel::FragileSatisfaction);
        }
    }
    let n = pairs.len();
    Ok(DivergenceIncidence {
        n,
        labels: counts
            .into_iter()
            .map(|(l, c)| (l, LabelCount { count: c, share: c as f64 / n as f64 }))
            .collect(),
        high_n,
        fragile_share_among_high: (high_n > 0).then(|| fragile_high as f64 / high_n as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub date: NaiveDate,
    pub n: usize,
    pub mean_delta: f64,
    /// Pooled mean delta over pairs dated within the trailing window.
    pub rolling_mean_delta: f64,
    pub alert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub window_days: u32,
    pub alert_threshold: f64,
    pub points: Vec<GapPoint>,
}

impl GapSeries {
    pub fn alert_dates(&self) -> Vec<NaiveDate> {
        self.points.iter().filter(|p| p.alert).map(|p| p.date).collect()
    }
}

pub const DEFAULT_GAP_WINDOW: u32 = 7;
pub const DEFAULT_ALERT_THRESHOLD: f64 = 1.0;

/// Daily mean delta plus a trailing calendar window (`window` days ending on
/// the date, inclusive). A date alerts when its rolling mean is at or below
/// `-alert_threshold`; positive gaps never alert.
pub fn gap_series(pairs: &[EvaluationPair], window: u32, alert_threshold: f64) -> Result<GapSeries> {
    if window == 0 {
        return Err(Error::domain("gap window must be at least 1 day"));
    }
    if !(alert_threshold.is_finite() && alert_threshold >= 0.0) {
        return Err(Error::domain(format!("alert threshold {alert_threshold} must be >= 0")));
    }
    let mut daily: BTreeMap<NaiveDate, (i64, usize)> = BTreeMap::new();
    for p in pairs {
        let e = daily.entry(p.game_date).or_default();
        e.0 += i64::from(p.delta);
        e.1 += 1;
    }
    let points = daily
        .iter()
        .map(|(&date, &(sum, n))| {
            let start = date
                .checked_sub_days(Days::new(u64::from(window - 1)))
                .unwrap_or(NaiveDate::MIN);
            let (wsum, wn) = daily
                .range(start..=date)
                .fold((0i64, 0usize), |(s, c), (_, &(ds, dn))| (s + ds, c + dn));
            let rolling = wsum as f64 / wn as f64;
            GapPoint {
                date,
                n,
                mean_delta: sum as f64 / n as f64,
                rolling_mean_delta: rolling,
                alert: rolling <= -alert_threshold,
            }
        })
        .collect();
    Ok(GapSeries { window_days: window, alert_threshold, points })
}
