//! Shared domain types: ratings, session records, annotations, evaluation
//! pairs and score bands.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An integer rating on the 0–10 survey scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i64", into = "u8")]
pub struct Rating(u8);

impl Rating {
    pub const MIN: Rating = Rating(0);
    pub const MAX: Rating = Rating(10);

    pub fn new(value: i64) -> Result<Self> {
        if (0..=10).contains(&value) {
            Ok(Rating(value as u8))
        } else {
            Err(Error::domain(format!("rating {value} outside 0..=10")))
        }
    }

    /// Rounds half away from zero and clamps into the scale.
    pub fn clamped(value: f64) -> Self {
        let v = if value.is_nan() { 0.0 } else { value.round() };
        Rating(v.clamp(0.0, 10.0) as u8)
    }

    pub fn value(self) -> u8 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0)
    }

    /// Index into an 11-slot per-score array.
    pub fn index(self) -> usize {
        usize::from(self.0)
    }

    pub fn all() -> impl Iterator<Item = Rating> {
        (0..=10u8).map(Rating)
    }
}

impl TryFrom<i64> for Rating {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        Rating::new(value)
    }
}

impl From<Rating> for u8 {
    fn from(r: Rating) -> u8 {
        r.0
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The fixed set of experience aspects rated on the survey.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aspect {
    Staff,
    Concessions,
    Entertainment,
    Seatview,
    Merchandise,
    Parking,
    ParkingExit,
}

impl Aspect {
    pub const ALL: [Aspect; 7] = [
        Aspect::Staff,
        Aspect::Concessions,
        Aspect::Entertainment,
        Aspect::Seatview,
        Aspect::Merchandise,
        Aspect::Parking,
        Aspect::ParkingExit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Aspect::Staff => "staff",
            Aspect::Concessions => "concessions",
            Aspect::Entertainment => "entertainment",
            Aspect::Seatview => "seatview",
            Aspect::Merchandise => "merchandise",
            Aspect::Parking => "parking",
            Aspect::ParkingExit => "parking_exit",
        }
    }
}

impl FromStr for Aspect {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Aspect::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::domain(format!("unknown aspect {s:?}")))
    }
}

impl fmt::Display for Aspect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Aspect ratings for one session. Absent aspects are simply missing from the
/// maps; a missing rating is never stored as zero. Serializes as one flat
/// name-to-rating object, the same shape ingestion reads.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, Rating>", from = "BTreeMap<String, Rating>")]
pub struct AspectRatings {
    known: BTreeMap<Aspect, Rating>,
    /// Aspects outside the fixed set, carried through untouched.
    extra: BTreeMap<String, Rating>,
}

impl From<AspectRatings> for BTreeMap<String, Rating> {
    fn from(a: AspectRatings) -> Self {
        let mut flat = a.extra;
        flat.extend(a.known.into_iter().map(|(k, v)| (k.name().to_string(), v)));
        flat
    }
}

impl From<BTreeMap<String, Rating>> for AspectRatings {
    fn from(flat: BTreeMap<String, Rating>) -> Self {
        let mut a = AspectRatings::new();
        for (name, r) in flat {
            a.insert(&name, r);
        }
        a
    }
}

impl AspectRatings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts by name; unknown names land in the pass-through map.
    pub fn insert(&mut self, name: &str, rating: Rating) {
        match name.parse::<Aspect>() {
            Ok(aspect) => {
                self.known.insert(aspect, rating);
            }
            Err(_) => {
                self.extra.insert(name.to_string(), rating);
            }
        }
    }

    pub fn set(&mut self, aspect: Aspect, rating: Rating) {
        self.known.insert(aspect, rating);
    }

    pub fn get(&self, aspect: Aspect) -> Option<Rating> {
        self.known.get(&aspect).copied()
    }

    pub fn known(&self) -> impl Iterator<Item = (Aspect, Rating)> + '_ {
        self.known.iter().map(|(a, r)| (*a, *r))
    }

    pub fn extra(&self) -> &BTreeMap<String, Rating> {
        &self.extra
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty() && self.extra.is_empty()
    }
}

/// One respondent's free text plus self-reported ratings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub team_id: String,
    pub game_date: NaiveDate,
    pub text: String,
    pub overall_rating: Rating,
    #[serde(rename = "aspects", default)]
    pub aspect_ratings: AspectRatings,
}

impl SessionRecord {
    /// Builds a record, rejecting whitespace-only text.
    pub fn new(
        session_id: impl Into<String>,
        team_id: impl Into<String>,
        game_date: NaiveDate,
        text: impl Into<String>,
        overall_rating: Rating,
        aspect_ratings: AspectRatings,
    ) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::domain("session text is empty"));
        }
        Ok(SessionRecord {
            session_id: session_id.into(),
            team_id: team_id.into(),
            game_date,
            text,
            overall_rating,
            aspect_ratings,
        })
    }
}

/// Confidence label attached to a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Confidence {
    High,
    Medium,
    Low,
}

impl Confidence {
    pub const ALL: [Confidence; 3] = [Confidence::High, Confidence::Medium, Confidence::Low];

    pub fn label(self) -> &'static str {
        match self {
            Confidence::High => "High",
            Confidence::Medium => "Medium",
            Confidence::Low => "Low",
        }
    }
}

impl FromStr for Confidence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "High" => Ok(Confidence::High),
            "Medium" => Ok(Confidence::Medium),
            "Low" => Ok(Confidence::Low),
            other => Err(Error::InvalidPayload(format!(
                "confidence {other:?} is not one of High, Medium, Low"
            ))),
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// The non-null part of an annotation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub rating: Rating,
    pub confidence: Confidence,
    pub evidence: String,
}

/// Provider output for one session. `None` is the legal all-null outcome:
/// the provider found too little evidence to infer a rating.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation(pub Option<Prediction>);

impl Annotation {
    pub fn null() -> Self {
        Annotation(None)
    }

    pub fn predicted(rating: Rating, confidence: Confidence, evidence: impl Into<String>) -> Self {
        Annotation(Some(Prediction {
            rating,
            confidence,
            evidence: evidence.into(),
        }))
    }

    pub fn is_null(&self) -> bool {
        self.0.is_none()
    }

    pub fn predicted_rating(&self) -> Option<Rating> {
        self.0.as_ref().map(|p| p.rating)
    }

    pub fn confidence(&self) -> Option<Confidence> {
        self.0.as_ref().map(|p| p.confidence)
    }

    pub fn evidence(&self) -> Option<&str> {
        self.0.as_ref().map(|p| p.evidence.as_str())
    }
}

/// A joined (predicted, actual) observation; the unit of every metric.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationPair {
    pub session_id: String,
    pub team_id: String,
    pub predicted: Rating,
    pub actual: Rating,
    pub confidence: Confidence,
    pub delta: i8,
    pub game_date: NaiveDate,
    pub aspect_ratings: AspectRatings,
}

impl EvaluationPair {
    pub fn new(
        session_id: impl Into<String>,
        predicted: Rating,
        actual: Rating,
        confidence: Confidence,
        game_date: NaiveDate,
    ) -> Self {
        EvaluationPair {
            session_id: session_id.into(),
            team_id: String::new(),
            predicted,
            actual,
            confidence,
            delta: signed_delta(predicted, actual),
            game_date,
            aspect_ratings: AspectRatings::default(),
        }
    }

    pub fn abs_delta(&self) -> u8 {
        self.delta.unsigned_abs()
    }
}

/// predicted − actual.
pub fn signed_delta(predicted: Rating, actual: Rating) -> i8 {
    predicted.value() as i8 - actual.value() as i8
}

/// Joins a record with its annotation. Returns `Ok(None)` for a null prediction.
pub fn make_pair(record: &SessionRecord, annotation: &Annotation) -> Result<Option<EvaluationPair>> {
    make_pair_checked(record, &record.session_id, annotation)
}

/// As [`make_pair`], verifying that the annotation was produced for `annotated_session`.
pub fn make_pair_checked(
    record: &SessionRecord,
    annotated_session: &str,
    annotation: &Annotation,
) -> Result<Option<EvaluationPair>> {
    if record.session_id != annotated_session {
        return Err(Error::domain(format!(
            "session mismatch: record {} vs annotation {}",
            record.session_id, annotated_session
        )));
    }
    Ok(annotation.0.as_ref().map(|p| EvaluationPair {
        session_id: record.session_id.clone(),
        team_id: record.team_id.clone(),
        predicted: p.rating,
        actual: record.overall_rating,
        confidence: p.confidence,
        delta: signed_delta(p.rating, record.overall_rating),
        game_date: record.game_date,
        aspect_ratings: record.aspect_ratings.clone(),
    }))
}

/// Self-reported score bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreBand {
    Low,
    Moderate,
    High,
    VeryHigh,
}

impl ScoreBand {
    pub const ALL: [ScoreBand; 4] = [
        ScoreBand::Low,
        ScoreBand::Moderate,
        ScoreBand::High,
        ScoreBand::VeryHigh,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ScoreBand::Low => "Low (0-2)",
            ScoreBand::Moderate => "Moderate (3-6)",
            ScoreBand::High => "High (7-8)",
            ScoreBand::VeryHigh => "Very high (9-10)",
        }
    }

    pub fn contains(self, score: Rating) -> bool {
        classify_band(score) == self
    }
}

impl fmt::Display for ScoreBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub fn classify_band(score: Rating) -> ScoreBand {
    match score.value() {
        0..=2 => ScoreBand::Low,
        3..=6 => ScoreBand::Moderate,
        7..=8 => ScoreBand::High,
        _ => ScoreBand::VeryHigh,
    }
}

/// Band for a raw integer score; out-of-range input is a domain error.
pub fn classify_band_raw(score: i64) -> Result<ScoreBand> {
    Rating::new(score).map(classify_band)
}
