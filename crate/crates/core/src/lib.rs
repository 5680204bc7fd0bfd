//! Predicting 0–10 satisfaction ratings from free-text survey responses and
//! checking them against the ratings respondents gave themselves.

pub mod annotate;
pub mod calibration;
pub mod divergence;
pub mod error;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod simulator;
pub mod stability;

pub use error::{Error, Result};
pub use model::{
    classify_band, make_pair, Annotation, Aspect, AspectRatings, Confidence, EvaluationPair,
    Prediction, Rating, ScoreBand, SessionRecord,
};
