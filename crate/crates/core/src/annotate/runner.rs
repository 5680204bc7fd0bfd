//! Per-session annotation with retries, and batch runs over a corpus.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::cache::{AnnotationCache, CacheKey};
use crate::annotate::provider::{text_digest, AnnotationRequest, Provider, ProviderError};
use crate::annotate::retry::RetryPolicy;
use crate::annotate::validate::validate_annotation;
use crate::error::{Error, Result};
use crate::model::{make_pair, Annotation, Confidence, EvaluationPair, Rating, SessionRecord};

/// Calls the provider until a valid annotation comes back or attempts run out.
/// A legal null is a successful outcome; only infrastructure and contract
/// failures become errors.
pub fn annotate_session(
    provider: &dyn Provider,
    text: &str,
    retry: &RetryPolicy,
) -> std::result::Result<Annotation, String> {
    if text.trim().is_empty() {
        return Err("session text is empty".into());
    }
    let request = AnnotationRequest::new(text);
    let attempts = retry.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let outcome = provider
            .call(&request)
            .map_err(|e| match e {
                ProviderError::Fatal(msg) => (false, msg),
                ProviderError::Transient(msg) => (true, msg),
            })
            .and_then(|raw| validate_annotation(&raw).map_err(|e| (true, e.to_string())));
        match outcome {
            Ok(annotation) => return Ok(annotation),
            Err((retryable, msg)) => {
                debug!("attempt {attempt}/{attempts} failed: {msg}");
                last = msg;
                if !retryable {
                    break;
                }
                if attempt < attempts {
                    std::thread::sleep(retry.delay(attempt, text));
                }
            }
        }
    }
    Err(format!("gave up after retries: {last}"))
}

/// Annotation outputs of one run over a corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSet {
    pub run_id: String,
    pub provider_id: String,
    pub annotations: BTreeMap<String, Annotation>,
    /// Sessions whose annotation failed, with the last failure reason.
    pub errors: BTreeMap<String, String>,
    pub null_count: usize,
    pub error_count: usize,
}

impl RunSet {
    pub fn new(
        run_id: impl Into<String>,
        provider_id: impl Into<String>,
        annotations: BTreeMap<String, Annotation>,
        errors: BTreeMap<String, String>,
    ) -> Self {
        let null_count = annotations.values().filter(|a| a.is_null()).count();
        let error_count = errors.len();
        RunSet {
            run_id: run_id.into(),
            provider_id: provider_id.into(),
            annotations,
            errors,
            null_count,
            error_count,
        }
    }

    /// Builds a run from bare predictions (`None` = null), mainly for fixtures.
    pub fn from_predictions<I, S>(run_id: &str, predictions: I) -> Self
    where
        I: IntoIterator<Item = (S, Option<u8>)>,
        S: Into<String>,
    {
        let annotations = predictions
            .into_iter()
            .map(|(id, p)| {
                let ann = match p {
                    Some(r) => Annotation::predicted(
                        Rating::new(i64::from(r)).expect("fixture rating in range"),
                        Confidence::High,
                        "fixture",
                    ),
                    None => Annotation::null(),
                };
                (id.into(), ann)
            })
            .collect();
        RunSet::new(run_id, "fixture", annotations, BTreeMap::new())
    }

    /// Non-null predictions keyed by session.
    pub fn predictions(&self) -> impl Iterator<Item = (&str, Rating)> + '_ {
        self.annotations
            .iter()
            .filter_map(|(id, a)| a.predicted_rating().map(|r| (id.as_str(), r)))
    }

    pub fn attempted(&self) -> usize {
        self.annotations.len() + self.errors.len()
    }

    pub fn null_rate(&self) -> f64 {
        match self.attempted() {
            0 => 0.0,
            n => self.null_count as f64 / n as f64,
        }
    }

    /// Joins with the records; sessions with null or failed annotations drop out.
    pub fn pairs(&self, records: &[SessionRecord]) -> Vec<EvaluationPair> {
        records
            .iter()
            .filter_map(|rec| {
                let ann = self.annotations.get(&rec.session_id)?;
                make_pair(rec, ann).expect("same session id")
            })
            .collect()
    }

    /// One JSON line per annotated or failed session.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let mut lines: BTreeMap<&str, RunLine> = BTreeMap::new();
        for (id, ann) in &self.annotations {
            lines.insert(id, RunLine::from_annotation(self, id, ann));
        }
        for (id, reason) in &self.errors {
            let mut line = RunLine::from_annotation(self, id, &Annotation::null());
            line.error = Some(reason.clone());
            lines.insert(id, line);
        }
        for line in lines.values() {
            serde_json::to_writer(&mut out, line)?;
            writeln!(out).map_err(|e| Error::io("<runset>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<RunSet> {
        let mut run_id = None;
        let mut provider_id = None;
        let mut annotations = BTreeMap::new();
        let mut errors = BTreeMap::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<runset>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RunLine = serde_json::from_str(&line)?;
            match &run_id {
                None => run_id = Some(parsed.run_id.clone()),
                Some(r) if *r != parsed.run_id => {
                    return Err(Error::domain(format!(
                        "mixed run ids {r} and {}",
                        parsed.run_id
                    )))
                }
                _ => {}
            }
            provider_id.get_or_insert_with(|| parsed.provider_id.clone());
            if let Some(reason) = parsed.error {
                errors.insert(parsed.session_id, reason);
                continue;
            }
            let wire = serde_json::json!({
                crate::annotate::validate::FIELD_RATING: parsed.predicted_rating,
                crate::annotate::validate::FIELD_CONFIDENCE: parsed.predicted_rating_confidence_score,
                crate::annotate::validate::FIELD_EVIDENCE: parsed.predicted_rating_evidence,
            });
            annotations.insert(parsed.session_id, validate_annotation(&wire)?);
        }
        let run_id = run_id.ok_or_else(|| Error::domain("empty run file"))?;
        Ok(RunSet::new(
            run_id,
            provider_id.unwrap_or_default(),
            annotations,
            errors,
        ))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RunLine {
    run_id: String,
    #[serde(default)]
    provider_id: String,
    session_id: String,
    predicted_rating: Option<u8>,
    predicted_rating_confidence_score: Option<String>,
    predicted_rating_evidence: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl RunLine {
    fn from_annotation(run: &RunSet, session_id: &str, ann: &Annotation) -> Self {
        RunLine {
            run_id: run.run_id.clone(),
            provider_id: run.provider_id.clone(),
            session_id: session_id.to_string(),
            predicted_rating: ann.predicted_rating().map(Rating::value),
            predicted_rating_confidence_score: ann.confidence().map(|c| c.label().to_string()),
            predicted_rating_evidence: ann.evidence().map(str::to_string),
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub retry: RetryPolicy,
    /// Maximum provider calls in flight.
    pub concurrency: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        BatchOptions {
            retry: RetryPolicy::default(),
            concurrency: 4,
        }
    }
}

/// One annotation attempt per record. Results are keyed by session id, so the
/// outcome does not depend on completion order.
pub fn run_batch(
    provider: &dyn Provider,
    records: &[SessionRecord],
    run_id: &str,
    options: &BatchOptions,
    cache: Option<&AnnotationCache>,
) -> Result<RunSet> {
    if options.concurrency == 0 {
        return Err(Error::Config("concurrency limit must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let provider_id = provider.provider_id().to_string();

    let outcomes: Vec<(String, std::result::Result<Annotation, String>)> = pool.install(|| {
        records
            .par_iter()
            .map(|rec| {
                let key = cache.map(|_| CacheKey {
                    provider_id: provider_id.clone(),
                    text_digest: text_digest(&rec.text),
                    run_id: run_id.to_string(),
                });
                if let (Some(cache), Some(key)) = (cache, &key) {
                    if let Some(hit) = cache.get(key) {
                        return (rec.session_id.clone(), Ok(hit));
                    }
                }
                let outcome = annotate_session(provider, &rec.text, &options.retry);
                if let (Some(cache), Some(key), Ok(ann)) = (cache, key, &outcome) {
                    cache.insert(key, ann.clone());
                }
                (rec.session_id.clone(), outcome)
            })
            .collect()
    });

    let mut annotations = BTreeMap::new();
    let mut errors = BTreeMap::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(ann) => {
                annotations.insert(id, ann);
            }
            Err(reason) => {
                warn!("run {run_id}: session {id} failed: {reason}");
                errors.insert(id, reason);
            }
        }
    }
    Ok(RunSet::new(run_id, provider_id, annotations, errors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::provider::LexiconProvider;
    use crate::model::AspectRatings;
    use chrono::NaiveDate;
    use serde_json::{json, Value};
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn records(texts: &[&str]) -> Vec<SessionRecord> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                SessionRecord::new(
                    format!("s{i:03}"),
                    "t",
                    NaiveDate::from_ymd_opt(2025, 4, 1).unwrap(),
                    *t,
                    Rating::new((i % 11) as i64).unwrap(),
                    AspectRatings::new(),
                )
                .unwrap()
            })
            .collect()
    }

    struct Scripted {
        calls: AtomicUsize,
        reply: fn(usize) -> std::result::Result<Value, ProviderError>,
    }

    impl Provider for Scripted {
        fn provider_id(&self) -> &str {
            "scripted"
        }
        fn call(&self, _: &AnnotationRequest<'_>) -> std::result::Result<Value, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            (self.reply)(n)
        }
    }

    #[test]
    fn lexicon_examples() {
        let p = LexiconProvider::new();
        let r = RetryPolicy::immediate();
        let ann = annotate_session(&p, "ballpark is beautiful staff pleasant seats great", &r).unwrap();
        assert!(ann.predicted_rating().unwrap().value() >= 9);
        assert_eq!(ann.confidence(), Some(Confidence::High));
        assert!(annotate_session(&p, "asdf qwerty", &r).unwrap().is_null());
    }

    #[test]
    fn malformed_body_thrice_is_error() {
        let p = Scripted {
            calls: AtomicUsize::new(0),
            reply: |_| Err(ProviderError::Transient("malformed body".into())),
        };
        assert!(annotate_session(&p, "text", &RetryPolicy::immediate()).is_err());
        assert_eq!(p.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn invalid_payload_is_retried_then_recovers() {
        let p = Scripted {
            calls: AtomicUsize::new(0),
            reply: |n| {
                if n == 0 {
                    Ok(json!({"predicted_rating": null, "predicted_rating_confidence_score": "High", "predicted_rating_evidence": null}))
                } else {
                    Ok(json!({"predicted_rating": 6, "predicted_rating_confidence_score": "Medium", "predicted_rating_evidence": "mixed cues"}))
                }
            },
        };
        let ann = annotate_session(&p, "text", &RetryPolicy::immediate()).unwrap();
        assert_eq!(ann.predicted_rating().unwrap().value(), 6);
        assert_eq!(p.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let p = Scripted {
            calls: AtomicUsize::new(0),
            reply: |_| Err(ProviderError::Fatal("401".into())),
        };
        assert!(annotate_session(&p, "text", &RetryPolicy::immediate()).is_err());
        assert_eq!(p.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn batch_determinism_and_order_independence() {
        let texts = [
            "great seats, awful parking, nice staff",
            "terrible lines, rude ushers, worst day",
            "asdf",
            "amazing amazing fun",
        ];
        let recs = records(&texts);
        let p = LexiconProvider::new();
        let opts = BatchOptions {
            retry: RetryPolicy::immediate(),
            concurrency: 3,
        };
        let a = run_batch(&p, &recs, "r1", &opts, None).unwrap();
        let b = run_batch(&p, &recs, "r2", &opts, None).unwrap();
        assert_eq!(a.annotations, b.annotations);
        let mut reversed = recs.clone();
        reversed.reverse();
        let c = run_batch(&p, &reversed, "r1", &opts, None).unwrap();
        assert_eq!(a, c);
        assert_eq!(a.null_count, 1);
        assert_eq!(a.error_count, 0);
    }

    #[test]
    fn sentiment_free_batch_is_all_null() {
        let recs = records(&["we went", "it happened", "the end"]);
        let run = run_batch(&LexiconProvider::new(), &recs, "r", &BatchOptions::default(), None).unwrap();
        assert_eq!(run.null_count, recs.len());
        assert!(run.pairs(&recs).is_empty());
    }

    #[test]
    fn cache_reuses_without_calling_provider() {
        let recs = records(&["good", "bad", "good"]);
        let p = Scripted {
            calls: AtomicUsize::new(0),
            reply: |_| Ok(json!({"predicted_rating": 6, "predicted_rating_confidence_score": "Low", "predicted_rating_evidence": "ok"})),
        };
        let cache = AnnotationCache::new();
        let opts = BatchOptions {
            retry: RetryPolicy::immediate(),
            concurrency: 1,
        };
        let first = run_batch(&p, &recs, "r1", &opts, Some(&cache)).unwrap();
        let calls_after_first = p.calls.load(Ordering::SeqCst);
        assert_eq!(calls_after_first, 2);
        let second = run_batch(&p, &recs, "r1", &opts, Some(&cache)).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), calls_after_first);
        assert_eq!(first, second);
        // a new run id is a new key
        run_batch(&p, &recs, "r2", &opts, Some(&cache)).unwrap();
        assert_eq!(p.calls.load(Ordering::SeqCst), calls_after_first + 2);
    }

    #[test]
    fn cache_on_off_identical_for_deterministic_provider() {
        let recs = records(&["great fun", "slow lines bad food", "asdf", "nice nice nice"]);
        let p = LexiconProvider::new();
        let opts = BatchOptions::default();
        let cache = AnnotationCache::new();
        let with = run_batch(&p, &recs, "r", &opts, Some(&cache)).unwrap();
        let without = run_batch(&p, &recs, "r", &opts, None).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn errors_are_counted_not_fatal() {
        let recs = records(&["a", "b"]);
        let p = Scripted {
            calls: AtomicUsize::new(0),
            reply: |_| Err(ProviderError::Transient("down".into())),
        };
        let run = run_batch(
            &p,
            &recs,
            "r",
            &BatchOptions {
                retry: RetryPolicy::immediate(),
                concurrency: 2,
            },
            None,
        )
        .unwrap();
        assert_eq!(run.error_count, 2);
        assert_eq!(run.null_count, 0);
    }

    #[test]
    fn jsonl_persistence_round_trips() {
        let recs = records(&["great fun", "asdf"]);
        let mut run = run_batch(&LexiconProvider::new(), &recs, "p2_1", &BatchOptions::default(), None).unwrap();
        run.errors.insert("s999".into(), "boom".into());
        run.error_count = 1;
        let mut buf = Vec::new();
        run.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().all(|l| l.contains("\"run_id\":\"p2_1\"")));
        let back = RunSet::read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, run);
    }
}
