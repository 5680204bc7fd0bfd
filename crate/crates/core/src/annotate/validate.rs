//! Schema checks for provider payloads.

use serde_json::{json, Map, Value};

use crate::annotate::lexicon::MAX_EVIDENCE_WORDS;
use crate::error::{Error, Result};
use crate::model::{Annotation, Confidence, Rating};

pub const FIELD_RATING: &str = "predicted_rating";
pub const FIELD_CONFIDENCE: &str = "predicted_rating_confidence_score";
pub const FIELD_EVIDENCE: &str = "predicted_rating_evidence";

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidPayload(msg.into())
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| invalid(format!("missing required field {name}")))
}

/// Checks an evidence string: at most 15 words, no upper case, no punctuation.
pub fn check_evidence(evidence: &str) -> Result<()> {
    if evidence.is_empty() {
        return Err(invalid("evidence is empty"));
    }
    let words = evidence.split_whitespace().count();
    if words > MAX_EVIDENCE_WORDS {
        return Err(invalid(format!("evidence has {words} words")));
    }
    if let Some(c) = evidence.chars().find(|c| c.is_uppercase()) {
        return Err(invalid(format!("evidence contains upper case {c:?}")));
    }
    if let Some(c) = evidence
        .chars()
        .find(|c| !c.is_alphanumeric() && !c.is_whitespace())
    {
        return Err(invalid(format!("evidence contains punctuation {c:?}")));
    }
    Ok(())
}

/// Validates a payload in provider wire format. Evidence is trimmed, never rewritten.
pub fn validate_annotation(raw: &Value) -> Result<Annotation> {
    let obj = raw
        .as_object()
        .ok_or_else(|| invalid("payload is not an object"))?;
    let rating = field(obj, FIELD_RATING)?;
    let confidence = field(obj, FIELD_CONFIDENCE)?;
    let evidence = field(obj, FIELD_EVIDENCE)?;

    match (rating, confidence, evidence) {
        (Value::Null, Value::Null, Value::Null) => Ok(Annotation::null()),
        (Value::Null, _, _) | (_, Value::Null, _) | (_, _, Value::Null) => {
            Err(invalid("fields must be all null or all present"))
        }
        (rating, confidence, evidence) => {
            let rating = rating
                .as_i64()
                .filter(|_| rating.is_i64() || rating.is_u64())
                .ok_or_else(|| invalid(format!("rating {rating} is not an integer")))
                .and_then(|r| Rating::new(r).map_err(|e| invalid(e.to_string())))?;
            let confidence: Confidence = confidence
                .as_str()
                .ok_or_else(|| invalid("confidence is not a string"))?
                .parse()?;
            let evidence = evidence
                .as_str()
                .ok_or_else(|| invalid("evidence is not a string"))?
                .trim();
            check_evidence(evidence)?;
            Ok(Annotation::predicted(rating, confidence, evidence))
        }
    }
}

/// Renders an annotation in provider wire format.
pub fn to_wire(annotation: &Annotation) -> Value {
    json!({
        FIELD_RATING: annotation.predicted_rating().map(|r| r.value()),
        FIELD_CONFIDENCE: annotation.confidence().map(|c| c.label()),
        FIELD_EVIDENCE: annotation.evidence(),
    })
}
