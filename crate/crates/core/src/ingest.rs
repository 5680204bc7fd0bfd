//! Loading survey exports into validated [`SessionRecord`]s.
//!
//! Per-row problems are counted and skipped; only an undecodable stream is
//! fatal. Accepted records keep source order.

use std::collections::HashSet;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{AspectRatings, Rating, SessionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Jsonl,
    Csv,
}

impl Format {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Format> {
        match path.extension()?.to_str()? {
            "jsonl" | "ndjson" | "json" => Some(Format::Jsonl),
            "csv" => Some(Format::Csv),
            _ => None,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Config(format!("unknown input format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub accepted: usize,
    pub rejected_invalid_rating: usize,
    pub rejected_empty_text: usize,
    pub rejected_malformed: usize,
}

impl IngestSummary {
    pub fn reconciles(&self) -> bool {
        self.rows_read
            == self.accepted
                + self.rejected_invalid_rating
                + self.rejected_empty_text
                + self.rejected_malformed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rejection {
    InvalidRating,
    EmptyText,
    Malformed,
}

/// Field values pulled out of one row before validation.
#[derive(Default)]
struct RawRow {
    session_id: Option<String>,
    team_id: Option<String>,
    game_date: Option<String>,
    text: Option<String>,
    overall_rating: Option<RawRating>,
    aspects: Vec<(String, RawRating)>,
}

enum RawRating {
    Null,
    Int(i64),
    Other,
}

impl RawRating {
    fn from_json(v: &Value) -> RawRating {
        match v {
            Value::Null => RawRating::Null,
            Value::Number(n) => n.as_i64().map(RawRating::Int).unwrap_or(RawRating::Other),
            _ => RawRating::Other,
        }
    }

    fn from_cell(cell: &str) -> RawRating {
        let cell = cell.trim();
        if cell.is_empty() {
            return RawRating::Null;
        }
        cell.parse::<i64>()
            .map(RawRating::Int)
            .unwrap_or(RawRating::Other)
    }
}

fn validate_row(raw: RawRow) -> std::result::Result<SessionRecord, Rejection> {
    let session_id = raw
        .session_id
        .filter(|s| !s.trim().is_empty())
        .ok_or(Rejection::Malformed)?;
    let team_id = raw.team_id.ok_or(Rejection::Malformed)?;
    let game_date = raw
        .game_date
        .and_then(|d| NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d").ok())
        .ok_or(Rejection::Malformed)?;
    let text = raw.text.ok_or(Rejection::Malformed)?;
    let overall = match raw.overall_rating.ok_or(Rejection::Malformed)? {
        RawRating::Int(v) => Rating::new(v).map_err(|_| Rejection::InvalidRating)?,
        RawRating::Null | RawRating::Other => return Err(Rejection::InvalidRating),
    };
    let mut aspects = AspectRatings::new();
    for (name, value) in raw.aspects {
        match value {
            RawRating::Null => {}
            RawRating::Int(v) => {
                aspects.insert(&name, Rating::new(v).map_err(|_| Rejection::InvalidRating)?)
            }
            RawRating::Other => return Err(Rejection::InvalidRating),
        }
    }
    if text.trim().is_empty() {
        return Err(Rejection::EmptyText);
    }
    SessionRecord::new(session_id, team_id, game_date, text, overall, aspects)
        .map_err(|_| Rejection::Malformed)
}

fn json_string(obj: &serde_json::Map<String, Value>, key: &str) -> Option<String> {
    match obj.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) if key != "text" && key != "game_date" => Some(n.to_string()),
        _ => None,
    }
}

fn parse_json_row(line: &str) -> std::result::Result<RawRow, Rejection> {
    let value: Value = serde_json::from_str(line).map_err(|_| Rejection::Malformed)?;
    let obj = value.as_object().ok_or(Rejection::Malformed)?;
    let mut row = RawRow {
        session_id: json_string(obj, "session_id"),
        team_id: json_string(obj, "team_id"),
        game_date: json_string(obj, "game_date"),
        text: json_string(obj, "text"),
        overall_rating: obj.get("overall_rating").map(RawRating::from_json),
        aspects: Vec::new(),
    };
    match obj.get("aspects") {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            row.aspects = map
                .iter()
                .map(|(k, v)| (k.clone(), RawRating::from_json(v)))
                .collect();
        }
        Some(_) => return Err(Rejection::Malformed),
    }
    Ok(row)
}

struct Accumulator {
    records: Vec<SessionRecord>,
    summary: IngestSummary,
    seen: HashSet<String>,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator {
            records: Vec::new(),
            summary: IngestSummary::default(),
            seen: HashSet::new(),
        }
    }

    fn push(&mut self, row: std::result::Result<RawRow, Rejection>) {
        self.summary.rows_read += 1;
        let outcome = row.and_then(validate_row).and_then(|rec| {
            // duplicate ids would make session-keyed joins ambiguous
            if self.seen.insert(rec.session_id.clone()) {
                Ok(rec)
            } else {
                Err(Rejection::Malformed)
            }
        });
        match outcome {
            Ok(rec) => {
                self.summary.accepted += 1;
                self.records.push(rec);
            }
            Err(Rejection::InvalidRating) => self.summary.rejected_invalid_rating += 1,
            Err(Rejection::EmptyText) => self.summary.rejected_empty_text += 1,
            Err(Rejection::Malformed) => self.summary.rejected_malformed += 1,
        }
    }
}

/// Reads records from `source`. Blank JSONL lines are skipped without counting.
pub fn load_records<R: Read>(
    mut source: R,
    format: Format,
) -> Result<(Vec<SessionRecord>, IngestSummary)> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Ingest(format!("read failed: {e}")))?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Ingest(format!("stream is not valid UTF-8: {e}")))?;
    let mut acc = Accumulator::new();
    match format {
        Format::Jsonl => {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                acc.push(parse_json_row(line));
            }
        }
        Format::Csv => load_csv(&text, &mut acc)?,
    }
    debug_assert!(acc.summary.reconciles());
    Ok((acc.records, acc.summary))
}

const REQUIRED_COLUMNS: [&str; 5] = ["session_id", "team_id", "game_date", "text", "overall_rating"];

fn load_csv(text: &str, acc: &mut Accumulator) -> Result<()> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Ingest(format!("unreadable CSV header: {e}")))?
        .clone();
    let position = |name: &str| headers.iter().position(|h| h.trim() == name);
    let mut required = [0usize; 5];
    for (slot, name) in required.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = position(name)
            .ok_or_else(|| Error::Ingest(format!("CSV header lacks column {name:?}")))?;
    }
    let aspect_columns: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.trim().strip_prefix("aspect_").map(|n| (i, n.to_string())))
        .collect();

    for row in reader.records() {
        let parsed = match row {
            Ok(rec) if rec.len() == headers.len() => {
                let cell = |i: usize| rec.get(i).map(str::to_string);
                Ok(RawRow {
                    session_id: cell(required[0]),
                    team_id: cell(required[1]),
                    game_date: cell(required[2]),
                    text: cell(required[3]),
                    overall_rating: rec.get(required[4]).map(RawRating::from_cell),
                    aspects: aspect_columns
                        .iter()
                        .map(|(i, name)| {
                            (name.clone(), RawRating::from_cell(rec.get(*i).unwrap_or("")))
                        })
                        .collect(),
                })
            }
            Ok(_) => Err(Rejection::Malformed),
            Err(e) if matches!(e.kind(), csv::ErrorKind::Utf8 { .. }) => {
                return Err(Error::Ingest(format!("undecodable CSV row: {e}")))
            }
            Err(_) => Err(Rejection::Malformed),
        };
        acc.push(parsed);
    }
    Ok(())
}

/// Convenience wrapper that opens `path` and infers the format when not given.
pub fn load_path(path: &Path, format: Option<Format>) -> Result<(Vec<SessionRecord>, IngestSummary)> {
    let format = format
        .or_else(|| Format::from_path(path))
        .ok_or_else(|| Error::Config(format!("cannot infer format of {}", path.display())))?;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_records(std::io::BufReader::new(file), format)
}

/// Writes records as ingestion JSONL.
pub fn write_jsonl<W: std::io::Write>(records: &[SessionRecord], mut out: W) -> Result<()> {
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::Ingest(format!("write failed: {e}")))?;
    }
    Ok(())
}

/// Quantile by linear interpolation between closest ranks of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextLengthProfile {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Character-count median and quartiles of the record texts.
pub fn text_length_profile(records: &[SessionRecord]) -> Result<TextLengthProfile> {
    if records.is_empty() {
        return Err(Error::domain("text_length_profile needs at least one record"));
    }
    let mut lengths: Vec<f64> = records
        .iter()
        .map(|r| r.text.chars().count() as f64)
        .collect();
    lengths.sort_by(f64::total_cmp);
    let q = |p| quantile_sorted(&lengths, p).expect("non-empty");
    Ok(TextLengthProfile {
        median: q(0.5),
        q1: q(0.25),
        q3: q(0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingProfile {
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
    pub share_9_10: f64,
    pub share_0_2: f64,
}

pub fn rating_profile(records: &[SessionRecord]) -> Result<RatingProfile> {
    if records.is_empty() {
        return Err(Error::domain("rating_profile needs at least one record"));
    }
    let n = records.len() as f64;
    let values = records.iter().map(|r| r.overall_rating.as_f64());
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let share = |lo: u8, hi: u8| {
        records
            .iter()
            .filter(|r| (lo..=hi).contains(&r.overall_rating.value()))
            .count() as f64
            / n
    };
    Ok(RatingProfile {
        mean,
        sd: var.sqrt(),
        share_9_10: share(9, 10),
        share_0_2: share(0, 2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jsonl_row(id: &str, rating: &str, text: &str) -> String {
        format!(
            r#"{{"session_id":"{id}","team_id":"t1","game_date":"2025-04-01","text":{},"overall_rating":{rating},"aspects":{{"staff":8,"parking":null}}}}"#,
            serde_json::to_string(text).unwrap()
        )
    }

    #[test]
    fn written_records_reload() {
        let src = [jsonl_row("a", "10", "fine"), r#"{"session_id":"b","team_id":"t","game_date":"2025-04-02","text":"ok","overall_rating":3,"aspects":{"staff":2,"mascot":9}}"#.to_string()].join("\n");
        let (records, _) = load_records(src.as_bytes(), Format::Jsonl).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&records, &mut buf).unwrap();
        let (back, summary) = load_records(buf.as_slice(), Format::Jsonl).unwrap();
        assert_eq!(back, records);
        assert_eq!(summary.accepted, 2);
        assert_eq!(back[1].aspect_ratings.extra().len(), 1);
    }

    #[test]
    fn jsonl_examples() {
        let src = [
            jsonl_row("a", "10", "11/10 amazing experience"),
            jsonl_row("b", "11", "too high"),
            jsonl_row("c", "7", ""),
            jsonl_row("d", "7.5", "fractional"),
            "not json".to_string(),
            jsonl_row("a", "9", "duplicate id"),
        ]
        .join("\n");
        let (records, summary) = load_records(src.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].text, "11/10 amazing experience");
        assert_eq!(records[0].aspect_ratings.known().count(), 1);
        assert_eq!(
            summary,
            IngestSummary {
                rows_read: 6,
                accepted: 1,
                rejected_invalid_rating: 2,
                rejected_empty_text: 1,
                rejected_malformed: 2,
            }
        );
    }

    #[test]
    fn non_iso_dates_are_malformed() {
        let src = r#"{"session_id":"a","team_id":"t","game_date":"04/01/2025","text":"ok","overall_rating":5}"#;
        let (_, summary) = load_records(src.as_bytes(), Format::Jsonl).unwrap();
        assert_eq!(summary.rejected_malformed, 1);
    }

    #[test]
    fn csv_rows_and_aspects() {
        let src = "session_id,team_id,game_date,text,overall_rating,aspect_staff,aspect_wifi\n\
                   a,t1,2025-04-01,great day,9,7,\n\
                   b,t1,2025-04-01,,5,,\n\
                   c,t1,2025-04-02,\"long, slow lines\",3,2,4\n\
                   d,t1,2025-04-02,short row\n";
        let (records, summary) = load_records(src.as_bytes(), Format::Csv).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[1].text, "long, slow lines");
        assert_eq!(records[1].aspect_ratings.extra().get("wifi").unwrap().value(), 4);
        assert!(records[0].aspect_ratings.extra().is_empty());
        assert_eq!(summary.rejected_empty_text, 1);
        assert_eq!(summary.rejected_malformed, 1);
        assert!(summary.reconciles());
    }

    #[test]
    fn csv_missing_column_is_fatal() {
        let src = "session_id,team_id,text\na,b,c\n";
        assert!(matches!(
            load_records(src.as_bytes(), Format::Csv),
            Err(Error::Ingest(_))
        ));
    }

    #[test]
    fn invalid_utf8_is_fatal() {
        let bytes: &[u8] = &[0xff, 0xfe, b'\n'];
        assert!(matches!(load_records(bytes, Format::Jsonl), Err(Error::Ingest(_))));
    }

    fn rec(text: &str, rating: i64) -> SessionRecord {
        SessionRecord::new(
            "s",
            "t",
            NaiveDate::from_ymd_opt(2025, 4, 1).unwrap(),
            text,
            Rating::new(rating).unwrap(),
            AspectRatings::new(),
        )
        .unwrap()
    }

    #[test]
    fn text_length_examples() {
        let p = text_length_profile(&[rec(&"x".repeat(351), 5)]).unwrap();
        assert_eq!((p.median, p.q1, p.q3), (351.0, 351.0, 351.0));
        let recs: Vec<_> = [100, 200, 300, 400].iter().map(|n| rec(&"y".repeat(*n), 5)).collect();
        assert_eq!(text_length_profile(&recs).unwrap().median, 250.0);
        assert!(text_length_profile(&[]).is_err());
    }

    #[test]
    fn rating_profile_examples() {
        let p = rating_profile(&[rec("a", 10), rec("b", 10)]).unwrap();
        assert_eq!((p.mean, p.sd, p.share_9_10, p.share_0_2), (10.0, 0.0, 1.0, 0.0));
        let p = rating_profile(&[rec("a", 0), rec("b", 10)]).unwrap();
        assert_eq!((p.mean, p.sd), (5.0, 5.0));
        assert!(rating_profile(&[]).is_err());
    }

    /// Sort-based oracle: the k-th order statistic interpolation written out
    /// directly from rank positions.
    fn oracle_quantile(values: &[u32], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_unstable();
        let pos = p * (v.len() as f64 - 1.0);
        let below = pos as usize;
        if below + 1 >= v.len() {
            return f64::from(v[below]);
        }
        let w = pos - below as f64;
        f64::from(v[below]) * (1.0 - w) + f64::from(v[below + 1]) * w
    }

    proptest! {
        #[test]
        fn quantile_matches_oracle(values in prop::collection::vec(0u32..1000, 1..12), p in 0.0f64..=1.0) {
            let mut sorted: Vec<f64> = values.iter().map(|v| f64::from(*v)).collect();
            sorted.sort_by(f64::total_cmp);
            let got = quantile_sorted(&sorted, p).unwrap();
            prop_assert!((got - oracle_quantile(&values, p)).abs() < 1e-9);
        }

        #[test]
        fn malformed_rows_never_accepted(
            lines in prop::collection::vec(
                prop_oneof![
                    Just(r#"{"session_id":"x","team_id":"t","game_date":"2025-01-01","text":"fine","overall_rating":5}"#.to_string()),
                    "[ -~]{0,40}",
                    (any::<i64>(), "[a-z ]{0,10}").prop_map(|(r, t)| format!(
                        r#"{{"session_id":"{r}","team_id":"t","game_date":"2025-01-01","text":"{t}","overall_rating":{r}}}"#
                    )),
                ],
                0..20,
            )
        ) {
            let src = lines.join("\n");
            let (records, summary) = load_records(src.as_bytes(), Format::Jsonl).unwrap();
            prop_assert!(summary.reconciles());
            prop_assert_eq!(records.len(), summary.accepted);
            for r in &records {
                prop_assert!(!r.text.trim().is_empty());
                prop_assert!(r.overall_rating.value() <= 10);
            }
            let again = load_records(src.as_bytes(), Format::Jsonl).unwrap();
            prop_assert_eq!(again.0, records);
            prop_assert_eq!(again.1, summary);
        }
    }
}
