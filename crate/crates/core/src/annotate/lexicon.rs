//! Built-in deterministic provider backed by a versioned polarity lexicon.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::model::{Annotation, Confidence, Rating};

const BUNDLED: &str = include_str!("../../data/lexicon_v1.tsv");

/// Evidence strings carry at most this many words.
pub const MAX_EVIDENCE_WORDS: usize = 15;

/// Minimum hits for a High label, and the one-signed share it requires.
const HIGH_MIN_HITS: usize = 3;
const HIGH_MIN_AGREEMENT: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct Lexicon {
    version: String,
    weights: HashMap<String, f64>,
    entries: Vec<(String, f64)>,
}

impl Lexicon {
    /// Parses `word<TAB>weight` lines; `#` starts a comment line.
    pub fn parse(version: impl Into<String>, src: &str) -> Result<Self> {
        let mut weights = HashMap::new();
        let mut entries = Vec::new();
        for (lineno, line) in src.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, weight) = line
                .split_once('\t')
                .ok_or_else(|| Error::domain(format!("lexicon line {}: missing tab", lineno + 1)))?;
            let weight: f64 = weight.trim().parse().map_err(|_| {
                Error::domain(format!("lexicon line {}: bad weight {weight:?}", lineno + 1))
            })?;
            if !(-1.0..=1.0).contains(&weight) {
                return Err(Error::domain(format!(
                    "lexicon line {}: weight {weight} outside [-1, 1]",
                    lineno + 1
                )));
            }
            let word = word.trim().to_lowercase();
            if weights.insert(word.clone(), weight).is_some() {
                return Err(Error::domain(format!("lexicon: duplicate word {word:?}")));
            }
            entries.push((word, weight));
        }
        Ok(Lexicon {
            version: version.into(),
            weights,
            entries,
        })
    }

    pub fn bundled() -> &'static Lexicon {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Lexicon::parse("v1", BUNDLED).expect("bundled lexicon is valid"))
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn weight(&self, word: &str) -> Option<f64> {
        self.weights.get(word).copied()
    }

    /// Entries in file order.
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    /// Polarity evidence found in `text`.
    pub fn hits(&self, text: &str) -> LexiconHits {
        let hits = tokenize(text)
            .into_iter()
            .enumerate()
            .filter_map(|(pos, tok)| self.weight(&tok).map(|w| (pos, tok, w)))
            .collect();
        LexiconHits { hits }
    }

    /// Scores `text`, optionally nudging the continuous score before rounding.
    pub fn score(&self, text: &str, nudge: f64) -> Annotation {
        self.hits(text).to_annotation(nudge)
    }
}

/// Lower-cased alphanumeric tokens; apostrophes are dropped inside words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .map(|t| {
            t.chars()
                .filter(|c| c.is_alphanumeric())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexiconHits {
    hits: Vec<(usize, String, f64)>,
}

impl LexiconHits {
    pub fn count(&self) -> usize {
        self.hits.len()
    }

    pub fn mean_polarity(&self) -> Option<f64> {
        if self.hits.is_empty() {
            None
        } else {
            Some(self.hits.iter().map(|h| h.2).sum::<f64>() / self.hits.len() as f64)
        }
    }

    pub fn confidence(&self) -> Option<Confidence> {
        let n = self.hits.len();
        if n == 0 {
            return None;
        }
        if n < HIGH_MIN_HITS {
            return Some(Confidence::Low);
        }
        let positive = self.hits.iter().filter(|h| h.2 > 0.0).count();
        let negative = self.hits.iter().filter(|h| h.2 < 0.0).count();
        let agreement = positive.max(negative) as f64 / n as f64;
        if agreement >= HIGH_MIN_AGREEMENT {
            Some(Confidence::High)
        } else {
            Some(Confidence::Medium)
        }
    }

    /// Distinct hit words by descending |weight|, ties broken by first position.
    pub fn evidence(&self) -> String {
        let mut ranked: Vec<&(usize, String, f64)> = self.hits.iter().collect();
        ranked.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()).then(a.0.cmp(&b.0)));
        let mut words: Vec<&str> = Vec::new();
        for (_, word, _) in ranked {
            if !words.contains(&word.as_str()) {
                words.push(word);
            }
            if words.len() == MAX_EVIDENCE_WORDS {
                break;
            }
        }
        words.join(" ")
    }

    pub fn to_annotation(&self, nudge: f64) -> Annotation {
        match (self.mean_polarity(), self.confidence()) {
            (Some(mean), Some(confidence)) => Annotation::predicted(
                Rating::clamped(5.0 + 5.0 * mean + nudge),
                confidence,
                self.evidence(),
            ),
            _ => Annotation::null(),
        }
    }
}

/// Deterministic lexicon score with the bundled word list.
pub fn lexicon_score(text: &str) -> Annotation {
    Lexicon::bundled().score(text, 0.0)
}
