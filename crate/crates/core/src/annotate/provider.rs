//! Provider abstraction and the in-process lexicon providers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::annotate::lexicon::Lexicon;
use crate::annotate::validate::to_wire;

/// Name of the prompt function every provider implements.
pub const SCHEMA_NAME: &str = "extract_session_info";

/// One annotation request. Providers see only the session text.
#[derive(Debug, Clone, Copy)]
pub struct AnnotationRequest<'a> {
    pub session_text: &'a str,
    pub schema_name: &'a str,
}

impl<'a> AnnotationRequest<'a> {
    pub fn new(session_text: &'a str) -> Self {
        AnnotationRequest {
            session_text,
            schema_name: SCHEMA_NAME,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Worth retrying: timeouts, 5xx, rate limits, unparseable bodies.
    #[error("transient provider failure: {0}")]
    Transient(String),
    /// Retrying will not help.
    #[error("provider failure: {0}")]
    Fatal(String),
}

/// A stateless annotation backend. Output depends only on the submitted text
/// (plus any internal randomness).
pub trait Provider: Send + Sync {
    fn provider_id(&self) -> &str;

    /// Returns the raw payload in wire format; validation happens in the caller.
    fn call(&self, request: &AnnotationRequest<'_>) -> Result<Value, ProviderError>;
}

/// Hex SHA-256 of a session text.
pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Deterministic lexicon provider.
#[derive(Debug, Clone)]
pub struct LexiconProvider {
    lexicon: &'static Lexicon,
    id: String,
}

impl LexiconProvider {
    pub fn new() -> Self {
        let lexicon = Lexicon::bundled();
        LexiconProvider {
            lexicon,
            id: format!("lexicon-{}", lexicon.version()),
        }
    }
}

impl Default for LexiconProvider {
    fn default() -> Self {
        Self::new()
    }
}

impl Provider for LexiconProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AnnotationRequest<'_>) -> Result<Value, ProviderError> {
        Ok(to_wire(&self.lexicon.score(request.session_text, 0.0)))
    }
}

/// Lexicon provider with Gaussian noise of sd `temperature` (rating points)
/// added to the continuous score before rounding. The noise draw is keyed on
/// (seed, text), so a provider instance is repeatable and order-independent,
/// while different seeds act as independent sampling runs.
#[derive(Debug, Clone)]
pub struct NoisyLexiconProvider {
    lexicon: &'static Lexicon,
    temperature: f64,
    seed: u64,
    id: String,
}

impl NoisyLexiconProvider {
    pub fn new(temperature: f64, seed: u64) -> Self {
        assert!(temperature >= 0.0, "temperature must be non-negative");
        let lexicon = Lexicon::bundled();
        NoisyLexiconProvider {
            lexicon,
            temperature,
            seed,
            id: format!("lexicon-{}-t{temperature}-s{seed}", lexicon.version()),
        }
    }

    fn nudge(&self, text: &str) -> f64 {
        if self.temperature == 0.0 {
            return 0.0;
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let digest: [u8; 32] = hasher.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Normal::new(0.0, self.temperature)
            .expect("finite sd")
            .sample(&mut rng)
    }
}

impl Provider for NoisyLexiconProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn call(&self, request: &AnnotationRequest<'_>) -> Result<Value, ProviderError> {
        let text = request.session_text;
        Ok(to_wire(&self.lexicon.score(text, self.nudge(text))))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::validate::validate_annotation;

    #[test]
    fn noisy_provider_is_repeatable_per_seed() {
        let text = "great seats, slow lines, friendly staff, overpriced beer";
        let a = NoisyLexiconProvider::new(1.0, 7);
        let b = NoisyLexiconProvider::new(1.0, 7);
        let req = AnnotationRequest::new(text);
        assert_eq!(a.call(&req).unwrap(), b.call(&req).unwrap());
    }

    #[test]
    fn zero_temperature_matches_deterministic() {
        let req = AnnotationRequest::new("awesome game, terrible parking, nice staff");
        let base = LexiconProvider::new().call(&req).unwrap();
        let noisy = NoisyLexiconProvider::new(0.0, 3).call(&req).unwrap();
        assert_eq!(base, noisy);
    }

    #[test]
    fn noisy_payloads_stay_valid() {
        for seed in 0..50 {
            let p = NoisyLexiconProvider::new(5.0, seed);
            let raw = p.call(&AnnotationRequest::new("amazing amazing amazing")).unwrap();
            validate_annotation(&raw).unwrap();
        }
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            text_digest("abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
