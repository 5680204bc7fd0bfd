//! Running the rating prompt function against a provider, one session at a
//! time, across independent runs.

pub mod cache;
pub mod lexicon;
pub mod provider;
pub mod remote;
pub mod retry;
pub mod runner;
pub mod validate;

pub use cache::{AnnotationCache, CacheKey};
pub use lexicon::{lexicon_score, Lexicon};
pub use provider::{
    text_digest, AnnotationRequest, LexiconProvider, NoisyLexiconProvider, Provider,
    ProviderError, SCHEMA_NAME,
};
pub use remote::{HttpProvider, API_KEY_ENV};
pub use retry::RetryPolicy;
pub use runner::{annotate_session, run_batch, BatchOptions, RunSet};
pub use validate::validate_annotation;
