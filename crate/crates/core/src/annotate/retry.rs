use std::time::Duration;

use sha2::{Digest, Sha256};

/// Bounded exponential backoff. Jitter is derived from a hash of the request
/// key and attempt number, so delays are reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Three attempts with no sleeping in between (tests, in-process providers).
    pub fn immediate() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::ZERO,
            max_delay: Duration::ZERO,
            jitter: false,
        }
    }

    /// Delay before retry number `attempt` (1-based count of failures so far).
    pub fn delay(&self, attempt: u32, key: &str) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)));
        let capped = exp.min(self.max_delay);
        if !self.jitter || capped.is_zero() {
            return capped;
        }
        let mut h = Sha256::new();
        h.update(key.as_bytes());
        h.update(attempt.to_le_bytes());
        let bytes: [u8; 32] = h.finalize().into();
        let unit = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as f64 / u64::MAX as f64;
        // scale into [0.5, 1.0]
        capped.mul_f64(0.5 + 0.5 * unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delays_grow_and_cap() {
        let p = RetryPolicy {
            jitter: false,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(1, "k"), Duration::from_millis(250));
        assert_eq!(p.delay(2, "k"), Duration::from_millis(500));
        assert_eq!(p.delay(10, "k"), Duration::from_secs(8));
    }

    #[test]
    fn jitter_is_deterministic_and_bounded() {
        let p = RetryPolicy::default();
        for attempt in 1..5 {
            let d = p.delay(attempt, "session-1");
            assert_eq!(d, p.delay(attempt, "session-1"));
            let full = RetryPolicy { jitter: false, ..p.clone() }.delay(attempt, "x");
            assert!(d >= full / 2 && d <= full);
        }
    }

    #[test]
    fn immediate_never_sleeps() {
        assert!(RetryPolicy::immediate().delay(3, "k").is_zero());
    }
}
