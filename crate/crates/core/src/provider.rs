//! Error and retry plumbing shared by the embedding, reranking and LLM clients.

use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    /// Connection refused, DNS failure and the like.
    #[error("provider unreachable: {0}")]
    Unreachable(String),
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Other(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Unreachable(_) | ProviderError::Timeout => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            ProviderError::Malformed(_) | ProviderError::Other(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{last} (after {attempts} attempt(s))")]
pub struct RetryError {
    pub attempts: u32,
    pub last: ProviderError,
    /// One entry per failed attempt.
    pub trace: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    #[serde(default)]
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, backoff_ms: 0 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, backoff_ms: 0 }
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ProviderError>) -> Result<T, RetryError> {
        let mut trace = Vec::new();
        let mut attempts = 0;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    trace.push(format!("attempt {attempts}: {e}"));
                    if !e.is_retryable() || attempts > self.max_retries {
                        return Err(RetryError { attempts, last: e, trace });
                    }
                    if self.backoff_ms > 0 {
                        let factor = 1u64 << (attempts - 1).min(10);
                        std::thread::sleep(Duration::from_millis(self.backoff_ms * factor));
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retries_then_gives_up() {
        let mut calls = 0;
        let err = RetryPolicy { max_retries: 2, backoff_ms: 0 }
            .run::<()>(|| {
                calls += 1;
                Err(ProviderError::Timeout)
            })
            .unwrap_err();
        assert_eq!(calls, 3);
        assert_eq!(err.attempts, 3);
        assert_eq!(err.trace.len(), 3);
    }

    #[test]
    fn non_retryable_fails_fast() {
        let mut calls = 0;
        let err = RetryPolicy::default()
            .run::<()>(|| {
                calls += 1;
                Err(ProviderError::Status { status: 400, body: "bad".into() })
            })
            .unwrap_err();
        assert_eq!(calls, 1);
        assert_eq!(err.attempts, 1);
    }

    #[test]
    fn succeeds_after_transient_failure() {
        let mut calls = 0;
        let v = RetryPolicy::default()
            .run(|| {
                calls += 1;
                if calls < 2 {
                    Err(ProviderError::Unreachable("down".into()))
                } else {
                    Ok(7)
                }
            })
            .unwrap();
        assert_eq!(v, 7);
    }
}
