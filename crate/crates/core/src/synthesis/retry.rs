use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Exponential backoff for retryable (transport) failures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_seconds: f64,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_seconds: 0.5,
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, after `n` failures (n ≥ 1).
    pub fn delay(&self, failures: u32) -> Duration {
        Duration::from_secs_f64(self.base_seconds * self.factor.powi(failures as i32 - 1))
    }

    pub fn run<T>(&self, sleep: impl Fn(Duration), mut op: impl FnMut() -> Result<T>) -> Result<T> {
        let mut failures = 0;
        loop {
            match op() {
                Err(e) if e.is_retryable() && failures + 1 < self.max_attempts => {
                    failures += 1;
                    let wait = self.delay(failures);
                    log::warn!("{e}; retry {failures} in {:.1}s", wait.as_secs_f64());
                    sleep(wait);
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use std::cell::RefCell;

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy::default();
        let waits: Vec<f64> = (1..5).map(|n| p.delay(n).as_secs_f64()).collect();
        assert_eq!(waits, vec![0.5, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn transport_errors_retried_up_to_limit() {
        let slept = RefCell::new(Vec::new());
        let mut calls = 0;
        let r: Result<()> = RetryPolicy::default().run(
            |d| slept.borrow_mut().push(d),
            || {
                calls += 1;
                Err(Error::Transport("down".into()))
            },
        );
        assert!(r.is_err());
        assert_eq!(calls, 5);
        assert_eq!(slept.borrow().len(), 4);
    }

    #[test]
    fn permanent_errors_not_retried() {
        let mut calls = 0;
        let r: Result<()> = RetryPolicy::default().run(
            |_| {},
            || {
                calls += 1;
                Err(Error::Request("bad prompt".into()))
            },
        );
        assert!(matches!(r, Err(Error::Request(_))));
        assert_eq!(calls, 1);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let mut calls = 0;
        let r = RetryPolicy::default().run(
            |_| {},
            || {
                calls += 1;
                if calls < 3 {
                    Err(Error::Transport("blip".into()))
                } else {
                    Ok(calls)
                }
            },
        );
        assert_eq!(r.unwrap(), 3);
    }
}
