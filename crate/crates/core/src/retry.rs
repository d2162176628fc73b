use std::time::Duration;

/// Exponential backoff schedule shared by the HTTP clients.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    /// 1s, 4s, 16s.
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
            factor: 4,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay(max_retries: u32) -> Self {
        Self {
            max_retries,
            base_delay: Duration::ZERO,
            factor: 1,
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(retry)
    }

    /// Runs `op` until it succeeds, returns a non-retryable error, or the
    /// retry budget is spent. The last error is returned.
    pub fn run<T, E>(
        &self,
        mut op: impl FnMut() -> Result<T, E>,
        retryable: impl Fn(&E) -> bool,
    ) -> Result<T, E> {
        let mut retry = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if retry < self.max_retries && retryable(&e) => {
                    let d = self.delay(retry);
                    if !d.is_zero() {
                        std::thread::sleep(d);
                    }
                    retry += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}
