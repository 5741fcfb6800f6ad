use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

/// Token bucket limiting request starts. Capacity is one token, so requests
/// are spaced evenly at the configured rate.
#[derive(Debug)]
pub struct TokenBucket {
    interval: Duration,
    next_free: Mutex<Instant>,
}

impl TokenBucket {
    pub fn per_minute(requests_per_minute: f64) -> Self {
        let rpm = if requests_per_minute.is_finite() && requests_per_minute > 0.0 {
            requests_per_minute
        } else {
            f64::MAX
        };
        TokenBucket {
            interval: Duration::from_secs_f64(60.0 / rpm),
            next_free: Mutex::new(Instant::now()),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Blocks until a token is available and takes it.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next_free.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}
