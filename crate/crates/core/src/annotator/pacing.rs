//! Clocks, exponential backoff and a token-bucket rate limiter.

use chrono::{DateTime, TimeZone, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::time::Duration;

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
    fn sleep(&self, d: Duration);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Virtual clock: `sleep` advances time instantly and is recorded.
#[derive(Debug)]
pub struct ManualClock {
    state: Mutex<(DateTime<Utc>, Vec<Duration>)>,
}

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        ManualClock {
            state: Mutex::new((start, Vec::new())),
        }
    }

    /// Starts at the Unix epoch.
    pub fn epoch() -> Self {
        Self::new(Utc.timestamp_opt(0, 0).unwrap())
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().1.clone()
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        self.state.lock().0
    }

    fn sleep(&self, d: Duration) {
        let mut s = self.state.lock();
        s.0 += chrono::Duration::from_std(d).expect("sleep fits");
        s.1.push(d);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_backoff_secs: 1.0,
        }
    }
}

impl RetryPolicy {
    /// Wait before the `k`-th retry (k >= 1): `base * 2^(k-1)`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2f64.powi(retry.saturating_sub(1) as i32);
        Duration::from_secs_f64(self.base_backoff_secs * factor)
    }
}

/// Token bucket: `capacity` burst, refilled at `per_second`.
pub struct RateLimiter {
    per_second: f64,
    capacity: f64,
    state: Mutex<(f64, DateTime<Utc>)>,
}

impl RateLimiter {
    pub fn new(per_second: f64, capacity: f64, clock: &dyn Clock) -> Self {
        assert!(per_second > 0.0 && capacity >= 1.0);
        RateLimiter {
            per_second,
            capacity,
            state: Mutex::new((capacity, clock.now())),
        }
    }

    pub fn per_minute(rpm: f64, clock: &dyn Clock) -> Self {
        Self::new(rpm / 60.0, (rpm / 60.0).max(1.0), clock)
    }

    /// Blocks (via `clock.sleep`) until a token is available, then takes it.
    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let wait = {
                let mut s = self.state.lock();
                let now = clock.now();
                let elapsed = (now - s.1).to_std().unwrap_or_default().as_secs_f64();
                s.0 = (s.0 + elapsed * self.per_second).min(self.capacity);
                s.1 = now;
                if s.0 >= 1.0 {
                    s.0 -= 1.0;
                    return;
                }
                Duration::from_secs_f64((1.0 - s.0) / self.per_second)
            };
            clock.sleep(wait);
        }
    }
}
