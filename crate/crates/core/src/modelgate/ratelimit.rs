//! Sliding-window rate limiting with an injectable clock.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Time source the gateway schedules against. Injecting it keeps limiter
/// and backoff behavior testable without real waiting.
pub trait Clock: Send + Sync {
    /// Milliseconds since an arbitrary fixed origin; must never decrease.
    fn now_ms(&self) -> u64;
    fn sleep_ms(&self, ms: u64);
}

/// Wall clock backed by [`Instant`].
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    fn sleep_ms(&self, ms: u64) {
        std::thread::sleep(Duration::from_millis(ms));
    }
}

/// Deterministic clock whose sleeps simply advance time. Meant for tests.
pub struct ManualClock {
    now: Mutex<u64>,
}

impl ManualClock {
    pub fn new() -> Self {
        ManualClock { now: Mutex::new(0) }
    }

    pub fn advance_ms(&self, ms: u64) {
        *self.now.lock().unwrap() += ms;
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        *self.now.lock().unwrap()
    }

    fn sleep_ms(&self, ms: u64) {
        self.advance_ms(ms);
    }
}

const WINDOW_MS: u64 = 60_000;

/// At most `limit` acquisitions per sliding 60-second window. A limit of
/// zero disables limiting.
pub struct RateLimiter {
    limit: u32,
    stamps: VecDeque<u64>,
}

impl RateLimiter {
    pub fn new(limit_per_min: u32) -> Self {
        RateLimiter {
            limit: limit_per_min,
            stamps: VecDeque::new(),
        }
    }

    /// Blocks (via the clock) until a call slot is free, then claims it.
    pub fn acquire(&mut self, clock: &dyn Clock) {
        if self.limit == 0 {
            return;
        }
        loop {
            let now = clock.now_ms();
            while let Some(&oldest) = self.stamps.front() {
                if now.saturating_sub(oldest) >= WINDOW_MS {
                    self.stamps.pop_front();
                } else {
                    break;
                }
            }
            if (self.stamps.len() as u32) < self.limit {
                self.stamps.push_back(now);
                return;
            }
            let oldest = *self.stamps.front().expect("window is full");
            let wait = WINDOW_MS - now.saturating_sub(oldest);
            clock.sleep_ms(wait.max(1));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calls_within_the_limit_do_not_wait() {
        let clock = ManualClock::new();
        let mut limiter = RateLimiter::new(3);
        for _ in 0..3 {
            limiter.acquire(&clock);
        }
        assert_eq!(clock.now_ms(), 0);
    }

    #[test]
    fn the_limit_plus_one_call_waits_for_the_window() {
        let clock = ManualClock::new();
        let mut limiter = RateLimiter::new(2);
        limiter.acquire(&clock);
        clock.advance_ms(10_000);
        limiter.acquire(&clock);
        // Third call must wait until the first stamp (t=0) leaves the window.
        limiter.acquire(&clock);
        assert_eq!(clock.now_ms(), 60_000);
    }

    #[test]
    fn slots_free_up_as_the_window_slides() {
        let clock = ManualClock::new();
        let mut limiter = RateLimiter::new(1);
        limiter.acquire(&clock);
        clock.advance_ms(61_000);
        limiter.acquire(&clock);
        assert_eq!(clock.now_ms(), 61_000);
    }

    #[test]
    fn zero_means_unlimited() {
        let clock = ManualClock::new();
        let mut limiter = RateLimiter::new(0);
        for _ in 0..1000 {
            limiter.acquire(&clock);
        }
        assert_eq!(clock.now_ms(), 0);
    }
}
