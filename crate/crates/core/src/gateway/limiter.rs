use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Per-backend admission control: at most `max_concurrent` calls in flight,
/// and call starts spaced at least `min_interval` apart.
#[derive(Debug)]
pub struct RateLimiter {
    max_concurrent: usize,
    min_interval: Duration,
    state: Mutex<State>,
    freed: Condvar,
}

#[derive(Debug)]
struct State {
    in_flight: usize,
    next_start: Option<Instant>,
}

impl RateLimiter {
    pub fn new(max_concurrent: usize, min_interval: Duration) -> Self {
        RateLimiter {
            max_concurrent: max_concurrent.max(1),
            min_interval,
            state: Mutex::new(State {
                in_flight: 0,
                next_start: None,
            }),
            freed: Condvar::new(),
        }
    }

    /// Spacing derived from a requests-per-minute budget.
    pub fn per_minute(max_concurrent: usize, requests_per_minute: u32) -> Self {
        let interval = if requests_per_minute == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / requests_per_minute as f64)
        };
        Self::new(max_concurrent, interval)
    }

    pub fn unlimited() -> Self {
        Self::new(usize::MAX, Duration::ZERO)
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    /// Blocks until a slot is free and the spacing interval has elapsed.
    pub fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().expect("limiter poisoned");
        while state.in_flight >= self.max_concurrent {
            state = self.freed.wait(state).expect("limiter poisoned");
        }
        state.in_flight += 1;
        let now = Instant::now();
        let start = state.next_start.map_or(now, |t| t.max(now));
        state.next_start = Some(start + self.min_interval);
        drop(state);
        let wait = start.saturating_duration_since(Instant::now());
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
        Permit { limiter: self }
    }

    fn release(&self) {
        let mut state = self.state.lock().expect("limiter poisoned");
        state.in_flight -= 1;
        drop(state);
        self.freed.notify_one();
    }
}

/// Releases its slot on drop.
#[derive(Debug)]
pub struct Permit<'a> {
    limiter: &'a RateLimiter,
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        self.limiter.release();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn caps_concurrency() {
        let limiter = Arc::new(RateLimiter::new(2, Duration::ZERO));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (limiter, live, peak) = (limiter.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = limiter.acquire();
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn spaces_starts() {
        let limiter = RateLimiter::new(4, Duration::from_millis(20));
        let t0 = Instant::now();
        for _ in 0..4 {
            drop(limiter.acquire());
        }
        assert!(t0.elapsed() >= Duration::from_millis(60));
    }
}
