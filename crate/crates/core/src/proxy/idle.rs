//! Network-idle bookkeeping shared by every exchange of a proxy.

use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IdleState {
    pub idle: bool,
    pub in_flight: u64,
    /// Milliseconds since the last request start or response completion.
    pub since_ms: u64,
}

#[derive(Debug)]
struct Inner {
    in_flight: u64,
    last_ms: u64,
}

/// Counts open exchanges and remembers when traffic last moved. Time is
/// measured in milliseconds from the tracker's creation so tests can ask
/// about any instant with [`IdleTracker::state_at`].
#[derive(Debug)]
pub struct IdleTracker {
    origin: Instant,
    inner: Mutex<Inner>,
}

impl Default for IdleTracker {
    fn default() -> Self {
        Self::new()
    }
}

impl IdleTracker {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            inner: Mutex::new(Inner {
                in_flight: 0,
                last_ms: 0,
            }),
        }
    }

    pub fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }

    pub fn begin(&self) {
        self.begin_at(self.now_ms());
    }

    pub fn end(&self) {
        self.end_at(self.now_ms());
    }

    pub fn begin_at(&self, now_ms: u64) {
        let mut g = self.inner.lock().unwrap();
        g.in_flight += 1;
        g.last_ms = g.last_ms.max(now_ms);
    }

    pub fn end_at(&self, now_ms: u64) {
        let mut g = self.inner.lock().unwrap();
        g.in_flight = g.in_flight.saturating_sub(1);
        g.last_ms = g.last_ms.max(now_ms);
    }

    pub fn in_flight(&self) -> u64 {
        self.inner.lock().unwrap().in_flight
    }

    pub fn state(&self, quiet_ms: u64) -> IdleState {
        self.state_at(self.now_ms(), quiet_ms)
    }

    pub fn state_at(&self, now_ms: u64, quiet_ms: u64) -> IdleState {
        let g = self.inner.lock().unwrap();
        let since_ms = now_ms.saturating_sub(g.last_ms);
        IdleState {
            idle: g.in_flight == 0 && since_ms >= quiet_ms,
            in_flight: g.in_flight,
            since_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fresh_tracker_is_idle_at_zero_quiet() {
        let t = IdleTracker::new();
        assert!(t.state(0).idle);
    }

    #[test]
    fn open_exchange_is_never_idle() {
        let t = IdleTracker::new();
        t.begin_at(5);
        for q in [0, 1, 1_000_000] {
            assert!(!t.state_at(10_000_000, q).idle);
        }
        assert_eq!(t.state_at(6, 0).in_flight, 1);
    }

    #[test]
    fn quiet_boundary_is_exact() {
        let t = IdleTracker::new();
        t.begin_at(100);
        t.end_at(250);
        let quiet = 500;
        assert!(!t.state_at(250 + quiet - 1, quiet).idle);
        assert!(t.state_at(250 + quiet, quiet).idle);
        assert_eq!(t.state_at(250 + quiet, quiet).since_ms, quiet);
    }

    #[test]
    fn last_activity_never_moves_backwards() {
        let t = IdleTracker::new();
        t.begin_at(100);
        t.end_at(50);
        assert_eq!(t.state_at(100, 0).since_ms, 0);
    }
}
