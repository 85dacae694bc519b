use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

/// Monotonic time source for the tick loop.
pub trait Clock {
    fn now_us(&self) -> u64;
    fn sleep_until(&self, t_us: u64);
}

#[derive(Debug, Clone, Copy)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_us(&self) -> u64 {
        self.origin.elapsed().as_micros() as u64
    }

    fn sleep_until(&self, t_us: u64) {
        let now = self.now_us();
        if t_us > now {
            std::thread::sleep(Duration::from_micros(t_us - now));
        }
    }
}

/// Clock that only moves when told to; sleeping jumps straight to the target.
#[derive(Debug, Default)]
pub struct ManualClock {
    now: AtomicU64,
}

impl ManualClock {
    pub fn new(t_us: u64) -> Self {
        Self { now: AtomicU64::new(t_us) }
    }

    pub fn advance(&self, us: u64) {
        self.now.fetch_add(us, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_us(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }

    fn sleep_until(&self, t_us: u64) {
        self.now.fetch_max(t_us, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PacerStats {
    pub ticks: u64,
    /// Ticks run a full period or more after their deadline.
    pub late_ticks: u64,
    pub max_lag_us: u64,
}

/// Fixed-rate deadline scheduler.
///
/// Deadline k is `origin + k·10⁶/rate` in integer microseconds, so the
/// schedule never drifts. Late ticks are run back to back, never skipped.
#[derive(Debug, Clone)]
pub struct Pacer {
    rate: u64,
    origin_us: u64,
    next: u64,
    stats: PacerStats,
}

impl Pacer {
    pub fn new(rate_hz: u16, origin_us: u64) -> Self {
        Self {
            rate: rate_hz as u64,
            origin_us,
            next: 1,
            stats: PacerStats::default(),
        }
    }

    pub fn deadline_us(&self, k: u64) -> u64 {
        self.origin_us + ((k as u128 * 1_000_000) / self.rate as u128) as u64
    }

    pub fn stats(&self) -> PacerStats {
        self.stats
    }

    /// Number of ticks whose deadlines have passed and that have not run yet.
    pub fn due(&self, now_us: u64) -> u64 {
        if now_us < self.deadline_us(self.next) {
            return 0;
        }
        let elapsed = (now_us - self.origin_us) as u128;
        let reached = (elapsed * self.rate as u128 / 1_000_000) as u64;
        reached + 1 - self.next
    }

    /// Record that the next tick ran at `now_us`.
    pub fn ran(&mut self, now_us: u64) {
        let deadline = self.deadline_us(self.next);
        let lag = now_us.saturating_sub(deadline);
        self.stats.ticks += 1;
        if lag >= self.deadline_us(self.next) - self.deadline_us(self.next - 1) {
            self.stats.late_ticks += 1;
        }
        self.stats.max_lag_us = self.stats.max_lag_us.max(lag);
        self.next += 1;
    }

    /// Block until the next deadline.
    pub fn wait(&self, clock: &impl Clock) {
        clock.sleep_until(self.deadline_us(self.next));
    }
}
