use thiserror::Error;

/// One request/response exchange, all in µs.
///
/// t0 client send, t1 server receive, t2 server send, t3 client receive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClockSample {
    pub t0: u64,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
}

impl ClockSample {
    /// Server-minus-client offset, truncated toward zero.
    pub fn offset_us(&self) -> i64 {
        let (t0, t1, t2, t3) = (self.t0 as i128, self.t1 as i128, self.t2 as i128, self.t3 as i128);
        (((t1 - t0) + (t2 - t3)) / 2) as i64
    }

    /// Round-trip delay excluding server processing time.
    pub fn delay_us(&self) -> u64 {
        let (t0, t1, t2, t3) = (self.t0 as i128, self.t1 as i128, self.t2 as i128, self.t3 as i128);
        ((t3 - t0) - (t2 - t1)).max(0) as u64
    }

    pub fn is_ordered(&self) -> bool {
        self.t3 >= self.t0 && self.t2 >= self.t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OffsetEstimate {
    pub offset_us: i64,
    pub delay_us: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ClockError {
    #[error("no clock samples")]
    Empty,
    #[error("window must be at least 1")]
    ZeroWindow,
    #[error("sample {0} violates t3 >= t0 or t2 >= t1")]
    Unordered(usize),
}

/// Min-delay filter over the last `window` samples. Ties go to the most
/// recent sample.
pub fn estimate_offset(samples: &[ClockSample], window: usize) -> Result<OffsetEstimate, ClockError> {
    if samples.is_empty() {
        return Err(ClockError::Empty);
    }
    if window == 0 {
        return Err(ClockError::ZeroWindow);
    }
    let start = samples.len().saturating_sub(window);
    let mut best: Option<&ClockSample> = None;
    for (i, s) in samples.iter().enumerate().skip(start) {
        if !s.is_ordered() {
            return Err(ClockError::Unordered(i));
        }
        if best.map_or(true, |b| s.delay_us() <= b.delay_us()) {
            best = Some(s);
        }
    }
    let best = best.expect("window is non-empty");
    Ok(OffsetEstimate {
        offset_us: best.offset_us(),
        delay_us: best.delay_us(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(t0: u64, t1: u64, t2: u64, t3: u64) -> ClockSample {
        ClockSample { t0, t1, t2, t3 }
    }

    #[test]
    fn hand_worked_sample() {
        let est = estimate_offset(&[s(100, 160, 165, 130)], 8).unwrap();
        assert_eq!(est.offset_us, 47);
        assert_eq!(est.delay_us, 25);
    }

    #[test]
    fn negative_half_truncates_toward_zero() {
        // θ = ((100 − 160) + (165 − 200)) / 2 = −47.5
        assert_eq!(s(160, 100, 165, 200).offset_us(), -47);
    }

    #[test]
    fn zero_latency_equal_clocks() {
        let est = estimate_offset(&[s(5, 5, 5, 5)], 1).unwrap();
        assert_eq!((est.offset_us, est.delay_us), (0, 0));
    }

    #[test]
    fn symmetric_latency_cancels() {
        let (offset, lat) = (50_000u64, 10_000u64);
        let t0 = 1_000_000;
        let t1 = t0 + lat + offset;
        let t2 = t1 + 300;
        let t3 = t2 - offset + lat;
        assert_eq!(estimate_offset(&[s(t0, t1, t2, t3)], 1).unwrap().offset_us, 50_000);
    }

    #[test]
    fn picks_min_delay_within_window() {
        let samples = [s(0, 10, 10, 2), s(0, 50, 50, 100), s(0, 40, 41, 30), s(0, 60, 60, 90)];
        assert_eq!(estimate_offset(&samples, 4).unwrap().delay_us, 2);
        assert_eq!(estimate_offset(&samples, 3).unwrap().delay_us, 29);
        assert!(estimate_offset(&[], 3).is_err());
        assert!(estimate_offset(&samples, 0).is_err());
    }

    #[test]
    fn ties_prefer_latest() {
        let samples = [s(0, 10, 10, 20), s(0, 30, 30, 20)];
        assert_eq!(estimate_offset(&samples, 2).unwrap().offset_us, 20);
    }
}
