//! Independent reference implementations the tests compare against.
#![allow(dead_code)]

/// Oracle step, s.
pub const STEP: f64 = 1e-3;

/// Follower/leader TTC by stepping both agents forward 1 ms at a time and
/// interpolating inside the step where the gap closes.
pub fn stepped_follow_ttc(gap: f64, vf: f64, vl: f64, horizon: f64) -> Option<f64> {
    let gap_at = |t: f64| (gap + vl * t) - vf * t;
    if gap_at(0.0) <= 0.0 {
        return (vf > vl).then_some(0.0);
    }
    let mut k = 0u64;
    loop {
        let (t0, t1) = (k as f64 * STEP, (k + 1) as f64 * STEP);
        if t0 > horizon {
            return None;
        }
        let (g0, g1) = (gap_at(t0), gap_at(t1));
        if g1 <= 0.0 {
            return Some(t0 + g0 / (g0 - g1) * STEP);
        }
        k += 1;
    }
}

/// Closing speed by differencing extrapolated positions over one 1 ms step,
/// then the constant-deceleration stop requirement.
pub fn stepped_drac(gap: f64, vf: f64, vl: f64) -> f64 {
    let (xf0, xl0) = (0.0, gap);
    let (xf1, xl1) = (xf0 + vf * STEP, xl0 + vl * STEP);
    let closing = ((xl0 - xf0) - (xl1 - xf1)) / STEP;
    if closing <= 0.0 {
        0.0
    } else {
        closing * closing / (2.0 * gap)
    }
}

/// Occupancy window of one agent over the conflict point: 1 ms stepping
/// to bracket entry and exit, then bisection on the coverage predicate.
pub fn stepped_occupancy((d, v, h): (f64, f64, f64), horizon: f64) -> Option<(f64, f64)> {
    let covers = |t: f64| (d - v * t).abs() <= h;
    let refine = |mut lo: f64, mut hi: f64, want: bool| {
        // Invariant: covers(lo) != want, covers(hi) == want.
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if covers(mid) == want {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let mut entry = covers(0.0).then_some(0.0);
    let mut k = 1u64;
    while (k as f64) * STEP <= horizon {
        let (t0, t1) = ((k - 1) as f64 * STEP, k as f64 * STEP);
        match entry {
            None if covers(t1) => entry = Some(refine(t0, t1, true)),
            Some(e) if !covers(t1) => {
                // Last covered instant: bisect the exit boundary from the inside.
                let (mut lo, mut hi) = (t0, t1);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if covers(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some((e, lo));
            }
            _ => {}
        }
        k += 1;
    }
    entry.map(|e| (e, f64::INFINITY))
}

/// First time both footprints cover the conflict point, from the two
/// independently stepped occupancy windows.
pub fn stepped_crossing_ttc(a: (f64, f64, f64), b: (f64, f64, f64), horizon: f64) -> Option<f64> {
    let (sa, ea) = stepped_occupancy(a, horizon)?;
    let (sb, eb) = stepped_occupancy(b, horizon)?;
    let start = sa.max(sb);
    (start <= ea.min(eb)).then_some(start)
}

/// Brute-force N-back grading: every response rescans the whole stimulus
/// list for the latest unanswered onset inside the window.
pub fn brute_nback(symbols: &[u8], onsets: &[u64], responses: &[u64], n: usize, window: u64) -> (u32, u32, u32, u32) {
    let mut answered = vec![false; symbols.len()];
    let mut rs = responses.to_vec();
    rs.sort_unstable();
    for r in rs {
        let mut best: Option<usize> = None;
        for i in 0..symbols.len() {
            if onsets[i] <= r && r - onsets[i] <= window && !answered[i] {
                if best.is_none_or(|b| onsets[i] > onsets[b]) {
                    best = Some(i);
                }
            }
        }
        if let Some(i) = best {
            answered[i] = true;
        }
    }
    let (mut hits, mut misses, mut fas, mut crs) = (0, 0, 0, 0);
    for i in 0..symbols.len() {
        let target = n > 0 && i >= n && symbols[i] == symbols[i - n];
        match (target, answered[i]) {
            (true, true) => hits += 1,
            (true, false) => misses += 1,
            (false, true) => fas += 1,
            (false, false) => crs += 1,
        }
    }
    (hits, misses, fas, crs)
}

/// Root of a monotone function on [lo, hi] by bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let flo = f(lo);
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
