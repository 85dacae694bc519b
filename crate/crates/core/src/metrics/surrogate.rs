//! Surrogate safety measures: time-to-collision and deceleration rate to
//! avoid crash, for car-following and for crossing paths.

/// DRAC values above this are reported as saturated.
pub const DRAC_CAP: f64 = 99.9;

/// Follower/leader time-to-collision on a shared path.
///
/// `None` when the follower is not closing. A non-positive gap with closing
/// speed is an ongoing collision and reports 0.
pub fn follow_ttc(gap: f64, v_follower: f64, v_leader: f64) -> Option<f64> {
    let closing = v_follower - v_leader;
    if !(closing > 0.0) {
        return None;
    }
    Some((gap / closing).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Drac {
    /// m/s², capped at [`DRAC_CAP`].
    pub value: f64,
    pub saturated: bool,
}

/// Deceleration the follower needs to match the leader's speed without
/// closing the gap: (v_f − v_l)² / (2·gap). Zero when not closing.
pub fn drac(gap: f64, v_follower: f64, v_leader: f64) -> Drac {
    let closing = v_follower - v_leader;
    if !(closing > 0.0) {
        return Drac {
            value: 0.0,
            saturated: false,
        };
    }
    let raw = if gap > 0.0 {
        closing * closing / (2.0 * gap)
    } else {
        f64::INFINITY
    };
    if raw > DRAC_CAP {
        Drac {
            value: DRAC_CAP,
            saturated: true,
        }
    } else {
        Drac {
            value: raw,
            saturated: false,
        }
    }
}

/// One agent's approach to a conflict point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictApproach {
    /// Signed distance to the conflict point along the path, negative once
    /// past it.
    pub distance: f64,
    pub speed: f64,
    pub half_length: f64,
}

/// Time interval during which the agent's footprint covers the conflict
/// point, under constant speed. `None` if it never does.
pub fn occupancy(a: &ConflictApproach) -> Option<(f64, f64)> {
    let (d, v, h) = (a.distance, a.speed, a.half_length);
    if v > 0.0 {
        let end = (d + h) / v;
        if end < 0.0 {
            return None;
        }
        Some((((d - h) / v).max(0.0), end))
    } else if d.abs() <= h {
        Some((0.0, f64::INFINITY))
    } else {
        None
    }
}

/// Crossing-path TTC: time until both footprints cover the conflict point
/// at once. `None` when the occupancy intervals never overlap.
pub fn crossing_ttc(a: &ConflictApproach, b: &ConflictApproach) -> Option<f64> {
    let (sa, ea) = occupancy(a)?;
    let (sb, eb) = occupancy(b)?;
    let start = sa.max(sb);
    if start <= ea.min(eb) {
        Some(start)
    } else {
        None
    }
}
