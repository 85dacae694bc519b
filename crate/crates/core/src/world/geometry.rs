//! Planar geometry: vectors, headings and arc-length parameterized polylines.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::WorldError;

/// Wrap an angle into (−π, π].
pub fn normalize_heading(theta: f64) -> f64 {
    if !theta.is_finite() {
        return theta;
    }
    let mut wrapped = theta.rem_euclid(2.0 * PI);
    if wrapped > PI {
        wrapped -= 2.0 * PI;
    }
    // rem_euclid maps −π to π already; guard the lower open bound against rounding.
    if wrapped <= -PI {
        wrapped += 2.0 * PI;
    }
    wrapped
}

/// Signed smallest rotation taking `from` to `to`, in (−π, π].
pub fn heading_delta(from: f64, to: f64) -> f64 {
    normalize_heading(to - from)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_heading(heading: f64) -> Self {
        Self::new(heading.cos(), heading.sin())
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z-component of the 3D cross product; positive when `other` is to the left.
    pub fn cross(self, other: Self) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(self.x * k, self.y * k)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(p: [f64; 2]) -> Self {
        Self::new(p[0], p[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

/// Result of projecting a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the nearest point, in `[0, length]`.
    pub arc_length: f64,
    /// Signed distance to the nearest point, positive to the left of travel.
    pub lateral_offset: f64,
    /// Index of the segment holding the nearest point.
    pub segment: usize,
    /// Signed distance travelled past the final vertex along the final
    /// segment's direction; zero unless the nearest point is the last vertex.
    pub overshoot: f64,
}

/// An open polyline with cached cumulative arc lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    points: Vec<Vec2>,
    cumulative: Vec<f64>,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Result<Self, WorldError> {
        if points.len() < 2 {
            return Err(WorldError::TooFewVertices(points.len()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(WorldError::NonFinite("polyline vertex"));
        }
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += w[0].distance(w[1]);
            cumulative.push(acc);
        }
        if acc <= 0.0 {
            return Err(WorldError::DegeneratePath);
        }
        Ok(Self { points, cumulative })
    }

    pub fn from_xy(points: &[[f64; 2]]) -> Result<Self, WorldError> {
        Self::new(points.iter().copied().map(Vec2::from).collect())
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().expect("at least two vertices")
    }

    pub fn start(&self) -> Vec2 {
        self.points[0]
    }

    pub fn end(&self) -> Vec2 {
        *self.points.last().expect("at least two vertices")
    }

    fn segment_at(&self, s: f64) -> usize {
        // Last segment with cumulative start <= s, skipping zero-length segments at the tail.
        let n = self.points.len() - 1;
        match self.cumulative[..n].partition_point(|&c| c <= s) {
            0 => 0,
            k => k - 1,
        }
    }

    fn segment_dir(&self, i: usize) -> Vec2 {
        let d = self.points[i + 1] - self.points[i];
        let len = d.norm();
        if len > 0.0 {
            d.scale(1.0 / len)
        } else {
            // Zero-length segment: borrow the nearest non-degenerate direction.
            let fwd = (i + 1..self.points.len() - 1)
                .map(|j| self.points[j + 1] - self.points[j])
                .find(|v| v.norm() > 0.0);
            let back = (0..i)
                .rev()
                .map(|j| self.points[j + 1] - self.points[j])
                .find(|v| v.norm() > 0.0);
            let v = fwd.or(back).expect("non-degenerate polyline");
            v.scale(1.0 / v.norm())
        }
    }

    /// Point at arc length `s`; extrapolates linearly beyond either end.
    pub fn point_at(&self, s: f64) -> Vec2 {
        if s <= 0.0 {
            let d = self.segment_dir(0);
            return self.points[0] + d.scale(s);
        }
        if s >= self.length() {
            let last = self.points.len() - 2;
            let d = self.segment_dir(last);
            return self.end() + d.scale(s - self.length());
        }
        let i = self.segment_at(s);
        let d = self.segment_dir(i);
        self.points[i] + d.scale(s - self.cumulative[i])
    }

    /// Travel direction at arc length `s`.
    pub fn heading_at(&self, s: f64) -> f64 {
        let i = if s >= self.length() {
            self.points.len() - 2
        } else if s <= 0.0 {
            0
        } else {
            self.segment_at(s)
        };
        self.segment_dir(i).heading()
    }

    /// Global nearest-point projection. Equidistant candidates resolve to the
    /// smallest arc length.
    pub fn project(&self, p: Vec2) -> Projection {
        let mut best: Option<(f64, Projection)> = None;
        for i in 0..self.points.len() - 1 {
            let a = self.points[i];
            let b = self.points[i + 1];
            let ab = b - a;
            let len2 = ab.dot(ab);
            let t = if len2 > 0.0 {
                ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = a + ab.scale(t);
            let dist = p.distance(q);
            let better = match &best {
                None => true,
                Some((d, _)) => dist < *d,
            };
            if better {
                let dir = self.segment_dir(i);
                let rel = p - q;
                let side = dir.cross(rel);
                let lateral = if side < 0.0 { -dist } else { dist };
                let arc = self.cumulative[i] + (self.cumulative[i + 1] - self.cumulative[i]) * t;
                best = Some((
                    dist,
                    Projection {
                        arc_length: arc,
                        lateral_offset: lateral,
                        segment: i,
                        overshoot: 0.0,
                    },
                ));
            }
        }
        let (_, mut proj) = best.expect("at least one segment");
        let last = self.points.len() - 2;
        if proj.arc_length >= self.length() {
            let dir = self.segment_dir(last);
            let rel = p - self.end();
            proj.overshoot = rel.dot(dir).max(0.0);
        }
        proj
    }

    /// True when any two non-adjacent segments intersect.
    pub fn self_intersects(&self) -> bool {
        let n = self.points.len() - 1;
        for i in 0..n {
            for j in (i + 2)..n {
                if segments_intersect(
                    self.points[i],
                    self.points[i + 1],
                    self.points[j],
                    self.points[j + 1],
                ) {
                    return true;
                }
            }
        }
        false
    }
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, polygon: &[Vec2]) -> bool {
    let mut inside = false;
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (polygon[i], polygon[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}
