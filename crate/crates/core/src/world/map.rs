use std::collections::BTreeMap;

use super::{AgentState, Polyline, Projection, Vec2, WorldError};

#[derive(Debug, Clone, PartialEq)]
pub struct Lane {
    pub id: String,
    pub width: f64,
    pub centerline: Polyline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crosswalk {
    pub id: String,
    pub polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConflictPoint {
    pub id: String,
    pub position: Vec2,
}

/// Piecewise-linear grade as a function of arc length. Empty means flat.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradeProfile {
    /// (arc length m, grade) pairs sorted by arc length.
    pub points: Vec<(f64, f64)>,
}

impl GradeProfile {
    pub fn flat() -> Self {
        Self::default()
    }

    /// Grade at `s`, held constant beyond the first and last breakpoints.
    pub fn grade_at(&self, s: f64) -> f64 {
        let pts = &self.points;
        match pts.len() {
            0 => 0.0,
            1 => pts[0].1,
            _ => {
                if s <= pts[0].0 {
                    return pts[0].1;
                }
                let last = pts[pts.len() - 1];
                if s >= last.0 {
                    return last.1;
                }
                let i = pts.partition_point(|p| p.0 <= s) - 1;
                let (s0, g0) = pts[i];
                let (s1, g1) = pts[i + 1];
                if s1 <= s0 {
                    return g1;
                }
                g0 + (g1 - g0) * (s - s0) / (s1 - s0)
            }
        }
    }
}

/// A per-agent approach ending at a named conflict point.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproachPath {
    pub id: String,
    pub conflict_point: String,
    pub path: Polyline,
    pub grades: GradeProfile,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConflictDistance {
    /// Remaining distance to the conflict point along the path, ≥ 0.
    pub distance: f64,
    /// Set once the agent is beyond the conflict point.
    pub passed: bool,
    /// How far past the conflict point the agent is (0 when not passed).
    pub overshoot: f64,
}

impl ConflictDistance {
    /// Distance with overshoot folded in as a negative value.
    pub fn signed(&self) -> f64 {
        if self.passed {
            -self.overshoot
        } else {
            self.distance
        }
    }
}

impl ApproachPath {
    pub fn project(&self, p: Vec2) -> Projection {
        self.path.project(p)
    }

    pub fn length(&self) -> f64 {
        self.path.length()
    }

    /// Path length minus the projected arc length of the agent.
    pub fn distance_to_conflict(&self, state: &AgentState) -> ConflictDistance {
        let proj = self.path.project(state.position());
        let remaining = (self.path.length() - proj.arc_length).max(0.0);
        let passed = proj.overshoot > 0.0;
        ConflictDistance {
            distance: if passed { 0.0 } else { remaining },
            passed,
            overshoot: proj.overshoot,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapModel {
    pub lanes: Vec<Lane>,
    pub crosswalks: Vec<Crosswalk>,
    pub conflict_points: Vec<ConflictPoint>,
    pub approach_paths: Vec<ApproachPath>,
}

impl MapModel {
    pub fn conflict_point(&self, id: &str) -> Option<&ConflictPoint> {
        self.conflict_points.iter().find(|c| c.id == id)
    }

    pub fn approach(&self, id: &str) -> Option<&ApproachPath> {
        self.approach_paths.iter().find(|p| p.id == id)
    }

    pub fn lane(&self, id: &str) -> Option<&Lane> {
        self.lanes.iter().find(|l| l.id == id)
    }

    /// Any polyline an agent can be bound to: approach paths first, then lanes.
    pub fn polyline(&self, id: &str) -> Option<&Polyline> {
        self.approach(id)
            .map(|a| &a.path)
            .or_else(|| self.lane(id).map(|l| &l.centerline))
    }

    /// Approach paths grouped by their conflict point id.
    pub fn approaches_by_conflict(&self) -> BTreeMap<&str, Vec<&ApproachPath>> {
        let mut out: BTreeMap<&str, Vec<&ApproachPath>> = BTreeMap::new();
        for a in &self.approach_paths {
            out.entry(a.conflict_point.as_str()).or_default().push(a);
        }
        out
    }

    /// Structural checks on the geometry. Returns one message per violation.
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        for lane in &self.lanes {
            if !(lane.width > 0.0 && lane.width.is_finite()) {
                issues.push(format!("lane {}: width must be > 0", lane.id));
            }
            if lane.centerline.self_intersects() {
                issues.push(format!("lane {}: centerline self-intersects", lane.id));
            }
        }
        for cw in &self.crosswalks {
            if cw.polygon.len() < 3 {
                issues.push(format!("crosswalk {}: polygon needs at least 3 vertices", cw.id));
            }
        }
        for a in &self.approach_paths {
            if a.path.self_intersects() {
                issues.push(format!("path {}: polyline self-intersects", a.id));
            }
            match self.conflict_point(&a.conflict_point) {
                None => issues.push(format!(
                    "path {}: unknown conflict point {}",
                    a.id, a.conflict_point
                )),
                Some(cp) => {
                    let gap = a.path.end().distance(cp.position);
                    if gap > 0.01 {
                        issues.push(format!(
                            "path {}: final vertex is {:.3} m from conflict point {} (limit 0.01 m)",
                            a.id, gap, cp.id
                        ));
                    }
                }
            }
            for &(s, g) in &a.grades.points {
                if !(-0.2..=0.2).contains(&g) {
                    issues.push(format!("path {}: grade {} at s={} outside [-0.2, 0.2]", a.id, g, s));
                }
            }
            if a.grades.points.windows(2).any(|w| w[1].0 < w[0].0) {
                issues.push(format!("path {}: grade breakpoints not sorted", a.id));
            }
        }
        issues
    }
}

/// Free-function form of [`ApproachPath::distance_to_conflict`].
pub fn distance_to_conflict(state: &AgentState, path: &ApproachPath) -> ConflictDistance {
    path.distance_to_conflict(state)
}

/// Free-function form of [`Polyline::project`] that rejects degenerate paths.
pub fn project_to_path(pose: &super::Pose2D, path: &[Vec2]) -> Result<(f64, f64), WorldError> {
    let line = Polyline::new(path.to_vec())?;
    let p = line.project(pose.position());
    Ok((p.arc_length, p.lateral_offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{AgentKind, Pose2D};
    use proptest::prelude::*;

    fn straight(len: f64) -> ApproachPath {
        ApproachPath {
            id: "p".into(),
            conflict_point: "cp".into(),
            path: Polyline::from_xy(&[[-len, 0.0], [0.0, 0.0]]).unwrap(),
            grades: GradeProfile::flat(),
        }
    }

    fn at(x: f64, y: f64) -> AgentState {
        AgentState::new(1, AgentKind::Pedestrian, Pose2D::new(x, y, 0.0))
    }

    #[test]
    fn project_examples() {
        let path = [Vec2::new(0.0, 0.0), Vec2::new(20.0, 0.0)];
        assert_eq!(project_to_path(&Pose2D::new(0.0, 0.0, 0.0), &path).unwrap(), (0.0, 0.0));
        assert_eq!(project_to_path(&Pose2D::new(5.0, 2.0, 0.0), &path).unwrap(), (5.0, 2.0));
        let zero = [Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)];
        assert!(project_to_path(&Pose2D::default(), &zero).is_err());
    }

    #[test]
    fn distance_examples() {
        let p = straight(100.0);
        assert_eq!(p.distance_to_conflict(&at(-100.0, 0.0)).distance, 100.0);
        let at_cp = p.distance_to_conflict(&at(0.0, 0.0));
        assert_eq!(at_cp.distance, 0.0);
        assert!(!at_cp.passed);
        assert_eq!(p.distance_to_conflict(&at(-18.0, 0.0)).distance, 18.0);
        let past = p.distance_to_conflict(&at(3.0, 0.0));
        assert_eq!(past.distance, 0.0);
        assert!(past.passed);
        assert_eq!(past.signed(), -3.0);
    }

    #[test]
    fn grade_interpolation() {
        let g = GradeProfile {
            points: vec![(0.0, 0.0), (10.0, 0.1), (20.0, -0.05)],
        };
        assert_eq!(g.grade_at(-5.0), 0.0);
        assert!((g.grade_at(5.0) - 0.05).abs() < 1e-12);
        assert!((g.grade_at(15.0) - 0.025).abs() < 1e-12);
        assert_eq!(g.grade_at(30.0), -0.05);
        assert_eq!(GradeProfile::flat().grade_at(3.0), 0.0);
    }

    #[test]
    fn check_flags_misplaced_endpoint() {
        let mut map = MapModel::default();
        map.conflict_points.push(ConflictPoint {
            id: "cp".into(),
            position: Vec2::new(0.0, 0.05),
        });
        map.approach_paths.push(straight(50.0));
        let issues = map.check();
        assert_eq!(issues.len(), 1);
        assert!(issues[0].contains("from conflict point"));
    }

    proptest! {
        #[test]
        fn distance_non_increasing_forward(steps in proptest::collection::vec(0.0f64..2.0, 1..60)) {
            let path = ApproachPath {
                id: "p".into(),
                conflict_point: "cp".into(),
                path: Polyline::from_xy(&[[0.0, 0.0], [30.0, 0.0], [30.0, 30.0], [60.0, 60.0]]).unwrap(),
                grades: GradeProfile::flat(),
            };
            let mut s = 0.0;
            let mut last = f64::INFINITY;
            for ds in steps {
                s += ds;
                let p = path.path.point_at(s);
                let d = path.distance_to_conflict(&at(p.x, p.y)).distance;
                prop_assert!(d <= last + 1e-9);
                last = d;
            }
        }
    }
}
