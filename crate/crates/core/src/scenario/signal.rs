use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalPhase {
    Green,
    Red,
}

impl SignalPhase {
    pub fn code(self) -> u8 {
        match self {
            SignalPhase::Green => 0,
            SignalPhase::Red => 1,
        }
    }
}

/// Fixed-time two-phase light. The listed paths see `Green` for the first
/// `green_s` of each cycle and `Red` for the remaining `red_s`; the crossing
/// movement is the complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPlan {
    pub green_s: f64,
    pub red_s: f64,
    #[serde(default)]
    pub offset_s: f64,
    /// Approach paths facing the light.
    pub paths: Vec<String>,
}

fn micros(s: f64) -> i128 {
    (s * 1e6).round() as i128
}

impl SignalPlan {
    /// Phase at sim time `t_us`. Integer arithmetic, so phase changes land on
    /// exact microsecond boundaries.
    pub fn phase_at(&self, t_us: u64) -> SignalPhase {
        let cycle = micros(self.green_s + self.red_s).max(1);
        let pos = (t_us as i128 + micros(self.offset_s)).rem_euclid(cycle);
        if pos < micros(self.green_s) {
            SignalPhase::Green
        } else {
            SignalPhase::Red
        }
    }

    pub fn controls(&self, path: &str) -> bool {
        self.paths.iter().any(|p| p == path)
    }

    /// Whether `path` is held at red at `t_us`.
    pub fn is_red_for(&self, path: &str, t_us: u64) -> bool {
        self.controls(path) && self.phase_at(t_us) == SignalPhase::Red
    }

    pub(crate) fn check(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [("green_s", self.green_s), ("red_s", self.red_s)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("signal_plan: {name} must be > 0 s, got {v}"));
            }
        }
        if !self.offset_s.is_finite() {
            out.push("signal_plan: offset_s must be finite".into());
        }
        out
    }
}
