use serde::Serialize;

use super::{SensorError, SensorStream};
use crate::events::{EventCode, EventRecord};

/// Accepted range for the fitted clock gain.
pub const GAIN_BAND: (f64, f64) = (0.99, 1.01);

/// Affine device-to-sim clock: `t_sim = a·t_dev + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClockMap {
    pub a: f64,
    pub b: f64,
    /// RMS of the fit residuals, s.
    pub residual_rms: f64,
    pub marks: usize,
}

impl ClockMap {
    pub const IDENTITY: ClockMap = ClockMap {
        a: 1.0,
        b: 0.0,
        residual_rms: 0.0,
        marks: 0,
    };

    pub fn to_sim(&self, t_dev: f64) -> f64 {
        self.a * t_dev + self.b
    }

    pub fn to_dev(&self, t_sim: f64) -> f64 {
        (t_sim - self.b) / self.a
    }
}

fn check_increasing(xs: &[f64]) -> Result<(), SensorError> {
    match xs.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(SensorError::NonMonotone(i + 1)),
        None => Ok(()),
    }
}

/// Least-squares line through paired marks. Two marks interpolate exactly.
pub fn fit_clock_map(device: &[f64], sim: &[f64]) -> Result<ClockMap, SensorError> {
    let n = device.len().min(sim.len());
    if n < 2 || device.len() != sim.len() {
        return Err(SensorError::TooFewMarks(n));
    }
    check_increasing(device)?;
    check_increasing(sim)?;
    let nf = n as f64;
    let mx = device.iter().sum::<f64>() / nf;
    let my = sim.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in device.iter().zip(sim) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    if !(GAIN_BAND.0..=GAIN_BAND.1).contains(&a) {
        return Err(SensorError::GainOutOfBand(a));
    }
    let ss: f64 = device
        .iter()
        .zip(sim)
        .map(|(x, y)| {
            let r = y - (a * x + b);
            r * r
        })
        .sum();
    Ok(ClockMap {
        a,
        b,
        residual_rms: (ss / nf).sqrt(),
        marks: n,
    })
}

/// Match a MARK stream against SYNC_MARK events by mark index; returns
/// `(device times, sim times)` for the shared indices in order.
pub fn pair_marks(marks: &SensorStream, events: &[EventRecord]) -> (Vec<f64>, Vec<f64>) {
    let sim: std::collections::BTreeMap<u32, f64> = events
        .iter()
        .filter(|e| e.code == EventCode::SYNC_MARK)
        .map(|e| (e.subject, e.sim_time_s()))
        .collect();
    marks
        .samples
        .iter()
        .filter_map(|s| {
            let idx = *s.channels.first()?;
            (idx >= 0.0 && idx.fract() == 0.0)
                .then(|| sim.get(&(idx as u32)).map(|&t| (s.t_dev, t)))
                .flatten()
        })
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_marks_are_exact() {
        let m = fit_clock_map(&[0.0, 100.0], &[50.0, 150.0]).unwrap();
        assert_eq!((m.a, m.b, m.residual_rms), (1.0, 50.0, 0.0));
        assert_eq!(m.to_dev(150.0), 100.0);
    }

    #[test]
    fn rejects_bad_marks() {
        assert!(matches!(fit_clock_map(&[1.0], &[1.0]), Err(SensorError::TooFewMarks(1))));
        assert!(matches!(
            fit_clock_map(&[0.0, 2.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(SensorError::NonMonotone(2))
        ));
        assert!(matches!(
            fit_clock_map(&[0.0, 100.0], &[0.0, 110.0]),
            Err(SensorError::GainOutOfBand(_))
        ));
    }
}
