use serde::Serialize;

use super::{gaze_ch, Modality, SensorError, SensorStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixationParams {
    /// Maximum (x range + y range), degrees.
    pub dispersion_deg: f64,
    pub min_dur_ms: f64,
    /// Field of view spanned by normalized x and y, degrees.
    pub fov_deg: [f64; 2],
}

impl Default for FixationParams {
    fn default() -> Self {
        Self {
            dispersion_deg: 1.0,
            min_dur_ms: 100.0,
            fov_deg: [100.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fixation {
    /// First sample time, device s.
    pub start: f64,
    /// One sample period past the last sample.
    pub end: f64,
    /// Mean normalized position.
    pub x: f64,
    pub y: f64,
    pub samples: usize,
}

impl Fixation {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

fn check_gaze(stream: &SensorStream) -> Result<(), SensorError> {
    if stream.modality != Modality::Gaze {
        return Err(SensorError::Invalid {
            stream: stream.stream_id.clone(),
            message: format!("expected GAZE, got {}", stream.modality),
        });
    }
    Ok(())
}

/// Running min/max of the window in degrees.
#[derive(Clone, Copy)]
struct Extent {
    min: [f64; 2],
    max: [f64; 2],
}

impl Extent {
    fn of(p: [f64; 2]) -> Self {
        Self { min: p, max: p }
    }

    fn with(mut self, p: [f64; 2]) -> Self {
        for k in 0..2 {
            self.min[k] = self.min[k].min(p[k]);
            self.max[k] = self.max[k].max(p[k]);
        }
        self
    }

    fn dispersion(&self) -> f64 {
        (self.max[0] - self.min[0]) + (self.max[1] - self.min[1])
    }
}

/// Dispersion-threshold (I-DT) fixation detection.
///
/// A window is seeded with the minimum-duration span and grown while the
/// summed x and y ranges stay within `dispersion_deg`. Invalid samples
/// end a window and never belong to one. Output is ordered and disjoint.
pub fn detect_fixations(stream: &SensorStream, params: &FixationParams) -> Result<Vec<Fixation>, SensorError> {
    check_gaze(stream)?;
    let s = &stream.samples;
    let n = s.len();
    let period = if stream.rate_hz > 0.0 { 1.0 / stream.rate_hz } else { 0.0 };
    let valid = |i: usize| s[i].channels[gaze_ch::VALID] >= 0.5;
    let deg = |i: usize| {
        [
            s[i].channels[gaze_ch::X] * params.fov_deg[0],
            s[i].channels[gaze_ch::Y] * params.fov_deg[1],
        ]
    };
    let min_dur = params.min_dur_ms / 1000.0;
    let span = |i: usize, j: usize| s[j].t_dev - s[i].t_dev + period;

    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if !valid(i) {
            i += 1;
            continue;
        }
        // Seed: smallest window [i, j] lasting min_dur, all valid.
        let mut j = i;
        let mut ext = Extent::of(deg(i));
        let mut ok = true;
        while span(i, j) + 1e-9 < min_dur {
            if j + 1 >= n || !valid(j + 1) {
                ok = false;
                break;
            }
            j += 1;
            ext = ext.with(deg(j));
        }
        if !ok || ext.dispersion() > params.dispersion_deg {
            i += 1;
            continue;
        }
        while j + 1 < n && valid(j + 1) {
            let grown = ext.with(deg(j + 1));
            if grown.dispersion() > params.dispersion_deg {
                break;
            }
            ext = grown;
            j += 1;
        }
        let count = j - i + 1;
        let (sx, sy) = (i..=j).fold((0.0, 0.0), |(ax, ay), k| {
            (ax + s[k].channels[gaze_ch::X], ay + s[k].channels[gaze_ch::Y])
        });
        out.push(Fixation {
            start: s[i].t_dev,
            end: s[j].t_dev + period,
            x: sx / count as f64,
            y: sy / count as f64,
            samples: count,
        });
        i = j + 1;
    }
    Ok(out)
}

/// Histogram of valid gaze samples on an `rows × cols` grid over the unit
/// square, Gaussian-smoothed (kernel truncated at 3σ, zero beyond the
/// edges) and scaled so the maximum is 1.
pub fn gaze_heatmap(
    stream: &SensorStream,
    rows: usize,
    cols: usize,
    sigma_cells: f64,
) -> Result<Vec<Vec<f64>>, SensorError> {
    check_gaze(stream)?;
    if rows == 0 || cols == 0 {
        return Err(SensorError::Invalid {
            stream: stream.stream_id.clone(),
            message: "heatmap grid must be at least 1×1".into(),
        });
    }
    let mut grid = vec![vec![0.0; cols]; rows];
    for s in &stream.samples {
        let (x, y) = (s.channels[gaze_ch::X], s.channels[gaze_ch::Y]);
        if s.channels[gaze_ch::VALID] < 0.5 || !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            continue;
        }
        let c = ((x * cols as f64) as usize).min(cols - 1);
        let r = ((y * rows as f64) as usize).min(rows - 1);
        grid[r][c] += 1.0;
    }
    if sigma_cells > 0.0 {
        let radius = (3.0 * sigma_cells).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|k| (-(k * k) as f64 / (2.0 * sigma_cells * sigma_cells)).exp())
            .collect();
        let blur = |line: &[f64]| -> Vec<f64> {
            (0..line.len() as isize)
                .map(|i| {
                    kernel
                        .iter()
                        .enumerate()
                        .filter_map(|(k, w)| {
                            let j = i + k as isize - radius;
                            (0..line.len() as isize).contains(&j).then(|| w * line[j as usize])
                        })
                        .sum()
                })
                .collect()
        };
        grid = grid.iter().map(|row| blur(row)).collect();
        for c in 0..cols {
            let col: Vec<f64> = grid.iter().map(|r| r[c]).collect();
            for (r, v) in blur(&col).into_iter().enumerate() {
                grid[r][c] = v;
            }
        }
    }
    let max = grid.iter().flatten().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        for v in grid.iter_mut().flatten() {
            *v /= max;
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaze(points: impl IntoIterator<Item = (f64, f64, f64)>) -> SensorStream {
        let mut s = SensorStream::new("gaze", Modality::Gaze, 200.0, "hmd");
        for (i, (x, y, v)) in points.into_iter().enumerate() {
            s.push(i as f64 / 200.0, vec![x, y, 3.0, v]);
        }
        s
    }

    #[test]
    fn static_gaze_is_one_fixation() {
        let s = gaze((0..200).map(|_| (0.3, 0.6, 1.0)));
        let f = detect_fixations(&s, &FixationParams::default()).unwrap();
        assert_eq!(f.len(), 1);
        assert!((f[0].duration() - 1.0).abs() < 1e-9);
        assert!((f[0].x - 0.3).abs() < 1e-12 && (f[0].y - 0.6).abs() < 1e-12);
    }

    #[test]
    fn invalid_samples_split_fixations() {
        let s = gaze((0..200).map(|i| (0.5, 0.5, if i == 100 { 0.0 } else { 1.0 })));
        let f = detect_fixations(&s, &FixationParams::default()).unwrap();
        assert_eq!(f.len(), 2);
        assert!(f[0].end <= f[1].start);
    }

    #[test]
    fn empty_heatmap_stays_zero() {
        let s = gaze((0..10).map(|_| (0.5, 0.5, 0.0)));
        let h = gaze_heatmap(&s, 4, 5, 1.0).unwrap();
        assert!(h.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn centered_blob_peaks_at_center() {
        let s = gaze((0..50).map(|_| (0.5, 0.5, 1.0)));
        let h = gaze_heatmap(&s, 5, 5, 1.0).unwrap();
        assert_eq!(h[2][2], 1.0);
        assert!(h[2][1] < 1.0 && h[2][1] > 0.0);
        assert_eq!(h[2][1], h[1][2]);
    }
}
