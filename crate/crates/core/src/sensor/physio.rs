use serde::Serialize;

use super::{Modality, SensorError, SensorStream};

/// Rolling window for the BVP peak threshold, s.
const BVP_THRESHOLD_WINDOW_S: f64 = 10.0;
/// Minimum spacing between accepted beats, s.
const BVP_REFRACTORY_S: f64 = 0.3;
const BVP_MIN_RATE: f64 = 32.0;
const EDA_MIN_RATE: f64 = 2.0;

/// Sorted multiset over a sliding window of samples.
struct Window {
    sorted: Vec<f64>,
}

impl Window {
    fn insert(&mut self, x: f64) {
        let i = self.sorted.partition_point(|v| v.total_cmp(&x).is_lt());
        self.sorted.insert(i, x);
    }

    fn remove(&mut self, x: f64) {
        let i = self.sorted.partition_point(|v| v.total_cmp(&x).is_lt());
        self.sorted.remove(i);
    }

    /// Linear-interpolated quantile.
    fn quantile(&self, q: f64) -> f64 {
        let n = self.sorted.len();
        let pos = q * (n - 1) as f64;
        let i = pos.floor() as usize;
        let f = pos - i as f64;
        if i + 1 < n {
            self.sorted[i] + f * (self.sorted[i + 1] - self.sorted[i])
        } else {
            self.sorted[i]
        }
    }
}

/// `f(window)` for the centered window `[i − half, i + half]` at every
/// sample, clipped at the ends.
fn rolling<T>(xs: &[f64], half: usize, f: impl Fn(&Window) -> T) -> Vec<T> {
    let n = xs.len();
    let mut w = Window {
        sorted: Vec::with_capacity(2 * half + 1),
    };
    let mut out = Vec::with_capacity(n);
    let (mut lo, mut hi) = (0, 0);
    for i in 0..n {
        let want_lo = i.saturating_sub(half);
        let want_hi = (i + half + 1).min(n);
        while hi < want_hi {
            w.insert(xs[hi]);
            hi += 1;
        }
        while lo < want_lo {
            w.remove(xs[lo]);
            lo += 1;
        }
        out.push(f(&w));
    }
    out
}

fn half_window(seconds: f64, rate: f64) -> usize {
    ((seconds * rate).round() as usize) / 2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HrWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub beats: usize,
    pub hr_bpm: Option<f64>,
    pub rmssd_ms: Option<f64>,
    pub sdnn_ms: Option<f64>,
    /// Fewer than two peaks in the window.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HrResult {
    /// Beat times, device s, refined to sub-sample precision.
    pub peaks: Vec<f64>,
    /// `(time of closing beat, IBI s)`.
    pub ibi: Vec<(f64, f64)>,
    pub hr_bpm: Vec<(f64, f64)>,
    pub mean_hr_bpm: Option<f64>,
    pub rmssd_ms: Option<f64>,
    pub sdnn_ms: Option<f64>,
    pub windows: Vec<HrWindow>,
    /// Fewer than two peaks overall; every series is empty.
    pub flagged: bool,
}

fn rmssd(ibi: &[f64]) -> Option<f64> {
    if ibi.len() < 2 {
        return None;
    }
    let ms: f64 = ibi.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (ibi.len() - 1) as f64;
    Some(ms.sqrt() * 1000.0)
}

fn sdnn(ibi: &[f64]) -> Option<f64> {
    if ibi.is_empty() {
        return None;
    }
    let n = ibi.len() as f64;
    let mean = ibi.iter().sum::<f64>() / n;
    Some((ibi.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt() * 1000.0)
}

fn mean_hr(ibi: &[f64]) -> Option<f64> {
    (!ibi.is_empty()).then(|| 60.0 / (ibi.iter().sum::<f64>() / ibi.len() as f64))
}

/// Beat detection and heart-rate variability from a BVP stream.
///
/// Peaks are local maxima above `rolling median + 0.5·IQR` over a 10 s
/// window, at least 0.3 s apart (the larger wins), refined by a parabola
/// through the three samples around each maximum. Summary windows of
/// `window_s` tile the recording from its first sample.
pub fn hr_from_bvp(stream: &SensorStream, window_s: f64) -> Result<HrResult, SensorError> {
    if stream.modality != Modality::Bvp {
        return Err(SensorError::Invalid {
            stream: stream.stream_id.clone(),
            message: format!("expected BVP, got {}", stream.modality),
        });
    }
    if stream.rate_hz < BVP_MIN_RATE {
        return Err(SensorError::RateTooLow {
            stream: stream.stream_id.clone(),
            rate: stream.rate_hz,
            min: BVP_MIN_RATE,
        });
    }
    let t = stream.times();
    let x = stream.channel(0);
    let n = x.len();
    let half = half_window(BVP_THRESHOLD_WINDOW_S, stream.rate_hz);
    let threshold = rolling(&x, half, |w| {
        let iqr = w.quantile(0.75) - w.quantile(0.25);
        w.quantile(0.5) + 0.5 * iqr
    });

    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > threshold[i]) {
            continue;
        }
        let (y0, y1, y2) = (x[i - 1], x[i], x[i + 1]);
        let denom = y0 - 2.0 * y1 + y2;
        let delta = if denom < 0.0 { 0.5 * (y0 - y2) / denom } else { 0.0 };
        let step = if delta < 0.0 { t[i] - t[i - 1] } else { t[i + 1] - t[i] };
        let tp = t[i] + delta * step;
        match peaks.last_mut() {
            Some(last) if tp - last.0 < BVP_REFRACTORY_S => {
                if y1 > last.1 {
                    *last = (tp, y1);
                }
            }
            _ => peaks.push((tp, y1)),
        }
    }
    let beats: Vec<f64> = peaks.iter().map(|p| p.0).collect();
    let ibi: Vec<(f64, f64)> = beats.windows(2).map(|w| (w[1], w[1] - w[0])).collect();
    let ibi_s: Vec<f64> = ibi.iter().map(|p| p.1).collect();

    let mut windows = Vec::new();
    if window_s > 0.0 && n > 0 {
        let (start, end) = (t[0], t[n - 1]);
        let mut w0 = start;
        while w0 < end {
            let w1 = w0 + window_s;
            let in_win: Vec<f64> = ibi.iter().filter(|(tb, _)| *tb >= w0 && *tb < w1).map(|p| p.1).collect();
            let count = beats.iter().filter(|&&b| b >= w0 && b < w1).count();
            windows.push(HrWindow {
                t_start: w0,
                t_end: w1,
                beats: count,
                hr_bpm: mean_hr(&in_win),
                rmssd_ms: rmssd(&in_win),
                sdnn_ms: sdnn(&in_win),
                flagged: count < 2,
            });
            w0 = w1;
        }
    }
    let flagged = beats.len() < 2;
    Ok(HrResult {
        hr_bpm: ibi.iter().map(|&(tb, d)| (tb, 60.0 / d)).collect(),
        mean_hr_bpm: mean_hr(&ibi_s),
        rmssd_ms: rmssd(&ibi_s),
        sdnn_ms: sdnn(&ibi_s),
        peaks: if flagged { Vec::new() } else { beats },
        ibi,
        windows,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdaParams {
    /// Centered moving-median window for the tonic level, s.
    pub median_window_s: f64,
    /// Minimum trough-to-peak rise of an SCR, µS.
    pub scr_threshold: f64,
    /// Maximum trough-to-peak rise time, s.
    pub scr_max_rise_s: f64,
}

impl Default for EdaParams {
    fn default() -> Self {
        Self {
            median_window_s: 8.0,
            scr_threshold: 0.05,
            scr_max_rise_s: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scr {
    /// Trough time, device s.
    pub onset: f64,
    pub peak: f64,
    /// Peak minus trough, µS.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdaResult {
    pub t: Vec<f64>,
    pub tonic: Vec<f64>,
    pub phasic: Vec<f64>,
    pub scrs: Vec<Scr>,
}

/// Indices of maxima that stand at least `delta` above the minima on
/// either side (a trailing rise counts once it has climbed `delta`).
fn swing_peaks(x: &[f64], delta: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    if x.is_empty() {
        return peaks;
    }
    let (mut lo, mut hi) = (0, 0);
    let mut rising = false;
    for i in 1..x.len() {
        if rising {
            if x[i] > x[hi] {
                hi = i;
            }
            if x[hi] - x[i] >= delta {
                peaks.push(hi);
                rising = false;
                lo = i;
            }
        } else {
            if x[i] < x[lo] {
                lo = i;
            }
            if x[i] - x[lo] >= delta {
                rising = true;
                hi = i;
            }
        }
    }
    if rising {
        peaks.push(hi);
    }
    peaks
}

/// Tonic/phasic split and SCR detection.
///
/// The tonic level is a centered moving median (clipped at the ends) and
/// phasic is the exact remainder `raw − tonic`. Each swing peak of the
/// phasic signal is paired with the lowest point in the preceding
/// `scr_max_rise_s` (not before the previous peak); the pair is an SCR when
/// the rise reaches `scr_threshold`.
pub fn eda_decompose(stream: &SensorStream, params: &EdaParams) -> Result<EdaResult, SensorError> {
    if stream.modality != Modality::Eda {
        return Err(SensorError::Invalid {
            stream: stream.stream_id.clone(),
            message: format!("expected EDA, got {}", stream.modality),
        });
    }
    if stream.rate_hz < EDA_MIN_RATE {
        return Err(SensorError::RateTooLow {
            stream: stream.stream_id.clone(),
            rate: stream.rate_hz,
            min: EDA_MIN_RATE,
        });
    }
    let t = stream.times();
    let raw = stream.channel(0);
    let tonic = rolling(&raw, half_window(params.median_window_s, stream.rate_hz), |w| w.quantile(0.5));
    let phasic: Vec<f64> = raw.iter().zip(&tonic).map(|(r, m)| r - m).collect();

    let mut scrs = Vec::new();
    let mut floor = 0;
    for p in swing_peaks(&phasic, params.scr_threshold) {
        let earliest = t[p] - params.scr_max_rise_s;
        let start = floor.max(t.partition_point(|&x| x < earliest));
        let onset = (start..=p)
            .min_by(|&a, &b| phasic[a].total_cmp(&phasic[b]))
            .unwrap_or(p);
        let amplitude = phasic[p] - phasic[onset];
        if amplitude >= params.scr_threshold {
            scrs.push(Scr {
                onset: t[onset],
                peak: t[p],
                amplitude,
            });
        }
        floor = p + 1;
    }
    Ok(EdaResult { t, tonic, phasic, scrs })
}
