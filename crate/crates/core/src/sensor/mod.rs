//! Post-hoc alignment of physiological and gaze recordings to sim time.
//!
//! Streams are CSV files stamped with a device clock. SYNC_MARK events in
//! the replay log and the matching MARK stream tie each device clock to sim
//! time; everything downstream works in sim seconds.

mod clock;
mod epoch;
mod gaze;
mod physio;

use std::fmt;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use clock::{fit_clock_map, pair_marks, ClockMap, GAIN_BAND};
pub use epoch::{cut_epochs, Epoch, EpochSet, EpochStream, EpochWarning, MAX_GAP_S};
pub use gaze::{detect_fixations, gaze_heatmap, Fixation, FixationParams};
pub use physio::{eda_decompose, hr_from_bvp, EdaParams, EdaResult, HrResult, HrWindow, Scr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Eda,
    Bvp,
    Temp,
    Acc,
    Fnirs,
    Gaze,
    /// Sync-mark indices, one column.
    Mark,
}

impl Modality {
    pub const ALL: [Modality; 7] = [
        Modality::Eda,
        Modality::Bvp,
        Modality::Temp,
        Modality::Acc,
        Modality::Fnirs,
        Modality::Gaze,
        Modality::Mark,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Modality::Eda => "EDA",
            Modality::Bvp => "BVP",
            Modality::Temp => "TEMP",
            Modality::Acc => "ACC",
            Modality::Fnirs => "FNIRS",
            Modality::Gaze => "GAZE",
            Modality::Mark => "MARK",
        }
    }

    /// Device rate used when a file omits `rate_hz`.
    pub fn default_rate(self) -> f64 {
        match self {
            Modality::Eda | Modality::Temp => 4.0,
            Modality::Acc => 32.0,
            Modality::Bvp => 64.0,
            Modality::Fnirs => 10.0,
            Modality::Gaze => 200.0,
            Modality::Mark => 0.0,
        }
    }

    /// Fixed channel count, if the modality has one.
    pub fn channels(self) -> Option<usize> {
        match self {
            Modality::Eda | Modality::Bvp | Modality::Temp | Modality::Mark => Some(1),
            Modality::Acc => Some(3),
            Modality::Gaze => Some(4),
            Modality::Fnirs => None,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown modality {s:?}"))
    }
}

/// Gaze channel order.
pub mod gaze_ch {
    pub const X: usize = 0;
    pub const Y: usize = 1;
    pub const PUPIL: usize = 2;
    pub const VALID: usize = 3;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Device clock, s.
    pub t_dev: f64,
    pub channels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorStream {
    pub stream_id: String,
    pub modality: Modality,
    pub rate_hz: f64,
    pub clock_id: String,
    pub channel_names: Vec<String>,
    pub samples: Vec<Sample>,
    /// FNIRS only: HbT columns were computed as HbO + HbR on load.
    pub hbt_derived: bool,
}

#[derive(Debug, Error)]
pub enum SensorError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("stream {stream}: {message}")]
    Invalid { stream: String, message: String },
    #[error("need at least 2 sync marks, have {0}")]
    TooFewMarks(usize),
    #[error("sync marks are not strictly increasing at index {0}")]
    NonMonotone(usize),
    #[error("clock gain {0} outside [0.99, 1.01]")]
    GainOutOfBand(f64),
    #[error("stream {stream}: rate {rate} Hz below the {min} Hz minimum")]
    RateTooLow { stream: String, rate: f64, min: f64 },
}

impl SensorStream {
    pub fn new(stream_id: &str, modality: Modality, rate_hz: f64, clock_id: &str) -> Self {
        let channel_names = match modality {
            Modality::Acc => vec!["x".into(), "y".into(), "z".into()],
            Modality::Gaze => vec!["x_norm".into(), "y_norm".into(), "pupil_mm".into(), "validity".into()],
            m => vec![m.label().to_ascii_lowercase()],
        };
        Self {
            stream_id: stream_id.into(),
            modality,
            rate_hz,
            clock_id: clock_id.into(),
            channel_names,
            samples: Vec::new(),
            hbt_derived: false,
        }
    }

    pub fn push(&mut self, t_dev: f64, channels: Vec<f64>) {
        self.samples.push(Sample { t_dev, channels });
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t_dev).collect()
    }

    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s.channels[k]).collect()
    }

    fn invalid(&self, message: impl Into<String>) -> SensorError {
        SensorError::Invalid {
            stream: self.stream_id.clone(),
            message: message.into(),
        }
    }

    /// Check the stream invariants: strictly increasing finite times and a
    /// constant, modality-appropriate channel count.
    pub fn check(&self) -> Result<(), SensorError> {
        let n = self.channel_names.len();
        match self.modality.channels() {
            Some(k) if k != n => {
                return Err(self.invalid(format!("{} needs {k} channels, has {n}", self.modality)));
            }
            None if n == 0 || n % 3 != 0 => {
                return Err(self.invalid(format!("FNIRS needs HbO/HbR/HbT triples, has {n} channels")));
            }
            _ => {}
        }
        if !(self.rate_hz.is_finite() && self.rate_hz >= 0.0) {
            return Err(self.invalid(format!("bad rate {}", self.rate_hz)));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.channels.len() != n {
                return Err(self.invalid(format!("sample {i} has {} channels, expected {n}", s.channels.len())));
            }
            if !s.t_dev.is_finite() {
                return Err(self.invalid(format!("sample {i} time is not finite")));
            }
            if i > 0 && s.t_dev <= self.samples[i - 1].t_dev {
                return Err(self.invalid(format!("time not strictly increasing at sample {i}")));
            }
        }
        Ok(())
    }

    pub fn from_csv(text: impl Read) -> Result<Self, SensorError> {
        parse_stream(text)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, SensorError> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|source| SensorError::Io {
            path: path.display().to_string(),
            source,
        })?;
        parse_stream(io::BufReader::new(f))
    }

    pub fn write_csv(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "# stream_id={}", self.stream_id)?;
        writeln!(out, "# modality={}", self.modality)?;
        writeln!(out, "# rate_hz={}", self.rate_hz)?;
        writeln!(out, "# clock_id={}", self.clock_id)?;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t_dev".to_string()];
        header.extend(self.channel_names.iter().cloned());
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = vec![s.t_dev.to_string()];
            row.extend(s.channels.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

fn parse_stream(mut input: impl Read) -> Result<SensorStream, SensorError> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(|source| SensorError::Io {
        path: "<stream>".into(),
        source,
    })?;
    let mut keys = std::collections::BTreeMap::new();
    let mut body_start = 0;
    let mut header_lines = 0;
    for line in text.split_inclusive('\n') {
        let l = line.trim();
        if let Some(kv) = l.strip_prefix('#') {
            header_lines += 1;
            if let Some((k, v)) = kv.split_once('=') {
                keys.insert(k.trim().to_string(), v.trim().to_string());
            }
            body_start += line.len();
        } else if l.is_empty() {
            header_lines += 1;
            body_start += line.len();
        } else {
            break;
        }
    }
    let err = |line: usize, message: String| SensorError::Parse { line, message };
    let modality: Modality = keys
        .get("modality")
        .ok_or_else(|| err(1, "missing `# modality=` header".into()))?
        .parse()
        .map_err(|m| err(1, m))?;
    let rate_hz = match keys.get("rate_hz") {
        Some(r) => r.parse().map_err(|_| err(1, format!("bad rate_hz {r:?}")))?,
        None => modality.default_rate(),
    };
    let stream_id = keys.get("stream_id").cloned().unwrap_or_else(|| modality.label().to_ascii_lowercase());
    let clock_id = keys.get("clock_id").cloned().unwrap_or_else(|| stream_id.clone());

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text[body_start..].as_bytes());
    let headers = rdr.headers().map_err(|e| err(header_lines + 1, e.to_string()))?.clone();
    if headers.get(0) != Some("t_dev") {
        return Err(err(header_lines + 1, "first column must be t_dev".into()));
    }
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut stream = SensorStream {
        stream_id,
        modality,
        rate_hz,
        clock_id,
        channel_names: names,
        samples: Vec::new(),
        hbt_derived: false,
    };
    for (i, rec) in rdr.records().enumerate() {
        let line = header_lines + 2 + i;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let mut vals = rec.iter().map(|f| f.parse::<f64>().map_err(|_| err(line, format!("bad number {f:?}"))));
        let t_dev = vals.next().ok_or_else(|| err(line, "empty row".into()))??;
        let channels = vals.collect::<Result<Vec<_>, _>>()?;
        stream.push(t_dev, channels);
    }
    if modality == Modality::Fnirs {
        derive_hbt(&mut stream);
    }
    stream.check()?;
    Ok(stream)
}

/// FNIRS files may carry HbO/HbR pairs only; HbT is then their sum.
fn derive_hbt(s: &mut SensorStream) {
    let has_hbt = s.channel_names.iter().any(|n| n.to_ascii_lowercase().contains("hbt"));
    let n = s.channel_names.len();
    if has_hbt || n == 0 || n % 2 != 0 {
        return;
    }
    let optodes = n / 2;
    let mut names = Vec::with_capacity(optodes * 3);
    for k in 0..optodes {
        names.push(s.channel_names[2 * k].clone());
        names.push(s.channel_names[2 * k + 1].clone());
        names.push(format!("hbt_{k}"));
    }
    for sample in &mut s.samples {
        if sample.channels.len() != n {
            return;
        }
        let mut ch = Vec::with_capacity(optodes * 3);
        for k in 0..optodes {
            let (o, r) = (sample.channels[2 * k], sample.channels[2 * k + 1]);
            ch.extend([o, r, o + r]);
        }
        sample.channels = ch;
    }
    s.channel_names = names;
    s.hbt_derived = true;
}

/// Linear interpolation of `ys` at `t`; `None` outside `[ts[0], ts[n-1]]` or
/// across a gap longer than `max_gap`.
pub(crate) fn interp(ts: &[f64], ys: &[f64], t: f64, max_gap: f64) -> Option<f64> {
    let n = ts.len();
    if n == 0 || t < ts[0] || t > ts[n - 1] {
        return None;
    }
    let j = ts.partition_point(|&x| x <= t);
    if j == 0 {
        return Some(ys[0]);
    }
    let i = j - 1;
    if ts[i] == t || j == n {
        return Some(ys[i]);
    }
    let (t0, t1) = (ts[i], ts[j]);
    if t1 - t0 > max_gap {
        return None;
    }
    let w = (t - t0) / (t1 - t0);
    Some(ys[i] + w * (ys[j] - ys[i]))
}
