use std::collections::BTreeMap;

use serde::Serialize;

use super::{interp, ClockMap, Modality, SensorStream};
use crate::events::{EventCode, EventRecord};

/// Longest sample gap bridged by interpolation, s.
pub const MAX_GAP_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStream {
    pub stream_id: String,
    pub modality: Modality,
    pub channel_names: Vec<String>,
    /// `data[channel][grid point]`; `None` where the source has a gap.
    pub data: Vec<Vec<Option<f64>>>,
    pub baseline_corrected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Epoch {
    pub code: EventCode,
    /// Event time, sim s.
    pub t0: f64,
    pub pre_s: f64,
    pub post_s: f64,
    /// Grid times relative to `t0`, s.
    pub times: Vec<f64>,
    pub streams: Vec<EpochStream>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochWarning {
    pub t0: f64,
    pub stream_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EpochSet {
    pub epochs: Vec<Epoch>,
    pub warnings: Vec<EpochWarning>,
}

/// Event-locked epochs of every stream on a common grid.
///
/// Grid points run from `−pre_s` to `+post_s` at `out_rate`, mapped into
/// each device clock and linearly interpolated. An event whose window
/// leaves any stream's recorded span is skipped with a warning; so is a
/// stream with no clock map. FNIRS channels have their `[−pre_s, 0]` mean
/// subtracted.
pub fn cut_epochs(
    streams: &[SensorStream],
    clock_maps: &BTreeMap<String, ClockMap>,
    events: &[EventRecord],
    code: EventCode,
    pre_s: f64,
    post_s: f64,
    out_rate: f64,
) -> EpochSet {
    let mut set = EpochSet::default();
    let n = ((pre_s + post_s) * out_rate).round() as usize + 1;
    let times: Vec<f64> = (0..n).map(|k| -pre_s + k as f64 / out_rate).collect();
    let streams: Vec<&SensorStream> = streams.iter().filter(|s| s.modality != Modality::Mark).collect();
    let columns: Vec<(Vec<f64>, Vec<Vec<f64>>)> = streams
        .iter()
        .map(|s| {
            let ch = (0..s.channel_names.len()).map(|k| s.channel(k)).collect();
            (s.times(), ch)
        })
        .collect();

    'events: for e in events.iter().filter(|e| e.code == code) {
        let t0 = e.sim_time_s();
        let mut out = Vec::with_capacity(streams.len());
        for (s, (ts, chans)) in streams.iter().zip(&columns) {
            let warn = |message: String| EpochWarning {
                t0,
                stream_id: s.stream_id.clone(),
                message,
            };
            let Some(map) = clock_maps.get(&s.clock_id) else {
                set.warnings.push(warn(format!("no clock map for clock {}", s.clock_id)));
                continue 'events;
            };
            let (first, last) = match (ts.first(), ts.last()) {
                (Some(&a), Some(&b)) => (a, b),
                _ => {
                    set.warnings.push(warn("stream is empty".into()));
                    continue 'events;
                }
            };
            let dev: Vec<f64> = times.iter().map(|r| map.to_dev(t0 + r)).collect();
            if dev[0] < first || dev[n - 1] > last {
                set.warnings.push(warn(format!(
                    "window [{:.3}, {:.3}] device s exceeds recording [{first:.3}, {last:.3}]",
                    dev[0],
                    dev[n - 1]
                )));
                continue 'events;
            }
            let mut data: Vec<Vec<Option<f64>>> = chans
                .iter()
                .map(|ys| dev.iter().map(|&t| interp(ts, ys, t, MAX_GAP_S)).collect())
                .collect();
            let baseline = s.modality == Modality::Fnirs;
            if baseline {
                for ch in &mut data {
                    let base: Vec<f64> = ch
                        .iter()
                        .zip(&times)
                        .filter(|(_, &r)| r <= 0.0)
                        .filter_map(|(v, _)| *v)
                        .collect();
                    if base.is_empty() {
                        continue;
                    }
                    let mean = base.iter().sum::<f64>() / base.len() as f64;
                    for v in ch.iter_mut().flatten() {
                        *v -= mean;
                    }
                }
            }
            out.push(EpochStream {
                stream_id: s.stream_id.clone(),
                modality: s.modality,
                channel_names: s.channel_names.clone(),
                data,
                baseline_corrected: baseline,
            });
        }
        set.epochs.push(Epoch {
            code,
            t0,
            pre_s,
            post_s,
            times: times.clone(),
            streams: out,
        });
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(t: f64) -> EventRecord {
        EventRecord {
            tick: 0,
            sim_time_us: (t * 1e6) as u64,
            code: EventCode::HAZARD,
            subject: 0,
            object: 0,
            value: 0.0,
        }
    }

    #[test]
    fn constant_fnirs_baselines_to_zero() {
        let mut s = SensorStream::new("nirs", Modality::Fnirs, 10.0, "nirs");
        s.channel_names = vec!["hbo".into(), "hbr".into(), "hbt".into()];
        for i in 0..2000 {
            s.push(i as f64 / 10.0, vec![3.0, -1.0, 2.0]);
        }
        let maps = BTreeMap::from([("nirs".to_string(), ClockMap::IDENTITY)]);
        let set = cut_epochs(&[s], &maps, &[event(100.0)], EventCode::HAZARD, 2.0, 5.0, 10.0);
        assert_eq!(set.epochs.len(), 1);
        let d = &set.epochs[0].streams[0].data;
        assert!(d.iter().flatten().all(|v| v.unwrap().abs() < 1e-12));
    }

    #[test]
    fn boundary_events_are_skipped() {
        let mut s = SensorStream::new("eda", Modality::Eda, 4.0, "e4");
        for i in 0..40 {
            s.push(i as f64 / 4.0, vec![1.0]);
        }
        let maps = BTreeMap::from([("e4".to_string(), ClockMap::IDENTITY)]);
        let set = cut_epochs(&[s], &maps, &[event(1.0), event(5.0)], EventCode::HAZARD, 2.0, 2.0, 4.0);
        assert_eq!(set.epochs.len(), 1);
        assert_eq!(set.warnings.len(), 1);
        assert_eq!(set.warnings[0].t0, 1.0);
    }

    #[test]
    fn gaps_are_marked_missing() {
        let mut s = SensorStream::new("eda", Modality::Eda, 4.0, "e4");
        for i in (0..80).filter(|i| !(40..44).contains(i)) {
            s.push(i as f64 / 4.0, vec![1.0]);
        }
        let maps = BTreeMap::from([("e4".to_string(), ClockMap::IDENTITY)]);
        let set = cut_epochs(&[s], &maps, &[event(10.0)], EventCode::HAZARD, 2.0, 2.0, 4.0);
        let d = &set.epochs[0].streams[0].data[0];
        assert!(d.iter().any(Option::is_none));
        assert_eq!(d[0], Some(1.0));
    }
}
