use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadshare_core::events::{EventCode, EventRecord};
use roadshare_core::sensor::{
    cut_epochs, detect_fixations, eda_decompose, fit_clock_map, gaze_heatmap, hr_from_bvp, pair_marks, ClockMap,
    EdaParams, FixationParams, Modality, SensorStream,
};

fn event(code: EventCode, t: f64, subject: u32) -> EventRecord {
    EventRecord {
        tick: 0,
        sim_time_us: (t * 1e6).round() as u64,
        code,
        subject,
        object: 0,
        value: 0.0,
    }
}

#[test]
fn least_squares_example() {
    let m = fit_clock_map(&[0.0, 100.0, 200.0], &[10.0, 110.1, 210.2]).unwrap();
    // Closed form: slope = Σ(x−x̄)(y−ȳ) / Σ(x−x̄)² = (100·100.1 + 100·100.1) / 20000.
    let slope = (100.0 * 100.1 + 100.0 * 100.1) / 20_000.0;
    let intercept = 110.1 - slope * 100.0;
    assert!((m.a - slope).abs() < 1e-9 && (m.a - 1.001).abs() < 1e-9);
    assert!((m.b - intercept).abs() < 1e-9 && (m.b - 10.0).abs() < 1e-9);
    assert!(m.residual_rms < 1e-9);
}

#[test]
fn affine_maps_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let a = rng.gen_range(0.99..1.01);
        let b = rng.gen_range(-1e4..1e4);
        let n = rng.gen_range(2..40);
        let mut dev = vec![rng.gen_range(0.0..100.0)];
        for _ in 1..n {
            dev.push(dev.last().unwrap() + rng.gen_range(1.0..20.0));
        }
        let sim: Vec<f64> = dev.iter().map(|t| a * t + b).collect();
        let m = fit_clock_map(&dev, &sim).unwrap();
        assert!((m.a - a).abs() < 1e-9, "{a} vs {}", m.a);
        assert!((m.b - b).abs() < 1e-6, "{b} vs {}", m.b);
        assert!(m.residual_rms < 1e-6);
    }
}

#[test]
fn marks_pair_by_index() {
    let mut marks = SensorStream::new("marks", Modality::Mark, 0.0, "e4");
    for (i, t) in [(1.0, 3.5), (2.0, 13.5), (3.0, 23.5), (9.0, 99.0)] {
        marks.push(t, vec![i]);
    }
    let events: Vec<_> = (1..=3).map(|i| event(EventCode::SYNC_MARK, 10.0 * i as f64, i)).collect();
    let (dev, sim) = pair_marks(&marks, &events);
    assert_eq!(dev, vec![3.5, 13.5, 23.5]);
    assert_eq!(sim, vec![10.0, 20.0, 30.0]);
    let m = fit_clock_map(&dev, &sim).unwrap();
    assert_eq!((m.a, m.b), (1.0, 6.5));
}

fn bvp_sine(bpm: f64, rate: f64, seconds: f64, phase: f64) -> SensorStream {
    let mut s = SensorStream::new("bvp", Modality::Bvp, rate, "e4");
    let f = bpm / 60.0;
    for i in 0..(seconds * rate) as usize {
        let t = i as f64 / rate;
        s.push(t, vec![(2.0 * PI * f * t + phase).sin()]);
    }
    s
}

#[test]
fn heart_rate_within_one_bpm() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for rate in [32.0, 64.0, 100.0, 128.0] {
        for bpm in (40..=180).step_by(10) {
            let bpm = bpm as f64 + rng.gen_range(0.0..1.0);
            let s = bvp_sine(bpm, rate, 60.0, rng.gen_range(0.0..2.0 * PI));
            let r = hr_from_bvp(&s, 30.0).unwrap();
            assert!(!r.flagged);
            let expected_beats = (60.0 * bpm / 60.0) as usize;
            assert!(r.peaks.len() + 1 >= expected_beats, "rate {rate} bpm {bpm}: {} beats", r.peaks.len());
            assert!((r.mean_hr_bpm.unwrap() - bpm).abs() < 1.0, "rate {rate} bpm {bpm}: {:?}", r.mean_hr_bpm);
            for &(_, hr) in &r.hr_bpm {
                assert!((hr - bpm).abs() < 1.0, "rate {rate} bpm {bpm}: beat hr {hr}");
            }
        }
    }
}

#[test]
fn steady_rhythm_has_no_variability() {
    let r = hr_from_bvp(&bvp_sine(60.0, 64.0, 60.0, 0.0), 60.0).unwrap();
    assert!((r.mean_hr_bpm.unwrap() - 60.0).abs() < 1.0);
    assert!(r.rmssd_ms.unwrap() < 1.0);
}

fn eda(rate: f64, seconds: f64, bumps: &[(f64, f64)]) -> (SensorStream, Vec<f64>) {
    let mut s = SensorStream::new("eda", Modality::Eda, rate, "e4");
    let mut clean = Vec::new();
    for i in 0..(seconds * rate) as usize {
        let t = i as f64 / rate;
        let base = 2.0 + 0.002 * t;
        // Raised-cosine bump, 2 s wide.
        let bump: f64 = bumps
            .iter()
            .filter(|(c, _)| (t - c).abs() < 1.0)
            .map(|(c, a)| a * 0.5 * (1.0 + (PI * (t - c)).cos()))
            .sum();
        clean.push(bump);
        s.push(t, vec![base + bump]);
    }
    (s, clean)
}

#[test]
fn decomposition_is_an_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for rate in [4.0, 8.0, 32.0] {
        let mut s = SensorStream::new("eda", Modality::Eda, rate, "e4");
        for i in 0..(120.0 * rate) as usize {
            s.push(i as f64 / rate, vec![rng.gen_range(1.0..1.9)]);
        }
        let r = eda_decompose(&s, &EdaParams::default()).unwrap();
        for (i, smp) in s.samples.iter().enumerate() {
            assert_eq!(r.tonic[i] + r.phasic[i], smp.channels[0]);
        }
    }
}

#[test]
fn injected_scrs_are_recovered() {
    let single = eda(4.0, 60.0, &[(30.0, 0.3)]).0;
    let r = eda_decompose(&single, &EdaParams::default()).unwrap();
    assert_eq!(r.scrs.len(), 1);
    assert!((r.scrs[0].amplitude - 0.3).abs() <= 0.03, "{:?}", r.scrs);

    let tiny = eda(4.0, 60.0, &[(30.0, 0.04)]).0;
    assert!(eda_decompose(&tiny, &EdaParams::default()).unwrap().scrs.is_empty());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for rate in [4.0, 8.0, 16.0] {
        let mut bumps = Vec::new();
        let mut t = 10.0;
        while t < 280.0 {
            bumps.push((t, rng.gen_range(0.08..0.6)));
            t += rng.gen_range(9.0..20.0);
        }
        let (s, _) = eda(rate, 300.0, &bumps);
        let r = eda_decompose(&s, &EdaParams::default()).unwrap();
        assert_eq!(r.scrs.len(), bumps.len(), "rate {rate}");
        for (scr, (c, a)) in r.scrs.iter().zip(&bumps) {
            assert!((scr.peak - c).abs() <= 1.0 / rate + 1e-9, "peak {} vs {c}", scr.peak);
            assert!((scr.amplitude - a).abs() <= 0.1 * a, "amp {} vs {a}", scr.amplitude);
        }
    }
}

fn gaze_stream(points: &[(f64, f64, bool)], rate: f64) -> SensorStream {
    let mut s = SensorStream::new("gaze", Modality::Gaze, rate, "hmd");
    for (i, &(x, y, v)) in points.iter().enumerate() {
        s.push(i as f64 / rate, vec![x, y, 3.5, v as u8 as f64]);
    }
    s
}

#[test]
fn two_targets_give_two_fixations() {
    let params = FixationParams::default();
    // 10° apart horizontally with a 100° field of view.
    let mut pts = vec![(0.40, 0.5, true); 100];
    pts.extend(vec![(0.50, 0.5, true); 100]);
    let f = detect_fixations(&gaze_stream(&pts, 200.0), &params).unwrap();
    assert_eq!(f.len(), 2);
    assert!((f[0].duration() - 0.5).abs() < 1e-9 && (f[1].duration() - 0.5).abs() < 1e-9);
    assert!((f[0].x - 0.4).abs() < 1e-12 && (f[1].x - 0.5).abs() < 1e-12);
}

#[test]
fn fast_drift_has_no_fixations() {
    let params = FixationParams::default();
    let rate = 200.0;
    // 15°/s over a 100° field: 0.15 normalized units per second.
    let pts: Vec<_> = (0..1000).map(|i| (0.1 + 0.15 * i as f64 / rate, 0.5, true)).collect();
    assert!(detect_fixations(&gaze_stream(&pts, rate), &params).unwrap().is_empty());
}

#[test]
fn injected_fixations_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = FixationParams::default();
    let rate = 200.0;
    for _ in 0..50 {
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for k in 0..8 {
            // Saccade: a few samples far away, then a fixation with jitter well inside 1°.
            for _ in 0..rng.gen_range(3..8) {
                pts.push((rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), k % 3 != 0));
            }
            let (cx, cy) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
            let len = rng.gen_range(30..120);
            truth.push((pts.len(), len, cx, cy));
            for _ in 0..len {
                pts.push((cx + rng.gen_range(-0.001..0.001), cy + rng.gen_range(-0.001..0.001), true));
            }
        }
        let f = detect_fixations(&gaze_stream(&pts, rate), &params).unwrap();
        assert_eq!(f.len(), truth.len());
        for (fx, &(start, len, cx, cy)) in f.iter().zip(&truth) {
            assert!((fx.start - start as f64 / rate).abs() < 1e-9);
            assert_eq!(fx.samples, len);
            assert!((fx.x - cx).abs() < 0.001 && (fx.y - cy).abs() < 0.001);
        }
        for w in f.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
    }
}

#[test]
fn uniform_gaze_fills_the_grid_evenly() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pts: Vec<_> = (0..100_000).map(|_| (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), true)).collect();
    let s = gaze_stream(&pts, 200.0);
    let (rows, cols) = (8, 10);
    let h = gaze_heatmap(&s, rows, cols, 0.0).unwrap();
    // Undo the max-normalization using the raw histogram maximum.
    let mut counts = vec![vec![0.0; cols]; rows];
    for (x, y, _) in &pts {
        counts[(y * rows as f64) as usize][(x * cols as f64) as usize] += 1.0;
    }
    let max = counts.iter().flatten().cloned().fold(0.0, f64::max);
    let expected = pts.len() as f64 / (rows * cols) as f64;
    for r in 0..rows {
        for c in 0..cols {
            let n = h[r][c] * max;
            assert!((n - counts[r][c]).abs() < 1e-6);
            assert!((n - expected).abs() < 5.0 * expected.sqrt());
        }
    }
}

#[test]
fn epochs_follow_the_inverse_clock_map() {
    // Device clock runs 50 s behind sim time.
    let map = ClockMap {
        a: 1.0,
        b: 50.0,
        residual_rms: 0.0,
        marks: 2,
    };
    let mut s = SensorStream::new("eda", Modality::Eda, 4.0, "e4");
    for i in 0..400 {
        let t = i as f64 / 4.0;
        s.push(t, vec![t]);
    }
    let maps = BTreeMap::from([("e4".to_string(), map)]);
    let set = cut_epochs(&[s], &maps, &[event(EventCode::HAZARD, 100.0, 0)], EventCode::HAZARD, 2.0, 2.0, 4.0);
    let e = &set.epochs[0];
    let zero = e.times.iter().position(|&t| t == 0.0).unwrap();
    assert_eq!(e.streams[0].data[0][zero], Some(50.0));
}

#[test]
fn fnirs_step_is_recovered() {
    let rate = 10.0;
    let out_rate = 10.0;
    let mut s = SensorStream::new("nirs", Modality::Fnirs, rate, "nirs");
    s.channel_names = vec!["hbo_0".into(), "hbr_0".into(), "hbt_0".into()];
    for i in 0..3000 {
        let t = i as f64 / rate;
        let hbo = 5.0 + if t >= 120.0 { 1.0 } else { 0.0 };
        s.push(t, vec![hbo, -2.0, hbo - 2.0]);
    }
    let maps = BTreeMap::from([("nirs".to_string(), ClockMap::IDENTITY)]);
    let set = cut_epochs(&[s], &maps, &[event(EventCode::HAZARD, 120.0, 0)], EventCode::HAZARD, 5.0, 10.0, out_rate);
    let e = &set.epochs[0];
    let post: Vec<f64> = e
        .times
        .iter()
        .zip(&e.streams[0].data[0])
        .filter(|(&t, _)| t > 0.0)
        .map(|(_, v)| v.unwrap())
        .collect();
    let mean = post.iter().sum::<f64>() / post.len() as f64;
    assert!((mean - 1.0).abs() <= 1.0 / out_rate, "{mean}");
    assert!(e.streams[0].data[1].iter().all(|v| v.unwrap().abs() < 1e-12));
}

#[test]
fn injected_events_align_within_one_sample() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for rate in [4.0, 32.0, 64.0, 10.0, 200.0] {
        for _ in 0..20 {
            let a = rng.gen_range(0.995..1.005);
            let b = rng.gen_range(-500.0..500.0);
            let truth = ClockMap {
                a,
                b,
                residual_rms: 0.0,
                marks: 0,
            };
            let (dev0, n) = (rng.gen_range(600.0..1600.0), (200.0 * rate) as usize);
            // Marks every 10 s of sim time, observed on the device clock.
            let t_sim0 = truth.to_sim(dev0);
            let sim_marks: Vec<f64> = (1..20).map(|k| (t_sim0 / 10.0).ceil() * 10.0 + 10.0 * k as f64).collect();
            let dev_marks: Vec<f64> = sim_marks.iter().map(|&t| truth.to_dev(t)).collect();
            let fitted = fit_clock_map(&dev_marks, &sim_marks).unwrap();

            // A one-sample spike at the device time of a sim event.
            let t_event = sim_marks[8] + rng.gen_range(0.0..5.0);
            let spike_dev = truth.to_dev(t_event);
            let mut s = SensorStream::new("s", Modality::Eda, rate, "dev");
            let spike = ((spike_dev - dev0) * rate).round() as usize;
            for i in 0..n {
                s.push(dev0 + i as f64 / rate, vec![if i == spike { 1.0 } else { 0.0 }]);
            }
            let maps = BTreeMap::from([("dev".to_string(), fitted)]);
            let ev = event(EventCode::HAZARD, t_event, 0);
            let out_rate = 1000.0;
            let set = cut_epochs(&[s], &maps, &[ev], EventCode::HAZARD, 2.0, 2.0, out_rate);
            let e = &set.epochs[0];
            let data = &e.streams[0].data[0];
            let k = (0..data.len()).max_by(|&i, &j| data[i].unwrap().total_cmp(&data[j].unwrap())).unwrap();
            let recovered = e.times[k] + ev.sim_time_s();
            assert!(
                (recovered - t_event).abs() <= 1.0 / rate,
                "rate {rate}: recovered {recovered}, injected {t_event}"
            );
        }
    }
}
