mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roadshare_core::events::{EventCode, EventRecord};
use roadshare_core::metrics::*;
use roadshare_core::protocol::{encode, Body, Header, Hello, InputMsg, Message, QResponse, Role};
use roadshare_core::scenario::{Controller, Scenario};
use roadshare_core::server::{ReplayLog, Session, SessionConfig, Sim};
use roadshare_core::world::{
    AgentFlags, AgentKind, ApproachPath, ControlInput, GradeProfile, KinematicState, Lane, Polyline, Pose2D, WalkInput,
};

fn approach(id: &str, from: [f64; 2]) -> ApproachPath {
    ApproachPath {
        id: id.into(),
        conflict_point: "cp".into(),
        path: Polyline::from_xy(&[from, [0.0, 0.0]]).unwrap(),
        grades: GradeProfile::flat(),
    }
}

fn sample(tick: u64, dt: f64, agent_id: u32, x: f64, y: f64, heading: f64, speed: f64) -> TrajectorySample {
    TrajectorySample {
        tick,
        sim_time: tick as f64 * dt,
        agent_id,
        pose: Pose2D::new(x, y, heading),
        kin: KinematicState {
            speed,
            ..Default::default()
        },
        flags: AgentFlags::empty(),
        seated: false,
        brake: 0.0,
        steer: 0.0,
    }
}

fn trajectory(agent_id: u32, kind: AgentKind, route: &str, samples: Vec<TrajectorySample>) -> Trajectory {
    Trajectory {
        agent_id,
        name: format!("a{agent_id}"),
        kind,
        controller: Controller::Human,
        route: route.into(),
        samples,
    }
}

fn event(code: EventCode, t: f64, subject: u32) -> EventRecord {
    EventRecord {
        tick: (t * 100.0).round() as u64,
        sim_time_us: (t * 1e6).round() as u64,
        code,
        subject,
        object: 0,
        value: 0.0,
    }
}

#[test]
fn follow_ttc_and_drac_match_the_stepped_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut closing = 0;
    for _ in 0..1000 {
        let gap = rng.gen_range(1.0..60.0);
        let vl = rng.gen_range(0.0..25.0);
        let vf = if rng.gen_bool(0.8) { vl + rng.gen_range(0.5..15.0) } else { rng.gen_range(0.0..=vl) };
        let horizon = 200.0;
        match (follow_ttc(gap, vf, vl), common::stepped_follow_ttc(gap, vf, vl, horizon)) {
            (Some(a), Some(b)) => {
                closing += 1;
                assert!((a - b).abs() < 1e-6, "gap {gap} vf {vf} vl {vl}: {a} vs {b}");
            }
            (None, None) => {}
            other => panic!("gap {gap} vf {vf} vl {vl}: {other:?}"),
        }
        let d = drac(gap, vf, vl);
        assert!(!d.saturated);
        assert!((d.value - common::stepped_drac(gap, vf, vl)).abs() < 1e-6);
    }
    assert!(closing > 700);
}

#[test]
fn crossing_ttc_matches_the_stepped_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut found = 0;
    for _ in 0..1000 {
        let a = (rng.gen_range(0.0..60.0), rng.gen_range(0.5..15.0), 2.25);
        let b = (rng.gen_range(0.0..20.0), rng.gen_range(0.5..2.5), 0.3);
        let horizon = 200.0;
        let got = crossing_ttc(
            &ConflictApproach {
                distance: a.0,
                speed: a.1,
                half_length: a.2,
            },
            &ConflictApproach {
                distance: b.0,
                speed: b.1,
                half_length: b.2,
            },
        );
        match (got, common::stepped_crossing_ttc(a, b, horizon)) {
            (Some(x), Some(y)) => {
                found += 1;
                assert!((x - y).abs() < 1e-6, "{a:?} {b:?}: {x} vs {y}");
            }
            (None, None) => {}
            other => panic!("{a:?} {b:?}: {other:?}"),
        }
    }
    assert!(found > 50);
}

#[test]
fn fig6_crossing_ttc_at_start() {
    let v_car = 30.0 / 3.6;
    let car = (v_car * 12.0, v_car, 2.25);
    let ped = (1.5 * 12.0, 1.5, 0.3);
    let oracle = common::stepped_crossing_ttc(car, ped, 30.0).unwrap();
    let got = crossing_ttc(
        &ConflictApproach {
            distance: car.0,
            speed: car.1,
            half_length: car.2,
        },
        &ConflictApproach {
            distance: ped.0,
            speed: ped.1,
            half_length: ped.2,
        },
    )
    .unwrap();
    assert!((got - oracle).abs() < 1e-6);
    assert!((got - 12.0).abs() < 0.5);
}

#[test]
fn sinusoidal_offset_rms() {
    let lane = Lane {
        id: "l".into(),
        width: 3.5,
        centerline: Polyline::from_xy(&[[-10.0, 0.0], [1010.0, 0.0]]).unwrap(),
    };
    for amp in [0.1, 0.4, 1.2] {
        let wavelength = 50.0;
        // 20 whole periods, 1000 samples per period.
        let samples: Vec<_> = (0..20_000)
            .map(|i| {
                let x = i as f64 * wavelength / 1000.0;
                sample(i, 0.01, 1, x, amp * (2.0 * PI * x / wavelength).sin(), 0.0, 10.0)
            })
            .collect();
        let m = lane_metrics(&samples, &lane, &MetricParams::default());
        let oracle = amp / 2f64.sqrt();
        assert!((m.rms_offset - oracle).abs() < 1e-3, "A {amp}: {} vs {oracle}", m.rms_offset);
        assert!((m.max_offset - amp).abs() < 1e-6);
        // Each period leaves the lane once on either side.
        assert_eq!(m.departures, if amp > 0.85 { 40 } else { 0 });
    }
}

#[test]
fn nback_grader_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..1000 {
        let n = 1 + trial % 3;
        let len = rng.gen_range(1..40);
        let alphabet = rng.gen_range(2u8..6);
        let symbols: Vec<u8> = (0..len).map(|_| b'A' + rng.gen_range(0..alphabet)).collect();
        let isi = rng.gen_range(500_000u64..3_000_000);
        let onsets: Vec<u64> = (0..len as u64).map(|i| 1_000_000 + i * isi).collect();
        let end = onsets[len - 1] + 4_000_000;
        let responses: Vec<u64> = (0..rng.gen_range(0..len + 5)).map(|_| rng.gen_range(0..end)).collect();
        let stimuli: Vec<Stimulus> = symbols
            .iter()
            .zip(&onsets)
            .map(|(&symbol, &onset_us)| Stimulus { onset_us, symbol })
            .collect();
        let g = grade_nback(&stimuli, &responses, n);
        let b = common::brute_nback(&symbols, &onsets, &responses, n, NBACK_WINDOW_US);
        assert_eq!((g.hits, g.misses, g.false_alarms, g.correct_rejections), b, "trial {trial}");
    }
}

#[test]
fn takeover_interval_from_event_times() {
    let events = [
        event(EventCode::TAKEOVER_REQUEST, 8.2, 3),
        event(EventCode::TAKEOVER_ENGAGE, 10.0, 3),
        event(EventCode::TAKEOVER_ENGAGE, 20.0, 3),
        event(EventCode::TAKEOVER_REQUEST, 30.0, 3),
    ];
    let r = reaction_times(&events, &[], &[], &MetricParams::default());
    assert_eq!(r.takeover_tti.len(), 2);
    let oracle = events[1].sim_time_s() - events[0].sim_time_s();
    assert_eq!(r.takeover_tti[0].value, Some(oracle));
    assert!((oracle - 1.8).abs() < 1e-12);
    assert!(r.takeover_tti[1].value.is_none() && r.takeover_tti[1].reason.is_some());
    assert_eq!(r.spontaneous_overrides, vec![(3, 20.0)]);
}

#[test]
fn gap_accepted_at_crossing_onset() {
    let dt = 0.01;
    let v = 30.0 / 3.6;
    // The car is 50 m out when the pedestrian starts walking at t = 2 s.
    let t_start = 2.0;
    let car: Vec<_> = (0..1000)
        .map(|i| {
            let t = i as f64 * dt;
            sample(i, dt, 1, -(50.0 + v * t_start) + v * t, 0.0, 0.0, v)
        })
        .collect();
    let ped: Vec<_> = (0..1000)
        .map(|i| {
            let t = i as f64 * dt;
            let speed = if t >= t_start { 1.5 } else { 0.0 };
            sample(i, dt, 2, 0.0, -10.0 + 1.5 * (t - t_start).max(0.0), FRAC_PI_2, speed)
        })
        .collect();
    let paths = [approach("car_p", [-200.0, 0.0]), approach("ped_p", [0.0, -30.0])];
    let ts = [
        trajectory(1, AgentKind::Driver, "car_p", car),
        trajectory(2, AgentKind::Pedestrian, "ped_p", ped),
    ];
    let events = [event(EventCode::CROSSING_CUE, 0.5, 0)];
    let r = reaction_times(&events, &ts, &paths, &MetricParams::default());
    let ci = &r.crossing_initiation[0];
    assert!((ci.value.unwrap() - (t_start - 0.5)).abs() < 1e-9);
    let oracle = 50.0 / v;
    assert!((r.gap_accepted[0].value.unwrap() - oracle).abs() < 1e-9);
    assert!((oracle - 6.0).abs() < 1e-3);
    // The scripted car never brakes, the hazard-free run has a reason.
    assert!(r.brake_rt.iter().all(|m| m.value.is_none() && m.reason.is_some()));
}

#[test]
fn standing_pedestrian_has_no_initiation() {
    let ped: Vec<_> = (0..500).map(|i| sample(i, 0.01, 1, 0.0, -5.0, FRAC_PI_2, 0.25)).collect();
    let ts = [trajectory(1, AgentKind::Pedestrian, "ped_p", ped)];
    let r = reaction_times(&[event(EventCode::CROSSING_CUE, 1.0, 0)], &ts, &[], &MetricParams::default());
    assert!(r.crossing_initiation[0].value.is_none());
    assert!(r.crossing_initiation[0].reason.is_some());
}

#[test]
fn brake_reaction_after_hazard() {
    let mut car: Vec<_> = (0..500).map(|i| sample(i, 0.01, 1, i as f64 * 0.1, 0.0, 0.0, 10.0)).collect();
    for s in car.iter_mut().skip(237) {
        s.brake = 0.3;
    }
    let ts = [trajectory(1, AgentKind::Driver, "lane", car)];
    let r = reaction_times(&[event(EventCode::HAZARD, 1.5, 0)], &ts, &[], &MetricParams::default());
    assert!((r.brake_rt[0].value.unwrap() - (2.37 - 1.5)).abs() < 1e-9);
}

#[test]
fn scripted_yield_counts_once() {
    let dt = 0.01;
    // Cyclist heading for the conflict point at the origin from the west.
    let mut x = -40.0;
    let mut v = 10.0;
    let mut bike = Vec::new();
    for i in 0..600u64 {
        bike.push(sample(i, dt, 1, x, 0.0, 0.0, v));
        // Slow from 10 to 6 m/s once 15 m out, then hold.
        if x >= -15.0 && v > 6.0 {
            v = (v - 5.0 * dt).max(6.0);
        }
        x += v * dt;
    }
    let ped: Vec<_> = (0..600).map(|i| sample(i, dt, 2, 0.0, -4.0, FRAC_PI_2, 0.0)).collect();
    let bike = trajectory(1, AgentKind::Cyclist, "b", bike);
    let ped = trajectory(2, AgentKind::Pedestrian, "p", ped);
    let params = MetricParams::default();
    let conflict = [roadshare_core::world::Vec2::new(0.0, 0.0)];
    assert_eq!(yielding_events(&bike, &[&bike, &ped], &conflict, &params), 1);
    // With nobody else around there is nothing to yield to.
    assert_eq!(yielding_events(&bike, &[&bike], &conflict, &params), 0);
}

#[test]
fn tlx_of_fifties_scores_fifty() {
    let mut events = vec![EventRecord {
        object: 0,
        ..event(EventCode::QUESTIONNAIRE_START, 25.0, 3)
    }];
    for item in 1..=6u32 {
        events.push(EventRecord {
            object: (Instrument::Tlx.code() as u32) << 8 | item,
            value: 50.0,
            ..event(EventCode::QRESPONSE, 30.0 + item as f64, 3)
        });
    }
    let rows = instrument_rows(&events);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].scores.raw_tlx, Some(50.0));
    assert!(rows[0].scores.partial.is_empty());
}

fn msg(agent_id: u16, seq: u32, body: Body) -> Vec<u8> {
    let header = Header {
        agent_id,
        seq,
        session: 1,
        ..Header::default()
    };
    encode(&Message::new(header, body)).unwrap()
}

/// A 30 s fig6 session: the pedestrian joins, waits 2 s, walks across, and
/// answers the TLX.
fn fig6_log() -> (Scenario, Vec<u8>) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/fig6.json");
    let sc = Scenario::from_file(path).unwrap();
    let ped = sc.agent("ped").unwrap().id as u16;
    let config = SessionConfig::default();
    let mut session = Session::new(Sim::new(sc.clone(), config).unwrap(), Some(Vec::new())).unwrap();
    let hello = Body::Hello(Hello {
        role: Role::Agent(AgentKind::Pedestrian),
        display_name: "p".into(),
    });
    session.handle(1, &msg(0, 1, hello)).unwrap().unwrap();
    let mut seq = 1;
    for tick in 0..3000u64 {
        if tick == 200 {
            seq += 1;
            let walk = ControlInput::Walk(WalkInput {
                walk_speed: 1.5,
                walk_heading: FRAC_PI_2,
                seated_request: false,
            });
            let input = Body::Input(InputMsg {
                control: walk,
                client_tick_hint: 0,
            });
            session.handle(1, &msg(ped, seq, input)).unwrap().unwrap();
        }
        if tick == 2700 {
            for item in 1..=6 {
                seq += 1;
                let q = Body::QResponse(QResponse {
                    instrument: Instrument::Tlx,
                    item,
                    value: 50.0,
                });
                session.handle(1, &msg(ped, seq, q)).unwrap().unwrap();
            }
        }
        session.step().unwrap();
    }
    let (_, log) = session.finish().unwrap();
    (sc, log.unwrap())
}

#[test]
fn fig6_session_metrics() {
    let (sc, bytes) = fig6_log();
    let log = ReplayLog::from_reader(bytes.as_slice()).unwrap();
    let data = run_data_from_log(&log).unwrap();
    let report = compute_metrics(&data, &MetricParams::default());

    let id = |name: &str| sc.agent(name).unwrap().id;
    let (car, ped) = (id("car"), id("ped"));
    let v_car = sc.agent("car").unwrap().spec.target_speed;
    let car_start = sc.agent("car").unwrap().placement.as_ref().unwrap().distance;

    let reaction = |metric: &str| report.reactions.iter().find(|r| r.metric == metric && r.agent_id == ped).unwrap();
    let init = reaction("crossing_initiation");
    let onset = init.t_event_s.unwrap() + init.value_s.unwrap();
    assert!(onset > 2.0 && onset < 2.5, "onset {onset}");
    // The scripted car moves at constant speed from its placement.
    let gap = reaction("gap_accepted").value_s.unwrap();
    let oracle = (car_start - v_car * onset) / v_car;
    assert!((gap - oracle).abs() < 1e-6, "{gap} vs {oracle}");

    // The pedestrian starts 2 s late, so car and pedestrian never overlap.
    let car_ped = report.safety.iter().find(|s| s.agent_a == car && s.agent_b == ped).unwrap();
    assert_eq!(car_ped.min_ttc_s, None);
    // Car and cyclist are scripted into the same arrival: TTC reaches 0 at
    // their overlap onset.
    let bike = id("cyclist");
    let v_bike = sc.agent("cyclist").unwrap().spec.target_speed;
    let bike_start = sc.agent("cyclist").unwrap().placement.as_ref().unwrap().distance;
    let onset_oracle =
        common::stepped_crossing_ttc((car_start, v_car, 2.25), (bike_start, v_bike, 0.9), 30.0).unwrap();
    let car_bike = report.safety.iter().find(|s| s.agent_a == car && s.agent_b == bike).unwrap();
    assert_eq!(car_bike.min_ttc_s, Some(0.0));
    let t_zero = car_bike.t_min_ttc_s.unwrap();
    assert!(t_zero >= onset_oracle - 1e-9 && t_zero < onset_oracle + 0.01 + 1e-9, "{t_zero} vs {onset_oracle}");
    let car_lane = report.lane.iter().find(|l| l.agent_id == car).unwrap();
    assert_eq!((car_lane.lane.as_str(), car_lane.departures), ("road", 0));
    assert!(car_lane.rms_offset_m < 1e-9);

    assert_eq!(report.instruments.len(), 1);
    assert_eq!(report.instruments[0].scores.raw_tlx, Some(50.0));
    let p = report.pedestrian.iter().find(|p| p.agent_id == ped).unwrap();
    assert!(p.deviation_area < 1e-9, "{p:?}");

    // Same log, same metrics.
    let again = compute_metrics(&run_data_from_log(&log).unwrap(), &MetricParams::default());
    assert_eq!(serde_json::to_string(&report).unwrap(), serde_json::to_string(&again).unwrap());
    assert_eq!(report.series, again.series);

    let dir = tempfile::tempdir().unwrap();
    let files = write_metrics(&report, dir.path()).unwrap();
    assert_eq!(files.len(), 12);
    let lane_csv = std::fs::read_to_string(dir.path().join("lane.csv")).unwrap();
    assert!(lane_csv.starts_with("agent_id,agent,kind,lane,samples,rms_offset_m"));
    let empty = std::fs::read_to_string(dir.path().join("transit.csv")).unwrap();
    assert_eq!(empty.trim(), "agent_id,boarded_vehicle,board_latency_s,dwell_s,min_proximity_m");
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["ticks"], 3000);
}

