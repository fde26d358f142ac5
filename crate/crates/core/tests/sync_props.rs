use std::f64::consts::{PI, TAU};

use bisync_core::servo_wire::RawTicks;
use bisync_core::sim::{steps_to_converge, SimRig};
use bisync_core::sync::{
    calibrate, follower_to_leader, leader_to_follower, step_mode, CalibrationProfile, ControlMode,
    GripperSpan, ModeEvent, PedalEvent, Sign, SyncDiagnostic, SyncEngine, SyncState,
};
use bisync_core::{JointLimits, JointVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RES: u32 = 4096;

fn sign_strategy() -> impl Strategy<Value = Sign> {
    prop_oneof![Just(Sign::Positive), Just(Sign::Negative)]
}

// Second implementation of the forward map: walk the tick difference into
// range one turn at a time.
fn oracle_angle(raw: u32, offset: u32, sign: Sign, res: u32) -> f64 {
    let mut d = raw as i64 - offset as i64;
    let half = res as i64 / 2;
    while d > half {
        d -= res as i64;
    }
    while d <= -half {
        d += res as i64;
    }
    let s = if sign == Sign::Positive { 1.0 } else { -1.0 };
    s * d as f64 * TAU / res as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn calibration_round_trip(offset in 0..RES, sign in sign_strategy(), q in -PI..PI) {
        let profile = CalibrationProfile::new(vec![offset], vec![sign], RES).unwrap();
        let jv = JointVector::from_q(vec![q]).unwrap();
        match follower_to_leader(&jv, &profile) {
            Ok(raw) => {
                let back = leader_to_follower(&raw, &profile).unwrap();
                prop_assert!((back.q[0] - q).abs() <= PI / RES as f64);
            }
            // Only the half-turn boundary is unrepresentable.
            Err(_) => prop_assert!(q.abs() >= PI - PI / RES as f64),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn forward_map_matches_oracle(
        raw in prop::collection::vec(0..RES, 6),
        offset in prop::collection::vec(0..RES, 6),
        sign in prop::collection::vec(sign_strategy(), 6),
    ) {
        let profile = CalibrationProfile::new(offset.clone(), sign.clone(), RES).unwrap();
        let q = leader_to_follower(&RawTicks::new(raw.clone(), RES).unwrap(), &profile).unwrap();
        for i in 0..6 {
            prop_assert_eq!(q.q[i], oracle_angle(raw[i], offset[i], sign[i], RES));
        }
    }

    #[test]
    fn calibrate_recovers_reference(
        raw in prop::collection::vec(0..RES, 6),
        reference in prop::collection::vec(-3.1f64..3.1, 6),
        sign in prop::collection::vec(sign_strategy(), 6),
    ) {
        let reference = JointVector::from_q(reference).unwrap();
        let profile = calibrate(&RawTicks::new(raw.clone(), RES).unwrap(), &reference, &sign).unwrap();
        let q = leader_to_follower(&RawTicks::new(raw, RES).unwrap(), &profile).unwrap();
        prop_assert!(q.max_abs_diff(&reference) <= TAU / RES as f64);
    }

    #[test]
    fn calibration_file_round_trip(
        offset in prop::collection::vec(0..RES, 1..8),
        flip in any::<u8>(),
    ) {
        let sign: Vec<Sign> = (0..offset.len())
            .map(|i| if flip >> (i % 8) & 1 == 1 { Sign::Negative } else { Sign::Positive })
            .collect();
        let p = CalibrationProfile::new(offset, sign, RES).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("leader.cal");
        p.save(&path).unwrap();
        prop_assert_eq!(CalibrationProfile::load(&path).unwrap(), p);
    }
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    PressSynced,
    PressDesynced,
    Release,
    Fault,
    Pause,
    Resume,
    ClearFault,
}

const EVENTS: [Ev; 7] = [
    Ev::PressSynced,
    Ev::PressDesynced,
    Ev::Release,
    Ev::Fault,
    Ev::Pause,
    Ev::Resume,
    Ev::ClearFault,
];

fn model(mode: ControlMode, ev: Ev) -> ControlMode {
    use ControlMode::*;
    match (mode, ev) {
        (Autonomous, Ev::PressSynced) => Intervention,
        (Intervention, Ev::Release) => Autonomous,
        (Fault, Ev::Fault) => Fault,
        (_, Ev::Fault) => Fault,
        (Autonomous | Intervention, Ev::Pause) => Paused,
        (Paused, Ev::Resume) => Autonomous,
        (Fault, Ev::ClearFault) => Paused,
        (m, _) => m,
    }
}

fn explore(state: &SyncState, depth: usize, time: f64, visited: &mut u64) {
    if depth == 0 {
        return;
    }
    let synced = JointVector::from_q(vec![0.2, -0.4]).unwrap();
    let desynced = JointVector::from_q(vec![0.2 + 0.03, -0.4]).unwrap();
    for ev in EVENTS {
        let mut s = state.clone();
        let before = s.mode();
        let event = match ev {
            Ev::PressSynced | Ev::PressDesynced => {
                s.last_leader_q = if matches!(ev, Ev::PressSynced) {
                    synced.clone()
                } else {
                    desynced.clone()
                };
                ModeEvent::Pedal(PedalEvent {
                    pressed: true,
                    timestamp: time,
                })
            }
            Ev::Release => ModeEvent::Pedal(PedalEvent {
                pressed: false,
                timestamp: time,
            }),
            Ev::Fault => ModeEvent::Fault("test".into()),
            Ev::Pause => ModeEvent::Pause,
            Ev::Resume => ModeEvent::Resume,
            Ev::ClearFault => ModeEvent::ClearFault,
        };
        let out = step_mode(&mut s, &event);
        *visited += 1;
        assert_eq!(s.mode(), model(before, ev), "{before:?} + {ev:?}");
        if s.mode() == ControlMode::Intervention && before != ControlMode::Intervention {
            assert!(s.sync_error() <= s.handover_tolerance());
        }
        if matches!(ev, Ev::PressDesynced) && before == ControlMode::Autonomous {
            assert!(out
                .diagnostics
                .iter()
                .any(|d| matches!(d, SyncDiagnostic::GuardViolation { .. })));
        }
        assert_eq!(
            out.transition.is_some(),
            s.mode() != before || matches!(ev, Ev::Fault) && before != ControlMode::Fault
        );
        explore(&s, depth - 1, time + 1.0, visited);
    }
}

#[test]
fn mode_machine_exhaustive_to_depth_8() {
    let q = JointVector::from_q(vec![0.2, -0.4]).unwrap();
    let root = SyncState::new(q.clone(), q, 0.02).unwrap();
    let mut visited = 0;
    explore(&root, 8, 0.0, &mut visited);
    let expected: u64 = (1..=8).map(|k| 7u64.pow(k)).sum();
    assert_eq!(visited, expected);
}

fn rig(rng: &mut ChaCha8Rng, joints: usize) -> SimRig {
    let offset = (0..joints).map(|_| rng.gen_range(0..RES)).collect();
    let sign = (0..joints)
        .map(|_| {
            if rng.gen_bool(0.5) {
                Sign::Positive
            } else {
                Sign::Negative
            }
        })
        .collect();
    let open = rng.gen_range(0..RES);
    let span = GripperSpan {
        open,
        closed: (open + 1500) % RES,
    };
    let profile = CalibrationProfile::new(offset, sign, RES)
        .unwrap()
        .with_gripper(span)
        .unwrap();
    let v = rng.gen_range(0.3..1.5);
    let limits =
        JointLimits::new(vec![-2.5; joints], vec![2.5; joints], vec![v; joints], v).unwrap();
    let engine = SyncEngine::new(profile, limits, 0.02).unwrap();
    let fq: Vec<f64> = (0..joints).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let lq: Vec<f64> = fq.iter().map(|q| q + rng.gen_range(-0.5..0.5)).collect();
    let g = rng.gen_range(0.0..1.0);
    SimRig::new(
        engine,
        JointVector::new(fq, g).unwrap(),
        JointVector::new(lq, g).unwrap(),
        JointLimits::new(
            vec![-3.0; joints],
            vec![3.0; joints],
            vec![4.0; joints],
            8.0,
        )
        .unwrap(),
        0.02,
    )
    .unwrap()
}

#[test]
fn handover_continuity_randomized() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut switches = 0;
    let mut refused = 0;
    while switches < 1_000 {
        let joints = rng.gen_range(1..=6);
        let mut rig = rig(&mut rng, joints);
        let press_after = rng.gen_range(0..60);
        let mut prev = rig.follower.arm.target.clone();
        let mut time = 0.0;
        for k in 0..400 {
            time += 0.02;
            let cmd_q: Vec<f64> = rig
                .follower
                .arm
                .q
                .q
                .iter()
                .map(|q| q + rng.gen_range(-0.1..0.1))
                .collect();
            let cmd = JointVector::new(cmd_q, rng.gen_range(0.0..1.0)).unwrap();
            let events = if k >= press_after {
                vec![ModeEvent::Pedal(PedalEvent {
                    pressed: true,
                    timestamp: time,
                })]
            } else {
                vec![]
            };
            let err_before = rig.state.sync_error();
            let step = rig.period(&events, Some(&cmd), None).unwrap();
            if !events.is_empty() && step.mode == ControlMode::Autonomous {
                refused += 1;
                assert!(err_before > rig.state.handover_tolerance());
            }
            if step.mode == ControlMode::Intervention {
                assert!(err_before <= rig.state.handover_tolerance());
                let tol = rig.state.handover_tolerance();
                let dt = rig.engine.dt;
                let target = &step.output.follower_target;
                for i in 0..joints {
                    let jump = (target.q[i] - prev.q[i]).abs();
                    assert!(
                        jump <= tol + rig.engine.limits.v_max[i] * dt + 1e-12,
                        "joint {i} jump {jump}"
                    );
                }
                let grip = (target.gripper - prev.gripper).abs();
                assert!(grip <= tol + rig.engine.limits.gripper_v_max * dt + 1e-12);
                switches += 1;
                break;
            }
            prev = step.output.follower_target.clone();
        }
    }
    assert!(refused > 0);
}

#[test]
fn reverse_sync_reaches_mirror_in_closed_form_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 200 {
        let mut rig = rig(&mut rng, 3);
        let hold = rig.follower.arm.q.clone();
        let mirror_ticks = follower_to_leader(&hold, &rig.engine.profile).unwrap();
        let mirror_q = leader_to_follower(&mirror_ticks, &rig.engine.profile).unwrap();
        let limits = rig.leader.arm.limits.clone();
        let dt = rig.engine.dt;
        let n = (0..3)
            .map(|i| {
                (
                    (mirror_q.q[i] - rig.leader.arm.q.q[i]).abs(),
                    limits.v_max[i],
                )
            })
            .chain(std::iter::once((
                (mirror_q.gripper - rig.leader.arm.q.gripper).abs(),
                limits.gripper_v_max,
            )))
            .map(|(d, v)| (d / (v * dt), steps_to_converge(d, v, dt)))
            .collect::<Vec<_>>();
        if n.iter().any(|(r, _)| (r - r.round()).abs() < 1e-6) {
            continue;
        }
        let steps = n.iter().map(|(_, s)| *s).max().unwrap();
        for k in 0..steps {
            let at_mirror = rig.leader.arm.q.max_abs_diff(&mirror_q) < 1e-9;
            assert!(!at_mirror, "arrived early at step {k} of {steps}");
            rig.period(&[], Some(&hold), None).unwrap();
        }
        assert!(rig.leader.arm.q.max_abs_diff(&mirror_q) < 1e-9);
        let ticks = rig.leader.ticks().unwrap();
        for (a, b) in ticks.ticks.iter().zip(&mirror_ticks.ticks) {
            let d = (*a as i64 - *b as i64).rem_euclid(RES as i64);
            assert!(d <= 1 || d >= RES as i64 - 1);
        }
        checked += 1;
    }
}

#[test]
fn desynced_press_never_switches() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1_000 {
        let mut rig = rig(&mut rng, 2);
        rig.leader = rig.leader.clone().passive();
        let mut q = rig.leader.arm.q.clone();
        q.q[0] = rig.follower.arm.q.q[0] + if rng.gen_bool(0.5) { 0.3 } else { -0.3 };
        rig.leader.arm.q = q.clone();
        rig.leader.arm.target = q;
        let hold = rig.follower.arm.q.clone();
        rig.period(&[], Some(&hold), None).unwrap();
        let press = ModeEvent::Pedal(PedalEvent {
            pressed: true,
            timestamp: 1.0,
        });
        let step = rig.period(&[press], Some(&hold), None).unwrap();
        assert_eq!(step.mode, ControlMode::Autonomous);
        assert!(matches!(
            step.diagnostics[0],
            SyncDiagnostic::GuardViolation { .. }
        ));
    }
}
