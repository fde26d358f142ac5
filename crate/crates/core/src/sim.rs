//! Simulated arms and the device contract.
//!
//! A simulated arm is a first-order, rate-limited position servo: each step
//! moves every joint toward its target by at most `v_max · dt`, then clamps
//! into the joint limits.

use std::f64::consts::TAU;
use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::kinematics::{clamp_to_limits, planar, ur5, DhTable, JointLimits, JointVector};
use crate::kv::KvFile;
use crate::servo_wire::{RawTicks, DEFAULT_RESOLUTION};
use crate::sync::{
    approach, leader_to_follower, step_mode, CalibrationProfile, ControlMode, ModeEvent,
    ModeTransition, SyncDiagnostic, SyncEngine, SyncState, TickOutput,
};

#[derive(Debug, Clone, PartialEq)]
pub struct SimArm {
    pub q: JointVector,
    pub target: JointVector,
    pub limits: JointLimits,
    pub dt: f64,
}

impl SimArm {
    /// Starts at rest at `q` (clamped into the limits).
    pub fn new(q: JointVector, limits: JointLimits, dt: f64) -> Result<Self> {
        q.validate()?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("dt must be positive"));
        }
        let q = clamp_to_limits(&q, &limits)?;
        Ok(Self {
            target: q.clone(),
            q,
            limits,
            dt,
        })
    }

    pub fn set_target(&mut self, target: JointVector) -> Result<()> {
        check_dim(self.q.len(), target.len())?;
        target.validate()?;
        self.target = target;
        Ok(())
    }

    /// Advances one period toward the current target.
    pub fn step(&mut self) -> Result<()> {
        let target = self.target.clone();
        *self = sim_step(self, &target)?;
        Ok(())
    }

    pub fn at_target(&self) -> bool {
        self.q == self.target
    }
}

pub fn sim_step(state: &SimArm, target: &JointVector) -> Result<SimArm> {
    check_dim(state.q.len(), target.len())?;
    target.validate()?;
    let moved = JointVector {
        q: (0..state.q.len())
            .map(|i| approach(state.q.q[i], target.q[i], state.limits.v_max[i] * state.dt))
            .collect(),
        gripper: approach(
            state.q.gripper,
            target.gripper,
            state.limits.gripper_v_max * state.dt,
        ),
    };
    Ok(SimArm {
        q: clamp_to_limits(&moved, &state.limits)?,
        target: target.clone(),
        limits: state.limits.clone(),
        dt: state.dt,
    })
}

/// Steps a constant-target servo needs to settle: `ceil(|Δ| / (v_max·dt))`.
pub fn steps_to_converge(delta: f64, v_max: f64, dt: f64) -> u64 {
    (delta.abs() / (v_max * dt)).ceil() as u64
}

/// Reads the arm the way its motors would report it.
///
/// Angles are quantized to the nearest tick and wrap like a single-turn
/// encoder, so a reading always exists.
pub fn leader_as_ticks(state: &SimArm, profile: &CalibrationProfile) -> Result<RawTicks> {
    check_dim(profile.joint_count(), state.q.len())?;
    let res = profile.resolution() as i64;
    let mut ticks: Vec<u32> = (0..profile.joint_count())
        .map(|i| {
            let delta =
                (profile.sign()[i].factor() * state.q.q[i] * res as f64 / TAU).round() as i64;
            (profile.offset()[i] as i64 + delta).rem_euclid(res) as u32
        })
        .collect();
    if let Some(span) = profile.gripper() {
        let travel =
            crate::sync::wrap_signed(span.closed as i64 - span.open as i64, profile.resolution());
        let pos = (state.q.gripper * travel as f64).round() as i64;
        ticks.push((span.open as i64 + pos).rem_euclid(res) as u32);
    }
    RawTicks::new(ticks, profile.resolution())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Capabilities {
    pub active_control: bool,
    pub passive_read: bool,
}

/// Positions in whichever unit the device speaks.
#[derive(Debug, Clone, PartialEq)]
pub enum Positions {
    Joints(JointVector),
    Ticks(RawTicks),
}

/// What a hardware driver implements. Every device can be read; only devices
/// with `active_control` accept targets.
pub trait Device {
    fn capabilities(&self) -> Capabilities;
    fn read_positions(&self) -> Result<Positions>;
    fn write_targets(&mut self, targets: Positions) -> Result<()>;
    /// Lets simulated time pass by one period. Real drivers do nothing.
    fn advance(&mut self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SimFollower {
    pub arm: SimArm,
}

impl Device for SimFollower {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            active_control: true,
            passive_read: true,
        }
    }

    fn read_positions(&self) -> Result<Positions> {
        Ok(Positions::Joints(self.arm.q.clone()))
    }

    fn write_targets(&mut self, targets: Positions) -> Result<()> {
        match targets {
            Positions::Joints(q) => self.arm.set_target(q),
            Positions::Ticks(_) => Err(Error::invalid("follower takes joint targets, not ticks")),
        }
    }

    fn advance(&mut self) -> Result<()> {
        self.arm.step()
    }
}

/// Leader device: reports ticks, accepts tick targets from reverse sync.
#[derive(Debug, Clone)]
pub struct SimLeader {
    pub arm: SimArm,
    pub profile: CalibrationProfile,
    active: bool,
}

impl SimLeader {
    pub fn new(arm: SimArm, profile: CalibrationProfile) -> Result<Self> {
        check_dim(profile.joint_count(), arm.q.len())?;
        Ok(Self {
            arm,
            profile,
            active: true,
        })
    }

    /// A read-only leader (motors unpowered).
    pub fn passive(mut self) -> Self {
        self.active = false;
        self
    }

    /// Where the operator's hand pushes the leader, in joint angles.
    pub fn set_hand_target(&mut self, q: JointVector) -> Result<()> {
        self.arm.set_target(q)
    }

    pub fn ticks(&self) -> Result<RawTicks> {
        leader_as_ticks(&self.arm, &self.profile)
    }
}

impl Device for SimLeader {
    fn capabilities(&self) -> Capabilities {
        Capabilities {
            active_control: self.active,
            passive_read: true,
        }
    }

    fn read_positions(&self) -> Result<Positions> {
        self.ticks().map(Positions::Ticks)
    }

    fn write_targets(&mut self, targets: Positions) -> Result<()> {
        if !self.active {
            return Err(Error::invalid("leader is passive and accepts no targets"));
        }
        match targets {
            Positions::Ticks(raw) => {
                let q = leader_to_follower(&raw, &self.profile)?;
                self.arm.set_target(q)
            }
            Positions::Joints(_) => Err(Error::invalid(
                "leader takes tick targets, not joint angles",
            )),
        }
    }

    fn advance(&mut self) -> Result<()> {
        self.arm.step()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MotorGroup {
    pub model: String,
    pub count: usize,
}

/// Joint count, limits, kinematics and motor layout of one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct DevicePreset {
    pub name: String,
    pub dh: DhTable,
    pub limits: JointLimits,
    pub resolution: u32,
    pub motors: Vec<MotorGroup>,
}

const BUILTIN_PRESETS: &[(&str, &str)] = &[
    ("ur5", include_str!("../data/presets/ur5.preset")),
    (
        "ur5-leader",
        include_str!("../data/presets/ur5-leader.preset"),
    ),
    ("planar2", include_str!("../data/presets/planar2.preset")),
    (
        "planar2-leader",
        include_str!("../data/presets/planar2-leader.preset"),
    ),
    ("planar1", include_str!("../data/presets/planar1.preset")),
    (
        "planar1-leader",
        include_str!("../data/presets/planar1-leader.preset"),
    ),
];

impl DevicePreset {
    pub fn joint_count(&self) -> usize {
        self.dh.joint_count()
    }

    pub fn motor_count(&self) -> usize {
        self.motors.iter().map(|m| m.count).sum()
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN_PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let (_, text) = BUILTIN_PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::invalid(format!("unknown device preset `{name}`")))?;
        Self::parse(text, None)
    }

    /// A builtin name, or a path to a preset file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_PRESETS.iter().any(|(n, _)| *n == name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::error::read_file(path)?;
        Self::parse(&text, path.parent()).map_err(|e| e.with_path(path))
    }

    /// Keys: `name`, `dh` (`ur5`, `planar L1 L2 ...` or a DH file path),
    /// optional `scale`, `lower`, `upper`, `v_max`, `gripper_v_max`,
    /// `resolution`, and `motors` as `model:count` pairs.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let name: String = kv.require("name")?;
        let dh_spec: String = kv.require("dh")?;
        let mut dh = match dh_spec.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["ur5"] => ur5(),
            ["planar", links @ ..] => {
                let links = links
                    .iter()
                    .map(|s| {
                        s.parse::<f64>()
                            .map_err(|e| Error::invalid(format!("dh: `{s}`: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                planar(&links)?
            }
            _ => {
                let p = Path::new(&dh_spec);
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                DhTable::load(&p)?
            }
        };
        if let Some(scale) = kv.get::<f64>("scale")? {
            dh = dh.scaled(scale)?;
        }
        let n = dh.joint_count();
        let list = |key: &str| -> Result<Vec<f64>> {
            let v = kv
                .get_list::<f64>(key)?
                .ok_or_else(|| Error::invalid(format!("missing required key `{key}`")))?;
            check_dim(n, v.len())?;
            Ok(v)
        };
        let limits = JointLimits::new(
            list("lower")?,
            list("upper")?,
            list("v_max")?,
            kv.get_or("gripper_v_max", 2.0)?,
        )?;
        let resolution = kv.get_or("resolution", DEFAULT_RESOLUTION)?;
        let motors = kv
            .get_list::<String>("motors")?
            .unwrap_or_default()
            .into_iter()
            .map(|m| {
                let (model, count) = m.split_once(':').ok_or_else(|| {
                    Error::invalid(format!("motors: expected model:count, got `{m}`"))
                })?;
                let count = count
                    .parse::<usize>()
                    .map_err(|e| Error::invalid(format!("motors: `{m}`: {e}")))?;
                Ok(MotorGroup {
                    model: model.to_string(),
                    count,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name,
            dh,
            limits,
            resolution,
            motors,
        })
    }
}

/// A simulated leader/follower pair driven by one [`SyncEngine`].
#[derive(Debug, Clone)]
pub struct SimRig {
    pub engine: SyncEngine,
    pub state: SyncState,
    pub leader: SimLeader,
    pub follower: SimFollower,
}

/// Everything one control period saw and decided.
#[derive(Debug, Clone)]
pub struct RigStep {
    pub leader_raw: RawTicks,
    pub follower_q: JointVector,
    pub transitions: Vec<ModeTransition>,
    pub diagnostics: Vec<SyncDiagnostic>,
    pub output: TickOutput,
    /// Mode in force when the tick ran.
    pub mode: ControlMode,
}

impl SimRig {
    /// Builds both arms at rest, the leader posed at `leader_q`.
    pub fn new(
        engine: SyncEngine,
        follower_q: JointVector,
        leader_q: JointVector,
        leader_limits: JointLimits,
        handover_tolerance: f64,
    ) -> Result<Self> {
        let dt = engine.dt;
        let follower = SimFollower {
            arm: SimArm::new(follower_q, engine.limits.clone(), dt)?,
        };
        let leader = SimLeader::new(
            SimArm::new(leader_q, leader_limits, dt)?,
            engine.profile.clone(),
        )?;
        let leader_read = leader_to_follower(&leader.ticks()?, &engine.profile)?;
        let state = SyncState::new(leader_read, follower.arm.q.clone(), handover_tolerance)?;
        Ok(Self {
            engine,
            state,
            leader,
            follower,
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.state.mode()
    }

    /// One control period.
    ///
    /// Sensors are read first, then queued events go through the mode
    /// machine, then the engine ticks and both arms move. `hand` is where the
    /// operator pushes the leader; it only takes effect in `Intervention`.
    /// `policy_cmd` is only passed to the engine in `Autonomous`.
    pub fn period(
        &mut self,
        events: &[ModeEvent],
        policy_cmd: Option<&JointVector>,
        hand: Option<&JointVector>,
    ) -> Result<RigStep> {
        let leader_raw = self.leader.ticks()?;
        let follower_q = self.follower.arm.q.clone();
        let mut transitions = Vec::new();
        let mut diagnostics = Vec::new();
        for ev in events {
            let out = step_mode(&mut self.state, ev);
            transitions.extend(out.transition);
            diagnostics.extend(out.diagnostics);
        }
        let mode = self.state.mode();
        let cmd = if mode == ControlMode::Autonomous {
            policy_cmd
        } else {
            None
        };
        let output = self
            .engine
            .tick(&mut self.state, &leader_raw, &follower_q, cmd)?;
        diagnostics.extend(output.diagnostics.iter().cloned());
        self.follower
            .write_targets(Positions::Joints(output.follower_target.clone()))?;
        match mode {
            ControlMode::Autonomous => {
                if self.leader.capabilities().active_control {
                    self.leader
                        .write_targets(Positions::Ticks(output.leader_target.clone()))?;
                }
            }
            ControlMode::Intervention => {
                if let Some(h) = hand {
                    self.leader.set_hand_target(h.clone())?;
                }
            }
            ControlMode::Paused | ControlMode::Fault => {
                let here = self.leader.arm.q.clone();
                self.leader.set_hand_target(here)?;
            }
        }
        self.follower.advance()?;
        self.leader.advance()?;
        Ok(RigStep {
            leader_raw,
            follower_q,
            transitions,
            diagnostics,
            output,
            mode,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sync::{GripperSpan, Sign};
    use std::f64::consts::FRAC_PI_2;

    fn arm1(q: f64, v_max: f64, dt: f64) -> SimArm {
        let limits = JointLimits::symmetric(1, 3.0, v_max).unwrap();
        SimArm::new(JointVector::from_q(vec![q]).unwrap(), limits, dt).unwrap()
    }

    #[test]
    fn step_at_target_is_noop() {
        let a = arm1(0.7, 1.0, 0.1);
        let b = sim_step(&a, &a.q.clone()).unwrap();
        assert_eq!(b.q, a.q);
    }

    #[test]
    fn step_is_rate_limited() {
        let a = arm1(0.0, 1.0, 0.1);
        let b = sim_step(&a, &JointVector::from_q(vec![1.0]).unwrap()).unwrap();
        assert!((b.q.q[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_clamps_to_limits() {
        let a = arm1(2.95, 1.0, 0.1);
        let b = sim_step(&a, &JointVector::from_q(vec![10.0]).unwrap()).unwrap();
        assert_eq!(b.q.q[0], 3.0);
    }

    #[test]
    fn step_rejects_dimension_mismatch() {
        let a = arm1(0.0, 1.0, 0.1);
        assert!(sim_step(&a, &JointVector::zeros(2)).is_err());
    }

    #[test]
    fn ticks_at_zero_are_offsets() {
        let p = CalibrationProfile::new(vec![11, 4000], vec![Sign::Positive, Sign::Negative], 4096)
            .unwrap();
        let limits = JointLimits::symmetric(2, 3.0, 1.0).unwrap();
        let arm = SimArm::new(JointVector::zeros(2), limits, 0.02).unwrap();
        assert_eq!(leader_as_ticks(&arm, &p).unwrap().ticks, vec![11, 4000]);
    }

    #[test]
    fn ticks_quarter_turn() {
        let p = CalibrationProfile::new(vec![100], vec![Sign::Positive], 4096).unwrap();
        let arm = arm1(FRAC_PI_2, 1.0, 0.02);
        assert_eq!(leader_as_ticks(&arm, &p).unwrap().ticks, vec![1124]);
    }

    #[test]
    fn leader_device_round_trip() {
        let p = CalibrationProfile::new(vec![2048], vec![Sign::Positive], 4096)
            .unwrap()
            .with_gripper(GripperSpan {
                open: 0,
                closed: 1000,
            })
            .unwrap();
        let mut leader = SimLeader::new(arm1(0.0, 4.0, 0.02), p).unwrap();
        let target = RawTicks::new(vec![2048 + 10, 500], 4096).unwrap();
        leader
            .write_targets(Positions::Ticks(target.clone()))
            .unwrap();
        for _ in 0..100 {
            leader.advance().unwrap();
        }
        assert_eq!(leader.read_positions().unwrap(), Positions::Ticks(target));
        assert!(leader
            .write_targets(Positions::Joints(JointVector::zeros(1)))
            .is_err());
        let mut passive = leader.passive();
        assert!(!passive.capabilities().active_control);
        assert!(passive
            .write_targets(Positions::Ticks(RawTicks::new(vec![0, 0], 4096).unwrap()))
            .is_err());
    }

    #[test]
    fn builtin_presets_load() {
        for name in DevicePreset::builtin_names() {
            let p = DevicePreset::builtin(name).unwrap();
            assert_eq!(p.name, name);
            assert_eq!(p.limits.len(), p.joint_count());
        }
        let leader = DevicePreset::builtin("ur5-leader").unwrap();
        assert_eq!(leader.motor_count(), 7);
        assert_eq!(leader.joint_count(), 6);
        assert_eq!(leader.limits.v_max[0], 4.0);
        assert_eq!(DevicePreset::builtin("ur5").unwrap().limits.v_max[0], 1.0);
        assert!(DevicePreset::builtin("nope").is_err());
    }

    #[test]
    fn preset_parse_errors() {
        let text = "name = x\ndh = planar 1 1\nlower = -1\nupper = 1 1\nv_max = 1 1\n";
        assert!(matches!(
            DevicePreset::parse(text, None),
            Err(Error::Dimension { .. })
        ));
        let text = "name = x\ndh = planar 1\nlower = -1\nupper = 1\nv_max = 1\nmotors = foo\n";
        assert!(DevicePreset::parse(text, None).is_err());
    }
}
