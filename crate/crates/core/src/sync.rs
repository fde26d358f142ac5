//! Leader/follower synchronization.
//!
//! The leader reports raw motor ticks; the follower speaks joint angles. A
//! [`CalibrationProfile`] relates the two:
//!
//! ```text
//! q[i]   = sign[i] · (2π / resolution) · wrap_signed(raw[i] − offset[i])
//! raw[i] = (offset[i] + round(sign[i] · q[i] · resolution / 2π)) mod resolution
//! ```
//!
//! `wrap_signed` picks the representative in `(−resolution/2, resolution/2]`,
//! so every joint is single-turn. The [`SyncEngine`] runs one control tick at a
//! time: in `Autonomous` the policy drives the follower and the leader mirrors
//! it, in `Intervention` the leader drives the follower.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, read_file, Error, Result};
use crate::kinematics::{clamp_to_limits, JointLimits, JointVector};
use crate::kv::strip_comment;
use crate::servo_wire::RawTicks;

/// Default per-joint tolerance for entering `Intervention`, radians.
pub const DEFAULT_HANDOVER_TOLERANCE: f64 = 0.02;
pub const DEFAULT_SYNC_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    pub fn factor(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }

    pub fn from_i64(v: i64) -> Result<Self> {
        match v {
            1 => Ok(Sign::Positive),
            -1 => Ok(Sign::Negative),
            other => Err(Error::invalid(format!(
                "sign must be +1 or -1, got {other}"
            ))),
        }
    }
}

impl std::str::FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "+" | "+1" | "1" => Ok(Sign::Positive),
            "-" | "-1" => Ok(Sign::Negative),
            other => Err(Error::invalid(format!(
                "sign must be +1 or -1, got `{other}`"
            ))),
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Positive => "+1",
            Sign::Negative => "-1",
        })
    }
}

/// Maps a tick difference into `(−resolution/2, resolution/2]`.
pub fn wrap_signed(delta: i64, resolution: u32) -> i64 {
    let res = resolution as i64;
    let m = delta.rem_euclid(res);
    if 2 * m > res {
        m - res
    } else {
        m
    }
}

/// Tick positions of a leader gripper when fully open and fully closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GripperSpan {
    pub open: u32,
    pub closed: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationProfile {
    offset: Vec<u32>,
    sign: Vec<Sign>,
    resolution: u32,
    gripper: Option<GripperSpan>,
}

impl CalibrationProfile {
    pub fn new(offset: Vec<u32>, sign: Vec<Sign>, resolution: u32) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::invalid("resolution must be at least 2 ticks"));
        }
        check_dim(offset.len(), sign.len())?;
        if offset.is_empty() {
            return Err(Error::invalid("calibration needs at least one joint"));
        }
        if let Some((i, o)) = offset.iter().enumerate().find(|(_, o)| **o >= resolution) {
            return Err(Error::invalid(format!(
                "joint {i}: offset {o} outside [0, {})",
                resolution
            )));
        }
        Ok(Self {
            offset,
            sign,
            resolution,
            gripper: None,
        })
    }

    /// Adds a trailing gripper motor. Its ticks map linearly onto `[0, 1]`.
    pub fn with_gripper(mut self, span: GripperSpan) -> Result<Self> {
        if span.open >= self.resolution || span.closed >= self.resolution {
            return Err(Error::invalid("gripper span outside tick range"));
        }
        if wrap_signed(span.closed as i64 - span.open as i64, self.resolution) == 0 {
            return Err(Error::invalid("gripper open and closed positions coincide"));
        }
        self.gripper = Some(span);
        Ok(self)
    }

    pub fn offset(&self) -> &[u32] {
        &self.offset
    }

    pub fn sign(&self) -> &[Sign] {
        &self.sign
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn gripper(&self) -> Option<GripperSpan> {
        self.gripper
    }

    pub fn joint_count(&self) -> usize {
        self.offset.len()
    }

    /// Motors on the leader: joints plus the gripper motor, if calibrated.
    pub fn motor_count(&self) -> usize {
        self.offset.len() + usize::from(self.gripper.is_some())
    }

    pub fn tick_angle(&self) -> f64 {
        TAU / self.resolution as f64
    }

    /// Text form: `resolution N joints M`, then `offset sign` per joint and an
    /// optional `gripper open closed` line.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "resolution {} joints {}\n",
            self.resolution,
            self.joint_count()
        );
        for (o, s) in self.offset.iter().zip(&self.sign) {
            out.push_str(&format!("{o} {s}\n"));
        }
        if let Some(g) = self.gripper {
            out.push_str(&format!("gripper {} {}\n", g.open, g.closed));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, strip_comment(l).trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing `resolution N joints M` header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let (resolution, joints) = match h.as_slice() {
            ["resolution", r, "joints", j] => (
                r.parse::<u32>()
                    .map_err(|e| Error::parse(hline, format!("resolution: {e}")))?,
                j.parse::<usize>()
                    .map_err(|e| Error::parse(hline, format!("joints: {e}")))?,
            ),
            _ => return Err(Error::parse(hline, "expected `resolution N joints M`")),
        };
        let mut offset = Vec::with_capacity(joints);
        let mut sign = Vec::with_capacity(joints);
        let mut gripper = None;
        let mut last_line = hline;
        for (line_no, line) in lines {
            last_line = line_no;
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.as_slice() {
                ["gripper", open, closed] => {
                    let parse = |s: &str| {
                        s.parse::<u32>()
                            .map_err(|e| Error::parse(line_no, format!("gripper: {e}")))
                    };
                    gripper = Some(GripperSpan {
                        open: parse(open)?,
                        closed: parse(closed)?,
                    });
                }
                [o, s] if offset.len() < joints => {
                    offset.push(
                        o.parse::<u32>()
                            .map_err(|e| Error::parse(line_no, format!("offset: {e}")))?,
                    );
                    sign.push(
                        s.parse::<Sign>()
                            .map_err(|e| Error::parse(line_no, e.to_string()))?,
                    );
                }
                _ => return Err(Error::parse(line_no, format!("unexpected line `{line}`"))),
            }
        }
        if offset.len() != joints {
            return Err(Error::parse(
                last_line + 1,
                format!("header declares {joints} joints, found {}", offset.len()),
            ));
        }
        let profile =
            Self::new(offset, sign, resolution).map_err(|e| Error::parse(hline, e.to_string()))?;
        match gripper {
            Some(g) => profile.with_gripper(g),
            None => Ok(profile),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_file(path)?).map_err(|e| e.with_path(path))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Computes per-joint offsets with the leader posed at `reference`.
pub fn calibrate(
    raw: &RawTicks,
    reference: &JointVector,
    sign: &[Sign],
) -> Result<CalibrationProfile> {
    check_dim(raw.len(), reference.len())?;
    check_dim(raw.len(), sign.len())?;
    let res = raw.resolution;
    let offset = raw
        .ticks
        .iter()
        .zip(&reference.q)
        .zip(sign)
        .map(|((&r, &q), s)| {
            let shift = (s.factor() * q * res as f64 / TAU).round() as i64;
            (r as i64 - shift).rem_euclid(res as i64) as u32
        })
        .collect();
    CalibrationProfile::new(offset, sign.to_vec(), res)
}

fn check_ticks(raw: &RawTicks, profile: &CalibrationProfile) -> Result<()> {
    if raw.resolution != profile.resolution {
        return Err(Error::invalid(format!(
            "tick resolution {} does not match calibration resolution {}",
            raw.resolution, profile.resolution
        )));
    }
    check_dim(profile.motor_count(), raw.len())?;
    if let Some((i, t)) = raw
        .ticks
        .iter()
        .enumerate()
        .find(|(_, t)| **t >= raw.resolution)
    {
        return Err(Error::invalid(format!("motor {i}: tick {t} out of range")));
    }
    Ok(())
}

/// Converts leader ticks into follower joint angles.
pub fn leader_to_follower(raw: &RawTicks, profile: &CalibrationProfile) -> Result<JointVector> {
    check_ticks(raw, profile)?;
    let res = profile.resolution;
    let q = (0..profile.joint_count())
        .map(|i| {
            let delta = wrap_signed(raw.ticks[i] as i64 - profile.offset[i] as i64, res);
            profile.sign[i].factor() * profile.tick_angle() * delta as f64
        })
        .collect();
    let gripper = match profile.gripper {
        Some(span) => {
            let t = raw.ticks[profile.joint_count()];
            let travel = wrap_signed(span.closed as i64 - span.open as i64, res) as f64;
            let pos = wrap_signed(t as i64 - span.open as i64, res) as f64;
            (pos / travel).clamp(0.0, 1.0)
        }
        None => 0.0,
    };
    Ok(JointVector { q, gripper })
}

/// Reverse offset compensation: follower joint angles to leader tick targets.
///
/// Rejects angles whose tick difference would wrap, i.e. anything outside
/// the single turn the profile can represent.
pub fn follower_to_leader(q: &JointVector, profile: &CalibrationProfile) -> Result<RawTicks> {
    check_dim(profile.joint_count(), q.len())?;
    q.validate()?;
    let res = profile.resolution as i64;
    let mut ticks = Vec::with_capacity(profile.motor_count());
    for i in 0..profile.joint_count() {
        let delta = (profile.sign[i].factor() * q.q[i] * res as f64 / TAU).round();
        if !(delta > -(res as f64) / 2.0 && delta <= res as f64 / 2.0) {
            return Err(Error::invalid(format!(
                "joint {i}: {} rad is outside the single-turn range of the calibration",
                q.q[i]
            )));
        }
        ticks.push((profile.offset[i] as i64 + delta as i64).rem_euclid(res) as u32);
    }
    if let Some(span) = profile.gripper {
        let travel = wrap_signed(span.closed as i64 - span.open as i64, profile.resolution);
        let pos = (q.gripper * travel as f64).round() as i64;
        ticks.push((span.open as i64 + pos).rem_euclid(res) as u32);
    }
    RawTicks::new(ticks, profile.resolution)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Autonomous,
    Intervention,
    Paused,
    Fault,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Autonomous => "autonomous",
            ControlMode::Intervention => "intervention",
            ControlMode::Paused => "paused",
            ControlMode::Fault => "fault",
        })
    }
}

/// Who produced the action a step carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Expert,
    Policy,
    HumanCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedalEvent {
    pub pressed: bool,
    /// Monotonic seconds.
    pub timestamp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModeEvent {
    Pedal(PedalEvent),
    Fault(String),
    Pause,
    Resume,
    ClearFault,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncDiagnostic {
    /// Pedal pressed while leader and follower disagree by more than the tolerance.
    GuardViolation {
        max_error: f64,
        tolerance: f64,
    },
    /// Event has no effect in the current mode.
    Ignored {
        mode: ControlMode,
        event: String,
    },
    /// Pedal timestamp went backwards.
    StalePedal {
        timestamp: f64,
        last: f64,
    },
    MissingPolicyCommand,
    PolicyCommandIgnored {
        mode: ControlMode,
    },
}

impl fmt::Display for SyncDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SyncDiagnostic::GuardViolation {
                max_error,
                tolerance,
            } => write!(
                f,
                "handover refused: leader/follower error {max_error:.4} rad exceeds {tolerance:.4}"
            ),
            SyncDiagnostic::Ignored { mode, event } => write!(f, "{event} ignored in {mode} mode"),
            SyncDiagnostic::StalePedal { timestamp, last } => {
                write!(f, "pedal event at {timestamp} older than previous {last}")
            }
            SyncDiagnostic::MissingPolicyCommand => {
                f.write_str("no policy command, holding position")
            }
            SyncDiagnostic::PolicyCommandIgnored { mode } => {
                write!(f, "policy command ignored in {mode} mode")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeTransition {
    pub from: ControlMode,
    pub to: ControlMode,
    pub reason: TransitionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionReason {
    PedalPressed,
    PedalReleased,
    Fault,
    Pause,
    Resume,
    FaultCleared,
}

impl fmt::Display for TransitionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransitionReason::PedalPressed => "pedal_pressed",
            TransitionReason::PedalReleased => "pedal_released",
            TransitionReason::Fault => "fault",
            TransitionReason::Pause => "pause",
            TransitionReason::Resume => "resume",
            TransitionReason::FaultCleared => "fault_cleared",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutcome {
    pub transition: Option<ModeTransition>,
    pub diagnostics: Vec<SyncDiagnostic>,
}

/// State shared by both synchronization directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncState {
    mode: ControlMode,
    pub last_leader_q: JointVector,
    pub last_follower_q: JointVector,
    handover_tolerance: f64,
    tick_count: u64,
    last_pedal_time: Option<f64>,
}

impl SyncState {
    pub fn new(
        leader_q: JointVector,
        follower_q: JointVector,
        handover_tolerance: f64,
    ) -> Result<Self> {
        check_dim(leader_q.len(), follower_q.len())?;
        if !(handover_tolerance.is_finite() && handover_tolerance > 0.0) {
            return Err(Error::invalid("handover tolerance must be positive"));
        }
        Ok(Self {
            mode: ControlMode::Autonomous,
            last_leader_q: leader_q,
            last_follower_q: follower_q,
            handover_tolerance,
            tick_count: 0,
            last_pedal_time: None,
        })
    }

    pub fn mode(&self) -> ControlMode {
        self.mode
    }

    pub fn handover_tolerance(&self) -> f64 {
        self.handover_tolerance
    }

    pub fn tick_count(&self) -> u64 {
        self.tick_count
    }

    /// Largest leader/follower disagreement as of the last tick.
    pub fn sync_error(&self) -> f64 {
        self.last_leader_q.max_abs_diff(&self.last_follower_q)
    }
}

fn event_name(event: &ModeEvent) -> String {
    match event {
        ModeEvent::Pedal(p) if p.pressed => "pedal press".into(),
        ModeEvent::Pedal(_) => "pedal release".into(),
        ModeEvent::Fault(_) => "fault".into(),
        ModeEvent::Pause => "pause".into(),
        ModeEvent::Resume => "resume".into(),
        ModeEvent::ClearFault => "clear-fault".into(),
    }
}

/// Advances the mode machine by one event.
///
/// `Intervention` is only entered when every joint of the last leader reading
/// is within the handover tolerance of the last follower reading.
pub fn step_mode(state: &mut SyncState, event: &ModeEvent) -> StepOutcome {
    use ControlMode::*;
    let mut outcome = StepOutcome::default();
    let from = state.mode;
    let ignored = |outcome: &mut StepOutcome| {
        outcome.diagnostics.push(SyncDiagnostic::Ignored {
            mode: from,
            event: event_name(event),
        })
    };
    let next = match event {
        ModeEvent::Pedal(p) => {
            if let Some(last) = state.last_pedal_time {
                if p.timestamp < last {
                    outcome.diagnostics.push(SyncDiagnostic::StalePedal {
                        timestamp: p.timestamp,
                        last,
                    });
                    return outcome;
                }
            }
            state.last_pedal_time = Some(p.timestamp);
            match (from, p.pressed) {
                (Autonomous, true) => {
                    let err = state.sync_error();
                    if err <= state.handover_tolerance {
                        Some((Intervention, TransitionReason::PedalPressed))
                    } else {
                        outcome.diagnostics.push(SyncDiagnostic::GuardViolation {
                            max_error: err,
                            tolerance: state.handover_tolerance,
                        });
                        None
                    }
                }
                (Intervention, false) => Some((Autonomous, TransitionReason::PedalReleased)),
                _ => {
                    ignored(&mut outcome);
                    None
                }
            }
        }
        ModeEvent::Fault(_) => {
            if from == Fault {
                ignored(&mut outcome);
                None
            } else {
                Some((Fault, TransitionReason::Fault))
            }
        }
        ModeEvent::Pause => match from {
            Autonomous | Intervention => Some((Paused, TransitionReason::Pause)),
            _ => {
                ignored(&mut outcome);
                None
            }
        },
        ModeEvent::Resume => match from {
            Paused => Some((Autonomous, TransitionReason::Resume)),
            _ => {
                ignored(&mut outcome);
                None
            }
        },
        ModeEvent::ClearFault => match from {
            Fault => Some((Paused, TransitionReason::FaultCleared)),
            _ => {
                ignored(&mut outcome);
                None
            }
        },
    };
    if let Some((to, reason)) = next {
        state.mode = to;
        outcome.transition = Some(ModeTransition { from, to, reason });
    }
    outcome
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub follower_target: JointVector,
    pub leader_target: RawTicks,
    pub annotation: ActionSource,
    pub diagnostics: Vec<SyncDiagnostic>,
}

/// Moves `cur` toward `tgt` by at most `bound`, landing exactly on `tgt`
/// when it is in reach (`cur + (tgt - cur)` can miss it by an ulp).
pub fn approach(cur: f64, tgt: f64, bound: f64) -> f64 {
    let d = tgt - cur;
    if d.abs() <= bound {
        tgt
    } else {
        cur + d.signum() * bound
    }
}

/// Moves `from` toward `to` by at most one control period of motion.
pub fn rate_limit(
    from: &JointVector,
    to: &JointVector,
    limits: &JointLimits,
    dt: f64,
) -> Result<JointVector> {
    check_dim(limits.len(), from.len())?;
    check_dim(from.len(), to.len())?;
    let step = |cur: f64, tgt: f64, vmax: f64| approach(cur, tgt, vmax * dt);
    Ok(JointVector {
        q: (0..from.len())
            .map(|i| step(from.q[i], to.q[i], limits.v_max[i]))
            .collect(),
        gripper: step(from.gripper, to.gripper, limits.gripper_v_max),
    })
}

/// Calibration plus the follower's safety envelope; advances [`SyncState`].
#[derive(Debug, Clone)]
pub struct SyncEngine {
    pub profile: CalibrationProfile,
    pub limits: JointLimits,
    /// Control period, seconds.
    pub dt: f64,
}

impl SyncEngine {
    pub fn new(profile: CalibrationProfile, limits: JointLimits, dt: f64) -> Result<Self> {
        check_dim(profile.joint_count(), limits.len())?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::invalid("control period must be positive"));
        }
        Ok(Self {
            profile,
            limits,
            dt,
        })
    }

    pub fn joint_count(&self) -> usize {
        self.profile.joint_count()
    }

    /// One control period.
    ///
    /// - `Autonomous`: the follower target is the policy command, limited to
    ///   one period of motion from the current follower position and clamped
    ///   to the joint limits; the leader target mirrors the follower.
    /// - `Intervention`: the follower target is the clamped leader reading and
    ///   the leader is left where the operator holds it.
    /// - `Paused` / `Fault`: both sides hold.
    pub fn tick(
        &self,
        state: &mut SyncState,
        leader_raw: &RawTicks,
        follower_q: &JointVector,
        policy_cmd: Option<&JointVector>,
    ) -> Result<TickOutput> {
        check_dim(self.joint_count(), follower_q.len())?;
        follower_q.validate()?;
        let leader_q = leader_to_follower(leader_raw, &self.profile)?;
        if let Some(cmd) = policy_cmd {
            check_dim(self.joint_count(), cmd.len())?;
            cmd.validate()?;
        }
        let mut diagnostics = Vec::new();
        let (follower_target, leader_target, annotation) = match state.mode {
            ControlMode::Autonomous => {
                let target = match policy_cmd {
                    Some(cmd) => rate_limit(follower_q, cmd, &self.limits, self.dt)?,
                    None => {
                        diagnostics.push(SyncDiagnostic::MissingPolicyCommand);
                        follower_q.clone()
                    }
                };
                (
                    clamp_to_limits(&target, &self.limits)?,
                    follower_to_leader(follower_q, &self.profile)?,
                    ActionSource::Policy,
                )
            }
            ControlMode::Intervention => {
                if policy_cmd.is_some() {
                    diagnostics.push(SyncDiagnostic::PolicyCommandIgnored { mode: state.mode });
                }
                (
                    clamp_to_limits(&leader_q, &self.limits)?,
                    leader_raw.clone(),
                    ActionSource::HumanCorrection,
                )
            }
            ControlMode::Paused | ControlMode::Fault => {
                if policy_cmd.is_some() {
                    diagnostics.push(SyncDiagnostic::PolicyCommandIgnored { mode: state.mode });
                }
                (
                    clamp_to_limits(follower_q, &self.limits)?,
                    leader_raw.clone(),
                    ActionSource::Policy,
                )
            }
        };
        state.last_leader_q = leader_q;
        state.last_follower_q = follower_q.clone();
        state.tick_count += 1;
        Ok(TickOutput {
            follower_target,
            leader_target,
            annotation,
            diagnostics,
        })
    }
}

/// Half a tick, in radians: the quantization bound of the position maps.
pub fn half_tick(resolution: u32) -> f64 {
    PI / resolution as f64
}
