//! The fixed-rate control loop that owns the rig.
//!
//! One thread advances the rig. Clients reach it only through a command
//! queue, and it publishes messages to the fan-out without waiting on anyone.

use bisync_core::episode::{
    write_episode, EpisodeBuilder, Observation, Outcome, Scenario, DEFAULT_MAX_STEPS,
};
use bisync_core::sim::SimRig;
use bisync_core::sync::{
    leader_to_follower, step_mode, ActionSource, ControlMode, ModeEvent, PedalEvent, SyncDiagnostic,
};
use bisync_core::{Error, JointVector, Result};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::roles::Request;
use crate::schema::{Body, EpisodeEventKind, ErrorCode, State};

pub type ClientId = u64;

/// Input to the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Request {
        client: ClientId,
        seq: u64,
        request: Request,
    },
    Disconnected {
        client: ClientId,
    },
}

/// Output of the loop.
#[derive(Debug, Clone, PartialEq)]
pub enum Published {
    Broadcast(Body),
    To(ClientId, Body),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub rate_hz: f64,
    pub task: String,
    pub max_steps: usize,
    /// Finished episodes are written here when set.
    pub record_dir: Option<PathBuf>,
    pub first_episode_id: u64,
}

impl LoopConfig {
    pub fn new(task: impl Into<String>, rate_hz: f64) -> Self {
        Self {
            rate_hz,
            task: task.into(),
            max_steps: DEFAULT_MAX_STEPS,
            record_dir: None,
            first_episode_id: 0,
        }
    }
}

struct Recording {
    id: u64,
    builder: EpisodeBuilder,
    /// The newest step is held back until the next tick so that an operator
    /// ending the episode with `success` can mark it as the rewarded one.
    pending: Option<(Observation, JointVector, ActionSource, ControlMode)>,
}

pub struct ControlLoop {
    rig: SimRig,
    cfg: LoopConfig,
    tick: u64,
    policy_cmd: Option<JointVector>,
    hand: Option<JointVector>,
    pedal_holder: Option<ClientId>,
    recording: Option<Recording>,
    next_episode_id: u64,
    last_target: JointVector,
}

impl ControlLoop {
    /// `rig` must already run at `1 / cfg.rate_hz`.
    pub fn new(rig: SimRig, cfg: LoopConfig) -> Result<Self> {
        if !(cfg.rate_hz.is_finite() && cfg.rate_hz > 0.0) {
            return Err(Error::invalid("rate_hz must be positive"));
        }
        if ((1.0 / cfg.rate_hz) - rig.engine.dt).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "rig period {} s does not match {} Hz",
                rig.engine.dt, cfg.rate_hz
            )));
        }
        let last_target = rig.follower.arm.q.clone();
        Ok(Self {
            next_episode_id: cfg.first_episode_id,
            rig,
            cfg,
            tick: 0,
            policy_cmd: None,
            hand: None,
            pedal_holder: None,
            recording: None,
            last_target,
        })
    }

    pub fn rig(&self) -> &SimRig {
        &self.rig
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.cfg.rate_hz
    }

    pub fn snapshot(&self) -> State {
        let leader = self
            .rig
            .leader
            .ticks()
            .and_then(|raw| leader_to_follower(&raw, &self.rig.engine.profile));
        let follower = &self.rig.follower.arm.q;
        State {
            t: self.time(),
            mode: self.rig.mode(),
            leader_q: leader.map(|l| l.q).unwrap_or_default(),
            follower_q: follower.q.clone(),
            follower_target: self.last_target.q.clone(),
            gripper: follower.gripper,
            task: self.cfg.task.clone(),
            episode_id: self.recording.as_ref().map(Recording::builder_id),
        }
    }

    /// One control period: apply `commands` in order, tick the rig, record,
    /// and publish the state snapshot plus any replies and events.
    pub fn step(&mut self, commands: Vec<Command>, out: &mut Vec<Published>) -> Result<()> {
        let now = self.time();
        let mut actions = Vec::new();
        let mut leads = Vec::new();
        for cmd in commands {
            match cmd {
                Command::Disconnected { client } => {
                    if self.pedal_holder == Some(client) {
                        self.pedal_holder = None;
                        if self.rig.mode() == ControlMode::Intervention {
                            self.apply_mode(&pedal(false, now), out);
                        }
                    }
                }
                Command::Request {
                    client,
                    seq,
                    request,
                } => match request {
                    Request::Pedal(pressed) => {
                        let changed = self.apply_mode_from(client, seq, &pedal(pressed, now), out);
                        if changed && pressed {
                            self.pedal_holder = Some(client);
                        }
                        out.push(ack(client, seq, changed));
                    }
                    Request::PolicyAction(q) => actions.push((client, seq, q)),
                    Request::LeaderCmd(q) => leads.push((client, seq, q)),
                    Request::EpisodeStart => self.start_episode(client, seq, out),
                    Request::EpisodeEnd(outcome) => self.end_episode(client, seq, outcome, out),
                },
            }
        }
        let mode = self.rig.mode();
        let joints = self.rig.engine.joint_count();
        for (client, seq, q) in actions {
            if q.len() != joints {
                out.push(dim_error(client, seq, joints, q.len()));
                continue;
            }
            let applied = mode == ControlMode::Autonomous;
            if applied {
                self.policy_cmd = Some(q);
            }
            out.push(ack(client, seq, applied));
        }
        for (client, seq, q) in leads {
            if q.len() != joints {
                out.push(dim_error(client, seq, joints, q.len()));
                continue;
            }
            let applied = mode == ControlMode::Intervention;
            if applied {
                self.hand = Some(q);
            }
            out.push(ack(client, seq, applied));
        }

        let step = match self
            .rig
            .period(&[], self.policy_cmd.as_ref(), self.hand.as_ref())
        {
            Ok(s) => s,
            Err(e) => {
                self.apply_mode(&ModeEvent::Fault(e.to_string()), out);
                out.push(Published::Broadcast(Body::error(
                    ErrorCode::Internal,
                    e.to_string(),
                )));
                self.tick += 1;
                out.push(Published::Broadcast(Body::State(self.snapshot())));
                return Err(e);
            }
        };
        self.last_target = step.output.follower_target.clone();
        if matches!(
            step.mode,
            ControlMode::Autonomous | ControlMode::Intervention
        ) {
            let source = match step.mode {
                ControlMode::Intervention => ActionSource::HumanCorrection,
                _ => ActionSource::Policy,
            };
            let obs = Observation::new(&step.follower_q, Vec::new());
            self.record(
                (obs, step.output.follower_target.clone(), source, step.mode),
                out,
            )?;
        }
        self.tick += 1;
        out.push(Published::Broadcast(Body::State(self.snapshot())));
        Ok(())
    }

    /// Runs `event` through the mode machine and broadcasts any transition.
    fn apply_mode(&mut self, event: &ModeEvent, out: &mut Vec<Published>) -> Vec<SyncDiagnostic> {
        let res = step_mode(&mut self.rig.state, event);
        if let Some(tr) = res.transition {
            if tr.to == ControlMode::Intervention {
                // The policy's last command predates the override.
                self.policy_cmd = None;
            }
            if tr.from == ControlMode::Intervention {
                self.hand = None;
                self.pedal_holder = None;
            }
            out.push(Published::Broadcast(Body::ModeChanged {
                from: tr.from,
                to: tr.to,
                reason: tr.reason,
            }));
        }
        res.diagnostics
    }

    /// Like [`Self::apply_mode`] for a client's event; refusals go back to
    /// that client. Returns whether the mode changed.
    fn apply_mode_from(
        &mut self,
        client: ClientId,
        seq: u64,
        event: &ModeEvent,
        out: &mut Vec<Published>,
    ) -> bool {
        let before = self.rig.mode();
        for d in self.apply_mode(event, out) {
            let code = match d {
                SyncDiagnostic::GuardViolation { .. } => ErrorCode::HandoverRefused,
                _ => continue,
            };
            out.push(Published::To(
                client,
                Body::error(code, format!("seq {seq}: {d}")),
            ));
        }
        self.rig.mode() != before
    }

    fn start_episode(&mut self, client: ClientId, seq: u64, out: &mut Vec<Published>) {
        if let Some(r) = &self.recording {
            let msg = format!("seq {seq}: episode {} is already recording", r.builder_id());
            out.push(Published::To(client, Body::error(ErrorCode::Episode, msg)));
            return;
        }
        let id = self.next_episode_id;
        self.next_episode_id += 1;
        let builder = EpisodeBuilder::new(
            id,
            &self.cfg.task,
            self.rig.engine.joint_count(),
            self.cfg.rate_hz,
            Scenario::InDistribution,
        )
        .with_max_steps(self.cfg.max_steps);
        self.recording = Some(Recording {
            id,
            builder,
            pending: None,
        });
        out.push(ack(client, seq, true));
        out.push(Published::Broadcast(Body::EpisodeEvent {
            event: EpisodeEventKind::Start,
            outcome: None,
            id: Some(id),
        }));
    }

    fn end_episode(
        &mut self,
        client: ClientId,
        seq: u64,
        outcome: Option<Outcome>,
        out: &mut Vec<Published>,
    ) {
        let Some(mut rec) = self.recording.take() else {
            let msg = format!("seq {seq}: no episode is recording");
            out.push(Published::To(client, Body::error(ErrorCode::Episode, msg)));
            return;
        };
        let success = outcome == Some(Outcome::Success);
        let result = rec.flush(success).and_then(|()| {
            let outcome = match outcome {
                Some(Outcome::Success) => Outcome::Success,
                _ => rec.builder.implied_outcome(),
            };
            self.finish(rec.builder, outcome, out)
        });
        match result {
            Ok(()) => out.push(ack(client, seq, true)),
            Err(e) => {
                let msg = format!("seq {seq}: {e}");
                out.push(Published::To(client, Body::error(ErrorCode::Episode, msg)));
            }
        }
    }

    fn record(
        &mut self,
        step: (Observation, JointVector, ActionSource, ControlMode),
        out: &mut Vec<Published>,
    ) -> Result<()> {
        let Some(rec) = self.recording.as_mut() else {
            return Ok(());
        };
        rec.flush(false)?;
        rec.pending = Some(step);
        if rec.builder.len() + 1 >= rec.builder.max_steps() {
            let mut rec = self.recording.take().expect("recording");
            rec.flush(false)?;
            return self.finish(rec.builder, Outcome::Truncated, out);
        }
        Ok(())
    }

    fn finish(
        &mut self,
        mut builder: EpisodeBuilder,
        outcome: Outcome,
        out: &mut Vec<Published>,
    ) -> Result<()> {
        let episode = builder.finalize(outcome)?;
        if let Some(dir) = &self.cfg.record_dir {
            write_episode(&dir.join(episode.file_name()), &episode)?;
        }
        out.push(Published::Broadcast(Body::EpisodeEvent {
            event: EpisodeEventKind::End,
            outcome: Some(outcome),
            id: Some(episode.id),
        }));
        Ok(())
    }
}

impl Recording {
    fn builder_id(&self) -> u64 {
        self.id
    }

    fn flush(&mut self, rewarded: bool) -> Result<()> {
        match self.pending.take() {
            Some((obs, action, source, mode)) => {
                self.builder
                    .push(obs, action, source, mode, u8::from(rewarded))
            }
            None if rewarded => Err(Error::invalid("no recorded step to mark as the success")),
            None => Ok(()),
        }
    }
}

fn pedal(pressed: bool, timestamp: f64) -> ModeEvent {
    ModeEvent::Pedal(PedalEvent { pressed, timestamp })
}

fn ack(client: ClientId, ref_seq: u64, applied: bool) -> Published {
    Published::To(client, Body::Ack { ref_seq, applied })
}

fn dim_error(client: ClientId, seq: u64, expected: usize, got: usize) -> Published {
    let msg = format!("seq {seq}: expected {expected} joints, got {got}");
    Published::To(client, Body::error(ErrorCode::Dimension, msg))
}

/// Timing of a loop run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopStats {
    pub ticks: u64,
    /// Ticks that started later than 20% of a period after their deadline.
    pub stalls: u64,
    /// Deadlines skipped because the loop fell more than a period behind.
    pub skipped: u64,
    pub max_lateness: Duration,
    /// Time spent in [`ControlLoop::step`], excluding the hand-off.
    pub mean_tick: Duration,
    pub max_tick: Duration,
    pub errors: u64,
}

pub struct LoopHandle {
    pub commands: Sender<Command>,
    stop: Arc<AtomicBool>,
    join: JoinHandle<LoopStats>,
}

impl LoopHandle {
    pub fn stop(self) -> LoopStats {
        self.stop.store(true, Ordering::SeqCst);
        self.join.join().expect("control loop thread panicked")
    }
}

/// Runs `ctl` on its own thread against absolute deadlines `start + k * period`.
/// `publish` must never block; it receives each tick's output.
pub fn spawn<F>(mut ctl: ControlLoop, mut publish: F) -> LoopHandle
where
    F: FnMut(Vec<Published>) + Send + 'static,
{
    let (tx, rx) = std::sync::mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let join = std::thread::Builder::new()
        .name("control-loop".into())
        .spawn(move || run(&mut ctl, &rx, &flag, &mut publish))
        .expect("spawn control loop thread");
    LoopHandle {
        commands: tx,
        stop,
        join,
    }
}

fn run<F: FnMut(Vec<Published>)>(
    ctl: &mut ControlLoop,
    rx: &Receiver<Command>,
    stop: &AtomicBool,
    publish: &mut F,
) -> LoopStats {
    let period = Duration::from_secs_f64(1.0 / ctl.cfg.rate_hz);
    let stall_bound = period / 5;
    let start = Instant::now();
    let mut stats = LoopStats::default();
    let mut busy = Duration::ZERO;
    let mut k: u32 = 0;
    while !stop.load(Ordering::SeqCst) {
        let deadline = start + period * k;
        let now = Instant::now();
        if now < deadline {
            std::thread::sleep(deadline - now);
        }
        let began = Instant::now();
        let late = began.saturating_duration_since(deadline);
        stats.max_lateness = stats.max_lateness.max(late);
        if late > stall_bound {
            stats.stalls += 1;
        }
        let mut commands = Vec::new();
        while let Ok(c) = rx.try_recv() {
            commands.push(c);
        }
        let mut out = Vec::new();
        if ctl.step(commands, &mut out).is_err() {
            stats.errors += 1;
        }
        let took = began.elapsed();
        publish(out);
        busy += took;
        stats.max_tick = stats.max_tick.max(took);
        stats.ticks += 1;
        k += 1;
        let behind = start.elapsed().saturating_sub(period * k);
        if behind > period {
            let skip = (behind.as_secs_f64() / period.as_secs_f64()) as u32;
            stats.skipped += skip as u64;
            k += skip;
        }
    }
    if stats.ticks > 0 {
        stats.mean_tick = busy / stats.ticks as u32;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use bisync_core::episode::read_episode;
    use bisync_core::sync::TransitionReason;
    use bisync_harness::task::ReachTask;

    fn ctl(task: &str, rate: f64) -> ControlLoop {
        let t = ReachTask::builtin(task).unwrap();
        let rig = t.build_rig_with_dt(1.0 / rate).unwrap();
        ControlLoop::new(rig, LoopConfig::new(task, rate)).unwrap()
    }

    fn req(client: ClientId, seq: u64, request: Request) -> Command {
        Command::Request {
            client,
            seq,
            request,
        }
    }

    fn q(v: &[f64]) -> JointVector {
        JointVector::from_q(v.to_vec()).unwrap()
    }

    fn acks(out: &[Published], client: ClientId) -> Vec<(u64, bool)> {
        out.iter()
            .filter_map(|p| match p {
                Published::To(c, Body::Ack { ref_seq, applied }) if *c == client => {
                    Some((*ref_seq, *applied))
                }
                _ => None,
            })
            .collect()
    }

    fn transitions(out: &[Published]) -> Vec<(ControlMode, ControlMode, TransitionReason)> {
        out.iter()
            .filter_map(|p| match p {
                Published::Broadcast(Body::ModeChanged { from, to, reason }) => {
                    Some((*from, *to, *reason))
                }
                _ => None,
            })
            .collect()
    }

    #[test]
    fn every_tick_publishes_a_state() {
        let mut c = ctl("reach", 10.0);
        for k in 1..=3 {
            let mut out = Vec::new();
            c.step(vec![], &mut out).unwrap();
            match out.last() {
                Some(Published::Broadcast(Body::State(s))) => {
                    assert!((s.t - k as f64 * 0.1).abs() < 1e-12);
                    assert_eq!(s.mode, ControlMode::Autonomous);
                    assert_eq!(s.leader_q.len(), 2);
                }
                other => panic!("{other:?}"),
            }
        }
        assert!(ControlLoop::new(
            ReachTask::reach().unwrap().build_rig().unwrap(),
            LoopConfig::new("reach", 10.0)
        )
        .is_err());
    }

    #[test]
    fn policy_action_applies_only_in_autonomous() {
        let mut c = ctl("reach1", 10.0);
        let mut out = Vec::new();
        c.step(vec![req(1, 1, Request::PolicyAction(q(&[1.0])))], &mut out)
            .unwrap();
        assert_eq!(acks(&out, 1), vec![(1, true)]);
        assert!(c.rig().follower.arm.q.q[0] < std::f64::consts::FRAC_PI_2);

        let mut out = Vec::new();
        let cmds = vec![req(2, 1, Request::Pedal(true))];
        // Let the leader settle on the mirror first so the handover guard passes.
        c.step(
            vec![req(
                1,
                2,
                Request::PolicyAction(c.rig().follower.arm.q.clone()),
            )],
            &mut out,
        )
        .unwrap();
        c.step(vec![], &mut out).unwrap();
        let mut out = Vec::new();
        c.step(cmds, &mut out).unwrap();
        assert_eq!(c.rig().mode(), ControlMode::Intervention);
        let held = c.rig().follower.arm.q.clone();
        let mut out = Vec::new();
        c.step(vec![req(1, 3, Request::PolicyAction(q(&[-0.5])))], &mut out)
            .unwrap();
        assert_eq!(acks(&out, 1), vec![(3, false)]);
        assert_eq!(c.rig().follower.arm.q, held);
    }

    #[test]
    fn leader_cmd_becomes_the_leader_target_that_tick() {
        let mut c = ctl("reach", 10.0);
        let mut out = Vec::new();
        c.step(vec![req(5, 1, Request::Pedal(true))], &mut out)
            .unwrap();
        assert_eq!(
            transitions(&out),
            vec![(
                ControlMode::Autonomous,
                ControlMode::Intervention,
                TransitionReason::PedalPressed
            )]
        );
        assert_eq!(acks(&out, 5), vec![(1, true)]);
        let target = q(&[1.2, 0.3]);
        let mut out = Vec::new();
        c.step(
            vec![req(5, 2, Request::LeaderCmd(target.clone()))],
            &mut out,
        )
        .unwrap();
        assert_eq!(acks(&out, 5), vec![(2, true)]);
        assert_eq!(c.rig().leader.arm.target, target);
        // In autonomous mode the same command is acknowledged but has no effect.
        c.step(vec![req(5, 3, Request::Pedal(false))], &mut out)
            .unwrap();
        let mut out = Vec::new();
        c.step(
            vec![req(5, 4, Request::LeaderCmd(q(&[0.0, 0.0])))],
            &mut out,
        )
        .unwrap();
        assert_eq!(acks(&out, 5), vec![(4, false)]);
        assert_ne!(c.rig().leader.arm.target, q(&[0.0, 0.0]));
    }

    #[test]
    fn operator_disconnect_releases_the_pedal() {
        let mut c = ctl("reach", 10.0);
        let mut out = Vec::new();
        c.step(vec![req(7, 1, Request::Pedal(true))], &mut out)
            .unwrap();
        assert_eq!(c.rig().mode(), ControlMode::Intervention);
        let mut out = Vec::new();
        c.step(vec![Command::Disconnected { client: 8 }], &mut out)
            .unwrap();
        assert_eq!(c.rig().mode(), ControlMode::Intervention);
        c.step(vec![Command::Disconnected { client: 7 }], &mut out)
            .unwrap();
        assert_eq!(c.rig().mode(), ControlMode::Autonomous);
        assert_eq!(
            transitions(&out),
            vec![(
                ControlMode::Intervention,
                ControlMode::Autonomous,
                TransitionReason::PedalReleased
            )]
        );
    }

    #[test]
    fn unguarded_press_is_refused_with_an_error() {
        let mut c = ctl("reach1", 10.0);
        let mut out = Vec::new();
        c.step(vec![req(1, 1, Request::PolicyAction(q(&[-0.5])))], &mut out)
            .unwrap();
        c.step(vec![], &mut out).unwrap();
        let mut out = Vec::new();
        c.step(vec![req(2, 1, Request::Pedal(true))], &mut out)
            .unwrap();
        assert_eq!(c.rig().mode(), ControlMode::Autonomous);
        assert_eq!(acks(&out, 2), vec![(1, false)]);
        assert!(out.iter().any(|p| matches!(
            p,
            Published::To(
                2,
                Body::Error {
                    code: ErrorCode::HandoverRefused,
                    ..
                }
            )
        )));
    }

    #[test]
    fn wrong_dimension_is_reported() {
        let mut c = ctl("reach", 10.0);
        let mut out = Vec::new();
        c.step(vec![req(1, 9, Request::PolicyAction(q(&[0.1])))], &mut out)
            .unwrap();
        assert!(out.iter().any(|p| matches!(
            p,
            Published::To(
                1,
                Body::Error {
                    code: ErrorCode::Dimension,
                    ..
                }
            )
        )));
    }

    #[test]
    fn records_episodes_with_operator_success() {
        let dir = tempfile::tempdir().unwrap();
        let t = ReachTask::reach().unwrap();
        let mut cfg = LoopConfig::new("reach", 10.0);
        cfg.record_dir = Some(dir.path().to_path_buf());
        cfg.first_episode_id = 40;
        cfg.max_steps = 6;
        let mut c = ControlLoop::new(t.build_rig_with_dt(0.1).unwrap(), cfg).unwrap();
        let mut out = Vec::new();
        c.step(vec![req(1, 1, Request::EpisodeStart)], &mut out)
            .unwrap();
        assert!(out.contains(&Published::Broadcast(Body::EpisodeEvent {
            event: EpisodeEventKind::Start,
            outcome: None,
            id: Some(40),
        })));
        c.step(vec![req(1, 2, Request::Pedal(true))], &mut out)
            .unwrap();
        c.step(vec![req(1, 3, Request::Pedal(false))], &mut out)
            .unwrap();
        let mut out = Vec::new();
        c.step(
            vec![req(1, 4, Request::EpisodeEnd(Some(Outcome::Success)))],
            &mut out,
        )
        .unwrap();
        assert_eq!(acks(&out, 1), vec![(4, true)]);
        let ep = read_episode(&dir.path().join("episode_000040.episode.jsonl"))
            .or_else(|_| {
                let f = std::fs::read_dir(dir.path())
                    .unwrap()
                    .next()
                    .unwrap()
                    .unwrap();
                read_episode(&f.path())
            })
            .unwrap();
        assert_eq!(ep.outcome, Outcome::Success);
        assert_eq!(ep.len(), 3);
        assert_eq!(ep.steps.last().unwrap().reward, 1);
        assert_eq!(ep.steps[1].source, ActionSource::HumanCorrection);

        // Second episode runs into the cap.
        let mut out = Vec::new();
        c.step(vec![req(1, 5, Request::EpisodeStart)], &mut out)
            .unwrap();
        let mut ended = None;
        for _ in 0..10 {
            let mut out = Vec::new();
            c.step(vec![], &mut out).unwrap();
            for p in out {
                if let Published::Broadcast(Body::EpisodeEvent {
                    event: EpisodeEventKind::End,
                    outcome,
                    id,
                }) = p
                {
                    ended = Some((outcome, id));
                }
            }
        }
        assert_eq!(ended, Some((Some(Outcome::Truncated), Some(41))));
        let mut out = Vec::new();
        c.step(vec![req(1, 6, Request::EpisodeEnd(None))], &mut out)
            .unwrap();
        assert!(out.iter().any(|p| matches!(
            p,
            Published::To(
                1,
                Body::Error {
                    code: ErrorCode::Episode,
                    ..
                }
            )
        )));
    }
}
