//! The 10 Hz environment loop on top of the sync rig, and seeded evaluation.

use bisync_core::episode::{EpisodeBuilder, EpisodeRecord, Outcome, Scenario, Step};
use bisync_core::kinematics::clamp_to_limits;
use bisync_core::sim::RigStep;
use bisync_core::sync::{ActionSource, ControlMode, ModeEvent, PedalEvent};
use bisync_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::intervene::Intervenor;
use crate::policy::Policy;
use crate::task::{Goal, ReachTask, SUCCESS_LOGIT};

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSpec {
    pub id: u64,
    pub scenario: Scenario,
    pub goal: Goal,
    /// Tag for steps the policy takes in `Autonomous` (Expert for demos).
    pub autonomous_source: ActionSource,
}

impl EpisodeSpec {
    pub fn new(id: u64, scenario: Scenario, goal: Goal) -> Self {
        Self {
            id,
            scenario,
            goal,
            autonomous_source: ActionSource::Policy,
        }
    }

    pub fn expert(mut self) -> Self {
        self.autonomous_source = ActionSource::Expert;
        self
    }
}

/// Sees every recorded step with the last sync period of that step.
pub trait Recorder {
    fn record(&mut self, step: &Step, last_period: &RigStep);
}

impl Recorder for () {
    fn record(&mut self, _: &Step, _: &RigStep) {}
}

impl<F: FnMut(&Step, &RigStep)> Recorder for F {
    fn record(&mut self, step: &Step, last_period: &RigStep) {
        self(step, last_period)
    }
}

/// Runs one episode through a fresh rig.
///
/// Each environment step reads the follower, asks the intervenor whether the
/// pedal is held, queries the policy, then runs `decimation` sync periods.
/// Pedal events go in with the first period. In `Intervention` the recorded
/// action is the follower target of the last period, which is the leader
/// reading mapped through the calibration.
pub fn run_episode(
    task: &ReachTask,
    policy: &mut dyn Policy,
    mut intervenor: Option<&mut dyn Intervenor>,
    spec: &EpisodeSpec,
    recorder: &mut dyn Recorder,
) -> Result<EpisodeRecord> {
    if spec.autonomous_source == ActionSource::HumanCorrection {
        return Err(Error::invalid(
            "autonomous steps cannot be tagged human_correction",
        ));
    }
    let mut rig = task.build_rig()?;
    if let Some(iv) = intervenor.as_deref_mut() {
        iv.reset();
    }
    let mut builder = EpisodeBuilder::new(
        spec.id,
        &task.name,
        task.joints(),
        task.rate_hz,
        spec.scenario,
    )
    .with_max_steps(task.max_steps);
    for t in 0..task.max_steps {
        let goal = spec.goal.at(t);
        let obs = task.observe(&rig.follower.arm.q, goal);
        let hand = match intervenor.as_deref_mut() {
            Some(iv) => iv.observe(task, t, &obs)?,
            None => None,
        };
        let mode = rig.mode();
        let now = t as f64 * task.env_dt();
        let mut events = Vec::new();
        if hand.is_some() && mode == ControlMode::Autonomous {
            events.push(ModeEvent::Pedal(PedalEvent {
                pressed: true,
                timestamp: now,
            }));
        } else if hand.is_none() && mode == ControlMode::Intervention {
            events.push(ModeEvent::Pedal(PedalEvent {
                pressed: false,
                timestamp: now,
            }));
        }
        let cmd = if hand.is_some() && mode == ControlMode::Intervention {
            None
        } else {
            let c = policy.act(&obs)?;
            if c.len() != task.joints() {
                return Err(Error::Dimension {
                    expected: task.joints(),
                    got: c.len(),
                });
            }
            Some(c)
        };
        let mut last = None;
        for k in 0..task.decimation {
            let ev: &[ModeEvent] = if k == 0 { &events } else { &[] };
            last = Some(rig.period(ev, cmd.as_ref(), hand.as_ref())?);
        }
        let last = last.expect("decimation > 0");
        let (action, source) = match last.mode {
            ControlMode::Intervention => (
                last.output.follower_target.clone(),
                ActionSource::HumanCorrection,
            ),
            _ => {
                let held = obs.joints();
                let c = cmd.as_ref().unwrap_or(&held);
                (
                    clamp_to_limits(c, &task.follower.limits)?,
                    spec.autonomous_source,
                )
            }
        };
        let after = task.observe(&rig.follower.arm.q, goal);
        let reward = u8::from(task.reward_logit(&after)? > SUCCESS_LOGIT);
        builder.push(obs, action, source, last.mode, reward)?;
        recorder.record(builder.steps().last().expect("just pushed"), &last);
        if reward == 1 {
            return builder.finalize(Outcome::Success);
        }
    }
    let outcome = builder.implied_outcome();
    builder.finalize(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rollouts: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_length: f64,
    pub lengths: Vec<usize>,
    pub outcomes: Vec<Outcome>,
}

/// `n` seeded rollouts without intervention. Goals come from a ChaCha stream
/// seeded with `seed`, so two policies evaluated with the same seed face the
/// same placements.
pub fn evaluate(
    policy: &mut dyn Policy,
    task: &ReachTask,
    scenario: Scenario,
    n: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n == 0 {
        return Err(Error::invalid("evaluation needs at least one rollout"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lengths = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for i in 0..n {
        let goal = task.sample_goal(scenario, &mut rng);
        let ep = run_episode(
            task,
            policy,
            None,
            &EpisodeSpec::new(i as u64, scenario, goal),
            &mut (),
        )?;
        lengths.push(ep.len());
        outcomes.push(ep.outcome);
    }
    let successes = outcomes.iter().filter(|o| **o == Outcome::Success).count();
    Ok(EvalReport {
        rollouts: n,
        successes,
        success_rate: successes as f64 / n as f64,
        mean_length: lengths.iter().sum::<usize>() as f64 / n as f64,
        lengths,
        outcomes,
    })
}
