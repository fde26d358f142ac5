//! Policies: scripted experts, a frozen hold policy and lookup behavior cloning.

use bisync_core::episode::{EpisodeRecord, Observation};
use bisync_core::sync::{approach, ActionSource};
use bisync_core::{Error, JointVector, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::task::ReachTask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Scripted,
    LookupBc,
    TabularQ,
}

pub trait Policy {
    fn act(&mut self, obs: &Observation) -> Result<JointVector>;
    fn kind(&self) -> PolicyKind;
}

/// Holds the current joint position forever.
#[derive(Debug, Clone, Default)]
pub struct HoldPolicy;

impl Policy for HoldPolicy {
    fn act(&mut self, obs: &Observation) -> Result<JointVector> {
        Ok(obs.joints())
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::Scripted
    }
}

/// Scripted reach expert.
///
/// With `step = None` it commands the IK solution directly and lets the rate
/// limiter pace the motion. With `step = Some(s)` it moves at most `s` rad
/// per joint per step and, with probability `pause`, holds still for a step
/// (a hesitant human demonstrator).
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    task: ReachTask,
    step: Option<f64>,
    pause: f64,
    rng: ChaCha8Rng,
}

impl ScriptedExpert {
    pub fn new(task: &ReachTask) -> Self {
        Self {
            task: task.clone(),
            step: None,
            pause: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn hesitant(task: &ReachTask, step: f64, pause: f64, seed: u64) -> Result<Self> {
        if !(step > 0.0 && (0.0..1.0).contains(&pause)) {
            return Err(Error::invalid(format!(
                "expert step must be > 0 and pause in [0,1), got {step} / {pause}"
            )));
        }
        Ok(Self {
            task: task.clone(),
            step: Some(step),
            pause,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Policy for ScriptedExpert {
    fn act(&mut self, obs: &Observation) -> Result<JointVector> {
        let target = self.task.ik(ReachTask::goal_of(obs)?);
        let Some(step) = self.step else {
            return Ok(target);
        };
        if self.pause > 0.0 && self.rng.gen_bool(self.pause) {
            return Ok(obs.joints());
        }
        let q = obs
            .q
            .iter()
            .zip(&target.q)
            .map(|(c, t)| approach(*c, *t, step))
            .collect();
        JointVector::from_q(q)
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::Scripted
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcConfig {
    pub joint_weight: f64,
    pub extra_weight: f64,
    /// Step sources that are kept for training.
    pub sources: Vec<ActionSource>,
}

impl BcConfig {
    pub fn for_task(task: &ReachTask) -> Self {
        Self {
            joint_weight: 1.0,
            extra_weight: task.goal_weight,
            sources: vec![ActionSource::Expert, ActionSource::HumanCorrection],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    key: Vec<f64>,
    action: JointVector,
}

/// Nearest-neighbour policy over stored (observation, action) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupBc {
    entries: Vec<Entry>,
    joint_weight: f64,
    extra_weight: f64,
}

/// Builds a lookup policy. Episodes are ordered by id, steps by `t`, so on
/// equal distances the lowest episode id (then earliest step) wins.
pub fn train_lookup_bc(episodes: &[EpisodeRecord], config: &BcConfig) -> Result<LookupBc> {
    if !(config.joint_weight >= 0.0 && config.extra_weight >= 0.0) {
        return Err(Error::invalid("lookup weights must be non-negative"));
    }
    let mut order: Vec<&EpisodeRecord> = episodes.iter().collect();
    order.sort_by_key(|e| e.id);
    let mut bc = LookupBc {
        entries: Vec::new(),
        joint_weight: config.joint_weight,
        extra_weight: config.extra_weight,
    };
    for ep in order {
        for step in ep
            .steps
            .iter()
            .filter(|s| config.sources.contains(&s.source))
        {
            let key = bc.key(&step.obs);
            if let Some(first) = bc.entries.first() {
                if first.key.len() != key.len() || first.action.len() != step.action.len() {
                    return Err(Error::invalid(format!(
                        "episode {} does not match the dataset's dimensions",
                        ep.id
                    )));
                }
            }
            bc.entries.push(Entry {
                key,
                action: step.action.clone(),
            });
        }
    }
    if bc.entries.is_empty() {
        return Err(Error::invalid(
            "empty dataset: no steps with the selected sources",
        ));
    }
    Ok(bc)
}

impl LookupBc {
    fn key(&self, obs: &Observation) -> Vec<f64> {
        obs.q
            .iter()
            .map(|q| q * self.joint_weight)
            .chain(obs.extras.iter().map(|x| x * self.extra_weight))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index of the nearest stored entry.
    pub fn nearest(&self, obs: &Observation) -> Result<usize> {
        let key = self.key(obs);
        if key.len() != self.entries[0].key.len() {
            return Err(Error::Dimension {
                expected: self.entries[0].key.len(),
                got: key.len(),
            });
        }
        let mut best = (f64::INFINITY, 0);
        for (i, e) in self.entries.iter().enumerate() {
            let d: f64 = e.key.iter().zip(&key).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        Ok(best.1)
    }

    pub fn action(&self, index: usize) -> &JointVector {
        &self.entries[index].action
    }

    pub fn lookup(&self, obs: &Observation) -> Result<JointVector> {
        Ok(self.entries[self.nearest(obs)?].action.clone())
    }
}

impl Policy for LookupBc {
    fn act(&mut self, obs: &Observation) -> Result<JointVector> {
        self.lookup(obs)
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::LookupBc
    }
}
