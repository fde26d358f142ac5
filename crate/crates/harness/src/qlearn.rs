//! Tabular Q-learning with human corrections and symmetric replay.

use bisync_core::episode::{intervention_stats, EpisodeRecord, Observation, Outcome, Scenario};
use bisync_core::kinematics::clamp_to_limits;
use bisync_core::sync::ActionSource;
use bisync_core::{Error, JointVector, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::intervene::StallIntervenor;
use crate::policy::{train_lookup_bc, BcConfig, LookupBc, Policy, PolicyKind};
use crate::replay::ReplayBuffer;
use crate::rollout::{run_episode, EpisodeSpec};
use crate::task::ReachTask;

const MAX_TABLE: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct QConfig {
    pub bins: usize,
    /// Action deltas per joint, odd so that "hold" is one of them.
    pub deltas: usize,
    /// Feature range binned uniformly; values outside land in the edge bins.
    pub range: (f64, f64),
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    /// Q updates (batches) per environment step collected.
    pub updates_per_step: usize,
    pub online_episodes: usize,
    pub capacity: usize,
    pub stall_k: usize,
    /// Stored transitions an action needs in a cell before greedy choice and
    /// bootstrap targets consider it.
    pub min_support: u32,
    pub scenario: Scenario,
    pub seed: u64,
}

impl QConfig {
    pub fn for_task(task: &ReachTask) -> Self {
        Self {
            bins: 17,
            deltas: 5,
            range: task.feature_range,
            alpha: 0.02,
            gamma: 0.6,
            epsilon: 0.1,
            batch_size: 32,
            updates_per_step: 4,
            online_episodes: 50,
            capacity: 100_000,
            stall_k: 15,
            min_support: 3,
            scenario: Scenario::InDistribution,
            seed: 0,
        }
    }
}

/// Uniform grid over task features plus per-joint action deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    joints: usize,
    bins: usize,
    deltas: usize,
    lo: f64,
    hi: f64,
    step: Vec<f64>,
}

impl Grid {
    pub fn new(task: &ReachTask, cfg: &QConfig) -> Result<Self> {
        let joints = task.joints();
        if cfg.bins < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 bins, got {}",
                cfg.bins
            )));
        }
        if cfg.deltas < 3 || cfg.deltas.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "action deltas must be odd and >= 3, got {}",
                cfg.deltas
            )));
        }
        let (lo, hi) = cfg.range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::invalid(format!("bad feature range {lo}..{hi}")));
        }
        let cells = checked_pow(cfg.bins, joints);
        let actions = checked_pow(cfg.deltas, joints);
        match (cells, actions) {
            (Some(c), Some(a)) if c.checked_mul(a).is_some_and(|n| n <= MAX_TABLE) => {}
            _ => return Err(Error::invalid("Q table too large for this grid")),
        }
        let half = (cfg.deltas / 2) as f64;
        Ok(Self {
            joints,
            bins: cfg.bins,
            deltas: cfg.deltas,
            lo,
            hi,
            step: task.max_step().iter().map(|m| m / half).collect(),
        })
    }

    pub fn cells(&self) -> usize {
        self.bins.pow(self.joints as u32)
    }

    pub fn actions(&self) -> usize {
        self.deltas.pow(self.joints as u32)
    }

    pub fn cell(&self, features: &[f64]) -> usize {
        let width = (self.hi - self.lo) / self.bins as f64;
        features.iter().fold(0, |acc, f| {
            let b = ((f - self.lo) / width).floor();
            let b = if b.is_nan() {
                0
            } else {
                b.clamp(0.0, (self.bins - 1) as f64) as usize
            };
            acc * self.bins + b
        })
    }

    fn digits(&self, mut a: usize) -> Vec<usize> {
        let mut d = vec![0; self.joints];
        for slot in d.iter_mut().rev() {
            *slot = a % self.deltas;
            a /= self.deltas;
        }
        d
    }

    /// Joint offsets of action `a`, in units of the per-joint step.
    pub fn offsets(&self, a: usize) -> Vec<i64> {
        let mid = (self.deltas / 2) as i64;
        self.digits(a).iter().map(|d| *d as i64 - mid).collect()
    }

    pub fn target(&self, obs: &Observation, a: usize) -> Result<JointVector> {
        let q = obs
            .q
            .iter()
            .zip(self.offsets(a))
            .zip(&self.step)
            .map(|((q, o), s)| q + o as f64 * s)
            .collect();
        JointVector::new(q, obs.gripper)
    }

    /// Nearest action index for an absolute joint target.
    pub fn classify(&self, obs: &Observation, action: &JointVector) -> usize {
        let mid = (self.deltas / 2) as f64;
        obs.q
            .iter()
            .zip(&action.q)
            .zip(&self.step)
            .fold(0, |acc, ((q, a), s)| {
                let o = ((a - q) / s).round().clamp(-mid, mid);
                acc * self.deltas + (o + mid) as usize
            })
    }
}

fn checked_pow(base: usize, exp: usize) -> Option<usize> {
    (0..exp).try_fold(1usize, |acc, _| acc.checked_mul(base))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub cell: usize,
    pub action: usize,
    pub reward: f64,
    /// `None` when the step ended the episode with reward.
    pub next: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    actions: usize,
    min_support: u32,
    values: Vec<f64>,
    support: Vec<u32>,
    visits: Vec<u32>,
}

impl QTable {
    pub fn new(cells: usize, actions: usize, min_support: u32) -> Self {
        Self {
            actions,
            min_support,
            values: vec![0.0; cells * actions],
            support: vec![0; cells * actions],
            visits: vec![0; cells],
        }
    }

    /// Counts a stored transition toward its (cell, action) support.
    pub fn observe(&mut self, tr: &Transition) {
        let s = &mut self.support[tr.cell * self.actions + tr.action];
        *s = s.saturating_add(1);
    }

    pub fn supported(&self, cell: usize, action: usize) -> bool {
        self.support[cell * self.actions + action] >= self.min_support
    }

    /// Best supported action and its value.
    pub fn best(&self, cell: usize) -> Option<(usize, f64)> {
        self.row(cell)
            .iter()
            .enumerate()
            .filter(|(a, _)| self.supported(cell, *a))
            .fold(None, |acc: Option<(usize, f64)>, (a, v)| match acc {
                Some((_, bv)) if bv >= *v => acc,
                _ => Some((a, *v)),
            })
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.actions..(cell + 1) * self.actions]
    }

    pub fn visits(&self, cell: usize) -> u32 {
        self.visits[cell]
    }

    pub fn updated_cells(&self) -> usize {
        self.visits.iter().filter(|v| **v > 0).count()
    }

    pub fn update(&mut self, tr: &Transition, alpha: f64, gamma: f64) {
        let next = tr.next.and_then(|n| self.best(n)).map_or(0.0, |(_, v)| v);
        let target = tr.reward + gamma * next;
        let v = &mut self.values[tr.cell * self.actions + tr.action];
        *v += alpha * (target - *v);
        self.visits[tr.cell] = self.visits[tr.cell].saturating_add(1);
    }
}

/// Greedy Q policy over supported actions. Defers to lookup-BC in cells no
/// update has touched or without supported actions, and breaks value ties
/// toward the BC action.
#[derive(Debug, Clone)]
pub struct HitlPolicy {
    task: ReachTask,
    grid: Grid,
    pub q: QTable,
    pub bc: LookupBc,
    epsilon: f64,
    rng: ChaCha8Rng,
}

impl HitlPolicy {
    pub fn greedy(&self) -> Self {
        let mut p = self.clone();
        p.epsilon = 0.0;
        p
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

impl Policy for HitlPolicy {
    fn act(&mut self, obs: &Observation) -> Result<JointVector> {
        let limits = &self.task.follower.limits;
        if self.epsilon > 0.0 && self.rng.gen_bool(self.epsilon) {
            let a = self.rng.gen_range(0..self.grid.actions());
            return clamp_to_limits(&self.grid.target(obs, a)?, limits);
        }
        let cell = self.grid.cell(&self.task.features(obs)?);
        let bc_action = self.bc.lookup(obs)?;
        if self.q.visits(cell) == 0 {
            return Ok(bc_action);
        }
        let Some((mut a, best)) = self.q.best(cell) else {
            return Ok(bc_action);
        };
        let preferred = self.grid.classify(obs, &bc_action);
        if self.q.supported(cell, preferred) && self.q.row(cell)[preferred] == best {
            a = preferred;
        }
        clamp_to_limits(&self.grid.target(obs, a)?, limits)
    }

    fn kind(&self) -> PolicyKind {
        PolicyKind::TabularQ
    }
}

/// Transitions of one episode, tagged with the step source. A final step
/// without reward (truncation) has no successor and is skipped.
pub fn transitions(
    task: &ReachTask,
    grid: &Grid,
    ep: &EpisodeRecord,
) -> Result<Vec<(ActionSource, Transition)>> {
    let cells = ep
        .steps
        .iter()
        .map(|s| Ok(grid.cell(&task.features(&s.obs)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::with_capacity(ep.len());
    for (i, s) in ep.steps.iter().enumerate() {
        let next = if s.reward == 1 {
            None
        } else if i + 1 < ep.len() {
            Some(cells[i + 1])
        } else {
            continue;
        };
        out.push((
            s.source,
            Transition {
                cell: cells[i],
                action: grid.classify(&s.obs, &s.action),
                reward: s.reward as f64,
                next,
            },
        ));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub episode: usize,
    pub id: u64,
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub length: usize,
    pub intervention_steps: usize,
    pub runs: usize,
    pub mean_run_length: f64,
}

impl EpisodeSummary {
    pub fn of(episode: usize, ep: &EpisodeRecord) -> Self {
        let s = intervention_stats(std::slice::from_ref(ep));
        Self {
            episode,
            id: ep.id,
            scenario: ep.scenario,
            outcome: ep.outcome,
            length: ep.len(),
            intervention_steps: s.total_intervention_steps,
            runs: s.run_count,
            mean_run_length: s.mean_run_length,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HitlRun {
    /// Final policy, greedy.
    pub policy: HitlPolicy,
    /// Stage-2 policy.
    pub bc: LookupBc,
    pub curve: Vec<EpisodeSummary>,
    pub episodes: Vec<EpisodeRecord>,
}

/// Stage 2 fits lookup-BC on `demos`; stage 3 runs `online_episodes` with the
/// stall intervenor on the pedal, stores Expert/HumanCorrection transitions
/// offline and Policy transitions online, and after each episode performs
/// `len * updates_per_step` Q updates on symmetric batches.
pub fn hitl_q_learning(
    task: &ReachTask,
    demos: &[EpisodeRecord],
    cfg: &QConfig,
) -> Result<HitlRun> {
    let grid = Grid::new(task, cfg)?;
    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0 && (0.0..=1.0).contains(&cfg.gamma)) {
        return Err(Error::invalid("alpha must be in (0,1] and gamma in [0,1]"));
    }
    if !(0.0..=1.0).contains(&cfg.epsilon) {
        return Err(Error::invalid("epsilon must be in [0,1]"));
    }
    if let Some(bad) = demos.iter().find(|e| e.joints != task.joints()) {
        return Err(Error::Dimension {
            expected: task.joints(),
            got: bad.joints,
        });
    }
    let bc = train_lookup_bc(demos, &BcConfig::for_task(task))?;
    let mut buffer = ReplayBuffer::new(cfg.capacity)?;
    let mut q = QTable::new(grid.cells(), grid.actions(), cfg.min_support);
    for ep in demos {
        for (src, tr) in transitions(task, &grid, ep)? {
            q.observe(&tr);
            buffer.push(src, tr);
        }
    }
    let mut policy = HitlPolicy {
        task: task.clone(),
        grid: grid.clone(),
        q,
        bc: bc.clone(),
        epsilon: cfg.epsilon,
        rng: stream(cfg.seed, 1),
    };
    let mut goals = stream(cfg.seed, 2);
    let mut sampler = stream(cfg.seed, 3);
    let mut intervenor = StallIntervenor::new(cfg.stall_k)?;
    let first_id = demos.iter().map(|e| e.id + 1).max().unwrap_or(0);
    let mut curve = Vec::with_capacity(cfg.online_episodes);
    let mut episodes = Vec::with_capacity(cfg.online_episodes);
    for e in 0..cfg.online_episodes {
        let goal = task.sample_goal(cfg.scenario, &mut goals);
        let spec = EpisodeSpec::new(first_id + e as u64, cfg.scenario, goal);
        let ep = run_episode(task, &mut policy, Some(&mut intervenor), &spec, &mut ())?;
        for (src, tr) in transitions(task, &grid, &ep)? {
            policy.q.observe(&tr);
            buffer.push(src, tr);
        }
        if !buffer.is_empty() {
            for _ in 0..ep.len() * cfg.updates_per_step {
                for r in buffer.sample_symmetric(cfg.batch_size, &mut sampler)? {
                    let tr = buffer.get(r).clone();
                    policy.q.update(&tr, cfg.alpha, cfg.gamma);
                }
            }
        }
        curve.push(EpisodeSummary::of(e, &ep));
        episodes.push(ep);
    }
    Ok(HitlRun {
        policy: policy.greedy(),
        bc,
        curve,
        episodes,
    })
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}
