//! Data collection and the mixing / HITL experiments.

use bisync_core::episode::{mix_datasets, EpisodeRecord, MixSetting, Scenario};
use bisync_core::kv::KvFile;
use bisync_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::intervene::{Intervenor, ProgressIntervenor, StallIntervenor};
use crate::policy::{train_lookup_bc, BcConfig, Policy, ScriptedExpert};
use crate::qlearn::{hitl_q_learning, EpisodeSummary, QConfig};
use crate::rollout::{evaluate, run_episode, EpisodeSpec, EvalReport};
use crate::task::{Goal, ReachTask, Region};

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// `n` expert demonstrations on ID goals (or goals from `region`).
pub fn collect_demos(
    task: &ReachTask,
    expert: &mut dyn Policy,
    region: Option<Region>,
    n: usize,
    first_id: u64,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    let mut goals = rng(seed, 10);
    (0..n)
        .map(|i| {
            let goal = match region {
                Some(r) => Goal::fixed(r.sample(&mut goals)),
                None => task.sample_goal(Scenario::InDistribution, &mut goals),
            };
            let spec = EpisodeSpec::new(first_id + i as u64, Scenario::InDistribution, goal);
            run_episode(task, expert, None, &spec.expert(), &mut ())
        })
        .collect()
}

/// `n` policy rollouts in `scenario` with `intervenor` on the pedal.
pub fn collect_corrections(
    task: &ReachTask,
    base: &mut dyn Policy,
    intervenor: &mut dyn Intervenor,
    scenario: Scenario,
    n: usize,
    first_id: u64,
    seed: u64,
) -> Result<Vec<EpisodeRecord>> {
    let mut goals = rng(seed, 11);
    (0..n)
        .map(|i| {
            let goal = task.sample_goal(scenario, &mut goals);
            let spec = EpisodeSpec::new(first_id + i as u64, scenario, goal);
            run_episode(task, base, Some(intervenor), &spec, &mut ())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixExperiment {
    pub setting: MixSetting,
    pub expert_episodes: usize,
    pub correction_episodes: usize,
    pub eval_rollouts: usize,
    pub stall_k: usize,
    /// Progress fraction at which the EADC intervenor takes over.
    pub progress: f64,
    /// Where expert demonstrations are placed; the whole ID region if unset.
    pub expert_region: Option<Region>,
    pub seed: u64,
}

impl MixExperiment {
    /// EADC and FCID place experts in the task's demo region only, so the
    /// base policy fails on the rest of ID and there is something to correct.
    pub fn for_task(task: &ReachTask, setting: MixSetting) -> Self {
        let expert_region = match setting {
            MixSetting::Eadc | MixSetting::Fcid => Some(task.demo_region),
            MixSetting::Odss | MixSetting::Odds => None,
        };
        Self {
            setting,
            expert_episodes: 50,
            correction_episodes: 50,
            eval_rollouts: 20,
            stall_k: 15,
            progress: 0.5,
            expert_region,
            seed: 0,
        }
    }

    /// Keys: setting (required), expert_episodes, correction_episodes,
    /// eval_rollouts, stall_k, progress, seed, expert_region = full|demo.
    pub fn from_kv(task: &ReachTask, kv: &KvFile) -> Result<Self> {
        check_keys(
            kv,
            &[
                "task",
                "setting",
                "expert_episodes",
                "correction_episodes",
                "eval_rollouts",
                "stall_k",
                "progress",
                "seed",
                "expert_region",
            ],
        )?;
        let mut c = Self::for_task(task, kv.require("setting")?);
        c.expert_episodes = kv.get_or("expert_episodes", c.expert_episodes)?;
        c.correction_episodes = kv.get_or("correction_episodes", c.correction_episodes)?;
        c.eval_rollouts = kv.get_or("eval_rollouts", c.eval_rollouts)?;
        c.stall_k = kv.get_or("stall_k", c.stall_k)?;
        c.progress = kv.get_or("progress", c.progress)?;
        c.seed = kv.get_or("seed", c.seed)?;
        match kv.get_str("expert_region") {
            None => {}
            Some("full") => c.expert_region = None,
            Some("demo") => c.expert_region = Some(task.demo_region),
            Some(other) => {
                return Err(Error::invalid(format!(
                    "expert_region must be `full` or `demo`, got `{other}`"
                )))
            }
        }
        Ok(c)
    }

    pub fn correction_scenario(&self) -> Scenario {
        match self.setting {
            MixSetting::Eadc | MixSetting::Fcid => Scenario::InDistribution,
            MixSetting::Odss => Scenario::OodStatic,
            MixSetting::Odds => Scenario::OodDynamic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixReport {
    pub setting: MixSetting,
    pub scenario: Scenario,
    pub base: EvalReport,
    pub mixed: EvalReport,
    pub corrections_collected: usize,
    pub corrections_admitted: usize,
}

#[derive(Debug, Clone)]
pub struct MixRun {
    pub report: MixReport,
    pub expert: Vec<EpisodeRecord>,
    pub corrections: Vec<EpisodeRecord>,
}

/// Expert demos -> base lookup-BC -> corrections on the base policy ->
/// mixed lookup-BC, both evaluated on the same seeded placements.
pub fn run_mix_experiment(task: &ReachTask, cfg: &MixExperiment) -> Result<MixRun> {
    if cfg.expert_episodes == 0 {
        return Err(Error::invalid("need at least one expert episode"));
    }
    let bc_cfg = BcConfig::for_task(task);
    let expert = collect_demos(
        task,
        &mut ScriptedExpert::new(task),
        cfg.expert_region,
        cfg.expert_episodes,
        0,
        cfg.seed,
    )?;
    let mut base = train_lookup_bc(&expert, &bc_cfg)?;
    let scenario = cfg.correction_scenario();
    let mut intervenor: Box<dyn Intervenor> = match cfg.setting {
        MixSetting::Eadc => Box::new(ProgressIntervenor::new(cfg.progress)?),
        _ => Box::new(StallIntervenor::new(cfg.stall_k)?),
    };
    let corrections = collect_corrections(
        task,
        &mut base,
        intervenor.as_mut(),
        scenario,
        cfg.correction_episodes,
        cfg.expert_episodes as u64,
        cfg.seed,
    )?;
    let data = mix_datasets(&expert, &corrections, cfg.setting)?;
    let mut mixed = train_lookup_bc(&data.episodes, &bc_cfg)?;
    let eval_seed = cfg.seed ^ 0x5eed;
    let base_eval = evaluate(&mut base, task, scenario, cfg.eval_rollouts, eval_seed)?;
    let mixed_eval = evaluate(&mut mixed, task, scenario, cfg.eval_rollouts, eval_seed)?;
    Ok(MixRun {
        report: MixReport {
            setting: cfg.setting,
            scenario,
            base: base_eval,
            mixed: mixed_eval,
            corrections_collected: corrections.len(),
            corrections_admitted: data.episodes.len() - expert.len(),
        },
        expert,
        corrections,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitlExperiment {
    pub demos: usize,
    /// Per-step joint move of the hesitant demonstrator (rad).
    pub expert_step: f64,
    pub expert_pause: f64,
    pub q: QConfig,
    pub eval_rollouts: usize,
}

impl HitlExperiment {
    pub fn for_task(task: &ReachTask) -> Self {
        let step = task
            .max_step()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            / 2.0;
        Self {
            demos: 20,
            expert_step: step,
            expert_pause: 0.0,
            q: QConfig::for_task(task),
            eval_rollouts: 20,
        }
    }

    /// Keys: demos, expert_step, expert_pause, eval_rollouts, and the Q
    /// settings bins, deltas, alpha, gamma, epsilon, batch_size,
    /// updates_per_step, online_episodes, capacity, stall_k, min_support,
    /// scenario, seed.
    pub fn from_kv(task: &ReachTask, kv: &KvFile) -> Result<Self> {
        check_keys(
            kv,
            &[
                "task",
                "demos",
                "expert_step",
                "expert_pause",
                "eval_rollouts",
                "bins",
                "deltas",
                "alpha",
                "gamma",
                "epsilon",
                "batch_size",
                "updates_per_step",
                "online_episodes",
                "capacity",
                "stall_k",
                "min_support",
                "scenario",
                "seed",
            ],
        )?;
        let mut c = Self::for_task(task);
        c.demos = kv.get_or("demos", c.demos)?;
        c.expert_step = kv.get_or("expert_step", c.expert_step)?;
        c.expert_pause = kv.get_or("expert_pause", c.expert_pause)?;
        c.eval_rollouts = kv.get_or("eval_rollouts", c.eval_rollouts)?;
        let q = &mut c.q;
        q.bins = kv.get_or("bins", q.bins)?;
        q.deltas = kv.get_or("deltas", q.deltas)?;
        q.alpha = kv.get_or("alpha", q.alpha)?;
        q.gamma = kv.get_or("gamma", q.gamma)?;
        q.epsilon = kv.get_or("epsilon", q.epsilon)?;
        q.batch_size = kv.get_or("batch_size", q.batch_size)?;
        q.updates_per_step = kv.get_or("updates_per_step", q.updates_per_step)?;
        q.online_episodes = kv.get_or("online_episodes", q.online_episodes)?;
        q.capacity = kv.get_or("capacity", q.capacity)?;
        q.stall_k = kv.get_or("stall_k", q.stall_k)?;
        q.min_support = kv.get_or("min_support", q.min_support)?;
        q.scenario = kv.get_or("scenario", q.scenario)?;
        q.seed = kv.get_or("seed", q.seed)?;
        Ok(c)
    }
}

fn check_keys(kv: &KvFile, known: &[&str]) -> Result<()> {
    match kv.keys().find(|k| !known.contains(k)) {
        Some(k) => Err(Error::invalid(format!("unknown config key `{k}`"))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitlReport {
    pub bc: EvalReport,
    pub last: EvalReport,
    pub curve: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone)]
pub struct HitlExperimentRun {
    pub report: HitlReport,
    pub demos: Vec<EpisodeRecord>,
    pub online: Vec<EpisodeRecord>,
}

pub fn run_hitl_experiment(task: &ReachTask, cfg: &HitlExperiment) -> Result<HitlExperimentRun> {
    let seed = cfg.q.seed;
    let mut expert = ScriptedExpert::hesitant(task, cfg.expert_step, cfg.expert_pause, seed)?;
    let demos = collect_demos(task, &mut expert, None, cfg.demos, 0, seed)?;
    let run = hitl_q_learning(task, &demos, &cfg.q)?;
    let eval_seed = seed ^ 0x5eed;
    let mut bc = run.bc.clone();
    let mut last = run.policy.clone();
    let bc_eval = evaluate(&mut bc, task, cfg.q.scenario, cfg.eval_rollouts, eval_seed)?;
    let last_eval = evaluate(
        &mut last,
        task,
        cfg.q.scenario,
        cfg.eval_rollouts,
        eval_seed,
    )?;
    Ok(HitlExperimentRun {
        report: HitlReport {
            bc: bc_eval,
            last: last_eval,
            curve: run.curve,
        },
        demos,
        online: run.episodes,
    })
}
