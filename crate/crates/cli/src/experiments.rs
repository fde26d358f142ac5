//! The data-mixing and human-in-the-loop RL experiments.

use std::path::PathBuf;

use bisync_core::episode::{write_dataset, MixSetting, Scenario};
use bisync_core::kv::KvFile;
use bisync_harness::experiment::{
    run_hitl_experiment, run_mix_experiment, HitlExperiment, MixExperiment,
};
use bisync_harness::results::{hitl_records, mix_records, write_results};
use bisync_harness::task::ReachTask;
use clap::Args;

use crate::report::{float, CmdResult, Failure, Report};

/// Config file (if any) with command-line values laid over it.
fn config(path: Option<&PathBuf>) -> Result<KvFile, Failure> {
    Ok(match path {
        Some(p) => KvFile::load(p)?,
        None => KvFile::default(),
    })
}

fn task_of(kv: &mut KvFile, flag: Option<&str>, default: &str) -> Result<ReachTask, Failure> {
    if let Some(t) = flag {
        kv.set("task", t);
    }
    let name = kv.get_str("task").unwrap_or(default).to_string();
    Ok(ReachTask::builtin(&name)?)
}

#[derive(Args, Debug)]
pub struct MixArgs {
    /// EADC, FCID, ODSS or ODDS.
    #[arg(long, env = "BISYNC_SETTING")]
    pub setting: Option<MixSetting>,
    /// Key/value config file; flags override its values.
    #[arg(long, env = "BISYNC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Task (default reach).
    #[arg(long, env = "BISYNC_TASK")]
    pub task: Option<String>,
    #[arg(long, env = "BISYNC_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "BISYNC_EXPERT_EPISODES")]
    pub expert_episodes: Option<usize>,
    #[arg(long, env = "BISYNC_CORRECTION_EPISODES")]
    pub correction_episodes: Option<usize>,
    #[arg(long, env = "BISYNC_EVAL_ROLLOUTS")]
    pub eval_rollouts: Option<usize>,
    /// Write per-episode result records (JSON lines) here.
    #[arg(long, env = "BISYNC_RESULTS")]
    pub results: Option<PathBuf>,
    /// Write the expert and correction episodes under this directory.
    #[arg(long, env = "BISYNC_OUT")]
    pub out: Option<PathBuf>,
}

pub fn mix(a: MixArgs) -> CmdResult {
    let mut kv = config(a.config.as_ref())?;
    let task = task_of(&mut kv, a.task.as_deref(), "reach")?;
    if let Some(s) = a.setting {
        kv.set("setting", s);
    }
    if kv.get_str("setting").is_none() {
        return Err(Failure::new(
            "invalid",
            "no setting: pass --setting or set `setting` in --config",
        ));
    }
    if let Some(v) = a.seed {
        kv.set("seed", v);
    }
    if let Some(v) = a.expert_episodes {
        kv.set("expert_episodes", v);
    }
    if let Some(v) = a.correction_episodes {
        kv.set("correction_episodes", v);
    }
    if let Some(v) = a.eval_rollouts {
        kv.set("eval_rollouts", v);
    }
    let cfg = MixExperiment::from_kv(&task, &kv)?;
    let run = run_mix_experiment(&task, &cfg)?;
    let r = &run.report;
    println!(
        "base   {}/{} mean_length={}",
        r.base.successes,
        r.base.rollouts,
        float(r.base.mean_length)
    );
    println!(
        "mixed  {}/{} mean_length={}",
        r.mixed.successes,
        r.mixed.rollouts,
        float(r.mixed.mean_length)
    );
    if let Some(p) = &a.results {
        write_results(p, &mix_records(cfg.seed, &run))?;
    }
    if let Some(dir) = &a.out {
        let note = |what: &str| Some(format!("mix {} {what} seed={}", cfg.setting, cfg.seed));
        write_dataset(&dir.join("expert"), &run.expert, note("expert"))?;
        write_dataset(
            &dir.join("corrections"),
            &run.corrections,
            note("corrections"),
        )?;
    }
    Ok(Report::new()
        .put("setting", r.setting)
        .put("task", &task.name)
        .put("scenario", r.scenario)
        .put("seed", cfg.seed)
        .put("base_successes", r.base.successes)
        .put("mixed_successes", r.mixed.successes)
        .put("rollouts", r.mixed.rollouts)
        .float("base_rate", r.base.success_rate)
        .float("mixed_rate", r.mixed.success_rate)
        .put("corrections_collected", r.corrections_collected)
        .put("corrections_admitted", r.corrections_admitted))
}

#[derive(Args, Debug)]
pub struct HitlArgs {
    /// Key/value config file; flags override its values.
    #[arg(long, env = "BISYNC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Task (default reach1).
    #[arg(long, env = "BISYNC_TASK")]
    pub task: Option<String>,
    #[arg(long, env = "BISYNC_SEED")]
    pub seed: Option<u64>,
    #[arg(long, env = "BISYNC_DEMOS")]
    pub demos: Option<usize>,
    #[arg(long, env = "BISYNC_ONLINE_EPISODES")]
    pub online_episodes: Option<usize>,
    #[arg(long, env = "BISYNC_EVAL_ROLLOUTS")]
    pub eval_rollouts: Option<usize>,
    #[arg(long, env = "BISYNC_SCENARIO")]
    pub scenario: Option<Scenario>,
    #[arg(long, env = "BISYNC_RESULTS")]
    pub results: Option<PathBuf>,
    /// Write the demonstrations and online episodes under this directory.
    #[arg(long, env = "BISYNC_OUT")]
    pub out: Option<PathBuf>,
}

pub fn hitl(a: HitlArgs) -> CmdResult {
    let mut kv = config(a.config.as_ref())?;
    let task = task_of(&mut kv, a.task.as_deref(), "reach1")?;
    if let Some(v) = a.seed {
        kv.set("seed", v);
    }
    if let Some(v) = a.demos {
        kv.set("demos", v);
    }
    if let Some(v) = a.online_episodes {
        kv.set("online_episodes", v);
    }
    if let Some(v) = a.eval_rollouts {
        kv.set("eval_rollouts", v);
    }
    if let Some(v) = a.scenario {
        kv.set("scenario", v);
    }
    let cfg = HitlExperiment::from_kv(&task, &kv)?;
    let run = run_hitl_experiment(&task, &cfg)?;
    let r = &run.report;
    for s in &r.curve {
        println!(
            "online {} outcome={} steps={} intervention_steps={} runs={}",
            s.episode, s.outcome, s.length, s.intervention_steps, s.runs
        );
    }
    if let Some(p) = &a.results {
        write_results(p, &hitl_records(cfg.q.seed, cfg.q.scenario, &run))?;
    }
    if let Some(dir) = &a.out {
        let note = |what: &str| Some(format!("hitl-rl {what} seed={}", cfg.q.seed));
        write_dataset(&dir.join("demos"), &run.demos, note("demos"))?;
        write_dataset(&dir.join("online"), &run.online, note("online"))?;
    }
    Ok(Report::new()
        .put("task", &task.name)
        .put("scenario", cfg.q.scenario)
        .put("seed", cfg.q.seed)
        .put("online_episodes", r.curve.len())
        .put("bc_successes", r.bc.successes)
        .put("final_successes", r.last.successes)
        .put("rollouts", r.last.rollouts)
        .float("bc_mean_length", r.bc.mean_length)
        .float("final_mean_length", r.last.mean_length))
}
