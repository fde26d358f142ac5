//! Calibration, recording, replay, lookup-BC training, evaluation and stats.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use bisync_core::episode::{
    intervention_stats, load_path, write_dataset, EpisodeRecord, InterventionStats, Outcome,
    Scenario,
};
use bisync_core::servo_wire::RawTicks;
use bisync_core::sim::DevicePreset;
use bisync_core::sync::{calibrate as calibrate_profile, leader_to_follower, Sign};
use bisync_core::JointVector;
use bisync_harness::intervene::{Intervenor, ProgressIntervenor, StallIntervenor};
use bisync_harness::policy::{train_lookup_bc, BcConfig, HoldPolicy, Policy, ScriptedExpert};
use bisync_harness::results::{read_results, ResultRecord};
use bisync_harness::rollout::{evaluate, run_episode, EpisodeSpec};
use bisync_harness::task::ReachTask;
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::report::{float, list, CmdResult, Failure, Report};
use crate::{DataArg, PolicyChoice, TaskArg};

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Leader device: a builtin preset name or a preset file.
    #[arg(long, env = "BISYNC_DEVICE", default_value = "planar2-leader")]
    pub device: String,
    /// Reference pose in rad, one value per joint (default all zeros).
    #[arg(
        long,
        env = "BISYNC_REFERENCE",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub reference: Vec<f64>,
    /// Per-joint direction, +1 or -1 (default all +1).
    #[arg(
        long,
        env = "BISYNC_SIGN",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub sign: Vec<Sign>,
    /// Raw leader ticks at the reference pose; prompted for on stdin if absent.
    #[arg(long, env = "BISYNC_RAW", value_delimiter = ',')]
    pub raw: Vec<u32>,
    /// Where to write the calibration profile.
    #[arg(long, env = "BISYNC_OUT")]
    pub out: PathBuf,
}

fn or_default<T: Clone>(given: Vec<T>, n: usize, fill: T) -> Vec<T> {
    if given.is_empty() {
        vec![fill; n]
    } else {
        given
    }
}

fn prompt_ticks(n: usize) -> Result<Vec<u32>, Failure> {
    eprint!("Pose the leader at the reference and enter {n} raw tick readings: ");
    std::io::stderr().flush()?;
    let mut line = String::new();
    std::io::stdin().lock().read_line(&mut line)?;
    line.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u32>()
                .map_err(|e| Failure::new("invalid", format!("raw tick `{s}`: {e}")))
        })
        .collect()
}

pub fn calibrate(a: CalibrateArgs) -> CmdResult {
    let device = DevicePreset::resolve(&a.device)?;
    let n = device.joint_count();
    let reference = JointVector::from_q(or_default(a.reference, n, 0.0))?;
    let sign = or_default(a.sign, n, Sign::Positive);
    let raw = if a.raw.is_empty() {
        prompt_ticks(n)?
    } else {
        a.raw
    };
    let raw = RawTicks::new(raw, device.resolution)?;
    let profile = calibrate_profile(&raw, &reference, &sign)?;
    let err = leader_to_follower(&raw, &profile)?.max_abs_diff(&reference);
    profile.save(&a.out)?;
    Ok(Report::new()
        .put("device", &device.name)
        .put("joints", n)
        .put("resolution", profile.resolution())
        .put("offsets", list(profile.offset()))
        .put("signs", list(profile.sign()))
        .put("check_error", format!("{err:.3e}"))
        .path("out", &a.out))
}

fn load_all(paths: &[PathBuf], task: &ReachTask) -> Result<Vec<EpisodeRecord>, Failure> {
    if paths.is_empty() {
        return Err(Failure::new("invalid", "no --data given"));
    }
    let mut eps = Vec::new();
    for p in paths {
        for e in load_path(p)? {
            if e.task != task.name {
                return Err(Failure::new(
                    "invalid",
                    format!(
                        "{}: episode {} is for task `{}`, not `{}`",
                        p.display(),
                        e.id,
                        e.task,
                        task.name
                    ),
                ));
            }
            eps.push(e);
        }
    }
    Ok(eps)
}

fn build_policy(
    choice: PolicyChoice,
    task: &ReachTask,
    data: &[PathBuf],
) -> Result<Box<dyn Policy>, Failure> {
    Ok(match choice {
        PolicyChoice::Expert => Box::new(ScriptedExpert::new(task)),
        PolicyChoice::Hold => Box::new(HoldPolicy),
        PolicyChoice::Bc => {
            let eps = load_all(data, task)?;
            Box::new(train_lookup_bc(&eps, &BcConfig::for_task(task))?)
        }
    })
}

fn parse_intervenor(spec: &str) -> Result<Option<Box<dyn Intervenor>>, Failure> {
    let bad = || {
        Failure::new(
            "invalid",
            format!("--intervene: expected none, stall:K or progress:F, got `{spec}`"),
        )
    };
    if spec == "none" {
        return Ok(None);
    }
    let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
    Ok(Some(match kind {
        "stall" => Box::new(StallIntervenor::new(arg.parse().map_err(|_| bad())?)?),
        "progress" => Box::new(ProgressIntervenor::new(arg.parse().map_err(|_| bad())?)?),
        _ => return Err(bad()),
    }))
}

#[derive(Args, Debug)]
pub struct RecordArgs {
    #[command(flatten)]
    pub task: TaskArg,
    #[arg(long, env = "BISYNC_EPISODES", default_value_t = 10)]
    pub episodes: usize,
    /// Goal placement: id, ood_static or ood_dynamic.
    #[arg(long, env = "BISYNC_SCENARIO", default_value = "id")]
    pub scenario: Scenario,
    #[arg(long, env = "BISYNC_POLICY", value_enum, default_value = "expert")]
    pub policy: PolicyChoice,
    #[command(flatten)]
    pub data: DataArg,
    /// Scripted operator: none, stall:K (take over after K steps without
    /// progress) or progress:F (take over at fraction F of the way).
    #[arg(long, env = "BISYNC_INTERVENE", default_value = "none")]
    pub intervene: String,
    #[arg(long, env = "BISYNC_OUT")]
    pub out: PathBuf,
    #[arg(long, env = "BISYNC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, env = "BISYNC_FIRST_ID", default_value_t = 0)]
    pub first_id: u64,
}

fn outcome_counts(eps: &[EpisodeRecord]) -> usize {
    eps.iter().filter(|e| e.outcome == Outcome::Success).count()
}

pub fn record(a: RecordArgs) -> CmdResult {
    let task = ReachTask::builtin(&a.task.task)?;
    let mut policy = build_policy(a.policy, &task, &a.data.data)?;
    let mut intervenor = parse_intervenor(&a.intervene)?;
    let mut goals = ChaCha8Rng::seed_from_u64(a.seed);
    let mut eps = Vec::with_capacity(a.episodes);
    for i in 0..a.episodes {
        let goal = task.sample_goal(a.scenario, &mut goals);
        let mut spec = EpisodeSpec::new(a.first_id + i as u64, a.scenario, goal);
        if a.policy == PolicyChoice::Expert {
            spec = spec.expert();
        }
        let iv = intervenor
            .as_mut()
            .map(|b| b.as_mut() as &mut dyn Intervenor);
        let ep = run_episode(&task, policy.as_mut(), iv, &spec, &mut ())?;
        println!(
            "episode {} outcome={} steps={} intervention_steps={}",
            ep.id,
            ep.outcome,
            ep.len(),
            intervention_stats(std::slice::from_ref(&ep)).total_intervention_steps
        );
        eps.push(ep);
    }
    let comment = format!(
        "record task={} policy={:?} scenario={} intervene={} seed={}",
        task.name, a.policy, a.scenario, a.intervene, a.seed
    );
    write_dataset(&a.out, &eps, Some(comment))?;
    let s = intervention_stats(&eps);
    Ok(Report::new()
        .put("episodes", eps.len())
        .put("successes", outcome_counts(&eps))
        .put("intervention_steps", s.total_intervention_steps)
        .put("runs", s.run_count)
        .float("mean_run_length", s.mean_run_length)
        .path("out", &a.out))
}

#[derive(Args, Debug)]
pub struct ReplayArgs {
    /// Episode file or dataset directory.
    pub file: PathBuf,
    /// Task to replay on; taken from the episode when omitted.
    #[arg(long, env = "BISYNC_TASK")]
    pub task: Option<String>,
}

/// Drives a fresh rig with the recorded actions and returns the largest
/// gap between the replayed follower and the recorded observation.
fn replay_episode(ep: &EpisodeRecord, task: &ReachTask) -> Result<f64, Failure> {
    if ep.joints != task.joints() {
        return Err(Failure::new(
            "dimension",
            format!(
                "episode {} has {} joints, task `{}` has {}",
                ep.id,
                ep.joints,
                task.name,
                task.joints()
            ),
        ));
    }
    let mut rig = task.build_rig()?;
    let periods = ((1.0 / ep.rate_hz) / task.sync_dt()).round().max(1.0) as usize;
    let mut worst = 0.0f64;
    for step in &ep.steps {
        worst = worst.max(rig.follower.arm.q.max_abs_diff(&step.obs.joints()));
        for _ in 0..periods {
            rig.period(&[], Some(&step.action), None)?;
        }
    }
    Ok(worst)
}

pub fn replay(a: ReplayArgs) -> CmdResult {
    let eps = load_path(&a.file)?;
    let mut worst = 0.0f64;
    let mut steps = 0;
    for ep in &eps {
        let task = ReachTask::builtin(a.task.as_deref().unwrap_or(&ep.task))?;
        let err = replay_episode(ep, &task)?;
        println!(
            "episode {} steps={} max_error={}",
            ep.id,
            ep.len(),
            float(err)
        );
        worst = worst.max(err);
        steps += ep.len();
    }
    Ok(Report::new()
        .put("episodes", eps.len())
        .put("steps", steps)
        .put("max_error", format!("{worst:.3e}"))
        .path("file", &a.file))
}

#[derive(Args, Debug)]
pub struct TrainBcArgs {
    #[command(flatten)]
    pub task: TaskArg,
    #[command(flatten)]
    pub data: DataArg,
    /// Also write the merged training set here (it is the lookup table).
    #[arg(long, env = "BISYNC_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, env = "BISYNC_SCENARIO", default_value = "id")]
    pub scenario: Scenario,
    #[arg(long, env = "BISYNC_ROLLOUTS", default_value_t = 20)]
    pub rollouts: usize,
    #[arg(long, env = "BISYNC_SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn train_bc(a: TrainBcArgs) -> CmdResult {
    let task = ReachTask::builtin(&a.task.task)?;
    let eps = load_all(&a.data.data, &task)?;
    let mut bc = train_lookup_bc(&eps, &BcConfig::for_task(&task))?;
    if let Some(out) = &a.out {
        write_dataset(out, &eps, Some(format!("train-bc task={}", task.name)))?;
    }
    let r = evaluate(&mut bc, &task, a.scenario, a.rollouts, a.seed)?;
    Ok(Report::new()
        .put("episodes", eps.len())
        .put("samples", bc.len())
        .put("scenario", a.scenario)
        .put("successes", r.successes)
        .put("rollouts", r.rollouts)
        .float("success_rate", r.success_rate)
        .float("mean_length", r.mean_length))
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub task: TaskArg,
    #[arg(long, env = "BISYNC_POLICY", value_enum, default_value = "bc")]
    pub policy: PolicyChoice,
    #[command(flatten)]
    pub data: DataArg,
    #[arg(long, env = "BISYNC_SCENARIO", default_value = "id")]
    pub scenario: Scenario,
    #[arg(long, env = "BISYNC_ROLLOUTS", default_value_t = 20)]
    pub rollouts: usize,
    #[arg(long, env = "BISYNC_SEED", default_value_t = 0)]
    pub seed: u64,
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let task = ReachTask::builtin(&a.task.task)?;
    let mut policy = build_policy(a.policy, &task, &a.data.data)?;
    let r = evaluate(policy.as_mut(), &task, a.scenario, a.rollouts, a.seed)?;
    for (i, (o, l)) in r.outcomes.iter().zip(&r.lengths).enumerate() {
        println!("rollout {i} outcome={o} steps={l}");
    }
    Ok(Report::new()
        .put("policy", format!("{:?}", a.policy).to_lowercase())
        .put("scenario", a.scenario)
        .put("successes", r.successes)
        .put("rollouts", r.rollouts)
        .float("success_rate", r.success_rate)
        .float("mean_length", r.mean_length))
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Episode directory, episode file, or a results file (`.jsonl`).
    pub path: PathBuf,
    /// Only records of this phase (results files).
    #[arg(long, env = "BISYNC_PHASE")]
    pub phase: Option<String>,
}

/// One point of the intervention-length series.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub label: String,
    pub intervention_steps: usize,
    pub runs: usize,
}

impl Point {
    pub fn mean(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.intervention_steps as f64 / self.runs as f64
        }
    }
}

/// `increasing` / `decreasing` (non-strict, not constant), `flat`, or `mixed`.
pub fn trend(series: &[f64]) -> &'static str {
    let up = series.windows(2).all(|w| w[1] >= w[0]);
    let down = series.windows(2).all(|w| w[1] <= w[0]);
    match (up, down) {
        (true, true) => "flat",
        (true, false) => "increasing",
        (false, true) => "decreasing",
        (false, false) => "mixed",
    }
}

fn half_means(series: &[f64]) -> (f64, f64) {
    let mean = |s: &[f64]| {
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    };
    let mid = series.len() / 2;
    (mean(&series[..mid]), mean(&series[mid..]))
}

fn is_results_file(p: &Path) -> bool {
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
    p.is_file() && name.ends_with(".jsonl") && !name.ends_with(bisync_core::episode::EPISODE_SUFFIX)
}

fn points_of_results(records: &[ResultRecord], phase: Option<&str>) -> Vec<Point> {
    records
        .iter()
        .filter(|r| phase.is_none_or(|p| r.phase == p))
        .map(|r| Point {
            label: format!("seed={} phase={} index={}", r.seed, r.phase, r.index),
            intervention_steps: r.intervention_steps,
            runs: r.runs,
        })
        .collect()
}

fn points_of_episodes(eps: &[EpisodeRecord]) -> Vec<Point> {
    eps.iter()
        .map(|e| {
            let s: InterventionStats = intervention_stats(std::slice::from_ref(e));
            Point {
                label: format!("episode={} steps={}", e.id, e.len()),
                intervention_steps: s.total_intervention_steps,
                runs: s.run_count,
            }
        })
        .collect()
}

pub fn stats(a: StatsArgs) -> CmdResult {
    let points = if is_results_file(&a.path) {
        points_of_results(&read_results(&a.path)?, a.phase.as_deref())
    } else {
        if a.phase.is_some() {
            return Err(Failure::new(
                "invalid",
                "--phase applies to results files only",
            ));
        }
        points_of_episodes(&load_path(&a.path)?)
    };
    let series: Vec<f64> = points.iter().map(Point::mean).collect();
    for (p, m) in points.iter().zip(&series) {
        println!(
            "{} intervention_steps={} runs={} mean_run_length={}",
            p.label,
            p.intervention_steps,
            p.runs,
            float(*m)
        );
    }
    let steps: usize = points.iter().map(|p| p.intervention_steps).sum();
    let runs: usize = points.iter().map(|p| p.runs).sum();
    let overall = if runs == 0 {
        0.0
    } else {
        steps as f64 / runs as f64
    };
    let (first, second) = half_means(&series);
    println!(
        "series {}",
        list(&series.iter().map(|v| float(*v)).collect::<Vec<_>>())
    );
    Ok(Report::new()
        .put("points", points.len())
        .put("intervention_steps", steps)
        .put("runs", runs)
        .float("mean_run_length", overall)
        .put("trend", trend(&series))
        .float("first_half_mean", first)
        .float("second_half_mean", second))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_labels() {
        assert_eq!(trend(&[]), "flat");
        assert_eq!(trend(&[2.0, 2.0]), "flat");
        assert_eq!(trend(&[1.0, 1.0, 3.0]), "increasing");
        assert_eq!(trend(&[5.0, 3.0, 3.0, 0.0]), "decreasing");
        assert_eq!(trend(&[1.0, 4.0, 2.0]), "mixed");
        assert_eq!(half_means(&[1.0, 3.0, 2.0, 4.0, 6.0]), (2.0, 4.0));
    }

    #[test]
    fn intervenor_specs() {
        assert!(parse_intervenor("none").unwrap().is_none());
        assert!(parse_intervenor("stall:5").unwrap().is_some());
        assert!(parse_intervenor("progress:0.5").unwrap().is_some());
        for bad in ["stall", "stall:x", "progress:2", "wave:1"] {
            assert!(parse_intervenor(bad).is_err(), "{bad}");
        }
    }
}
