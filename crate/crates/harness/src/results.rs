//! Line-delimited per-episode result records.

use std::fmt::Write as _;
use std::path::Path;

use bisync_core::episode::{intervention_stats, EpisodeRecord, Outcome, Scenario};
use bisync_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::experiment::{HitlExperimentRun, MixRun};
use crate::rollout::EvalReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub seed: u64,
    /// expert, correction, eval_base, eval_mixed, demo, online, eval_bc, eval_final
    pub phase: String,
    /// Position within the phase.
    pub index: usize,
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub length: usize,
    pub intervention_steps: usize,
    pub runs: usize,
    pub mean_run_length: f64,
}

impl ResultRecord {
    pub fn of_episode(seed: u64, phase: &str, index: usize, ep: &EpisodeRecord) -> Self {
        let s = intervention_stats(std::slice::from_ref(ep));
        Self {
            seed,
            phase: phase.to_string(),
            index,
            scenario: ep.scenario,
            outcome: ep.outcome,
            length: ep.len(),
            intervention_steps: s.total_intervention_steps,
            runs: s.run_count,
            mean_run_length: s.mean_run_length,
        }
    }

    fn of_eval(seed: u64, phase: &str, scenario: Scenario, r: &EvalReport) -> Vec<Self> {
        r.outcomes
            .iter()
            .zip(&r.lengths)
            .enumerate()
            .map(|(index, (&outcome, &length))| Self {
                seed,
                phase: phase.to_string(),
                index,
                scenario,
                outcome,
                length,
                intervention_steps: 0,
                runs: 0,
                mean_run_length: 0.0,
            })
            .collect()
    }
}

fn episodes(seed: u64, phase: &str, eps: &[EpisodeRecord]) -> Vec<ResultRecord> {
    eps.iter()
        .enumerate()
        .map(|(i, e)| ResultRecord::of_episode(seed, phase, i, e))
        .collect()
}

pub fn mix_records(seed: u64, run: &MixRun) -> Vec<ResultRecord> {
    let sc = run.report.scenario;
    let mut out = episodes(seed, "expert", &run.expert);
    out.extend(episodes(seed, "correction", &run.corrections));
    out.extend(ResultRecord::of_eval(
        seed,
        "eval_base",
        sc,
        &run.report.base,
    ));
    out.extend(ResultRecord::of_eval(
        seed,
        "eval_mixed",
        sc,
        &run.report.mixed,
    ));
    out
}

pub fn hitl_records(seed: u64, scenario: Scenario, run: &HitlExperimentRun) -> Vec<ResultRecord> {
    let mut out = episodes(seed, "demo", &run.demos);
    out.extend(episodes(seed, "online", &run.online));
    out.extend(ResultRecord::of_eval(
        seed,
        "eval_bc",
        scenario,
        &run.report.bc,
    ));
    out.extend(ResultRecord::of_eval(
        seed,
        "eval_final",
        scenario,
        &run.report.last,
    ));
    out
}

pub fn to_jsonl(records: &[ResultRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(out, "{line}").expect("write to String");
    }
    Ok(out)
}

pub fn parse_jsonl(text: &str) -> Result<Vec<ResultRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(i + 1, e.to_string())))
        .collect()
}

pub fn write_results(path: &Path, records: &[ResultRecord]) -> Result<()> {
    std::fs::write(path, to_jsonl(records)?).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text).map_err(|e| e.with_path(path))
}
