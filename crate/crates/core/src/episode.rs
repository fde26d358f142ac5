//! Episode recording, persistence, dataset mixing and intervention statistics.
//!
//! Episode files are line-delimited JSON: a header object on line 1, then one
//! step object per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, Error, Result};
use crate::kinematics::JointVector;
use crate::sync::{ActionSource, ControlMode};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_STEPS: usize = 200;
pub const EPISODE_SUFFIX: &str = ".episode.jsonl";
pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Truncated,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Success => "success",
            Outcome::Failure => "failure",
            Outcome::Truncated => "truncated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "ID")]
    InDistribution,
    #[serde(rename = "OOD-static")]
    OodStatic,
    #[serde(rename = "OOD-dynamic")]
    OodDynamic,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::InDistribution,
        Scenario::OodStatic,
        Scenario::OodDynamic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::InDistribution => "ID",
            Scenario::OodStatic => "OOD-static",
            Scenario::OodDynamic => "OOD-dynamic",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "id" => Ok(Scenario::InDistribution),
            "ood-static" | "ood_static" => Ok(Scenario::OodStatic),
            "ood-dynamic" | "ood_dynamic" => Ok(Scenario::OodDynamic),
            _ => Err(Error::invalid(format!("unknown scenario `{s}`"))),
        }
    }
}

/// Follower state plus task-specific scalars (for the reach task, the goal).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub q: Vec<f64>,
    pub gripper: f64,
    #[serde(default)]
    pub extras: Vec<f64>,
}

impl Observation {
    pub fn new(follower: &JointVector, extras: Vec<f64>) -> Self {
        Self {
            q: follower.q.clone(),
            gripper: follower.gripper,
            extras,
        }
    }

    pub fn joints(&self) -> JointVector {
        JointVector {
            q: self.q.clone(),
            gripper: self.gripper,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub time: f64,
    pub obs: Observation,
    pub action: JointVector,
    pub source: ActionSource,
    pub mode: ControlMode,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub id: u64,
    pub task: String,
    pub joints: usize,
    pub rate_hz: f64,
    pub max_steps: usize,
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema: u32,
    id: u64,
    task: String,
    joints: usize,
    rate_hz: f64,
    max_steps: usize,
    scenario: Scenario,
    outcome: Outcome,
    steps: usize,
}

fn check_step(step: &Step, expected_t: usize, joints: usize) -> Result<()> {
    if step.t != expected_t {
        return Err(Error::invalid(format!(
            "step index {} out of order, expected {expected_t}",
            step.t
        )));
    }
    if step.obs.q.len() != joints || step.action.len() != joints {
        return Err(Error::invalid(format!(
            "step {}: joint count differs from episode ({joints})",
            step.t
        )));
    }
    if !step.time.is_finite()
        || step
            .obs
            .q
            .iter()
            .chain(&step.obs.extras)
            .any(|v| !v.is_finite())
    {
        return Err(Error::invalid(format!("step {}: non-finite value", step.t)));
    }
    step.action
        .validate()
        .map_err(|e| Error::invalid(format!("step {}: action: {e}", step.t)))?;
    if step.reward > 1 {
        return Err(Error::invalid(format!(
            "step {}: reward must be 0 or 1",
            step.t
        )));
    }
    if (step.source == ActionSource::HumanCorrection) != (step.mode == ControlMode::Intervention) {
        return Err(Error::invalid(format!(
            "step {}: source {:?} inconsistent with mode {}",
            step.t, step.source, step.mode
        )));
    }
    Ok(())
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn sources(&self) -> impl Iterator<Item = ActionSource> + '_ {
        self.steps.iter().map(|s| s.source)
    }

    pub fn has_correction(&self) -> bool {
        self.sources().any(|s| s == ActionSource::HumanCorrection)
    }

    /// The outcome the steps imply: a reward ends the episode successfully,
    /// reaching the cap without one truncates it, anything else is a failure.
    pub fn implied_outcome(steps: &[Step], max_steps: usize) -> Outcome {
        if steps.last().is_some_and(|s| s.reward == 1) {
            Outcome::Success
        } else if steps.len() >= max_steps {
            Outcome::Truncated
        } else {
            Outcome::Failure
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps.is_empty() {
            return Err(Error::invalid("episode has no steps"));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::invalid("rate_hz must be positive"));
        }
        if self.steps.len() > self.max_steps {
            return Err(Error::invalid(format!(
                "episode has {} steps, cap is {}",
                self.steps.len(),
                self.max_steps
            )));
        }
        for (i, s) in self.steps.iter().enumerate() {
            check_step(s, i, self.joints)?;
            if s.reward == 1 && i + 1 != self.steps.len() {
                return Err(Error::invalid(format!(
                    "step {i}: reward before the final step"
                )));
            }
        }
        let implied = Self::implied_outcome(&self.steps, self.max_steps);
        if implied != self.outcome {
            return Err(Error::invalid(format!(
                "outcome {} does not match the steps, which imply {implied}",
                self.outcome
            )));
        }
        Ok(())
    }

    fn header(&self) -> Header {
        Header {
            schema: SCHEMA_VERSION,
            id: self.id,
            task: self.task.clone(),
            joints: self.joints,
            rate_hz: self.rate_hz,
            max_steps: self.max_steps,
            scenario: self.scenario,
            outcome: self.outcome,
            steps: self.steps.len(),
        }
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = to_line(&self.header())?;
        out.push('\n');
        for s in &self.steps {
            out.push_str(&to_line(s)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::parse(1, "missing header line"))?;
        let schema = serde_json::from_str::<serde_json::Value>(first)
            .map_err(|e| Error::parse(1, format!("header: {e}")))?
            .get("schema")
            .and_then(serde_json::Value::as_u64);
        if schema != Some(SCHEMA_VERSION as u64) {
            return Err(Error::parse(
                1,
                format!("unsupported schema {schema:?}, expected {SCHEMA_VERSION}"),
            ));
        }
        let header: Header =
            serde_json::from_str(first).map_err(|e| Error::parse(1, format!("header: {e}")))?;
        let mut steps = Vec::with_capacity(header.steps);
        for (line_no, line) in lines {
            if line.trim().is_empty() {
                return Err(Error::parse(line_no, "blank line"));
            }
            let step: Step = serde_json::from_str(line)
                .map_err(|e| Error::parse(line_no, format!("step: {e}")))?;
            check_step(&step, steps.len(), header.joints)
                .map_err(|e| Error::parse(line_no, e.to_string()))?;
            steps.push(step);
        }
        if steps.len() != header.steps {
            return Err(Error::parse(
                steps.len() + 2,
                format!(
                    "truncated file: header declares {} steps, found {}",
                    header.steps,
                    steps.len()
                ),
            ));
        }
        let record = Self {
            id: header.id,
            task: header.task,
            joints: header.joints,
            rate_hz: header.rate_hz,
            max_steps: header.max_steps,
            scenario: header.scenario,
            outcome: header.outcome,
            steps,
        };
        record
            .validate()
            .map_err(|e| Error::parse(1, e.to_string()))?;
        Ok(record)
    }

    pub fn file_name(&self) -> String {
        format!("{:06}{EPISODE_SUFFIX}", self.id)
    }
}

fn to_line<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::invalid(format!("serialize: {e}")))
}

pub fn write_episode(path: &Path, episode: &EpisodeRecord) -> Result<()> {
    episode.validate()?;
    let text = episode.to_jsonl()?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    f.sync_all().map_err(|e| Error::io(path, e))
}

pub fn read_episode(path: &Path) -> Result<EpisodeRecord> {
    EpisodeRecord::from_jsonl(&read_file(path)?).map_err(|e| e.with_path(path))
}

/// Collects steps in order and enforces the record invariants once, at
/// [`EpisodeBuilder::finalize`].
#[derive(Debug, Clone)]
pub struct EpisodeBuilder {
    id: u64,
    task: String,
    joints: usize,
    rate_hz: f64,
    max_steps: usize,
    scenario: Scenario,
    steps: Vec<Step>,
    finalized: bool,
}

impl EpisodeBuilder {
    pub fn new(
        id: u64,
        task: impl Into<String>,
        joints: usize,
        rate_hz: f64,
        scenario: Scenario,
    ) -> Self {
        Self {
            id,
            task: task.into(),
            joints,
            rate_hz,
            max_steps: DEFAULT_MAX_STEPS,
            scenario,
            steps: Vec::new(),
            finalized: false,
        }
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn is_full(&self) -> bool {
        self.steps.len() >= self.max_steps
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn append_step(&mut self, step: Step) -> Result<()> {
        if self.finalized {
            return Err(Error::invalid("episode already finalized"));
        }
        if self.is_full() {
            return Err(Error::invalid(format!(
                "episode cap of {} steps reached",
                self.max_steps
            )));
        }
        if self.steps.last().is_some_and(|s| s.reward == 1) {
            return Err(Error::invalid("episode already ended with a reward"));
        }
        check_step(&step, self.steps.len(), self.joints)?;
        self.steps.push(step);
        Ok(())
    }

    /// Step with `t` and `time` filled in from the step count and rate.
    pub fn push(
        &mut self,
        obs: Observation,
        action: JointVector,
        source: ActionSource,
        mode: ControlMode,
        reward: u8,
    ) -> Result<()> {
        let t = self.steps.len();
        self.append_step(Step {
            t,
            time: t as f64 / self.rate_hz,
            obs,
            action,
            source,
            mode,
            reward,
        })
    }

    pub fn implied_outcome(&self) -> Outcome {
        EpisodeRecord::implied_outcome(&self.steps, self.max_steps)
    }

    pub fn finalize(&mut self, outcome: Outcome) -> Result<EpisodeRecord> {
        if self.finalized {
            return Err(Error::invalid("episode already finalized"));
        }
        let record = EpisodeRecord {
            id: self.id,
            task: self.task.clone(),
            joints: self.joints,
            rate_hz: self.rate_hz,
            max_steps: self.max_steps,
            scenario: self.scenario,
            outcome,
            steps: self.steps.clone(),
        };
        record.validate()?;
        self.finalized = true;
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MixSetting {
    /// Equal-amount substitution: every correction episode, any scenario.
    Eadc,
    /// In-distribution episodes that contain at least one correction.
    Fcid,
    /// Out-of-distribution, static goal.
    Odss,
    /// Out-of-distribution, goal moved mid-episode.
    Odds,
}

impl MixSetting {
    pub const ALL: [MixSetting; 4] = [
        MixSetting::Eadc,
        MixSetting::Fcid,
        MixSetting::Odss,
        MixSetting::Odds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MixSetting::Eadc => "EADC",
            MixSetting::Fcid => "FCID",
            MixSetting::Odss => "ODSS",
            MixSetting::Odds => "ODDS",
        }
    }

    pub fn admits(self, episode: &EpisodeRecord) -> bool {
        match self {
            MixSetting::Eadc => true,
            MixSetting::Fcid => {
                episode.scenario == Scenario::InDistribution && episode.has_correction()
            }
            MixSetting::Odss => episode.scenario == Scenario::OodStatic,
            MixSetting::Odds => episode.scenario == Scenario::OodDynamic,
        }
    }
}

impl fmt::Display for MixSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MixSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MixSetting::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown mix setting `{s}` (EADC, FCID, ODSS, ODDS)"
                ))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub expert_episodes: usize,
    pub hacts_episodes: usize,
    /// Step counts keyed by action source.
    pub steps_by_source: BTreeMap<ActionSource, usize>,
}

impl Provenance {
    pub fn total_episodes(&self) -> usize {
        self.expert_episodes + self.hacts_episodes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub setting: MixSetting,
    pub episodes: Vec<EpisodeRecord>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.episodes.iter().flat_map(|e| &e.steps)
    }
}

/// Expert episodes plus the correction episodes the setting admits.
pub fn mix_datasets(
    expert: &[EpisodeRecord],
    hacts: &[EpisodeRecord],
    setting: MixSetting,
) -> Result<Dataset> {
    let filtered: Vec<&EpisodeRecord> = hacts.iter().filter(|e| setting.admits(e)).collect();
    if filtered.is_empty() {
        let why = match setting {
            MixSetting::Eadc => "no correction episodes were given".to_string(),
            MixSetting::Fcid => {
                "no in-distribution episode contains a human correction".to_string()
            }
            MixSetting::Odss => format!("no correction episode is tagged {}", Scenario::OodStatic),
            MixSetting::Odds => format!("no correction episode is tagged {}", Scenario::OodDynamic),
        };
        return Err(Error::invalid(format!(
            "{setting} selected nothing from {} correction episodes: {why}",
            hacts.len()
        )));
    }
    let mut provenance = Provenance {
        expert_episodes: expert.len(),
        hacts_episodes: filtered.len(),
        steps_by_source: BTreeMap::new(),
    };
    let episodes: Vec<EpisodeRecord> = expert.iter().chain(filtered).cloned().collect();
    for step in episodes.iter().flat_map(|e| &e.steps) {
        *provenance.steps_by_source.entry(step.source).or_default() += 1;
    }
    Ok(Dataset {
        setting,
        episodes,
        provenance,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InterventionStats {
    pub total_intervention_steps: usize,
    pub run_count: usize,
    pub mean_run_length: f64,
}

impl InterventionStats {
    fn from_runs(runs: &[usize]) -> Self {
        let total: usize = runs.iter().sum();
        Self {
            total_intervention_steps: total,
            run_count: runs.len(),
            mean_run_length: if runs.is_empty() {
                0.0
            } else {
                total as f64 / runs.len() as f64
            },
        }
    }
}

/// Lengths of the maximal blocks of consecutive human corrections.
pub fn intervention_runs(sources: impl IntoIterator<Item = ActionSource>) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = 0;
    for s in sources {
        if s == ActionSource::HumanCorrection {
            current += 1;
        } else if current > 0 {
            runs.push(current);
            current = 0;
        }
    }
    if current > 0 {
        runs.push(current);
    }
    runs
}

pub fn sequence_stats(sources: impl IntoIterator<Item = ActionSource>) -> InterventionStats {
    InterventionStats::from_runs(&intervention_runs(sources))
}

/// Runs never span episode boundaries.
pub fn intervention_stats(episodes: &[EpisodeRecord]) -> InterventionStats {
    let runs: Vec<usize> = episodes
        .iter()
        .flat_map(|e| intervention_runs(e.sources()))
        .collect();
    InterventionStats::from_runs(&runs)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Member files of a dataset directory with their checksums.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Manifest {
    pub comment: Option<String>,
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(c) = &self.comment {
            out.push_str(&format!("# {c}\n"));
        }
        for (file, sum) in &self.entries {
            out.push_str(&format!("{sum}  {file}\n"));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if let Some(c) = line.strip_prefix('#') {
                if m.comment.is_none() {
                    m.comment = Some(c.trim().to_string());
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            match line.split_once(char::is_whitespace) {
                Some((sum, file))
                    if sum.len() == 64 && sum.bytes().all(|b| b.is_ascii_hexdigit()) =>
                {
                    m.entries
                        .push((file.trim().to_string(), sum.to_ascii_lowercase()))
                }
                _ => return Err(Error::parse(i + 1, "expected `<sha256>  <file>`")),
            }
        }
        Ok(m)
    }

    /// Rechecks every member. Returns the member paths on success.
    pub fn verify(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.entries
            .iter()
            .map(|(file, sum)| {
                let path = dir.join(file);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let actual = sha256_hex(&bytes);
                if &actual != sum {
                    return Err(Error::invalid(format!(
                        "{}: checksum mismatch (manifest {sum}, file {actual})",
                        path.display()
                    )));
                }
                Ok(path)
            })
            .collect()
    }
}

/// Writes every episode into `dir` plus a manifest. Existing files with the
/// same names are replaced.
pub fn write_dataset(
    dir: &Path,
    episodes: &[EpisodeRecord],
    comment: Option<String>,
) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = Manifest {
        comment,
        entries: Vec::new(),
    };
    for e in episodes {
        let name = e.file_name();
        let path = dir.join(&name);
        write_episode(&path, e)?;
        let bytes = fs::read(&path).map_err(|err| Error::io(&path, err))?;
        manifest.entries.push((name, sha256_hex(&bytes)));
    }
    let mpath = dir.join(MANIFEST_NAME);
    fs::write(&mpath, manifest.to_text()).map_err(|e| Error::io(&mpath, e))?;
    Ok(manifest)
}

/// Loads a directory of episodes. With a manifest present, only its members
/// are read and their checksums must match; otherwise every
/// `*.episode.jsonl` file is read. Sorted by episode id.
pub fn load_dir(dir: &Path) -> Result<Vec<EpisodeRecord>> {
    let mpath = dir.join(MANIFEST_NAME);
    let paths = if mpath.is_file() {
        Manifest::parse(&read_file(&mpath)?)
            .map_err(|e| e.with_path(&mpath))?
            .verify(dir)?
    } else {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(EPISODE_SUFFIX))
            })
            .collect();
        paths.sort();
        paths
    };
    let mut episodes = paths
        .iter()
        .map(|p| read_episode(p))
        .collect::<Result<Vec<_>>>()?;
    episodes.sort_by_key(|e| e.id);
    Ok(episodes)
}

/// Loads either one episode file or a directory.
pub fn load_path(path: &Path) -> Result<Vec<EpisodeRecord>> {
    if path.is_dir() {
        load_dir(path)
    } else {
        read_episode(path).map(|e| vec![e])
    }
}
