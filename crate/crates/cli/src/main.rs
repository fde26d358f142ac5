//! `bisync`: run the simulated leader/follower rig behind the gateway,
//! calibrate, record and replay episodes, and run the learning experiments.
//!
//! Every flag can also be set through an environment variable named
//! `BISYNC_` plus the flag in upper snake case (`--rate-hz` is
//! `BISYNC_RATE_HZ`). The last line on stdout is `RESULT key=value ...`;
//! failures print one `ERROR code=... message=...` line on stderr and exit 1.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod data;
mod experiments;
mod report;
mod sim;

use report::CmdResult;

#[derive(Parser, Debug)]
#[command(
    name = "bisync",
    version,
    about = "Leader/follower teleoperation rig and learning workflows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the control loop on a simulated rig and serve it over TCP and WebSocket.
    Sim(sim::SimArgs),
    /// Compute a leader calibration from raw readings at a reference pose.
    Calibrate(data::CalibrateArgs),
    /// Record scripted episodes (optionally with a scripted intervenor) to a dataset directory.
    Record(data::RecordArgs),
    /// Re-drive the simulated follower with the actions of stored episodes.
    Replay(data::ReplayArgs),
    /// Run a data-mixing experiment (EADC, FCID, ODSS or ODDS).
    Mix(experiments::MixArgs),
    /// Train lookup behavior cloning on datasets and evaluate it.
    TrainBc(data::TrainBcArgs),
    /// Run the human-in-the-loop tabular Q-learning experiment.
    HitlRl(experiments::HitlArgs),
    /// Evaluate a policy over seeded rollouts.
    Eval(data::EvalArgs),
    /// Print the intervention-length series of episodes or a results file.
    Stats(data::StatsArgs),
}

#[derive(Args, Debug, Clone)]
pub struct TaskArg {
    /// Task name: reach (two joints) or reach1 (one joint).
    #[arg(long, env = "BISYNC_TASK", default_value = "reach")]
    pub task: String,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    /// Scripted expert.
    Expert,
    /// Holds the start pose.
    Hold,
    /// Lookup behavior cloning on `--data`.
    Bc,
}

#[derive(Args, Debug, Clone)]
pub struct DataArg {
    /// Episode directory or file; repeat for several.
    #[arg(long = "data", env = "BISYNC_DATA", value_delimiter = ',')]
    pub data: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: CmdResult = match cli.command {
        Command::Sim(a) => sim::run(a),
        Command::Calibrate(a) => data::calibrate(a),
        Command::Record(a) => data::record(a),
        Command::Replay(a) => data::replay(a),
        Command::Mix(a) => experiments::mix(a),
        Command::TrainBc(a) => data::train_bc(a),
        Command::HitlRl(a) => experiments::hitl(a),
        Command::Eval(a) => data::eval(a),
        Command::Stats(a) => data::stats(a),
    };
    match result {
        Ok(r) => {
            println!("{r}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("{f}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
