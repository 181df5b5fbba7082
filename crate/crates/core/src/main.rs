use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ettrl::harness::{load_checkpoint, Experiment, ExperimentConfig};
use ettrl::rollout::{expected_token_ratio, expected_tree_tokens, leaf_count};

#[derive(Parser)]
#[command(name = "ettrl", version, about = "Test-time RL with entropy-fork rollouts on a tabular policy")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a JSON config and write metrics, summary and checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run of the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Greedy pass@1 of a checkpoint on the config's prompt set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Rollout budget of an entropy-fork tree configuration.
    Budget {
        #[arg(long = "M")]
        trees: usize,
        #[arg(long = "N")]
        forks: usize,
        #[arg(long = "B")]
        branches: usize,
        /// Trunk length used for the token estimate.
        #[arg(long, default_value_t = 1.0)]
        len: f64,
    },
}

fn run(cli: Cli) -> ettrl::Result<()> {
    match cli.command {
        Command::Run { config, seed, out, resume } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let exp = Experiment::new(cfg)?;
            let state = match resume {
                Some(path) => exp.resume(load_checkpoint(&path)?)?,
                None => exp.initial_state()?,
            };
            let report = exp.train_from(state, &out)?;
            let s = &report.summary;
            println!("episodes          {}", s.episodes);
            println!("pass@1            {:.4} -> {:.4}", s.initial_pass_at_1, s.final_pass_at_1);
            println!("tokens generated  {}", s.total_tokens_generated);
            if let Some(r) = s.mean_token_ratio {
                println!("mean token ratio  {r:.4}");
            }
            println!("artifacts         {}", out.display());
        }
        Command::Eval { checkpoint, config } => {
            let exp = Experiment::new(ExperimentConfig::load(&config)?)?;
            let state = exp.resume(load_checkpoint(&checkpoint)?)?;
            println!("episode {}  pass@1 {:.4}", state.next_episode, exp.evaluate(&state.params)?);
        }
        Command::Budget { trees, forks, branches, len } => {
            println!("leaf_count {}", leaf_count(trees, forks, branches));
            println!("expected_tree_tokens {}", expected_tree_tokens(len, forks, branches));
            println!("expected_token_ratio {}", expected_token_ratio(forks, branches));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
