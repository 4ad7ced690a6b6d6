//! `sucrep`: generate gridworld stitch datasets, train goal-conditioned
//! policies with auxiliary representation objectives, evaluate them over
//! growing horizons, and check the tabular theory against exact oracles.

mod commands;
mod error;
mod manifest;
mod mdp_file;

use clap::{Parser, Subcommand};
use error::CliError;

#[derive(Parser)]
#[command(name = "sucrep", version, about = "Successor-representation learning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Successor representation and measure of an MDP file
    Sr(commands::sr::SrArgs),
    /// Two-timescale factorization flow on a symmetric MDP
    Ode(commands::ode::OdeArgs),
    /// Generate a stitch dataset over a maze
    Gen(commands::gen::GenArgs),
    /// Train a goal-conditioned policy on a dataset
    Train(commands::train::TrainArgs),
    /// Evaluate a checkpoint over tasks or horizon expansions
    Eval(commands::eval::EvalArgs),
    /// Similarity heatmap between predictions and a goal embedding
    Heatmap(commands::heatmap::HeatmapArgs),
    /// Sweep methods x alphas x seeds and summarize the best runs
    Sweep(commands::sweep::SweepArgs),
}

fn main() {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Sr(args) => commands::sr::run(args),
        Command::Ode(args) => commands::ode::run(args),
        Command::Gen(args) => commands::gen::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Heatmap(args) => commands::heatmap::run(args),
        Command::Sweep(args) => commands::sweep::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
