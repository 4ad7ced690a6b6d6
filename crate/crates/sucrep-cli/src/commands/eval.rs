use crate::error::CliError;
use crate::manifest::RunManifest;
use clap::Args;
use serde::Deserialize;
use std::path::{Path, PathBuf};
use sucrep::eval::{evaluate, ActionSelection};
use sucrep::grid::{make_horizon_tasks, make_task, EvalTask, Featurizer, Maze};
use sucrep::nn::load_checkpoint;
use sucrep::rngstream::stream;
use sucrep::trainer::{ModelParams, TrainConfig};

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Maze ASCII file or @medium
    #[arg(long)]
    pub maze: String,
    /// JSONL of {"start":[x,y],"goal":[x,y]} base tasks
    #[arg(long)]
    pub tasks: PathBuf,
    /// Expand base tasks into one task per shortest-path waypoint
    #[arg(long, default_value_t = false)]
    pub horizon: bool,
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    /// Comma-separated evaluation seeds
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Distances above this require stitching (the red-bar threshold)
    #[arg(long, default_value_t = 4)]
    pub stitch_threshold: usize,
    /// Sample actions from the softmax instead of argmax
    #[arg(long, default_value_t = false)]
    pub stochastic: bool,
    /// Output prefix; writes <prefix>_report.csv and <prefix>_summary.json
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Deserialize)]
struct TaskSpec {
    start: [usize; 2],
    goal: [usize; 2],
}

pub fn load_tasks(maze: &Maze, path: &Path) -> Result<Vec<EvalTask>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let spec: TaskSpec = serde_json::from_str(line)
            .map_err(|e| CliError::Config(format!("task line {}: {e}", i + 1)))?;
        let start = maze
            .cell_at(spec.start[0], spec.start[1])
            .ok_or_else(|| CliError::Config(format!("task line {}: start is a wall", i + 1)))?;
        let goal = maze
            .cell_at(spec.goal[0], spec.goal[1])
            .ok_or_else(|| CliError::Config(format!("task line {}: goal is a wall", i + 1)))?;
        tasks.push(make_task(maze, start, goal)?);
    }
    if tasks.is_empty() {
        return Err(CliError::Config("no tasks in file".into()));
    }
    Ok(tasks)
}

/// Loads a checkpoint and validates it against the maze's feature layout.
pub fn load_model_for_maze(
    checkpoint: &Path,
    maze: &Maze,
) -> Result<(ModelParams, TrainConfig), CliError> {
    let ck = load_checkpoint(checkpoint)?;
    let (model, cfg, feature_dim) = ModelParams::from_checkpoint(&ck)?;
    let expected = Featurizer::new(maze, cfg.features).dim();
    if feature_dim != expected {
        return Err(CliError::Artifact(format!(
            "checkpoint was trained on {feature_dim}-dimensional features, maze provides {expected}"
        )));
    }
    Ok((model, cfg))
}

pub fn run(args: EvalArgs) -> Result<(), CliError> {
    let maze = super::load_maze(&args.maze)?;
    let (model, cfg) = load_model_for_maze(&args.checkpoint, &maze)?;
    let base_tasks = load_tasks(&maze, &args.tasks)?;
    let seeds = super::parse_u64_list(&args.seeds)?;
    let tasks = if args.horizon {
        let mut rng = stream(seeds.first().copied().unwrap_or(0), "horizon-tasks");
        make_horizon_tasks(&maze, &base_tasks, &mut rng)?
    } else {
        base_tasks
    };
    let selection = if args.stochastic {
        ActionSelection::Stochastic
    } else {
        ActionSelection::Greedy
    };
    let report = evaluate(
        &maze,
        &model,
        &cfg,
        &tasks,
        args.episodes,
        &seeds,
        args.stitch_threshold,
        selection,
    )?;
    let stem = args.out.to_string_lossy();
    let report_path = format!("{stem}_report.csv");
    let summary_path = format!("{stem}_summary.json");
    std::fs::write(&report_path, report.to_csv())?;
    std::fs::write(&summary_path, report.summary_json())?;
    RunManifest::new("eval", seeds.first().copied().unwrap_or(0))
        .with("checkpoint", args.checkpoint.display())
        .with("maze", &args.maze)
        .with("episodes", args.episodes)
        .with("horizon", args.horizon)
        .with("tasks", tasks.len())
        .artifact(&report_path)
        .artifact(&summary_path)
        .save(&PathBuf::from(format!("{stem}_manifest.json")))?;
    println!("{}", report.summary_json());
    Ok(())
}
