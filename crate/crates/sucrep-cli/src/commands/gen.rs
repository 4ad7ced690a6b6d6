use crate::error::CliError;
use crate::manifest::{sha256_hex, RunManifest};
use clap::Args;
use std::path::PathBuf;
use sucrep::grid::generate_stitch_dataset;
use sucrep::rngstream::stream;

#[derive(Args)]
pub struct GenArgs {
    /// Maze ASCII file, or @medium for the built-in map
    #[arg(long)]
    pub maze: String,
    #[arg(long, default_value_t = 4)]
    pub span_limit: usize,
    /// Number of trajectories
    #[arg(long, default_value_t = 400)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset output path (JSON lines)
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: GenArgs) -> Result<(), CliError> {
    let maze = super::load_maze(&args.maze)?;
    let max_span = (maze.width().max(maze.height())).saturating_sub(1);
    if args.span_limit > max_span {
        eprintln!(
            "warning: span limit {} exceeds the maze's largest possible span {max_span}; \
             trajectories are bounded by the maze",
            args.span_limit
        );
    }
    let mut rng = stream(args.seed, "dataset");
    let dataset = generate_stitch_dataset(&maze, args.span_limit, args.n, args.seed, &mut rng)?;
    let bytes = dataset.to_jsonl();
    std::fs::write(&args.out, &bytes)?;
    RunManifest::new("gen", args.seed)
        .with("maze", &args.maze)
        .with("span_limit", args.span_limit)
        .with("n", args.n)
        .artifact(&args.out.to_string_lossy())
        .with_dataset_hash(sha256_hex(bytes.as_bytes()))
        .save(&args.out.with_extension("manifest.json"))?;
    println!(
        "wrote {} trajectories covering a {}x{} maze to {}",
        dataset.trajectories.len(),
        maze.width(),
        maze.height(),
        args.out.display()
    );
    Ok(())
}
