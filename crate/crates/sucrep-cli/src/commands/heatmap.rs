use crate::error::CliError;
use crate::manifest::RunManifest;
use clap::Args;
use std::path::PathBuf;
use sucrep::eval::similarity_heatmap;
use sucrep::grid::Action;

#[derive(Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Maze ASCII file or @medium
    #[arg(long)]
    pub maze: String,
    /// Goal cell as X,Y
    #[arg(long)]
    pub goal: String,
    /// Action to condition the forward prediction on
    #[arg(long)]
    pub action: Option<String>,
    /// Output prefix; writes <prefix>.csv and <prefix>.pgm
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: HeatmapArgs) -> Result<(), CliError> {
    let maze = super::load_maze(&args.maze)?;
    let (model, cfg) = super::eval::load_model_for_maze(&args.checkpoint, &maze)?;
    let (gx, gy) = args
        .goal
        .split_once(',')
        .ok_or_else(|| CliError::Config(format!("goal {:?}, expected X,Y", args.goal)))?;
    let gx: usize = gx
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad goal x {gx:?}")))?;
    let gy: usize = gy
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("bad goal y {gy:?}")))?;
    let goal = maze
        .cell_at(gx, gy)
        .ok_or_else(|| CliError::Config(format!("goal ({gx}, {gy}) is a wall or out of bounds")))?;
    let action = match args.action.as_deref() {
        None => None,
        Some("up") => Some(Action::Up),
        Some("down") => Some(Action::Down),
        Some("left") => Some(Action::Left),
        Some("right") => Some(Action::Right),
        Some("stay") => Some(Action::Stay),
        Some(other) => return Err(CliError::Config(format!("unknown action {other:?}"))),
    };
    let map = similarity_heatmap(&maze, &model, &cfg, goal, action)?;
    let stem = args.out.to_string_lossy();
    let csv_path = format!("{stem}.csv");
    let pgm_path = format!("{stem}.pgm");
    std::fs::write(&csv_path, map.to_csv())?;
    std::fs::write(&pgm_path, map.to_pgm())?;
    RunManifest::new("heatmap", 0)
        .with("checkpoint", args.checkpoint.display())
        .with("maze", &args.maze)
        .with("goal", &args.goal)
        .artifact(&csv_path)
        .artifact(&pgm_path)
        .save(&PathBuf::from(format!("{stem}_manifest.json")))?;
    println!("wrote {csv_path} and {pgm_path}");
    Ok(())
}
