pub mod eval;
pub mod gen;
pub mod heatmap;
pub mod ode;
pub mod sr;
pub mod sweep;
pub mod train;

use crate::error::CliError;
use sucrep::grid::{parse_maze, Maze, MEDIUM_MAZE};
use std::path::Path;

/// Loads a maze from a file path or the built-in `@medium` map.
pub fn load_maze(spec: &str) -> Result<Maze, CliError> {
    let text = match spec {
        "@medium" => MEDIUM_MAZE.to_string(),
        path => std::fs::read_to_string(Path::new(path))?,
    };
    Ok(parse_maze(&text)?)
}

pub fn parse_u64_list(s: &str) -> Result<Vec<u64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|_| CliError::Config(format!("bad integer {p:?}")))
        })
        .collect()
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad number {p:?}")))
        })
        .collect()
}
