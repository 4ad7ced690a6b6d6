//! Gridworld mazes, stitch-style dataset generation from short-horizon
//! shortest-path controllers, and evaluation-task construction.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

/// Sentinel distance for unreachable cells.
pub const UNREACHABLE: usize = usize::MAX;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("maze parse error: {0}")]
    Parse(String),
    #[error("maze free space is disconnected")]
    Disconnected,
    #[error("cell ({0}, {1}) is a wall or out of bounds")]
    NotFree(usize, usize),
    #[error("free-cell index {0} is out of range")]
    BadCell(usize),
    #[error("dataset generation failed: {0}")]
    Generation(String),
    #[error("task from {start} to {goal} is unsolvable")]
    Unsolvable { start: usize, goal: usize },
    #[error("dataset format error: {0}")]
    Format(String),
}

/// Discrete moves. Blocked moves are no-ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Action {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
    Stay = 4,
}

pub const N_ACTIONS: usize = 5;

impl Action {
    pub fn from_index(i: usize) -> Option<Action> {
        match i {
            0 => Some(Action::Up),
            1 => Some(Action::Down),
            2 => Some(Action::Left),
            3 => Some(Action::Right),
            4 => Some(Action::Stay),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

const MOVES: [(Action, i64, i64); 4] = [
    (Action::Up, 0, -1),
    (Action::Down, 0, 1),
    (Action::Left, -1, 0),
    (Action::Right, 1, 0),
];

/// A rectangular maze with 4-connected free cells.
///
/// Free cells are indexed densely in row-major order; trajectory states are
/// these indices.
#[derive(Debug, Clone)]
pub struct Maze {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    free_cells: Vec<(usize, usize)>,
    cell_index: Vec<Option<usize>>,
    /// For each free cell, the neighbor reached by Up/Down/Left/Right
    /// (None when blocked).
    neighbors: Vec<[Option<usize>; 4]>,
    text: String,
}

impl Maze {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn n_free(&self) -> usize {
        self.free_cells.len()
    }

    pub fn cell_xy(&self, cell: usize) -> (usize, usize) {
        self.free_cells[cell]
    }

    /// True when `(x, y)` is a wall or out of bounds.
    pub fn is_wall(&self, x: usize, y: usize) -> bool {
        if x >= self.width || y >= self.height {
            return true;
        }
        self.walls[y * self.width + x]
    }

    /// Index of the free cell at `(x, y)`.
    pub fn cell_at(&self, x: usize, y: usize) -> Option<usize> {
        if x >= self.width || y >= self.height {
            return None;
        }
        self.cell_index[y * self.width + x]
    }

    pub fn neighbors(&self, cell: usize) -> &[Option<usize>; 4] {
        &self.neighbors[cell]
    }

    /// The canonical ASCII form this maze was parsed from.
    pub fn text(&self) -> &str {
        &self.text
    }

    /// Chebyshev distance between two free cells.
    pub fn chebyshev(&self, a: usize, b: usize) -> usize {
        let (ax, ay) = self.free_cells[a];
        let (bx, by) = self.free_cells[b];
        (ax.abs_diff(bx)).max(ay.abs_diff(by))
    }
}

/// Parses an ASCII map: `#` = wall, `.` = free. Rows must be equal length,
/// and the free cells must form one connected component.
pub fn parse_maze(text: &str) -> Result<Maze, GridError> {
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.is_empty() {
        return Err(GridError::Parse("empty map".into()));
    }
    let width = rows[0].chars().count();
    if width == 0 {
        return Err(GridError::Parse("empty row".into()));
    }
    let height = rows.len();
    let mut walls = vec![true; width * height];
    for (y, row) in rows.iter().enumerate() {
        let cells: Vec<char> = row.chars().collect();
        if cells.len() != width {
            return Err(GridError::Parse(format!(
                "row {y} has {} cells, expected {width}",
                cells.len()
            )));
        }
        for (x, c) in cells.iter().enumerate() {
            match c {
                '#' => walls[y * width + x] = true,
                '.' => walls[y * width + x] = false,
                other => {
                    return Err(GridError::Parse(format!("unexpected glyph {other:?} at ({x}, {y})")))
                }
            }
        }
    }

    let mut free_cells = Vec::new();
    let mut cell_index = vec![None; width * height];
    for y in 0..height {
        for x in 0..width {
            if !walls[y * width + x] {
                cell_index[y * width + x] = Some(free_cells.len());
                free_cells.push((x, y));
            }
        }
    }
    if free_cells.is_empty() {
        return Err(GridError::Parse("no free cells".into()));
    }

    let mut neighbors = vec![[None; 4]; free_cells.len()];
    for (i, &(x, y)) in free_cells.iter().enumerate() {
        for (action, dx, dy) in MOVES {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                neighbors[i][action.index()] = cell_index[ny as usize * width + nx as usize];
            }
        }
    }

    let canonical = rows.join("\n");
    let maze = Maze {
        width,
        height,
        walls,
        free_cells,
        cell_index,
        neighbors,
        text: canonical,
    };

    let dist = bfs_distances(&maze, 0)?;
    if dist.iter().any(|&d| d == UNREACHABLE) {
        return Err(GridError::Disconnected);
    }
    Ok(maze)
}

/// Deterministic dynamics: move to the 4-neighbor if free, stay otherwise.
pub fn step(maze: &Maze, cell: usize, action: Action) -> usize {
    match action {
        Action::Stay => cell,
        other => maze.neighbors[cell][other.index()].unwrap_or(cell),
    }
}

/// Exact unweighted shortest-path distances from `source` to every free
/// cell; unreachable cells get [`UNREACHABLE`].
pub fn bfs_distances(maze: &Maze, source: usize) -> Result<Vec<usize>, GridError> {
    if source >= maze.n_free() {
        return Err(GridError::BadCell(source));
    }
    let mut dist = vec![UNREACHABLE; maze.n_free()];
    dist[source] = 0;
    let mut queue = VecDeque::from([source]);
    while let Some(cell) = queue.pop_front() {
        for neighbor in maze.neighbors[cell].iter().flatten() {
            if dist[*neighbor] == UNREACHABLE {
                dist[*neighbor] = dist[cell] + 1;
                queue.push_back(*neighbor);
            }
        }
    }
    Ok(dist)
}

/// One behavior trajectory: visited cells plus the actions between them.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct Trajectory {
    pub policy_id: i64,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
}

impl Trajectory {
    /// Max Chebyshev distance between any two visited cells.
    pub fn span(&self, maze: &Maze) -> usize {
        let mut min_x = usize::MAX;
        let mut max_x = 0;
        let mut min_y = usize::MAX;
        let mut max_y = 0;
        for &cell in &self.states {
            let (x, y) = maze.cell_xy(cell);
            min_x = min_x.min(x);
            max_x = max_x.max(x);
            min_y = min_y.min(y);
            max_y = max_y.max(y);
        }
        (max_x - min_x).max(max_y - min_y)
    }
}

/// An offline dataset of short-horizon trajectories over one maze.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub maze_text: String,
    pub span_limit: usize,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    maze: String,
    span_limit: usize,
    seed: u64,
}

impl Dataset {
    /// Serializes to JSON lines: a header line, then one trajectory per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&DatasetHeader {
            maze: self.maze_text.clone(),
            span_limit: self.span_limit,
            seed: self.seed,
        })
        .expect("header serializes");
        for t in &self.trajectories {
            out.push('\n');
            out.push_str(&serde_json::to_string(t).expect("trajectory serializes"));
        }
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Dataset, GridError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header_line = lines.next().ok_or_else(|| GridError::Format("empty dataset".into()))?;
        let header: DatasetHeader = serde_json::from_str(header_line)
            .map_err(|e| GridError::Format(format!("bad header: {e}")))?;
        let mut trajectories = Vec::new();
        for (i, line) in lines.enumerate() {
            let t: Trajectory = serde_json::from_str(line)
                .map_err(|e| GridError::Format(format!("bad trajectory at line {}: {e}", i + 2)))?;
            trajectories.push(t);
        }
        Ok(Dataset {
            maze_text: header.maze,
            span_limit: header.span_limit,
            seed: header.seed,
            trajectories,
        })
    }

    pub fn maze(&self) -> Result<Maze, GridError> {
        parse_maze(&self.maze_text)
    }
}

/// A start/goal evaluation pair annotated with its exact BFS distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalTask {
    pub start: usize,
    pub goal: usize,
    pub bfs_distance: usize,
}

/// Walks one BFS-shortest path from `start` to `goal`, breaking ties
/// uniformly at random among equally short successors.
pub fn shortest_path<R: Rng + ?Sized>(
    maze: &Maze,
    start: usize,
    goal: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Action)>, GridError> {
    let dist_to_goal = bfs_distances(maze, goal)?;
    if dist_to_goal[start] == UNREACHABLE {
        return Err(GridError::Unsolvable { start, goal });
    }
    let mut path = Vec::new();
    let mut cell = start;
    while cell != goal {
        let here = dist_to_goal[cell];
        let mut choices: Vec<(usize, Action)> = Vec::with_capacity(4);
        for (action, _, _) in MOVES {
            if let Some(n) = maze.neighbors[cell][action.index()] {
                if dist_to_goal[n] + 1 == here {
                    choices.push((n, action));
                }
            }
        }
        let (next, action) = choices[rng.random_range(0..choices.len())];
        path.push((cell, action));
        cell = next;
    }
    path.push((goal, Action::Stay));
    Ok(path)
}

fn path_to_trajectory(maze: &Maze, path: &[(usize, Action)], policy_id: i64) -> Trajectory {
    let states: Vec<usize> = path.iter().map(|&(c, _)| c).collect();
    let actions: Vec<usize> = path[..path.len() - 1].iter().map(|&(_, a)| a.index()).collect();
    debug_assert!(states
        .windows(2)
        .zip(actions.iter())
        .all(|(w, &a)| step(maze, w[0], Action::from_index(a).unwrap()) == w[1]));
    Trajectory {
        policy_id,
        states,
        actions,
    }
}

/// Generates a stitch dataset: every trajectory follows a shortest path
/// between a random start and a random goal within Chebyshev span
/// `span_limit`, and the union of trajectories must cover at least 95% of
/// free cells.
pub fn generate_stitch_dataset<R: Rng + ?Sized>(
    maze: &Maze,
    span_limit: usize,
    n_trajectories: usize,
    seed: u64,
    rng: &mut R,
) -> Result<Dataset, GridError> {
    if span_limit == 0 {
        return Err(GridError::Generation("span limit must be at least 1".into()));
    }
    if maze.n_free() < 2 {
        return Err(GridError::Generation("maze has fewer than 2 free cells".into()));
    }
    const COVERAGE: f64 = 0.95;
    const MAX_REGENERATIONS: usize = 20;
    const MAX_GOAL_ATTEMPTS: usize = 32;

    for _ in 0..MAX_REGENERATIONS {
        let mut trajectories = Vec::with_capacity(n_trajectories);
        let mut covered = vec![false; maze.n_free()];
        for _ in 0..n_trajectories {
            let start = rng.random_range(0..maze.n_free());
            let in_span: Vec<usize> = (0..maze.n_free())
                .filter(|&c| c != start && maze.chebyshev(start, c) <= span_limit)
                .collect();
            let mut accepted: Option<(Vec<(usize, Action)>, usize)> = None;
            for _ in 0..MAX_GOAL_ATTEMPTS {
                if in_span.is_empty() {
                    break;
                }
                let goal = in_span[rng.random_range(0..in_span.len())];
                let path = shortest_path(maze, start, goal, rng)?;
                let t = path_to_trajectory(maze, &path, 0);
                if t.span(maze) <= span_limit {
                    accepted = Some((path, goal));
                    break;
                }
            }
            let (path, goal) = match accepted {
                Some(p) => p,
                None => {
                    // fall back to an adjacent free cell; span 1 always fits
                    let goal = maze.neighbors[start]
                        .iter()
                        .flatten()
                        .copied()
                        .next()
                        .ok_or_else(|| GridError::Generation(format!("cell {start} is isolated")))?;
                    (shortest_path(maze, start, goal, rng)?, goal)
                }
            };
            let policy_id = (start * maze.n_free() + goal) as i64;
            let t = path_to_trajectory(maze, &path, policy_id);
            for &s in &t.states {
                covered[s] = true;
            }
            trajectories.push(t);
        }
        let coverage = covered.iter().filter(|&&c| c).count() as f64 / maze.n_free() as f64;
        if coverage >= COVERAGE {
            return Ok(Dataset {
                maze_text: maze.text().to_string(),
                span_limit,
                seed,
                trajectories,
            });
        }
    }
    Err(GridError::Generation(format!(
        "could not reach {:.0}% coverage with {n_trajectories} trajectories",
        COVERAGE * 100.0
    )))
}

/// Expands base tasks into one task per waypoint on a shortest path,
/// including the final goal; distances are measured from the base start.
pub fn make_horizon_tasks<R: Rng + ?Sized>(
    maze: &Maze,
    base_tasks: &[EvalTask],
    rng: &mut R,
) -> Result<Vec<EvalTask>, GridError> {
    let mut tasks = Vec::new();
    for base in base_tasks {
        let path = shortest_path(maze, base.start, base.goal, rng)?;
        for (i, &(cell, _)) in path.iter().enumerate().skip(1) {
            tasks.push(EvalTask {
                start: base.start,
                goal: cell,
                bfs_distance: i,
            });
        }
    }
    Ok(tasks)
}

/// Builds an [`EvalTask`] from raw cells, computing the BFS distance.
pub fn make_task(maze: &Maze, start: usize, goal: usize) -> Result<EvalTask, GridError> {
    let dist = bfs_distances(maze, start)?;
    if dist[goal] == UNREACHABLE {
        return Err(GridError::Unsolvable { start, goal });
    }
    Ok(EvalTask {
        start,
        goal,
        bfs_distance: dist[goal],
    })
}

/// Feature encodings for free cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// One-hot over free cells; the encoder must learn all spatial structure.
    OneHot,
    /// `(x, y)` normalized to `[0, 1]`.
    Xy,
}

/// Maps free-cell indices to feature vectors.
#[derive(Debug, Clone)]
pub struct Featurizer {
    mode: FeatureMode,
    n_free: usize,
    coords: Vec<(f64, f64)>,
}

impl Featurizer {
    pub fn new(maze: &Maze, mode: FeatureMode) -> Self {
        let w = (maze.width().max(2) - 1) as f64;
        let h = (maze.height().max(2) - 1) as f64;
        let coords = (0..maze.n_free())
            .map(|c| {
                let (x, y) = maze.cell_xy(c);
                (x as f64 / w, y as f64 / h)
            })
            .collect();
        Self {
            mode,
            n_free: maze.n_free(),
            coords,
        }
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            FeatureMode::OneHot => self.n_free,
            FeatureMode::Xy => 2,
        }
    }

    /// Writes the features of `cell` into `out` (length `dim()`).
    pub fn write_features(&self, cell: usize, out: &mut [f64]) {
        match self.mode {
            FeatureMode::OneHot => {
                out.fill(0.0);
                out[cell] = 1.0;
            }
            FeatureMode::Xy => {
                let (x, y) = self.coords[cell];
                out[0] = x;
                out[1] = y;
            }
        }
    }
}

/// A 19x19 maze with looping corridors; 171 free cells, BFS diameter 36.
/// Used by the stitch-trend experiments and available to the CLI as `@medium`.
pub const MEDIUM_MAZE: &str = "\
###################
#.......#...#.....#
##.####.#.#.#.#.###
#.....#...#...#...#
#.###.#####.#####.#
#...#...#...#...#.#
###.#.#.#.###.#.#.#
#...#...#...#.#...#
#.#.###.###.#.#####
#...#...#.........#
#.#.#.###.#.###.#.#
#.#.#...#.#...#.#.#
###.###.#...#.#.#.#
#...#...#...#.#.#.#
#.#.###.#####.###.#
#.....#...........#
#.###.####.######.#
#...#.............#
###################";

/// The smaller loop maze used by quick examples and unit tests;
/// 77 free cells, BFS diameter 22.
pub const SMALL_MAZE: &str = "\
#############
#.........#.#
###.#####.#.#
#...........#
#.#.#.#.###.#
#.#...#.#...#
###.###.###.#
#.......#...#
#.###.###.###
#...#...#...#
#.#.###.###.#
#...........#
#############";
