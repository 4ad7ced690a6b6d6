//! Policy evaluation: rollouts, horizon-bucketed success rates, the
//! generalization gap, and representation-similarity heatmaps.

use crate::grid::{bfs_distances, step, Action, EvalTask, Featurizer, GridError, Maze, N_ACTIONS};
use crate::nn::infer;
use crate::rngstream::indexed_stream;
use crate::trainer::{policy_goal_input, ModelParams, TrainConfig, TrainError};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no tasks to evaluate")]
    NoTasks,
    #[error("bucket {0} is empty")]
    EmptyBucket(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
}

/// Aggregated evaluation results, bucketed by BFS distance.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// `(task, successes, episodes)` per evaluated task
    pub per_task: Vec<(EvalTask, usize, usize)>,
    /// distance -> (successes, episodes)
    pub buckets: BTreeMap<usize, (usize, usize)>,
    /// the dataset's trajectory span limit; distances beyond it require
    /// stitching
    pub stitch_threshold: usize,
    pub seeds: usize,
}

impl EvalReport {
    pub fn task_rate(&self, index: usize) -> f64 {
        let (_, s, e) = self.per_task[index];
        s as f64 / e as f64
    }

    pub fn bucket_rate(&self, distance: usize) -> Option<f64> {
        self.buckets.get(&distance).map(|&(s, e)| s as f64 / e as f64)
    }

    /// Mean success over tasks with distance <= the stitch threshold.
    pub fn in_distribution_rate(&self) -> Option<f64> {
        self.mean_rate(|d| d <= self.stitch_threshold)
    }

    /// Mean success over tasks with distance > the stitch threshold.
    pub fn out_of_distribution_rate(&self) -> Option<f64> {
        self.mean_rate(|d| d > self.stitch_threshold)
    }

    fn mean_rate(&self, keep: impl Fn(usize) -> bool) -> Option<f64> {
        let mut successes = 0usize;
        let mut episodes = 0usize;
        for &(task, s, e) in &self.per_task {
            if keep(task.bfs_distance) {
                successes += s;
                episodes += e;
            }
        }
        (episodes > 0).then(|| successes as f64 / episodes as f64)
    }

    /// CSV rows `(task_id, distance, successes, episodes, rate)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("task_id,distance,successes,episodes,rate\n");
        for (i, &(task, s, e)) in self.per_task.iter().enumerate() {
            out.push_str(&format!(
                "{i},{},{s},{e},{:.6}\n",
                task.bfs_distance,
                s as f64 / e as f64
            ));
        }
        out
    }

    /// One-line JSON summary of the bucketed rates.
    pub fn summary_json(&self) -> String {
        let buckets: Vec<String> = self
            .buckets
            .iter()
            .map(|(d, &(s, e))| format!("\"{d}\":{:.6}", s as f64 / e as f64))
            .collect();
        format!(
            "{{\"stitch_threshold\":{},\"seeds\":{},\"in_distribution\":{},\"out_of_distribution\":{},\"buckets\":{{{}}}}}",
            self.stitch_threshold,
            self.seeds,
            self.in_distribution_rate().map(|r| format!("{r:.6}")).unwrap_or("null".into()),
            self.out_of_distribution_rate().map(|r| format!("{r:.6}")).unwrap_or("null".into()),
            buckets.join(",")
        )
    }
}

/// Action selection for rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSelection {
    /// argmax over logits, ties to the lowest index
    Greedy,
    /// sample from the softmax over logits
    Stochastic,
}

/// Rolls out the policy on one task. Success means occupying the goal cell
/// at any step up to `max_steps` (step 0 included).
pub fn rollout<R: Rng + ?Sized>(
    maze: &Maze,
    model: &ModelParams,
    cfg: &TrainConfig,
    task: &EvalTask,
    max_steps: usize,
    selection: ActionSelection,
    rng: &mut R,
) -> Result<(bool, Vec<usize>), EvalError> {
    let featurizer = Featurizer::new(maze, cfg.features);
    let goal_embed = {
        let mut buf = vec![0.0; featurizer.dim()];
        featurizer.write_features(task.goal, &mut buf);
        let features = DMatrix::from_column_slice(featurizer.dim(), 1, &buf);
        policy_goal_input(model, &features, cfg)?
    };
    let goal_vec = DVector::from_column_slice(goal_embed.column(0).as_slice());

    let mut cell = task.start;
    let mut path = vec![cell];
    if cell == task.goal {
        return Ok((true, path));
    }
    let mut buf = vec![0.0; featurizer.dim()];
    for _ in 0..max_steps {
        featurizer.write_features(cell, &mut buf);
        let features = DMatrix::from_column_slice(featurizer.dim(), 1, &buf);
        let state_embed = model.embed_state(&features)?;
        let state_vec = DVector::from_column_slice(state_embed.column(0).as_slice());
        let logits = model.actor_logits(&state_vec, &goal_vec)?;
        let action = match selection {
            ActionSelection::Greedy => {
                let mut best = 0;
                for a in 1..N_ACTIONS {
                    if logits[a] > logits[best] {
                        best = a;
                    }
                }
                best
            }
            ActionSelection::Stochastic => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut draw = rng.random::<f64>() * total;
                let mut chosen = N_ACTIONS - 1;
                for (a, w) in weights.iter().enumerate() {
                    if draw < *w {
                        chosen = a;
                        break;
                    }
                    draw -= w;
                }
                chosen
            }
        };
        cell = step(maze, cell, Action::from_index(action).expect("valid action index"));
        path.push(cell);
        if cell == task.goal {
            return Ok((true, path));
        }
    }
    Ok((false, path))
}

/// Default episode cap: four times the maze diameter (longest shortest
/// path between free cells, found by double BFS).
pub fn default_max_steps(maze: &Maze) -> usize {
    let from_zero = bfs_distances(maze, 0).expect("cell 0 is free");
    let far = (0..maze.n_free())
        .max_by_key(|&c| from_zero[c])
        .expect("maze has free cells");
    let from_far = bfs_distances(maze, far).expect("free cell");
    let diameter = (0..maze.n_free()).map(|c| from_far[c]).max().unwrap_or(1);
    4 * diameter.max(1)
}

/// Evaluates the policy over tasks, episodes, and seeds. Per-episode rngs
/// are derived from `(seed, task index, episode index)`, so results do not
/// depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    maze: &Maze,
    model: &ModelParams,
    cfg: &TrainConfig,
    tasks: &[EvalTask],
    episodes_per_task: usize,
    seeds: &[u64],
    stitch_threshold: usize,
    selection: ActionSelection,
) -> Result<EvalReport, EvalError> {
    if tasks.is_empty() || episodes_per_task == 0 || seeds.is_empty() {
        return Err(EvalError::NoTasks);
    }
    let max_steps = default_max_steps(maze);
    let mut per_task = Vec::with_capacity(tasks.len());
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (ti, task) in tasks.iter().enumerate() {
        let mut successes = 0;
        let mut episodes = 0;
        for seed in seeds {
            for episode in 0..episodes_per_task {
                let mut rng = indexed_stream(*seed, "eval-episode", (ti * episodes_per_task + episode) as u64);
                let (ok, _) = rollout(maze, model, cfg, task, max_steps, selection, &mut rng)?;
                successes += usize::from(ok);
                episodes += 1;
            }
        }
        per_task.push((*task, successes, episodes));
        let bucket = buckets.entry(task.bfs_distance).or_insert((0, 0));
        bucket.0 += successes;
        bucket.1 += episodes;
    }
    Ok(EvalReport {
        per_task,
        buckets,
        stitch_threshold,
        seeds: seeds.len(),
    })
}

/// Mean out-of-distribution success minus mean in-distribution success;
/// closer to zero is better.
pub fn generalization_gap(report_in: &EvalReport, report_out: &EvalReport) -> Result<f64, EvalError> {
    let id = report_in
        .in_distribution_rate()
        .ok_or_else(|| EvalError::EmptyBucket("in-distribution".into()))?;
    let ood = report_out
        .out_of_distribution_rate()
        .ok_or_else(|| EvalError::EmptyBucket("out-of-distribution".into()))?;
    Ok(ood - id)
}

/// Cosine-similarity heatmap between the forward prediction at every free
/// cell and the goal embedding. Wall cells carry NaN.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    /// row-major `width x height`; NaN on walls
    pub values: Vec<f64>,
    pub goal: usize,
}

impl Heatmap {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// CSV rows `x,y,value` over free cells only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,value\n");
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.at(x, y);
                if v.is_finite() {
                    out.push_str(&format!("{x},{y},{v:.6}\n"));
                }
            }
        }
        out
    }

    /// 8-bit PGM (`P2`): walls are 0, similarities map affinely from
    /// `[-1, 1]` to `[1, 255]`.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for y in 0..self.height {
            let row: Vec<String> = (0..self.width)
                .map(|x| {
                    let v = self.at(x, y);
                    if v.is_finite() {
                        let scaled = ((v + 1.0) / 2.0 * 254.0).round() + 1.0;
                        format!("{}", scaled.clamp(1.0, 255.0) as u32)
                    } else {
                        "0".to_string()
                    }
                })
                .collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Builds the similarity heatmap for a fixed goal: for every free cell `s`,
/// the cosine similarity between the ensemble-mean forward prediction
/// (action-conditioned if configured) and the ensemble-mean goal embedding.
/// Zero-norm embeddings yield NaN with a stderr-free sentinel.
pub fn similarity_heatmap(
    maze: &Maze,
    model: &ModelParams,
    cfg: &TrainConfig,
    goal: usize,
    action: Option<Action>,
) -> Result<Heatmap, EvalError> {
    let featurizer = Featurizer::new(maze, cfg.features);
    let feat = featurizer.dim();

    // feature matrix over all free cells
    let mut features = DMatrix::zeros(feat, maze.n_free());
    let mut buf = vec![0.0; feat];
    for c in 0..maze.n_free() {
        featurizer.write_features(c, &mut buf);
        features.column_mut(c).copy_from_slice(&buf);
    }

    // ensemble-mean forward predictions for every cell
    let mut preds: Option<DMatrix<f64>> = None;
    for (enc, pred) in model.encoders.iter().zip(&model.forward_predictors) {
        let z = infer(&model.specs.encoder, enc, &features)?;
        let pred_in = if cfg.action_conditioned {
            let chosen = action.unwrap_or(Action::Stay);
            let mut m = DMatrix::zeros(z.nrows() + N_ACTIONS, z.ncols());
            m.rows_mut(0, z.nrows()).copy_from(&z);
            for c in 0..maze.n_free() {
                m[(z.nrows() + chosen.index(), c)] = 1.0;
            }
            m
        } else {
            z
        };
        let p = infer(&model.specs.forward_predictor, pred, &pred_in)?;
        preds = Some(match preds {
            Some(acc) => acc + p,
            None => p,
        });
    }
    let preds = preds.expect("ensemble non-empty") / model.ensemble_size() as f64;

    let goal_embed = {
        featurizer.write_features(goal, &mut buf);
        let gf = DMatrix::from_column_slice(feat, 1, &buf);
        model.embed_state(&gf)?
    };
    let goal_vec = goal_embed.column(0);
    let goal_norm = goal_vec.norm();

    let mut values = vec![f64::NAN; maze.width() * maze.height()];
    for c in 0..maze.n_free() {
        let (x, y) = maze.cell_xy(c);
        let p = preds.column(c);
        let denom = p.norm() * goal_norm;
        values[y * maze.width() + x] = if denom < 1e-12 {
            f64::NAN
        } else {
            (p.dot(&goal_vec) / denom).clamp(-1.0, 1.0)
        };
    }
    Ok(Heatmap {
        width: maze.width(),
        height: maze.height(),
        values,
        goal,
    })
}
