//! Sampling pipeline: featurized minibatches of `(s_t, a_t, s_{t+k})` with
//! geometric future offsets, plus the one-step transition needed by the TD
//! bootstrap.

use super::TrainError;
use crate::grid::{Action, Dataset, Featurizer, Maze, N_ACTIONS};
use crate::mdp::geometric_sample;
use nalgebra::DMatrix;
use rand::Rng;

/// Dataset prepared for sampling: flattened `(trajectory, t)` pairs and a
/// featurizer over the maze's free cells.
pub struct SampleSource {
    pub featurizer: Featurizer,
    trajectories: Vec<TrajectoryView>,
    /// cumulative transition counts for uniform (trajectory, t) draws
    cumulative: Vec<usize>,
    total_transitions: usize,
}

struct TrajectoryView {
    states: Vec<usize>,
    actions: Vec<usize>,
}

impl SampleSource {
    pub fn new(dataset: &Dataset, maze: &Maze, featurizer: Featurizer) -> Result<Self, TrainError> {
        let mut trajectories = Vec::with_capacity(dataset.trajectories.len());
        let mut cumulative = Vec::with_capacity(dataset.trajectories.len());
        let mut total = 0usize;
        for t in &dataset.trajectories {
            if t.states.len() < 2 {
                continue;
            }
            if t.actions.len() + 1 != t.states.len() {
                return Err(TrainError::Data(format!(
                    "trajectory has {} states but {} actions",
                    t.states.len(),
                    t.actions.len()
                )));
            }
            for &s in &t.states {
                if s >= maze.n_free() {
                    return Err(TrainError::Data(format!("state index {s} out of range")));
                }
            }
            for &a in &t.actions {
                if a >= N_ACTIONS {
                    return Err(TrainError::Data(format!("action index {a} out of range")));
                }
            }
            total += t.states.len() - 1;
            cumulative.push(total);
            trajectories.push(TrajectoryView {
                states: t.states.clone(),
                actions: t.actions.clone(),
            });
        }
        if total == 0 {
            return Err(TrainError::Data("dataset has no usable transitions".into()));
        }
        Ok(Self {
            featurizer,
            trajectories,
            cumulative,
            total_transitions: total,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.featurizer.dim()
    }

    fn locate(&self, flat: usize) -> (usize, usize) {
        let idx = self.cumulative.partition_point(|&c| c <= flat);
        let before = if idx == 0 { 0 } else { self.cumulative[idx - 1] };
        (idx, flat - before)
    }
}

/// One featurized minibatch, columns are samples.
pub struct BatchSample {
    /// `feat x B` features of `s_t`
    pub states: DMatrix<f64>,
    /// action labels `a_t`
    pub actions: Vec<usize>,
    /// `N_ACTIONS x B` one-hot of `a_t`
    pub action_onehot: DMatrix<f64>,
    /// `feat x B` features of the sampled goal `s_{t+k}`
    pub goals: DMatrix<f64>,
    /// sampled offsets `k >= 1`
    pub offsets: Vec<usize>,
    /// `feat x B` features of `s_{t+1}`
    pub next_states: DMatrix<f64>,
    /// `N_ACTIONS x B` one-hot of `a_{t+1}`; `stay` past the last action
    pub next_action_onehot: DMatrix<f64>,
}

/// Draws a batch: a uniform `(trajectory, t)` pair with `t < T`, then a
/// truncated-geometric offset `k` into the remaining trajectory. The `byol`
/// method samples with an effective discount of zero (always `k = 1`),
/// which consumes the same rng draws.
pub fn sample_batch<R: Rng + ?Sized>(
    source: &SampleSource,
    gamma: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<BatchSample, TrainError> {
    if batch_size == 0 {
        return Err(TrainError::Config("batch_size must be positive".into()));
    }
    let feat = source.feature_dim();
    let mut states = DMatrix::zeros(feat, batch_size);
    let mut goals = DMatrix::zeros(feat, batch_size);
    let mut next_states = DMatrix::zeros(feat, batch_size);
    let mut action_onehot = DMatrix::zeros(N_ACTIONS, batch_size);
    let mut next_action_onehot = DMatrix::zeros(N_ACTIONS, batch_size);
    let mut actions = Vec::with_capacity(batch_size);
    let mut offsets = Vec::with_capacity(batch_size);

    let mut col_state = vec![0.0; feat];
    for b in 0..batch_size {
        let flat = rng.random_range(0..source.total_transitions);
        let (ti, t) = source.locate(flat);
        let trajectory = &source.trajectories[ti];
        let horizon = trajectory.states.len() - 1; // T
        let k = geometric_sample(gamma, horizon - t, rng)?;
        let action = trajectory.actions[t];
        let next_action = if t + 1 < horizon {
            trajectory.actions[t + 1]
        } else {
            Action::Stay.index()
        };

        source.featurizer.write_features(trajectory.states[t], &mut col_state);
        states.column_mut(b).copy_from_slice(&col_state);
        source.featurizer.write_features(trajectory.states[t + k], &mut col_state);
        goals.column_mut(b).copy_from_slice(&col_state);
        source
            .featurizer
            .write_features(trajectory.states[t + 1], &mut col_state);
        next_states.column_mut(b).copy_from_slice(&col_state);
        action_onehot[(action, b)] = 1.0;
        next_action_onehot[(next_action, b)] = 1.0;
        actions.push(action);
        offsets.push(k);
    }
    Ok(BatchSample {
        states,
        actions,
        action_onehot,
        goals,
        offsets,
        next_states,
        next_action_onehot,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{generate_stitch_dataset, parse_maze, FeatureMode, SMALL_MAZE};
    use crate::mdp::truncated_geometric_pmf;
    use crate::rngstream::stream;

    fn corridor_source(len: usize) -> (SampleSource, Maze) {
        let maze = parse_maze(&".".repeat(len)).unwrap();
        let mut rng = stream(91, "batch-test");
        let ds = generate_stitch_dataset(&maze, 4, 120, 91, &mut rng).unwrap();
        let f = Featurizer::new(&maze, FeatureMode::OneHot);
        (SampleSource::new(&ds, &maze, f).unwrap(), maze)
    }

    #[test]
    fn gamma_zero_goals_are_next_states() {
        let (source, _) = corridor_source(10);
        let mut rng = stream(92, "batch-test");
        let batch = sample_batch(&source, 0.0, 64, &mut rng).unwrap();
        assert_eq!(batch.goals, batch.next_states);
        assert!(batch.offsets.iter().all(|&k| k == 1));
    }

    #[test]
    fn length_two_trajectories_force_k_one() {
        let maze = parse_maze("...").unwrap();
        let mut rng = stream(93, "batch-test");
        let ds = generate_stitch_dataset(&maze, 1, 40, 93, &mut rng).unwrap();
        assert!(ds.trajectories.iter().all(|t| t.states.len() == 2));
        let f = Featurizer::new(&maze, FeatureMode::OneHot);
        let source = SampleSource::new(&ds, &maze, f).unwrap();
        let batch = sample_batch(&source, 0.9, 50, &mut rng).unwrap();
        assert!(batch.offsets.iter().all(|&k| k == 1));
    }

    #[test]
    fn offset_distribution_matches_truncated_geometric() {
        // long corridor, long trajectories: compare the empirical offset
        // pmf against the analytic truncated law mixed over (traj, t)
        let maze = parse_maze(&".".repeat(30)).unwrap();
        let mut rng = stream(94, "batch-test");
        let ds = generate_stitch_dataset(&maze, 8, 200, 94, &mut rng).unwrap();
        let f = Featurizer::new(&maze, FeatureMode::OneHot);
        let source = SampleSource::new(&ds, &maze, f).unwrap();
        let gamma = 0.9;

        // analytic mixture over uniform (trajectory, t)
        let mut expected = vec![0.0f64; 64];
        let mut total_pairs = 0usize;
        for t in &ds.trajectories {
            if t.states.len() < 2 {
                continue;
            }
            let horizon = t.states.len() - 1;
            total_pairs += horizon;
            for start in 0..horizon {
                let pmf = truncated_geometric_pmf(gamma, horizon - start).unwrap();
                for (i, p) in pmf.iter().enumerate() {
                    expected[i + 1] += p;
                }
            }
        }
        for e in expected.iter_mut() {
            *e /= total_pairs as f64;
        }

        let draws = 100_000;
        let mut counts = vec![0.0f64; 64];
        let mut sample_rng = stream(95, "batch-test");
        let batch_size = 500;
        for _ in 0..draws / batch_size {
            let batch = sample_batch(&source, gamma, batch_size, &mut sample_rng).unwrap();
            for &k in &batch.offsets {
                counts[k] += 1.0;
            }
        }
        for c in counts.iter_mut() {
            *c /= draws as f64;
        }
        let tv: f64 = counts
            .iter()
            .zip(&expected)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv <= 0.02, "offset TV {tv}");
    }

    #[test]
    fn batch_consistency_invariants() {
        let maze = parse_maze(SMALL_MAZE).unwrap();
        let mut rng = stream(96, "batch-test");
        let ds = generate_stitch_dataset(&maze, 4, 150, 96, &mut rng).unwrap();
        let f = Featurizer::new(&maze, FeatureMode::OneHot);
        let source = SampleSource::new(&ds, &maze, f).unwrap();
        let batch = sample_batch(&source, 0.99, 128, &mut rng).unwrap();
        for b in 0..128 {
            assert_eq!(batch.states.column(b).sum(), 1.0);
            assert_eq!(batch.goals.column(b).sum(), 1.0);
            assert_eq!(batch.action_onehot.column(b).sum(), 1.0);
            assert_eq!(batch.action_onehot[(batch.actions[b], b)], 1.0);
            assert!(batch.offsets[b] >= 1);
        }
    }
}
