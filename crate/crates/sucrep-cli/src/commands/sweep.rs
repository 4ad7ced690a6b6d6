use crate::error::CliError;
use crate::manifest::RunManifest;
use clap::Args;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use sucrep::eval::{evaluate, ActionSelection, EvalReport};
use sucrep::grid::{bfs_distances, make_horizon_tasks, make_task, Dataset, EvalTask, Maze};
use sucrep::rngstream::stream;
use sucrep::trainer::TrainConfig;
use rand::Rng;

#[derive(Args)]
pub struct SweepArgs {
    /// Dataset JSONL produced by `gen`
    #[arg(long)]
    pub dataset: PathBuf,
    /// Base key = value config applied to every run
    #[arg(long)]
    pub base_config: Option<PathBuf>,
    /// Auxiliary weights to sweep
    #[arg(long, default_value = "1,6,40,100")]
    pub alphas: String,
    /// Methods to compare (ignored with --ablate)
    #[arg(long, default_value = "none,byol_gamma")]
    pub methods: String,
    /// Training seeds
    #[arg(long, default_value = "0,1,2,3,4")]
    pub seeds: String,
    /// Run the ablation preset over byol_gamma components
    #[arg(long, default_value_t = false)]
    pub ablate: bool,
    #[arg(long, default_value_t = 5)]
    pub episodes: usize,
    /// Number of long-horizon base tasks in the generated suite
    #[arg(long, default_value_t = 5)]
    pub n_tasks: usize,
    /// Seed for task-suite construction
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// A deterministic horizon task suite: random starts paired with random
/// goals whose BFS distance lies in `[min_dist, max_dist]`, expanded into
/// one task per shortest-path waypoint. Falls back to the farthest goal
/// when no cell lands in the window.
pub fn default_eval_tasks(
    maze: &Maze,
    count: usize,
    seed: u64,
    min_dist: usize,
    max_dist: usize,
) -> Result<Vec<EvalTask>, CliError> {
    let mut rng = stream(seed, "eval-tasks");
    let mut bases = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut guard = 0;
    while bases.len() < count && guard < count * 40 {
        guard += 1;
        let start = rng.random_range(0..maze.n_free());
        let dist = bfs_distances(maze, start)?;
        let in_window: Vec<usize> = (0..maze.n_free())
            .filter(|&c| dist[c] != sucrep::grid::UNREACHABLE && dist[c] >= min_dist.max(1) && dist[c] <= max_dist)
            .collect();
        let goal = if in_window.is_empty() {
            (0..maze.n_free()).max_by_key(|&c| dist[c]).expect("maze has free cells")
        } else {
            in_window[rng.random_range(0..in_window.len())]
        };
        if seen.insert((start, goal)) && start != goal {
            bases.push(make_task(maze, start, goal)?);
        }
    }
    if bases.is_empty() {
        return Err(CliError::Config("could not build any evaluation tasks".into()));
    }
    let mut task_rng = stream(seed, "eval-task-waypoints");
    Ok(make_horizon_tasks(maze, &bases, &mut task_rng)?)
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: String,
    pub alpha: f64,
    pub seed: u64,
    pub in_distribution: f64,
    pub out_of_distribution: f64,
}

pub struct SweepOutcome {
    pub results: Vec<RunResult>,
    /// variant -> (best alpha, mean ID rate, mean OOD rate)
    pub best: BTreeMap<String, (f64, f64, f64)>,
}

pub struct RunSpec {
    pub variant: String,
    pub alpha: f64,
    pub seed: u64,
    pub config_text: String,
}

fn config_text_with(base: &str, overrides: &[(&str, String)]) -> String {
    let dropped: Vec<&str> = overrides.iter().map(|(k, _)| *k).collect();
    let mut out: String = base
        .lines()
        .filter(|line| {
            let key = line.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim();
            !dropped.contains(&key)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    // method lines must come first so its defaults never override the rest
    let mut sorted = overrides.to_vec();
    sorted.sort_by_key(|(k, _)| if *k == "method" { 0 } else { 1 });
    let mut parts = String::new();
    for (k, v) in sorted {
        parts.push_str(&format!("{k} = {v}\n"));
    }
    out = format!("{parts}{out}");
    out
}

/// The ablation preset: the base objective plus one component removed or
/// swapped per variant.
pub fn ablation_variants() -> Vec<(&'static str, Vec<(&'static str, String)>)> {
    vec![
        ("base", vec![]),
        ("no_action", vec![("action_conditioned", "false".into())]),
        ("l2_loss", vec![("loss_f", "l2".into())]),
        ("no_backward", vec![("bidirectional", "false".into())]),
        ("gamma_zero", vec![("gamma", "0".into())]),
    ]
}

fn worker_count(total: usize) -> usize {
    let cap = std::env::var("SUCREP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        });
    cap.clamp(1, total.max(1))
}

/// Trains and evaluates every (variant, alpha, seed) combination, writing
/// per-run artifacts under `out_dir/runs/` and summary tables at the top.
pub fn run_sweep(
    dataset_bytes: &str,
    dataset: &Dataset,
    maze: &Maze,
    specs: Vec<RunSpec>,
    tasks: &[EvalTask],
    episodes: usize,
    stitch_threshold: usize,
    out_dir: &Path,
) -> Result<SweepOutcome, CliError> {
    std::fs::create_dir_all(out_dir.join("runs"))?;
    let queue: Mutex<Vec<RunSpec>> = Mutex::new(specs);
    let results: Mutex<Vec<RunResult>> = Mutex::new(Vec::new());
    let failures: Mutex<Vec<CliError>> = Mutex::new(Vec::new());
    let n_workers = worker_count(queue.lock().unwrap().len());

    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let spec = match queue.lock().unwrap().pop() {
                    Some(s) => s,
                    None => break,
                };
                match execute_run(dataset_bytes, dataset, maze, &spec, tasks, episodes, stitch_threshold, out_dir) {
                    Ok(result) => results.lock().unwrap().push(result),
                    Err(e) => failures.lock().unwrap().push(e),
                }
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    let mut failures = failures.into_inner().unwrap();
    // deterministic ordering regardless of worker interleaving
    results.sort_by(|a, b| {
        (a.variant.as_str(), a.alpha, a.seed)
            .partial_cmp(&(b.variant.as_str(), b.alpha, b.seed))
            .unwrap()
    });

    let mut summary = String::from("variant,alpha,seed,in_distribution,out_of_distribution\n");
    for r in &results {
        summary.push_str(&format!(
            "{},{},{},{:.6},{:.6}\n",
            r.variant, r.alpha, r.seed, r.in_distribution, r.out_of_distribution
        ));
    }
    std::fs::write(out_dir.join("summary.csv"), &summary)?;

    // best alpha per variant by mean out-of-distribution success
    let mut grouped: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in &results {
        grouped
            .entry((r.variant.clone(), format!("{}", r.alpha)))
            .or_default()
            .push(r);
    }
    let mut best: BTreeMap<String, (f64, f64, f64)> = BTreeMap::new();
    for ((variant, _), rs) in &grouped {
        let mean_id = rs.iter().map(|r| r.in_distribution).sum::<f64>() / rs.len() as f64;
        let mean_ood = rs.iter().map(|r| r.out_of_distribution).sum::<f64>() / rs.len() as f64;
        let alpha = rs[0].alpha;
        match best.get(variant) {
            Some(&(_, _, ood)) if ood >= mean_ood => {}
            _ => {
                best.insert(variant.clone(), (alpha, mean_id, mean_ood));
            }
        }
    }
    let mut best_csv = String::from("variant,best_alpha,mean_in_distribution,mean_out_of_distribution\n");
    println!("variant           best_alpha   in-dist   out-of-dist");
    for (variant, (alpha, id, ood)) in &best {
        best_csv.push_str(&format!("{variant},{alpha},{id:.6},{ood:.6}\n"));
        println!("{variant:<18}{alpha:<13}{id:<10.3}{ood:.3}");
    }
    std::fs::write(out_dir.join("best.csv"), best_csv)?;

    if let Some(first) = failures.pop() {
        return Err(first);
    }
    Ok(SweepOutcome { results, best })
}

#[allow(clippy::too_many_arguments)]
fn execute_run(
    dataset_bytes: &str,
    dataset: &Dataset,
    maze: &Maze,
    spec: &RunSpec,
    tasks: &[EvalTask],
    episodes: usize,
    stitch_threshold: usize,
    out_dir: &Path,
) -> Result<RunResult, CliError> {
    let cfg = TrainConfig::from_text(&spec.config_text)?;
    let run_dir = out_dir.join("runs").join(format!(
        "{}_a{}_s{}",
        spec.variant, spec.alpha, spec.seed
    ));
    super::train::run_training(dataset_bytes, dataset, &cfg, &run_dir)?;

    let ck = sucrep::nn::load_checkpoint(&run_dir.join("checkpoint.bin"))?;
    let (model, cfg, _) = sucrep::trainer::ModelParams::from_checkpoint(&ck)?;
    let report = evaluate(
        maze,
        &model,
        &cfg,
        tasks,
        episodes,
        &[0],
        stitch_threshold,
        ActionSelection::Greedy,
    )?;
    write_report(&run_dir, &report)?;
    Ok(RunResult {
        variant: spec.variant.clone(),
        alpha: spec.alpha,
        seed: spec.seed,
        in_distribution: report.in_distribution_rate().unwrap_or(0.0),
        out_of_distribution: report.out_of_distribution_rate().unwrap_or(0.0),
    })
}

fn write_report(run_dir: &Path, report: &EvalReport) -> Result<(), CliError> {
    std::fs::write(run_dir.join("eval_report.csv"), report.to_csv())?;
    std::fs::write(run_dir.join("eval_summary.json"), report.summary_json())?;
    Ok(())
}

pub fn run(args: SweepArgs) -> Result<(), CliError> {
    let dataset_bytes = std::fs::read_to_string(&args.dataset)?;
    let dataset = Dataset::from_jsonl(&dataset_bytes)?;
    let maze = dataset.maze()?;
    let alphas = super::parse_f64_list(&args.alphas)?;
    let seeds = super::parse_u64_list(&args.seeds)?;
    let base_text = match &args.base_config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };

    let variants: Vec<(String, Vec<(&str, String)>)> = if args.ablate {
        ablation_variants()
            .into_iter()
            .map(|(name, mut overrides)| {
                overrides.push(("method", "byol_gamma".into()));
                (name.to_string(), overrides)
            })
            .collect()
    } else {
        args.methods
            .split(',')
            .map(|m| {
                let m = m.trim().to_string();
                (m.clone(), vec![("method", m)])
            })
            .collect()
    };

    let mut specs = Vec::new();
    for (variant, overrides) in &variants {
        for &alpha in &alphas {
            for &seed in &seeds {
                let mut all = overrides.clone();
                all.push(("alpha", format!("{alpha}")));
                all.push(("seed", format!("{seed}")));
                specs.push(RunSpec {
                    variant: variant.clone(),
                    alpha,
                    seed,
                    config_text: config_text_with(&base_text, &all),
                });
            }
        }
    }
    let total_runs = specs.len();

    // goals between 3x and 6x the span limit force stitching while
    // staying in the solvable regime
    let span = dataset.span_limit.max(1);
    let tasks = default_eval_tasks(&maze, args.n_tasks, args.task_seed, 3 * span, 6 * span)?;
    let outcome = run_sweep(
        &dataset_bytes,
        &dataset,
        &maze,
        specs,
        &tasks,
        args.episodes,
        dataset.span_limit,
        &args.out_dir,
    )?;
    RunManifest::new("sweep", args.task_seed)
        .with("dataset", args.dataset.display())
        .with("alphas", &args.alphas)
        .with("ablate", args.ablate)
        .with("runs", total_runs)
        .with("tasks", tasks.len())
        .artifact("summary.csv")
        .artifact("best.csv")
        .save(&args.out_dir.join("manifest.json"))?;
    println!(
        "{} runs across {} variants complete; summaries in {}",
        outcome.results.len(),
        outcome.best.len(),
        args.out_dir.display()
    );
    Ok(())
}
