use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::mdp_file::parse_mdp_text;
use clap::Args;
use std::path::PathBuf;
use sucrep::linrep::{
    byol_gamma_ode, complete_walk_mdp, eckart_young_error, normalized_sm, ring_walk_mdp,
    torus_walk_mdp, OdeConfig,
};
use sucrep::mdp::{FiniteMdp, TabularPolicy};
use sucrep::rngstream::stream;

#[derive(Args)]
pub struct OdeArgs {
    /// MDP text file (mutually exclusive with --graph)
    #[arg(long, conflicts_with = "graph")]
    pub mdp: Option<PathBuf>,
    /// Built-in symmetric walk: ring:N, grid:WxH (torus), complete:N
    #[arg(long)]
    pub graph: Option<String>,
    #[arg(long)]
    pub gamma: f64,
    /// Representation rank
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 3000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.3)]
    pub step_size: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trace CSV path
    #[arg(long)]
    pub out: PathBuf,
}

fn builtin_graph(spec: &str) -> Result<FiniteMdp, CliError> {
    let (kind, size) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Config(format!("graph spec {spec:?}, expected kind:size")))?;
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| CliError::Config(format!("bad graph size {s:?}")))
    };
    match kind {
        "ring" => Ok(ring_walk_mdp(parse(size)?)?),
        "grid" => {
            let (w, h) = size
                .split_once('x')
                .ok_or_else(|| CliError::Config(format!("grid size {size:?}, expected WxH")))?;
            Ok(torus_walk_mdp(parse(w)?, parse(h)?)?)
        }
        "complete" => Ok(complete_walk_mdp(parse(size)?)?),
        other => Err(CliError::Config(format!("unknown graph kind {other:?}"))),
    }
}

pub fn run(args: OdeArgs) -> Result<(), CliError> {
    let mdp = match (&args.mdp, &args.graph) {
        (Some(path), None) => parse_mdp_text(&std::fs::read_to_string(path)?)?.mdp,
        (None, Some(spec)) => builtin_graph(spec)?,
        _ => return Err(CliError::Config("pass exactly one of --mdp or --graph".into())),
    };
    if args.gamma >= 1.0 || args.gamma < 0.0 {
        return Err(CliError::Config(format!("gamma must lie in [0, 1), got {}", args.gamma)));
    }
    let policy = TabularPolicy::uniform(mdp.n_states(), mdp.n_actions());
    let cfg = OdeConfig {
        step_size: args.step_size,
        n_steps: args.steps,
        ..OdeConfig::default()
    };
    let mut rng = stream(args.seed, "ode-cli");
    let trace = byol_gamma_ode(&mdp, &policy, args.gamma, args.d, &cfg, &mut rng)?;
    std::fs::write(&args.out, trace.to_csv())?;

    let sm = normalized_sm(&mdp, &policy, args.gamma)?;
    let optimum = eckart_young_error(sm.matrix(), args.d);
    let last = trace.records.last().expect("trace non-empty").surrogate;
    let ratio = if optimum > 0.0 { last / optimum } else { f64::NAN };
    RunManifest::new("ode", args.seed)
        .with("gamma", args.gamma)
        .with("d", args.d)
        .with("steps", args.steps)
        .with("step_size", args.step_size)
        .with(
            "source",
            args.graph.clone().unwrap_or_else(|| args.mdp.as_ref().unwrap().display().to_string()),
        )
        .artifact(&args.out.to_string_lossy())
        .save(&args.out.with_extension("manifest.json"))?;
    println!(
        "final surrogate {last:.6e}, rank-{} optimum {optimum:.6e}, ratio {ratio:.4}",
        args.d
    );
    Ok(())
}
