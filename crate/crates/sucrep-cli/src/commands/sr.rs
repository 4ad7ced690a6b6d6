use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::mdp_file::{matrix_to_csv, parse_mdp_text};
use clap::Args;
use std::path::PathBuf;
use sucrep::mdp::{normalize_sm, policy_transition, successor_representation, TabularPolicy};

#[derive(Args)]
pub struct SrArgs {
    /// MDP text file
    #[arg(long)]
    pub mdp: PathBuf,
    /// Discount factor; falls back to the file header
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output prefix; writes <prefix>_sr.csv and <prefix>_sm.csv
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: SrArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.mdp)?;
    let parsed = parse_mdp_text(&text)?;
    let gamma = args
        .gamma
        .or(parsed.gamma)
        .ok_or_else(|| CliError::Config("gamma missing: pass --gamma or put it in the header".into()))?;
    if gamma >= 1.0 {
        return Err(CliError::Config(format!("gamma must be < 1, got {gamma}")));
    }
    let policy = TabularPolicy::uniform(parsed.mdp.n_states(), parsed.mdp.n_actions());
    let p_pi = policy_transition(&parsed.mdp, &policy)?;
    let sr = successor_representation(&p_pi, gamma)?;
    let residual = (sr.matrix() - &p_pi - &p_pi * sr.matrix() * gamma).amax();
    let sm = normalize_sm(sr.clone())?;

    let stem = args.out.to_string_lossy();
    let sr_path = format!("{stem}_sr.csv");
    let sm_path = format!("{stem}_sm.csv");
    std::fs::write(&sr_path, matrix_to_csv(sr.matrix()))?;
    std::fs::write(&sm_path, matrix_to_csv(sm.matrix()))?;
    RunManifest::new("sr", 0)
        .with("mdp", args.mdp.display())
        .with("gamma", gamma)
        .artifact(&sr_path)
        .artifact(&sm_path)
        .save(&PathBuf::from(format!("{stem}_manifest.json")))?;
    println!("bellman residual: {residual:.3e}");
    println!("wrote {sr_path} and {sm_path}");
    Ok(())
}
