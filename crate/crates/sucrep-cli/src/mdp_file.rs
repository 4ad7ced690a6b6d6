//! Plain-text MDP files.
//!
//! Format, `#` starts a comment:
//!
//! ```text
//! n_states n_actions [gamma]
//! # then n_states * n_actions lines, state-major: P[s][a][0..n_states]
//! 0.0 1.0
//! 1.0 0.0
//! # optional initial distribution, uniform when absent:
//! p0: 0.5 0.5
//! ```

use crate::error::CliError;
use nalgebra::{DMatrix, DVector};
use sucrep::mdp::FiniteMdp;

pub struct MdpFile {
    pub mdp: FiniteMdp,
    pub gamma: Option<f64>,
}

pub fn parse_mdp_text(text: &str) -> Result<MdpFile, CliError> {
    let mut lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    let header = lines
        .next()
        .ok_or_else(|| CliError::Config("empty MDP file".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() < 2 || fields.len() > 3 {
        return Err(CliError::Config(format!(
            "header must be `n_states n_actions [gamma]`, got {header:?}"
        )));
    }
    let n_states: usize = fields[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad n_states {:?}", fields[0])))?;
    let n_actions: usize = fields[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad n_actions {:?}", fields[1])))?;
    let gamma: Option<f64> = match fields.get(2) {
        Some(g) => Some(
            g.parse()
                .map_err(|_| CliError::Config(format!("bad gamma {g:?}")))?,
        ),
        None => None,
    };
    if n_states == 0 || n_actions == 0 {
        return Err(CliError::Config("n_states and n_actions must be positive".into()));
    }

    let mut transitions = vec![DMatrix::<f64>::zeros(n_states, n_states); n_actions];
    for s in 0..n_states {
        for a in 0..n_actions {
            let line = lines.next().ok_or_else(|| {
                CliError::Config(format!("missing transition row for state {s}, action {a}"))
            })?;
            let row = parse_floats(line)?;
            if row.len() != n_states {
                return Err(CliError::Config(format!(
                    "row for state {s}, action {a} has {} entries, expected {n_states}",
                    row.len()
                )));
            }
            for (j, v) in row.iter().enumerate() {
                transitions[a][(s, j)] = *v;
            }
        }
    }
    let initial = match lines.next() {
        Some(line) => {
            let Some(rest) = line.strip_prefix("p0:") else {
                return Err(CliError::Config(format!(
                    "unexpected trailing line {line:?} (p0: expected)"
                )));
            };
            let p0 = parse_floats(rest)?;
            if p0.len() != n_states {
                return Err(CliError::Config(format!(
                    "p0 has {} entries, expected {n_states}",
                    p0.len()
                )));
            }
            DVector::from_vec(p0)
        }
        None => DVector::from_element(n_states, 1.0 / n_states as f64),
    };
    let mdp = FiniteMdp::new(transitions, initial)?;
    Ok(MdpFile { mdp, gamma })
}

fn parse_floats(line: &str) -> Result<Vec<f64>, CliError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Config(format!("bad number {t:?}")))
        })
        .collect()
}

/// Writes a matrix as plain CSV with a header of column indices.
pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:.17e}", m[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_swap_chain_with_gamma() {
        let text = "# swap\n2 1 0.5\n0 1\n1 0\n";
        let parsed = parse_mdp_text(text).unwrap();
        assert_eq!(parsed.mdp.n_states(), 2);
        assert_eq!(parsed.gamma, Some(0.5));
        assert_eq!(parsed.mdp.action_transition(0)[(0, 1)], 1.0);
    }

    #[test]
    fn parses_explicit_p0() {
        let text = "2 1\n0 1\n1 0\np0: 0.25 0.75\n";
        let parsed = parse_mdp_text(text).unwrap();
        assert_eq!(parsed.mdp.initial_dist()[1], 0.75);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(parse_mdp_text("2 1\n0 1\n").is_err());
        assert!(parse_mdp_text("2 1\n0.4 0.4\n0 1\n").is_err());
    }
}
