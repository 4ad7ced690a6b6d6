//! Exact finite-MDP mathematics: transition operators, successor
//! representations and measures, successor features, mixture policies,
//! discounted occupancies, and discounted-horizon sampling.
//!
//! All quantities are computed in `f64` with direct linear solves; truncated
//! series are used only as independent test oracles.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Tolerance for stochasticity checks on user-supplied data.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid distribution: {0}")]
    Distribution(String),
    #[error("gamma must satisfy 0 <= gamma < 1, got {0}")]
    Gamma(f64),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("successor matrix is already normalized")]
    AlreadyNormalized,
    #[error("mixture requires at least one policy")]
    EmptyMixture,
    #[error("max_offset must be at least 1")]
    EmptySupport,
}

/// A finite MDP: dense transition tensor `P[s][a][s']` and an initial
/// state distribution.
#[derive(Debug, Clone)]
pub struct FiniteMdp {
    n_states: usize,
    n_actions: usize,
    /// One `n_states x n_states` row-stochastic matrix per action.
    transitions: Vec<DMatrix<f64>>,
    initial_dist: DVector<f64>,
}

impl FiniteMdp {
    /// Builds an MDP from per-action transition matrices, validating that
    /// every `(s, a)` row and the initial distribution are stochastic.
    pub fn new(transitions: Vec<DMatrix<f64>>, initial_dist: DVector<f64>) -> Result<Self, MdpError> {
        if transitions.is_empty() {
            return Err(MdpError::Dimension("no actions".into()));
        }
        let n = transitions[0].nrows();
        if n == 0 {
            return Err(MdpError::Dimension("no states".into()));
        }
        for (a, p) in transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(MdpError::Dimension(format!(
                    "action {a}: expected {n}x{n}, got {}x{}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            for s in 0..n {
                check_distribution_row(&p.row(s).transpose(), &format!("P[{s}][{a}]"))?;
            }
        }
        if initial_dist.len() != n {
            return Err(MdpError::Dimension(format!(
                "initial distribution has length {}, expected {n}",
                initial_dist.len()
            )));
        }
        check_distribution_row(&initial_dist, "p0")?;
        Ok(Self {
            n_states: n,
            n_actions: transitions.len(),
            transitions,
            initial_dist,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Transition matrix for a single action.
    pub fn action_transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    pub fn initial_dist(&self) -> &DVector<f64> {
        &self.initial_dist
    }
}

fn check_distribution_row(row: &DVector<f64>, what: &str) -> Result<(), MdpError> {
    let mut sum = 0.0;
    for &v in row.iter() {
        if v < 0.0 {
            return Err(MdpError::Distribution(format!("{what} has negative entry {v}")));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(MdpError::Distribution(format!("{what} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// Per-state action distributions `pi[s][a]`.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    probs: DMatrix<f64>,
}

impl TabularPolicy {
    pub fn new(probs: DMatrix<f64>) -> Result<Self, MdpError> {
        for s in 0..probs.nrows() {
            check_distribution_row(&probs.row(s).transpose(), &format!("pi[{s}]"))?;
        }
        Ok(Self { probs })
    }

    /// Uniform policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy choosing `action` everywhere.
    pub fn deterministic(n_states: usize, n_actions: usize, action: usize) -> Self {
        let mut probs = DMatrix::zeros(n_states, n_actions);
        for s in 0..n_states {
            probs[(s, action)] = 1.0;
        }
        Self { probs }
    }

    pub fn probs(&self) -> &DMatrix<f64> {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

/// Successor representation `M` of a policy at discount `gamma`, or its
/// normalized form `(1 - gamma) * M` when `normalized` is set.
#[derive(Debug, Clone)]
pub struct SuccessorMatrix {
    m: DMatrix<f64>,
    gamma: f64,
    normalized: bool,
}

impl SuccessorMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}

/// Discounted state-visitation distribution.
#[derive(Debug, Clone)]
pub struct OccupancyVector {
    d: DVector<f64>,
    gamma: f64,
}

impl OccupancyVector {
    pub fn values(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Occupancy counted from the initial state rather than the first
    /// transition: `(1 - gamma) * p0 + gamma * d`. The mixture-policy
    /// identity (`mixture_policy` doc) holds exactly for this form.
    pub fn including_initial(&self, p0: &DVector<f64>) -> OccupancyVector {
        OccupancyVector {
            d: p0 * (1.0 - self.gamma) + &self.d * self.gamma,
            gamma: self.gamma,
        }
    }
}

/// State-to-state transition matrix `P^pi[i][j] = sum_a pi[i][a] P[i][a][j]`.
pub fn policy_transition(mdp: &FiniteMdp, policy: &TabularPolicy) -> Result<DMatrix<f64>, MdpError> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(MdpError::Dimension(format!(
            "policy is {}x{}, MDP is {} states x {} actions",
            policy.n_states(),
            policy.n_actions(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    let n = mdp.n_states();
    let mut p_pi = DMatrix::zeros(n, n);
    for a in 0..mdp.n_actions() {
        let pa = mdp.action_transition(a);
        for i in 0..n {
            let w = policy.probs()[(i, a)];
            if w != 0.0 {
                for j in 0..n {
                    p_pi[(i, j)] += w * pa[(i, j)];
                }
            }
        }
    }
    Ok(p_pi)
}

fn check_gamma(gamma: f64) -> Result<(), MdpError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(MdpError::Gamma(gamma));
    }
    Ok(())
}

/// Solves the Bellman identity `M = P + gamma * P * M` directly:
/// `(I - gamma * P) M = P`.
pub fn successor_representation(p_pi: &DMatrix<f64>, gamma: f64) -> Result<SuccessorMatrix, MdpError> {
    check_gamma(gamma)?;
    let n = p_pi.nrows();
    if p_pi.ncols() != n {
        return Err(MdpError::Dimension(format!(
            "transition matrix is {}x{}",
            p_pi.nrows(),
            p_pi.ncols()
        )));
    }
    let system = DMatrix::identity(n, n) - p_pi * gamma;
    let lu = system.lu();
    let m = lu
        .solve(p_pi)
        .ok_or_else(|| MdpError::Numeric("singular Bellman system".into()))?;
    Ok(SuccessorMatrix {
        m,
        gamma,
        normalized: false,
    })
}

/// Scales an unnormalized successor matrix by `(1 - gamma)`, producing the
/// row-stochastic successor measure.
pub fn normalize_sm(m: SuccessorMatrix) -> Result<SuccessorMatrix, MdpError> {
    if m.normalized {
        return Err(MdpError::AlreadyNormalized);
    }
    Ok(SuccessorMatrix {
        m: m.m * (1.0 - m.gamma),
        gamma: m.gamma,
        normalized: true,
    })
}

/// Successor features `Psi = M * Phi` for basis features `Phi` (one row
/// of features per state).
pub fn successor_features(m: &SuccessorMatrix, phi: &DMatrix<f64>) -> Result<DMatrix<f64>, MdpError> {
    if phi.nrows() != m.m.ncols() {
        return Err(MdpError::Dimension(format!(
            "features have {} rows, successor matrix has {} columns",
            phi.nrows(),
            m.m.ncols()
        )));
    }
    Ok(&m.m * phi)
}

/// Discounted state occupancy from `p0`, counted from the first transition:
/// `(1 - gamma) p0^T sum_{t>=0} gamma^t P^{t+1}`, renormalized to sum one.
pub fn discounted_occupancy(
    p_pi: &DMatrix<f64>,
    p0: &DVector<f64>,
    gamma: f64,
) -> Result<OccupancyVector, MdpError> {
    check_gamma(gamma)?;
    if p0.len() != p_pi.nrows() {
        return Err(MdpError::Dimension(format!(
            "p0 has length {}, transition matrix is {}x{}",
            p0.len(),
            p_pi.nrows(),
            p_pi.ncols()
        )));
    }
    let sm = normalize_sm(successor_representation(p_pi, gamma)?)?;
    let mut d = sm.m.transpose() * p0;
    let total: f64 = d.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(MdpError::Numeric(format!("occupancy mass {total}")));
    }
    d /= total;
    Ok(OccupancyVector { d, gamma })
}

/// Builds the Markovian mixture `beta(a|s)` of several policies with prior
/// `weights`, using occupancy-weighted per-state posteriors:
/// `beta(a|s) ∝ sum_j beta_j(a|s) * weights[j] * d_j(s)`.
///
/// States with zero total occupancy get the uniform action distribution.
///
/// The mixture matches the weighted-average occupancy exactly when the
/// supplied occupancies include the initial state
/// ([`OccupancyVector::including_initial`]); with first-transition
/// occupancies the match is only approximate.
pub fn mixture_policy(
    policies: &[TabularPolicy],
    weights: &DVector<f64>,
    occupancies: &[OccupancyVector],
) -> Result<TabularPolicy, MdpError> {
    if policies.is_empty() {
        return Err(MdpError::EmptyMixture);
    }
    if weights.len() != policies.len() || occupancies.len() != policies.len() {
        return Err(MdpError::Dimension(format!(
            "{} policies, {} weights, {} occupancies",
            policies.len(),
            weights.len(),
            occupancies.len()
        )));
    }
    check_distribution_row(weights, "mixture weights")?;
    let n_states = policies[0].n_states();
    let n_actions = policies[0].n_actions();
    for p in policies {
        if p.n_states() != n_states || p.n_actions() != n_actions {
            return Err(MdpError::Dimension("policy shapes disagree".into()));
        }
    }
    let mut probs = DMatrix::zeros(n_states, n_actions);
    for s in 0..n_states {
        let mut total = 0.0;
        for (j, policy) in policies.iter().enumerate() {
            let w = weights[j] * occupancies[j].values()[s];
            total += w;
            for a in 0..n_actions {
                probs[(s, a)] += w * policy.probs()[(s, a)];
            }
        }
        if total > 0.0 {
            for a in 0..n_actions {
                probs[(s, a)] /= total;
            }
        } else {
            for a in 0..n_actions {
                probs[(s, a)] = 1.0 / n_actions as f64;
            }
        }
    }
    TabularPolicy::new(probs)
}

/// Analytic pmf of the truncated geometric offset distribution on
/// `1..=max_offset` with success probability `1 - gamma`.
pub fn truncated_geometric_pmf(gamma: f64, max_offset: usize) -> Result<Vec<f64>, MdpError> {
    check_gamma(gamma)?;
    if max_offset == 0 {
        return Err(MdpError::EmptySupport);
    }
    if gamma == 0.0 {
        let mut pmf = vec![0.0; max_offset];
        pmf[0] = 1.0;
        return Ok(pmf);
    }
    let mass = 1.0 - gamma.powi(max_offset as i32);
    let pmf = (1..=max_offset)
        .map(|k| (1.0 - gamma) * gamma.powi(k as i32 - 1) / mass)
        .collect();
    Ok(pmf)
}

/// Samples a future offset `k in 1..=max_offset` from the truncated
/// geometric distribution with success probability `1 - gamma`, by inverse
/// CDF. Truncation renormalizes over the available support.
pub fn geometric_sample<R: Rng + ?Sized>(
    gamma: f64,
    max_offset: usize,
    rng: &mut R,
) -> Result<usize, MdpError> {
    check_gamma(gamma)?;
    if max_offset == 0 {
        return Err(MdpError::EmptySupport);
    }
    let u: f64 = rng.random();
    if gamma == 0.0 || max_offset == 1 {
        return Ok(1);
    }
    // CDF(k) = (1 - gamma^k) / (1 - gamma^max); invert and clamp.
    let mass = 1.0 - gamma.powi(max_offset as i32);
    let k = (1.0 - u * mass).ln() / gamma.ln();
    Ok((k.ceil() as usize).clamp(1, max_offset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngstream::stream;
    use proptest::prelude::*;

    /// Truncated-series oracle: sum_{t=0}^{horizon} gamma^t P^{t+1}.
    pub(crate) fn series_successor(p_pi: &DMatrix<f64>, gamma: f64, tol: f64) -> DMatrix<f64> {
        let n = p_pi.nrows();
        let mut acc = DMatrix::<f64>::zeros(n, n);
        let mut power = p_pi.clone();
        let mut scale = 1.0;
        loop {
            acc += &power * scale;
            // remaining tail is bounded by gamma^{t+1}/(1-gamma)
            scale *= gamma;
            if scale / (1.0 - gamma) < tol {
                break;
            }
            power = &power * p_pi;
        }
        acc
    }

    pub(crate) fn random_stochastic(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let mut m = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() + 1e-3);
        for i in 0..n {
            let s: f64 = m.row(i).iter().sum();
            for j in 0..n {
                m[(i, j)] /= s;
            }
        }
        m
    }

    fn swap_chain() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
    }

    #[test]
    fn policy_transition_deterministic_selects_action() {
        let p0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let p1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mdp = FiniteMdp::new(vec![p0.clone(), p1], DVector::from_vec(vec![0.5, 0.5])).unwrap();
        let pi = TabularPolicy::deterministic(2, 2, 0);
        let p_pi = policy_transition(&mdp, &pi).unwrap();
        assert_eq!(p_pi, p0);
    }

    #[test]
    fn policy_transition_single_state() {
        let mdp = FiniteMdp::new(
            vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let pi = TabularPolicy::uniform(1, 1);
        let p_pi = policy_transition(&mdp, &pi).unwrap();
        assert_eq!(p_pi[(0, 0)], 1.0);
    }

    #[test]
    fn policy_transition_mixes_actions() {
        // P[0][a0] = (0,1), P[0][a1] = (1,0), pi(.|0) = (0.5, 0.5)
        let p0 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let p1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let mdp = FiniteMdp::new(vec![p0, p1], DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let pi = TabularPolicy::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0])).unwrap();
        let p_pi = policy_transition(&mdp, &pi).unwrap();
        assert!((p_pi[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p_pi[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn policy_transition_rejects_shape_mismatch() {
        let mdp = FiniteMdp::new(
            vec![DMatrix::from_row_slice(1, 1, &[1.0])],
            DVector::from_vec(vec![1.0]),
        )
        .unwrap();
        let pi = TabularPolicy::uniform(2, 1);
        assert!(matches!(
            policy_transition(&mdp, &pi),
            Err(MdpError::Dimension(_))
        ));
    }

    #[test]
    fn successor_gamma_zero_is_transition() {
        let mut rng = stream(1, "mdp-test");
        let p = random_stochastic(6, &mut rng);
        let m = successor_representation(&p, 0.0).unwrap();
        assert!((m.matrix() - &p).amax() < 1e-15);
    }

    #[test]
    fn successor_identity_self_loops() {
        let p = DMatrix::<f64>::identity(3, 3);
        let m = successor_representation(&p, 0.5).unwrap();
        assert!((m.matrix() - DMatrix::<f64>::identity(3, 3) * 2.0).amax() < 1e-12);
        let normalized = normalize_sm(m).unwrap();
        assert!((normalized.matrix() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn successor_swap_chain_matches_series_oracle() {
        let p = swap_chain();
        let m = successor_representation(&p, 0.5).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0, 2.0 / 3.0]);
        assert!((m.matrix() - &expected).amax() < 1e-12);
        let oracle = series_successor(&p, 0.5, 1e-12);
        assert!((m.matrix() - &oracle).amax() < 1e-10);
        let sm = normalize_sm(m).unwrap();
        let expected_sm =
            DMatrix::from_row_slice(2, 2, &[1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert!((sm.matrix() - &expected_sm).amax() < 1e-12);
    }

    #[test]
    fn successor_rejects_gamma_one() {
        let p = swap_chain();
        assert!(matches!(
            successor_representation(&p, 1.0),
            Err(MdpError::Gamma(_))
        ));
    }

    #[test]
    fn normalize_twice_is_an_error() {
        let p = swap_chain();
        let m = normalize_sm(successor_representation(&p, 0.5).unwrap()).unwrap();
        assert!(matches!(normalize_sm(m), Err(MdpError::AlreadyNormalized)));
    }

    #[test]
    fn successor_features_identity_basis() {
        let p = swap_chain();
        let m = successor_representation(&p, 0.5).unwrap();
        let psi = successor_features(&m, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(&psi, m.matrix());
    }

    #[test]
    fn successor_features_ones_column_on_normalized() {
        let mut rng = stream(2, "mdp-test");
        let p = random_stochastic(5, &mut rng);
        let sm = normalize_sm(successor_representation(&p, 0.9).unwrap()).unwrap();
        let ones = DMatrix::from_element(5, 1, 1.0);
        let psi = successor_features(&sm, &ones).unwrap();
        assert!((psi - ones).amax() < 1e-10);
    }

    #[test]
    fn successor_features_matches_elementwise_sum() {
        let mut rng = stream(3, "mdp-test");
        let p = random_stochastic(3, &mut rng);
        let m = successor_representation(&p, 0.7).unwrap();
        let phi = DMatrix::from_fn(3, 2, |_, _| rng.random::<f64>());
        let psi = successor_features(&m, &phi).unwrap();
        for s in 0..3 {
            for d in 0..2 {
                let mut acc = 0.0;
                for sp in 0..3 {
                    acc += m.matrix()[(s, sp)] * phi[(sp, d)];
                }
                assert!((psi[(s, d)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn occupancy_identity_dynamics_fix_p0() {
        let p = DMatrix::<f64>::identity(3, 3);
        let p0 = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let occ = discounted_occupancy(&p, &p0, 0.8).unwrap();
        assert!((occ.values() - &p0).amax() < 1e-12);
    }

    #[test]
    fn occupancy_gamma_zero_is_one_step_pushforward() {
        let mut rng = stream(4, "mdp-test");
        let p = random_stochastic(4, &mut rng);
        let p0 = DVector::from_vec(vec![0.25; 4]);
        let occ = discounted_occupancy(&p, &p0, 0.0).unwrap();
        let expected = p.transpose() * &p0;
        assert!((occ.values() - expected).amax() < 1e-12);
    }

    #[test]
    fn occupancy_swap_chain() {
        let occ = discounted_occupancy(&swap_chain(), &DVector::from_vec(vec![1.0, 0.0]), 0.5).unwrap();
        assert!((occ.values()[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((occ.values()[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_single_policy_is_identity() {
        let pi = TabularPolicy::new(DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 0.6, 0.4])).unwrap();
        let occ = OccupancyVector {
            d: DVector::from_vec(vec![0.5, 0.5]),
            gamma: 0.9,
        };
        let beta = mixture_policy(&[pi.clone()], &DVector::from_vec(vec![1.0]), &[occ]).unwrap();
        assert!((beta.probs() - pi.probs()).amax() < 1e-15);
    }

    #[test]
    fn mixture_symmetric_split() {
        let a = TabularPolicy::deterministic(1, 2, 0);
        let b = TabularPolicy::deterministic(1, 2, 1);
        let occ = || OccupancyVector {
            d: DVector::from_vec(vec![1.0]),
            gamma: 0.9,
        };
        let beta = mixture_policy(
            &[a, b],
            &DVector::from_vec(vec![0.5, 0.5]),
            &[occ(), occ()],
        )
        .unwrap();
        assert!((beta.probs()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((beta.probs()[(0, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixture_coefficients_follow_weighted_occupancy() {
        // weights (0.25, 0.75), occupancies (0.4, 0.2) -> coefficients (0.4, 0.6)
        let a = TabularPolicy::deterministic(1, 2, 0);
        let b = TabularPolicy::deterministic(1, 2, 1);
        let occ = |v: f64| OccupancyVector {
            d: DVector::from_vec(vec![v]),
            gamma: 0.9,
        };
        let beta = mixture_policy(
            &[a, b],
            &DVector::from_vec(vec![0.25, 0.75]),
            &[occ(0.4), occ(0.2)],
        )
        .unwrap();
        assert!((beta.probs()[(0, 0)] - 0.4).abs() < 1e-12);
        assert!((beta.probs()[(0, 1)] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn mixture_zero_occupancy_state_gets_uniform() {
        let a = TabularPolicy::deterministic(2, 2, 0);
        let b = TabularPolicy::deterministic(2, 2, 1);
        let occ = |v: Vec<f64>| OccupancyVector {
            d: DVector::from_vec(v),
            gamma: 0.9,
        };
        let beta = mixture_policy(
            &[a, b],
            &DVector::from_vec(vec![0.5, 0.5]),
            &[occ(vec![1.0, 0.0]), occ(vec![1.0, 0.0])],
        )
        .unwrap();
        assert!((beta.probs()[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((beta.probs()[(1, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mixture_occupancy_identity_holds_with_initial_inclusive_weights() {
        // The weighted-average-occupancy identity, checked across random
        // instances with posteriors built from initial-inclusive occupancies.
        let mut rng = stream(5, "mdp-mixture");
        for trial in 0..10 {
            let n = 3 + (trial % 4);
            let n_actions = 2 + (trial % 2);
            let gamma = [0.5, 0.9, 0.99][trial % 3];
            let transitions: Vec<DMatrix<f64>> =
                (0..n_actions).map(|_| random_stochastic(n, &mut rng)).collect();
            let mut p0 = DVector::from_fn(n, |_, _| rng.random::<f64>() + 0.05);
            p0 /= p0.sum();
            let mdp = FiniteMdp::new(transitions, p0.clone()).unwrap();

            let n_policies = 2 + (trial % 3);
            let policies: Vec<TabularPolicy> = (0..n_policies)
                .map(|_| {
                    let mut probs = DMatrix::from_fn(n, n_actions, |_, _| rng.random::<f64>() + 0.01);
                    for s in 0..n {
                        let sum: f64 = probs.row(s).iter().sum();
                        for a in 0..n_actions {
                            probs[(s, a)] /= sum;
                        }
                    }
                    TabularPolicy::new(probs).unwrap()
                })
                .collect();
            let mut weights = DVector::from_fn(n_policies, |_, _| rng.random::<f64>() + 0.1);
            weights /= weights.sum();

            let occupancies: Vec<OccupancyVector> = policies
                .iter()
                .map(|pi| {
                    let p_pi = policy_transition(&mdp, pi).unwrap();
                    discounted_occupancy(&p_pi, &p0, gamma).unwrap()
                })
                .collect();
            let inclusive: Vec<OccupancyVector> =
                occupancies.iter().map(|o| o.including_initial(&p0)).collect();

            let beta = mixture_policy(&policies, &weights, &inclusive).unwrap();
            let p_beta = policy_transition(&mdp, &beta).unwrap();
            let d_beta = discounted_occupancy(&p_beta, &p0, gamma).unwrap();

            let mut expected = DVector::zeros(n);
            for (j, occ) in occupancies.iter().enumerate() {
                expected += occ.values() * weights[j];
            }
            let deviation = (d_beta.values() - expected).amax();
            assert!(
                deviation < 1e-10,
                "trial {trial}: mixture occupancy deviates by {deviation}"
            );
        }
    }

    #[test]
    fn geometric_gamma_zero_always_one() {
        let mut rng = stream(6, "mdp-geom");
        for _ in 0..100 {
            assert_eq!(geometric_sample(0.0, 100, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn geometric_single_support_point() {
        let mut rng = stream(7, "mdp-geom");
        for _ in 0..100 {
            assert_eq!(geometric_sample(0.9, 1, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn geometric_zero_support_is_error() {
        let mut rng = stream(8, "mdp-geom");
        assert!(matches!(
            geometric_sample(0.5, 0, &mut rng),
            Err(MdpError::EmptySupport)
        ));
    }

    #[test]
    fn geometric_mean_matches_analytic() {
        let mut rng = stream(9, "mdp-geom");
        let gamma = 0.99;
        let draws = 200_000usize;
        let mut total = 0usize;
        for _ in 0..draws {
            total += geometric_sample(gamma, 1_000_000_000, &mut rng).unwrap();
        }
        let mean = total as f64 / draws as f64;
        let expected = 1.0 / (1.0 - gamma);
        assert!(
            (mean - expected).abs() / expected < 0.02,
            "sample mean {mean} vs analytic {expected}"
        );
    }

    #[test]
    fn geometric_pmf_sums_to_one() {
        for gamma in [0.0, 0.3, 0.9, 0.99] {
            let pmf = truncated_geometric_pmf(gamma, 40).unwrap();
            let total: f64 = pmf.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bellman_identity_holds(seed in 0u64..1000, n in 2usize..12, gi in 0usize..3) {
            let gamma = [0.5, 0.9, 0.99][gi];
            let mut rng = stream(seed, "mdp-prop");
            let p = random_stochastic(n, &mut rng);
            let m = successor_representation(&p, gamma).unwrap();
            let residual = (m.matrix() - &p - &p * m.matrix() * gamma).amax();
            prop_assert!(residual <= 1e-8, "residual {residual}");
        }

        #[test]
        fn normalized_rows_sum_to_one(seed in 0u64..1000, n in 2usize..12, gi in 0usize..3) {
            let gamma = [0.5, 0.9, 0.99][gi];
            let mut rng = stream(seed, "mdp-prop2");
            let p = random_stochastic(n, &mut rng);
            let sm = normalize_sm(successor_representation(&p, gamma).unwrap()).unwrap();
            for s in 0..n {
                let sum: f64 = sm.matrix().row(s).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-8);
            }
        }

        #[test]
        fn solve_matches_series(seed in 0u64..500, n in 2usize..8, gi in 0usize..2) {
            let gamma = [0.5, 0.9][gi];
            let mut rng = stream(seed, "mdp-prop3");
            let p = random_stochastic(n, &mut rng);
            let m = successor_representation(&p, gamma).unwrap();
            let oracle = series_successor(&p, gamma, 1e-9);
            prop_assert!((m.matrix() - oracle).amax() <= 1e-7);
        }

        #[test]
        fn geometric_stays_in_support(seed in 0u64..200, gamma in 0.0f64..0.999, max_offset in 1usize..50) {
            let mut rng = stream(seed, "mdp-prop4");
            let k = geometric_sample(gamma, max_offset, &mut rng).unwrap();
            prop_assert!(k >= 1 && k <= max_offset);
        }
    }
}
