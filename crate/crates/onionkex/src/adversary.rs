//! Correlation analysis: what a relay-level adversary can link.
//!
//! An adversary controlling a fraction `f` of the relay population sees both
//! endpoints of one rendezvous circuit only when it controls the entry guard
//! on each side, which happens with probability `f^2` under uniform
//! independent selection. A session whose key travels over `n` circuits is
//! linked only if every circuit is exposed:
//!
//! * fresh guards on both sides: `f^(2n)`;
//! * the responder pinned to one guard, initiators fresh: `f^(n+1)`;
//! * both sides pinned: `f^2`, independent of `n`;
//! * bandwidth-weighted selection: `f` is replaced by the compromised share
//!   of total bandwidth weight `W_S / W`.
//!
//! The Monte Carlo harness replays the same path-sampling code the simulator
//! uses and decides linkage from the observation records alone (relay ids
//! and compromised flags), never from ground truth. Estimates carry the
//! binomial standard error at the analytic value; when the analytic
//! probability is too small to resolve at the configured trial count, a
//! Clopper-Pearson 95% upper confidence bound is reported instead.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::oniontransport::sim::observe_circuit;
use crate::oniontransport::{GuardPolicy, NetworkError, RelayNetwork, SelectionPolicy};
use crate::seeds::derive_subseed;

/// Errors from analytic helpers and experiments.
#[derive(Debug, Error, PartialEq)]
pub enum AdversaryError {
    /// The compromised fraction must lie in `[0, 1)`.
    #[error("compromised fraction {0} outside [0, 1)")]
    InvalidFraction(f64),
    /// Sessions need at least one circuit.
    #[error("a session needs at least one circuit, got {0}")]
    InvalidCircuitCount(usize),
    /// Experiments need at least one trial.
    #[error("an experiment needs at least one trial")]
    NoTrials,
    /// A sweep needs at least one grid point.
    #[error("sweep grid is empty")]
    EmptyGrid,
    /// The sweep grid asked for a fraction the relay count cannot realize.
    #[error("fraction {fraction} of {relay_count} relays is not a whole number")]
    UnrealizableFraction {
        /// Requested compromised fraction.
        fraction: f64,
        /// Relay population size.
        relay_count: usize,
    },
    /// Network construction or sampling failed.
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn check_fraction(f: f64) -> Result<(), AdversaryError> {
    if !f.is_finite() || !(0.0..1.0).contains(&f) {
        return Err(AdversaryError::InvalidFraction(f));
    }
    Ok(())
}

fn check_circuits(n: usize) -> Result<(), AdversaryError> {
    if n == 0 {
        return Err(AdversaryError::InvalidCircuitCount(n));
    }
    Ok(())
}

/// Probability that one circuit has compromised guards on both sides: `f^2`.
pub fn per_circuit_corr(f: f64) -> Result<f64, AdversaryError> {
    check_fraction(f)?;
    Ok(f * f)
}

/// Probability that all `n` fresh-guard circuits of a session are exposed:
/// `f^(2n)`.
pub fn multi_circuit_bound(f: f64, n: usize) -> Result<f64, AdversaryError> {
    check_fraction(f)?;
    check_circuits(n)?;
    Ok(f.powi(2 * n as i32))
}

/// Exposure probability when the responder keeps one pinned guard and the
/// initiator side draws fresh guards: `f^(n+1)`.
pub fn pinned_service_analytic(f: f64, n: usize) -> Result<f64, AdversaryError> {
    check_fraction(f)?;
    check_circuits(n)?;
    Ok(f.powi(n as i32 + 1))
}

/// Exposure probability when both endpoints keep pinned guards: `f^2`,
/// independent of the circuit count.
pub fn both_pinned_analytic(f: f64, n: usize) -> Result<f64, AdversaryError> {
    check_fraction(f)?;
    check_circuits(n)?;
    Ok(f * f)
}

/// Per-circuit exposure under bandwidth-weighted selection: `(W_S / W)^2`
/// for compromised weight `W_S` out of total weight `W`.
pub fn weighted_per_circuit_corr(network: &RelayNetwork) -> f64 {
    let share = network.compromised_weight() / network.total_weight();
    share * share
}

/// The single-guard compromise probability the analytic bounds are built
/// from: the compromised relay-count fraction under uniform selection, the
/// compromised weight share under bandwidth-weighted selection.
pub fn guard_compromise_probability(network: &RelayNetwork) -> f64 {
    match network.selection_policy() {
        SelectionPolicy::Uniform => network.compromised_fraction(),
        SelectionPolicy::BandwidthWeighted => {
            network.compromised_weight() / network.total_weight()
        }
    }
}

/// The session-linkage probability for a guard policy, single-guard
/// compromise probability `q`, and `n` circuits per session.
pub fn analytic_linkage_probability(
    policy: GuardPolicy,
    q: f64,
    n: usize,
) -> Result<f64, AdversaryError> {
    match policy {
        GuardPolicy::FreshPerCircuit => multi_circuit_bound(q, n),
        GuardPolicy::PinnedServiceSide => pinned_service_analytic(q, n),
        GuardPolicy::PinnedPerEndpoint => both_pinned_analytic(q, n),
    }
}

/// One Monte Carlo linkage experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageExperiment {
    /// Guard behavior under test.
    pub guard_policy: GuardPolicy,
    /// Circuits per session (`n`).
    pub circuits_per_session: usize,
    /// Independent sessions to simulate.
    pub trials: u64,
    /// Seed for the experiment's random stream.
    pub seed: u64,
}

/// Estimate produced by [`run_linkage_experiment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageEstimate {
    /// Sessions simulated.
    pub trials: u64,
    /// Sessions the adversary linked (all circuits exposed).
    pub successes: u64,
    /// `successes / trials`.
    pub p_hat: f64,
    /// Binomial standard error at the analytic value,
    /// `sqrt(analytic * (1 - analytic) / trials)`.
    pub std_err: f64,
    /// The analytic linkage probability for this configuration.
    pub analytic: f64,
    /// Clopper-Pearson 95% upper confidence bound on the linkage
    /// probability; set when the analytic value is below the experiment's
    /// resolution (fewer than 10 expected successes).
    pub upper_bound_95: Option<f64>,
}

impl LinkageEstimate {
    /// Whether the Monte Carlo outcome is consistent with the analytic
    /// value: within three standard errors when resolvable, below the 95%
    /// upper confidence bound when the event is too rare to resolve, and
    /// exactly zero successes when the analytic probability is zero.
    pub fn consistent_with_analytic(&self) -> bool {
        if self.analytic == 0.0 {
            return self.successes == 0;
        }
        match self.upper_bound_95 {
            Some(upper) => self.analytic <= upper,
            None => (self.p_hat - self.analytic).abs() <= 3.0 * self.std_err,
        }
    }
}

/// Clopper-Pearson 95% upper confidence bound for `successes` in `trials`:
/// the 0.95 quantile of `Beta(successes + 1, trials - successes)`.
///
/// The quantile is inverted by bisecting the Beta CDF directly; the
/// library's generic quantile search is too coarse near zero, exactly
/// where rare-event bounds live.
fn clopper_pearson_upper_95(successes: u64, trials: u64) -> f64 {
    if successes >= trials {
        return 1.0;
    }
    let alpha = (successes + 1) as f64;
    let beta = (trials - successes) as f64;
    let dist = Beta::new(alpha, beta).expect("positive shape parameters");
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if dist.cdf(mid) < 0.95 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Runs a linkage experiment against `network`.
///
/// Every trial is one independent session: pinned guards (if the policy
/// keeps any) are drawn once per trial, then `n` circuits are sampled and
/// the trial counts as linked only if the observation of every circuit
/// shows compromised guards on both sides. The decision reads the
/// observations exclusively; ground truth never leaks into it.
pub fn run_linkage_experiment(
    network: &RelayNetwork,
    experiment: &LinkageExperiment,
) -> Result<LinkageEstimate, AdversaryError> {
    check_circuits(experiment.circuits_per_session)?;
    if experiment.trials == 0 {
        return Err(AdversaryError::NoTrials);
    }
    let n = experiment.circuits_per_session;
    let mut rng = ChaCha20Rng::seed_from_u64(experiment.seed);
    let mut successes = 0u64;
    let mut circuit_id = 0u64;
    for _ in 0..experiment.trials {
        let (client_pin, service_pin) = match experiment.guard_policy {
            GuardPolicy::FreshPerCircuit => (None, None),
            GuardPolicy::PinnedServiceSide => (None, Some(network.sample_guard(&mut rng)?)),
            GuardPolicy::PinnedPerEndpoint => {
                (Some(network.sample_guard(&mut rng)?), Some(network.sample_guard(&mut rng)?))
            }
        };
        let mut linked = true;
        for _ in 0..n {
            circuit_id += 1;
            let (_, observation) =
                observe_circuit(network, circuit_id, client_pin, service_pin, &mut rng)?;
            if !observation.both_guards_compromised() {
                linked = false;
                break;
            }
        }
        successes += u64::from(linked);
    }

    let q = guard_compromise_probability(network);
    let analytic = analytic_linkage_probability(experiment.guard_policy, q, n)?;
    let trials = experiment.trials as f64;
    let p_hat = successes as f64 / trials;
    let std_err = (analytic * (1.0 - analytic) / trials).sqrt();
    let upper_bound_95 = (analytic < 10.0 / trials && analytic > 0.0)
        .then(|| clopper_pearson_upper_95(successes, experiment.trials));
    Ok(LinkageEstimate {
        trials: experiment.trials,
        successes,
        p_hat,
        std_err,
        analytic,
        upper_bound_95,
    })
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPoint {
    /// Guard behavior.
    pub guard_policy: GuardPolicy,
    /// Compromised fraction of the relay population.
    pub compromised_fraction: f64,
    /// Circuits per session.
    pub circuits_per_session: usize,
}

/// A sweep over linkage configurations on uniform-weight networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Relay population size for every point.
    pub relay_count: usize,
    /// Trials per point.
    pub trials: u64,
    /// Master seed; each point derives its own sub-seed from it.
    pub seed: u64,
    /// The grid.
    pub points: Vec<SweepPoint>,
}

/// One CSV row of a sweep result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// The configuration of this row.
    pub point: SweepPoint,
    /// The estimate it produced.
    pub estimate: LinkageEstimate,
}

/// The policy label used in CSV output.
pub fn policy_label(policy: GuardPolicy) -> &'static str {
    match policy {
        GuardPolicy::FreshPerCircuit => "fresh_per_circuit",
        GuardPolicy::PinnedPerEndpoint => "pinned_per_endpoint",
        GuardPolicy::PinnedServiceSide => "pinned_service_side",
    }
}

/// Column header of [`sweep_to_csv`].
pub const SWEEP_CSV_HEADER: &str = "policy,f,n,trials,successes,p_hat,std_err,analytic,ratio";

/// Runs every grid point and returns the rows in grid order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>, AdversaryError> {
    if config.points.is_empty() {
        return Err(AdversaryError::EmptyGrid);
    }
    let mut rows = Vec::with_capacity(config.points.len());
    for (index, point) in config.points.iter().enumerate() {
        check_fraction(point.compromised_fraction)?;
        let exact = point.compromised_fraction * config.relay_count as f64;
        let compromised_count = exact.round() as usize;
        if (exact - compromised_count as f64).abs() > 1e-9 {
            return Err(AdversaryError::UnrealizableFraction {
                fraction: point.compromised_fraction,
                relay_count: config.relay_count,
            });
        }
        let network = RelayNetwork::with_uniform_weights(
            config.relay_count,
            compromised_count,
            SelectionPolicy::Uniform,
            point.guard_policy,
        )?;
        let experiment = LinkageExperiment {
            guard_policy: point.guard_policy,
            circuits_per_session: point.circuits_per_session,
            trials: config.trials,
            seed: derive_subseed(config.seed, &format!("sweep-point-{index}")),
        };
        let estimate = run_linkage_experiment(&network, &experiment)?;
        rows.push(SweepRow { point: *point, estimate });
    }
    Ok(rows)
}

/// Renders sweep rows as CSV. The output is a pure function of the rows:
/// reruns of the same configuration produce byte-identical text.
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let e = &row.estimate;
        let ratio = e.p_hat / e.analytic;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            policy_label(row.point.guard_policy),
            row.point.compromised_fraction,
            row.point.circuits_per_session,
            e.trials,
            e.successes,
            e.p_hat,
            e.std_err,
            e.analytic,
            ratio,
        ));
    }
    out
}
