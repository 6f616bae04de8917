//! Relay-network model and deterministic simulated onion transport.
//!
//! A [`RelayNetwork`] is a population of relays, some marked compromised,
//! plus a relay-selection policy and a guard policy. Circuits are six-relay
//! rendezvous paths: the initiator contributes `[guard, middle, rendezvous]`
//! and the responder `[guard, middle, exit_to_rendezvous]`. The three relays
//! within a half are distinct; the two halves are sampled independently, so a
//! relay may serve in both halves. That independence is what makes the
//! both-guards-compromised event have probability exactly f^2 under uniform
//! selection.
//!
//! [`sim::SimNetwork`] drives message delivery over these paths with a
//! logical millisecond clock, NEWNYM fresh-circuit semantics, and an
//! append-only observation log that records, per send, which relays on the
//! path are compromised. [`socks`] is an optional adapter speaking SOCKS5 and
//! the control-port protocol to a real onion-routing daemon.

pub mod sim;
pub mod socks;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from network construction and path sampling.
#[derive(Debug, Error, PartialEq)]
pub enum NetworkError {
    /// Fewer relays than a valid network needs.
    #[error("network needs at least 6 relays, got {0}")]
    TooFewRelays(usize),
    /// A relay declared a non-positive or non-finite bandwidth weight.
    #[error("relay {0} has invalid bandwidth weight {1}")]
    InvalidWeight(u32, f64),
    /// Duplicate relay identifier.
    #[error("duplicate relay id {0}")]
    DuplicateRelayId(u32),
    /// The compromised fraction must stay below 1.
    #[error("all {0} relays are compromised; the compromised fraction must be < 1")]
    EveryRelayCompromised(usize),
    /// Not enough eligible relays to fill a circuit half.
    #[error("cannot sample a circuit half from {0} eligible relays")]
    TooFewEligible(usize),
    /// A pinned or listed relay id does not exist.
    #[error("unknown relay id {0}")]
    UnknownRelay(u32),
    /// Configuration file contents are inconsistent.
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

/// Identifier of a relay within one network.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct RelayId(pub u32);

impl std::fmt::Display for RelayId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One relay: identity, consensus-style bandwidth weight, compromise flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Relay {
    /// Network-unique identifier.
    pub id: RelayId,
    /// Positive selection weight in consensus-weight units.
    pub bandwidth_weight: f64,
    /// Whether the adversary surveils or operates this relay.
    pub compromised: bool,
}

/// How relays are drawn for circuit positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Every relay equally likely.
    Uniform,
    /// Probability proportional to bandwidth weight.
    BandwidthWeighted,
}

/// How guard (first-hop) relays persist across circuits.
///
/// `PinnedServiceSide` pins only the responder's guard while the initiator
/// keeps drawing fresh guards; it models an endpoint that keeps serving from
/// one entry point while its peers churn circuits, and is the regime where
/// all-circuit linkage rises from f^2n to f^(n+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardPolicy {
    /// Both halves draw a fresh guard for every circuit.
    FreshPerCircuit,
    /// Every endpoint keeps one guard for all its circuits.
    PinnedPerEndpoint,
    /// Only responding (destination) endpoints keep a pinned guard.
    PinnedServiceSide,
}

/// A validated relay population with its selection and guard policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayNetwork {
    relays: Vec<Relay>,
    selection_policy: SelectionPolicy,
    guard_policy: GuardPolicy,
}

impl RelayNetwork {
    /// Validates and assembles a network.
    ///
    /// Requires at least 6 relays (a circuit has six positions), unique ids,
    /// positive finite weights, and at least one clean relay.
    pub fn new(
        relays: Vec<Relay>,
        selection_policy: SelectionPolicy,
        guard_policy: GuardPolicy,
    ) -> Result<Self, NetworkError> {
        if relays.len() < 6 {
            return Err(NetworkError::TooFewRelays(relays.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for relay in &relays {
            if !relay.bandwidth_weight.is_finite() || relay.bandwidth_weight <= 0.0 {
                return Err(NetworkError::InvalidWeight(relay.id.0, relay.bandwidth_weight));
            }
            if !seen.insert(relay.id) {
                return Err(NetworkError::DuplicateRelayId(relay.id.0));
            }
        }
        if relays.iter().all(|r| r.compromised) {
            return Err(NetworkError::EveryRelayCompromised(relays.len()));
        }
        Ok(Self { relays, selection_policy, guard_policy })
    }

    /// `relay_count` unit-weight relays with ids `0..relay_count`, the first
    /// `compromised_count` of them compromised.
    pub fn with_uniform_weights(
        relay_count: usize,
        compromised_count: usize,
        selection_policy: SelectionPolicy,
        guard_policy: GuardPolicy,
    ) -> Result<Self, NetworkError> {
        let relays = (0..relay_count)
            .map(|i| Relay {
                id: RelayId(i as u32),
                bandwidth_weight: 1.0,
                compromised: i < compromised_count,
            })
            .collect();
        Self::new(relays, selection_policy, guard_policy)
    }

    /// The relay population.
    pub fn relays(&self) -> &[Relay] {
        &self.relays
    }

    /// Number of relays (P).
    pub fn relay_count(&self) -> usize {
        self.relays.len()
    }

    /// Compromised fraction f = (compromised relays) / P.
    pub fn compromised_fraction(&self) -> f64 {
        let compromised = self.relays.iter().filter(|r| r.compromised).count();
        compromised as f64 / self.relays.len() as f64
    }

    /// Total bandwidth weight W.
    pub fn total_weight(&self) -> f64 {
        self.relays.iter().map(|r| r.bandwidth_weight).sum()
    }

    /// Total bandwidth weight of compromised relays, W_S.
    pub fn compromised_weight(&self) -> f64 {
        self.relays.iter().filter(|r| r.compromised).map(|r| r.bandwidth_weight).sum()
    }

    /// Relay-selection policy.
    pub fn selection_policy(&self) -> SelectionPolicy {
        self.selection_policy
    }

    /// Guard persistence policy.
    pub fn guard_policy(&self) -> GuardPolicy {
        self.guard_policy
    }

    /// Looks up a relay by id.
    pub fn relay(&self, id: RelayId) -> Result<&Relay, NetworkError> {
        self.relays.iter().find(|r| r.id == id).ok_or(NetworkError::UnknownRelay(id.0))
    }

    /// Draws one relay per the selection policy, skipping `exclude`.
    fn draw(&self, exclude: &[RelayId], rng: &mut ChaCha20Rng) -> Result<RelayId, NetworkError> {
        let eligible: Vec<&Relay> =
            self.relays.iter().filter(|r| !exclude.contains(&r.id)).collect();
        if eligible.is_empty() {
            return Err(NetworkError::TooFewEligible(0));
        }
        match self.selection_policy {
            SelectionPolicy::Uniform => {
                Ok(eligible[rng.gen_range(0..eligible.len())].id)
            }
            SelectionPolicy::BandwidthWeighted => {
                let total: f64 = eligible.iter().map(|r| r.bandwidth_weight).sum();
                let mut ticket = rng.gen::<f64>() * total;
                for relay in &eligible {
                    ticket -= relay.bandwidth_weight;
                    if ticket < 0.0 {
                        return Ok(relay.id);
                    }
                }
                // Floating-point slack on the last relay.
                Ok(eligible.last().expect("non-empty").id)
            }
        }
    }

    /// Samples one circuit half: `[guard, middle, last]`, distinct within the
    /// half, guard optionally pinned. The guard is the first draw, so its
    /// marginal is exactly the policy's single-draw distribution.
    pub(crate) fn sample_half(
        &self,
        pinned_guard: Option<RelayId>,
        rng: &mut ChaCha20Rng,
    ) -> Result<[RelayId; 3], NetworkError> {
        if self.relays.len() < 3 {
            return Err(NetworkError::TooFewEligible(self.relays.len()));
        }
        let guard = match pinned_guard {
            Some(id) => {
                self.relay(id)?;
                id
            }
            None => self.draw(&[], rng)?,
        };
        let middle = self.draw(&[guard], rng)?;
        let last = self.draw(&[guard, middle], rng)?;
        Ok([guard, middle, last])
    }

    /// Samples a guard the same way [`sample_half`](Self::sample_half) would
    /// draw its first position; used to pin endpoint guards.
    pub(crate) fn sample_guard(&self, rng: &mut ChaCha20Rng) -> Result<RelayId, NetworkError> {
        self.draw(&[], rng)
    }
}

/// A six-relay rendezvous path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CircuitPath {
    /// Strictly increasing across a simulation, fresh per NEWNYM epoch.
    pub circuit_id: u64,
    /// Initiator's half: `[guard, middle, rendezvous]`.
    pub client_half: [RelayId; 3],
    /// Responder's half: `[guard, middle, exit_to_rendezvous]`.
    pub service_half: [RelayId; 3],
}

impl CircuitPath {
    /// All six relay positions, client half first.
    pub fn relays(&self) -> impl Iterator<Item = RelayId> + '_ {
        self.client_half.iter().chain(self.service_half.iter()).copied()
    }
}

/// Logical latency parameters of the simulated transport, in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    /// One-way per-relay-hop delay; a six-relay traversal costs six of these.
    pub per_hop_ms: f64,
    /// Charged once when a send finds no live circuit and builds one.
    pub circuit_build_ms: f64,
    /// Settling time charged by each NEWNYM signal.
    pub stabilization_ms: f64,
}

impl LatencyModel {
    /// A zero-latency model (the default for correctness-only tests).
    pub fn zero() -> Self {
        Self { per_hop_ms: 0.0, circuit_build_ms: 0.0, stabilization_ms: 0.0 }
    }

    /// Checks all parameters are finite and nonnegative.
    pub fn validate(&self) -> Result<(), NetworkError> {
        for (name, v) in [
            ("per_hop_ms", self.per_hop_ms),
            ("circuit_build_ms", self.circuit_build_ms),
            ("stabilization_ms", self.stabilization_ms),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(NetworkError::InvalidConfig(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::zero()
    }
}

/// JSON description of a relay network plus latency model and seed.
///
/// Exactly one of `compromised_fraction` and `compromised_ids` must be given.
/// A fraction must divide the relay count into a whole number of compromised
/// relays; ids select specific relays (useful with explicit `weights`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Population size P.
    pub relay_count: usize,
    /// Compromised fraction f; `relay_count * f` relays are marked, lowest ids first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compromised_fraction: Option<f64>,
    /// Explicit compromised relay ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compromised_ids: Option<Vec<u32>>,
    /// Per-relay bandwidth weights (length `relay_count`); defaults to all 1.0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Relay-selection policy.
    pub selection_policy: SelectionPolicy,
    /// Guard persistence policy.
    pub guard_policy: GuardPolicy,
    /// Latency model; defaults to zero latency.
    #[serde(default)]
    pub latency: LatencyModel,
    /// Seed for every random choice the simulation makes.
    pub seed: u64,
}

impl NetworkConfig {
    /// Builds the validated [`RelayNetwork`] this config describes.
    pub fn build_network(&self) -> Result<RelayNetwork, NetworkError> {
        self.latency.validate()?;
        if let Some(weights) = &self.weights {
            if weights.len() != self.relay_count {
                return Err(NetworkError::InvalidConfig(format!(
                    "{} weights for {} relays",
                    weights.len(),
                    self.relay_count
                )));
            }
        }
        let compromised: Vec<bool> = match (&self.compromised_fraction, &self.compromised_ids) {
            (Some(f), None) => {
                if !(0.0..1.0).contains(f) {
                    return Err(NetworkError::InvalidConfig(format!(
                        "compromised_fraction must be in [0, 1), got {f}"
                    )));
                }
                let exact = f * self.relay_count as f64;
                let count = exact.round();
                if (exact - count).abs() > 1e-9 {
                    return Err(NetworkError::InvalidConfig(format!(
                        "compromised_fraction {f} of {} relays is not a whole number",
                        self.relay_count
                    )));
                }
                (0..self.relay_count).map(|i| (i as f64) < count).collect()
            }
            (None, Some(ids)) => {
                for &id in ids {
                    if id as usize >= self.relay_count {
                        return Err(NetworkError::UnknownRelay(id));
                    }
                }
                (0..self.relay_count).map(|i| ids.contains(&(i as u32))).collect()
            }
            _ => {
                return Err(NetworkError::InvalidConfig(
                    "exactly one of compromised_fraction and compromised_ids is required".into(),
                ));
            }
        };
        let relays = (0..self.relay_count)
            .map(|i| Relay {
                id: RelayId(i as u32),
                bandwidth_weight: self.weights.as_ref().map_or(1.0, |w| w[i]),
                compromised: compromised[i],
            })
            .collect();
        RelayNetwork::new(relays, self.selection_policy, self.guard_policy)
    }
}
