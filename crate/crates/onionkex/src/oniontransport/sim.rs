//! Deterministic in-process network simulator.
//!
//! Endpoints register by name and exchange byte messages two ways: onion
//! sends traverse a six-relay circuit, advance the logical clock, and append
//! an [`ObservationRecord`]; direct sends model conventional channels and are
//! free and unobserved. A circuit, once built for a (source, destination)
//! pair, is reused until the source issues [`SimNetwork::newnym`].
//!
//! The observation log is the adversary's entire view: per send it exposes
//! the circuit id, the six relay ids with their compromised flags, the
//! logical timestamp, and the message size. Application-level facts (endpoint
//! names, routes, payloads) are deliberately kept out of it.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CircuitPath, GuardPolicy, LatencyModel, NetworkError, RelayId, RelayNetwork};

/// Errors from simulated message exchange.
#[derive(Debug, Error, PartialEq)]
pub enum TransportError {
    /// Destination or source name is not registered.
    #[error("unknown endpoint {0:?}")]
    UnknownEndpoint(String),
    /// An endpoint name was registered twice.
    #[error("endpoint {0:?} already registered")]
    DuplicateEndpoint(String),
    /// A reply referenced a circuit id that never existed.
    #[error("unknown circuit {0}")]
    UnknownCircuit(u64),
    /// A test-injected delivery failure.
    #[error("injected send failure")]
    InjectedFailure,
    /// Path sampling failed.
    #[error(transparent)]
    Network(#[from] NetworkError),
}

/// One relay as seen in the adversary log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedRelay {
    /// Relay identifier.
    pub id: RelayId,
    /// Whether the adversary controls this relay.
    pub compromised: bool,
}

/// The six relay positions of one circuit with their compromised flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathObservation {
    /// Initiator-side guard (first hop).
    pub client_guard: ObservedRelay,
    /// Initiator-side middle relay.
    pub client_middle: ObservedRelay,
    /// Rendezvous relay (initiator's third pick).
    pub rendezvous: ObservedRelay,
    /// Responder-side guard (first hop).
    pub service_guard: ObservedRelay,
    /// Responder-side middle relay.
    pub service_middle: ObservedRelay,
    /// Responder's relay facing the rendezvous point.
    pub service_exit: ObservedRelay,
}

impl PathObservation {
    /// Builds the observation for `path` from the network's ground truth.
    pub fn from_path(network: &RelayNetwork, path: &CircuitPath) -> Result<Self, NetworkError> {
        let observe = |id: RelayId| -> Result<ObservedRelay, NetworkError> {
            Ok(ObservedRelay { id, compromised: network.relay(id)?.compromised })
        };
        Ok(Self {
            client_guard: observe(path.client_half[0])?,
            client_middle: observe(path.client_half[1])?,
            rendezvous: observe(path.client_half[2])?,
            service_guard: observe(path.service_half[0])?,
            service_middle: observe(path.service_half[1])?,
            service_exit: observe(path.service_half[2])?,
        })
    }

    /// The correlation event: both guards are compromised.
    pub fn both_guards_compromised(&self) -> bool {
        self.client_guard.compromised && self.service_guard.compromised
    }

    /// All six positions in path order.
    pub fn relays(&self) -> [ObservedRelay; 6] {
        [
            self.client_guard,
            self.client_middle,
            self.rendezvous,
            self.service_guard,
            self.service_middle,
            self.service_exit,
        ]
    }
}

/// One adversary-log entry, appended per onion send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    /// Log position, starting at 0.
    pub seq: u64,
    /// Logical time the message arrived, in milliseconds.
    pub time_ms: f64,
    /// Circuit the message traveled on.
    pub circuit_id: u64,
    /// Message size in bytes.
    pub message_bytes: usize,
    /// Relay ids and compromised flags along the path.
    pub path: PathObservation,
}

/// Samples a fresh six-relay circuit and its observation in one step.
///
/// Shared by the simulator and the linkage-experiment harness so both draw
/// paths from identical code. Guards may be pinned per half; middle and
/// rendezvous positions are always re-sampled.
pub fn observe_circuit(
    network: &RelayNetwork,
    circuit_id: u64,
    pinned_client_guard: Option<RelayId>,
    pinned_service_guard: Option<RelayId>,
    rng: &mut ChaCha20Rng,
) -> Result<(CircuitPath, PathObservation), NetworkError> {
    let client_half = network.sample_half(pinned_client_guard, rng)?;
    let service_half = network.sample_half(pinned_service_guard, rng)?;
    let path = CircuitPath { circuit_id, client_half, service_half };
    let observation = PathObservation::from_path(network, &path)?;
    Ok((path, observation))
}

/// A message sitting in an endpoint's inbox.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// Sender endpoint name (application-level metadata, not adversary data).
    pub from: String,
    /// Logical endpoint path, for example "/get-key".
    pub endpoint_path: String,
    /// Message body.
    pub bytes: Vec<u8>,
    /// Circuit the message arrived on; `None` for conventional channels.
    pub circuit_id: Option<u64>,
    /// Logical arrival time in milliseconds.
    pub arrived_ms: f64,
}

/// Delivery receipt returned to the sender.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Receipt {
    /// Circuit used; `None` for conventional channels.
    pub circuit_id: Option<u64>,
    /// Logical arrival time in milliseconds.
    pub arrived_ms: f64,
}

#[derive(Debug, Default)]
struct Endpoint {
    inbox: VecDeque<Envelope>,
    pinned_guard: Option<RelayId>,
    /// Live circuit per destination, dropped by NEWNYM.
    circuits: BTreeMap<String, u64>,
}

/// The simulated network: endpoints, circuits, clock, and observation log.
///
/// All mutation is totally ordered through `&mut self`; actors are driven by
/// an external scheduler (the runner) and never touch the simulator
/// concurrently. Every random choice comes from the one seeded generator, so
/// identical seeds and call sequences reproduce identical logs and clocks.
pub struct SimNetwork {
    network: RelayNetwork,
    latency: LatencyModel,
    rng: ChaCha20Rng,
    clock_ms: f64,
    transport_ms: f64,
    next_circuit_id: u64,
    onion_sends: u64,
    fail_on_sends: BTreeSet<u64>,
    endpoints: BTreeMap<String, Endpoint>,
    circuits_by_id: BTreeMap<u64, CircuitPath>,
    observations: Vec<ObservationRecord>,
}

impl SimNetwork {
    /// Creates a simulator over `network` with the given latency model.
    pub fn new(network: RelayNetwork, latency: LatencyModel, seed: u64) -> Result<Self, NetworkError> {
        latency.validate()?;
        Ok(Self {
            network,
            latency,
            rng: ChaCha20Rng::seed_from_u64(seed),
            clock_ms: 0.0,
            transport_ms: 0.0,
            next_circuit_id: 1,
            onion_sends: 0,
            fail_on_sends: BTreeSet::new(),
            endpoints: BTreeMap::new(),
            circuits_by_id: BTreeMap::new(),
            observations: Vec::new(),
        })
    }

    /// Registers a named endpoint with an empty inbox.
    pub fn register_endpoint(&mut self, name: &str) -> Result<(), TransportError> {
        if self.endpoints.contains_key(name) {
            return Err(TransportError::DuplicateEndpoint(name.to_string()));
        }
        self.endpoints.insert(name.to_string(), Endpoint::default());
        Ok(())
    }

    /// The relay network this simulator runs over.
    pub fn network(&self) -> &RelayNetwork {
        &self.network
    }

    /// Current logical time in milliseconds.
    pub fn clock_ms(&self) -> f64 {
        self.clock_ms
    }

    /// Logical milliseconds spent on transport (sends and NEWNYM settling).
    pub fn transport_ms(&self) -> f64 {
        self.transport_ms
    }

    /// Advances the clock for non-transport work (instrumented crypto cost).
    pub fn advance_clock(&mut self, ms: f64) {
        debug_assert!(ms >= 0.0, "clock cannot move backwards");
        self.clock_ms += ms;
    }

    /// The append-only adversary log.
    pub fn observations(&self) -> &[ObservationRecord] {
        &self.observations
    }

    /// Writes the observation log as JSON lines.
    pub fn write_observation_log<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for record in &self.observations {
            serde_json::to_writer(&mut writer, record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Fails the `nth` onion send from now (1 = the very next), once.
    pub fn inject_onion_send_failure(&mut self, nth: u64) {
        self.fail_on_sends.insert(self.onion_sends + nth);
    }

    /// Signals a fresh-circuit epoch for `endpoint`: its live circuits are
    /// dropped (the next send builds anew) and the clock settles for
    /// `stabilization_ms`. Pinned guards survive by design.
    pub fn newnym(&mut self, endpoint: &str) -> Result<(), TransportError> {
        let state = self
            .endpoints
            .get_mut(endpoint)
            .ok_or_else(|| TransportError::UnknownEndpoint(endpoint.to_string()))?;
        state.circuits.clear();
        self.clock_ms += self.latency.stabilization_ms;
        self.transport_ms += self.latency.stabilization_ms;
        Ok(())
    }

    fn require_endpoint(&self, name: &str) -> Result<(), TransportError> {
        if self.endpoints.contains_key(name) {
            Ok(())
        } else {
            Err(TransportError::UnknownEndpoint(name.to_string()))
        }
    }

    /// Pinned guard for `name`, sampling it on first use.
    fn pin_guard(&mut self, name: &str) -> Result<RelayId, TransportError> {
        let state = self.endpoints.get_mut(name).expect("checked by caller");
        if let Some(id) = state.pinned_guard {
            return Ok(id);
        }
        let id = self.network.sample_guard(&mut self.rng)?;
        self.endpoints.get_mut(name).expect("checked").pinned_guard = Some(id);
        Ok(id)
    }

    /// The circuit `src` would use toward `dest`, building one if the epoch
    /// has none. Returns (circuit id, whether it was freshly built).
    fn live_circuit(&mut self, src: &str, dest: &str) -> Result<(u64, bool), TransportError> {
        if let Some(&id) = self.endpoints[src].circuits.get(dest) {
            return Ok((id, false));
        }
        let client_pin = match self.network.guard_policy() {
            GuardPolicy::PinnedPerEndpoint => Some(self.pin_guard(src)?),
            GuardPolicy::FreshPerCircuit | GuardPolicy::PinnedServiceSide => None,
        };
        let service_pin = match self.network.guard_policy() {
            GuardPolicy::PinnedPerEndpoint | GuardPolicy::PinnedServiceSide => {
                Some(self.pin_guard(dest)?)
            }
            GuardPolicy::FreshPerCircuit => None,
        };
        let circuit_id = self.next_circuit_id;
        self.next_circuit_id += 1;
        let (path, _) =
            observe_circuit(&self.network, circuit_id, client_pin, service_pin, &mut self.rng)?;
        self.circuits_by_id.insert(circuit_id, path);
        self.endpoints
            .get_mut(src)
            .expect("checked")
            .circuits
            .insert(dest.to_string(), circuit_id);
        Ok((circuit_id, true))
    }

    fn record_observation(&mut self, circuit_id: u64, message_bytes: usize) {
        let path = self.circuits_by_id[&circuit_id];
        let observation =
            PathObservation::from_path(&self.network, &path).expect("relays exist");
        self.observations.push(ObservationRecord {
            seq: self.observations.len() as u64,
            time_ms: self.clock_ms,
            circuit_id,
            message_bytes,
            path: observation,
        });
    }

    fn deliver(
        &mut self,
        from: &str,
        dest: &str,
        endpoint_path: &str,
        bytes: Vec<u8>,
        circuit_id: Option<u64>,
    ) {
        let arrived_ms = self.clock_ms;
        self.endpoints.get_mut(dest).expect("checked").inbox.push_back(Envelope {
            from: from.to_string(),
            endpoint_path: endpoint_path.to_string(),
            bytes,
            circuit_id,
            arrived_ms,
        });
    }

    /// Sends over the onion network: builds or reuses the (src, dest)
    /// circuit, charges build cost (fresh circuits only) plus six hops,
    /// appends an observation record, and delivers to `dest`'s inbox.
    pub fn send_onion(
        &mut self,
        src: &str,
        dest: &str,
        endpoint_path: &str,
        bytes: Vec<u8>,
    ) -> Result<Receipt, TransportError> {
        self.require_endpoint(src)?;
        self.require_endpoint(dest)?;
        self.onion_sends += 1;
        if self.fail_on_sends.remove(&self.onion_sends) {
            return Err(TransportError::InjectedFailure);
        }
        let (circuit_id, fresh) = self.live_circuit(src, dest)?;
        let mut cost = 6.0 * self.latency.per_hop_ms;
        if fresh {
            cost += self.latency.circuit_build_ms;
        }
        self.clock_ms += cost;
        self.transport_ms += cost;
        self.record_observation(circuit_id, bytes.len());
        self.deliver(src, dest, endpoint_path, bytes, Some(circuit_id));
        Ok(Receipt { circuit_id: Some(circuit_id), arrived_ms: self.clock_ms })
    }

    /// Sends a response back over an existing circuit (six hops, no build
    /// cost), appending its own observation record.
    pub fn reply_onion(
        &mut self,
        src: &str,
        dest: &str,
        circuit_id: u64,
        endpoint_path: &str,
        bytes: Vec<u8>,
    ) -> Result<Receipt, TransportError> {
        self.require_endpoint(src)?;
        self.require_endpoint(dest)?;
        if !self.circuits_by_id.contains_key(&circuit_id) {
            return Err(TransportError::UnknownCircuit(circuit_id));
        }
        let cost = 6.0 * self.latency.per_hop_ms;
        self.clock_ms += cost;
        self.transport_ms += cost;
        self.record_observation(circuit_id, bytes.len());
        self.deliver(src, dest, endpoint_path, bytes, Some(circuit_id));
        Ok(Receipt { circuit_id: Some(circuit_id), arrived_ms: self.clock_ms })
    }

    /// Sends over a conventional channel: no relays, no latency, no
    /// observation record.
    pub fn send_direct(
        &mut self,
        src: &str,
        dest: &str,
        endpoint_path: &str,
        bytes: Vec<u8>,
    ) -> Result<Receipt, TransportError> {
        self.require_endpoint(src)?;
        self.require_endpoint(dest)?;
        self.deliver(src, dest, endpoint_path, bytes, None);
        Ok(Receipt { circuit_id: None, arrived_ms: self.clock_ms })
    }

    /// Removes and returns everything in `endpoint`'s inbox, oldest first.
    pub fn drain_inbox(&mut self, endpoint: &str) -> Result<Vec<Envelope>, TransportError> {
        let state = self
            .endpoints
            .get_mut(endpoint)
            .ok_or_else(|| TransportError::UnknownEndpoint(endpoint.to_string()))?;
        Ok(state.inbox.drain(..).collect())
    }

    /// The path a circuit id maps to, if it was ever built.
    pub fn circuit_path(&self, circuit_id: u64) -> Option<&CircuitPath> {
        self.circuits_by_id.get(&circuit_id)
    }
}
