//! End-to-end session orchestration over the simulated network.
//!
//! One run walks the full protocol with five endpoints (two clients, their
//! two proxies, and the key server):
//!
//! 1. each client sends its request to its proxy over an onion circuit and
//!    receives the acknowledgment as a reply on the same circuit;
//! 2. proxies forward requests to the key server over the conventional
//!    channel; the second matching request triggers issuance;
//! 3. the server hands each fragment bundle to the owning proxy over the
//!    conventional channel, and each proxy relays every bundle to its
//!    client on a dedicated fresh circuit (NEWNYM per bundle);
//! 4. clients decrypt, reorder, and reassemble, and finally prove agreement
//!    by round-tripping an authenticated probe message.
//!
//! Time is fully logical. Transport costs follow the simulator's latency
//! model; per-fragment public-key operations charge a fixed stub cost so
//! the latency decomposition of a run is exactly reproducible. The report
//! carries no wall-clock readings: identical configurations yield
//! byte-identical reports.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{
    Client, ClientError, DispatchAction, Proxy, ProxyConfig, ProxyError, Qkms, QkmsConfig,
    QkmsError, QkmsResponse, SessionCipherError,
};
use crate::cryptoenvelope::{AsymmetricScheme, CryptoError, DefaultScheme, RecipientKeyPair};
use crate::oniontransport::sim::{ObservationRecord, SimNetwork, TransportError};
use crate::oniontransport::{NetworkConfig, NetworkError};
use crate::seeds::derive_subseed;
use crate::wire::{self, FragmentDelivery, GetKeyAck, KeyRequest, ProxyKeyRequest, WireError};

/// Logical endpoint path for key requests and their acknowledgments.
pub const GET_KEY_PATH: &str = "/get-key";

/// Errors from a session run.
#[derive(Debug, Error)]
pub enum RunnerError {
    /// Transport failure.
    #[error(transparent)]
    Transport(#[from] TransportError),
    /// Network construction failure.
    #[error(transparent)]
    Network(#[from] NetworkError),
    /// Key-server rejection.
    #[error(transparent)]
    Qkms(#[from] QkmsError),
    /// Proxy rejection.
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    /// Client rejection.
    #[error(transparent)]
    Client(#[from] ClientError),
    /// Message encoding or decoding failure.
    #[error(transparent)]
    Wire(#[from] WireError),
    /// Working-cipher failure during the probe exchange.
    #[error(transparent)]
    Cipher(#[from] SessionCipherError),
    /// Keypair generation failure.
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    /// The protocol flow broke an expectation (missing or extra messages).
    #[error("protocol flow violation: {0}")]
    Protocol(String),
}

fn default_crypto_stub_ms() -> f64 {
    10.0
}

fn default_rsa_bits() -> usize {
    2048
}

/// Configuration of one end-to-end run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSetup {
    /// Session tagname both clients present.
    pub tagname: String,
    /// Requested key length in bits.
    pub key_type: u32,
    /// Number of fragments.
    pub num_of_splits: u32,
    /// Whether dispatch order is shuffled.
    pub shuffle: bool,
    /// The simulated relay population and latency model. Its `seed` field
    /// is ignored here: the runner derives transport randomness from
    /// [`SessionSetup::seed`] so one value controls the whole run.
    pub network: NetworkConfig,
    /// Master seed; every actor derives its own stream from it.
    pub seed: u64,
    /// Logical cost charged per public-key fragment operation, in
    /// milliseconds.
    #[serde(default = "default_crypto_stub_ms")]
    pub crypto_stub_ms: f64,
    /// RSA modulus size for the clients' keypairs.
    #[serde(default = "default_rsa_bits")]
    pub rsa_bits: usize,
}

/// Per-client delivery evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    /// Client endpoint name.
    pub client: String,
    /// Proxy endpoint name.
    pub proxy: String,
    /// Bundle ids delivered to this client, in delivery order.
    pub bundle_ids: Vec<u64>,
    /// Circuit id each bundle rode on, aligned with `bundle_ids`.
    pub delivery_circuits: Vec<u64>,
    /// Number of distinct delivery circuits.
    pub distinct_delivery_circuits: usize,
    /// Fragments the client accepted.
    pub fragments_received: usize,
    /// Whether this client reconstructed the key.
    pub reconstructed: bool,
}

/// Logical latency decomposition of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    /// End-to-end logical time.
    pub total_ms: f64,
    /// Time spent in circuit builds, relay hops, and NEWNYM stabilization.
    pub transport_ms: f64,
    /// Time charged for per-fragment public-key operations.
    pub crypto_ms: f64,
    /// Everything else (zero when the model accounts for all phases).
    pub other_ms: f64,
    /// `transport_ms / total_ms`.
    pub transport_fraction: f64,
}

/// The deterministic result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    /// Session tagname.
    pub tagname: String,
    /// Requested key length in bits.
    pub key_type: u32,
    /// Number of fragments.
    pub num_of_splits: u32,
    /// Whether dispatch order was shuffled.
    pub shuffle: bool,
    /// Both clients rebuilt the key and it matches the server's record.
    pub keys_match: bool,
    /// A probe sealed by one client authenticated at the other.
    pub probe_round_trip: bool,
    /// First client's delivery evidence.
    pub client_a: EndpointReport,
    /// Second client's delivery evidence.
    pub client_b: EndpointReport,
    /// Latency decomposition.
    pub timing: TimingReport,
    /// Onion sends the adversary observed.
    pub observed_sends: usize,
}

impl SessionReport {
    /// The report as canonical pretty JSON; identical runs produce
    /// byte-identical text.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Everything a run produces: the comparable report plus side artifacts
/// (traces, proxy state, the adversary's observation log, ground truth).
#[derive(Debug)]
pub struct SessionRun {
    /// The deterministic report.
    pub report: SessionReport,
    /// Key-server dispatch trace (`Part k of n: <bits>` lines).
    pub qkms_trace: Vec<String>,
    /// First client's decryption trace. Contains wall-clock decryption
    /// times, so it is excluded from byte-for-byte comparisons.
    pub client_a_trace: Vec<String>,
    /// Second client's decryption trace (wall-clock caveat as above).
    pub client_b_trace: Vec<String>,
    /// First proxy's observable state dump.
    pub proxy_a_state: String,
    /// Second proxy's observable state dump.
    pub proxy_b_state: String,
    /// Every relay-level observation the adversary collected.
    pub observations: Vec<ObservationRecord>,
    /// The established key as a bit string (ground truth; never part of
    /// the report).
    pub session_key_bits: String,
}

/// Runs one full session with freshly generated client keypairs.
pub fn run_session(setup: &SessionSetup) -> Result<SessionRun, RunnerError> {
    let scheme = DefaultScheme::new(setup.rsa_bits);
    run_session_with_scheme(setup, scheme, None)
}

/// Runs one full session, optionally reusing pre-generated client keypairs
/// (key generation dominates setup cost in batch runs).
pub fn run_session_with_scheme<S: AsymmetricScheme + Clone>(
    setup: &SessionSetup,
    scheme: S,
    keypairs: Option<(RecipientKeyPair<S>, RecipientKeyPair<S>)>,
) -> Result<SessionRun, RunnerError> {
    let mut network_config = setup.network.clone();
    network_config.seed = derive_subseed(setup.seed, "transport");
    let network = network_config.build_network()?;
    let mut sim = SimNetwork::new(network, network_config.latency, network_config.seed)?;
    for endpoint in ["qkms", "proxy-a", "proxy-b", "client-a", "client-b"] {
        sim.register_endpoint(endpoint)?;
    }

    let mut qkms: Qkms<S> = Qkms::new(
        scheme.clone(),
        QkmsConfig::default(),
        derive_subseed(setup.seed, "qkms"),
    );
    let (keys_a, keys_b) = match keypairs {
        Some(pair) => pair,
        None => {
            let mut rng_a = ChaCha20Rng::seed_from_u64(derive_subseed(setup.seed, "keys-a"));
            let mut rng_b = ChaCha20Rng::seed_from_u64(derive_subseed(setup.seed, "keys-b"));
            (scheme.generate_keypair(&mut rng_a)?, scheme.generate_keypair(&mut rng_b)?)
        }
    };
    let mut client_a = Client::with_keypair(
        "client-a",
        scheme.clone(),
        keys_a,
        derive_subseed(setup.seed, "client-a"),
    );
    let mut client_b = Client::with_keypair(
        "client-b",
        scheme,
        keys_b,
        derive_subseed(setup.seed, "client-b"),
    );
    let mut proxy_a = Proxy::new(ProxyConfig {
        name: "proxy-a".into(),
        client: "client-a".into(),
        channels: vec![
            "http://127.0.0.1:5001/".into(),
            "http://127.0.0.1:5002/".into(),
        ],
    });
    let mut proxy_b = Proxy::new(ProxyConfig {
        name: "proxy-b".into(),
        client: "client-b".into(),
        channels: vec![
            "http://127.0.0.1:6001/".into(),
            "http://127.0.0.1:6002/".into(),
        ],
    });

    // Phase 1: both clients request the key through their proxies. The
    // acknowledgment returns on the circuit the request used; issuance
    // dispatch starts only after the second request/ack exchange completes.
    let mut pending_dispatches: Vec<DispatchAction> = Vec::new();
    for pass in 0..2 {
        let (client, proxy): (&mut Client<S>, &mut Proxy) = if pass == 0 {
            (&mut client_a, &mut proxy_a)
        } else {
            (&mut client_b, &mut proxy_b)
        };
        let request = client.build_request(
            &setup.tagname,
            setup.key_type,
            setup.num_of_splits,
            setup.shuffle,
        );
        let receipt =
            sim.send_onion(client.name(), proxy.name(), GET_KEY_PATH, wire::encode(&request)?)?;
        let request_circuit = receipt
            .circuit_id
            .ok_or_else(|| RunnerError::Protocol("onion send without a circuit".into()))?;

        let envelope = expect_one(sim.drain_inbox(proxy.name())?, "proxy request inbox")?;
        let client_request: KeyRequest = wire::decode(&envelope.bytes)?;
        let forwarded = proxy.handle_client_request(&client_request)?;
        sim.send_direct(proxy.name(), "qkms", GET_KEY_PATH, wire::encode(&forwarded)?)?;

        let envelope = expect_one(sim.drain_inbox("qkms")?, "key-server inbox")?;
        let proxied: ProxyKeyRequest = wire::decode(&envelope.bytes)?;
        let from_proxy = envelope.from.clone();
        let now = sim.clock_ms();
        let ack = match qkms.handle_request(&proxied, &from_proxy, now)? {
            QkmsResponse::Waiting(ack) => ack,
            QkmsResponse::Issued { ack, dispatches } => {
                pending_dispatches = dispatches;
                ack
            }
        };
        sim.send_direct("qkms", &from_proxy, GET_KEY_PATH, wire::encode(&ack)?)?;

        let envelope = expect_one(sim.drain_inbox(proxy.name())?, "proxy ack inbox")?;
        let ack: GetKeyAck = wire::decode(&envelope.bytes)?;
        sim.reply_onion(
            proxy.name(),
            client.name(),
            request_circuit,
            GET_KEY_PATH,
            wire::encode(&ack)?,
        )?;
        let envelope = expect_one(sim.drain_inbox(client.name())?, "client ack inbox")?;
        let ack: GetKeyAck = wire::decode(&envelope.bytes)?;
        if ack.tagname != setup.tagname {
            return Err(RunnerError::Protocol(format!(
                "acknowledgment for tagname {:?}, expected {:?}",
                ack.tagname, setup.tagname
            )));
        }
    }

    // Phase 2: the server encrypts per fragment and hands every bundle to
    // the owning proxy over the conventional channel.
    let issued_fragment_ops: usize =
        pending_dispatches.iter().map(|d| d.delivery.fragments.len()).sum();
    if issued_fragment_ops != 2 * setup.num_of_splits as usize {
        return Err(RunnerError::Protocol(format!(
            "issuance encrypted {issued_fragment_ops} fragments, expected {}",
            2 * setup.num_of_splits
        )));
    }
    sim.advance_clock(setup.crypto_stub_ms * issued_fragment_ops as f64);
    for dispatch in &pending_dispatches {
        let bytes = wire::encode(&dispatch.delivery)?;
        sim.send_direct("qkms", &dispatch.proxy, &dispatch.channel, bytes)?;
    }
    let mut deliveries_a: Vec<FragmentDelivery> = Vec::new();
    let mut deliveries_b: Vec<FragmentDelivery> = Vec::new();
    for (proxy, deliveries) in
        [(&proxy_a, &mut deliveries_a), (&proxy_b, &mut deliveries_b)]
    {
        for envelope in sim.drain_inbox(proxy.name())? {
            deliveries.push(wire::decode(&envelope.bytes)?);
        }
    }

    // Phase 3: one fresh circuit per bundle, then client-side decryption.
    let mut endpoint_reports = Vec::with_capacity(2);
    for (proxy, client, deliveries) in [
        (&mut proxy_a, &mut client_a, &deliveries_a),
        (&mut proxy_b, &mut client_b, &deliveries_b),
    ] {
        let receipts = proxy.forward_bundles(deliveries, &mut sim)?;
        let delivery_circuits: Vec<u64> = receipts
            .iter()
            .map(|receipt| {
                receipt
                    .circuit_id
                    .ok_or_else(|| RunnerError::Protocol("bundle without a circuit".into()))
            })
            .collect::<Result<_, _>>()?;
        let mut fragments_received = 0usize;
        let mut bundle_ids = Vec::with_capacity(deliveries.len());
        for envelope in sim.drain_inbox(client.name())? {
            let delivery: FragmentDelivery = wire::decode(&envelope.bytes)?;
            // Per-fragment private-key decryption cost at the client.
            sim.advance_clock(setup.crypto_stub_ms * delivery.fragments.len() as f64);
            let outcome = client.handle_delivery(&delivery)?;
            fragments_received += outcome.newly_stored;
            bundle_ids.push(delivery.bundle_id);
        }
        let mut distinct = delivery_circuits.clone();
        distinct.sort_unstable();
        distinct.dedup();
        endpoint_reports.push(EndpointReport {
            client: client.name().to_string(),
            proxy: proxy.name().to_string(),
            bundle_ids,
            delivery_circuits: delivery_circuits.clone(),
            distinct_delivery_circuits: distinct.len(),
            fragments_received,
            reconstructed: client.session_key(&setup.tagname).is_some(),
        });
    }

    // Phase 4: verify agreement and prove it with an authenticated probe.
    let ground_truth = qkms
        .session_key(&setup.tagname)
        .cloned()
        .ok_or_else(|| RunnerError::Protocol("server lost the session key".into()))?;
    let keys_match = client_a.session_key(&setup.tagname) == Some(&ground_truth)
        && client_b.session_key(&setup.tagname) == Some(&ground_truth);
    let probe_round_trip = if keys_match {
        let sealed = client_a.seal_probe(&setup.tagname, b"key agreement probe")?;
        sim.send_direct("client-a", "client-b", "/probe", sealed)?;
        let envelope = expect_one(sim.drain_inbox("client-b")?, "probe inbox")?;
        client_b.open_probe(&setup.tagname, &envelope.bytes)? == b"key agreement probe"
    } else {
        false
    };
    if keys_match {
        qkms.mark_completed(&setup.tagname)?;
    } else {
        qkms.mark_failed(&setup.tagname)?;
    }

    let total_ms = sim.clock_ms();
    let transport_ms = sim.transport_ms();
    let crypto_ms = setup.crypto_stub_ms * 4.0 * setup.num_of_splits as f64;
    let other_ms = total_ms - transport_ms - crypto_ms;
    let timing = TimingReport {
        total_ms,
        transport_ms,
        crypto_ms,
        other_ms,
        transport_fraction: if total_ms > 0.0 { transport_ms / total_ms } else { 0.0 },
    };

    let client_b_report = endpoint_reports.pop().expect("two endpoint reports");
    let client_a_report = endpoint_reports.pop().expect("two endpoint reports");
    let report = SessionReport {
        tagname: setup.tagname.clone(),
        key_type: setup.key_type,
        num_of_splits: setup.num_of_splits,
        shuffle: setup.shuffle,
        keys_match,
        probe_round_trip,
        client_a: client_a_report,
        client_b: client_b_report,
        timing,
        observed_sends: sim.observations().len(),
    };
    Ok(SessionRun {
        report,
        qkms_trace: qkms.take_trace(),
        client_a_trace: client_a.take_trace(),
        client_b_trace: client_b.take_trace(),
        proxy_a_state: proxy_a.observable_state(),
        proxy_b_state: proxy_b.observable_state(),
        observations: sim.observations().to_vec(),
        session_key_bits: ground_truth.bits().to_binary_string(),
    })
}

fn expect_one<T>(mut items: Vec<T>, what: &str) -> Result<T, RunnerError> {
    if items.len() != 1 {
        return Err(RunnerError::Protocol(format!(
            "{what}: expected exactly one message, found {}",
            items.len()
        )));
    }
    Ok(items.pop().expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oniontransport::{GuardPolicy, LatencyModel, SelectionPolicy};

    fn setup(seed: u64) -> SessionSetup {
        SessionSetup {
            tagname: "secret_sharing_tag".into(),
            key_type: 128,
            num_of_splits: 5,
            shuffle: true,
            network: NetworkConfig {
                relay_count: 10,
                compromised_fraction: Some(0.2),
                compromised_ids: None,
                weights: None,
                selection_policy: SelectionPolicy::Uniform,
                guard_policy: GuardPolicy::FreshPerCircuit,
                latency: LatencyModel {
                    per_hop_ms: 50.0,
                    circuit_build_ms: 2000.0,
                    stabilization_ms: 500.0,
                },
                seed: 0,
            },
            seed,
            crypto_stub_ms: 10.0,
            rsa_bits: 1024,
        }
    }

    #[test]
    fn full_session_reconstructs_and_probes() {
        let run = run_session(&setup(41)).unwrap();
        let report = &run.report;
        assert!(report.keys_match);
        assert!(report.probe_round_trip);
        for endpoint in [&report.client_a, &report.client_b] {
            assert!(endpoint.reconstructed);
            assert_eq!(endpoint.fragments_received, 5);
            assert_eq!(endpoint.bundle_ids.len(), endpoint.delivery_circuits.len());
            assert_eq!(endpoint.distinct_delivery_circuits, endpoint.delivery_circuits.len());
            assert!(!endpoint.bundle_ids.is_empty());
        }
        assert_eq!(run.session_key_bits.len(), 128);
        // Server trace: five fragments per endpoint.
        assert_eq!(run.qkms_trace.len(), 10);
        assert!(run.client_a_trace.iter().any(|l| l.contains("reassembling")));
    }

    #[test]
    fn latency_decomposition_is_exact() {
        let run = run_session(&setup(42)).unwrap();
        let report = &run.report;
        let bundles =
            (report.client_a.bundle_ids.len() + report.client_b.bundle_ids.len()) as f64;
        // Request phase per client: build (2000) + 6 hops out (300) + 6
        // hops back (300). Bundle phase per bundle: NEWNYM stabilization
        // (500) + build (2000) + 6 hops (300).
        let expected_transport = 2.0 * 2600.0 + bundles * 2800.0;
        assert_eq!(report.timing.transport_ms, expected_transport);
        // 2n server encryptions + 2n client decryptions at 10 ms each.
        assert_eq!(report.timing.crypto_ms, 10.0 * 4.0 * 5.0);
        assert_eq!(report.timing.other_ms, 0.0);
        assert_eq!(
            report.timing.total_ms,
            report.timing.transport_ms + report.timing.crypto_ms
        );
        let fraction = report.timing.transport_ms / report.timing.total_ms;
        assert_eq!(report.timing.transport_fraction, fraction);
    }

    #[test]
    fn identical_seeds_give_identical_reports_and_observations() {
        let first = run_session(&setup(43)).unwrap();
        let second = run_session(&setup(43)).unwrap();
        assert_eq!(first.report, second.report);
        assert_eq!(first.report.canonical_json(), second.report.canonical_json());
        assert_eq!(first.observations, second.observations);
        assert_eq!(first.qkms_trace, second.qkms_trace);
        assert_eq!(first.session_key_bits, second.session_key_bits);
        // Different seeds give different keys.
        let third = run_session(&setup(44)).unwrap();
        assert_ne!(third.session_key_bits, first.session_key_bits);
    }

    #[test]
    fn proxies_never_see_the_key_bits() {
        let run = run_session(&setup(45)).unwrap();
        for state in [&run.proxy_a_state, &run.proxy_b_state] {
            assert!(!state.contains(&run.session_key_bits));
            // Not even a long window of the bit string appears.
            let window = &run.session_key_bits[..64];
            assert!(!state.contains(window));
        }
        assert!(run.proxy_a_state.contains("relay tagname=secret_sharing_tag"));
    }

    #[test]
    fn every_observation_is_a_delivery_or_request_circuit() {
        let run = run_session(&setup(46)).unwrap();
        let deliveries = run.report.client_a.delivery_circuits.len()
            + run.report.client_b.delivery_circuits.len();
        // 2 request sends + 2 acknowledgment replies + one send per bundle.
        assert_eq!(run.observations.len(), 4 + deliveries);
        assert_eq!(run.report.observed_sends, run.observations.len());
    }
}
