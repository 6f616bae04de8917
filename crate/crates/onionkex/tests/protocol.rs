//! End-to-end protocol behavior through the public API.

use onionkex::oniontransport::{
    GuardPolicy, LatencyModel, NetworkConfig, SelectionPolicy,
};
use onionkex::runner::{run_session, SessionSetup};

fn setup(tagname: &str, shuffle: bool, seed: u64) -> SessionSetup {
    SessionSetup {
        tagname: tagname.into(),
        key_type: 128,
        num_of_splits: 4,
        shuffle,
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
fn both_endpoints_reconstruct_with_and_without_shuffle() {
    for shuffle in [false, true] {
        let run = run_session(&setup("e2e", shuffle, 501)).unwrap();
        let report = &run.report;
        assert!(report.keys_match, "shuffle={shuffle}");
        assert!(report.probe_round_trip, "shuffle={shuffle}");
        for endpoint in [&report.client_a, &report.client_b] {
            assert!(endpoint.reconstructed);
            assert_eq!(endpoint.fragments_received, 4);
            assert_eq!(
                endpoint.distinct_delivery_circuits,
                endpoint.bundle_ids.len(),
                "every bundle must ride its own circuit"
            );
        }
        assert_eq!(run.session_key_bits.len(), 128);
    }
}

#[test]
fn same_seed_reproduces_key_different_seed_changes_it() {
    let first = run_session(&setup("det", true, 77)).unwrap();
    let second = run_session(&setup("det", true, 77)).unwrap();
    let third = run_session(&setup("det", true, 78)).unwrap();
    assert_eq!(first.session_key_bits, second.session_key_bits);
    assert_eq!(
        first.report.canonical_json(),
        second.report.canonical_json()
    );
    assert_ne!(first.session_key_bits, third.session_key_bits);
}

#[test]
fn traces_follow_the_reporting_formats() {
    let run = run_session(&setup("fmt", false, 91)).unwrap();
    let qkms_parts: Vec<_> = run
        .qkms_trace
        .iter()
        .filter(|line| line.starts_with("Part "))
        .collect();
    assert_eq!(qkms_parts.len(), 8, "one line per fragment per endpoint");
    for line in &qkms_parts {
        let (header, bits) = line.split_once(": ").unwrap();
        assert!(header.starts_with("Part ") && header.contains(" of 4"));
        assert!(bits.chars().all(|c| c == '0' || c == '1'));
        assert_eq!(bits.len(), 32);
    }
    for trace in [&run.client_a_trace, &run.client_b_trace] {
        assert_eq!(
            trace.iter().filter(|l| l.starts_with("[CLIENT] Received share (idx=")).count(),
            4
        );
        assert_eq!(trace.iter().filter(|l| l.starts_with("Decrypted: part ")).count(), 4);
        assert_eq!(trace.iter().filter(|l| l.starts_with("Decryption time: ")).count(), 4);
        assert_eq!(
            trace.last().unwrap(),
            "[CLIENT] All 4 fragments received; reassembling."
        );
    }
}

#[test]
fn adversary_log_covers_requests_and_bundles() {
    let run = run_session(&setup("log", true, 13)).unwrap();
    let bundles = run.report.client_a.bundle_ids.len() + run.report.client_b.bundle_ids.len();
    // Two request sends, two reply sends, one onion send per bundle.
    assert_eq!(run.observations.len(), 4 + bundles);
    assert_eq!(run.report.observed_sends, run.observations.len());
    for window in run.observations.windows(2) {
        assert!(window[0].seq < window[1].seq);
        assert!(window[0].time_ms <= window[1].time_ms);
    }
}

#[test]
fn proxies_never_see_key_material() {
    let run = run_session(&setup("blind", true, 29)).unwrap();
    for state in [&run.proxy_a_state, &run.proxy_b_state] {
        assert!(!state.contains(&run.session_key_bits));
        // No 32-bit window of the key appears either.
        let bits = run.session_key_bits.as_bytes();
        for start in 0..=(bits.len() - 32) {
            let window = std::str::from_utf8(&bits[start..start + 32]).unwrap();
            assert!(
                !state.contains(window),
                "proxy state leaks key window at {start}"
            );
        }
    }
}
