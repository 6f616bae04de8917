//! The key-management server: tagname pairing and fragmented key issuance.
//!
//! A session is keyed by its tagname. The first `/get-key` arrival parks the
//! endpoint's public key, channels, and parameters; the second arrival with
//! the same tagname and equal (key_type, num_of_splits, shuffle) triggers
//! issuance: one key is generated, and for each endpoint the key is split,
//! optionally shuffled, encrypted fragment-by-fragment under that endpoint's
//! public key, assigned to channels by independent uniform draws, and grouped
//! into one bundle per non-empty channel.
//!
//! Tagnames are single-use forever: once a record leaves `WaitingForPeer`
//! (issuance, failure, or expiry) the tagname can never be presented again.

use std::collections::BTreeMap;

use base64::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::cryptoenvelope::{encrypt_fragment, AsymmetricScheme, CryptoError, DefaultScheme};
use crate::keycore::{
    generate_key, shuffle_fragments, split_key, KeycoreError, SessionKey,
};
use crate::wire::{FragmentDelivery, GetKeyAck, Message, ProxyKeyRequest, WireError};

/// Errors from request handling and issuance.
#[derive(Debug, Error, PartialEq)]
pub enum QkmsError {
    /// Tagnames must be non-empty (schema allows "", semantics do not).
    #[error("empty tagname")]
    EmptyTagname,
    /// The tagname already paired, failed, or expired; tagnames are single-use.
    #[error("tagname {0:?} has already been used")]
    TagnameAlreadyUsed(String),
    /// The same proxy presented the tagname twice; pairing needs two
    /// distinct endpoints, so a repeat is treated as a protocol violation.
    #[error("proxy {proxy:?} already holds the pending request for {tagname:?}")]
    DuplicateEndpoint {
        /// Session tagname.
        tagname: String,
        /// Offending proxy endpoint.
        proxy: String,
    },
    /// The second request disagrees with the first on a pairing parameter.
    #[error("parameter mismatch on {field} for tagname {tagname:?}")]
    ParameterMismatch {
        /// Session tagname.
        tagname: String,
        /// Which parameter differed.
        field: &'static str,
    },
    /// The request failed wire-level shape checks.
    #[error(transparent)]
    InvalidRequest(#[from] WireError),
    /// Key generation or splitting rejected the requested parameters.
    #[error(transparent)]
    Key(#[from] KeycoreError),
    /// Public-key import or fragment encryption failed.
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    /// No such session.
    #[error("unknown session {0:?}")]
    UnknownSession(String),
}

/// Lifecycle of one tagname.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    /// One endpoint has presented the tagname.
    WaitingForPeer,
    /// Both endpoints matched; key generated and dispatched.
    Issued,
    /// Both clients confirmed reconstruction.
    Completed,
    /// Delivery failure, mismatch damage, or expiry.
    Failed,
}

#[derive(Debug, Clone)]
struct EndpointEntry {
    proxy: String,
    public_key: String,
    channels: Vec<String>,
    key_type: u32,
    num_of_splits: u32,
    shuffle: bool,
}

#[derive(Debug)]
struct SessionRecord {
    state: SessionState,
    created_at_ms: f64,
    endpoints: Vec<EndpointEntry>,
    session_key: Option<SessionKey>,
    next_bundle_id: u64,
}

/// One bundle ready for conventional-channel transfer to a proxy.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchAction {
    /// Proxy endpoint that owns the target channel.
    pub proxy: String,
    /// Channel address the bundle was assigned to.
    pub channel: String,
    /// The wire message to hand to the proxy.
    pub delivery: FragmentDelivery,
}

/// Outcome of one `/get-key` arrival.
#[derive(Debug, Clone, PartialEq)]
pub enum QkmsResponse {
    /// First arrival: parked, waiting for the peer.
    Waiting(GetKeyAck),
    /// Second arrival: key issued, bundles ready for dispatch.
    Issued {
        /// Acknowledgment for the requesting proxy.
        ack: GetKeyAck,
        /// Bundles for both endpoints, in endpoint-arrival order.
        dispatches: Vec<DispatchAction>,
    },
}

/// Tunables of the key server.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QkmsConfig {
    /// Logical lifetime of a waiting (unpaired) record, in milliseconds.
    pub waiting_timeout_ms: f64,
}

impl Default for QkmsConfig {
    fn default() -> Self {
        Self { waiting_timeout_ms: 300_000.0 }
    }
}

/// The key-management server state machine.
pub struct Qkms<S: AsymmetricScheme = DefaultScheme> {
    scheme: S,
    config: QkmsConfig,
    rng: ChaCha20Rng,
    sessions: BTreeMap<String, SessionRecord>,
    keys_generated: u64,
    trace: Vec<String>,
}

impl<S: AsymmetricScheme> Qkms<S> {
    /// A server using `scheme` for fragment encryption, drawing all
    /// randomness from a generator seeded with `seed`.
    pub fn new(scheme: S, config: QkmsConfig, seed: u64) -> Self {
        Self {
            scheme,
            config,
            rng: ChaCha20Rng::seed_from_u64(seed),
            sessions: BTreeMap::new(),
            keys_generated: 0,
            trace: Vec::new(),
        }
    }

    /// Handles one `/get-key` request forwarded by `from_proxy` at logical
    /// time `now_ms`. See the module docs for the pairing rules.
    pub fn handle_request(
        &mut self,
        request: &ProxyKeyRequest,
        from_proxy: &str,
        now_ms: f64,
    ) -> Result<QkmsResponse, QkmsError> {
        self.expire_stale(now_ms);
        request.validate()?;
        if request.tagname.is_empty() {
            return Err(QkmsError::EmptyTagname);
        }
        validate_key_parameters(request.key_type, request.num_of_splits)?;
        // Surface a bad public key at arrival, not at issuance.
        self.scheme.import_public_key(&request.public_key)?;

        let entry = EndpointEntry {
            proxy: from_proxy.to_string(),
            public_key: request.public_key.clone(),
            channels: request.channels.clone(),
            key_type: request.key_type,
            num_of_splits: request.num_of_splits,
            shuffle: request.shuffle,
        };
        let ack = GetKeyAck { tagname: request.tagname.clone() };

        match self.sessions.get_mut(&request.tagname) {
            None => {
                self.sessions.insert(
                    request.tagname.clone(),
                    SessionRecord {
                        state: SessionState::WaitingForPeer,
                        created_at_ms: now_ms,
                        endpoints: vec![entry],
                        session_key: None,
                        next_bundle_id: 0,
                    },
                );
                Ok(QkmsResponse::Waiting(ack))
            }
            Some(record) => {
                if record.state != SessionState::WaitingForPeer {
                    return Err(QkmsError::TagnameAlreadyUsed(request.tagname.clone()));
                }
                let first = &record.endpoints[0];
                if first.proxy == from_proxy {
                    return Err(QkmsError::DuplicateEndpoint {
                        tagname: request.tagname.clone(),
                        proxy: from_proxy.to_string(),
                    });
                }
                let mismatch = [
                    ("key_type", first.key_type != entry.key_type),
                    ("num_of_splits", first.num_of_splits != entry.num_of_splits),
                    ("shuffle", first.shuffle != entry.shuffle),
                ]
                .into_iter()
                .find(|(_, differs)| *differs);
                if let Some((field, _)) = mismatch {
                    return Err(QkmsError::ParameterMismatch {
                        tagname: request.tagname.clone(),
                        field,
                    });
                }
                record.endpoints.push(entry);
                let dispatches = self.issue(&request.tagname)?;
                Ok(QkmsResponse::Issued { ack, dispatches })
            }
        }
    }

    /// Generates the key and produces both endpoints' bundles.
    fn issue(&mut self, tagname: &str) -> Result<Vec<DispatchAction>, QkmsError> {
        let record = self.sessions.get(tagname).expect("caller verified");
        let endpoints = record.endpoints.clone();
        debug_assert_eq!(endpoints.len(), 2);
        let key_type = endpoints[0].key_type as usize;
        let n = endpoints[0].num_of_splits as usize;
        let shuffle = endpoints[0].shuffle;

        let key = generate_key(key_type, &mut self.rng)?;
        self.keys_generated += 1;

        let mut dispatches = Vec::new();
        let mut next_bundle_id = 0u64;
        for endpoint in &endpoints {
            let mut set = split_key(&key, n)?;
            if shuffle {
                set = shuffle_fragments(set, &mut self.rng)?;
            }
            for fragment in set.fragments() {
                self.trace.push(fragment.trace_line());
            }
            let public_key = self.scheme.import_public_key(&endpoint.public_key)?;
            let assignment = assign_channels(n, &endpoint.channels, &mut self.rng)?;
            let mut per_channel: Vec<Vec<String>> = vec![Vec::new(); endpoint.channels.len()];
            for (position, fragment) in set.fragments().iter().enumerate() {
                let encrypted =
                    encrypt_fragment(&self.scheme, fragment, &public_key, tagname, &mut self.rng)?;
                per_channel[assignment[position]]
                    .push(BASE64_STANDARD.encode(&encrypted.ciphertext));
            }
            for (channel_index, fragments) in per_channel.into_iter().enumerate() {
                if fragments.is_empty() {
                    continue;
                }
                next_bundle_id += 1;
                dispatches.push(DispatchAction {
                    proxy: endpoint.proxy.clone(),
                    channel: endpoint.channels[channel_index].clone(),
                    delivery: FragmentDelivery {
                        tagname: tagname.to_string(),
                        fragments,
                        bundle_id: next_bundle_id,
                    },
                });
            }
        }

        let record = self.sessions.get_mut(tagname).expect("caller verified");
        record.state = SessionState::Issued;
        record.session_key = Some(key);
        record.next_bundle_id = next_bundle_id;
        Ok(dispatches)
    }

    /// Fails every waiting record older than the configured timeout. Expired
    /// tagnames stay in the table and remain unusable.
    fn expire_stale(&mut self, now_ms: f64) {
        for record in self.sessions.values_mut() {
            if record.state == SessionState::WaitingForPeer
                && now_ms - record.created_at_ms > self.config.waiting_timeout_ms
            {
                record.state = SessionState::Failed;
            }
        }
    }

    /// Current state of a tagname, if ever seen.
    pub fn session_state(&self, tagname: &str) -> Option<SessionState> {
        self.sessions.get(tagname).map(|r| r.state)
    }

    /// The key issued for a tagname (ground truth for validation).
    pub fn session_key(&self, tagname: &str) -> Option<&SessionKey> {
        self.sessions.get(tagname).and_then(|r| r.session_key.as_ref())
    }

    /// Total keys ever generated.
    pub fn keys_generated(&self) -> u64 {
        self.keys_generated
    }

    /// Marks an issued session completed (both clients reconstructed).
    pub fn mark_completed(&mut self, tagname: &str) -> Result<(), QkmsError> {
        self.transition(tagname, SessionState::Completed)
    }

    /// Marks a session failed (delivery failure or client rejection).
    pub fn mark_failed(&mut self, tagname: &str) -> Result<(), QkmsError> {
        self.transition(tagname, SessionState::Failed)
    }

    fn transition(&mut self, tagname: &str, state: SessionState) -> Result<(), QkmsError> {
        let record = self
            .sessions
            .get_mut(tagname)
            .ok_or_else(|| QkmsError::UnknownSession(tagname.to_string()))?;
        record.state = state;
        Ok(())
    }

    /// Drains accumulated trace lines (`Part k of n: <bits>`).
    pub fn take_trace(&mut self) -> Vec<String> {
        std::mem::take(&mut self.trace)
    }
}

fn validate_key_parameters(key_type: u32, num_of_splits: u32) -> Result<(), QkmsError> {
    let key_type = key_type as usize;
    let n = num_of_splits as usize;
    if key_type < 8 || key_type % 8 != 0 {
        return Err(QkmsError::Key(KeycoreError::InvalidKeyType(key_type)));
    }
    if n < 1 || n > key_type || n > u16::MAX as usize {
        return Err(QkmsError::Key(KeycoreError::InvalidSplitCount { n, key_bits: key_type }));
    }
    Ok(())
}

/// Draws a channel index for each of `n` fragments, independently and
/// uniformly over `channels`.
pub fn assign_channels(
    n: usize,
    channels: &[String],
    rng: &mut ChaCha20Rng,
) -> Result<Vec<usize>, QkmsError> {
    if channels.is_empty() {
        return Err(QkmsError::InvalidRequest(WireError::InvalidField {
            field: "channels",
            reason: "must be non-empty".into(),
        }));
    }
    Ok((0..n).map(|_| rand::Rng::gen_range(rng, 0..channels.len())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cryptoenvelope::{decrypt_fragment, EncryptedFragment, RsaOaepSha256};

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// A small scheme keeps the tests quick; behavior is size-independent.
    fn scheme() -> RsaOaepSha256 {
        RsaOaepSha256::new(1024)
    }

    fn public_key_text(seed: u64) -> String {
        let s = scheme();
        let keys = s.generate_keypair(&mut rng(seed)).unwrap();
        s.export_public_key(&keys.public_key)
    }

    fn request(tagname: &str, public_key: &str, channels: &[&str]) -> ProxyKeyRequest {
        ProxyKeyRequest {
            tagname: tagname.into(),
            key_type: 64,
            num_of_splits: 4,
            shuffle: true,
            public_key: public_key.into(),
            channels: channels.iter().map(|c| c.to_string()).collect(),
        }
    }

    fn qkms() -> Qkms<RsaOaepSha256> {
        Qkms::new(scheme(), QkmsConfig::default(), 0xA0)
    }

    #[test]
    fn first_arrival_waits_second_issues_exactly_one_key() {
        let mut qkms = qkms();
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        let r1 = qkms
            .handle_request(&request("tag-1", &pk_a, &["http://p:1/"]), "proxy-a", 0.0)
            .unwrap();
        assert_eq!(r1, QkmsResponse::Waiting(GetKeyAck { tagname: "tag-1".into() }));
        assert_eq!(qkms.session_state("tag-1"), Some(SessionState::WaitingForPeer));
        assert_eq!(qkms.keys_generated(), 0);
        assert!(qkms.session_key("tag-1").is_none());

        let r2 = qkms
            .handle_request(&request("tag-1", &pk_b, &["http://q:1/"]), "proxy-b", 5.0)
            .unwrap();
        let QkmsResponse::Issued { ack, dispatches } = r2 else {
            panic!("second matching arrival must issue");
        };
        assert_eq!(ack.tagname, "tag-1");
        assert_eq!(qkms.session_state("tag-1"), Some(SessionState::Issued));
        assert_eq!(qkms.keys_generated(), 1);
        assert!(qkms.session_key("tag-1").is_some());
        // Single channel per endpoint: one bundle each, all fragments inside.
        assert_eq!(dispatches.len(), 2);
        assert_eq!(dispatches[0].proxy, "proxy-a");
        assert_eq!(dispatches[1].proxy, "proxy-b");
        for dispatch in &dispatches {
            assert_eq!(dispatch.delivery.fragments.len(), 4);
            assert_eq!(dispatch.delivery.tagname, "tag-1");
        }
        let ids: Vec<u64> = dispatches.iter().map(|d| d.delivery.bundle_id).collect();
        assert_eq!(ids, vec![1, 2]);
    }

    #[test]
    fn distinct_tagnames_wait_independently() {
        let mut qkms = qkms();
        let pk = public_key_text(1);
        qkms.handle_request(&request("A", &pk, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        qkms.handle_request(&request("B", &pk, &["http://q:1/"]), "proxy-b", 0.0).unwrap();
        assert_eq!(qkms.session_state("A"), Some(SessionState::WaitingForPeer));
        assert_eq!(qkms.session_state("B"), Some(SessionState::WaitingForPeer));
        assert_eq!(qkms.keys_generated(), 0);
    }

    #[test]
    fn tagnames_are_single_use_after_issuance() {
        let mut qkms = qkms();
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        qkms.handle_request(&request("T", &pk_b, &["http://q:1/"]), "proxy-b", 1.0).unwrap();
        let third = qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-c", 2.0);
        assert_eq!(third.unwrap_err(), QkmsError::TagnameAlreadyUsed("T".into()));
        // Completion does not reopen it either.
        qkms.mark_completed("T").unwrap();
        let fourth = qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-c", 3.0);
        assert_eq!(fourth.unwrap_err(), QkmsError::TagnameAlreadyUsed("T".into()));
    }

    #[test]
    fn parameter_mismatch_rejects_the_second_request() {
        let mut qkms = qkms();
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        let mut wrong = request("T", &pk_b, &["http://q:1/"]);
        wrong.shuffle = false;
        assert_eq!(
            qkms.handle_request(&wrong, "proxy-b", 1.0).unwrap_err(),
            QkmsError::ParameterMismatch { tagname: "T".into(), field: "shuffle" }
        );
        // The first endpoint keeps waiting; a true match still pairs.
        assert_eq!(qkms.session_state("T"), Some(SessionState::WaitingForPeer));
        let ok = qkms.handle_request(&request("T", &pk_b, &["http://q:1/"]), "proxy-b", 2.0);
        assert!(matches!(ok.unwrap(), QkmsResponse::Issued { .. }));
    }

    #[test]
    fn same_proxy_cannot_pair_with_itself() {
        let mut qkms = qkms();
        let pk = public_key_text(1);
        qkms.handle_request(&request("T", &pk, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        assert_eq!(
            qkms.handle_request(&request("T", &pk, &["http://p:1/"]), "proxy-a", 1.0).unwrap_err(),
            QkmsError::DuplicateEndpoint { tagname: "T".into(), proxy: "proxy-a".into() }
        );
    }

    #[test]
    fn waiting_records_expire_and_stay_burned() {
        let mut qkms = Qkms::new(scheme(), QkmsConfig { waiting_timeout_ms: 100.0 }, 0xA1);
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        // Peer arrives too late: the record expired and the tagname is burned.
        let late = qkms.handle_request(&request("T", &pk_b, &["http://q:1/"]), "proxy-b", 200.0);
        assert_eq!(late.unwrap_err(), QkmsError::TagnameAlreadyUsed("T".into()));
        assert_eq!(qkms.session_state("T"), Some(SessionState::Failed));
        assert_eq!(qkms.keys_generated(), 0);
    }

    #[test]
    fn semantic_validation_rejects_bad_requests() {
        let mut qkms = qkms();
        let pk = public_key_text(1);
        let mut empty_tag = request("", &pk, &["http://p:1/"]);
        empty_tag.tagname = String::new();
        assert_eq!(
            qkms.handle_request(&empty_tag, "proxy-a", 0.0).unwrap_err(),
            QkmsError::EmptyTagname
        );
        let mut odd_bits = request("T", &pk, &["http://p:1/"]);
        odd_bits.key_type = 33;
        assert_eq!(
            qkms.handle_request(&odd_bits, "proxy-a", 0.0).unwrap_err(),
            QkmsError::Key(KeycoreError::InvalidKeyType(33))
        );
        let mut too_many_splits = request("T", &pk, &["http://p:1/"]);
        too_many_splits.num_of_splits = 65;
        assert_eq!(
            qkms.handle_request(&too_many_splits, "proxy-a", 0.0).unwrap_err(),
            QkmsError::Key(KeycoreError::InvalidSplitCount { n: 65, key_bits: 64 })
        );
        let bad_key = request("T", "not a key", &["http://p:1/"]);
        assert!(matches!(
            qkms.handle_request(&bad_key, "proxy-a", 0.0).unwrap_err(),
            QkmsError::Crypto(CryptoError::MalformedPublicKey(_))
        ));
        // Nothing was parked by any of the rejected requests.
        assert_eq!(qkms.session_state("T"), None);
    }

    #[test]
    fn fragments_partition_across_bundles() {
        let mut qkms = qkms();
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        let channels = ["http://p:1/", "http://p:2/", "http://p:3/"];
        let mut r = request("T", &pk_a, &channels);
        r.key_type = 80;
        r.num_of_splits = 10;
        qkms.handle_request(&r, "proxy-a", 0.0).unwrap();
        let mut r2 = request("T", &pk_b, &channels);
        r2.key_type = 80;
        r2.num_of_splits = 10;
        let QkmsResponse::Issued { dispatches, .. } =
            qkms.handle_request(&r2, "proxy-b", 1.0).unwrap()
        else {
            panic!("expected issuance");
        };
        for proxy in ["proxy-a", "proxy-b"] {
            let total: usize = dispatches
                .iter()
                .filter(|d| d.proxy == proxy)
                .map(|d| d.delivery.fragments.len())
                .sum();
            assert_eq!(total, 10, "every fragment lands in exactly one bundle");
        }
        let mut ids: Vec<u64> = dispatches.iter().map(|d| d.delivery.bundle_id).collect();
        let raw = ids.clone();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), raw.len(), "bundle ids must be unique per session");
        for dispatch in &dispatches {
            assert!(!dispatch.delivery.fragments.is_empty());
            assert!(dispatch.channel.starts_with("http://p:"));
        }
    }

    #[test]
    fn dispatch_orders_are_shuffled_independently_per_endpoint() {
        let s = scheme();
        let keys_a = s.generate_keypair(&mut rng(11)).unwrap();
        let keys_b = s.generate_keypair(&mut rng(12)).unwrap();
        let mut qkms = Qkms::new(scheme(), QkmsConfig::default(), 0xA2);
        // One channel each so the single bundle preserves dispatch order.
        let mut r1 = request("T", &s.export_public_key(&keys_a.public_key), &["http://p:1/"]);
        let mut r2 = request("T", &s.export_public_key(&keys_b.public_key), &["http://q:1/"]);
        for r in [&mut r1, &mut r2] {
            r.key_type = 80;
            r.num_of_splits = 10;
        }
        qkms.handle_request(&r1, "proxy-a", 0.0).unwrap();
        let QkmsResponse::Issued { dispatches, .. } =
            qkms.handle_request(&r2, "proxy-b", 1.0).unwrap()
        else {
            panic!("expected issuance");
        };
        let order_of = |dispatch: &DispatchAction, private| -> Vec<u16> {
            dispatch
                .delivery
                .fragments
                .iter()
                .map(|b64| {
                    let ef = EncryptedFragment {
                        ciphertext: BASE64_STANDARD.decode(b64).unwrap(),
                        session_tag: "T".into(),
                    };
                    decrypt_fragment(&s, &ef, private).unwrap().0.index()
                })
                .collect()
        };
        let order_a = order_of(&dispatches[0], &keys_a.private_key);
        let order_b = order_of(&dispatches[1], &keys_b.private_key);
        let mut sorted_a = order_a.clone();
        sorted_a.sort_unstable();
        assert_eq!(sorted_a, (1..=10).collect::<Vec<u16>>());
        assert_ne!(order_a, order_b, "endpoints should draw separate shuffles");
        assert_ne!(order_a, (1..=10).collect::<Vec<u16>>(), "order should actually shuffle");
    }

    #[test]
    fn trace_lines_follow_the_part_format() {
        let mut qkms = qkms();
        let pk_a = public_key_text(1);
        let pk_b = public_key_text(2);
        qkms.handle_request(&request("T", &pk_a, &["http://p:1/"]), "proxy-a", 0.0).unwrap();
        qkms.handle_request(&request("T", &pk_b, &["http://q:1/"]), "proxy-b", 1.0).unwrap();
        let trace = qkms.take_trace();
        // 4 fragments per endpoint, both endpoints traced.
        assert_eq!(trace.len(), 8);
        for line in &trace {
            let (head, bits) = line.split_once(": ").unwrap();
            assert!(head.starts_with("Part "));
            assert!(head.ends_with(" of 4"));
            assert_eq!(bits.len(), 16);
            assert!(bits.chars().all(|c| c == '0' || c == '1'));
        }
        assert!(qkms.take_trace().is_empty(), "trace drains");
    }

    /// Oracle: exact Bernoulli(1/2) behavior of channel assignment. Pooled
    /// over 10^4 runs of 10 draws, channel 0 receives a fraction 0.5 within
    /// 3 standard errors; and the all-on-one-channel event matches its exact
    /// probability 2 * (1/2)^10.
    #[test]
    fn channel_assignment_matches_exact_probabilities() {
        let channels = vec!["http://p:1/".to_string(), "http://p:2/".to_string()];
        let runs = 10_000usize;
        let n = 10usize;
        let mut r = rng(0xC4A2);
        let mut on_first = 0usize;
        let mut all_same = 0usize;
        for _ in 0..runs {
            let assignment = assign_channels(n, &channels, &mut r).unwrap();
            on_first += assignment.iter().filter(|&&c| c == 0).count();
            if assignment.iter().all(|&c| c == assignment[0]) {
                all_same += 1;
            }
        }
        let draws = (runs * n) as f64;
        let per_fragment = on_first as f64 / draws;
        let se = (0.25 / draws).sqrt();
        assert!(
            (per_fragment - 0.5).abs() <= 3.0 * se,
            "per-fragment channel-0 rate {per_fragment} outside 0.5 ± 3·{se}"
        );
        let expected_all = 2.0 * 0.5f64.powi(10);
        let all_rate = all_same as f64 / runs as f64;
        let se_all = (expected_all * (1.0 - expected_all) / runs as f64).sqrt();
        assert!(
            (all_rate - expected_all).abs() <= 3.0 * se_all,
            "all-on-one-channel rate {all_rate} outside {expected_all} ± 3·{se_all}"
        );
    }

    #[test]
    fn degenerate_and_empty_channel_lists() {
        let one = vec!["http://p:1/".to_string()];
        let assignment = assign_channels(10, &one, &mut rng(0)).unwrap();
        assert!(assignment.iter().all(|&c| c == 0));
        assert!(assign_channels(3, &[], &mut rng(0)).is_err());
    }
}
