//! The client endpoint: requests a key, decrypts fragments, reassembles.
//!
//! A client opens a session by building a request carrying its public key,
//! then consumes fragment bundles as they arrive: each ciphertext is
//! decrypted with the client's private key, the recovered part index slots
//! the fragment regardless of arrival or dispatch order, and once every
//! index is present the fragments are concatenated back into the key.
//!
//! Sessions are fail-stop: any decryption failure, conflicting fragment, or
//! total mismatch permanently fails the session. Identical re-deliveries of
//! a fragment already held are ignored.

use std::collections::BTreeMap;
use std::time::Duration;

use base64::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::cryptoenvelope::{
    decrypt_fragment, AsymmetricScheme, CryptoError, DefaultScheme, EncryptedFragment,
    RecipientKeyPair,
};
use crate::keycore::{reassemble, Fragment, KeycoreError, SessionKey};
use crate::wire::{FragmentDelivery, KeyRequest};

use super::{derive_session_cipher, SessionCipher, SessionCipherError};

/// Errors from session handling on the client.
#[derive(Debug, Error, PartialEq)]
pub enum ClientError {
    /// A delivery referenced a tagname this client never requested.
    #[error("unknown tagname {0:?}")]
    UnknownTagname(String),
    /// The session already failed; deliveries are no longer accepted.
    #[error("session {tagname:?} already failed: {reason}")]
    SessionAlreadyFailed {
        /// Session tagname.
        tagname: String,
        /// First recorded failure.
        reason: String,
    },
    /// A ciphertext could not be decoded or decrypted; the session fails.
    #[error("fragment decryption failed for {0:?}")]
    Decryption(String),
    /// Two fragments claimed the same index with different contents.
    #[error("conflicting fragment at index {index} for {tagname:?}")]
    ConflictingFragment {
        /// Session tagname.
        tagname: String,
        /// Contested part index.
        index: u16,
    },
    /// A fragment declared a different split count than the request.
    #[error("fragment claims {got} total parts, session expects {expected}")]
    TotalMismatch {
        /// Split count from the request.
        expected: u16,
        /// Split count carried by the fragment.
        got: u16,
    },
    /// All fragments arrived but concatenation or length checks failed.
    #[error(transparent)]
    Reassembly(#[from] KeycoreError),
    /// The session has no reconstructed key yet.
    #[error("no key reconstructed for {0:?}")]
    KeyNotReady(String),
    /// Working-cipher derivation or use failed.
    #[error(transparent)]
    Cipher(#[from] SessionCipherError),
    /// Local key generation failed.
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Progress of one requested session.
#[derive(Debug)]
pub struct ClientSessionState {
    /// Requested key length in bits.
    pub key_type: u32,
    /// Requested split count.
    pub expected_total: u16,
    /// Fragments recovered so far, by part index.
    pub received: BTreeMap<u16, Fragment>,
    /// Set once every index is present and the key is rebuilt.
    pub session_key: Option<SessionKey>,
    /// First failure, if any; a failed session never recovers.
    pub failed: Option<String>,
    /// Wall-clock decryption time per accepted fragment.
    pub decrypt_times: Vec<Duration>,
}

impl ClientSessionState {
    /// Whether the key has been reconstructed.
    pub fn complete(&self) -> bool {
        self.session_key.is_some()
    }
}

/// Result of feeding one bundle to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryOutcome {
    /// Fragments stored for the first time by this bundle.
    pub newly_stored: usize,
    /// Whether the session key is now reconstructed.
    pub complete: bool,
}

/// A client endpoint holding its own keypair.
pub struct Client<S: AsymmetricScheme = DefaultScheme> {
    name: String,
    scheme: S,
    keys: RecipientKeyPair<S>,
    sessions: BTreeMap<String, ClientSessionState>,
    trace: Vec<String>,
    rng: ChaCha20Rng,
}

impl<S: AsymmetricScheme> Client<S> {
    /// A client named `name`, with a fresh keypair generated from `seed`.
    pub fn new(name: &str, scheme: S, seed: u64) -> Result<Self, ClientError> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let keys = scheme.generate_keypair(&mut rng)?;
        Ok(Self {
            name: name.to_string(),
            scheme,
            keys,
            sessions: BTreeMap::new(),
            trace: Vec::new(),
            rng,
        })
    }

    /// A client reusing an existing keypair. Key generation dominates setup
    /// cost, so batch runs share keypairs across sessions.
    pub fn with_keypair(name: &str, scheme: S, keys: RecipientKeyPair<S>, seed: u64) -> Self {
        Self {
            name: name.to_string(),
            scheme,
            keys,
            sessions: BTreeMap::new(),
            trace: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    /// Endpoint name.
    pub fn name(&self) -> &str {
        &self.name
    }

    /// This client's public key in transferable text form.
    pub fn public_key_text(&self) -> String {
        self.scheme.export_public_key(&self.keys.public_key)
    }

    /// Opens a session and produces the request to hand to this client's
    /// proxy.
    pub fn build_request(
        &mut self,
        tagname: &str,
        key_type: u32,
        num_of_splits: u32,
        shuffle: bool,
    ) -> KeyRequest {
        self.sessions.insert(
            tagname.to_string(),
            ClientSessionState {
                key_type,
                expected_total: num_of_splits as u16,
                received: BTreeMap::new(),
                session_key: None,
                failed: None,
                decrypt_times: Vec::new(),
            },
        );
        KeyRequest {
            tagname: tagname.to_string(),
            key_type,
            num_of_splits,
            shuffle,
            public_key: self.public_key_text(),
        }
    }

    /// Consumes one bundle: decrypts every ciphertext, slots the recovered
    /// fragments, and reassembles the key once all parts are present.
    pub fn handle_delivery(
        &mut self,
        delivery: &FragmentDelivery,
    ) -> Result<DeliveryOutcome, ClientError> {
        let session = self
            .sessions
            .get(&delivery.tagname)
            .ok_or_else(|| ClientError::UnknownTagname(delivery.tagname.clone()))?;
        if let Some(reason) = &session.failed {
            return Err(ClientError::SessionAlreadyFailed {
                tagname: delivery.tagname.clone(),
                reason: reason.clone(),
            });
        }

        let mut newly_stored = 0usize;
        for encoded in &delivery.fragments {
            match self.accept_fragment(&delivery.tagname, encoded) {
                Ok(stored) => newly_stored += usize::from(stored),
                Err(error) => {
                    let session = self.sessions.get_mut(&delivery.tagname).expect("checked");
                    session.failed = Some(error.to_string());
                    return Err(error);
                }
            }
        }

        let session = self.sessions.get_mut(&delivery.tagname).expect("checked");
        if session.session_key.is_none()
            && session.received.len() == usize::from(session.expected_total)
        {
            let fragments: Vec<Fragment> = session.received.values().cloned().collect();
            let result = reassemble(&fragments).and_then(|key| {
                if key.key_type() == session.key_type as usize {
                    Ok(key)
                } else {
                    Err(KeycoreError::InvalidKeyType(key.key_type()))
                }
            });
            match result {
                Ok(key) => {
                    session.session_key = Some(key);
                    self.trace.push(format!(
                        "[CLIENT] All {} fragments received; reassembling.",
                        session.expected_total
                    ));
                }
                Err(error) => {
                    session.failed = Some(error.to_string());
                    return Err(ClientError::Reassembly(error));
                }
            }
        }

        let session = &self.sessions[&delivery.tagname];
        Ok(DeliveryOutcome { newly_stored, complete: session.complete() })
    }

    /// Decrypts one ciphertext and slots it. Returns whether it was new.
    fn accept_fragment(&mut self, tagname: &str, encoded: &str) -> Result<bool, ClientError> {
        let ciphertext = BASE64_STANDARD
            .decode(encoded)
            .map_err(|_| ClientError::Decryption(tagname.to_string()))?;
        let envelope = EncryptedFragment { ciphertext, session_tag: tagname.to_string() };
        let (fragment, elapsed) = decrypt_fragment(&self.scheme, &envelope, &self.keys.private_key)
            .map_err(|_| ClientError::Decryption(tagname.to_string()))?;

        let prefix: String = encoded.chars().take(24).collect();
        self.trace.push(format!("[CLIENT] Received share (idx={}): {prefix}...", fragment.index()));
        self.trace.push(format!(
            "Decrypted: part {} of {}, {}",
            fragment.index(),
            fragment.total(),
            fragment.payload().to_binary_string()
        ));
        self.trace.push(format!("Decryption time: {:.3} s", elapsed.as_secs_f64()));

        let session = self.sessions.get_mut(tagname).expect("caller checked");
        if fragment.total() != session.expected_total {
            return Err(ClientError::TotalMismatch {
                expected: session.expected_total,
                got: fragment.total(),
            });
        }
        match session.received.get(&fragment.index()) {
            None => {
                session.decrypt_times.push(elapsed);
                session.received.insert(fragment.index(), fragment);
                Ok(true)
            }
            Some(existing) if *existing == fragment => Ok(false),
            Some(_) => Err(ClientError::ConflictingFragment {
                tagname: tagname.to_string(),
                index: fragment.index(),
            }),
        }
    }

    /// Session progress, if the tagname was ever requested.
    pub fn session(&self, tagname: &str) -> Option<&ClientSessionState> {
        self.sessions.get(tagname)
    }

    /// The reconstructed key for a completed session.
    pub fn session_key(&self, tagname: &str) -> Option<&SessionKey> {
        self.sessions.get(tagname).and_then(|s| s.session_key.as_ref())
    }

    /// Derives the working cipher from a completed session's key.
    pub fn session_cipher(&self, tagname: &str) -> Result<SessionCipher, ClientError> {
        let key = self
            .session_key(tagname)
            .ok_or_else(|| ClientError::KeyNotReady(tagname.to_string()))?;
        Ok(derive_session_cipher(key)?)
    }

    /// Encrypts an application message under a completed session's key.
    pub fn seal_probe(&mut self, tagname: &str, plaintext: &[u8]) -> Result<Vec<u8>, ClientError> {
        let cipher = self.session_cipher(tagname)?;
        Ok(cipher.seal(plaintext, &mut self.rng))
    }

    /// Decrypts an application message sealed by the session peer.
    pub fn open_probe(&self, tagname: &str, sealed: &[u8]) -> Result<Vec<u8>, ClientError> {
        let cipher = self.session_cipher(tagname)?;
        Ok(cipher.open(sealed)?)
    }

    /// Drains accumulated trace lines.
    pub fn take_trace(&mut self) -> Vec<String> {
        std::mem::take(&mut self.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cryptoenvelope::{encrypt_fragment, RsaOaepSha256};
    use crate::keycore::{generate_key, shuffle_fragments, split_key};

    fn scheme() -> RsaOaepSha256 {
        RsaOaepSha256::new(1024)
    }

    fn client(seed: u64) -> Client<RsaOaepSha256> {
        Client::new("client-a", scheme(), seed).unwrap()
    }

    /// Encrypts a full fragment set for `client`, one ciphertext per
    /// fragment, in dispatch order. Returns the ground-truth key too.
    fn issue_for(
        client: &Client<RsaOaepSha256>,
        tagname: &str,
        key_bits: usize,
        n: usize,
        shuffle: bool,
        seed: u64,
    ) -> (SessionKey, Vec<String>) {
        let s = scheme();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let key = generate_key(key_bits, &mut rng).unwrap();
        let mut set = split_key(&key, n).unwrap();
        if shuffle {
            set = shuffle_fragments(set, &mut rng).unwrap();
        }
        let public = s.import_public_key(&client.public_key_text()).unwrap();
        let encoded = set
            .fragments()
            .iter()
            .map(|fragment| {
                let ef = encrypt_fragment(&s, fragment, &public, tagname, &mut rng).unwrap();
                BASE64_STANDARD.encode(&ef.ciphertext)
            })
            .collect();
        (key, encoded)
    }

    fn delivery(tagname: &str, fragments: Vec<String>, bundle_id: u64) -> FragmentDelivery {
        FragmentDelivery { tagname: tagname.into(), fragments, bundle_id }
    }

    #[test]
    fn reconstructs_key_from_shuffled_multi_bundle_delivery() {
        let mut client = client(1);
        client.build_request("T", 64, 8, true);
        let (key, encoded) = issue_for(&client, "T", 64, 8, true, 42);
        // Split the dispatch order across three bundles of uneven size.
        let out1 = client.handle_delivery(&delivery("T", encoded[0..3].to_vec(), 1)).unwrap();
        assert_eq!(out1, DeliveryOutcome { newly_stored: 3, complete: false });
        let out2 = client.handle_delivery(&delivery("T", encoded[3..4].to_vec(), 2)).unwrap();
        assert_eq!(out2, DeliveryOutcome { newly_stored: 1, complete: false });
        let out3 = client.handle_delivery(&delivery("T", encoded[4..8].to_vec(), 3)).unwrap();
        assert_eq!(out3, DeliveryOutcome { newly_stored: 4, complete: true });
        assert_eq!(client.session_key("T"), Some(&key));
        let session = client.session("T").unwrap();
        assert_eq!(session.decrypt_times.len(), 8);
    }

    #[test]
    fn identical_redelivery_is_ignored_conflicting_is_fatal() {
        let mut client = client(2);
        client.build_request("T", 64, 4, false);
        let (_, encoded) = issue_for(&client, "T", 64, 4, false, 43);
        client.handle_delivery(&delivery("T", encoded.clone(), 1)).unwrap();
        // Same ciphertexts again: decrypts fine, stores nothing new.
        let again = client.handle_delivery(&delivery("T", vec![encoded[0].clone()], 2)).unwrap();
        assert_eq!(again, DeliveryOutcome { newly_stored: 0, complete: true });

        // A different key's fragment for an index already held conflicts.
        let mut other = client;
        let (_, foreign) = issue_for(&other, "T2", 64, 4, false, 44);
        other.build_request("T2", 64, 4, false);
        other.handle_delivery(&delivery("T2", foreign[..2].to_vec(), 1)).unwrap();
        let (_, conflicting) = issue_for(&other, "T2", 64, 4, false, 45);
        let error = other.handle_delivery(&delivery("T2", conflicting, 2)).unwrap_err();
        assert!(matches!(error, ClientError::ConflictingFragment { index: _, .. }));
        assert!(other.session("T2").unwrap().failed.is_some());
        // Failed sessions refuse further bundles, even valid ones.
        let refused = other.handle_delivery(&delivery("T2", foreign[2..].to_vec(), 3));
        assert!(matches!(refused.unwrap_err(), ClientError::SessionAlreadyFailed { .. }));
    }

    #[test]
    fn unknown_tagname_is_rejected() {
        let mut client = client(3);
        let error = client.handle_delivery(&delivery("nope", vec!["AAAA".into()], 1)).unwrap_err();
        assert_eq!(error, ClientError::UnknownTagname("nope".into()));
    }

    #[test]
    fn wrong_recipient_key_fails_the_session() {
        let mut client = client(4);
        let stranger = Client::new("client-b", scheme(), 5).unwrap();
        client.build_request("T", 64, 4, false);
        // Fragments encrypted for someone else's public key.
        let (_, encoded) = issue_for(&stranger, "T", 64, 4, false, 46);
        let error = client.handle_delivery(&delivery("T", encoded, 1)).unwrap_err();
        assert_eq!(error, ClientError::Decryption("T".into()));
        assert!(client.session("T").unwrap().failed.is_some());
    }

    #[test]
    fn split_count_disagreement_fails_the_session() {
        let mut client = client(6);
        client.build_request("T", 64, 4, false);
        // Issued with 5 splits although the request said 4.
        let (_, encoded) = issue_for(&client, "T", 64, 5, false, 47);
        let error = client.handle_delivery(&delivery("T", encoded, 1)).unwrap_err();
        assert_eq!(error, ClientError::TotalMismatch { expected: 4, got: 5 });
    }

    #[test]
    fn trace_lines_follow_the_decryption_log_format() {
        let mut client = client(7);
        client.build_request("T", 32, 2, false);
        let (_, encoded) = issue_for(&client, "T", 32, 2, false, 48);
        client.handle_delivery(&delivery("T", encoded.clone(), 1)).unwrap();
        let trace = client.take_trace();
        // Three lines per fragment plus the reassembly line.
        assert_eq!(trace.len(), 7);
        assert_eq!(
            trace[0],
            format!(
                "[CLIENT] Received share (idx=1): {}...",
                encoded[0].chars().take(24).collect::<String>()
            )
        );
        assert!(trace[1].starts_with("Decrypted: part 1 of 2, "));
        let bits = trace[1].rsplit(", ").next().unwrap();
        assert_eq!(bits.len(), 16);
        assert!(bits.chars().all(|c| c == '0' || c == '1'));
        assert!(trace[2].starts_with("Decryption time: "));
        assert!(trace[2].ends_with(" s"));
        let seconds: f64 = trace[2]
            .strip_prefix("Decryption time: ")
            .and_then(|t| t.strip_suffix(" s"))
            .unwrap()
            .parse()
            .unwrap();
        assert!((0.0..60.0).contains(&seconds));
        assert_eq!(trace[6], "[CLIENT] All 2 fragments received; reassembling.");
        assert!(client.take_trace().is_empty());
    }

    #[test]
    fn probe_messages_round_trip_between_peers_with_the_same_key() {
        let mut alice = client(8);
        let mut bob = Client::new("client-b", scheme(), 9).unwrap();
        alice.build_request("T", 128, 4, true);
        bob.build_request("T", 128, 4, true);
        // Both peers receive fragments of the same key.
        let s = scheme();
        let mut rng = ChaCha20Rng::seed_from_u64(50);
        let key = generate_key(128, &mut rng).unwrap();
        for receiver in [&mut alice, &mut bob] {
            let set = shuffle_fragments(split_key(&key, 4).unwrap(), &mut rng).unwrap();
            let public = s.import_public_key(&receiver.public_key_text()).unwrap();
            let encoded: Vec<String> = set
                .fragments()
                .iter()
                .map(|fragment| {
                    let ef = encrypt_fragment(&s, fragment, &public, "T", &mut rng).unwrap();
                    BASE64_STANDARD.encode(&ef.ciphertext)
                })
                .collect();
            receiver.handle_delivery(&delivery("T", encoded, 1)).unwrap();
        }
        assert_eq!(alice.session_key("T"), bob.session_key("T"));
        let sealed = alice.seal_probe("T", b"handshake probe").unwrap();
        assert_eq!(bob.open_probe("T", &sealed).unwrap(), b"handshake probe");
        // An incomplete session cannot seal.
        alice.build_request("U", 128, 4, true);
        assert_eq!(
            alice.seal_probe("U", b"x").unwrap_err(),
            ClientError::KeyNotReady("U".into())
        );
    }
}
