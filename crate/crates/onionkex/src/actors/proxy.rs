//! The proxy endpoint: relays key requests and fragment bundles.
//!
//! A proxy sits between one client and the key server. It forwards the
//! client's request with its own conventional-channel addresses appended,
//! and later relays each fragment bundle to the client over a fresh onion
//! circuit (one NEWNYM signal per bundle, so every bundle rides its own
//! circuit). The proxy never holds a decryption key: everything it sees is
//! logged verbatim into observable state, which stays ciphertext-only.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::oniontransport::sim::{Receipt, SimNetwork, TransportError};
use crate::wire::{self, FragmentDelivery, KeyRequest, Message, ProxyKeyRequest, WireError};

/// Logical endpoint path bundles are delivered to on the client.
pub const RECEIVE_FRAGMENT_PATH: &str = "/receive-key-fragment";

/// Errors from request validation and bundle relay.
#[derive(Debug, Error, PartialEq)]
pub enum ProxyError {
    /// The client sent an empty tagname; nothing is forwarded.
    #[error("empty tagname")]
    EmptyTagname,
    /// The proxy was configured without conventional channels.
    #[error("proxy {0:?} has no channels configured")]
    NoChannels(String),
    /// The request failed wire-level shape checks.
    #[error(transparent)]
    InvalidRequest(#[from] WireError),
    /// A bundle could not be delivered; later bundles were not attempted.
    #[error("bundle {bundle_id} delivery failed: {source}")]
    Delivery {
        /// Bundle that failed.
        bundle_id: u64,
        /// Underlying transport failure.
        source: TransportError,
    },
    /// A transport failure outside any specific bundle.
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// Per-session relay progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelayState {
    /// Request forwarded, bundles not yet seen.
    Requested,
    /// At least one bundle relayed, none failed.
    Delivering,
    /// A bundle failed; the session is abandoned.
    Failed,
}

/// Static identity of a proxy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProxyConfig {
    /// Endpoint name of this proxy.
    pub name: String,
    /// Endpoint name of the client it serves.
    pub client: String,
    /// Conventional-channel addresses appended to forwarded requests.
    pub channels: Vec<String>,
}

/// A proxy endpoint.
pub struct Proxy {
    config: ProxyConfig,
    sessions: BTreeMap<String, RelayState>,
    log: Vec<String>,
}

impl Proxy {
    /// A proxy with the given identity.
    pub fn new(config: ProxyConfig) -> Self {
        Self { config, sessions: BTreeMap::new(), log: Vec::new() }
    }

    /// Endpoint name.
    pub fn name(&self) -> &str {
        &self.config.name
    }

    /// The client this proxy serves.
    pub fn client(&self) -> &str {
        &self.config.client
    }

    /// Validates a client's request and appends this proxy's channels,
    /// producing the message to forward to the key server.
    pub fn handle_client_request(
        &mut self,
        request: &KeyRequest,
    ) -> Result<ProxyKeyRequest, ProxyError> {
        request.validate()?;
        if request.tagname.is_empty() {
            return Err(ProxyError::EmptyTagname);
        }
        if self.config.channels.is_empty() {
            return Err(ProxyError::NoChannels(self.config.name.clone()));
        }
        let forwarded = ProxyKeyRequest::from_request(request.clone(), self.config.channels.clone());
        self.log.push(format!(
            "forward tagname={} request={}",
            request.tagname,
            String::from_utf8(wire::encode(&forwarded)?).expect("JSON is UTF-8"),
        ));
        self.sessions.insert(request.tagname.clone(), RelayState::Requested);
        Ok(forwarded)
    }

    /// Relays `bundles` to the client, signalling NEWNYM before each one so
    /// every bundle travels on a fresh circuit. Stops at the first failure:
    /// the session is marked failed and later bundles are never sent.
    pub fn forward_bundles(
        &mut self,
        bundles: &[FragmentDelivery],
        network: &mut SimNetwork,
    ) -> Result<Vec<Receipt>, ProxyError> {
        let mut receipts = Vec::with_capacity(bundles.len());
        for bundle in bundles {
            let bytes = wire::encode(bundle)?;
            self.log.push(format!(
                "relay tagname={} bundle={} payload={}",
                bundle.tagname,
                bundle.bundle_id,
                String::from_utf8(bytes.clone()).expect("JSON is UTF-8"),
            ));
            let attempt = network
                .newnym(&self.config.name)
                .and_then(|()| {
                    network.send_onion(
                        &self.config.name,
                        &self.config.client,
                        RECEIVE_FRAGMENT_PATH,
                        bytes,
                    )
                })
                .map_err(|source| ProxyError::Delivery { bundle_id: bundle.bundle_id, source });
            match attempt {
                Ok(receipt) => {
                    receipts.push(receipt);
                    self.sessions.insert(bundle.tagname.clone(), RelayState::Delivering);
                }
                Err(error) => {
                    self.sessions.insert(bundle.tagname.clone(), RelayState::Failed);
                    self.log.push(format!(
                        "failed tagname={} bundle={}",
                        bundle.tagname, bundle.bundle_id
                    ));
                    return Err(error);
                }
            }
        }
        Ok(receipts)
    }

    /// Relay progress for a tagname, if this proxy has seen it.
    pub fn session_state(&self, tagname: &str) -> Option<RelayState> {
        self.sessions.get(tagname).copied()
    }

    /// Everything this proxy knows, flattened to one searchable string:
    /// configuration, session table, and the full message log. Used to check
    /// that no key material is visible from inside the proxy.
    pub fn observable_state(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "name={} client={} channels={:?}\n",
            self.config.name, self.config.client, self.config.channels
        ));
        for (tagname, state) in &self.sessions {
            out.push_str(&format!("session tagname={tagname} state={state:?}\n"));
        }
        for line in &self.log {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}
