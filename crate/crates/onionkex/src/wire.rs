//! Protocol message schemas and their canonical JSON encoding.
//!
//! Four messages cross process boundaries: [`KeyRequest`] (endpoint to proxy,
//! POST `/get-key`), [`ProxyKeyRequest`] (proxy to key server, POST
//! `/get-key`), [`GetKeyAck`] (the synchronous `/get-key` response; fragments
//! arrive asynchronously), and [`FragmentDelivery`] (bundle posted to the
//! recipient's `/receive-key-fragment` endpoint).
//!
//! Encoding is UTF-8 JSON with a stable field order, so [`encode`] is
//! deterministic for a given message. Unknown fields are rejected to catch
//! cross-version drift. Semantic rules that belong to the state machines
//! (tagname non-emptiness, bundle bookkeeping) are deliberately not enforced
//! here; shape rules (positive integers, non-empty well-formed channel lists,
//! base64 fragment bodies) are.

use base64::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Schema and shape errors raised while encoding or decoding messages.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    /// Malformed JSON, a missing field, a type mismatch, or an unknown field.
    /// The message names the offending field.
    #[error("schema error: {0}")]
    Schema(String),
    /// A structurally present field violates a shape rule.
    #[error("invalid field {field}: {reason}")]
    InvalidField {
        /// Name of the offending field.
        field: &'static str,
        /// What the shape rule requires.
        reason: String,
    },
}

/// A message type with a canonical JSON form and shape rules.
pub trait Message: Serialize + DeserializeOwned {
    /// Checks shape rules beyond what the JSON schema expresses.
    fn validate(&self) -> Result<(), WireError>;
}

/// Serializes a message to its canonical (deterministic) JSON bytes.
pub fn encode<M: Message>(message: &M) -> Result<Vec<u8>, WireError> {
    message.validate()?;
    Ok(serde_json::to_vec(message).expect("message serialization is infallible"))
}

/// Parses and shape-checks a message from JSON bytes.
pub fn decode<M: Message>(bytes: &[u8]) -> Result<M, WireError> {
    let message: M =
        serde_json::from_slice(bytes).map_err(|e| WireError::Schema(e.to_string()))?;
    message.validate()?;
    Ok(message)
}

/// Key request from an endpoint to its local proxy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRequest {
    /// Session identifier agreed out of band by the two endpoints.
    pub tagname: String,
    /// Requested key length in bits.
    pub key_type: u32,
    /// Number of fragments the key is split into.
    pub num_of_splits: u32,
    /// Whether dispatch order is randomized.
    pub shuffle: bool,
    /// Requester's public key as printable text.
    pub public_key: String,
}

impl Message for KeyRequest {
    fn validate(&self) -> Result<(), WireError> {
        validate_request_numbers(self.key_type, self.num_of_splits)
    }
}

/// Key request as forwarded by a proxy, extended with its delivery channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyKeyRequest {
    /// Session identifier agreed out of band by the two endpoints.
    pub tagname: String,
    /// Requested key length in bits.
    pub key_type: u32,
    /// Number of fragments the key is split into.
    pub num_of_splits: u32,
    /// Whether dispatch order is randomized.
    pub shuffle: bool,
    /// Requester's public key as printable text.
    pub public_key: String,
    /// Logical channel addresses exposed by the proxy for fragment return.
    pub channels: Vec<String>,
}

impl ProxyKeyRequest {
    /// Attaches a proxy's channel list to an endpoint's request.
    pub fn from_request(request: KeyRequest, channels: Vec<String>) -> Self {
        Self {
            tagname: request.tagname,
            key_type: request.key_type,
            num_of_splits: request.num_of_splits,
            shuffle: request.shuffle,
            public_key: request.public_key,
            channels,
        }
    }

    /// The embedded endpoint request, channels stripped.
    pub fn request(&self) -> KeyRequest {
        KeyRequest {
            tagname: self.tagname.clone(),
            key_type: self.key_type,
            num_of_splits: self.num_of_splits,
            shuffle: self.shuffle,
            public_key: self.public_key.clone(),
        }
    }
}

impl Message for ProxyKeyRequest {
    fn validate(&self) -> Result<(), WireError> {
        validate_request_numbers(self.key_type, self.num_of_splits)?;
        if self.channels.is_empty() {
            return Err(WireError::InvalidField {
                field: "channels",
                reason: "must be non-empty".into(),
            });
        }
        for channel in &self.channels {
            if !channel_is_well_formed(channel) {
                return Err(WireError::InvalidField {
                    field: "channels",
                    reason: format!("{channel:?} is not a scheme://host:port URL"),
                });
            }
        }
        Ok(())
    }
}

/// Synchronous acknowledgment of a `/get-key` request; fragments follow
/// asynchronously on the advertised channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetKeyAck {
    /// Session identifier the acknowledgment refers to.
    pub tagname: String,
}

impl Message for GetKeyAck {
    fn validate(&self) -> Result<(), WireError> {
        Ok(())
    }
}

/// A bundle of encrypted fragments posted to `/receive-key-fragment`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentDelivery {
    /// Session identifier the fragments belong to.
    pub tagname: String,
    /// Encrypted fragment ciphertexts, base64-encoded.
    pub fragments: Vec<String>,
    /// Bundle sequence number, unique per session.
    pub bundle_id: u64,
}

impl Message for FragmentDelivery {
    fn validate(&self) -> Result<(), WireError> {
        if self.fragments.is_empty() {
            return Err(WireError::InvalidField {
                field: "fragments",
                reason: "must be non-empty".into(),
            });
        }
        for (i, fragment) in self.fragments.iter().enumerate() {
            if BASE64_STANDARD.decode(fragment).is_err() {
                return Err(WireError::InvalidField {
                    field: "fragments",
                    reason: format!("entry {i} is not base64"),
                });
            }
        }
        Ok(())
    }
}

fn validate_request_numbers(key_type: u32, num_of_splits: u32) -> Result<(), WireError> {
    if key_type == 0 {
        return Err(WireError::InvalidField {
            field: "key_type",
            reason: "must be positive".into(),
        });
    }
    if num_of_splits == 0 {
        return Err(WireError::InvalidField {
            field: "num_of_splits",
            reason: "must be positive".into(),
        });
    }
    Ok(())
}

/// Accepts `http(s)://host:port` with an optional path, nothing fancier.
fn channel_is_well_formed(channel: &str) -> bool {
    let rest = match channel.split_once("://") {
        Some(("http" | "https", rest)) => rest,
        _ => return false,
    };
    let authority = rest.split('/').next().unwrap_or("");
    let Some((host, port)) = authority.rsplit_once(':') else {
        return false;
    };
    !host.is_empty() && port.parse::<u16>().map(|p| p > 0).unwrap_or(false)
}
