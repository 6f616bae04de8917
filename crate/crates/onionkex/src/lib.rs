//! Multi-circuit fragmented session-key establishment.
//!
//! A key-management server (QKMS) generates a symmetric session key for a
//! pair of clients, partitions it into `n` positional fragments, encrypts
//! every fragment under the requesting client's public key, and dispatches
//! the fragments as bundles over logical channels exposed by onion-service
//! proxies. Each bundle travels to its client over a fresh six-relay
//! rendezvous circuit obtained with a NEWNYM signal, so an adversary
//! surveilling a fraction `f` of relays must correlate every one of the `n`
//! circuits to group the fragments of one session; under independent circuit
//! sampling that happens with probability about `f^(2n)`.
//!
//! The crate ships:
//!
//! * [`keycore`]: key generation, fragmentation, shuffling, reassembly;
//! * [`cryptoenvelope`]: per-fragment public-key encryption with an
//!   authenticated envelope fallback for oversized fragments;
//! * [`wire`]: the JSON protocol messages and their strict codec;
//! * [`oniontransport`]: a deterministic simulated onion-routing network
//!   (six-relay rendezvous paths, NEWNYM epochs, compromised-relay
//!   observation log, logical latency model) plus an optional SOCKS5/control
//!   adapter for a real onion-routing daemon;
//! * [`actors`]: the QKMS, proxy, and client state machines;
//! * [`adversary`]: analytic correlation bounds and Monte Carlo linkage
//!   experiments over the simulator;
//! * [`runner`]: end-to-end session orchestration with latency
//!   decomposition reports and textual traces;
//! * [`validate`]: the bundled pass/fail validation suite.
//!
//! All randomness flows through caller-supplied seeded generators; identical
//! seeds and configurations produce identical keys, circuits, observation
//! logs, and reports.

pub mod actors;
pub mod adversary;
pub mod bits;
pub mod cryptoenvelope;
pub mod keycore;
pub mod oniontransport;
pub mod runner;
pub mod seeds;
pub mod validate;
pub mod wire;

pub use bits::BitString;
pub use keycore::{Fragment, FragmentSet, SessionKey};
