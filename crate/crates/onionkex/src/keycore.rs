//! Session-key generation, fragmentation, shuffling, and reassembly.
//!
//! A session key is a uniformly random bit string whose length (`key_type`,
//! in bits) is byte-representable. [`split_key`] partitions it into `n`
//! contiguous fragments whose sizes differ by at most one bit: with a source
//! of `L` bits, the first `L mod n` fragments carry `ceil(L / n)` bits and
//! the rest `floor(L / n)`. Fragments keep their 1-based position so that
//! [`reassemble`] can concatenate them in index order regardless of arrival
//! order, and [`shuffle_fragments`] permutes only the dispatch order.
//!
//! All fragments are required for reconstruction: this is an (n, n)-style
//! positional split, not a threshold scheme, so a missing fragment is a
//! liveness failure reported as [`KeycoreError::IncompleteSet`].
//!
//! The splitter and reassembler operate on arbitrary non-empty bit strings
//! ([`split_bits`], [`reassemble_bits`]); the [`SessionKey`] wrappers add the
//! byte-representable length constraint the protocol requires.

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::bits::BitString;

/// Errors from key generation, splitting, shuffling, and reassembly.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeycoreError {
    /// `key_type` was zero, too small, or not a multiple of 8.
    #[error("key_type must be a positive multiple of 8 bits, got {0}")]
    InvalidKeyType(usize),
    /// Fragment count outside `[1, source bit length]`.
    #[error("num_of_splits must be in [1, {key_bits}], got {n}")]
    InvalidSplitCount {
        /// Requested fragment count.
        n: usize,
        /// Bit length of the string being split.
        key_bits: usize,
    },
    /// A fragment set may be shuffled at most once.
    #[error("fragment set is already shuffled")]
    AlreadyShuffled,
    /// Reassembly is missing one or more indices.
    #[error("incomplete fragment set: missing indices {missing:?} of {total}")]
    IncompleteSet {
        /// Indices in `1..=total` with no fragment.
        missing: Vec<u16>,
        /// Expected fragment count.
        total: u16,
    },
    /// Two fragments claim the same index with different payloads.
    #[error("conflicting duplicate fragment at index {index}")]
    ConflictingFragment {
        /// Index carried by both fragments.
        index: u16,
    },
    /// Fragments disagree on the expected fragment count.
    #[error("fragments disagree on total count: {0} vs {1}")]
    MismatchedTotals(u16, u16),
    /// A fragment violates its own invariants.
    #[error("invalid fragment: {0}")]
    InvalidFragment(String),
    /// Reassembly of an empty collection.
    #[error("no fragments to reassemble")]
    Empty,
}

/// A symmetric session key of `key_type` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionKey {
    bits: BitString,
}

impl SessionKey {
    /// Wraps an existing bit string; the length must be a positive multiple of 8.
    pub fn from_bits(bits: BitString) -> Result<Self, KeycoreError> {
        validate_key_type(bits.len())?;
        Ok(Self { bits })
    }

    /// Bit length of the key (the `key_type` parameter).
    pub fn key_type(&self) -> usize {
        self.bits.len()
    }

    /// The key material as bits.
    pub fn bits(&self) -> &BitString {
        &self.bits
    }

    /// The key material as whole bytes.
    pub fn as_bytes(&self) -> &[u8] {
        self.bits.as_bytes()
    }
}

fn validate_key_type(key_type: usize) -> Result<(), KeycoreError> {
    if key_type < 8 || key_type % 8 != 0 {
        return Err(KeycoreError::InvalidKeyType(key_type));
    }
    Ok(())
}

/// One positional slice of a session key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fragment {
    index: u16,
    total: u16,
    payload: BitString,
}

impl Fragment {
    /// Builds a fragment, checking `1 <= index <= total` and a non-empty payload.
    pub fn new(index: u16, total: u16, payload: BitString) -> Result<Self, KeycoreError> {
        if total == 0 || index == 0 || index > total {
            return Err(KeycoreError::InvalidFragment(format!(
                "index {index} out of range [1, {total}]"
            )));
        }
        if payload.is_empty() {
            return Err(KeycoreError::InvalidFragment("empty payload".into()));
        }
        Ok(Self { index, total, payload })
    }

    /// 1-based position of this fragment in the original key.
    pub fn index(&self) -> u16 {
        self.index
    }

    /// Total number of fragments in the split.
    pub fn total(&self) -> u16 {
        self.total
    }

    /// The fragment's bits.
    pub fn payload(&self) -> &BitString {
        &self.payload
    }

    /// Trace line in the `Part k of n: <bits>` format.
    pub fn trace_line(&self) -> String {
        format!("Part {} of {}: {}", self.index, self.total, self.payload.to_binary_string())
    }
}

/// An ordered set of fragments in dispatch order.
///
/// `permutation[pos]` is the original (1-based) index of the fragment at
/// dispatch position `pos`; for an unshuffled set it is the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentSet {
    fragments: Vec<Fragment>,
    permutation: Vec<u16>,
    shuffled: bool,
}

impl FragmentSet {
    /// Fragments in dispatch order.
    pub fn fragments(&self) -> &[Fragment] {
        &self.fragments
    }

    /// Dispatch-position → original-index mapping.
    pub fn permutation(&self) -> &[u16] {
        &self.permutation
    }

    /// Whether the dispatch order has been shuffled.
    pub fn is_shuffled(&self) -> bool {
        self.shuffled
    }

    /// Number of fragments.
    pub fn len(&self) -> usize {
        self.fragments.len()
    }

    /// True when the set holds no fragments (never the case for valid splits).
    pub fn is_empty(&self) -> bool {
        self.fragments.is_empty()
    }

    /// Consumes the set, yielding fragments in dispatch order.
    pub fn into_fragments(self) -> Vec<Fragment> {
        self.fragments
    }
}

/// Samples a uniformly random session key of `key_type` bits.
///
/// `key_type` must be at least 8 and a multiple of 8. Deterministic for a
/// fixed generator state.
pub fn generate_key<R: RngCore + CryptoRng>(
    key_type: usize,
    rng: &mut R,
) -> Result<SessionKey, KeycoreError> {
    validate_key_type(key_type)?;
    let mut bytes = vec![0u8; key_type / 8];
    rng.fill_bytes(&mut bytes);
    Ok(SessionKey { bits: BitString::from_bytes(bytes) })
}

/// Partitions an arbitrary non-empty bit string into `n` contiguous fragments.
///
/// The first `L mod n` fragments carry `ceil(L / n)` bits, the rest
/// `floor(L / n)`, where `L` is the source bit length.
pub fn split_bits(bits: &BitString, n: usize) -> Result<FragmentSet, KeycoreError> {
    let key_bits = bits.len();
    if n < 1 || n > key_bits {
        return Err(KeycoreError::InvalidSplitCount { n, key_bits });
    }
    let base = key_bits / n;
    let longer = key_bits % n;
    let total = n as u16;
    let mut fragments = Vec::with_capacity(n);
    let mut start = 0;
    for i in 0..n {
        let len = if i < longer { base + 1 } else { base };
        let payload = bits.slice(start, start + len);
        start += len;
        fragments.push(Fragment::new((i + 1) as u16, total, payload)?);
    }
    debug_assert_eq!(start, key_bits);
    Ok(FragmentSet {
        fragments,
        permutation: (1..=total).collect(),
        shuffled: false,
    })
}

/// Partitions `key` into `n` contiguous fragments in index order.
pub fn split_key(key: &SessionKey, n: usize) -> Result<FragmentSet, KeycoreError> {
    split_bits(key.bits(), n)
}

/// Randomly permutes the dispatch order of an unshuffled set (Fisher–Yates).
///
/// Fragment contents and indices are untouched; only the order in which they
/// will be dispatched changes. Shuffling twice is a state error.
pub fn shuffle_fragments<R: RngCore + CryptoRng>(
    set: FragmentSet,
    rng: &mut R,
) -> Result<FragmentSet, KeycoreError> {
    if set.shuffled {
        return Err(KeycoreError::AlreadyShuffled);
    }
    let mut fragments = set.fragments;
    // Fisher–Yates over dispatch positions.
    for i in (1..fragments.len()).rev() {
        let j = rand::Rng::gen_range(rng, 0..=i);
        fragments.swap(i, j);
    }
    let permutation = fragments.iter().map(Fragment::index).collect();
    Ok(FragmentSet { fragments, permutation, shuffled: true })
}

/// Concatenates one fragment per index, in any arrival order.
///
/// Identical duplicates are tolerated; a duplicate index with a different
/// payload or a disagreement on the total is a conflict.
pub fn reassemble_bits(fragments: &[Fragment]) -> Result<BitString, KeycoreError> {
    let total = fragments.first().ok_or(KeycoreError::Empty)?.total();
    let mut by_index: Vec<Option<&Fragment>> = vec![None; total as usize];
    for f in fragments {
        if f.total() != total {
            return Err(KeycoreError::MismatchedTotals(total, f.total()));
        }
        let slot = &mut by_index[(f.index() - 1) as usize];
        match slot {
            Some(existing) if existing.payload() != f.payload() => {
                return Err(KeycoreError::ConflictingFragment { index: f.index() });
            }
            Some(_) => {}
            None => *slot = Some(f),
        }
    }
    let missing: Vec<u16> = by_index
        .iter()
        .enumerate()
        .filter_map(|(i, slot)| slot.is_none().then_some((i + 1) as u16))
        .collect();
    if !missing.is_empty() {
        return Err(KeycoreError::IncompleteSet { missing, total });
    }
    let mut bits = BitString::new();
    for slot in &by_index {
        bits.extend(slot.expect("checked complete").payload());
    }
    Ok(bits)
}

/// Reconstructs the session key from one fragment per index.
pub fn reassemble(fragments: &[Fragment]) -> Result<SessionKey, KeycoreError> {
    SessionKey::from_bits(reassemble_bits(fragments)?)
}
