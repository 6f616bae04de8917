//! Bit-granular strings.
//!
//! Session keys are byte-aligned but fragments need not be: splitting a
//! 10-bit key three ways yields 4-, 3-, and 3-bit payloads. [`BitString`]
//! stores bits MSB-first in packed bytes together with an explicit bit
//! length, and keeps the unused tail bits of the last byte zeroed so that
//! equality and serialization are canonical.

use thiserror::Error;

/// Error raised when parsing a textual bit string.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid character {found:?} at position {position} in bit string")]
pub struct ParseBitsError {
    /// Offending character.
    pub found: char,
    /// Byte offset of the offending character.
    pub position: usize,
}

/// A string of bits with explicit length, packed MSB-first.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitString {
    /// Empty bit string.
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps whole bytes; the bit length is `8 * bytes.len()`.
    pub fn from_bytes(bytes: Vec<u8>) -> Self {
        let bit_len = bytes.len() * 8;
        Self { bytes, bit_len }
    }

    /// Builds from packed bytes and an explicit bit length.
    ///
    /// `bytes` must hold exactly `ceil(bit_len / 8)` bytes; tail bits beyond
    /// `bit_len` are cleared.
    pub fn from_packed(mut bytes: Vec<u8>, bit_len: usize) -> Option<Self> {
        if bytes.len() != bit_len.div_ceil(8) {
            return None;
        }
        mask_tail(&mut bytes, bit_len);
        Some(Self { bytes, bit_len })
    }

    /// Parses a string of `'0'` and `'1'` characters.
    pub fn parse(text: &str) -> Result<Self, ParseBitsError> {
        let mut out = Self::with_bit_capacity(text.len());
        for (position, found) in text.chars().enumerate() {
            match found {
                '0' => out.push(false),
                '1' => out.push(true),
                _ => return Err(ParseBitsError { found, position }),
            }
        }
        Ok(out)
    }

    fn with_bit_capacity(bits: usize) -> Self {
        Self {
            bytes: Vec::with_capacity(bits.div_ceil(8)),
            bit_len: 0,
        }
    }

    /// Number of bits.
    pub fn len(&self) -> usize {
        self.bit_len
    }

    /// True when the string holds no bits.
    pub fn is_empty(&self) -> bool {
        self.bit_len == 0
    }

    /// Packed bytes, MSB-first, unused tail bits zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Bit at position `i` (0-based from the most significant end).
    ///
    /// # Panics
    /// Panics if `i >= self.len()`.
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.bit_len, "bit index {i} out of range {}", self.bit_len);
        self.bytes[i / 8] & (0x80 >> (i % 8)) != 0
    }

    /// Appends one bit.
    pub fn push(&mut self, bit: bool) {
        if self.bit_len % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            let idx = self.bit_len;
            self.bytes[idx / 8] |= 0x80 >> (idx % 8);
        }
        self.bit_len += 1;
    }

    /// Appends all bits of `other`.
    pub fn extend(&mut self, other: &BitString) {
        for i in 0..other.bit_len {
            self.push(other.get(i));
        }
    }

    /// Copy of the bit range `[start, end)`.
    ///
    /// # Panics
    /// Panics if `start > end` or `end > self.len()`.
    pub fn slice(&self, start: usize, end: usize) -> BitString {
        assert!(start <= end && end <= self.bit_len, "slice {start}..{end} out of range");
        let mut out = Self::with_bit_capacity(end - start);
        for i in start..end {
            out.push(self.get(i));
        }
        out
    }

    /// Renders as a string of `'0'`/`'1'` characters, as printed in traces.
    pub fn to_binary_string(&self) -> String {
        (0..self.bit_len).map(|i| if self.get(i) { '1' } else { '0' }).collect()
    }
}

fn mask_tail(bytes: &mut [u8], bit_len: usize) {
    let rem = bit_len % 8;
    if rem != 0 {
        if let Some(last) = bytes.last_mut() {
            *last &= 0xffu8 << (8 - rem);
        }
    }
}

impl std::fmt::Debug for BitString {
    // Deliberately omits the bit values: key material shows up in Debug dumps
    // of larger structures, and traces print bits through an explicit call.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BitString({} bits)", self.bit_len)
    }
}
