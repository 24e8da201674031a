//! Fixed-length bit strings packed most-significant-bit first.
//!
//! All protocol strings (keys, witnesses, bitmasks) use this representation,
//! and the packed byte form is exactly what crosses the wire: bit `i` of the
//! string lives in byte `i / 8` at position `7 - (i % 8)`. Unused trailing
//! bits of the last byte are always zero.

use std::fmt;

use rand::RngCore;

/// A bit string of fixed length, packed MSB-first into bytes.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitString {
    len: usize,
    bytes: Vec<u8>,
}

impl BitString {
    /// All-zero string of `len` bits.
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            bytes: vec![0u8; len.div_ceil(8)],
        }
    }

    /// Uniformly random string of `len` bits.
    pub fn random(len: usize, rng: &mut impl RngCore) -> Self {
        let mut bytes = vec![0u8; len.div_ceil(8)];
        rng.fill_bytes(&mut bytes);
        let mut s = Self { len, bytes };
        s.mask_tail();
        s
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut s = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                s.set(i, true);
            }
        }
        s
    }

    /// Parse a string of `'0'`/`'1'` characters; other characters are rejected.
    pub fn from_bit_str(text: &str) -> Option<Self> {
        let mut s = Self::zeros(text.len());
        for (i, c) in text.chars().enumerate() {
            match c {
                '0' => {}
                '1' => s.set(i, true),
                _ => return None,
            }
        }
        Some(s)
    }

    /// Reconstruct from packed bytes. Rejects wrong byte counts and non-zero
    /// padding bits so that every valid encoding is canonical.
    pub fn from_packed(len: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.len() != len.div_ceil(8) {
            return None;
        }
        let s = Self {
            len,
            bytes: bytes.to_vec(),
        };
        let mut masked = s.clone();
        masked.mask_tail();
        if masked.bytes != s.bytes {
            return None;
        }
        Some(s)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Packed MSB-first byte form (the wire representation).
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.bytes[i / 8] >> (7 - (i % 8)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u8 << (7 - (i % 8));
        if value {
            self.bytes[i / 8] |= mask;
        } else {
            self.bytes[i / 8] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        let v = self.get(i);
        self.set(i, !v);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.bytes.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Bitwise XOR; both strings must have equal length.
    pub fn xor(&self, other: &Self) -> Self {
        assert_eq!(self.len, other.len, "xor of unequal lengths");
        let bytes = self
            .bytes
            .iter()
            .zip(&other.bytes)
            .map(|(a, b)| a ^ b)
            .collect();
        Self { len: self.len, bytes }
    }

    /// GF(2) inner product: parity of the bitwise AND.
    pub fn dot(&self, other: &Self) -> bool {
        assert_eq!(self.len, other.len, "dot of unequal lengths");
        let mut acc = 0u8;
        for (a, b) in self.bytes.iter().zip(&other.bytes) {
            acc ^= a & b;
        }
        acc.count_ones() % 2 == 1
    }

    /// Parity (XOR) of all bits.
    pub fn parity(&self) -> bool {
        self.bytes.iter().fold(0u8, |acc, b| acc ^ b).count_ones() % 2 == 1
    }

    /// Parity of the bits at the given indices.
    pub fn parity_over(&self, indices: &[usize]) -> bool {
        indices.iter().fold(false, |acc, &i| acc ^ self.get(i))
    }

    /// Restriction to the given indices, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::zeros(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            if self.get(i) {
                out.set(pos, true);
            }
        }
        out
    }

    /// Restriction to every index NOT in `excluded` (which must be sorted
    /// ascending), preserving ascending index order.
    pub fn select_complement(&self, excluded: &[usize]) -> Self {
        let mut out = Vec::with_capacity(self.len - excluded.len());
        let mut ex = excluded.iter().peekable();
        for i in 0..self.len {
            if ex.peek() == Some(&&i) {
                ex.next();
            } else {
                out.push(self.get(i));
            }
        }
        Self::from_bits(&out)
    }

    /// Contiguous sub-string of `len` bits starting at bit `start`.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.len, "slice out of range");
        let mut out = Self::zeros(len);
        let shift = start % 8;
        let base = start / 8;
        for (j, out_byte) in out.bytes.iter_mut().enumerate() {
            let hi = self.bytes[base + j] << shift;
            let lo = if shift > 0 && base + j + 1 < self.bytes.len() {
                self.bytes[base + j + 1] >> (8 - shift)
            } else {
                0
            };
            *out_byte = hi | lo;
        }
        out.mask_tail();
        out
    }

    /// Reverse the bit order.
    pub fn reversed(&self) -> Self {
        let bits: Vec<bool> = self.iter().collect();
        let rev: Vec<bool> = bits.into_iter().rev().collect();
        Self::from_bits(&rev)
    }

    fn mask_tail(&mut self) {
        let pad = self.bytes.len() * 8 - self.len;
        if pad > 0 {
            if let Some(last) = self.bytes.last_mut() {
                *last &= 0xffu8 << pad;
            }
        }
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString(\"{self}\")")
    }
}

/// Pack a sorted list of indices into an n-bit membership mask
/// (bit `i` set means index `i` is a member).
pub fn indices_to_mask(universe: usize, indices: &[usize]) -> BitString {
    let mut mask = BitString::zeros(universe);
    for &i in indices {
        mask.set(i, true);
    }
    mask
}

/// Expand a membership mask back into an ascending index list.
pub fn mask_to_indices(mask: &BitString) -> Vec<usize> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, b)| b.then_some(i))
        .collect()
}
