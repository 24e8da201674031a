//! Persistent oblivious-key files with one-use segment allocation.
//!
//! File layout (all integers big-endian, bit strings packed MSB-first):
//!
//! ```text
//! magic   "OKEY"          4 bytes
//! version u8              currently 1
//! role    u8              0 = sender, 1 = receiver
//! n       u32             key length in bits
//! k       n bits          sender file: the key
//! k~, x   2 * n bits      receiver file: noisy copy, then basis-mismatch
//! watermark u32           first unconsumed bit index
//! ```
//!
//! `take_segment` hands out `[watermark, watermark + len)` and persists the
//! advanced watermark before returning, so a segment can never be observed
//! twice — pad reuse would break secrecy exactly like one-time-pad reuse.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::bits::BitString;
use crate::okd::{OkReceiverKey, OkSenderKey};

pub const KEYSTORE_MAGIC: [u8; 4] = *b"OKEY";
pub const KEYSTORE_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Sender,
    Receiver,
}

impl Role {
    fn byte(self) -> u8 {
        match self {
            Role::Sender => 0,
            Role::Receiver => 1,
        }
    }

    fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Role::Sender),
            1 => Some(Role::Receiver),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a key-store file (bad magic)")]
    BadMagic,
    #[error("unsupported key-store version {0}")]
    BadVersion(u8),
    #[error("corrupt key-store file: {0}")]
    Corrupt(&'static str),
    #[error("expected a {expected:?} key store, found {found:?}")]
    WrongRole { expected: Role, found: Role },
    #[error("no unconsumed key material: {remaining} bits left, {wanted} requested")]
    NoUnconsumedKey { remaining: usize, wanted: usize },
}

/// An oblivious-key store bound to a file on disk.
#[derive(Debug)]
pub struct KeyStore {
    path: PathBuf,
    role: Role,
    n: usize,
    /// Sender: the key. Receiver: the noisy copy.
    bits: BitString,
    /// Receiver only: the basis-mismatch string (empty for senders).
    mismatch: BitString,
    watermark: usize,
}

impl KeyStore {
    /// Create a sender store and write it to `path`.
    pub fn create_sender(path: &Path, key: &OkSenderKey) -> Result<Self, StoreError> {
        let store = Self {
            path: path.to_path_buf(),
            role: Role::Sender,
            n: key.bits.len(),
            bits: key.bits.clone(),
            mismatch: BitString::zeros(0),
            watermark: 0,
        };
        store.persist()?;
        Ok(store)
    }

    /// Create a receiver store and write it to `path`.
    pub fn create_receiver(path: &Path, key: &OkReceiverKey) -> Result<Self, StoreError> {
        let store = Self {
            path: path.to_path_buf(),
            role: Role::Receiver,
            n: key.bits.len(),
            bits: key.bits.clone(),
            mismatch: key.basis_mismatch.clone(),
            watermark: 0,
        };
        store.persist()?;
        Ok(store)
    }

    /// Load a store, checking magic, version, and role.
    pub fn open(path: &Path, expected: Role) -> Result<Self, StoreError> {
        let mut file = fs::File::open(path)?;
        let mut header = [0u8; 10];
        file.read_exact(&mut header)?;
        if header[..4] != KEYSTORE_MAGIC {
            return Err(StoreError::BadMagic);
        }
        if header[4] != KEYSTORE_VERSION {
            return Err(StoreError::BadVersion(header[4]));
        }
        let role = Role::from_byte(header[5]).ok_or(StoreError::Corrupt("role byte"))?;
        if role != expected {
            return Err(StoreError::WrongRole {
                expected,
                found: role,
            });
        }
        let n = u32::from_be_bytes(header[6..10].try_into().unwrap()) as usize;
        let packed = n.div_ceil(8);
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        let strings = match role {
            Role::Sender => 1,
            Role::Receiver => 2,
        };
        if rest.len() != strings * packed + 4 {
            return Err(StoreError::Corrupt("payload length"));
        }
        let bits = BitString::from_packed(n, &rest[..packed])
            .ok_or(StoreError::Corrupt("key padding"))?;
        let mismatch = if role == Role::Receiver {
            BitString::from_packed(n, &rest[packed..2 * packed])
                .ok_or(StoreError::Corrupt("mismatch padding"))?
        } else {
            BitString::zeros(0)
        };
        let wm_off = strings * packed;
        let watermark = u32::from_be_bytes(rest[wm_off..wm_off + 4].try_into().unwrap()) as usize;
        if watermark > n {
            return Err(StoreError::Corrupt("watermark beyond key length"));
        }
        Ok(Self {
            path: path.to_path_buf(),
            role,
            n,
            bits,
            mismatch,
            watermark,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn remaining(&self) -> usize {
        self.n - self.watermark
    }

    pub fn watermark(&self) -> usize {
        self.watermark
    }

    /// Atomically take the next `len` bits. The advanced watermark is
    /// persisted before the segment is returned.
    pub fn take_segment(&mut self, len: usize) -> Result<KeySegment, StoreError> {
        if self.remaining() < len || len == 0 {
            return Err(StoreError::NoUnconsumedKey {
                remaining: self.remaining(),
                wanted: len,
            });
        }
        let start = self.watermark;
        self.watermark += len;
        self.persist()?;
        let indices: Vec<usize> = (start..start + len).collect();
        Ok(KeySegment {
            start,
            bits: self.bits.select(&indices),
            mismatch: if self.role == Role::Receiver {
                Some(self.mismatch.select(&indices))
            } else {
                None
            },
        })
    }

    fn persist(&self) -> Result<(), StoreError> {
        let mut out = Vec::new();
        out.extend_from_slice(&KEYSTORE_MAGIC);
        out.push(KEYSTORE_VERSION);
        out.push(self.role.byte());
        out.extend_from_slice(&(self.n as u32).to_be_bytes());
        out.extend_from_slice(self.bits.as_bytes());
        if self.role == Role::Receiver {
            out.extend_from_slice(self.mismatch.as_bytes());
        }
        out.extend_from_slice(&(self.watermark as u32).to_be_bytes());
        let tmp = self.path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&out)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &self.path)?;
        Ok(())
    }
}

/// A never-reissued slice of an oblivious key.
#[derive(Debug, Clone)]
pub struct KeySegment {
    pub start: usize,
    pub bits: BitString,
    pub mismatch: Option<BitString>,
}

impl KeySegment {
    pub fn sender_key(&self) -> OkSenderKey {
        OkSenderKey {
            bits: self.bits.clone(),
        }
    }

    pub fn receiver_key(&self) -> Option<OkReceiverKey> {
        self.mismatch.as_ref().map(|x| OkReceiverKey {
            bits: self.bits.clone(),
            basis_mismatch: x.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sample_keys(n: usize) -> (OkSenderKey, OkReceiverKey) {
        let mut r = rng::seeded(1);
        let bits = BitString::random(n, &mut r);
        let mismatch = BitString::random(n, &mut r);
        (
            OkSenderKey { bits: bits.clone() },
            OkReceiverKey {
                bits,
                basis_mismatch: mismatch,
            },
        )
    }

    #[test]
    fn header_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sender.okey");
        let (sk, _) = sample_keys(16);
        KeyStore::create_sender(&path, &sk).unwrap();
        let raw = fs::read(&path).unwrap();
        assert_eq!(&raw[..4], b"OKEY");
        assert_eq!(raw[4], 1);
        assert_eq!(raw[5], 0);
        assert_eq!(&raw[6..10], &16u32.to_be_bytes());
        assert_eq!(raw.len(), 10 + 2 + 4);
        assert_eq!(&raw[12..16], &0u32.to_be_bytes());
    }

    #[test]
    fn roundtrip_and_role_checks() {
        let dir = tempfile::tempdir().unwrap();
        let (sk, rk) = sample_keys(64);
        let spath = dir.path().join("s.okey");
        let rpath = dir.path().join("r.okey");
        KeyStore::create_sender(&spath, &sk).unwrap();
        KeyStore::create_receiver(&rpath, &rk).unwrap();

        let s = KeyStore::open(&spath, Role::Sender).unwrap();
        assert_eq!(s.n(), 64);
        assert_eq!(s.remaining(), 64);

        let r = KeyStore::open(&rpath, Role::Receiver).unwrap();
        assert_eq!(r.n(), 64);

        assert!(matches!(
            KeyStore::open(&spath, Role::Receiver),
            Err(StoreError::WrongRole { .. })
        ));
    }

    #[test]
    fn segments_are_never_reissued() {
        let dir = tempfile::tempdir().unwrap();
        let (sk, _) = sample_keys(64);
        let path = dir.path().join("s.okey");
        let mut store = KeyStore::create_sender(&path, &sk).unwrap();

        let seg1 = store.take_segment(40).unwrap();
        assert_eq!(seg1.start, 0);
        let seg2 = store.take_segment(24).unwrap();
        assert_eq!(seg2.start, 40);
        assert!(matches!(
            store.take_segment(1),
            Err(StoreError::NoUnconsumedKey { remaining: 0, wanted: 1 })
        ));

        // the watermark survives a reopen
        let mut reopened = KeyStore::open(&path, Role::Sender).unwrap();
        assert_eq!(reopened.watermark(), 64);
        assert!(reopened.take_segment(8).is_err());
    }

    #[test]
    fn watermark_persists_across_instances_mid_key() {
        let dir = tempfile::tempdir().unwrap();
        let (_, rk) = sample_keys(32);
        let path = dir.path().join("r.okey");
        let mut store = KeyStore::create_receiver(&path, &rk).unwrap();
        let first = store.take_segment(16).unwrap();
        drop(store);

        let mut again = KeyStore::open(&path, Role::Receiver).unwrap();
        assert_eq!(again.remaining(), 16);
        let second = again.take_segment(16).unwrap();
        assert_eq!(second.start, 16);
        // the two segments cover disjoint ranges of the stored key
        let rk_bits = &rk.bits;
        for i in 0..16 {
            assert_eq!(first.bits.get(i), rk_bits.get(i));
            assert_eq!(second.bits.get(i), rk_bits.get(16 + i));
        }
        assert_eq!(
            second.mismatch.as_ref().unwrap().get(0),
            rk.basis_mismatch.get(16)
        );
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (sk, _) = sample_keys(16);
        let path = dir.path().join("s.okey");
        KeyStore::create_sender(&path, &sk).unwrap();
        let mut raw = fs::read(&path).unwrap();

        let mut bad_magic = raw.clone();
        bad_magic[0] = b'X';
        fs::write(&path, &bad_magic).unwrap();
        assert!(matches!(
            KeyStore::open(&path, Role::Sender),
            Err(StoreError::BadMagic)
        ));

        let mut bad_version = raw.clone();
        bad_version[4] = 9;
        fs::write(&path, &bad_version).unwrap();
        assert!(matches!(
            KeyStore::open(&path, Role::Sender),
            Err(StoreError::BadVersion(9))
        ));

        raw.truncate(raw.len() - 1);
        fs::write(&path, &raw).unwrap();
        assert!(matches!(
            KeyStore::open(&path, Role::Sender),
            Err(StoreError::Corrupt(_))
        ));
    }
}
