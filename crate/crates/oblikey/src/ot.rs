//! The oblivious-transfer phase, consuming a pre-shared oblivious key.
//!
//! The receiver splits his key positions into `I0` (bits he knows) and `I1`
//! (bits uncorrelated with the sender's) and sends them as an ordered pair,
//! putting `I0` first exactly when his choice bit is 0. The sender pads her
//! first input bit with the XOR of her key over the first received set and
//! her second input bit over the second set; the receiver strips the pad of
//! the ciphertext at his choice position using his own bits over `I0`.
//! Because both sets look alike to the sender, the order reveals nothing,
//! and the receiver cannot strip the other pad.
//!
//! Two extensions share the module:
//!
//! * string OT, which pads whole messages with Toeplitz-extracted key
//!   material instead of a single parity bit — the mode to use once
//!   reconciliation has disclosed parities of the raw key;
//! * 1-out-of-4 OT, built from two string-OT instances transferring pad
//!   seeds plus four masked ciphertexts.

use rand::RngCore;
use thiserror::Error;

use crate::bits::BitString;
use crate::commitment::CommitHash;
use crate::okd::{OkReceiverKey, OkSenderKey};
use crate::postprocess::{amplify, ToeplitzExtractor};

#[derive(Debug, Error, PartialEq)]
pub enum OtError {
    #[error("degenerate key: one of the index sets is empty")]
    DegenerateKey,
    #[error("request does not partition the key indices")]
    BadPartition,
    #[error("expected length {expected}, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("index set of size {set} cannot pad {wanted} message bits")]
    InsufficientEntropy { set: usize, wanted: usize },
}

/// The receiver's partition of key positions by basis match.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSets {
    pub zero: Vec<usize>,
    pub one: Vec<usize>,
}

impl IndexSets {
    /// Split positions of `x`: `zero` collects `x_i = 0`, `one` the rest.
    pub fn from_mismatch(x: &BitString) -> Self {
        let mut zero = Vec::new();
        let mut one = Vec::new();
        for (i, bit) in x.iter().enumerate() {
            if bit {
                one.push(i);
            } else {
                zero.push(i);
            }
        }
        Self { zero, one }
    }
}

/// The ordered pair of index sets the receiver sends; the order encodes the
/// choice bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtRequest {
    pub universe: usize,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

impl OtRequest {
    /// Check that `first` and `second` are disjoint and cover `0..universe`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.universe];
        for &i in self.first.iter().chain(&self.second) {
            if i >= self.universe || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// The sender's pair of padded bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OtCiphertexts {
    pub e0: bool,
    pub e1: bool,
}

/// Build the request for choice bit `c`: `(I_c, I_{c^1})`.
pub fn bob_request(rk: &OkReceiverKey, c: bool) -> Result<OtRequest, OtError> {
    let sets = IndexSets::from_mismatch(&rk.basis_mismatch);
    if sets.zero.is_empty() || sets.one.is_empty() {
        return Err(OtError::DegenerateKey);
    }
    let (first, second) = if c {
        (sets.one, sets.zero)
    } else {
        (sets.zero, sets.one)
    };
    Ok(OtRequest {
        universe: rk.n(),
        first,
        second,
    })
}

/// Pad the two input bits with key parities over the requested sets.
pub fn alice_respond(
    sk: &OkSenderKey,
    b0: bool,
    b1: bool,
    req: &OtRequest,
) -> Result<OtCiphertexts, OtError> {
    if req.universe != sk.bits.len() {
        return Err(OtError::BadLength {
            expected: sk.bits.len(),
            got: req.universe,
        });
    }
    if !req.is_partition() {
        return Err(OtError::BadPartition);
    }
    Ok(OtCiphertexts {
        e0: b0 ^ sk.bits.parity_over(&req.first),
        e1: b1 ^ sk.bits.parity_over(&req.second),
    })
}

/// Strip the pad of the chosen ciphertext with the receiver's known bits.
pub fn bob_decrypt(rk: &OkReceiverKey, c: bool, cts: &OtCiphertexts) -> bool {
    let sets = IndexSets::from_mismatch(&rk.basis_mismatch);
    let chosen = if c { cts.e1 } else { cts.e0 };
    chosen ^ rk.bits.parity_over(&sets.zero)
}

/// String-OT ciphertexts: both padded messages plus the extractor seeds in
/// the clear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StringOtCiphertexts {
    pub e0: BitString,
    pub e1: BitString,
    pub extractor0: ToeplitzExtractor,
    pub extractor1: ToeplitzExtractor,
}

/// Pad two equal-length messages with Toeplitz-extracted key material over
/// the requested sets. Extractor seeds travel in the clear.
pub fn string_ot_send(
    sk: &OkSenderKey,
    msg0: &BitString,
    msg1: &BitString,
    req: &OtRequest,
    rng: &mut impl RngCore,
) -> Result<StringOtCiphertexts, OtError> {
    if msg0.len() != msg1.len() {
        return Err(OtError::BadLength {
            expected: msg0.len(),
            got: msg1.len(),
        });
    }
    if req.universe != sk.bits.len() {
        return Err(OtError::BadLength {
            expected: sk.bits.len(),
            got: req.universe,
        });
    }
    if !req.is_partition() {
        return Err(OtError::BadPartition);
    }
    let len = msg0.len();
    let (pad0, extractor0) = make_pad(&sk.bits, &req.first, len, rng)?;
    let (pad1, extractor1) = make_pad(&sk.bits, &req.second, len, rng)?;
    Ok(StringOtCiphertexts {
        e0: msg0.xor(&pad0),
        e1: msg1.xor(&pad1),
        extractor0,
        extractor1,
    })
}

fn make_pad<R: RngCore>(
    key_bits: &BitString,
    set: &[usize],
    len: usize,
    rng: &mut R,
) -> Result<(BitString, ToeplitzExtractor), OtError> {
    if set.len() < len {
        return Err(OtError::InsufficientEntropy {
            set: set.len(),
            wanted: len,
        });
    }
    let ext =
        ToeplitzExtractor::random(set.len(), len, rng).expect("out_len <= in_len checked above");
    let material = amplify(&key_bits.select(set), &ext).expect("shapes match");
    Ok((material, ext))
}

/// Recover the chosen message: re-derive the pad from the receiver's known
/// bits over `I0` and strip it.
pub fn string_ot_receive(
    rk: &OkReceiverKey,
    c: bool,
    cts: &StringOtCiphertexts,
) -> Result<BitString, OtError> {
    let sets = IndexSets::from_mismatch(&rk.basis_mismatch);
    let (ct, ext) = if c {
        (&cts.e1, &cts.extractor1)
    } else {
        (&cts.e0, &cts.extractor0)
    };
    if ext.in_len() != sets.zero.len() {
        return Err(OtError::BadLength {
            expected: sets.zero.len(),
            got: ext.in_len(),
        });
    }
    let pad = amplify(&rk.bits.select(&sets.zero), ext).map_err(|_| OtError::BadLength {
        expected: ext.in_len(),
        got: sets.zero.len(),
    })?;
    Ok(ct.xor(&pad))
}

/// Run one string OT end to end over a key pair (test and CLI convenience).
pub fn string_ot(
    sk: &OkSenderKey,
    rk: &OkReceiverKey,
    msg0: &BitString,
    msg1: &BitString,
    c: bool,
    rng: &mut impl RngCore,
) -> Result<BitString, OtError> {
    let req = bob_request(rk, c)?;
    let cts = string_ot_send(sk, msg0, msg1, &req, rng)?;
    string_ot_receive(rk, c, &cts)
}

/// Expand `key` into `len` mask bits with the configured hash in counter
/// mode, domain-separated by the ciphertext cell `(i, j)`.
fn expand_mask(hash: &dyn CommitHash, key: &BitString, cell: (u8, u8), len: usize) -> BitString {
    let mut bits = Vec::with_capacity(len);
    let mut counter = 0u32;
    while bits.len() < len {
        let mut input = Vec::with_capacity(key.as_bytes().len() + 8);
        input.extend_from_slice(b"pad4");
        input.push(cell.0);
        input.push(cell.1);
        input.extend_from_slice(&counter.to_be_bytes());
        input.extend_from_slice(key.as_bytes());
        let digest = hash.digest(&input);
        for byte in digest {
            for b in 0..8 {
                if bits.len() == len {
                    break;
                }
                bits.push(byte >> (7 - b) & 1 == 1);
            }
        }
        counter += 1;
    }
    BitString::from_bits(&bits)
}

/// The sender's transcript of a 1-out-of-4 transfer: two string-OT
/// ciphertext pairs carrying pad seeds, plus the four masked messages.
#[derive(Debug, Clone)]
pub struct OneOfFourTransfer {
    pub left: StringOtCiphertexts,
    pub right: StringOtCiphertexts,
    pub ciphertexts: [BitString; 4],
}

/// 1-out-of-4 OT from two 1-out-of-2 string OTs.
///
/// The sender draws pad seeds `(L0, L1)` and `(R0, R1)` of `pad_len` bits,
/// transfers one of each pair through the two base OTs, and masks message
/// `m_{ij}` with hash expansions of `L_i` and `R_j`. The receiver learns
/// exactly `L_{c1}` and `R_{c2}`, so exactly `m_{c1 c2}` decrypts.
pub fn one_of_four_send(
    sender_keys: (&OkSenderKey, &OkSenderKey),
    requests: (&OtRequest, &OtRequest),
    messages: &[BitString; 4],
    pad_len: usize,
    hash: &dyn CommitHash,
    rng: &mut impl RngCore,
) -> Result<OneOfFourTransfer, OtError> {
    let len = messages[0].len();
    if messages.iter().any(|m| m.len() != len) {
        return Err(OtError::BadLength {
            expected: len,
            got: messages.iter().map(BitString::len).max().unwrap_or(0),
        });
    }
    let l0 = BitString::random(pad_len, rng);
    let l1 = BitString::random(pad_len, rng);
    let r0 = BitString::random(pad_len, rng);
    let r1 = BitString::random(pad_len, rng);
    let left = string_ot_send(sender_keys.0, &l0, &l1, requests.0, rng)?;
    let right = string_ot_send(sender_keys.1, &r0, &r1, requests.1, rng)?;
    let pads = [[&l0, &r0], [&l0, &r1], [&l1, &r0], [&l1, &r1]];
    let mut ciphertexts = Vec::with_capacity(4);
    for (idx, msg) in messages.iter().enumerate() {
        let (i, j) = ((idx >> 1) as u8, (idx & 1) as u8);
        let mask_l = expand_mask(hash, pads[idx][0], (i, j), len);
        let mask_r = expand_mask(hash, pads[idx][1], (i, j), len);
        ciphertexts.push(msg.xor(&mask_l).xor(&mask_r));
    }
    Ok(OneOfFourTransfer {
        left,
        right,
        ciphertexts: ciphertexts.try_into().expect("exactly four"),
    })
}

/// Receiver side of the 1-out-of-4 transfer for choice `(c1, c2)`.
pub fn one_of_four_receive(
    receiver_keys: (&OkReceiverKey, &OkReceiverKey),
    choice: (bool, bool),
    transfer: &OneOfFourTransfer,
    hash: &dyn CommitHash,
) -> Result<BitString, OtError> {
    let l = string_ot_receive(receiver_keys.0, choice.0, &transfer.left)?;
    let r = string_ot_receive(receiver_keys.1, choice.1, &transfer.right)?;
    let idx = (choice.0 as usize) << 1 | choice.1 as usize;
    let (i, j) = (choice.0 as u8, choice.1 as u8);
    let len = transfer.ciphertexts[idx].len();
    let mask_l = expand_mask(hash, &l, (i, j), len);
    let mask_r = expand_mask(hash, &r, (i, j), len);
    Ok(transfer.ciphertexts[idx].xor(&mask_l).xor(&mask_r))
}
