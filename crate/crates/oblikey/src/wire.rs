//! Bit-exact message framing and the channels that carry it.
//!
//! Every frame is `tag (1 byte) | length (u32 big-endian) | payload`. Index
//! sets are encoded as n-bit membership masks packed MSB-first, so the set
//! `{0, 2}` over an 8-bit universe is the single byte `0xA0`. All integers
//! are big-endian. Decoding is strict: unknown tags, out-of-spec mode bytes,
//! non-canonical bit padding, and trailing garbage are all rejected, which
//! makes the encoding injective on valid messages.
//!
//! Simulated qubits get special treatment. On the loopback channel they move
//! through a separate in-memory port and the classical wire only carries an
//! opaque `QubitsHandle` frame (count only) — a stand-in for the physical
//! quantum channel. Serializing actual `(bit, basis)` pairs into a
//! `QubitsBatch` frame is only meaningful for simulation, because on a
//! classical wire anyone can read them; the TCP channel therefore refuses to
//! ship them unless the operator explicitly acknowledges the simulation
//! caveat.

use std::collections::VecDeque;
use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::BitString;
use crate::channel::{Basis, PreparedQubit};
use crate::commitment::{Commitment, UniversalHashFunc, MATRIX_EXPANDER_VERSION};
use crate::okd::AbortReason;

/// Frames larger than this are rejected before allocation.
pub const MAX_PAYLOAD: usize = 1 << 26;

/// Default per-frame receive timeout.
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed frame: {0}")]
    MalformedFrame(&'static str),
    #[error("unknown frame tag {0}")]
    UnknownTag(u8),
    #[error("frame length {0} exceeds the {MAX_PAYLOAD}-byte limit")]
    LengthOverflow(usize),
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out waiting for a frame")]
    Timeout,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("received {got} frame while expecting {expected}")]
    UnexpectedFrame { expected: &'static str, got: &'static str },
    #[error("refusing to serialize simulated qubits without the simulation acknowledgment")]
    SimulationNotAcknowledged,
}

/// Reconciliation sub-frame kinds carried inside `ParityMsg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParityKind {
    MatchedSet = 0,
    Config = 1,
    BlockParities = 2,
    Probe = 3,
    ProbeReply = 4,
    Checksum = 5,
    Verdict = 6,
    ExtractorSeed = 7,
}

impl ParityKind {
    fn from_byte(b: u8) -> Option<Self> {
        Some(match b {
            0 => ParityKind::MatchedSet,
            1 => ParityKind::Config,
            2 => ParityKind::BlockParities,
            3 => ParityKind::Probe,
            4 => ParityKind::ProbeReply,
            5 => ParityKind::Checksum,
            6 => ParityKind::Verdict,
            7 => ParityKind::ExtractorSeed,
            _ => return None,
        })
    }
}

/// One reconciliation message: a small tagged union whose unused fields are
/// zero / empty. `aux0`/`aux1` carry round numbers, interval bounds, block
/// sizes or checksum halves depending on the kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityPayload {
    pub kind: ParityKind,
    pub aux0: u32,
    pub aux1: u32,
    pub bits: BitString,
}

/// Every message that can cross the classical wire, in protocol step order.
#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    /// Opaque stand-in for a qubit batch on the loopback wire (count only).
    QubitsHandle { count: u32 },
    /// Explicit simulated qubits: encoded values, then preparation bases.
    QubitsBatch { values: BitString, bases: BitString },
    /// Survivor mask over the raw batch (bit set = index survived).
    SiftedIndices { surviving: BitString },
    /// Per-index commitments: matrix seed, offset bits, digest.
    Commitments {
        msg_len: u8,
        digest_len: u8,
        items: Vec<CommitmentItem>,
    },
    /// Test-subset membership mask over the sifted universe.
    TestSet { members: BitString },
    /// Openings for the tested indices, ascending.
    Openings { witnesses: Vec<BitString> },
    /// Alice's preparation bases for the kept positions.
    BasesReveal { bases: BitString },
    /// Reconciliation traffic (several sub-kinds).
    ParityMsg(ParityPayload),
    /// The ordered pair of index sets encoding the choice bit.
    OtRequest {
        universe: u32,
        first: BitString,
        second: BitString,
    },
    /// Padded bits (mode 0) or padded strings with extractor seeds (mode 1).
    OtCiphertexts(OtCipherPayload),
    /// Session abort, observed by both sides.
    Abort { reason: AbortReason, detail: String },
}

/// One commitment as it crosses the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitmentItem {
    pub matrix_seed: [u8; 32],
    pub offset: BitString,
    pub digest: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OtCipherPayload {
    Bits { e0: bool, e1: bool },
    Strings {
        e0: BitString,
        e1: BitString,
        in0: u32,
        seed0: BitString,
        in1: u32,
        seed1: BitString,
    },
}

impl WireMessage {
    pub fn tag(&self) -> u8 {
        match self {
            WireMessage::QubitsHandle { .. } | WireMessage::QubitsBatch { .. } => 1,
            WireMessage::SiftedIndices { .. } => 2,
            WireMessage::Commitments { .. } => 3,
            WireMessage::TestSet { .. } => 4,
            WireMessage::Openings { .. } => 5,
            WireMessage::BasesReveal { .. } => 6,
            WireMessage::ParityMsg(_) => 7,
            WireMessage::OtRequest { .. } => 8,
            WireMessage::OtCiphertexts(_) => 9,
            WireMessage::Abort { .. } => 10,
        }
    }

    pub fn tag_name(&self) -> &'static str {
        match self {
            WireMessage::QubitsHandle { .. } => "QubitsHandle",
            WireMessage::QubitsBatch { .. } => "QubitsBatch",
            WireMessage::SiftedIndices { .. } => "SiftedIndices",
            WireMessage::Commitments { .. } => "Commitments",
            WireMessage::TestSet { .. } => "TestSet",
            WireMessage::Openings { .. } => "Openings",
            WireMessage::BasesReveal { .. } => "BasesReveal",
            WireMessage::ParityMsg(_) => "ParityMsg",
            WireMessage::OtRequest { .. } => "OtRequest",
            WireMessage::OtCiphertexts(_) => "OtCiphertexts",
            WireMessage::Abort { .. } => "Abort",
        }
    }
}

fn put_bits(out: &mut Vec<u8>, bits: &BitString) {
    out.extend_from_slice(&(bits.len() as u32).to_be_bytes());
    out.extend_from_slice(bits.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or(WireError::MalformedFrame("truncated"))?;
        self.pos += 1;
        Ok(b)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes([self.u8()?, self.u8()?]))
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes([
            self.u8()?,
            self.u8()?,
            self.u8()?,
            self.u8()?,
        ]))
    }

    fn bytes(&mut self, len: usize) -> Result<&'a [u8], WireError> {
        if self.pos + len > self.buf.len() {
            return Err(WireError::MalformedFrame("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn bits(&mut self) -> Result<BitString, WireError> {
        let len = self.u32()? as usize;
        if len > MAX_PAYLOAD * 8 {
            return Err(WireError::LengthOverflow(len / 8));
        }
        let raw = self.bytes(len.div_ceil(8))?;
        BitString::from_packed(len, raw).ok_or(WireError::MalformedFrame("bit padding"))
    }

    fn finish(self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::MalformedFrame("trailing bytes"));
        }
        Ok(())
    }
}

/// Encode a message into a complete frame (tag, length, payload).
pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::new();
    match msg {
        WireMessage::QubitsHandle { count } => {
            payload.push(0); // opaque mode
            payload.extend_from_slice(&count.to_be_bytes());
        }
        WireMessage::QubitsBatch { values, bases } => {
            if values.len() != bases.len() {
                return Err(WireError::MalformedFrame("value/basis length mismatch"));
            }
            payload.push(1); // explicit SIMULATION-ONLY mode
            payload.extend_from_slice(&(values.len() as u32).to_be_bytes());
            payload.extend_from_slice(values.as_bytes());
            payload.extend_from_slice(bases.as_bytes());
        }
        WireMessage::SiftedIndices { surviving } => {
            put_bits(&mut payload, surviving);
        }
        WireMessage::Commitments {
            msg_len,
            digest_len,
            items,
        } => {
            payload.push(MATRIX_EXPANDER_VERSION);
            payload.extend_from_slice(&(items.len() as u32).to_be_bytes());
            payload.push(*msg_len);
            payload.push(*digest_len);
            for item in items {
                if item.offset.len() != *msg_len as usize
                    || item.digest.len() != *digest_len as usize
                {
                    return Err(WireError::MalformedFrame("commitment item shape"));
                }
                payload.extend_from_slice(&item.matrix_seed);
                payload.extend_from_slice(item.offset.as_bytes());
                payload.extend_from_slice(&item.digest);
            }
        }
        WireMessage::TestSet { members } => {
            put_bits(&mut payload, members);
        }
        WireMessage::Openings { witnesses } => {
            payload.extend_from_slice(&(witnesses.len() as u32).to_be_bytes());
            let wlen = witnesses.first().map_or(0, BitString::len);
            payload.extend_from_slice(&(wlen as u32).to_be_bytes());
            for w in witnesses {
                if w.len() != wlen {
                    return Err(WireError::MalformedFrame("ragged witness lengths"));
                }
                payload.extend_from_slice(w.as_bytes());
            }
        }
        WireMessage::BasesReveal { bases } => {
            put_bits(&mut payload, bases);
        }
        WireMessage::ParityMsg(p) => {
            payload.push(p.kind as u8);
            payload.extend_from_slice(&p.aux0.to_be_bytes());
            payload.extend_from_slice(&p.aux1.to_be_bytes());
            put_bits(&mut payload, &p.bits);
        }
        WireMessage::OtRequest {
            universe,
            first,
            second,
        } => {
            if first.len() != *universe as usize || second.len() != *universe as usize {
                return Err(WireError::MalformedFrame("set mask length"));
            }
            payload.extend_from_slice(&universe.to_be_bytes());
            payload.extend_from_slice(first.as_bytes());
            payload.extend_from_slice(second.as_bytes());
        }
        WireMessage::OtCiphertexts(p) => match p {
            OtCipherPayload::Bits { e0, e1 } => {
                payload.push(0);
                payload.push(u8::from(*e0) << 1 | u8::from(*e1));
            }
            OtCipherPayload::Strings {
                e0,
                e1,
                in0,
                seed0,
                in1,
                seed1,
            } => {
                payload.push(1);
                if e0.len() != e1.len() {
                    return Err(WireError::MalformedFrame("string lengths differ"));
                }
                put_bits(&mut payload, e0);
                payload.extend_from_slice(e1.as_bytes());
                payload.extend_from_slice(&in0.to_be_bytes());
                payload.extend_from_slice(seed0.as_bytes());
                payload.extend_from_slice(&in1.to_be_bytes());
                payload.extend_from_slice(seed1.as_bytes());
            }
        },
        WireMessage::Abort { reason, detail } => {
            payload.push(abort_code(*reason));
            let bytes = detail.as_bytes();
            if bytes.len() > u16::MAX as usize {
                return Err(WireError::MalformedFrame("abort detail too long"));
            }
            payload.extend_from_slice(&(bytes.len() as u16).to_be_bytes());
            payload.extend_from_slice(bytes);
        }
    }
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow(payload.len()));
    }
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.push(msg.tag());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

fn abort_code(reason: AbortReason) -> u8 {
    match reason {
        AbortReason::Other => 0,
        AbortReason::CommitmentInvalid => 1,
        AbortReason::CorrelationTestFailed => 2,
        AbortReason::InsufficientSurvivors => 3,
        AbortReason::ProtocolViolation => 4,
        AbortReason::ReconciliationFailed => 5,
        AbortReason::InsufficientEntropy => 6,
        AbortReason::DegenerateKey => 7,
    }
}

fn abort_reason(code: u8) -> Result<AbortReason, WireError> {
    Ok(match code {
        0 => AbortReason::Other,
        1 => AbortReason::CommitmentInvalid,
        2 => AbortReason::CorrelationTestFailed,
        3 => AbortReason::InsufficientSurvivors,
        4 => AbortReason::ProtocolViolation,
        5 => AbortReason::ReconciliationFailed,
        6 => AbortReason::InsufficientEntropy,
        7 => AbortReason::DegenerateKey,
        _ => return Err(WireError::MalformedFrame("abort code")),
    })
}

/// Decode a complete frame back into a message (strict).
pub fn decode(frame: &[u8]) -> Result<WireMessage, WireError> {
    if frame.len() < 5 {
        return Err(WireError::MalformedFrame("shorter than header"));
    }
    let tag = frame[0];
    let len = u32::from_be_bytes(frame[1..5].try_into().unwrap()) as usize;
    if len > MAX_PAYLOAD {
        return Err(WireError::LengthOverflow(len));
    }
    if frame.len() != 5 + len {
        return Err(WireError::MalformedFrame("length field mismatch"));
    }
    let mut r = Reader::new(&frame[5..]);
    let msg = match tag {
        1 => match r.u8()? {
            0 => WireMessage::QubitsHandle { count: r.u32()? },
            1 => {
                let count = r.u32()? as usize;
                let packed = count.div_ceil(8);
                let values = BitString::from_packed(count, r.bytes(packed)?)
                    .ok_or(WireError::MalformedFrame("value padding"))?;
                let bases = BitString::from_packed(count, r.bytes(packed)?)
                    .ok_or(WireError::MalformedFrame("basis padding"))?;
                WireMessage::QubitsBatch { values, bases }
            }
            _ => return Err(WireError::MalformedFrame("qubit mode byte")),
        },
        2 => WireMessage::SiftedIndices { surviving: r.bits()? },
        3 => {
            let version = r.u8()?;
            if version != MATRIX_EXPANDER_VERSION {
                return Err(WireError::MalformedFrame("matrix expander version"));
            }
            let count = r.u32()? as usize;
            let msg_len = r.u8()?;
            let digest_len = r.u8()?;
            if msg_len == 0 {
                return Err(WireError::MalformedFrame("zero message length"));
            }
            let item_size = 32 + (msg_len as usize).div_ceil(8) + digest_len as usize;
            if count.saturating_mul(item_size) > MAX_PAYLOAD {
                return Err(WireError::LengthOverflow(count * item_size));
            }
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                let mut matrix_seed = [0u8; 32];
                matrix_seed.copy_from_slice(r.bytes(32)?);
                let offset =
                    BitString::from_packed(msg_len as usize, r.bytes((msg_len as usize).div_ceil(8))?)
                        .ok_or(WireError::MalformedFrame("offset padding"))?;
                let digest = r.bytes(digest_len as usize)?.to_vec();
                items.push(CommitmentItem {
                    matrix_seed,
                    offset,
                    digest,
                });
            }
            WireMessage::Commitments {
                msg_len,
                digest_len,
                items,
            }
        }
        4 => WireMessage::TestSet { members: r.bits()? },
        5 => {
            let count = r.u32()? as usize;
            let wlen = r.u32()? as usize;
            let packed = wlen.div_ceil(8);
            if count.saturating_mul(packed) > MAX_PAYLOAD {
                return Err(WireError::LengthOverflow(count * packed));
            }
            let mut witnesses = Vec::with_capacity(count);
            for _ in 0..count {
                witnesses.push(
                    BitString::from_packed(wlen, r.bytes(packed)?)
                        .ok_or(WireError::MalformedFrame("witness padding"))?,
                );
            }
            WireMessage::Openings { witnesses }
        }
        6 => WireMessage::BasesReveal { bases: r.bits()? },
        7 => {
            let kind = ParityKind::from_byte(r.u8()?)
                .ok_or(WireError::MalformedFrame("parity kind"))?;
            let aux0 = r.u32()?;
            let aux1 = r.u32()?;
            let bits = r.bits()?;
            WireMessage::ParityMsg(ParityPayload {
                kind,
                aux0,
                aux1,
                bits,
            })
        }
        8 => {
            let universe = r.u32()?;
            let packed = (universe as usize).div_ceil(8);
            let first = BitString::from_packed(universe as usize, r.bytes(packed)?)
                .ok_or(WireError::MalformedFrame("first mask padding"))?;
            let second = BitString::from_packed(universe as usize, r.bytes(packed)?)
                .ok_or(WireError::MalformedFrame("second mask padding"))?;
            WireMessage::OtRequest {
                universe,
                first,
                second,
            }
        }
        9 => match r.u8()? {
            0 => {
                let flags = r.u8()?;
                if flags > 0b11 {
                    return Err(WireError::MalformedFrame("ciphertext flag bits"));
                }
                WireMessage::OtCiphertexts(OtCipherPayload::Bits {
                    e0: flags >> 1 & 1 == 1,
                    e1: flags & 1 == 1,
                })
            }
            1 => {
                let e0 = r.bits()?;
                let len = e0.len();
                let e1 = BitString::from_packed(len, r.bytes(len.div_ceil(8))?)
                    .ok_or(WireError::MalformedFrame("e1 padding"))?;
                let in0 = r.u32()?;
                let s0len = in0 as usize + len - 1;
                let seed0 = BitString::from_packed(s0len, r.bytes(s0len.div_ceil(8))?)
                    .ok_or(WireError::MalformedFrame("seed0 padding"))?;
                let in1 = r.u32()?;
                let s1len = in1 as usize + len - 1;
                let seed1 = BitString::from_packed(s1len, r.bytes(s1len.div_ceil(8))?)
                    .ok_or(WireError::MalformedFrame("seed1 padding"))?;
                WireMessage::OtCiphertexts(OtCipherPayload::Strings {
                    e0,
                    e1,
                    in0,
                    seed0,
                    in1,
                    seed1,
                })
            }
            _ => return Err(WireError::MalformedFrame("ciphertext mode byte")),
        },
        10 => {
            let reason = abort_reason(r.u8()?)?;
            let len = r.u16()? as usize;
            let detail = String::from_utf8(r.bytes(len)?.to_vec())
                .map_err(|_| WireError::MalformedFrame("abort detail utf-8"))?;
            WireMessage::Abort { reason, detail }
        }
        other => return Err(WireError::UnknownTag(other)),
    };
    r.finish()?;
    Ok(msg)
}

/// Convert an in-memory commitment to its wire item.
pub fn commitment_to_item(c: &Commitment) -> CommitmentItem {
    CommitmentItem {
        matrix_seed: *c.func.matrix_seed(),
        offset: c.func.offset().clone(),
        digest: c.digest.clone(),
    }
}

/// Rebuild an in-memory commitment from a wire item (expands the matrix).
pub fn item_to_commitment(item: &CommitmentItem, params: &crate::commitment::ComParams) -> Commitment {
    Commitment {
        func: UniversalHashFunc::from_seed(item.matrix_seed, item.offset.clone(), params),
        digest: item.digest.clone(),
    }
}

/// Pack a qubit batch into the explicit wire form.
pub fn qubits_to_batch(qubits: &[PreparedQubit]) -> WireMessage {
    let values = BitString::from_bits(&qubits.iter().map(|q| q.value).collect::<Vec<_>>());
    let bases = BitString::from_bits(&qubits.iter().map(|q| q.basis.bit()).collect::<Vec<_>>());
    WireMessage::QubitsBatch { values, bases }
}

/// Unpack the explicit wire form back into qubits.
pub fn batch_to_qubits(values: &BitString, bases: &BitString) -> Vec<PreparedQubit> {
    (0..values.len())
        .map(|i| PreparedQubit {
            value: values.get(i),
            basis: Basis::from_bit(bases.get(i)),
        })
        .collect()
}

/// Which way a frame traveled; transcripts digest the absolute direction so
/// both parties compute identical digests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AliceToBob = 0,
    BobToAlice = 1,
}

/// Append-only frame log with a running digest.
#[derive(Default)]
pub struct SessionTranscript {
    frames: Vec<(Direction, Vec<u8>)>,
    digest: [u8; 32],
}

impl SessionTranscript {
    pub fn new() -> Self {
        Self {
            frames: Vec::new(),
            digest: [0u8; 32],
        }
    }

    pub fn append(&mut self, direction: Direction, frame_bytes: &[u8]) {
        let mut h = Sha256::new();
        h.update(self.digest);
        h.update([direction as u8]);
        h.update(frame_bytes);
        self.digest = h.finalize().into();
        self.frames.push((direction, frame_bytes.to_vec()));
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn frames(&self) -> &[(Direction, Vec<u8>)] {
        &self.frames
    }

    /// Decode every logged frame (they were validated when appended).
    pub fn messages(&self) -> Vec<(Direction, WireMessage)> {
        self.frames
            .iter()
            .map(|(d, raw)| (*d, decode(raw).expect("transcript frames decode")))
            .collect()
    }
}

/// A duplex frame channel plus the out-of-band "quantum port" for simulated
/// qubit batches.
///
/// The byte-level methods return the exact frame bytes that crossed the
/// wire so session drivers can fold them into their transcripts.
pub trait FrameChannel {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), WireError>;
    fn recv_frame(&mut self) -> Result<Vec<u8>, WireError>;
    /// Move a qubit batch to the peer (loopback: in memory, with an opaque
    /// handle frame on the classical wire; TCP: explicit frame, gated by the
    /// simulation acknowledgment). Returns the classical frame bytes.
    fn send_qubits(&mut self, qubits: Vec<PreparedQubit>) -> Result<Vec<u8>, WireError>;
    fn recv_qubits(&mut self) -> Result<(Vec<PreparedQubit>, Vec<u8>), WireError>;

    fn send(&mut self, msg: &WireMessage) -> Result<Vec<u8>, WireError> {
        let frame = encode(msg)?;
        self.send_frame(frame.clone())?;
        Ok(frame)
    }

    fn recv(&mut self) -> Result<(WireMessage, Vec<u8>), WireError> {
        let frame = self.recv_frame()?;
        let msg = decode(&frame)?;
        Ok((msg, frame))
    }
}

enum Packet {
    Frame(Vec<u8>),
    Qubits(Vec<PreparedQubit>),
}

/// In-process channel endpoint. Frames are serialized and deserialized on
/// the way through, so loopback runs exercise the exact wire bytes.
pub struct LoopbackChannel {
    tx: mpsc::Sender<Packet>,
    rx: mpsc::Receiver<Packet>,
    /// Frames waiting behind an out-of-order qubit packet (and vice versa).
    frame_queue: VecDeque<Vec<u8>>,
    qubit_queue: VecDeque<Vec<PreparedQubit>>,
    timeout: Duration,
}

/// A connected pair of loopback endpoints.
pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    let (atx, brx) = mpsc::channel();
    let (btx, arx) = mpsc::channel();
    (
        LoopbackChannel {
            tx: atx,
            rx: arx,
            frame_queue: VecDeque::new(),
            qubit_queue: VecDeque::new(),
            timeout: DEFAULT_TIMEOUT,
        },
        LoopbackChannel {
            tx: btx,
            rx: brx,
            frame_queue: VecDeque::new(),
            qubit_queue: VecDeque::new(),
            timeout: DEFAULT_TIMEOUT,
        },
    )
}

impl LoopbackChannel {
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    fn pump(&mut self) -> Result<(), WireError> {
        match self.rx.recv_timeout(self.timeout) {
            Ok(Packet::Frame(f)) => {
                self.frame_queue.push_back(f);
                Ok(())
            }
            Ok(Packet::Qubits(q)) => {
                self.qubit_queue.push_back(q);
                Ok(())
            }
            Err(mpsc::RecvTimeoutError::Timeout) => Err(WireError::Timeout),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(WireError::Disconnected),
        }
    }
}

impl FrameChannel for LoopbackChannel {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), WireError> {
        self.tx
            .send(Packet::Frame(frame))
            .map_err(|_| WireError::Disconnected)
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, WireError> {
        loop {
            if let Some(frame) = self.frame_queue.pop_front() {
                return Ok(frame);
            }
            self.pump()?;
        }
    }

    fn send_qubits(&mut self, qubits: Vec<PreparedQubit>) -> Result<Vec<u8>, WireError> {
        // the classical wire sees only the opaque handle
        let frame = self.send(&WireMessage::QubitsHandle {
            count: qubits.len() as u32,
        })?;
        self.tx
            .send(Packet::Qubits(qubits))
            .map_err(|_| WireError::Disconnected)?;
        Ok(frame)
    }

    fn recv_qubits(&mut self) -> Result<(Vec<PreparedQubit>, Vec<u8>), WireError> {
        let (msg, frame) = self.recv()?;
        match msg {
            WireMessage::QubitsHandle { count } => loop {
                if let Some(q) = self.qubit_queue.pop_front() {
                    if q.len() != count as usize {
                        return Err(WireError::MalformedFrame("qubit count mismatch"));
                    }
                    return Ok((q, frame));
                }
                self.pump()?;
            },
            other => Err(WireError::UnexpectedFrame {
                expected: "QubitsHandle",
                got: other.tag_name(),
            }),
        }
    }
}

/// TCP frame channel. Qubit batches are serialized as explicit
/// SIMULATION-ONLY frames and require `acknowledge_simulation`.
pub struct TcpChannel {
    stream: TcpStream,
    acknowledge_simulation: bool,
}

impl TcpChannel {
    pub fn new(stream: TcpStream, acknowledge_simulation: bool) -> Result<Self, WireError> {
        stream.set_read_timeout(Some(DEFAULT_TIMEOUT))?;
        stream.set_nodelay(true)?;
        Ok(Self {
            stream,
            acknowledge_simulation,
        })
    }

    pub fn set_timeout(&mut self, timeout: Duration) -> Result<(), WireError> {
        self.stream.set_read_timeout(Some(timeout))?;
        Ok(())
    }
}

impl FrameChannel for TcpChannel {
    fn send_frame(&mut self, frame: Vec<u8>) -> Result<(), WireError> {
        self.stream.write_all(&frame)?;
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Vec<u8>, WireError> {
        let mut header = [0u8; 5];
        if let Err(e) = self.stream.read_exact(&mut header) {
            return Err(match e.kind() {
                ErrorKind::WouldBlock | ErrorKind::TimedOut => WireError::Timeout,
                ErrorKind::UnexpectedEof => WireError::Disconnected,
                _ => WireError::Io(e),
            });
        }
        let len = u32::from_be_bytes(header[1..5].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(WireError::LengthOverflow(len));
        }
        let mut frame = vec![0u8; 5 + len];
        frame[..5].copy_from_slice(&header);
        if let Err(e) = self.stream.read_exact(&mut frame[5..]) {
            return Err(match e.kind() {
                ErrorKind::WouldBlock | ErrorKind::TimedOut => WireError::Timeout,
                ErrorKind::UnexpectedEof => WireError::Disconnected,
                _ => WireError::Io(e),
            });
        }
        Ok(frame)
    }

    fn send_qubits(&mut self, qubits: Vec<PreparedQubit>) -> Result<Vec<u8>, WireError> {
        if !self.acknowledge_simulation {
            return Err(WireError::SimulationNotAcknowledged);
        }
        self.send(&qubits_to_batch(&qubits))
    }

    fn recv_qubits(&mut self) -> Result<(Vec<PreparedQubit>, Vec<u8>), WireError> {
        if !self.acknowledge_simulation {
            return Err(WireError::SimulationNotAcknowledged);
        }
        let (msg, frame) = self.recv()?;
        match msg {
            WireMessage::QubitsBatch { values, bases } => {
                Ok((batch_to_qubits(&values, &bases), frame))
            }
            other => Err(WireError::UnexpectedFrame {
                expected: "QubitsBatch",
                got: other.tag_name(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::indices_to_mask;
    use crate::rng;
    use rand::RngCore;

    fn roundtrip(msg: &WireMessage) {
        let frame = encode(msg).unwrap();
        let back = decode(&frame).unwrap();
        assert_eq!(&back, msg);
    }

    #[test]
    fn index_set_packing_golden() {
        // set {0, 2} over 8 -> 0xA0 inside a TestSet frame
        let msg = WireMessage::TestSet {
            members: indices_to_mask(8, &[0, 2]),
        };
        let frame = encode(&msg).unwrap();
        assert_eq!(frame, vec![4, 0, 0, 0, 5, 0, 0, 0, 8, 0xa0]);

        let empty = WireMessage::TestSet {
            members: indices_to_mask(8, &[]),
        };
        assert_eq!(encode(&empty).unwrap(), vec![4, 0, 0, 0, 5, 0, 0, 0, 8, 0x00]);
    }

    #[test]
    fn every_variant_roundtrips() {
        let mut r = rng::seeded(1);
        roundtrip(&WireMessage::QubitsHandle { count: 12345 });
        roundtrip(&WireMessage::QubitsBatch {
            values: BitString::random(13, &mut r),
            bases: BitString::random(13, &mut r),
        });
        roundtrip(&WireMessage::SiftedIndices {
            surviving: BitString::random(40, &mut r),
        });
        let mut seed = [0u8; 32];
        r.fill_bytes(&mut seed);
        roundtrip(&WireMessage::Commitments {
            msg_len: 2,
            digest_len: 32,
            items: vec![
                CommitmentItem {
                    matrix_seed: seed,
                    offset: BitString::random(2, &mut r),
                    digest: vec![7u8; 32],
                },
                CommitmentItem {
                    matrix_seed: seed,
                    offset: BitString::random(2, &mut r),
                    digest: vec![9u8; 32],
                },
            ],
        });
        roundtrip(&WireMessage::TestSet {
            members: BitString::random(21, &mut r),
        });
        roundtrip(&WireMessage::Openings {
            witnesses: vec![BitString::random(38, &mut r), BitString::random(38, &mut r)],
        });
        roundtrip(&WireMessage::BasesReveal {
            bases: BitString::random(17, &mut r),
        });
        roundtrip(&WireMessage::ParityMsg(ParityPayload {
            kind: ParityKind::Probe,
            aux0: 3,
            aux1: 99,
            bits: BitString::random(5, &mut r),
        }));
        roundtrip(&WireMessage::OtRequest {
            universe: 12,
            first: BitString::random(12, &mut r),
            second: BitString::random(12, &mut r),
        });
        roundtrip(&WireMessage::OtCiphertexts(OtCipherPayload::Bits {
            e0: true,
            e1: false,
        }));
        roundtrip(&WireMessage::OtCiphertexts(OtCipherPayload::Strings {
            e0: BitString::random(16, &mut r),
            e1: BitString::random(16, &mut r),
            in0: 20,
            seed0: BitString::random(35, &mut r),
            in1: 24,
            seed1: BitString::random(39, &mut r),
        }));
        roundtrip(&WireMessage::Abort {
            reason: AbortReason::CorrelationTestFailed,
            detail: "error rate 0.31".into(),
        });
    }

    #[test]
    fn generative_roundtrip() {
        let mut r = rng::seeded(2);
        for _ in 0..2000 {
            let msg = arbitrary_message(&mut r);
            roundtrip(&msg);
        }
    }
}

/// Uniformly shaped random message, for generative roundtrip tests.
#[doc(hidden)]
pub fn arbitrary_message(r: &mut crate::rng::ProtocolRng) -> WireMessage {
    use rand::{Rng, RngCore};
    {
        match r.gen_range(0..11) {
            0 => WireMessage::QubitsHandle { count: r.gen() },
            1 => {
                let n = r.gen_range(0..50);
                WireMessage::QubitsBatch {
                    values: BitString::random(n, r),
                    bases: BitString::random(n, r),
                }
            }
            2 => WireMessage::SiftedIndices {
                surviving: BitString::random(r.gen_range(0..200), r),
            },
            3 => {
                let msg_len = r.gen_range(1..=4u8);
                let digest_len = r.gen_range(1..=32u8);
                let items = (0..r.gen_range(0..12))
                    .map(|_| {
                        let mut seed = [0u8; 32];
                        r.fill_bytes(&mut seed);
                        let mut digest = vec![0u8; digest_len as usize];
                        r.fill_bytes(&mut digest);
                        CommitmentItem {
                            matrix_seed: seed,
                            offset: BitString::random(msg_len as usize, r),
                            digest,
                        }
                    })
                    .collect();
                WireMessage::Commitments {
                    msg_len,
                    digest_len,
                    items,
                }
            }
            4 => WireMessage::TestSet {
                members: BitString::random(r.gen_range(0..100), r),
            },
            5 => {
                let wlen = r.gen_range(0..80);
                let witnesses = (0..r.gen_range(0..10))
                    .map(|_| BitString::random(wlen, r))
                    .collect();
                WireMessage::Openings { witnesses }
            }
            6 => WireMessage::BasesReveal {
                bases: BitString::random(r.gen_range(0..100), r),
            },
            7 => WireMessage::ParityMsg(ParityPayload {
                kind: ParityKind::from_byte(r.gen_range(0..8)).unwrap(),
                aux0: r.gen(),
                aux1: r.gen(),
                bits: BitString::random(r.gen_range(0..64), r),
            }),
            8 => {
                let n = r.gen_range(0..64);
                WireMessage::OtRequest {
                    universe: n as u32,
                    first: BitString::random(n, r),
                    second: BitString::random(n, r),
                }
            }
            9 => {
                if r.gen_bool(0.5) {
                    WireMessage::OtCiphertexts(OtCipherPayload::Bits {
                        e0: r.gen_bool(0.5),
                        e1: r.gen_bool(0.5),
                    })
                } else {
                    let len = r.gen_range(1..32);
                    let in0 = r.gen_range(len..len + 40);
                    let in1 = r.gen_range(len..len + 40);
                    WireMessage::OtCiphertexts(OtCipherPayload::Strings {
                        e0: BitString::random(len, r),
                        e1: BitString::random(len, r),
                        in0: in0 as u32,
                        seed0: BitString::random(in0 + len - 1, r),
                        in1: in1 as u32,
                        seed1: BitString::random(in1 + len - 1, r),
                    })
                }
            }
            _ => WireMessage::Abort {
                reason: abort_reason(r.gen_range(0..8)).unwrap(),
                detail: format!("detail {}", r.gen::<u32>()),
            },
        }
    }
}
