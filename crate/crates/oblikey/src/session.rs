//! Session drivers: the per-party protocol loops over a frame channel.
//!
//! `run_alice` and `run_bob` each drive one endpoint of the key-distribution
//! exchange (and, when configured, the post-processing sub-protocol) in
//! strict frame order. Any frame arriving out of order aborts the session
//! without emitting a key. `run_loopback` wires both drivers together over
//! an in-process channel pair on two threads; the same drivers run unchanged
//! over TCP.
//!
//! Both sides maintain a transcript digest over the exact frame bytes, keyed
//! by absolute direction, so honest endpoints finish with identical digests.
//!
//! When post-processing is enabled the receiver first discloses which
//! positions his bases matched (reconciliation cannot work on the
//! uncorrelated rest), then the cascade sub-protocol runs over `ParityMsg`
//! frames and both sides extract a shorter common string through a Toeplitz
//! seed sent in the clear. Disclosing the matched set gives the sender the
//! receiver's basis-match pattern for this key, so keys produced this way
//! are for throughput and robustness experiments; the transfer phase on such
//! keys must use the hashed-pad string mode since raw-key parities have been
//! disclosed.

use std::sync::Arc;
use std::time::Duration;

use rand::RngCore;
use thiserror::Error;

use crate::bits::{indices_to_mask, mask_to_indices, BitString};
use crate::commitment::CommitHash;
use crate::okd::{
    AbortReason, AliceOkd, BobOkd, OkReceiverKey, OkSenderKey, OkdError, SessionParams, TestSet,
};
use crate::postprocess::{
    plan_output_length, CascadeConfig, ParityOracle, PostprocError, ReconcileReceiver,
    ReconcileSender, ReconciliationReport, ToeplitzExtractor,
};
use crate::wire::{
    commitment_to_item, item_to_commitment, Direction, FrameChannel, ParityKind, ParityPayload,
    SessionTranscript, WireError, WireMessage,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("transport: {0}")]
    Wire(#[from] WireError),
    #[error("protocol violation: expected {expected}, got {got}")]
    ProtocolViolation {
        expected: &'static str,
        got: String,
    },
    #[error("engine: {0}")]
    Engine(#[from] OkdError),
    #[error("post-processing: {0}")]
    Postprocess(#[from] PostprocError),
}

/// Post-processing knobs (reconciliation + amplification).
#[derive(Debug, Clone, Copy)]
pub struct PostprocessConfig {
    pub max_rounds: usize,
    pub security_margin: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            max_rounds: 8,
            security_margin: 128,
        }
    }
}

/// Everything a driver needs besides its RNG and channel.
#[derive(Clone)]
pub struct SessionConfig {
    pub params: SessionParams,
    pub hash: Arc<dyn CommitHash>,
    pub postprocess: Option<PostprocessConfig>,
    pub timeout: Duration,
}

impl SessionConfig {
    pub fn new(params: SessionParams, hash: Arc<dyn CommitHash>) -> Self {
        Self {
            params,
            hash,
            postprocess: None,
            timeout: crate::wire::DEFAULT_TIMEOUT,
        }
    }

    pub fn with_postprocess(mut self, pp: PostprocessConfig) -> Self {
        self.postprocess = Some(pp);
        self
    }
}

/// Output of the post-processing pipeline on one side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessedKey {
    pub bits: BitString,
    pub leaked_bits: usize,
    pub corrected: usize,
    pub rounds: usize,
}

#[derive(Debug)]
pub struct AliceSession {
    pub key: OkSenderKey,
    pub observed_error_rate: f64,
    pub matched_test_count: usize,
    pub processed: Option<ProcessedKey>,
    pub transcript_digest: [u8; 32],
}

#[derive(Debug)]
pub struct BobSession {
    pub key: OkReceiverKey,
    pub matched_fraction: f64,
    pub processed: Option<ProcessedKey>,
    pub transcript_digest: [u8; 32],
}

#[derive(Debug)]
pub enum AliceOutcome {
    Completed(Box<AliceSession>),
    Aborted(AbortReason),
}

#[derive(Debug)]
pub enum BobOutcome {
    Completed(Box<BobSession>),
    Aborted(AbortReason),
}

struct Endpoint<'a, C: FrameChannel> {
    channel: &'a mut C,
    transcript: SessionTranscript,
    /// Direction of frames this endpoint sends.
    outgoing: Direction,
}

impl<'a, C: FrameChannel> Endpoint<'a, C> {
    fn new(channel: &'a mut C, outgoing: Direction) -> Self {
        Self {
            channel,
            transcript: SessionTranscript::new(),
            outgoing,
        }
    }

    fn incoming(&self) -> Direction {
        match self.outgoing {
            Direction::AliceToBob => Direction::BobToAlice,
            Direction::BobToAlice => Direction::AliceToBob,
        }
    }

    fn send(&mut self, msg: &WireMessage) -> Result<(), SessionError> {
        let frame = self.channel.send(msg)?;
        self.transcript.append(self.outgoing, &frame);
        Ok(())
    }

    fn recv(&mut self) -> Result<WireMessage, SessionError> {
        let (msg, frame) = self.channel.recv()?;
        let dir = self.incoming();
        self.transcript.append(dir, &frame);
        Ok(msg)
    }

    /// Send an abort frame (best effort) and report the violation.
    fn violation(&mut self, expected: &'static str, got: impl Into<String>) -> SessionError {
        let got = got.into();
        let _ = self.send(&WireMessage::Abort {
            reason: AbortReason::ProtocolViolation,
            detail: format!("expected {expected}, got {got}"),
        });
        SessionError::ProtocolViolation { expected, got }
    }

    fn abort(&mut self, reason: AbortReason, detail: String) -> Result<(), SessionError> {
        self.send(&WireMessage::Abort { reason, detail })
    }
}

/// Shuffle seed for cascade, derived from the shared transcript state so
/// both sides agree without an extra exchange.
fn cascade_seed(transcript: &SessionTranscript) -> u64 {
    u64::from_be_bytes(transcript.digest()[..8].try_into().unwrap())
}

/// Probe intervals travel as a 64-bit string: lo (u32) then hi (u32).
fn encode_interval(lo: usize, hi: usize) -> BitString {
    let mut bytes = Vec::with_capacity(8);
    bytes.extend_from_slice(&(lo as u32).to_be_bytes());
    bytes.extend_from_slice(&(hi as u32).to_be_bytes());
    BitString::from_packed(64, &bytes).expect("exact bytes")
}

fn decode_interval(bits: &BitString) -> Option<(usize, usize)> {
    if bits.len() != 64 {
        return None;
    }
    let raw = bits.as_bytes();
    let lo = u32::from_be_bytes(raw[..4].try_into().unwrap()) as usize;
    let hi = u32::from_be_bytes(raw[4..].try_into().unwrap()) as usize;
    Some((lo, hi))
}

/// Drive Alice's side of a key-distribution session.
pub fn run_alice<C: FrameChannel>(
    channel: &mut C,
    cfg: &SessionConfig,
    rng: &mut impl RngCore,
) -> Result<AliceOutcome, SessionError> {
    let mut ep = Endpoint::new(channel, Direction::AliceToBob);
    let hash = cfg.hash.as_ref();

    let (mut alice, qubits) = AliceOkd::start(cfg.params, rng);
    let frame = ep.channel.send_qubits(qubits)?;
    ep.transcript.append(Direction::AliceToBob, &frame);

    let surviving = match ep.recv()? {
        WireMessage::SiftedIndices { surviving } => mask_to_indices(&surviving),
        WireMessage::Abort { reason, .. } => return Ok(AliceOutcome::Aborted(reason)),
        other => return Err(ep.violation("SiftedIndices", other.tag_name())),
    };

    let commitments = match ep.recv()? {
        WireMessage::Commitments {
            msg_len,
            digest_len,
            items,
        } => {
            if msg_len as usize != cfg.params.com().msg_len()
                || digest_len as usize != hash.digest_len()
            {
                ep.abort(
                    AbortReason::ProtocolViolation,
                    "commitment shape disagrees with session parameters".into(),
                )?;
                return Ok(AliceOutcome::Aborted(AbortReason::ProtocolViolation));
            }
            items
                .iter()
                .map(|item| item_to_commitment(item, cfg.params.com()))
                .collect::<Vec<_>>()
        }
        WireMessage::Abort { reason, .. } => return Ok(AliceOutcome::Aborted(reason)),
        other => return Err(ep.violation("Commitments", other.tag_name())),
    };

    alice.receive_commitments(&surviving, commitments)?;
    let test = alice.choose_test(rng)?;
    ep.send(&WireMessage::TestSet {
        members: indices_to_mask(cfg.params.total(), test.indices()),
    })?;

    let openings = match ep.recv()? {
        WireMessage::Openings { witnesses } => witnesses
            .into_iter()
            .map(|witness| crate::commitment::Opening { witness })
            .collect::<Vec<_>>(),
        WireMessage::Abort { reason, .. } => return Ok(AliceOutcome::Aborted(reason)),
        other => return Err(ep.violation("Openings", other.tag_name())),
    };

    let (key, bases_reveal) = match alice.verify_and_finish(&openings, hash) {
        Ok(v) => v,
        Err(OkdError::Abort(reason)) => {
            ep.abort(reason, format!("correlation check: {reason}"))?;
            return Ok(AliceOutcome::Aborted(reason));
        }
        Err(e) => return Err(e.into()),
    };
    ep.send(&WireMessage::BasesReveal {
        bases: bases_reveal,
    })?;

    let observed_error_rate = alice.observed_error_rate.unwrap_or(0.0);
    let matched_test_count = alice.matched_test_count.unwrap_or(0);

    let processed = if let Some(pp) = cfg.postprocess {
        match alice_postprocess(&mut ep, pp, &key, observed_error_rate, rng)? {
            Ok(p) => Some(p),
            Err(reason) => return Ok(AliceOutcome::Aborted(reason)),
        }
    } else {
        None
    };

    Ok(AliceOutcome::Completed(Box::new(AliceSession {
        key,
        observed_error_rate,
        matched_test_count,
        processed,
        transcript_digest: ep.transcript.digest(),
    })))
}

/// Alice's side of reconciliation + amplification. The outer `Result` is
/// for transport failures; the inner one distinguishes protocol aborts.
fn alice_postprocess<C: FrameChannel>(
    ep: &mut Endpoint<'_, C>,
    pp: PostprocessConfig,
    key: &OkSenderKey,
    observed_error_rate: f64,
    rng: &mut impl RngCore,
) -> Result<Result<ProcessedKey, AbortReason>, SessionError> {
    // receiver opens the sub-protocol by disclosing his matched positions
    let matched = match ep.recv()? {
        WireMessage::ParityMsg(p) if p.kind == ParityKind::MatchedSet => mask_to_indices(&p.bits),
        WireMessage::Abort { reason, .. } => return Ok(Err(reason)),
        other => return Err(ep.violation("ParityMsg(MatchedSet)", other.tag_name())),
    };
    let view = key.bits.select(&matched);

    // announce the cascade shape (block size from the step-6 estimate)
    let shape = CascadeConfig::for_error_rate(observed_error_rate.max(0.01), pp.max_rounds, 0);
    ep.send(&WireMessage::ParityMsg(ParityPayload {
        kind: ParityKind::Config,
        aux0: shape.initial_block as u32,
        aux1: shape.max_rounds as u32,
        bits: BitString::zeros(0),
    }))?;
    let cascade = CascadeConfig::new(
        shape.initial_block,
        shape.max_rounds,
        cascade_seed(&ep.transcript),
    );

    let mut sender = ReconcileSender::new(view.clone(), cascade);
    let mut verdict = false;
    'rounds: for round in 0..cascade.max_rounds {
        let parities = sender.round_parities(round);
        ep.send(&WireMessage::ParityMsg(ParityPayload {
            kind: ParityKind::BlockParities,
            aux0: round as u32,
            aux1: 0,
            bits: parities,
        }))?;
        loop {
            match ep.recv()? {
                WireMessage::ParityMsg(p) if p.kind == ParityKind::Probe => {
                    let Some((lo, hi)) = decode_interval(&p.bits) else {
                        return Err(ep.violation("ParityMsg(Probe)", "malformed interval"));
                    };
                    let bit = sender.probe(p.aux0 as usize, lo, hi);
                    ep.send(&WireMessage::ParityMsg(ParityPayload {
                        kind: ParityKind::ProbeReply,
                        aux0: 0,
                        aux1: 0,
                        bits: BitString::from_bits(&[bit]),
                    }))?;
                }
                WireMessage::ParityMsg(p) if p.kind == ParityKind::Checksum => {
                    let checksum = u64::from(p.aux0) << 32 | u64::from(p.aux1);
                    verdict = sender.confirm(checksum);
                    ep.send(&WireMessage::ParityMsg(ParityPayload {
                        kind: ParityKind::Verdict,
                        aux0: u32::from(verdict),
                        aux1: 0,
                        bits: BitString::zeros(0),
                    }))?;
                    if verdict {
                        break 'rounds;
                    }
                    continue 'rounds;
                }
                WireMessage::Abort { reason, .. } => return Ok(Err(reason)),
                other => return Err(ep.violation("ParityMsg", other.tag_name())),
            }
        }
    }
    if !verdict {
        ep.abort(
            AbortReason::ReconciliationFailed,
            "residual errors after all rounds".into(),
        )?;
        return Ok(Err(AbortReason::ReconciliationFailed));
    }

    let leaked = sender.leaked();
    let out_len = match plan_output_length(view.len(), leaked, pp.security_margin) {
        Ok(v) => v,
        Err(_) => {
            ep.abort(
                AbortReason::InsufficientEntropy,
                format!("{} bits left no room after {leaked} leaked", view.len()),
            )?;
            return Ok(Err(AbortReason::InsufficientEntropy));
        }
    };
    let extractor = ToeplitzExtractor::random(view.len(), out_len, rng)?;
    ep.send(&WireMessage::ParityMsg(ParityPayload {
        kind: ParityKind::ExtractorSeed,
        aux0: out_len as u32,
        aux1: leaked as u32,
        bits: extractor.seed().clone(),
    }))?;
    let bits = crate::postprocess::amplify(&view, &extractor)?;
    Ok(Ok(ProcessedKey {
        bits,
        leaked_bits: leaked,
        corrected: 0,
        rounds: 0,
    }))
}

/// Wire-side parity oracle: forwards the receiver's cascade queries to the
/// sender and reads the replies.
struct WireOracle<'a, 'b, C: FrameChannel> {
    ep: &'a mut Endpoint<'b, C>,
}

impl<C: FrameChannel> WireOracle<'_, '_, C> {
    fn recv_parity(&mut self, want: ParityKind) -> Result<ParityPayload, PostprocError> {
        match self.ep.recv() {
            Ok(WireMessage::ParityMsg(p)) if p.kind == want => Ok(p),
            Ok(WireMessage::Abort { reason, .. }) => {
                Err(PostprocError::Link(format!("peer aborted: {reason}")))
            }
            Ok(other) => Err(PostprocError::Link(format!(
                "expected {want:?}, got {}",
                other.tag_name()
            ))),
            Err(e) => Err(PostprocError::Link(e.to_string())),
        }
    }
}

impl<C: FrameChannel> ParityOracle for WireOracle<'_, '_, C> {
    fn round_parities(&mut self, round: usize) -> Result<BitString, PostprocError> {
        let p = self.recv_parity(ParityKind::BlockParities)?;
        if p.aux0 as usize != round {
            return Err(PostprocError::Link(format!(
                "round parities for {} while expecting {round}",
                p.aux0
            )));
        }
        Ok(p.bits)
    }

    fn probe(&mut self, round: usize, lo: usize, hi: usize) -> Result<bool, PostprocError> {
        self.ep
            .send(&WireMessage::ParityMsg(ParityPayload {
                kind: ParityKind::Probe,
                aux0: round as u32,
                aux1: 0,
                bits: encode_interval(lo, hi),
            }))
            .map_err(|e| PostprocError::Link(e.to_string()))?;
        let p = self.recv_parity(ParityKind::ProbeReply)?;
        if p.bits.len() != 1 {
            return Err(PostprocError::Link("probe reply shape".into()));
        }
        Ok(p.bits.get(0))
    }

    fn confirm(&mut self, checksum: u64) -> Result<bool, PostprocError> {
        self.ep
            .send(&WireMessage::ParityMsg(ParityPayload {
                kind: ParityKind::Checksum,
                aux0: (checksum >> 32) as u32,
                aux1: checksum as u32,
                bits: BitString::zeros(0),
            }))
            .map_err(|e| PostprocError::Link(e.to_string()))?;
        let p = self.recv_parity(ParityKind::Verdict)?;
        Ok(p.aux0 == 1)
    }
}

/// Drive Bob's side of a key-distribution session.
pub fn run_bob<C: FrameChannel>(
    channel: &mut C,
    cfg: &SessionConfig,
    rng: &mut impl RngCore,
) -> Result<BobOutcome, SessionError> {
    let mut ep = Endpoint::new(channel, Direction::BobToAlice);
    let hash = cfg.hash.as_ref();

    let (qubits, frame) = ep.channel.recv_qubits()?;
    ep.transcript.append(Direction::AliceToBob, &frame);

    let mut bob = BobOkd::new(cfg.params);
    let (sift, commitments) = match bob.measure_and_commit(&qubits, hash, rng) {
        Ok(v) => v,
        Err(OkdError::InsufficientSurvivors {
            survivors,
            required,
        }) => {
            ep.abort(
                AbortReason::InsufficientSurvivors,
                format!("{survivors} of {required} survived"),
            )?;
            return Ok(BobOutcome::Aborted(AbortReason::InsufficientSurvivors));
        }
        Err(e) => return Err(e.into()),
    };

    ep.send(&WireMessage::SiftedIndices {
        surviving: indices_to_mask(sift.raw_count, &sift.surviving),
    })?;
    ep.send(&WireMessage::Commitments {
        msg_len: cfg.params.com().msg_len() as u8,
        digest_len: hash.digest_len() as u8,
        items: commitments.iter().map(commitment_to_item).collect(),
    })?;

    let test = match ep.recv()? {
        WireMessage::TestSet { members } => {
            if members.len() != cfg.params.total() {
                return Err(ep.violation("TestSet", "TestSet with wrong universe"));
            }
            match TestSet::new(mask_to_indices(&members), cfg.params.total(), cfg.params.m()) {
                Ok(t) => t,
                Err(_) => {
                    ep.abort(AbortReason::ProtocolViolation, "test set malformed".into())?;
                    return Ok(BobOutcome::Aborted(AbortReason::ProtocolViolation));
                }
            }
        }
        WireMessage::Abort { reason, .. } => return Ok(BobOutcome::Aborted(reason)),
        other => return Err(ep.violation("TestSet", other.tag_name())),
    };

    let openings = bob.open_test(&test)?;
    ep.send(&WireMessage::Openings {
        witnesses: openings.into_iter().map(|o| o.witness).collect(),
    })?;

    let bases_reveal = match ep.recv()? {
        WireMessage::BasesReveal { bases } => bases,
        WireMessage::Abort { reason, .. } => return Ok(BobOutcome::Aborted(reason)),
        other => return Err(ep.violation("BasesReveal", other.tag_name())),
    };
    let key = bob.finish(&bases_reveal)?;
    let matched = (0..key.n()).filter(|&i| !key.basis_mismatch.get(i)).count();
    let matched_fraction = matched as f64 / key.n() as f64;

    let processed = if cfg.postprocess.is_some() {
        match bob_postprocess(&mut ep, &key)? {
            Ok(p) => Some(p),
            Err(reason) => return Ok(BobOutcome::Aborted(reason)),
        }
    } else {
        None
    };

    Ok(BobOutcome::Completed(Box::new(BobSession {
        key,
        matched_fraction,
        processed,
        transcript_digest: ep.transcript.digest(),
    })))
}

fn bob_postprocess<C: FrameChannel>(
    ep: &mut Endpoint<'_, C>,
    key: &OkReceiverKey,
) -> Result<Result<ProcessedKey, AbortReason>, SessionError> {
    let matched: Vec<usize> = (0..key.n())
        .filter(|&i| !key.basis_mismatch.get(i))
        .collect();
    ep.send(&WireMessage::ParityMsg(ParityPayload {
        kind: ParityKind::MatchedSet,
        aux0: 0,
        aux1: 0,
        bits: indices_to_mask(key.n(), &matched),
    }))?;
    let view = key.bits.select(&matched);

    let (initial_block, max_rounds) = match ep.recv()? {
        WireMessage::ParityMsg(p) if p.kind == ParityKind::Config => {
            (p.aux0 as usize, p.aux1 as usize)
        }
        WireMessage::Abort { reason, .. } => return Ok(Err(reason)),
        other => return Err(ep.violation("ParityMsg(Config)", other.tag_name())),
    };
    let cascade = CascadeConfig::new(initial_block, max_rounds, cascade_seed(&ep.transcript));

    let receiver = ReconcileReceiver::new(view, cascade);
    let mut oracle = WireOracle { ep };
    let (corrected_bits, report): (BitString, ReconciliationReport) = match receiver
        .run(&mut oracle)
    {
        Ok(v) => v,
        Err(PostprocError::MaxRoundsExceeded(_)) => {
            // Alice follows up with the abort frame
            return match ep.recv()? {
                WireMessage::Abort { reason, .. } => Ok(Err(reason)),
                other => Err(ep.violation("Abort", other.tag_name())),
            };
        }
        Err(PostprocError::Link(detail)) => {
            return Err(SessionError::ProtocolViolation {
                expected: "ParityMsg",
                got: detail,
            })
        }
        Err(e) => return Err(e.into()),
    };

    let (out_len, seed) = match ep.recv()? {
        WireMessage::ParityMsg(p) if p.kind == ParityKind::ExtractorSeed => {
            (p.aux0 as usize, p.bits)
        }
        WireMessage::Abort { reason, .. } => return Ok(Err(reason)),
        other => return Err(ep.violation("ParityMsg(ExtractorSeed)", other.tag_name())),
    };
    let extractor = ToeplitzExtractor::new(seed, corrected_bits.len(), out_len)?;
    let bits = crate::postprocess::amplify(&corrected_bits, &extractor)?;
    Ok(Ok(ProcessedKey {
        bits,
        leaked_bits: report.leaked_bits,
        corrected: report.corrected_positions.len(),
        rounds: report.rounds,
    }))
}

/// Run a complete session over an in-process channel pair, Alice on the
/// calling thread and Bob on a scoped worker.
pub fn run_loopback(
    cfg: &SessionConfig,
    alice_rng: &mut impl RngCore,
    bob_rng: &mut (impl RngCore + Send),
) -> Result<(AliceOutcome, BobOutcome), SessionError> {
    let (mut a_ch, mut b_ch) = crate::wire::loopback_pair();
    a_ch.set_timeout(cfg.timeout);
    b_ch.set_timeout(cfg.timeout);
    let bob_cfg = cfg.clone();
    std::thread::scope(|scope| {
        let bob = scope.spawn(move || run_bob(&mut b_ch, &bob_cfg, bob_rng));
        let alice = run_alice(&mut a_ch, cfg, alice_rng);
        let bob = bob.join().expect("bob thread panicked");
        match (alice, bob) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelParams;
    use crate::commitment::{default_hash, ComParams};
    use crate::rng;
    use crate::wire::{encode, loopback_pair};

    fn config(n: usize, m: usize, flip: f64, tau: f64) -> SessionConfig {
        let params = SessionParams::new(
            n,
            m,
            ComParams::new(2, 16).unwrap(),
            tau,
            ChannelParams::new(flip, 0.0).unwrap(),
        )
        .unwrap();
        SessionConfig::new(params, default_hash())
    }

    #[test]
    fn loopback_honest_session_completes_with_matching_transcripts() {
        let cfg = config(512, 128, 0.0, 0.0);
        let (a, b) = run_loopback(&cfg, &mut rng::seeded(1), &mut rng::seeded(2)).unwrap();
        let (a, b) = match (a, b) {
            (AliceOutcome::Completed(a), BobOutcome::Completed(b)) => (a, b),
            other => panic!("unexpected outcome {other:?}"),
        };
        assert_eq!(a.transcript_digest, b.transcript_digest);
        assert_eq!(a.key.bits.len(), 512);
        for i in 0..512 {
            if !b.key.basis_mismatch.get(i) {
                assert_eq!(a.key.bits.get(i), b.key.bits.get(i));
            }
        }
        assert!((b.matched_fraction - 0.5).abs() < 0.15);
        assert_eq!(a.observed_error_rate, 0.0);
    }

    #[test]
    fn loopback_session_is_seed_deterministic() {
        let cfg = config(64, 16, 0.0, 0.0);
        let run = || {
            let (a, b) = run_loopback(&cfg, &mut rng::seeded(5), &mut rng::seeded(6)).unwrap();
            match (a, b) {
                (AliceOutcome::Completed(a), BobOutcome::Completed(b)) => {
                    (a.key.bits.clone(), b.key.bits.clone(), a.transcript_digest)
                }
                _ => panic!("aborted"),
            }
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn noisy_session_with_postprocess_agrees_exactly() {
        let mut completed = 0;
        for t in 0..10u64 {
            let cfg =
                config(2048, 512, 0.05, 0.11).with_postprocess(PostprocessConfig::default());
            let (a, b) = run_loopback(
                &cfg,
                &mut rng::derive(70, "alice", t),
                &mut rng::derive(70, "bob", t),
            )
            .unwrap();
            if let (AliceOutcome::Completed(a), BobOutcome::Completed(b)) = (a, b) {
                completed += 1;
                let ap = a.processed.expect("alice processed");
                let bp = b.processed.expect("bob processed");
                assert_eq!(ap.bits, bp.bits, "amplified outputs differ (trial {t})");
                assert_eq!(ap.leaked_bits, bp.leaked_bits);
                assert!(!ap.bits.is_empty());
                assert_eq!(a.transcript_digest, b.transcript_digest);
            }
        }
        assert!(completed >= 9, "only {completed}/10 noisy sessions completed");
    }

    #[test]
    fn flips_above_threshold_abort_both_sides() {
        let cfg = config(256, 64, 0.2, 0.0);
        let (a, b) = run_loopback(&cfg, &mut rng::seeded(9), &mut rng::seeded(10)).unwrap();
        assert!(matches!(
            a,
            AliceOutcome::Aborted(AbortReason::CorrelationTestFailed)
        ));
        assert!(matches!(
            b,
            BobOutcome::Aborted(AbortReason::CorrelationTestFailed)
        ));
    }

    #[test]
    fn out_of_order_frame_is_a_protocol_violation() {
        let cfg = config(16, 4, 0.0, 0.0);
        let (mut a_ch, mut b_ch) = loopback_pair();
        let handle = std::thread::spawn(move || {
            // a fake Bob that answers the qubit batch with a TestSet frame
            let (_qubits, _) = b_ch.recv_qubits().unwrap();
            b_ch.send_frame(
                encode(&WireMessage::TestSet {
                    members: BitString::zeros(20),
                })
                .unwrap(),
            )
            .unwrap();
            // drain the abort Alice sends back
            let _ = b_ch.recv();
        });
        let err = run_alice(&mut a_ch, &cfg, &mut rng::seeded(11)).unwrap_err();
        assert!(matches!(
            err,
            SessionError::ProtocolViolation {
                expected: "SiftedIndices",
                ..
            }
        ));
        handle.join().unwrap();
    }

    #[test]
    fn dropped_connection_surfaces_as_transport_error() {
        let cfg = config(16, 4, 0.0, 0.0);
        let (mut a_ch, b_ch) = loopback_pair();
        drop(b_ch);
        let err = run_alice(&mut a_ch, &cfg, &mut rng::seeded(12)).unwrap_err();
        assert!(matches!(err, SessionError::Wire(WireError::Disconnected)));
    }

    #[test]
    fn hung_peer_times_out() {
        let cfg = {
            let mut c = config(16, 4, 0.0, 0.0);
            c.timeout = Duration::from_millis(50);
            c
        };
        let (mut a_ch, _keep_alive) = loopback_pair();
        a_ch.set_timeout(Duration::from_millis(50));
        let err = run_alice(&mut a_ch, &cfg, &mut rng::seeded(13)).unwrap_err();
        assert!(matches!(err, SessionError::Wire(WireError::Timeout)));
    }
}
