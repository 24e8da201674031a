//! The oblivious-key-distribution phase as two explicit party state machines.
//!
//! Alice prepares `n + m` conjugate-coded states; Bob measures them in random
//! bases and commits to every (outcome, basis) pair; Alice names a random
//! test subset of size `m`; Bob opens those commitments; Alice checks that
//! outcomes agree wherever the bases happened to match and, if the observed
//! error rate stays below the threshold, reveals her preparation bases for
//! the surviving positions. Both parties end up with an oblivious key pair:
//! Alice holds `k`, Bob holds `(k_tilde, x)` with `k_i = k_tilde_i` exactly
//! where `x_i = 0`.
//!
//! Lost qubits are sifted out before commitments: Bob reports the surviving
//! indices, both parties restrict to the first `n + m` of them, and the
//! protocol proceeds as if the channel were lossless. Callers oversample the
//! batch when the channel loses qubits (see `raw_batch_size`).
//!
//! Every operation checks the party's phase first and leaves the state
//! untouched on error, so out-of-order calls cannot corrupt a session.

use rand::RngCore;
use thiserror::Error;

use crate::bits::BitString;
use crate::channel::{self, Basis, ChannelParams, MeasureOutcome, PreparedQubit};
use crate::commitment::{self, ComParams, CommitHash, Commitment, Opening};

/// Parameters shared by both parties before a session starts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionParams {
    n: usize,
    m: usize,
    com: ComParams,
    error_threshold: f64,
    channel: ChannelParams,
}

impl SessionParams {
    /// `n` kept positions, `m` tested positions (`1 <= m < n`), commitment
    /// parameters, correlation-test threshold in `[0, 0.5)`, channel model.
    pub fn new(
        n: usize,
        m: usize,
        com: ComParams,
        error_threshold: f64,
        channel: ChannelParams,
    ) -> Result<Self, OkdError> {
        if m == 0 || m >= n {
            return Err(OkdError::BadParameters {
                reason: format!("need 1 <= m < n, got n={n}, m={m}"),
            });
        }
        if com.msg_len() != 2 {
            return Err(OkdError::BadParameters {
                reason: format!(
                    "commitments carry (outcome, basis) pairs; msg_len must be 2, got {}",
                    com.msg_len()
                ),
            });
        }
        if !(0.0..0.5).contains(&error_threshold) {
            return Err(OkdError::BadParameters {
                reason: format!("error threshold {error_threshold} out of [0, 0.5)"),
            });
        }
        Ok(Self {
            n,
            m,
            com,
            error_threshold,
            channel,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn total(&self) -> usize {
        self.n + self.m
    }

    pub fn com(&self) -> &ComParams {
        &self.com
    }

    pub fn error_threshold(&self) -> f64 {
        self.error_threshold
    }

    pub fn channel(&self) -> &ChannelParams {
        &self.channel
    }

    /// How many raw qubits to emit so that, after losses, at least `n + m`
    /// survive with good probability. Equal to `n + m` on a lossless channel.
    pub fn raw_batch_size(&self) -> usize {
        let need = self.total() as f64;
        if self.channel.loss_prob == 0.0 {
            self.total()
        } else {
            let mean = need / (1.0 - self.channel.loss_prob);
            (mean + 4.0 * mean.sqrt() + 16.0).ceil() as usize
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OkdError {
    #[error("invalid session parameters: {reason}")]
    BadParameters { reason: String },
    #[error("operation requires phase {expected} but party is in {found}")]
    Phase {
        expected: &'static str,
        found: &'static str,
    },
    #[error("expected {expected} items, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("only {survivors} of {required} qubits survived the channel")]
    InsufficientSurvivors { survivors: usize, required: usize },
    #[error("test set invalid: {reason}")]
    BadTestSet { reason: String },
    #[error("commitment error: {0}")]
    Commit(#[from] commitment::CommitError),
    #[error("protocol aborted: {0}")]
    Abort(AbortReason),
}

/// Why a session aborted. Both parties observe the same reason.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbortReason {
    CommitmentInvalid,
    CorrelationTestFailed,
    InsufficientSurvivors,
    ProtocolViolation,
    ReconciliationFailed,
    InsufficientEntropy,
    DegenerateKey,
    Other,
}

impl std::fmt::Display for AbortReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AbortReason::CommitmentInvalid => "commitment invalid",
            AbortReason::CorrelationTestFailed => "correlation test failed",
            AbortReason::InsufficientSurvivors => "insufficient surviving qubits",
            AbortReason::ProtocolViolation => "protocol violation",
            AbortReason::ReconciliationFailed => "reconciliation failed",
            AbortReason::InsufficientEntropy => "insufficient entropy",
            AbortReason::DegenerateKey => "degenerate key",
            AbortReason::Other => "other",
        };
        f.write_str(s)
    }
}

/// The random test subset named by Alice: `m` distinct indices in
/// `0..n+m`, kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestSet {
    indices: Vec<usize>,
    universe: usize,
}

impl TestSet {
    pub fn new(
        mut indices: Vec<usize>,
        universe: usize,
        expected_size: usize,
    ) -> Result<Self, OkdError> {
        indices.sort_unstable();
        if indices.len() != expected_size {
            return Err(OkdError::BadTestSet {
                reason: format!("size {} != m = {expected_size}", indices.len()),
            });
        }
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(OkdError::BadTestSet {
                reason: "duplicate indices".into(),
            });
        }
        if indices.last().is_some_and(|&i| i >= universe) {
            return Err(OkdError::BadTestSet {
                reason: format!("index out of range 0..{universe}"),
            });
        }
        Ok(Self { indices, universe })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Alice's output: the sender half of an oblivious key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OkSenderKey {
    pub bits: BitString,
}

/// Bob's output: his noisy copy plus the basis-match record. `bits` agrees
/// with the sender key exactly where `basis_mismatch` is 0 (noiseless runs).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OkReceiverKey {
    pub bits: BitString,
    pub basis_mismatch: BitString,
}

impl OkReceiverKey {
    pub fn n(&self) -> usize {
        self.bits.len()
    }
}

macro_rules! require_phase {
    ($self:ident, $want:pat, $name:expr) => {
        if !matches!($self.phase, $want) {
            return Err(OkdError::Phase {
                expected: $name,
                found: $self.phase.name(),
            });
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AlicePhase {
    Sent,
    Committed,
    Tested,
    Done,
    Aborted,
}

impl AlicePhase {
    fn name(self) -> &'static str {
        match self {
            AlicePhase::Sent => "Sent",
            AlicePhase::Committed => "Committed",
            AlicePhase::Tested => "Tested",
            AlicePhase::Done => "Done",
            AlicePhase::Aborted => "Aborted",
        }
    }
}

/// Alice's state machine for the key-distribution phase.
pub struct AliceOkd {
    params: SessionParams,
    phase: AlicePhase,
    values: BitString,
    bases: BitString,
    commitments: Vec<Commitment>,
    test: Option<TestSet>,
    /// Error rate observed on matched tested positions (set at finish).
    pub observed_error_rate: Option<f64>,
    /// Number of tested positions with matching bases (set at finish).
    pub matched_test_count: Option<usize>,
}

impl AliceOkd {
    /// Sample `s, a` and emit the prepared batch (oversampled under loss).
    pub fn start(params: SessionParams, rng: &mut impl RngCore) -> (AliceOkd, Vec<PreparedQubit>) {
        let raw = params.raw_batch_size();
        let values = BitString::random(raw, rng);
        let bases = BitString::random(raw, rng);
        let qubits = (0..raw)
            .map(|i| channel::prepare(values.get(i), Basis::from_bit(bases.get(i))))
            .collect();
        (
            AliceOkd {
                params,
                phase: AlicePhase::Sent,
                values,
                bases,
                commitments: Vec::new(),
                test: None,
                observed_error_rate: None,
                matched_test_count: None,
            },
            qubits,
        )
    }

    /// Accept Bob's sift report and commitments; restrict own strings to the
    /// surviving indices.
    pub fn receive_commitments(
        &mut self,
        surviving: &[usize],
        commitments: Vec<Commitment>,
    ) -> Result<(), OkdError> {
        require_phase!(self, AlicePhase::Sent, "Sent");
        let total = self.params.total();
        if surviving.len() != total {
            return Err(OkdError::InsufficientSurvivors {
                survivors: surviving.len(),
                required: total,
            });
        }
        if commitments.len() != total {
            return Err(OkdError::LengthMismatch {
                expected: total,
                got: commitments.len(),
            });
        }
        if surviving.windows(2).any(|w| w[0] >= w[1])
            || surviving.last().is_some_and(|&i| i >= self.values.len())
        {
            return Err(OkdError::BadTestSet {
                reason: "sift list must be strictly ascending and in range".into(),
            });
        }
        let lossless = self.values.len() == total;
        if !lossless {
            self.values = self.values.select(surviving);
            self.bases = self.bases.select(surviving);
        }
        self.commitments = commitments;
        self.phase = AlicePhase::Committed;
        Ok(())
    }

    /// Choose the uniform test subset of size `m` (protocol step 4).
    pub fn choose_test(&mut self, rng: &mut impl RngCore) -> Result<TestSet, OkdError> {
        require_phase!(self, AlicePhase::Committed, "Committed");
        let total = self.params.total();
        let picked = rand::seq::index::sample(rng, total, self.params.m()).into_vec();
        let test = TestSet::new(picked, total, self.params.m())?;
        self.test = Some(test.clone());
        self.phase = AlicePhase::Tested;
        Ok(test)
    }

    /// Verify Bob's openings, run the correlation test, and finish.
    ///
    /// Let `M` be the tested indices where the bases matched. The test
    /// passes when the fraction of `M` with disagreeing outcomes is at most
    /// the threshold (vacuously when `M` is empty). On success returns the
    /// sender key `k = s` restricted off the test set and the basis reveal
    /// `a*` for the same positions.
    pub fn verify_and_finish(
        &mut self,
        openings: &[Opening],
        hash: &dyn CommitHash,
    ) -> Result<(OkSenderKey, BitString), OkdError> {
        require_phase!(self, AlicePhase::Tested, "Tested");
        let test = self.test.clone().expect("test set present in Tested phase");
        if openings.len() != test.indices().len() {
            return Err(OkdError::LengthMismatch {
                expected: test.indices().len(),
                got: openings.len(),
            });
        }

        let pairs: Vec<(&Commitment, &Opening)> = test
            .indices()
            .iter()
            .zip(openings)
            .map(|(&j, o)| (&self.commitments[j], o))
            .collect();
        let revealed = match commitment::verify_batch(&pairs, self.params.com(), hash) {
            Ok(msgs) => msgs,
            Err(_) => {
                self.phase = AlicePhase::Aborted;
                return Err(OkdError::Abort(AbortReason::CommitmentInvalid));
            }
        };

        let mut matched = 0usize;
        let mut errors = 0usize;
        for (&j, msg) in test.indices().iter().zip(&revealed) {
            let claimed_value = msg.get(0);
            let claimed_basis = msg.get(1);
            if claimed_basis == self.bases.get(j) {
                matched += 1;
                if claimed_value != self.values.get(j) {
                    errors += 1;
                }
            }
        }
        let error_rate = errors as f64 / matched.max(1) as f64;
        self.observed_error_rate = Some(error_rate);
        self.matched_test_count = Some(matched);
        if error_rate > self.params.error_threshold() {
            self.phase = AlicePhase::Aborted;
            return Err(OkdError::Abort(AbortReason::CorrelationTestFailed));
        }

        let key = OkSenderKey {
            bits: self.values.select_complement(test.indices()),
        };
        let bases_reveal = self.bases.select_complement(test.indices());
        self.phase = AlicePhase::Done;
        Ok((key, bases_reveal))
    }

    pub fn phase_name(&self) -> &'static str {
        self.phase.name()
    }

    pub fn is_done(&self) -> bool {
        self.phase == AlicePhase::Done
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BobPhase {
    Init,
    Committed,
    Tested,
    Done,
}

impl BobPhase {
    fn name(self) -> &'static str {
        match self {
            BobPhase::Init => "Init",
            BobPhase::Committed => "Committed",
            BobPhase::Tested => "Tested",
            BobPhase::Done => "Done",
        }
    }
}

/// What Bob reports about the channel: which raw indices survived.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiftReport {
    pub raw_count: usize,
    pub surviving: Vec<usize>,
}

/// Bob's state machine for the key-distribution phase.
pub struct BobOkd {
    params: SessionParams,
    phase: BobPhase,
    outcomes: BitString,
    bases: BitString,
    openings: Vec<Opening>,
    test: Option<TestSet>,
}

impl BobOkd {
    pub fn new(params: SessionParams) -> Self {
        Self {
            params,
            phase: BobPhase::Init,
            outcomes: BitString::zeros(0),
            bases: BitString::zeros(0),
            openings: Vec::new(),
            test: None,
        }
    }

    /// Measure the raw batch in random bases, sift out losses, and commit to
    /// each surviving (outcome, basis) pair in index order.
    ///
    /// The returned commitments and the sift report both cover exactly the
    /// first `n + m` surviving indices; fewer survivors is an error the
    /// caller surfaces as an abort (the state stays in `Init` so a fresh
    /// batch can be retried).
    pub fn measure_and_commit(
        &mut self,
        qubits: &[PreparedQubit],
        hash: &dyn CommitHash,
        rng: &mut impl RngCore,
    ) -> Result<(SiftReport, Vec<Commitment>), OkdError> {
        require_phase!(self, BobPhase::Init, "Init");
        let params = self.params;
        let raw = qubits.len();
        let total = params.total();

        let (outcomes, bases, surviving) = if params.channel().is_noiseless() && raw == total {
            // bulk sampling: matched bases return the encoded value, the
            // conjugate basis returns an independent coin
            let bases = BitString::random(raw, rng);
            let coins = BitString::random(raw, rng);
            let mut outcomes = BitString::zeros(raw);
            for (i, q) in qubits.iter().enumerate() {
                let bit = if Basis::from_bit(bases.get(i)) == q.basis {
                    q.value
                } else {
                    coins.get(i)
                };
                if bit {
                    outcomes.set(i, true);
                }
            }
            (outcomes, bases, (0..raw).collect::<Vec<_>>())
        } else {
            let pick_bases: Vec<Basis> = (0..raw).map(|_| Basis::random(rng)).collect();
            let results = channel::transmit_batch(qubits, &pick_bases, params.channel(), rng)
                .map_err(|_| OkdError::LengthMismatch {
                    expected: raw,
                    got: qubits.len(),
                })?;

            let mut surviving = Vec::with_capacity(total);
            let mut outcome_bits = Vec::with_capacity(total);
            let mut basis_bits = Vec::with_capacity(total);
            for (i, outcome) in results.iter().enumerate() {
                if surviving.len() == total {
                    break;
                }
                if let MeasureOutcome::Bit(b) = outcome {
                    surviving.push(i);
                    outcome_bits.push(*b);
                    basis_bits.push(pick_bases[i].bit());
                }
            }
            if surviving.len() < total {
                return Err(OkdError::InsufficientSurvivors {
                    survivors: surviving.len(),
                    required: total,
                });
            }
            (
                BitString::from_bits(&outcome_bits),
                BitString::from_bits(&basis_bits),
                surviving,
            )
        };
        let messages: Vec<BitString> = (0..total)
            .map(|i| BitString::from_bits(&[outcomes.get(i), bases.get(i)]))
            .collect();
        let committed = commitment::commit_batch(&messages, params.com(), hash, rng)?;
        let (commitments, openings): (Vec<_>, Vec<_>) = committed.into_iter().unzip();

        self.outcomes = outcomes;
        self.bases = bases;
        self.openings = openings;
        self.phase = BobPhase::Committed;
        Ok((
            SiftReport {
                raw_count: raw,
                surviving,
            },
            commitments,
        ))
    }

    /// Open the commitments named by the test set, ascending (step 5).
    pub fn open_test(&mut self, test: &TestSet) -> Result<Vec<Opening>, OkdError> {
        require_phase!(self, BobPhase::Committed, "Committed");
        if test.universe() != self.params.total() || test.indices().len() != self.params.m() {
            return Err(OkdError::BadTestSet {
                reason: format!(
                    "expected {} indices over 0..{}",
                    self.params.m(),
                    self.params.total()
                ),
            });
        }
        let openings = test
            .indices()
            .iter()
            .map(|&j| self.openings[j].clone())
            .collect();
        self.test = Some(test.clone());
        self.phase = BobPhase::Tested;
        Ok(openings)
    }

    /// Consume Alice's basis reveal and derive `(k_tilde, x)` (step 7).
    pub fn finish(&mut self, bases_reveal: &BitString) -> Result<OkReceiverKey, OkdError> {
        require_phase!(self, BobPhase::Tested, "Tested");
        let test = self.test.clone().expect("test set present in Tested phase");
        let n = self.params.n();
        if bases_reveal.len() != n {
            return Err(OkdError::LengthMismatch {
                expected: n,
                got: bases_reveal.len(),
            });
        }
        let own_bases = self.bases.select_complement(test.indices());
        let key = OkReceiverKey {
            bits: self.outcomes.select_complement(test.indices()),
            basis_mismatch: bases_reveal.xor(&own_bases),
        };
        self.phase = BobPhase::Done;
        Ok(key)
    }

    pub fn phase_name(&self) -> &'static str {
        self.phase.name()
    }

}

/// Run the whole phase in memory with honest parties (no transport).
///
/// Retries with a fresh batch if losses leave fewer than `n + m` survivors,
/// which mirrors what the session runner does over a real channel.
pub fn run_okd(
    params: SessionParams,
    hash: &dyn CommitHash,
    alice_rng: &mut impl RngCore,
    bob_rng: &mut impl RngCore,
) -> Result<(OkSenderKey, OkReceiverKey), OkdError> {
    const ATTEMPTS: usize = 4;
    let mut last = None;
    for _ in 0..ATTEMPTS {
        let (mut alice, qubits) = AliceOkd::start(params, alice_rng);
        let mut bob = BobOkd::new(params);
        let (sift, commitments) = match bob.measure_and_commit(&qubits, hash, bob_rng) {
            Ok(v) => v,
            Err(e @ OkdError::InsufficientSurvivors { .. }) => {
                last = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        alice.receive_commitments(&sift.surviving, commitments)?;
        let test = alice.choose_test(alice_rng)?;
        let openings = bob.open_test(&test)?;
        let (sender_key, bases_reveal) = alice.verify_and_finish(&openings, hash)?;
        let receiver_key = bob.finish(&bases_reveal)?;
        return Ok((sender_key, receiver_key));
    }
    Err(last.expect("loop ran at least once"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::commitment::default_hash;
    use crate::rng;

    fn small_params(n: usize, m: usize, channel: ChannelParams) -> SessionParams {
        SessionParams::new(n, m, ComParams::new(2, 16).unwrap(), 0.0, channel).unwrap()
    }

    #[test]
    fn start_emits_n_plus_m_qubits() {
        let p = small_params(2, 1, ChannelParams::NOISELESS);
        let (_, qubits) = AliceOkd::start(p, &mut rng::seeded(1));
        assert_eq!(qubits.len(), 3);

        let p = small_params(4096, 1024, ChannelParams::NOISELESS);
        let (_, qubits) = AliceOkd::start(p, &mut rng::seeded(1));
        assert_eq!(qubits.len(), 5120);
    }

    #[test]
    fn start_is_seed_deterministic() {
        let p = small_params(32, 8, ChannelParams::NOISELESS);
        let (a1, q1) = AliceOkd::start(p, &mut rng::seeded(42));
        let (a2, q2) = AliceOkd::start(p, &mut rng::seeded(42));
        assert_eq!(q1, q2);
        assert_eq!(a1.values, a2.values);
        assert_eq!(a1.bases, a2.bases);
    }

    #[test]
    fn commitment_count_and_roundtrip() {
        let p = small_params(8, 4, ChannelParams::NOISELESS);
        let hash = default_hash();
        let (_, qubits) = AliceOkd::start(p, &mut rng::seeded(2));
        let mut bob = BobOkd::new(p);
        let (sift, commitments) = bob
            .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(3))
            .unwrap();
        assert_eq!(commitments.len(), 12);
        assert_eq!(sift.surviving, (0..12).collect::<Vec<_>>());
        for (i, c) in commitments.iter().enumerate() {
            let msg = commitment::open_verify(c, &bob.openings[i], p.com(), hash.as_ref()).unwrap();
            assert_eq!(msg.get(0), bob.outcomes.get(i));
            assert_eq!(msg.get(1), bob.bases.get(i));
        }
    }

    #[test]
    fn noiseless_honest_run_produces_oblivious_key() {
        let p = small_params(64, 16, ChannelParams::NOISELESS);
        let hash = default_hash();
        let (sk, rk) = run_okd(p, hash.as_ref(), &mut rng::seeded(4), &mut rng::seeded(5)).unwrap();
        assert_eq!(sk.bits.len(), 64);
        assert_eq!(rk.bits.len(), 64);
        assert_eq!(rk.basis_mismatch.len(), 64);
        for i in 0..64 {
            if !rk.basis_mismatch.get(i) {
                assert_eq!(sk.bits.get(i), rk.bits.get(i), "mismatch at matched index {i}");
            }
        }
    }

    #[test]
    fn mismatched_positions_agree_at_chance_level() {
        let p = small_params(256, 32, ChannelParams::NOISELESS);
        let hash = default_hash();
        let mut agree = 0u64;
        let mut total = 0u64;
        for t in 0..50 {
            let (sk, rk) = run_okd(
                p,
                hash.as_ref(),
                &mut rng::derive(900, "alice", t),
                &mut rng::derive(900, "bob", t),
            )
            .unwrap();
            for i in 0..256 {
                if rk.basis_mismatch.get(i) {
                    total += 1;
                    if sk.bits.get(i) == rk.bits.get(i) {
                        agree += 1;
                    }
                }
            }
        }
        assert!(total >= 5_000, "want thousands of mismatched bits, got {total}");
        let rate = agree as f64 / total as f64;
        let tol = 4.0 * (0.25 / total as f64).sqrt();
        assert!((rate - 0.5).abs() <= tol, "agreement {rate} over {total}");
    }

    #[test]
    fn test_set_membership_frequencies_are_uniform() {
        // n+m = 6, m = 2: each index lands in T with probability 1/3.
        let p = small_params(4, 2, ChannelParams::NOISELESS);
        let hash = default_hash();
        let draws = 10_000u32;
        let mut counts = [0u32; 6];
        let (_, qubits) = AliceOkd::start(p, &mut rng::seeded(6));
        let (sift, commitments) = BobOkd::new(p)
            .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(7))
            .unwrap();
        let mut r = rng::seeded(8);
        for _ in 0..draws {
            let mut alice = {
                let (mut a, _) = AliceOkd::start(p, &mut rng::seeded(6));
                a.receive_commitments(&sift.surviving, commitments.clone()).unwrap();
                a
            };
            let t = alice.choose_test(&mut r).unwrap();
            for &j in t.indices() {
                counts[j] += 1;
            }
        }
        let expect = 1.0 / 3.0;
        let tol = 4.0 * (expect * (1.0 - expect) / f64::from(draws)).sqrt();
        for (j, c) in counts.iter().enumerate() {
            let freq = f64::from(*c) / f64::from(draws);
            assert!((freq - expect).abs() <= tol, "index {j} frequency {freq}");
        }
    }

    #[test]
    fn choose_test_is_seed_deterministic() {
        let p = small_params(16, 4, ChannelParams::NOISELESS);
        let hash = default_hash();
        let run = |seed| {
            let (mut alice, qubits) = AliceOkd::start(p, &mut rng::seeded(10));
            let (sift, commitments) = BobOkd::new(p)
                .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(11))
                .unwrap();
            alice.receive_commitments(&sift.surviving, commitments).unwrap();
            alice.choose_test(&mut rng::seeded(seed)).unwrap()
        };
        assert_eq!(run(20), run(20));
        assert_ne!(run(20), run(21));
    }

    #[test]
    fn phase_discipline_rejects_out_of_order_calls() {
        let p = small_params(8, 2, ChannelParams::NOISELESS);
        let hash = default_hash();
        let (mut alice, qubits) = AliceOkd::start(p, &mut rng::seeded(12));

        // choose_test before commitments: phase error, no mutation
        let err = alice.choose_test(&mut rng::seeded(0)).unwrap_err();
        assert!(matches!(err, OkdError::Phase { expected: "Committed", .. }));
        assert_eq!(alice.phase_name(), "Sent");

        let mut bob = BobOkd::new(p);
        let (sift, commitments) = bob
            .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(13))
            .unwrap();

        // finish before the test phase
        let err = bob.finish(&BitString::zeros(8)).unwrap_err();
        assert!(matches!(err, OkdError::Phase { expected: "Tested", .. }));
        assert_eq!(bob.phase_name(), "Committed");

        alice.receive_commitments(&sift.surviving, commitments).unwrap();
        let t = alice.choose_test(&mut rng::seeded(14)).unwrap();

        // opening twice is a phase error
        bob.open_test(&t).unwrap();
        let err = bob.open_test(&t).unwrap_err();
        assert!(matches!(err, OkdError::Phase { .. }));

        // an Init-phase Bob rejects open_test
        let mut fresh = BobOkd::new(p);
        let err = fresh.open_test(&t).unwrap_err();
        assert!(matches!(
            err,
            OkdError::Phase { expected: "Committed", found: "Init" }
        ));
        // and measuring twice is a phase error
        let err = bob
            .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(18))
            .unwrap_err();
        assert!(matches!(err, OkdError::Phase { expected: "Init", .. }));
    }

    #[test]
    fn verify_rejects_corrupted_opening() {
        let p = small_params(8, 2, ChannelParams::NOISELESS);
        let hash = default_hash();
        let (mut alice, qubits) = AliceOkd::start(p, &mut rng::seeded(15));
        let mut bob = BobOkd::new(p);
        let (sift, commitments) = bob
            .measure_and_commit(&qubits, hash.as_ref(), &mut rng::seeded(16))
            .unwrap();
        alice.receive_commitments(&sift.surviving, commitments).unwrap();
        let t = alice.choose_test(&mut rng::seeded(17)).unwrap();
        let mut openings = bob.open_test(&t).unwrap();
        openings[0].witness.flip(3);
        let err = alice.verify_and_finish(&openings, hash.as_ref()).unwrap_err();
        assert_eq!(err, OkdError::Abort(AbortReason::CommitmentInvalid));
        assert_eq!(alice.phase_name(), "Aborted");
    }

    #[test]
    fn noisy_sessions_pass_under_threshold() {
        // flip 0.05, threshold 0.11: essentially always passes.
        let channel = ChannelParams::new(0.05, 0.0).unwrap();
        let p =
            SessionParams::new(4096, 1024, ComParams::new(2, 16).unwrap(), 0.11, channel).unwrap();
        let hash = default_hash();
        let mut passes = 0;
        let trials = 20;
        for t in 0..trials {
            if run_okd(
                p,
                hash.as_ref(),
                &mut rng::derive(44, "alice", t),
                &mut rng::derive(44, "bob", t),
            )
            .is_ok()
            {
                passes += 1;
            }
        }
        assert_eq!(passes, trials);
    }

    #[test]
    fn lossy_channel_sifts_and_completes() {
        let channel = ChannelParams::new(0.0, 0.2).unwrap();
        let p = SessionParams::new(64, 16, ComParams::new(2, 16).unwrap(), 0.0, channel).unwrap();
        assert!(p.raw_batch_size() > 80);
        let hash = default_hash();
        let (sk, rk) =
            run_okd(p, hash.as_ref(), &mut rng::seeded(50), &mut rng::seeded(51)).unwrap();
        for i in 0..64 {
            if !rk.basis_mismatch.get(i) {
                assert_eq!(sk.bits.get(i), rk.bits.get(i));
            }
        }
    }

    #[test]
    fn xor_example_for_basis_mismatch() {
        // a* = 1011 against own bases 1001 gives x = 0010.
        let a_star = BitString::from_bit_str("1011").unwrap();
        let own = BitString::from_bit_str("1001").unwrap();
        assert_eq!(a_star.xor(&own).to_string(), "0010");
    }

    #[test]
    fn params_validation() {
        let com = ComParams::new(2, 16).unwrap();
        assert!(SessionParams::new(4, 4, com, 0.0, ChannelParams::NOISELESS).is_err());
        assert!(SessionParams::new(4, 0, com, 0.0, ChannelParams::NOISELESS).is_err());
        assert!(SessionParams::new(4, 2, com, 0.5, ChannelParams::NOISELESS).is_err());
        assert!(SessionParams::new(4, 2, com, 0.11, ChannelParams::NOISELESS).is_ok());
    }
}
