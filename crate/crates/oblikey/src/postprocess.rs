//! Information reconciliation and privacy amplification over the matched
//! positions of an oblivious key.
//!
//! Reconciliation is a cascade-style interactive protocol. Both inputs must
//! already be restricted to the matched positions (`x_i = 0`); mismatched
//! positions are uniformly random by construction and carry no correctable
//! signal. Rounds proceed as follows: the reference side (the key sender)
//! discloses the parity of every block of the round's seeded permutation;
//! the receiving side locates one flipped bit per odd block by binary search
//! (one disclosed parity per probe) and flips it. Fixing a bit re-checks
//! every earlier round's block that contains it, which is what lets later
//! rounds clear even-weight error patterns. A round ends with a checksum
//! comparison; on a match the protocol stops, so identical inputs cost
//! exactly one round of top-level block parities.
//!
//! `leaked_bits` counts every parity value that crossed the wire — block
//! parities plus probe replies — and is what the privacy-amplification
//! planner subtracts. Checksums and probe *requests* disclose block
//! positions, not key parities, and are not counted.
//!
//! Amplification is a Toeplitz-matrix extractor over GF(2): deterministic in
//! (seed, input), linear, and cheap enough at desk scale to evaluate row by
//! row.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bits::BitString;

#[derive(Debug, Error, PartialEq)]
pub enum PostprocError {
    #[error("views have different lengths: {sender} vs {receiver}")]
    ViewMismatch { sender: usize, receiver: usize },
    #[error("residual errors remain after {0} rounds")]
    MaxRoundsExceeded(usize),
    #[error("expected a {expected}-bit input, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("cannot extract {wanted} bits from {in_len} with {leaked} leaked and margin {margin}")]
    InsufficientEntropy {
        in_len: usize,
        leaked: usize,
        margin: usize,
        wanted: usize,
    },
    #[error("reconciliation transport failed: {0}")]
    Link(String),
}

/// Cascade configuration agreed by both parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CascadeConfig {
    /// Block size of the first round; doubles every later round.
    pub initial_block: usize,
    /// Maximum number of rounds before giving up.
    pub max_rounds: usize,
    /// Seed of the per-round block permutations (shared; round 0 is identity).
    pub shuffle_seed: u64,
}

impl CascadeConfig {
    pub fn new(initial_block: usize, max_rounds: usize, shuffle_seed: u64) -> Self {
        Self {
            initial_block: initial_block.max(2),
            max_rounds: max_rounds.max(1),
            shuffle_seed,
        }
    }

    /// Pick the initial block size from an estimated bit error rate
    /// (roughly 0.73 / rate, rounded to a power of two).
    pub fn for_error_rate(rate: f64, max_rounds: usize, shuffle_seed: u64) -> Self {
        let rate = rate.clamp(0.005, 0.25);
        let raw = 0.73 / rate;
        let block = raw.log2().round().exp2() as usize;
        Self::new(block.clamp(4, 1 << 14), max_rounds, shuffle_seed)
    }
}

/// Outcome accounting for one reconciliation run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconciliationReport {
    /// Positions (within the matched substring) whose bits were corrected.
    pub corrected_positions: Vec<usize>,
    /// Exact number of parity values disclosed on the wire.
    pub leaked_bits: usize,
    /// Rounds executed.
    pub rounds: usize,
}

/// The reference side of reconciliation: answers parity queries about the
/// sender's matched substring and counts every parity it discloses.
pub struct ReconcileSender {
    bits: BitString,
    cfg: CascadeConfig,
    leaked: usize,
}

impl ReconcileSender {
    pub fn new(bits: BitString, cfg: CascadeConfig) -> Self {
        Self {
            bits,
            cfg,
            leaked: 0,
        }
    }

    /// Parities of every block of `round`, in block order.
    pub fn round_parities(&mut self, round: usize) -> BitString {
        let layout = RoundLayout::new(self.bits.len(), &self.cfg, round);
        let parities: Vec<bool> = (0..layout.num_blocks())
            .map(|b| layout.block_parity(&self.bits, b))
            .collect();
        self.leaked += parities.len();
        BitString::from_bits(&parities)
    }

    /// Parity of the permuted interval `[lo, hi)` of `round`.
    pub fn probe(&mut self, round: usize, lo: usize, hi: usize) -> bool {
        let layout = RoundLayout::new(self.bits.len(), &self.cfg, round);
        self.leaked += 1;
        layout.interval_parity(&self.bits, lo, hi)
    }

    /// Compare the receiver's checksum against the reference string.
    pub fn confirm(&mut self, checksum: u64) -> bool {
        string_checksum(&self.bits) == checksum
    }

    /// Parity values disclosed so far.
    pub fn leaked(&self) -> usize {
        self.leaked
    }
}

/// Where the receiver gets its parity answers from: directly from a
/// [`ReconcileSender`] in-process, or from a wire proxy in a live session.
pub trait ParityOracle {
    fn round_parities(&mut self, round: usize) -> Result<BitString, PostprocError>;
    fn probe(&mut self, round: usize, lo: usize, hi: usize) -> Result<bool, PostprocError>;
    fn confirm(&mut self, checksum: u64) -> Result<bool, PostprocError>;
}

impl ParityOracle for ReconcileSender {
    fn round_parities(&mut self, round: usize) -> Result<BitString, PostprocError> {
        Ok(ReconcileSender::round_parities(self, round))
    }

    fn probe(&mut self, round: usize, lo: usize, hi: usize) -> Result<bool, PostprocError> {
        Ok(ReconcileSender::probe(self, round, lo, hi))
    }

    fn confirm(&mut self, checksum: u64) -> Result<bool, PostprocError> {
        Ok(ReconcileSender::confirm(self, checksum))
    }
}

/// Block layout of one cascade round: a seeded permutation of positions cut
/// into equal blocks (the last may be short). Round 0 is the identity.
struct RoundLayout {
    perm: Vec<u32>,
    block: usize,
}

impl RoundLayout {
    fn new(len: usize, cfg: &CascadeConfig, round: usize) -> Self {
        // capping at half the length keeps at least two blocks per round, so
        // an even number of surviving errors can still land in different
        // blocks and become visible
        let shifted = cfg.initial_block.checked_shl(round as u32).unwrap_or(usize::MAX);
        let block = shifted.min((len / 2).max(2));
        let mut perm: Vec<u32> = (0..len as u32).collect();
        if round > 0 {
            let mut rng = ChaCha20Rng::seed_from_u64(
                cfg.shuffle_seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            );
            // Fisher-Yates
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
        }
        Self { perm, block }
    }

    fn num_blocks(&self) -> usize {
        self.perm.len().div_ceil(self.block)
    }

    fn block_range(&self, b: usize) -> (usize, usize) {
        let lo = b * self.block;
        (lo, (lo + self.block).min(self.perm.len()))
    }

    fn block_of_position(&self, permuted_pos: usize) -> usize {
        permuted_pos / self.block
    }

    fn interval_parity(&self, bits: &BitString, lo: usize, hi: usize) -> bool {
        (lo..hi).fold(false, |acc, p| acc ^ bits.get(self.perm[p] as usize))
    }

    fn block_parity(&self, bits: &BitString, b: usize) -> bool {
        let (lo, hi) = self.block_range(b);
        self.interval_parity(bits, lo, hi)
    }

    fn position_of_index(&self, index: usize) -> usize {
        // built lazily only when correcting; linear scan is fine at desk scale
        self.perm.iter().position(|&i| i as usize == index).unwrap()
    }
}

/// Receiver side of cascade: drives the whole protocol against an oracle.
pub struct ReconcileReceiver {
    bits: BitString,
    cfg: CascadeConfig,
    corrected: Vec<usize>,
    /// Parity values received (block parities + probe replies).
    received_parities: usize,
}

impl ReconcileReceiver {
    pub fn new(bits: BitString, cfg: CascadeConfig) -> Self {
        Self {
            bits,
            cfg,
            corrected: Vec::new(),
            received_parities: 0,
        }
    }

    /// Run reconciliation to completion. On success the internal string
    /// equals the sender's (checksum-verified) and the report carries the
    /// exact leakage count.
    pub fn run(
        mut self,
        oracle: &mut dyn ParityOracle,
    ) -> Result<(BitString, ReconciliationReport), PostprocError> {
        let len = self.bits.len();
        if len == 0 {
            return Ok((
                self.bits,
                ReconciliationReport {
                    corrected_positions: vec![],
                    leaked_bits: 0,
                    rounds: 0,
                },
            ));
        }

        let mut layouts: Vec<RoundLayout> = Vec::new();
        let mut reference: Vec<BitString> = Vec::new(); // sender parities per round

        for round in 0..self.cfg.max_rounds {
            layouts.push(RoundLayout::new(len, &self.cfg, round));
            let parities = oracle.round_parities(round)?;
            self.received_parities += parities.len();
            reference.push(parities);

            // queue of (round, block) pairs with odd parity difference
            let mut queue: Vec<(usize, usize)> = Vec::new();
            for b in 0..layouts[round].num_blocks() {
                if layouts[round].block_parity(&self.bits, b) != reference[round].get(b) {
                    queue.push((round, b));
                }
            }

            while let Some((r, b)) = queue.pop() {
                // parity may already agree if a cascade fix landed here
                if layouts[r].block_parity(&self.bits, b) == reference[r].get(b) {
                    continue;
                }
                let index = self.bisect(oracle, &layouts[r], r, b)?;
                self.bits.flip(index);
                self.corrected.push(index);
                // cascade: earlier (and later) rounds covering this bit may
                // now disagree with their disclosed parities
                for (r2, layout) in layouts.iter().enumerate() {
                    if r2 == r {
                        continue;
                    }
                    let b2 = layout.block_of_position(layout.position_of_index(index));
                    if layout.block_parity(&self.bits, b2) != reference[r2].get(b2) {
                        queue.push((r2, b2));
                    }
                }
            }

            if oracle.confirm(string_checksum(&self.bits))? {
                self.corrected.sort_unstable();
                self.corrected.dedup();
                return Ok((
                    self.bits,
                    ReconciliationReport {
                        corrected_positions: self.corrected,
                        leaked_bits: self.received_parities,
                        rounds: round + 1,
                    },
                ));
            }
        }
        Err(PostprocError::MaxRoundsExceeded(self.cfg.max_rounds))
    }

    /// Binary-search one flipped bit inside an odd block; returns the
    /// original (unpermuted) index.
    fn bisect(
        &mut self,
        oracle: &mut dyn ParityOracle,
        layout: &RoundLayout,
        round: usize,
        block: usize,
    ) -> Result<usize, PostprocError> {
        let (mut lo, mut hi) = layout.block_range(block);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let sender_left = oracle.probe(round, lo, mid)?;
            self.received_parities += 1;
            let mine_left = layout.interval_parity(&self.bits, lo, mid);
            if sender_left != mine_left {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(layout.perm[lo] as usize)
    }
}

/// Reconcile the receiver's view against the sender's, in process.
///
/// Both views must be the matched substrings (equal lengths). Returns the
/// corrected receiver string and the leakage report; the sender view is
/// never modified.
pub fn reconcile(
    sender_view: &BitString,
    receiver_view: &BitString,
    cfg: CascadeConfig,
) -> Result<(BitString, ReconciliationReport), PostprocError> {
    if sender_view.len() != receiver_view.len() {
        return Err(PostprocError::ViewMismatch {
            sender: sender_view.len(),
            receiver: receiver_view.len(),
        });
    }
    let mut sender = ReconcileSender::new(sender_view.clone(), cfg);
    let receiver = ReconcileReceiver::new(receiver_view.clone(), cfg);
    let (corrected, mut report) = receiver.run(&mut sender)?;
    debug_assert_eq!(report.leaked_bits, sender.leaked());
    report.leaked_bits = sender.leaked();
    Ok((corrected, report))
}

/// 64-bit checksum used to gate cascade rounds (not counted as leakage).
pub fn string_checksum(bits: &BitString) -> u64 {
    let mut h = Sha256::new();
    h.update((bits.len() as u64).to_be_bytes());
    h.update(bits.as_bytes());
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().unwrap())
}

/// A Toeplitz-matrix randomness extractor over GF(2).
///
/// The matrix has constant diagonals: entry `(i, j)` is
/// `seed[i - j + in_len - 1]`, so a seed of `in_len + out_len - 1` bits
/// defines the whole `out_len x in_len` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzExtractor {
    seed: BitString,
    in_len: usize,
    out_len: usize,
}

impl ToeplitzExtractor {
    pub fn new(seed: BitString, in_len: usize, out_len: usize) -> Result<Self, PostprocError> {
        if out_len > in_len {
            return Err(PostprocError::InsufficientEntropy {
                in_len,
                leaked: 0,
                margin: 0,
                wanted: out_len,
            });
        }
        let want = in_len + out_len - 1;
        if seed.len() != want {
            return Err(PostprocError::BadLength {
                expected: want,
                got: seed.len(),
            });
        }
        Ok(Self {
            seed,
            in_len,
            out_len,
        })
    }

    /// Fresh random seed for the given shape.
    pub fn random(in_len: usize, out_len: usize, rng: &mut impl RngCore) -> Result<Self, PostprocError> {
        let seed = BitString::random(in_len + out_len - 1, rng);
        Self::new(seed, in_len, out_len)
    }

    /// Seed making the matrix the identity (requires `out_len == in_len`).
    pub fn identity(len: usize) -> Self {
        let mut seed = BitString::zeros(2 * len - 1);
        seed.set(len - 1, true);
        Self {
            seed,
            in_len: len,
            out_len: len,
        }
    }

    pub fn seed(&self) -> &BitString {
        &self.seed
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// Row `i` as a bit string: `seed[i + in_len - 1 - j]` for `j` in input order.
    #[cfg(test)]
    fn row(&self, i: usize) -> BitString {
        self.seed.slice(i, self.in_len).reversed()
    }
}

/// Apply the extractor: the Toeplitz matrix-vector product over GF(2).
pub fn amplify(key_bits: &BitString, extractor: &ToeplitzExtractor) -> Result<BitString, PostprocError> {
    if key_bits.len() != extractor.in_len() {
        return Err(PostprocError::BadLength {
            expected: extractor.in_len(),
            got: key_bits.len(),
        });
    }
    let reversed = key_bits.reversed();
    let out: Vec<bool> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            if extractor.out_len() >= 512 {
                (0..extractor.out_len())
                    .into_par_iter()
                    .map(|i| extractor.seed.slice(i, extractor.in_len()).dot(&reversed))
                    .collect()
            } else {
                (0..extractor.out_len())
                    .map(|i| extractor.seed.slice(i, extractor.in_len()).dot(&reversed))
                    .collect()
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..extractor.out_len())
                .map(|i| extractor.seed.slice(i, extractor.in_len()).dot(&reversed))
                .collect()
        }
    };
    Ok(BitString::from_bits(&out))
}

/// Sequential extractor application (reference path for benches).
pub fn amplify_seq(
    key_bits: &BitString,
    extractor: &ToeplitzExtractor,
) -> Result<BitString, PostprocError> {
    if key_bits.len() != extractor.in_len() {
        return Err(PostprocError::BadLength {
            expected: extractor.in_len(),
            got: key_bits.len(),
        });
    }
    let reversed = key_bits.reversed();
    let out: Vec<bool> = (0..extractor.out_len())
        .map(|i| extractor.seed.slice(i, extractor.in_len()).dot(&reversed))
        .collect();
    Ok(BitString::from_bits(&out))
}

/// Linear leakage accounting: how many bits may be extracted from `in_len`
/// partially-leaked bits at a given security margin.
pub fn plan_output_length(
    in_len: usize,
    leaked_bits: usize,
    security_margin: usize,
) -> Result<usize, PostprocError> {
    if in_len <= leaked_bits + security_margin {
        return Err(PostprocError::InsufficientEntropy {
            in_len,
            leaked: leaked_bits,
            margin: security_margin,
            wanted: 1,
        });
    }
    Ok(in_len - leaked_bits - security_margin)
}
