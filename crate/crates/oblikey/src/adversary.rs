//! Executable dishonest-party strategies and the experiment harness that
//! turns them into abort and advantage statistics.
//!
//! Strategies replace protocol-legal message content, never the wire shape:
//! a cheating receiver still sends well-formed commitments and openings, he
//! just picks their values dishonestly. Experiments run full sessions at the
//! engine level (no framing overhead), one derived RNG stream per trial, so
//! results are reproducible and trials parallelize freely.
//!
//! The catalog:
//!
//! * `HonestBob` — baseline; never aborts on a noiseless channel.
//! * `RandomCommitBob` — commits to uniform pairs without measuring. Each
//!   tested index passes with probability 3/4 (basis differs, or basis and
//!   outcome both agree), so the whole test passes with (3/4)^m.
//! * `FixedBasisBob` — measures everything in the computational basis and
//!   reports that truthfully. The correlation check only inspects indices
//!   where bases matched, where his outcomes are honest, so he is never
//!   caught; his knowledge of the key over the mismatched set stays at
//!   chance.
//! * `DelayedMeasureBob` — keeps the states unmeasured (simulated quantum
//!   memory), commits to garbage, measures only the tested indices after the
//!   test set is revealed, and then tries to open the affected commitments
//!   to the late outcomes by searching for second preimages of the digest.
//!   With a full-strength hash the search never succeeds and the session
//!   collapses to random-commit behavior.
//! * `GuessingAlice` — an honest sender who afterwards tries to read the
//!   choice bit off the transfer request; the ordered pair is distributed
//!   identically for both choices, so she stays at chance level.

use rand::{Rng, RngCore};

use crate::bits::BitString;
use crate::channel::{self, Basis};
use crate::commitment::{self, ComParams, CommitHash, Commitment, Opening};
use crate::okd::{AliceOkd, SessionParams};
use crate::ot;
use crate::rng;

/// Which party a strategy corrupts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Sender,
    Receiver,
}

/// A pluggable dishonest-party behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryStrategy {
    HonestBob,
    RandomCommitBob,
    FixedBasisBob,
    DelayedMeasureBob {
        /// Second-preimage candidates tried per commitment to equivocate.
        search_budget: u32,
    },
    GuessingAlice,
}

impl AdversaryStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            AdversaryStrategy::HonestBob => "honest-bob",
            AdversaryStrategy::RandomCommitBob => "random-commit-bob",
            AdversaryStrategy::FixedBasisBob => "fixed-basis-bob",
            AdversaryStrategy::DelayedMeasureBob { .. } => "delayed-measure-bob",
            AdversaryStrategy::GuessingAlice => "guessing-alice",
        }
    }

    pub fn party(&self) -> Party {
        match self {
            AdversaryStrategy::GuessingAlice => Party::Sender,
            _ => Party::Receiver,
        }
    }

    /// What `adversary_success_rate` measures for this strategy.
    pub fn success_metric(&self) -> &'static str {
        match self {
            AdversaryStrategy::HonestBob => "session completion",
            AdversaryStrategy::RandomCommitBob => "correlation test passed without measuring",
            AdversaryStrategy::FixedBasisBob => "per-bit knowledge of k over the mismatched set",
            AdversaryStrategy::DelayedMeasureBob { .. } => {
                "sessions with an accepted inconsistent opening"
            }
            AdversaryStrategy::GuessingAlice => "choice bit guessed from the transfer request",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "honest-bob" => AdversaryStrategy::HonestBob,
            "random-commit-bob" => AdversaryStrategy::RandomCommitBob,
            "fixed-basis-bob" => AdversaryStrategy::FixedBasisBob,
            "delayed-measure-bob" => AdversaryStrategy::DelayedMeasureBob { search_budget: 256 },
            "guessing-alice" => AdversaryStrategy::GuessingAlice,
            _ => return None,
        })
    }
}

/// All built-in strategies with default knobs.
pub fn strategy_catalog() -> Vec<AdversaryStrategy> {
    vec![
        AdversaryStrategy::HonestBob,
        AdversaryStrategy::RandomCommitBob,
        AdversaryStrategy::FixedBasisBob,
        AdversaryStrategy::DelayedMeasureBob { search_budget: 256 },
        AdversaryStrategy::GuessingAlice,
    ]
}

/// Aggregate statistics of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentStats {
    pub strategy: &'static str,
    pub trials: u64,
    pub aborts: u64,
    pub completions: u64,
    /// Numerator / denominator of the strategy's success metric.
    pub successes: u64,
    pub success_denominator: u64,
    pub adversary_success_rate: f64,
    /// 95% Wilson interval on the success rate.
    pub ci_low: f64,
    pub ci_high: f64,
}

struct TrialRecord {
    aborted: bool,
    success_num: u64,
    success_den: u64,
}

/// Run `trials` independent sessions under the strategy. Trial `i` uses RNG
/// streams derived from `(master_seed, i)`, so parallel and sequential
/// execution produce identical statistics.
pub fn run_experiment(
    strategy: AdversaryStrategy,
    params: SessionParams,
    hash: &dyn CommitHash,
    trials: u64,
    master_seed: u64,
) -> ExperimentStats {
    let records: Vec<TrialRecord> = {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            (0..trials)
                .into_par_iter()
                .map(|t| run_trial(strategy, params, hash, master_seed, t))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            (0..trials)
                .map(|t| run_trial(strategy, params, hash, master_seed, t))
                .collect()
        }
    };
    aggregate(strategy, records)
}

/// Sequential reference path of [`run_experiment`].
pub fn run_experiment_seq(
    strategy: AdversaryStrategy,
    params: SessionParams,
    hash: &dyn CommitHash,
    trials: u64,
    master_seed: u64,
) -> ExperimentStats {
    let records = (0..trials)
        .map(|t| run_trial(strategy, params, hash, master_seed, t))
        .collect();
    aggregate(strategy, records)
}

fn aggregate(strategy: AdversaryStrategy, records: Vec<TrialRecord>) -> ExperimentStats {
    let trials = records.len() as u64;
    let aborts = records.iter().filter(|r| r.aborted).count() as u64;
    let successes: u64 = records.iter().map(|r| r.success_num).sum();
    let denominator: u64 = records.iter().map(|r| r.success_den).sum();
    let rate = if denominator == 0 {
        0.0
    } else {
        successes as f64 / denominator as f64
    };
    let (ci_low, ci_high) = wilson_interval(successes, denominator);
    ExperimentStats {
        strategy: strategy.name(),
        trials,
        aborts,
        completions: trials - aborts,
        successes,
        success_denominator: denominator,
        adversary_success_rate: rate,
        ci_low,
        ci_high,
    }
}

/// 95% Wilson score interval for a binomial proportion.
fn wilson_interval(successes: u64, total: u64) -> (f64, f64) {
    if total == 0 {
        return (0.0, 1.0);
    }
    let n = total as f64;
    let p = successes as f64 / n;
    let z = 1.959_963_985;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

fn run_trial(
    strategy: AdversaryStrategy,
    params: SessionParams,
    hash: &dyn CommitHash,
    master_seed: u64,
    trial: u64,
) -> TrialRecord {
    let mut alice_rng = rng::derive(master_seed, "adv-alice", trial);
    let mut bob_rng = rng::derive(master_seed, "adv-bob", trial);
    match strategy {
        AdversaryStrategy::HonestBob => {
            let ok = crate::okd::run_okd(params, hash, &mut alice_rng, &mut bob_rng).is_ok();
            TrialRecord {
                aborted: !ok,
                success_num: u64::from(ok),
                success_den: 1,
            }
        }
        AdversaryStrategy::RandomCommitBob => {
            run_receiver_trial(params, hash, &mut alice_rng, &mut bob_rng, strategy)
        }
        AdversaryStrategy::FixedBasisBob => {
            run_receiver_trial(params, hash, &mut alice_rng, &mut bob_rng, strategy)
        }
        AdversaryStrategy::DelayedMeasureBob { .. } => {
            run_receiver_trial(params, hash, &mut alice_rng, &mut bob_rng, strategy)
        }
        AdversaryStrategy::GuessingAlice => {
            let Ok((_, rk)) = crate::okd::run_okd(params, hash, &mut alice_rng, &mut bob_rng)
            else {
                return TrialRecord {
                    aborted: true,
                    success_num: 0,
                    success_den: 0,
                };
            };
            let c = bob_rng.gen_bool(0.5);
            let Ok(req) = ot::bob_request(&rk, c) else {
                return TrialRecord {
                    aborted: true,
                    success_num: 0,
                    success_den: 0,
                };
            };
            // Alice's distinguisher: compare the set sizes, coin-flip ties.
            let guess = match req.first.len().cmp(&req.second.len()) {
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => alice_rng.gen_bool(0.5),
            };
            TrialRecord {
                aborted: false,
                success_num: u64::from(guess == c),
                success_den: 1,
            }
        }
    }
}

/// One session where the receiver follows a cheating strategy. The sender
/// is the honest state machine throughout.
fn run_receiver_trial(
    params: SessionParams,
    hash: &dyn CommitHash,
    alice_rng: &mut impl RngCore,
    bob_rng: &mut impl RngCore,
    strategy: AdversaryStrategy,
) -> TrialRecord {
    let (mut alice, qubits) = AliceOkd::start(params, alice_rng);
    let total = params.total();

    // --- Bob's commit phase under the strategy ---
    let (claimed_values, claimed_bases) = match strategy {
        AdversaryStrategy::RandomCommitBob | AdversaryStrategy::DelayedMeasureBob { .. } => {
            // no measurement at all; uniform claims
            (
                BitString::random(total, bob_rng),
                BitString::random(total, bob_rng),
            )
        }
        AdversaryStrategy::FixedBasisBob => {
            // measure honestly, but always in the computational basis, and
            // report that basis truthfully
            let bases = vec![Basis::Computational; total];
            let results =
                channel::transmit_batch(&qubits, &bases, params.channel(), bob_rng).unwrap();
            let values: Vec<bool> = results.iter().map(|r| r.bit().unwrap_or(false)).collect();
            (BitString::from_bits(&values), BitString::zeros(total))
        }
        _ => unreachable!("receiver strategies only"),
    };
    let messages: Vec<BitString> = (0..total)
        .map(|i| BitString::from_bits(&[claimed_values.get(i), claimed_bases.get(i)]))
        .collect();
    let committed = commitment::commit_batch(&messages, params.com(), hash, bob_rng).unwrap();
    let (commitments, openings): (Vec<Commitment>, Vec<Opening>) = committed.into_iter().unzip();

    let surviving: Vec<usize> = (0..total).collect();
    alice
        .receive_commitments(&surviving, commitments.clone())
        .unwrap();
    let test = alice.choose_test(alice_rng).unwrap();

    let mut final_openings: Vec<Opening> = test
        .indices()
        .iter()
        .map(|&j| openings[j].clone())
        .collect();

    // --- delayed measurement + equivocation attempt on the tested indices ---
    let mut equivocations_accepted = 0u64;
    if let AdversaryStrategy::DelayedMeasureBob { search_budget } = strategy {
        for (slot, &j) in test.indices().iter().enumerate() {
            let late_basis = Basis::random(bob_rng);
            let outcome = channel::measure(qubits[j], late_basis, params.channel(), bob_rng);
            let Some(late_value) = outcome.bit() else {
                continue;
            };
            let want = BitString::from_bits(&[late_value, late_basis.bit()]);
            if want == messages[j] {
                continue; // lucky guess, nothing to cheat
            }
            if let Some(witness) =
                equivocation_search(&commitments[j], &openings[j], &want, hash, search_budget)
            {
                let forged = Opening { witness };
                // count it only if the verifier really accepts the new value
                if commitment::open_verify(&commitments[j], &forged, params.com(), hash)
                    .is_ok_and(|m| m == want)
                {
                    equivocations_accepted += 1;
                    final_openings[slot] = forged;
                }
            }
        }
    }

    let finish = alice.verify_and_finish(&final_openings, hash);

    match strategy {
        AdversaryStrategy::RandomCommitBob => {
            let passed = finish.is_ok();
            TrialRecord {
                aborted: !passed,
                success_num: u64::from(passed),
                success_den: 1,
            }
        }
        AdversaryStrategy::DelayedMeasureBob { .. } => TrialRecord {
            aborted: finish.is_err(),
            success_num: u64::from(equivocations_accepted > 0),
            success_den: 1,
        },
        AdversaryStrategy::FixedBasisBob => {
            let Ok((sender_key, bases_reveal)) = finish else {
                return TrialRecord {
                    aborted: true,
                    success_num: 0,
                    success_den: 0,
                };
            };
            // his claimed bases are all zero, so the mismatch record equals
            // Alice's revealed bases; measure his knowledge over it
            let kept_values = claimed_values.select_complement(test.indices());
            let mut agree = 0u64;
            let mut mismatched = 0u64;
            for i in 0..sender_key.bits.len() {
                if bases_reveal.get(i) {
                    mismatched += 1;
                    if kept_values.get(i) == sender_key.bits.get(i) {
                        agree += 1;
                    }
                }
            }
            TrialRecord {
                aborted: false,
                success_num: agree,
                success_den: mismatched,
            }
        }
        _ => unreachable!(),
    }
}

/// Systematic second-preimage search: walk candidates near the original
/// witness (XOR a counter into the first 32 bits) and accept one whose
/// digest matches the commitment and whose hash-family image is `want`.
pub fn equivocation_search(
    commitment: &Commitment,
    original: &Opening,
    want: &BitString,
    hash: &dyn CommitHash,
    budget: u32,
) -> Option<BitString> {
    let mut candidate = original.witness.clone();
    for counter in 1..=budget {
        for b in 0..32 {
            let orig = original.witness.get(b);
            candidate.set(b, orig ^ (counter >> b & 1 == 1));
        }
        if hash.digest(candidate.as_bytes()) == commitment.digest
            && commitment.func.eval(&candidate).as_ref() == Ok(want)
        {
            return Some(candidate);
        }
    }
    None
}

/// Analytic success probability of the systematic search: each candidate
/// hits the digest with probability `2^-t` and the wanted message with
/// probability `2^-msg_len`, independently.
pub fn equivocation_success_oracle(digest_bits: usize, msg_len: usize, budget: u32) -> f64 {
    let per = 0.5f64.powi((digest_bits + msg_len) as i32);
    1.0 - (1.0 - per).powi(budget as i32)
}

/// Standalone equivocation experiment: commit, pick a different target
/// message, search with the budget. Returns the empirical success count.
pub fn equivocation_experiment(
    params: &ComParams,
    hash: &dyn CommitHash,
    budget: u32,
    trials: u64,
    master_seed: u64,
) -> u64 {
    let run_one = |t: u64| -> u64 {
        let mut r = rng::derive(master_seed, "equivocation", t);
        let m = BitString::random(params.msg_len(), &mut r);
        let (c, o) = commitment::commit(&m, params, hash, &mut r).unwrap();
        let mut want = m.clone();
        want.flip(0); // any fixed different target
        u64::from(equivocation_search(&c, &o, &want, hash, budget).is_some())
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(run_one).sum()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..trials).map(run_one).sum()
    }
}
