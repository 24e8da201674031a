//! Classical simulation of the conjugate-coding channel.
//!
//! The four states in play are the computational-basis pair {|0>, |1>} and
//! the Hadamard-basis pair {|+>, |->}. Because preparation and measurement
//! only ever use these two conjugate bases, the exact quantum statistics
//! reduce to a sampling rule: measuring in the preparation basis returns the
//! encoded bit deterministically, measuring in the other basis returns an
//! unbiased coin flip. The simulation therefore carries `(s, a)` pairs, not
//! amplitudes.
//!
//! Channel imperfections are modeled with two knobs: an erasure probability
//! (the qubit never arrives) and a flip probability applied to matched-basis
//! outcomes only — a flip on a conjugate-basis outcome would be unobservable
//! since that outcome is already uniform.

use rand::{Rng, RngCore};
use thiserror::Error;

/// Preparation or measurement basis: one of the two conjugate bases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Basis {
    /// The {|0>, |1>} basis, encoded on the wire as bit 0.
    Computational,
    /// The {|+>, |->} basis, encoded on the wire as bit 1.
    Hadamard,
}

impl Basis {
    pub fn bit(self) -> bool {
        matches!(self, Basis::Hadamard)
    }

    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Basis::Hadamard
        } else {
            Basis::Computational
        }
    }

    /// The other basis of the conjugate pair.
    pub fn conjugate(self) -> Self {
        match self {
            Basis::Computational => Basis::Hadamard,
            Basis::Hadamard => Basis::Computational,
        }
    }

    pub fn random(rng: &mut impl RngCore) -> Self {
        Self::from_bit(rng.gen_bool(0.5))
    }
}

/// A conjugate-coded state: the encoded bit plus its preparation basis.
///
/// The pair identifies exactly one of the four states:
/// `(0, Computational)` is |0>, `(1, Computational)` is |1>,
/// `(0, Hadamard)` is |+> and `(1, Hadamard)` is |->.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PreparedQubit {
    pub value: bool,
    pub basis: Basis,
}

/// Channel imperfection model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Probability that a matched-basis outcome is flipped. Must be in [0, 0.5).
    pub flip_prob: f64,
    /// Probability that a qubit is erased in transit. Must be in [0, 1).
    pub loss_prob: f64,
}

impl ChannelParams {
    pub const NOISELESS: ChannelParams = ChannelParams {
        flip_prob: 0.0,
        loss_prob: 0.0,
    };

    pub fn new(flip_prob: f64, loss_prob: f64) -> Result<Self, ChannelError> {
        if !(0.0..0.5).contains(&flip_prob) {
            return Err(ChannelError::BadParameter {
                name: "flip_prob",
                value: flip_prob,
            });
        }
        if !(0.0..1.0).contains(&loss_prob) {
            return Err(ChannelError::BadParameter {
                name: "loss_prob",
                value: loss_prob,
            });
        }
        Ok(Self { flip_prob, loss_prob })
    }

    pub fn is_noiseless(&self) -> bool {
        self.flip_prob == 0.0 && self.loss_prob == 0.0
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("parameter {name} = {value} out of range")]
    BadParameter { name: &'static str, value: f64 },
    #[error("qubit batch length {qubits} does not match basis count {bases}")]
    LengthMismatch { qubits: usize, bases: usize },
}

/// Result of measuring one transmitted qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureOutcome {
    Bit(bool),
    Lost,
}

impl MeasureOutcome {
    pub fn bit(self) -> Option<bool> {
        match self {
            MeasureOutcome::Bit(b) => Some(b),
            MeasureOutcome::Lost => None,
        }
    }
}

/// Encode a bit in a basis (protocol step: sender-side state preparation).
pub fn prepare(value: bool, basis: Basis) -> PreparedQubit {
    PreparedQubit { value, basis }
}

/// Measure a transmitted qubit in `basis` under the channel model.
///
/// Erasure is decided first. A matched-basis measurement then returns the
/// encoded bit, flipped with probability `flip_prob`; a conjugate-basis
/// measurement returns an unbiased random bit.
pub fn measure(
    qubit: PreparedQubit,
    basis: Basis,
    params: &ChannelParams,
    rng: &mut impl RngCore,
) -> MeasureOutcome {
    if params.loss_prob > 0.0 && rng.gen_bool(params.loss_prob) {
        return MeasureOutcome::Lost;
    }
    if basis == qubit.basis {
        let flipped = params.flip_prob > 0.0 && rng.gen_bool(params.flip_prob);
        MeasureOutcome::Bit(qubit.value ^ flipped)
    } else {
        MeasureOutcome::Bit(rng.gen_bool(0.5))
    }
}

/// Element-wise measurement of a batch, preserving order.
pub fn transmit_batch(
    qubits: &[PreparedQubit],
    bases: &[Basis],
    params: &ChannelParams,
    rng: &mut impl RngCore,
) -> Result<Vec<MeasureOutcome>, ChannelError> {
    if qubits.len() != bases.len() {
        return Err(ChannelError::LengthMismatch {
            qubits: qubits.len(),
            bases: bases.len(),
        });
    }
    Ok(qubits
        .iter()
        .zip(bases)
        .map(|(&q, &b)| measure(q, b, params, rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn matched_basis_is_deterministic_when_noiseless() {
        let mut r = rng::seeded(1);
        for value in [false, true] {
            for basis in [Basis::Computational, Basis::Hadamard] {
                let q = prepare(value, basis);
                assert_eq!(
                    measure(q, basis, &ChannelParams::NOISELESS, &mut r),
                    MeasureOutcome::Bit(value)
                );
            }
        }
    }

    #[test]
    fn state_mapping_covers_all_four_states() {
        // (0,0) -> |0>, (1,0) -> |1>, (0,1) -> |+>, (1,1) -> |->
        let q00 = prepare(false, Basis::Computational);
        let q11 = prepare(true, Basis::Hadamard);
        let q01 = prepare(false, Basis::Hadamard);
        assert_eq!((q00.value, q00.basis.bit()), (false, false));
        assert_eq!((q11.value, q11.basis.bit()), (true, true));
        assert_eq!((q01.value, q01.basis.bit()), (false, true));
    }

    #[test]
    fn conjugate_basis_outcome_is_uniform() {
        // Monte Carlo against the conjugate-basis law: mean 0.5 within 4 sigma.
        let trials = 100_000u32;
        let mut r = rng::seeded(42);
        for (value, basis) in [
            (false, Basis::Computational),
            (true, Basis::Computational),
            (false, Basis::Hadamard),
            (true, Basis::Hadamard),
        ] {
            let q = prepare(value, basis);
            let ones: u32 = (0..trials)
                .map(|_| {
                    match measure(q, basis.conjugate(), &ChannelParams::NOISELESS, &mut r) {
                        MeasureOutcome::Bit(true) => 1,
                        _ => 0,
                    }
                })
                .sum();
            let mean = f64::from(ones) / f64::from(trials);
            let tol = 4.0 * (0.25 / f64::from(trials)).sqrt();
            assert!(
                (mean - 0.5).abs() <= tol.max(0.01),
                "conjugate mean {mean} for ({value}, {basis:?})"
            );
        }
    }

    #[test]
    fn flip_rate_matches_binomial_oracle() {
        let trials = 10_000u32;
        let params = ChannelParams::new(0.05, 0.0).unwrap();
        let mut r = rng::seeded(7);
        let mut flips = 0u32;
        for _ in 0..trials {
            let value = r.gen_bool(0.5);
            let basis = Basis::random(&mut r);
            let q = prepare(value, basis);
            if measure(q, basis, &params, &mut r) != MeasureOutcome::Bit(value) {
                flips += 1;
            }
        }
        let frac = f64::from(flips) / f64::from(trials);
        // binomial 4 sigma around p = 0.05 is well inside +/- 0.01
        assert!((frac - 0.05).abs() <= 0.01, "flip fraction {frac}");
    }

    #[test]
    fn loss_fraction_matches_loss_prob() {
        let trials = 20_000u32;
        let p = 0.15;
        let params = ChannelParams::new(0.0, p).unwrap();
        let mut r = rng::seeded(11);
        let q = prepare(true, Basis::Computational);
        let lost = (0..trials)
            .filter(|_| measure(q, Basis::Computational, &params, &mut r) == MeasureOutcome::Lost)
            .count() as f64;
        let frac = lost / f64::from(trials);
        let tol = 4.0 * (p * (1.0 - p) / f64::from(trials)).sqrt();
        assert!((frac - p).abs() <= tol, "loss fraction {frac}");
    }

    #[test]
    fn batch_preserves_order_and_checks_length() {
        let qubits = [
            prepare(false, Basis::Computational),
            prepare(true, Basis::Computational),
        ];
        let bases = [Basis::Computational, Basis::Computational];
        let out = transmit_batch(&qubits, &bases, &ChannelParams::NOISELESS, &mut rng::seeded(3))
            .unwrap();
        assert_eq!(out, vec![MeasureOutcome::Bit(false), MeasureOutcome::Bit(true)]);

        let empty = transmit_batch(&[], &[], &ChannelParams::NOISELESS, &mut rng::seeded(3));
        assert_eq!(empty.unwrap(), vec![]);

        let err = transmit_batch(&qubits, &bases[..1], &ChannelParams::NOISELESS, &mut rng::seeded(3));
        assert_eq!(
            err.unwrap_err(),
            ChannelError::LengthMismatch { qubits: 2, bases: 1 }
        );
    }

    #[test]
    fn identical_seed_gives_identical_outcome_sequence() {
        let params = ChannelParams::new(0.1, 0.1).unwrap();
        let run = |seed: u64| {
            let mut r = rng::seeded(seed);
            let qubits: Vec<_> = (0..200)
                .map(|i| prepare(i % 2 == 0, Basis::from_bit(i % 3 == 0)))
                .collect();
            let bases: Vec<_> = (0..200).map(|i| Basis::from_bit(i % 5 == 0)).collect();
            transmit_batch(&qubits, &bases, &params, &mut r).unwrap()
        };
        assert_eq!(run(99), run(99));
    }

    #[test]
    fn params_validation() {
        assert!(ChannelParams::new(0.5, 0.0).is_err());
        assert!(ChannelParams::new(-0.01, 0.0).is_err());
        assert!(ChannelParams::new(0.0, 1.0).is_err());
        assert!(ChannelParams::new(0.49, 0.99).is_ok());
    }
}
