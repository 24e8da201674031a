//! Oblivious-key distribution and 1-out-of-2 oblivious transfer over a
//! simulated conjugate-coding channel, with hash-based commitments.
//!
//! The engine splits the protocol into two phases. The *oblivious key
//! distribution* phase simulates preparing and measuring conjugate-coded
//! states, has the receiver commit to his measurement record, spot-checks a
//! random subset of the commitments, and leaves both parties holding an
//! oblivious key pair: the sender knows a string `k`, the receiver knows
//! roughly half of `k` and exactly which half. The *oblivious transfer*
//! phase consumes such a pair to transfer one of two bits (or strings) so
//! that the sender stays ignorant of the choice and the receiver of the
//! other message.
//!
//! The quantum channel is a classical simulation: states travel as
//! `(bit, basis)` pairs with exact conjugate-coding statistics. This is an
//! engine for studying the protocol, not a physical realization, and the
//! transport layer refuses to ship qubit frames over TCP unless the operator
//! explicitly acknowledges that.
//!
//! Modules map onto the protocol stack:
//!
//! * [`channel`] — conjugate-coding channel simulation (prepare / measure).
//! * [`commitment`] — universal-hash commitments over a pluggable
//!   collision-resistant hash.
//! * [`okd`] — the two party state machines of the key-distribution phase.
//! * [`postprocess`] — cascade-style reconciliation and Toeplitz extraction.
//! * [`ot`] — the transfer phase: bit OT, string OT, 1-out-of-4 OT.
//! * [`keystore`] — persistent oblivious-key files with one-use segments.
//! * [`wire`] — tagged length-prefixed frames and channels (loopback / TCP).
//! * [`session`] — session drivers wiring the above over a channel.
//! * [`adversary`] — dishonest-party strategies and abort-rate experiments.
//! * [`scaling`] — the wall-time scaling benchmark grid.
//!
//! The `parallel` feature (on by default) runs batch commitment work and
//! experiment trials on a rayon pool; outputs are bit-identical to the
//! sequential fallback because all per-index randomness is derived up front.

pub mod adversary;
pub mod bits;
pub mod channel;
pub mod commitment;
pub mod keystore;
pub mod okd;
pub mod ot;
pub mod postprocess;
pub mod rng;
pub mod scaling;
pub mod session;
pub mod wire;

pub use bits::BitString;
pub use channel::{Basis, ChannelParams, MeasureOutcome, PreparedQubit};
pub use commitment::{ComParams, Commitment, Opening};
pub use okd::{OkReceiverKey, OkSenderKey, SessionParams};
