//! Variable-length masked discrete diffusion on explicit finite targets.
//!
//! The crate implements the joint insertion/unmasking interpolant, exact
//! posterior oracles over a known target distribution, the CTMC rates they
//! induce, tau-leaping and any-order samplers, the variational losses with a
//! tabular learner, and statistical checks tying these together.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ctmc;
pub mod error;
pub mod harness;
pub mod interpolant;
pub mod learn;
pub mod loss;
pub mod oracle;
pub mod rng;
pub mod schedule;
pub mod sequence;
pub mod target;

pub use error::{Error, Result};
pub use rng::SimRng;
pub use schedule::{Schedule, SchedulePair, T_MAX};
pub use sequence::{IndexSet, MaskedSeq, Token};
pub use target::TargetDistribution;
