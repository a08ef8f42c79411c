//! Economic MPC driven by a learned cost oracle.
//!
//! The controllers in [`empc`] never see the plant state. They predict how the
//! measured economic cost evolves with a NARX model ([`narx`]) whose one-step
//! map is a Lipschitz interpolant learned from data ([`oracle`]). The reactor
//! in [`plant`] is the ground truth used to generate data and close the loop.

pub mod empc;
mod kdtree;
pub mod narx;
pub mod oracle;
pub mod plant;
pub mod solver;
pub mod sstarget;
