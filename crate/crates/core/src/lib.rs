//! Swing-equation network model with distributed averaging integral (DAI)
//! frequency control, a strict Lyapunov certificate for it, and the
//! machinery to check that certificate along simulated trajectories, with and
//! without Denial-of-Service outages of the controller communication.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dos;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lyapunov;
pub mod network;

pub use error::{Error, Result};
