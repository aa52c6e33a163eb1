//! Simulation and numerical verification of a key-distribution protocol whose
//! security rests only on the impossibility of signalling.
//!
//! * [`boxes`]: bipartite/tripartite conditional probability tables and their
//!   no-signalling checks.
//! * [`quantum`]: singlet statistics in the rotated basis family.
//! * [`bell`]: the chained Bell statistic, exact and empirical.
//! * [`protocol`]: the protocol state machine, event classification and Monte Carlo.
//! * [`attacks`]: eavesdropping strategies and the optimal no-signalling attack LP.
//! * [`lp`]: the dense simplex solver behind the attack LP.

pub mod attacks;
pub mod bell;
pub mod boxes;
pub mod error;
pub mod lp;
pub mod protocol;
pub mod quantum;

pub use error::{Error, Result};
