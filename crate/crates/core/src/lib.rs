//! Multi-vehicular learning for hybrid MIMO channel estimation.
//!
//! The crate covers the full simulation chain: array geometry and DFT
//! codebooks, a geometric multipath channel, beam alignment learned over
//! repeated vehicle passages, joint and disjoint low-rank estimation of the
//! compressed channel, link metrics, and a seeded Monte Carlo harness.

pub mod arrays;
pub mod beam_alignment;
pub mod channel;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod link;
pub mod numerics;
pub mod scenario;

pub use error::{Error, Result};
