//! Numerical toolkit for Bayesian inference of the potential in a
//! steady-state Schrödinger equation from noisy interior observations.

pub mod asymptotics;
pub mod error;
pub mod fkoracle;
pub mod grid;
pub mod inference;
pub mod linalg;
pub mod obsmodel;
pub mod pde;
pub mod stats;
pub mod testfn;
pub mod verify;
pub mod wavelet;

pub use error::{Error, Result};

/// Derives an independent seed for sub-task `stream` of a run seeded with
/// `base` (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
