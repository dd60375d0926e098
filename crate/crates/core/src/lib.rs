//! Performance-versus-complexity workbench for neural-network equalizers in
//! coherent optical links.
//!
//! - [`complexity`]: closed-form real-multiplication counts per recovered symbol.
//! - [`txrx`]: DP-16QAM transmitter, Manakov split-step fiber, receiver DSP and metrics.
//! - [`neural`]: a small from-scratch network engine with the four equalizer families.
//! - [`search`]: budget-constrained random topology search and the sweep table.
//! - [`bench`]: single-threaded inference latency harness.

pub mod bench;
pub mod complexity;
pub mod error;
pub mod format;
pub mod neural;
pub mod search;
pub mod txrx;

pub use error::{Error, Result};

/// Complex baseband sample.
pub type C64 = num_complex::Complex64;

/// Mixes two seeds into an independent stream seed (splitmix64 finalizer).
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b ^ 0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
