//! Experiment harness for the dual-neighborhood point-cloud classifier:
//! dataset plumbing, the training/evaluation loops, the neighborhood-mode
//! ablation runner, a double-precision gradient check, and neighborhood
//! visualization export.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod dataset_io;
pub mod evaluate;
pub mod export;
pub mod gradcheck_cmd;
pub mod metrics;
pub mod train;

pub use dndfn_core::{Error, Result};

/// One fixed stream-splitting step used everywhere the harness derives
/// per-item seeds from a base seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut x = 0x2545f4914f6cdd1du64;
    for &p in parts {
        x ^= p;
        x = x.wrapping_add(0x9e3779b97f4a7c15);
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
        x ^= x >> 31;
    }
    x
}
