//! Crop yield modeling from genotype and environment data.
//!
//! The pipeline covers synthetic data generation with planted ground truth,
//! genotype preprocessing (call-rate/MAF filtering, median imputation),
//! lagged neural weather forecasting, a dual residual maxout network for
//! yield / check yield / yield difference, Lasso / shallow-net / regression
//! tree baselines, guided-backpropagation feature selection, and report
//! assembly.

pub mod baselines;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod feature_select;
pub mod nn;
pub mod preprocess;
pub mod synth;
pub mod weather;
pub mod yield_model;

pub use error::{Error, Result};

/// Derive a child seed from a master seed and a stream label.
///
/// Splitmix64 over the master seed mixed with an FNV-1a hash of the label;
/// stable across platforms and releases so artifacts stay reproducible.
pub fn derive_seed(master: u64, stream: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
