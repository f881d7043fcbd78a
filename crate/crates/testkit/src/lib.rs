//! Independent numerical oracles used to validate the ODMR rig.
//!
//! Nothing here shares code with `odmr-core`: the Bloch integrator steps the
//! differential equations directly instead of composing closed-form
//! rotations, the dephasing average brute-forces a large random ensemble
//! instead of stratified quadrature, and the curve-fit oracle is a
//! grid-search with linear-parameter projection plus coordinate polish
//! instead of damped least squares. Agreement between the two routes is the
//! evidence the tests rely on.

// Index arithmetic reads clearer than iterator chains in the small dense
// linear-algebra kernels.
#![allow(clippy::needless_range_loop)]

pub mod bloch;
pub mod dephasing;
pub mod gridfit;

/// SplitMix64; local copy so the oracles stay dependency-free.
#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform double in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Counter-addressed standard normal (Box-Muller).
pub fn gaussian(seed: u64, index: u64) -> f64 {
    let a = splitmix64(seed ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93));
    let b = splitmix64(a ^ 0x94D0_49BB_1331_11EB);
    let u1 = unit_f64(a);
    let u2 = unit_f64(b);
    ((-2.0 * (1.0 - u1).ln()).sqrt()) * (std::f64::consts::TAU * u2).cos()
}
