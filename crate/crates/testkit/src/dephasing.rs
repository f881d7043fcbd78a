//! Brute-force inhomogeneous dephasing average.
//!
//! Samples a large random Gaussian ensemble of detunings and averages the
//! transverse phase factor directly; used to cross-check both the analytic
//! Gaussian-dephasing envelope and the stratified quadrature the engine uses.

use crate::gaussian;

/// `|< exp(i*2*pi*delta*t) >|` over `n` random detunings `delta ~
/// N(0, sigma_hz)`.
pub fn transverse_envelope(sigma_hz: f64, t: f64, n: usize, seed: u64) -> f64 {
    let mut re = 0.0;
    let mut im = 0.0;
    for i in 0..n {
        let delta = sigma_hz * gaussian(seed, i as u64);
        let phase = std::f64::consts::TAU * delta * t;
        re += phase.cos();
        im += phase.sin();
    }
    let n = n as f64;
    ((re / n).powi(2) + (im / n).powi(2)).sqrt()
}

/// Closed-form Gaussian dephasing envelope `exp(-(t/t2_star)^2)` with
/// `t2_star = 1/(sqrt(2)*pi*sigma)`.
pub fn analytic_envelope(sigma_hz: f64, t: f64) -> f64 {
    let t2_star = 1.0 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * sigma_hz);
    (-(t / t2_star).powi(2)).exp()
}
