//! Simulation engine for pulsed optically-detected magnetic resonance (ODMR)
//! on an NV-center ensemble, built around an oscilloscope-style acquisition
//! chain.
//!
//! The crate is organized as a signal path:
//!
//! - [`pulse_seq`] builds and compiles laser/microwave/trigger protocols into
//!   per-channel digital timelines.
//! - [`nv_physics`] evolves a weighted ensemble of Bloch vectors under
//!   microwave drive, free precession, relaxation, and laser repolarization,
//!   and emits photoluminescence levels.
//! - [`instruments`] plays timelines through a virtual APD, a drifting
//!   baseline, and a digital-storage-oscilloscope with edge triggering and
//!   on-board averaging.
//! - [`acquisition`] orchestrates parameter sweeps, places reference/signal
//!   windows, and computes photoluminescence contrast under the two
//!   referencing strategies (plus the deliberately drift-vulnerable serial
//!   mode).
//! - [`analysis`] fits the resulting contrast curves (damped least squares),
//!   estimates power spectral densities, and performs the linear
//!   Rabi-frequency-vs-sqrt-power regression.
//!
//! Everything is deterministic given a root seed: reruns produce bit-identical
//! artifacts.

// Validation uses `!(v > 0.0)` on purpose: it rejects NaN along with the
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index arithmetic reads clearer than iterator chains in the small dense
// linear-algebra kernels.
#![allow(clippy::needless_range_loop)]

pub mod acquisition;
pub mod analysis;
pub mod instruments;
pub mod nv_physics;
pub mod pulse_seq;
pub mod seed;
