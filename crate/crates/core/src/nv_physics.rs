//! Closed-form evolution of a weighted NV-ensemble of Bloch vectors.
//!
//! The tracked ensemble is split in two: `members` holds the resonant
//! subensemble (stratified detunings around each hyperfine line, one Bloch
//! vector each), while the non-resonant majority is summarized by a single
//! population `nonresonant_p0` that only undergoes longitudinal relaxation
//! and optical repolarization.
//!
//! Evolution operators are exact rotations plus exponential damping factors.
//! Microwave pulses rotate about the tilted generalized-Rabi axis; free
//! precession rotates about z at the member detuning; the laser pumps every
//! population back toward m_s = 0 while quenching coherence. Coherence loss
//! during echo sequences is carried by a collapse/revival envelope (13C
//! Larmor comb under a stretched-exponential decay): each free gap
//! contributes the square root of the envelope at the gap duration, so a
//! symmetric echo's two gaps multiply to the full envelope and revivals land
//! at multiples of the 13C period of the swept gap duration.

use thiserror::Error;

/// Electron gyromagnetic ratio (Hz/G).
pub const GAMMA_E_HZ_PER_GAUSS: f64 = 2.8025e6;
/// 13C nuclear gyromagnetic ratio (Hz/G); sets the revival period.
pub const GAMMA_C13_HZ_PER_GAUSS: f64 = 1.0705e3;

/// Thermal longitudinal polarization of the tracked pair of levels
/// (high-temperature limit: equal populations).
pub const THERMAL_Z: f64 = 0.0;
/// Thermal m_s = 0 population of the tracked pair.
pub const THERMAL_P0: f64 = 0.5;

/// One hyperfine component of the driven transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfineLine {
    /// Offset of this line from the drive frequency (Hz).
    pub offset_hz: f64,
    /// Fractional weight; weights of all lines sum to one.
    pub weight: f64,
}

/// Static description of the ensemble and its relaxation channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    /// Bias field at the sample (G).
    pub b0_field_gauss: f64,
    /// Frequency of the driven transition (Hz).
    pub center_frequency_hz: f64,
    /// Electron gyromagnetic ratio (Hz/G).
    pub gamma_e_hz_per_gauss: f64,
    /// Rabi frequency per square root of microwave power (Hz/sqrt(W)).
    pub rabi_coefficient_hz_per_sqrt_w: f64,
    /// Hyperfine components around the drive.
    pub hyperfine_lines: Vec<HyperfineLine>,
    /// Gaussian detuning spread per line (Hz); sets the inhomogeneous T2*.
    pub detuning_spread_sigma_hz: f64,
    /// Longitudinal relaxation time (s).
    pub t1: f64,
    /// Homogeneous transverse relaxation during non-echo free precession (s).
    pub t2_alpha: f64,
    /// Stretch exponent of the echo-envelope decay.
    pub stretch_n: f64,
    /// Echo coherence time with the 13C comb refocused (s).
    pub t2_beta: f64,
    /// Revival period on the per-gap free-precession axis (s).
    pub t_rev: f64,
    /// Width of each revival lobe (s).
    pub t_dec: f64,
    /// Optical repolarization time constant under illumination (s).
    pub tau_repol: f64,
    /// Fraction of the optically addressed spins that is microwave-resonant.
    pub resonant_fraction: f64,
    /// Full PL contrast between polarized and thermal ensembles.
    pub contrast_scale: f64,
    /// PL level of the fully polarized ensemble (arbitrary linear units).
    pub pl_base: f64,
    /// Drive-on coherence time at `rabi_ref_frequency_hz` (s).
    pub t2_rabi_ref: f64,
    /// Reference Rabi frequency for the drive-on damping law (Hz).
    pub rabi_ref_frequency_hz: f64,
    /// Per-cycle drive-on loss coefficient: 1/T2Rabi = 1/T20 + c * f_rabi.
    pub rabi_damping_per_cycle: f64,
    /// Number of tracked resonant sub-ensembles (split across lines).
    pub n_subensembles: usize,
}

/// Default inhomogeneous dephasing time used to derive the detuning spread.
pub const DEFAULT_T2_STAR: f64 = 232.03e-9;

/// Detuning spread giving a Gaussian dephasing envelope with 1/e time
/// `t2_star`: `sigma = 1/(sqrt(2)*pi*t2_star)`.
pub fn sigma_from_t2_star(t2_star: f64) -> f64 {
    1.0 / (std::f64::consts::SQRT_2 * std::f64::consts::PI * t2_star)
}

/// Revival period for a 13C bath at the given bias field.
pub fn c13_revival_period(b0_gauss: f64) -> f64 {
    1.0 / (GAMMA_C13_HZ_PER_GAUSS * b0_gauss)
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let b0 = 43.62;
        let t_rev = c13_revival_period(b0);
        Self {
            b0_field_gauss: b0,
            center_frequency_hz: 2.74864e9,
            gamma_e_hz_per_gauss: GAMMA_E_HZ_PER_GAUSS,
            rabi_coefficient_hz_per_sqrt_w: 2.5e6 / 14.74f64.sqrt(),
            hyperfine_lines: vec![
                HyperfineLine {
                    offset_hz: -2.2e6,
                    weight: 0.25,
                },
                HyperfineLine {
                    offset_hz: 0.0,
                    weight: 0.5,
                },
                HyperfineLine {
                    offset_hz: 2.2e6,
                    weight: 0.25,
                },
            ],
            detuning_spread_sigma_hz: sigma_from_t2_star(DEFAULT_T2_STAR),
            t1: 6.274e-3,
            t2_alpha: 3.438e-6,
            stretch_n: 1.5,
            t2_beta: 68.12e-6,
            t_rev,
            t_dec: t_rev / 6.0,
            tau_repol: 138.07e-6,
            resonant_fraction: 0.25,
            contrast_scale: 0.05,
            pl_base: 1.0,
            t2_rabi_ref: 1.175e-6,
            rabi_ref_frequency_hz: 2.5e6,
            rabi_damping_per_cycle: 0.1,
            n_subensembles: 99,
        }
    }
}

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("invalid ensemble config: {field} = {value:.6e}")]
    InvalidConfig { field: &'static str, value: f64 },
    #[error("hyperfine weights sum to {sum:.6e}, expected 1")]
    BadHyperfineWeights { sum: f64 },
    #[error("no hyperfine lines configured")]
    NoHyperfineLines,
    #[error("n_subensembles = {0}, need at least 3")]
    TooFewSubensembles(usize),
    #[error("negative microwave power: {0:.3e} W")]
    NegativePower(f64),
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let positive = [
            ("b0_field_gauss", self.b0_field_gauss),
            ("center_frequency_hz", self.center_frequency_hz),
            ("gamma_e_hz_per_gauss", self.gamma_e_hz_per_gauss),
            ("t1", self.t1),
            ("t2_alpha", self.t2_alpha),
            ("stretch_n", self.stretch_n),
            ("t2_beta", self.t2_beta),
            ("t_rev", self.t_rev),
            ("t_dec", self.t_dec),
            ("tau_repol", self.tau_repol),
            ("contrast_scale", self.contrast_scale),
            ("pl_base", self.pl_base),
            ("t2_rabi_ref", self.t2_rabi_ref),
        ];
        for (field, value) in positive {
            if !(value > 0.0) {
                return Err(PhysicsError::InvalidConfig { field, value });
            }
        }
        for (field, value) in [
            (
                "rabi_coefficient_hz_per_sqrt_w",
                self.rabi_coefficient_hz_per_sqrt_w,
            ),
            ("detuning_spread_sigma_hz", self.detuning_spread_sigma_hz),
            ("rabi_damping_per_cycle", self.rabi_damping_per_cycle),
            ("rabi_ref_frequency_hz", self.rabi_ref_frequency_hz),
        ] {
            if !(value >= 0.0) {
                return Err(PhysicsError::InvalidConfig { field, value });
            }
        }
        if !(self.resonant_fraction > 0.0 && self.resonant_fraction <= 1.0) {
            return Err(PhysicsError::InvalidConfig {
                field: "resonant_fraction",
                value: self.resonant_fraction,
            });
        }
        if self.hyperfine_lines.is_empty() {
            return Err(PhysicsError::NoHyperfineLines);
        }
        let sum: f64 = self.hyperfine_lines.iter().map(|l| l.weight).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PhysicsError::BadHyperfineWeights { sum });
        }
        if self.n_subensembles < 3 {
            return Err(PhysicsError::TooFewSubensembles(self.n_subensembles));
        }
        // The drive-on damping law must leave a positive zero-drive rate.
        if self.t2_rabi_ref.is_finite()
            && 1.0 / self.t2_rabi_ref <= self.rabi_damping_per_cycle * self.rabi_ref_frequency_hz
        {
            return Err(PhysicsError::InvalidConfig {
                field: "t2_rabi_ref (inconsistent with rabi_damping_per_cycle)",
                value: self.t2_rabi_ref,
            });
        }
        Ok(())
    }

    /// Drive-on coherence time at the given Rabi frequency:
    /// `1/T2Rabi(f) = 1/T20 + c*f`, with T20 anchored so that
    /// `T2Rabi(rabi_ref_frequency) = t2_rabi_ref`.
    pub fn t2_rabi(&self, f_rabi_hz: f64) -> f64 {
        if !self.t2_rabi_ref.is_finite() {
            return f64::INFINITY;
        }
        let inv_t20 =
            1.0 / self.t2_rabi_ref - self.rabi_damping_per_cycle * self.rabi_ref_frequency_hz;
        let inv = inv_t20 + self.rabi_damping_per_cycle * f_rabi_hz;
        1.0 / inv
    }
}

/// One tracked resonant sub-ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    /// Bloch vector in the rotating frame; |v| <= 1.
    pub bloch: [f64; 3],
    /// Detuning from the drive (Hz).
    pub detuning_hz: f64,
    /// Fractional weight within the resonant subensemble.
    pub weight: f64,
}

impl Member {
    pub fn p0(&self) -> f64 {
        0.5 * (1.0 + self.bloch[2])
    }
}

/// Dynamic state of the ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub members: Vec<Member>,
    /// m_s = 0 population of the non-resonant majority.
    pub nonresonant_p0: f64,
    /// Free-precession time accumulated since the last pulse or laser
    /// segment (s); feeds the collapse/revival envelope inside echo
    /// sequences.
    pub elapsed_free_precession: f64,
}

/// Photoluminescence trace sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PLTrace {
    /// Time of the first sample (s).
    pub t0: f64,
    /// Sample spacing (s).
    pub dt: f64,
    /// PL levels (arbitrary linear units, >= 0).
    pub samples: Vec<f64>,
}

impl PLTrace {
    /// CSV export: `t_s,pl`, one row per sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t_s,pl\n");
        for (k, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.t0 + k as f64 * self.dt, s));
        }
        out
    }

    /// Parse the `to_csv` format; leading `#` comment lines are ignored.
    pub fn from_csv(text: &str) -> Option<Self> {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("t_s") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            times.push(parts.next()?.parse::<f64>().ok()?);
            samples.push(parts.next()?.parse::<f64>().ok()?);
        }
        if times.len() < 2 {
            return None;
        }
        Some(PLTrace {
            t0: times[0],
            dt: times[1] - times[0],
            samples,
        })
    }
}

/// Inverse standard-normal CDF (Acklam's rational approximation,
/// |relative error| < 1.2e-9). Deterministic stratified sampling needs
/// quantiles, not random draws.
fn probit(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.38357751867269e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Build the fully polarized initial state with deterministic stratified
/// detunings: members are split evenly across hyperfine lines and each
/// line's detunings sit at Gaussian quantile midpoints around its offset.
pub fn init_ensemble(cfg: &EnsembleConfig) -> Result<EnsembleState, PhysicsError> {
    cfg.validate()?;
    let n_lines = cfg.hyperfine_lines.len();
    let per_line = cfg.n_subensembles / n_lines;
    let remainder = cfg.n_subensembles % n_lines;

    let mut members = Vec::with_capacity(cfg.n_subensembles);
    for (li, line) in cfg.hyperfine_lines.iter().enumerate() {
        let m = per_line + usize::from(li < remainder);
        if m == 0 {
            continue;
        }
        let w = line.weight / m as f64;
        for j in 0..m {
            let q = (j as f64 + 0.5) / m as f64;
            let detuning = line.offset_hz + cfg.detuning_spread_sigma_hz * probit(q);
            members.push(Member {
                bloch: [0.0, 0.0, 1.0],
                detuning_hz: detuning,
                weight: w,
            });
        }
    }

    Ok(EnsembleState {
        members,
        nonresonant_p0: 1.0,
        elapsed_free_precession: 0.0,
    })
}

/// Rabi frequency from applied microwave power: `f_R = k * sqrt(P)`.
pub fn rabi_frequency_from_power(p_watts: f64, cfg: &EnsembleConfig) -> Result<f64, PhysicsError> {
    if p_watts < 0.0 {
        return Err(PhysicsError::NegativePower(p_watts));
    }
    Ok(cfg.rabi_coefficient_hz_per_sqrt_w * p_watts.sqrt())
}

/// Rotate `v` about the unit axis `n` by `angle` (right-hand rule).
#[inline]
fn rodrigues(v: [f64; 3], n: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let cross = [
        n[1] * v[2] - n[2] * v[1],
        n[2] * v[0] - n[0] * v[2],
        n[0] * v[1] - n[1] * v[0],
    ];
    let dot = n[0] * v[0] + n[1] * v[1] + n[2] * v[2];
    let k = dot * (1.0 - c);
    [
        v[0] * c + cross[0] * s + n[0] * k,
        v[1] * c + cross[1] * s + n[1] * k,
        v[2] * c + cross[2] * s + n[2] * k,
    ]
}

/// Microwave pulse: each member rotates by `2*pi*Omega*duration` about the
/// tilted axis `(f_R sin(phase), f_R cos(phase), delta)/Omega` with the
/// generalized Rabi frequency `Omega = sqrt(f_R^2 + delta^2)`, then all
/// components damp toward the thermal state with the drive-on time
/// `T2Rabi(f_R)`. The non-resonant population is untouched.
pub fn apply_mw_pulse(
    state: &mut EnsembleState,
    duration: f64,
    f_rabi_hz: f64,
    phase: f64,
    cfg: &EnsembleConfig,
) {
    if duration <= 0.0 || f_rabi_hz <= 0.0 {
        return;
    }
    let t2r = cfg.t2_rabi(f_rabi_hz);
    let damp = if t2r.is_finite() {
        (-duration / t2r).exp()
    } else {
        1.0
    };
    let (sp, cp) = phase.sin_cos();
    for m in &mut state.members {
        let delta = m.detuning_hz;
        let omega = (f_rabi_hz * f_rabi_hz + delta * delta).sqrt();
        let axis = [
            f_rabi_hz * sp / omega,
            f_rabi_hz * cp / omega,
            delta / omega,
        ];
        let angle = std::f64::consts::TAU * omega * duration;
        let v = rodrigues(m.bloch, axis, angle);
        m.bloch = [
            v[0] * damp,
            v[1] * damp,
            THERMAL_Z + (v[2] - THERMAL_Z) * damp,
        ];
    }
    // A pulse ends the current free-precession gap; coherence it creates
    // starts a fresh envelope clock.
    state.elapsed_free_precession = 0.0;
}

/// Hard-pulse limit: rotate every member by `angle` about the in-plane axis
/// selected by `phase`, ignoring detunings. Analysis and test helper; the
/// playback path always uses [`apply_mw_pulse`].
pub fn apply_instantaneous_rotation(state: &mut EnsembleState, phase: f64, angle: f64) {
    let (sp, cp) = phase.sin_cos();
    let axis = [sp, cp, 0.0];
    for m in &mut state.members {
        m.bloch = rodrigues(m.bloch, axis, angle);
    }
    state.elapsed_free_precession = 0.0;
}

/// Collapse/revival coherence envelope on the per-gap free-precession axis:
/// stretched-exponential decay times an 11-lobe Gaussian comb at multiples
/// of the 13C revival period, normalized to 1 at zero and clipped to [0, 1].
pub fn echo_envelope(tau_free: f64, cfg: &EnsembleConfig) -> f64 {
    if tau_free <= 0.0 {
        return 1.0;
    }
    let raw = |tau: f64| -> f64 {
        let stretch = if cfg.t2_beta.is_finite() {
            (-(tau / cfg.t2_beta).powf(cfg.stretch_n)).exp()
        } else {
            1.0
        };
        let mut comb = 0.0;
        for j in 0..=10 {
            let arg = (tau - j as f64 * cfg.t_rev) / cfg.t_dec;
            comb += (-arg * arg).exp();
        }
        stretch * comb
    };
    (raw(tau_free) / raw(0.0)).clamp(0.0, 1.0)
}

/// Free precession in the dark.
///
/// Transverse components rotate about z at the member detuning. Outside echo
/// sequences they damp exponentially with `t2_alpha`. Inside an echo
/// (`echo_context`) each free gap contributes the square root of the
/// collapse/revival envelope evaluated at the time elapsed since the last
/// pulse: the two gaps of a symmetric echo multiply to exactly
/// [`echo_envelope`] of the gap duration, revivals land at multiples of the
/// 13C period on the swept axis, and coherence created by a pulse rides a
/// fresh clock, so its cumulative factor never exceeds one. Longitudinal
/// components and the non-resonant population relax toward thermal with T1.
pub fn free_evolve(
    state: &mut EnsembleState,
    duration: f64,
    echo_context: bool,
    cfg: &EnsembleConfig,
) {
    if duration <= 0.0 {
        return;
    }
    let t1_factor = if cfg.t1.is_finite() {
        (-duration / cfg.t1).exp()
    } else {
        1.0
    };
    let trans_factor = if echo_context {
        let before = echo_envelope(state.elapsed_free_precession, cfg).sqrt();
        let after = echo_envelope(state.elapsed_free_precession + duration, cfg).sqrt();
        if before > 1e-150 {
            after / before
        } else {
            0.0
        }
    } else if cfg.t2_alpha.is_finite() {
        (-duration / cfg.t2_alpha).exp()
    } else {
        1.0
    };

    for m in &mut state.members {
        let angle = std::f64::consts::TAU * m.detuning_hz * duration;
        let (s, c) = angle.sin_cos();
        let (x, y) = (m.bloch[0], m.bloch[1]);
        let mut tx = (x * c - y * s) * trans_factor;
        let mut ty = (x * s + y * c) * trans_factor;
        let tz = THERMAL_Z + (m.bloch[2] - THERMAL_Z) * t1_factor;
        // Mid-gap revival ratios exceed one; the regrown coherence stays
        // inside the Bloch ball because the same gap shrank it first.
        let t2 = tx * tx + ty * ty;
        let max_t2 = (1.0 - tz * tz).max(0.0);
        if t2 > max_t2 {
            let scale = (max_t2 / t2).sqrt();
            tx *= scale;
            ty *= scale;
        }
        m.bloch = [tx, ty, tz];
    }
    state.nonresonant_p0 = THERMAL_P0 + (state.nonresonant_p0 - THERMAL_P0) * t1_factor;
    if echo_context {
        state.elapsed_free_precession += duration;
    }
}

/// Population-weighted readout factor in [0, 1]: 1 when fully polarized.
pub fn readout_weight(state: &EnsembleState, cfg: &EnsembleConfig) -> f64 {
    let resonant: f64 = state.members.iter().map(|m| m.weight * m.p0()).sum();
    cfg.resonant_fraction * resonant + (1.0 - cfg.resonant_fraction) * state.nonresonant_p0
}

/// PL level for a given readout factor.
pub fn pl_from_weight(weight: f64, cfg: &EnsembleConfig) -> f64 {
    cfg.pl_base * (1.0 + cfg.contrast_scale * (weight - 1.0))
}

/// Instantaneous photoluminescence level of the state.
pub fn pl_level(state: &EnsembleState, cfg: &EnsembleConfig) -> f64 {
    pl_from_weight(readout_weight(state, cfg), cfg)
}

/// Advance the state through `duration` of laser illumination: every
/// population relaxes toward full polarization with `tau_repol`, transverse
/// components quench with the same constant, and the echo clock resets.
pub fn laser_advance(state: &mut EnsembleState, duration: f64, cfg: &EnsembleConfig) {
    let factor = (-duration / cfg.tau_repol).exp();
    for m in &mut state.members {
        m.bloch[0] *= factor;
        m.bloch[1] *= factor;
        m.bloch[2] = 1.0 + (m.bloch[2] - 1.0) * factor;
    }
    state.nonresonant_p0 = 1.0 + (state.nonresonant_p0 - 1.0) * factor;
    state.elapsed_free_precession = 0.0;
}

/// Laser illumination with a sampled PL trace.
///
/// The readout factor relaxes exponentially toward 1, so the trace is a
/// single exponential from the entry level to the fully polarized level.
pub fn laser_evolve(
    state: &mut EnsembleState,
    duration: f64,
    dt: f64,
    cfg: &EnsembleConfig,
) -> PLTrace {
    assert!(
        duration > 0.0 && dt > 0.0,
        "laser_evolve needs positive duration and dt"
    );
    let r0 = readout_weight(state, cfg);
    let n = (duration / dt).floor() as usize + 1;
    let decay = (-dt / cfg.tau_repol).exp();
    let mut gap = r0 - 1.0;
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        samples.push(pl_from_weight(1.0 + gap, cfg));
        gap *= decay;
    }
    laser_advance(state, duration, cfg);
    PLTrace {
        t0: 0.0,
        dt,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use odmr_testkit::{bloch, dephasing};
    use proptest::prelude::*;

    const PHASE_Y: f64 = 0.0;
    const PHASE_X: f64 = std::f64::consts::FRAC_PI_2;

    fn cfg() -> EnsembleConfig {
        EnsembleConfig::default()
    }

    /// All damping channels off (including the revival comb): pure unitary
    /// evolution.
    fn lossless() -> EnsembleConfig {
        EnsembleConfig {
            t1: f64::INFINITY,
            t2_alpha: f64::INFINITY,
            t2_beta: f64::INFINITY,
            t_dec: f64::INFINITY,
            t2_rabi_ref: f64::INFINITY,
            rabi_damping_per_cycle: 0.0,
            ..cfg()
        }
    }

    fn single_line(offset: f64, sigma: f64) -> EnsembleConfig {
        EnsembleConfig {
            hyperfine_lines: vec![HyperfineLine {
                offset_hz: offset,
                weight: 1.0,
            }],
            detuning_spread_sigma_hz: sigma,
            ..lossless()
        }
    }

    #[test]
    fn stratified_allocation_splits_evenly() {
        // Zero spread makes line membership unambiguous.
        let c = EnsembleConfig {
            detuning_spread_sigma_hz: 0.0,
            ..cfg()
        };
        let state = init_ensemble(&c).unwrap();
        assert_eq!(state.members.len(), 99);
        for offset in [-2.2e6, 0.0, 2.2e6] {
            let per_line = state
                .members
                .iter()
                .filter(|m| (m.detuning_hz - offset).abs() < 1.0)
                .count();
            assert_eq!(per_line, 33);
        }
        let total: f64 = state.members.iter().map(|m| m.weight).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn init_state_is_fully_polarized_and_brightest() {
        let c = cfg();
        let state = init_ensemble(&c).unwrap();
        assert_abs_diff_eq!(pl_level(&state, &c), c.pl_base, epsilon = 1e-12);
        let mut relaxed = state.clone();
        free_evolve(&mut relaxed, 1e-3, false, &c);
        assert!(pl_level(&relaxed, &c) < pl_level(&state, &c));
    }

    #[test]
    fn zero_spread_detunings_equal_line_offset() {
        let c = single_line(1.7e6, 0.0);
        let state = init_ensemble(&c).unwrap();
        for m in &state.members {
            assert_abs_diff_eq!(m.detuning_hz, 1.7e6, epsilon = 1e-9);
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_ensemble(&cfg()).unwrap();
        let b = init_ensemble(&cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_rejected() {
        let mut c = cfg();
        c.t1 = -1.0;
        assert!(matches!(
            init_ensemble(&c),
            Err(PhysicsError::InvalidConfig { field: "t1", .. })
        ));
        let mut c = cfg();
        c.hyperfine_lines[0].weight = 0.4;
        assert!(matches!(
            init_ensemble(&c),
            Err(PhysicsError::BadHyperfineWeights { .. })
        ));
        let mut c = cfg();
        c.n_subensembles = 2;
        assert!(matches!(
            init_ensemble(&c),
            Err(PhysicsError::TooFewSubensembles(2))
        ));
    }

    #[test]
    fn rabi_frequency_matches_calibration_point() {
        let c = cfg();
        assert_abs_diff_eq!(
            rabi_frequency_from_power(14.74, &c).unwrap(),
            2.5e6,
            epsilon = 1e-3
        );
        assert_eq!(rabi_frequency_from_power(0.0, &c).unwrap(), 0.0);
        assert_abs_diff_eq!(
            rabi_frequency_from_power(4.0 * 14.74, &c).unwrap(),
            5.0e6,
            epsilon = 1e-3
        );
        assert!(rabi_frequency_from_power(-1.0, &c).is_err());
    }

    #[test]
    fn t2_rabi_matches_reference_and_decreases() {
        let c = cfg();
        assert_abs_diff_eq!(c.t2_rabi(2.5e6), 1.175e-6, epsilon = 1e-12);
        assert!(c.t2_rabi(5.0e6) < c.t2_rabi(2.5e6));
        assert!(c.t2_rabi(1.0e6) > c.t2_rabi(2.5e6));
    }

    #[test]
    fn resonant_pi_pulse_inverts() {
        let c = single_line(0.0, 0.0);
        let mut state = init_ensemble(&c).unwrap();
        let f = 2.5e6;
        apply_mw_pulse(&mut state, 1.0 / (2.0 * f), f, PHASE_Y, &c);
        for m in &state.members {
            assert_abs_diff_eq!(m.bloch[2], -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn resonant_pi2_pulse_puts_transverse() {
        let c = single_line(0.0, 0.0);
        let mut state = init_ensemble(&c).unwrap();
        let f = 2.5e6;
        apply_mw_pulse(&mut state, 1.0 / (4.0 * f), f, PHASE_Y, &c);
        for m in &state.members {
            assert_abs_diff_eq!(m.bloch[2], 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(m.bloch[0].hypot(m.bloch[1]), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn generalized_pi_at_detuning_equal_to_rabi_zeroes_z() {
        // 45-degree axis; half a generalized-Rabi period lands z exactly on 0.
        let f = 2.5e6;
        let c = single_line(f, 0.0);
        let mut state = init_ensemble(&c).unwrap();
        let omega = (2.0f64).sqrt() * f;
        apply_mw_pulse(&mut state, 1.0 / (2.0 * omega), f, PHASE_Y, &c);
        for m in &state.members {
            assert_abs_diff_eq!(m.bloch[2], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mw_pulse_matches_ode_integration() {
        // Closed-form rotation vs brute-force RK4 for assorted detunings,
        // phases, and durations.
        let cases = [
            (0.0, PHASE_Y, 180e-9),
            (1.3e6, PHASE_Y, 240e-9),
            (-2.2e6, PHASE_Y, 333e-9),
            (0.9e6, PHASE_X, 150e-9),
            (5.0e6, 1.1, 420e-9),
        ];
        let f = 2.5e6;
        for (delta, phase, duration) in cases {
            let c = single_line(delta, 0.0);
            let mut state = init_ensemble(&c).unwrap();
            apply_mw_pulse(&mut state, duration, f, phase, &c);
            let expect = bloch::integrate(
                [0.0, 0.0, 1.0],
                bloch::Drive {
                    f_rabi: f,
                    phase,
                    detuning: delta,
                },
                duration,
                40_000,
            );
            for m in &state.members {
                for k in 0..3 {
                    assert_abs_diff_eq!(m.bloch[k], expect[k], epsilon = 1e-6);
                }
            }
        }
    }

    #[test]
    fn echo_identity_returns_inverted_polarization() {
        // pi/2(y) - free(tau) - pi(x) - free(tau) - pi/2(y) with ideal
        // pulses sends z to exactly -1 for every detuning.
        use std::f64::consts::{FRAC_PI_2, PI};
        for delta_mhz in -5..=5 {
            let c = single_line(delta_mhz as f64 * 1e6, 0.0);
            let mut state = init_ensemble(&c).unwrap();
            let tau = 750e-9;
            apply_instantaneous_rotation(&mut state, PHASE_Y, FRAC_PI_2);
            free_evolve(&mut state, tau, true, &c);
            apply_instantaneous_rotation(&mut state, PHASE_X, PI);
            free_evolve(&mut state, tau, true, &c);
            apply_instantaneous_rotation(&mut state, PHASE_Y, FRAC_PI_2);
            for m in &state.members {
                assert_abs_diff_eq!(m.bloch[2], -1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn free_evolve_zero_duration_is_identity() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        apply_mw_pulse(&mut state, 100e-9, 2.5e6, PHASE_Y, &c);
        let before = state.clone();
        free_evolve(&mut state, 0.0, false, &c);
        assert_eq!(state, before);
    }

    #[test]
    fn gaussian_dephasing_matches_brute_force() {
        // Stratified ensemble average of the transverse magnitude vs the
        // 1e5-sample brute force and the analytic Gaussian envelope.
        let sigma = sigma_from_t2_star(DEFAULT_T2_STAR);
        let c = EnsembleConfig {
            n_subensembles: 300,
            ..single_line(0.0, sigma)
        };
        let mut state = init_ensemble(&c).unwrap();
        for m in &mut state.members {
            m.bloch = [1.0, 0.0, 0.0];
        }
        let step = 58e-9;
        let mut t = 0.0;
        for _ in 0..8 {
            free_evolve(&mut state, step, false, &c);
            t += step;
            let (mut x, mut y) = (0.0, 0.0);
            for m in &state.members {
                x += m.weight * m.bloch[0];
                y += m.weight * m.bloch[1];
            }
            let emp = x.hypot(y);
            let ana = dephasing::analytic_envelope(sigma, t);
            let brute = dephasing::transverse_envelope(sigma, t, 100_000, 11);
            assert_abs_diff_eq!(emp, ana, epsilon = 0.01);
            assert_abs_diff_eq!(emp, brute, epsilon = 0.012);
        }
    }

    #[test]
    fn t1_relaxation_touches_e_inverse_at_t1() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        free_evolve(&mut state, c.t1, false, &c);
        for m in &state.members {
            assert_abs_diff_eq!(
                m.bloch[2] - THERMAL_Z,
                (1.0 - THERMAL_Z) * (-1.0f64).exp(),
                epsilon = 1e-12
            );
        }
        assert_abs_diff_eq!(
            state.nonresonant_p0 - THERMAL_P0,
            0.5 * (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn thermalization_is_monotone() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        let mut prev = state.nonresonant_p0;
        for _ in 0..60 {
            free_evolve(&mut state, 1e-3, false, &c);
            assert!(state.nonresonant_p0 <= prev + 1e-15);
            assert!(state.nonresonant_p0 >= THERMAL_P0 - 1e-12);
            prev = state.nonresonant_p0;
        }
        assert_abs_diff_eq!(state.nonresonant_p0, THERMAL_P0, epsilon = 1e-4);
    }

    #[test]
    fn echo_envelope_normalized_and_revives() {
        let c = cfg();
        assert_abs_diff_eq!(echo_envelope(0.0, &c), 1.0, epsilon = 1e-12);
        // First revival: local maximum at t_rev.
        let at = echo_envelope(c.t_rev, &c);
        let left = echo_envelope(c.t_rev - c.t_dec, &c);
        let right = echo_envelope(c.t_rev + c.t_dec, &c);
        assert!(at > left && at > right, "at={at} left={left} right={right}");
        // Mid-valley is near zero for t_dec << t_rev.
        let valley = echo_envelope(c.t_rev / 2.0, &c);
        assert!(valley < 0.01, "valley = {valley}");
        for tau in [0.0, 1e-6, 10e-6, 21e-6, 100e-6] {
            let e = echo_envelope(tau, &c);
            assert!((0.0..=1.0).contains(&e));
        }
    }

    #[test]
    fn laser_pump_reaches_full_polarization() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        apply_mw_pulse(&mut state, 200e-9, 2.5e6, PHASE_Y, &c);
        free_evolve(&mut state, 3e-3, false, &c);
        laser_advance(&mut state, 10.0 * c.tau_repol, &c);
        for m in &state.members {
            assert!((1.0 - m.p0()).abs() < 5e-5);
            assert!(m.bloch[0].hypot(m.bloch[1]) < 5e-5);
        }
        assert!((1.0 - state.nonresonant_p0).abs() < 5e-5);
        assert_eq!(state.elapsed_free_precession, 0.0);
    }

    #[test]
    fn polarized_input_gives_flat_trace() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        let trace = laser_evolve(&mut state, 100e-6, 1e-6, &c);
        for s in &trace.samples {
            assert_abs_diff_eq!(*s, c.pl_base, epsilon = 1e-12);
        }
    }

    #[test]
    fn post_pulse_trace_recovers_with_tau_repol() {
        // After a pi pulse the trace rises exponentially with tau_repol.
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        apply_mw_pulse(&mut state, 200e-9, 2.5e6, PHASE_Y, &c);
        let trace = laser_evolve(&mut state, 1.5e-3, 1e-6, &c);
        let end = c.pl_base;
        let d0 = end - trace.samples[0];
        assert!(d0 > 0.0);
        let k = (c.tau_repol / trace.dt).round() as usize;
        let d1 = end - trace.samples[k];
        assert_abs_diff_eq!(d1 / d0, (-1.0f64).exp(), epsilon = 1e-3);
    }

    #[test]
    fn pl_level_examples() {
        let c = cfg();
        let mut state = init_ensemble(&c).unwrap();
        // Fully inverted resonant slice, untouched majority.
        for m in &mut state.members {
            m.bloch = [0.0, 0.0, -1.0];
        }
        let deficit = (c.pl_base - pl_level(&state, &c)) / c.pl_base;
        assert_abs_diff_eq!(
            deficit,
            c.contrast_scale * c.resonant_fraction,
            epsilon = 1e-12
        );
        // Everything thermal: global minimum.
        for m in &mut state.members {
            m.bloch = [0.0, 0.0, THERMAL_Z];
        }
        state.nonresonant_p0 = THERMAL_P0;
        assert_abs_diff_eq!(
            pl_level(&state, &c),
            c.pl_base * (1.0 - 0.5 * c.contrast_scale),
            epsilon = 1e-12
        );
    }

    proptest! {
        /// With every damping channel disabled, pulses preserve the Bloch
        /// vector norm.
        #[test]
        fn pulses_are_unitary_without_damping(
            delta_mhz in -5.0f64..5.0,
            phase in -3.1f64..3.1,
            duration_ns in 1.0f64..2000.0,
        ) {
            let c = single_line(delta_mhz * 1e6, 0.0);
            let mut state = init_ensemble(&c).unwrap();
            apply_mw_pulse(&mut state, duration_ns * 1e-9, 2.5e6, phase, &c);
            for m in &state.members {
                let norm = (m.bloch[0].powi(2) + m.bloch[1].powi(2) + m.bloch[2].powi(2)).sqrt();
                prop_assert!((norm - 1.0).abs() < 1e-9);
            }
        }

        /// Bloch vectors stay inside the unit ball through arbitrary
        /// evolution sequences, and weights are conserved.
        #[test]
        fn bloch_norm_bounded_through_random_ops(
            ops in proptest::collection::vec((0u8..3, 1.0f64..2000.0), 1..12),
        ) {
            let c = cfg();
            let mut state = init_ensemble(&c).unwrap();
            for (kind, dur_ns) in ops {
                let d = dur_ns * 1e-9;
                match kind {
                    0 => apply_mw_pulse(&mut state, d, 2.5e6, PHASE_Y, &c),
                    1 => free_evolve(&mut state, d * 100.0, true, &c),
                    _ => laser_advance(&mut state, d * 1000.0, &c),
                }
                for m in &state.members {
                    let norm = (m.bloch[0].powi(2) + m.bloch[1].powi(2) + m.bloch[2].powi(2))
                        .sqrt();
                    prop_assert!(norm <= 1.0 + 1e-9, "norm {norm}");
                }
                let total: f64 = state.members.iter().map(|m| m.weight).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&state.nonresonant_p0));
            }
        }

        /// Echo identity as a property: any detuning, any gap.
        #[test]
        fn echo_identity_property(
            delta_mhz in -5.0f64..5.0,
            tau_ns in 1.0f64..5000.0,
        ) {
            use std::f64::consts::{FRAC_PI_2, PI};
            let c = single_line(delta_mhz * 1e6, 0.0);
            let mut state = init_ensemble(&c).unwrap();
            let tau = tau_ns * 1e-9;
            apply_instantaneous_rotation(&mut state, PHASE_Y, FRAC_PI_2);
            free_evolve(&mut state, tau, true, &c);
            apply_instantaneous_rotation(&mut state, PHASE_X, PI);
            free_evolve(&mut state, tau, true, &c);
            apply_instantaneous_rotation(&mut state, PHASE_Y, FRAC_PI_2);
            for m in &state.members {
                prop_assert!((m.bloch[2] + 1.0).abs() < 1e-9);
            }
        }
    }
}
