//! The flat TOML run configuration and its mapping onto the simulator.
//!
//! Unknown keys are rejected so a misspelled field never silently falls
//! back to a default. Validation errors name the offending field.

use serde::Deserialize;

use odmr_core::acquisition::{ProtocolSpec, SweepSetup};
use odmr_core::instruments::{ApdConfig, DriftMode};
use odmr_core::nv_physics::{EnsembleConfig, HyperfineLine};
use odmr_core::pulse_seq::{ReferenceStrategy, TimingConfig};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub ensemble: EnsembleSection,
    pub instrument: InstrumentSection,
    pub timing: TimingSection,
    pub protocol: ProtocolSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub b0_field_gauss: f64,
    pub center_frequency_hz: f64,
    pub gamma_e_hz_per_gauss: f64,
    pub rabi_coefficient_hz_per_sqrt_w: f64,
    pub hyperfine_offsets_hz: Vec<f64>,
    pub hyperfine_weights: Vec<f64>,
    pub detuning_spread_sigma_hz: f64,
    pub t1_s: f64,
    pub t2_alpha_s: f64,
    pub stretch_n: f64,
    pub t2_beta_s: f64,
    pub t_rev_s: f64,
    pub t_dec_s: f64,
    pub tau_repol_s: f64,
    pub resonant_fraction: f64,
    pub contrast_scale: f64,
    pub pl_base: f64,
    pub t2_rabi_ref_s: f64,
    pub rabi_ref_frequency_hz: f64,
    pub rabi_damping_per_cycle: f64,
    pub n_subensembles: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentSection {
    pub apd: ApdSection,
    pub drift: DriftSection,
    pub scope: ScopeSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApdSection {
    pub responsivity_v_per_pl: f64,
    pub bandwidth_hz: f64,
    pub noise_sigma_v: f64,
    pub sample_rate_hz: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub step_sigma: f64,
    pub clamp: f64,
    /// "additive" or "multiplicative".
    pub mode: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScopeSection {
    /// Gap between the readout laser edge and the signal window (s).
    pub window_guard_s: f64,
    /// Record margin beyond the windows (s).
    pub record_pad_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingSection {
    pub laser_init_duration_s: f64,
    pub readout_duration_s: f64,
    pub buffer_after_laser_s: f64,
    pub compile_resolution_s: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    /// One of: rabi, ramsey, t1, echo-rephase, echo-t2, echo-revivals,
    /// repolarization.
    pub kind: String,
    pub sweep_start_s: f64,
    pub sweep_stop_s: f64,
    pub sweep_points: usize,
    /// "max-polarized" or "partial-depolarized".
    pub strategy: String,
    pub n_averages: usize,
    pub seed: u64,
    pub mw_power_w: f64,
    /// pi/2 pulse length (s); used by ramsey and the echo protocols.
    #[serde(default)]
    pub t_pi2_s: Option<f64>,
    /// pi pulse length (s); used by the echo protocols.
    #[serde(default)]
    pub t_pi_s: Option<f64>,
    /// Fixed dephasing gap (s); used by echo-rephase.
    #[serde(default)]
    pub t_dephasing_s: Option<f64>,
    /// Upper bound on worker threads; 0 means one thread per core.
    #[serde(default)]
    pub max_parallel: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
    pub emit_waveforms: bool,
}

/// The named protocols of the rig, with their registry metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolName {
    Rabi,
    Ramsey,
    T1,
    EchoRephase,
    EchoT2,
    EchoRevivals,
    Repolarization,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 7] = [
        ProtocolName::Rabi,
        ProtocolName::Ramsey,
        ProtocolName::T1,
        ProtocolName::EchoRephase,
        ProtocolName::EchoT2,
        ProtocolName::EchoRevivals,
        ProtocolName::Repolarization,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            ProtocolName::Rabi => "rabi",
            ProtocolName::Ramsey => "ramsey",
            ProtocolName::T1 => "t1",
            ProtocolName::EchoRephase => "echo-rephase",
            ProtocolName::EchoT2 => "echo-t2",
            ProtocolName::EchoRevivals => "echo-revivals",
            ProtocolName::Repolarization => "repolarization",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|p| p.label() == s)
    }

    pub fn swept_symbol(&self) -> &'static str {
        match self {
            ProtocolName::Rabi => "tau_mw",
            ProtocolName::Ramsey => "t_free",
            ProtocolName::T1 => "t_dark",
            ProtocolName::EchoRephase => "t_reph",
            ProtocolName::EchoT2 => "t_free",
            ProtocolName::EchoRevivals => "t_free",
            ProtocolName::Repolarization => "t_dark",
        }
    }

    /// The referencing strategy the template defaults to. Revival sweeps
    /// are T1-limited, where the partially depolarized reference keeps the
    /// baseline flat.
    pub fn default_strategy(&self) -> ReferenceStrategy {
        match self {
            ProtocolName::EchoRevivals => ReferenceStrategy::PartialDepolarized,
            _ => ReferenceStrategy::MaxPolarized,
        }
    }

    fn default_sweep(&self) -> (f64, f64, usize) {
        match self {
            ProtocolName::Rabi => (0.0, 2e-6, 50),
            ProtocolName::Ramsey => (0.0, 2e-6, 80),
            ProtocolName::T1 => (2e-4, 2.5e-2, 30),
            ProtocolName::EchoRephase => (0.0, 4e-6, 41),
            ProtocolName::EchoT2 => (5e-8, 1e-5, 40),
            ProtocolName::EchoRevivals => (2e-7, 2e-4, 120),
            ProtocolName::Repolarization => (3e-2, 3e-2, 2),
        }
    }
}

fn err(field: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {why}"))
}

impl RunConfig {
    /// Parse TOML, rejecting unknown keys.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn protocol_name(&self) -> Result<ProtocolName, CliError> {
        ProtocolName::parse(&self.protocol.kind).ok_or_else(|| {
            err(
                "protocol.kind",
                format!(
                    "unknown protocol {:?}; expected one of {}",
                    self.protocol.kind,
                    ProtocolName::ALL
                        .iter()
                        .map(|p| p.label())
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            )
        })
    }

    pub fn strategy(&self) -> Result<ReferenceStrategy, CliError> {
        match self.protocol.strategy.as_str() {
            "max-polarized" => Ok(ReferenceStrategy::MaxPolarized),
            "partial-depolarized" => Ok(ReferenceStrategy::PartialDepolarized),
            other => Err(err(
                "protocol.strategy",
                format!("unknown strategy {other:?}"),
            )),
        }
    }

    pub fn drift_mode(&self) -> Result<DriftMode, CliError> {
        match self.instrument.drift.mode.as_str() {
            "additive" => Ok(DriftMode::Additive),
            "multiplicative" => Ok(DriftMode::Multiplicative),
            other => Err(err(
                "instrument.drift.mode",
                format!("unknown drift mode {other:?}"),
            )),
        }
    }

    fn ensemble_config(&self) -> Result<EnsembleConfig, CliError> {
        let e = &self.ensemble;
        if e.hyperfine_offsets_hz.len() != e.hyperfine_weights.len() {
            return Err(err(
                "ensemble.hyperfine_offsets_hz",
                "offsets and weights must have the same length",
            ));
        }
        let lines = e
            .hyperfine_offsets_hz
            .iter()
            .zip(&e.hyperfine_weights)
            .map(|(&offset_hz, &weight)| HyperfineLine { offset_hz, weight })
            .collect();
        Ok(EnsembleConfig {
            b0_field_gauss: e.b0_field_gauss,
            center_frequency_hz: e.center_frequency_hz,
            gamma_e_hz_per_gauss: e.gamma_e_hz_per_gauss,
            rabi_coefficient_hz_per_sqrt_w: e.rabi_coefficient_hz_per_sqrt_w,
            hyperfine_lines: lines,
            detuning_spread_sigma_hz: e.detuning_spread_sigma_hz,
            t1: e.t1_s,
            t2_alpha: e.t2_alpha_s,
            stretch_n: e.stretch_n,
            t2_beta: e.t2_beta_s,
            t_rev: e.t_rev_s,
            t_dec: e.t_dec_s,
            tau_repol: e.tau_repol_s,
            resonant_fraction: e.resonant_fraction,
            contrast_scale: e.contrast_scale,
            pl_base: e.pl_base,
            t2_rabi_ref: e.t2_rabi_ref_s,
            rabi_ref_frequency_hz: e.rabi_ref_frequency_hz,
            rabi_damping_per_cycle: e.rabi_damping_per_cycle,
            n_subensembles: e.n_subensembles,
        })
    }

    fn protocol_spec(&self, name: ProtocolName) -> Result<ProtocolSpec, CliError> {
        let p = &self.protocol;
        let t_pi2 = || {
            p.t_pi2_s
                .ok_or_else(|| err("protocol.t_pi2_s", "required by this protocol"))
        };
        let t_pi = || {
            p.t_pi_s
                .ok_or_else(|| err("protocol.t_pi_s", "required by this protocol"))
        };
        Ok(match name {
            ProtocolName::Rabi => ProtocolSpec::Rabi,
            ProtocolName::Ramsey => ProtocolSpec::Ramsey { t_pi2: t_pi2()? },
            ProtocolName::T1 => ProtocolSpec::T1,
            ProtocolName::EchoRephase => ProtocolSpec::EchoRephase {
                t_deph: p
                    .t_dephasing_s
                    .ok_or_else(|| err("protocol.t_dephasing_s", "required by echo-rephase"))?,
                t_pi2: t_pi2()?,
                t_pi: t_pi()?,
            },
            ProtocolName::EchoT2 | ProtocolName::EchoRevivals => ProtocolSpec::EchoSymmetric {
                t_pi2: t_pi2()?,
                t_pi: t_pi()?,
            },
            ProtocolName::Repolarization => ProtocolSpec::Repolarization,
        })
    }

    /// Validate everything and assemble the sweep setup plus swept values.
    pub fn build(&self) -> Result<(SweepSetup, Vec<f64>, ProtocolName), CliError> {
        let name = self.protocol_name()?;
        let strategy = self.strategy()?;
        let drift_mode = self.drift_mode()?;
        let ensemble = self.ensemble_config()?;
        ensemble.validate().map_err(|e| err("ensemble", e))?;

        let t = &self.timing;
        let timing = TimingConfig {
            laser_init_duration: t.laser_init_duration_s,
            readout_duration: t.readout_duration_s,
            buffer_after_laser: t.buffer_after_laser_s,
            compile_resolution: t.compile_resolution_s,
        };
        timing.validate().map_err(|e| err("timing", e))?;

        let a = &self.instrument.apd;
        let apd = ApdConfig {
            responsivity_v_per_pl: a.responsivity_v_per_pl,
            bandwidth_hz: a.bandwidth_hz,
            noise_sigma_v: a.noise_sigma_v,
            sample_rate_hz: a.sample_rate_hz,
        };
        apd.validate().map_err(|e| err("instrument.apd", e))?;

        let p = &self.protocol;
        if p.sweep_points < 2 {
            return Err(err("protocol.sweep_points", "need at least 2"));
        }
        if !(p.sweep_stop_s >= p.sweep_start_s) {
            return Err(err(
                "protocol.sweep_stop_s",
                "must be at least sweep_start_s",
            ));
        }
        if p.n_averages == 0 {
            return Err(err("protocol.n_averages", "must be at least 1"));
        }
        if !(p.mw_power_w >= 0.0) {
            return Err(err("protocol.mw_power_w", "must be non-negative"));
        }
        if !(self.instrument.drift.step_sigma >= 0.0) {
            return Err(err("instrument.drift.step_sigma", "must be non-negative"));
        }
        if !(self.instrument.drift.clamp >= 0.0) {
            return Err(err("instrument.drift.clamp", "must be non-negative"));
        }

        let mut setup = SweepSetup::new(self.protocol_spec(name)?, strategy);
        setup.timing = timing;
        setup.ensemble = ensemble;
        setup.apd = apd;
        setup.drift_step_sigma = self.instrument.drift.step_sigma;
        setup.drift_clamp = self.instrument.drift.clamp;
        setup.drift_mode = drift_mode;
        setup.n_averages = p.n_averages;
        setup.seed = p.seed;
        setup.mw_power_w = p.mw_power_w;
        setup.window_guard_s = self.instrument.scope.window_guard_s;
        setup.record_pad_s = self.instrument.scope.record_pad_s;
        setup.collect_waveforms = self.output.emit_waveforms;
        setup.parallel = p.max_parallel != 1;

        let n = p.sweep_points;
        let swept: Vec<f64> = (0..n)
            .map(|i| {
                p.sweep_start_s + (p.sweep_stop_s - p.sweep_start_s) * i as f64 / (n - 1) as f64
            })
            .collect();
        Ok((setup, swept, name))
    }
}

/// Full configuration template for a protocol; parses back through
/// [`RunConfig::from_toml`] unchanged.
pub fn template(name: ProtocolName) -> String {
    let (start, stop, points) = name.default_sweep();
    let strategy = name.default_strategy().label();
    let needs_pi2 = matches!(
        name,
        ProtocolName::Ramsey
            | ProtocolName::EchoRephase
            | ProtocolName::EchoT2
            | ProtocolName::EchoRevivals
    );
    let needs_pi = matches!(
        name,
        ProtocolName::EchoRephase | ProtocolName::EchoT2 | ProtocolName::EchoRevivals
    );
    let mut protocol_extra = String::new();
    if needs_pi2 {
        protocol_extra.push_str("t_pi2_s = 1e-7\n");
    }
    if needs_pi {
        protocol_extra.push_str("t_pi_s = 2e-7\n");
    }
    if name == ProtocolName::EchoRephase {
        protocol_extra.push_str("t_dephasing_s = 2e-6\n");
    }
    format!(
        r#"[ensemble]
b0_field_gauss = 43.62
center_frequency_hz = 2748640000.0
gamma_e_hz_per_gauss = 2802500.0
rabi_coefficient_hz_per_sqrt_w = 651165.33
hyperfine_offsets_hz = [-2200000.0, 0.0, 2200000.0]
hyperfine_weights = [0.25, 0.5, 0.25]
detuning_spread_sigma_hz = 970041.6
t1_s = 0.006274
t2_alpha_s = 3.438e-6
stretch_n = 1.5
t2_beta_s = 6.812e-5
t_rev_s = 2.141551e-5
t_dec_s = 3.569252e-6
tau_repol_s = 0.00013807
resonant_fraction = 0.25
contrast_scale = 0.05
pl_base = 1.0
t2_rabi_ref_s = 1.175e-6
rabi_ref_frequency_hz = 2500000.0
rabi_damping_per_cycle = 0.1
n_subensembles = 99

[instrument.apd]
responsivity_v_per_pl = 1.0
bandwidth_hz = 2000000.0
noise_sigma_v = 0.002
sample_rate_hz = 5000000.0

[instrument.drift]
step_sigma = 0.0
clamp = 0.05
mode = "additive"

[instrument.scope]
window_guard_s = 1e-6
record_pad_s = 1e-5

[timing]
laser_init_duration_s = 0.0015
readout_duration_s = 0.0002
buffer_after_laser_s = 1e-6
compile_resolution_s = 2e-9

[protocol]
kind = "{kind}"
sweep_start_s = {start:e}
sweep_stop_s = {stop:e}
sweep_points = {points}
strategy = "{strategy}"
n_averages = 200
seed = 12345
mw_power_w = 14.74
{protocol_extra}max_parallel = 0

[output]
directory = "odmr-out"
emit_waveforms = false
"#,
        kind = name.label(),
    )
}
