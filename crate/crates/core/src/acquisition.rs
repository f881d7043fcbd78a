//! Sweep orchestration: build, compile, and play a protocol across a swept
//! parameter, place reference/signal windows on the averaged records, and
//! compute photoluminescence contrast.
//!
//! Both same-waveform referencing strategies take their two windows from a
//! single averaged record, which is what cancels the cycle-constant drift.
//! [`serial_reference_sweep`] implements the tempting-but-flawed
//! alternative: one averaged acquisition with the microwave sequence, a
//! second without it, so the drift that accumulates between the two lands in
//! the contrast.
//!
//! Window geometry is derived from the compiled timeline: the trigger marks
//! the falling edge of the initialization pulse, the reference window is the
//! init tail (or the no-microwave half-cycle readout under the
//! partially-depolarized strategy), and the signal window opens one guard
//! after the readout laser rises.

use rayon::prelude::*;
use thiserror::Error;

use crate::analysis::{self, AnalysisError, FitReport};
use crate::instruments::{
    scope_acquire, ApdConfig, AveragedWaveform, CycleEngine, DriftMode, DriftState,
    InstrumentError, ScopeConfig, TriggerEdge,
};
use crate::nv_physics::{rabi_frequency_from_power, EnsembleConfig, PLTrace, PhysicsError};
use crate::pulse_seq::{
    self, compile, Channel, ProtocolKind, PulseSequence, ReferenceStrategy, SequenceError,
    TimingConfig,
};
use crate::seed::{derive, derive2, StableHasher};

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error("reference intensity is zero; contrast undefined")]
    ZeroReference,
    #[error("{which} window lies outside the acquired record")]
    WindowOutsideRecord { which: &'static str },
    #[error("{which} window contains no samples after discretization")]
    EmptyWindow { which: &'static str },
    #[error("reference and signal windows overlap or are inverted")]
    BadWindows,
    #[error("sweep has no points")]
    NoSweepValues,
    #[error("trace shows no decay to fit")]
    NoDecay,
    #[error("at swept value {swept:.6e} s: {source}")]
    AtPoint {
        swept: f64,
        #[source]
        source: Box<AcquisitionError>,
    },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Instrument(#[from] InstrumentError),
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

fn at_point(swept: f64, e: AcquisitionError) -> AcquisitionError {
    AcquisitionError::AtPoint {
        swept,
        source: Box::new(e),
    }
}

/// Reference and signal windows, in seconds relative to the trigger.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSpec {
    pub ref_start: f64,
    pub ref_end: f64,
    pub sig_start: f64,
    pub sig_end: f64,
}

impl WindowSpec {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let ordered = self.ref_start < self.ref_end && self.sig_start < self.sig_end;
        let disjoint = self.ref_end <= self.sig_start || self.sig_end <= self.ref_start;
        if !ordered || !disjoint {
            return Err(AcquisitionError::BadWindows);
        }
        Ok(())
    }
}

/// Percentage contrast: `(i_sig / i_ref - 1) * 100`.
pub fn contrast(i_sig: f64, i_ref: f64) -> Result<f64, AcquisitionError> {
    if i_ref == 0.0 {
        return Err(AcquisitionError::ZeroReference);
    }
    Ok((i_sig / i_ref - 1.0) * 100.0)
}

/// Arithmetic means of the samples whose timestamps fall in the half-open
/// reference and signal windows; returns `(i_ref, i_sig)`.
pub fn extract_windows(
    w: &AveragedWaveform,
    spec: &WindowSpec,
) -> Result<(f64, f64), AcquisitionError> {
    spec.validate()?;
    let record_start = w.t_rel_trigger;
    let record_end = w.t_rel_trigger + w.samples.len() as f64 * w.dt;
    let tol = 0.5 * w.dt;
    for (which, start, end) in [
        ("reference", spec.ref_start, spec.ref_end),
        ("signal", spec.sig_start, spec.sig_end),
    ] {
        if start < record_start - tol || end > record_end + tol {
            return Err(AcquisitionError::WindowOutsideRecord { which });
        }
    }
    let mean_of = |start: f64, end: f64, which: &'static str| {
        let mut sum = 0.0;
        let mut count = 0usize;
        // Tiny tolerance so boundaries landing exactly on a sample stay in.
        let k0 = (((start - record_start) / w.dt) - 1e-9).ceil().max(0.0) as usize;
        for k in k0..w.samples.len() {
            let t = w.time_at(k);
            if t >= end - 1e-9 * w.dt {
                break;
            }
            sum += w.samples[k];
            count += 1;
        }
        if count == 0 {
            return Err(AcquisitionError::EmptyWindow { which });
        }
        Ok(sum / count as f64)
    };
    let i_ref = mean_of(spec.ref_start, spec.ref_end, "reference")?;
    let i_sig = mean_of(spec.sig_start, spec.sig_end, "signal")?;
    Ok((i_ref, i_sig))
}

/// The protocols the rig knows how to sweep. Each maps a swept duration to
/// a pulse sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProtocolSpec {
    /// Sweep the microwave pulse length.
    Rabi,
    /// Sweep the free-precession gap between two pi/2 pulses.
    Ramsey { t_pi2: f64 },
    /// Sweep the dark gap between the two laser pulses.
    T1,
    /// Fixed dephasing gap, swept rephasing gap.
    EchoRephase { t_deph: f64, t_pi2: f64, t_pi: f64 },
    /// Symmetric echo: both gaps equal the swept value.
    EchoSymmetric { t_pi2: f64, t_pi: f64 },
    /// T1 layout with the readout transient flagged for export.
    Repolarization,
}

impl ProtocolSpec {
    pub fn kind(&self) -> ProtocolKind {
        match self {
            ProtocolSpec::Rabi => ProtocolKind::Rabi,
            ProtocolSpec::Ramsey { .. } => ProtocolKind::Ramsey,
            ProtocolSpec::T1 => ProtocolKind::T1,
            ProtocolSpec::EchoRephase { .. } | ProtocolSpec::EchoSymmetric { .. } => {
                ProtocolKind::Echo
            }
            ProtocolSpec::Repolarization => ProtocolKind::Repolarization,
        }
    }

    pub fn swept_symbol(&self) -> &'static str {
        match self {
            ProtocolSpec::Rabi => "tau_mw",
            ProtocolSpec::Ramsey { .. } => "t_free",
            ProtocolSpec::T1 => "t_dark",
            ProtocolSpec::EchoRephase { .. } => "t_reph",
            ProtocolSpec::EchoSymmetric { .. } => "t_free",
            ProtocolSpec::Repolarization => "t_dark",
        }
    }

    pub fn build(
        &self,
        swept: f64,
        strategy: ReferenceStrategy,
        timing: &TimingConfig,
    ) -> Result<PulseSequence, SequenceError> {
        match *self {
            ProtocolSpec::Rabi => pulse_seq::build_rabi_referenced(swept, strategy, timing),
            ProtocolSpec::Ramsey { t_pi2 } => {
                pulse_seq::build_ramsey_referenced(swept, t_pi2, strategy, timing)
            }
            ProtocolSpec::T1 => pulse_seq::build_t1_referenced(swept, strategy, timing),
            ProtocolSpec::EchoRephase {
                t_deph,
                t_pi2,
                t_pi,
            } => pulse_seq::build_echo_referenced(t_deph, swept, t_pi2, t_pi, strategy, timing),
            ProtocolSpec::EchoSymmetric { t_pi2, t_pi } => {
                pulse_seq::build_echo_referenced(swept, swept, t_pi2, t_pi, strategy, timing)
            }
            ProtocolSpec::Repolarization => pulse_seq::build_repolarization(swept, timing),
        }
    }
}

/// Everything needed to run one sweep.
#[derive(Debug, Clone)]
pub struct SweepSetup {
    pub protocol: ProtocolSpec,
    pub strategy: ReferenceStrategy,
    pub timing: TimingConfig,
    pub ensemble: EnsembleConfig,
    pub apd: ApdConfig,
    pub drift_step_sigma: f64,
    pub drift_clamp: f64,
    pub drift_mode: DriftMode,
    /// Cycles averaged per sweep point.
    pub n_averages: usize,
    /// Root seed; everything derives from it.
    pub seed: u64,
    /// Microwave power at the sample (W); sets the Rabi frequency.
    pub mw_power_w: f64,
    /// Gap between the readout laser edge and the signal window (s).
    pub window_guard_s: f64,
    /// Extra record margin beyond the windows (s).
    pub record_pad_s: f64,
    /// Keep the averaged waveforms alongside the sweep rows.
    pub collect_waveforms: bool,
    /// Run sweep points on the rayon pool. Output is identical either way.
    pub parallel: bool,
}

impl SweepSetup {
    pub fn new(protocol: ProtocolSpec, strategy: ReferenceStrategy) -> Self {
        Self {
            protocol,
            strategy,
            timing: TimingConfig::default(),
            ensemble: EnsembleConfig::default(),
            apd: ApdConfig::default(),
            drift_step_sigma: 0.0,
            drift_clamp: 0.0,
            drift_mode: DriftMode::Additive,
            n_averages: 200,
            seed: 1,
            mw_power_w: 14.74,
            window_guard_s: 1e-6,
            record_pad_s: 10e-6,
            collect_waveforms: false,
            parallel: true,
        }
    }

    /// Stable fingerprint of every field that influences the data.
    pub fn config_hash(&self) -> u64 {
        let mut h = StableHasher::new();
        h.write_str(self.protocol.swept_symbol());
        h.write_str(self.protocol.kind().label());
        if let ProtocolSpec::Ramsey { t_pi2 } = self.protocol {
            h.write_f64(t_pi2);
        }
        if let ProtocolSpec::EchoRephase {
            t_deph,
            t_pi2,
            t_pi,
        } = self.protocol
        {
            h.write_f64(t_deph);
            h.write_f64(t_pi2);
            h.write_f64(t_pi);
        }
        if let ProtocolSpec::EchoSymmetric { t_pi2, t_pi } = self.protocol {
            h.write_f64(t_pi2);
            h.write_f64(t_pi);
        }
        h.write_str(self.strategy.label());
        for v in [
            self.timing.laser_init_duration,
            self.timing.readout_duration,
            self.timing.buffer_after_laser,
            self.timing.compile_resolution,
            self.apd.responsivity_v_per_pl,
            self.apd.bandwidth_hz,
            self.apd.noise_sigma_v,
            self.apd.sample_rate_hz,
            self.drift_step_sigma,
            self.drift_clamp,
            self.mw_power_w,
            self.window_guard_s,
            self.record_pad_s,
        ] {
            h.write_f64(v);
        }
        h.write_u64(match self.drift_mode {
            DriftMode::Additive => 0,
            DriftMode::Multiplicative => 1,
        });
        let e = &self.ensemble;
        for v in [
            e.b0_field_gauss,
            e.center_frequency_hz,
            e.gamma_e_hz_per_gauss,
            e.rabi_coefficient_hz_per_sqrt_w,
            e.detuning_spread_sigma_hz,
            e.t1,
            e.t2_alpha,
            e.stretch_n,
            e.t2_beta,
            e.t_rev,
            e.t_dec,
            e.tau_repol,
            e.resonant_fraction,
            e.contrast_scale,
            e.pl_base,
            e.t2_rabi_ref,
            e.rabi_ref_frequency_hz,
            e.rabi_damping_per_cycle,
        ] {
            h.write_f64(v);
        }
        for line in &e.hyperfine_lines {
            h.write_f64(line.offset_hz);
            h.write_f64(line.weight);
        }
        h.write_usize(e.n_subensembles);
        h.write_usize(self.n_averages);
        h.write_u64(self.seed);
        h.finish()
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub swept_s: f64,
    pub i_ref_v: f64,
    pub i_sig_v: f64,
    pub contrast_pct: f64,
}

/// Results of one parameter sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub protocol: ProtocolKind,
    pub strategy: ReferenceStrategy,
    pub swept_symbol: &'static str,
    pub n_averages: usize,
    pub seed: u64,
    pub config_hash: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn swept_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.swept_s).collect()
    }

    pub fn contrasts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.contrast_pct).collect()
    }

    /// CSV export: metadata header then
    /// `swept_value_s,i_ref_v,i_sig_v,contrast_pct` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# protocol: {}\n", self.protocol));
        out.push_str(&format!("# swept_symbol: {}\n", self.swept_symbol));
        out.push_str(&format!("# strategy: {}\n", self.strategy));
        out.push_str(&format!("# n_averages: {}\n", self.n_averages));
        out.push_str(&format!("# seed: {}\n", self.seed));
        out.push_str(&format!("# config_hash: {:016x}\n", self.config_hash));
        out.push_str("swept_value_s,i_ref_v,i_sig_v,contrast_pct\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.swept_s, p.i_ref_v, p.i_sig_v, p.contrast_pct
            ));
        }
        out
    }

    /// Parse the `to_csv` format, re-checking every row against the
    /// contrast definition to 1e-12 relative.
    pub fn from_csv(text: &str) -> Result<Self, AcquisitionError> {
        let mut protocol = None;
        let mut swept_symbol: &'static str = "swept";
        let mut strategy = None;
        let mut n_averages = 0usize;
        let mut seed_value = 0u64;
        let mut config_hash = 0u64;
        let mut points = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("protocol: ") {
                    protocol = match v.trim() {
                        "rabi" => Some(ProtocolKind::Rabi),
                        "ramsey" => Some(ProtocolKind::Ramsey),
                        "t1" => Some(ProtocolKind::T1),
                        "echo" => Some(ProtocolKind::Echo),
                        "repolarization" => Some(ProtocolKind::Repolarization),
                        _ => None,
                    };
                } else if let Some(v) = rest.strip_prefix("swept_symbol: ") {
                    swept_symbol = match v.trim() {
                        "tau_mw" => "tau_mw",
                        "t_free" => "t_free",
                        "t_dark" => "t_dark",
                        "t_reph" => "t_reph",
                        _ => "swept",
                    };
                } else if let Some(v) = rest.strip_prefix("strategy: ") {
                    strategy = match v.trim() {
                        "max-polarized" => Some(ReferenceStrategy::MaxPolarized),
                        "partial-depolarized" => Some(ReferenceStrategy::PartialDepolarized),
                        _ => None,
                    };
                } else if let Some(v) = rest.strip_prefix("n_averages: ") {
                    n_averages = v.trim().parse().unwrap_or(0);
                } else if let Some(v) = rest.strip_prefix("seed: ") {
                    seed_value = v.trim().parse().unwrap_or(0);
                } else if let Some(v) = rest.strip_prefix("config_hash: ") {
                    config_hash = u64::from_str_radix(v.trim(), 16).unwrap_or(0);
                }
                continue;
            }
            if line.starts_with("swept_value_s") || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(AcquisitionError::BadWindows);
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| AcquisitionError::BadWindows);
            let p = SweepPoint {
                swept_s: parse(fields[0])?,
                i_ref_v: parse(fields[1])?,
                i_sig_v: parse(fields[2])?,
                contrast_pct: parse(fields[3])?,
            };
            let expect = contrast(p.i_sig_v, p.i_ref_v)?;
            let scale = expect.abs().max(p.contrast_pct.abs()).max(1e-300);
            if (expect - p.contrast_pct).abs() > 1e-12 * scale {
                return Err(AcquisitionError::BadWindows);
            }
            points.push(p);
        }
        Ok(SweepResult {
            protocol: protocol.ok_or(AcquisitionError::BadWindows)?,
            strategy: strategy.ok_or(AcquisitionError::BadWindows)?,
            swept_symbol,
            n_averages,
            seed: seed_value,
            config_hash,
            points,
        })
    }
}

/// Sweep output with optional per-point waveforms.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub result: SweepResult,
    pub waveforms: Vec<AveragedWaveform>,
}

/// Per-point acquisition geometry derived from the compiled timeline.
struct PointPlan {
    timeline: crate::pulse_seq::ChannelTimeline,
    windows: WindowSpec,
    scope: ScopeConfig,
}

fn plan_point(
    setup: &SweepSetup,
    swept: f64,
    strategy: ReferenceStrategy,
    mw_free_reference: bool,
) -> Result<PointPlan, AcquisitionError> {
    let seq = if mw_free_reference {
        // Serial-mode reference: identical timing with the microwaves
        // stripped, realized as a T1 layout over the same dark window.
        let with_mw = setup.protocol.build(swept, strategy, &setup.timing)?;
        let p = with_mw.total_period();
        let laser = setup.timing.laser_init_duration;
        let dark = match strategy {
            ReferenceStrategy::MaxPolarized => p - 2.0 * laser,
            ReferenceStrategy::PartialDepolarized => (p - laser) / 2.0 - laser,
        };
        pulse_seq::build_t1_referenced(dark.max(0.0), strategy, &setup.timing)?
    } else {
        setup.protocol.build(swept, strategy, &setup.timing)?
    };
    let timeline = compile(&seq, &setup.timing)?;

    let fs = setup.apd.sample_rate_hz;
    let readout = setup.timing.readout_duration;
    let laser = setup.timing.laser_init_duration;
    let guard = setup.window_guard_s;
    let pad = setup.record_pad_s;
    let period = timeline.total_period;

    // Dark-window length from the period, immune to laser-interval merging.
    let (windows, record_end) = match strategy {
        ReferenceStrategy::MaxPolarized => {
            let dark = (period - 2.0 * laser).max(0.0);
            let w = WindowSpec {
                ref_start: -readout,
                ref_end: 0.0,
                sig_start: dark + guard,
                sig_end: dark + guard + readout,
            };
            (w, dark + guard + readout + pad)
        }
        ReferenceStrategy::PartialDepolarized => {
            let half = (period - laser) / 2.0;
            let dark = (half - laser).max(0.0);
            let w = WindowSpec {
                sig_start: dark + guard,
                sig_end: dark + guard + readout,
                ref_start: half + dark + guard,
                ref_end: half + dark + guard + readout,
            };
            (w, half + dark + guard + readout + pad)
        }
    };

    let pre = readout + pad;
    let record_length = ((pre + record_end) * fs).ceil() as usize;
    let scope = ScopeConfig {
        trigger_channel: Channel::Trigger,
        trigger_edge: TriggerEdge::Rising,
        trigger_level_v: 0.5 * crate::instruments::TTL_HIGH,
        holdoff_s: record_length as f64 / fs,
        pretrigger_fraction: pre / (pre + record_end),
        record_length,
        sample_rate_hz: fs,
        n_averages: setup.n_averages,
    };
    Ok(PointPlan {
        timeline,
        windows,
        scope,
    })
}

/// Acquire one averaged waveform for a planned point, with the drift walk
/// joined at `drift_cycle_base` and noise drawn from `noise_seed`.
fn acquire_point(
    setup: &SweepSetup,
    plan: &PointPlan,
    f_rabi: f64,
    noise_seed: u64,
    drift_cycle_base: u64,
) -> Result<AveragedWaveform, AcquisitionError> {
    let drift = DriftState::new(
        setup.drift_step_sigma,
        setup.drift_clamp,
        setup.drift_mode,
        derive(setup.seed, 0xD21F),
    )
    .advanced_by(drift_cycle_base);
    let engine = CycleEngine::new(&plan.timeline, &setup.ensemble, &setup.apd, f_rabi)?;
    let mut rig = crate::instruments::SimulatedRig::new(engine, drift, noise_seed)?;
    Ok(scope_acquire(&mut rig, &plan.scope)?)
}

fn point_result(
    setup: &SweepSetup,
    swept: f64,
    index: usize,
) -> Result<(SweepPoint, AveragedWaveform), AcquisitionError> {
    let f_rabi = rabi_frequency_from_power(setup.mw_power_w, &setup.ensemble)?;
    let plan = plan_point(setup, swept, setup.strategy, false)?;
    let waveform = acquire_point(
        setup,
        &plan,
        f_rabi,
        derive2(setup.seed, 1, index as u64),
        index as u64 * setup.n_averages as u64,
    )?;
    let (i_ref, i_sig) = extract_windows(&waveform, &plan.windows)?;
    let c = contrast(i_sig, i_ref)?;
    Ok((
        SweepPoint {
            swept_s: swept,
            i_ref_v: i_ref,
            i_sig_v: i_sig,
            contrast_pct: c,
        },
        waveform,
    ))
}

/// Run a sweep: for each value, build, validate, compile, average
/// `n_averages` cycles, window, and compute contrast. Sweep points are
/// independent streams; parallel and serial execution give identical
/// results.
pub fn run_sweep(setup: &SweepSetup, swept: &[f64]) -> Result<SweepOutput, AcquisitionError> {
    if swept.is_empty() {
        return Err(AcquisitionError::NoSweepValues);
    }
    setup.ensemble.validate()?;

    let run_one = |(i, &v): (usize, &f64)| point_result(setup, v, i).map_err(|e| at_point(v, e));
    let collected: Result<Vec<_>, _> = if setup.parallel {
        swept.par_iter().enumerate().map(run_one).collect()
    } else {
        swept.iter().enumerate().map(run_one).collect()
    };
    let collected = collected?;

    let mut points = Vec::with_capacity(collected.len());
    let mut waveforms = Vec::new();
    for (p, w) in collected {
        points.push(p);
        if setup.collect_waveforms {
            waveforms.push(w);
        }
    }
    Ok(SweepOutput {
        result: SweepResult {
            protocol: setup.protocol.kind(),
            strategy: setup.strategy,
            swept_symbol: setup.protocol.swept_symbol(),
            n_averages: setup.n_averages,
            seed: setup.seed,
            config_hash: setup.config_hash(),
            points,
        },
        waveforms,
    })
}

/// The drift-vulnerable serial variant: per point, one averaged acquisition
/// with the microwave sequence and a second without it, temporally after
/// the first. The signal window of each acquisition supplies i_sig and
/// i_ref respectively.
pub fn serial_reference_sweep(
    setup: &SweepSetup,
    swept: &[f64],
) -> Result<SweepOutput, AcquisitionError> {
    if swept.is_empty() {
        return Err(AcquisitionError::NoSweepValues);
    }
    setup.ensemble.validate()?;

    let run_one = |(i, &v): (usize, &f64)| -> Result<SweepPoint, AcquisitionError> {
        let inner = || -> Result<SweepPoint, AcquisitionError> {
            let f_rabi = rabi_frequency_from_power(setup.mw_power_w, &setup.ensemble)?;
            let base = 2 * i as u64 * setup.n_averages as u64;
            let plan_sig = plan_point(setup, v, setup.strategy, false)?;
            let with_mw = acquire_point(
                setup,
                &plan_sig,
                f_rabi,
                derive2(setup.seed, 3, 2 * i as u64),
                base,
            )?;
            let plan_ref = plan_point(setup, v, setup.strategy, true)?;
            let without_mw = acquire_point(
                setup,
                &plan_ref,
                f_rabi,
                derive2(setup.seed, 3, 2 * i as u64 + 1),
                base + setup.n_averages as u64,
            )?;
            // Same window position in both acquisitions.
            let sig_only = WindowSpec {
                ref_start: plan_sig.windows.ref_start,
                ref_end: plan_sig.windows.ref_end,
                sig_start: plan_sig.windows.sig_start,
                sig_end: plan_sig.windows.sig_end,
            };
            let (_, i_sig) = extract_windows(&with_mw, &sig_only)?;
            let (_, i_ref) = extract_windows(&without_mw, &sig_only)?;
            let c = contrast(i_sig, i_ref)?;
            Ok(SweepPoint {
                swept_s: v,
                i_ref_v: i_ref,
                i_sig_v: i_sig,
                contrast_pct: c,
            })
        };
        inner().map_err(|e| at_point(v, e))
    };

    let points: Result<Vec<_>, _> = if setup.parallel {
        swept.par_iter().enumerate().map(run_one).collect()
    } else {
        swept.iter().enumerate().map(run_one).collect()
    };
    Ok(SweepOutput {
        result: SweepResult {
            protocol: setup.protocol.kind(),
            strategy: setup.strategy,
            swept_symbol: setup.protocol.swept_symbol(),
            n_averages: setup.n_averages,
            seed: setup.seed,
            config_hash: setup.config_hash(),
            points: points?,
        },
        waveforms: Vec::new(),
    })
}

/// Repolarization measurement output.
#[derive(Debug, Clone)]
pub struct RepolarizationResult {
    /// Averaged readout transient, volts vs seconds from the laser edge.
    pub trace: PLTrace,
    pub fit: FitReport,
}

/// Run the repolarization protocol, export the averaged readout transient,
/// and fit its single-exponential recovery.
pub fn measure_repolarization(
    setup: &SweepSetup,
    t_dark: f64,
) -> Result<RepolarizationResult, AcquisitionError> {
    let seq = pulse_seq::build_repolarization(t_dark, &setup.timing)?;
    let timeline = compile(&seq, &setup.timing)?;
    let fs = setup.apd.sample_rate_hz;
    let laser = setup.timing.laser_init_duration;
    let period = timeline.total_period;
    let dark = (period - 2.0 * laser).max(0.0);

    // Record the whole readout pulse (the transient spans ~10 tau_repol).
    let pre = setup.record_pad_s;
    let record_end = dark + laser;
    let record_length = ((pre + record_end) * fs).ceil() as usize;
    let scope = ScopeConfig {
        trigger_channel: Channel::Trigger,
        trigger_edge: TriggerEdge::Rising,
        trigger_level_v: 0.5 * crate::instruments::TTL_HIGH,
        holdoff_s: record_length as f64 / fs,
        pretrigger_fraction: pre / (pre + record_end),
        record_length,
        sample_rate_hz: fs,
        n_averages: setup.n_averages,
    };
    let plan = PointPlan {
        timeline,
        windows: WindowSpec {
            ref_start: -1.0,
            ref_end: 0.0,
            sig_start: 1.0,
            sig_end: 2.0,
        },
        scope,
    };
    let waveform = acquire_point(setup, &plan, 0.0, derive(setup.seed, 0x5E9), 0)?;

    // Cut the readout span: from one guard after the laser rises to the end
    // of the laser pulse.
    let start = dark + setup.window_guard_s;
    let end = dark + laser - setup.record_pad_s;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &v) in waveform.samples.iter().enumerate() {
        let t = waveform.time_at(k);
        if t >= start && t < end {
            xs.push(t - start);
            ys.push(v);
        }
    }
    if xs.len() < 8 {
        return Err(AcquisitionError::EmptyWindow { which: "readout" });
    }

    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    if hi - lo < 1e-9 * (mean.abs() + 1.0) {
        return Err(AcquisitionError::NoDecay);
    }
    let fit = analysis::fit_repolarization(&xs, &ys)?;
    let amplitude = fit.value("a").unwrap_or(0.0);
    if amplitude.abs() < 1e-6 * (hi - lo) {
        return Err(AcquisitionError::NoDecay);
    }

    let trace = PLTrace {
        t0: 0.0,
        dt: waveform.dt,
        samples: ys,
    };
    Ok(RepolarizationResult { trace, fit })
}
