//! Virtual signal chain: TTL playback through the ensemble physics, APD
//! transduction with bandwidth and noise, slow baseline drift, and a
//! digital-storage-oscilloscope emulator with edge triggering and N-cycle
//! on-board averaging.
//!
//! Everything is cycle-synchronous: one [`CycleEngine::run_cycle`] call
//! produces the APD voltage trace and the TTL trigger trace for one compiled
//! timeline period, on a sample grid that restarts at every cycle. The drift
//! offset is constant within a cycle and random-walks between cycles, which
//! is what makes same-waveform referencing immune to it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::nv_physics::{self, EnsembleConfig, EnsembleState, PLTrace, PhysicsError};
use crate::pulse_seq::{Channel, ChannelTimeline, ProtocolKind, ReferenceStrategy};
use crate::seed;

/// TTL logic-high level rendered on digital channels (V).
pub const TTL_HIGH: f64 = 5.0;

/// First sample index at or after time `t` on the cycle grid. The
/// nano-sample tolerance keeps an interval boundary that lands exactly on a
/// sample from being pushed off it by floating-point noise.
#[inline]
fn grid_ceil(t: f64, fs: f64) -> usize {
    ((t * fs) - 1e-9).ceil().max(0.0) as usize
}

/// Analog photodiode front end.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApdConfig {
    /// Volts per photoluminescence unit.
    pub responsivity_v_per_pl: f64,
    /// Single-pole low-pass bandwidth (Hz); `INFINITY` disables the filter.
    pub bandwidth_hz: f64,
    /// Additive Gaussian noise per sample (V).
    pub noise_sigma_v: f64,
    /// Sample rate of the digitized stream (Hz).
    pub sample_rate_hz: f64,
}

impl Default for ApdConfig {
    fn default() -> Self {
        Self {
            responsivity_v_per_pl: 1.0,
            bandwidth_hz: 2e6,
            noise_sigma_v: 2e-3,
            sample_rate_hz: 5e6,
        }
    }
}

impl ApdConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        for (field, v) in [
            ("responsivity_v_per_pl", self.responsivity_v_per_pl),
            ("bandwidth_hz", self.bandwidth_hz),
            ("sample_rate_hz", self.sample_rate_hz),
        ] {
            if !(v > 0.0) {
                return Err(InstrumentError::BadConfig { field, value: v });
            }
        }
        if !(self.noise_sigma_v >= 0.0) {
            return Err(InstrumentError::BadConfig {
                field: "noise_sigma_v",
                value: self.noise_sigma_v,
            });
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }
}

/// How the baseline drift couples into the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftMode {
    /// Offset adds to every sample (stray light, electronics).
    Additive,
    /// Samples scale by `1 + offset` (laser power wander).
    Multiplicative,
}

/// Bounded-random-walk baseline drift. The walk advances once per cycle and
/// is addressed by a counter, so any prefix can be recomputed independently.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftState {
    /// Current offset (V for additive mode, fractional for multiplicative).
    pub offset: f64,
    /// Walk step standard deviation per cycle.
    pub step_sigma: f64,
    /// Hard bound: |offset| <= clamp.
    pub clamp: f64,
    pub mode: DriftMode,
    /// Stream seed for the walk.
    pub seed: u64,
    /// Steps taken so far (walk position).
    pub steps_taken: u64,
}

impl DriftState {
    pub fn new(step_sigma: f64, clamp: f64, mode: DriftMode, seed: u64) -> Self {
        Self {
            offset: 0.0,
            step_sigma,
            clamp,
            mode,
            seed,
            steps_taken: 0,
        }
    }

    /// A drift that never moves.
    pub fn frozen() -> Self {
        Self::new(0.0, 0.0, DriftMode::Additive, 0)
    }

    /// Apply the drift to one sample.
    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        match self.mode {
            DriftMode::Additive => v + self.offset,
            DriftMode::Multiplicative => v * (1.0 + self.offset),
        }
    }

    /// Walk state after `n` steps from a fresh start; lets parallel workers
    /// resume the global walk at any cycle index.
    pub fn advanced_by(mut self, n: u64) -> Self {
        self.offset = 0.0;
        self.steps_taken = 0;
        for _ in 0..n {
            drift_step(&mut self, 1.0);
        }
        self
    }
}

/// One bounded random-walk step; `dt` is the elapsed interval the step
/// stands for (a cycle period) and must be positive.
pub fn drift_step(drift: &mut DriftState, dt: f64) {
    assert!(dt > 0.0, "drift_step needs a positive interval");
    let g = seed::indexed_gaussian(drift.seed, drift.steps_taken);
    drift.steps_taken += 1;
    let next = drift.offset + drift.step_sigma * g;
    drift.offset = next.clamp(-drift.clamp, drift.clamp);
}

/// Edge polarity for the scope trigger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerEdge {
    Rising,
    Falling,
}

/// Digital-storage-oscilloscope acquisition settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScopeConfig {
    /// TTL line the scope triggers from. The simulated rig taps the
    /// compiled trigger channel; hardware backends may route differently.
    pub trigger_channel: Channel,
    pub trigger_edge: TriggerEdge,
    pub trigger_level_v: f64,
    /// Dead time after an accepted trigger (s); at least the record length.
    pub holdoff_s: f64,
    /// Fraction of the record placed before the trigger, in [0, 1).
    pub pretrigger_fraction: f64,
    pub record_length: usize,
    pub sample_rate_hz: f64,
    pub n_averages: usize,
}

impl ScopeConfig {
    pub fn validate(&self) -> Result<(), InstrumentError> {
        if self.record_length == 0 {
            return Err(InstrumentError::BadConfig {
                field: "record_length",
                value: 0.0,
            });
        }
        if self.n_averages == 0 {
            return Err(InstrumentError::BadConfig {
                field: "n_averages",
                value: 0.0,
            });
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(InstrumentError::BadConfig {
                field: "sample_rate_hz",
                value: self.sample_rate_hz,
            });
        }
        if !(0.0..1.0).contains(&self.pretrigger_fraction) {
            return Err(InstrumentError::BadConfig {
                field: "pretrigger_fraction",
                value: self.pretrigger_fraction,
            });
        }
        let record_duration = self.record_length as f64 / self.sample_rate_hz;
        if self.holdoff_s < record_duration {
            return Err(InstrumentError::BadConfig {
                field: "holdoff_s (below record duration)",
                value: self.holdoff_s,
            });
        }
        Ok(())
    }

    pub fn record_duration(&self) -> f64 {
        self.record_length as f64 / self.sample_rate_hz
    }
}

/// Trigger-aligned, N-cycle-averaged voltage record.
#[derive(Debug, Clone, PartialEq)]
pub struct AveragedWaveform {
    /// Time of the first sample relative to the trigger (s).
    pub t_rel_trigger: f64,
    /// Sample spacing (s).
    pub dt: f64,
    pub samples: Vec<f64>,
    pub n_averaged: usize,
    pub strategy: ReferenceStrategy,
}

impl AveragedWaveform {
    /// Timestamp of sample `k` relative to the trigger.
    pub fn time_at(&self, k: usize) -> f64 {
        self.t_rel_trigger + k as f64 * self.dt
    }

    /// CSV export with a metadata header:
    /// `# key: value` lines, then `t_rel_trigger_s,volts` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# n_averaged: {}\n", self.n_averaged));
        out.push_str(&format!("# strategy: {}\n", self.strategy));
        out.push_str(&format!("# sample_rate_hz: {}\n", 1.0 / self.dt));
        out.push_str("t_rel_trigger_s,volts\n");
        for (k, v) in self.samples.iter().enumerate() {
            out.push_str(&format!("{},{}\n", self.time_at(k), v));
        }
        out
    }

    /// Parse the `to_csv` format.
    pub fn from_csv(text: &str) -> Result<Self, InstrumentError> {
        let mut n_averaged = None;
        let mut strategy = None;
        let mut times: Vec<f64> = Vec::new();
        let mut volts: Vec<f64> = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("n_averaged: ") {
                    n_averaged = v.trim().parse::<usize>().ok();
                } else if let Some(v) = rest.strip_prefix("strategy: ") {
                    strategy = match v.trim() {
                        "max-polarized" => Some(ReferenceStrategy::MaxPolarized),
                        "partial-depolarized" => Some(ReferenceStrategy::PartialDepolarized),
                        _ => None,
                    };
                }
                continue;
            }
            if line.starts_with("t_rel_trigger_s") || line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let t: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(InstrumentError::BadWaveformCsv)?;
            let v: f64 = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or(InstrumentError::BadWaveformCsv)?;
            times.push(t);
            volts.push(v);
        }
        if times.len() < 2 {
            return Err(InstrumentError::BadWaveformCsv);
        }
        Ok(AveragedWaveform {
            t_rel_trigger: times[0],
            dt: times[1] - times[0],
            samples: volts,
            n_averaged: n_averaged.ok_or(InstrumentError::BadWaveformCsv)?,
            strategy: strategy.ok_or(InstrumentError::BadWaveformCsv)?,
        })
    }
}

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("invalid instrument config: {field} = {value}")]
    BadConfig { field: &'static str, value: f64 },
    #[error("timeline is missing the {0} channel activity required for playback")]
    MissingChannel(Channel),
    #[error("trigger starvation: needed {needed} records, assembled {got} after {cycles} cycles")]
    TriggerStarvation {
        needed: usize,
        got: usize,
        cycles: usize,
    },
    #[error("scope sample rate {scope} Hz does not match APD stream at {apd} Hz")]
    SampleRateMismatch { apd: f64, scope: f64 },
    #[error("unparseable waveform CSV")]
    BadWaveformCsv,
    #[error(transparent)]
    Physics(#[from] PhysicsError),
}

/// APD transduction of a PL trace: responsivity scaling, single-pole
/// low-pass, then additive Gaussian noise.
pub fn apd_transduce(trace: &PLTrace, apd: &ApdConfig, seed_value: u64) -> Vec<f64> {
    let mut v: Vec<f64> = trace
        .samples
        .iter()
        .map(|pl| pl * apd.responsivity_v_per_pl)
        .collect();
    low_pass_in_place(&mut v, apd.bandwidth_hz, trace.dt);
    add_noise_in_place(&mut v, apd.noise_sigma_v, seed_value);
    v
}

fn low_pass_in_place(v: &mut [f64], bandwidth_hz: f64, dt: f64) {
    if v.is_empty() || !bandwidth_hz.is_finite() {
        return;
    }
    let alpha = 1.0 - (-std::f64::consts::TAU * bandwidth_hz * dt).exp();
    let mut y = v[0];
    for s in v.iter_mut() {
        y += alpha * (*s - y);
        *s = y;
    }
}

fn add_noise_in_place(v: &mut [f64], sigma: f64, seed_value: u64) {
    if sigma <= 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    for s in v.iter_mut() {
        *s += normal.sample(&mut rng);
    }
}

/// Indices where the configured edge crosses the trigger level, suppressing
/// crossings within the holdoff of the previous accepted trigger.
pub fn detect_trigger(samples: &[f64], cfg: &ScopeConfig) -> Vec<usize> {
    let holdoff = (cfg.holdoff_s * cfg.sample_rate_hz).round() as i64;
    let mut out = Vec::new();
    let mut last: i64 = i64::MIN / 2;
    for i in 1..samples.len() {
        let (prev, cur) = (samples[i - 1], samples[i]);
        let crossed = match cfg.trigger_edge {
            TriggerEdge::Rising => prev < cfg.trigger_level_v && cur >= cfg.trigger_level_v,
            TriggerEdge::Falling => prev > cfg.trigger_level_v && cur <= cfg.trigger_level_v,
        };
        if crossed && i as i64 - last >= holdoff {
            out.push(i);
            last = i as i64;
        }
    }
    out
}

/// Raw per-cycle output of the virtual rig.
#[derive(Debug, Clone)]
pub struct CycleOutput {
    /// APD voltage samples for one timeline period.
    pub apd_v: Vec<f64>,
    /// TTL trigger-channel samples on the same grid.
    pub trigger_v: Vec<f64>,
}

/// Anything that can produce triggered cycles for the scope.
pub trait CycleSource {
    fn next_cycle(&mut self) -> Result<CycleOutput, InstrumentError>;
    fn sample_rate_hz(&self) -> f64;
    fn strategy(&self) -> ReferenceStrategy;
}

/// Plays a compiled timeline through the ensemble physics, one cycle per
/// call. Owns no state between calls beyond what the caller passes in.
pub struct CycleEngine<'a> {
    pub timeline: &'a ChannelTimeline,
    pub ensemble: &'a EnsembleConfig,
    pub apd: &'a ApdConfig,
    /// Drive strength while the microwave switch is open (Hz).
    pub f_rabi_hz: f64,
    n_samples: usize,
}

impl<'a> CycleEngine<'a> {
    pub fn new(
        timeline: &'a ChannelTimeline,
        ensemble: &'a EnsembleConfig,
        apd: &'a ApdConfig,
        f_rabi_hz: f64,
    ) -> Result<Self, InstrumentError> {
        apd.validate()?;
        ensemble.validate()?;
        if timeline.intervals(Channel::Laser).is_empty() {
            return Err(InstrumentError::MissingChannel(Channel::Laser));
        }
        if timeline.intervals(Channel::Trigger).is_empty() {
            return Err(InstrumentError::MissingChannel(Channel::Trigger));
        }
        let n_samples = (timeline.total_period * apd.sample_rate_hz).round() as usize;
        Ok(Self {
            timeline,
            ensemble,
            apd,
            f_rabi_hz,
            n_samples,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// One timeline period: drives the physics segment by segment (laser
    /// intervals pump and emit PL, microwave intervals rotate, gaps precess),
    /// transduces PL to volts, and applies this cycle's drift offset. The
    /// drift then takes one walk step for the next cycle. Bit-deterministic
    /// for a given seed.
    pub fn run_cycle(
        &self,
        state: &mut EnsembleState,
        drift: &mut DriftState,
        cycle_seed: u64,
    ) -> CycleOutput {
        let dt = self.apd.dt();
        let fs = self.apd.sample_rate_hz;
        let n = self.n_samples;
        let mut pl = vec![0.0; n];

        let echo = self.timeline.protocol_kind == ProtocolKind::Echo;
        let mws = self.timeline.intervals(Channel::Microwave);
        let (mw_first, mw_last) = if mws.is_empty() {
            (f64::INFINITY, f64::NEG_INFINITY)
        } else {
            (mws[0].start, mws[mws.len() - 1].end)
        };
        // The echo coherence clock runs only between the first and last
        // microwave pulse, where transverse coherence exists.
        let in_echo_window =
            |t0: f64, t1: f64| echo && t0 >= mw_first - 1e-15 && t1 <= mw_last + 1e-15;

        let mut cursor = 0.0f64;
        let mut mw_idx = 0;
        for laser in self.timeline.intervals(Channel::Laser) {
            // Dark gap before this laser pulse: microwave pulses and free
            // precession; the APD sees nothing.
            while mw_idx < mws.len() && mws[mw_idx].start < laser.start {
                let mw = &mws[mw_idx];
                let gap = mw.start - cursor;
                if gap > 0.0 {
                    nv_physics::free_evolve(
                        state,
                        gap,
                        in_echo_window(cursor, mw.start),
                        self.ensemble,
                    );
                }
                nv_physics::apply_mw_pulse(
                    state,
                    mw.end - mw.start,
                    self.f_rabi_hz,
                    mw.mw_phase,
                    self.ensemble,
                );
                cursor = mw.end;
                mw_idx += 1;
            }
            let gap = laser.start - cursor;
            if gap > 0.0 {
                nv_physics::free_evolve(
                    state,
                    gap,
                    in_echo_window(cursor, laser.start),
                    self.ensemble,
                );
            }

            // Bright span: exponential repolarization of the readout factor.
            let r0 = nv_physics::readout_weight(state, self.ensemble);
            let k0 = grid_ceil(laser.start, fs);
            let k1 = grid_ceil(laser.end, fs).min(n);
            if k0 < k1 {
                let decay = (-dt / self.ensemble.tau_repol).exp();
                let mut gap_level = (r0 - 1.0)
                    * (-((k0 as f64 * dt) - laser.start) / self.ensemble.tau_repol).exp();
                for slot in &mut pl[k0..k1] {
                    *slot = nv_physics::pl_from_weight(1.0 + gap_level, self.ensemble);
                    gap_level *= decay;
                }
            }
            nv_physics::laser_advance(state, laser.end - laser.start, self.ensemble);
            cursor = laser.end;
        }
        // Trailing dark stretch, if the period extends past the last laser.
        let tail = self.timeline.total_period - cursor;
        if tail > 0.0 {
            nv_physics::free_evolve(state, tail, false, self.ensemble);
        }

        // PL -> volts -> filter -> noise -> drift.
        let mut apd_v: Vec<f64> = pl
            .iter()
            .map(|p| p * self.apd.responsivity_v_per_pl)
            .collect();
        low_pass_in_place(&mut apd_v, self.apd.bandwidth_hz, dt);
        add_noise_in_place(&mut apd_v, self.apd.noise_sigma_v, cycle_seed);
        for v in apd_v.iter_mut() {
            *v = drift.apply(*v);
        }

        // TTL trigger channel on the same grid.
        let mut trigger_v = vec![0.0; n];
        for iv in self.timeline.intervals(Channel::Trigger) {
            let k0 = grid_ceil(iv.start, fs);
            let k1 = grid_ceil(iv.end, fs).min(n);
            for slot in &mut trigger_v[k0..k1.max(k0)] {
                *slot = TTL_HIGH;
            }
        }

        drift_step(drift, self.timeline.total_period);
        CycleOutput { apd_v, trigger_v }
    }
}

/// A [`CycleSource`] wrapping a [`CycleEngine`] with its evolving ensemble
/// and drift state; per-cycle noise seeds derive from a stream seed.
pub struct SimulatedRig<'a> {
    pub engine: CycleEngine<'a>,
    pub state: EnsembleState,
    pub drift: DriftState,
    stream_seed: u64,
    cycle_index: u64,
}

impl<'a> SimulatedRig<'a> {
    pub fn new(
        engine: CycleEngine<'a>,
        drift: DriftState,
        stream_seed: u64,
    ) -> Result<Self, InstrumentError> {
        let state = nv_physics::init_ensemble(engine.ensemble)?;
        Ok(Self {
            engine,
            state,
            drift,
            stream_seed,
            cycle_index: 0,
        })
    }
}

impl CycleSource for SimulatedRig<'_> {
    fn next_cycle(&mut self) -> Result<CycleOutput, InstrumentError> {
        let seed_value = seed::derive(self.stream_seed, self.cycle_index);
        self.cycle_index += 1;
        Ok(self
            .engine
            .run_cycle(&mut self.state, &mut self.drift, seed_value))
    }

    fn sample_rate_hz(&self) -> f64 {
        self.engine.apd.sample_rate_hz
    }

    fn strategy(&self) -> ReferenceStrategy {
        self.engine.timeline.reference_strategy
    }
}

/// Stream the source through edge triggering and accumulate `n_averages`
/// trigger-aligned records into their per-sample arithmetic mean.
pub fn scope_acquire<S: CycleSource>(
    source: &mut S,
    cfg: &ScopeConfig,
) -> Result<AveragedWaveform, InstrumentError> {
    cfg.validate()?;
    if (cfg.sample_rate_hz - source.sample_rate_hz()).abs() > 1e-6 * cfg.sample_rate_hz {
        return Err(InstrumentError::SampleRateMismatch {
            apd: source.sample_rate_hz(),
            scope: cfg.sample_rate_hz,
        });
    }
    let len = cfg.record_length;
    let pre = (cfg.pretrigger_fraction * len as f64).floor() as usize;
    let holdoff = (cfg.holdoff_s * cfg.sample_rate_hz).round() as i64;

    let mut sum = vec![0.0f64; len];
    let mut n_done = 0usize;
    let mut apd: Vec<f64> = Vec::new();
    let mut trig: Vec<f64> = Vec::new();
    let mut buf_start: i64 = 0;
    let mut scan_from: i64 = 1;
    let mut last_accept: i64 = i64::MIN / 2;
    let mut pending: Vec<i64> = Vec::new();
    let mut cycles = 0usize;
    let max_cycles = cfg.n_averages.saturating_mul(3) + 8;

    while n_done < cfg.n_averages {
        if cycles >= max_cycles {
            return Err(InstrumentError::TriggerStarvation {
                needed: cfg.n_averages,
                got: n_done,
                cycles,
            });
        }
        let out = source.next_cycle()?;
        cycles += 1;
        apd.extend_from_slice(&out.apd_v);
        trig.extend_from_slice(&out.trigger_v);
        let buf_end = buf_start + apd.len() as i64;

        // Scan new samples for edge crossings.
        let start = scan_from.max(buf_start + 1);
        for g in start..buf_end {
            let i = (g - buf_start) as usize;
            let (prev, cur) = (trig[i - 1], trig[i]);
            let crossed = match cfg.trigger_edge {
                TriggerEdge::Rising => prev < cfg.trigger_level_v && cur >= cfg.trigger_level_v,
                TriggerEdge::Falling => prev > cfg.trigger_level_v && cur <= cfg.trigger_level_v,
            };
            if crossed && g - last_accept >= holdoff {
                last_accept = g;
                pending.push(g);
            }
        }
        scan_from = buf_end;

        // Extract every pending record that is fully buffered.
        pending.retain(|&g| {
            if n_done >= cfg.n_averages {
                return false;
            }
            let s0 = g - pre as i64;
            if s0 < buf_start {
                // Pre-trigger samples unavailable (first-cycle edge case).
                return false;
            }
            if s0 + len as i64 <= buf_end {
                let base = (s0 - buf_start) as usize;
                for (acc, v) in sum.iter_mut().zip(&apd[base..base + len]) {
                    *acc += v;
                }
                n_done += 1;
                return false;
            }
            true
        });

        // Trim consumed samples, keeping history for pending records and
        // the crossing scan.
        let keep_from = pending
            .iter()
            .map(|&g| g - pre as i64)
            .min()
            .unwrap_or(buf_end - 1)
            .min(buf_end - 1);
        if keep_from > buf_start {
            let drop = (keep_from - buf_start) as usize;
            apd.drain(..drop);
            trig.drain(..drop);
            buf_start = keep_from;
        }
    }

    let inv = 1.0 / n_done as f64;
    for v in sum.iter_mut() {
        *v *= inv;
    }
    Ok(AveragedWaveform {
        t_rel_trigger: -(pre as f64) / cfg.sample_rate_hz,
        dt: 1.0 / cfg.sample_rate_hz,
        samples: sum,
        n_averaged: n_done,
        strategy: source.strategy(),
    })
}

/// Narrow instrument-driver boundary so a hardware backend could stand in
/// for the simulator: configure, arm, fetch. Only the simulated backend
/// ships.
pub trait ScopeDriver {
    fn configure(&mut self, cfg: &ScopeConfig) -> Result<(), InstrumentError>;
    fn arm(&mut self) -> Result<(), InstrumentError>;
    fn fetch_averaged_waveform(&mut self) -> Result<AveragedWaveform, InstrumentError>;
}

/// The simulated scope backend.
pub struct SimulatedScope<S: CycleSource> {
    source: S,
    cfg: Option<ScopeConfig>,
    armed: bool,
}

impl<S: CycleSource> SimulatedScope<S> {
    pub fn new(source: S) -> Self {
        Self {
            source,
            cfg: None,
            armed: false,
        }
    }
}

impl<S: CycleSource> ScopeDriver for SimulatedScope<S> {
    fn configure(&mut self, cfg: &ScopeConfig) -> Result<(), InstrumentError> {
        cfg.validate()?;
        if (cfg.sample_rate_hz - self.source.sample_rate_hz()).abs() > 1e-6 * cfg.sample_rate_hz {
            return Err(InstrumentError::SampleRateMismatch {
                apd: self.source.sample_rate_hz(),
                scope: cfg.sample_rate_hz,
            });
        }
        self.cfg = Some(*cfg);
        Ok(())
    }

    fn arm(&mut self) -> Result<(), InstrumentError> {
        if self.cfg.is_none() {
            return Err(InstrumentError::BadConfig {
                field: "scope not configured",
                value: 0.0,
            });
        }
        self.armed = true;
        Ok(())
    }

    fn fetch_averaged_waveform(&mut self) -> Result<AveragedWaveform, InstrumentError> {
        let cfg = self.cfg.ok_or(InstrumentError::BadConfig {
            field: "scope not configured",
            value: 0.0,
        })?;
        if !self.armed {
            return Err(InstrumentError::BadConfig {
                field: "scope not armed",
                value: 0.0,
            });
        }
        self.armed = false;
        scope_acquire(&mut self.source, &cfg)
    }
}
