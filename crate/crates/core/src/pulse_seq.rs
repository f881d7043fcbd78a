//! Pulse protocol construction, validation, and compilation.
//!
//! Protocols are built as symbolic [`PulseSequence`]s (ordered segments on the
//! laser, microwave, and trigger channels) and compiled into quantized
//! per-channel edge lists ([`ChannelTimeline`]) that the virtual instruments
//! play back.
//!
//! Layout conventions shared by all builders:
//!
//! - A cycle starts with the initialization laser pulse and ends with the
//!   readout laser pulse. The readout pulse is emitted as one full-length
//!   laser-high interval: when cycles repeat back to back it doubles as the
//!   next cycle's initialization.
//! - Microwave activity sits in the dark gap between the two laser pulses,
//!   one buffer after the falling laser edge.
//! - The trigger channel carries one TTL pulse rising at the falling edge of
//!   the first laser pulse. Under the partially-depolarized reference the
//!   sequence holds two full init/readout cycles (the second without
//!   microwaves) and the single trigger pulse marks the pair period.

use std::fmt;

use thiserror::Error;

/// Default edge quantization step for [`compile`]: 2 ns, a tenth of the
/// shortest pulse in routine use.
pub const DEFAULT_COMPILE_RESOLUTION: f64 = 2e-9;

/// Global timing parameters shared by every protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    /// Length of the initialization / readout laser pulse (s).
    pub laser_init_duration: f64,
    /// Portion of the laser pulse treated as the readout window (s).
    pub readout_duration: f64,
    /// Dark buffer between the falling laser edge and the first microwave
    /// pulse (s); lets the singlet shelf empty before driving.
    pub buffer_after_laser: f64,
    /// Edge quantization step for compilation (s).
    pub compile_resolution: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            laser_init_duration: 1.5e-3,
            readout_duration: 200e-6,
            buffer_after_laser: 1e-6,
            compile_resolution: DEFAULT_COMPILE_RESOLUTION,
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<(), SequenceError> {
        for (name, v) in [
            ("laser_init_duration", self.laser_init_duration),
            ("readout_duration", self.readout_duration),
            ("buffer_after_laser", self.buffer_after_laser),
            ("compile_resolution", self.compile_resolution),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SequenceError::InvalidTiming {
                    field: name,
                    value: v,
                });
            }
        }
        if self.readout_duration > self.laser_init_duration {
            return Err(SequenceError::InvalidTiming {
                field: "readout_duration (exceeds laser_init_duration)",
                value: self.readout_duration,
            });
        }
        Ok(())
    }
}

/// Output channels of the TTL generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Channel {
    Laser,
    Microwave,
    Trigger,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Laser, Channel::Microwave, Channel::Trigger];

    pub fn label(&self) -> &'static str {
        match self {
            Channel::Laser => "laser",
            Channel::Microwave => "microwave",
            Channel::Trigger => "trigger",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolKind {
    Rabi,
    Ramsey,
    T1,
    Echo,
    Repolarization,
}

impl ProtocolKind {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolKind::Rabi => "rabi",
            ProtocolKind::Ramsey => "ramsey",
            ProtocolKind::T1 => "t1",
            ProtocolKind::Echo => "echo",
            ProtocolKind::Repolarization => "repolarization",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How the reference photoluminescence level is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReferenceStrategy {
    /// Reference window in the tail of the initialization pulse, where the
    /// ensemble is fully polarized.
    MaxPolarized,
    /// Reference readout from an interleaved second cycle without microwaves,
    /// capturing the longitudinal depolarization of the whole ensemble.
    PartialDepolarized,
}

impl ReferenceStrategy {
    pub fn label(&self) -> &'static str {
        match self {
            ReferenceStrategy::MaxPolarized => "max-polarized",
            ReferenceStrategy::PartialDepolarized => "partial-depolarized",
        }
    }
}

impl fmt::Display for ReferenceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One contiguous high interval on a channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub channel: Channel,
    /// Start time from the beginning of the sequence (s).
    pub start: f64,
    /// Length of the high interval (s).
    pub duration: f64,
    /// Rotating-frame drive phase (rad); meaningful on the microwave channel
    /// only. Phase 0 drives about the y axis.
    pub mw_phase: f64,
}

impl Segment {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// A symbolic pulse protocol: what the TTL generator should play each cycle.
#[derive(Debug, Clone)]
pub struct PulseSequence {
    pub protocol_kind: ProtocolKind,
    pub segments: Vec<Segment>,
    pub reference_strategy: ReferenceStrategy,
    /// Name of the duration being swept by the enclosing experiment.
    pub swept_symbol: &'static str,
    /// Repolarization protocol: the intra-readout PL trace is the analyzed
    /// object and gets exported.
    pub export_readout_trace: bool,
    /// Non-fatal construction diagnostics (e.g. pi pulse not twice pi/2).
    pub warnings: Vec<String>,
}

impl PulseSequence {
    /// Sum of segment starts+durations: the cycle period when played
    /// back to back.
    pub fn total_period(&self) -> f64 {
        self.segments.iter().map(Segment::end).fold(0.0, f64::max)
    }

    pub fn segments_on(&self, channel: Channel) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.channel == channel)
    }

    /// Total requested on-time of a channel, before quantization.
    pub fn on_time(&self, channel: Channel) -> f64 {
        self.segments_on(channel).map(|s| s.duration).sum()
    }

    /// `[first microwave start, last microwave end]`, if any drive exists.
    pub fn mw_window(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for s in self.segments_on(Channel::Microwave) {
            lo = lo.min(s.start);
            hi = hi.max(s.end());
        }
        (hi >= lo).then_some((lo, hi))
    }
}

/// A single invariant violation found by [`validate`]. Violations are data,
/// not errors: an empty list means the sequence is well formed.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonPositiveDuration {
        channel: Channel,
        start: f64,
    },
    SameChannelOverlap {
        channel: Channel,
        at: f64,
    },
    MicrowaveDuringLaser {
        at: f64,
    },
    /// Partially-depolarized sequences need two full init/readout cycles
    /// (three laser pulses when readout doubles as init).
    MissingSecondCycle,
    /// The second (reference) cycle must not contain microwave segments.
    MicrowaveInReferenceCycle {
        at: f64,
    },
    /// Partially-depolarized sequences need exactly one trigger pulse
    /// marking the pair period.
    BadTriggerCount {
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonPositiveDuration { channel, start } => {
                write!(
                    f,
                    "{channel} segment at {start:.3e} s has non-positive duration"
                )
            }
            Violation::SameChannelOverlap { channel, at } => {
                write!(f, "{channel} segments overlap at {at:.3e} s")
            }
            Violation::MicrowaveDuringLaser { at } => {
                write!(
                    f,
                    "microwave segment intersects laser-on interval at {at:.3e} s"
                )
            }
            Violation::MissingSecondCycle => {
                write!(
                    f,
                    "partially-depolarized sequence lacks the second init/readout cycle"
                )
            }
            Violation::MicrowaveInReferenceCycle { at } => {
                write!(
                    f,
                    "microwave segment at {at:.3e} s lies in the reference half-cycle"
                )
            }
            Violation::BadTriggerCount { found } => {
                write!(
                    f,
                    "expected exactly one trigger pulse per pair period, found {found}"
                )
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("negative duration for {field}: {value:.3e} s")]
    NegativeDuration { field: &'static str, value: f64 },
    #[error("non-positive duration for {field}: {value:.3e} s")]
    NonPositiveDuration { field: &'static str, value: f64 },
    #[error("invalid timing config: {field} = {value:.3e}")]
    InvalidTiming { field: &'static str, value: f64 },
    #[error("sequence fails validation: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("{channel} segment of {duration:.3e} s rounds to zero ticks at resolution {resolution:.3e} s")]
    SegmentBelowResolution {
        channel: Channel,
        duration: f64,
        resolution: f64,
    },
    #[error("edge list parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

fn check_nonneg(field: &'static str, value: f64) -> Result<(), SequenceError> {
    if value < 0.0 || !value.is_finite() {
        return Err(SequenceError::NegativeDuration { field, value });
    }
    Ok(())
}

fn check_pos(field: &'static str, value: f64) -> Result<(), SequenceError> {
    if !(value > 0.0) || !value.is_finite() {
        return Err(SequenceError::NonPositiveDuration { field, value });
    }
    Ok(())
}

/// One step of the dark-window layout between the two laser pulses.
#[derive(Debug, Clone, Copy)]
enum LayoutStep {
    Gap(f64),
    Pulse { duration: f64, phase: f64 },
}

/// Drive phases: 0 selects the y axis of the rotating frame; `PHASE_X`
/// (pi/2) the x axis. The refocusing pulse of the echo protocol drives about
/// x so that a perfect echo returns the polarization to the inverted state.
pub const PHASE_Y: f64 = 0.0;
pub const PHASE_X: f64 = std::f64::consts::FRAC_PI_2;

/// Shared assembly: laser pulse, dark window laid out by walking a time
/// cursor through the steps, readout laser pulse; duplicated without
/// microwaves for the partially-depolarized reference. The cursor makes
/// abutting boundaries bit-identical rather than one ulp apart.
fn assemble(
    kind: ProtocolKind,
    steps: &[LayoutStep],
    strategy: ReferenceStrategy,
    timing: &TimingConfig,
    swept_symbol: &'static str,
    export_readout_trace: bool,
    warnings: Vec<String>,
) -> PulseSequence {
    let laser = timing.laser_init_duration;
    let trigger_width = timing.buffer_after_laser;

    let mut segments = Vec::new();
    // Initialization pulse and the trigger marking its falling edge.
    segments.push(Segment {
        channel: Channel::Laser,
        start: 0.0,
        duration: laser,
        mw_phase: 0.0,
    });
    segments.push(Segment {
        channel: Channel::Trigger,
        start: laser,
        duration: trigger_width,
        mw_phase: 0.0,
    });

    let mut cursor = laser;
    for step in steps {
        match *step {
            LayoutStep::Gap(g) => cursor += g,
            LayoutStep::Pulse { duration, phase } => {
                if duration > 0.0 {
                    segments.push(Segment {
                        channel: Channel::Microwave,
                        start: cursor,
                        duration,
                        mw_phase: phase,
                    });
                }
                cursor += duration;
            }
        }
    }
    let dark_window = cursor - laser;

    // Readout pulse (doubles as the next initialization).
    segments.push(Segment {
        channel: Channel::Laser,
        start: cursor,
        duration: laser,
        mw_phase: 0.0,
    });
    cursor += laser;

    if strategy == ReferenceStrategy::PartialDepolarized {
        // Second init/readout cycle with the same dark window, no
        // microwaves.
        cursor += dark_window;
        segments.push(Segment {
            channel: Channel::Laser,
            start: cursor,
            duration: laser,
            mw_phase: 0.0,
        });
    }

    PulseSequence {
        protocol_kind: kind,
        segments,
        reference_strategy: strategy,
        swept_symbol,
        export_readout_trace,
        warnings,
    }
}

/// Rabi protocol: one microwave pulse of variable length after the buffer.
pub fn build_rabi(tau_mw: f64, timing: &TimingConfig) -> Result<PulseSequence, SequenceError> {
    build_rabi_referenced(tau_mw, ReferenceStrategy::MaxPolarized, timing)
}

pub fn build_rabi_referenced(
    tau_mw: f64,
    strategy: ReferenceStrategy,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    timing.validate()?;
    check_nonneg("tau_mw", tau_mw)?;
    let steps = [
        LayoutStep::Gap(timing.buffer_after_laser),
        LayoutStep::Pulse {
            duration: tau_mw,
            phase: PHASE_Y,
        },
    ];
    Ok(assemble(
        ProtocolKind::Rabi,
        &steps,
        strategy,
        timing,
        "tau_mw",
        false,
        Vec::new(),
    ))
}

/// Ramsey protocol: pi/2 - free precession - pi/2.
pub fn build_ramsey(
    t_free: f64,
    t_pi2: f64,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    build_ramsey_referenced(t_free, t_pi2, ReferenceStrategy::MaxPolarized, timing)
}

pub fn build_ramsey_referenced(
    t_free: f64,
    t_pi2: f64,
    strategy: ReferenceStrategy,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    timing.validate()?;
    check_nonneg("t_free", t_free)?;
    check_pos("t_pi2", t_pi2)?;
    let steps = [
        LayoutStep::Gap(timing.buffer_after_laser),
        LayoutStep::Pulse {
            duration: t_pi2,
            phase: PHASE_Y,
        },
        LayoutStep::Gap(t_free),
        LayoutStep::Pulse {
            duration: t_pi2,
            phase: PHASE_Y,
        },
    ];
    Ok(assemble(
        ProtocolKind::Ramsey,
        &steps,
        strategy,
        timing,
        "t_free",
        false,
        Vec::new(),
    ))
}

/// All-optical T1 protocol: two laser pulses separated by a variable dark gap.
pub fn build_t1(t_dark: f64, timing: &TimingConfig) -> Result<PulseSequence, SequenceError> {
    build_t1_referenced(t_dark, ReferenceStrategy::MaxPolarized, timing)
}

pub fn build_t1_referenced(
    t_dark: f64,
    strategy: ReferenceStrategy,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    timing.validate()?;
    check_nonneg("t_dark", t_dark)?;
    Ok(assemble(
        ProtocolKind::T1,
        &[LayoutStep::Gap(t_dark)],
        strategy,
        timing,
        "t_dark",
        false,
        Vec::new(),
    ))
}

/// Hahn echo: pi/2 - dephasing gap - pi - rephasing gap - pi/2, with a buffer
/// on both sides of the microwave block. The pi/2 pulses drive about y, the
/// refocusing pi pulse about x, so a perfect echo inverts the polarization.
pub fn build_echo(
    t_deph: f64,
    t_reph: f64,
    t_pi2: f64,
    t_pi: f64,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    build_echo_referenced(
        t_deph,
        t_reph,
        t_pi2,
        t_pi,
        ReferenceStrategy::MaxPolarized,
        timing,
    )
}

pub fn build_echo_referenced(
    t_deph: f64,
    t_reph: f64,
    t_pi2: f64,
    t_pi: f64,
    strategy: ReferenceStrategy,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    timing.validate()?;
    check_nonneg("t_deph", t_deph)?;
    check_nonneg("t_reph", t_reph)?;
    check_pos("t_pi2", t_pi2)?;
    check_pos("t_pi", t_pi)?;
    let mut warnings = Vec::new();
    if ((t_pi - 2.0 * t_pi2) / t_pi).abs() > 1e-9 {
        warnings.push(format!(
            "t_pi = {t_pi:.3e} s is not twice t_pi2 = {t_pi2:.3e} s"
        ));
    }
    let b = timing.buffer_after_laser;
    // Symmetric buffer between the last pulse and the readout laser edge.
    let steps = [
        LayoutStep::Gap(b),
        LayoutStep::Pulse {
            duration: t_pi2,
            phase: PHASE_Y,
        },
        LayoutStep::Gap(t_deph),
        LayoutStep::Pulse {
            duration: t_pi,
            phase: PHASE_X,
        },
        LayoutStep::Gap(t_reph),
        LayoutStep::Pulse {
            duration: t_pi2,
            phase: PHASE_Y,
        },
        LayoutStep::Gap(b),
    ];
    Ok(assemble(
        ProtocolKind::Echo,
        &steps,
        strategy,
        timing,
        "t_reph",
        false,
        warnings,
    ))
}

/// Same layout as the T1 protocol but flags the readout PL trace for export;
/// the analyzed object is the intra-readout repolarization transient.
pub fn build_repolarization(
    t_dark: f64,
    timing: &TimingConfig,
) -> Result<PulseSequence, SequenceError> {
    timing.validate()?;
    check_nonneg("t_dark", t_dark)?;
    Ok(assemble(
        ProtocolKind::Repolarization,
        &[LayoutStep::Gap(t_dark)],
        ReferenceStrategy::MaxPolarized,
        timing,
        "t_dark",
        true,
        Vec::new(),
    ))
}

/// Sub-femtosecond intersections are floating-point representation noise,
/// not physical overlap.
const OVERLAP_EPS: f64 = 1e-15;

fn overlap(a: &Segment, b: &Segment) -> bool {
    a.start < b.end() - OVERLAP_EPS && b.start < a.end() - OVERLAP_EPS
}

/// Check every sequence invariant; an empty list means the sequence is valid.
pub fn validate(seq: &PulseSequence) -> Vec<Violation> {
    let mut violations = Vec::new();

    for s in &seq.segments {
        if !(s.duration > 0.0) {
            violations.push(Violation::NonPositiveDuration {
                channel: s.channel,
                start: s.start,
            });
        }
    }

    // Same-channel overlap (abutting segments are fine).
    for channel in Channel::ALL {
        let mut on: Vec<&Segment> = seq.segments_on(channel).collect();
        on.sort_by(|a, b| a.start.total_cmp(&b.start));
        for pair in on.windows(2) {
            if overlap(pair[0], pair[1]) {
                violations.push(Violation::SameChannelOverlap {
                    channel,
                    at: pair[1].start,
                });
            }
        }
    }

    // Microwave segments must not intersect any laser-on interval.
    for mw in seq.segments_on(Channel::Microwave) {
        for laser in seq.segments_on(Channel::Laser) {
            if overlap(mw, laser) {
                violations.push(Violation::MicrowaveDuringLaser { at: mw.start });
            }
        }
    }

    if seq.reference_strategy == ReferenceStrategy::PartialDepolarized {
        let lasers: Vec<&Segment> = {
            let mut v: Vec<&Segment> = seq.segments_on(Channel::Laser).collect();
            v.sort_by(|a, b| a.start.total_cmp(&b.start));
            v
        };
        if lasers.len() < 3 {
            violations.push(Violation::MissingSecondCycle);
        } else {
            // Reference half: from the middle laser's end onward.
            let mid_end = lasers[lasers.len() / 2].end();
            for mw in seq.segments_on(Channel::Microwave) {
                if mw.start >= mid_end {
                    violations.push(Violation::MicrowaveInReferenceCycle { at: mw.start });
                }
            }
        }
        let triggers = seq.segments_on(Channel::Trigger).count();
        if triggers != 1 {
            violations.push(Violation::BadTriggerCount { found: triggers });
        }
    }

    violations
}

/// Signal level on a digital channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Low,
    High,
}

impl Level {
    pub fn label(&self) -> &'static str {
        match self {
            Level::Low => "low",
            Level::High => "high",
        }
    }
}

/// One transition on a digital channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    /// Time from cycle start (s), quantized to the compile resolution.
    pub time: f64,
    /// Level the channel assumes at `time`.
    pub level: Level,
}

/// A quantized high interval; microwave intervals keep their drive phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub mw_phase: f64,
}

/// Compiled per-channel timeline: the playback unit of the virtual rig.
#[derive(Debug, Clone)]
pub struct ChannelTimeline {
    pub protocol_kind: ProtocolKind,
    pub reference_strategy: ReferenceStrategy,
    /// Cycle period when played back to back (s), quantized.
    pub total_period: f64,
    /// Quantization step used at compile time (s).
    pub resolution: f64,
    laser: Vec<Interval>,
    microwave: Vec<Interval>,
    trigger: Vec<Interval>,
}

impl ChannelTimeline {
    pub fn intervals(&self, channel: Channel) -> &[Interval] {
        match channel {
            Channel::Laser => &self.laser,
            Channel::Microwave => &self.microwave,
            Channel::Trigger => &self.trigger,
        }
    }

    /// Edge list for one channel: alternating high/low transitions.
    pub fn edges(&self, channel: Channel) -> Vec<Edge> {
        let mut edges = Vec::new();
        for iv in self.intervals(channel) {
            edges.push(Edge {
                time: iv.start,
                level: Level::High,
            });
            edges.push(Edge {
                time: iv.end,
                level: Level::Low,
            });
        }
        edges
    }

    /// Reconstruct high-interval durations from the edge list.
    pub fn interval_durations(&self, channel: Channel) -> Vec<f64> {
        self.intervals(channel)
            .iter()
            .map(|iv| iv.end - iv.start)
            .collect()
    }

    /// Plain-text edge list: header with the total period, then one line per
    /// edge: `<channel> <time_ns> <level>`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "total_period_ns {}\n",
            format_ns(self.total_period)
        ));
        for channel in Channel::ALL {
            for e in self.edges(channel) {
                out.push_str(&format!(
                    "{} {} {}\n",
                    channel.label(),
                    format_ns(e.time),
                    e.level.label()
                ));
            }
        }
        out
    }

    /// Parse the `to_edge_list` format back into per-channel edge lists.
    /// Returns `(total_period_s, edges per channel in file order)`.
    pub fn parse_edge_list(text: &str) -> Result<(f64, Vec<(Channel, Edge)>), SequenceError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(SequenceError::Parse {
            line: 0,
            reason: "empty edge list".into(),
        })?;
        let period_ns: f64 = header
            .strip_prefix("total_period_ns ")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(SequenceError::Parse {
                line: 1,
                reason: "missing total_period_ns header".into(),
            })?;
        let mut edges = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |p: Option<&str>, what: &str| {
                p.map(str::to_owned).ok_or(SequenceError::Parse {
                    line: idx + 1,
                    reason: format!("missing {what}"),
                })
            };
            let ch = match parse(parts.next(), "channel")?.as_str() {
                "laser" => Channel::Laser,
                "microwave" => Channel::Microwave,
                "trigger" => Channel::Trigger,
                other => {
                    return Err(SequenceError::Parse {
                        line: idx + 1,
                        reason: format!("unknown channel {other}"),
                    })
                }
            };
            let t_ns: f64 =
                parse(parts.next(), "time")?
                    .parse()
                    .map_err(|_| SequenceError::Parse {
                        line: idx + 1,
                        reason: "bad time".into(),
                    })?;
            let level = match parse(parts.next(), "level")?.as_str() {
                "high" => Level::High,
                "low" => Level::Low,
                other => {
                    return Err(SequenceError::Parse {
                        line: idx + 1,
                        reason: format!("unknown level {other}"),
                    })
                }
            };
            edges.push((
                ch,
                Edge {
                    time: t_ns * 1e-9,
                    level,
                },
            ));
        }
        Ok((period_ns * 1e-9, edges))
    }
}

fn format_ns(seconds: f64) -> String {
    let ns = seconds * 1e9;
    let rounded = ns.round();
    if (ns - rounded).abs() < 1e-3 {
        format!("{}", rounded as i64)
    } else {
        format!("{ns}")
    }
}

/// Compile a validated sequence into quantized per-channel intervals.
///
/// Segment boundaries round to the nearest resolution tick; a segment that
/// rounds to zero ticks is an error rather than a silent deletion. Abutting
/// laser segments merge into one high interval.
pub fn compile(
    seq: &PulseSequence,
    timing: &TimingConfig,
) -> Result<ChannelTimeline, SequenceError> {
    timing.validate()?;
    let violations = validate(seq);
    if !violations.is_empty() {
        return Err(SequenceError::Invalid(violations));
    }

    let res = timing.compile_resolution;
    let to_ticks = |t: f64| -> i64 { (t / res).round() as i64 };

    let mut per_channel: [Vec<Interval>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for s in &seq.segments {
        if s.channel == Channel::Microwave {
            continue;
        }
        let start = to_ticks(s.start);
        let end = to_ticks(s.end());
        if end <= start {
            return Err(SequenceError::SegmentBelowResolution {
                channel: s.channel,
                duration: s.duration,
                resolution: res,
            });
        }
        let slot = match s.channel {
            Channel::Laser => 0,
            Channel::Microwave => unreachable!("microwave handled below"),
            Channel::Trigger => 2,
        };
        per_channel[slot].push(Interval {
            start: start as f64 * res,
            end: end as f64 * res,
            mw_phase: s.mw_phase,
        });
    }

    // Microwave durations quantize cumulatively: the running pulse-length
    // total rounds to the grid, so the quantized on-time matches the
    // requested total to half a tick no matter how many pulses there are.
    {
        let mut mws: Vec<&Segment> = seq.segments_on(Channel::Microwave).collect();
        mws.sort_by(|a, b| a.start.total_cmp(&b.start));
        let mut requested_on = 0.0f64;
        let mut ticks_on: i64 = 0;
        for s in mws {
            let start = to_ticks(s.start);
            requested_on += s.duration;
            let new_ticks_on = (requested_on / res).round() as i64;
            let dur = new_ticks_on - ticks_on;
            if dur <= 0 {
                return Err(SequenceError::SegmentBelowResolution {
                    channel: Channel::Microwave,
                    duration: s.duration,
                    resolution: res,
                });
            }
            ticks_on = new_ticks_on;
            per_channel[1].push(Interval {
                start: start as f64 * res,
                end: (start + dur) as f64 * res,
                mw_phase: s.mw_phase,
            });
        }
    }

    for ivs in &mut per_channel {
        ivs.sort_by(|a, b| a.start.total_cmp(&b.start));
    }
    // Merge abutting laser intervals (t_dark = 0 gives a continuous pulse).
    let laser = merge_abutting(&per_channel[0], res);

    let total_period = to_ticks(seq.total_period()) as f64 * res;
    Ok(ChannelTimeline {
        protocol_kind: seq.protocol_kind,
        reference_strategy: seq.reference_strategy,
        total_period,
        resolution: res,
        laser,
        microwave: per_channel[1].clone(),
        trigger: per_channel[2].clone(),
    })
}

fn merge_abutting(intervals: &[Interval], res: f64) -> Vec<Interval> {
    let mut out: Vec<Interval> = Vec::new();
    for iv in intervals {
        if let Some(last) = out.last_mut() {
            if iv.start - last.end < 0.5 * res {
                last.end = iv.end;
                continue;
            }
        }
        out.push(*iv);
    }
    out
}
