//! Nonlinear least-squares fitting of the contrast models, spectral
//! estimation, initial-guess heuristics, and the linear Rabi-vs-sqrt-power
//! regression.
//!
//! The five contrast models:
//!
//! - two-tone damped sinusoid (Rabi oscillations with a hyperfine satellite),
//! - single damped sinusoid (Ramsey fringes),
//! - plain exponential decay (T1),
//! - stretched exponential (short-range echo decay),
//! - revival train (stretched envelope times an 11-lobe Gaussian comb),
//!
//! plus a single-exponential model for the laser repolarization transient.
//! Every model carries analytic gradients; a finite-difference fallback is
//! kept for cross-checking them.

mod guess;
mod lm;
mod spectrum;

pub use guess::initial_guess;
pub use lm::{nlls_fit, FitOptions};
pub use spectrum::{psd, Spectrum};

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("xs and ys lengths differ: {xs} vs {ys}")]
    LengthMismatch { xs: usize, ys: usize },
    #[error("non-uniform sample spacing at index {at}")]
    NonUniformSpacing { at: usize },
    #[error("non-finite {what}")]
    NonFinite { what: &'static str },
    #[error("all abscissa values identical; slope undefined")]
    AllXsIdentical,
}

/// Identifier of a fit model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelId {
    /// Two exponentially decaying sinusoids plus linear baseline.
    RabiTwoTone,
    /// One exponentially decaying sinusoid plus linear baseline.
    Ramsey,
    /// `A exp(-t/T1) + B`.
    ExpDecay,
    /// `A exp(-(t/T2)^n) + B`.
    StretchedExp,
    /// `A + B t + D exp(-(t/T2b)^n) * sum_j exp(-((t - j Trev)/Tdec)^2)`.
    RevivalTrain,
    /// Single exponential for the laser repolarization transient.
    SingleExpRepol,
}

impl ModelId {
    pub fn name(&self) -> &'static str {
        match self {
            ModelId::RabiTwoTone => "rabi_two_tone",
            ModelId::Ramsey => "ramsey",
            ModelId::ExpDecay => "exp_decay",
            ModelId::StretchedExp => "stretched_exp",
            ModelId::RevivalTrain => "revival_train",
            ModelId::SingleExpRepol => "single_exp_repol",
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One named model parameter with its physical bounds.
#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub unit: &'static str,
    pub lower: f64,
    pub upper: f64,
}

const TIME_LO: f64 = 1e-12;
const TIME_HI: f64 = 1e3;
const FREQ_HI: f64 = 1e12;
const AMP: f64 = 1e9;
const PI: f64 = std::f64::consts::PI;

fn p(name: &'static str, unit: &'static str, lower: f64, upper: f64) -> ParamSpec {
    ParamSpec {
        name,
        unit,
        lower,
        upper,
    }
}

/// A fit model: parameter metadata plus evaluation and analytic gradient.
pub struct ModelSpec {
    pub id: ModelId,
    pub params: Vec<ParamSpec>,
    eval: fn(&[f64], f64) -> f64,
    gradient: fn(&[f64], f64, &mut [f64]),
}

impl ModelSpec {
    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn eval(&self, theta: &[f64], x: f64) -> f64 {
        (self.eval)(theta, x)
    }

    pub fn gradient(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        (self.gradient)(theta, x, out)
    }

    /// Central finite-difference gradient; the independent cross-check for
    /// the analytic one. Step near cbrt(eps) balances truncation against
    /// cancellation.
    pub fn gradient_fd(&self, theta: &[f64], x: f64, out: &mut [f64]) {
        let mut probe = theta.to_vec();
        for j in 0..theta.len() {
            let h = 6e-6 * theta[j].abs().max(1e-12);
            probe[j] = theta[j] + h;
            let hi = self.eval(&probe, x);
            probe[j] = theta[j] - h;
            let lo = self.eval(&probe, x);
            probe[j] = theta[j];
            out[j] = (hi - lo) / (2.0 * h);
        }
    }

    pub fn clamp_into_bounds(&self, theta: &mut [f64]) {
        for (t, spec) in theta.iter_mut().zip(&self.params) {
            *t = t.clamp(spec.lower, spec.upper);
        }
    }

    /// Two exponentially decaying sinusoids plus a linear baseline:
    /// `sum_i a_i sin(2 pi f_i x + phi_i) exp(-x/t_i) + b x + d`.
    pub fn rabi_two_tone() -> Self {
        ModelSpec {
            id: ModelId::RabiTwoTone,
            params: vec![
                p("a1", "%", -AMP, AMP),
                p("f1", "Hz", 0.0, FREQ_HI),
                p("phi1", "rad", -PI, PI),
                p("t1_r", "s", TIME_LO, TIME_HI),
                p("a2", "%", -AMP, AMP),
                p("f2", "Hz", 0.0, FREQ_HI),
                p("phi2", "rad", -PI, PI),
                p("t2_r", "s", TIME_LO, TIME_HI),
                p("b", "%/s", -AMP, AMP),
                p("d", "%", -AMP, AMP),
            ],
            eval: |th, x| {
                tone(th[0], th[1], th[2], th[3], x)
                    + tone(th[4], th[5], th[6], th[7], x)
                    + th[8] * x
                    + th[9]
            },
            gradient: |th, x, g| {
                tone_grad(th[0], th[1], th[2], th[3], x, &mut g[0..4]);
                tone_grad(th[4], th[5], th[6], th[7], x, &mut g[4..8]);
                g[8] = x;
                g[9] = 1.0;
            },
        }
    }

    /// One exponentially decaying sinusoid plus a linear baseline.
    pub fn ramsey() -> Self {
        ModelSpec {
            id: ModelId::Ramsey,
            params: vec![
                p("a", "%", -AMP, AMP),
                p("f_ramsey", "Hz", 0.0, FREQ_HI),
                p("phi", "rad", -PI, PI),
                p("t2_star", "s", TIME_LO, TIME_HI),
                p("b", "%/s", -AMP, AMP),
                p("d", "%", -AMP, AMP),
            ],
            eval: |th, x| tone(th[0], th[1], th[2], th[3], x) + th[4] * x + th[5],
            gradient: |th, x, g| {
                tone_grad(th[0], th[1], th[2], th[3], x, &mut g[0..4]);
                g[4] = x;
                g[5] = 1.0;
            },
        }
    }

    /// `a exp(-x/t1) + b`.
    pub fn exp_decay() -> Self {
        ModelSpec {
            id: ModelId::ExpDecay,
            params: vec![
                p("a", "%", -AMP, AMP),
                p("t1", "s", TIME_LO, TIME_HI),
                p("b", "%", -AMP, AMP),
            ],
            eval: |th, x| th[0] * (-x / th[1]).exp() + th[2],
            gradient: |th, x, g| {
                let e = (-x / th[1]).exp();
                g[0] = e;
                g[1] = th[0] * e * x / (th[1] * th[1]);
                g[2] = 1.0;
            },
        }
    }

    /// `a exp(-(x/t2)^n) + b` with the stretch exponent bounded to a
    /// physical range.
    pub fn stretched_exp() -> Self {
        ModelSpec {
            id: ModelId::StretchedExp,
            params: vec![
                p("a", "%", -AMP, AMP),
                p("t2_alpha", "s", TIME_LO, TIME_HI),
                p("n", "", 0.5, 3.0),
                p("b", "%", -AMP, AMP),
            ],
            eval: |th, x| {
                let u = (x / th[1]).max(0.0);
                th[0] * (-u.powf(th[2])).exp() + th[3]
            },
            gradient: |th, x, g| {
                let u = (x / th[1]).max(0.0);
                let un = u.powf(th[2]);
                let e = (-un).exp();
                g[0] = e;
                if u > 0.0 {
                    g[1] = th[0] * e * th[2] * un / th[1];
                    g[2] = -th[0] * e * un * u.ln();
                } else {
                    g[1] = 0.0;
                    g[2] = 0.0;
                }
                g[3] = 1.0;
            },
        }
    }

    /// Revival train: linear baseline plus a stretched-exponential envelope
    /// times an 11-lobe Gaussian comb (j = 0..=10).
    pub fn revival_train() -> Self {
        ModelSpec {
            id: ModelId::RevivalTrain,
            params: vec![
                p("a", "%", -AMP, AMP),
                p("b", "%/s", -AMP, AMP),
                p("d", "%", -AMP, AMP),
                p("t2_beta", "s", TIME_LO, TIME_HI),
                p("n", "", 0.5, 3.0),
                p("t_rev", "s", TIME_LO, TIME_HI),
                p("t_dec", "s", TIME_LO, TIME_HI),
            ],
            eval: |th, x| {
                let (s, c) = train_parts(th, x);
                th[0] + th[1] * x + th[2] * s * c
            },
            gradient: |th, x, g| {
                let (s, c) = train_parts(th, x);
                let (d, t2b, n, t_rev, t_dec) = (th[2], th[3], th[4], th[5], th[6]);
                g[0] = 1.0;
                g[1] = x;
                g[2] = s * c;
                let u = (x / t2b).max(0.0);
                let un = u.powf(n);
                if u > 0.0 {
                    g[3] = d * c * s * n * un / t2b;
                    g[4] = -d * c * s * un * u.ln();
                } else {
                    g[3] = 0.0;
                    g[4] = 0.0;
                }
                let mut dc_drev = 0.0;
                let mut dc_ddec = 0.0;
                for j in 0..=10 {
                    let v = (x - j as f64 * t_rev) / t_dec;
                    let e = (-v * v).exp();
                    dc_drev += 2.0 * j as f64 * v * e / t_dec;
                    dc_ddec += 2.0 * v * v * e / t_dec;
                }
                g[5] = d * s * dc_drev;
                g[6] = d * s * dc_ddec;
            },
        }
    }

    /// Single exponential for the repolarization transient, in volts.
    pub fn single_exp_repol() -> Self {
        ModelSpec {
            id: ModelId::SingleExpRepol,
            params: vec![
                p("a", "V", -AMP, AMP),
                p("tau_repol", "s", TIME_LO, TIME_HI),
                p("b", "V", -AMP, AMP),
            ],
            eval: |th, x| th[0] * (-x / th[1]).exp() + th[2],
            gradient: |th, x, g| {
                let e = (-x / th[1]).exp();
                g[0] = e;
                g[1] = th[0] * e * x / (th[1] * th[1]);
                g[2] = 1.0;
            },
        }
    }

    pub fn by_id(id: ModelId) -> Self {
        match id {
            ModelId::RabiTwoTone => Self::rabi_two_tone(),
            ModelId::Ramsey => Self::ramsey(),
            ModelId::ExpDecay => Self::exp_decay(),
            ModelId::StretchedExp => Self::stretched_exp(),
            ModelId::RevivalTrain => Self::revival_train(),
            ModelId::SingleExpRepol => Self::single_exp_repol(),
        }
    }
}

#[inline]
fn tone(a: f64, f: f64, phi: f64, t: f64, x: f64) -> f64 {
    a * (std::f64::consts::TAU * f * x + phi).sin() * (-x / t).exp()
}

#[inline]
fn tone_grad(a: f64, f: f64, phi: f64, t: f64, x: f64, g: &mut [f64]) {
    let w = std::f64::consts::TAU * f * x + phi;
    let (s, c) = w.sin_cos();
    let e = (-x / t).exp();
    g[0] = s * e;
    g[1] = a * c * std::f64::consts::TAU * x * e;
    g[2] = a * c * e;
    g[3] = a * s * e * x / (t * t);
}

#[inline]
fn train_parts(th: &[f64], x: f64) -> (f64, f64) {
    let stretch = (-(x / th[3]).max(0.0).powf(th[4])).exp();
    let mut comb = 0.0;
    for j in 0..=10 {
        let v = (x - j as f64 * th[5]) / th[6];
        comb += (-v * v).exp();
    }
    (stretch, comb)
}

/// One fitted parameter with its one-sigma uncertainty.
#[derive(Debug, Clone)]
pub struct FittedParam {
    pub name: &'static str,
    pub unit: &'static str,
    pub value: f64,
    pub sigma: f64,
}

/// Outcome of a damped-least-squares fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: ModelId,
    pub params: Vec<FittedParam>,
    /// Residual sum of squares at the optimum.
    pub rss: f64,
    /// Accepted descent steps.
    pub iterations: usize,
    pub converged: bool,
    /// The curvature matrix needed regularization to invert; uncertainties
    /// are then lower bounds at best.
    pub degenerate_curvature: bool,
    pub initial_guess: Vec<f64>,
    /// RSS after each accepted step (starting value first); accepted steps
    /// never increase it.
    pub rss_trajectory: Vec<f64>,
}

impl FitReport {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|p| p.name == name).map(|p| p.sigma)
    }

    pub fn values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    /// Structured text report: `key: value` lines.
    pub fn to_text_report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("model: {}\n", self.model));
        out.push_str(&format!("converged: {}\n", self.converged));
        out.push_str(&format!("iterations: {}\n", self.iterations));
        out.push_str(&format!("rss: {:.6e}\n", self.rss));
        if self.degenerate_curvature {
            out.push_str("degenerate_curvature: true\n");
        }
        for p in &self.params {
            let unit = if p.unit.is_empty() {
                String::new()
            } else {
                format!(" {}", p.unit)
            };
            out.push_str(&format!(
                "{}: {:.9e} +- {:.3e}{}\n",
                p.name, p.value, p.sigma, unit
            ));
        }
        out
    }

    /// Metadata lines for appending to a sweep CSV header.
    pub fn to_metadata_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# fit_model: {}\n", self.model));
        out.push_str(&format!("# fit_converged: {}\n", self.converged));
        out.push_str(&format!("# fit_rss: {:.6e}\n", self.rss));
        for p in &self.params {
            out.push_str(&format!("# fit_{}: {:.9e}\n", p.name, p.value));
        }
        out
    }
}

/// Wrap a phase into [-pi, pi] and make the paired amplitude non-negative.
fn canonicalize_tone(theta: &mut [f64], a_idx: usize, phi_idx: usize) {
    if theta[a_idx] < 0.0 {
        theta[a_idx] = -theta[a_idx];
        theta[phi_idx] += PI;
    }
    let mut phi = theta[phi_idx];
    while phi > PI {
        phi -= 2.0 * PI;
    }
    while phi < -PI {
        phi += 2.0 * PI;
    }
    theta[phi_idx] = phi;
}

fn refit_canonical(model: &ModelSpec, xs: &[f64], ys: &[f64], report: FitReport) -> FitReport {
    // Canonicalization changes parameters without changing the curve; the
    // uncertainties carry over by symmetry, so only values are rewritten.
    let mut theta = report.values();
    match model.id {
        ModelId::RabiTwoTone => {
            canonicalize_tone(&mut theta, 0, 2);
            canonicalize_tone(&mut theta, 4, 6);
            // Remove the label-swap degeneracy: f1 <= f2.
            if theta[1] > theta[5] {
                theta.swap(0, 4);
                theta.swap(1, 5);
                theta.swap(2, 6);
                theta.swap(3, 7);
            }
        }
        ModelId::Ramsey => canonicalize_tone(&mut theta, 0, 2),
        _ => return report,
    }
    let mut out = report;
    let sigmas: Vec<f64> = match out.model {
        ModelId::RabiTwoTone => {
            // Swap the uncertainty labels along with the values.
            let s = |i: usize| out.params[i].sigma;
            let mut v: Vec<f64> = (0..10).map(s).collect();
            if out.params[1].value > out.params[5].value {
                v.swap(0, 4);
                v.swap(1, 5);
                v.swap(2, 6);
                v.swap(3, 7);
            }
            v
        }
        _ => out.params.iter().map(|p| p.sigma).collect(),
    };
    for ((param, value), sigma) in out.params.iter_mut().zip(theta).zip(sigmas) {
        param.value = value;
        param.sigma = sigma;
    }
    // The curve is unchanged; keep the recorded rss consistent by
    // re-evaluating once.
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = model.eval(&out.values(), x) - y;
            r * r
        })
        .sum();
    out.rss = rss;
    out
}

/// Deterministic starting-point family around the heuristic guess.
///
/// Damped sinusoids and combs have well-known spurious basins (a dead tone,
/// a doubled period); a handful of scaled restarts costs microseconds and
/// reliably lands the global one. The best final RSS wins.
fn guess_family(model: &ModelSpec, base: &[f64]) -> Vec<Vec<f64>> {
    let mut starts = vec![base.to_vec()];
    let mut push_scaled = |indices: &[usize], factor: f64| {
        let mut g = base.to_vec();
        for &i in indices {
            g[i] *= factor;
        }
        starts.push(g);
    };
    match model.id {
        ModelId::Ramsey => {
            push_scaled(&[3], 0.4);
            push_scaled(&[3], 2.5);
        }
        ModelId::RabiTwoTone => {
            push_scaled(&[3, 7], 0.4);
            push_scaled(&[3, 7], 2.5);
            // Opposite phase for the satellite tone.
            let mut g = base.to_vec();
            g[6] = if g[6] > 0.0 { g[6] - PI } else { g[6] + PI };
            starts.push(g);
        }
        ModelId::StretchedExp => {
            let mut g = base.to_vec();
            g[2] = 1.0;
            starts.push(g);
            let mut g = base.to_vec();
            g[2] = 2.0;
            starts.push(g);
        }
        ModelId::RevivalTrain => {
            // Autocorrelation sometimes locks on half or double the period.
            push_scaled(&[5], 0.5);
            push_scaled(&[5], 2.0);
        }
        ModelId::ExpDecay | ModelId::SingleExpRepol => {
            push_scaled(&[1], 0.3);
            push_scaled(&[1], 3.0);
        }
    }
    starts
}

fn fit_with(model: ModelSpec, xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    let base = initial_guess(&model, xs, ys)?;
    let opts = FitOptions::default();
    let mut best: Option<FitReport> = None;
    for mut start in guess_family(&model, &base) {
        model.clamp_into_bounds(&mut start);
        let report = nlls_fit(&model, xs, ys, &start, &opts)?;
        let better = match &best {
            Some(b) => report.rss < b.rss,
            None => true,
        };
        if better {
            best = Some(report);
        }
    }
    let report = best.expect("at least one start");
    Ok(refit_canonical(&model, xs, ys, report))
}

/// Fit Rabi contrast vs microwave pulse length with the two-tone model.
pub fn fit_rabi(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::rabi_two_tone(), xs, ys)
}

/// Fit Ramsey contrast vs free-precession time.
pub fn fit_ramsey(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::ramsey(), xs, ys)
}

/// Fit T1 contrast vs dark time with a plain exponential.
pub fn fit_t1(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::exp_decay(), xs, ys)
}

/// Fit the short-range echo decay with a stretched exponential.
pub fn fit_echo_decay(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::stretched_exp(), xs, ys)
}

/// Fit the long-range echo sweep with the revival train (11 lobes).
pub fn fit_revival_train(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::revival_train(), xs, ys)
}

/// Fit the laser repolarization transient with a single exponential.
pub fn fit_repolarization(xs: &[f64], ys: &[f64]) -> Result<FitReport, AnalysisError> {
    fit_with(ModelSpec::single_exp_repol(), xs, ys)
}

/// Ordinary least-squares line fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Closed-form line fit; used for the Rabi-frequency-vs-sqrt-power check.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFewPoints {
            need: 2,
            got: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::AllXsIdentical);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        let ss_res: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - (slope * x + intercept);
                r * r
            })
            .sum();
        1.0 - ss_res / syy
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}
