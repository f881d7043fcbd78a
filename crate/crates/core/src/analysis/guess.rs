//! Data-driven starting points for the damped least-squares fits.
//!
//! Frequencies come from periodogram peaks, amplitudes and phases from
//! quadrature projection at those frequencies, decay constants from areas or
//! 1/e crossings, offsets from tail means, periods from autocorrelation.
//! Guesses always land inside the model bounds; when a heuristic cannot say
//! anything useful it falls back to a mid-range default rather than failing.

use super::spectrum::psd;
use super::{AnalysisError, ModelId, ModelSpec};

/// Heuristic starting parameters for `model` on `(xs, ys)`.
pub fn initial_guess(model: &ModelSpec, xs: &[f64], ys: &[f64]) -> Result<Vec<f64>, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if xs.len() < model.n_params() + 1 {
        return Err(AnalysisError::TooFewPoints {
            need: model.n_params() + 1,
            got: xs.len(),
        });
    }

    let mut guess = match model.id {
        ModelId::ExpDecay | ModelId::SingleExpRepol => exp_guess(xs, ys),
        ModelId::StretchedExp => {
            let g = exp_guess(xs, ys);
            vec![g[0], g[1], 1.5, g[2]]
        }
        ModelId::Ramsey => {
            let (f, amp, phase) = tone_guess(xs, ys, None);
            let (slope, intercept) = linreg(xs, ys);
            vec![amp, f, phase, span(xs) / 3.0, slope, intercept]
        }
        ModelId::RabiTwoTone => {
            let (f1, a1, p1) = tone_guess(xs, ys, None);
            let (f2, a2, p2) = tone_guess(xs, ys, Some(f1));
            let (slope, intercept) = linreg(xs, ys);
            let t = span(xs) / 3.0;
            vec![a1, f1, p1, t, a2, f2, p2, t, slope, intercept]
        }
        ModelId::RevivalTrain => revival_guess(xs, ys),
    };
    model.clamp_into_bounds(&mut guess);
    Ok(guess)
}

fn span(xs: &[f64]) -> f64 {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (hi - lo).max(1e-12)
}

fn tail_mean(ys: &[f64]) -> f64 {
    let n = ys.len();
    let k = (n / 7).max(2).min(n);
    ys[n - k..].iter().sum::<f64>() / k as f64
}

fn linreg(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// `[amplitude, time constant, offset]` for a plain exponential.
///
/// The time constant comes from the trapezoid area of `y - tail`, which
/// equals `A*T` for an exponential and degrades gracefully under noise.
fn exp_guess(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let b = tail_mean(ys);
    let a = ys[0] - b;
    let x_span = span(xs);
    let mut t = x_span / 3.0;
    if a.abs() > 0.0 {
        let mut area = 0.0;
        for k in 1..xs.len() {
            let y0 = ys[k - 1] - b;
            let y1 = ys[k] - b;
            area += 0.5 * (y0 + y1) * (xs[k] - xs[k - 1]);
        }
        let cand = area / a;
        if cand.is_finite() && cand > 0.0 {
            t = cand.clamp(x_span * 1e-3, x_span * 10.0);
        }
    }
    vec![a, t, b]
}

/// Strongest periodogram peak (optionally excluding the neighborhood of a
/// previous pick), refined by parabolic interpolation through the peak bin,
/// plus quadrature amplitude/phase at that frequency.
fn tone_guess(xs: &[f64], ys: &[f64], exclude: Option<f64>) -> (f64, f64, f64) {
    let fallback_f = 1.0 / span(xs);
    let (slope, intercept) = linreg(xs, ys);
    let detrended: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - slope * x - intercept)
        .collect();

    let f = match psd(xs, &detrended) {
        Ok(spec) => {
            let peaks = spec.peak_indices();
            let mut chosen = None;
            for k in peaks {
                if k == 0 {
                    continue;
                }
                let fk = spec.frequencies[k];
                if let Some(ex) = exclude {
                    if (fk - ex).abs() <= 2.0 * spec.bin_width {
                        continue;
                    }
                }
                // Parabolic vertex through the peak bin and its neighbors;
                // a half-bin error wrecks the downstream phase estimate.
                let refine = if k > 0 && k + 1 < spec.power.len() {
                    let (pl, pc, pr) = (spec.power[k - 1], spec.power[k], spec.power[k + 1]);
                    let denom = pl - 2.0 * pc + pr;
                    if denom.abs() > 0.0 {
                        (0.5 * (pl - pr) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
                chosen = Some(fk + refine * spec.bin_width);
                break;
            }
            chosen.unwrap_or(match exclude {
                Some(ex) => 1.33 * ex,
                None => fallback_f,
            })
        }
        Err(_) => fallback_f,
    };

    // Quadrature projection at f over the early window, where a damped tone
    // still has amplitude.
    let head = (xs.len() / 2).max(8).min(xs.len());
    let n = head as f64;
    let (mut qs, mut qc) = (0.0, 0.0);
    for (&x, &d) in xs.iter().zip(&detrended).take(head) {
        let (s, c) = (std::f64::consts::TAU * f * x).sin_cos();
        qs += d * s;
        qc += d * c;
    }
    let amp = 2.0 * qs.hypot(qc) / n;
    let phase = qc.atan2(qs);
    (f, amp.max(1e-12 * range(ys).max(1e-300)), phase)
}

fn range(ys: &[f64]) -> f64 {
    let lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

/// `[a, b, d, t2_beta, n, t_rev, t_dec]` for the revival train.
fn revival_guess(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let (slope, intercept) = linreg(xs, ys);
    let resid: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| y - slope * x - intercept)
        .collect();

    let x_span = span(xs);
    let n = xs.len();
    let dx = x_span / (n - 1) as f64;

    // Revival period from the first strong autocorrelation peak.
    let min_lag = (n / 40).max(2);
    let max_lag = n / 2;
    let mut best_lag = 0;
    let mut best_val = f64::NEG_INFINITY;
    let mut prev = f64::INFINITY;
    let mut falling = false;
    for lag in min_lag..max_lag {
        let mut acc = 0.0;
        for k in 0..n - lag {
            acc += resid[k] * resid[k + lag];
        }
        // First local maximum after the autocorrelation has fallen once.
        if acc < prev {
            falling = true;
        } else if falling && acc > best_val {
            best_val = acc;
            best_lag = lag;
        }
        prev = acc;
    }
    let t_rev = if best_lag > 0 {
        best_lag as f64 * dx
    } else {
        x_span / 8.0
    };

    // The deepest residual excursion near x = 0 approximates D.
    let head = &resid[..(n / 10).max(3)];
    let d = head
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(0.0);

    vec![
        intercept,
        slope,
        d,
        (x_span / 2.0).max(t_rev),
        1.5,
        t_rev,
        t_rev / 6.0,
    ]
}
