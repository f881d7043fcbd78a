//! Mean-subtracted periodogram.
//!
//! Direct one-sided DFT with Parseval-consistent density normalization: the
//! sum of power bins times the bin width equals the mean square of the
//! mean-subtracted series. Sweep lengths are a few hundred points at most,
//! so the O(n^2) transform is not worth an FFT dependency.

use super::AnalysisError;

/// One-sided power spectral density of a contrast series.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Bin frequencies, uniform from 0 to Nyquist (Hz).
    pub frequencies: Vec<f64>,
    /// Power density per bin (contrast^2 / Hz), >= 0.
    pub power: Vec<f64>,
    /// Frequency spacing between bins (Hz).
    pub bin_width: f64,
}

impl Spectrum {
    /// Indices of local maxima, strongest first. End bins count as peaks
    /// when they top their single neighbor.
    pub fn peak_indices(&self) -> Vec<usize> {
        let p = &self.power;
        let n = p.len();
        let mut peaks: Vec<usize> = (0..n)
            .filter(|&k| {
                let left_ok = k == 0 || p[k] > p[k - 1];
                let right_ok = k + 1 == n || p[k] > p[k + 1];
                left_ok && right_ok
            })
            .collect();
        peaks.sort_by(|&a, &b| p[b].total_cmp(&p[a]));
        peaks
    }

    /// Frequency of the strongest non-DC bin.
    pub fn dominant_frequency(&self) -> f64 {
        let mut best = 1;
        for k in 1..self.power.len() {
            if self.power[k] > self.power[best] {
                best = k;
            }
        }
        self.frequencies[best]
    }

    /// The two strongest distinct peaks `(freq, power)`, lower frequency
    /// first, skipping DC; peaks closer than two bins are merged.
    pub fn two_peaks(&self) -> Option<((f64, f64), (f64, f64))> {
        let peaks = self.peak_indices();
        let mut picked: Vec<usize> = Vec::new();
        for k in peaks {
            if k == 0 {
                continue;
            }
            if picked.iter().all(|&q| k.abs_diff(q) > 2) {
                picked.push(k);
            }
            if picked.len() == 2 {
                break;
            }
        }
        if picked.len() < 2 {
            return None;
        }
        picked.sort_unstable();
        let one = (self.frequencies[picked[0]], self.power[picked[0]]);
        let two = (self.frequencies[picked[1]], self.power[picked[1]]);
        Some((one, two))
    }
}

/// Mean-subtracted periodogram of a uniformly spaced series.
pub fn psd(xs: &[f64], ys: &[f64]) -> Result<Spectrum, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    let n = ys.len();
    if n < 8 {
        return Err(AnalysisError::TooFewPoints { need: 8, got: n });
    }
    let dx = xs[1] - xs[0];
    if !(dx > 0.0) {
        return Err(AnalysisError::NonUniformSpacing { at: 1 });
    }
    for (i, w) in xs.windows(2).enumerate() {
        if ((w[1] - w[0]) - dx).abs() > 1e-6 * dx {
            return Err(AnalysisError::NonUniformSpacing { at: i + 1 });
        }
    }

    let mean = ys.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = ys.iter().map(|y| y - mean).collect();

    let n_bins = n / 2 + 1;
    let mut frequencies = Vec::with_capacity(n_bins);
    let mut power = Vec::with_capacity(n_bins);
    let bin_width = 1.0 / (n as f64 * dx);
    for k in 0..n_bins {
        let (mut re, mut im) = (0.0, 0.0);
        let w = -std::f64::consts::TAU * k as f64 / n as f64;
        for (j, &y) in centered.iter().enumerate() {
            let (s, c) = (w * j as f64).sin_cos();
            re += y * c;
            im += y * s;
        }
        // One-sided density: double everything except DC and (for even n)
        // the Nyquist bin.
        let fold = if k == 0 || (n.is_multiple_of(2) && k == n_bins - 1) {
            1.0
        } else {
            2.0
        };
        frequencies.push(k as f64 * bin_width);
        power.push(fold * (re * re + im * im) * dx / n as f64);
    }

    Ok(Spectrum {
        frequencies,
        power,
        bin_width,
    })
}
