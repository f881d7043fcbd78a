//! Damped least-squares (Levenberg-Marquardt) engine.
//!
//! Gauss-Newton steps with adaptive Marquardt damping on the column-scaled
//! normal equations. The first attempt uses zero damping, so problems that
//! are actually linear converge in a single step. Bounds are enforced by
//! projection after each trial step. Accepted steps never increase the
//! residual sum of squares.

use super::{AnalysisError, FitReport, FittedParam, ModelSpec};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop after several consecutive accepted steps improve the RSS by
    /// less than this relative amount.
    pub rtol: f64,
    /// Gradient cosine threshold: largest cosine of the angle between the
    /// residual vector and any Jacobian column (the MINPACK criterion).
    pub gtol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 400,
            rtol: 1e-14,
            gtol: 1e-11,
        }
    }
}

/// Loose cosine threshold applied when the iteration stalls instead of
/// meeting `gtol` exactly; documents what `converged` still guarantees.
pub const STALL_GRADIENT_COSINE: f64 = 1e-5;

fn residuals(model: &ModelSpec, theta: &[f64], xs: &[f64], ys: &[f64], out: &mut [f64]) {
    for ((r, &x), &y) in out.iter_mut().zip(xs).zip(ys) {
        *r = model.eval(theta, x) - y;
    }
}

fn rss_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Dense column-major-free tiny matrix helpers over `Vec<Vec<f64>>`.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i][j] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i][k] * y[k];
        }
        y[i] = s / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k][i] * x[k];
        }
        x[i] = s / l[i][i];
    }
    Some(x)
}

/// Invert a symmetric positive (semi-)definite matrix, escalating a ridge
/// until the factorization succeeds. Returns `(inverse, needed_ridge)`.
fn invert_spd(a: &[Vec<f64>]) -> (Vec<Vec<f64>>, bool) {
    let n = a.len();
    let scale = (0..n)
        .map(|i| a[i][i].abs())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut ridge = 0.0;
    loop {
        let mut work = a.to_vec();
        for i in 0..n {
            work[i][i] += ridge;
        }
        let mut inv = vec![vec![0.0; n]; n];
        let mut ok = true;
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            match cholesky_solve(&work, &e) {
                Some(x) => {
                    for row in 0..n {
                        inv[row][col] = x[row];
                    }
                }
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return (inv, ridge > 0.0);
        }
        ridge = if ridge == 0.0 {
            scale * 1e-12
        } else {
            ridge * 100.0
        };
        if ridge > scale * 1e6 {
            // Hopeless; return a zero inverse flagged degenerate.
            return (vec![vec![0.0; n]; n], true);
        }
    }
}

/// Damped least-squares fit of `model` to `(xs, ys)` from `guess`.
///
/// Non-convergence within the iteration budget is not an error: the report
/// comes back with `converged = false`. Errors are reserved for malformed
/// inputs (length mismatch, too few points, non-finite data or model values
/// at the starting point).
pub fn nlls_fit(
    model: &ModelSpec,
    xs: &[f64],
    ys: &[f64],
    guess: &[f64],
    opts: &FitOptions,
) -> Result<FitReport, AnalysisError> {
    let n = model.n_params();
    let m = xs.len();
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch {
            xs: xs.len(),
            ys: ys.len(),
        });
    }
    if m < n + 1 {
        return Err(AnalysisError::TooFewPoints {
            need: n + 1,
            got: m,
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite { what: "input data" });
    }

    let mut theta = guess.to_vec();
    assert_eq!(theta.len(), n, "guess length must match model parameters");
    model.clamp_into_bounds(&mut theta);

    let mut r = vec![0.0; m];
    residuals(model, &theta, xs, ys, &mut r);
    let mut rss = rss_of(&r);
    if !rss.is_finite() {
        return Err(AnalysisError::NonFinite {
            what: "model at initial guess",
        });
    }

    let y_scale: f64 = ys.iter().map(|y| y * y).sum::<f64>().max(1e-300);

    let mut trajectory = vec![rss];
    let mut lambda = 0.0f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut stalls = 0;

    let mut jac = vec![vec![0.0; n]; m];

    for _outer in 0..opts.max_iterations {
        // Jacobian and normal equations at the current point.
        for (row, &x) in jac.iter_mut().zip(xs) {
            model.gradient(&theta, x, row);
        }
        let mut jtj = vec![vec![0.0; n]; n];
        let mut jtr = vec![0.0; n];
        for (row, &ri) in jac.iter().zip(&r) {
            for i in 0..n {
                jtr[i] += row[i] * ri;
                for j in i..n {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                jtj[i][j] = jtj[j][i];
            }
        }

        // Column scaling: s_j = sqrt(diag(JtJ)), floored to avoid dividing
        // by zero when a parameter momentarily has no effect.
        let diag_max = (0..n).map(|i| jtj[i][i]).fold(0.0f64, f64::max).max(1e-300);
        let scales: Vec<f64> = (0..n)
            .map(|i| jtj[i][i].max(diag_max * 1e-14).sqrt())
            .collect();

        // Gradient cosine (scale invariant) and a residual floor: an RSS at
        // machine level relative to the data is as converged as it gets.
        let gcos = gradient_cosine(&jtr, &scales, rss);
        if gcos <= opts.gtol || rss <= 1e-28 * y_scale {
            converged = true;
            break;
        }

        // Inner loop: raise damping until a step reduces the RSS.
        let mut accepted = false;
        for _inner in 0..50 {
            // (S^-1 JtJ S^-1 + lambda I) u = -S^-1 Jtr ; delta = S^-1 u.
            let mut a = vec![vec![0.0; n]; n];
            for i in 0..n {
                for j in 0..n {
                    a[i][j] = jtj[i][j] / (scales[i] * scales[j]);
                }
                a[i][i] += lambda;
            }
            let b: Vec<f64> = (0..n).map(|i| -jtr[i] / scales[i]).collect();
            let step = match cholesky_solve(&a, &b) {
                Some(u) => u,
                None => {
                    lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
                    continue;
                }
            };
            let mut trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .zip(&scales)
                .map(|((t, u), s)| t + u / s)
                .collect();
            model.clamp_into_bounds(&mut trial);

            // Reuse the residual buffer: if the trial is rejected the next
            // attempt only needs jtj/jtr, which are already formed.
            residuals(model, &trial, xs, ys, &mut r);
            let trial_rss = rss_of(&r);
            if trial_rss.is_finite() && trial_rss <= rss {
                let improvement = rss - trial_rss;
                theta = trial;
                rss = trial_rss;
                trajectory.push(rss);
                iterations += 1;
                lambda = (lambda / 3.0).max(0.0);
                accepted = true;
                stalls = if improvement <= opts.rtol * rss.max(1e-300) {
                    stalls + 1
                } else {
                    0
                };
                break;
            }
            lambda = if lambda == 0.0 { 1e-4 } else { lambda * 10.0 };
            if lambda > 1e14 {
                break;
            }
        }
        if !accepted || stalls >= 3 {
            // Stalled: no further descent available. The fit still counts
            // as converged if the gradient cosine is small.
            if !accepted {
                residuals(model, &theta, xs, ys, &mut r);
            }
            converged = stalled_gradient_ok(model, &theta, xs, ys, rss);
            break;
        }
    }

    // Covariance from the curvature at the optimum.
    for (row, &x) in jac.iter_mut().zip(xs) {
        model.gradient(&theta, x, row);
    }
    let mut jtj = vec![vec![0.0; n]; n];
    for row in &jac {
        for i in 0..n {
            for j in i..n {
                jtj[i][j] += row[i] * row[j];
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            jtj[i][j] = jtj[j][i];
        }
    }
    let (inv, degenerate) = invert_spd(&jtj);
    let dof = (m as f64 - n as f64).max(1.0);
    let variance = rss / dof;
    let sigmas: Vec<f64> = (0..n)
        .map(|i| (inv[i][i] * variance).max(0.0).sqrt())
        .collect();

    let params = model
        .params
        .iter()
        .zip(&theta)
        .zip(&sigmas)
        .map(|((spec, &value), &sigma)| FittedParam {
            name: spec.name,
            unit: spec.unit,
            value,
            sigma,
        })
        .collect();

    Ok(FitReport {
        model: model.id,
        params,
        rss,
        iterations,
        converged,
        degenerate_curvature: degenerate,
        initial_guess: guess.to_vec(),
        rss_trajectory: trajectory,
    })
}

/// Largest cosine of the angle between the residual vector and a Jacobian
/// column: `max_j |Jtr_j| / (||J_j|| * ||r||)`. Zero at an exact
/// least-squares optimum regardless of data or parameter scales.
fn gradient_cosine(jtr: &[f64], scales: &[f64], rss: f64) -> f64 {
    let rnorm = rss.sqrt();
    if rnorm <= 0.0 {
        return 0.0;
    }
    jtr.iter()
        .zip(scales)
        .map(|(g, s)| (g / (s * rnorm)).abs())
        .fold(0.0f64, f64::max)
}

fn stalled_gradient_ok(model: &ModelSpec, theta: &[f64], xs: &[f64], ys: &[f64], rss: f64) -> bool {
    let y_scale: f64 = ys.iter().map(|y| y * y).sum::<f64>().max(1e-300);
    if rss <= 1e-28 * y_scale {
        return true;
    }
    let n = model.n_params();
    let mut g = vec![0.0; n];
    let mut jtr = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for (&x, &y) in xs.iter().zip(ys) {
        model.gradient(theta, x, &mut g);
        let r = model.eval(theta, x) - y;
        for i in 0..n {
            jtr[i] += g[i] * r;
            diag[i] += g[i] * g[i];
        }
    }
    let diag_max = diag.iter().copied().fold(0.0f64, f64::max).max(1e-300);
    let scales: Vec<f64> = (0..n)
        .map(|i| diag[i].max(diag_max * 1e-14).sqrt())
        .collect();
    gradient_cosine(&jtr, &scales, rss) <= STALL_GRADIENT_COSINE
}
