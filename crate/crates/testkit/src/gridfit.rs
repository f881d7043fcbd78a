//! Grid-search-then-polish curve-fit oracle.
//!
//! Each model is expressed in variable-projection form: a handful of
//! nonlinear parameters define basis functions, and the linear coefficients
//! are solved exactly per grid point. The best grid point is then polished by
//! cyclic golden-section search, one nonlinear coordinate at a time. Slow and
//! simple on purpose: this is the independent route the damped-least-squares
//! fitter is checked against.

/// A model in variable-projection form.
pub struct VarProModel {
    pub n_nonlinear: usize,
    pub n_linear: usize,
    /// Fill `out` (length `n_linear`) with basis values at `x` given the
    /// nonlinear parameters.
    pub basis: fn(nl: &[f64], x: f64, out: &mut [f64]),
}

/// Result of a grid-polish run.
#[derive(Debug, Clone)]
pub struct OracleFit {
    pub nonlinear: Vec<f64>,
    pub linear: Vec<f64>,
    pub rss: f64,
}

/// Solve `A a = b` (small, symmetric positive semi-definite) by Gaussian
/// elimination with partial pivoting; adds a tiny ridge on exact singularity.
fn solve_normal(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    let ridge = 1e-12
        * a.iter()
            .enumerate()
            .map(|(i, row)| row[i].abs())
            .fold(0.0, f64::max)
            .max(1e-300);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let p = a[col][col];
        if p.abs() < 1e-300 {
            continue;
        }
        for row in col + 1..n {
            let f = a[row][col] / p;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = if a[row][row].abs() < 1e-300 {
            0.0
        } else {
            s / a[row][row]
        };
    }
    x
}

/// For fixed nonlinear parameters, project out the linear coefficients and
/// return `(coeffs, rss)`. The normal equations are column-equilibrated so
/// basis functions of wildly different magnitudes (seconds vs unity) do not
/// lose the small columns to conditioning.
pub fn project_linear(model: &VarProModel, nl: &[f64], xs: &[f64], ys: &[f64]) -> (Vec<f64>, f64) {
    let k = model.n_linear;
    let mut gtg = vec![vec![0.0; k]; k];
    let mut gty = vec![0.0; k];
    let mut basis = vec![0.0; k];
    for (&x, &y) in xs.iter().zip(ys) {
        (model.basis)(nl, x, &mut basis);
        for i in 0..k {
            gty[i] += basis[i] * y;
            for j in i..k {
                gtg[i][j] += basis[i] * basis[j];
            }
        }
    }
    for i in 0..k {
        for j in 0..i {
            gtg[i][j] = gtg[j][i];
        }
    }
    let norms: Vec<f64> = (0..k).map(|i| gtg[i][i].sqrt().max(1e-150)).collect();
    let mut scaled = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..k {
            scaled[i][j] = gtg[i][j] / (norms[i] * norms[j]);
        }
    }
    let rhs: Vec<f64> = (0..k).map(|i| gty[i] / norms[i]).collect();
    let coeffs: Vec<f64> = solve_normal(scaled, rhs)
        .into_iter()
        .zip(&norms)
        .map(|(c, n)| c / n)
        .collect();
    let mut rss = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        (model.basis)(nl, x, &mut basis);
        let yhat: f64 = basis.iter().zip(&coeffs).map(|(b, c)| b * c).sum();
        rss += (y - yhat) * (y - yhat);
    }
    (coeffs, rss)
}

fn rss_at(model: &VarProModel, nl: &[f64], xs: &[f64], ys: &[f64]) -> f64 {
    project_linear(model, nl, xs, ys).1
}

/// Exhaustive search over the cartesian product of per-parameter grids,
/// followed by cyclic golden-section polish of each nonlinear coordinate.
pub fn grid_polish(model: &VarProModel, xs: &[f64], ys: &[f64], grids: &[Vec<f64>]) -> OracleFit {
    assert_eq!(grids.len(), model.n_nonlinear);

    let mut best_nl: Vec<f64> = grids.iter().map(|g| g[0]).collect();
    let mut best_rss = f64::INFINITY;
    let mut idx = vec![0usize; grids.len()];
    loop {
        let nl: Vec<f64> = idx.iter().zip(grids).map(|(&i, g)| g[i]).collect();
        let rss = rss_at(model, &nl, xs, ys);
        if rss < best_rss {
            best_rss = rss;
            best_nl = nl;
        }
        // Odometer increment over the grid indices.
        let mut dim = 0;
        loop {
            if dim == grids.len() {
                break;
            }
            idx[dim] += 1;
            if idx[dim] < grids[dim].len() {
                break;
            }
            idx[dim] = 0;
            dim += 1;
        }
        if dim == grids.len() {
            break;
        }
    }

    // Polish with a Nelder-Mead simplex over the nonlinear parameters
    // (linear ones stay projected out). Downhill simplex follows the curved
    // valleys that axis-aligned searches stall in.
    let spacings: Vec<f64> = grids
        .iter()
        .enumerate()
        .map(|(dim, grid)| {
            if grid.len() > 1 {
                let mut d = f64::INFINITY;
                for w in grid.windows(2) {
                    d = d.min((w[1] - w[0]).abs());
                }
                d
            } else {
                best_nl[dim].abs().max(1e-12) * 0.2
            }
        })
        .collect();
    let polished = nelder_mead(|nl| rss_at(model, nl, xs, ys), &best_nl, &spacings, 20_000);
    if rss_at(model, &polished, xs, ys) < best_rss {
        best_nl = polished;
    }

    let (linear, rss) = project_linear(model, &best_nl, xs, ys);
    OracleFit {
        nonlinear: best_nl,
        linear,
        rss,
    }
}

/// Plain downhill simplex (Nelder-Mead) minimizer.
fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    max_iter: usize,
) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for dim in 0..n {
        let mut v = x0.to_vec();
        v[dim] += steps[dim];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();

    for _ in 0..max_iter {
        // Order the simplex: best first.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let revalues: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex = reordered;
        values = revalues;

        // Convergence: simplex collapsed in every dimension.
        let collapsed = (0..n).all(|dim| {
            let spread = simplex
                .iter()
                .map(|v| v[dim])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                    (lo.min(x), hi.max(x))
                });
            (spread.1 - spread.0).abs() <= 1e-11 * (x0[dim].abs() + steps[dim].abs())
        });
        if collapsed {
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|dim| simplex[..n].iter().map(|v| v[dim]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let mix = |a: f64| -> Vec<f64> {
            (0..n)
                .map(|d| centroid[d] + a * (centroid[d] - worst[d]))
                .collect()
        };

        let reflect = mix(1.0);
        let f_reflect = f(&reflect);
        if f_reflect < values[0] {
            let expand = mix(2.0);
            let f_expand = f(&expand);
            if f_expand < f_reflect {
                simplex[n] = expand;
                values[n] = f_expand;
            } else {
                simplex[n] = reflect;
                values[n] = f_reflect;
            }
        } else if f_reflect < values[n - 1] {
            simplex[n] = reflect;
            values[n] = f_reflect;
        } else {
            let contract = if f_reflect < values[n] {
                mix(0.5)
            } else {
                mix(-0.5)
            };
            let f_contract = f(&contract);
            if f_contract < values[n].min(f_reflect) {
                simplex[n] = contract;
                values[n] = f_contract;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]);
                    }
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    simplex.swap_remove(best)
}

/// `A exp(-x/T) + B`; nonlinear `[T]`, linear `[A, B]`.
pub fn exp_decay_model() -> VarProModel {
    VarProModel {
        n_nonlinear: 1,
        n_linear: 2,
        basis: |nl, x, out| {
            out[0] = (-x / nl[0]).exp();
            out[1] = 1.0;
        },
    }
}

/// `A exp(-(x/T)^n) + B`; nonlinear `[T, n]`, linear `[A, B]`.
pub fn stretched_exp_model() -> VarProModel {
    VarProModel {
        n_nonlinear: 2,
        n_linear: 2,
        basis: |nl, x, out| {
            let u = (x / nl[0]).max(0.0);
            out[0] = (-u.powf(nl[1])).exp();
            out[1] = 1.0;
        },
    }
}

/// `A sin(2 pi f x + phi) exp(-x/T) + B x + D`; nonlinear `[f, T]`, linear
/// `[A sin, A cos, B, D]` components.
pub fn damped_sine_model() -> VarProModel {
    VarProModel {
        n_nonlinear: 2,
        n_linear: 4,
        basis: |nl, x, out| {
            let w = std::f64::consts::TAU * nl[0] * x;
            let e = (-x / nl[1]).exp();
            out[0] = w.sin() * e;
            out[1] = w.cos() * e;
            out[2] = x;
            out[3] = 1.0;
        },
    }
}

/// Two damped sinusoids plus linear baseline; nonlinear `[f1, T1, f2, T2]`.
pub fn two_tone_model() -> VarProModel {
    VarProModel {
        n_nonlinear: 4,
        n_linear: 6,
        basis: |nl, x, out| {
            let w1 = std::f64::consts::TAU * nl[0] * x;
            let e1 = (-x / nl[1]).exp();
            let w2 = std::f64::consts::TAU * nl[2] * x;
            let e2 = (-x / nl[3]).exp();
            out[0] = w1.sin() * e1;
            out[1] = w1.cos() * e1;
            out[2] = w2.sin() * e2;
            out[3] = w2.cos() * e2;
            out[4] = x;
            out[5] = 1.0;
        },
    }
}

/// `A + B x + D * exp(-(x/T2b)^n) * sum_j exp(-((x - j*T_rev)/T_dec)^2)`,
/// j = 0..=10; nonlinear `[T2b, n, T_rev, T_dec]`, linear `[A, B, D]`.
pub fn revival_train_model() -> VarProModel {
    VarProModel {
        n_nonlinear: 4,
        n_linear: 3,
        basis: |nl, x, out| {
            let stretch = (-(x / nl[0]).max(0.0).powf(nl[1])).exp();
            let mut comb = 0.0;
            for j in 0..=10 {
                let arg = (x - j as f64 * nl[2]) / nl[3];
                comb += (-arg * arg).exp();
            }
            out[0] = 1.0;
            out[1] = x;
            out[2] = stretch * comb;
        },
    }
}

/// Recover `(amplitude, phase)` from sin/cos coefficients of
/// `a*sin(w) + b*cos(w) = A*sin(w + phi)`.
pub fn amp_phase(a_sin: f64, a_cos: f64) -> (f64, f64) {
    let amp = a_sin.hypot(a_cos);
    let phase = a_cos.atan2(a_sin);
    (amp, phase)
}

/// Linear-spaced grid helper, inclusive of both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}
