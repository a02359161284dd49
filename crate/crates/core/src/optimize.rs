//! Derivative-free minimizers shared by the calibrators.

/// `n` points spaced evenly in log space over `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Result of a scalar minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMin {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Golden-section search on `[a, b]` until the bracket is narrower than `tol`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> ScalarMin {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evaluations = 2;
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        evaluations += 1;
    }
    if fc <= fd {
        ScalarMin { x: c, value: fc, evaluations }
    } else {
        ScalarMin { x: d, value: fd, evaluations }
    }
}

/// Minimizes `f` over `[lo, hi]` by a log-spaced grid bracket followed by
/// golden-section refinement in log space.
///
/// The refinement stops once the bracket in `x` is narrower than `tol`. The
/// returned value is never worse than the best grid point; ties among grid
/// points go to the smaller `x`.
pub fn bracketed_log_minimize<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    grid_points: usize,
    tol: f64,
) -> ScalarMin {
    let grid = log_grid(lo, hi, grid_points);
    let values: Vec<f64> = grid.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    let left = grid[best.saturating_sub(1)];
    let right = grid[(best + 1).min(grid.len() - 1)];

    // Shrink in log space until the bracket width in x falls below tol.
    let log_tol = tol / right;
    let refined = golden_section(|u| f(u.exp()), left.ln(), right.ln(), log_tol);
    let evaluations = grid.len() + refined.evaluations;
    if refined.value < values[best] {
        ScalarMin {
            x: refined.x.exp(),
            value: refined.value,
            evaluations,
        }
    } else {
        ScalarMin {
            x: grid[best],
            value: values[best],
            evaluations,
        }
    }
}

/// Result of a Nelder-Mead run.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexMin {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Box bounds for [`nelder_mead`]; candidates are clamped before evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Nelder-Mead simplex search with clamped box bounds.
///
/// Standard coefficients (reflect 1, expand 2, contract 1/2, shrink 1/2).
/// Converges when both the spread of simplex values and the largest vertex
/// distance from the best vertex drop below `tol`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    step: &[f64],
    bounds: &Bounds,
    tol: f64,
    max_evals: usize,
) -> SimplexMin {
    let n = start.len();
    let mut evaluations = 0;
    let mut eval = |x: &mut Vec<f64>, evaluations: &mut usize| {
        bounds.clamp(x);
        *evaluations += 1;
        f(x)
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let mut x0 = start.to_vec();
    let f0 = eval(&mut x0, &mut evaluations);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += step[i];
        // Step inward when the vertex would sit on the boundary.
        if x[i] > bounds.upper[i] {
            x[i] = x0[i] - step[i];
        }
        let fx = eval(&mut x, &mut evaluations);
        simplex.push((x, fx));
    }

    let mut converged = false;
    while evaluations < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (worst - best).abs() <= tol && size <= tol {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |coef: f64, from: &[f64]| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(c, w)| c + coef * (c - w))
                .collect()
        };

        let worst_x = simplex[n].0.clone();
        let mut reflected = toward(1.0, &worst_x);
        let fr = eval(&mut reflected, &mut evaluations);
        if fr < best {
            let mut expanded = toward(2.0, &worst_x);
            let fe = eval(&mut expanded, &mut evaluations);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
            continue;
        }
        let (mut contracted, fc) = if fr < worst {
            let mut c = toward(0.5, &worst_x);
            let fc = eval(&mut c, &mut evaluations);
            (c, fc)
        } else {
            let mut c = toward(-0.5, &worst_x);
            let fc = eval(&mut c, &mut evaluations);
            (c, fc)
        };
        if fc < worst.min(fr) {
            simplex[n] = (std::mem::take(&mut contracted), fc);
            continue;
        }
        let best_x = simplex[0].0.clone();
        for vertex in simplex.iter_mut().skip(1) {
            let mut x: Vec<f64> = best_x
                .iter()
                .zip(&vertex.0)
                .map(|(b, v)| b + 0.5 * (v - b))
                .collect();
            let fx = eval(&mut x, &mut evaluations);
            *vertex = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    SimplexMin {
        x,
        value,
        evaluations,
        converged,
    }
}
