//! Unconstrained minimizers: Nelder–Mead simplex and L-BFGS.
//!
//! Both minimize; likelihood callers negate. Non-finite objective values are
//! treated as +∞ so that callers can signal infeasible points.

use serde::{Deserialize, Serialize};

/// Outcome of a minimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NelderMeadOptions {
    /// Edge length of the initial simplex along each axis.
    pub initial_step: f64,
    pub max_iter: usize,
    /// Stop when the spread of simplex values drops below this (relative to
    /// max(1, |f_best|)).
    pub f_tol: f64,
    /// ... and the simplex diameter below this.
    pub x_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            max_iter: 2000,
            f_tol: 1e-6,
            x_tol: 1e-8,
        }
    }
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with the standard coefficients (1, 2, ½, ½).
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        finite_or_inf(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i].abs() > 1e-300 {
            opts.initial_step * x[i].abs().max(1.0)
        } else {
            opts.initial_step
        };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }
    let mut converged = false;
    let mut it = 0;
    let mut centroid = vec![0.0; n];
    let mut trial = vec![0.0; n];
    while it < opts.max_iter {
        it += 1;
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| {
                x.iter()
                    .zip(&simplex[0].0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if (worst - best).abs() <= opts.f_tol * best.abs().max(1.0) && diameter <= opts.x_tol.max(opts.f_tol) {
            converged = true;
            break;
        }
        if diameter <= opts.x_tol {
            converged = true;
            break;
        }
        centroid.iter_mut().for_each(|c| *c = 0.0);
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }
        let point = |t: f64, out: &mut Vec<f64>, worst: &[f64]| {
            for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst) {
                *o = c + t * (c - w);
            }
        };
        let xw = simplex[n].0.clone();
        point(1.0, &mut trial, &xw);
        let fr = eval(&trial, &mut evals);
        if fr < best {
            let reflected = trial.clone();
            point(2.0, &mut trial, &xw);
            let fe = eval(&trial, &mut evals);
            simplex[n] = if fe < fr { (trial.clone(), fe) } else { (reflected, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (trial.clone(), fr);
            continue;
        }
        let (t, reference) = if fr < worst { (0.5, fr) } else { (-0.5, worst) };
        point(t, &mut trial, &xw);
        let fc = eval(&trial, &mut evals);
        if fc < reference {
            simplex[n] = (trial.clone(), fc);
            continue;
        }
        let x_best = simplex[0].0.clone();
        for entry in simplex.iter_mut().skip(1) {
            for (v, b) in entry.0.iter_mut().zip(&x_best) {
                *v = b + 0.5 * (*v - b);
            }
            entry.1 = eval(&entry.0, &mut evals);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, value) = simplex.swap_remove(0);
    Minimum {
        x,
        value,
        iterations: it,
        evaluations: evals,
        converged,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    /// History length.
    pub memory: usize,
    /// Stop when the relative decrease over one iteration falls below this.
    pub rel_tol: f64,
    /// ... or when the max-norm of the gradient falls below this.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            memory: 8,
            rel_tol: 1e-7,
            grad_tol: 1e-9,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with a Wolfe line search. `f` writes the gradient
/// into its second argument and returns the objective.
pub fn lbfgs<F: FnMut(&[f64], &mut [f64]) -> f64>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut evals = 1;
    let mut fx = finite_or_inf(f(&x, &mut g));
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: fx,
            iterations: 0,
            evaluations: evals,
            converged: false,
        };
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut converged = false;
    let mut it = 0;
    while it < opts.max_iter {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= opts.grad_tol {
            converged = true;
            break;
        }
        it += 1;
        // two-loop recursion
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        let k = s_hist.len();
        for i in (0..k).rev() {
            let a = rho[i] * dot(&s_hist[i], &d);
            alpha_buf[i] = a;
            d.iter_mut().zip(&y_hist[i]).for_each(|(di, yi)| *di -= a * yi);
        }
        let gamma = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            1.0 / g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0)
        };
        d.iter_mut().for_each(|v| *v *= gamma);
        for i in 0..k {
            let b = rho[i] * dot(&y_hist[i], &d);
            d.iter_mut()
                .zip(&s_hist[i])
                .for_each(|(di, si)| *di += (alpha_buf[i] - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // not a descent direction: restart from steepest descent
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            let scale = 1.0 / g.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi * scale);
            slope = dot(&g, &d);
        }
        let f_new = match wolfe_search(&mut f, &x, fx, slope, &d, &mut x_new, &mut g_new, &mut evals) {
            Some((_, v)) => v,
            None if !s_hist.is_empty() => {
                // stale curvature pairs: retry from steepest descent
                s_hist.clear();
                y_hist.clear();
                rho.clear();
                continue;
            }
            None => match backtrack(&mut f, &x, fx, slope, &d, &mut x_new, &mut g_new, &mut evals) {
                Some(v) => v,
                None => break,
            },
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let decrease = fx - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        if decrease <= opts.rel_tol * fx.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    Minimum {
        x,
        value: fx,
        iterations: it,
        evaluations: evals,
        converged,
    }
}

/// Armijo backtracking for objectives where the Wolfe search fails
/// (for instance across small discontinuities).
#[allow(clippy::too_many_arguments)]
fn backtrack<F: FnMut(&[f64], &mut [f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    x_new: &mut [f64],
    g_new: &mut [f64],
    evals: &mut usize,
) -> Option<f64> {
    let mut a = 1.0;
    for _ in 0..60 {
        for ((xn, xi), di) in x_new.iter_mut().zip(x).zip(d) {
            *xn = xi + a * di;
        }
        *evals += 1;
        let v = finite_or_inf(f(x_new, g_new));
        if v < f0 + 1e-4 * a * slope0 && g_new.iter().all(|g| g.is_finite()) {
            return Some(v);
        }
        a *= 0.3;
    }
    None
}

/// Line search satisfying the strong Wolfe conditions (c1 = 1e-4, c2 = 0.9),
/// bracketing then zooming with safeguarded cubic/bisection steps.
#[allow(clippy::too_many_arguments)]
fn wolfe_search<F: FnMut(&[f64], &mut [f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    x_new: &mut [f64],
    g_new: &mut [f64],
    evals: &mut usize,
) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    let mut phi = |a: f64, x_new: &mut [f64], g_new: &mut [f64], evals: &mut usize| -> (f64, f64) {
        for ((xn, xi), di) in x_new.iter_mut().zip(x).zip(d) {
            *xn = xi + a * di;
        }
        *evals += 1;
        let v = finite_or_inf(f(x_new, g_new));
        let s = if v.is_finite() { dot(g_new, d) } else { f64::NAN };
        (v, s)
    };
    let mut a_prev = 0.0;
    let mut f_prev = f0;
    let mut s_prev = slope0;
    let mut a = 1.0;
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..40 {
        let (fa, sa) = phi(a, x_new, g_new, evals);
        if !fa.is_finite() {
            a = a_prev + 0.25 * (a - a_prev);
            if a - a_prev < 1e-16 {
                break;
            }
            continue;
        }
        if fa > f0 + C1 * a * slope0 || fa >= f_prev && a_prev > 0.0 {
            return zoom(
                &mut phi, a_prev, f_prev, s_prev, a, fa, sa, f0, slope0, x_new, g_new, evals,
            );
        }
        if sa.abs() <= -C2 * slope0 {
            return Some((a, fa));
        }
        best = Some((a, fa));
        if sa >= 0.0 {
            return zoom(
                &mut phi, a, fa, sa, a_prev, f_prev, s_prev, f0, slope0, x_new, g_new, evals,
            );
        }
        a_prev = a;
        f_prev = fa;
        s_prev = sa;
        a *= 2.0;
    }
    // fall back to the last sufficient-decrease point
    let (a, _) = best?;
    let (fa, _) = phi(a, x_new, g_new, evals);
    Some((a, fa))
}

#[allow(clippy::too_many_arguments)]
fn zoom<P: FnMut(f64, &mut [f64], &mut [f64], &mut usize) -> (f64, f64)>(
    phi: &mut P,
    mut lo: f64,
    mut f_lo: f64,
    mut s_lo: f64,
    mut hi: f64,
    mut f_hi: f64,
    mut s_hi: f64,
    f0: f64,
    slope0: f64,
    x_new: &mut [f64],
    g_new: &mut [f64],
    evals: &mut usize,
) -> Option<(f64, f64)> {
    const C1: f64 = 1e-4;
    const C2: f64 = 0.9;
    for _ in 0..40 {
        let a = cubic_min(lo, f_lo, s_lo, hi, f_hi, s_hi);
        let (fa, sa) = phi(a, x_new, g_new, evals);
        if !fa.is_finite() || fa > f0 + C1 * a * slope0 || fa >= f_lo {
            hi = a;
            f_hi = fa;
            s_hi = sa;
        } else {
            if sa.abs() <= -C2 * slope0 {
                return Some((a, fa));
            }
            if sa * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
                s_hi = s_lo;
            }
            lo = a;
            f_lo = fa;
            s_lo = sa;
        }
        if (hi - lo).abs() < 1e-14 * lo.abs().max(1e-10) {
            break;
        }
    }
    if lo > 0.0 && f_lo < f0 {
        let (fa, _) = phi(lo, x_new, g_new, evals);
        Some((lo, fa))
    } else {
        None
    }
}

/// Minimizer of the cubic interpolating (a, fa, sa), (b, fb, sb), clamped
/// to the inner 80% of the interval; bisection when undefined.
fn cubic_min(a: f64, fa: f64, sa: f64, b: f64, fb: f64, sb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let mid = 0.5 * (a + b);
    if !(fa.is_finite() && fb.is_finite() && sa.is_finite() && sb.is_finite()) {
        return mid;
    }
    let d1 = sa + sb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - sa * sb;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (sb + d2 - d1) / (sb - sa + 2.0 * d2);
    let margin = 0.1 * (hi - lo);
    if t.is_finite() {
        t.clamp(lo + margin, hi - margin)
    } else {
        mid
    }
}
