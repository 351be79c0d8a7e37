//! Limited-memory BFGS with a weak Wolfe bracketing line search.

use serde::Serialize;
use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when `|g|_inf <= grad_tol * (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop when the relative decrease stays below this for `stall_window`
    /// consecutive iterations.
    pub stall_tol: f64,
    pub stall_window: usize,
    pub armijo: f64,
    /// Curvature constant of the weak Wolfe condition.
    pub wolfe: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 1000,
            grad_tol: 1e-5,
            stall_tol: 1e-7,
            stall_window: 10,
            armijo: 1e-4,
            wolfe: 0.9,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Stalled,
    LineSearch,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after every accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the value. Non-finite trial values count as failed steps.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    let mut history = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut stall = 0;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    if n == 0 {
        return LbfgsResult { x, f: fx, grad_inf: 0.0, iterations, evaluations: evals, termination: Termination::Gradient, history };
    }

    while iterations < opts.max_iters {
        if inf_norm(&g) <= opts.grad_tol * (1.0 + fx.abs()) {
            termination = Termination::Gradient;
            break;
        }
        // Two-loop recursion.
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        let mut alpha = vec![0.0; mem.len()];
        for (k, (s, y, rho)) in mem.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= alpha[k] * yi);
        }
        let gamma = mem.back().map_or_else(
            || 1.0 / inf_norm(&g).max(1.0),
            |(s, y, _)| dot(s, y) / dot(y, y),
        );
        d.iter_mut().for_each(|di| *di *= gamma);
        for (k, (s, y, rho)) in mem.iter().enumerate() {
            let beta = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha[k] - beta) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            mem.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi / inf_norm(&g).max(1.0));
            slope = dot(&g, &d);
        }

        // Weak Wolfe bracketing: bisect after a failed decrease, double
        // while the slope is still too steep.
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut step = 1.0;
        let mut f_new = f64::NAN;
        let mut accepted = false;
        for _ in 0..opts.max_backtracks {
            x_new.iter_mut().zip(x.iter().zip(&d)).for_each(|(xn, (xi, di))| *xn = xi + step * di);
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            if !f_new.is_finite() || f_new > fx + opts.armijo * step * slope {
                hi = step;
            } else if dot(&g_new, &d) < opts.wolfe * slope {
                lo = step;
            } else {
                accepted = true;
                break;
            }
            step = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * step };
        }
        if !accepted && lo > 0.0 {
            // Out of trials; fall back to the last point with enough decrease.
            x_new.iter_mut().zip(x.iter().zip(&d)).for_each(|(xn, (xi, di))| *xn = xi + lo * di);
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            accepted = true;
        }
        if accepted {
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-16 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                if mem.len() == opts.memory {
                    mem.pop_front();
                }
                mem.push_back((s, y, 1.0 / sy));
            }
            let rel = (fx - f_new) / fx.abs().max(1e-12);
            stall = if rel < opts.stall_tol { stall + 1 } else { 0 };
            std::mem::swap(&mut x, &mut x_new);
            std::mem::swap(&mut g, &mut g_new);
            fx = f_new;
        }
        iterations += 1;
        if !accepted {
            if mem.is_empty() {
                termination = Termination::LineSearch;
                break;
            }
            mem.clear();
            continue;
        }
        history.push(fx);
        if stall >= opts.stall_window {
            termination = Termination::Stalled;
            break;
        }
    }
    LbfgsResult { grad_inf: inf_norm(&g), x, f: fx, iterations, evaluations: evals, termination, history }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_rosenbrock() {
        let r = minimize(
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
                g[1] = 200.0 * (b - a * a);
                (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
            },
            vec![-1.2, 1.0],
            &LbfgsOptions { max_iters: 1000, grad_tol: 1e-10, ..Default::default() },
        );
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn history_is_monotone() {
        let r = minimize(
            |x, g| {
                let mut f = 0.0;
                for i in 0..x.len() {
                    let w = (i + 1) as f64;
                    f += w * x[i].powi(4) + x[i].powi(2);
                    g[i] = 4.0 * w * x[i].powi(3) + 2.0 * x[i];
                }
                f
            },
            vec![1.5; 20],
            &LbfgsOptions::default(),
        );
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(r.f < 1e-8);
    }
}
