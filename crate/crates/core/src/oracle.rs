//! Independent references: the analytic double-integrator optimum and a
//! direct-transcription solution of the planar model.

use crate::model::QuadrotorParams;
use crate::solver::lbfgs::{minimize, LbfgsOptions};
use crate::solver::nlp::{softplus, softplus_inv};
use crate::{Error, Result};

/// `x'' = u`, `|u| <= u_max`, from `(x0, v0)` to `(xf, vf)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiProblem {
    pub x0: f64,
    pub v0: f64,
    pub xf: f64,
    pub vf: f64,
    pub u_max: f64,
}

impl DiProblem {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.v0, self.xf, self.vf].iter().all(|v| v.is_finite());
        if !finite || !(self.u_max > 0.0) || !self.u_max.is_finite() {
            return Err(Error::InvalidArgument("double integrator needs finite states and u_max > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiSolution {
    pub t_star: f64,
    /// Time of the single switch, or the final time when there is none.
    pub switch_time: f64,
    /// Signs of the control arcs in order; empty for a zero-length task.
    pub signs: Vec<i8>,
}

/// Closed-form minimum-time bang-bang solution with at most one switch.
pub fn di_min_time(p: &DiProblem) -> DiSolution {
    let eps = 1e-12 * (1.0 + p.x0.abs() + p.xf.abs() + p.v0.abs() + p.vf.abs());
    if (p.x0 - p.xf).abs() <= eps && (p.v0 - p.vf).abs() <= eps {
        return DiSolution { t_star: 0.0, switch_time: 0.0, signs: Vec::new() };
    }
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for sigma in [1.0, -1.0] {
        let a = sigma * p.u_max;
        let v1_sq = 0.5 * (p.v0 * p.v0 + p.vf * p.vf) + a * (p.xf - p.x0);
        if v1_sq < -eps {
            continue;
        }
        let v1 = sigma * v1_sq.max(0.0).sqrt();
        let t1 = (v1 - p.v0) / a;
        let t2 = (v1 - p.vf) / a;
        let tol = 1e-9 * (1.0 + t1.abs() + t2.abs());
        if t1 < -tol || t2 < -tol {
            continue;
        }
        let (t1, t2) = (t1.max(0.0), t2.max(0.0));
        if best.is_none_or(|b| t1 + t2 < b.0) {
            best = Some((t1 + t2, t1, t2, sigma));
        }
    }
    let (t, t1, t2, sigma) = best.expect("a one-switch solution always exists");
    let tiny = 1e-12 * (1.0 + t);
    let s = sigma as i8;
    let signs = match (t1 > tiny, t2 > tiny) {
        (true, true) => vec![s, -s],
        (true, false) => vec![s],
        _ => vec![-s],
    };
    DiSolution { t_star: t, switch_time: t1, signs }
}

/// Endpoint of the bang-bang profile `(sign, duration)*` integrated exactly.
pub fn di_integrate(x0: f64, v0: f64, u_max: f64, arcs: &[(i8, f64)]) -> (f64, f64) {
    arcs.iter().fold((x0, v0), |(x, v), &(s, d)| {
        let a = s as f64 * u_max;
        (x + v * d + 0.5 * a * d * d, v + a * d)
    })
}

/// Arcs of a [`DiSolution`] as `(sign, duration)` pairs.
pub fn di_arcs(sol: &DiSolution) -> Vec<(i8, f64)> {
    match sol.signs.as_slice() {
        [a, b] => vec![(*a, sol.switch_time), (*b, sol.t_star - sol.switch_time)],
        [a] => vec![(*a, sol.t_star)],
        _ => Vec::new(),
    }
}

/// Result of the planar direct transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationResult {
    /// Minimum time in seconds.
    pub t_ref: f64,
    /// Largest terminal-state mismatch in non-dimensional units.
    pub terminal_error: f64,
    pub converged: bool,
}

/// Dimensional planar state `[x, vx, z, vz, theta]`.
pub type PlanarTask = ([f64; 5], [f64; 5]);

fn rhs(x: &[f64; 5], ur: f64, ut: f64) -> [f64; 5] {
    let (s, c) = x[4].sin_cos();
    [x[1], ut * s, x[3], ut * c - 1.0, ur]
}

fn nondim(params: &QuadrotorParams, x: [f64; 5]) -> [f64; 5] {
    let sc = params.scaling();
    [sc.length(x[0]), sc.velocity(x[1]), sc.length(x[2]), sc.velocity(x[3]), x[4]]
}

/// Free-final-time direct transcription of the non-dimensional planar model
/// with `knots` control knots and Heun (explicit trapezoidal) steps. Inputs
/// are bounded through `u = mid + half * sin(z)`; the terminal state is
/// enforced by an augmented Lagrangian on top of L-BFGS.
pub fn planar_collocation_reference(params: &QuadrotorParams, task: &PlanarTask, knots: usize) -> Result<CollocationResult> {
    params.validate()?;
    if knots < 2 {
        return Err(Error::InvalidArgument("at least two knots are needed".into()));
    }
    let x0 = nondim(params, task.0);
    let xf = nondim(params, task.1);
    if x0.iter().zip(&xf).all(|(a, b)| (a - b).abs() < 1e-12) {
        return Ok(CollocationResult { t_ref: 0.0, terminal_error: 0.0, converged: true });
    }
    let (lo, hi) = params.planar_bounds();
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let k = knots;
    let n = 2 * (k + 1) + 1;

    // Forward pass returning the terminal state and storing the trajectory.
    let simulate = |v: &[f64], xs: &mut Vec<[f64; 5]>| -> [f64; 5] {
        let h = softplus(v[n - 1]) / k as f64;
        xs.clear();
        xs.push(x0);
        let u = |i: usize| (v[i].sin(), mid + half * v[k + 1 + i].sin());
        let mut x = x0;
        for i in 0..k {
            let (r0, t0) = u(i);
            let (r1, t1) = u(i + 1);
            let k1 = rhs(&x, r0, t0);
            let xt: [f64; 5] = std::array::from_fn(|j| x[j] + h * k1[j]);
            let k2 = rhs(&xt, r1, t1);
            x = std::array::from_fn(|j| x[j] + 0.5 * h * (k1[j] + k2[j]));
            xs.push(x);
        }
        x
    };

    let mut lambda = [0.0; 5];
    let mut mu = 10.0;
    let dist = ((xf[0] - x0[0]).powi(2) + (xf[2] - x0[2]).powi(2)).sqrt();
    let a = 0.5 * (hi * hi - 1.0).max(0.25).sqrt();
    let t0 = (2.0 * (dist / a).sqrt()).max(1.0);
    let mut v = vec![0.0; n];
    v[n - 1] = softplus_inv(t0);
    let opts = LbfgsOptions { max_iters: 4000, grad_tol: 1e-9, stall_tol: 1e-13, stall_window: 20, ..Default::default() };
    let mut err = f64::INFINITY;
    let mut xs = Vec::with_capacity(k + 1);
    for _ in 0..30 {
        let lam = lambda;
        let res = minimize(
            |v, g| {
                let mut xs = Vec::with_capacity(k + 1);
                let xk = simulate(v, &mut xs);
                let tf = softplus(v[n - 1]);
                let h = tf / k as f64;
                let c: [f64; 5] = std::array::from_fn(|j| xk[j] - xf[j]);
                let f = tf + (0..5).map(|j| lam[j] * c[j] + 0.5 * mu * c[j] * c[j]).sum::<f64>();
                // Reverse sweep through the Heun steps.
                g.iter_mut().for_each(|e| *e = 0.0);
                let mut xb: [f64; 5] = std::array::from_fn(|j| lam[j] + mu * c[j]);
                let mut hb = 0.0;
                for i in (0..k).rev() {
                    let x = xs[i];
                    let (r0, t0) = (v[i].sin(), mid + half * v[k + 1 + i].sin());
                    let (r1, t1) = (v[i + 1].sin(), mid + half * v[k + 2 + i].sin());
                    let k1 = rhs(&x, r0, t0);
                    let xt: [f64; 5] = std::array::from_fn(|j| x[j] + h * k1[j]);
                    let k2 = rhs(&xt, r1, t1);
                    hb += 0.5 * (0..5).map(|j| xb[j] * (k1[j] + k2[j])).sum::<f64>();
                    let k2b: [f64; 5] = std::array::from_fn(|j| 0.5 * h * xb[j]);
                    let mut k1b = k2b;
                    // k2 = f(xt, u1)
                    let (s2, c2) = xt[4].sin_cos();
                    let mut xtb = [0.0; 5];
                    xtb[1] += k2b[0];
                    xtb[3] += k2b[2];
                    xtb[4] += k2b[1] * t1 * c2 - k2b[3] * t1 * s2;
                    g[i + 1] += k2b[4] * v[i + 1].cos();
                    g[k + 2 + i] += (k2b[1] * s2 + k2b[3] * c2) * half * v[k + 2 + i].cos();
                    // xt = x + h k1
                    let mut xbn = xb;
                    for j in 0..5 {
                        xbn[j] += xtb[j];
                        k1b[j] += h * xtb[j];
                    }
                    hb += (0..5).map(|j| xtb[j] * k1[j]).sum::<f64>();
                    // k1 = f(x, u0)
                    let (s1, c1) = x[4].sin_cos();
                    xbn[1] += k1b[0];
                    xbn[3] += k1b[2];
                    xbn[4] += k1b[1] * t0 * c1 - k1b[3] * t0 * s1;
                    g[i] += k1b[4] * v[i].cos();
                    g[k + 1 + i] += (k1b[1] * s1 + k1b[3] * c1) * half * v[k + 1 + i].cos();
                    xb = xbn;
                }
                let sig = 1.0 / (1.0 + (-v[n - 1]).exp());
                g[n - 1] = (1.0 + hb / k as f64) * sig;
                f
            },
            v.clone(),
            &opts,
        );
        v = res.x;
        let xk = simulate(&v, &mut xs);
        let c: [f64; 5] = std::array::from_fn(|j| xk[j] - xf[j]);
        err = c.iter().fold(0.0, |m, e| m.max(e.abs()));
        if err < 1e-7 {
            break;
        }
        for j in 0..5 {
            lambda[j] += mu * c[j];
        }
        mu = (mu * 4.0).min(1e7);
    }
    let sc = params.scaling();
    Ok(CollocationResult { t_ref: sc.time_inv(softplus(v[n - 1])), terminal_error: err, converged: err < 1e-5 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force optimum over one-switch profiles. The switch time is
    /// scanned on a grid; the arc after it is fixed by the terminal
    /// velocity, and sign changes of the terminal position error bracket
    /// the feasible switches.
    fn grid_search(p: &DiProblem, res: f64) -> f64 {
        let mut best = f64::INFINITY;
        for sigma in [1.0, -1.0] {
            let a = sigma * p.u_max;
            let eval = |t1: f64| {
                let (x1, v1) = (p.x0 + p.v0 * t1 + 0.5 * a * t1 * t1, p.v0 + a * t1);
                let t2 = (v1 - p.vf) / a;
                (x1 + v1 * t2 - 0.5 * a * t2 * t2 - p.xf, t2)
            };
            let steps = (40.0 / res) as usize;
            let mut prev = eval(0.0);
            for i in 1..=steps {
                let t1 = i as f64 * res;
                let cur = eval(t1);
                if prev.1 >= 0.0 && cur.1 >= 0.0 && prev.0 * cur.0 <= 0.0 {
                    let w = if cur.0 == prev.0 { 0.0 } else { prev.0 / (prev.0 - cur.0) };
                    let ts = t1 - res + w * res;
                    best = best.min(ts + eval(ts).1);
                }
                prev = cur;
            }
        }
        best
    }

    #[test]
    fn zero_task() {
        let s = di_min_time(&DiProblem { x0: 1.0, v0: 0.0, xf: 1.0, vf: 0.0, u_max: 1.0 });
        assert_eq!(s.t_star, 0.0);
        assert!(s.signs.is_empty());
    }

    #[test]
    fn rest_to_rest_closed_form() {
        for d in [0.5, 2.0, 7.0] {
            let s = di_min_time(&DiProblem { x0: 0.0, v0: 0.0, xf: d, vf: 0.0, u_max: 1.0 });
            assert!((s.t_star - 2.0 * f64::sqrt(d)).abs() < 1e-12);
            assert!((s.switch_time - f64::sqrt(d)).abs() < 1e-12);
            let g = grid_search(&DiProblem { x0: 0.0, v0: 0.0, xf: d, vf: 0.0, u_max: 1.0 }, 1e-4);
            assert!((g - s.t_star).abs() < 1e-3);
        }
        let s = di_min_time(&DiProblem { x0: -2.0, v0: 0.0, xf: 0.0, vf: 0.0, u_max: 1.0 });
        assert!((s.t_star - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.signs, vec![1, -1]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn matches_grid_search_and_hits_target(
            x0 in -3.0..3.0f64, v0 in -2.0..2.0f64, xf in -3.0..3.0f64, vf in -2.0..2.0f64, u in 0.5..2.0f64,
        ) {
            let p = DiProblem { x0, v0, xf, vf, u_max: u };
            let s = di_min_time(&p);
            let (x, v) = di_integrate(x0, v0, u, &di_arcs(&s));
            prop_assert!((x - xf).abs() <= 1e-6 && (v - vf).abs() <= 1e-6);
            let g = grid_search(&p, 1e-4);
            prop_assert!((g - s.t_star).abs() <= 1e-3, "grid {} vs {}", g, s.t_star);
        }
    }

    #[test]
    fn collocation_hover_is_zero() {
        let p = QuadrotorParams::quad_std();
        let r = planar_collocation_reference(&p, &([0.0; 5], [0.0; 5]), 100).unwrap();
        assert_eq!(r.t_ref, 0.0);
    }
}
