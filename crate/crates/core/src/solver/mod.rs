//! Minimum-time planning over piecewise polynomials.
//!
//! The flat output is split into `L` segments (one per waypoint gap) of `N`
//! pieces each. Junction derivative stacks and piece durations are the
//! decision variables; actuator limits enter through a cubic-hinge penalty
//! integrated at uniform quadrature nodes and driven down by a continuation
//! on its weight.

pub mod lbfgs;
pub mod nlp;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::flatness::{ConstraintModel, DerivativeStack, FlatMap, FullState, RotorCommand};
use crate::model::QuadrotorParams;
use crate::oracle::DiProblem;
use crate::pmp::piece_count;
use crate::traj::{PiecewiseTrajectory, T_FLOOR};
use crate::{Error, Result};

pub use lbfgs::{minimize, LbfgsOptions, Termination};
use nlp::{AccelBound, Ball, QuadConstraint, StackConstraint, Transcription};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: [f64; 3],
    /// Passage radius in meters; zero pins the junction to `position`.
    pub tolerance: f64,
    pub yaw: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PieceBudget {
    Fixed(usize),
    /// Decreasing budgets for two-state flights; the piece-count formula
    /// with two rate switches per waypoint segment.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanProblem {
    pub model: ConstraintModel,
    pub params: QuadrotorParams,
    pub start: DerivativeStack,
    pub end: DerivativeStack,
    pub waypoints: Vec<Waypoint>,
    pub pieces: PieceBudget,
    /// Number of singular arcs assumed by the automatic piece budget.
    pub n_se: usize,
}

impl PlanProblem {
    /// Rest-to-rest flight between two positions at zero yaw.
    pub fn rest_to_rest(params: QuadrotorParams, model: ConstraintModel, from: [f64; 3], to: [f64; 3]) -> Self {
        let rows = model.order();
        Self {
            model,
            params,
            start: DerivativeStack::rest(from, 0.0, rows),
            end: DerivativeStack::rest(to, 0.0, rows),
            waypoints: Vec::new(),
            pieces: PieceBudget::Auto,
            n_se: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        for st in [&self.start, &self.end] {
            if st.derivs.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("boundary stacks must be finite".into()));
            }
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.tolerance >= 0.0) || w.position.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("waypoint {i} needs a finite position and tolerance >= 0")));
            }
        }
        if self.n_se > 2 {
            return Err(Error::InvalidArgument("n_se must be 0, 1 or 2".into()));
        }
        if self.pieces == PieceBudget::Fixed(0) {
            return Err(Error::InvalidArgument("pieces must be positive".into()));
        }
        Ok(())
    }

    fn yaw_varies(&self) -> bool {
        let y0 = self.start.derivs[0][3];
        let mut all = vec![y0, self.end.derivs[0][3]];
        all.extend(self.waypoints.iter().filter_map(|w| w.yaw));
        all.iter().any(|y| (y - y0).abs() > 0.0) || self.start.derivs.iter().chain(&self.end.derivs).skip(1).any(|r| r[3] != 0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Allowed violation in native constraint units (N, rad/s).
    pub feas_tol: f64,
    pub weights: Vec<f64>,
    /// Extra stages used only while the audit still fails.
    pub extra_weights: Vec<f64>,
    /// Further stages at the last weight while refinement continues.
    pub final_repeats: usize,
    pub quad_nodes: usize,
    pub audit_factor: usize,
    /// Shift added to every constraint inside the penalty.
    pub margin: f64,
    pub lbfgs: LbfgsOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-3,
            weights: vec![1e2, 1e3, 1e4, 1e5],
            extra_weights: vec![1e6, 1e7, 1e8],
            final_repeats: 3,
            quad_nodes: 16,
            audit_factor: 10,
            margin: 5e-4,
            lbfgs: LbfgsOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    /// Serialized separately through [`PiecewiseTrajectory::to_json`].
    #[serde(skip)]
    pub trajectory: PiecewiseTrajectory,
    pub total_time: f64,
    pub piece_times: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest violation found by the dense audit, clipped at zero.
    pub max_violation: f64,
    pub objective_history: Vec<f64>,
    pub pieces_per_segment: usize,
    /// Piece budgets tried, in order.
    pub attempted: Vec<usize>,
    /// Distance from each waypoint to its junction.
    pub waypoint_misses: Vec<f64>,
    pub final_weight: f64,
    pub stages: Vec<StageReport>,
}

/// Outcome of one penalty-weight stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub weight: f64,
    pub margin: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub objective: f64,
    pub total_time: f64,
    pub audit: f64,
}

impl Solution {
    pub fn is_success(&self, feas_tol: f64) -> bool {
        self.converged && self.max_violation <= feas_tol
    }
}

/// Everything the core loop needs, independent of the vehicle.
struct Task<'a> {
    constraint: &'a dyn StackConstraint,
    free_channels: [bool; 4],
    s: usize,
    start: Vec<[f64; 4]>,
    end: Vec<[f64; 4]>,
    waypoints: &'a [Waypoint],
}

/// Junction stacks plus one duration per piece.
#[derive(Debug, Clone)]
struct Guess {
    stacks: Vec<Vec<[f64; 4]>>,
    durations: Vec<f64>,
}

fn pad_rows(stack: &DerivativeStack, s: usize) -> Vec<[f64; 4]> {
    (0..s).map(|r| stack.derivs.get(r).copied().unwrap_or([0.0; 4])).collect()
}

fn dist3(a: [f64; 4], b: [f64; 4]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Task<'_> {
    fn segments(&self) -> usize {
        self.waypoints.len() + 1
    }

    fn waypoint_row(&self, i: usize, yaw: f64) -> [f64; 4] {
        let p = self.waypoints[i].position;
        [p[0], p[1], p[2], yaw]
    }

    /// Yaw anchors at segment boundaries, linearly filled where unset.
    fn boundary_yaws(&self) -> Vec<f64> {
        let l = self.segments();
        let mut known: Vec<Option<f64>> = vec![None; l + 1];
        known[0] = Some(self.start[0][3]);
        known[l] = Some(self.end[0][3]);
        for (i, w) in self.waypoints.iter().enumerate() {
            known[i + 1] = w.yaw;
        }
        let mut out = vec![0.0; l + 1];
        let mut prev = 0;
        for j in 1..=l {
            if let Some(y) = known[j] {
                let y0 = known[prev].unwrap();
                for k in prev..=j {
                    out[k] = y0 + (y - y0) * (k - prev) as f64 / (j - prev) as f64;
                }
                prev = j;
            }
        }
        out
    }

    /// One piece per segment: straight lines with Catmull-Rom velocities.
    fn seed(&self) -> Guess {
        let l = self.segments();
        let yaws = self.boundary_yaws();
        let mut pts: Vec<Vec<[f64; 4]>> = Vec::with_capacity(l + 1);
        pts.push(self.start.clone());
        for i in 0..self.waypoints.len() {
            let mut st = vec![[0.0; 4]; self.s];
            st[0] = self.waypoint_row(i, yaws[i + 1]);
            pts.push(st);
        }
        pts.push(self.end.clone());
        let a = self.constraint.seed_accel_estimate();
        let floor = if l == 1 { 1.0 } else { 0.25 };
        let durations: Vec<f64> = (0..l)
            .map(|k| {
                let d = dist3(pts[k][0], pts[k + 1][0]);
                let dv = dist3(pts[k][1], pts[k + 1][1]);
                (2.0 * (d / a).sqrt() + dv / a).max(floor)
            })
            .collect();
        for i in 1..l {
            let span = durations[i - 1] + durations[i];
            for c in 0..3 {
                if self.free_channels[c] {
                    pts[i][1][c] = (pts[i + 1][0][c] - pts[i - 1][0][c]) / span;
                }
            }
        }
        Guess { stacks: pts, durations }
    }

    /// Splits every piece of `g` into `n` equal parts.
    fn split(&self, g: &Guess, n: usize) -> Result<Guess> {
        if n == 1 {
            return Ok(g.clone());
        }
        let traj = self.trajectory(g)?;
        let mut stacks = vec![g.stacks[0].clone()];
        let mut durations = Vec::new();
        for (k, p) in traj.pieces.iter().enumerate() {
            for i in 1..=n {
                let st = if i == n {
                    g.stacks[k + 1].clone()
                } else {
                    p.eval(p.duration * i as f64 / n as f64, self.s - 1)
                };
                stacks.push(st);
                durations.push(p.duration / n as f64);
            }
        }
        Ok(Guess { stacks, durations })
    }

    fn trajectory(&self, g: &Guess) -> Result<PiecewiseTrajectory> {
        let pieces = (0..g.durations.len())
            .map(|k| crate::traj::PolyPiece::from_boundary(&g.stacks[k], &g.stacks[k + 1], g.durations[k]))
            .collect::<Result<Vec<_>>>()?;
        PiecewiseTrajectory::new(pieces)
    }

    fn transcription(&self, n: usize, guess: &Guess, opts: &SolverOptions) -> Transcription<'_> {
        let l = self.segments();
        let junctions = l * n + 1;
        let yaws = self.boundary_yaws();
        let mut base = guess.stacks.clone();
        let mut free = vec![vec![[false; 4]; self.s]; junctions];
        let mut balls = Vec::new();
        for j in 1..junctions - 1 {
            // Interior yaw follows the boundary anchors linearly.
            let (seg, off) = (j / n, j % n);
            let yaw = yaws[seg] + (yaws[seg + 1] - yaws[seg]) * off as f64 / n as f64;
            base[j][0][3] = yaw;
            for r in 1..self.s {
                base[j][r][3] = 0.0;
            }
            for r in 0..self.s {
                for c in 0..3 {
                    free[j][r][c] = self.free_channels[c];
                }
            }
            for r in 0..self.s {
                for c in 0..3 {
                    if !self.free_channels[c] {
                        base[j][r][c] = 0.0;
                    }
                }
            }
            if off == 0 {
                let w = &self.waypoints[seg - 1];
                if w.tolerance == 0.0 {
                    for c in 0..3 {
                        free[j][0][c] = false;
                        base[j][0][c] = w.position[c];
                    }
                } else {
                    let radius = (w.tolerance - opts.feas_tol).max(0.5 * w.tolerance);
                    balls.push(Ball { junction: j, center: w.position, radius });
                }
            }
        }
        Transcription::new(self.constraint, base, &free, balls, opts.quad_nodes, opts.margin)
    }

    fn waypoint_misses(&self, stacks: &[Vec<[f64; 4]>], n: usize) -> Vec<f64> {
        self.waypoints
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let p = stacks[(i + 1) * n][0];
                dist3(p, [w.position[0], w.position[1], w.position[2], 0.0])
            })
            .collect()
    }

    fn boundary_violation(&self) -> f64 {
        let rows = self.constraint.max_row() + 1;
        let mut vals = vec![0.0; self.constraint.len()];
        let mut worst: f64 = 0.0;
        for st in [&self.start, &self.end] {
            let padded: Vec<[f64; 4]> = (0..rows).map(|r| st.get(r).copied().unwrap_or([0.0; 4])).collect();
            self.constraint.values(&padded, &mut vals);
            worst = vals.iter().fold(worst, |a, &v| a.max(v));
        }
        worst
    }

    /// Penalty continuation from `guess` with `n` pieces per segment.
    fn solve(&self, n: usize, guess: &Guess, opts: &SolverOptions) -> (Solution, Guess) {
        let mut tr = self.transcription(n, guess, opts);
        let mut x = tr.encode(&guess.stacks, &guess.durations);
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut termination = Termination::MaxIterations;
        let mut audit = f64::INFINITY;
        let mut misses = Vec::new();
        let mut final_weight = 0.0;
        let mut stages = Vec::new();
        let audit_nodes = opts.quad_nodes * opts.audit_factor;
        let n_base = opts.weights.len();
        let last = *opts.extra_weights.last().or(opts.weights.last()).expect("at least one penalty weight");
        let repeats = std::iter::repeat_n(&last, opts.final_repeats);
        for (stage, &w) in opts.weights.iter().chain(&opts.extra_weights).chain(repeats).enumerate() {
            let feasible = audit <= opts.feas_tol
                && misses.iter().zip(self.waypoints).all(|(m, wp): (&f64, &Waypoint)| *m <= wp.tolerance + 1e-9);
            if stage >= n_base && feasible {
                break;
            }
            let res = minimize(|v, g| tr.objective(v, w, g), x.clone(), &opts.lbfgs);
            x = res.x;
            iterations += res.iterations;
            history.extend(res.history);
            termination = res.termination;
            final_weight = w;
            let (st, du) = tr.decode(&x);
            let (a, peaks) = tr.audit_peaks(&st, &du, audit_nodes, 0.0);
            audit = a;
            for (k, taus) in peaks.iter().enumerate() {
                tr.add_nodes(k, taus, 0.5 / audit_nodes as f64);
            }
            misses = self.waypoint_misses(&st, n);
            stages.push(StageReport {
                weight: w,
                margin: tr.margin,
                iterations: res.iterations,
                termination: res.termination,
                objective: res.f,
                total_time: du.iter().sum(),
                audit,
            });
        }
        let (stacks, durations) = tr.decode(&x);
        let trajectory = tr.trajectory(&stacks, &durations);
        let max_violation = audit.max(0.0);
        let hits = misses.iter().zip(self.waypoints).all(|(m, wp)| *m <= wp.tolerance + 1e-9);
        let converged = termination != Termination::MaxIterations && max_violation <= opts.feas_tol && hits;
        let sol = Solution {
            total_time: durations.iter().sum(),
            piece_times: durations.clone(),
            trajectory,
            converged,
            iterations,
            max_violation,
            objective_history: history,
            pieces_per_segment: n,
            attempted: vec![n],
            waypoint_misses: misses,
            final_weight,
            stages,
        };
        (sol, Guess { stacks, durations })
    }

    /// Solves with one piece per segment from the geometric seed.
    fn initial(&self, opts: &SolverOptions) -> Result<(Solution, Guess)> {
        let v = self.boundary_violation();
        if v > opts.feas_tol {
            return Err(Error::InfeasibleBoundary(v));
        }
        Ok(self.solve(1, &self.seed(), opts))
    }

    fn solve_fixed(&self, n: usize, opts: &SolverOptions) -> Result<Solution> {
        if n == 0 {
            return Err(Error::InvalidArgument("piece count must be at least 1".into()));
        }
        let (first, warm) = self.initial(opts)?;
        if n == 1 {
            return Ok(first);
        }
        Ok(self.solve(n, &self.split(&warm, n)?, opts).0)
    }
}

fn quad_task<'a>(problem: &'a PlanProblem, c: &'a QuadConstraint) -> Task<'a> {
    let s = problem.model.order();
    Task {
        constraint: c,
        free_channels: [true, true, true, false],
        s,
        start: pad_rows(&problem.start, s),
        end: pad_rows(&problem.end, s),
        waypoints: &problem.waypoints,
    }
}

fn quad_constraint(problem: &PlanProblem) -> Result<QuadConstraint> {
    problem.validate()?;
    Ok(QuadConstraint {
        map: FlatMap::new(problem.params)?,
        model: problem.model,
        yaw_varies: problem.yaw_varies(),
    })
}

/// Two-state flight with a fixed piece count. Waypoints, if any, are
/// ignored. Non-convergence is reported through `converged`.
pub fn solve_two_state(problem: &PlanProblem, n: usize, opts: &SolverOptions) -> Result<Solution> {
    let c = quad_constraint(problem)?;
    let mut task = quad_task(problem, &c);
    task.waypoints = &[];
    task.solve_fixed(n, opts)
}

/// First piece budget tried by [`robust_aos`].
pub fn initial_budget(n_se: usize) -> usize {
    5 + 4 + n_se + 1
}

/// Tries decreasing piece budgets, each warm-started from the one-piece
/// solution, and returns the first feasible converged result.
pub fn robust_aos(problem: &PlanProblem, opts: &SolverOptions) -> Result<Solution> {
    let c = quad_constraint(problem)?;
    let mut task = quad_task(problem, &c);
    task.waypoints = &[];
    let (_, warm) = task.initial(opts)?;
    let mut attempted = Vec::new();
    for n in (2..=initial_budget(problem.n_se)).rev() {
        attempted.push(n);
        let (mut sol, _) = task.solve(n, &task.split(&warm, n)?, opts);
        if sol.is_success(opts.feas_tol) {
            sol.attempted = attempted;
            return Ok(sol);
        }
    }
    Err(Error::AllAttemptsFailed)
}

/// Pieces per segment used for waypoint flights under [`PieceBudget::Auto`].
pub fn auto_segment_pieces(n_se: usize) -> usize {
    piece_count(0, 2, n_se as i64).expect("small non-negative counts")
}

/// Multi-waypoint flight, `pieces` per segment.
pub fn solve_waypoints(problem: &PlanProblem, opts: &SolverOptions) -> Result<Solution> {
    if problem.waypoints.is_empty() {
        return Err(Error::InvalidArgument("at least one waypoint is required".into()));
    }
    let n = match problem.pieces {
        PieceBudget::Fixed(n) => n,
        PieceBudget::Auto => auto_segment_pieces(problem.n_se),
    };
    let (merged, owner) = merge_repeated_waypoints(&problem.waypoints);
    if merged.len() == problem.waypoints.len() {
        let c = quad_constraint(problem)?;
        return quad_task(problem, &c).solve_fixed(n, opts);
    }
    let reduced = PlanProblem { waypoints: merged, ..problem.clone() };
    let c = quad_constraint(&reduced)?;
    let mut sol = quad_task(&reduced, &c).solve_fixed(n, opts)?;
    // Repeated waypoints share a center, so they share the miss distance.
    sol.waypoint_misses = owner.iter().map(|&k| sol.waypoint_misses[k]).collect();
    Ok(sol)
}

/// Collapses runs of consecutive waypoints with the same position and yaw
/// into one with the smallest tolerance. A segment between them could only
/// shrink to the duration floor. Returns the kept waypoints and, for every
/// input waypoint, the index of the one that represents it.
fn merge_repeated_waypoints(waypoints: &[Waypoint]) -> (Vec<Waypoint>, Vec<usize>) {
    let mut kept: Vec<Waypoint> = Vec::with_capacity(waypoints.len());
    let mut owner = Vec::with_capacity(waypoints.len());
    for w in waypoints {
        match kept.last_mut() {
            Some(last) if last.position == w.position && last.yaw == w.yaw => {
                last.tolerance = last.tolerance.min(w.tolerance);
            }
            _ => kept.push(w.clone()),
        }
        owner.push(kept.len() - 1);
    }
    (kept, owner)
}

/// Dispatches on waypoints and piece budget.
pub fn plan(problem: &PlanProblem, opts: &SolverOptions) -> Result<Solution> {
    match (problem.waypoints.is_empty(), problem.pieces) {
        (false, _) => solve_waypoints(problem, opts),
        (true, PieceBudget::Auto) => robust_aos(problem, opts),
        (true, PieceBudget::Fixed(n)) => solve_two_state(problem, n, opts),
    }
}

/// Minimum-time double integrator on channel 0 with `n` pieces of order
/// `2s - 1`, `s = 3`.
pub fn solve_double_integrator(di: &DiProblem, n: usize, opts: &SolverOptions) -> Result<Solution> {
    di.validate()?;
    let c = AccelBound { u_max: di.u_max };
    let task = Task {
        constraint: &c,
        free_channels: [true, false, false, false],
        s: 3,
        start: vec![[di.x0, 0.0, 0.0, 0.0], [di.v0, 0.0, 0.0, 0.0], [0.0; 4]],
        end: vec![[di.xf, 0.0, 0.0, 0.0], [di.vf, 0.0, 0.0, 0.0], [0.0; 4]],
        waypoints: &[],
    };
    task.solve_fixed(n, opts)
}

/// Penalized objective of a quadrotor problem at decision vector `x`, for
/// direct inspection. The vector layout is that of the transcription built
/// from the one-piece-per-segment seed split into `n` pieces.
pub struct ObjectiveProbe {
    constraint: QuadConstraint,
    problem: PlanProblem,
    n: usize,
    opts: SolverOptions,
}

impl ObjectiveProbe {
    pub fn new(problem: &PlanProblem, n: usize, opts: &SolverOptions) -> Result<Self> {
        Ok(Self { constraint: quad_constraint(problem)?, problem: problem.clone(), n, opts: opts.clone() })
    }

    fn with<R>(&self, f: impl FnOnce(&Transcription<'_>) -> R) -> Result<R> {
        let task = quad_task(&self.problem, &self.constraint);
        let guess = task.split(&task.seed(), self.n)?;
        Ok(f(&task.transcription(self.n, &guess, &self.opts)))
    }

    /// Decision vector of the split seed.
    pub fn seed_vector(&self) -> Result<Vec<f64>> {
        let task = quad_task(&self.problem, &self.constraint);
        let guess = task.split(&task.seed(), self.n)?;
        self.with(|tr| tr.encode(&guess.stacks, &guess.durations))
    }

    pub fn objective_and_gradient(&self, x: &[f64], weight: f64) -> Result<(f64, Vec<f64>)> {
        self.with(|tr| {
            let mut g = vec![0.0; tr.dim()];
            let f = tr.objective(x, weight, &mut g);
            (f, g)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRow {
    pub t: f64,
    pub state: FullState,
    pub rotors: RotorCommand,
    pub collective: f64,
    pub body_rates: [f64; 3],
}

/// Rows at `0, dt, 2dt, ...` plus one exactly at the final time.
pub fn sample_solution(solution: &Solution, dt: f64, params: &QuadrotorParams) -> Result<Vec<SampleRow>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("sample step must be positive, got {dt}")));
    }
    let map = FlatMap::new(*params)?;
    let total = solution.trajectory.total_duration();
    let mut times: Vec<f64> = Vec::new();
    let mut i = 0usize;
    loop {
        let t = i as f64 * dt;
        if t > total * (1.0 - 1e-12) {
            break;
        }
        times.push(t);
        i += 1;
    }
    times.push(total);
    times
        .into_iter()
        .map(|t| {
            let ev = map.evaluate(&solution.trajectory.eval(t, 4)?)?;
            Ok(SampleRow {
                t,
                body_rates: ev.state.body_rates,
                state: ev.state,
                rotors: ev.rotors,
                collective: ev.collective,
            })
        })
        .collect()
}

/// Wall-clock seconds spent in `f`.
pub fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64())
}

/// Smallest total duration any trajectory can have with `pieces` pieces.
pub fn duration_floor(pieces: usize) -> f64 {
    pieces as f64 * T_FLOOR
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::di_min_time;

    fn horizontal(model: ConstraintModel, d: f64) -> PlanProblem {
        PlanProblem::rest_to_rest(QuadrotorParams::quad_std(), model, [0.0; 3], [d, 0.0, 0.0])
    }

    #[test]
    fn hover_collapses_to_time_floor() {
        let p = horizontal(ConstraintModel::R, 0.0);
        let sol = solve_two_state(&p, 5, &SolverOptions::default()).unwrap();
        assert!(sol.total_time <= 0.05, "{}", sol.total_time);
        assert!(sol.converged);
        for t in &sol.piece_times {
            assert!(*t >= T_FLOOR);
        }
    }

    #[test]
    fn double_integrator_seven_pieces_near_optimal() {
        let di = DiProblem { x0: -2.0, v0: 0.0, xf: 0.0, vf: 0.0, u_max: 1.0 };
        let opt = di_min_time(&di).t_star;
        let sol = solve_double_integrator(&di, 7, &SolverOptions::default()).unwrap();
        let gap = sol.total_time / opt - 1.0;
        assert!(sol.converged);
        assert!(gap <= 0.03, "gap {gap}");
    }

    #[test]
    fn table_ii_model_r_three_meters() {
        let p = horizontal(ConstraintModel::R, 3.0);
        let (sol, secs) = timed(|| solve_two_state(&p, 5, &SolverOptions::default()).unwrap());
        assert!(sol.converged, "violation {}", sol.max_violation);
        assert!((sol.total_time / 1.084 - 1.0).abs() <= 0.08, "{} in {secs}s", sol.total_time);
    }

    #[test]
    fn repeated_waypoints_merge_to_tightest() {
        let w = |x: f64, tol: f64| Waypoint { position: [x, 0.0, 0.0], tolerance: tol, yaw: None };
        let (kept, owner) = merge_repeated_waypoints(&[w(1.0, 0.3), w(1.0, 0.1), w(2.0, 0.2), w(1.0, 0.2)]);
        assert_eq!(kept, vec![w(1.0, 0.1), w(2.0, 0.2), w(1.0, 0.2)]);
        assert_eq!(owner, vec![0, 0, 1, 2]);
    }

    #[test]
    fn midpoint_waypoint_cannot_help() {
        let opts = SolverOptions::default();
        let base = horizontal(ConstraintModel::S, 4.0);
        let free = solve_two_state(&base, 5, &opts).unwrap();
        let mut wp = base.clone();
        wp.waypoints = vec![Waypoint { position: [2.0, 0.0, 0.0], tolerance: 0.0, yaw: None }];
        wp.pieces = PieceBudget::Fixed(3);
        let with = solve_waypoints(&wp, &opts).unwrap();
        assert!(with.converged);
        assert!(with.waypoint_misses[0] <= 1e-9);
        assert!(with.total_time >= free.total_time - 1e-6 - 0.01 * free.total_time);
    }

    #[test]
    fn sample_rows_and_final_time() {
        let p = horizontal(ConstraintModel::S, 0.0);
        let sol = solve_two_state(&p, 2, &SolverOptions::default()).unwrap();
        let dt = sol.total_time / 3.7;
        let rows = sample_solution(&sol, dt, &p.params).unwrap();
        assert_eq!(rows.len(), (sol.total_time / dt).floor() as usize + 2);
        assert_eq!(rows.last().unwrap().t, sol.total_time);
        let first = &rows[0];
        for r in &rows {
            assert!((r.state.position[0] - first.state.position[0]).abs() < 1e-12);
            for (a, b) in r.rotors.f.iter().zip(first.rotors.f) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(sample_solution(&sol, 0.0, &p.params).is_err());
    }

    #[test]
    fn initial_budget_counts() {
        assert_eq!(initial_budget(2), 12);
        assert_eq!(auto_segment_pieces(0), 3);
        assert_eq!(auto_segment_pieces(2), 5);
    }

    #[test]
    fn infeasible_boundary_rejected() {
        let mut p = horizontal(ConstraintModel::S, 3.0);
        p.start.derivs[2] = [0.0, 0.0, 200.0, 0.0];
        assert!(matches!(solve_two_state(&p, 2, &SolverOptions::default()), Err(Error::InfeasibleBoundary(_))));
    }

    #[test]
    fn penalty_weight_is_monotone() {
        let p = horizontal(ConstraintModel::R, 6.0);
        let probe = ObjectiveProbe::new(&p, 3, &SolverOptions::default()).unwrap();
        let mut x = probe.seed_vector().unwrap();
        // Shrink durations so the penalty is active.
        let k = x.len();
        for v in &mut x[k - 3..] {
            *v -= 1.5;
        }
        let mut last = f64::NEG_INFINITY;
        for w in [0.0, 1.0, 1e2, 1e4] {
            let (f, _) = probe.objective_and_gradient(&x, w).unwrap();
            assert!(f >= last);
            last = f;
        }
    }
}
