//! Penalty transcription of the minimum-time problem over junction
//! derivative stacks and piece durations.
//!
//! Decision vector layout: first every free junction entry, then one raw
//! duration variable per piece with `T = T_FLOOR + softplus(raw)`. Row `r`
//! of junction `j` is stored as `y^(r) * S_j^r`, where `S_j` is the mean
//! duration of the two pieces meeting there, so uniformly shrinking the
//! durations with the junction variables held fixed is a pure time scaling.

use crate::flatness::{ConstraintModel, FlatMap};
use crate::traj::{boundary_order, NodeWeights, PiecewiseTrajectory, PolyPiece, T_FLOOR};

/// Most stack rows any constraint may read.
pub const MAX_ROWS: usize = 6;

pub type RowGrad = [[f64; 4]; MAX_ROWS];

/// Pointwise inequality constraints on a flat-output derivative stack.
pub trait StackConstraint: Sync {
    /// Number of violation entries.
    fn len(&self) -> usize;
    /// Highest stack row read.
    fn max_row(&self) -> usize;
    /// Writes violations; `rows` has `max_row() + 1` entries.
    fn values(&self, rows: &[[f64; 4]], out: &mut [f64]);
    /// Violations and their derivatives `grad[m][r][c]`.
    fn gradient(&self, rows: &[[f64; 4]], out: &mut [f64], grad: &mut [RowGrad]);
    /// Acceleration used to guess an initial duration.
    fn seed_accel_estimate(&self) -> f64;
}

/// Body-rate and thrust limits of a quadrotor through its flatness maps.
#[derive(Debug, Clone, Copy)]
pub struct QuadConstraint {
    pub map: FlatMap,
    pub model: ConstraintModel,
    /// Whether yaw varies along the trajectory. When it does not, yaw
    /// columns are left out of the Jacobian.
    pub yaw_varies: bool,
}

impl QuadConstraint {
    fn inputs(&self, rows: &[[f64; 4]]) -> [f64; 12] {
        let snap = if self.model == ConstraintModel::R { rows[4] } else { [0.0; 4] };
        [
            rows[2][0], rows[2][1], rows[2][2], rows[3][0], rows[3][1], rows[3][2], snap[0], snap[1], snap[2],
            rows[0][3], rows[1][3], rows[2][3],
        ]
    }

    fn grad_n<const N: usize>(&self, v: &[f64; 12], seeds: &[Option<usize>; 12], out: &mut [f64], grad: &mut [RowGrad]) {
        let mut jac = [[0.0; 12]; 11];
        self.map
            .constraint_grad::<N>(v, seeds, self.model, out, &mut jac)
            .expect("clamped flatness maps do not fail");
        const POS: [(usize, usize); 12] =
            [(2, 0), (2, 1), (2, 2), (3, 0), (3, 1), (3, 2), (4, 0), (4, 1), (4, 2), (0, 3), (1, 3), (2, 3)];
        for (m, g) in grad.iter_mut().enumerate().take(self.len()) {
            *g = [[0.0; 4]; MAX_ROWS];
            for (col, &(r, c)) in POS.iter().enumerate() {
                if seeds[col].is_some() {
                    g[r][c] = jac[m][col];
                }
            }
        }
    }
}

impl StackConstraint for QuadConstraint {
    fn len(&self) -> usize {
        self.model.constraint_len()
    }

    fn max_row(&self) -> usize {
        self.model.order()
    }

    fn values(&self, rows: &[[f64; 4]], out: &mut [f64]) {
        self.map
            .constraint_values(&self.inputs(rows), self.model, out)
            .expect("clamped flatness maps do not fail");
    }

    fn gradient(&self, rows: &[[f64; 4]], out: &mut [f64], grad: &mut [RowGrad]) {
        let v = self.inputs(rows);
        let s = |k| Some(k);
        match (self.model, self.yaw_varies) {
            (ConstraintModel::S, false) => {
                let seeds = [s(0), s(1), s(2), s(3), s(4), s(5), None, None, None, None, None, None];
                self.grad_n::<6>(&v, &seeds, out, grad)
            }
            (ConstraintModel::S, true) => {
                let seeds = [s(0), s(1), s(2), s(3), s(4), s(5), None, None, None, s(6), s(7), None];
                self.grad_n::<8>(&v, &seeds, out, grad)
            }
            (ConstraintModel::R, false) => {
                let seeds = [s(0), s(1), s(2), s(3), s(4), s(5), s(6), s(7), s(8), None, None, None];
                self.grad_n::<9>(&v, &seeds, out, grad)
            }
            (ConstraintModel::R, true) => {
                let seeds = std::array::from_fn(Some);
                self.grad_n::<12>(&v, &seeds, out, grad)
            }
        }
    }

    fn seed_accel_estimate(&self) -> f64 {
        let p = &self.map.params;
        let u = p.planar_bounds().1;
        0.5 * p.gravity * (u * u - 1.0).max(0.25).sqrt()
    }
}

/// `|x''| <= u_max` on channel 0: the double-integrator embedding.
#[derive(Debug, Clone, Copy)]
pub struct AccelBound {
    pub u_max: f64,
}

impl StackConstraint for AccelBound {
    fn len(&self) -> usize {
        2
    }

    fn max_row(&self) -> usize {
        2
    }

    fn values(&self, rows: &[[f64; 4]], out: &mut [f64]) {
        out[0] = rows[2][0] - self.u_max;
        out[1] = -rows[2][0] - self.u_max;
    }

    fn gradient(&self, rows: &[[f64; 4]], out: &mut [f64], grad: &mut [RowGrad]) {
        self.values(rows, out);
        grad[0] = [[0.0; 4]; MAX_ROWS];
        grad[1] = [[0.0; 4]; MAX_ROWS];
        grad[0][2][0] = 1.0;
        grad[1][2][0] = -1.0;
    }

    fn seed_accel_estimate(&self) -> f64 {
        0.5 * self.u_max
    }
}

/// Waypoint passage within `radius` of `center`, enforced on a junction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub junction: usize,
    pub center: [f64; 3],
    pub radius: f64,
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub struct Transcription<'a> {
    pub constraint: &'a dyn StackConstraint,
    pub s: usize,
    pub n_pieces: usize,
    /// Junction stacks with fixed entries filled in; `n_pieces + 1` stacks
    /// of `s` rows.
    pub base: Vec<Vec<[f64; 4]>>,
    var_of: Vec<Vec<[Option<usize>; 4]>>,
    pub n_junction_vars: usize,
    pub balls: Vec<Ball>,
    pub margin: f64,
    weights: NodeWeights,
    /// Nodes added per piece where the dense audit found violations.
    extra: Vec<Option<NodeWeights>>,
}

impl<'a> Transcription<'a> {
    /// `free[j][r][c]` marks junction entries that are decision variables.
    pub fn new(
        constraint: &'a dyn StackConstraint,
        base: Vec<Vec<[f64; 4]>>,
        free: &[Vec<[bool; 4]>],
        balls: Vec<Ball>,
        quad_nodes: usize,
        margin: f64,
    ) -> Self {
        let s = base[0].len();
        let n_pieces = base.len() - 1;
        let mut next = 0;
        let var_of = free
            .iter()
            .map(|rows| {
                rows.iter()
                    .map(|row| {
                        std::array::from_fn(|c| {
                            row[c].then(|| {
                                next += 1;
                                next - 1
                            })
                        })
                    })
                    .collect()
            })
            .collect();
        let weights = NodeWeights::uniform(s, quad_nodes, constraint.max_row());
        let extra = vec![None; n_pieces];
        Self { constraint, s, n_pieces, base, var_of, n_junction_vars: next, balls, margin, weights, extra }
    }

    pub fn dim(&self) -> usize {
        self.n_junction_vars + self.n_pieces
    }

    pub fn quad_nodes(&self) -> usize {
        self.weights.nodes.len()
    }

    /// Adds penalty nodes at normalized times `taus` of piece `k`, skipping
    /// any closer than `min_gap` to an existing node.
    pub fn add_nodes(&mut self, k: usize, taus: &[f64], min_gap: f64) -> usize {
        let mut nodes = self.extra[k].as_ref().map(|w| w.nodes.clone()).unwrap_or_default();
        let before = nodes.len();
        for &tau in taus {
            let near = |v: &f64| (v - tau).abs() < min_gap;
            if !nodes.iter().any(near) && !self.weights.nodes.iter().any(near) {
                nodes.push(tau);
            }
        }
        let added = nodes.len() - before;
        if added > 0 {
            self.extra[k] = Some(NodeWeights::new(self.s, nodes, self.constraint.max_row()));
        }
        added
    }

    pub fn extra_nodes(&self) -> usize {
        self.extra.iter().flatten().map(|w| w.nodes.len()).sum()
    }

    fn junction_scale(&self, durations: &[f64], j: usize) -> f64 {
        match j {
            0 => durations[0],
            j if j == self.n_pieces => durations[j - 1],
            j => 0.5 * (durations[j - 1] + durations[j]),
        }
    }

    pub fn encode(&self, stacks: &[Vec<[f64; 4]>], durations: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (j, rows) in self.var_of.iter().enumerate() {
            let sj = self.junction_scale(durations, j);
            for (r, row) in rows.iter().enumerate() {
                let sc = sj.powi(r as i32);
                for c in 0..4 {
                    if let Some(i) = row[c] {
                        x[i] = stacks[j][r][c] * sc;
                    }
                }
            }
        }
        for (k, &t) in durations.iter().enumerate() {
            x[self.n_junction_vars + k] = softplus_inv((t - T_FLOOR).max(1e-300));
        }
        x
    }

    pub fn decode(&self, x: &[f64]) -> (Vec<Vec<[f64; 4]>>, Vec<f64>) {
        let durations: Vec<f64> = (0..self.n_pieces)
            .map(|k| T_FLOOR + softplus(x[self.n_junction_vars + k]))
            .collect();
        let mut stacks = self.base.clone();
        for (j, rows) in self.var_of.iter().enumerate() {
            let sj = self.junction_scale(&durations, j);
            for (r, row) in rows.iter().enumerate() {
                let sc = sj.powi(-(r as i32));
                for c in 0..4 {
                    if let Some(i) = row[c] {
                        stacks[j][r][c] = x[i] * sc;
                    }
                }
            }
        }
        (stacks, durations)
    }

    fn boundary(stacks: &[Vec<[f64; 4]>], k: usize) -> Vec<[f64; 4]> {
        stacks[k].iter().chain(stacks[k + 1].iter()).copied().collect()
    }

    /// Penalized cost `sum T + w * penalty` and its gradient.
    pub fn objective(&self, x: &[f64], w: f64, grad: &mut [f64]) -> f64 {
        let (stacks, durations) = self.decode(x);
        let s = self.s;
        let n = 2 * s;
        let max_row = self.constraint.max_row();
        let m_len = self.constraint.len();
        let q_len = self.quad_nodes();
        let mut d_stacks = vec![vec![[0.0; 4]; s]; stacks.len()];
        let mut d_t = vec![1.0; self.n_pieces];
        let mut cost: f64 = durations.iter().sum();

        let mut rows = [[0.0; 4]; MAX_ROWS];
        let mut rows_dt = [[0.0; 4]; MAX_ROWS];
        let mut vals = vec![0.0; m_len];
        let mut cg = vec![[[0.0; 4]; MAX_ROWS]; m_len];
        for k in 0..self.n_pieces {
            let t = durations[k];
            let bnd = Self::boundary(&stacks, k);
            let mut d_bnd = vec![[0.0; 4]; n];
            let wq = t / q_len as f64;
            let nodes = std::iter::once(&self.weights).chain(self.extra[k].as_ref());
            for (nw, q) in nodes.flat_map(|nw| (0..nw.nodes.len()).map(move |q| (nw, q))) {
                for r in 0..=max_row {
                    let (v, dv) = nw.eval(&bnd, t, q, r);
                    rows[r] = v;
                    rows_dt[r] = dv;
                }
                self.constraint.values(&rows[..=max_row], &mut vals);
                if vals.iter().all(|&v| v + self.margin <= 0.0) {
                    continue;
                }
                self.constraint.gradient(&rows[..=max_row], &mut vals, &mut cg);
                let mut g_rows = [[0.0; 4]; MAX_ROWS];
                for m in 0..m_len {
                    let v = vals[m] + self.margin;
                    if v <= 0.0 {
                        continue;
                    }
                    cost += w * v * v * v * wq;
                    d_t[k] += w * v * v * v / q_len as f64;
                    let dv = 3.0 * w * v * v * wq;
                    for r in 0..=max_row {
                        for c in 0..4 {
                            g_rows[r][c] += dv * cg[m][r][c];
                        }
                    }
                }
                for r in 0..=max_row {
                    for c in 0..4 {
                        d_t[k] += g_rows[r][c] * rows_dt[r][c];
                    }
                }
                for r in 0..=max_row {
                    if g_rows[r].iter().all(|&g| g == 0.0) {
                        continue;
                    }
                    let wr = nw.weights(q, r);
                    for i in 0..n {
                        let e = boundary_order(s, i) as i32 - r as i32;
                        let f = wr[i] * t.powi(e);
                        if f == 0.0 {
                            continue;
                        }
                        for c in 0..4 {
                            d_bnd[i][c] += f * g_rows[r][c];
                        }
                    }
                }
            }
            for i in 0..s {
                for c in 0..4 {
                    d_stacks[k][i][c] += d_bnd[i][c];
                    d_stacks[k + 1][i][c] += d_bnd[s + i][c];
                }
            }
        }

        for ball in &self.balls {
            let p = stacks[ball.junction][0];
            let d: [f64; 3] = std::array::from_fn(|c| p[c] - ball.center[c]);
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let v = dist - ball.radius;
            if v > 0.0 && dist > 0.0 {
                cost += w * v * v;
                for c in 0..3 {
                    d_stacks[ball.junction][0][c] += 2.0 * w * v * d[c] / dist;
                }
            }
        }

        grad.iter_mut().for_each(|g| *g = 0.0);
        for (j, rows) in self.var_of.iter().enumerate() {
            let sj = self.junction_scale(&durations, j);
            let mut d_scale = 0.0;
            for (r, row) in rows.iter().enumerate() {
                let sc = sj.powi(-(r as i32));
                for c in 0..4 {
                    if let Some(i) = row[c] {
                        grad[i] = d_stacks[j][r][c] * sc;
                        d_scale -= r as f64 * d_stacks[j][r][c] * stacks[j][r][c] / sj;
                    }
                }
            }
            match j {
                0 => d_t[0] += d_scale,
                j if j == self.n_pieces => d_t[j - 1] += d_scale,
                j => {
                    d_t[j - 1] += 0.5 * d_scale;
                    d_t[j] += 0.5 * d_scale;
                }
            }
        }
        for k in 0..self.n_pieces {
            grad[self.n_junction_vars + k] = d_t[k] * sigmoid(x[self.n_junction_vars + k]);
        }
        cost
    }

    pub fn trajectory(&self, stacks: &[Vec<[f64; 4]>], durations: &[f64]) -> PiecewiseTrajectory {
        let pieces = (0..self.n_pieces)
            .map(|k| PolyPiece::from_boundary(&stacks[k], &stacks[k + 1], durations[k]).expect("durations exceed the floor"))
            .collect();
        PiecewiseTrajectory::new(pieces).expect("at least one piece")
    }

    /// Largest constraint violation over `nodes` uniform samples per piece.
    pub fn audit(&self, stacks: &[Vec<[f64; 4]>], durations: &[f64], nodes: usize) -> f64 {
        self.audit_peaks(stacks, durations, nodes, f64::INFINITY).0
    }

    /// Dense audit that also returns, per piece, the normalized times of
    /// local violation maxima above `threshold`.
    pub fn audit_peaks(
        &self,
        stacks: &[Vec<[f64; 4]>],
        durations: &[f64],
        nodes: usize,
        threshold: f64,
    ) -> (f64, Vec<Vec<f64>>) {
        let traj = self.trajectory(stacks, durations);
        let max_row = self.constraint.max_row();
        let mut vals = vec![0.0; self.constraint.len()];
        let mut worst: f64 = 0.0;
        let mut peaks = Vec::with_capacity(self.n_pieces);
        let h = 1.0 / (nodes - 1) as f64;
        for p in &traj.pieces {
            let mut at = |tau: f64| {
                let rows = p.eval(p.duration * tau, max_row);
                self.constraint.values(&rows, &mut vals);
                vals.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v))
            };
            let prof: Vec<f64> = (0..nodes).map(|q| at(q as f64 * h)).collect();
            let mut local = Vec::new();
            for q in 0..nodes {
                let is_peak = (q == 0 || prof[q] >= prof[q - 1]) && (q + 1 == nodes || prof[q] >= prof[q + 1]);
                if !is_peak || prof[q] < -REFINE_BAND {
                    worst = worst.max(prof[q]);
                    continue;
                }
                // Sampled maxima can sit up to half a node away from the true one.
                let lo = (q as f64 - 1.0).max(0.0) * h;
                let hi = ((q + 1) as f64 * h).min(1.0);
                let (tau, v) = golden_max(&mut at, lo, hi, prof[q], q as f64 * h);
                worst = worst.max(v);
                if v > threshold {
                    local.push(tau);
                }
            }
            peaks.push(local);
        }
        (worst, peaks)
    }
}

/// Peaks further than this below the limit are not refined.
const REFINE_BAND: f64 = 0.05;

/// Golden-section search for a maximum of `f` on `[lo, hi]`, never
/// returning less than the seed value `(x0, f0)`.
fn golden_max(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, f0: f64, x0: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut best = (x0, f0);
    let mut a = hi - R * (hi - lo);
    let mut b = lo + R * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    for _ in 0..20 {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - R * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + R * (hi - lo);
            fb = f(b);
        }
    }
    for (x, v) in [(a, fa), (b, fb)] {
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}
