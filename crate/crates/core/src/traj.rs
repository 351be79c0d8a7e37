//! Piecewise polynomials of degree `2s - 1` over the flat output.
//!
//! Each piece is stored in normalized time `tau = t / T` on `[0, 1]`. Its
//! coefficients follow from the `s` boundary derivatives at both ends by one
//! constant `2s x 2s` matrix: with `b = [start_r T^r ; end_r T^r]`, the
//! normalized coefficients are `a = H^-1 b`, and
//!
//! ```text
//! y^(r)(t) = T^-r * sum_j  j!/(j-r)!  a_j  tau^(j-r)
//! ```
//!
//! Because `H` does not depend on `T`, its inverse is computed once per `s`.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatness::DerivativeStack;

/// Smallest admissible piece duration in seconds.
pub const T_FLOOR: f64 = 1e-3;

/// Largest supported continuity order.
pub const MAX_ORDER: usize = 6;

/// Falling factorial `j (j-1) ... (j-r+1)`.
fn falling(j: usize, r: usize) -> f64 {
    if r > j {
        return 0.0;
    }
    ((j - r + 1)..=j).fold(1.0, |acc, k| acc * k as f64)
}

/// Inverse of the normalized Hermite interpolation matrix, row-major
/// `2s x 2s`. Column `i < s` multiplies the `i`-th start derivative, column
/// `s + i` the `i`-th end derivative.
pub fn hermite_inverse(s: usize) -> &'static [f64] {
    static CACHE: [OnceLock<Vec<f64>>; MAX_ORDER + 1] = [const { OnceLock::new() }; MAX_ORDER + 1];
    assert!((1..=MAX_ORDER).contains(&s), "continuity order {s} unsupported");
    CACHE[s].get_or_init(|| {
        let n = 2 * s;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for r in 0..s {
            m[(r, r)] = falling(r, r);
            for j in r..n {
                m[(s + r, j)] = falling(j, r);
            }
        }
        let inv = m.lu().try_inverse().expect("Hermite matrix is invertible");
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect()
    })
}

/// Condition number of the normalized Hermite matrix in the max-row norm.
pub fn hermite_condition(s: usize) -> f64 {
    let n = 2 * s;
    let inv = hermite_inverse(s);
    let mut m = vec![0.0; n * n];
    for r in 0..s {
        m[r * n + r] = falling(r, r);
        for j in r..n {
            m[(s + r) * n + j] = falling(j, r);
        }
    }
    let norm = |a: &[f64]| (0..n).map(|i| (0..n).map(|j| a[i * n + j].abs()).sum::<f64>()).fold(0.0, f64::max);
    norm(&m) * norm(inv)
}

/// Derivative order of boundary entry `i` in a `2s` boundary vector.
#[inline]
pub fn boundary_order(s: usize, i: usize) -> usize {
    if i < s {
        i
    } else {
        i - s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyPiece {
    pub s: usize,
    pub duration: f64,
    /// Normalized-time coefficients, `2s` rows of 4 channels.
    pub coeffs: Vec<[f64; 4]>,
}

fn check_duration(t: f64) -> Result<()> {
    if !(t >= T_FLOOR) || !t.is_finite() {
        return Err(Error::InvalidDuration(t));
    }
    Ok(())
}

impl PolyPiece {
    /// Unique piece matching `s` derivatives at each end.
    pub fn from_boundary(start: &[[f64; 4]], end: &[[f64; 4]], duration: f64) -> Result<Self> {
        check_duration(duration)?;
        let s = start.len();
        if s == 0 || s > MAX_ORDER || end.len() != s {
            return Err(Error::InvalidArgument(format!(
                "boundary stacks need equal lengths in 1..={MAX_ORDER}, got {} and {}",
                start.len(),
                end.len()
            )));
        }
        let n = 2 * s;
        let inv = hermite_inverse(s);
        let mut b = vec![[0.0; 4]; n];
        let mut tp = 1.0;
        for r in 0..s {
            for c in 0..4 {
                b[r][c] = start[r][c] * tp;
                b[s + r][c] = end[r][c] * tp;
            }
            tp *= duration;
        }
        let coeffs = (0..n)
            .map(|j| {
                let mut a = [0.0; 4];
                for (i, bi) in b.iter().enumerate() {
                    let m = inv[j * n + i];
                    if m != 0.0 {
                        for c in 0..4 {
                            a[c] += m * bi[c];
                        }
                    }
                }
                a
            })
            .collect();
        Ok(Self { s, duration, coeffs })
    }

    /// Derivatives `0..=max_order` at local time `t` in `[0, T]`.
    pub fn eval(&self, t: f64, max_order: usize) -> Vec<[f64; 4]> {
        let tau = t / self.duration;
        let n = self.coeffs.len();
        let mut out = vec![[0.0; 4]; max_order + 1];
        let mut scale = 1.0;
        for (r, row) in out.iter_mut().enumerate() {
            // Horner on the r-th derivative polynomial in tau.
            for j in (r..n).rev() {
                let k = falling(j, r);
                for c in 0..4 {
                    row[c] = row[c] * tau + k * self.coeffs[j][c];
                }
            }
            for v in row.iter_mut() {
                *v *= scale;
            }
            scale /= self.duration;
        }
        out
    }

    /// Coefficients in ascending powers of local time in seconds, per
    /// channel.
    pub fn raw_coeffs(&self) -> [Vec<f64>; 4] {
        std::array::from_fn(|c| {
            let mut tp = 1.0;
            self.coeffs
                .iter()
                .map(|a| {
                    let v = a[c] / tp;
                    tp *= self.duration;
                    v
                })
                .collect()
        })
    }

    pub fn from_raw(duration: f64, raw: &[Vec<f64>; 4]) -> Result<Self> {
        check_duration(duration)?;
        let n = raw[0].len();
        if n == 0 || n % 2 != 0 || n / 2 > MAX_ORDER || raw.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("coefficient rows must share an even length".into()));
        }
        let mut coeffs = vec![[0.0; 4]; n];
        for c in 0..4 {
            let mut tp = 1.0;
            for j in 0..n {
                coeffs[j][c] = raw[c][j] * tp;
                tp *= duration;
            }
        }
        Ok(Self { s: n / 2, duration, coeffs })
    }
}

/// Sensitivities of the raw coefficients of one channel. Entry `[j][i]` of
/// `d_start` is `d b_j / d start_i`; `d_duration[c][j]` is `d b_j / dT` for
/// channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGradients {
    pub d_start: Vec<Vec<f64>>,
    pub d_end: Vec<Vec<f64>>,
    pub d_duration: [Vec<f64>; 4],
}

/// Derivatives of the raw (seconds) coefficients with respect to the
/// boundary derivatives and the duration. The start/end sensitivities are
/// channel-independent.
pub fn boundary_gradients(start: &[[f64; 4]], end: &[[f64; 4]], duration: f64) -> Result<BoundaryGradients> {
    let piece = PolyPiece::from_boundary(start, end, duration)?;
    let s = piece.s;
    let n = 2 * s;
    let inv = hermite_inverse(s);
    let mut d_start = vec![vec![0.0; s]; n];
    let mut d_end = vec![vec![0.0; s]; n];
    let mut d_duration: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    for j in 0..n {
        for i in 0..n {
            let ri = boundary_order(s, i);
            let e = ri as i32 - j as i32;
            let m = inv[j * n + i];
            let g = m * duration.powi(e);
            if i < s {
                d_start[j][i] = g;
            } else {
                d_end[j][i - s] = g;
            }
            let bnd = if i < s { start[ri] } else { end[ri] };
            for c in 0..4 {
                d_duration[c][j] += m * e as f64 * duration.powi(e - 1) * bnd[c];
            }
        }
    }
    Ok(BoundaryGradients { d_start, d_end, d_duration })
}

/// Precomputed maps from a piece's boundary vector to derivatives at fixed
/// normalized nodes: `y^(r)(tau_q) = sum_i W[q][r][i] T^(r_i - r) bnd_i`.
#[derive(Debug, Clone)]
pub struct NodeWeights {
    pub s: usize,
    pub nodes: Vec<f64>,
    pub max_order: usize,
    w: Vec<f64>,
}

impl NodeWeights {
    pub fn new(s: usize, nodes: Vec<f64>, max_order: usize) -> Self {
        let n = 2 * s;
        let inv = hermite_inverse(s);
        let mut w = vec![0.0; nodes.len() * (max_order + 1) * n];
        for (q, &tau) in nodes.iter().enumerate() {
            for r in 0..=max_order {
                // Basis row of the r-th derivative at tau.
                let basis: Vec<f64> = (0..n)
                    .map(|j| if j < r { 0.0 } else { falling(j, r) * tau.powi((j - r) as i32) })
                    .collect();
                for i in 0..n {
                    let v: f64 = (0..n).map(|j| basis[j] * inv[j * n + i]).sum();
                    w[(q * (max_order + 1) + r) * n + i] = v;
                }
            }
        }
        Self { s, nodes, max_order, w }
    }

    /// Uniform nodes on `[0, 1]` including both ends.
    pub fn uniform(s: usize, count: usize, max_order: usize) -> Self {
        let nodes = (0..count).map(|q| q as f64 / (count - 1).max(1) as f64).collect();
        Self::new(s, nodes, max_order)
    }

    #[inline]
    pub fn weights(&self, q: usize, r: usize) -> &[f64] {
        let n = 2 * self.s;
        let o = (q * (self.max_order + 1) + r) * n;
        &self.w[o..o + n]
    }

    /// Order-`r` value at node `q` for a boundary vector `bnd` (`2s` rows),
    /// together with its derivative with respect to `T`.
    pub fn eval(&self, bnd: &[[f64; 4]], duration: f64, q: usize, r: usize) -> ([f64; 4], [f64; 4]) {
        let w = self.weights(q, r);
        let mut val = [0.0; 4];
        let mut dt = [0.0; 4];
        for (i, b) in bnd.iter().enumerate() {
            let e = boundary_order(self.s, i) as i32 - r as i32;
            let f = w[i] * duration.powi(e);
            let g = f * e as f64 / duration;
            for c in 0..4 {
                val[c] += f * b[c];
                dt[c] += g * b[c];
            }
        }
        (val, dt)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseTrajectory {
    pub s: usize,
    pub pieces: Vec<PolyPiece>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PieceJson {
    #[serde(rename = "T")]
    duration: f64,
    coeffs: [Vec<f64>; 4],
}

/// Serialized form: raw coefficients in ascending powers of local time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryJson {
    s: usize,
    pieces: Vec<PieceJson>,
}

impl PiecewiseTrajectory {
    pub fn new(pieces: Vec<PolyPiece>) -> Result<Self> {
        let s = pieces.first().map(|p| p.s).ok_or_else(|| Error::InvalidArgument("no pieces".into()))?;
        if pieces.iter().any(|p| p.s != s) {
            return Err(Error::InvalidArgument("pieces must share one order".into()));
        }
        Ok(Self { s, pieces })
    }

    pub fn total_duration(&self) -> f64 {
        self.pieces.iter().map(|p| p.duration).sum()
    }

    pub fn durations(&self) -> Vec<f64> {
        self.pieces.iter().map(|p| p.duration).collect()
    }

    /// Piece index and local time for global time `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let total = self.total_duration();
        let tol = 1e-12 * total.max(1.0);
        if !(t >= -tol && t <= total + tol) {
            return Err(Error::OutOfRange { t, total });
        }
        let mut acc = 0.0;
        for (k, p) in self.pieces.iter().enumerate() {
            if t <= acc + p.duration || k + 1 == self.pieces.len() {
                return Ok((k, (t - acc).clamp(0.0, p.duration)));
            }
            acc += p.duration;
        }
        unreachable!()
    }

    pub fn eval(&self, t: f64, max_order: usize) -> Result<DerivativeStack> {
        let (k, local) = self.locate(t)?;
        DerivativeStack::new(self.pieces[k].eval(local, max_order))
    }

    /// Largest relative mismatch of derivatives `0..s-1` across junctions.
    pub fn junction_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for w in self.pieces.windows(2) {
            let a = w[0].eval(w[0].duration, self.s - 1);
            let b = w[1].eval(0.0, self.s - 1);
            for (ra, rb) in a.iter().zip(&b) {
                for c in 0..4 {
                    let d = (ra[c] - rb[c]).abs() / ra[c].abs().max(rb[c].abs()).max(1.0);
                    worst = worst.max(d);
                }
            }
        }
        worst
    }

    pub fn to_json(&self) -> TrajectoryJson {
        TrajectoryJson {
            s: self.s,
            pieces: self
                .pieces
                .iter()
                .map(|p| PieceJson { duration: p.duration, coeffs: p.raw_coeffs() })
                .collect(),
        }
    }

    pub fn from_json(json: &TrajectoryJson) -> Result<Self> {
        let pieces = json
            .pieces
            .iter()
            .map(|p| PolyPiece::from_raw(p.duration, &p.coeffs))
            .collect::<Result<Vec<_>>>()?;
        let traj = Self::new(pieces)?;
        if traj.s != json.s {
            return Err(Error::InvalidArgument(format!("declared s = {} but coefficients imply {}", json.s, traj.s)));
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn rand_stack(rng: &mut impl Rng, s: usize) -> Vec<[f64; 4]> {
        (0..s).map(|_| std::array::from_fn(|_| rng.gen_range(-3.0..3.0))).collect()
    }

    fn scalar(v: f64) -> [f64; 4] {
        [v, 0.0, 0.0, 0.0]
    }

    #[test]
    fn cubic_hermite_example() {
        let p = PolyPiece::from_boundary(&[scalar(0.0), scalar(0.0)], &[scalar(1.0), scalar(0.0)], 1.0).unwrap();
        let raw = &p.raw_coeffs()[0];
        let expect = [0.0, 0.0, 3.0, -2.0];
        for (a, b) in raw.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_rest_stacks_give_constant() {
        let st = vec![[1.0, -2.0, 3.0, 0.5], [0.0; 4], [0.0; 4], [0.0; 4]];
        let p = PolyPiece::from_boundary(&st, &st, 2.7).unwrap();
        for t in [0.0, 0.4, 1.9, 2.7] {
            let e = p.eval(t, 4);
            assert_eq!(e[0].map(|v| (v * 1e9).round() / 1e9), st[0]);
            for row in &e[1..] {
                assert!(row.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn rejects_bad_durations() {
        let st = vec![[0.0; 4]; 3];
        assert!(PolyPiece::from_boundary(&st, &st, 0.0).is_err());
        assert!(PolyPiece::from_boundary(&st, &st, -1.0).is_err());
        assert!(PolyPiece::from_boundary(&st, &st, 1e-4).is_err());
        assert!(PolyPiece::from_boundary(&st, &st, f64::NAN).is_err());
    }

    #[test]
    fn boundary_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = rng.gen_range(1..=5);
            let (a, b) = (rand_stack(&mut rng, s), rand_stack(&mut rng, s));
            for t in [T_FLOOR, 0.37, 1.0, 4.0, 100.0] {
                let p = PolyPiece::from_boundary(&a, &b, t).unwrap();
                let (e0, e1) = (p.eval(0.0, s - 1), p.eval(t, s - 1));
                // Compare in normalized time, where the system is T-independent.
                let big = (0..s)
                    .flat_map(|r| (0..4).map(move |c| (r, c)))
                    .map(|(r, c)| a[r][c].abs().max(b[r][c].abs()) * t.powi(r as i32))
                    .fold(1.0, f64::max);
                for r in 0..s {
                    let tr = t.powi(r as i32);
                    for c in 0..4 {
                        let tol = 1e-9 * big;
                        assert!((e0[r][c] - a[r][c]).abs() * tr <= tol);
                        assert!((e1[r][c] - b[r][c]).abs() * tr <= tol, "s={s} T={t} r={r}: {} vs {}", e1[r][c], b[r][c]);
                        if (1.0..=10.0).contains(&t) && s <= 4 {
                            let direct = 1e-9 * a[r][c].abs().max(b[r][c].abs()).max(1.0);
                            assert!((e1[r][c] - b[r][c]).abs() <= direct);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn hermite_matrix_is_well_conditioned() {
        for s in 1..=5 {
            let k = hermite_condition(s);
            assert!(k.is_finite() && k < 1e8, "s={s}: {k}");
        }
    }

    #[test]
    fn time_scaling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = 4;
            let (a, b) = (rand_stack(&mut rng, s), rand_stack(&mut rng, s));
            let alpha: f64 = rng.gen_range(0.2..5.0);
            let t = rng.gen_range(0.5..2.0);
            let scale = |st: &Vec<[f64; 4]>| -> Vec<[f64; 4]> {
                st.iter().enumerate().map(|(r, row)| row.map(|v| v * alpha.powi(-(r as i32)))).collect()
            };
            let p = PolyPiece::from_boundary(&a, &b, t).unwrap();
            let q = PolyPiece::from_boundary(&scale(&a), &scale(&b), alpha * t).unwrap();
            let tt = rng.gen_range(0.0..t);
            let (e, f) = (p.eval(tt, 6), q.eval(alpha * tt, 6));
            for r in 0..=6 {
                for c in 0..4 {
                    let expect = e[r][c] * alpha.powi(-(r as i32));
                    assert!((f[r][c] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn hermite_gradient_example() {
        let t: f64 = 1.7;
        let g = boundary_gradients(&[scalar(0.0), scalar(0.0)], &[scalar(1.0), scalar(0.0)], t).unwrap();
        let col: Vec<f64> = g.d_end.iter().map(|row| row[0]).collect();
        let expect = [0.0, 0.0, 3.0 / t.powi(2), -2.0 / t.powi(3)];
        for (a, b) in col.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn coefficients_are_linear_in_boundary() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let s = 3;
            let (a1, b1, a2, b2) = (rand_stack(&mut rng, s), rand_stack(&mut rng, s), rand_stack(&mut rng, s), rand_stack(&mut rng, s));
            let l: f64 = rng.gen_range(-2.0..2.0);
            let mix = |x: &Vec<[f64; 4]>, y: &Vec<[f64; 4]>| -> Vec<[f64; 4]> {
                x.iter().zip(y).map(|(p, q)| std::array::from_fn(|c| p[c] + l * q[c])).collect()
            };
            let t = 1.3;
            let p1 = PolyPiece::from_boundary(&a1, &b1, t).unwrap();
            let p2 = PolyPiece::from_boundary(&a2, &b2, t).unwrap();
            let pm = PolyPiece::from_boundary(&mix(&a1, &a2), &mix(&b1, &b2), t).unwrap();
            for j in 0..2 * s {
                for c in 0..4 {
                    assert!((pm.coeffs[j][c] - (p1.coeffs[j][c] + l * p2.coeffs[j][c])).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let s = rng.gen_range(2..=4);
            let (a, b) = (rand_stack(&mut rng, s), rand_stack(&mut rng, s));
            let t = rng.gen_range(0.2..3.0);
            let g = boundary_gradients(&a, &b, t).unwrap();
            let raw = |a: &[[f64; 4]], b: &[[f64; 4]], t: f64| PolyPiece::from_boundary(a, b, t).unwrap().raw_coeffs();
            let check = |fd: f64, an: f64| {
                let e = (fd - an).abs() / an.abs().max(1.0);
                assert!(e <= 1e-5, "{fd} vs {an}");
            };
            let h = 1e-6;
            let (rp, rm) = (raw(&a, &b, t + h), raw(&a, &b, t - h));
            for c in 0..4 {
                for j in 0..2 * s {
                    check((rp[c][j] - rm[c][j]) / (2.0 * h), g.d_duration[c][j]);
                }
            }
            for i in 0..s {
                let (mut ap, mut am) = (a.clone(), a.clone());
                ap[i][1] += h;
                am[i][1] -= h;
                let (rp, rm) = (raw(&ap, &b, t), raw(&am, &b, t));
                for j in 0..2 * s {
                    check((rp[1][j] - rm[1][j]) / (2.0 * h), g.d_start[j][i]);
                }
                let (mut bp, mut bm) = (b.clone(), b.clone());
                bp[i][2] += h;
                bm[i][2] -= h;
                let (rp, rm) = (raw(&a, &bp, t), raw(&a, &bm, t));
                for j in 0..2 * s {
                    check((rp[2][j] - rm[2][j]) / (2.0 * h), g.d_end[j][i]);
                }
            }
        }
    }

    #[test]
    fn node_weights_match_eval() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let s = 4;
        let nw = NodeWeights::uniform(s, 16, 4);
        for _ in 0..20 {
            let (a, b) = (rand_stack(&mut rng, s), rand_stack(&mut rng, s));
            let t = rng.gen_range(0.1..3.0);
            let p = PolyPiece::from_boundary(&a, &b, t).unwrap();
            let bnd: Vec<[f64; 4]> = a.iter().chain(b.iter()).copied().collect();
            for q in 0..16 {
                let e = p.eval(nw.nodes[q] * t, 4);
                for r in 0..=4 {
                    let (v, dt) = nw.eval(&bnd, t, q, r);
                    let h = 1e-6;
                    let (vp, _) = nw.eval(&bnd, t + h, q, r);
                    let (vm, _) = nw.eval(&bnd, t - h, q, r);
                    for c in 0..4 {
                        assert!((v[c] - e[r][c]).abs() <= 1e-8 * e[r][c].abs().max(1.0));
                        let fd = (vp[c] - vm[c]) / (2.0 * h);
                        assert!((fd - dt[c]).abs() <= 1e-5 * dt[c].abs().max(1.0));
                    }
                }
            }
        }
    }

    #[test]
    fn trajectory_eval_and_continuity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let s = 4;
        let knots: Vec<Vec<[f64; 4]>> = (0..4).map(|_| rand_stack(&mut rng, s)).collect();
        let pieces: Vec<PolyPiece> = knots
            .windows(2)
            .map(|w| PolyPiece::from_boundary(&w[0], &w[1], rng.gen_range(0.3..2.0)).unwrap())
            .collect();
        let traj = PiecewiseTrajectory::new(pieces).unwrap();
        assert!(traj.junction_mismatch() <= 1e-9);
        let start = traj.eval(0.0, s - 1).unwrap();
        let end = traj.eval(traj.total_duration(), s - 1).unwrap();
        for r in 0..s {
            for c in 0..4 {
                assert!((start.derivs[r][c] - knots[0][r][c]).abs() < 1e-9);
                assert!((end.derivs[r][c] - knots[3][r][c]).abs() < 1e-9);
            }
        }
        assert!(traj.eval(-0.1, 2).is_err());
        assert!(traj.eval(traj.total_duration() + 0.1, 2).is_err());
        let json = serde_json::to_string(&traj.to_json()).unwrap();
        let back = PiecewiseTrajectory::from_json(&serde_json::from_str(&json).unwrap()).unwrap();
        let t = 0.77 * traj.total_duration();
        let (a, b) = (traj.eval(t, 4).unwrap(), back.eval(t, 4).unwrap());
        for r in 0..=4 {
            for c in 0..4 {
                assert!((a.derivs[r][c] - b.derivs[r][c]).abs() <= 1e-9 * a.derivs[r][c].abs().max(1.0));
            }
        }
    }
}
