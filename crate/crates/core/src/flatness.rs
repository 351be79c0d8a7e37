//! Flatness maps from position/yaw derivative stacks to the full quadrotor
//! state, rotor thrusts and the inequality constraints of the planner.
//!
//! With `t = a + g e3` and `c = |t|`:
//!
//! ```text
//! z_B = t / c
//! x_C = (cos psi, sin psi, 0),   y_C = (-sin psi, cos psi, 0)
//! y_B = (z_B x x_C) / |z_B x x_C|,  x_B = y_B x z_B
//! dz_B/dt = (j - (z_B . j) z_B) / c
//! w_x = -dz_B/dt . y_B,   w_y = dz_B/dt . x_B
//! w_z = (w_x (z_B . x_C) + psi' (y_B . y_C)) / (x_B . x_C)
//! ```
//!
//! The last line differentiates `y_B . x_C = 0`. Angular acceleration is
//! the time derivative of the same expressions, obtained by evaluating them
//! on [`Tangent`] numbers whose dual parts hold the next stack row. Torques
//! follow from `J w' + w x J w`, and rotor thrusts from the X-mixer.

use nalgebra::{Matrix3, Matrix4, Rotation3, UnitQuaternion, Vector4};
use serde::{Deserialize, Serialize};

use crate::dual::{Grad, Scalar, Tangent};
use crate::error::{Error, Result};
use crate::model::QuadrotorParams;

/// Flat output `(px, py, pz, psi)` and its time derivatives; row `r` holds
/// the `r`-th derivative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeStack {
    pub derivs: Vec<[f64; 4]>,
}

impl DerivativeStack {
    pub fn new(derivs: Vec<[f64; 4]>) -> Result<Self> {
        if derivs.is_empty() {
            return Err(Error::StackTooShort { have: 0, need: 1 });
        }
        if derivs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("derivative stack entries must be finite".into()));
        }
        Ok(Self { derivs })
    }

    /// A stack at rest at `position` with heading `yaw`.
    pub fn rest(position: [f64; 3], yaw: f64, rows: usize) -> Self {
        let mut derivs = vec![[0.0; 4]; rows.max(1)];
        derivs[0] = [position[0], position[1], position[2], yaw];
        Self { derivs }
    }

    /// A stack moving at `velocity` with Z-Y-X attitude `(roll, pitch, yaw)`
    /// and mass-normalized collective thrust `thrust_acc`; jerk and higher
    /// rows are zero.
    pub fn with_attitude(
        position: [f64; 3],
        velocity: [f64; 3],
        (roll, pitch, yaw): (f64, f64, f64),
        thrust_acc: f64,
        gravity: f64,
        rows: usize,
    ) -> Self {
        let z_b = Rotation3::from_euler_angles(roll, pitch, yaw) * nalgebra::Vector3::z();
        let mut derivs = vec![[0.0; 4]; rows.max(3)];
        derivs[0] = [position[0], position[1], position[2], yaw];
        derivs[1] = [velocity[0], velocity[1], velocity[2], 0.0];
        derivs[2] = [thrust_acc * z_b[0], thrust_acc * z_b[1], thrust_acc * z_b[2] - gravity, 0.0];
        Self { derivs }
    }

    /// Highest derivative order present.
    pub fn order(&self) -> usize {
        self.derivs.len() - 1
    }

    fn row(&self, r: usize) -> [f64; 4] {
        self.derivs.get(r).copied().unwrap_or([0.0; 4])
    }

    fn require(&self, need: usize) -> Result<()> {
        if self.derivs.len() < need {
            Err(Error::StackTooShort { have: self.derivs.len(), need })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub position: [f64; 3],
    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub attitude: [f64; 4],
    pub velocity: [f64; 3],
    pub body_rates: [f64; 3],
}

impl FullState {
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        let [w, x, y, z] = self.attitude;
        UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotorCommand {
    pub f: [f64; 4],
}

/// Which set of actuation limits a trajectory must respect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintModel {
    /// Collective thrust and body rates.
    S,
    /// Single-rotor thrusts and body rates.
    R,
}

impl ConstraintModel {
    /// Continuity order `s` of the flat output.
    pub fn order(self) -> usize {
        match self {
            ConstraintModel::S => 3,
            ConstraintModel::R => 4,
        }
    }

    /// Length of the violation vector: three body-rate entries, then either
    /// `(F_min - F, F - F_max)` or `(f_min - f_i, f_i - f_max)` per rotor.
    pub fn constraint_len(self) -> usize {
        match self {
            ConstraintModel::S => 5,
            ConstraintModel::R => 11,
        }
    }

    /// Stack rows the constraints depend on.
    pub fn rows_needed(self) -> usize {
        self.order() + 1
    }
}

/// X-configuration allocation. Rotors are front-left, front-right,
/// rear-right, rear-left; the body x axis points forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixer {
    pub matrix: Matrix4<f64>,
    pub inverse: Matrix4<f64>,
}

impl Mixer {
    pub fn new(params: &QuadrotorParams) -> Result<Self> {
        let d = params.arm_length / std::f64::consts::SQRT_2;
        let k = params.torque_constant;
        #[rustfmt::skip]
        let matrix = Matrix4::new(
            1.0, 1.0, 1.0, 1.0,
            d, -d, -d, d,
            -d, -d, d, d,
            k, -k, k, -k,
        );
        let inverse = matrix
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("mixer matrix is singular".into()))?;
        let cond = matrix.norm() * inverse.norm();
        if !cond.is_finite() {
            return Err(Error::InvalidParams("mixer matrix is ill-conditioned".into()));
        }
        Ok(Self { matrix, inverse })
    }

    /// `[F, tau_x, tau_y, tau_z]` from rotor thrusts.
    pub fn wrench(&self, f: [f64; 4]) -> [f64; 4] {
        let w = self.matrix * Vector4::from(f);
        [w[0], w[1], w[2], w[3]]
    }

    pub fn rotors(&self, wrench: [f64; 4]) -> [f64; 4] {
        let f = self.inverse * Vector4::from(wrench);
        [f[0], f[1], f[2], f[3]]
    }

    fn rotors_generic<T: Scalar>(&self, w: [T; 4]) -> [T; 4] {
        std::array::from_fn(|i| {
            (0..4).fold(T::cst(0.0), |acc, j| acc + w[j].scale(self.inverse[(i, j)]))
        })
    }
}

/// Every quantity the flatness maps produce at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlatEval {
    pub state: FullState,
    pub collective: f64,
    pub torque: [f64; 3],
    pub angular_accel: [f64; 3],
    pub rotors: RotorCommand,
}

#[derive(Debug, Clone, Copy)]
struct Frame<T> {
    x_b: [T; 3],
    y_b: [T; 3],
    z_b: [T; 3],
    thrust: T,
    omega: [T; 3],
}

fn dot<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross<T: Scalar>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Flatness maps for one vehicle.
#[derive(Debug, Clone, Copy)]
pub struct FlatMap {
    pub params: QuadrotorParams,
    pub mixer: Mixer,
    /// Clamp the specific thrust magnitude at `eps_sing` instead of failing.
    pub clamp: bool,
    pub eps_sing: f64,
}

/// Inputs of the constraint functions in Jacobian column order.
pub const JACOBIAN_COLUMNS: [&str; 12] = [
    "ax", "ay", "az", "jx", "jy", "jz", "sx", "sy", "sz", "psi", "psi_d", "psi_dd",
];

impl FlatMap {
    pub fn new(params: QuadrotorParams) -> Result<Self> {
        params.validate()?;
        let mixer = Mixer::new(&params)?;
        Ok(Self {
            params,
            mixer,
            clamp: true,
            eps_sing: 0.05 * params.gravity,
        })
    }

    /// Attitude, specific thrust and body rates from acceleration, jerk, yaw
    /// and yaw rate.
    fn frame<T: Scalar>(&self, acc: [T; 3], jerk: [T; 3], psi: T, dpsi: T) -> Result<Frame<T>> {
        let t = [acc[0], acc[1], acc[2] + T::cst(self.params.gravity)];
        let norm = dot(&t, &t).sqrt();
        let (z_b, c) = if norm.re() >= self.eps_sing {
            (t.map(|v| v / norm), norm)
        } else if !self.clamp {
            return Err(Error::SingularThrust { norm: norm.re() });
        } else if norm.re() > 0.0 {
            (t.map(|v| v / norm), T::cst(self.eps_sing))
        } else {
            ([T::cst(0.0), T::cst(0.0), T::cst(1.0)], T::cst(self.eps_sing))
        };
        let (sp, cp) = (psi.sin(), psi.cos());
        let x_c = [cp, sp, T::cst(0.0)];
        let y_c = [-sp, cp, T::cst(0.0)];
        let n = cross(&z_b, &x_c);
        let nn = dot(&n, &n).sqrt();
        let y_b = if nn.re() > 1e-9 {
            n.map(|v| v / nn)
        } else {
            // Thrust axis along the heading: keep the heading's lateral axis.
            y_c
        };
        let x_b = cross(&y_b, &z_b);
        let zj = dot(&z_b, &jerk);
        let dz: [T; 3] = std::array::from_fn(|i| (jerk[i] - zj * z_b[i]) / c);
        let wx = -dot(&dz, &y_b);
        let wy = dot(&dz, &x_b);
        let xbxc = dot(&x_b, &x_c);
        let wz = if xbxc.re().abs() > 1e-9 {
            (wx * dot(&z_b, &x_c) + dpsi * dot(&y_b, &y_c)) / xbxc
        } else {
            dpsi * z_b[2]
        };
        Ok(Frame {
            x_b,
            y_b,
            z_b,
            thrust: c,
            omega: [wx, wy, wz],
        })
    }

    /// Body rates, their derivatives and the specific thrust, from the
    /// generic 12-entry input vector.
    fn rates_and_accel<T: Scalar>(&self, v: &[T; 12], need_accel: bool) -> Result<(Frame<T>, [T; 3])> {
        let acc = [v[0], v[1], v[2]];
        let jerk = [v[3], v[4], v[5]];
        if !need_accel {
            let f = self.frame(acc, jerk, v[9], v[10])?;
            return Ok((f, [T::cst(0.0); 3]));
        }
        let tan = |a: T, b: T| Tangent::new(a, b);
        let acc_t = [tan(v[0], v[3]), tan(v[1], v[4]), tan(v[2], v[5])];
        let jerk_t = [tan(v[3], v[6]), tan(v[4], v[7]), tan(v[5], v[8])];
        let ft = self.frame(acc_t, jerk_t, tan(v[9], v[10]), tan(v[10], v[11]))?;
        let frame = Frame {
            x_b: ft.x_b.map(|x| x.re),
            y_b: ft.y_b.map(|x| x.re),
            z_b: ft.z_b.map(|x| x.re),
            thrust: ft.thrust.re,
            omega: ft.omega.map(|x| x.re),
        };
        Ok((frame, ft.omega.map(|x| x.eps)))
    }

    fn wrench<T: Scalar>(&self, frame: &Frame<T>, dw: &[T; 3]) -> [T; 4] {
        let j = self.params.inertia_diag;
        let w = frame.omega;
        let jw = [w[0].scale(j[0]), w[1].scale(j[1]), w[2].scale(j[2])];
        let gyro = cross(&w, &jw);
        [
            frame.thrust.scale(self.params.mass),
            dw[0].scale(j[0]) + gyro[0],
            dw[1].scale(j[1]) + gyro[1],
            dw[2].scale(j[2]) + gyro[2],
        ]
    }

    fn constraints_generic<T: Scalar>(&self, v: &[T; 12], model: ConstraintModel, out: &mut [T]) -> Result<()> {
        let need_accel = model == ConstraintModel::R;
        let (frame, dw) = self.rates_and_accel(v, need_accel)?;
        let wmax = self.params.body_rate_max;
        for i in 0..3 {
            out[i] = frame.omega[i].abs() - T::cst(wmax[i]);
        }
        match model {
            ConstraintModel::S => {
                let f = frame.thrust.scale(self.params.mass);
                let (lo, hi) = self.params.collective_bounds();
                out[3] = T::cst(lo) - f;
                out[4] = f - T::cst(hi);
            }
            ConstraintModel::R => {
                let rot = self.mixer.rotors_generic(self.wrench(&frame, &dw));
                for (i, f) in rot.iter().enumerate() {
                    out[3 + 2 * i] = T::cst(self.params.rotor_thrust_min) - *f;
                    out[4 + 2 * i] = *f - T::cst(self.params.rotor_thrust_max);
                }
            }
        }
        Ok(())
    }

    fn inputs(stack: &DerivativeStack) -> [f64; 12] {
        let (a, j, s) = (stack.row(2), stack.row(3), stack.row(4));
        [a[0], a[1], a[2], j[0], j[1], j[2], s[0], s[1], s[2], stack.row(0)[3], stack.row(1)[3], stack.row(2)[3]]
    }

    /// Full state. Needs rows up to jerk.
    pub fn state_map(&self, stack: &DerivativeStack) -> Result<FullState> {
        stack.require(4)?;
        let v = Self::inputs(stack);
        let frame = self.frame([v[0], v[1], v[2]], [v[3], v[4], v[5]], v[9], v[10])?;
        Ok(Self::full_state(stack, &frame))
    }

    fn full_state(stack: &DerivativeStack, frame: &Frame<f64>) -> FullState {
        let m = Matrix3::from_columns(&[frame.x_b.into(), frame.y_b.into(), frame.z_b.into()]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
        let mut att = [q.w, q.i, q.j, q.k];
        if att[0] < 0.0 {
            att = att.map(|x| -x);
        }
        let n = att.iter().map(|x| x * x).sum::<f64>().sqrt();
        let p = stack.row(0);
        let vel = stack.row(1);
        FullState {
            position: [p[0], p[1], p[2]],
            attitude: att.map(|x| x / n),
            velocity: [vel[0], vel[1], vel[2]],
            body_rates: frame.omega,
        }
    }

    /// State, wrench and rotor thrusts. Needs rows up to snap.
    pub fn evaluate(&self, stack: &DerivativeStack) -> Result<FlatEval> {
        stack.require(5)?;
        let v = Self::inputs(stack);
        let (frame, dw) = self.rates_and_accel(&v, true)?;
        let w = self.wrench(&frame, &dw);
        Ok(FlatEval {
            state: Self::full_state(stack, &frame),
            collective: w[0],
            torque: [w[1], w[2], w[3]],
            angular_accel: dw,
            rotors: RotorCommand { f: self.mixer.rotors(w) },
        })
    }

    pub fn input_map(&self, stack: &DerivativeStack) -> Result<RotorCommand> {
        Ok(self.evaluate(stack)?.rotors)
    }

    /// Violation vector; every entry is `<= 0` iff the instant is feasible.
    pub fn constraint_map(&self, stack: &DerivativeStack, model: ConstraintModel) -> Result<Vec<f64>> {
        stack.require(model.rows_needed())?;
        let mut out = vec![0.0; model.constraint_len()];
        self.constraint_values(&Self::inputs(stack), model, &mut out)?;
        Ok(out)
    }

    /// Same as [`FlatMap::constraint_map`] on a raw input vector ordered as
    /// [`JACOBIAN_COLUMNS`].
    pub fn constraint_values(&self, v: &[f64; 12], model: ConstraintModel, out: &mut [f64]) -> Result<()> {
        self.constraints_generic(v, model, out)
    }

    /// Jacobian of the violation vector, one row per constraint, columns as
    /// in [`JACOBIAN_COLUMNS`]. Position and velocity do not enter.
    pub fn constraint_jacobian(&self, stack: &DerivativeStack, model: ConstraintModel) -> Result<Vec<[f64; 12]>> {
        stack.require(model.rows_needed())?;
        let v = Self::inputs(stack);
        let mut vals = [0.0; 11];
        let mut jac = vec![[0.0; 12]; model.constraint_len()];
        self.constraint_grad::<12>(&v, &std::array::from_fn(Some), model, &mut vals, &mut jac)?;
        Ok(jac)
    }

    /// Values and partial derivatives with respect to the seeded inputs.
    /// `seeds[i] = Some(k)` makes input `i` the `k`-th differentiation
    /// variable; unseeded inputs are held constant. `jac[row][k]` receives
    /// the derivative for seeded column `k`, other entries are untouched.
    pub fn constraint_grad<const N: usize>(
        &self,
        v: &[f64; 12],
        seeds: &[Option<usize>; 12],
        model: ConstraintModel,
        vals: &mut [f64],
        jac: &mut [[f64; 12]],
    ) -> Result<()> {
        let g: [Grad<N>; 12] = std::array::from_fn(|i| match seeds[i] {
            Some(k) => Grad::var(v[i], k),
            None => Grad::cst(v[i]),
        });
        let mut out = [Grad::<N>::cst(0.0); 11];
        self.constraints_generic(&g, model, &mut out)?;
        for r in 0..model.constraint_len() {
            vals[r] = out[r].re;
            for (i, s) in seeds.iter().enumerate() {
                if let Some(k) = s {
                    jac[r][i] = out[r].eps[*k];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn std_map() -> FlatMap {
        FlatMap::new(QuadrotorParams::quad_std()).unwrap()
    }

    fn stack_with(acc: [f64; 3], psi: f64) -> DerivativeStack {
        let mut s = DerivativeStack::rest([0.0; 3], psi, 5);
        s.derivs[2] = [acc[0], acc[1], acc[2], 0.0];
        s
    }

    /// Smooth test trajectory of position and yaw, with analytic
    /// derivatives up to order `rows - 1`.
    fn smooth_stack(t: f64, rows: usize) -> DerivativeStack {
        let mut d = vec![[0.0; 4]; rows];
        // channel(t) = sum a sin(w t + phi)
        let ch: [(f64, f64, f64); 4] = [(1.5, 1.3, 0.2), (0.9, 1.7, 1.0), (1.1, 2.1, -0.4), (0.6, 0.8, 0.3)];
        for (c, &(a, w, phi)) in ch.iter().enumerate() {
            for (r, row) in d.iter_mut().enumerate() {
                let k = a * w.powi(r as i32);
                let arg = w * t + phi + r as f64 * std::f64::consts::FRAC_PI_2;
                row[c] = k * arg.sin();
            }
        }
        DerivativeStack::new(d).unwrap()
    }

    #[test]
    fn hover_maps() {
        let m = std_map();
        let s = DerivativeStack::rest([1.0, 2.0, 3.0], 0.0, 5);
        let st = m.state_map(&s).unwrap();
        assert_relative_eq!(st.attitude[0], 1.0, epsilon = 1e-15);
        assert_eq!(st.body_rates, [0.0; 3]);
        assert_eq!(st.position, [1.0, 2.0, 3.0]);
        let f = m.input_map(&s).unwrap().f;
        for fi in f {
            assert_relative_eq!(fi, 2.4525, epsilon = 1e-12);
        }
        let c = m.constraint_map(&s, ConstraintModel::R).unwrap();
        assert_eq!(c.len(), 11);
        assert!(c.iter().all(|&v| v < 0.0));
        let c = m.constraint_map(&s, ConstraintModel::S).unwrap();
        assert_eq!(c.len(), 5);
        assert!(c.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn tilted_thrust_direction() {
        let m = std_map();
        let g = m.params.gravity;
        let st = m.state_map(&stack_with([g, 0.0, 0.0], 0.0)).unwrap();
        let z = st.rotation() * nalgebra::Vector3::z();
        let r = 1.0 / 2f64.sqrt();
        assert_relative_eq!(z.x, r, epsilon = 1e-12);
        assert_relative_eq!(z.z, r, epsilon = 1e-12);
        // Pitch of 45 degrees about body y.
        let (_, pitch, _) = st.rotation().euler_angles();
        assert_relative_eq!(pitch, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
    }

    #[test]
    fn vertical_acceleration_doubles_thrust() {
        let m = std_map();
        let g = m.params.gravity;
        let f = m.input_map(&stack_with([0.0, 0.0, g], 0.0)).unwrap().f;
        for fi in f {
            assert_relative_eq!(fi, 4.905, epsilon = 1e-12);
        }
        // Collective at 4 f_max puts the upper rotor entries on the boundary.
        let az = 4.0 * m.params.rotor_thrust_max / m.params.mass - g;
        let c = m.constraint_map(&stack_with([0.0, 0.0, az], 0.0), ConstraintModel::R).unwrap();
        for i in 0..4 {
            assert!(c[4 + 2 * i].abs() < 1e-12);
        }
    }

    #[test]
    fn mixer_round_trip() {
        for p in ["STD", "RPG", "FGG", "FSC"] {
            let mx = Mixer::new(&QuadrotorParams::preset(p).unwrap()).unwrap();
            for fi in mx.rotors([8.0, 0.0, 0.0, 0.0]) {
                assert_relative_eq!(fi, 2.0, epsilon = 1e-12);
            }
            let prod = mx.matrix * mx.inverse;
            assert!((prod - Matrix4::identity()).abs().max() < 1e-12);
        }
    }

    #[test]
    fn quaternion_is_unit_and_positions_differentiate_to_velocity() {
        let m = std_map();
        let h = 1e-5;
        for i in 0..50 {
            let t = 0.13 * i as f64;
            let s = smooth_stack(t, 5);
            let st = m.state_map(&s).unwrap();
            let n: f64 = st.attitude.iter().map(|x| x * x).sum();
            assert!((n.sqrt() - 1.0).abs() <= 1e-9);
            let p1 = m.state_map(&smooth_stack(t + h, 5)).unwrap().position;
            let p0 = m.state_map(&smooth_stack(t - h, 5)).unwrap().position;
            for k in 0..3 {
                let fd = (p1[k] - p0[k]) / (2.0 * h);
                assert!((fd - st.velocity[k]).abs() <= 1e-6 * st.velocity[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn flat_maps_satisfy_rigid_body_dynamics() {
        let m = std_map();
        let p = m.params;
        let h = 1e-5;
        for i in 0..40 {
            let t = 0.17 * i as f64;
            let e = m.evaluate(&smooth_stack(t, 6)).unwrap();
            let ep = m.evaluate(&smooth_stack(t + h, 6)).unwrap();
            let em = m.evaluate(&smooth_stack(t - h, 6)).unwrap();
            let r = e.state.rotation();
            // Translational: v' = F/m z_B - g e3.
            let z = r * nalgebra::Vector3::z();
            for k in 0..3 {
                let dv = (ep.state.velocity[k] - em.state.velocity[k]) / (2.0 * h);
                let pred = e.collective / p.mass * z[k] - if k == 2 { p.gravity } else { 0.0 };
                assert!((dv - pred).abs() <= 1e-5 * pred.abs().max(1.0), "v' {k}: {dv} vs {pred}");
            }
            // Rotational kinematics: R' = R [w]x.
            let rp = ep.state.rotation().to_rotation_matrix();
            let rm = em.state.rotation().to_rotation_matrix();
            let dr = (rp.matrix() - rm.matrix()) / (2.0 * h);
            let w = nalgebra::Vector3::from(e.state.body_rates);
            let pred = r.to_rotation_matrix().matrix() * w.cross_matrix();
            assert!((dr - pred).abs().max() <= 1e-5 * pred.abs().max().max(1.0));
            // Euler: J w' = tau - w x J w, with torques recovered from rotors.
            let wrench = m.mixer.wrench(e.rotors.f);
            let j = p.inertia_diag;
            for k in 0..3 {
                let dw = (ep.state.body_rates[k] - em.state.body_rates[k]) / (2.0 * h);
                let jw = nalgebra::Vector3::new(j[0] * w[0], j[1] * w[1], j[2] * w[2]);
                let gyro = w.cross(&jw);
                let pred = (wrench[k + 1] - gyro[k]) / j[k];
                assert!((dw - pred).abs() <= 1e-5 * pred.abs().max(1.0), "w' {k}: {dw} vs {pred}");
            }
        }
    }

    #[test]
    fn jacobian_hover_entries() {
        let m = std_map();
        let s = DerivativeStack::rest([0.0; 3], 0.0, 5);
        let jac = m.constraint_jacobian(&s, ConstraintModel::R).unwrap();
        for i in 0..4 {
            assert_relative_eq!(jac[4 + 2 * i][2], m.params.mass / 4.0, epsilon = 1e-12);
        }
        // d|w_z|/d(psi') at hover with a small positive yaw rate.
        let mut s = s;
        s.derivs[1][3] = 0.1;
        let jac = m.constraint_jacobian(&s, ConstraintModel::R).unwrap();
        assert_relative_eq!(jac[2][10], 1.0, epsilon = 1e-12);
    }

    pub(crate) fn random_stack(rng: &mut impl Rng) -> DerivativeStack {
        let mut d = vec![[0.0; 4]; 5];
        for (r, row) in d.iter_mut().enumerate() {
            let scale = [5.0, 3.0, 6.0, 20.0, 100.0][r];
            for v in row.iter_mut().take(3) {
                *v = rng.gen_range(-scale..scale);
            }
            row[3] = rng.gen_range(-1.0..1.0) * [3.0, 1.0, 2.0, 5.0, 5.0][r];
        }
        DerivativeStack::new(d).unwrap()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = std_map();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut checked = 0;
        while checked < 50 {
            let s = random_stack(&mut rng);
            for model in [ConstraintModel::S, ConstraintModel::R] {
                let jac = m.constraint_jacobian(&s, model).unwrap();
                let v = FlatMap::inputs(&s);
                let n = model.constraint_len();
                let mut worst: f64 = 0.0;
                for col in 0..12 {
                    let h = 1e-6 * v[col].abs().max(1.0);
                    let (mut vp, mut vm) = (v, v);
                    vp[col] += h;
                    vm[col] -= h;
                    let (mut fp, mut fm) = (vec![0.0; n], vec![0.0; n]);
                    m.constraint_values(&vp, model, &mut fp).unwrap();
                    m.constraint_values(&vm, model, &mut fm).unwrap();
                    for r in 0..n {
                        let fd = (fp[r] - fm[r]) / (2.0 * h);
                        let err = (fd - jac[r][col]).abs() / jac[r][col].abs().max(1.0);
                        worst = worst.max(err);
                    }
                }
                assert!(worst <= 1e-5, "relative error {worst}");
            }
            checked += 1;
        }
    }

    #[test]
    fn singular_thrust_is_clamped_or_rejected() {
        let mut m = std_map();
        let g = m.params.gravity;
        let s = stack_with([0.0, 0.0, -g], 0.0);
        assert!(m.state_map(&s).is_ok());
        m.clamp = false;
        assert!(matches!(m.state_map(&s), Err(Error::SingularThrust { .. })));
    }

    #[test]
    fn thrust_along_heading_falls_back() {
        let m = std_map();
        let g = m.params.gravity;
        // Thrust pointing along +x with zero yaw.
        let st = m.state_map(&stack_with([1000.0, 0.0, -g], 0.0)).unwrap();
        let n: f64 = st.attitude.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn short_stack_is_rejected() {
        let m = std_map();
        let s = DerivativeStack::rest([0.0; 3], 0.0, 3);
        assert!(matches!(m.state_map(&s), Err(Error::StackTooShort { .. })));
        assert!(m.constraint_map(&DerivativeStack::rest([0.0; 3], 0.0, 4), ConstraintModel::S).is_ok());
    }
}
