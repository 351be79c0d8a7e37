//! Vehicle parameters and the planar non-dimensional quadrotor model.
//!
//! The planar model has state `[x, x_dot, z, z_dot, theta]` and inputs
//! `(u_r, u_t)`: rotational rate normalized by the pitch-rate bound and
//! thrust normalized by weight. Time is scaled by the pitch-rate bound
//! `w` and positions by `w^2 / g`, which removes mass and gravity from the
//! equations of motion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Physical description of an X-configuration quadrotor. SI units throughout;
/// `inertia_diag` is in kg m^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadrotorParams {
    pub mass: f64,
    pub arm_length: f64,
    pub inertia_diag: [f64; 3],
    pub rotor_thrust_min: f64,
    pub rotor_thrust_max: f64,
    pub torque_constant: f64,
    /// Body-rate bounds `[roll, pitch, yaw]` in rad/s.
    pub body_rate_max: [f64; 3],
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl QuadrotorParams {
    /// Builds parameters from a table row where inertia is given in g m^2.
    pub fn from_table_row(
        mass: f64,
        arm_length: f64,
        inertia_gm2: [f64; 3],
        rotor_thrust: (f64, f64),
        torque_constant: f64,
        body_rate_max: [f64; 3],
    ) -> Self {
        Self {
            mass,
            arm_length,
            inertia_diag: inertia_gm2.map(|j| j * 1e-3),
            rotor_thrust_min: rotor_thrust.0,
            rotor_thrust_max: rotor_thrust.1,
            torque_constant,
            body_rate_max,
            gravity: STANDARD_GRAVITY,
        }
    }

    pub fn quad_std() -> Self {
        Self::from_table_row(1.0, 0.15, [5.0, 5.0, 10.0], (0.25, 5.0), 0.01, [10.0; 3])
    }

    pub fn quad_rpg() -> Self {
        Self::from_table_row(
            0.85,
            0.15,
            [1.0, 1.0, 1.7],
            (0.1, 6.88),
            0.05,
            [15.0, 15.0, 3.0],
        )
    }

    pub fn quad_fgg() -> Self {
        Self::from_table_row(
            1.0,
            0.08,
            [4.9, 4.9, 6.9],
            (0.1, 9.0),
            0.136,
            [10.0, 10.0, 3.0],
        )
    }

    pub fn quad_fsc() -> Self {
        Self::from_table_row(
            1.005,
            0.125,
            [2.5, 2.1, 4.3],
            (0.1, 9.0),
            0.022,
            [10.0, 10.0, 3.0],
        )
    }

    /// Looks up one of the built-in presets (`STD`, `RPG`, `FGG`, `FSC`),
    /// case-insensitively.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_uppercase().as_str() {
            "STD" => Some(Self::quad_std()),
            "RPG" => Some(Self::quad_rpg()),
            "FGG" => Some(Self::quad_fgg()),
            "FSC" => Some(Self::quad_fsc()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParams(m.to_string()));
        let finite = [
            self.mass,
            self.arm_length,
            self.rotor_thrust_min,
            self.rotor_thrust_max,
            self.torque_constant,
            self.gravity,
        ]
        .iter()
        .chain(self.inertia_diag.iter())
        .chain(self.body_rate_max.iter())
        .all(|v| v.is_finite());
        if !finite {
            return fail("all parameters must be finite");
        }
        if self.mass <= 0.0 {
            return fail("mass must be positive");
        }
        if self.arm_length <= 0.0 {
            return fail("arm length must be positive");
        }
        if self.inertia_diag.iter().any(|&j| j <= 0.0) {
            return fail("inertia components must be positive");
        }
        if !(self.rotor_thrust_min > 0.0 && self.rotor_thrust_min < self.rotor_thrust_max) {
            return fail("rotor thrust bounds must satisfy 0 < min < max");
        }
        if self.body_rate_max.iter().any(|&w| w <= 0.0) {
            return fail("body-rate bounds must be positive");
        }
        if self.torque_constant <= 0.0 {
            return fail("torque constant must be positive");
        }
        if self.gravity <= 0.0 {
            return fail("gravity must be positive");
        }
        Ok(())
    }

    /// Total thrust range `[4 f_min, 4 f_max]` in N.
    pub fn collective_bounds(&self) -> (f64, f64) {
        (4.0 * self.rotor_thrust_min, 4.0 * self.rotor_thrust_max)
    }

    /// Weight-normalized thrust bounds of the planar model.
    pub fn planar_bounds(&self) -> (f64, f64) {
        let w = self.mass * self.gravity;
        (4.0 * self.rotor_thrust_min / w, 4.0 * self.rotor_thrust_max / w)
    }

    /// Scaling between dimensional and non-dimensional planar quantities,
    /// based on the pitch-axis rate bound.
    pub fn scaling(&self) -> Scaling {
        Scaling {
            omega_bar: self.body_rate_max[1],
            gravity: self.gravity,
        }
    }
}

/// Time and length scales of the non-dimensional model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub omega_bar: f64,
    pub gravity: f64,
}

impl Scaling {
    pub fn time(&self, t: f64) -> f64 {
        self.omega_bar * t
    }

    pub fn time_inv(&self, t_hat: f64) -> f64 {
        t_hat / self.omega_bar
    }

    pub fn length(&self, pos: f64) -> f64 {
        self.omega_bar * self.omega_bar * pos / self.gravity
    }

    pub fn length_inv(&self, pos_hat: f64) -> f64 {
        pos_hat * self.gravity / (self.omega_bar * self.omega_bar)
    }

    pub fn velocity(&self, v: f64) -> f64 {
        self.omega_bar * v / self.gravity
    }

    pub fn velocity_inv(&self, v_hat: f64) -> f64 {
        v_hat * self.gravity / self.omega_bar
    }
}

/// Converts `(t, pos)` in seconds and metres to non-dimensional values.
pub fn nondimensionalize(params: &QuadrotorParams, t: f64, pos: f64) -> (f64, f64) {
    let s = params.scaling();
    (s.time(t), s.length(pos))
}

/// Inverse of [`nondimensionalize`].
pub fn dimensionalize(params: &QuadrotorParams, t_hat: f64, pos_hat: f64) -> (f64, f64) {
    let s = params.scaling();
    (s.time_inv(t_hat), s.length_inv(pos_hat))
}

/// Planar state. `theta` is unwrapped so flips accumulate angle.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarState {
    pub x_hat: f64,
    pub x_hat_dot: f64,
    pub z_hat: f64,
    pub z_hat_dot: f64,
    pub theta: f64,
}

impl PlanarState {
    pub fn to_array(self) -> [f64; 5] {
        [self.x_hat, self.x_hat_dot, self.z_hat, self.z_hat_dot, self.theta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            x_hat: a[0],
            x_hat_dot: a[1],
            z_hat: a[2],
            z_hat_dot: a[3],
            theta: a[4],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarInput {
    pub u_r: f64,
    pub u_t: f64,
}

impl PlanarInput {
    /// Checked constructor against `|u_r| <= 1` and `u_t` in `bounds`.
    pub fn new(u_r: f64, u_t: f64, bounds: (f64, f64)) -> Result<Self> {
        if bounds.0 <= 0.0 || bounds.0 > bounds.1 {
            return Err(Error::InvalidArgument(format!(
                "thrust bounds {bounds:?} must satisfy 0 < min <= max"
            )));
        }
        if !(u_r.abs() <= 1.0) {
            return Err(Error::InvalidArgument(format!("|u_r| = {} > 1", u_r.abs())));
        }
        if !(u_t >= bounds.0 && u_t <= bounds.1) {
            return Err(Error::InvalidArgument(format!(
                "u_t = {u_t} outside [{}, {}]",
                bounds.0, bounds.1
            )));
        }
        Ok(Self { u_r, u_t })
    }
}

/// Non-dimensional planar equations of motion.
pub fn planar_dynamics(state: &PlanarState, input: &PlanarInput) -> PlanarState {
    let (s, c) = state.theta.sin_cos();
    PlanarState {
        x_hat: state.x_hat_dot,
        x_hat_dot: input.u_t * s,
        z_hat: state.z_hat_dot,
        z_hat_dot: input.u_t * c - 1.0,
        theta: input.u_r,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rk4<const N: usize>(y: [f64; N], h: f64, f: impl Fn(&[f64; N]) -> [f64; N]) -> [f64; N] {
        let add = |a: &[f64; N], b: &[f64; N], k: f64| {
            let mut o = *a;
            for i in 0..N {
                o[i] += k * b[i];
            }
            o
        };
        let k1 = f(&y);
        let k2 = f(&add(&y, &k1, h / 2.0));
        let k3 = f(&add(&y, &k2, h / 2.0));
        let k4 = f(&add(&y, &k3, h));
        let mut o = y;
        for i in 0..N {
            o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        o
    }

    #[test]
    fn scaling_examples() {
        let mut p = QuadrotorParams::quad_std();
        p.body_rate_max = [10.0; 3];
        let (t_hat, _) = nondimensionalize(&p, 1.0, 0.0);
        assert_eq!(t_hat, 10.0);
        let (_, x_hat) = nondimensionalize(&p, 0.0, 9.81);
        assert_relative_eq!(x_hat, 100.0, epsilon = 1e-12);
        let (t, x) = dimensionalize(&p, 0.37, 12.5);
        let (t2, x2) = nondimensionalize(&p, t, x);
        assert_relative_eq!(t2, 0.37, max_relative = 1e-15);
        assert_relative_eq!(x2, 12.5, max_relative = 1e-15);
    }

    #[test]
    fn dynamics_examples() {
        let hover = planar_dynamics(&PlanarState::default(), &PlanarInput { u_r: 0.0, u_t: 1.0 });
        assert_eq!(hover.to_array(), [0.0; 5]);
        let side = PlanarState {
            theta: std::f64::consts::FRAC_PI_2,
            ..Default::default()
        };
        let d = planar_dynamics(&side, &PlanarInput { u_r: 0.0, u_t: 2.0 });
        assert_relative_eq!(d.x_hat_dot, 2.0, epsilon = 1e-15);
        assert_relative_eq!(d.z_hat_dot, -1.0, epsilon = 1e-15);
        let inverted = PlanarState {
            theta: std::f64::consts::PI,
            ..Default::default()
        };
        let d = planar_dynamics(&inverted, &PlanarInput { u_r: 0.0, u_t: 1.0 });
        assert_relative_eq!(d.z_hat_dot, -2.0, epsilon = 1e-15);
    }

    #[test]
    fn planar_bounds_of_presets() {
        let (lo, hi) = QuadrotorParams::quad_std().planar_bounds();
        assert_relative_eq!(lo, 0.1019, epsilon = 5e-5);
        assert_relative_eq!(hi, 2.0387, epsilon = 5e-5);
        let (lo, hi) = QuadrotorParams::quad_fsc().planar_bounds();
        assert_relative_eq!(lo, 0.0406, epsilon = 5e-5);
        assert_relative_eq!(hi, 3.652, epsilon = 1e-3);
        let mut p = QuadrotorParams::quad_std();
        p.rotor_thrust_max = p.gravity / 4.0;
        assert_relative_eq!(p.planar_bounds().1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inertia_is_converted_from_gram_square_metres() {
        assert_eq!(QuadrotorParams::quad_std().inertia_diag, [5e-3, 5e-3, 1e-2]);
    }

    #[test]
    fn validation_rejects_bad_rows() {
        for p in ["STD", "rpg", "Fgg", "fsc"] {
            QuadrotorParams::preset(p).unwrap().validate().unwrap();
        }
        let mut p = QuadrotorParams::quad_std();
        p.rotor_thrust_min = 6.0;
        assert!(p.validate().is_err());
        let mut p = QuadrotorParams::quad_std();
        p.inertia_diag[2] = 0.0;
        assert!(p.validate().is_err());
        let mut p = QuadrotorParams::quad_std();
        p.mass = f64::NAN;
        assert!(p.validate().is_err());
        assert!(PlanarInput::new(1.5, 1.0, (0.1, 2.0)).is_err());
        assert!(PlanarInput::new(0.5, 2.5, (0.1, 2.0)).is_err());
    }

    #[test]
    fn nondimensional_integration_matches_dimensional_model() {
        let p = QuadrotorParams::quad_std();
        let s = p.scaling();
        let thrust = |t: f64| 12.0 + 4.0 * (3.0 * t).sin();
        let rate = |t: f64| 6.0 * (2.0 * t).cos();
        let h = 1e-4;
        let steps = 5000;
        // Dimensional: [x, vx, z, vz, theta, t]
        let mut y = [0.0, 1.0, 0.0, -0.5, 0.2, 0.0];
        let mut yh = [
            0.0,
            s.velocity(1.0),
            0.0,
            s.velocity(-0.5),
            0.2,
            0.0,
        ];
        for _ in 0..steps {
            y = rk4(y, h, |y| {
                let f = thrust(y[5]) / p.mass;
                [y[1], f * y[4].sin(), y[3], f * y[4].cos() - p.gravity, rate(y[5]), 1.0]
            });
            yh = rk4(yh, s.time(h), |y| {
                let t = s.time_inv(y[5]);
                let st = PlanarState::from_array([y[0], y[1], y[2], y[3], y[4]]);
                let d = planar_dynamics(
                    &st,
                    &PlanarInput {
                        u_r: rate(t) / s.omega_bar,
                        u_t: thrust(t) / (p.mass * p.gravity),
                    },
                );
                let a = d.to_array();
                [a[0], a[1], a[2], a[3], a[4], 1.0]
            });
        }
        let back = [
            s.length_inv(yh[0]),
            s.velocity_inv(yh[1]),
            s.length_inv(yh[2]),
            s.velocity_inv(yh[3]),
            yh[4],
        ];
        for i in 0..5 {
            let rel = (back[i] - y[i]).abs() / y[i].abs().max(1.0);
            assert!(rel <= 1e-8, "component {i}: {} vs {}", back[i], y[i]);
        }
    }

    #[test]
    fn dynamics_are_affine_in_inputs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let st = PlanarState::from_array(std::array::from_fn(|_| rng.gen_range(-5.0..5.0)));
            let a = PlanarInput { u_r: rng.gen_range(-1.0..1.0), u_t: rng.gen_range(0.1..3.0) };
            let b = PlanarInput { u_r: rng.gen_range(-1.0..1.0), u_t: rng.gen_range(0.1..3.0) };
            let l: f64 = rng.gen_range(0.0..1.0);
            let mix = PlanarInput {
                u_r: l * a.u_r + (1.0 - l) * b.u_r,
                u_t: l * a.u_t + (1.0 - l) * b.u_t,
            };
            let fa = planar_dynamics(&st, &a).to_array();
            let fb = planar_dynamics(&st, &b).to_array();
            let fm = planar_dynamics(&st, &mix).to_array();
            for i in 0..5 {
                assert!((fm[i] - (l * fa[i] + (1.0 - l) * fb[i])).abs() < 1e-12);
            }
        }
    }
}
