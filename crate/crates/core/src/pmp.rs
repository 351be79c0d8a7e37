//! Maximum-principle analysis of the planar minimum-time problem.
//!
//! The first four adjoints are affine in time, `p = (c1, c2 - c1 t, c3,
//! c4 - c3 t)`, so an extremal is fixed by `c`, the initial state and
//! `p5(0)`. Controls maximize the Hamiltonian
//!
//! ```text
//! H = p1 x' + p2 u_t sin(theta) + p3 z' + p4 (u_t cos(theta) - 1) + p5 u_r - 1
//! ```
//!
//! which is written with the normal multiplier `-1` for the running cost.
//! With `+1` a hover start could never reach `H = 0`, because the maximized
//! thrust term is then always positive.

use crate::error::{Error, Result};
use crate::model::{PlanarInput, PlanarState};
use serde::Serialize;
use std::f64::consts::PI;

/// Tolerance used to classify a configuration as having flat singular flows.
pub const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointConfig {
    pub c: [f64; 4],
    pub p5_init: f64,
}

impl AdjointConfig {
    pub fn new(c: [f64; 4], p5_init: f64) -> Result<Self> {
        if c.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidArgument("adjoint constants must not all vanish".into()));
        }
        if !c.iter().chain(std::iter::once(&p5_init)).all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("adjoint constants must be finite".into()));
        }
        Ok(Self { c, p5_init })
    }

    /// `c2 c3 - c1 c4`; zero exactly when the singular flows are flat.
    pub fn flatness_gap(&self) -> f64 {
        let [c1, c2, c3, c4] = self.c;
        c2 * c3 - c1 * c4
    }

    pub fn is_flat(&self) -> bool {
        self.flatness_gap().abs() <= FLAT_TOL
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AdjointState {
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
}

/// First four adjoints at `t_hat`.
pub fn adjoint_at(cfg: &AdjointConfig, t_hat: f64) -> (f64, f64, f64, f64) {
    let [c1, c2, c3, c4] = cfg.c;
    (c1, c2 - c1 * t_hat, c3, c4 - c3 * t_hat)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SwitchingState {
    pub phi_t: f64,
    pub phi_r: f64,
    pub phi_r_dot: f64,
    pub hamiltonian: f64,
}

/// Thrust switching function `p2 sin(theta) + p4 cos(theta)`.
pub fn phi_t(cfg: &AdjointConfig, t_hat: f64, theta: f64) -> f64 {
    let (_, p2, _, p4) = adjoint_at(cfg, t_hat);
    let (s, c) = theta.sin_cos();
    p2 * s + p4 * c
}

/// `-p2 cos(theta) + p4 sin(theta)`: zero exactly on a singular flow, and
/// equal to the rate of `p5` divided by `u_t`.
pub fn flow_residual(cfg: &AdjointConfig, t_hat: f64, theta: f64) -> f64 {
    let (_, p2, _, p4) = adjoint_at(cfg, t_hat);
    let (s, c) = theta.sin_cos();
    -p2 * c + p4 * s
}

pub fn hamiltonian(cfg: &AdjointConfig, t_hat: f64, state: &PlanarState, p5: f64, input: &PlanarInput) -> f64 {
    let (p1, p2, p3, p4) = adjoint_at(cfg, t_hat);
    let (s, c) = state.theta.sin_cos();
    p1 * state.x_hat_dot
        + p2 * input.u_t * s
        + p3 * state.z_hat_dot
        + p4 * (input.u_t * c - 1.0)
        + p5 * input.u_r
        - 1.0
}

/// Switching values at one instant. `p5` is the rate switching value itself,
/// which can only be obtained by integrating along a trajectory.
pub fn switching_values(
    cfg: &AdjointConfig,
    t_hat: f64,
    state: &PlanarState,
    p5: f64,
    input: &PlanarInput,
) -> Result<SwitchingState> {
    if !(input.u_t > 0.0) {
        return Err(Error::InvalidArgument(format!("u_t = {} must be positive", input.u_t)));
    }
    Ok(SwitchingState {
        phi_t: phi_t(cfg, t_hat, state.theta),
        phi_r: p5,
        phi_r_dot: input.u_t * flow_residual(cfg, t_hat, state.theta),
        hamiltonian: hamiltonian(cfg, t_hat, state, p5, input),
    })
}

/// Solves `H(0) = 0` for `p5(0)` with thrust chosen to maximize `H` and the
/// rate bang sign given by `rate_sign`. Fails when no such `p5` exists.
pub fn solve_p5(c: [f64; 4], x0: &PlanarState, thrust_bounds: (f64, f64), rate_sign: f64) -> Result<f64> {
    let cfg = AdjointConfig::new(c, 0.0)?;
    let phi = phi_t(&cfg, 0.0, x0.theta);
    let thrust_term = (thrust_bounds.1 * phi).max(thrust_bounds.0 * phi);
    let [c1, _, c3, c4] = c;
    let magnitude = 1.0 - (c1 * x0.x_hat_dot + c3 * x0.z_hat_dot - c4 + thrust_term);
    if magnitude < 0.0 {
        return Err(Error::NotHConsistent(format!(
            "zero Hamiltonian needs |p5| = {magnitude:.3e} < 0"
        )));
    }
    Ok(if rate_sign < 0.0 { -magnitude } else { magnitude })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularFlow {
    pub c: [f64; 4],
    pub k: i64,
    pub is_flat: bool,
    base: f64,
}

/// Singular flow of branch `k`. Non-flat flows follow `atan2(p2, p4)` made
/// continuous in time; the angle of an affine curve that misses the origin
/// sweeps less than `pi` in total, so wrapping the offset from `t = 0` is
/// enough.
pub fn singular_flow(cfg: &AdjointConfig, k: i64) -> SingularFlow {
    let [c1, c2, c3, c4] = cfg.c;
    let is_flat = cfg.is_flat();
    let base = if is_flat && (c1 != 0.0 || c3 != 0.0) { c1.atan2(c3) } else { c2.atan2(c4) };
    SingularFlow { c: cfg.c, k, is_flat, base }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pi(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

impl SingularFlow {
    pub fn value(&self, t_hat: f64) -> f64 {
        let shift = self.k as f64 * PI;
        if self.is_flat {
            return self.base + shift;
        }
        let [c1, c2, c3, c4] = self.c;
        let a = (c2 - c1 * t_hat).atan2(c4 - c3 * t_hat);
        self.base + wrap_pi(a - self.base) + shift
    }

    pub fn rate(&self, t_hat: f64) -> f64 {
        if self.is_flat {
            0.0
        } else {
            singular_rate_c(self.c, t_hat)
        }
    }

    pub fn residual(&self, t_hat: f64) -> f64 {
        let [c1, c2, c3, c4] = self.c;
        let th = self.value(t_hat);
        -(c2 - c1 * t_hat) * th.cos() + (c4 - c3 * t_hat) * th.sin()
    }

    pub fn sample(&self, times: &[f64]) -> Vec<f64> {
        times.iter().map(|&t| self.value(t)).collect()
    }

    /// Distance from `theta` to the nearest branch of this flow family.
    pub fn angle_distance(&self, t_hat: f64, theta: f64) -> f64 {
        let d = theta - self.value(t_hat);
        (d - PI * (d / PI).round()).abs()
    }
}

fn singular_rate_c(c: [f64; 4], t: f64) -> f64 {
    let [c1, c2, c3, c4] = c;
    let den = (c1 * c1 + c3 * c3) * t * t - 2.0 * (c1 * c2 + c3 * c4) * t + c2 * c2 + c4 * c4;
    (c2 * c3 - c1 * c4) / den
}

/// Rotational rate on a singular arc. Flat configurations give exactly zero.
pub fn singular_rate(cfg: &AdjointConfig, t_hat: f64) -> f64 {
    if cfg.is_flat() {
        return 0.0;
    }
    singular_rate_c(cfg.c, t_hat)
}

/// Piece budget from switch counts and the number of extra degrees needed
/// for non-rest boundary states.
pub fn piece_count(n_t: i64, n_r: i64, n_se: i64) -> Result<usize> {
    if n_t < 0 || n_r < 0 || n_se < 0 {
        return Err(Error::InvalidArgument("switch counts must be non-negative".into()));
    }
    if n_se > 2 {
        return Err(Error::InvalidArgument(format!("n_se = {n_se} must be at most 2")));
    }
    Ok((n_t + n_r + n_se + 1) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArcKind {
    BangHigh,
    BangLow,
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Thrust,
    Rate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arc {
    pub kind: ArcKind,
    pub channel: Channel,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingProfile {
    pub arcs: Vec<Arc>,
    pub thrust_switches: usize,
    pub rate_switches: usize,
    pub thrust_structure: String,
    pub rate_structure: String,
    /// Whether the configuration belongs to the flat-flow class.
    pub flat_class: bool,
    /// `(c1, c3) != (0, 0)`.
    pub c1c3_nonzero: bool,
    /// Whether `theta` stayed within `pi` of a single central flow.
    pub central_flow_ok: bool,
    /// Raw switch count exceeded the chattering limit.
    pub chattering: bool,
}

impl SwitchingProfile {
    pub fn channel_arcs(&self, channel: Channel) -> impl Iterator<Item = &Arc> {
        self.arcs.iter().filter(move |a| a.channel == channel)
    }
}

fn structure_string<'a>(arcs: impl Iterator<Item = &'a Arc>) -> String {
    arcs.map(|a| if a.kind == ArcKind::Singular { "S" } else { "B" })
        .collect::<Vec<_>>()
        .join("-")
}

impl SwitchingProfile {
    /// Builds a profile from ordered per-channel arcs.
    pub fn from_arcs(arcs: Vec<Arc>, flat_class: bool, c1c3_nonzero: bool, central_flow_ok: bool) -> Self {
        let count = |ch| arcs.iter().filter(|a| a.channel == ch).count().saturating_sub(1);
        let thrust_switches = count(Channel::Thrust);
        let rate_switches = count(Channel::Rate);
        let thrust_structure = structure_string(arcs.iter().filter(|a| a.channel == Channel::Thrust));
        let rate_structure = structure_string(arcs.iter().filter(|a| a.channel == Channel::Rate));
        Self {
            arcs,
            thrust_switches,
            rate_switches,
            thrust_structure,
            rate_structure,
            flat_class,
            c1c3_nonzero,
            central_flow_ok,
            chattering: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructureReport {
    pub thrust_structure: String,
    pub rate_structure: String,
    pub thrust_switches: usize,
    pub rate_switches: usize,
    pub rate_singular_arcs: usize,
    pub rate_bang_arcs: usize,
    /// Adjacent rate arcs that are bangs of opposite sign.
    pub opposite_bang_pairs: usize,
    pub flat_class: bool,
    /// At most 5 thrust switches and 4 rate switches.
    pub theorem_bounds_ok: bool,
    /// Flat class: thrust <= 5 switches, <= 2 singular and <= 3 bang rate
    /// arcs. Non-flat class: thrust <= 2 switches, <= 1 singular and <= 2
    /// bang rate arcs.
    pub class_bounds_ok: bool,
    pub central_flow_ok: bool,
    pub chattering: bool,
}

pub fn classify_profile(profile: &SwitchingProfile) -> StructureReport {
    let rate: Vec<&Arc> = profile.channel_arcs(Channel::Rate).collect();
    let rate_singular_arcs = rate.iter().filter(|a| a.kind == ArcKind::Singular).count();
    let rate_bang_arcs = rate.len() - rate_singular_arcs;
    let opposite_bang_pairs = rate
        .windows(2)
        .filter(|w| {
            matches!(
                (w[0].kind, w[1].kind),
                (ArcKind::BangHigh, ArcKind::BangLow) | (ArcKind::BangLow, ArcKind::BangHigh)
            )
        })
        .count();
    let theorem_bounds_ok = profile.thrust_switches <= 5 && profile.rate_switches <= 4;
    let class_bounds_ok = if profile.flat_class {
        profile.thrust_switches <= 5 && rate_singular_arcs <= 2 && rate_bang_arcs <= 3
    } else {
        profile.thrust_switches <= 2 && rate_singular_arcs <= 1 && rate_bang_arcs <= 2
    };
    StructureReport {
        thrust_structure: profile.thrust_structure.clone(),
        rate_structure: profile.rate_structure.clone(),
        thrust_switches: profile.thrust_switches,
        rate_switches: profile.rate_switches,
        rate_singular_arcs,
        rate_bang_arcs,
        opposite_bang_pairs,
        flat_class: profile.flat_class,
        theorem_bounds_ok: theorem_bounds_ok && !profile.chattering,
        class_bounds_ok: class_bounds_ok && !profile.chattering,
        central_flow_ok: profile.central_flow_ok,
        chattering: profile.chattering,
    }
}

/// Leaves every singular arc after `after` time units with rate `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SingularExit {
    pub after: f64,
    pub direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootOptions {
    pub horizon: f64,
    pub dt: f64,
    pub thrust_bounds: (f64, f64),
    pub singular_tol: f64,
    pub angle_tol: f64,
    pub merge_steps: usize,
    pub max_switches: usize,
    /// Keep every n-th step in the sample series.
    pub record_stride: usize,
    pub singular_exit: Option<SingularExit>,
}

impl ShootOptions {
    pub fn new(horizon: f64, dt: f64, thrust_bounds: (f64, f64)) -> Self {
        Self {
            horizon,
            dt,
            thrust_bounds,
            singular_tol: 1e-6,
            angle_tol: 1e-4,
            merge_steps: 10,
            max_switches: 50,
            record_stride: 1,
            singular_exit: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtremalSample {
    pub t_hat: f64,
    pub state: PlanarState,
    pub u_r: f64,
    pub u_t: f64,
    pub phi_t: f64,
    pub phi_r: f64,
    pub hamiltonian: f64,
    pub singular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extremal {
    pub samples: Vec<ExtremalSample>,
    pub profile: SwitchingProfile,
    /// `max |H(t) - H(0)|` over all recorded samples.
    pub hamiltonian_drift: f64,
    pub initial_hamiltonian: f64,
    /// Largest mismatch between the finite-difference pitch rate and the
    /// singular-rate formula along singular arcs.
    pub singular_rate_error: f64,
    /// Largest `|-p2 cos(theta) + p4 sin(theta)|` along singular arcs.
    pub singular_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum RateMode {
    Bang(f64),
    Singular,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Mode {
    thrust_high: bool,
    rate: RateMode,
}

type Y = [f64; 6];

struct Shooter<'a> {
    cfg: &'a AdjointConfig,
    opts: &'a ShootOptions,
    flow: SingularFlow,
}

impl Shooter<'_> {
    fn controls(&self, t: f64, mode: Mode) -> (f64, f64) {
        let (lo, hi) = self.opts.thrust_bounds;
        let u_t = if mode.thrust_high { hi } else { lo };
        let u_r = match mode.rate {
            RateMode::Bang(s) => s,
            RateMode::Singular => singular_rate(self.cfg, t),
        };
        (u_t, u_r)
    }

    fn rhs(&self, t: f64, y: &Y, mode: Mode) -> Y {
        let (u_t, u_r) = self.controls(t, mode);
        let (s, c) = y[4].sin_cos();
        let (_, p2, _, p4) = adjoint_at(self.cfg, t);
        [y[1], u_t * s, y[3], u_t * c - 1.0, u_r, u_t * (-p2 * c + p4 * s)]
    }

    fn rk4(&self, t: f64, y: &Y, h: f64, mode: Mode) -> Y {
        let add = |a: &Y, b: &Y, k: f64| -> Y { std::array::from_fn(|i| a[i] + k * b[i]) };
        let k1 = self.rhs(t, y, mode);
        let k2 = self.rhs(t + 0.5 * h, &add(y, &k1, 0.5 * h), mode);
        let k3 = self.rhs(t + 0.5 * h, &add(y, &k2, 0.5 * h), mode);
        let k4 = self.rhs(t + h, &add(y, &k3, h), mode);
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }

    fn state(y: &Y) -> PlanarState {
        PlanarState::from_array([y[0], y[1], y[2], y[3], y[4]])
    }

    fn hamiltonian(&self, t: f64, y: &Y, mode: Mode) -> f64 {
        let (u_t, u_r) = self.controls(t, mode);
        hamiltonian(self.cfg, t, &Self::state(y), y[5], &PlanarInput { u_r, u_t })
    }

    fn on_flow(&self, t: f64, y: &Y) -> bool {
        y[5].abs() <= self.opts.singular_tol
            && self.flow.angle_distance(t, y[4]) <= self.opts.angle_tol
            && singular_rate(self.cfg, t).abs() <= 1.0
    }

    /// Moves an entry point inside the detection band exactly onto the
    /// nearest flow branch. The Hamiltonian changes only to second order
    /// because the thrust switching function is stationary there.
    fn snap_to_flow(&self, t: f64, y: &mut Y) {
        let d = y[4] - self.flow.value(t);
        y[4] -= d - PI * (d / PI).round();
        y[5] = 0.0;
    }

    /// Signed event functions for the current mode; an event fires when one
    /// leaves the positive side.
    fn events(&self, t: f64, y: &Y, mode: Mode, armed_flow: bool) -> [f64; 3] {
        let pt = phi_t(self.cfg, t, y[4]);
        let thrust = if mode.thrust_high { pt } else { -pt };
        match mode.rate {
            RateMode::Bang(s) => {
                let g = flow_residual(self.cfg, t, y[4]);
                let flow = if armed_flow { g } else { f64::NAN };
                [thrust, s * y[5], flow]
            }
            RateMode::Singular => [thrust, 1.0 - singular_rate(self.cfg, t).abs(), f64::NAN],
        }
    }
}

fn fired(before: f64, after: f64, is_crossing: bool) -> bool {
    if before.is_nan() || after.is_nan() {
        return false;
    }
    if is_crossing {
        before != 0.0 && before.signum() != after.signum() && after != 0.0 || (before != 0.0 && after == 0.0)
    } else {
        before > 0.0 && after <= 0.0
    }
}

/// Integrates the state and `p5` under the extremal control law with RK4,
/// locating switching instants by bisection inside each step.
pub fn shoot_extremal(cfg: &AdjointConfig, x0: &PlanarState, opts: &ShootOptions) -> Result<Extremal> {
    if !(opts.dt > 0.0) || !(opts.horizon > 0.0) {
        return Err(Error::InvalidArgument("horizon and dt must be positive".into()));
    }
    let (lo, hi) = opts.thrust_bounds;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::InvalidArgument(format!("invalid thrust bounds {:?}", opts.thrust_bounds)));
    }
    if !x0.is_finite() {
        return Err(Error::InvalidArgument("initial state must be finite".into()));
    }
    let sh = Shooter { cfg, opts, flow: singular_flow(cfg, 0) };
    let mut y: Y = [x0.x_hat, x0.x_hat_dot, x0.z_hat, x0.z_hat_dot, x0.theta, cfg.p5_init];
    let mut t = 0.0;

    let pt0 = phi_t(cfg, 0.0, x0.theta);
    let thrust_high = if pt0 != 0.0 {
        pt0 > 0.0
    } else {
        // Look slightly ahead along the thrust-independent direction.
        phi_t(cfg, 1e-9, x0.theta) >= 0.0
    };
    let rate = if sh.on_flow(0.0, &y) {
        RateMode::Singular
    } else if cfg.p5_init != 0.0 {
        RateMode::Bang(cfg.p5_init.signum())
    } else {
        let g = flow_residual(cfg, 0.0, x0.theta);
        RateMode::Bang(if g < 0.0 { -1.0 } else { 1.0 })
    };
    let mut mode = Mode { thrust_high, rate };

    let kind_of = |m: Mode, ch: Channel| match ch {
        Channel::Thrust => {
            if m.thrust_high {
                ArcKind::BangHigh
            } else {
                ArcKind::BangLow
            }
        }
        Channel::Rate => match m.rate {
            RateMode::Bang(s) if s > 0.0 => ArcKind::BangHigh,
            RateMode::Bang(_) => ArcKind::BangLow,
            RateMode::Singular => ArcKind::Singular,
        },
    };
    let mut transitions: Vec<(f64, Channel, ArcKind)> = vec![
        (0.0, Channel::Thrust, kind_of(mode, Channel::Thrust)),
        (0.0, Channel::Rate, kind_of(mode, Channel::Rate)),
    ];

    let h0 = sh.hamiltonian(0.0, &y, mode);
    let mut samples = Vec::new();
    let mut drift: f64 = 0.0;
    let push = |samples: &mut Vec<ExtremalSample>, t: f64, y: &Y, mode: Mode| {
        let (u_t, u_r) = sh.controls(t, mode);
        samples.push(ExtremalSample {
            t_hat: t,
            state: Shooter::state(y),
            u_r,
            u_t,
            phi_t: phi_t(cfg, t, y[4]),
            phi_r: y[5],
            hamiltonian: sh.hamiltonian(t, y, mode),
            singular: mode.rate == RateMode::Singular,
        });
    };
    push(&mut samples, t, &y, mode);

    let cooldown = opts.merge_steps as f64 * opts.dt;
    let mut last_exit = f64::NEG_INFINITY;
    let mut singular_since = if mode.rate == RateMode::Singular { 0.0 } else { f64::NAN };
    let mut raw_switches = 0usize;
    let mut chattering = false;
    let mut step = 0usize;
    let n_steps = (opts.horizon / opts.dt).ceil() as usize;
    let mut prev_singular: Option<(f64, f64)> = None;
    let mut sing_rate_err: f64 = 0.0;
    let mut sing_resid: f64 = 0.0;

    while step < n_steps && !chattering {
        let t_end = ((step + 1) as f64 * opts.dt).min(opts.horizon);
        // Sub-steps within this step, split at events.
        while t < t_end - 1e-15 {
            let mut h = t_end - t;
            if let (RateMode::Singular, Some(ex)) = (mode.rate, opts.singular_exit) {
                let left = singular_since + ex.after - t;
                if left <= 0.0 {
                    mode.rate = RateMode::Bang(ex.direction.signum());
                    last_exit = t;
                    raw_switches += 1;
                    transitions.push((t, Channel::Rate, kind_of(mode, Channel::Rate)));
                    continue;
                }
                h = h.min(left);
            }
            let armed = t - last_exit > cooldown;
            let e0 = sh.events(t, &y, mode, armed);
            let y1 = sh.rk4(t, &y, h, mode);
            let e1 = sh.events(t + h, &y1, mode, armed);
            let hit: Vec<usize> = (0..3).filter(|&i| fired(e0[i], e1[i], i == 2)).collect();
            if hit.is_empty() {
                // A bang arc that starts on the wrong side of p5 (right after
                // leaving a singular arc) is corrected without localization.
                if let RateMode::Bang(s) = mode.rate {
                    if s * y1[5] < -opts.singular_tol {
                        mode.rate = RateMode::Bang(-s);
                        raw_switches += 1;
                        transitions.push((t + h, Channel::Rate, kind_of(mode, Channel::Rate)));
                    }
                }
                y = y1;
                t += h;
                continue;
            }
            // Bisect for the earliest event.
            let (mut a, mut b) = (0.0, h);
            let mut which = hit[0];
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                let ym = sh.rk4(t, &y, m, mode);
                let em = sh.events(t + m, &ym, mode, armed);
                let hm: Vec<usize> = (0..3).filter(|&i| fired(e0[i], em[i], i == 2)).collect();
                if hm.is_empty() {
                    a = m;
                } else {
                    which = hm[0];
                    b = m;
                }
                if b - a <= 1e-15 * (1.0 + t.abs()) {
                    break;
                }
            }
            y = sh.rk4(t, &y, b, mode);
            t += b;
            match (which, mode.rate) {
                (0, _) => {
                    mode.thrust_high = !mode.thrust_high;
                    transitions.push((t, Channel::Thrust, kind_of(mode, Channel::Thrust)));
                }
                (1, RateMode::Bang(s)) => {
                    if sh.on_flow(t, &y) {
                        mode.rate = RateMode::Singular;
                        singular_since = t;
                        sh.snap_to_flow(t, &mut y);
                    } else {
                        mode.rate = RateMode::Bang(-s);
                    }
                    transitions.push((t, Channel::Rate, kind_of(mode, Channel::Rate)));
                }
                (1, RateMode::Singular) => {
                    let ur = singular_rate(cfg, t);
                    mode.rate = RateMode::Bang(ur.signum());
                    last_exit = t;
                    transitions.push((t, Channel::Rate, kind_of(mode, Channel::Rate)));
                }
                (2, _) => {
                    if sh.on_flow(t, &y) {
                        mode.rate = RateMode::Singular;
                        singular_since = t;
                        sh.snap_to_flow(t, &mut y);
                        transitions.push((t, Channel::Rate, kind_of(mode, Channel::Rate)));
                    } else {
                        // Flow crossed away from p5 = 0: nothing switches.
                        last_exit = t - cooldown + 1e-12;
                        continue;
                    }
                }
                _ => unreachable!(),
            }
            raw_switches += 1;
            if raw_switches > opts.max_switches {
                chattering = true;
                break;
            }
        }
        step += 1;
        let h_now = sh.hamiltonian(t, &y, mode);
        drift = drift.max((h_now - h0).abs());
        if mode.rate == RateMode::Singular {
            sing_resid = sing_resid.max(flow_residual(cfg, t, y[4]).abs());
            if let Some((tp, thp)) = prev_singular {
                if t - tp > 0.0 {
                    let fd = (y[4] - thp) / (t - tp);
                    sing_rate_err = sing_rate_err.max((fd - singular_rate(cfg, 0.5 * (t + tp))).abs());
                }
            }
            prev_singular = Some((t, y[4]));
        } else {
            prev_singular = None;
        }
        if step.is_multiple_of(opts.record_stride.max(1)) || step == n_steps {
            push(&mut samples, t, &y, mode);
        }
    }

    let arcs = build_arcs(&transitions, t, opts.merge_steps as f64 * opts.dt);
    let central = central_flow_ok(&sh.flow, &samples);
    let [c1, _, c3, _] = cfg.c;
    let mut profile = SwitchingProfile::from_arcs(arcs, cfg.is_flat(), c1 != 0.0 || c3 != 0.0, central);
    profile.chattering = chattering;
    Ok(Extremal {
        samples,
        profile,
        hamiltonian_drift: drift,
        initial_hamiltonian: h0,
        singular_rate_error: sing_rate_err,
        singular_residual: sing_resid,
    })
}

/// Turns mode transitions into per-channel arcs and absorbs interior arcs
/// shorter than `min_len` into their neighbours.
fn build_arcs(transitions: &[(f64, Channel, ArcKind)], t_final: f64, min_len: f64) -> Vec<Arc> {
    let mut out = Vec::new();
    for ch in [Channel::Thrust, Channel::Rate] {
        let tr: Vec<(f64, ArcKind)> = transitions
            .iter()
            .filter(|x| x.1 == ch)
            .map(|x| (x.0, x.2))
            .collect();
        let mut arcs: Vec<Arc> = tr
            .iter()
            .enumerate()
            .map(|(i, &(t0, kind))| Arc {
                kind,
                channel: ch,
                t_start: t0,
                t_end: tr.get(i + 1).map_or(t_final, |x| x.0),
            })
            .collect();
        loop {
            let n = arcs.len();
            let short = (1..n.saturating_sub(1)).find(|&i| arcs[i].t_end - arcs[i].t_start < min_len);
            match short {
                Some(i) => {
                    let end = arcs[i].t_end;
                    arcs[i - 1].t_end = end;
                    arcs.remove(i);
                }
                None => break,
            }
        }
        // Coalesce neighbours of equal kind, including zero-length leftovers.
        let mut merged: Vec<Arc> = Vec::new();
        for a in arcs {
            match merged.last_mut() {
                Some(last) if last.kind == a.kind => last.t_end = a.t_end,
                Some(last) if last.t_end - last.t_start <= 0.0 => *last = a,
                _ => merged.push(a),
            }
        }
        out.extend(merged);
    }
    out
}

/// Checks for an integer `k` with `|theta - (Theta + k pi)| <= pi` at every
/// sample.
pub fn central_flow_ok(flow: &SingularFlow, samples: &[ExtremalSample]) -> bool {
    let base = SingularFlow { k: 0, ..*flow };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in samples {
        let d = s.state.theta - base.value(s.t_hat);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if !lo.is_finite() {
        return true;
    }
    // Need k with hi - pi <= k pi <= lo + pi.
    let k = ((hi - PI) / PI).ceil();
    k * PI <= lo + PI + 1e-12
}

/// A flat-flow extremal from hover with one pitch-up bang, a singular arc at
/// constant attitude `theta_s` and a final bang. `radius` scales `(c1, c3)`.
/// Returns the configuration and initial state; the singular arc is entered
/// at `t = theta_s`.
pub fn bang_singular_bang_config(theta_s: f64, radius: f64, u_max: f64) -> Result<(AdjointConfig, PlanarState)> {
    if !(theta_s > 0.0 && theta_s < PI / 2.0) || !(radius > 0.0) || !(u_max > 1.0) {
        return Err(Error::InvalidArgument("need 0 < theta_s < pi/2, radius > 0, u_max > 1".into()));
    }
    let (c1, c3) = (radius * theta_s.sin(), radius * theta_s.cos());
    let den = radius * (u_max - theta_s.cos());
    let a = (1.0 + u_max * radius * (theta_s - theta_s.sin())) / den;
    let c = [c1, a * c1, c3, a * c3];
    let x0 = PlanarState::default();
    let p5 = solve_p5(c, &x0, (0.0, u_max), 1.0)?;
    Ok((AdjointConfig::new(c, p5)?, x0))
}
