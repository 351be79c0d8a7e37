//! Strict JSON configuration for `plan`, `race` and `analyze`.

use std::path::Path;

use aos_core::flatness::{ConstraintModel, DerivativeStack};
use aos_core::model::{PlanarState, QuadrotorParams};
use aos_core::solver::{PieceBudget, PlanProblem, SolverOptions, Waypoint};
use serde::de::{self, Deserializer};
use serde::Deserialize;

use crate::error::CliError;

/// A preset name (`"std"`, `"rpg"`, ...) or an inline parameter block.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum Vehicle {
    Preset(String),
    Inline(QuadrotorParams),
}

impl Vehicle {
    pub fn params(&self) -> Result<QuadrotorParams, CliError> {
        let p = match self {
            Vehicle::Preset(name) => QuadrotorParams::preset(name)
                .ok_or_else(|| CliError::Config(format!("vehicle: unknown preset `{name}`")))?,
            Vehicle::Inline(p) => *p,
        };
        p.validate().map_err(|e| CliError::Config(format!("vehicle: {e}")))?;
        Ok(p)
    }
}

impl Default for Vehicle {
    fn default() -> Self {
        Vehicle::Preset("std".into())
    }
}

/// Boundary state. Unspecified derivatives are zero.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub position: [f64; 3],
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub acceleration: [f64; 3],
    #[serde(default)]
    pub jerk: [f64; 3],
    #[serde(default)]
    pub yaw: f64,
}

impl Boundary {
    fn stack(&self, rows: usize) -> DerivativeStack {
        let mut derivs = vec![[0.0; 4]; rows];
        let cols = [self.position, self.velocity, self.acceleration, self.jerk];
        for (row, v) in derivs.iter_mut().zip(cols) {
            row[..3].copy_from_slice(&v);
        }
        derivs[0][3] = self.yaw;
        DerivativeStack::new(derivs).expect("at least three rows")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pieces {
    #[default]
    Auto,
    Fixed(usize),
}

impl<'de> Deserialize<'de> for Pieces {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(usize),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(0) => Err(de::Error::custom("pieces must be positive")),
            Raw::Count(n) => Ok(Pieces::Fixed(n)),
            Raw::Word(w) if w == "auto" => Ok(Pieces::Auto),
            Raw::Word(w) => Err(de::Error::custom(format!("pieces must be a positive integer or \"auto\", got \"{w}\""))),
        }
    }
}

impl std::str::FromStr for Pieces {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(Pieces::Auto),
            _ => match s.parse::<usize>() {
                Ok(n) if n > 0 => Ok(Pieces::Fixed(n)),
                _ => Err(format!("expected a positive integer or `auto`, got `{s}`")),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
pub enum Model {
    S,
    R,
}

impl From<Model> for ConstraintModel {
    fn from(m: Model) -> Self {
        match m {
            Model::S => ConstraintModel::S,
            Model::R => ConstraintModel::R,
        }
    }
}

/// Optional solver overrides.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub feas_tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub quad_nodes: Option<usize>,
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default)]
    pub vehicle: Vehicle,
    pub model: Model,
    pub start: Boundary,
    pub end: Boundary,
    #[serde(default)]
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub pieces: Pieces,
    #[serde(default)]
    pub n_se: usize,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    #[serde(default)]
    pub solver: SolverConfig,
}

fn default_sample_dt() -> f64 {
    0.01
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl PlanConfig {
    pub fn problem(&self) -> Result<PlanProblem, CliError> {
        let params = self.vehicle.params()?;
        let model: ConstraintModel = self.model.into();
        let rows = model.order();
        if self.n_se > 2 {
            return Err(CliError::Config(format!("n_se: must be 0, 1 or 2, got {}", self.n_se)));
        }
        if !(self.sample_dt > 0.0) || !self.sample_dt.is_finite() {
            return Err(CliError::Config(format!("sample_dt: must be positive, got {}", self.sample_dt)));
        }
        for (i, w) in self.waypoints.iter().enumerate() {
            if !(w.tolerance >= 0.0) {
                return Err(CliError::Config(format!("waypoints[{i}].tolerance: must be >= 0, got {}", w.tolerance)));
            }
        }
        let problem = PlanProblem {
            model,
            params,
            start: self.start.stack(rows),
            end: self.end.stack(rows),
            waypoints: self.waypoints.clone(),
            pieces: match self.pieces {
                Pieces::Auto => PieceBudget::Auto,
                Pieces::Fixed(n) => PieceBudget::Fixed(n),
            },
            n_se: self.n_se,
        };
        problem.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(problem)
    }

    pub fn options(&self) -> Result<SolverOptions, CliError> {
        let mut opts = SolverOptions::default();
        let s = &self.solver;
        if let Some(v) = s.feas_tol {
            if !(v > 0.0) {
                return Err(CliError::Config(format!("solver.feas_tol: must be positive, got {v}")));
            }
            opts.feas_tol = v;
        }
        if let Some(v) = s.max_iters {
            opts.lbfgs.max_iters = v.max(1);
        }
        if let Some(v) = s.quad_nodes {
            if v < 2 {
                return Err(CliError::Config(format!("solver.quad_nodes: need at least 2, got {v}")));
            }
            opts.quad_nodes = v;
        }
        if let Some(w) = &s.weights {
            if w.is_empty() || w.iter().any(|v| !(*v > 0.0)) {
                return Err(CliError::Config("solver.weights: need a non-empty list of positive values".into()));
            }
            opts.weights = w.clone();
        }
        Ok(opts)
    }
}

/// `p5(0)` given directly or solved from a zero Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum P5Init {
    Value(f64),
    Solve,
}

impl<'de> Deserialize<'de> for P5Init {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Value(f64),
            Word(String),
        }
        match Raw::deserialize(d)? {
            Raw::Value(v) => Ok(P5Init::Value(v)),
            Raw::Word(w) if w == "solve" => Ok(P5Init::Solve),
            Raw::Word(w) => Err(de::Error::custom(format!("p5_init must be a number or \"solve\", got \"{w}\""))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub c: [f64; 4],
    pub p5_init: P5Init,
    #[serde(default)]
    pub x0: PlanarState,
    pub horizon: f64,
    pub dt: f64,
    /// Initial rate bang used when solving for `p5(0)`.
    #[serde(default = "default_rate_sign")]
    pub rate_sign: f64,
    #[serde(default)]
    pub vehicle: Vehicle,
    /// Keep every n-th integration step in the CSV.
    #[serde(default = "default_stride")]
    pub record_stride: usize,
}

fn default_rate_sign() -> f64 {
    1.0
}

fn default_stride() -> usize {
    100
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<PlanConfig, serde_json::Error> {
        serde_json::from_str(s)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse(r#"{"model": "R", "start": {"position": [0,0,0]}, "end": {"position": [3,0,0]}}"#).unwrap();
        assert_eq!(c.vehicle, Vehicle::Preset("std".into()));
        assert_eq!(c.pieces, Pieces::Auto);
        assert_eq!(c.sample_dt, 0.01);
        let p = c.problem().unwrap();
        assert_eq!(p.start.derivs.len(), 4);
        assert_eq!(p.end.derivs[0], [3.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_keys_are_named() {
        let e = parse(r#"{"model": "R", "start": {"position": [0,0,0], "speed": 1}, "end": {"position": [3,0,0]}}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("speed"), "{e}");
        let e = parse(r#"{"model": "R", "start": {"position": [0,0,0]}, "end": {"position": [3,0,0]}, "foo": 1}"#)
            .unwrap_err()
            .to_string();
        assert!(e.contains("foo"), "{e}");
    }

    #[test]
    fn pieces_forms() {
        let base = r#""model": "S", "start": {"position": [0,0,0]}, "end": {"position": [1,0,0]}"#;
        assert_eq!(parse(&format!("{{{base}, \"pieces\": 4}}")).unwrap().pieces, Pieces::Fixed(4));
        assert_eq!(parse(&format!("{{{base}, \"pieces\": \"auto\"}}")).unwrap().pieces, Pieces::Auto);
        assert!(parse(&format!("{{{base}, \"pieces\": 0}}")).is_err());
        assert!(parse(&format!("{{{base}, \"pieces\": \"many\"}}")).is_err());
        assert_eq!("7".parse::<Pieces>().unwrap(), Pieces::Fixed(7));
        assert!("0".parse::<Pieces>().is_err());
    }

    #[test]
    fn inline_vehicle_and_bad_preset() {
        let inline = r#"{"mass": 0.85, "arm_length": 0.15, "inertia_diag": [0.001, 0.001, 0.0017],
            "rotor_thrust_min": 0.0, "rotor_thrust_max": 8.5, "torque_constant": 0.05, "body_rate_max": [10, 10, 4]}"#;
        let v: Vehicle = serde_json::from_str(inline).unwrap();
        assert!(matches!(v, Vehicle::Inline(_)));
        let bad = Vehicle::Preset("nope".into());
        assert!(matches!(bad.params(), Err(CliError::Config(m)) if m.contains("nope")));
    }

    #[test]
    fn analyze_p5_forms() {
        let a: AnalyzeConfig = serde_json::from_str(r#"{"c": [0,1,0,1], "p5_init": "solve", "horizon": 2, "dt": 0.001}"#).unwrap();
        assert_eq!(a.p5_init, P5Init::Solve);
        let a: AnalyzeConfig = serde_json::from_str(r#"{"c": [0,1,0,1], "p5_init": 0.5, "horizon": 2, "dt": 0.001}"#).unwrap();
        assert_eq!(a.p5_init, P5Init::Value(0.5));
    }
}
