//! Benchmark suites. Cases run in parallel on a pool capped by `AOS_THREADS`.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use aos_core::flatness::{ConstraintModel, DerivativeStack};
use aos_core::model::QuadrotorParams;
use aos_core::oracle::{di_min_time, DiProblem};
use aos_core::solver::{
    robust_aos, solve_double_integrator, solve_two_state, solve_waypoints, timed, PieceBudget, PlanProblem, Solution,
    SolverOptions, Waypoint,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::CliError;
use crate::output::{ensure_dir, plot_data, sig9, write_json, write_text};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    DiGap,
    Horizontal,
    Figure8,
    Random,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::DiGap => "di-gap",
            Suite::Horizontal => "horizontal",
            Suite::Figure8 => "figure8",
            Suite::Random => "random",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub case: String,
    pub planned_s: f64,
    pub reference_s: Option<f64>,
    /// `100 * (planned - reference) / reference`.
    pub gap_pct: Option<f64>,
    pub wall_ms: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub suite: String,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("case,planned_s,reference_s,gap_pct,wall_ms,converged\n");
        let opt = |v: Option<f64>| v.map(sig9).unwrap_or_default();
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.case,
                sig9(r.planned_s),
                opt(r.reference_s),
                opt(r.gap_pct),
                sig9(r.wall_ms),
                r.converged
            ));
        }
        out
    }
}

fn row(case: String, sol: &Solution, reference: Option<f64>, secs: f64) -> BenchRow {
    BenchRow {
        case,
        planned_s: sol.total_time,
        reference_s: reference,
        gap_pct: reference.map(|r| 100.0 * (sol.total_time - r) / r),
        wall_ms: secs * 1e3,
        converged: sol.converged,
    }
}

fn failed(case: String, secs: f64) -> BenchRow {
    BenchRow { case, planned_s: f64::NAN, reference_s: None, gap_pct: None, wall_ms: secs * 1e3, converged: false }
}

/// Planner timings for the horizontal suite, Quad STD, Models S and R.
const HORIZONTAL: [f64; 5] = [3.0, 6.0, 9.0, 12.0, 15.0];
const PUBLISHED_S: [f64; 5] = [0.956, 1.307, 1.573, 1.797, 1.994];
const PUBLISHED_R: [f64; 5] = [1.084, 1.398, 1.657, 1.878, 2.075];

pub const FIGURE8_GAMMAS: [f64; 4] = [4.0, 8.0, 12.0, 16.0];

/// Seven waypoints in units of `gamma`, flown from and back to the origin.
pub fn figure8_waypoints(gamma: f64, tolerance: f64) -> Vec<Waypoint> {
    [(1.0, 1.0), (2.0, 0.0), (1.0, -1.0), (0.0, 0.0), (-1.0, 1.0), (-2.0, 0.0), (-1.0, -1.0)]
        .iter()
        .map(|&(x, y)| Waypoint { position: [gamma * x, gamma * y, 0.0], tolerance, yaw: None })
        .collect()
}

/// Random start/end states: start at the origin, end on a 5 m grid, tilt
/// up to a quarter turn in roll and pitch, velocity components up to 10 m/s.
pub fn random_problems(seed: u64, count: usize) -> Vec<PlanProblem> {
    use rand::{Rng, SeedableRng};
    let params = QuadrotorParams::quad_std();
    let g = params.gravity;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let state = |pos: [f64; 3], rng: &mut rand_chacha::ChaCha8Rng| {
        let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..10.0));
        let att = (rng.gen_range(0.0..FRAC_PI_2), rng.gen_range(0.0..FRAC_PI_2), 0.0);
        DerivativeStack::with_attitude(pos, v, att, g, g, 4)
    };
    (0..count)
        .map(|_| {
            let end = [
                5.0 * rng.gen_range(-2..=2) as f64,
                5.0 * rng.gen_range(-2..=2) as f64,
                5.0 * rng.gen_range(-1..=1) as f64,
            ];
            let mut p = PlanProblem::rest_to_rest(params, ConstraintModel::R, [0.0; 3], end);
            p.start = state([0.0; 3], &mut rng);
            p.end = state(end, &mut rng);
            p.n_se = 2;
            p
        })
        .collect()
}

fn pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("AOS_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("AOS_THREADS: expected a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| CliError::Config(format!("AOS_THREADS: {e}")))
}

pub fn run(suite: Suite, seed: u64, out: &Path) -> Result<BenchReport, CliError> {
    let opts = SolverOptions::default();
    let pool = pool()?;
    let rows: Vec<BenchRow> = pool.install(|| match suite {
        Suite::DiGap => {
            let di = DiProblem { x0: -2.0, v0: 0.0, xf: 0.0, vf: 0.0, u_max: 1.0 };
            let opt = di_min_time(&di).t_star;
            (1..=12usize)
                .into_par_iter()
                .map(|n| {
                    let (r, secs) = timed(|| solve_double_integrator(&di, n, &opts));
                    match r {
                        Ok(sol) => row(format!("N{n}"), &sol, Some(opt), secs),
                        Err(_) => failed(format!("N{n}"), secs),
                    }
                })
                .collect()
        }
        Suite::Horizontal => {
            let cases: Vec<(ConstraintModel, usize)> = [ConstraintModel::S, ConstraintModel::R]
                .iter()
                .flat_map(|&m| (0..HORIZONTAL.len()).map(move |i| (m, i)))
                .collect();
            cases
                .into_par_iter()
                .map(|(model, i)| {
                    let d = HORIZONTAL[i];
                    let reference = match model {
                        ConstraintModel::S => PUBLISHED_S[i],
                        ConstraintModel::R => PUBLISHED_R[i],
                    };
                    let p = PlanProblem::rest_to_rest(QuadrotorParams::quad_std(), model, [0.0; 3], [d, 0.0, 0.0]);
                    let case = format!("{model:?}-{d}m");
                    let (r, secs) = timed(|| solve_two_state(&p, 5, &opts));
                    match r {
                        Ok(sol) => row(case, &sol, Some(reference), secs),
                        Err(_) => failed(case, secs),
                    }
                })
                .collect()
        }
        Suite::Figure8 => FIGURE8_GAMMAS
            .par_iter()
            .map(|&gamma| {
                let mut p = PlanProblem::rest_to_rest(QuadrotorParams::quad_std(), ConstraintModel::R, [0.0; 3], [0.0; 3]);
                p.waypoints = figure8_waypoints(gamma, 0.3);
                p.pieces = PieceBudget::Auto;
                let case = format!("gamma{gamma}");
                let (r, secs) = timed(|| solve_waypoints(&p, &opts));
                match r {
                    Ok(sol) => row(case, &sol, None, secs),
                    Err(_) => failed(case, secs),
                }
            })
            .collect(),
        Suite::Random => random_problems(seed, 100)
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let case = format!("random{i:03}");
                let (r, secs) = timed(|| robust_aos(p, &opts));
                match r {
                    Ok(sol) => row(case, &sol, None, secs),
                    Err(_) => failed(case, secs),
                }
            })
            .collect(),
    });
    let report = BenchReport { suite: suite.name().into(), rows };
    ensure_dir(out)?;
    write_text(out.join(format!("bench_{}.csv", suite.name())), &report.csv())?;
    write_json(out.join(format!("bench_{}.json", suite.name())), &report)?;
    for (name, points) in plot_series(suite, &report) {
        write_text(out.join(format!("{name}.dat")), &plot_data(&points))?;
    }
    Ok(report)
}

/// Curves for plotting, one two-column file each.
fn plot_series(suite: Suite, report: &BenchReport) -> Vec<(String, Vec<(f64, f64)>)> {
    let rows = &report.rows;
    match suite {
        Suite::DiGap => vec![(
            "di_gap_vs_pieces".into(),
            rows.iter().enumerate().map(|(i, r)| ((i + 1) as f64, r.gap_pct.unwrap_or(f64::NAN))).collect(),
        )],
        Suite::Horizontal => {
            let mut out = Vec::new();
            for (k, model) in ["S", "R"].iter().enumerate() {
                let part = &rows[k * HORIZONTAL.len()..(k + 1) * HORIZONTAL.len()];
                out.push((
                    format!("horizontal_{model}_planned"),
                    HORIZONTAL.iter().zip(part).map(|(&d, r)| (d, r.planned_s)).collect(),
                ));
                out.push((
                    format!("horizontal_{model}_reference"),
                    HORIZONTAL.iter().zip(part).map(|(&d, r)| (d, r.reference_s.unwrap_or(f64::NAN))).collect(),
                ));
            }
            out
        }
        Suite::Figure8 => vec![
            ("figure8_time_vs_gamma".into(), FIGURE8_GAMMAS.iter().zip(rows).map(|(&g, r)| (g, r.planned_s)).collect()),
            ("figure8_wall_vs_gamma".into(), FIGURE8_GAMMAS.iter().zip(rows).map(|(&g, r)| (g, r.wall_ms)).collect()),
        ],
        Suite::Random => {
            let mut times: Vec<f64> = rows.iter().filter(|r| r.converged).map(|r| r.planned_s).collect();
            times.sort_by(f64::total_cmp);
            let n = times.len().max(1) as f64;
            vec![(
                "random_time_cdf".into(),
                times.iter().enumerate().map(|(i, &t)| (t, (i + 1) as f64 / n)).collect(),
            )]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_leaves_missing_reference_empty() {
        let report = BenchReport {
            suite: "x".into(),
            rows: vec![BenchRow {
                case: "a".into(),
                planned_s: 1.5,
                reference_s: None,
                gap_pct: None,
                wall_ms: 12.0,
                converged: true,
            }],
        };
        assert_eq!(report.csv().lines().nth(1).unwrap(), "a,1.5,,,12,true");
    }

    #[test]
    fn random_problems_are_reproducible() {
        let a = random_problems(3, 5);
        let b = random_problems(3, 5);
        assert_eq!(a, b);
        assert_ne!(a, random_problems(4, 5));
        for p in &a {
            let end = p.end.derivs[0];
            assert!(end[..3].iter().all(|v| (v / 5.0).fract() == 0.0));
        }
    }

    #[test]
    fn figure8_layout() {
        let w = figure8_waypoints(4.0, 0.3);
        assert_eq!(w.len(), 7);
        assert_eq!(w[1].position, [8.0, 0.0, 0.0]);
        assert_eq!(w[6].position, [-4.0, -4.0, 0.0]);
    }
}
