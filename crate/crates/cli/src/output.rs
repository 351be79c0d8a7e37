//! File emission: JSON reports, trajectory CSV and plot data.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aos_core::model::QuadrotorParams;
use aos_core::solver::{sample_solution, SampleRow, Solution, Waypoint};
use serde::Serialize;

use crate::error::CliError;

pub const CSV_HEADER: &str = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,f1,f2,f3,f4";

/// Formats with 9 significant digits, fixed-point for moderate magnitudes
/// and scientific otherwise, trailing zeros trimmed.
pub fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v.is_nan() { "nan".into() } else if v == 0.0 { "0".into() } else { format!("{v}") };
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        let trimmed = if fixed.contains('.') { fixed.trim_end_matches('0').trim_end_matches('.') } else { &fixed };
        trimmed.to_string()
    } else {
        let m = if mantissa.contains('.') { mantissa.trim_end_matches('0').trim_end_matches('.') } else { mantissa };
        format!("{m}e{exp}")
    }
}

pub fn csv_rows(rows: &[SampleRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.state;
        let fields = std::iter::once(r.t)
            .chain(s.position)
            .chain(s.attitude)
            .chain(s.velocity)
            .chain(r.body_rates)
            .chain(r.rotors.f);
        let line: Vec<String> = fields.map(sig9).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

pub fn write_text(path: PathBuf, text: &str) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: PathBuf, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

#[derive(Debug, Serialize)]
struct WaypointHit {
    index: usize,
    position: [f64; 3],
    tolerance: f64,
    miss: f64,
    hit: bool,
}

/// Writes solution.json, pieces.json and trajectory.csv, plus
/// waypoint_hits.json when `waypoints` is given.
pub fn write_solution(
    dir: &Path,
    sol: &Solution,
    params: &QuadrotorParams,
    sample_dt: f64,
    waypoints: Option<&[Waypoint]>,
) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_json(dir.join("solution.json"), sol)?;
    write_json(dir.join("pieces.json"), &sol.trajectory.to_json())?;
    let rows = sample_solution(sol, sample_dt, params).map_err(|e| CliError::Config(format!("sample_dt: {e}")))?;
    write_text(dir.join("trajectory.csv"), &csv_rows(&rows))?;
    if let Some(wps) = waypoints {
        let hits: Vec<WaypointHit> = wps
            .iter()
            .zip(&sol.waypoint_misses)
            .enumerate()
            .map(|(index, (w, &miss))| WaypointHit {
                index,
                position: w.position,
                tolerance: w.tolerance,
                miss,
                hit: miss <= w.tolerance + 1e-9,
            })
            .collect();
        write_json(dir.join("waypoint_hits.json"), &hits)?;
    }
    Ok(())
}

/// Two-column whitespace-separated numeric text.
pub fn plot_data(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (x, y) in points {
        let _ = writeln!(out, "{} {}", sig9(*x), sig9(*y));
    }
    out
}
