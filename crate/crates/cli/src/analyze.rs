//! Extremal shooting and structure report for one adjoint configuration.

use std::path::Path;

use aos_core::pmp::{
    classify_profile, shoot_extremal, singular_flow, solve_p5, AdjointConfig, Arc, ShootOptions, StructureReport,
};
use serde::Serialize;

use crate::config::{AnalyzeConfig, P5Init};
use crate::error::CliError;
use crate::output::{ensure_dir, sig9, write_json, write_text};

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub c: [f64; 4],
    pub p5_init: f64,
    pub is_flat: bool,
    pub flatness_gap: f64,
    /// Flow angle at `t = 0` on branches `k = 0` and `k = 1`.
    pub flow_angles: [f64; 2],
    pub initial_hamiltonian: f64,
    /// `|H(0)| <= 1e-9`.
    pub h_consistent: bool,
    pub hamiltonian_drift: f64,
    pub singular_residual: f64,
    pub singular_rate_error: f64,
    pub arcs: Vec<Arc>,
    pub structure: StructureReport,
}

const CSV_HEADER: &str = "t_hat,x_hat,x_hat_dot,z_hat,z_hat_dot,theta,u_r,u_t,phi_t,phi_r,hamiltonian,flow_k0,flow_k1";

pub fn run(cfg: &AnalyzeConfig, out: &Path) -> Result<AnalyzeReport, CliError> {
    let params = cfg.vehicle.params()?;
    let bounds = params.planar_bounds();
    if !(cfg.horizon > 0.0) || !(cfg.dt > 0.0) || cfg.dt > cfg.horizon {
        return Err(CliError::Config(format!("horizon/dt: need 0 < dt <= horizon, got {} and {}", cfg.dt, cfg.horizon)));
    }
    let p5 = match cfg.p5_init {
        P5Init::Value(v) => v,
        P5Init::Solve => {
            solve_p5(cfg.c, &cfg.x0, bounds, cfg.rate_sign).map_err(|e| CliError::Config(format!("p5_init: {e}")))?
        }
    };
    let adj = AdjointConfig::new(cfg.c, p5).map_err(|e| CliError::Config(format!("c: {e}")))?;
    let mut opts = ShootOptions::new(cfg.horizon, cfg.dt, bounds);
    opts.record_stride = cfg.record_stride.max(1);
    let ex = shoot_extremal(&adj, &cfg.x0, &opts).map_err(|e| CliError::Config(e.to_string()))?;

    let flow = singular_flow(&adj, 0);
    let flow1 = singular_flow(&adj, 1);
    let report = AnalyzeReport {
        c: cfg.c,
        p5_init: p5,
        is_flat: adj.is_flat(),
        flatness_gap: adj.flatness_gap(),
        flow_angles: [flow.value(0.0), flow1.value(0.0)],
        initial_hamiltonian: ex.initial_hamiltonian,
        h_consistent: ex.initial_hamiltonian.abs() <= 1e-9,
        hamiltonian_drift: ex.hamiltonian_drift,
        singular_residual: ex.singular_residual,
        singular_rate_error: ex.singular_rate_error,
        arcs: ex.profile.arcs.clone(),
        structure: classify_profile(&ex.profile),
    };

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for s in &ex.samples {
        let st = s.state;
        let vals = [
            s.t_hat,
            st.x_hat,
            st.x_hat_dot,
            st.z_hat,
            st.z_hat_dot,
            st.theta,
            s.u_r,
            s.u_t,
            s.phi_t,
            s.phi_r,
            s.hamiltonian,
            flow.value(s.t_hat),
            flow1.value(s.t_hat),
        ];
        csv.push_str(&vals.map(sig9).join(","));
        csv.push('\n');
    }
    ensure_dir(out)?;
    write_json(out.join("analysis.json"), &report)?;
    write_text(out.join("extremal.csv"), &csv)?;
    Ok(report)
}
