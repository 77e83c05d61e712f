use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::graph::{ScalarField, WeightedGraph};

use super::integrate::{at_step, rk4_step, NlseConfig, OdeState, OdeSystem};
use super::rhs::{project_perp, NlseField};

/// Long-time limit of the NSE flow, taken on the U(1) quotient: the state is
/// stationary once `‖P⊥_ψ F(ψ)‖_∞ ≤ steady_tol` (a residual global phase
/// rotation is allowed).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub psi_inf: ScalarField,
    pub t_reached: f64,
    pub residual: f64,
    pub converged: bool,
    pub steps: usize,
}

/// `‖P⊥_ψ F(ψ)‖_∞` for an already-evaluated `F(ψ)`.
pub fn stationarity_residual(psi: &ScalarField, f: &ScalarField) -> Result<f64> {
    Ok(project_perp(&psi.0, &f.0)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

pub fn solve_steady_state(g: &WeightedGraph, psi0: &ScalarField, config: &NlseConfig) -> Result<SteadyState> {
    config.validate()?;
    check_dim(g.n_vertices(), psi0.len())?;
    if (psi0.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidInput(format!("psi0 must be unit norm, got {}", psi0.norm())));
    }
    let field = NlseField::new(g, psi0, config.gamma)?;
    let steps_max = config.n_steps();
    let mut psi = psi0.clone();
    let mut step = 0;
    loop {
        let t = step as f64 * config.dt;
        let f = field.rhs(&psi)?;
        let residual = stationarity_residual(&psi, &f)?;
        if residual <= config.steady_tol {
            return Ok(SteadyState { psi_inf: psi, t_reached: t, residual, converged: true, steps: step });
        }
        if step >= steps_max {
            return Ok(SteadyState { psi_inf: psi, t_reached: t, residual, converged: false, steps: step });
        }
        step += 1;
        let mut next = rk4_step(&field, &psi, config.dt, Some(f)).map_err(|e| at_step(e, step, t + config.dt))?;
        if !next.all_finite() {
            return Err(Error::Divergence { step, t: step as f64 * config.dt });
        }
        field.renormalize(&mut next, config.renorm_tol);
        psi = next;
    }
}
