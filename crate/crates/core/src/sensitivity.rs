//! Derivatives of the NSE steady state with respect to edge weights and to
//! the initial data, by implicit differentiation of the stationarity
//! condition `G(ψ) = P⊥_ψ F(ψ) = 0`.
//!
//! Realified vectors interleave `(re, im)` per vertex, matching
//! [`ScalarField::to_real_vec`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{align_phase, project_perp, solve_steady_state, stationarity_residual, NlseConfig, NlseField, SteadyState};
use crate::error::{check_dim, Error, Result};
use crate::graph::{Edge, ScalarField, WeightedGraph};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Ratio `σ_min / σ_max` of the bordered Jacobian below which the steady
/// state is treated as non-isolated.
pub const SINGULAR_RATIO: f64 = 1e-12;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Implicit,
    FiniteDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensitivityResult {
    /// Realified `∂ψ∞/∂p`, length `2N`.
    pub d_psi_inf: Vec<f64>,
    pub method: Method,
    pub condition_estimate: f64,
    /// Relative L² discrepancy against the FD oracle, when the cross-check ran.
    pub fd_discrepancy: Option<f64>,
}

impl SensitivityResult {
    pub fn as_field(&self) -> ScalarField {
        ScalarField::from_real_vec(&self.d_psi_inf)
    }

    pub fn norm(&self) -> f64 {
        self.d_psi_inf.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `Im⟨ψ, δ⟩`, the component along the gauge direction `iψ`.
    pub fn gauge_component(&self, psi: &ScalarField) -> f64 {
        psi.inner(&self.as_field()).im
    }
}

/// A differentiable parameter of the steady state.
#[derive(Debug, Clone, PartialEq)]
pub enum Parameter {
    Weight(Edge),
    /// Direction in ψ⁰-space, tangent to the unit sphere at ψ⁰.
    InitialData(ScalarField),
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or `0` when both vanish.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `A(ψ) = -iHψ - γD(ψ)`, so that `G = P⊥_ψ A`.
fn driving(field: &NlseField, psi: &[Complex64]) -> Vec<Complex64> {
    let (ham, diss) = field.parts(psi);
    ham.iter().zip(&diss).map(|(h, d)| h - d * field.gamma).collect()
}

/// Stationarity map `G(ψ) = P⊥_ψ F(ψ)`.
pub fn stationarity_map(field: &NlseField, psi: &ScalarField) -> Result<ScalarField> {
    check_dim(field.graph.n_vertices(), psi.len())?;
    Ok(ScalarField(project_perp(&psi.0, &driving(field, &psi.0))?))
}

/// Realified Jacobian `∂G/∂ψ` at `psi`, assembled column by column from the
/// directional derivatives along `e_k` and `i e_k`.
pub fn stationarity_jacobian(field: &NlseField, psi: &ScalarField) -> Result<DMatrix<f64>> {
    let n = psi.len();
    check_dim(field.graph.n_vertices(), n)?;
    let p = &psi.0;
    let nn = psi.norm_sqr();
    if !(nn > 0.0) {
        return Err(Error::SingularProjector);
    }
    let a = driving(field, p);
    let c = psi.inner(&ScalarField(a.clone())) / nn;
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    let mut delta = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        for (part, unit) in [Complex64::new(1.0, 0.0), I].into_iter().enumerate() {
            delta[k] = unit;
            let lap = crate::graph::laplacian_generic(field.graph, &delta);
            // dA = -i(Lδ + Vδ) - γ(Lδ + (|ψ|² - V)δ + 2Re(ψ̄δ)ψ); δ is supported on k.
            let mut da: Vec<Complex64> = lap.iter().map(|l| -I * l - l * field.gamma).collect();
            let v = field.potential[k];
            let re = 2.0 * (p[k].conj() * unit).re;
            da[k] += -I * unit * v - field.gamma * (unit * (p[k].norm_sqr() - v) + p[k] * re);
            let mut col = project_perp(p, &da)?;
            let delta_a = unit.conj() * a[k];
            let re_pd = (p[k].conj() * unit).re;
            let coef = (delta_a - c * (2.0 * re_pd)) / nn;
            col[k] -= unit * c;
            for (x, pj) in col.iter_mut().zip(p) {
                *x -= pj * coef;
            }
            for (j, z) in col.iter().enumerate() {
                jac[(2 * j, 2 * k + part)] = z.re;
                jac[(2 * j + 1, 2 * k + part)] = z.im;
            }
            delta[k] = Complex64::new(0.0, 0.0);
        }
    }
    Ok(jac)
}

/// Pseudo-inverse of the stationarity Jacobian bordered with the two rows
/// `Re⟨ψ, δ⟩ = 0` (unit sphere) and `Im⟨ψ, δ⟩ = 0` (phase fixing).
#[derive(Debug, Clone)]
pub struct SteadyJacobian {
    pinv: DMatrix<f64>,
    condition: f64,
}

impl SteadyJacobian {
    pub fn new(field: &NlseField, psi: &ScalarField) -> Result<Self> {
        let n = psi.len();
        let jac = stationarity_jacobian(field, psi)?;
        let mut m = DMatrix::zeros(2 * n + 2, 2 * n);
        m.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&jac);
        for (k, z) in psi.0.iter().enumerate() {
            m[(2 * n, 2 * k)] = z.re;
            m[(2 * n, 2 * k + 1)] = z.im;
            m[(2 * n + 1, 2 * k)] = -z.im;
            m[(2 * n + 1, 2 * k + 1)] = z.re;
        }
        let svd = m.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(smin > SINGULAR_RATIO * smax) {
            return Err(Error::NonIsolatedSteadyState { cond: condition });
        }
        let pinv = svd.pseudo_inverse(0.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(SteadyJacobian { pinv, condition })
    }

    pub fn condition_estimate(&self) -> f64 {
        self.condition
    }

    fn n2(&self) -> usize {
        self.pinv.nrows()
    }

    /// `δψ` solving `J δψ = -dg` on the constraint surface.
    pub fn solve(&self, dg: &[Complex64]) -> Vec<f64> {
        let n2 = self.n2();
        let mut rhs = DVector::zeros(n2 + 2);
        for (k, z) in dg.iter().enumerate() {
            rhs[2 * k] = -z.re;
            rhs[2 * k + 1] = -z.im;
        }
        (&self.pinv * rhs).iter().copied().collect()
    }

    /// Adjoint vector `λ` such that `∇ℓ · δψ = -Σ λ_i dg_i` for every
    /// parameter derivative `dg` of `G`.
    pub fn adjoint(&self, grad: &[f64]) -> Vec<f64> {
        let g = DVector::from_column_slice(grad);
        let lam = self.pinv.transpose() * g;
        lam.iter().take(self.n2()).copied().collect()
    }
}

/// `∂G/∂w(e)` at `psi`: `P⊥_ψ((-i - γ) L_e ψ)`.
pub fn dg_dw(field: &NlseField, psi: &ScalarField, e: Edge) -> Result<Vec<Complex64>> {
    let n = psi.len();
    if e.hi >= n {
        return Err(Error::MissingEdge(e.lo, e.hi));
    }
    let mut a = vec![Complex64::new(0.0, 0.0); n];
    let d = psi.0[e.lo] - psi.0[e.hi];
    let s = -I - field.gamma;
    a[e.lo] = s * d;
    a[e.hi] = -s * d;
    project_perp(&psi.0, &a)
}

/// `∂G` along a ψ⁰ direction `d`: the potential moves by `2Re(ψ̄⁰ d)`.
pub fn dg_dpsi0(field: &NlseField, psi: &ScalarField, psi0: &ScalarField, d: &ScalarField) -> Result<Vec<Complex64>> {
    let a: Vec<Complex64> = psi
        .0
        .iter()
        .zip(&psi0.0)
        .zip(&d.0)
        .map(|((p, q), dq)| {
            let dv = 2.0 * (q.conj() * dq).re;
            (-I + field.gamma) * dv * p
        })
        .collect();
    project_perp(&psi.0, &a)
}

fn require_converged(steady: &SteadyState) -> Result<()> {
    if !steady.converged {
        return Err(Error::NotConverged { residual: steady.residual, t: steady.t_reached });
    }
    Ok(())
}

/// Implicit `∂ψ∞/∂w(e)`.
pub fn dpsi_dw(g: &WeightedGraph, psi0: &ScalarField, steady: &SteadyState, e: Edge, gamma: f64) -> Result<SensitivityResult> {
    require_converged(steady)?;
    if g.edge_index(e).is_none() {
        return Err(Error::MissingEdge(e.lo, e.hi));
    }
    let field = NlseField::new(g, psi0, gamma)?;
    let jac = SteadyJacobian::new(&field, &steady.psi_inf)?;
    let dg = dg_dw(&field, &steady.psi_inf, e)?;
    Ok(SensitivityResult {
        d_psi_inf: jac.solve(&dg),
        method: Method::Implicit,
        condition_estimate: jac.condition_estimate(),
        fd_discrepancy: None,
    })
}

/// Implicit derivatives for every edge, sharing one factorisation.
pub fn dpsi_dw_all(
    g: &WeightedGraph,
    psi0: &ScalarField,
    steady: &SteadyState,
    gamma: f64,
) -> Result<Vec<(Edge, SensitivityResult)>> {
    require_converged(steady)?;
    if g.n_edges() == 0 {
        return Ok(Vec::new());
    }
    let field = NlseField::new(g, psi0, gamma)?;
    let jac = SteadyJacobian::new(&field, &steady.psi_inf)?;
    g.edges()
        .iter()
        .map(|&e| {
            let dg = dg_dw(&field, &steady.psi_inf, e)?;
            Ok((
                e,
                SensitivityResult {
                    d_psi_inf: jac.solve(&dg),
                    method: Method::Implicit,
                    condition_estimate: jac.condition_estimate(),
                    fd_discrepancy: None,
                },
            ))
        })
        .collect()
}

/// Largest `|Re⟨ψ⁰, d⟩|` accepted for a ψ⁰ direction.
pub const TANGENT_TOL: f64 = 1e-10;

/// Implicit directional derivative of `ψ∞` in ψ⁰ through the potential
/// `|ψ⁰|²` at the fixed point.
pub fn dpsi_dpsi0(
    g: &WeightedGraph,
    psi0: &ScalarField,
    steady: &SteadyState,
    direction: &ScalarField,
    gamma: f64,
) -> Result<SensitivityResult> {
    require_converged(steady)?;
    check_dim(psi0.len(), direction.len())?;
    let tangent = psi0.inner(direction).re;
    if tangent.abs() > TANGENT_TOL {
        return Err(Error::InvalidInput(format!("direction is not tangent to the sphere at psi0 (Re<psi0,d> = {tangent})")));
    }
    let field = NlseField::new(g, psi0, gamma)?;
    let jac = SteadyJacobian::new(&field, &steady.psi_inf)?;
    let dg = dg_dpsi0(&field, &steady.psi_inf, psi0, direction)?;
    Ok(SensitivityResult {
        d_psi_inf: jac.solve(&dg),
        method: Method::Implicit,
        condition_estimate: jac.condition_estimate(),
        fd_discrepancy: None,
    })
}

/// Newton iterations on `G(ψ) = 0` from a converged RK4 steady state, driving
/// the stationarity residual to round-off.
pub fn refine_steady_state(g: &WeightedGraph, psi0: &ScalarField, steady: &SteadyState, gamma: f64) -> Result<SteadyState> {
    let field = NlseField::new(g, psi0, gamma)?;
    let residual_of = |psi: &ScalarField| -> Result<f64> {
        let f = field.eval(&psi.0)?;
        stationarity_residual(psi, &ScalarField(f))
    };
    let mut best = steady.clone();
    best.residual = residual_of(&best.psi_inf)?;
    let mut psi = best.psi_inf.clone();
    for _ in 0..8 {
        if best.residual < 1e-14 {
            break;
        }
        let jac = SteadyJacobian::new(&field, &psi)?;
        let gval = stationarity_map(&field, &psi)?;
        let step = ScalarField::from_real_vec(&jac.solve(&gval.0));
        let next = ScalarField(psi.0.iter().zip(&step.0).map(|(a, b)| a + b).collect()).normalized()?;
        let r = residual_of(&next)?;
        if !(r < best.residual) {
            break;
        }
        best.psi_inf = next.clone();
        best.residual = r;
        psi = next;
    }
    Ok(best)
}

/// Solves and refines the steady state from `psi0`.
pub fn solve_refined(g: &WeightedGraph, psi0: &ScalarField, config: &NlseConfig) -> Result<SteadyState> {
    let s = solve_steady_state(g, psi0, config)?;
    if !s.converged {
        return Err(Error::NotConverged { residual: s.residual, t: s.t_reached });
    }
    refine_steady_state(g, psi0, &s, config.gamma)
}

/// Central difference of a vector-valued map.
pub fn central_difference<F>(f: F, h: f64) -> Result<Vec<f64>>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let plus = f(h)?;
    let minus = f(-h)?;
    check_dim(plus.len(), minus.len())?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Central difference of phase-aligned steady states `(ψ⁺ - ψ⁻) / 2h`: `ψ⁺`
/// is rotated onto `ψ⁻`, then both share the phase that makes their sum
/// overlap `center` positively.
pub fn aligned_difference(plus: &ScalarField, minus: &ScalarField, center: &ScalarField, h: f64) -> Vec<f64> {
    let plus = align_phase(plus, minus);
    let sum = ScalarField(plus.0.iter().zip(&minus.0).map(|(a, b)| a + b).collect());
    let ov = sum.inner(center).conj();
    let rot = if ov.norm() > 0.0 { ov.conj() / ov.norm() } else { Complex64::new(1.0, 0.0) };
    plus.0
        .iter()
        .zip(&minus.0)
        .flat_map(|(a, b)| {
            let d = (a - b) * rot / (2.0 * h);
            [d.re, d.im]
        })
        .collect()
}

/// Finite-difference oracle: re-solves the steady state at `p ± h` (and at
/// `p` for the phase reference), each refined by Newton.
pub fn fd_oracle(g: &WeightedGraph, psi0: &ScalarField, config: &NlseConfig, param: &Parameter, h: f64) -> Result<SensitivityResult> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!("step must be positive, got {h}")));
    }
    let solve_at = |s: f64| -> Result<ScalarField> {
        match param {
            Parameter::Weight(e) => {
                let k = g.edge_index(*e).ok_or(Error::MissingEdge(e.lo, e.hi))?;
                let mut gp = g.clone();
                gp.set_weight(k, g.weights()[k] + s);
                Ok(solve_refined(&gp, psi0, config)?.psi_inf)
            }
            Parameter::InitialData(d) => {
                check_dim(psi0.len(), d.len())?;
                let p = ScalarField(psi0.0.iter().zip(&d.0).map(|(a, b)| a + b * s).collect()).normalized()?;
                Ok(solve_refined(g, &p, config)?.psi_inf)
            }
        }
    };
    let center = solve_at(0.0)?;
    let plus = solve_at(h)?;
    let minus = solve_at(-h)?;
    Ok(SensitivityResult {
        d_psi_inf: aligned_difference(&plus, &minus, &center, h),
        method: Method::FiniteDifference,
        condition_estimate: 1.0,
        fd_discrepancy: None,
    })
}

/// Implicit derivative together with its FD cross-check.
pub fn validated(
    g: &WeightedGraph,
    psi0: &ScalarField,
    config: &NlseConfig,
    param: &Parameter,
    h: f64,
) -> Result<SensitivityResult> {
    let steady = solve_refined(g, psi0, config)?;
    let mut r = match param {
        Parameter::Weight(e) => dpsi_dw(g, psi0, &steady, *e, config.gamma)?,
        Parameter::InitialData(d) => dpsi_dpsi0(g, psi0, &steady, d, config.gamma)?,
    };
    let fd = fd_oracle(g, psi0, config, param, h)?;
    r.fd_discrepancy = Some(relative_l2(&r.d_psi_inf, &fd.d_psi_inf));
    Ok(r)
}
