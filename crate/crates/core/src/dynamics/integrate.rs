//! Fixed-step classical RK4 with post-step renormalization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::{norm3, RealField, ScalarField, SpinField};

use super::gauge::{circle_constraint, phase_constraint};
use super::rhs::{DiffusionField, DiffusionImageField, LlField, NlseField, NlseImageField, Spin2dField};

/// Integration and steady-state settings shared by all systems.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NlseConfig {
    pub gamma: f64,
    pub dt: f64,
    pub t_max: f64,
    /// Threshold on `‖P⊥_ψ F(ψ)‖_∞`.
    pub steady_tol: f64,
    /// Norm drift that triggers renormalization.
    pub renorm_tol: f64,
    /// Keep every k-th state in a trajectory record (the invariant log is
    /// always per step).
    pub record_every: usize,
}

impl Default for NlseConfig {
    fn default() -> Self {
        NlseConfig { gamma: 1.0, dt: 1e-2, t_max: 1e4, steady_tol: 1e-8, renorm_tol: 1e-12, record_every: 1 }
    }
}

impl NlseConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gamma", self.gamma),
            ("dt", self.dt),
            ("t_max", self.t_max),
            ("steady_tol", self.steady_tol),
            ("renorm_tol", self.renorm_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.steady_tol >= 1.0 {
            return Err(Error::Config("steady_tol must be < 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of whole steps that fit in `[0, t_max]`.
    pub fn n_steps(&self) -> usize {
        let r = self.t_max / self.dt;
        let k = r.round();
        if (r - k).abs() < 1e-9 * r.max(1.0) {
            k as usize
        } else {
            r.floor() as usize
        }
    }
}

/// Vector-space operations the integrator needs.
pub trait OdeState: Clone {
    fn axpy(&mut self, a: f64, x: &Self);
    fn all_finite(&self) -> bool;
}

impl OdeState for ScalarField {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (y, v) in self.0.iter_mut().zip(&x.0) {
            *y += v * a;
        }
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for SpinField {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (y, v) in self.0.iter_mut().zip(&x.0) {
            for c in 0..3 {
                y[c] += a * v[c];
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.0.iter().all(|s| s.iter().all(|x| x.is_finite()))
    }
}

impl OdeState for RealField {
    fn axpy(&mut self, a: f64, x: &Self) {
        for (y, v) in self.0.iter_mut().zip(&x.0) {
            *y += a * v;
        }
    }

    fn all_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Norm-type and constraint values recorded after each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Observation {
    /// `‖ψ‖` for amplitude states; for spin states the per-spin norm farthest
    /// from 1.
    pub norm: f64,
    /// Phase-space constraint for spin states mapped from unit amplitudes.
    pub constraint: Option<f64>,
}

pub trait OdeSystem {
    type State: OdeState;

    fn rhs(&self, y: &Self::State) -> Result<Self::State>;

    fn validate_initial(&self, _y: &Self::State) -> Result<()> {
        Ok(())
    }

    /// Restores the conserved norm(s) if they drifted by more than `tol`.
    /// Returns the drift measured before any correction.
    fn renormalize(&self, _y: &mut Self::State, _tol: f64) -> f64 {
        0.0
    }

    fn observe(&self, y: &Self::State) -> Observation;
}

/// One classical RK4 step. `k1` may be supplied when already evaluated.
///
/// A non-finite stage is reported as `Divergence { step: 0, t: 0 }`; callers
/// fill in the actual step.
pub fn rk4_step<S: OdeSystem>(system: &S, y: &S::State, dt: f64, k1: Option<S::State>) -> Result<S::State> {
    let blown = || Error::Divergence { step: 0, t: 0.0 };
    let k1 = match k1 {
        Some(k) => k,
        None => system.rhs(y)?,
    };
    let mut y2 = y.clone();
    y2.axpy(0.5 * dt, &k1);
    if !y2.all_finite() {
        return Err(blown());
    }
    let k2 = system.rhs(&y2)?;
    let mut y3 = y.clone();
    y3.axpy(0.5 * dt, &k2);
    if !y3.all_finite() {
        return Err(blown());
    }
    let k3 = system.rhs(&y3)?;
    let mut y4 = y.clone();
    y4.axpy(dt, &k3);
    if !y4.all_finite() {
        return Err(blown());
    }
    let k4 = system.rhs(&y4)?;
    let mut out = y.clone();
    out.axpy(dt / 6.0, &k1);
    out.axpy(dt / 3.0, &k2);
    out.axpy(dt / 3.0, &k3);
    out.axpy(dt / 6.0, &k4);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantEntry {
    pub t: f64,
    pub norm: f64,
    /// Drift before renormalization on this step.
    pub drift: f64,
    pub constraint: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord<S> {
    pub times: Vec<f64>,
    pub states: Vec<S>,
    pub invariant_log: Vec<InvariantEntry>,
}

impl<S> TrajectoryRecord<S> {
    pub fn final_state(&self) -> &S {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory always holds the initial time")
    }

    pub fn max_drift(&self) -> f64 {
        self.invariant_log.iter().map(|e| e.drift).fold(0.0, f64::max)
    }
}

/// Integrates `system` from `initial` over `[0, t_max]` with step `dt`.
pub fn integrate<S: OdeSystem>(
    system: &S,
    initial: S::State,
    config: &NlseConfig,
) -> Result<TrajectoryRecord<S::State>> {
    config.validate()?;
    system.validate_initial(&initial)?;
    let steps = config.n_steps();
    let first = system.observe(&initial);
    let mut record = TrajectoryRecord {
        times: vec![0.0],
        states: vec![initial.clone()],
        invariant_log: vec![InvariantEntry { t: 0.0, norm: first.norm, drift: 0.0, constraint: first.constraint }],
    };
    let mut y = initial;
    for step in 1..=steps {
        let t = step as f64 * config.dt;
        let mut next = rk4_step(system, &y, config.dt, None).map_err(|e| at_step(e, step, t))?;
        if !next.all_finite() {
            return Err(Error::Divergence { step, t });
        }
        let drift = system.renormalize(&mut next, config.renorm_tol);
        let obs = system.observe(&next);
        record.invariant_log.push(InvariantEntry { t, norm: obs.norm, drift, constraint: obs.constraint });
        if step % config.record_every == 0 || step == steps {
            record.times.push(t);
            record.states.push(next.clone());
        }
        y = next;
    }
    Ok(record)
}

pub(crate) fn at_step(e: Error, step: usize, t: f64) -> Error {
    match e {
        Error::Divergence { .. } => Error::Divergence { step, t },
        other => other,
    }
}

fn renormalize_spins(s: &mut SpinField, tol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for v in s.0.iter_mut() {
        let n = norm3(v);
        let d = (n - 1.0).abs();
        worst = worst.max(d);
        if d > tol {
            for c in v.iter_mut() {
                *c /= n;
            }
        }
    }
    worst
}

fn worst_spin_norm(s: &SpinField) -> f64 {
    s.0.iter().map(norm3).fold(1.0, |acc, n| if (n - 1.0).abs() > (acc - 1.0).abs() { n } else { acc })
}

impl OdeSystem for NlseField<'_> {
    type State = ScalarField;

    fn rhs(&self, y: &ScalarField) -> Result<ScalarField> {
        Ok(ScalarField(self.eval(&y.0)?))
    }

    fn validate_initial(&self, y: &ScalarField) -> Result<()> {
        check_dim(self.graph.n_vertices(), y.len())?;
        if (y.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("initial state must have unit norm, got {}", y.norm())));
        }
        Ok(())
    }

    fn renormalize(&self, y: &mut ScalarField, tol: f64) -> f64 {
        let n = y.norm();
        let drift = (n - 1.0).abs();
        if drift > tol {
            for z in y.0.iter_mut() {
                *z /= n;
            }
        }
        drift
    }

    fn observe(&self, y: &ScalarField) -> Observation {
        Observation { norm: y.norm(), constraint: None }
    }
}

impl OdeSystem for LlField<'_> {
    type State = SpinField;

    fn rhs(&self, y: &SpinField) -> Result<SpinField> {
        Ok(SpinField(self.eval(&y.0)))
    }

    fn validate_initial(&self, y: &SpinField) -> Result<()> {
        check_dim(self.graph.n_vertices(), y.len())?;
        y.check_unit(super::rhs::SPIN_UNIT_TOL)
    }

    fn renormalize(&self, y: &mut SpinField, tol: f64) -> f64 {
        renormalize_spins(y, tol)
    }

    fn observe(&self, y: &SpinField) -> Observation {
        Observation { norm: worst_spin_norm(y), constraint: phase_constraint(y).ok() }
    }
}

impl OdeSystem for NlseImageField<'_> {
    type State = SpinField;

    fn rhs(&self, y: &SpinField) -> Result<SpinField> {
        Ok(SpinField(self.eval(&y.0)?))
    }

    fn validate_initial(&self, y: &SpinField) -> Result<()> {
        check_dim(self.inner.graph.n_vertices(), y.len())?;
        y.check_unit(super::rhs::SPIN_UNIT_TOL)
    }

    fn renormalize(&self, y: &mut SpinField, tol: f64) -> f64 {
        renormalize_spins(y, tol)
    }

    fn observe(&self, y: &SpinField) -> Observation {
        Observation { norm: worst_spin_norm(y), constraint: phase_constraint(y).ok() }
    }
}

impl OdeSystem for DiffusionField<'_> {
    type State = RealField;

    fn rhs(&self, y: &RealField) -> Result<RealField> {
        Ok(RealField(self.eval(&y.0)?))
    }

    fn validate_initial(&self, y: &RealField) -> Result<()> {
        check_dim(self.graph.n_vertices(), y.len())
    }

    // Not norm-preserving: no renormalization, norm is only logged.
    fn observe(&self, y: &RealField) -> Observation {
        Observation { norm: y.norm(), constraint: None }
    }
}

impl OdeSystem for Spin2dField<'_> {
    type State = SpinField;

    fn rhs(&self, y: &SpinField) -> Result<SpinField> {
        Ok(SpinField(self.eval(&y.0)))
    }

    fn validate_initial(&self, y: &SpinField) -> Result<()> {
        check_dim(self.graph.n_vertices(), y.len())?;
        y.check_unit(super::rhs::SPIN_UNIT_TOL)
    }

    fn renormalize(&self, y: &mut SpinField, tol: f64) -> f64 {
        renormalize_spins(y, tol)
    }

    fn observe(&self, y: &SpinField) -> Observation {
        Observation { norm: worst_spin_norm(y), constraint: circle_constraint(y).ok() }
    }
}

impl OdeSystem for DiffusionImageField<'_> {
    type State = SpinField;

    fn rhs(&self, y: &SpinField) -> Result<SpinField> {
        Ok(SpinField(self.eval(&y.0)?))
    }

    fn renormalize(&self, y: &mut SpinField, tol: f64) -> f64 {
        renormalize_spins(y, tol)
    }

    fn observe(&self, y: &SpinField) -> Observation {
        Observation { norm: worst_spin_norm(y), constraint: circle_constraint(y).ok() }
    }
}

/// Largest componentwise distance between two amplitude vectors after
/// removing the global phase (aligns `b` onto `a`).
pub fn phase_aligned_distance(a: &ScalarField, b: &ScalarField) -> f64 {
    let aligned = align_phase(b, a);
    a.0.iter().zip(&aligned.0).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Multiplies `x` by the unit phase that makes `⟨reference, x⟩` real and
/// non-negative.
pub fn align_phase(x: &ScalarField, reference: &ScalarField) -> ScalarField {
    let ip = reference.inner(x);
    let phase = if ip.norm() > 0.0 { ip.conj() / ip.norm() } else { Complex64::new(1.0, 0.0) };
    ScalarField(x.0.iter().map(|z| z * phase).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::WeightedGraph;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn config_validation() {
        assert!(NlseConfig::default().validate().is_ok());
        assert!(NlseConfig { dt: 0.0, ..Default::default() }.validate().is_err());
        assert!(NlseConfig { steady_tol: 1.0, ..Default::default() }.validate().is_err());
        assert_eq!(NlseConfig { dt: 1e-3, t_max: 10.0, ..Default::default() }.n_steps(), 10_000);
        assert_eq!(NlseConfig { dt: 0.3, t_max: 1.0, ..Default::default() }.n_steps(), 3);
    }

    #[test]
    fn single_vertex_is_a_pure_rotation() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let psi0 = ScalarField(vec![c(0.6, 0.8)]);
        let field = NlseField::new(&g, &psi0, 1.0).unwrap();
        let cfg = NlseConfig { dt: 0.05, t_max: 5.0, ..Default::default() };
        let traj = integrate(&field, psi0.clone(), &cfg).unwrap();
        for (t, s) in traj.times.iter().zip(&traj.states) {
            assert!((s.norm() - 1.0).abs() < 1e-12);
            let exact = psi0.0[0] * Complex64::from_polar(1.0, -t);
            assert!((s.0[0] - exact).norm() < 1e-6);
        }
    }

    #[test]
    fn symmetric_p2_state_only_rotates() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let h = 0.5f64.sqrt();
        let psi0 = ScalarField(vec![c(h, 0.0), c(h, 0.0)]);
        let field = NlseField::new(&g, &psi0, 1.0).unwrap();
        let traj = integrate(&field, psi0.clone(), &NlseConfig { t_max: 3.0, ..Default::default() }).unwrap();
        for s in &traj.states {
            assert!(phase_aligned_distance(&psi0, s) < 1e-12);
        }
    }

    #[test]
    fn rejects_non_unit_initial_state() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let psi0 = ScalarField(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let field = NlseField::new(&g, &psi0, 1.0).unwrap();
        assert!(integrate(&field, psi0, &NlseConfig::default()).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        // 1/dt-sized steps on a stiff graph blow up explicit RK4
        let g = WeightedGraph::new(2, &[(0, 1, 1e6)]).unwrap();
        let phi0 = RealField(vec![1.0, 0.0]);
        let field = DiffusionField::new(&g, &phi0, 1.0).unwrap();
        let err = integrate(&field, phi0, &NlseConfig { dt: 0.1, t_max: 1e3, ..Default::default() }).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
    }

    #[test]
    fn record_stride_keeps_final_state() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let psi0 = ScalarField(vec![c(1.0, 0.0)]);
        let field = NlseField::new(&g, &psi0, 1.0).unwrap();
        let cfg = NlseConfig { dt: 0.1, t_max: 1.05, record_every: 4, ..Default::default() };
        let traj = integrate(&field, psi0, &cfg).unwrap();
        assert_eq!(traj.invariant_log.len(), 11);
        assert_eq!(traj.times.len(), 4);
        assert!((traj.final_time() - 1.0).abs() < 1e-12);
        assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
    }
}
