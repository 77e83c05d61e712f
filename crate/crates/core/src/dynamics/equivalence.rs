//! Lockstep integration of an amplitude system and its spin counterpart,
//! measuring how far the spin trajectory strays from the stereographic image
//! of the amplitude trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::graph::{norm3, RealField, ScalarField, SpinField, WeightedGraph};

use super::gauge::{circle_constraint, phase_constraint, to_circle, to_sphere};
use super::integrate::{at_step, rk4_step, NlseConfig, OdeState, OdeSystem};
use super::rhs::{DiffusionField, DiffusionImageField, LlField, NlseField, NlseImageField, Spin2dField};

/// Which spin vector field is integrated next to the amplitude system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpinModel {
    /// The closed-form LL (or planar spin) equation.
    #[default]
    AsWritten,
    /// The exact push-forward of the amplitude field through the
    /// stereographic map.
    GaugeImage,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaugeReport {
    pub max_deviation: f64,
    pub t_at_max: f64,
    /// Largest `|constraint - 1|` along the spin trajectory.
    pub max_constraint_deviation: f64,
    /// Largest per-spin `|‖S_j‖ - 1|` along the spin trajectory.
    pub max_spin_norm_deviation: f64,
    pub steps: usize,
}

/// Spins closer than this (in `S^z + 1`) to the south pole abort the check.
pub const DEFAULT_POLE_MARGIN: f64 = 1e-3;

fn lockstep<A, B>(
    amp: &A,
    spin: &B,
    a0: A::State,
    s0: SpinField,
    config: &NlseConfig,
    pole_margin: f64,
    image: impl Fn(&A::State) -> SpinField,
    pole_axis: usize,
    constraint: impl Fn(&SpinField) -> Result<f64>,
) -> Result<GaugeReport>
where
    A: OdeSystem,
    B: OdeSystem<State = SpinField>,
{
    config.validate()?;
    let mut a = a0;
    let mut s = s0;
    let mut report = GaugeReport {
        max_deviation: 0.0,
        t_at_max: 0.0,
        max_constraint_deviation: 0.0,
        max_spin_norm_deviation: 0.0,
        steps: 0,
    };
    let steps = config.n_steps();
    for step in 0..=steps {
        let t = step as f64 * config.dt;
        if step > 0 {
            let mut na = rk4_step(amp, &a, config.dt, None).map_err(|e| at_step(e, step, t))?;
            let mut ns = rk4_step(spin, &s, config.dt, None).map_err(|e| at_step(e, step, t))?;
            if !na.all_finite() || !ns.all_finite() {
                return Err(Error::Divergence { step, t });
            }
            amp.renormalize(&mut na, config.renorm_tol);
            report.max_spin_norm_deviation =
                report.max_spin_norm_deviation.max(spin.renormalize(&mut ns, config.renorm_tol));
            a = na;
            s = ns;
            report.steps = step;
        }
        if let Some(index) = s.0.iter().position(|v| v[pole_axis] <= -1.0 + pole_margin) {
            return Err(Error::SouthPoleAt { t, index });
        }
        let img = image(&a);
        let dev = img
            .0
            .iter()
            .zip(&s.0)
            .map(|(x, y)| norm3(&[x[0] - y[0], x[1] - y[1], x[2] - y[2]]))
            .fold(0.0, f64::max);
        if dev > report.max_deviation {
            report.max_deviation = dev;
            report.t_at_max = t;
        }
        let c = constraint(&s)?;
        report.max_constraint_deviation = report.max_constraint_deviation.max((c - 1.0).abs());
    }
    Ok(report)
}

/// Integrates the NSE from `psi0` and the spin system from `to_sphere(psi0)`
/// with identical settings.
pub fn gauge_check(
    g: &WeightedGraph,
    psi0: &ScalarField,
    config: &NlseConfig,
    model: SpinModel,
    pole_margin: f64,
) -> Result<GaugeReport> {
    check_dim(g.n_vertices(), psi0.len())?;
    let nse = NlseField::new(g, psi0, config.gamma)?;
    nse.validate_initial(psi0)?;
    let s0 = to_sphere(psi0);
    match model {
        SpinModel::AsWritten => {
            let ll = LlField::new(g, psi0, config.gamma)?;
            lockstep(&nse, &ll, psi0.clone(), s0, config, pole_margin, to_sphere, 2, phase_constraint)
        }
        SpinModel::GaugeImage => {
            let img = NlseImageField { inner: NlseField::new(g, psi0, config.gamma)? };
            lockstep(&nse, &img, psi0.clone(), s0, config, pole_margin, to_sphere, 2, phase_constraint)
        }
    }
}

/// Real counterpart: diffusion system against planar spins.
pub fn gauge_check_real(
    g: &WeightedGraph,
    phi0: &RealField,
    config: &NlseConfig,
    model: SpinModel,
    pole_margin: f64,
) -> Result<GaugeReport> {
    check_dim(g.n_vertices(), phi0.len())?;
    let diff = DiffusionField::new(g, phi0, config.gamma)?;
    let t0 = to_circle(phi0);
    match model {
        SpinModel::AsWritten => {
            let sp = Spin2dField::new(g, phi0, config.gamma)?;
            lockstep(&diff, &sp, phi0.clone(), t0, config, pole_margin, to_circle, 1, circle_constraint)
        }
        SpinModel::GaugeImage => {
            let img = DiffusionImageField { inner: DiffusionField::new(g, phi0, config.gamma)? };
            lockstep(&diff, &img, phi0.clone(), t0, config, pole_margin, to_circle, 1, circle_constraint)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn cfg(t_max: f64, dt: f64) -> NlseConfig {
        NlseConfig { t_max, dt, ..Default::default() }
    }

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)]).unwrap()
    }

    #[test]
    fn push_forward_tracks_the_amplitude_flow() {
        let psi0 = ScalarField::from_real(&[0.8, 0.6, 0.0]);
        let r = gauge_check(&triangle(), &psi0, &cfg(10.0, 1e-3), SpinModel::GaugeImage, DEFAULT_POLE_MARGIN).unwrap();
        assert!(r.max_deviation < 1e-9, "{r:?}");
        assert!(r.max_constraint_deviation < 1e-9);
    }

    #[test]
    fn real_push_forward_tracks_diffusion() {
        let phi0 = RealField(vec![0.8, 0.6, 0.0]);
        let r = gauge_check_real(&triangle(), &phi0, &cfg(2.0, 1e-3), SpinModel::GaugeImage, DEFAULT_POLE_MARGIN)
            .unwrap();
        assert!(r.max_deviation < 1e-9, "{r:?}");
    }

    #[test]
    fn single_vertex_ll_precesses_at_twice_the_amplitude_rate() {
        // ψ(t) = e^{-it}, while the LL spin rotates about e₃ at rate 2, so the
        // gap is |e^{-it} - e^{-2it}| = 2|sin(t/2)|.
        let g = WeightedGraph::new(1, &[]).unwrap();
        let psi0 = ScalarField(vec![Complex64::new(1.0, 0.0)]);
        let r = gauge_check(&g, &psi0, &cfg(4.0, 1e-3), SpinModel::AsWritten, DEFAULT_POLE_MARGIN).unwrap();
        assert!((r.max_deviation - 2.0).abs() < 1e-6, "{r:?}");
        assert!((r.t_at_max - std::f64::consts::PI).abs() < 2e-3);
        assert!(r.max_constraint_deviation < 1e-12);
    }

    #[test]
    fn symmetric_p2_is_constant_in_both_pictures() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let h = 0.5f64.sqrt();
        let psi0 = ScalarField::from_real(&[h, h]);
        let r = gauge_check(&g, &psi0, &cfg(1.0, 1e-3), SpinModel::GaugeImage, DEFAULT_POLE_MARGIN).unwrap();
        assert!(r.max_deviation < 1e-12);
    }

    #[test]
    fn non_unit_state_is_rejected() {
        let psi0 = ScalarField::from_real(&[1.0, 1.0, 0.0]);
        assert!(gauge_check(&triangle(), &psi0, &cfg(1.0, 1e-2), SpinModel::AsWritten, DEFAULT_POLE_MARGIN).is_err());
    }
}
