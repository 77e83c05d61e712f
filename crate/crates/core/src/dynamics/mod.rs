//! Hidden-state dynamics on a weighted graph: vector fields, stereographic
//! gauge maps, the RK4 integrator, steady states and the gauge-equivalence
//! check.

pub mod equivalence;
pub mod gauge;
pub mod integrate;
pub mod rhs;
pub mod steady;

pub use equivalence::{gauge_check, gauge_check_real, GaugeReport, SpinModel, DEFAULT_POLE_MARGIN};
pub use gauge::{circle_constraint, from_circle, phase_constraint, to_circle, to_plane, to_sphere};
pub use integrate::{
    align_phase, integrate, phase_aligned_distance, InvariantEntry, NlseConfig, Observation, OdeState, OdeSystem,
    TrajectoryRecord,
};
pub use rhs::{
    diffusion_rhs, ll_rhs, nlse_rhs, project_perp, spin2d_rhs, DiffusionField, DiffusionImageField, LlField,
    NlseField, NlseImageField, Spin2dField,
};
pub use steady::{solve_steady_state, stationarity_residual, SteadyState};
