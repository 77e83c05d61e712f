//! Stereographic maps between vertex amplitudes and spins.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::graph::{RealField, ScalarField, SpinField};

/// Spins with `S^z` (or `T^y` for planar spins) at or below `-1 + SOUTH_POLE_TOL`
/// cannot be mapped back.
pub const SOUTH_POLE_TOL: f64 = 1e-10;

/// `ψ ↦ ((ψ + ψ̄), i(ψ̄ - ψ), 1 - |ψ|²) / (1 + |ψ|²)`.
pub fn to_sphere(psi: &ScalarField) -> SpinField {
    SpinField(
        psi.0
            .iter()
            .map(|p| {
                let a = p.norm_sqr();
                let q = 1.0 + a;
                [2.0 * p.re / q, 2.0 * p.im / q, (1.0 - a) / q]
            })
            .collect(),
    )
}

/// `S ↦ (S^x + i S^y) / (1 + S^z)`.
pub fn to_plane(s: &SpinField) -> Result<ScalarField> {
    s.0.iter()
        .enumerate()
        .map(|(index, v)| {
            if v[2] <= -1.0 + SOUTH_POLE_TOL {
                return Err(Error::SouthPole { index, sz: v[2] });
            }
            Ok(Complex64::new(v[0], v[1]) / (1.0 + v[2]))
        })
        .collect::<Result<Vec<_>>>()
        .map(ScalarField)
}

/// `Σ_j (1 - S^z_j) / (1 + S^z_j)`, which equals `‖to_plane(S)‖²`.
pub fn phase_constraint(s: &SpinField) -> Result<f64> {
    let mut total = 0.0;
    for (index, v) in s.0.iter().enumerate() {
        if v[2] <= -1.0 + SOUTH_POLE_TOL {
            return Err(Error::SouthPole { index, sz: v[2] });
        }
        total += (1.0 - v[2]) / (1.0 + v[2]);
    }
    Ok(total)
}

/// Real stereographic map `φ ↦ (2φ, 1 - φ²) / (1 + φ²)`, stored as `(T^x, T^y, 0)`.
pub fn to_circle(phi: &RealField) -> SpinField {
    SpinField(
        phi.0
            .iter()
            .map(|p| {
                let q = 1.0 + p * p;
                [2.0 * p / q, (1.0 - p * p) / q, 0.0]
            })
            .collect(),
    )
}

/// `T ↦ T^x / (1 + T^y)`; singular at `T = (0, -1)`.
pub fn from_circle(t: &SpinField) -> Result<RealField> {
    t.0.iter()
        .enumerate()
        .map(|(index, v)| {
            if v[1] <= -1.0 + SOUTH_POLE_TOL {
                return Err(Error::SouthPole { index, sz: v[1] });
            }
            Ok(v[0] / (1.0 + v[1]))
        })
        .collect::<Result<Vec<_>>>()
        .map(RealField)
}

/// `Σ_j (1 - T^y_j) / (1 + T^y_j)`.
pub fn circle_constraint(t: &SpinField) -> Result<f64> {
    let mut total = 0.0;
    for (index, v) in t.0.iter().enumerate() {
        if v[1] <= -1.0 + SOUTH_POLE_TOL {
            return Err(Error::SouthPole { index, sz: v[1] });
        }
        total += (1.0 - v[1]) / (1.0 + v[1]);
    }
    Ok(total)
}
