//! Vector fields of the four hidden-state systems.
//!
//! * complex dissipative NSE: `F = -i(L + diag|ψ⁰|²)ψ - γ P⊥_ψ (Lψ + (|ψ|² - |ψ⁰|²)ψ)`
//! * Landau-Lifshitz spins: precession in `-2Σ w S_k + 2|ψ⁰_j|² e₃` plus
//!   double-cross damping towards the dissipation field
//! * real diffusion counterpart of the NSE (no `-i`, so only the dissipative
//!   part is tangent to the sphere)
//! * planar spin counterpart of the LL system

use num_complex::Complex64;

use crate::error::{check_dim, Error, Result};
use crate::graph::{cross3, dot3, laplacian_generic, RealField, ScalarField, SpinField, WeightedGraph};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Unit-spin tolerance accepted by the spin right-hand sides.
pub const SPIN_UNIT_TOL: f64 = 1e-8;

/// `P⊥_ψ a = a - ψ ⟨ψ, a⟩ / ⟨ψ, ψ⟩`.
pub fn project_perp(psi: &[Complex64], a: &[Complex64]) -> Result<Vec<Complex64>> {
    let nn: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    if !(nn > 0.0) {
        return Err(Error::SingularProjector);
    }
    let c: Complex64 = psi.iter().zip(a).map(|(p, x)| p.conj() * x).sum::<Complex64>() / nn;
    Ok(a.iter().zip(psi).map(|(x, p)| x - p * c).collect())
}

pub(crate) fn project_perp_real(phi: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let nn: f64 = phi.iter().map(|x| x * x).sum();
    if !(nn > 0.0) {
        return Err(Error::SingularProjector);
    }
    let c: f64 = phi.iter().zip(a).map(|(p, x)| p * x).sum::<f64>() / nn;
    Ok(a.iter().zip(phi).map(|(x, p)| x - p * c).collect())
}

/// NSE vector field with the potential `|ψ⁰|²` frozen at the initial state.
#[derive(Debug, Clone)]
pub struct NlseField<'a> {
    pub graph: &'a WeightedGraph,
    pub potential: Vec<f64>,
    pub gamma: f64,
}

impl<'a> NlseField<'a> {
    pub fn new(graph: &'a WeightedGraph, psi0: &ScalarField, gamma: f64) -> Result<Self> {
        check_dim(graph.n_vertices(), psi0.len())?;
        Ok(NlseField { graph, potential: psi0.moduli_sqr(), gamma })
    }

    /// Hamiltonian part `-i H ψ` and dissipation field `D(ψ)`.
    pub(crate) fn parts(&self, psi: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
        let lap = laplacian_generic(self.graph, psi);
        let ham = lap.iter().zip(psi).zip(&self.potential).map(|((l, p), v)| -I * (l + p * *v)).collect();
        let diss = lap.iter().zip(psi).zip(&self.potential).map(|((l, p), v)| l + p * (p.norm_sqr() - v)).collect();
        (ham, diss)
    }

    pub fn eval(&self, psi: &[Complex64]) -> Result<Vec<Complex64>> {
        check_dim(self.graph.n_vertices(), psi.len())?;
        let (ham, diss) = self.parts(psi);
        let pd = project_perp(psi, &diss)?;
        Ok(ham.iter().zip(&pd).map(|(h, d)| h - d * self.gamma).collect())
    }
}

pub fn nlse_rhs(g: &WeightedGraph, psi: &ScalarField, psi0: &ScalarField, gamma: f64) -> Result<ScalarField> {
    check_dim(g.n_vertices(), psi.len())?;
    Ok(ScalarField(NlseField::new(g, psi0, gamma)?.eval(&psi.0)?))
}

fn neighbor_sum3(g: &WeightedGraph, s: &[[f64; 3]], j: usize) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for &(k, e) in g.neighbors(j) {
        let w = g.weights()[e];
        for c in 0..3 {
            acc[c] += w * s[k][c];
        }
    }
    acc
}

/// LL vector field. `potential` is `|ψ⁰_j|²`.
#[derive(Debug, Clone)]
pub struct LlField<'a> {
    pub graph: &'a WeightedGraph,
    pub potential: Vec<f64>,
    pub gamma: f64,
}

impl<'a> LlField<'a> {
    pub fn new(graph: &'a WeightedGraph, psi0: &ScalarField, gamma: f64) -> Result<Self> {
        check_dim(graph.n_vertices(), psi0.len())?;
        Ok(LlField { graph, potential: psi0.moduli_sqr(), gamma })
    }

    pub fn eval(&self, s: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let n = self.graph.n_vertices();
        let mean = self.potential.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|j| {
                let sj = s[j];
                let nb = neighbor_sum3(self.graph, s, j);
                let deg_w: f64 = self.graph.neighbors(j).iter().map(|&(_, e)| self.graph.weights()[e]).sum();
                let h = [-2.0 * nb[0], -2.0 * nb[1], -2.0 * nb[2] + 2.0 * self.potential[j]];
                // -2 Σ w (S_k - S_j) + 2(|ψ⁰_j|² - mean) e₃
                let d = [
                    -2.0 * (nb[0] - deg_w * sj[0]),
                    -2.0 * (nb[1] - deg_w * sj[1]),
                    -2.0 * (nb[2] - deg_w * sj[2]) + 2.0 * (self.potential[j] - mean),
                ];
                let prec = cross3(&sj, &h);
                let damp = cross3(&sj, &cross3(&sj, &d));
                [prec[0] - self.gamma * damp[0], prec[1] - self.gamma * damp[1], prec[2] - self.gamma * damp[2]]
            })
            .collect()
    }
}

pub fn ll_rhs(g: &WeightedGraph, s: &SpinField, psi0: &ScalarField, gamma: f64) -> Result<SpinField> {
    check_dim(g.n_vertices(), s.len())?;
    s.check_unit(SPIN_UNIT_TOL)?;
    Ok(SpinField(LlField::new(g, psi0, gamma)?.eval(&s.0)))
}

/// Real reaction-diffusion field `-(L + diag φ⁰²)φ - γ P⊥_φ (Lφ + (φ² - φ⁰²)φ)`.
#[derive(Debug, Clone)]
pub struct DiffusionField<'a> {
    pub graph: &'a WeightedGraph,
    pub potential: Vec<f64>,
    pub gamma: f64,
}

impl<'a> DiffusionField<'a> {
    pub fn new(graph: &'a WeightedGraph, phi0: &RealField, gamma: f64) -> Result<Self> {
        check_dim(graph.n_vertices(), phi0.len())?;
        Ok(DiffusionField { graph, potential: phi0.0.iter().map(|x| x * x).collect(), gamma })
    }

    /// Conservative and projected dissipative parts, returned separately.
    pub fn parts(&self, phi: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let lap = laplacian_generic(self.graph, phi);
        let cons = lap.iter().zip(phi).zip(&self.potential).map(|((l, p), v)| -(l + v * p)).collect();
        let diss: Vec<f64> = lap.iter().zip(phi).zip(&self.potential).map(|((l, p), v)| l + (p * p - v) * p).collect();
        let pd = project_perp_real(phi, &diss)?;
        Ok((cons, pd.iter().map(|d| -self.gamma * d).collect()))
    }

    pub fn eval(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let (c, d) = self.parts(phi)?;
        Ok(c.iter().zip(&d).map(|(a, b)| a + b).collect())
    }
}

pub fn diffusion_rhs(g: &WeightedGraph, phi: &RealField, phi0: &RealField, gamma: f64) -> Result<RealField> {
    check_dim(g.n_vertices(), phi.len())?;
    Ok(RealField(DiffusionField::new(g, phi0, gamma)?.eval(&phi.0)?))
}

/// Planar spin field. Spins are stored as `(T^x, T^y, 0)`.
///
/// The planar cross product `a × b = a_x b_y - a_y b_x` is a scalar; a scalar
/// torque τ acts on a spin as the rotation `τ (-T^y, T^x)`, and the damping
/// term uses the ℝ³ embedding, where `T × (T × D) = -(D - (T·D) T)`.
#[derive(Debug, Clone)]
pub struct Spin2dField<'a> {
    pub graph: &'a WeightedGraph,
    pub potential: Vec<f64>,
    pub gamma: f64,
}

impl<'a> Spin2dField<'a> {
    pub fn new(graph: &'a WeightedGraph, phi0: &RealField, gamma: f64) -> Result<Self> {
        check_dim(graph.n_vertices(), phi0.len())?;
        Ok(Spin2dField { graph, potential: phi0.0.iter().map(|x| x * x).collect(), gamma })
    }

    pub fn eval(&self, t: &[[f64; 3]]) -> Vec<[f64; 3]> {
        let n = self.graph.n_vertices();
        let mean = self.potential.iter().sum::<f64>() / n as f64;
        (0..n)
            .map(|j| {
                let tj = t[j];
                let nb = neighbor_sum3(self.graph, t, j);
                let deg_w: f64 = self.graph.neighbors(j).iter().map(|&(_, e)| self.graph.weights()[e]).sum();
                let h = [-2.0 * nb[0], -2.0 * nb[1] + 2.0 * self.potential[j], 0.0];
                let d = [
                    -2.0 * (nb[0] - deg_w * tj[0]),
                    -2.0 * (nb[1] - deg_w * tj[1]) + 2.0 * (self.potential[j] - mean),
                    0.0,
                ];
                let torque = tj[0] * h[1] - tj[1] * h[0];
                let td = dot3(&tj, &d);
                // -γ T × (T × D) = γ (D - (T·D) T)
                [
                    -torque * tj[1] + self.gamma * (d[0] - td * tj[0]),
                    torque * tj[0] + self.gamma * (d[1] - td * tj[1]),
                    0.0,
                ]
            })
            .collect()
    }
}

pub fn spin2d_rhs(g: &WeightedGraph, t: &SpinField, phi0: &RealField, gamma: f64) -> Result<SpinField> {
    check_dim(g.n_vertices(), t.len())?;
    t.check_unit(SPIN_UNIT_TOL)?;
    if let Some(j) = t.0.iter().position(|s| s[2] != 0.0) {
        return Err(Error::InvalidInput(format!("planar spin {j} has a non-zero third component")));
    }
    Ok(SpinField(Spin2dField::new(g, phi0, gamma)?.eval(&t.0)))
}

/// Exact stereographic push-forward of the NSE field onto spins:
/// `dS/dt = (∂S/∂ψ) F(ψ(S))`. Used as the reference that the LL equation is
/// compared against.
#[derive(Debug, Clone)]
pub struct NlseImageField<'a> {
    pub inner: NlseField<'a>,
}

impl NlseImageField<'_> {
    pub fn eval(&self, s: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let psi = super::gauge::to_plane(&SpinField(s.to_vec()))?;
        let f = self.inner.eval(&psi.0)?;
        Ok(psi.0.iter().zip(&f).map(|(p, dp)| sphere_tangent(*p, *dp)).collect())
    }
}

/// Differential of the stereographic map at `p` applied to `dp`.
pub(crate) fn sphere_tangent(p: Complex64, dp: Complex64) -> [f64; 3] {
    let a = p.norm_sqr();
    let da = 2.0 * (p.conj() * dp).re;
    let q = 1.0 + a;
    let dxy = dp * (2.0 / q) - p * (2.0 * da / (q * q));
    [dxy.re, dxy.im, -2.0 * da / (q * q)]
}

/// Exact push-forward of the diffusion field onto planar spins.
#[derive(Debug, Clone)]
pub struct DiffusionImageField<'a> {
    pub inner: DiffusionField<'a>,
}

impl DiffusionImageField<'_> {
    pub fn eval(&self, t: &[[f64; 3]]) -> Result<Vec<[f64; 3]>> {
        let phi = super::gauge::from_circle(&SpinField(t.to_vec()))?;
        let f = self.inner.eval(&phi.0)?;
        Ok(phi
            .0
            .iter()
            .zip(&f)
            .map(|(p, dp)| {
                let q = 1.0 + p * p;
                [2.0 * (1.0 - p * p) / (q * q) * dp, -4.0 * p / (q * q) * dp, 0.0]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 0.7), (0, 2, 1.3)]).unwrap()
    }

    fn random_unit_spins(n: usize, rng: &mut ChaCha8Rng) -> SpinField {
        SpinField(
            (0..n)
                .map(|_| {
                    let v: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                    let n = dot3(&v, &v).sqrt();
                    [v[0] / n, v[1] / n, v[2] / n]
                })
                .collect(),
        )
    }

    #[test]
    fn nlse_single_vertex() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let one = ScalarField(vec![c(1.0, 0.0)]);
        let f = nlse_rhs(&g, &one, &one, 1.0).unwrap();
        assert_eq!(f.0, vec![c(0.0, -1.0)]);
    }

    #[test]
    fn nlse_symmetric_p2() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let h = 0.5f64.sqrt();
        let psi = ScalarField(vec![c(h, 0.0), c(h, 0.0)]);
        let f = nlse_rhs(&g, &psi, &psi, 1.0).unwrap();
        for (fi, pi) in f.0.iter().zip(&psi.0) {
            assert!((fi - (-I * 0.5) * pi).norm() < 1e-15);
        }
    }

    #[test]
    fn nlse_rejects_zero_state() {
        let g = triangle();
        let z = ScalarField::zeros(3);
        let psi0 = ScalarField::from_real(&[1.0, 0.0, 0.0]);
        assert_eq!(nlse_rhs(&g, &z, &psi0, 1.0).unwrap_err(), Error::SingularProjector);
    }

    #[test]
    fn nlse_is_tangent_to_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = triangle();
        for _ in 0..50 {
            let psi = ScalarField::random(3, &mut rng);
            let psi0 = ScalarField::random(3, &mut rng).normalized().unwrap();
            let f = nlse_rhs(&g, &psi, &psi0, 0.8).unwrap();
            assert!(psi.inner(&f).re.abs() < 1e-12);
        }
    }

    #[test]
    fn ll_aligned_state_is_fixed() {
        let g = triangle();
        let s = SpinField(vec![[0.0, 0.0, 1.0]; 3]);
        let psi0 = ScalarField(vec![c(0.3, 0.4); 3]);
        let f = ll_rhs(&g, &s, &psi0, 1.0).unwrap();
        assert!(f.0.iter().all(|v| dot3(v, v) == 0.0));
    }

    #[test]
    fn ll_single_vertex_precession() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let s = SpinField(vec![[1.0, 0.0, 0.0]]);
        let f = ll_rhs(&g, &s, &ScalarField(vec![c(1.0, 0.0)]), 1.0).unwrap();
        assert_eq!(f.0, vec![[0.0, -2.0, 0.0]]);
    }

    #[test]
    fn ll_rejects_non_unit_spins() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let s = SpinField(vec![[1.1, 0.0, 0.0]]);
        assert!(matches!(ll_rhs(&g, &s, &ScalarField(vec![c(1.0, 0.0)]), 1.0), Err(Error::NonUnitSpin { .. })));
    }

    #[test]
    fn ll_is_pointwise_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = triangle();
        for _ in 0..50 {
            let s = random_unit_spins(3, &mut rng);
            let psi0 = ScalarField::random(3, &mut rng).normalized().unwrap();
            let f = ll_rhs(&g, &s, &psi0, 0.5).unwrap();
            for (fj, sj) in f.0.iter().zip(&s.0) {
                assert!(dot3(fj, sj).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diffusion_single_vertex_is_not_tangent() {
        let g = WeightedGraph::new(1, &[]).unwrap();
        let one = RealField(vec![1.0]);
        let f = diffusion_rhs(&g, &one, &one, 1.0).unwrap();
        assert_eq!(f.0, vec![-1.0]);
    }

    #[test]
    fn diffusion_symmetric_p2_has_no_dissipation() {
        let g = WeightedGraph::new(2, &[(0, 1, 1.0)]).unwrap();
        let h = 0.5f64.sqrt();
        let phi = RealField(vec![h, h]);
        let field = DiffusionField::new(&g, &phi, 1.0).unwrap();
        let (cons, diss) = field.parts(&phi.0).unwrap();
        assert!(diss.iter().all(|d| d.abs() < 1e-15));
        assert!((cons[0] + 0.5 * h).abs() < 1e-15);
    }

    #[test]
    fn diffusion_matches_naive_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = triangle();
        let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let phi0: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gamma = 0.9;
        let dense = g.dense_laplacian();
        let lap: Vec<f64> = (0..3).map(|i| (0..3).map(|j| dense[(i, j)] * phi[j]).sum()).collect();
        let d: Vec<f64> = (0..3).map(|i| lap[i] + (phi[i] * phi[i] - phi0[i] * phi0[i]) * phi[i]).collect();
        let nn: f64 = phi.iter().map(|x| x * x).sum();
        let dp: f64 = (0..3).map(|i| d[i] * phi[i]).sum();
        let expected: Vec<f64> =
            (0..3).map(|i| -(lap[i] + phi0[i] * phi0[i] * phi[i]) - gamma * (d[i] - phi[i] * dp / nn)).collect();
        let got = diffusion_rhs(&g, &RealField(phi), &RealField(phi0), gamma).unwrap();
        for i in 0..3 {
            assert!((got.0[i] - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_dissipative_part_is_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = triangle();
        let phi: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let field = DiffusionField::new(&g, &RealField(vec![0.6, 0.8, 0.0]), 1.0).unwrap();
        let (_, diss) = field.parts(&phi).unwrap();
        assert!(diss.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn spin2d_aligned_state_is_fixed() {
        let g = triangle();
        let t = SpinField(vec![[0.0, 1.0, 0.0]; 3]);
        let f = spin2d_rhs(&g, &t, &RealField(vec![0.5; 3]), 1.0).unwrap();
        assert!(f.0.iter().all(|v| dot3(v, v) == 0.0));
    }

    #[test]
    fn spin2d_is_pointwise_tangent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = triangle();
        for _ in 0..50 {
            let t = SpinField(
                (0..3)
                    .map(|_| {
                        let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        [a.cos(), a.sin(), 0.0]
                    })
                    .collect(),
            );
            let phi0 = RealField((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
            let f = spin2d_rhs(&g, &t, &phi0, 0.7).unwrap();
            for (fj, tj) in f.0.iter().zip(&t.0) {
                assert!(dot3(fj, tj).abs() < 1e-12);
                assert_eq!(fj[2], 0.0);
            }
        }
    }

    #[test]
    fn push_forward_matches_finite_difference_of_the_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let p = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let dp = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let h = 1e-6;
            let sp = super::super::gauge::to_sphere(&ScalarField(vec![p + dp * h])).0[0];
            let sm = super::super::gauge::to_sphere(&ScalarField(vec![p - dp * h])).0[0];
            let t = sphere_tangent(p, dp);
            for k in 0..3 {
                assert!(((sp[k] - sm[k]) / (2.0 * h) - t[k]).abs() < 1e-8);
            }
        }
    }
}
