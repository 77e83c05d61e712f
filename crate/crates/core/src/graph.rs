//! Weighted graphs, vertex/edge fields, discrete differential operators and
//! the graph Sobolev norms.
//!
//! Two Laplacians live here. [`laplacian_apply`] is the dynamics operator
//! `L = D - W` built from the edge weights (positive semidefinite). The
//! measure Laplacian used by the H² norms, `(Δf)(v) = μ(v)⁻¹ Σ (f(u) - f(v)) ρ(e)`,
//! is negative semidefinite; both give the same edge energy up to sign.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Unordered edge stored with `lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub lo: usize,
    pub hi: usize,
}

impl Edge {
    /// Canonicalizes the pair. Panics on self-loops; use [`Edge::try_new`] for
    /// untrusted input.
    pub fn new(a: usize, b: usize) -> Self {
        Self::try_new(a, b).expect("self-loop edge")
    }

    pub fn try_new(a: usize, b: usize) -> Result<Self> {
        if a == b {
            return Err(Error::InvalidInput(format!("self-loop at vertex {a}")));
        }
        Ok(if a < b { Edge { lo: a, hi: b } } else { Edge { lo: b, hi: a } })
    }

    pub fn other(&self, v: usize) -> usize {
        if v == self.lo {
            self.hi
        } else {
            self.lo
        }
    }
}

impl std::fmt::Display for Edge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.lo, self.hi)
    }
}

/// Undirected weighted graph on vertices `0..n` with vertex measure μ and
/// edge measure ρ. Edges are kept in canonical (lexicographic) order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    n: usize,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    mu: Vec<f64>,
    rho: Vec<f64>,
    // vertex -> [(neighbor, edge index)]
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    mu: Vec<f64>,
    rho: Vec<f64>,
}

impl WeightedGraph {
    /// Builds a graph with unit vertex and edge measures.
    pub fn new(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let m = edges.len();
        Self::with_measures(n, edges, vec![1.0; n], vec![1.0; m])
    }

    /// `rho` is given in the same order as `edges`.
    pub fn with_measures(
        n: usize,
        edges: &[(usize, usize, f64)],
        mu: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("graph must have at least one vertex".into()));
        }
        check_dim(n, mu.len())?;
        check_dim(edges.len(), rho.len())?;
        if let Some((v, m)) = mu.iter().enumerate().find(|(_, m)| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(format!("vertex measure mu[{v}] = {m} must be positive")));
        }
        let mut triples = Vec::with_capacity(edges.len());
        for (i, &(a, b, w)) in edges.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::InvalidInput(format!("edge ({a}, {b}) out of range for n = {n}")));
            }
            let e = Edge::try_new(a, b)?;
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidInput(format!("edge {e} has non-positive weight {w}")));
            }
            let r = rho[i];
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidInput(format!("edge {e} has non-positive measure {r}")));
            }
            triples.push((e, w, r));
        }
        triples.sort_by(|x, y| x.0.cmp(&y.0));
        if let Some(pair) = triples.windows(2).find(|p| p[0].0 == p[1].0) {
            return Err(Error::InvalidInput(format!("duplicate edge {}", pair[0].0)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, (e, _, _)) in triples.iter().enumerate() {
            adjacency[e.lo].push((e.hi, k));
            adjacency[e.hi].push((e.lo, k));
        }
        Ok(WeightedGraph {
            n,
            edges: triples.iter().map(|t| t.0).collect(),
            weights: triples.iter().map(|t| t.1).collect(),
            rho: triples.iter().map(|t| t.2).collect(),
            mu,
            adjacency,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn edge_index(&self, e: Edge) -> Option<usize> {
        self.edges.binary_search(&e).ok()
    }

    pub fn weight(&self, e: Edge) -> Option<f64> {
        self.edge_index(e).map(|k| self.weights[k])
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.edges.iter().copied().collect()
    }

    pub fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().zip(&self.weights).map(|(e, &w)| (e.lo, e.hi, w)).collect()
    }

    /// Same vertices and measures-by-default, new edge list.
    pub fn with_edges(&self, edges: &[(usize, usize, f64)]) -> Result<Self> {
        WeightedGraph::with_measures(self.n, edges, self.mu.clone(), vec![1.0; edges.len()])
    }

    /// Copy with the edge measure set equal to the weights (ρ = w), the
    /// convention used when measuring Sobolev norms of dynamic states.
    pub fn with_rho_from_weights(&self) -> Self {
        let mut g = self.clone();
        g.rho = g.weights.clone();
        g
    }

    /// Returns a copy with `e` inserted at weight `w` (or its weight replaced).
    pub fn with_edge(&self, e: Edge, w: f64) -> Result<Self> {
        let mut list: Vec<(usize, usize, f64)> = self
            .weighted_edges()
            .into_iter()
            .filter(|&(a, b, _)| Edge::new(a, b) != e)
            .collect();
        list.push((e.lo, e.hi, w));
        self.with_edges(&list)
    }

    pub fn set_weight(&mut self, k: usize, w: f64) {
        self.weights[k] = w;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(GraphJson {
            n: self.n,
            edges: self.weighted_edges(),
            mu: self.mu.clone(),
            rho: self.rho.clone(),
        })
        .expect("graph serialization")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let raw: GraphJson = serde_json::from_value(value.clone())?;
        WeightedGraph::with_measures(raw.n, &raw.edges, raw.mu, raw.rho)
    }

    /// Dense `L = D - W` from the edge weights.
    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (e, &w) in self.edges.iter().zip(&self.weights) {
            l[(e.lo, e.lo)] += w;
            l[(e.hi, e.hi)] += w;
            l[(e.lo, e.hi)] -= w;
            l[(e.hi, e.lo)] -= w;
        }
        l
    }

    /// Dense measure Laplacian `(Δf)(v) = μ(v)⁻¹ Σ (f(u) - f(v)) ρ(e)`.
    pub fn dense_measure_laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (e, &r) in self.edges.iter().zip(&self.rho) {
            for (a, b) in [(e.lo, e.hi), (e.hi, e.lo)] {
                l[(a, b)] += r / self.mu[a];
                l[(a, a)] -= r / self.mu[a];
            }
        }
        l
    }
}

/// Complex vertex function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField(pub Vec<Complex64>);

/// Real vertex function (state of the real diffusion system).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealField(pub Vec<f64>);

/// ℝ³-valued vertex function. Planar spins use `z = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinField(pub Vec<[f64; 3]>);

/// One value per canonical edge orientation `lo -> hi`; the reverse
/// orientation is the negation.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    edges: Vec<Edge>,
    values: Vec<Complex64>,
}

impl EdgeField {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn canonical_values(&self) -> &[Complex64] {
        &self.values
    }

    /// Value on the oriented edge `from -> to`.
    pub fn get(&self, from: usize, to: usize) -> Option<Complex64> {
        let e = Edge::try_new(from, to).ok()?;
        let k = self.edges.binary_search(&e).ok()?;
        Some(if from == e.lo { self.values[k] } else { -self.values[k] })
    }
}

impl ScalarField {
    pub fn new(values: Vec<Complex64>) -> Self {
        ScalarField(values)
    }

    pub fn from_real(values: &[f64]) -> Self {
        ScalarField(values.iter().map(|&x| Complex64::new(x, 0.0)).collect())
    }

    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `⟨self, other⟩ = Σ conj(self_j) other_j`.
    pub fn inner(&self, other: &ScalarField) -> Complex64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn normalized(&self) -> Result<ScalarField> {
        let n = self.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::SingularProjector);
        }
        Ok(ScalarField(self.0.iter().map(|z| z / n).collect()))
    }

    pub fn moduli_sqr(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Realified layout `[re_0, im_0, re_1, im_1, ...]`.
    pub fn to_real_vec(&self) -> Vec<f64> {
        self.0.iter().flat_map(|z| [z.re, z.im]).collect()
    }

    pub fn from_real_vec(v: &[f64]) -> Self {
        ScalarField(v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        ScalarField((0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
    }
}

impl RealField {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl SpinField {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_unit_deviation(&self) -> f64 {
        self.0.iter().map(|s| (norm3(s) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn check_unit(&self, tol: f64) -> Result<()> {
        for (index, s) in self.0.iter().enumerate() {
            let norm = norm3(s);
            if (norm - 1.0).abs() > tol || !norm.is_finite() {
                return Err(Error::NonUnitSpin { index, norm });
            }
        }
        Ok(())
    }
}

pub(crate) fn norm3(s: &[f64; 3]) -> f64 {
    (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
}

/// `(df)(e) = f(head) - f(tail)` on every canonical orientation `lo -> hi`.
pub fn discrete_gradient(g: &WeightedGraph, f: &ScalarField) -> Result<EdgeField> {
    check_dim(g.n_vertices(), f.len())?;
    let values = g.edges().iter().map(|e| f.0[e.hi] - f.0[e.lo]).collect();
    Ok(EdgeField { edges: g.edges().to_vec(), values })
}

/// `(Lf)_i = Σ_j w_ij (f_i - f_j)`.
pub fn laplacian_apply(g: &WeightedGraph, f: &ScalarField) -> Result<ScalarField> {
    check_dim(g.n_vertices(), f.len())?;
    Ok(ScalarField(laplacian_generic(g, &f.0)))
}

pub(crate) fn laplacian_generic<T>(g: &WeightedGraph, f: &[T]) -> Vec<T>
where
    T: Copy + Default + std::ops::Sub<Output = T> + std::ops::AddAssign + std::ops::Mul<f64, Output = T>,
{
    let w = g.weights();
    (0..g.n_vertices())
        .map(|i| {
            let mut acc = T::default();
            for &(j, k) in g.neighbors(i) {
                acc += (f[i] - f[j]) * w[k];
            }
            acc
        })
        .collect()
}

fn measure_laplacian(g: &WeightedGraph, f: &[Complex64]) -> Vec<Complex64> {
    (0..g.n_vertices())
        .map(|v| {
            let s: Complex64 = g.neighbors(v).iter().map(|&(u, k)| (f[u] - f[v]) * g.rho()[k]).sum();
            s / g.mu()[v]
        })
        .collect()
}

pub fn norm_l2(g: &WeightedGraph, f: &ScalarField) -> Result<f64> {
    check_dim(g.n_vertices(), f.len())?;
    Ok(l2_sq(g, &f.0).sqrt())
}

pub fn norm_h1(g: &WeightedGraph, f: &ScalarField) -> Result<f64> {
    check_dim(g.n_vertices(), f.len())?;
    Ok((l2_sq(g, &f.0) + edge_energy(g, &f.0)).sqrt())
}

pub fn norm_h2(g: &WeightedGraph, f: &ScalarField) -> Result<f64> {
    check_dim(g.n_vertices(), f.len())?;
    let lap = measure_laplacian(g, &f.0);
    Ok((l2_sq(g, &f.0) + l2_sq(g, &lap)).sqrt())
}

fn l2_sq(g: &WeightedGraph, f: &[Complex64]) -> f64 {
    f.iter().zip(g.mu()).map(|(z, m)| z.norm_sqr() * m).sum()
}

fn edge_energy(g: &WeightedGraph, f: &[Complex64]) -> f64 {
    g.edges().iter().zip(g.rho()).map(|(e, r)| (f[e.hi] - f[e.lo]).norm_sqr() * r).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpinNorms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Sobolev norms of an ℝ³ field. The H¹ edge term carries a factor ½ and the
/// H² norm adds the measure-Laplacian energy on top of H¹.
pub fn spin_norms(g: &WeightedGraph, s: &SpinField) -> Result<SpinNorms> {
    check_dim(g.n_vertices(), s.len())?;
    let l2_sq: f64 = s.0.iter().zip(g.mu()).map(|(v, m)| dot3(v, v) * m).sum();
    let edge: f64 = g
        .edges()
        .iter()
        .zip(g.rho())
        .map(|(e, r)| {
            let d = sub3(&s.0[e.hi], &s.0[e.lo]);
            dot3(&d, &d) * r
        })
        .sum();
    let h1_sq = l2_sq + 0.5 * edge;
    let lap_sq: f64 = (0..g.n_vertices())
        .map(|v| {
            let mut acc = [0.0; 3];
            for &(u, k) in g.neighbors(v) {
                let d = sub3(&s.0[u], &s.0[v]);
                for c in 0..3 {
                    acc[c] += d[c] * g.rho()[k] / g.mu()[v];
                }
            }
            dot3(&acc, &acc) * g.mu()[v]
        })
        .sum();
    Ok(SpinNorms { l2: l2_sq.sqrt(), h1: h1_sq.sqrt(), h2: (h1_sq + lap_sq).sqrt() })
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormEquivalenceReport {
    /// `sqrt(1 + ρ_max deg_max / μ_min)`.
    pub c2: f64,
    /// `sqrt(1 + C_Δ²)`.
    pub c4: f64,
    /// Operator norm of the measure Laplacian on L²(μ).
    pub c_delta: f64,
    pub max_h1_over_l2: f64,
    pub max_h2_over_h1: f64,
    pub samples: usize,
    pub violations: usize,
}

/// Closed-form norm-equivalence constants for ℝ³-valued fields, plus the
/// worst ratios seen over `samples` random (not necessarily unit) fields.
pub fn norm_equivalence_report<R: Rng + ?Sized>(
    g: &WeightedGraph,
    samples: usize,
    rng: &mut R,
) -> Result<NormEquivalenceReport> {
    let rho_max = g.rho().iter().copied().fold(0.0, f64::max);
    let deg_max = (0..g.n_vertices()).map(|v| g.degree(v)).max().unwrap_or(0) as f64;
    let mu_min = g.mu().iter().copied().fold(f64::INFINITY, f64::min);
    let c2 = (1.0 + rho_max * deg_max / mu_min).sqrt();

    // ‖Δ‖ on L²(μ) is the spectral norm of M^{1/2} Δ M^{-1/2}.
    let mut sym = g.dense_measure_laplacian();
    for i in 0..g.n_vertices() {
        for j in 0..g.n_vertices() {
            sym[(i, j)] *= (g.mu()[i] / g.mu()[j]).sqrt();
        }
    }
    let c_delta = sym.singular_values().iter().copied().fold(0.0, f64::max);
    let c4 = (1.0 + c_delta * c_delta).sqrt();

    let mut max_h1_over_l2: f64 = 1.0;
    let mut max_h2_over_h1: f64 = 1.0;
    let mut violations = 0;
    let slack = 1e-12;
    for _ in 0..samples {
        let field = SpinField(
            (0..g.n_vertices())
                .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect(),
        );
        let nrm = spin_norms(g, &field)?;
        if nrm.l2 == 0.0 {
            continue;
        }
        let r1 = nrm.h1 / nrm.l2;
        let r2 = nrm.h2 / nrm.h1;
        if r1 < 1.0 - slack || r1 > c2 * (1.0 + slack) || r2 < 1.0 - slack || r2 > c4 * (1.0 + slack) {
            violations += 1;
        }
        max_h1_over_l2 = max_h1_over_l2.max(r1);
        max_h2_over_h1 = max_h2_over_h1.max(r2);
    }
    Ok(NormEquivalenceReport { c2, c4, c_delta, max_h1_over_l2, max_h2_over_h1, samples, violations })
}
