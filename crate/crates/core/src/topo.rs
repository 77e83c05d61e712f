//! Synthetic manifolds, their δ-nets and true edge sets, Betti numbers, the
//! graph geodesic metric and distortion against the manifold metric.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, BTreeSet};
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::NlseConfig;
use crate::error::{Error, Result};
use crate::graph::{Edge, ScalarField, WeightedGraph};
use crate::model::{Readout, Sample};
use crate::sensitivity::solve_refined;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ManifoldKind {
    Circle,
    DisjointCircles { k: usize },
    Segment,
}

/// Teacher weight as a power of the geodesic distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightExponent {
    /// `w* = 1/d`
    #[default]
    InverseDistance,
    /// `w* = 1/d²`
    InverseSquare,
}

impl WeightExponent {
    pub fn weight(self, d: f64) -> f64 {
        match self {
            WeightExponent::InverseDistance => 1.0 / d,
            WeightExponent::InverseSquare => 1.0 / (d * d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldSpec {
    pub kind: ManifoldKind,
    /// Circle radii (one per component) or the segment length.
    pub radii: Vec<f64>,
    /// Net points per component.
    pub n_net_points: usize,
    #[serde(default)]
    pub noise_delta: f64,
    #[serde(default = "default_ambient")]
    pub ambient_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_ambient() -> usize {
    2
}

impl ManifoldSpec {
    pub fn circle(radius: f64, n: usize) -> Self {
        ManifoldSpec { kind: ManifoldKind::Circle, radii: vec![radius], n_net_points: n, noise_delta: 0.0, ambient_dim: 2, seed: 0 }
    }

    pub fn segment(length: f64, n: usize) -> Self {
        ManifoldSpec { kind: ManifoldKind::Segment, radii: vec![length], n_net_points: n, noise_delta: 0.0, ambient_dim: 2, seed: 0 }
    }

    pub fn disjoint_circles(radii: Vec<f64>, n_per_circle: usize) -> Self {
        ManifoldSpec {
            kind: ManifoldKind::DisjointCircles { k: radii.len() },
            radii,
            n_net_points: n_per_circle,
            noise_delta: 0.0,
            ambient_dim: 2,
            seed: 0,
        }
    }

    pub fn components(&self) -> usize {
        match self.kind {
            ManifoldKind::DisjointCircles { k } => k,
            _ => 1,
        }
    }

    pub fn n_vertices(&self) -> usize {
        self.components() * self.n_net_points
    }

    /// Disjoint unions go beyond the connected-manifold setting.
    pub fn is_extension(&self) -> bool {
        self.components() > 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.radii.len() != self.components() {
            return bad(format!("expected {} radii, got {}", self.components(), self.radii.len()));
        }
        if self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return bad("radii must be positive".into());
        }
        let min_points = if self.kind == ManifoldKind::Segment { 2 } else { 3 };
        if self.n_net_points < min_points {
            return bad(format!("n_net_points must be >= {min_points}"));
        }
        if !(self.noise_delta >= 0.0 && self.noise_delta.is_finite()) {
            return bad("noise_delta must be >= 0".into());
        }
        let need = if self.kind == ManifoldKind::Segment { 1 } else { 2 };
        if self.ambient_dim < need {
            return bad(format!("ambient_dim must be >= {need}"));
        }
        Ok(())
    }
}

/// Net point: component index and intrinsic coordinate (angle or arclength).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct NetParam {
    component: usize,
    coord: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruth {
    pub spec: ManifoldSpec,
    pub net_points: Vec<Vec<f64>>,
    /// `None` across components.
    pub geodesic_dist: Vec<Vec<Option<f64>>>,
    pub inj_radius: f64,
    pub e_true: BTreeSet<Edge>,
    pub betti: (usize, usize),
    pub teacher_weights: Vec<(Edge, f64)>,
    pub weight_exponent: WeightExponent,
    /// Largest distance from a manifold point to its nearest net point.
    pub covering_radius: f64,
    pub warnings: Vec<String>,
}

impl GroundTruth {
    pub fn n_vertices(&self) -> usize {
        self.net_points.len()
    }

    /// `(E_true, w*)` with unit measures.
    pub fn teacher_graph(&self) -> Result<WeightedGraph> {
        let edges: Vec<(usize, usize, f64)> = self.teacher_weights.iter().map(|(e, w)| (e.lo, e.hi, *w)).collect();
        WeightedGraph::new(self.n_vertices(), &edges)
    }

    pub fn geodesic(&self, u: usize, v: usize) -> Option<f64> {
        self.geodesic_dist[u][v]
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("ground truth serialises")
    }
}

pub fn build_ground_truth(spec: &ManifoldSpec, inj_radius: f64, exponent: WeightExponent) -> Result<GroundTruth> {
    spec.validate()?;
    if !(inj_radius > 0.0 && inj_radius.is_finite()) {
        return Err(Error::Config(format!("inj_radius must be positive, got {inj_radius}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_net_points;
    let mut params = Vec::with_capacity(spec.n_vertices());
    let mut max_gap: f64 = 0.0;
    let mut covering: f64 = 0.0;
    for c in 0..spec.components() {
        let r = spec.radii[c];
        let mut coords: Vec<f64> = match spec.kind {
            ManifoldKind::Segment => (0..n).map(|k| r * k as f64 / (n - 1) as f64).collect(),
            _ => (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect(),
        };
        if spec.noise_delta > 0.0 {
            let scale = match spec.kind {
                ManifoldKind::Segment => spec.noise_delta,
                _ => spec.noise_delta / r,
            };
            for x in coords.iter_mut() {
                *x += scale * rng.gen_range(-1.0..1.0);
            }
            if spec.kind == ManifoldKind::Segment {
                for x in coords.iter_mut() {
                    *x = x.clamp(0.0, r);
                }
            }
        }
        let mut sorted = coords.clone();
        sorted.sort_by(f64::total_cmp);
        match spec.kind {
            ManifoldKind::Segment => {
                for w in sorted.windows(2) {
                    max_gap = max_gap.max(w[1] - w[0]);
                    covering = covering.max((w[1] - w[0]) / 2.0);
                }
                covering = covering.max(sorted[0]).max(r - sorted[n - 1]);
            }
            _ => {
                for k in 0..n {
                    let next = if k + 1 < n { sorted[k + 1] } else { sorted[0] + 2.0 * PI };
                    let gap = r * (next - sorted[k]);
                    max_gap = max_gap.max(gap);
                    covering = covering.max(gap / 2.0);
                }
            }
        }
        params.extend(coords.into_iter().map(|coord| NetParam { component: c, coord }));
    }

    let offset = 3.0 * spec.radii.iter().cloned().fold(0.0, f64::max);
    let net_points: Vec<Vec<f64>> = params
        .iter()
        .map(|p| {
            let mut x = vec![0.0; spec.ambient_dim];
            match spec.kind {
                ManifoldKind::Segment => x[0] = p.coord,
                _ => {
                    let r = spec.radii[p.component];
                    x[0] = r * p.coord.cos() + offset * p.component as f64;
                    x[1] = r * p.coord.sin();
                }
            }
            x
        })
        .collect();

    let nv = params.len();
    let mut geodesic_dist = vec![vec![None; nv]; nv];
    for u in 0..nv {
        for v in 0..nv {
            let (a, b) = (params[u], params[v]);
            if a.component != b.component {
                continue;
            }
            let d = match spec.kind {
                ManifoldKind::Segment => (a.coord - b.coord).abs(),
                _ => {
                    let t = (a.coord - b.coord).rem_euclid(2.0 * PI);
                    spec.radii[a.component] * t.min(2.0 * PI - t)
                }
            };
            geodesic_dist[u][v] = Some(if u == v { 0.0 } else { d });
        }
    }

    let mut e_true = BTreeSet::new();
    let mut teacher_weights = Vec::new();
    for u in 0..nv {
        for v in u + 1..nv {
            if let Some(d) = geodesic_dist[u][v] {
                if d > 0.0 && d < inj_radius {
                    let e = Edge::new(u, v);
                    e_true.insert(e);
                    teacher_weights.push((e, exponent.weight(d)));
                }
            }
        }
    }
    let mut warnings = Vec::new();
    if inj_radius <= max_gap {
        warnings.push(format!(
            "inj_radius {inj_radius} does not exceed the largest net gap {max_gap}; E_true may disconnect a component"
        ));
    }
    if spec.is_extension() {
        warnings.push("disjoint union of manifolds: extension beyond the connected setting".into());
    }
    let betti = betti_of(nv, e_true.iter().copied());
    Ok(GroundTruth {
        spec: spec.clone(),
        net_points,
        geodesic_dist,
        inj_radius,
        e_true,
        betti,
        teacher_weights,
        weight_exponent: exponent,
        covering_radius: covering,
        warnings,
    })
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind((0..n).collect())
    }

    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut y = x;
        while self.0[y] != r {
            let next = self.0[y];
            self.0[y] = r;
            y = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

fn betti_of(n: usize, edges: impl Iterator<Item = Edge>) -> (usize, usize) {
    let mut uf = UnionFind::new(n);
    let mut m = 0;
    let mut merges = 0;
    for e in edges {
        m += 1;
        if uf.union(e.lo, e.hi) {
            merges += 1;
        }
    }
    let b0 = n - merges;
    (b0, m + b0 - n)
}

/// `(β₀, β₁)` with `β₁ = |E| - |V| + β₀`.
pub fn betti_numbers(g: &WeightedGraph) -> (usize, usize) {
    betti_of(g.n_vertices(), g.edges().iter().copied())
}

/// Symmetric all-pairs distance matrix; `f64::INFINITY` across components.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(pub Vec<Vec<f64>>);

impl DistanceMatrix {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.0[u][v]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// All-pairs shortest paths with edge length `1/w(e)`.
pub fn graph_metric(g: &WeightedGraph) -> DistanceMatrix {
    let n = g.n_vertices();
    let w = g.weights();
    DistanceMatrix(
        (0..n)
            .map(|s| {
                let mut dist = vec![f64::INFINITY; n];
                dist[s] = 0.0;
                let mut heap = BinaryHeap::from([Item(0.0, s)]);
                while let Some(Item(d, u)) = heap.pop() {
                    if d > dist[u] {
                        continue;
                    }
                    for &(v, k) in g.neighbors(u) {
                        let nd = d + 1.0 / w[k];
                        if nd < dist[v] {
                            dist[v] = nd;
                            heap.push(Item(nd, v));
                        }
                    }
                }
                dist
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistortionReport {
    pub max_additive_distortion: f64,
    /// `½·max_additive_distortion + covering_radius`; an upper bound
    /// surrogate, not the exact Gromov-Hausdorff distance.
    pub gh_upper_bound: f64,
    pub betti: [usize; 2],
    pub label: String,
    pub extension: bool,
}

impl DistortionReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "max_additive_distortion": crate::io::finite_or_null(self.max_additive_distortion),
            "gh_upper_bound": crate::io::finite_or_null(self.gh_upper_bound),
            "betti": self.betti,
            "label": self.label,
            "extension": self.extension,
        })
    }
}

/// Largest `|d_G(u,v) - d_𝒢(u,v)|` over vertex pairs in the same component
/// of the manifold; infinite when the graph disconnects such a pair.
pub fn max_additive_distortion(metric: &DistanceMatrix, truth: &GroundTruth) -> Result<f64> {
    let n = truth.n_vertices();
    if metric.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: metric.len() });
    }
    let mut worst: f64 = 0.0;
    for u in 0..n {
        for v in u + 1..n {
            let dg = metric.get(u, v);
            let d = match truth.geodesic(u, v) {
                Some(d) => (dg - d).abs(),
                None if dg.is_infinite() => 0.0,
                None => f64::INFINITY,
            };
            worst = worst.max(d);
        }
    }
    Ok(worst)
}

pub fn distortion_report(g: &WeightedGraph, truth: &GroundTruth) -> Result<DistortionReport> {
    let m = max_additive_distortion(&graph_metric(g), truth)?;
    let (b0, b1) = betti_numbers(g);
    Ok(DistortionReport {
        max_additive_distortion: m,
        gh_upper_bound: 0.5 * m + truth.covering_radius,
        betti: [b0, b1],
        label: "upper bound surrogate".into(),
        extension: truth.spec.is_extension(),
    })
}

/// Unit-normalised Gaussian bump in geodesic distance around `center`.
pub fn canonical_bump(truth: &GroundTruth, center: usize, width: f64) -> ScalarField {
    let raw: Vec<f64> = (0..truth.n_vertices())
        .map(|u| match truth.geodesic(center, u) {
            Some(d) => (-d * d / (2.0 * width * width)).exp(),
            None => 0.0,
        })
        .collect();
    let n = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    ScalarField::from_real(&raw.iter().map(|x| x / n).collect::<Vec<_>>())
}

/// Smallest positive geodesic distance between net points.
pub fn min_spacing(truth: &GroundTruth) -> f64 {
    truth
        .geodesic_dist
        .iter()
        .flatten()
        .flatten()
        .copied()
        .filter(|d| *d > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Settings for teacher data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSpec {
    pub readout: Readout,
    /// Bump width in geodesic units; `None` uses the smallest net spacing.
    #[serde(default)]
    pub bump_width: Option<f64>,
    /// L² radius of the input noise.
    #[serde(default)]
    pub noise_delta: f64,
}

/// Draws `(X, y)` with `X` a bump at a uniformly random net vertex plus
/// noise of L² norm at most `noise_delta`, and `y` the teacher readout of
/// the steady state on `(E_true, w*)`.
#[derive(Debug, Clone)]
pub struct TeacherSampler {
    graph: WeightedGraph,
    bumps: Vec<ScalarField>,
    readout: Readout,
    noise_delta: f64,
    nlse: NlseConfig,
    clean_labels: Vec<Option<Complex64>>,
    rng: ChaCha8Rng,
}

impl TeacherSampler {
    pub fn graph(&self) -> &WeightedGraph {
        &self.graph
    }

    pub fn readout(&self) -> &Readout {
        &self.readout
    }

    pub fn bump(&self, v: usize) -> &ScalarField {
        &self.bumps[v]
    }

    pub fn n_centers(&self) -> usize {
        self.bumps.len()
    }

    /// Teacher label for an input.
    pub fn label(&self, x: &ScalarField) -> Result<Complex64> {
        let psi0 = x.normalized()?;
        let s = solve_refined(&self.graph, &psi0, &self.nlse)?;
        self.readout.apply(&s.psi_inf)
    }

    fn clean_label(&mut self, v: usize) -> Result<Complex64> {
        if let Some(y) = self.clean_labels[v] {
            return Ok(y);
        }
        let y = self.label(&self.bumps[v].clone())?;
        self.clean_labels[v] = Some(y);
        Ok(y)
    }

    /// Noise-free sample at vertex `v`.
    pub fn clean_sample(&mut self, v: usize) -> Result<Sample> {
        let y = self.clean_label(v)?;
        Ok(Sample { x: self.bumps[v].clone(), y, center: Some(v) })
    }

    pub fn sample(&mut self) -> Result<Sample> {
        let v = self.rng.gen_range(0..self.bumps.len());
        if self.noise_delta == 0.0 {
            return self.clean_sample(v);
        }
        let n = self.bumps[v].len();
        let noise = ScalarField::random(n, &mut self.rng);
        let r = self.noise_delta * self.rng.gen::<f64>() / noise.norm();
        let x = ScalarField(self.bumps[v].0.iter().zip(&noise.0).map(|(b, z)| b + z * r).collect());
        let y = self.label(&x)?;
        Ok(Sample { x, y, center: Some(v) })
    }

    pub fn batch(&mut self, size: usize) -> Result<Vec<Sample>> {
        (0..size).map(|_| self.sample()).collect()
    }
}

pub fn make_teacher_sampler(truth: &GroundTruth, spec: &TeacherSpec, nlse: &NlseConfig, seed: u64) -> Result<TeacherSampler> {
    let graph = truth.teacher_graph()?;
    spec.readout.check_dim(truth.n_vertices())?;
    if !(spec.noise_delta >= 0.0) {
        return Err(Error::Config("noise_delta must be >= 0".into()));
    }
    let width = spec.bump_width.unwrap_or_else(|| min_spacing(truth));
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Config(format!("bump width must be positive, got {width}")));
    }
    let bumps: Vec<ScalarField> = (0..truth.n_vertices()).map(|v| canonical_bump(truth, v, width)).collect();
    Ok(TeacherSampler {
        graph,
        clean_labels: vec![None; bumps.len()],
        bumps,
        readout: spec.readout.clone(),
        noise_delta: spec.noise_delta,
        nlse: nlse.clone(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}
