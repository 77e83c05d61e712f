//! Dense input layer → steady state of the graph dynamics → dense readout,
//! with a plain dense three-layer baseline.
//!
//! Complex gradients use the convention `dℓ = Re(conj(G) · dθ)`, i.e.
//! `G = ∂ℓ/∂Re θ + i ∂ℓ/∂Im θ`, so a descent step is `θ ← θ - η G`.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{project_perp, NlseConfig, NlseField, SteadyState};
use crate::error::{check_dim, Error, Result};
use crate::graph::{Edge, ScalarField, WeightedGraph};
use crate::moduli::{algorithm1_step, ModuliPoint, OptimizerConfig};
use crate::sensitivity::{dg_dw, solve_refined, SteadyJacobian};
use crate::topo::betti_numbers;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    #[default]
    Identity,
}

impl Activation {
    pub fn apply(self, z: Complex64) -> Complex64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: Complex64) -> Complex64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                Complex64::new(1.0, 0.0) - t * t
            }
            Activation::Identity => Complex64::new(1.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMode {
    /// `σ₃(|⟨a₃, ψ⟩| + b₃)`: the global phase of `ψ` is rotated away.
    #[default]
    GaugeAligned,
    /// `σ₃(⟨a₃, ψ⟩ + b₃)`.
    Raw,
}

/// Output layer `ψ ↦ σ₃(⟨a₃, ψ⟩ + b₃)` with `⟨a, ψ⟩ = Σ conj(a_j) ψ_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    pub a3: Vec<Complex64>,
    #[serde(default)]
    pub b3: Complex64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub mode: ReadoutMode,
    /// Targets are real and the prediction is `Re σ₃(·)`.
    #[serde(default = "yes")]
    pub real_target: bool,
}

fn yes() -> bool {
    true
}

/// Readout value, loss and gradients for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutGrad {
    pub y_hat: Complex64,
    pub loss: f64,
    /// Realified `∂ℓ/∂ψ`.
    pub d_psi: Vec<f64>,
    pub d_a3: Vec<Complex64>,
    pub d_b3: Complex64,
}

impl Readout {
    pub fn new(a3: Vec<Complex64>) -> Self {
        Readout { a3, b3: Complex64::new(0.0, 0.0), activation: Activation::Identity, mode: ReadoutMode::GaugeAligned, real_target: true }
    }

    pub fn random<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Self {
        Readout::new(ScalarField::random(n, rng).0.into_iter().map(|z| z * scale).collect())
    }

    pub fn check_dim(&self, n: usize) -> Result<()> {
        check_dim(n, self.a3.len())
    }

    fn overlap(&self, psi: &ScalarField) -> Complex64 {
        self.a3.iter().zip(&psi.0).map(|(a, p)| a.conj() * p).sum()
    }

    fn pre(&self, z: Complex64) -> Complex64 {
        match self.mode {
            ReadoutMode::GaugeAligned => z.norm() + self.b3,
            ReadoutMode::Raw => z + self.b3,
        }
    }

    fn output(&self, pre: Complex64) -> Complex64 {
        let y = self.activation.apply(pre);
        if self.real_target {
            Complex64::new(y.re, 0.0)
        } else {
            y
        }
    }

    pub fn apply(&self, psi: &ScalarField) -> Result<Complex64> {
        self.check_dim(psi.len())?;
        Ok(self.output(self.pre(self.overlap(psi))))
    }

    pub fn loss(&self, psi: &ScalarField, y: Complex64) -> Result<f64> {
        Ok((self.apply(psi)? - y).norm_sqr())
    }

    pub fn grad(&self, psi: &ScalarField, y: Complex64) -> Result<ReadoutGrad> {
        self.check_dim(psi.len())?;
        let z = self.overlap(psi);
        let pre = self.pre(z);
        let y_hat = self.output(pre);
        let r = y_hat - y;
        // only Re(σ₃) reaches the output for real targets
        let r_eff = if self.real_target { Complex64::new(r.re, 0.0) } else { r };
        let kappa = r_eff.conj() * self.activation.derivative(pre);
        // ω multiplies dz in the pre-activation differential
        let (omega, scale) = match self.mode {
            ReadoutMode::GaugeAligned => {
                let w = if z.norm() > 0.0 { z.conj() / z.norm() } else { Complex64::new(0.0, 0.0) };
                (w, Complex64::new(2.0 * kappa.re, 0.0))
            }
            ReadoutMode::Raw => (Complex64::new(1.0, 0.0), 2.0 * kappa),
        };
        // gauge mode: dℓ = 2Re(κ) Re(ω dz); raw mode: dℓ = 2Re(κ dz)
        let (d_psi_c, d_a3): (Vec<Complex64>, Vec<Complex64>) = match self.mode {
            ReadoutMode::GaugeAligned => self
                .a3
                .iter()
                .zip(&psi.0)
                .map(|(a, p)| (scale * omega.conj() * a, scale * omega * p))
                .unzip(),
            ReadoutMode::Raw => self.a3.iter().zip(&psi.0).map(|(a, p)| (scale.conj() * a, scale * p)).unzip(),
        };
        Ok(ReadoutGrad {
            y_hat,
            loss: r.norm_sqr(),
            d_psi: d_psi_c.iter().flat_map(|g| [g.re, g.im]).collect(),
            d_a3,
            d_b3: 2.0 * kappa.conj(),
        })
    }
}

/// One labelled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: ScalarField,
    pub y: Complex64,
    /// Net vertex the input was generated around, when known.
    #[serde(default)]
    pub center: Option<usize>,
}

/// Distinct samples of a batch with multiplicities, in first-appearance order.
pub fn distinct_samples(samples: &[Sample]) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        let mut key: Vec<u64> = s.x.0.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
        key.push(s.y.re.to_bits());
        key.push(s.y.im.to_bits());
        match index.get(&key) {
            Some(&k) => order[k].1 += 1,
            None => {
                index.insert(key, order.len());
                order.push((i, 1));
            }
        }
    }
    order
}

/// Norm bounds enforced by projection after every update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Bounds {
    pub r_a: f64,
    pub r_b: f64,
    pub r_a3: f64,
    pub r_b3: f64,
    pub r_w2: f64,
    pub r_b2: f64,
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds { r_a: 10.0, r_b: 10.0, r_a3: 100.0, r_b3: 10.0, r_w2: 10.0, r_b2: 10.0 }
    }
}

fn project_ball(v: &mut [Complex64], r: f64) {
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if n > r {
        let s = r / n;
        for z in v.iter_mut() {
            *z *= s;
        }
    }
}

fn frobenius(m: &[Vec<Complex64>]) -> f64 {
    m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn project_matrix(m: &mut [Vec<Complex64>], r: f64) {
    let n = frobenius(m);
    if n > r {
        let s = r / n;
        for z in m.iter_mut().flatten() {
            *z *= s;
        }
    }
}

fn within(v: f64, r: f64) -> bool {
    v <= r * (1.0 + 1e-12)
}

/// Dense input layer: `ψ⁰ = σ₁(A₁X + b₁) / ‖σ₁(A₁X + b₁)‖`. `a1` has one row
/// per graph vertex and one column per input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputLayer {
    pub a1: Vec<Vec<Complex64>>,
    pub b1: Vec<Complex64>,
    #[serde(default)]
    pub activation: Activation,
}

struct InputTrace {
    u: Vec<Complex64>,
    s_norm: f64,
    psi0: ScalarField,
}

impl InputLayer {
    pub fn identity(n: usize) -> Self {
        let a1 = (0..n)
            .map(|i| (0..n).map(|j| Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)).collect())
            .collect();
        InputLayer { a1, b1: vec![Complex64::new(0.0, 0.0); n], activation: Activation::Identity }
    }

    pub fn random<R: Rng + ?Sized>(out: usize, inp: usize, scale: f64, rng: &mut R) -> Self {
        let a1 = (0..out).map(|_| ScalarField::random(inp, rng).0.into_iter().map(|z| z * scale).collect()).collect();
        let b1 = ScalarField::random(out, rng).0.into_iter().map(|z| z * scale).collect();
        InputLayer { a1, b1, activation: Activation::Identity }
    }

    pub fn out_dim(&self) -> usize {
        self.a1.len()
    }

    pub fn in_dim(&self) -> usize {
        self.a1.first().map_or(0, |r| r.len())
    }

    fn trace(&self, x: &ScalarField) -> Result<InputTrace> {
        check_dim(self.in_dim(), x.len())?;
        let u: Vec<Complex64> = self
            .a1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| row.iter().zip(&x.0).map(|(a, xk)| a * xk).sum::<Complex64>() + b)
            .collect();
        let s = ScalarField(u.iter().map(|z| self.activation.apply(*z)).collect());
        if !s.is_finite() {
            return Err(Error::InvalidInput("first-layer activation is not finite".into()));
        }
        let s_norm = s.norm();
        if s_norm == 0.0 {
            return Err(Error::DegenerateInput);
        }
        let psi0 = ScalarField(s.0.iter().map(|z| z / s_norm).collect());
        Ok(InputTrace { u, s_norm, psi0 })
    }

    pub fn psi0(&self, x: &ScalarField) -> Result<ScalarField> {
        Ok(self.trace(x)?.psi0)
    }

    /// Gradients of `ℓ` in `(A₁, b₁)` from `∂ℓ/∂ψ⁰`.
    fn backward(&self, t: &InputTrace, x: &ScalarField, g_psi0: &[Complex64]) -> (Vec<Vec<Complex64>>, Vec<Complex64>) {
        let q = &t.psi0.0;
        let re: f64 = q.iter().zip(g_psi0).map(|(a, b)| (a.conj() * b).re).sum();
        let g_u: Vec<Complex64> = g_psi0
            .iter()
            .zip(q)
            .zip(&t.u)
            .map(|((g, qj), u)| self.activation.derivative(*u).conj() * (g - qj * re) / t.s_norm)
            .collect();
        let g_a = g_u.iter().map(|gu| x.0.iter().map(|xk| gu * xk.conj()).collect()).collect();
        (g_a, g_u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub input: InputLayer,
    pub readout: Readout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub a1: Vec<Vec<Complex64>>,
    pub b1: Vec<Complex64>,
    pub a3: Vec<Complex64>,
    pub b3: Complex64,
}

impl ParamGrads {
    fn zeros_like(p: &ModelParams) -> Self {
        let z = Complex64::new(0.0, 0.0);
        ParamGrads {
            a1: vec![vec![z; p.input.in_dim()]; p.input.out_dim()],
            b1: vec![z; p.input.out_dim()],
            a3: vec![z; p.readout.a3.len()],
            b3: z,
        }
    }

    fn add_scaled(&mut self, o: &ParamGrads, s: f64) {
        for (r, ro) in self.a1.iter_mut().zip(&o.a1) {
            for (a, b) in r.iter_mut().zip(ro) {
                *a += b * s;
            }
        }
        for (a, b) in self.b1.iter_mut().zip(&o.b1) {
            *a += b * s;
        }
        for (a, b) in self.a3.iter_mut().zip(&o.a3) {
            *a += b * s;
        }
        self.b3 += o.b3 * s;
    }
}

impl ModelParams {
    /// Teacher-style parameters: identity input layer and the given readout.
    pub fn teacher(n: usize, readout: Readout) -> Self {
        ModelParams { input: InputLayer::identity(n), readout }
    }

    pub fn check(&self, n_vertices: usize) -> Result<()> {
        check_dim(n_vertices, self.input.out_dim())?;
        check_dim(n_vertices, self.input.b1.len())?;
        self.readout.check_dim(n_vertices)?;
        if self.input.a1.iter().any(|r| r.len() != self.input.in_dim()) {
            return Err(Error::InvalidInput("ragged A1".into()));
        }
        Ok(())
    }

    pub fn project(&mut self, b: &Bounds) {
        project_matrix(&mut self.input.a1, b.r_a);
        project_ball(&mut self.input.b1, b.r_b);
        project_ball(&mut self.readout.a3, b.r_a3);
        if self.readout.b3.norm() > b.r_b3 {
            self.readout.b3 *= b.r_b3 / self.readout.b3.norm();
        }
    }

    pub fn within_bounds(&self, b: &Bounds) -> bool {
        within(frobenius(&self.input.a1), b.r_a)
            && within(ScalarField(self.input.b1.clone()).norm(), b.r_b)
            && within(ScalarField(self.readout.a3.clone()).norm(), b.r_a3)
            && within(self.readout.b3.norm(), b.r_b3)
    }

    fn step(&mut self, g: &ParamGrads, lr: f64) {
        for (r, rg) in self.input.a1.iter_mut().zip(&g.a1) {
            for (a, d) in r.iter_mut().zip(rg) {
                *a -= d * lr;
            }
        }
        for (a, d) in self.input.b1.iter_mut().zip(&g.b1) {
            *a -= d * lr;
        }
        for (a, d) in self.readout.a3.iter_mut().zip(&g.a3) {
            *a -= d * lr;
        }
        self.readout.b3 -= g.b3 * lr;
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("parameters serialise")
    }
}

/// `(ŷ, steady state)` for input `x` on graph `g`.
pub fn forward(params: &ModelParams, g: &WeightedGraph, x: &ScalarField, config: &NlseConfig) -> Result<(Complex64, SteadyState)> {
    params.check(g.n_vertices())?;
    let psi0 = params.input.psi0(x)?;
    let steady = solve_refined(g, &psi0, config)?;
    let y = params.readout.apply(&steady.psi_inf)?;
    Ok((y, steady))
}

pub fn loss_sample(params: &ModelParams, g: &WeightedGraph, x: &ScalarField, y: Complex64, config: &NlseConfig) -> Result<f64> {
    let (y_hat, _) = forward(params, g, x, config)?;
    Ok((y_hat - y).norm_sqr())
}

/// Everything the gradient computations need about one sample.
#[derive(Debug, Clone)]
pub struct SampleEval {
    pub psi0: ScalarField,
    pub steady: SteadyState,
    pub y_hat: Complex64,
    pub loss: f64,
    readout: ReadoutGrad,
    /// Adjoint vector for the steady-state constraint.
    lambda: Vec<f64>,
    gamma: f64,
}

impl SampleEval {
    /// `∂ℓ/∂w(e)` through the steady state; `e` must be an edge of the graph
    /// the sample was evaluated on.
    pub fn weight_grad(&self, g: &WeightedGraph, e: Edge) -> Result<f64> {
        let field = NlseField::new(g, &self.psi0, self.gamma)?;
        let dg = dg_dw(&field, &self.steady.psi_inf, e)?;
        Ok(-dg.iter().enumerate().map(|(k, z)| self.lambda[2 * k] * z.re + self.lambda[2 * k + 1] * z.im).sum::<f64>())
    }

    /// `∂ℓ/∂ψ⁰` through the potential `|ψ⁰|²`.
    pub fn psi0_grad(&self) -> Result<Vec<Complex64>> {
        let psi = &self.steady.psi_inf.0;
        let n = psi.len();
        let c = -I + self.gamma;
        let mut out = Vec::with_capacity(n);
        let mut a = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            a[j] = c * psi[j];
            let col = project_perp(psi, &a)?;
            a[j] = Complex64::new(0.0, 0.0);
            let h: f64 = -col.iter().enumerate().map(|(k, z)| self.lambda[2 * k] * z.re + self.lambda[2 * k + 1] * z.im).sum::<f64>();
            out.push(self.psi0.0[j] * (2.0 * h));
        }
        Ok(out)
    }
}

/// Forward pass plus adjoint solve for `(x, y)`.
pub fn evaluate(params: &ModelParams, g: &WeightedGraph, x: &ScalarField, y: Complex64, config: &NlseConfig) -> Result<SampleEval> {
    params.check(g.n_vertices())?;
    let psi0 = params.input.psi0(x)?;
    let steady = solve_refined(g, &psi0, config)?;
    let readout = params.readout.grad(&steady.psi_inf, y)?;
    let field = NlseField::new(g, &psi0, config.gamma)?;
    let lambda = SteadyJacobian::new(&field, &steady.psi_inf)?.adjoint(&readout.d_psi);
    Ok(SampleEval { psi0, y_hat: readout.y_hat, loss: readout.loss, steady, readout, lambda, gamma: config.gamma })
}

/// Loss and parameter gradients for one sample.
pub fn param_gradients(
    params: &ModelParams,
    g: &WeightedGraph,
    x: &ScalarField,
    y: Complex64,
    config: &NlseConfig,
) -> Result<(f64, ParamGrads)> {
    let ev = evaluate(params, g, x, y, config)?;
    let trace = params.input.trace(x)?;
    let (a1, b1) = params.input.backward(&trace, x, &ev.psi0_grad()?);
    Ok((ev.loss, ParamGrads { a1, b1, a3: ev.readout.d_a3.clone(), b3: ev.readout.d_b3 }))
}

/// Mean loss over `samples`, solving each distinct sample once.
pub fn mean_loss(params: &ModelParams, g: &WeightedGraph, samples: &[Sample], config: &NlseConfig) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let groups = distinct_samples(samples);
    let losses: Vec<Result<f64>> = groups
        .par_iter()
        .map(|&(i, _)| {
            loss_sample(params, g, &samples[i].x, samples[i].y, config).map_err(|e| Error::Sample { sample: i, source: Box::new(e) })
        })
        .collect();
    let mut total = 0.0;
    for ((_, count), l) in groups.iter().zip(losses) {
        total += l? * *count as f64;
    }
    Ok(total / samples.len() as f64)
}

fn mean_param_gradients(
    params: &ModelParams,
    g: &WeightedGraph,
    samples: &[Sample],
    config: &NlseConfig,
) -> Result<(f64, ParamGrads)> {
    let groups = distinct_samples(samples);
    let parts: Vec<Result<(f64, ParamGrads)>> = groups
        .par_iter()
        .map(|&(i, _)| {
            param_gradients(params, g, &samples[i].x, samples[i].y, config)
                .map_err(|e| Error::Sample { sample: i, source: Box::new(e) })
        })
        .collect();
    let mut acc = ParamGrads::zeros_like(params);
    let mut loss = 0.0;
    let m = samples.len() as f64;
    for ((_, count), p) in groups.iter().zip(parts) {
        let (l, gr) = p?;
        let w = *count as f64 / m;
        loss += l * w;
        acc.add_scaled(&gr, w);
    }
    Ok((loss, acc))
}

/// How the graph is updated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Parameter step, then one moduli step, every epoch.
    #[default]
    Interleaved,
    /// Parameters only; the graph stays fixed.
    ParamsOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_params: f64,
    pub moduli: OptimizerConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub bounds: Bounds,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_params > 0.0 && self.lr_params.is_finite()) {
            return Err(Error::Config("lr_params must be positive".into()));
        }
        if self.moduli.batch_size != self.batch_size {
            return Err(Error::Config("moduli.batch_size must equal batch_size".into()));
        }
        self.moduli.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub n_edges: usize,
    pub b0: usize,
    pub b1: usize,
    /// Failure message when the epoch's updates were skipped.
    pub note: Option<String>,
}

fn history_row(
    epoch: usize,
    params: &ModelParams,
    g: &WeightedGraph,
    train: &[Sample],
    test: &[Sample],
    nlse: &NlseConfig,
    note: Option<String>,
) -> HistoryRow {
    let (b0, b1) = betti_numbers(g);
    let mut notes: Vec<String> = note.into_iter().collect();
    let mut eval = |set: &[Sample], what: &str| {
        mean_loss(params, g, set, nlse).unwrap_or_else(|e| {
            notes.push(format!("{what} loss unavailable: {e}"));
            f64::NAN
        })
    };
    let train_loss = eval(train, "train");
    let test_loss = if test.is_empty() { None } else { Some(eval(test, "test")) };
    HistoryRow {
        epoch,
        train_loss,
        test_loss,
        n_edges: g.n_edges(),
        b0,
        b1,
        note: if notes.is_empty() { None } else { Some(notes.join("; ")) },
    }
}

fn draw_batch<R: Rng>(train: &[Sample], size: usize, rng: &mut R) -> Vec<Sample> {
    (0..size).map(|_| train[rng.gen_range(0..train.len())].clone()).collect()
}

/// Minibatch SGD on the parameters interleaved with moduli steps on the graph.
/// History row 0 is the initialisation.
pub fn train(
    train_set: &[Sample],
    test_set: &[Sample],
    init: ModelParams,
    point: ModuliPoint,
    config: &TrainConfig,
    nlse: &NlseConfig,
) -> Result<(ModelParams, ModuliPoint, Vec<HistoryRow>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut params = init;
    params.check(point.graph.n_vertices())?;
    params.project(&config.bounds);
    let mut point = point;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::io::derive_seed(config.seed, "train.batches"));
    let mut moduli_rng = ChaCha8Rng::seed_from_u64(crate::io::derive_seed(config.seed, "train.moduli"));
    let mut history = vec![history_row(0, &params, &point.graph, train_set, test_set, nlse, None)];
    for epoch in 1..=config.epochs {
        let batch = draw_batch(train_set, config.batch_size, &mut rng);
        let mut note = None;
        match mean_param_gradients(&params, &point.graph, &batch, nlse) {
            Ok((_, g)) => {
                params.step(&g, config.lr_params);
                params.project(&config.bounds);
            }
            Err(e) => note = Some(format!("parameter step skipped: {e}")),
        }
        if config.schedule == Schedule::Interleaved {
            let out = algorithm1_step(&point, &batch, &params, &config.moduli, epoch - 1, nlse, &mut moduli_rng);
            if let Some(f) = &out.record.failure {
                note = Some(format!("moduli step skipped: {f}"));
            }
            point = out.point;
        }
        history.push(history_row(epoch, &params, &point.graph, train_set, test_set, nlse, note));
    }
    Ok((params, point, history))
}

/// Dense three-layer network `X ↦ σ₃(⟨a₃, σ₂(W₂ψ⁰ + b₂)⟩ + b₃)` sharing the
/// input layer and readout of the graph model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineParams {
    pub input: InputLayer,
    pub w2: Vec<Vec<Complex64>>,
    pub b2: Vec<Complex64>,
    #[serde(default)]
    pub activation2: Activation,
    pub readout: Readout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineGrads {
    pub a1: Vec<Vec<Complex64>>,
    pub b1: Vec<Complex64>,
    pub w2: Vec<Vec<Complex64>>,
    pub b2: Vec<Complex64>,
    pub a3: Vec<Complex64>,
    pub b3: Complex64,
}

impl BaselineParams {
    pub fn random<R: Rng + ?Sized>(hidden: usize, inp: usize, scale: f64, rng: &mut R) -> Self {
        let input = InputLayer::random(hidden, inp, scale, rng);
        let w2 = (0..hidden).map(|_| ScalarField::random(hidden, rng).0.into_iter().map(|z| z * scale).collect()).collect();
        let b2 = ScalarField::random(hidden, rng).0.into_iter().map(|z| z * scale).collect();
        BaselineParams { input, w2, b2, activation2: Activation::Tanh, readout: Readout::random(hidden, 1.0, rng) }
    }

    fn hidden(&self, psi0: &ScalarField) -> (Vec<Complex64>, ScalarField) {
        let v: Vec<Complex64> = self
            .w2
            .iter()
            .zip(&self.b2)
            .map(|(row, b)| row.iter().zip(&psi0.0).map(|(w, p)| w * p).sum::<Complex64>() + b)
            .collect();
        let h = ScalarField(v.iter().map(|z| self.activation2.apply(*z)).collect());
        (v, h)
    }

    pub fn forward(&self, x: &ScalarField) -> Result<Complex64> {
        let psi0 = self.input.psi0(x)?;
        let (_, h) = self.hidden(&psi0);
        self.readout.apply(&h)
    }

    pub fn loss(&self, x: &ScalarField, y: Complex64) -> Result<f64> {
        Ok((self.forward(x)? - y).norm_sqr())
    }

    pub fn gradients(&self, x: &ScalarField, y: Complex64) -> Result<(f64, BaselineGrads)> {
        let trace = self.input.trace(x)?;
        let (v, h) = self.hidden(&trace.psi0);
        let rg = self.readout.grad(&h, y)?;
        let g_h = ScalarField::from_real_vec(&rg.d_psi).0;
        let g_v: Vec<Complex64> = g_h.iter().zip(&v).map(|(g, vj)| self.activation2.derivative(*vj).conj() * g).collect();
        let w2 = g_v.iter().map(|gv| trace.psi0.0.iter().map(|p| gv * p.conj()).collect()).collect();
        let n = trace.psi0.len();
        let g_psi0: Vec<Complex64> = (0..n).map(|k| self.w2.iter().zip(&g_v).map(|(row, gv)| row[k].conj() * gv).sum()).collect();
        let (a1, b1) = self.input.backward(&trace, x, &g_psi0);
        Ok((rg.loss, BaselineGrads { a1, b1, w2, b2: g_v, a3: rg.d_a3, b3: rg.d_b3 }))
    }

    pub fn project(&mut self, b: &Bounds) {
        project_matrix(&mut self.input.a1, b.r_a);
        project_ball(&mut self.input.b1, b.r_b);
        project_matrix(&mut self.w2, b.r_w2);
        project_ball(&mut self.b2, b.r_b2);
        project_ball(&mut self.readout.a3, b.r_a3);
        if self.readout.b3.norm() > b.r_b3 {
            self.readout.b3 *= b.r_b3 / self.readout.b3.norm();
        }
    }

    pub fn within_bounds(&self, b: &Bounds) -> bool {
        within(frobenius(&self.input.a1), b.r_a)
            && within(ScalarField(self.input.b1.clone()).norm(), b.r_b)
            && within(frobenius(&self.w2), b.r_w2)
            && within(ScalarField(self.b2.clone()).norm(), b.r_b2)
            && within(ScalarField(self.readout.a3.clone()).norm(), b.r_a3)
            && within(self.readout.b3.norm(), b.r_b3)
    }

    fn step(&mut self, g: &BaselineGrads, lr: f64) {
        let sub = |a: &mut [Complex64], d: &[Complex64]| {
            for (x, y) in a.iter_mut().zip(d) {
                *x -= y * lr;
            }
        };
        for (r, d) in self.input.a1.iter_mut().zip(&g.a1) {
            sub(r, d);
        }
        sub(&mut self.input.b1, &g.b1);
        for (r, d) in self.w2.iter_mut().zip(&g.w2) {
            sub(r, d);
        }
        sub(&mut self.b2, &g.b2);
        sub(&mut self.readout.a3, &g.a3);
        self.readout.b3 -= g.b3 * lr;
    }

    pub fn mean_loss(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (i, s) in samples.iter().enumerate() {
            total += self.loss(&s.x, s.y).map_err(|e| Error::Sample { sample: i, source: Box::new(e) })?;
        }
        Ok(total / samples.len() as f64)
    }
}

/// Minibatch SGD for the baseline; same batching and projection policy as
/// [`train`].
pub fn baseline_train(
    train_set: &[Sample],
    test_set: &[Sample],
    init: BaselineParams,
    config: &TrainConfig,
) -> Result<(BaselineParams, Vec<HistoryRow>)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut params = init;
    params.project(&config.bounds);
    let mut rng = ChaCha8Rng::seed_from_u64(crate::io::derive_seed(config.seed, "baseline.batches"));
    let row = |epoch: usize, p: &BaselineParams, note: Option<String>| -> Result<HistoryRow> {
        Ok(HistoryRow {
            epoch,
            train_loss: p.mean_loss(train_set)?,
            test_loss: if test_set.is_empty() { None } else { Some(p.mean_loss(test_set)?) },
            n_edges: 0,
            b0: 0,
            b1: 0,
            note,
        })
    };
    let mut history = vec![row(0, &params, None)?];
    for epoch in 1..=config.epochs {
        let batch = draw_batch(train_set, config.batch_size, &mut rng);
        let m = batch.len() as f64;
        let mut acc: Option<BaselineGrads> = None;
        let mut note = None;
        for s in &batch {
            match params.gradients(&s.x, s.y) {
                Ok((_, g)) => match acc.as_mut() {
                    None => acc = Some(scale_baseline(g, 1.0 / m)),
                    Some(a) => add_baseline(a, &g, 1.0 / m),
                },
                Err(e) => {
                    note = Some(format!("parameter step skipped: {e}"));
                    acc = None;
                    break;
                }
            }
        }
        if let Some(g) = acc {
            params.step(&g, config.lr_params);
            params.project(&config.bounds);
        }
        history.push(row(epoch, &params, note)?);
    }
    Ok((params, history))
}

fn scale_baseline(g: BaselineGrads, s: f64) -> BaselineGrads {
    let z = Complex64::new(0.0, 0.0);
    let mut out = BaselineGrads {
        a1: g.a1.iter().map(|r| vec![z; r.len()]).collect(),
        b1: vec![z; g.b1.len()],
        w2: g.w2.iter().map(|r| vec![z; r.len()]).collect(),
        b2: vec![z; g.b2.len()],
        a3: vec![z; g.a3.len()],
        b3: z,
    };
    add_baseline(&mut out, &g, s);
    out
}

fn add_baseline(acc: &mut BaselineGrads, g: &BaselineGrads, s: f64) {
    let add = |a: &mut [Complex64], d: &[Complex64]| {
        for (x, y) in a.iter_mut().zip(d) {
            *x += y * s;
        }
    };
    for (r, d) in acc.a1.iter_mut().zip(&g.a1) {
        add(r, d);
    }
    add(&mut acc.b1, &g.b1);
    for (r, d) in acc.w2.iter_mut().zip(&g.w2) {
        add(r, d);
    }
    add(&mut acc.b2, &g.b2);
    add(&mut acc.a3, &g.a3);
    acc.b3 += g.b3 * s;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub m: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub gap: f64,
    /// `3/√m`, the sampling-noise scale for identical distributions.
    pub noise_bound: f64,
}

pub fn generalization_gap(train_loss: f64, test_loss: f64, m: usize) -> GapReport {
    GapReport { m, train_loss, test_loss, gap: test_loss - train_loss, noise_bound: 3.0 / (m.max(1) as f64).sqrt() }
}
