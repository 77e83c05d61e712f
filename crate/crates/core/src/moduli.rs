//! Stochastic gradient descent over weighted edge sets: weight updates inside
//! a stratum, edge addition from negative test gradients and pruning of
//! light edges.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::NlseConfig;
use crate::error::{Error, Result};
use crate::graph::{Edge, WeightedGraph};
use crate::io::{derive_seed, finite_or_null, json_line};
use crate::model::{distinct_samples, evaluate, ModelParams, Sample, SampleEval};
use crate::topo::{betti_numbers, TeacherSampler};

/// Step size `η_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Constant(f64),
    /// `η_t = schedule[min(t, len - 1)]`.
    Schedule(Vec<f64>),
    /// `[[t0, η], [t1, η'], ...]`: `η` from iteration `t0` on, `η'` from `t1`.
    Piecewise(Vec<(usize, f64)>),
    /// `η_t = eta0 / sqrt(t + 1)`.
    InvSqrt { eta0: f64 },
}

impl Default for StepSize {
    fn default() -> Self {
        StepSize::Constant(0.05)
    }
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            StepSize::Constant(e) => *e,
            StepSize::Schedule(v) => v[t.min(v.len() - 1)],
            StepSize::Piecewise(v) => v.iter().take_while(|(start, _)| *start <= t).last().map_or(v[0].1, |p| p.1),
            StepSize::InvSqrt { eta0 } => eta0 / ((t + 1) as f64).sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x > 0.0 && x.is_finite();
        let good = match self {
            StepSize::Constant(e) => ok(*e),
            StepSize::Schedule(v) => !v.is_empty() && v.iter().all(|e| ok(*e)),
            StepSize::Piecewise(v) => !v.is_empty() && v.iter().all(|p| ok(p.1)) && v.windows(2).all(|w| w[0].0 < w[1].0),
            StepSize::InvSqrt { eta0 } => ok(*eta0),
        };
        if good {
            Ok(())
        } else {
            Err(Error::Config("eta must be positive".into()))
        }
    }
}

fn one() -> f64 {
    1.0
}

fn ten() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(rename = "T")]
    pub iterations: usize,
    /// Probability of each edge in the initial edge set.
    pub p: f64,
    /// Test weight for candidates and pruning threshold.
    pub theta: f64,
    /// Addition threshold on the test gradient.
    #[serde(rename = "Theta")]
    pub big_theta: f64,
    #[serde(default)]
    pub eta: StepSize,
    pub batch_size: usize,
    #[serde(default)]
    pub mu1: f64,
    #[serde(default)]
    pub mu2: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of absent edges tested per iteration.
    #[serde(default = "one")]
    pub candidate_fraction: f64,
    /// Stop once the point has been stable for this many iterations.
    #[serde(default = "ten")]
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            iterations: 200,
            p: 0.5,
            theta: 0.01,
            big_theta: 0.01,
            eta: StepSize::default(),
            batch_size: 32,
            mu1: 0.0,
            mu2: 0.0,
            seed: 0,
            candidate_fraction: 1.0,
            patience: 10,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad("p must lie in (0, 1]");
        }
        if !(self.theta >= 0.0 && self.theta < 1.0) {
            return bad("theta must lie in [0, 1)");
        }
        if !(self.big_theta > 0.0 && self.big_theta.is_finite()) {
            return bad("Theta must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.mu1 >= 0.0 && self.mu2 >= 0.0) {
            return bad("mu1 and mu2 must be >= 0");
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction <= 1.0) {
            return bad("candidate_fraction must lie in (0, 1]");
        }
        self.eta.validate()
    }
}

/// A point `(E, w)` of the moduli space.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuliPoint {
    pub graph: WeightedGraph,
}

impl ModuliPoint {
    pub fn new(graph: WeightedGraph) -> Self {
        ModuliPoint { graph }
    }

    /// Each vertex pair is an edge with probability `p`, all at weight 1.
    pub fn random<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Self> {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                if rng.gen::<f64>() < p {
                    edges.push((u, v, 1.0));
                }
            }
        }
        Ok(ModuliPoint { graph: WeightedGraph::new(n, &edges)? })
    }

    pub fn edge_set(&self) -> BTreeSet<Edge> {
        self.graph.edge_set()
    }
}

/// How the initial point of a run is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialPoint {
    Random { n: usize },
    /// Like `Random`, redrawn until the graph is connected (at most 1000 draws).
    RandomConnected { n: usize },
    Given(WeightedGraph),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub data: f64,
    pub l2: f64,
    pub l1: f64,
}

/// `(μ₂/2)‖w‖² + μ₁‖w‖₁`.
pub fn regularizer(g: &WeightedGraph, mu1: f64, mu2: f64) -> (f64, f64) {
    let w = g.weights();
    (0.5 * mu2 * w.iter().map(|x| x * x).sum::<f64>(), mu1 * w.iter().map(|x| x.abs()).sum::<f64>())
}

fn check_batch(batch: &[Sample]) -> Result<()> {
    let first = batch.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    if batch.iter().any(|s| s.x.len() != first.x.len()) {
        return Err(Error::InvalidInput("batch inputs differ in dimension".into()));
    }
    Ok(())
}

/// Evaluations of the distinct samples of a batch, with weights `count / B`.
fn evaluate_batch(params: &ModelParams, g: &WeightedGraph, batch: &[Sample], nlse: &NlseConfig) -> Result<Vec<(f64, SampleEval)>> {
    check_batch(batch)?;
    let m = batch.len() as f64;
    let groups = distinct_samples(batch);
    let evals: Vec<Result<SampleEval>> = groups
        .par_iter()
        .map(|&(i, _)| {
            evaluate(params, g, &batch[i].x, batch[i].y, nlse).map_err(|e| Error::Sample { sample: i, source: Box::new(e) })
        })
        .collect();
    groups.iter().zip(evals).map(|((_, c), e)| Ok((*c as f64 / m, e?))).collect()
}

fn data_term(evals: &[(f64, SampleEval)]) -> f64 {
    evals.iter().map(|(w, e)| w * e.loss).sum()
}

fn data_gradient(evals: &[(f64, SampleEval)], g: &WeightedGraph, e: Edge) -> Result<f64> {
    let mut acc = 0.0;
    for (w, ev) in evals {
        acc += w * ev.weight_grad(g, e)?;
    }
    Ok(acc)
}

/// Mean squared readout error over the batch plus the weight regulariser.
pub fn regularized_loss(
    point: &ModuliPoint,
    batch: &[Sample],
    params: &ModelParams,
    mu1: f64,
    mu2: f64,
    nlse: &NlseConfig,
) -> Result<LossBreakdown> {
    let evals = evaluate_batch(params, &point.graph, batch, nlse)?;
    let data = data_term(&evals);
    let (l2, l1) = regularizer(&point.graph, mu1, mu2);
    Ok(LossBreakdown { total: data + l2 + l1, data, l2, l1 })
}

/// Batch-mean `∂ℒ/∂w(e)` including `μ₂w(e) + μ₁`. With `test_weight`, `e`
/// is inserted at that weight first.
pub fn stochastic_gradient(
    point: &ModuliPoint,
    batch: &[Sample],
    e: Edge,
    test_weight: Option<f64>,
    params: &ModelParams,
    mu1: f64,
    mu2: f64,
    nlse: &NlseConfig,
) -> Result<f64> {
    let (g, w) = match test_weight {
        Some(t) if t > 0.0 => (point.graph.with_edge(e, t)?, t),
        Some(_) => (point.graph.clone(), 0.0),
        None => (point.graph.clone(), point.graph.weight(e).ok_or(Error::MissingEdge(e.lo, e.hi))?),
    };
    let evals = evaluate_batch(params, &g, batch, nlse)?;
    Ok(data_gradient(&evals, &g, e)? + mu2 * w + mu1)
}

/// Largest per-sample variance of the data gradient over the edges of `point`.
/// Used as `σ²` when comparing strata counts against the expected shape.
pub fn gradient_variance(point: &ModuliPoint, batch: &[Sample], params: &ModelParams, nlse: &NlseConfig) -> Result<f64> {
    let evals = evaluate_batch(params, &point.graph, batch, nlse)?;
    let mut worst: f64 = 0.0;
    for &e in point.graph.edges() {
        let mut mean = 0.0;
        let mut sq = 0.0;
        for (w, ev) in &evals {
            let g = ev.weight_grad(&point.graph, e)?;
            mean += w * g;
            sq += w * g * g;
        }
        worst = worst.max(sq - mean * mean);
    }
    Ok(worst.max(0.0))
}

/// Per-iteration log entry: the point after the step and the events that
/// produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub edges: Vec<Edge>,
    pub weights: Vec<f64>,
    pub added: Vec<Edge>,
    pub pruned: Vec<Edge>,
    /// Regularised batch loss at the point where gradients were taken.
    pub loss: f64,
    /// Test gradients of the candidates examined.
    pub tested: Vec<(Edge, f64)>,
    /// Weights of the previous edges after the gradient step, before pruning.
    pub post_update: Vec<(Edge, f64)>,
    pub failure: Option<String>,
}

impl IterationRecord {
    pub fn to_json(&self) -> serde_json::Value {
        let pair = |e: &Edge| [e.lo, e.hi];
        serde_json::json!({
            "t": self.t,
            "edges": self.edges.iter().map(pair).collect::<Vec<_>>(),
            "weights": self.weights,
            "added": self.added.iter().map(pair).collect::<Vec<_>>(),
            "pruned": self.pruned.iter().map(pair).collect::<Vec<_>>(),
            "loss": finite_or_null(self.loss),
            "tested": self.tested.iter().map(|(e, g)| serde_json::json!([e.lo, e.hi, finite_or_null(*g)])).collect::<Vec<_>>(),
            "post_update": self.post_update.iter().map(|(e, w)| serde_json::json!([e.lo, e.hi, w])).collect::<Vec<_>>(),
            "failure": self.failure,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VisitedStratum {
    pub edges: Vec<Edge>,
    pub first_iteration: usize,
}

/// Visited edge sets and per-iteration events of a run. Record `t` holds
/// `(E_t, w_t)`; record 0 is the initial point.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct StrataLog {
    pub n_vertices: usize,
    pub visited: Vec<VisitedStratum>,
    pub records: Vec<IterationRecord>,
}

impl StrataLog {
    fn start(g: &WeightedGraph) -> Self {
        let mut log = StrataLog { n_vertices: g.n_vertices(), ..Default::default() };
        log.push(IterationRecord {
            t: 0,
            edges: g.edges().to_vec(),
            weights: g.weights().to_vec(),
            added: vec![],
            pruned: vec![],
            loss: f64::NAN,
            tested: vec![],
            post_update: vec![],
            failure: None,
        });
        log
    }

    fn push(&mut self, rec: IterationRecord) {
        if !self.visited.iter().any(|v| v.edges == rec.edges) {
            self.visited.push(VisitedStratum { edges: rec.edges.clone(), first_iteration: rec.t });
        }
        self.records.push(rec);
    }

    /// Graph at record `t` (clamped to the last record).
    pub fn graph_at(&self, t: usize) -> Result<WeightedGraph> {
        let r = &self.records[t.min(self.records.len() - 1)];
        let edges: Vec<(usize, usize, f64)> = r.edges.iter().zip(&r.weights).map(|(e, w)| (e.lo, e.hi, *w)).collect();
        WeightedGraph::new(self.n_vertices, &edges)
    }

    pub fn to_jsonl(&self) -> String {
        self.records.iter().map(|r| json_line(&r.to_json())).collect()
    }

    pub fn last_iteration(&self) -> usize {
        self.records.last().map_or(0, |r| r.t)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub point: ModuliPoint,
    pub record: IterationRecord,
}

fn all_pairs(n: usize) -> impl Iterator<Item = Edge> {
    (0..n).flat_map(move |u| (u + 1..n).map(move |v| Edge::new(u, v)))
}

/// One iteration of the add / update / prune scheme at iteration index `t`.
/// Failures leave the point unchanged and are recorded.
pub fn algorithm1_step<R: Rng + ?Sized>(
    point: &ModuliPoint,
    batch: &[Sample],
    params: &ModelParams,
    config: &OptimizerConfig,
    t: usize,
    nlse: &NlseConfig,
    rng: &mut R,
) -> StepOutcome {
    let g = &point.graph;
    let present = g.edge_set();
    let absent: Vec<Edge> = all_pairs(g.n_vertices()).filter(|e| !present.contains(e)).collect();
    let candidates: Vec<Edge> = if config.candidate_fraction >= 1.0 || absent.is_empty() {
        absent
    } else {
        let k = ((config.candidate_fraction * absent.len() as f64).ceil() as usize).min(absent.len());
        let mut idx = sample_indices(rng, absent.len(), k).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| absent[i]).collect()
    };
    match try_step(point, batch, params, config, t, nlse, &candidates) {
        Ok(out) => out,
        Err(e) => StepOutcome {
            point: point.clone(),
            record: IterationRecord {
                t: t + 1,
                edges: g.edges().to_vec(),
                weights: g.weights().to_vec(),
                added: vec![],
                pruned: vec![],
                loss: f64::NAN,
                tested: vec![],
                post_update: vec![],
                failure: Some(e.to_string()),
            },
        },
    }
}

fn try_step(
    point: &ModuliPoint,
    batch: &[Sample],
    params: &ModelParams,
    config: &OptimizerConfig,
    t: usize,
    nlse: &NlseConfig,
    candidates: &[Edge],
) -> Result<StepOutcome> {
    let g = &point.graph;
    let evals = evaluate_batch(params, g, batch, nlse)?;
    let (l2, l1) = regularizer(g, config.mu1, config.mu2);
    let loss = data_term(&evals) + l2 + l1;
    let theta = config.theta;

    let tested: Vec<(Edge, f64)> = if theta > 0.0 {
        candidates
            .par_iter()
            .map(|&e| {
                let gt = g.with_edge(e, theta)?;
                let ev = evaluate_batch(params, &gt, batch, nlse)?;
                Ok((e, data_gradient(&ev, &gt, e)? + config.mu2 * theta + config.mu1))
            })
            .collect::<Result<_>>()?
    } else {
        candidates.iter().map(|&e| Ok((e, data_gradient(&evals, g, e)? + config.mu1))).collect::<Result<_>>()?
    };

    let eta = config.eta.at(t);
    let mut post_update = Vec::with_capacity(g.n_edges());
    let mut next: BTreeMap<Edge, f64> = BTreeMap::new();
    let mut pruned = Vec::new();
    for (&e, &w) in g.edges().iter().zip(g.weights()) {
        let grad = data_gradient(&evals, g, e)? + config.mu2 * w + config.mu1;
        let nw = (w - eta * grad).max(0.0);
        post_update.push((e, nw));
        if nw < theta || nw == 0.0 {
            pruned.push(e);
        } else {
            next.insert(e, nw);
        }
    }
    let mut added = Vec::new();
    if theta > 0.0 {
        for &(e, gt) in &tested {
            if gt < -config.big_theta {
                added.push(e);
                next.insert(e, 2.0 * theta);
            }
        }
    }
    let edges: Vec<(usize, usize, f64)> = next.iter().map(|(e, w)| (e.lo, e.hi, *w)).collect();
    let graph = g.with_edges(&edges)?;
    Ok(StepOutcome {
        record: IterationRecord {
            t: t + 1,
            edges: graph.edges().to_vec(),
            weights: graph.weights().to_vec(),
            added,
            pruned,
            loss,
            tested,
            post_update,
            failure: None,
        },
        point: ModuliPoint { graph },
    })
}

/// Supplier of training batches.
pub trait BatchSource {
    fn next_batch(&mut self, t: usize, size: usize) -> Result<Vec<Sample>>;
}

impl BatchSource for TeacherSampler {
    fn next_batch(&mut self, _t: usize, size: usize) -> Result<Vec<Sample>> {
        self.batch(size)
    }
}

/// The same batch every iteration (deterministic full gradients).
#[derive(Debug, Clone)]
pub struct FixedBatch(pub Vec<Sample>);

impl BatchSource for FixedBatch {
    fn next_batch(&mut self, _t: usize, _size: usize) -> Result<Vec<Sample>> {
        Ok(self.0.clone())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub point: ModuliPoint,
    pub log: StrataLog,
    pub loss_history: Vec<f64>,
}

fn stable(a: &WeightedGraph, b: &WeightedGraph) -> bool {
    a.edges() == b.edges() && a.weights().iter().zip(b.weights()).all(|(x, y)| (x - y).abs() <= 1e-10)
}

impl InitialPoint {
    /// Draws the starting point with the `moduli.init` stream of `config.seed`.
    pub fn realize(self, config: &OptimizerConfig) -> Result<ModuliPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "moduli.init"));
        match self {
            InitialPoint::Random { n } => ModuliPoint::random(n, config.p, &mut rng),
            InitialPoint::RandomConnected { n } => {
                for _ in 0..1000 {
                    let p = ModuliPoint::random(n, config.p, &mut rng)?;
                    if betti_numbers(&p.graph).0 == 1 {
                        return Ok(p);
                    }
                }
                Err(Error::Config(format!("no connected initial graph drawn with p = {}", config.p)))
            }
            InitialPoint::Given(g) => Ok(ModuliPoint::new(g)),
        }
    }
}

/// Runs up to `T` iterations, stopping early once `(E, w)` has stayed put
/// (within 1e-10) for `patience` successive iterations.
pub fn run(
    config: &OptimizerConfig,
    source: &mut dyn BatchSource,
    init: InitialPoint,
    params: &ModelParams,
    nlse: &NlseConfig,
) -> Result<RunResult> {
    config.validate()?;
    let mut point = init.realize(config)?;
    params.check(point.graph.n_vertices())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "moduli.candidates"));
    let mut log = StrataLog::start(&point.graph);
    let mut loss_history = Vec::new();
    let mut quiet = 0;
    for t in 0..config.iterations {
        let out = match source.next_batch(t, config.batch_size) {
            Ok(batch) => algorithm1_step(&point, &batch, params, config, t, nlse, &mut rng),
            Err(e) => StepOutcome {
                point: point.clone(),
                record: IterationRecord {
                    t: t + 1,
                    edges: point.graph.edges().to_vec(),
                    weights: point.graph.weights().to_vec(),
                    added: vec![],
                    pruned: vec![],
                    loss: f64::NAN,
                    tested: vec![],
                    post_update: vec![],
                    failure: Some(format!("sampler: {e}")),
                },
            },
        };
        loss_history.push(out.record.loss);
        let failed = out.record.failure.is_some();
        quiet = if !failed && stable(&point.graph, &out.point.graph) { quiet + 1 } else { 0 };
        point = out.point;
        log.push(out.record);
        if config.patience > 0 && quiet >= config.patience {
            break;
        }
    }
    Ok(RunResult { point, log, loss_history })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StrataCount {
    pub count: usize,
    pub true_subset_count: usize,
    pub spurious_count: usize,
}

/// Distinct visited strata, distinct `E ∩ E_true` parts, and distinct
/// non-empty spurious parts `E ∖ E_true`.
pub fn visited_strata_count(log: &StrataLog, e_true: &BTreeSet<Edge>) -> StrataCount {
    let mut trues = BTreeSet::new();
    let mut spurious = BTreeSet::new();
    for v in &log.visited {
        let (t, s): (Vec<Edge>, Vec<Edge>) = v.edges.iter().partition(|e| e_true.contains(e));
        trues.insert(t);
        if !s.is_empty() {
            spurious.insert(s);
        }
    }
    StrataCount { count: log.visited.len(), true_subset_count: trues.len(), spurious_count: spurious.len() }
}

/// Whether `E_t ∩ E_true` only grows along the run.
pub fn true_part_is_monotone(log: &StrataLog, e_true: &BTreeSet<Edge>) -> bool {
    let parts: Vec<BTreeSet<Edge>> =
        log.records.iter().map(|r| r.edges.iter().filter(|e| e_true.contains(e)).copied().collect()).collect();
    parts.windows(2).all(|w| w[0].is_subset(&w[1]))
}

/// Reference shape `2^k (1 + c N² k σ² / B)` for the number of visited strata.
pub fn strata_shape(n: usize, k: usize, sigma2: f64, batch: usize, c: f64) -> f64 {
    2f64.powi(k as i32) * (1.0 + c * (n * n * k) as f64 * sigma2 / batch as f64)
}

/// The `c` for which [`strata_shape`] equals `count`.
pub fn fit_strata_constant(count: usize, n: usize, k: usize, sigma2: f64, batch: usize) -> Option<f64> {
    let denom = (n * n * k) as f64 * sigma2 / batch as f64;
    (denom > 0.0).then(|| (count as f64 / 2f64.powi(k as i32) - 1.0) / denom)
}

/// Checks that the events in `log` follow the add and prune rules.
pub fn replay_check(log: &StrataLog, config: &OptimizerConfig) -> std::result::Result<(), String> {
    for w in log.records.windows(2) {
        let (prev, cur) = (&w[0], &w[1]);
        if cur.failure.is_some() {
            if prev.edges != cur.edges {
                return Err(format!("t={}: failed step changed the edge set", cur.t));
            }
            continue;
        }
        let before: BTreeSet<Edge> = prev.edges.iter().copied().collect();
        let after: BTreeSet<Edge> = cur.edges.iter().copied().collect();
        let new: BTreeSet<Edge> = after.difference(&before).copied().collect();
        let gone: BTreeSet<Edge> = before.difference(&after).copied().collect();
        let should_add: BTreeSet<Edge> = cur.tested.iter().filter(|(_, g)| *g < -config.big_theta).map(|(e, _)| *e).collect();
        let should_prune: BTreeSet<Edge> =
            cur.post_update.iter().filter(|(_, w)| *w < config.theta || *w == 0.0).map(|(e, _)| *e).collect();
        if config.theta > 0.0 && new != should_add {
            return Err(format!("t={}: added {:?}, rule says {:?}", cur.t, new, should_add));
        }
        if gone != should_prune {
            return Err(format!("t={}: pruned {:?}, rule says {:?}", cur.t, gone, should_prune));
        }
        if cur.weights.iter().any(|w| *w < config.theta) {
            return Err(format!("t={}: retained weight below theta", cur.t));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Readout;
    use crate::topo::{build_ground_truth, make_teacher_sampler, ManifoldSpec, TeacherSpec, WeightExponent};
    use num_complex::Complex64;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn triangle() -> WeightedGraph {
        WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 0.7), (0, 2, 1.3)]).unwrap()
    }

    fn params3() -> ModelParams {
        ModelParams::teacher(3, Readout::new(vec![c(1.0, 0.5), c(-0.7, 0.2), c(0.4, -0.9)]))
    }

    fn batch3() -> Vec<Sample> {
        vec![
            Sample { x: ScalarFieldExt::unit(&[0.8, 0.6, 0.0]), y: c(0.3, 0.0), center: None },
            Sample { x: ScalarFieldExt::unit(&[0.1, 0.5, 0.9]), y: c(0.9, 0.0), center: None },
        ]
    }

    struct ScalarFieldExt;
    impl ScalarFieldExt {
        fn unit(v: &[f64]) -> crate::graph::ScalarField {
            crate::graph::ScalarField::from_real(v).normalized().unwrap()
        }
    }

    #[test]
    fn regularizer_examples() {
        let g = WeightedGraph::new(3, &[]).unwrap();
        assert_eq!(regularizer(&g, 0.3, 0.7), (0.0, 0.0));
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 2.0)]).unwrap();
        let (l2, l1) = regularizer(&g, 0.1, 0.2);
        assert!((l2 + l1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_fd_of_the_loss() {
        let point = ModuliPoint::new(triangle());
        let nlse = NlseConfig::default();
        let p = params3();
        let batch = batch3();
        for (k, &e) in point.graph.edges().iter().enumerate() {
            let g = stochastic_gradient(&point, &batch, e, None, &p, 0.05, 0.1, &nlse).unwrap();
            let h = 1e-5;
            let at = |d: f64| {
                let mut gr = point.graph.clone();
                gr.set_weight(k, point.graph.weights()[k] + d);
                regularized_loss(&ModuliPoint::new(gr), &batch, &p, 0.05, 0.1, &nlse).unwrap().total
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((g - fd).abs() < 1e-3 * fd.abs(), "{e}: {g} vs {fd}");
        }
    }

    #[test]
    fn candidate_gradient_matches_fd() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 0.7)]).unwrap();
        let point = ModuliPoint::new(g.clone());
        let nlse = NlseConfig::default();
        let p = params3();
        let batch = batch3();
        let e = Edge::new(0, 2);
        let theta = 0.05;
        let got = stochastic_gradient(&point, &batch, e, Some(theta), &p, 0.0, 0.0, &nlse).unwrap();
        let h = 1e-5;
        let at = |w: f64| regularized_loss(&ModuliPoint::new(g.with_edge(e, w).unwrap()), &batch, &p, 0.0, 0.0, &nlse).unwrap().data;
        let fd = (at(theta + h) - at(theta - h)) / (2.0 * h);
        assert!((got - fd).abs() < 1e-3 * fd.abs());
        // zero test weight differentiates at the current graph
        let at0 = stochastic_gradient(&point, &batch, e, Some(0.0), &p, 0.0, 0.0, &nlse).unwrap();
        let fd0 = (at(h) - regularized_loss(&point, &batch, &p, 0.0, 0.0, &nlse).unwrap().data) / h;
        assert!((at0 - fd0).abs() < 1e-3 * fd0.abs().max(1e-3));
    }

    #[test]
    fn constant_readout_gives_pure_regularizer_gradient() {
        let point = ModuliPoint::new(triangle());
        let nlse = NlseConfig::default();
        let p = ModelParams::teacher(3, Readout::new(vec![c(0.0, 0.0); 3]));
        let batch = batch3();
        for (&e, &w) in point.graph.edges().iter().zip(point.graph.weights()) {
            let g = stochastic_gradient(&point, &batch, e, None, &p, 0.3, 0.2, &nlse).unwrap();
            assert_eq!(g, 0.2 * w + 0.3);
        }
    }

    #[test]
    fn disabled_rules_give_plain_sgd() {
        let point = ModuliPoint::new(triangle());
        let cfg = OptimizerConfig { theta: 0.0, big_theta: 1e9, eta: StepSize::Constant(0.1), ..Default::default() };
        let nlse = NlseConfig::default();
        let p = params3();
        let batch = batch3();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = algorithm1_step(&point, &batch, &p, &cfg, 0, &nlse, &mut rng);
        assert!(out.record.failure.is_none());
        assert_eq!(out.point.graph.edges(), point.graph.edges());
        for (k, &e) in point.graph.edges().iter().enumerate() {
            let g = stochastic_gradient(&point, &batch, e, None, &p, 0.0, 0.0, &nlse).unwrap();
            assert!((out.point.graph.weights()[k] - (point.graph.weights()[k] - 0.1 * g)).abs() < 1e-14);
        }
    }

    #[test]
    fn add_and_prune_follow_the_rules() {
        let g = WeightedGraph::new(3, &[(0, 1, 1.0), (1, 2, 0.7)]).unwrap();
        let point = ModuliPoint::new(g);
        let nlse = NlseConfig::default();
        let p = params3();
        let batch = batch3();
        let e = Edge::new(0, 2);
        let gt = stochastic_gradient(&point, &batch, e, Some(0.05), &p, 0.0, 0.0, &nlse).unwrap();
        // Θ just below |g|: the candidate must be added at exactly 2θ
        let cfg = OptimizerConfig { theta: 0.05, big_theta: gt.abs() * 0.999, eta: StepSize::Constant(0.5), mu1: 0.0, ..Default::default() };
        assert!(gt < 0.0, "{gt}");
        let out = algorithm1_step(&point, &batch, &p, &cfg, 0, &nlse, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out.record.added, vec![e]);
        assert_eq!(out.point.graph.weight(e), Some(0.1));
        let cfg2 = OptimizerConfig { big_theta: gt.abs() * 1.001, ..cfg.clone() };
        let out2 = algorithm1_step(&point, &batch, &p, &cfg2, 0, &nlse, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(out2.record.added.is_empty());
        for out in [&out, &out2] {
            assert!(out.point.graph.weights().iter().all(|w| *w >= cfg.theta));
        }
        let mut log = StrataLog::start(&point.graph);
        log.push(out.record.clone());
        replay_check(&log, &cfg).unwrap();
    }

    #[test]
    fn failed_step_keeps_the_point() {
        let point = ModuliPoint::new(triangle());
        let p = ModelParams::teacher(3, Readout::new(vec![c(1.0, 0.0); 3]));
        let nlse = NlseConfig { t_max: 0.01, ..Default::default() };
        let batch = batch3();
        let out = algorithm1_step(&point, &batch, &p, &OptimizerConfig::default(), 0, &nlse, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(out.record.failure.is_some());
        assert_eq!(out.point, point);
    }

    #[test]
    fn zero_iterations_return_the_initial_point() {
        let cfg = OptimizerConfig { iterations: 0, p: 0.5, seed: 4, ..Default::default() };
        let p = ModelParams::teacher(4, Readout::new(vec![c(1.0, 0.0); 4]));
        let r = run(&cfg, &mut FixedBatch(vec![]), InitialPoint::Random { n: 4 }, &p, &NlseConfig::default()).unwrap();
        assert_eq!(r.log.visited.len(), 1);
        assert_eq!(r.log.records.len(), 1);
        let again = ModuliPoint::random(4, 0.5, &mut ChaCha8Rng::seed_from_u64(derive_seed(4, "moduli.init"))).unwrap();
        assert_eq!(r.point, again);
        let count = visited_strata_count(&r.log, &BTreeSet::new());
        assert_eq!(count.count, 1);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let truth = build_ground_truth(&ManifoldSpec::circle(1.0, 4), 2.0, WeightExponent::InverseDistance).unwrap();
        let spec = TeacherSpec { readout: Readout::random(4, 3.0, &mut ChaCha8Rng::seed_from_u64(1)), bump_width: None, noise_delta: 0.0 };
        let nlse = NlseConfig::default();
        let cfg = OptimizerConfig { iterations: 3, batch_size: 8, seed: 2, ..Default::default() };
        let params = ModelParams::teacher(4, spec.readout.clone());
        let go = || {
            let mut s = make_teacher_sampler(&truth, &spec, &nlse, 9).unwrap();
            run(&cfg, &mut s, InitialPoint::Random { n: 4 }, &params, &nlse).unwrap().log.to_jsonl()
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn strata_counting() {
        let e_true: BTreeSet<Edge> = [Edge::new(0, 1), Edge::new(1, 2)].into_iter().collect();
        let mk = |t: usize, edges: Vec<Edge>| IterationRecord {
            t,
            weights: vec![1.0; edges.len()],
            edges,
            added: vec![],
            pruned: vec![],
            loss: 0.0,
            tested: vec![],
            post_update: vec![],
            failure: None,
        };
        let mut log = StrataLog { n_vertices: 3, ..Default::default() };
        log.push(mk(0, vec![]));
        log.push(mk(1, vec![Edge::new(0, 1)]));
        log.push(mk(2, vec![Edge::new(0, 1), Edge::new(0, 2)]));
        log.push(mk(3, vec![Edge::new(0, 1)]));
        log.push(mk(4, vec![Edge::new(0, 1), Edge::new(1, 2)]));
        let c = visited_strata_count(&log, &e_true);
        assert_eq!(c, StrataCount { count: 4, true_subset_count: 3, spurious_count: 1 });
        assert!(true_part_is_monotone(&log, &e_true));
        assert!(fit_strata_constant(4, 3, 2, 0.0, 1).is_none());
        let cfit = fit_strata_constant(6, 3, 2, 0.5, 4).unwrap();
        assert!((strata_shape(3, 2, 0.5, 4, cfit) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn step_size_schedules() {
        assert_eq!(StepSize::Constant(0.1).at(5), 0.1);
        assert_eq!(StepSize::Schedule(vec![0.3, 0.2]).at(7), 0.2);
        assert!((StepSize::InvSqrt { eta0: 1.0 }.at(3) - 0.5).abs() < 1e-15);
        let pw: StepSize = serde_json::from_str("[[0, 0.01], [100, 0.1]]").unwrap();
        assert_eq!((pw.at(0), pw.at(99), pw.at(100), pw.at(5000)), (0.01, 0.01, 0.1, 0.1));
        let cfg: OptimizerConfig = serde_json::from_str(r#"{"T":5,"p":0.5,"theta":0.01,"Theta":0.01,"batch_size":4,"eta":{"eta0":0.2}}"#).unwrap();
        assert_eq!(cfg.eta, StepSize::InvSqrt { eta0: 0.2 });
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"T":5,"p":0.5,"theta":0.01,"Theta":0.01,"batch_size":4,"bogus":1}"#).is_err());
    }
}
