//! Teacher tasks and the end-to-end runs built on them: structure learning
//! on a known manifold and model training with a baseline comparison.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::NlseConfig;
use crate::error::{Error, Result};
use crate::graph::WeightedGraph;
use crate::io::derive_seed;
use crate::model::{
    baseline_train, generalization_gap, train, Activation, BaselineParams, GapReport, HistoryRow, InputLayer, ModelParams,
    Readout, Sample, TrainConfig,
};
use crate::moduli::{
    run, true_part_is_monotone, visited_strata_count, FixedBatch, InitialPoint, ModuliPoint, OptimizerConfig, RunResult,
    StrataCount,
};
use crate::topo::{
    build_ground_truth, distortion_report, make_teacher_sampler, min_spacing, DistortionReport, GroundTruth, ManifoldSpec,
    TeacherSampler, TeacherSpec, WeightExponent,
};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    /// Entries of `a₃` are uniform in the unit square times this scale.
    #[serde(default = "one")]
    pub readout_scale: f64,
    #[serde(default)]
    pub readout_seed: u64,
    /// Bump width in units of the smallest net spacing.
    #[serde(default = "one")]
    pub bump_width: f64,
    #[serde(default)]
    pub noise_delta: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig { readout_scale: 1.0, readout_seed: 0, bump_width: 1.0, noise_delta: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub manifold: ManifoldSpec,
    pub inj_radius: f64,
    #[serde(default)]
    pub weight_exponent: WeightExponent,
    #[serde(default)]
    pub teacher: TeacherConfig,
}

/// A ground truth together with the teacher that labels its data.
#[derive(Debug, Clone)]
pub struct Task {
    pub truth: GroundTruth,
    pub teacher: TeacherSpec,
}

impl TaskConfig {
    pub fn build(&self) -> Result<Task> {
        let truth = build_ground_truth(&self.manifold, self.inj_radius, self.weight_exponent)?;
        let t = &self.teacher;
        if !(t.readout_scale > 0.0 && t.bump_width > 0.0) {
            return Err(Error::Config("readout_scale and bump_width must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(t.readout_seed);
        let readout = Readout::random(truth.n_vertices(), t.readout_scale, &mut rng);
        let teacher = TeacherSpec { readout, bump_width: Some(t.bump_width * min_spacing(&truth)), noise_delta: t.noise_delta };
        Ok(Task { truth, teacher })
    }
}

impl Task {
    pub fn n_vertices(&self) -> usize {
        self.truth.n_vertices()
    }

    pub fn sampler(&self, nlse: &NlseConfig, seed: u64) -> Result<TeacherSampler> {
        make_teacher_sampler(&self.truth, &self.teacher, nlse, seed)
    }

    /// One clean sample per net vertex: the exact expectation when `δ = 0`.
    pub fn full_batch(&self, nlse: &NlseConfig) -> Result<Vec<Sample>> {
        let mut s = self.sampler(nlse, 0)?;
        (0..self.n_vertices()).map(|v| s.clean_sample(v)).collect()
    }

    /// Identity input layer and the teacher readout.
    pub fn teacher_params(&self) -> ModelParams {
        ModelParams::teacher(self.n_vertices(), self.teacher.readout.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// Every iteration sees [`Task::full_batch`].
    #[default]
    Full,
    /// Fresh i.i.d. batches of `batch_size` from the teacher sampler.
    Sampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitPolicy {
    /// Each pair is an edge with probability `p`, weight 1.
    #[default]
    Random,
    /// As `Random`, conditioned on a connected graph.
    RandomConnected,
    /// The teacher graph `(E_true, w*)`.
    Teacher,
    Given(Vec<(usize, usize, f64)>),
}

impl InitPolicy {
    fn resolve(&self, truth: &GroundTruth) -> Result<InitialPoint> {
        let n = truth.n_vertices();
        Ok(match self {
            InitPolicy::Random => InitialPoint::Random { n },
            InitPolicy::RandomConnected => InitialPoint::RandomConnected { n },
            InitPolicy::Teacher => InitialPoint::Given(truth.teacher_graph()?),
            InitPolicy::Given(edges) => InitialPoint::Given(WeightedGraph::new(n, edges)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnGraphConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub nlse: NlseConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub batch: BatchMode,
    #[serde(default)]
    pub init: InitPolicy,
}

impl LearnGraphConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.manifold.validate()?;
        self.nlse.validate()?;
        self.optimizer.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Checkpoint {
    pub t: usize,
    pub max_additive_distortion: f64,
}

#[derive(Debug, Clone)]
pub struct LearnGraphOutput {
    pub truth: GroundTruth,
    pub run: RunResult,
    pub report: DistortionReport,
    /// Distortion at `T/4`, `T/2` and `T`, `T` being the last iteration run.
    pub checkpoints: Vec<Checkpoint>,
    pub exact: bool,
    pub betti_match: bool,
    pub strata: StrataCount,
    pub monotone_true_part: bool,
    pub failed_steps: usize,
}

impl LearnGraphOutput {
    /// Checkpoint distortions never grow by more than `tol`.
    pub fn distortion_non_increasing(&self, tol: f64) -> bool {
        self.checkpoints.windows(2).all(|w| !(w[1].max_additive_distortion > w[0].max_additive_distortion + tol))
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "exact_edge_set": self.exact,
            "betti": self.report.betti,
            "truth_betti": [self.truth.betti.0, self.truth.betti.1],
            "betti_match": self.betti_match,
            "distortion": self.report.to_json(),
            "checkpoints": self.checkpoints,
            "distortion_non_increasing": self.distortion_non_increasing(1e-6),
            "iterations": self.run.log.last_iteration(),
            "failed_steps": self.failed_steps,
            "strata": self.strata,
            "monotone_true_part": self.monotone_true_part,
            "final_graph": self.run.point.graph.to_json(),
            "extension": self.truth.spec.is_extension(),
            "warnings": self.truth.warnings,
        })
    }
}

pub fn learn_graph(config: &LearnGraphConfig) -> Result<LearnGraphOutput> {
    config.validate()?;
    let task = config.task.build()?;
    let params = task.teacher_params();
    let init = config.init.resolve(&task.truth)?;
    let run_result = match config.batch {
        BatchMode::Full => {
            let mut source = FixedBatch(task.full_batch(&config.nlse)?);
            run(&config.optimizer, &mut source, init, &params, &config.nlse)?
        }
        BatchMode::Sampled => {
            let mut source = task.sampler(&config.nlse, derive_seed(config.optimizer.seed, "sampler"))?;
            run(&config.optimizer, &mut source, init, &params, &config.nlse)?
        }
    };
    summarize(task.truth, run_result)
}

fn summarize(truth: GroundTruth, run_result: RunResult) -> Result<LearnGraphOutput> {
    let last = run_result.log.last_iteration();
    let mut checkpoints = Vec::new();
    for t in [last / 4, last / 2, last] {
        let g = run_result.log.graph_at(t)?;
        checkpoints.push(Checkpoint { t, max_additive_distortion: distortion_report(&g, &truth)?.max_additive_distortion });
    }
    let report = distortion_report(&run_result.point.graph, &truth)?;
    let exact = run_result.point.edge_set() == truth.e_true;
    let betti_match = report.betti == [truth.betti.0, truth.betti.1];
    let strata = visited_strata_count(&run_result.log, &truth.e_true);
    let monotone_true_part = true_part_is_monotone(&run_result.log, &truth.e_true);
    let failed_steps = run_result.log.records.iter().filter(|r| r.failure.is_some()).count();
    Ok(LearnGraphOutput { truth, run: run_result, report, checkpoints, exact, betti_match, strata, monotone_true_part, failed_steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelInit {
    /// Identity input layer and the teacher readout.
    #[default]
    Teacher,
    /// Random input layer and readout with entries of the given scale.
    Random { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub hidden: usize,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainExperimentConfig {
    pub task: TaskConfig,
    #[serde(default)]
    pub nlse: NlseConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub model_init: ModelInit,
    #[serde(default)]
    pub graph_init: InitPolicy,
    /// Training-set sizes `m`; the first one is the main run.
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    #[serde(default)]
    pub baseline: Option<BaselineConfig>,
}

impl TrainExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.task.manifold.validate()?;
        self.nlse.validate()?;
        self.train.validate()?;
        if self.train_sizes.is_empty() || self.train_sizes.contains(&0) {
            return Err(Error::Config("train_sizes must be non-empty and positive".into()));
        }
        if let Some(b) = &self.baseline {
            if b.hidden == 0 {
                return Err(Error::Config("baseline.hidden must be >= 1".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub m: usize,
    pub params: ModelParams,
    pub point: ModuliPoint,
    pub history: Vec<HistoryRow>,
    pub gap: GapReport,
    pub baseline: Option<(BaselineParams, Vec<HistoryRow>, GapReport)>,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub truth: GroundTruth,
    pub runs: Vec<TrainRun>,
}

impl TrainOutput {
    pub fn gap_table_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .runs
            .iter()
            .map(|r| {
                serde_json::json!({
                    "m": r.m,
                    "model": r.gap,
                    "baseline": r.baseline.as_ref().map(|b| &b.2),
                })
            })
            .collect();
        serde_json::json!({ "measurement_only": true, "rows": rows })
    }
}

fn last_losses(history: &[HistoryRow]) -> (f64, f64) {
    let last = history.last().expect("history has the initial row");
    (last.train_loss, last.test_loss.unwrap_or(f64::NAN))
}

/// Trains the model (and optionally the baseline) on `m` teacher samples for
/// each `m` in `train_sizes`, with a disjoint held-out stream.
pub fn train_experiment(config: &TrainExperimentConfig) -> Result<TrainOutput> {
    config.validate()?;
    let task = config.task.build()?;
    let n = task.n_vertices();
    let seed = config.train.seed;
    let mut test_sampler = task.sampler(&config.nlse, derive_seed(seed, "test"))?;
    let test_set = test_sampler.batch(config.test_size)?;
    let mut runs = Vec::new();
    for &m in &config.train_sizes {
        let mut train_sampler = task.sampler(&config.nlse, derive_seed(seed, &format!("train.{m}")))?;
        let train_set = train_sampler.batch(m)?;
        let init = match &config.model_init {
            ModelInit::Teacher => task.teacher_params(),
            ModelInit::Random { scale } => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "model.init"));
                let input = InputLayer::random(n, n, *scale, &mut rng);
                let mut readout = Readout::random(n, *scale, &mut rng);
                readout.b3 = Complex64::new(0.0, 0.0);
                ModelParams { input, readout }
            }
        };
        let point = config.graph_init.resolve(&task.truth)?.realize(&config.train.moduli)?;
        let (params, point, history) = train(&train_set, &test_set, init, point, &config.train, &config.nlse)?;
        let (tr, te) = last_losses(&history);
        let gap = generalization_gap(tr, te, m);
        let baseline = match &config.baseline {
            None => None,
            Some(b) => {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "baseline.init"));
                let mut init = BaselineParams::random(b.hidden, n, b.scale, &mut rng);
                init.activation2 = b.activation;
                let (bp, bh) = baseline_train(&train_set, &test_set, init, &config.train)?;
                let (tr, te) = last_losses(&bh);
                Some((bp, bh, generalization_gap(tr, te, m)))
            }
        };
        runs.push(TrainRun { m, params, point, history, gap, baseline });
    }
    Ok(TrainOutput { truth: task.truth, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moduli::StepSize;

    fn c4_task() -> TaskConfig {
        TaskConfig {
            manifold: ManifoldSpec::circle(1.0, 4),
            inj_radius: 2.0,
            weight_exponent: WeightExponent::InverseDistance,
            teacher: TeacherConfig { readout_scale: 3.0, readout_seed: 5, bump_width: 1.0, noise_delta: 0.0 },
        }
    }

    #[test]
    fn teacher_self_test() {
        let task = c4_task().build().unwrap();
        let nlse = NlseConfig::default();
        let batch = task.full_batch(&nlse).unwrap();
        let loss = crate::moduli::regularized_loss(
            &ModuliPoint::new(task.truth.teacher_graph().unwrap()),
            &batch,
            &task.teacher_params(),
            0.0,
            0.0,
            &nlse,
        )
        .unwrap();
        assert!(loss.data < 1e-10, "{}", loss.data);
    }

    #[test]
    fn teacher_start_with_rules_disabled_stays_put() {
        let cfg = LearnGraphConfig {
            task: c4_task(),
            nlse: NlseConfig::default(),
            optimizer: OptimizerConfig {
                iterations: 5,
                theta: 0.0,
                big_theta: 0.5,
                eta: StepSize::Constant(0.1),
                batch_size: 4,
                ..Default::default()
            },
            batch: BatchMode::Full,
            init: InitPolicy::Teacher,
        };
        let out = learn_graph(&cfg).unwrap();
        assert!(out.exact && out.betti_match);
        assert!(out.report.max_additive_distortion < 1e-6);
        assert_eq!(out.strata.count, 1);
    }

    #[test]
    fn config_round_trip_rejects_unknown_keys() {
        let cfg = LearnGraphConfig {
            task: c4_task(),
            nlse: NlseConfig::default(),
            optimizer: OptimizerConfig::default(),
            batch: BatchMode::Sampled,
            init: InitPolicy::Given(vec![(0, 1, 1.0)]),
        };
        let s = serde_json::to_string(&cfg).unwrap();
        let back: LearnGraphConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["task"]["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<LearnGraphConfig>(v).is_err());
    }
}
