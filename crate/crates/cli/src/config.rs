//! Experiment configuration: JSON file, `--set` overrides, seed propagation.

use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use spectral_moduli::dynamics::{NlseConfig, SpinModel, DEFAULT_POLE_MARGIN};
use spectral_moduli::experiment::{LearnGraphConfig, TrainExperimentConfig};
use spectral_moduli::{ScalarField, WeightedGraph};

use crate::CliError;

fn one() -> f64 {
    1.0
}

/// A named small graph or an explicit edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Path {
        n: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    Cycle {
        n: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    Complete {
        n: usize,
        #[serde(default = "one")]
        weight: f64,
    },
    Edges {
        n: usize,
        edges: Vec<(usize, usize, f64)>,
    },
}

impl GraphSpec {
    pub fn build(&self) -> spectral_moduli::Result<WeightedGraph> {
        match *self {
            GraphSpec::Path { n, weight } => WeightedGraph::new(n, &(1..n).map(|i| (i - 1, i, weight)).collect::<Vec<_>>()),
            GraphSpec::Cycle { n, weight } => {
                let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i, weight)).collect();
                if n > 2 {
                    edges.push((n - 1, 0, weight));
                }
                WeightedGraph::new(n, &edges)
            }
            GraphSpec::Complete { n, weight } => {
                let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j, weight))).collect();
                WeightedGraph::new(n, &edges)
            }
            GraphSpec::Edges { n, ref edges } => WeightedGraph::new(n, edges),
        }
    }
}

/// Initial amplitude. `random` draws from the run's `initial` stream and
/// normalises; `values` is normalised as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    #[default]
    Random,
    Values {
        re: Vec<f64>,
        #[serde(default)]
        im: Vec<f64>,
    },
}

impl InitialState {
    pub fn complex(&self, n: usize, seed: u64) -> spectral_moduli::Result<ScalarField> {
        use rand::SeedableRng;
        match self {
            InitialState::Random => {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(spectral_moduli::io::derive_seed(seed, "initial"));
                ScalarField::random(n, &mut rng).normalized()
            }
            InitialState::Values { re, im } => {
                if !im.is_empty() && im.len() != re.len() {
                    return Err(spectral_moduli::Error::Config("initial.im must match initial.re in length".into()));
                }
                let z = re.iter().enumerate().map(|(j, r)| Complex64::new(*r, im.get(j).copied().unwrap_or(0.0)));
                ScalarField(z.collect()).normalized()
            }
        }
    }

    /// Real part of the complex draw, renormalised.
    pub fn real(&self, n: usize, seed: u64) -> spectral_moduli::Result<spectral_moduli::RealField> {
        let z = self.complex(n, seed)?;
        let re: Vec<f64> = z.0.iter().map(|c| c.re).collect();
        let norm = re.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(spectral_moduli::Error::DegenerateInput);
        }
        Ok(spectral_moduli::RealField(re.iter().map(|x| x / norm).collect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    /// Complex amplitude equation.
    #[default]
    Nse,
    /// Landau-Lifshitz spins from the stereographic image of the amplitude.
    Ll,
    /// Real amplitude equation.
    Diffusion,
    /// Planar spins from the image of the real amplitude.
    Spin2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub system: SystemKind,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub nlse: NlseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GaugePair {
    #[default]
    Complex,
    Real,
}

fn default_threshold() -> f64 {
    1e-6
}

fn default_margin() -> f64 {
    DEFAULT_POLE_MARGIN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeCheckConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub pair: GaugePair,
    #[serde(default)]
    pub spin_model: SpinModel,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub nlse: NlseConfig,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_margin")]
    pub pole_margin: f64,
}

/// One file for every command; each command reads its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Where outputs go unless `--out` is given. Not part of the embedded
    /// config, so moving a run does not change its bytes.
    #[serde(default, skip_serializing)]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gauge_check: Option<GaugeCheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learn_graph: Option<LearnGraphConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainExperimentConfig>,
}

impl ExperimentConfig {
    /// Copies the run seed into every component seed.
    pub fn propagate_seed(&mut self) {
        let seed = self.seed;
        if let Some(l) = &mut self.learn_graph {
            l.optimizer.seed = seed;
        }
        if let Some(t) = &mut self.train {
            t.train.seed = seed;
            t.train.moduli.seed = seed;
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(s) = &self.simulate {
            s.nlse.validate()?;
        }
        if let Some(g) = &self.gauge_check {
            g.nlse.validate()?;
            if !(g.threshold > 0.0) || !(g.pole_margin > 0.0 && g.pole_margin < 1.0) {
                return Err(CliError::Config("threshold must be positive and pole_margin in (0, 1)".into()));
            }
        }
        if let Some(l) = &self.learn_graph {
            l.validate()?;
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        Ok(())
    }

    /// Canonical JSON of the resolved config.
    pub fn resolved_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }
}

/// Parses `a.b.c=value`; the value is read as JSON, falling back to a string.
pub fn apply_override(root: &mut serde_json::Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {assignment:?}")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad --set key {key:?}")));
    }
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("--set {key}: {part:?} is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    let obj = node.as_object_mut().ok_or_else(|| CliError::Config(format!("--set {key}: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Reads, overrides, seeds and validates a config.
pub fn load_config(path: &Path, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text, sets, seed)
}

pub fn parse_config(text: &str, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    for s in sets {
        apply_override(&mut value, s)?;
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.propagate_seed();
    cfg.validate()?;
    Ok(cfg)
}
