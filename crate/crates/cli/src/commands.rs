//! The five subcommands. Every file written embeds the resolved config (or,
//! for `report`, the hashes of the files it read) and an input hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use spectral_moduli::dynamics::{
    gauge_check, gauge_check_real, integrate, to_circle, to_sphere, DiffusionField, InvariantEntry, LlField, NlseField,
    Spin2dField, TrajectoryRecord,
};
use spectral_moduli::experiment::{learn_graph, train_experiment};
use spectral_moduli::io::{content_hash, finite_or_null, history_csv, invariant_jsonl, json_line, scalar_trajectory_csv, spin_trajectory_csv};
use spectral_moduli::RealField;

use crate::config::{ExperimentConfig, GaugePair, SystemKind};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    GaugeCheck,
    LearnGraph,
    Train,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::GaugeCheck => "gauge-check",
            Command::LearnGraph => "learn-graph",
            Command::Train => "train",
            Command::Report => "report",
        }
    }
}

struct Outputs {
    dir: PathBuf,
    provenance: Value,
    hash: String,
    files: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: &Path, provenance: Value) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        let hash = content_hash(serde_json::to_string(&provenance).expect("JSON values serialise").as_bytes());
        Ok(Outputs { dir: dir.to_path_buf(), provenance, hash, files: Vec::new() })
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body)?;
        self.files.push(path);
        Ok(())
    }

    fn json(&mut self, name: &str, mut body: Value) -> Result<(), CliError> {
        let obj = body.as_object_mut().expect("report bodies are objects");
        obj.insert("config".into(), self.provenance.clone());
        obj.insert("input_hash".into(), json!(self.hash));
        let mut text = serde_json::to_string_pretty(&body).expect("JSON values serialise");
        text.push('\n');
        self.write(name, &text)
    }

    fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let head = format!(
            "# input_hash: {}\n# config: {}\n",
            self.hash,
            serde_json::to_string(&self.provenance).expect("JSON values serialise")
        );
        self.write(name, &(head + body))
    }

    fn jsonl(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let head = json_line(&json!({ "header": true, "config": self.provenance, "input_hash": self.hash }));
        self.write(name, &(head + body))
    }
}

fn section<'a, T>(s: &'a Option<T>, cmd: Command, key: &str) -> Result<&'a T, CliError> {
    s.as_ref().ok_or_else(|| CliError::Config(format!("{} needs a \"{key}\" section", cmd.name())))
}

/// Runs `cmd` and returns the files written.
pub fn execute(cmd: Command, config: Option<&ExperimentConfig>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if cmd == Command::Report {
        return report(out);
    }
    let cfg = config.ok_or_else(|| CliError::Config(format!("{} needs --config", cmd.name())))?;
    let mut outputs = Outputs::new(out, cfg.resolved_json())?;
    match cmd {
        Command::Simulate => simulate(cfg, &mut outputs)?,
        Command::GaugeCheck => gauge(cfg, &mut outputs)?,
        Command::LearnGraph => learn(cfg, &mut outputs)?,
        Command::Train => train(cfg, &mut outputs)?,
        Command::Report => unreachable!(),
    }
    Ok(outputs.files)
}

fn invariant_summary(log: &[InvariantEntry]) -> Value {
    let norm_dev = log.iter().map(|e| (e.norm - 1.0).abs()).fold(0.0, f64::max);
    let constraint_dev = log.iter().filter_map(|e| e.constraint).map(|c| (c - 1.0).abs()).fold(None, |m: Option<f64>, d| {
        Some(m.map_or(d, |m| m.max(d)))
    });
    json!({
        "steps": log.len().saturating_sub(1),
        "max_norm_deviation": finite_or_null(norm_dev),
        "max_drift": finite_or_null(log.iter().map(|e| e.drift).fold(0.0, f64::max)),
        "max_constraint_deviation": constraint_dev.map(finite_or_null),
    })
}

fn real_trajectory_csv(rec: &TrajectoryRecord<RealField>) -> String {
    let n = rec.states.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",phi_{j}");
    }
    out.push('\n');
    for (t, s) in rec.times.iter().zip(&rec.states) {
        let _ = write!(out, "{t}");
        for x in &s.0 {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

fn simulate(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let s = section(&cfg.simulate, Command::Simulate, "simulate")?;
    let g = s.graph.build()?;
    let n = g.n_vertices();
    let gamma = s.nlse.gamma;
    let (csv, log) = match s.system {
        SystemKind::Nse => {
            let psi0 = s.initial.complex(n, cfg.seed)?;
            let rec = integrate(&NlseField::new(&g, &psi0, gamma)?, psi0.clone(), &s.nlse)?;
            (scalar_trajectory_csv(&rec), rec.invariant_log)
        }
        SystemKind::Ll => {
            let psi0 = s.initial.complex(n, cfg.seed)?;
            let rec = integrate(&LlField::new(&g, &psi0, gamma)?, to_sphere(&psi0), &s.nlse)?;
            (spin_trajectory_csv(&rec), rec.invariant_log)
        }
        SystemKind::Diffusion => {
            let phi0 = s.initial.real(n, cfg.seed)?;
            let rec = integrate(&DiffusionField::new(&g, &phi0, gamma)?, phi0.clone(), &s.nlse)?;
            (real_trajectory_csv(&rec), rec.invariant_log)
        }
        SystemKind::Spin2d => {
            let phi0 = s.initial.real(n, cfg.seed)?;
            let rec = integrate(&Spin2dField::new(&g, &phi0, gamma)?, to_circle(&phi0), &s.nlse)?;
            (spin_trajectory_csv(&rec), rec.invariant_log)
        }
    };
    out.csv("trajectory.csv", &csv)?;
    out.jsonl("invariants.jsonl", &invariant_jsonl(&log))?;
    out.json("simulate_summary.json", json!({ "command": "simulate", "summary": invariant_summary(&log) }))
}

fn gauge(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let s = section(&cfg.gauge_check, Command::GaugeCheck, "gauge_check")?;
    let g = s.graph.build()?;
    let n = g.n_vertices();
    let result = match s.pair {
        GaugePair::Complex => gauge_check(&g, &s.initial.complex(n, cfg.seed)?, &s.nlse, s.spin_model, s.pole_margin),
        GaugePair::Real => gauge_check_real(&g, &s.initial.real(n, cfg.seed)?, &s.nlse, s.spin_model, s.pole_margin),
    };
    match result {
        Ok(r) => out.json(
            "gauge_report.json",
            json!({
                "command": "gauge-check",
                "max_deviation": finite_or_null(r.max_deviation),
                "t_at_max": r.t_at_max,
                "max_constraint_deviation": finite_or_null(r.max_constraint_deviation),
                "max_spin_norm_deviation": finite_or_null(r.max_spin_norm_deviation),
                "steps": r.steps,
                "threshold": s.threshold,
                "pass": r.max_deviation <= s.threshold,
            }),
        ),
        Err(e) => {
            out.json(
                "gauge_report.json",
                json!({ "command": "gauge-check", "pass": false, "error": e.to_string(), "threshold": s.threshold }),
            )?;
            Err(e.into())
        }
    }
}

fn learn(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let s = section(&cfg.learn_graph, Command::LearnGraph, "learn_graph")?;
    let result = learn_graph(s)?;
    out.jsonl("strata_log.jsonl", &result.run.log.to_jsonl())?;
    out.json("final_graph.json", json!({ "graph": result.run.point.graph.to_json() }))?;
    let mut summary = result.summary_json();
    let obj = summary.as_object_mut().expect("summary is an object");
    obj.insert("command".into(), json!("learn-graph"));
    obj.insert("loss_history".into(), result.run.loss_history.iter().map(|x| finite_or_null(*x)).collect());
    out.json("learn_graph_report.json", summary)
}

fn train(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<(), CliError> {
    let s = section(&cfg.train, Command::Train, "train")?;
    let result = train_experiment(s)?;
    for (k, r) in result.runs.iter().enumerate() {
        let csv = history_csv(&r.history);
        if k == 0 {
            out.csv("history.csv", &csv)?;
            out.json(
                "checkpoint.json",
                json!({ "command": "train", "m": r.m, "params": r.params.to_json(), "graph": r.point.graph.to_json() }),
            )?;
        }
        out.csv(&format!("history_m{}.csv", r.m), &csv)?;
        if let Some((_, bh, _)) = &r.baseline {
            out.csv(&format!("baseline_history_m{}.csv", r.m), &history_csv(bh))?;
        }
    }
    let mut gap = result.gap_table_json();
    gap.as_object_mut().expect("gap table is an object").insert("command".into(), json!("train"));
    out.json("gap_report.json", gap)
}

const REPORT_INPUTS: [&str; 5] =
    ["simulate_summary.json", "gauge_report.json", "learn_graph_report.json", "gap_report.json", "checkpoint.json"];

/// Collects the summaries found in `dir` into `report.json` and `report.md`.
fn report(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut inputs = serde_json::Map::new();
    let mut found = Vec::new();
    for name in REPORT_INPUTS {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        inputs.insert(name.to_string(), json!(content_hash(text.as_bytes())));
        found.push((name, v));
    }
    if found.is_empty() {
        return Err(CliError::Config(format!("no run outputs found in {}", dir.display())));
    }
    let mut out = Outputs::new(dir, json!({ "inputs": inputs }))?;
    let mut md = String::from("| output | key | value |\n|---|---|---|\n");
    let mut sections = serde_json::Map::new();
    for (name, v) in &found {
        let keys: &[&str] = match *name {
            "simulate_summary.json" => &["summary"],
            "gauge_report.json" => &["max_deviation", "max_constraint_deviation", "pass", "error"],
            "learn_graph_report.json" => {
                &["exact_edge_set", "betti", "truth_betti", "distortion", "checkpoints", "distortion_non_increasing", "strata"]
            }
            "gap_report.json" => &["rows"],
            _ => &["m"],
        };
        let mut picked = serde_json::Map::new();
        for k in keys {
            if let Some(x) = v.get(*k) {
                picked.insert(k.to_string(), x.clone());
                let _ = writeln!(md, "| {name} | {k} | `{x}` |");
            }
        }
        sections.insert(name.to_string(), Value::Object(picked));
    }
    out.json("report.json", json!({ "command": "report", "sections": sections }))?;
    let head = format!("<!-- input_hash: {} -->\n\n", out.hash);
    out.write("report.md", &(head + &md))?;
    Ok(out.files)
}
