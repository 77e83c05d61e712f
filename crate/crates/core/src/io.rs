//! Output formats and seeded randomness.
//!
//! Floats are written in shortest round-trip form (Rust `Display` / serde_json),
//! so identical runs produce identical bytes.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::dynamics::{InvariantEntry, TrajectoryRecord};
use crate::graph::{ScalarField, SpinField};
use crate::model::HistoryRow;

/// Seed for the component `label` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Hex SHA-256 of `bytes`.
pub fn content_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// JSON number, or `null` for non-finite values.
pub fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Writes a value as one JSON line.
pub fn json_line(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string(v).expect("JSON values serialise");
    s.push('\n');
    s
}

/// `t,re_0,im_0,re_1,im_1,...` per recorded state.
pub fn scalar_trajectory_csv(rec: &TrajectoryRecord<ScalarField>) -> String {
    let n = rec.states.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",re_{j},im_{j}");
    }
    out.push('\n');
    for (t, s) in rec.times.iter().zip(&rec.states) {
        let _ = write!(out, "{t}");
        for z in &s.0 {
            let _ = write!(out, ",{},{}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

/// `t,x_0,y_0,z_0,...` per recorded state.
pub fn spin_trajectory_csv(rec: &TrajectoryRecord<SpinField>) -> String {
    let n = rec.states.first().map_or(0, |s| s.len());
    let mut out = String::from("t");
    for j in 0..n {
        let _ = write!(out, ",x_{j},y_{j},z_{j}");
    }
    out.push('\n');
    for (t, s) in rec.times.iter().zip(&rec.states) {
        let _ = write!(out, "{t}");
        for v in &s.0 {
            let _ = write!(out, ",{},{},{}", v[0], v[1], v[2]);
        }
        out.push('\n');
    }
    out
}

pub fn invariant_jsonl(log: &[InvariantEntry]) -> String {
    log.iter()
        .map(|e| {
            json_line(&serde_json::json!({
                "t": e.t,
                "norm": finite_or_null(e.norm),
                "drift": finite_or_null(e.drift),
                "constraint": e.constraint.map(finite_or_null),
            }))
        })
        .collect()
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `epoch,train_loss,test_loss,n_edges,b0,b1`.
pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from("epoch,train_loss,test_loss,n_edges,b0,b1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.epoch, r.train_loss, opt(r.test_loss), r.n_edges, r.b0, r.b1);
    }
    out
}
