//! Graph hidden-state dynamics and stratified structure learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`graph`]: weighted graphs, fields, discrete operators, Sobolev norms
//! * [`dynamics`]: dissipative NSE / Landau-Lifshitz systems and steady states
//! * [`sensitivity`]: implicit derivatives of steady states
//! * [`topo`]: synthetic manifolds, Betti numbers, graph metrics, teachers
//! * [`moduli`]: gradient descent over weighted edge sets with add/prune moves
//! * [`model`]: the dense, dynamics, dense model and a dense baseline
//! * [`experiment`]: teacher tasks and end-to-end runs
//! * [`io`]: CSV / JSONL writers and seeded randomness helpers

pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod model;
pub mod moduli;
pub mod sensitivity;
pub mod topo;

pub use error::{Error, Result};
pub use graph::{Edge, EdgeField, RealField, ScalarField, SpinField, WeightedGraph};
