//! Divide-and-conquer fidelity estimation for shallow circuits on sparse
//! qubit layouts.
//!
//! The library cuts an n-qubit verification circuit into two halves in
//! space (a four-term diagonal expansion of each crossing CZ) and in time
//! (an eight-setting Pauli measure-and-prepare channel on the shared
//! ancilla wire), runs the resulting small circuits on a built-in noisy
//! simulator, and classically post-processes the ±1 shot statistics into
//! an estimate of the fidelity ⟨ψ_t|ρ_out|ψ_t⟩ between the noisy output
//! and the ideal target state. Exact dense oracles back every estimator
//! path.
//!
//! Module map:
//!
//! * [`circuit`] — gate-list IR over {single-qubit unitaries, CZ}, JSON
//!   serialization, dense unitaries.
//! * [`partition`] — balanced min-crossing bipartitions and the layered
//!   normal form.
//! * [`decompose`] — half-operators, generalized stabilizers, and dense
//!   reconstruction checks.
//! * [`sim`] — statevector / density-matrix engines with Kraus noise.
//! * [`estimate`] — the protocol engine: split-circuit shots, the joint
//!   ancilla test, shot budgets, the direct Pauli baseline.
//! * [`oracle`] — brute-force ground truth for every estimated quantity.
//! * [`report`] — confidence bands, histograms, run-report serialization.
//! * [`cli`] — the `dcverify` command line (`cut`, `verify`, `compare`,
//!   `demo`).
//!
//! See the crate `examples/` directory for one runnable walk-through per
//! capability.

pub mod bits;
pub mod circuit;
pub mod decompose;
pub mod error;
pub mod estimate;
pub mod linalg;
pub mod partition;
pub mod sim;

pub use error::{Error, Result};
