//! A classical toolkit for near-term quantum computing.
//!
//! nisqlab bundles the classical machinery used to design, test and verify
//! programs for noisy intermediate-scale quantum devices:
//!
//! * [`circuit`] — a gate-level circuit IR with a text format, Pauli-string
//!   observables and device coupling graphs;
//! * [`sv`] — a dense Schrödinger state-vector simulator plus
//!   Schrödinger-Feynman amplitude evaluation;
//! * [`mps`] / [`peps`] — tensor-network simulators (matrix product states
//!   with canonical-form updates; exact projected entangled pair states on
//!   small grids);
//! * [`noise`] — noisy simulation, both exact density evolution through the
//!   squashed state vector and Pauli-error-insertion Monte Carlo;
//! * [`vqa`] — loss evaluation, finite-difference / parameter-shift /
//!   adjoint gradients, gradient descent, and VQE / QAOA reference drivers;
//! * [`mitigation`] — zero-noise extrapolation, probabilistic error
//!   cancellation, measurement-error mitigation, virtual distillation,
//!   symmetry expansion, subspace expansion, Clifford data regression and
//!   Pauli twirling;
//! * [`benchmarks`] — randomized benchmarking, cross-entropy benchmarking,
//!   random-circuit sampling, quantum volume and mirror circuits;
//! * [`compile`] — gate fusion, CNOT-circuit synthesis over GF(2) and
//!   heuristic SWAP routing.
//!
//! The library favors verifiability: everything runs at "desk scale" where
//! results can be checked against brute-force linear algebra, and the test
//! suite does exactly that.

pub mod benchmarks;
pub mod circuit;
pub mod compile;
pub mod error;
pub mod mitigation;
pub mod mps;
pub mod noise;
pub mod peps;
pub mod sv;
pub(crate) mod tensor;
pub mod vqa;

pub use circuit::{Circuit, CouplingGraph, Gate, GateKind, Observable, Param, PauliString};
pub use error::{Error, ErrorCategory, Result};
pub use sv::StateVector;
