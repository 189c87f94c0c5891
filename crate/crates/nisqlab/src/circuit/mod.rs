//! Circuit intermediate representation: gates, parameters and circuits.
//!
//! A [`Circuit`] is an ordered list of [`Gate`] applications on `n_qubits`
//! qubits. Rotation gates may carry either a literal angle or a reference to
//! a parameter slot, so the same circuit can be re-evaluated for different
//! parameter vectors without rebuilding it.
//!
//! Conventions used throughout the crate:
//!
//! * Qubit `0` is the leftmost letter of a bitstring or Pauli word and the
//!   most significant bit of a basis-state index.
//! * Rotations follow the half-angle convention, e.g.
//!   `Rz(θ) = diag(e^{-iθ/2}, e^{iθ/2})`.
//! * In a multi-qubit gate matrix, `targets[0]` indexes the most significant
//!   bit of the gate's own 2^k-dimensional space.

mod graph;
mod parse;
mod pauli;

pub use graph::CouplingGraph;
pub use parse::{parse_circuit, parse_observable, render_circuit};
pub use pauli::{
    clifford_conjugate, clifford_conjugate_inv, Observable, Pauli, PauliString, PhasedPauli,
};

use std::f64::consts::FRAC_1_SQRT_2;
use std::sync::Arc;

use ndarray::{array, Array2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub(crate) const C0: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Tolerance used when validating that a raw matrix is unitary.
pub const UNITARY_TOL: f64 = 1e-10;

/// A gate parameter: either a literal angle in radians or a reference to a
/// parameter slot of the enclosing circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Angle(f64),
    Slot(usize),
}

impl Param {
    /// Resolve to a concrete angle given the circuit's parameter vector.
    pub fn resolve(&self, params: &[f64]) -> Result<f64> {
        match *self {
            Param::Angle(a) => Ok(a),
            Param::Slot(s) => params
                .get(s)
                .copied()
                .ok_or(Error::UnboundParameter { slot: s }),
        }
    }
}

/// The named gate kinds plus an escape hatch for explicit unitaries.
#[derive(Debug, Clone, PartialEq)]
pub enum GateKind {
    I,
    X,
    Y,
    Z,
    H,
    S,
    T,
    Rx,
    Ry,
    Rz,
    Cx,
    Cz,
    Swap,
    Ccz,
    /// An explicit unitary on `arity` qubits, validated on construction.
    Raw(Arc<Array2<Complex64>>),
    /// No-op marker; separates fusion regions and is skipped by backends.
    Barrier,
}

impl GateKind {
    /// Number of qubits the gate acts on. `Barrier` has arity 0.
    pub fn arity(&self) -> usize {
        match self {
            GateKind::I
            | GateKind::X
            | GateKind::Y
            | GateKind::Z
            | GateKind::H
            | GateKind::S
            | GateKind::T
            | GateKind::Rx
            | GateKind::Ry
            | GateKind::Rz => 1,
            GateKind::Cx | GateKind::Cz | GateKind::Swap => 2,
            GateKind::Ccz => 3,
            GateKind::Raw(m) => {
                debug_assert!(m.nrows().is_power_of_two());
                m.nrows().trailing_zeros() as usize
            }
            GateKind::Barrier => 0,
        }
    }

    /// Whether the kind takes exactly one rotation parameter.
    pub fn is_parametric(&self) -> bool {
        matches!(self, GateKind::Rx | GateKind::Ry | GateKind::Rz)
    }

    pub fn name(&self) -> &'static str {
        match self {
            GateKind::I => "i",
            GateKind::X => "x",
            GateKind::Y => "y",
            GateKind::Z => "z",
            GateKind::H => "h",
            GateKind::S => "s",
            GateKind::T => "t",
            GateKind::Rx => "rx",
            GateKind::Ry => "ry",
            GateKind::Rz => "rz",
            GateKind::Cx => "cx",
            GateKind::Cz => "cz",
            GateKind::Swap => "swap",
            GateKind::Ccz => "ccz",
            GateKind::Raw(_) => "raw",
            GateKind::Barrier => "barrier",
        }
    }
}

/// A single gate application: a kind, ordered targets and an optional
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub kind: GateKind,
    pub targets: Vec<usize>,
    pub param: Option<Param>,
}

impl Gate {
    /// Build a non-parametric gate, checking arity and target distinctness.
    pub fn new(kind: GateKind, targets: Vec<usize>) -> Result<Self> {
        Self::with_param(kind, targets, None)
    }

    /// Build a rotation gate with the given parameter.
    pub fn rotation(kind: GateKind, target: usize, param: Param) -> Result<Self> {
        Self::with_param(kind, vec![target], Some(param))
    }

    /// Build a gate from an explicit unitary matrix.
    pub fn raw(targets: Vec<usize>, matrix: Array2<Complex64>) -> Result<Self> {
        let dim = matrix.nrows();
        if dim != matrix.ncols() || !dim.is_power_of_two() || dim < 2 {
            return Err(Error::InvalidGate(format!(
                "raw matrix must be square with power-of-two dimension, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let dev = unitarity_deviation(&matrix);
        if dev > UNITARY_TOL {
            return Err(Error::NonUnitary { deviation: dev });
        }
        Self::with_param(GateKind::Raw(Arc::new(matrix)), targets, None)
    }

    pub fn with_param(kind: GateKind, targets: Vec<usize>, param: Option<Param>) -> Result<Self> {
        let arity = kind.arity();
        if targets.len() != arity {
            return Err(Error::InvalidGate(format!(
                "gate `{}` expects {} target(s), got {}",
                kind.name(),
                arity,
                targets.len()
            )));
        }
        for (i, a) in targets.iter().enumerate() {
            for b in &targets[i + 1..] {
                if a == b {
                    return Err(Error::InvalidGate(format!(
                        "gate `{}` has duplicate target {}",
                        kind.name(),
                        a
                    )));
                }
            }
        }
        match (kind.is_parametric(), param.is_some()) {
            (true, false) => {
                return Err(Error::InvalidGate(format!(
                    "rotation gate `{}` requires a parameter",
                    kind.name()
                )))
            }
            (false, true) => {
                return Err(Error::InvalidGate(format!(
                    "gate `{}` does not take a parameter",
                    kind.name()
                )))
            }
            _ => {}
        }
        Ok(Gate {
            kind,
            targets,
            param,
        })
    }

    pub fn arity(&self) -> usize {
        self.kind.arity()
    }

    /// The dense unitary of this gate, resolving any parameter slot against
    /// `params`. The matrix acts on the gate's own 2^k space with
    /// `targets[0]` as the most significant bit.
    pub fn matrix(&self, params: &[f64]) -> Result<Array2<Complex64>> {
        let angle = match self.param {
            Some(p) => Some(p.resolve(params)?),
            None => None,
        };
        Ok(match &self.kind {
            GateKind::I => Array2::eye(2),
            GateKind::X => array![[C0, C1], [C1, C0]],
            GateKind::Y => array![
                [C0, Complex64::new(0.0, -1.0)],
                [Complex64::new(0.0, 1.0), C0]
            ],
            GateKind::Z => array![[C1, C0], [C0, -C1]],
            GateKind::H => {
                let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
                array![[h, h], [h, -h]]
            }
            GateKind::S => array![[C1, C0], [C0, Complex64::new(0.0, 1.0)]],
            GateKind::T => array![
                [C1, C0],
                [C0, Complex64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]
            ],
            GateKind::Rx => {
                let t = angle.unwrap() / 2.0;
                let c = Complex64::new(t.cos(), 0.0);
                let s = Complex64::new(0.0, -t.sin());
                array![[c, s], [s, c]]
            }
            GateKind::Ry => {
                let t = angle.unwrap() / 2.0;
                let c = Complex64::new(t.cos(), 0.0);
                let s = Complex64::new(t.sin(), 0.0);
                array![[c, -s], [s, c]]
            }
            GateKind::Rz => {
                let t = angle.unwrap() / 2.0;
                array![
                    [Complex64::from_polar(1.0, -t), C0],
                    [C0, Complex64::from_polar(1.0, t)]
                ]
            }
            GateKind::Cx => array![
                [C1, C0, C0, C0],
                [C0, C1, C0, C0],
                [C0, C0, C0, C1],
                [C0, C0, C1, C0]
            ],
            GateKind::Cz => {
                let mut m = Array2::eye(4);
                m[[3, 3]] = -C1;
                m
            }
            GateKind::Swap => array![
                [C1, C0, C0, C0],
                [C0, C0, C1, C0],
                [C0, C1, C0, C0],
                [C0, C0, C0, C1]
            ],
            GateKind::Ccz => {
                let mut m = Array2::eye(8);
                m[[7, 7]] = -C1;
                m
            }
            GateKind::Raw(m) => m.as_ref().clone(),
            GateKind::Barrier => Array2::eye(1),
        })
    }

    /// The adjoint gate. Rotations negate their (bound) angle; `S` and `T`
    /// become raw matrices since the named set has no adjoint variants.
    pub fn adjoint(&self, params: &[f64]) -> Result<Gate> {
        Ok(match &self.kind {
            GateKind::I
            | GateKind::X
            | GateKind::Y
            | GateKind::Z
            | GateKind::H
            | GateKind::Cx
            | GateKind::Cz
            | GateKind::Swap
            | GateKind::Ccz
            | GateKind::Barrier => self.clone(),
            GateKind::Rx | GateKind::Ry | GateKind::Rz => {
                let a = self.param.unwrap().resolve(params)?;
                Gate {
                    kind: self.kind.clone(),
                    targets: self.targets.clone(),
                    param: Some(Param::Angle(-a)),
                }
            }
            GateKind::S | GateKind::T | GateKind::Raw(_) => {
                let m = self.matrix(params)?;
                let adj = m.t().mapv(|v| v.conj());
                Gate::raw(self.targets.clone(), adj)?
            }
        })
    }
}

/// Maximum |(U†U - I)| entry, used to validate raw gates.
pub fn unitarity_deviation(m: &Array2<Complex64>) -> f64 {
    let prod = m.t().mapv(|v| v.conj()).dot(m);
    let mut dev: f64 = 0.0;
    for i in 0..prod.nrows() {
        for j in 0..prod.ncols() {
            let expect = if i == j { C1 } else { C0 };
            dev = dev.max((prod[[i, j]] - expect).norm());
        }
    }
    dev
}

/// An ordered list of gates on a fixed number of qubits, with a count of
/// symbolic parameter slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    pub n_qubits: usize,
    pub ops: Vec<Gate>,
    pub n_params: usize,
}

impl Circuit {
    pub fn new(n_qubits: usize) -> Self {
        Circuit {
            n_qubits,
            ops: Vec::new(),
            n_params: 0,
        }
    }

    /// Append a gate, checking its targets against the circuit width and
    /// growing `n_params` to cover any referenced slot.
    pub fn push(&mut self, gate: Gate) -> Result<()> {
        for &t in &gate.targets {
            if t >= self.n_qubits {
                return Err(Error::QubitOutOfRange {
                    index: t,
                    width: self.n_qubits,
                });
            }
        }
        if let Some(Param::Slot(s)) = gate.param {
            self.n_params = self.n_params.max(s + 1);
        }
        self.ops.push(gate);
        Ok(())
    }

    /// Convenience: push and panic on error. For programmatic construction
    /// where the inputs are known valid.
    pub fn gate(&mut self, kind: GateKind, targets: &[usize]) -> &mut Self {
        self.push(Gate::new(kind, targets.to_vec()).unwrap())
            .unwrap();
        self
    }

    pub fn rot(&mut self, kind: GateKind, target: usize, param: Param) -> &mut Self {
        self.push(Gate::rotation(kind, target, param).unwrap())
            .unwrap();
        self
    }

    /// Replace every parameter slot with its literal angle from `params`.
    pub fn bind(&self, params: &[f64]) -> Result<Circuit> {
        if params.len() < self.n_params {
            return Err(Error::UnboundParameter { slot: params.len() });
        }
        let mut out = Circuit::new(self.n_qubits);
        for g in &self.ops {
            let param = match g.param {
                Some(p) => Some(Param::Angle(p.resolve(params)?)),
                None => None,
            };
            out.ops.push(Gate {
                kind: g.kind.clone(),
                targets: g.targets.clone(),
                param,
            });
        }
        Ok(out)
    }

    /// Number of gates, not counting barriers.
    pub fn gate_count(&self) -> usize {
        self.ops
            .iter()
            .filter(|g| g.kind != GateKind::Barrier)
            .count()
    }
}

/// The adjoint circuit: reversed gate order with every gate replaced by its
/// adjoint. All parameters must be bound.
pub fn inverse(circuit: &Circuit) -> Result<Circuit> {
    let mut out = Circuit::new(circuit.n_qubits);
    for g in circuit.ops.iter().rev() {
        out.ops.push(g.adjoint(&[])?);
    }
    Ok(out)
}

/// Basis index of a bitstring under the qubit-0-most-significant convention.
pub fn bits_to_index(bits: &[u8]) -> usize {
    bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
}

/// Bitstring of a basis index for an `n`-qubit register.
pub fn index_to_bits(index: usize, n: usize) -> Vec<u8> {
    (0..n).map(|q| ((index >> (n - 1 - q)) & 1) as u8).collect()
}

/// Render a basis index as a 0/1 string, qubit 0 leftmost.
pub fn format_bits(index: usize, n: usize) -> String {
    index_to_bits(index, n)
        .iter()
        .map(|b| char::from(b'0' + b))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rz_zero_is_identity() {
        let g = Gate::rotation(GateKind::Rz, 0, Param::Angle(0.0)).unwrap();
        let m = g.matrix(&[]).unwrap();
        assert_abs_diff_eq!((m[[0, 0]] - C1).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!((m[[1, 1]] - C1).norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn rx_pi_is_minus_i_x() {
        let g = Gate::rotation(GateKind::Rx, 0, Param::Angle(std::f64::consts::PI)).unwrap();
        let m = g.matrix(&[]).unwrap();
        let minus_i = Complex64::new(0.0, -1.0);
        assert_abs_diff_eq!((m[[0, 1]] - minus_i).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!((m[[1, 0]] - minus_i).norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[[0, 0]].norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn cx_permutes_10_and_11() {
        let g = Gate::new(GateKind::Cx, vec![0, 1]).unwrap();
        let m = g.matrix(&[]).unwrap();
        assert_eq!(m[[3, 2]], C1);
        assert_eq!(m[[2, 3]], C1);
        assert_eq!(m[[2, 2]], C0);
    }

    #[test]
    fn all_gate_matrices_are_unitary() {
        use GateKind::*;
        let mut rng_angles = vec![0.0, 1.0, -2.5, std::f64::consts::PI];
        for k in 0..100 {
            rng_angles.push((k as f64) * 0.063 - 3.0);
        }
        for kind in [I, X, Y, Z, H, S, T] {
            let g = Gate::new(kind, vec![0]).unwrap();
            assert!(unitarity_deviation(&g.matrix(&[]).unwrap()) < 1e-10);
        }
        for kind in [Rx, Ry, Rz] {
            for &a in &rng_angles {
                let g = Gate::rotation(kind.clone(), 0, Param::Angle(a)).unwrap();
                assert!(unitarity_deviation(&g.matrix(&[]).unwrap()) < 1e-10);
            }
        }
        for kind in [Cx, Cz, Swap] {
            let g = Gate::new(kind, vec![0, 1]).unwrap();
            assert!(unitarity_deviation(&g.matrix(&[]).unwrap()) < 1e-10);
        }
        let g = Gate::new(Ccz, vec![0, 1, 2]).unwrap();
        assert!(unitarity_deviation(&g.matrix(&[]).unwrap()) < 1e-10);
    }

    #[test]
    fn raw_rejects_non_unitary() {
        let m = array![[C1, C1], [C0, C1]];
        assert!(matches!(
            Gate::raw(vec![0], m),
            Err(Error::NonUnitary { .. })
        ));
    }

    #[test]
    fn duplicate_targets_rejected() {
        assert!(Gate::new(GateKind::Cx, vec![1, 1]).is_err());
    }

    #[test]
    fn inverse_reverses_and_negates() {
        let mut c = Circuit::new(2);
        c.rot(GateKind::Rx, 0, Param::Angle(0.3));
        c.gate(GateKind::Cx, &[0, 1]);
        let inv = inverse(&c).unwrap();
        assert_eq!(inv.ops[0].kind, GateKind::Cx);
        assert_eq!(inv.ops[1].kind, GateKind::Rx);
        assert_eq!(inv.ops[1].param, Some(Param::Angle(-0.3)));
    }

    #[test]
    fn inverse_involution_on_named_self_adjoint_and_rotations() {
        let mut c = Circuit::new(3);
        c.gate(GateKind::H, &[0]);
        c.rot(GateKind::Ry, 1, Param::Angle(1.25));
        c.gate(GateKind::Ccz, &[0, 1, 2]);
        c.gate(GateKind::Swap, &[1, 2]);
        let back = inverse(&inverse(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn bit_index_round_trip() {
        assert_eq!(bits_to_index(&[1, 0, 1]), 5);
        assert_eq!(index_to_bits(5, 3), vec![1, 0, 1]);
        assert_eq!(format_bits(5, 3), "101");
    }

    /// Circuit followed by its inverse is the exact identity (global phase
    /// included) on a random state.
    #[test]
    fn inverse_composes_to_identity_on_random_state() {
        use crate::sv::StateVector;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        let mut rng = ChaCha8Rng::seed_from_u64(63);
        for _ in 0..10 {
            let n = 4;
            let mut c = Circuit::new(n);
            for _ in 0..25 {
                match rng.gen_range(0..5) {
                    0 => c.gate(GateKind::H, &[rng.gen_range(0..n)]),
                    1 => c.gate(GateKind::S, &[rng.gen_range(0..n)]),
                    2 => c.gate(GateKind::T, &[rng.gen_range(0..n)]),
                    3 => c.rot(
                        GateKind::Ry,
                        rng.gen_range(0..n),
                        Param::Angle(rng.gen::<f64>() * 6.0),
                    ),
                    _ => {
                        let a = rng.gen_range(0..n);
                        let b = (a + 1 + rng.gen_range(0..n - 1)) % n;
                        c.gate(GateKind::Cx, &[a, b])
                    }
                };
            }
            let mut amps: Vec<Complex64> = (0..1usize << n)
                .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
                .collect();
            let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            amps.iter_mut().for_each(|a| *a /= norm);
            let reference = amps.clone();

            let mut state = StateVector::from_amplitudes(n, amps).unwrap();
            state.apply_circuit(&c, &[]).unwrap();
            state.apply_circuit(&inverse(&c).unwrap(), &[]).unwrap();
            for (a, b) in state.amplitudes().iter().zip(&reference) {
                assert!((a - b).norm() < 1e-10);
            }
        }
    }
}
