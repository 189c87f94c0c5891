//! Shared helpers for the acceptance suite: a brute-force dense-matrix
//! simulator used as the independent oracle, and random circuit builders.
//!
//! The oracle never touches the library's gate kernels: each gate is
//! embedded into the full 2^n x 2^n matrix by explicit basis bookkeeping
//! and multiplied against the state column.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use nisqlab::circuit::{Circuit, Gate, GateKind, Param};

pub const C0: Complex64 = Complex64::new(0.0, 0.0);
pub const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Embed a 2^k gate matrix acting on `targets` (first target = most
/// significant gate bit) into the full 2^n space.
pub fn embed_dense(gate: &Array2<Complex64>, targets: &[usize], n: usize) -> Array2<Complex64> {
    let k = targets.len();
    let dim = 1usize << n;
    let mut full = Array2::zeros((dim, dim));
    for col in 0..dim {
        // bits of the gate's input sub-index, first target most significant
        let mut sub_in = 0usize;
        for (pos, &t) in targets.iter().enumerate() {
            let bit = (col >> (n - 1 - t)) & 1;
            sub_in |= bit << (k - 1 - pos);
        }
        for sub_out in 0..1usize << k {
            let amp = gate[[sub_out, sub_in]];
            if amp == C0 {
                continue;
            }
            let mut row = col;
            for (pos, &t) in targets.iter().enumerate() {
                let bit = (sub_out >> (k - 1 - pos)) & 1;
                let mask = 1usize << (n - 1 - t);
                if bit == 1 {
                    row |= mask;
                } else {
                    row &= !mask;
                }
            }
            full[[row, col]] += amp;
        }
    }
    full
}

/// Brute-force state evolution: the Kronecker-embedded matrix chain applied
/// to e_0.
pub fn dense_oracle_state(circuit: &Circuit) -> Vec<Complex64> {
    let n = circuit.n_qubits;
    let dim = 1usize << n;
    let mut state = vec![C0; dim];
    state[0] = C1;
    for g in &circuit.ops {
        if matches!(g.kind, GateKind::Barrier | GateKind::I) {
            continue;
        }
        let full = embed_dense(&g.matrix(&[]).unwrap(), &g.targets, n);
        let mut next = vec![C0; dim];
        for (r, out) in next.iter_mut().enumerate() {
            let mut acc = C0;
            for c in 0..dim {
                let m = full[[r, c]];
                if m != C0 {
                    acc += m * state[c];
                }
            }
            *out = acc;
        }
        state = next;
    }
    state
}

/// A random circuit over the full named gate set (no symbolic parameters).
pub fn random_circuit(n: usize, depth: usize, rng: &mut ChaCha8Rng) -> Circuit {
    let mut c = Circuit::new(n);
    for _ in 0..depth {
        match rng.gen_range(0..10) {
            0 => c.gate(GateKind::H, &[rng.gen_range(0..n)]),
            1 => c.gate(GateKind::S, &[rng.gen_range(0..n)]),
            2 => c.gate(GateKind::T, &[rng.gen_range(0..n)]),
            3 => c.gate(
                [GateKind::X, GateKind::Y, GateKind::Z][rng.gen_range(0..3)].clone(),
                &[rng.gen_range(0..n)],
            ),
            4..=5 => c.rot(
                [GateKind::Rx, GateKind::Ry, GateKind::Rz][rng.gen_range(0..3)].clone(),
                rng.gen_range(0..n),
                Param::Angle(rng.gen::<f64>() * std::f64::consts::TAU),
            ),
            6..=8 => {
                let a = rng.gen_range(0..n);
                let b = (a + 1 + rng.gen_range(0..n - 1)) % n;
                c.gate(
                    [GateKind::Cx, GateKind::Cz, GateKind::Swap][rng.gen_range(0..3)].clone(),
                    &[a, b],
                )
            }
            _ => {
                if n >= 3 {
                    let a = rng.gen_range(0..n);
                    let b = (a + 1 + rng.gen_range(0..n - 1)) % n;
                    let mut cq = rng.gen_range(0..n);
                    while cq == a || cq == b {
                        cq = (cq + 1) % n;
                    }
                    c.gate(GateKind::Ccz, &[a, b, cq])
                } else {
                    c.gate(GateKind::H, &[rng.gen_range(0..n)])
                }
            }
        };
    }
    c
}

/// A random parametric ansatz with `m` fresh slots over Pauli rotations and
/// entangling gates.
pub fn random_parametric(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Circuit {
    let mut c = Circuit::new(n);
    let mut slot = 0;
    while slot < m {
        for q in 0..n {
            if slot >= m {
                break;
            }
            let kind = [GateKind::Rx, GateKind::Ry, GateKind::Rz][rng.gen_range(0..3)].clone();
            c.push(Gate::rotation(kind, q, Param::Slot(slot)).unwrap())
                .unwrap();
            slot += 1;
        }
        for q in 0..n.saturating_sub(1) {
            if rng.gen::<bool>() {
                c.gate(GateKind::Cx, &[q, q + 1]);
            }
        }
        if rng.gen::<bool>() {
            c.gate(GateKind::H, &[rng.gen_range(0..n)]);
        }
    }
    c
}
