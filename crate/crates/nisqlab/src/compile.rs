//! Circuit compilation passes: gate fusion, CNOT-circuit synthesis over
//! GF(2), and heuristic SWAP routing onto a coupling graph.

use ndarray::Array2;
use num_complex::Complex64;

use crate::circuit::{Circuit, CouplingGraph, Gate, GateKind};
use crate::error::{Error, Result};

const C1: Complex64 = Complex64::new(1.0, 0.0);

/// An invertible boolean matrix representing a CNOT circuit: the circuit
/// maps basis state x to Mx over GF(2). Rows are stored as bit masks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct F2Matrix {
    n: usize,
    rows: Vec<u64>,
}

impl F2Matrix {
    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 || n > 64 {
            return Err(Error::InvalidInput(
                "F2Matrix supports 1..=64 qubits".into(),
            ));
        }
        Ok(F2Matrix {
            n,
            rows: (0..n).map(|i| 1u64 << i).collect(),
        })
    }

    pub fn from_rows(rows: Vec<u64>) -> Result<Self> {
        let n = rows.len();
        if n == 0 || n > 64 {
            return Err(Error::InvalidInput(
                "F2Matrix supports 1..=64 qubits".into(),
            ));
        }
        Ok(F2Matrix { n, rows })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bit(&self, row: usize, col: usize) -> bool {
        (self.rows[row] >> col) & 1 == 1
    }

    /// Row operation row_t ^= row_c; the effect of CX(control=c, target=t).
    pub fn add_row(&mut self, control: usize, target: usize) {
        let src = self.rows[control];
        self.rows[target] ^= src;
    }

    /// Matrix product over GF(2): self * other.
    pub fn mul(&self, other: &F2Matrix) -> F2Matrix {
        let n = self.n;
        let mut rows = vec![0u64; n];
        for (i, out) in rows.iter_mut().enumerate() {
            for k in 0..n {
                if (self.rows[i] >> k) & 1 == 1 {
                    *out ^= other.rows[k];
                }
            }
        }
        F2Matrix { n, rows }
    }

    /// Map a basis vector through the matrix.
    pub fn apply(&self, x: u64) -> u64 {
        let mut out = 0u64;
        for (i, &row) in self.rows.iter().enumerate() {
            if (row & x).count_ones() % 2 == 1 {
                out |= 1 << i;
            }
        }
        out
    }

    pub fn is_invertible(&self) -> bool {
        let mut rows = self.rows.clone();
        let n = self.n;
        for col in 0..n {
            let pivot = (col..n).find(|&r| (rows[r] >> col) & 1 == 1);
            let pivot = match pivot {
                Some(p) => p,
                None => return false,
            };
            rows.swap(col, pivot);
            for r in 0..n {
                if r != col && (rows[r] >> col) & 1 == 1 {
                    rows[r] ^= rows[col];
                }
            }
        }
        true
    }
}

/// Interpret a CNOT-only circuit as its GF(2) matrix, accumulating row
/// operations in gate order.
pub fn cnot_to_matrix(circuit: &Circuit) -> Result<F2Matrix> {
    let mut m = F2Matrix::identity(circuit.n_qubits)?;
    for g in &circuit.ops {
        match g.kind {
            GateKind::Cx => m.add_row(g.targets[0], g.targets[1]),
            GateKind::Barrier => {}
            _ => {
                return Err(Error::InvalidGate(format!(
                    "cnot_to_matrix requires a CNOT-only circuit, found `{}`",
                    g.kind.name()
                )))
            }
        }
    }
    Ok(m)
}

/// Synthesize a CNOT circuit realizing an invertible GF(2) matrix by
/// Gaussian elimination (no connectivity constraints).
pub fn matrix_to_cnot(matrix: &F2Matrix) -> Result<Circuit> {
    if !matrix.is_invertible() {
        return Err(Error::SingularMatrix);
    }
    let n = matrix.n;
    let mut work = matrix.clone();
    // elimination ops E_k ... E_1 M = I, each recorded as (control, target)
    let mut ops: Vec<(usize, usize)> = Vec::new();
    let eliminate = |work: &mut F2Matrix, ops: &mut Vec<(usize, usize)>, c: usize, t: usize| {
        work.add_row(c, t);
        ops.push((c, t));
    };
    for col in 0..n {
        if !work.bit(col, col) {
            let pivot = (col + 1..n)
                .find(|&r| work.bit(r, col))
                .expect("matrix is invertible");
            eliminate(&mut work, &mut ops, pivot, col);
        }
        for row in 0..n {
            if row != col && work.bit(row, col) {
                eliminate(&mut work, &mut ops, col, row);
            }
        }
    }
    // M = E_1 E_2 ... E_k (each elementary op is an involution), and a gate
    // list [g_1 .. g_m] realizes E_{g_m} ... E_{g_1}; emit in reverse.
    let mut circuit = Circuit::new(n);
    for &(c, t) in ops.iter().rev() {
        circuit.push(Gate::new(GateKind::Cx, vec![c, t])?)?;
    }
    Ok(circuit)
}

/// Options for [`fuse_gates`].
#[derive(Debug, Clone, Copy)]
pub struct FuseOptions {
    /// Also absorb single-qubit gates into an adjacent two-qubit gate,
    /// producing two-qubit raw matrices.
    pub absorb_into_two_qubit: bool,
    /// Drop fused blocks that are the identity to this tolerance.
    pub identity_tol: f64,
}

impl Default for FuseOptions {
    fn default() -> Self {
        FuseOptions {
            absorb_into_two_qubit: false,
            identity_tol: 1e-10,
        }
    }
}

#[derive(Clone)]
enum FuseSlot {
    Emitted(Gate),
    Pending1q {
        qubit: usize,
        matrix: Array2<Complex64>,
        count: usize,
        original: Gate,
    },
}

/// Merge maximal runs of adjacent same-qubit single-qubit gates into raw
/// matrix gates, dropping blocks that reduce to the identity. Barriers cut
/// fusion regions and are preserved. All parameters must be bound.
pub fn fuse_gates(circuit: &Circuit, options: &FuseOptions) -> Result<Circuit> {
    let mut out: Vec<FuseSlot> = Vec::new();
    // index into `out` of the pending 1q block per qubit
    let mut pending: Vec<Option<usize>> = vec![None; circuit.n_qubits];

    fn remove_slot(out: &mut Vec<FuseSlot>, pending: &mut [Option<usize>], i: usize) {
        out.remove(i);
        for p in pending.iter_mut().flatten() {
            if *p > i {
                *p -= 1;
            }
        }
    }

    fn flush(out: &mut Vec<FuseSlot>, pending: &mut [Option<usize>], q: usize, tol: f64) {
        if let Some(i) = pending[q].take() {
            let slot = out[i].clone();
            if let FuseSlot::Pending1q {
                qubit,
                matrix,
                count,
                original,
            } = slot
            {
                if is_identity(&matrix, tol) {
                    remove_slot(out, pending, i);
                } else if count == 1 {
                    out[i] = FuseSlot::Emitted(original);
                } else {
                    out[i] = FuseSlot::Emitted(Gate::raw(vec![qubit], matrix).unwrap());
                }
            }
        }
    }

    for g in &circuit.ops {
        match g.arity() {
            0 => {
                // barrier: cut all fusion regions
                for q in 0..circuit.n_qubits {
                    flush(&mut out, &mut pending, q, options.identity_tol);
                }
                out.push(FuseSlot::Emitted(g.clone()));
            }
            1 => {
                let q = g.targets[0];
                let m = g.matrix(&[])?;
                match pending[q] {
                    Some(i) => {
                        if let FuseSlot::Pending1q { matrix, count, .. } = &mut out[i] {
                            *matrix = m.dot(matrix);
                            *count += 1;
                        }
                    }
                    None => {
                        out.push(FuseSlot::Pending1q {
                            qubit: q,
                            matrix: m,
                            count: 1,
                            original: g.clone(),
                        });
                        pending[q] = Some(out.len() - 1);
                    }
                }
            }
            _ => {
                if options.absorb_into_two_qubit && g.arity() == 2 {
                    // pull pending 1q blocks on both targets into the gate
                    let mut m = g.matrix(&[])?;
                    for (pos, &q) in g.targets.iter().enumerate() {
                        if let Some(i) = pending[q].take() {
                            if let FuseSlot::Pending1q { matrix, .. } = &out[i] {
                                let lifted = lift_1q_to_2q(matrix, pos);
                                m = m.dot(&lifted);
                            }
                            remove_slot(&mut out, &mut pending, i);
                        }
                    }
                    if is_identity(&m, options.identity_tol) {
                        continue;
                    }
                    out.push(FuseSlot::Emitted(Gate::raw(g.targets.clone(), m)?));
                } else {
                    for &q in &g.targets {
                        flush(&mut out, &mut pending, q, options.identity_tol);
                    }
                    out.push(FuseSlot::Emitted(g.clone()));
                }
            }
        }
    }
    for q in 0..circuit.n_qubits {
        flush(&mut out, &mut pending, q, options.identity_tol);
    }

    let mut fused = Circuit::new(circuit.n_qubits);
    for slot in out {
        match slot {
            FuseSlot::Emitted(g) => fused.push(g)?,
            FuseSlot::Pending1q { .. } => unreachable!("all pending blocks flushed"),
        }
    }
    Ok(fused)
}

fn is_identity(m: &Array2<Complex64>, tol: f64) -> bool {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let expect = if r == c { C1 } else { Complex64::new(0.0, 0.0) };
            if (m[[r, c]] - expect).norm() > tol {
                return false;
            }
        }
    }
    true
}

/// Embed a 1q matrix into the 4x4 space of a 2q gate at position 0 (most
/// significant gate bit) or 1.
fn lift_1q_to_2q(m: &Array2<Complex64>, pos: usize) -> Array2<Complex64> {
    let mut out = Array2::zeros((4, 4));
    for r in 0..2 {
        for c in 0..2 {
            for other in 0..2 {
                let (row, col) = if pos == 0 {
                    ((r << 1) | other, (c << 1) | other)
                } else {
                    ((other << 1) | r, (other << 1) | c)
                };
                out[[row, col]] += m[[r, c]];
            }
        }
    }
    out
}

/// A logical-to-physical qubit assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// physical_of[logical] = physical qubit
    physical_of: Vec<usize>,
}

impl Layout {
    pub fn identity(n: usize) -> Self {
        Layout {
            physical_of: (0..n).collect(),
        }
    }

    pub fn new(physical_of: Vec<usize>) -> Result<Self> {
        let n = physical_of.len();
        let mut seen = vec![false; n];
        for &p in &physical_of {
            if p >= n || seen[p] {
                return Err(Error::InvalidInput("layout is not a bijection".into()));
            }
            seen[p] = true;
        }
        Ok(Layout { physical_of })
    }

    pub fn physical(&self, logical: usize) -> usize {
        self.physical_of[logical]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.physical_of
    }

    /// Exchange the logical qubits sitting on two physical nodes.
    fn swap_physical(&mut self, a: usize, b: usize) {
        for p in &mut self.physical_of {
            if *p == a {
                *p = b;
            } else if *p == b {
                *p = a;
            }
        }
    }
}

/// Result of routing: the physical circuit, the final layout, and the
/// number of SWAPs inserted.
#[derive(Debug, Clone)]
pub struct Routed {
    pub circuit: Circuit,
    pub final_layout: Layout,
    pub swaps_inserted: usize,
}

/// Greedy front-layer SWAP router.
///
/// Maintains the set of not-yet-executable two-qubit gates whose
/// predecessors have all run (the front layer). While some front gate is
/// not on a coupling edge, candidate SWAPs on edges touching front-layer
/// qubits are scored by the summed shortest-path distance of the front
/// layer after the SWAP; the lowest-scoring SWAP is applied (ties broken by
/// lowest edge index). A stall counter forces a fallback SWAP along the
/// first front gate's shortest path when no strict improvement happens, so
/// routing always terminates.
pub fn route(circuit: &Circuit, graph: &CouplingGraph, initial: &Layout) -> Result<Routed> {
    let n = circuit.n_qubits;
    if graph.n_nodes() < n {
        return Err(Error::WidthMismatch {
            expected: n,
            actual: graph.n_nodes(),
        });
    }
    if initial.physical_of.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: initial.physical_of.len(),
        });
    }
    for g in &circuit.ops {
        if g.arity() > 2 {
            return Err(Error::InvalidGate(
                "routing requires gates of arity <= 2; decompose first".into(),
            ));
        }
    }

    // per-qubit program order: gate indices touching each logical qubit
    let mut per_qubit: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, g) in circuit.ops.iter().enumerate() {
        for &t in &g.targets {
            per_qubit[t].push(i);
        }
    }
    let mut next_of_qubit: Vec<usize> = vec![0; n];
    let mut executed = vec![false; circuit.ops.len()];
    let mut layout = initial.clone();
    let mut out = Circuit::new(graph.n_nodes());
    let mut swaps = 0usize;
    let mut stall = 0usize;
    const STALL_LIMIT: usize = 3;

    let ready = |q: usize, i: usize, next_of_qubit: &[usize], per_qubit: &[Vec<usize>]| -> bool {
        per_qubit[q].get(next_of_qubit[q]) == Some(&i)
    };

    loop {
        // execute everything currently executable
        let mut progress = true;
        while progress {
            progress = false;
            for (i, g) in circuit.ops.iter().enumerate() {
                if executed[i] {
                    continue;
                }
                let all_ready = g
                    .targets
                    .iter()
                    .all(|&q| ready(q, i, &next_of_qubit, &per_qubit));
                if !all_ready && g.arity() > 0 {
                    continue;
                }
                let can_run = match g.arity() {
                    0 | 1 => true,
                    _ => {
                        let (a, b) = (layout.physical(g.targets[0]), layout.physical(g.targets[1]));
                        graph.has_edge(a, b)
                    }
                };
                if can_run {
                    let phys_targets: Vec<usize> =
                        g.targets.iter().map(|&q| layout.physical(q)).collect();
                    out.push(Gate {
                        kind: g.kind.clone(),
                        targets: phys_targets,
                        param: g.param,
                    })?;
                    for &q in &g.targets {
                        next_of_qubit[q] += 1;
                    }
                    executed[i] = true;
                    progress = true;
                }
            }
        }

        // front layer: ready-but-blocked two-qubit gates
        let front: Vec<usize> = circuit
            .ops
            .iter()
            .enumerate()
            .filter(|(i, g)| {
                !executed[*i]
                    && g.arity() == 2
                    && g.targets
                        .iter()
                        .all(|&q| ready(q, *i, &next_of_qubit, &per_qubit))
            })
            .map(|(i, _)| i)
            .collect();
        if front.is_empty() {
            break;
        }

        let distance_sum = |layout: &Layout| -> usize {
            front
                .iter()
                .map(|&i| {
                    let g = &circuit.ops[i];
                    graph.distance(layout.physical(g.targets[0]), layout.physical(g.targets[1]))
                })
                .sum()
        };
        let current = distance_sum(&layout);

        // candidate SWAPs: coupling edges touching a front-layer qubit
        let mut front_phys: Vec<usize> = Vec::new();
        for &i in &front {
            for &q in &circuit.ops[i].targets {
                front_phys.push(layout.physical(q));
            }
        }
        let mut best: Option<(usize, usize, (usize, usize))> = None; // (score, edge_idx, edge)
        for (edge_idx, &(a, b)) in graph.edges().iter().enumerate() {
            if !front_phys.contains(&a) && !front_phys.contains(&b) {
                continue;
            }
            let mut trial = layout.clone();
            trial.swap_physical(a, b);
            let score = distance_sum(&trial);
            let better = match best {
                None => true,
                Some((s, e, _)) => score < s || (score == s && edge_idx < e),
            };
            if better {
                best = Some((score, edge_idx, (a, b)));
            }
        }

        let (score, _, edge) = best.expect("front layer implies candidate swaps exist");
        let chosen = if score < current {
            stall = 0;
            edge
        } else if stall < STALL_LIMIT {
            stall += 1;
            edge
        } else {
            // fallback: step the first front gate along its shortest path
            stall = 0;
            let g = &circuit.ops[front[0]];
            let a = layout.physical(g.targets[0]);
            let b = layout.physical(g.targets[1]);
            let path = graph.shortest_path(a, b);
            (path[0], path[1])
        };

        out.push(Gate::new(GateKind::Swap, vec![chosen.0, chosen.1])?)?;
        layout.swap_physical(chosen.0, chosen.1);
        swaps += 1;
    }

    Ok(Routed {
        circuit: out,
        final_layout: layout,
        swaps_inserted: swaps,
    })
}
