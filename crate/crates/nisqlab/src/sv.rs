//! Dense Schrödinger-algorithm state-vector simulator.
//!
//! The state is the full coefficient tensor of the register, stored as a
//! vector of 2^n complex amplitudes (qubit 0 is the most significant bit of
//! the index). Gate application contracts the gate tensor against the state
//! in place: the uncontracted indices are iterated in contiguous groups and
//! each group performs a small 2^k x 2^k matrix-vector product, so no
//! auxiliary buffer proportional to the state is ever allocated.
//!
//! [`sf_amplitude`] implements the Schrödinger-Feynman evaluation of a
//! single amplitude: the register is split in two, every cross-partition
//! gate is split into a sum of local operator pairs by SVD, and the two
//! subsystem states are evolved independently for each choice of Schmidt
//! path.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::Array2;
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::circuit::{bits_to_index, Circuit, Gate, GateKind, Observable};
use crate::error::{Error, Result};

/// Default memory budget for a single state allocation (4 GiB).
pub const DEFAULT_MEMORY_BUDGET: u128 = 4 << 30;

/// States below this width run their kernels serially; larger ones
/// parallelize the outer loops over amplitude blocks.
const PAR_THRESHOLD_QUBITS: usize = 16;

/// Number of basis pairs processed per inner batch of the single-qubit
/// kernel. The contraction itself is unaffected; the batch size only sets
/// how much contiguous data each outer iteration touches.
pub const KERNEL_BLOCK_PAIRS: usize = 64;

static LIVE_STATES: AtomicUsize = AtomicUsize::new(0);
static PEAK_STATES: AtomicUsize = AtomicUsize::new(0);

/// Number of full state buffers currently alive. Used to assert memory
/// contracts (e.g. the adjoint-gradient two-buffer guarantee).
pub fn live_state_count() -> usize {
    LIVE_STATES.load(Ordering::SeqCst)
}

/// High-water mark of [`live_state_count`] since the last reset.
pub fn peak_state_count() -> usize {
    PEAK_STATES.load(Ordering::SeqCst)
}

pub fn reset_peak_state_count() {
    PEAK_STATES.store(LIVE_STATES.load(Ordering::SeqCst), Ordering::SeqCst);
}

fn track_alloc() {
    let live = LIVE_STATES.fetch_add(1, Ordering::SeqCst) + 1;
    PEAK_STATES.fetch_max(live, Ordering::SeqCst);
}

/// A dense pure state of `n` qubits.
#[derive(Debug)]
pub struct StateVector {
    n: usize,
    amps: Vec<Complex64>,
}

impl Clone for StateVector {
    fn clone(&self) -> Self {
        track_alloc();
        StateVector {
            n: self.n,
            amps: self.amps.clone(),
        }
    }
}

impl Drop for StateVector {
    fn drop(&mut self) {
        LIVE_STATES.fetch_sub(1, Ordering::SeqCst);
    }
}

impl StateVector {
    /// |0...0> on `n` qubits under the default memory budget.
    pub fn zero(n: usize) -> Result<Self> {
        Self::zero_with_budget(n, DEFAULT_MEMORY_BUDGET)
    }

    /// |0...0> with an explicit budget in bytes. The error reports the
    /// number of bytes the state would need.
    pub fn zero_with_budget(n: usize, budget_bytes: u128) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("state needs at least one qubit".into()));
        }
        let required_bytes = (1u128 << n) * std::mem::size_of::<Complex64>() as u128;
        if required_bytes > budget_bytes {
            return Err(Error::MemoryBudget {
                required_bytes,
                budget_bytes,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); 1 << n];
        amps[0] = Complex64::new(1.0, 0.0);
        track_alloc();
        Ok(StateVector { n, amps })
    }

    pub fn from_amplitudes(n: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != 1 << n {
            return Err(Error::LengthMismatch {
                expected: 1 << n,
                actual: amps.len(),
            });
        }
        track_alloc();
        Ok(StateVector { n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    /// The amplitude of a bitstring (qubit 0 leftmost).
    pub fn amplitude(&self, bits: &[u8]) -> Result<Complex64> {
        if bits.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: bits.len(),
            });
        }
        Ok(self.amps[bits_to_index(bits)])
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Apply one gate in place, resolving parameters against `params`.
    pub fn apply_gate(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        match gate.kind {
            GateKind::Barrier | GateKind::I => return Ok(()),
            _ => {}
        }
        for &t in &gate.targets {
            if t >= self.n {
                return Err(Error::QubitOutOfRange {
                    index: t,
                    width: self.n,
                });
            }
        }
        let m = gate.matrix(params)?;
        self.apply_matrix(&m, &gate.targets);
        Ok(())
    }

    /// Run a whole circuit.
    pub fn apply_circuit(&mut self, circuit: &Circuit, params: &[f64]) -> Result<()> {
        if circuit.n_qubits != self.n {
            return Err(Error::WidthMismatch {
                expected: self.n,
                actual: circuit.n_qubits,
            });
        }
        for g in &circuit.ops {
            self.apply_gate(g, params)?;
        }
        Ok(())
    }

    /// Contract an arbitrary 2^k x 2^k matrix against the state on the given
    /// targets (targets[0] = most significant gate bit). Unitarity is not
    /// assumed; Schmidt factors and channel superoperators also come through
    /// here.
    pub fn apply_matrix(&mut self, m: &Array2<Complex64>, targets: &[usize]) {
        let k = targets.len();
        assert_eq!(m.nrows(), 1 << k, "matrix dimension mismatch");
        assert_eq!(m.ncols(), 1 << k, "matrix dimension mismatch");
        assert!(k <= self.n);
        if k == 0 {
            return;
        }

        // Canonicalize targets ascending; compensate by permuting the matrix.
        let mut sorted = targets.to_vec();
        sorted.sort_unstable();
        let matrix = if sorted == targets {
            m.clone()
        } else {
            permute_gate_matrix(m, targets, &sorted)
        };

        if k == 1 {
            self.apply_1q(&matrix, sorted[0]);
        } else if let Some(diag) = diagonal_of(&matrix) {
            self.apply_diagonal(&diag, &sorted);
        } else {
            self.apply_kq(&matrix, &sorted);
        }
    }

    /// Single-qubit kernel: pairs (i, i + stride) within aligned blocks,
    /// batched so each outer iteration walks contiguous memory.
    fn apply_1q(&mut self, m: &Array2<Complex64>, q: usize) {
        let stride = 1usize << (self.n - 1 - q);
        let (m00, m01, m10, m11) = (m[[0, 0]], m[[0, 1]], m[[1, 0]], m[[1, 1]]);
        let block = 2 * stride;
        let body = |chunk: &mut [Complex64]| {
            let (lo, hi) = chunk.split_at_mut(stride);
            let mut off = 0;
            while off < stride {
                let batch = KERNEL_BLOCK_PAIRS.min(stride - off);
                for i in off..off + batch {
                    let a = lo[i];
                    let b = hi[i];
                    lo[i] = m00 * a + m01 * b;
                    hi[i] = m10 * a + m11 * b;
                }
                off += batch;
            }
        };
        if self.n >= PAR_THRESHOLD_QUBITS && self.amps.len() / block >= 2 {
            self.amps.par_chunks_mut(block).for_each(body);
        } else {
            self.amps.chunks_mut(block).for_each(body);
        }
    }

    /// Diagonal gates reduce to a phase per basis state.
    fn apply_diagonal(&mut self, diag: &[Complex64], sorted_targets: &[usize]) {
        let n = self.n;
        let masks: Vec<usize> = sorted_targets
            .iter()
            .map(|&t| 1usize << (n - 1 - t))
            .collect();
        let k = masks.len();
        let body = |(start, chunk): (usize, &mut [Complex64])| {
            for (off, a) in chunk.iter_mut().enumerate() {
                let i = start + off;
                let mut g = 0usize;
                for (j, &mask) in masks.iter().enumerate() {
                    if i & mask != 0 {
                        g |= 1 << (k - 1 - j);
                    }
                }
                *a *= diag[g];
            }
        };
        if self.n >= PAR_THRESHOLD_QUBITS {
            let block = self.amps.len() / rayon::current_num_threads().max(1);
            let block = block.max(1024);
            self.amps
                .par_chunks_mut(block)
                .enumerate()
                .for_each(|(ci, chunk)| body((ci * block, chunk)));
        } else {
            body((0, &mut self.amps));
        }
    }

    /// General k-qubit kernel: iterate bases with all target bits clear and
    /// contract the 2^k gathered amplitudes with the gate matrix in place.
    fn apply_kq(&mut self, m: &Array2<Complex64>, sorted_targets: &[usize]) {
        let n = self.n;
        let k = sorted_targets.len();
        let dim = 1usize << k;
        // bit positions of the targets, ascending (LSB first)
        let mut positions: Vec<usize> = sorted_targets.iter().map(|&t| n - 1 - t).collect();
        positions.sort_unstable();
        // offset of each gate-space index: gate bit j (MSB first) belongs to
        // sorted_targets[j], i.e. bit position n-1-sorted_targets[j]
        let offsets: Vec<usize> = (0..dim)
            .map(|g| {
                let mut off = 0usize;
                for (j, &t) in sorted_targets.iter().enumerate() {
                    if g & (1 << (k - 1 - j)) != 0 {
                        off |= 1 << (n - 1 - t);
                    }
                }
                off
            })
            .collect();

        // Blocks of twice the largest stride are self-contained, which keeps
        // the outer loops parallelizable without synchronization.
        let max_stride = 1usize << (n - 1 - sorted_targets[0]);
        let block = 2 * max_stride;
        let flat: &[Complex64] = unsafe { std::slice::from_raw_parts(m.as_ptr(), dim * dim) };
        let body = |chunk: &mut [Complex64]| {
            let n_bases = chunk.len() >> k;
            let mut scratch = vec![Complex64::new(0.0, 0.0); dim];
            for b in 0..n_bases {
                let base = expand_index(b, &positions);
                for (g, s) in scratch.iter_mut().enumerate() {
                    *s = chunk[base + offsets[g]];
                }
                for (r, row) in flat.chunks(dim).enumerate() {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, s) in scratch.iter().enumerate() {
                        acc += row[c] * s;
                    }
                    chunk[base + offsets[r]] = acc;
                }
            }
        };
        if self.n >= PAR_THRESHOLD_QUBITS && self.amps.len() / block >= 2 {
            self.amps.par_chunks_mut(block).for_each(body);
        } else {
            self.amps.chunks_mut(block).for_each(body);
        }
    }

    /// <psi| O |psi> as a real number, evaluated by direct index loops; no
    /// second state buffer is allocated.
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        if obs.width() != self.n {
            return Err(Error::WidthMismatch {
                expected: self.n,
                actual: obs.width(),
            });
        }
        let mut total = Complex64::new(0.0, 0.0);
        for term in &obs.terms {
            let (mx, _) = term.masks();
            let partial: Complex64 = if self.n >= PAR_THRESHOLD_QUBITS {
                let chunk = 1usize << 12;
                let sums: Vec<Complex64> = self
                    .amps
                    .par_chunks(chunk)
                    .enumerate()
                    .map(|(ci, amps)| {
                        let start = ci * chunk;
                        let mut acc = Complex64::new(0.0, 0.0);
                        for (off, &a) in amps.iter().enumerate() {
                            let c = start + off;
                            acc += self.amps[c ^ mx].conj() * term.basis_action(c) * a;
                        }
                        acc
                    })
                    .collect();
                sums.into_iter().sum()
            } else {
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, &a) in self.amps.iter().enumerate() {
                    acc += self.amps[c ^ mx].conj() * term.basis_action(c) * a;
                }
                acc
            };
            total += partial * term.coefficient;
        }
        if total.im.abs() > 1e-8 {
            return Err(Error::NumericalConsistency(format!(
                "expectation has imaginary part {:.3e}",
                total.im
            )));
        }
        Ok(total.re)
    }

    /// Inner product <self|other>.
    pub fn dot(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Draw `shots` basis-state indices i.i.d. from |c_b|^2. Deterministic
    /// for a fixed RNG state.
    pub fn sample<R: Rng>(&self, shots: usize, rng: &mut R) -> Vec<usize> {
        let mut cumulative = Vec::with_capacity(self.amps.len());
        let mut acc = 0.0f64;
        for a in &self.amps {
            acc += a.norm_sqr();
            cumulative.push(acc);
        }
        let total = acc;
        (0..shots)
            .map(|_| {
                let u: f64 = rng.gen::<f64>() * total;
                match cumulative.binary_search_by(|probe| probe.partial_cmp(&u).unwrap()) {
                    Ok(i) | Err(i) => i.min(self.amps.len() - 1),
                }
            })
            .collect()
    }

    /// Projective measurement of one qubit: draws the outcome, collapses the
    /// state and renormalizes by the outcome probability.
    pub fn measure_qubit<R: Rng>(&mut self, q: usize, rng: &mut R) -> Result<u8> {
        if q >= self.n {
            return Err(Error::QubitOutOfRange {
                index: q,
                width: self.n,
            });
        }
        let mask = 1usize << (self.n - 1 - q);
        let p1: f64 = self
            .amps
            .iter()
            .enumerate()
            .filter(|(i, _)| i & mask != 0)
            .map(|(_, a)| a.norm_sqr())
            .sum();
        let outcome = if rng.gen::<f64>() < p1 { 1u8 } else { 0u8 };
        let prob = if outcome == 1 { p1 } else { 1.0 - p1 };
        if prob < 1e-12 {
            return Err(Error::ProbabilityUnderflow { prob });
        }
        let scale = 1.0 / prob.sqrt();
        for (i, a) in self.amps.iter_mut().enumerate() {
            let bit = ((i & mask) != 0) as u8;
            if bit == outcome {
                *a *= scale;
            } else {
                *a = Complex64::new(0.0, 0.0);
            }
        }
        Ok(outcome)
    }

    /// Relabel qubits: `perm[q]` is the new position of qubit `q`.
    pub fn permute_qubits(&self, perm: &[usize]) -> Result<StateVector> {
        if perm.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: perm.len(),
            });
        }
        let mut seen = vec![false; self.n];
        for &p in perm {
            if p >= self.n || seen[p] {
                return Err(Error::InvalidInput("permutation is not a bijection".into()));
            }
            seen[p] = true;
        }
        let n = self.n;
        let mut out = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        for (i, &a) in self.amps.iter().enumerate() {
            let mut j = 0usize;
            for (q, &p) in perm.iter().enumerate() {
                if i & (1 << (n - 1 - q)) != 0 {
                    j |= 1 << (n - 1 - p);
                }
            }
            out[j] = a;
        }
        StateVector::from_amplitudes(n, out)
    }
}

/// Insert zero bits into `m` at the given ascending bit positions.
#[inline]
fn expand_index(mut m: usize, positions_ascending: &[usize]) -> usize {
    for &pos in positions_ascending {
        let low = m & ((1 << pos) - 1);
        m = ((m >> pos) << (pos + 1)) | low;
    }
    m
}

/// Re-express a gate matrix after reordering its targets.
pub(crate) fn permute_gate_matrix(
    m: &Array2<Complex64>,
    original: &[usize],
    sorted: &[usize],
) -> Array2<Complex64> {
    let k = original.len();
    let dim = 1usize << k;
    // map each gate bit of the sorted layout to its bit in the original
    let bit_of: Vec<usize> = sorted
        .iter()
        .map(|t| original.iter().position(|o| o == t).unwrap())
        .collect();
    let remap = |g: usize| -> usize {
        let mut orig = 0usize;
        for (j, &ob) in bit_of.iter().enumerate() {
            if g & (1 << (k - 1 - j)) != 0 {
                orig |= 1 << (k - 1 - ob);
            }
        }
        orig
    };
    let mut out = Array2::zeros((dim, dim));
    for r in 0..dim {
        for c in 0..dim {
            out[[r, c]] = m[[remap(r), remap(c)]];
        }
    }
    out
}

/// If the matrix is diagonal, return its diagonal.
fn diagonal_of(m: &Array2<Complex64>) -> Option<Vec<Complex64>> {
    let dim = m.nrows();
    for r in 0..dim {
        for c in 0..dim {
            if r != c && m[[r, c]].norm_sqr() != 0.0 {
                return None;
            }
        }
    }
    Some((0..dim).map(|i| m[[i, i]]).collect())
}

/// A two-set partition of the register for Schrödinger-Feynman evaluation.
#[derive(Debug, Clone)]
pub struct Bipartition {
    a: Vec<usize>,
    b: Vec<usize>,
}

impl Bipartition {
    /// The two sets must be disjoint and cover 0..n. They are kept sorted;
    /// subsystem-local qubit indices follow the sorted order.
    pub fn new(n: usize, a: &[usize], b: &[usize]) -> Result<Self> {
        let mut seen = vec![false; n];
        for &q in a.iter().chain(b) {
            if q >= n {
                return Err(Error::QubitOutOfRange { index: q, width: n });
            }
            if seen[q] {
                return Err(Error::InvalidInput(format!("qubit {q} assigned twice")));
            }
            seen[q] = true;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::InvalidInput(
                "partition does not cover all qubits".into(),
            ));
        }
        let mut a = a.to_vec();
        let mut b = b.to_vec();
        a.sort_unstable();
        b.sort_unstable();
        Ok(Bipartition { a, b })
    }

    pub fn side_a(&self) -> &[usize] {
        &self.a
    }

    pub fn side_b(&self) -> &[usize] {
        &self.b
    }

    fn local(&self, q: usize) -> (bool, usize) {
        if let Ok(i) = self.a.binary_search(&q) {
            (true, i)
        } else {
            (false, self.b.binary_search(&q).unwrap())
        }
    }
}

/// Result of a Schrödinger-Feynman amplitude evaluation.
#[derive(Debug, Clone)]
pub struct SfAmplitude {
    pub amplitude: Complex64,
    /// Total number of Schmidt paths summed; the product of the per-gate
    /// Schmidt ranks.
    pub n_paths: u128,
    /// Schmidt rank of each cross gate, in circuit order.
    pub schmidt_ranks: Vec<usize>,
}

/// Per-path local operator factors of one cross gate: the A-side and
/// B-side lists, aligned by Schmidt index.
type SchmidtFactors = (Vec<Array2<Complex64>>, Vec<Array2<Complex64>>);

enum SfOp {
    Local {
        side_a: bool,
        matrix: Array2<Complex64>,
        targets: Vec<usize>,
    },
    Cross {
        /// index into the list of cross gates
        index: usize,
        target_a: usize,
        target_b: usize,
    },
}

/// Default cap on the number of Schmidt paths.
pub const DEFAULT_PATH_BUDGET: u128 = 1 << 24;

/// Compute one amplitude `<b|C|0...0>` by splitting the register in two and
/// summing over the Schmidt paths of the cross-partition gates. Singular
/// values below 1e-12 are dropped, so e.g. a CZ contributes rank 2.
pub fn sf_amplitude(
    circuit: &Circuit,
    bits: &[u8],
    part: &Bipartition,
    path_budget: u128,
) -> Result<SfAmplitude> {
    let n = circuit.n_qubits;
    if bits.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: bits.len(),
        });
    }
    if part.a.len() + part.b.len() != n {
        return Err(Error::WidthMismatch {
            expected: n,
            actual: part.a.len() + part.b.len(),
        });
    }

    // classify gates and split the cross ones
    let mut ops = Vec::new();
    let mut factors: Vec<SchmidtFactors> = Vec::new();
    let mut ranks = Vec::new();
    for g in &circuit.ops {
        if matches!(g.kind, GateKind::Barrier | GateKind::I) {
            continue;
        }
        let sides: Vec<(bool, usize)> = g.targets.iter().map(|&t| part.local(t)).collect();
        let all_a = sides.iter().all(|s| s.0);
        let all_b = sides.iter().all(|s| !s.0);
        if all_a || all_b {
            ops.push(SfOp::Local {
                side_a: all_a,
                matrix: g.matrix(&[])?,
                targets: sides.iter().map(|s| s.1).collect(),
            });
        } else {
            if g.arity() != 2 {
                return Err(Error::InvalidInput(
                    "only two-qubit gates may cross the partition".into(),
                ));
            }
            let m = g.matrix(&[])?;
            let (ka, kb) = split_cross_gate(&m, sides[0].0)?;
            let rank = ka.len();
            ranks.push(rank);
            let (ta, tb) = if sides[0].0 {
                (sides[0].1, sides[1].1)
            } else {
                (sides[1].1, sides[0].1)
            };
            ops.push(SfOp::Cross {
                index: factors.len(),
                target_a: ta,
                target_b: tb,
            });
            factors.push((ka, kb));
        }
    }

    let n_paths: u128 = ranks.iter().map(|&r| r as u128).product();
    if n_paths > path_budget {
        return Err(Error::PathBudget {
            paths: n_paths,
            budget: path_budget,
        });
    }

    let bits_a: Vec<u8> = part.a.iter().map(|&q| bits[q]).collect();
    let bits_b: Vec<u8> = part.b.iter().map(|&q| bits[q]).collect();
    let na = part.a.len().max(1);
    let nb = part.b.len().max(1);

    let mut total = Complex64::new(0.0, 0.0);
    let mut choice = vec![0usize; ranks.len()];
    loop {
        let mut psi_a = StateVector::zero(na)?;
        let mut psi_b = StateVector::zero(nb)?;
        for op in &ops {
            match op {
                SfOp::Local {
                    side_a,
                    matrix,
                    targets,
                } => {
                    if *side_a {
                        psi_a.apply_matrix(matrix, targets);
                    } else {
                        psi_b.apply_matrix(matrix, targets);
                    }
                }
                SfOp::Cross {
                    index,
                    target_a,
                    target_b,
                } => {
                    let s = choice[*index];
                    psi_a.apply_matrix(&factors[*index].0[s], &[*target_a]);
                    psi_b.apply_matrix(&factors[*index].1[s], &[*target_b]);
                }
            }
        }
        let amp_a = if part.a.is_empty() {
            Complex64::new(1.0, 0.0)
        } else {
            psi_a.amplitude(&bits_a)?
        };
        let amp_b = if part.b.is_empty() {
            Complex64::new(1.0, 0.0)
        } else {
            psi_b.amplitude(&bits_b)?
        };
        total += amp_a * amp_b;

        // next path
        let mut carry = true;
        for (c, &r) in choice.iter_mut().zip(&ranks) {
            if carry {
                *c += 1;
                if *c == r {
                    *c = 0;
                } else {
                    carry = false;
                }
            }
        }
        if carry {
            break;
        }
    }

    Ok(SfAmplitude {
        amplitude: total,
        n_paths,
        schmidt_ranks: ranks,
    })
}

/// Operator Schmidt decomposition of a two-qubit gate across the partition.
/// `first_in_a` says whether the gate's first target lies in subsystem A.
/// Returns per-path 2x2 factors with the singular value split evenly.
fn split_cross_gate(m: &Array2<Complex64>, first_in_a: bool) -> Result<SchmidtFactors> {
    // Gate index: first target is the MSB. Reshape into
    // K[(sa', sa), (sb', sb)] where `a` is the subsystem-A target.
    let mut k_mat: Array2<Complex64> = Array2::zeros((4, 4));
    for r in 0..4 {
        for c in 0..4 {
            let (b1r, b0r) = (r >> 1, r & 1); // first/second target output bits
            let (b1c, b0c) = (c >> 1, c & 1);
            let (sa_p, sb_p, sa, sb) = if first_in_a {
                (b1r, b0r, b1c, b0c)
            } else {
                (b0r, b1r, b0c, b1c)
            };
            k_mat[[(sa_p << 1) | sa, (sb_p << 1) | sb]] = m[[r, c]];
        }
    }
    let (u, s, vt) = k_mat.svd(true, true)?;
    let u = u.unwrap();
    let vt = vt.unwrap();
    let mut ka = Vec::new();
    let mut kb = Vec::new();
    for (i, &sv) in s.iter().enumerate() {
        if sv < 1e-12 {
            continue;
        }
        let w = sv.sqrt();
        let mut fa = Array2::zeros((2, 2));
        let mut fb = Array2::zeros((2, 2));
        for bit_out in 0..2 {
            for bit_in in 0..2 {
                fa[[bit_out, bit_in]] = u[[(bit_out << 1) | bit_in, i]] * w;
                fb[[bit_out, bit_in]] = vt[[i, (bit_out << 1) | bit_in]] * w;
            }
        }
        ka.push(fa);
        kb.push(fb);
    }
    Ok((ka, kb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{format_bits, parse_circuit, Param, PauliString};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bell() -> StateVector {
        let mut s = StateVector::zero(2).unwrap();
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        s.apply_circuit(&c, &[]).unwrap();
        s
    }

    #[test]
    fn init_zero() {
        let s = StateVector::zero(3).unwrap();
        assert_eq!(s.amplitudes().len(), 8);
        assert_eq!(s.amplitudes()[0], Complex64::new(1.0, 0.0));
        assert_eq!(s.norm_sqr(), 1.0);
    }

    #[test]
    fn memory_budget_reports_required_bytes() {
        let err = StateVector::zero_with_budget(31, 1 << 30).unwrap_err();
        match err {
            Error::MemoryBudget {
                required_bytes,
                budget_bytes,
            } => {
                // double-precision complex amplitudes: 2^31 * 16 bytes
                assert_eq!(required_bytes, (1u128 << 31) * 16);
                assert_eq!(budget_bytes, 1 << 30);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn x_flips_and_cx_controls() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::new(GateKind::X, vec![0]).unwrap(), &[])
            .unwrap();
        assert_eq!(s.amplitudes()[1], Complex64::new(1.0, 0.0));

        let mut s = StateVector::zero(2).unwrap();
        s.apply_gate(&Gate::new(GateKind::X, vec![0]).unwrap(), &[])
            .unwrap();
        s.apply_gate(&Gate::new(GateKind::Cx, vec![0, 1]).unwrap(), &[])
            .unwrap();
        // |10> -> |11>
        assert_abs_diff_eq!((s.amplitudes()[3] - Complex64::new(1.0, 0.0)).norm(), 0.0);
    }

    #[test]
    fn bell_amplitudes() {
        let s = bell();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(s.amplitude(&[0, 0]).unwrap().re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude(&[0, 1]).unwrap().norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude(&[1, 1]).unwrap().re, r, epsilon = 1e-15);
    }

    #[test]
    fn expectation_basics() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::new(GateKind::X, vec![0]).unwrap(), &[])
            .unwrap();
        let z = Observable::single(PauliString::from_word("Z").unwrap());
        assert_abs_diff_eq!(s.expectation(&z).unwrap(), -1.0, epsilon = 1e-14);

        // GHZ_3, <XXX> = +1
        let c = parse_circuit("qreg q[3]; h q[0]; cx q[0],q[1]; cx q[1],q[2];").unwrap();
        let mut s = StateVector::zero(3).unwrap();
        s.apply_circuit(&c, &[]).unwrap();
        let xxx = Observable::single(PauliString::from_word("XXX").unwrap());
        assert_abs_diff_eq!(s.expectation(&xxx).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn sampling_is_deterministic_and_concentrated() {
        let s = bell();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples = s.sample(10_000, &mut rng);
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(samples, s.sample(10_000, &mut rng2));

        let c00 = samples.iter().filter(|&&i| i == 0).count();
        let c11 = samples.iter().filter(|&&i| i == 3).count();
        assert_eq!(c00 + c11, 10_000);
        let dev = (c00 as f64 / 10_000.0 - 0.5).abs();
        assert!(dev < 5.0 * (0.25f64 / 10_000.0).sqrt(), "dev {dev}");
    }

    #[test]
    fn zero_state_samples_all_zero() {
        let s = StateVector::zero(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for idx in s.sample(100, &mut rng) {
            assert_eq!(format_bits(idx, 4), "0000");
        }
    }

    #[test]
    fn measure_collapses_bell() {
        let mut ones = 0;
        for seed in 0..200 {
            let mut s = bell();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bit = s.measure_qubit(0, &mut rng).unwrap();
            ones += bit as usize;
            let expect = if bit == 1 { 3 } else { 0 };
            assert_abs_diff_eq!(s.amplitudes()[expect].norm(), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-12);
        }
        assert!(ones > 60 && ones < 140, "ones = {ones}");
    }

    #[test]
    fn measure_definite_outcome() {
        let mut s = StateVector::zero(1).unwrap();
        s.apply_gate(&Gate::new(GateKind::X, vec![0]).unwrap(), &[])
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(s.measure_qubit(0, &mut rng).unwrap(), 1);
        assert_abs_diff_eq!(s.amplitudes()[1].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn ccz_fast_path_matches_raw_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = random_state(4, &mut rng);
        let mut b = a.clone();
        let ccz = Gate::new(GateKind::Ccz, vec![1, 2, 3]).unwrap();
        let raw = Gate::raw(vec![1, 2, 3], ccz.matrix(&[]).unwrap()).unwrap();
        a.apply_gate(&ccz, &[]).unwrap();
        b.apply_gate(&raw, &[]).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert_eq!(x, y);
        }
    }

    fn random_state(n: usize, rng: &mut ChaCha8Rng) -> StateVector {
        let mut amps: Vec<Complex64> = (0..1usize << n)
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let norm: f64 = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        amps.iter_mut().for_each(|a| *a /= norm);
        StateVector::from_amplitudes(n, amps).unwrap()
    }

    #[test]
    fn unsorted_targets_match_swapped_circuit() {
        // cx q[1],q[0] must equal swap-conjugated cx q[0],q[1]
        let mut s = StateVector::zero(2).unwrap();
        s.apply_gate(&Gate::new(GateKind::H, vec![1]).unwrap(), &[])
            .unwrap();
        s.apply_gate(&Gate::new(GateKind::Cx, vec![1, 0]).unwrap(), &[])
            .unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(s.amplitude(&[0, 0]).unwrap().re, r, epsilon = 1e-15);
        assert_abs_diff_eq!(s.amplitude(&[1, 1]).unwrap().re, r, epsilon = 1e-15);
    }

    #[test]
    fn sf_bell_split() {
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let part = Bipartition::new(2, &[0], &[1]).unwrap();
        let out = sf_amplitude(&c, &[0, 0], &part, DEFAULT_PATH_BUDGET).unwrap();
        assert_eq!(out.schmidt_ranks, vec![2]);
        assert_eq!(out.n_paths, 2);
        assert_abs_diff_eq!(
            out.amplitude.re,
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sf_no_cross_gates_single_path() {
        let c = parse_circuit("qreg q[3]; h q[0]; x q[2]; rz(0.4) q[0];").unwrap();
        let part = Bipartition::new(3, &[0], &[1, 2]).unwrap();
        let out = sf_amplitude(&c, &[1, 0, 1], &part, DEFAULT_PATH_BUDGET).unwrap();
        assert_eq!(out.n_paths, 1);
        let mut s = StateVector::zero(3).unwrap();
        s.apply_circuit(&c, &[]).unwrap();
        let expect = s.amplitude(&[1, 0, 1]).unwrap();
        assert_abs_diff_eq!((out.amplitude - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn sf_cz_has_schmidt_rank_two() {
        let mut c = Circuit::new(2);
        c.gate(GateKind::H, &[0])
            .gate(GateKind::H, &[1])
            .gate(GateKind::Cz, &[0, 1]);
        let part = Bipartition::new(2, &[0], &[1]).unwrap();
        let out = sf_amplitude(&c, &[1, 1], &part, DEFAULT_PATH_BUDGET).unwrap();
        assert_eq!(out.schmidt_ranks, vec![2]);
        assert_abs_diff_eq!(out.amplitude.re, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn sf_path_budget_enforced() {
        let mut c = Circuit::new(2);
        for _ in 0..4 {
            c.gate(GateKind::Cx, &[0, 1]);
        }
        let part = Bipartition::new(2, &[0], &[1]).unwrap();
        let err = sf_amplitude(&c, &[0, 0], &part, 8).unwrap_err();
        match err {
            Error::PathBudget { paths, budget } => {
                assert_eq!(paths, 16);
                assert_eq!(budget, 8);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn norm_preserved_deep_circuit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = StateVector::zero(6).unwrap();
        for _ in 0..100 {
            let q = rng.gen_range(0..6);
            let r = rng.gen_range(0..5);
            match r {
                0 => s
                    .apply_gate(&Gate::new(GateKind::H, vec![q]).unwrap(), &[])
                    .unwrap(),
                1 => s
                    .apply_gate(
                        &Gate::rotation(GateKind::Rx, q, Param::Angle(rng.gen::<f64>() * 6.0))
                            .unwrap(),
                        &[],
                    )
                    .unwrap(),
                2 => s
                    .apply_gate(&Gate::new(GateKind::T, vec![q]).unwrap(), &[])
                    .unwrap(),
                _ => {
                    let p = (q + 1 + rng.gen_range(0..5)) % 6;
                    s.apply_gate(&Gate::new(GateKind::Cx, vec![q, p]).unwrap(), &[])
                        .unwrap();
                }
            }
        }
        assert_abs_diff_eq!(s.norm_sqr(), 1.0, epsilon = 1e-8);
    }

    #[test]
    fn gate_application_allocates_no_state_buffers() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut s = random_state(10, &mut rng);
        let live = super::live_state_count();
        super::reset_peak_state_count();
        for _ in 0..30 {
            let q = rng.gen_range(0..10);
            let p = (q + 1 + rng.gen_range(0..9)) % 10;
            let r = (q + 2 + rng.gen_range(0..7)) % 10;
            s.apply_gate(&Gate::new(GateKind::H, vec![q]).unwrap(), &[])
                .unwrap();
            s.apply_gate(&Gate::new(GateKind::Cx, vec![q, p]).unwrap(), &[])
                .unwrap();
            if r != q && r != p {
                s.apply_gate(&Gate::new(GateKind::Ccz, vec![q, p, r]).unwrap(), &[])
                    .unwrap();
            }
        }
        // kernels work in place: scratch is O(2^k), never a state buffer
        assert_eq!(super::live_state_count(), live);
        assert_eq!(super::peak_state_count(), live);
    }

    #[test]
    fn permute_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(4, &mut rng);
        let perm = vec![2, 0, 3, 1];
        let mut inv = vec![0; 4];
        for (q, &p) in perm.iter().enumerate() {
            inv[p] = q;
        }
        let back = s
            .permute_qubits(&perm)
            .unwrap()
            .permute_qubits(&inv)
            .unwrap();
        for (x, y) in s.amplitudes().iter().zip(back.amplitudes()) {
            assert_eq!(x, y);
        }
    }
}
