//! Benchmarking protocols: Clifford randomized benchmarking, cross-entropy
//! benchmarking, random-quantum-circuit generation with linear XEB
//! fidelity, quantum volume and mirror circuits, plus the shared
//! exponential-decay fit.
//!
//! The one- and two-qubit Clifford groups are enumerated once (24 and 11520
//! elements) by breadth-first closure over {H, S, CX} words; sampling is
//! uniform over the element list and inversion is a group-table lookup on
//! the phase-canonicalized matrix.

use std::collections::HashMap;
use std::sync::OnceLock;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{clifford_conjugate_inv, Circuit, Gate, GateKind, Pauli, PhasedPauli};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, run_density, Channel, NoiseModel};
use crate::sv::StateVector;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// One enumerated Clifford element: its canonical gate word and its
/// phase-fixed unitary.
#[derive(Debug, Clone)]
pub struct CliffordElement {
    pub word: Vec<Gate>,
    matrix: Array2<Complex64>,
}

/// The full n-qubit Clifford group for n ≤ 2, with uniform sampling and
/// table-based inversion.
#[derive(Debug)]
pub struct CliffordGroup {
    n: usize,
    elements: Vec<CliffordElement>,
    index: HashMap<Vec<(i64, i64)>, usize>,
}

/// Quantize a phase-canonicalized matrix for exact hashing. Distinct
/// Clifford entries are separated by ~0.27 or more, far above the grid.
fn canonical_key(m: &Array2<Complex64>) -> Vec<(i64, i64)> {
    let phase = m
        .iter()
        .find(|v| v.norm() > 1e-8)
        .map(|v| v / v.norm())
        .unwrap_or(C1);
    m.iter()
        .map(|v| {
            let fixed = v / phase;
            (
                (fixed.re * 1e4).round() as i64,
                (fixed.im * 1e4).round() as i64,
            )
        })
        .collect()
}

impl CliffordGroup {
    /// Enumerate the group by BFS over generator words.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > 2 {
            return Err(Error::InvalidInput(
                "Clifford enumeration supports 1 or 2 qubits".into(),
            ));
        }
        let mut generators: Vec<Gate> = Vec::new();
        for q in 0..n {
            generators.push(Gate::new(GateKind::H, vec![q]).unwrap());
            generators.push(Gate::new(GateKind::S, vec![q]).unwrap());
        }
        if n == 2 {
            generators.push(Gate::new(GateKind::Cx, vec![0, 1]).unwrap());
        }
        let gen_matrices: Vec<Array2<Complex64>> = generators
            .iter()
            .map(|g| embed_gate(g, n))
            .collect::<Result<_>>()?;

        let mut elements = vec![CliffordElement {
            word: Vec::new(),
            matrix: Array2::eye(1 << n),
        }];
        let mut index = HashMap::new();
        index.insert(canonical_key(&elements[0].matrix), 0);
        let mut frontier = vec![0usize];
        while let Some(&head) = frontier.first() {
            frontier.remove(0);
            for (g, gm) in generators.iter().zip(&gen_matrices) {
                let matrix = gm.dot(&elements[head].matrix);
                let key = canonical_key(&matrix);
                if let std::collections::hash_map::Entry::Vacant(slot) = index.entry(key) {
                    let mut word = elements[head].word.clone();
                    word.push(g.clone());
                    slot.insert(elements.len());
                    frontier.push(elements.len());
                    elements.push(CliffordElement { word, matrix });
                }
            }
        }
        let expected = if n == 1 { 24 } else { 11520 };
        if elements.len() != expected {
            return Err(Error::NumericalConsistency(format!(
                "Clifford enumeration found {} elements, expected {expected}",
                elements.len()
            )));
        }
        Ok(CliffordGroup { n, elements, index })
    }

    /// The shared enumeration for n = 1 or 2.
    pub fn shared(n: usize) -> Result<&'static CliffordGroup> {
        static C1_GROUP: OnceLock<CliffordGroup> = OnceLock::new();
        static C2_GROUP: OnceLock<CliffordGroup> = OnceLock::new();
        match n {
            1 => Ok(C1_GROUP.get_or_init(|| CliffordGroup::new(1).unwrap())),
            2 => Ok(C2_GROUP.get_or_init(|| CliffordGroup::new(2).unwrap())),
            _ => Err(Error::InvalidInput(
                "Clifford enumeration supports 1 or 2 qubits".into(),
            )),
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, idx: usize) -> &CliffordElement {
        &self.elements[idx]
    }

    /// Uniform element index.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        rng.gen_range(0..self.elements.len())
    }

    pub fn find(&self, matrix: &Array2<Complex64>) -> Option<usize> {
        self.index.get(&canonical_key(matrix)).copied()
    }

    /// Index of the inverse of the composite of the given elements (applied
    /// in list order).
    pub fn inverse_of_product(&self, indices: &[usize]) -> Result<usize> {
        let mut u = Array2::eye(1 << self.n);
        for &i in indices {
            u = self.elements[i].matrix.dot(&u);
        }
        let adj = u.t().mapv(|v| v.conj());
        self.find(&adj).ok_or_else(|| {
            Error::NumericalConsistency("inverse element not found in group table".into())
        })
    }
}

/// Dense matrix of a gate on an n-qubit register.
fn embed_gate(gate: &Gate, n: usize) -> Result<Array2<Complex64>> {
    let dim = 1usize << n;
    let mut state_cols: Vec<Array2<Complex64>> = Vec::new();
    // apply the gate to each basis vector via the state-vector kernel
    for col in 0..dim {
        let mut amps = vec![C0; dim];
        amps[col] = C1;
        let mut sv = StateVector::from_amplitudes(n, amps)?;
        sv.apply_gate(gate, &[])?;
        let mut out = Array2::zeros((dim, 1));
        for (r, a) in sv.amplitudes().iter().enumerate() {
            out[[r, 0]] = *a;
        }
        state_cols.push(out);
    }
    let mut m = Array2::zeros((dim, dim));
    for (c, col) in state_cols.iter().enumerate() {
        for r in 0..dim {
            m[[r, c]] = col[[r, 0]];
        }
    }
    Ok(m)
}

/// (A0, p, B0) fit of the decay model `alpha(m) = A0 p^m + B0`.
#[derive(Debug, Clone)]
pub struct DecayFit {
    pub a0: f64,
    pub p: f64,
    pub b0: f64,
    /// Sum of squared residuals at the solution.
    pub residual: f64,
    /// The fitted points (m, mean survival).
    pub points: Vec<(f64, f64)>,
    /// Set when the data are constant and p is unidentifiable.
    pub degenerate: bool,
}

/// Nonlinear least squares for the single-exponential decay model.
/// Initialization: B0 = min(alpha), A0 = alpha(first) - B0, p from a
/// log-linear regression of alpha - B0; refinement by damped Gauss-Newton.
pub fn fit_exponential_decay(points: &[(f64, f64)]) -> Result<DecayFit> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(
            "decay fit needs at least three points".into(),
        ));
    }
    let min_alpha = points.iter().map(|&(_, a)| a).fold(f64::INFINITY, f64::min);
    let max_alpha = points
        .iter()
        .map(|&(_, a)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    if max_alpha - min_alpha < 1e-9 {
        // constant data: no decay is identifiable
        let mean = points.iter().map(|&(_, a)| a).sum::<f64>() / points.len() as f64;
        let residual = points
            .iter()
            .map(|&(_, a)| (a - mean) * (a - mean))
            .sum::<f64>();
        return Ok(DecayFit {
            a0: 0.0,
            p: 1.0,
            b0: mean,
            residual,
            points: points.to_vec(),
            degenerate: true,
        });
    }

    // initialization
    let mut b0 = min_alpha;
    let first = points[0].1;
    let mut a0 = (first - b0).max(1e-6);
    let mut p = {
        let reg: Vec<(f64, f64)> = points
            .iter()
            .filter(|&&(_, a)| a - b0 > 1e-12)
            .map(|&(m, a)| (m, (a - b0).ln()))
            .collect();
        if reg.len() >= 2 {
            let n = reg.len() as f64;
            let mx = reg.iter().map(|r| r.0).sum::<f64>() / n;
            let my = reg.iter().map(|r| r.1).sum::<f64>() / n;
            let var: f64 = reg.iter().map(|r| (r.0 - mx) * (r.0 - mx)).sum();
            let cov: f64 = reg.iter().map(|r| (r.0 - mx) * (r.1 - my)).sum();
            if var > 0.0 {
                (cov / var).exp().clamp(1e-6, 1.0)
            } else {
                0.9
            }
        } else {
            0.9
        }
    };

    let sse = |a: f64, p_: f64, b: f64| -> f64 {
        points
            .iter()
            .map(|&(m, alpha)| {
                let r = a * p_.powf(m) + b - alpha;
                r * r
            })
            .sum()
    };
    let mut best = sse(a0, p, b0);
    let max_iters = 200;
    let mut converged = false;
    for _ in 0..max_iters {
        // Gauss-Newton step from the 3-column Jacobian, damped by halving
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(m, alpha) in points {
            let pm = p.powf(m);
            let row = [pm, a0 * m * p.powf(m - 1.0), 1.0];
            let r = a0 * pm + b0 - alpha;
            for i in 0..3 {
                jtr[i] += row[i] * r;
                for j in 0..3 {
                    jtj[i][j] += row[i] * row[j];
                }
            }
        }
        let step = match solve3(&jtj, &jtr) {
            Some(s) => s,
            None => break,
        };
        let mut scale = 1.0;
        let mut improved = false;
        for _ in 0..25 {
            let na = a0 - scale * step[0];
            let np = (p - scale * step[1]).clamp(1e-9, 1.0 + 1e-6);
            let nb = b0 - scale * step[2];
            let s = sse(na, np, nb);
            if s < best {
                a0 = na;
                p = np;
                b0 = nb;
                if best - s < 1e-15 * (1.0 + best) {
                    converged = true;
                }
                best = s;
                improved = true;
                break;
            }
            scale *= 0.5;
        }
        if !improved {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    if !converged && best > 1e-3 * points.len() as f64 {
        return Err(Error::FitNonConvergence {
            iterations: max_iters,
            points: points.to_vec(),
        });
    }
    Ok(DecayFit {
        a0,
        p,
        b0,
        residual: best,
        points: points.to_vec(),
        degenerate: false,
    })
}

fn solve3(a: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut m = *a;
    let mut v = *b;
    for col in 0..3 {
        let pivot =
            (col..3).max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())?;
        if m[pivot][col].abs() < 1e-14 {
            return None;
        }
        m.swap(col, pivot);
        v.swap(col, pivot);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                let pivot_row = m[col];
                for (entry, p) in m[row].iter_mut().zip(pivot_row).skip(col) {
                    *entry -= f * p;
                }
                v[row] -= f * v[col];
            }
        }
    }
    Some([v[0] / m[0][0], v[1] / m[1][1], v[2] / m[2][2]])
}

/// Configuration for Clifford randomized benchmarking.
#[derive(Debug, Clone)]
pub struct RbConfig {
    pub n_qubits: usize,
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    /// 0 means exact survival probabilities from the density backend.
    pub shots: usize,
    pub seed: u64,
}

impl RbConfig {
    /// The default schedule: lengths 2, 4, ..., 256 doubling, 30 sequences
    /// per length, 1000 shots.
    pub fn default_schedule(n_qubits: usize, seed: u64) -> Self {
        RbConfig {
            n_qubits,
            lengths: (1..=8).map(|k| 1usize << k).collect(),
            sequences_per_length: 30,
            shots: 1000,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RbResult {
    pub fit: DecayFit,
    /// Average error rate r = (2^n - 1)/2^n (1 - p).
    pub error_rate: f64,
    pub survivals: Vec<(f64, f64)>,
}

/// Run Clifford RB: random Clifford words of each length, a global
/// inversion element, execution under the noise model, survival = frequency
/// of the all-zero outcome, then the exponential-decay fit.
///
/// `per_clifford` optionally fires a channel once after every Clifford
/// element (including the inversion), modelling element-level error rates
/// independent of how many generator gates a word uses.
pub fn rb_run(
    config: &RbConfig,
    noise: &NoiseModel,
    per_clifford: Option<&Channel>,
) -> Result<RbResult> {
    if config.lengths.len() < 3 {
        return Err(Error::InvalidInput("RB needs at least 3 lengths".into()));
    }
    let group = CliffordGroup::shared(config.n_qubits)?;
    let n = config.n_qubits;
    let shots = config.shots;

    let mut survivals = Vec::new();
    for (li, &m) in config.lengths.iter().enumerate() {
        let per_seq: Vec<f64> = (0..config.sequences_per_length)
            .into_par_iter()
            .map(|s| -> Result<f64> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    (li * config.sequences_per_length + s) as u64,
                ));
                let indices: Vec<usize> = (0..m).map(|_| group.sample(&mut rng)).collect();
                let inverse = group.inverse_of_product(&indices)?;

                let mut rho = crate::noise::SquashedDensityState::zero(n)?;
                for &idx in indices.iter().chain(std::iter::once(&inverse)) {
                    for g in &group.element(idx).word {
                        rho.apply_unitary(g, &[])?;
                        if let Some(ch) = noise.channel_for(g) {
                            rho.apply_channel(ch, &g.targets)?;
                        }
                    }
                    if let Some(ch) = per_clifford {
                        let targets: Vec<usize> = (0..ch.arity()).collect();
                        rho.apply_channel(ch, &targets)?;
                    }
                }
                let dist = rho.readout_distribution(noise)?;
                if shots == 0 {
                    Ok(dist[0])
                } else {
                    let mut hits = 0usize;
                    for _ in 0..shots {
                        if sample_distribution(&dist, &mut rng) == 0 {
                            hits += 1;
                        }
                    }
                    Ok(hits as f64 / shots as f64)
                }
            })
            .collect::<Result<_>>()?;
        let mean = per_seq.iter().sum::<f64>() / per_seq.len() as f64;
        survivals.push((m as f64, mean));
    }
    let fit = fit_exponential_decay(&survivals)?;
    let dim = (1usize << n) as f64;
    let error_rate = (dim - 1.0) / dim * (1.0 - fit.p);
    Ok(RbResult {
        fit,
        error_rate,
        survivals,
    })
}

fn sample_distribution<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

/// The eight π/2 rotations about ±X, ±Y and (±X±Y)/√2.
pub fn xeb_gate_set() -> Vec<Array2<Complex64>> {
    let axes: [(f64, f64); 8] = [
        (1.0, 0.0),
        (0.0, 1.0),
        (-1.0, 0.0),
        (0.0, -1.0),
        (
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ),
        (
            std::f64::consts::FRAC_1_SQRT_2,
            -std::f64::consts::FRAC_1_SQRT_2,
        ),
        (
            -std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ),
        (
            -std::f64::consts::FRAC_1_SQRT_2,
            -std::f64::consts::FRAC_1_SQRT_2,
        ),
    ];
    axes.iter()
        .map(|&(nx, ny)| rotation_about(nx, ny, 0.0, std::f64::consts::FRAC_PI_2))
        .collect()
}

/// exp(-i θ/2 n·σ) for a unit axis n.
pub fn rotation_about(nx: f64, ny: f64, nz: f64, theta: f64) -> Array2<Complex64> {
    let c = (theta / 2.0).cos();
    let s = (theta / 2.0).sin();
    let i = Complex64::new(0.0, 1.0);
    let mut m = Array2::eye(2).mapv(|v: Complex64| v * c);
    let pauli = Pauli::X.matrix().mapv(|v| v * nx)
        + Pauli::Y.matrix().mapv(|v| v * ny)
        + Pauli::Z.matrix().mapv(|v| v * nz);
    m = m - pauli.mapv(|v| v * (i * s));
    m
}

#[derive(Debug, Clone)]
pub struct XebConfig {
    pub n_qubits: usize,
    pub lengths: Vec<usize>,
    pub sequences_per_length: usize,
    /// 0 means exact measured distributions from the density backend.
    pub shots: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct XebResult {
    /// Mean cross-entropy difference α per sequence length.
    pub alphas: Vec<(f64, f64)>,
    pub fit: DecayFit,
    /// Average error r = (N-1)/N (1-p).
    pub error_rate: f64,
    /// Pauli error r_P = (N-1)/N · r.
    pub pauli_error: f64,
    /// In two-qubit mode: per-qubit single-qubit decays and the cycle decay
    /// divided by them.
    pub two_qubit: Option<TwoQubitXeb>,
}

#[derive(Debug, Clone)]
pub struct TwoQubitXeb {
    pub single_qubit_p: [f64; 2],
    pub cycle_p: f64,
    /// Cycle fidelity decayed per two-qubit gate:
    /// p_cycle / (p_q0 · p_q1).
    pub gate_p: f64,
}

/// Cross-entropy α between a measured distribution and the ideal one.
/// Returns None when the ideal distribution is itself uniform, in which
/// case the sequence carries no cross-entropy signal.
fn cross_entropy_alpha(measured: &[f64], ideal: &[f64]) -> Option<f64> {
    let dim = ideal.len() as f64;
    let h = |p: &[f64], q: &[f64]| -> f64 {
        p.iter()
            .zip(q)
            .map(|(&pi, &qi)| -pi * qi.max(1e-300).ln())
            .sum::<f64>()
    };
    let uniform = vec![1.0 / dim; ideal.len()];
    let h_ui = h(&uniform, ideal);
    let h_mi = h(measured, ideal);
    let h_ii = h(ideal, ideal);
    if (h_ui - h_ii).abs() < 1e-9 {
        return None;
    }
    Some((h_ui - h_mi) / (h_ui - h_ii))
}

/// Run XEB. In single-qubit mode each sequence is m gates from the eight
/// π/2 rotations plus a final random gate. In two-qubit mode each cycle is
/// a random single-qubit layer followed by CZ, with a final single-qubit
/// layer, and the cycle fidelity is divided by separately-measured
/// single-qubit fidelities.
pub fn xeb_run(config: &XebConfig, noise: &NoiseModel) -> Result<XebResult> {
    match config.n_qubits {
        1 => xeb_run_inner(config, noise, false),
        2 => {
            let cycle = xeb_run_inner(config, noise, true)?;
            // single-qubit fidelity per qubit under the same model
            let mut singles = [1.0f64; 2];
            for (q, single) in singles.iter_mut().enumerate() {
                let sub = XebConfig {
                    n_qubits: 1,
                    lengths: config.lengths.clone(),
                    sequences_per_length: config.sequences_per_length,
                    shots: config.shots,
                    seed: derive_seed(config.seed, 1000 + q as u64),
                };
                let r = xeb_run_inner(&sub, noise, false)?;
                *single = r.fit.p;
            }
            let gate_p = cycle.fit.p / (singles[0] * singles[1]);
            Ok(XebResult {
                two_qubit: Some(TwoQubitXeb {
                    single_qubit_p: singles,
                    cycle_p: cycle.fit.p,
                    gate_p,
                }),
                ..cycle
            })
        }
        _ => Err(Error::InvalidInput("XEB supports 1 or 2 qubits".into())),
    }
}

fn xeb_run_inner(config: &XebConfig, noise: &NoiseModel, two_qubit: bool) -> Result<XebResult> {
    if config.lengths.len() < 3 {
        return Err(Error::InvalidInput("XEB needs at least 3 lengths".into()));
    }
    let n = if two_qubit { 2 } else { 1 };
    let gates = xeb_gate_set();
    let mut alphas = Vec::new();
    for (li, &m) in config.lengths.iter().enumerate() {
        let per_seq: Vec<Option<f64>> = (0..config.sequences_per_length)
            .into_par_iter()
            .map(|s| -> Result<Option<f64>> {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    config.seed,
                    (li * config.sequences_per_length + s) as u64,
                ));
                let mut circuit = Circuit::new(n);
                for _ in 0..m {
                    for q in 0..n {
                        let g = &gates[rng.gen_range(0..gates.len())];
                        circuit.push(Gate::raw(vec![q], g.clone())?)?;
                    }
                    if two_qubit {
                        circuit.push(Gate::new(GateKind::Cz, vec![0, 1])?)?;
                    }
                }
                for q in 0..n {
                    let g = &gates[rng.gen_range(0..gates.len())];
                    circuit.push(Gate::raw(vec![q], g.clone())?)?;
                }

                // ideal distribution from the pure-state backend
                let mut sv = StateVector::zero(n)?;
                sv.apply_circuit(&circuit, &[])?;
                let ideal: Vec<f64> = sv.amplitudes().iter().map(|a| a.norm_sqr()).collect();

                let rho = run_density(&circuit, noise, &[])?;
                let dist = rho.readout_distribution(noise)?;
                let measured = if config.shots == 0 {
                    dist
                } else {
                    let mut counts = vec![0usize; 1 << n];
                    for _ in 0..config.shots {
                        counts[sample_distribution(&dist, &mut rng)] += 1;
                    }
                    counts
                        .iter()
                        .map(|&c| c as f64 / config.shots as f64)
                        .collect()
                };
                Ok(cross_entropy_alpha(&measured, &ideal))
            })
            .collect::<Result<_>>()?;
        // degenerate sequences (ideal distribution exactly uniform) carry
        // no signal and are excluded from the average
        let valid: Vec<f64> = per_seq.into_iter().flatten().collect();
        if valid.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "all length-{m} XEB sequences had a uniform ideal distribution"
            )));
        }
        let mean = valid.iter().sum::<f64>() / valid.len() as f64;
        alphas.push((m as f64, mean));
    }
    let fit = fit_exponential_decay(&alphas)?;
    let dim = (1usize << n) as f64;
    let error_rate = (dim - 1.0) / dim * (1.0 - fit.p);
    let pauli_error = (dim - 1.0) / dim * error_rate;
    Ok(XebResult {
        alphas,
        fit,
        error_rate,
        pauli_error,
        two_qubit: None,
    })
}

/// √X, √Y and √W = π/2 rotation about (X+Y)/√2.
pub fn rqc_single_qubit_set() -> [Array2<Complex64>; 3] {
    let r = std::f64::consts::FRAC_1_SQRT_2;
    [
        rotation_about(1.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2),
        rotation_about(0.0, 1.0, 0.0, std::f64::consts::FRAC_PI_2),
        rotation_about(r, r, 0.0, std::f64::consts::FRAC_PI_2),
    ]
}

/// Generate a random quantum circuit on a rows x cols grid: m cycles of a
/// random single-qubit layer (no gate repeats on a qubit in consecutive
/// cycles) and a CZ layer following the ABCDCDAB edge-pattern sequence,
/// plus a final single-qubit layer.
pub fn rqc_generate<R: Rng>(
    rows: usize,
    cols: usize,
    cycles: usize,
    rng: &mut R,
) -> Result<Circuit> {
    if rows * cols < 2 {
        return Err(Error::InvalidInput(
            "RQC grid needs at least 2 qubits".into(),
        ));
    }
    let n = rows * cols;
    let set = rqc_single_qubit_set();
    let mut circuit = Circuit::new(n);
    let mut previous: Vec<Option<usize>> = vec![None; n];

    // the four edge-parity classes of the rectangular grid
    let pattern_edges = |pattern: usize| -> Vec<(usize, usize)> {
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                match pattern {
                    0 if c + 1 < cols && c % 2 == 0 => edges.push((v, v + 1)),
                    1 if c + 1 < cols && c % 2 == 1 => edges.push((v, v + 1)),
                    2 if r + 1 < rows && r % 2 == 0 => edges.push((v, v + cols)),
                    3 if r + 1 < rows && r % 2 == 1 => edges.push((v, v + cols)),
                    _ => {}
                }
            }
        }
        edges
    };
    const SEQUENCE: [usize; 8] = [0, 1, 2, 3, 2, 3, 0, 1]; // ABCDCDAB

    let one_qubit_layer =
        |circuit: &mut Circuit, previous: &mut [Option<usize>], rng: &mut R| -> Result<()> {
            for (q, prev) in previous.iter_mut().enumerate().take(n) {
                let choice = loop {
                    let c = rng.gen_range(0..3);
                    if *prev != Some(c) {
                        break c;
                    }
                };
                *prev = Some(choice);
                circuit.push(Gate::raw(vec![q], set[choice].clone())?)?;
            }
            Ok(())
        };

    for cycle in 0..cycles {
        one_qubit_layer(&mut circuit, &mut previous, rng)?;
        for (a, b) in pattern_edges(SEQUENCE[cycle % 8]) {
            circuit.push(Gate::new(GateKind::Cz, vec![a, b])?)?;
        }
    }
    one_qubit_layer(&mut circuit, &mut previous, rng)?;
    Ok(circuit)
}

/// Linear XEB fidelity of a sample set against a circuit's ideal
/// distribution: `F = 2^n <p(x_i)> - 1`, with the standard error of the
/// mean.
pub fn linear_xeb_fidelity(circuit: &Circuit, samples: &[usize]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("need at least one sample".into()));
    }
    let n = circuit.n_qubits;
    let mut sv = StateVector::zero(n)?;
    sv.apply_circuit(circuit, &[])?;
    let dim = (1usize << n) as f64;
    let probs: Vec<f64> = samples
        .iter()
        .map(|&x| sv.amplitudes()[x].norm_sqr())
        .collect();
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    let var = if probs.len() > 1 {
        probs.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (probs.len() as f64 - 1.0)
    } else {
        0.0
    };
    let fidelity = dim * mean - 1.0;
    let std_err = dim * (var / probs.len() as f64).sqrt();
    Ok((fidelity, std_err))
}

/// Haar-random SU(4) via a complex Ginibre matrix, modified Gram-Schmidt,
/// the R-diagonal phase fix, and determinant normalization.
pub fn haar_su4<R: Rng>(rng: &mut R) -> Array2<Complex64> {
    let normal = |rng: &mut R| -> f64 {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let dim = 4;
    let mut cols: Vec<Vec<Complex64>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| Complex64::new(normal(rng), normal(rng)))
                .collect()
        })
        .collect();
    // modified Gram-Schmidt with the phase of the diagonal fixed positive
    for j in 0..dim {
        for k in 0..j {
            let proj: Complex64 = (0..dim).map(|r| cols[k][r].conj() * cols[j][r]).sum();
            let reference: Vec<Complex64> = cols[k].clone();
            for (target, prior) in cols[j].iter_mut().zip(&reference) {
                *target -= proj * prior;
            }
        }
        // the r_jj of the implicit QR is the pre-normalization overlap; its
        // phase is stripped so the distribution is Haar
        let norm: f64 = cols[j].iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        for entry in cols[j].iter_mut() {
            *entry /= norm;
        }
    }
    let mut u = Array2::zeros((dim, dim));
    for (c, col) in cols.iter().enumerate() {
        for r in 0..dim {
            u[[r, c]] = col[r];
        }
    }
    // SU(4): strip the determinant phase
    let det = det4(&u);
    let phase = Complex64::from_polar(1.0, det.arg() / dim as f64);
    u.mapv(|v| v / phase)
}

fn det4(m: &Array2<Complex64>) -> Complex64 {
    // LU-free cofactor expansion is fine at 4x4
    let mut a = m.clone();
    let mut det = C1;
    for col in 0..4 {
        let pivot = (col..4)
            .max_by(|&i, &j| a[[i, col]].norm().partial_cmp(&a[[j, col]].norm()).unwrap())
            .unwrap();
        if a[[pivot, col]].norm() < 1e-300 {
            return C0;
        }
        if pivot != col {
            for k in 0..4 {
                let tmp = a[[col, k]];
                a[[col, k]] = a[[pivot, k]];
                a[[pivot, k]] = tmp;
            }
            det = -det;
        }
        det *= a[[col, col]];
        for row in col + 1..4 {
            let f = a[[row, col]] / a[[col, col]];
            for k in col..4 {
                let sub = f * a[[col, k]];
                a[[row, k]] -= sub;
            }
        }
    }
    det
}

/// Average gate fidelity between two m-qubit unitaries:
/// `(|tr(U†U')|²/2^m + 1)/(2^m + 1)`.
pub fn avg_gate_fidelity(u: &Array2<Complex64>, u_prime: &Array2<Complex64>) -> f64 {
    let dim = u.nrows() as f64;
    let tr: Complex64 = u.t().mapv(|v| v.conj()).dot(u_prime).diag().iter().sum();
    (tr.norm_sqr() / dim + 1.0) / (dim + 1.0)
}

#[derive(Debug, Clone)]
pub struct QvWidthResult {
    pub width: usize,
    /// Heavy-output probability h_U per circuit.
    pub heavy_probs: Vec<f64>,
    pub mean_heavy: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct QvResult {
    pub per_width: Vec<QvWidthResult>,
    /// log2 of the quantum volume: the largest width with all widths up to
    /// it passing the 2/3 heavy-output rule on square circuits.
    pub log2_qv: usize,
}

/// The quantum-volume protocol on square model circuits: per width m,
/// circuits of m layers of a random qubit permutation followed by
/// Haar-random SU(4) blocks on neighbouring pairs; heavy outputs are those
/// above the median ideal probability; a width passes when the mean heavy
/// probability exceeds 2/3.
pub fn qv_run(
    max_width: usize,
    noise: &NoiseModel,
    seed: u64,
    circuits_per_width: usize,
    shots: usize,
) -> Result<QvResult> {
    if max_width < 2 {
        return Err(Error::InvalidInput("QV needs width at least 2".into()));
    }
    let mut per_width = Vec::new();
    for m in 2..=max_width {
        let heavy_probs: Vec<f64> = (0..circuits_per_width)
            .into_par_iter()
            .map(|ci| -> Result<f64> {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(seed, (m * 10_000 + ci) as u64));
                let circuit = qv_model_circuit(m, &mut rng)?;
                let mut sv = StateVector::zero(m)?;
                sv.apply_circuit(&circuit, &[])?;
                let ideal: Vec<f64> = sv.amplitudes().iter().map(|a| a.norm_sqr()).collect();
                let heavy = heavy_set(&ideal);

                let rho = run_density(&circuit, noise, &[])?;
                let dist = rho.readout_distribution(noise)?;
                if shots == 0 {
                    Ok(heavy.iter().map(|&x| dist[x]).sum())
                } else {
                    let mut hits = 0usize;
                    for _ in 0..shots {
                        let x = sample_distribution(&dist, &mut rng);
                        if heavy.binary_search(&x).is_ok() {
                            hits += 1;
                        }
                    }
                    Ok(hits as f64 / shots as f64)
                }
            })
            .collect::<Result<_>>()?;
        let mean = heavy_probs.iter().sum::<f64>() / heavy_probs.len() as f64;
        per_width.push(QvWidthResult {
            width: m,
            mean_heavy: mean,
            pass: mean > 2.0 / 3.0,
            heavy_probs,
        });
    }
    let mut log2_qv = 0;
    for w in &per_width {
        if w.pass && (log2_qv + 1 == w.width || (log2_qv == 0 && w.width == 2)) {
            log2_qv = w.width;
        } else if !w.pass {
            break;
        }
    }
    Ok(QvResult { per_width, log2_qv })
}

/// One square QV model circuit of the given width.
pub fn qv_model_circuit<R: Rng>(width: usize, rng: &mut R) -> Result<Circuit> {
    let mut circuit = Circuit::new(width);
    for _ in 0..width {
        let mut perm: Vec<usize> = (0..width).collect();
        // Fisher-Yates
        for i in (1..width).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        for pair in perm.chunks(2) {
            if pair.len() == 2 {
                circuit.push(Gate::raw(vec![pair[0], pair[1]], haar_su4(rng))?)?;
            }
        }
    }
    Ok(circuit)
}

/// Indices of the heavy outputs: ideal probability strictly above the
/// median `(p_(k) + p_(k-1))/2` of the ascending-sorted distribution,
/// k = 2^(m-1). Returned sorted ascending.
pub fn heavy_set(ideal: &[f64]) -> Vec<usize> {
    let mut sorted = ideal.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = ideal.len() / 2;
    let median = 0.5 * (sorted[k] + sorted[k - 1]);
    (0..ideal.len()).filter(|&x| ideal[x] > median).collect()
}

#[derive(Debug, Clone)]
pub struct MirrorResult {
    /// Mean polarization over randomizations.
    pub polarization: f64,
    /// Per randomization: the predicted ideal output and the survival
    /// probability observed for it.
    pub per_randomization: Vec<(usize, f64)>,
}

/// Mirror-circuit benchmarking of a Clifford-only base circuit: each
/// randomization prepares random Pauli eigenstates, runs C, a random Pauli
/// layer Q, then C⁻¹ and the un-preparation, so the ideal outcome is the
/// single bitstring predicted by conjugating Q through the circuit. The
/// polarization is `(S - 1/2^w)/(1 - 1/2^w)` averaged over randomizations.
pub fn mirror_run(
    base: &Circuit,
    noise: &NoiseModel,
    seed: u64,
    randomizations: usize,
    shots: usize,
) -> Result<MirrorResult> {
    let n = base.n_qubits;
    for g in &base.ops {
        match g.kind {
            GateKind::H
            | GateKind::S
            | GateKind::X
            | GateKind::Y
            | GateKind::Z
            | GateKind::Cx
            | GateKind::Cz
            | GateKind::Swap
            | GateKind::I
            | GateKind::Barrier => {}
            _ => return Err(Error::NonClifford(g.kind.name().into())),
        }
    }
    let per_randomization: Vec<(usize, f64)> = (0..randomizations)
        .into_par_iter()
        .map(|ri| -> Result<(usize, f64)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, ri as u64));
            // preparation layer: a random Pauli eigenstate per qubit
            let mut prep = Circuit::new(n);
            for q in 0..n {
                let which = rng.gen_range(0..6);
                for kind in prep_word(which) {
                    prep.push(Gate::new(kind, vec![q])?)?;
                }
            }
            // random Pauli layer Q
            let mut q_letters = Vec::with_capacity(n);
            let mut q_layer = Circuit::new(n);
            for q in 0..n {
                let letter = match rng.gen_range(0..4) {
                    0 => Pauli::I,
                    1 => Pauli::X,
                    2 => Pauli::Y,
                    _ => Pauli::Z,
                };
                q_letters.push(letter);
                let kind = match letter {
                    Pauli::I => None,
                    Pauli::X => Some(GateKind::X),
                    Pauli::Y => Some(GateKind::Y),
                    Pauli::Z => Some(GateKind::Z),
                };
                if let Some(kind) = kind {
                    q_layer.push(Gate::new(kind, vec![q])?)?;
                }
            }

            // predicted outcome: F = L† (C† Q C) L applied to |0..0>
            let mut tracked = PhasedPauli::new(q_letters);
            for g in base.ops.iter().rev() {
                tracked = clifford_conjugate_inv(&tracked, g)?;
            }
            for g in prep.ops.iter().rev() {
                tracked = clifford_conjugate_inv(&tracked, g)?;
            }
            let mut predicted = 0usize;
            for (q, letter) in tracked.letters.iter().enumerate() {
                if matches!(letter, Pauli::X | Pauli::Y) {
                    predicted |= 1 << (n - 1 - q);
                }
            }

            // assemble the full mirror circuit
            let mut full = Circuit::new(n);
            for g in &prep.ops {
                full.push(g.clone())?;
            }
            for g in &base.ops {
                full.push(g.clone())?;
            }
            for g in &q_layer.ops {
                full.push(g.clone())?;
            }
            for g in crate::circuit::inverse(base)?.ops {
                full.push(g)?;
            }
            for g in crate::circuit::inverse(&prep)?.ops {
                full.push(g)?;
            }

            let rho = run_density(&full, noise, &[])?;
            let dist = rho.readout_distribution(noise)?;
            let survival = if shots == 0 {
                dist[predicted]
            } else {
                let mut hits = 0usize;
                for _ in 0..shots {
                    if sample_distribution(&dist, &mut rng) == predicted {
                        hits += 1;
                    }
                }
                hits as f64 / shots as f64
            };
            Ok((predicted, survival))
        })
        .collect::<Result<_>>()?;

    let w = (1usize << n) as f64;
    let polarization = per_randomization
        .iter()
        .map(|(_, s)| (s - 1.0 / w) / (1.0 - 1.0 / w))
        .sum::<f64>()
        / per_randomization.len() as f64;
    Ok(MirrorResult {
        polarization,
        per_randomization,
    })
}

/// Gate word preparing the k-th single-qubit stabilizer state from |0>:
/// |0>, |1>, |+>, |->, |+i>, |-i>.
fn prep_word(k: usize) -> Vec<GateKind> {
    match k {
        0 => vec![],
        1 => vec![GateKind::X],
        2 => vec![GateKind::H],
        3 => vec![GateKind::X, GateKind::H],
        4 => vec![GateKind::H, GateKind::S],
        _ => vec![GateKind::X, GateKind::H, GateKind::S],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_circuit;
    use crate::noise::ReadoutFlips;
    use approx::assert_abs_diff_eq;

    #[test]
    fn clifford_group_sizes() {
        assert_eq!(CliffordGroup::shared(1).unwrap().len(), 24);
        assert_eq!(CliffordGroup::shared(2).unwrap().len(), 11520);
    }

    #[test]
    fn clifford_identity_inverse_is_identity() {
        let group = CliffordGroup::shared(1).unwrap();
        let id = group.find(&Array2::eye(2)).unwrap();
        assert!(group.element(id).word.is_empty());
        assert_eq!(group.inverse_of_product(&[id]).unwrap(), id);
    }

    #[test]
    fn clifford_word_times_inverse_is_identity() {
        let group = CliffordGroup::shared(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let indices: Vec<usize> = (0..5).map(|_| group.sample(&mut rng)).collect();
            let inv = group.inverse_of_product(&indices).unwrap();
            let mut sv = StateVector::zero(2).unwrap();
            // random start state
            sv.apply_gate(
                &Gate::rotation(GateKind::Ry, 0, crate::circuit::Param::Angle(0.7)).unwrap(),
                &[],
            )
            .unwrap();
            sv.apply_gate(
                &Gate::rotation(GateKind::Ry, 1, crate::circuit::Param::Angle(1.3)).unwrap(),
                &[],
            )
            .unwrap();
            let reference = sv.clone();
            for &i in indices.iter().chain(std::iter::once(&inv)) {
                for g in &group.element(i).word {
                    sv.apply_gate(g, &[]).unwrap();
                }
            }
            // equal up to global phase
            let overlap = reference.dot(&sv).norm();
            assert!((overlap - 1.0).abs() < 1e-10, "overlap {overlap}");
        }
    }

    #[test]
    fn clifford_sampler_covers_all_classes() {
        let group = CliffordGroup::shared(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = vec![0usize; 24];
        let draws = 10_000;
        for _ in 0..draws {
            counts[group.sample(&mut rng)] += 1;
        }
        // chi-squared against uniform: 23 dof, p > 0.001 roughly chi2 < 49.7
        let expect = draws as f64 / 24.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect) * (c as f64 - expect) / expect)
            .sum();
        assert!(chi2 < 49.7, "chi2 = {chi2}, counts {counts:?}");
        assert!(counts.iter().all(|&c| c > 0));
    }

    #[test]
    fn decay_fit_recovers_exact_model() {
        let points: Vec<(f64, f64)> = [1, 2, 4, 8, 16, 32, 64]
            .iter()
            .map(|&m| (m as f64, 0.5 * 0.9f64.powi(m) + 0.5))
            .collect();
        let fit = fit_exponential_decay(&points).unwrap();
        assert_abs_diff_eq!(fit.a0, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.p, 0.9, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.b0, 0.5, epsilon = 1e-6);
        assert!(!fit.degenerate);
    }

    #[test]
    fn decay_fit_flags_constant_data() {
        let points: Vec<(f64, f64)> = (1..=5).map(|m| (m as f64, 0.75)).collect();
        let fit = fit_exponential_decay(&points).unwrap();
        assert!(fit.degenerate);
        assert_abs_diff_eq!(fit.a0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.b0, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn decay_fit_tolerates_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let points: Vec<(f64, f64)> = [1, 2, 4, 8, 16, 32, 64, 128]
            .iter()
            .map(|&m| {
                let clean = 0.45 * 0.93f64.powi(m) + 0.5;
                let noise = 0.01 * (rng.gen::<f64>() - 0.5) * 2.0;
                (m as f64, clean * (1.0 + noise))
            })
            .collect();
        let fit = fit_exponential_decay(&points).unwrap();
        assert!((fit.p - 0.93).abs() / 0.93 < 0.02, "p = {}", fit.p);
    }

    fn uniform_dep(p: f64) -> Channel {
        Channel::uniform_depolarizing(p, 1).unwrap()
    }

    #[test]
    fn rb_noiseless_has_unit_survival() {
        let config = RbConfig {
            n_qubits: 1,
            lengths: vec![2, 4, 8],
            sequences_per_length: 5,
            shots: 0,
            seed: 1,
        };
        let out = rb_run(&config, &NoiseModel::ideal(), None).unwrap();
        assert!((out.fit.p - 1.0).abs() < 1e-3);
        assert!(out.error_rate.abs() < 1e-3);
        for &(_, s) in &out.survivals {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn rb_recovers_per_clifford_depolarizing() {
        let p_dep = 0.01;
        let config = RbConfig {
            n_qubits: 1,
            lengths: vec![2, 8, 32, 64, 128],
            sequences_per_length: 8,
            shots: 0,
            seed: 5,
        };
        let ch = uniform_dep(p_dep);
        let out = rb_run(&config, &NoiseModel::ideal(), Some(&ch)).unwrap();
        // survivals are exactly 1/2 + 1/2 (1-p)^(m+1)
        for &(m, s) in &out.survivals {
            let expect = 0.5 + 0.5 * (1.0 - p_dep).powf(m + 1.0);
            assert_abs_diff_eq!(s, expect, epsilon = 1e-9);
        }
        let expect_r = p_dep / 2.0;
        assert!(
            (out.error_rate - expect_r).abs() / expect_r < 0.10,
            "r = {}, expected {}",
            out.error_rate,
            expect_r
        );
    }

    #[test]
    fn rb_spam_shifts_offsets_not_decay() {
        let p_dep = 0.02;
        let base = RbConfig {
            n_qubits: 1,
            lengths: vec![2, 8, 32, 64],
            sequences_per_length: 6,
            shots: 0,
            seed: 7,
        };
        let ch = uniform_dep(p_dep);
        let clean = rb_run(&base, &NoiseModel::ideal(), Some(&ch)).unwrap();
        let mut spam = NoiseModel::ideal();
        spam.set_readout(vec![ReadoutFlips {
            p01: 0.0,
            p10: 0.05,
        }]);
        let noisy = rb_run(&base, &spam, Some(&ch)).unwrap();
        assert!(
            (noisy.fit.p - clean.fit.p).abs() / clean.fit.p < 0.01,
            "p moved from {} to {}",
            clean.fit.p,
            noisy.fit.p
        );
        assert!(
            (noisy.fit.a0 - clean.fit.a0).abs() > 1e-3
                || (noisy.fit.b0 - clean.fit.b0).abs() > 1e-3
        );
    }

    #[test]
    fn xeb_noiseless_alpha_is_one() {
        let config = XebConfig {
            n_qubits: 1,
            lengths: vec![2, 4, 8],
            sequences_per_length: 8,
            shots: 0,
            seed: 11,
        };
        let out = xeb_run(&config, &NoiseModel::ideal()).unwrap();
        for &(_, a) in &out.alphas {
            assert_abs_diff_eq!(a, 1.0, epsilon = 1e-3);
        }
    }

    #[test]
    fn xeb_recovers_injected_depolarizing() {
        let p = 0.02;
        let mut noise = NoiseModel::ideal();
        noise.attach_channel("raw", uniform_dep(p));
        let config = XebConfig {
            n_qubits: 1,
            lengths: vec![2, 8, 24, 48],
            sequences_per_length: 10,
            shots: 0,
            seed: 13,
        };
        let out = xeb_run(&config, &noise).unwrap();
        let expect = 1.0 - p;
        assert!(
            (out.fit.p - expect).abs() / expect < 0.10,
            "fitted {} vs injected {}",
            out.fit.p,
            expect
        );
    }

    #[test]
    fn xeb_two_qubit_divides_single_qubit_fidelities() {
        let mut noise = NoiseModel::ideal();
        noise.attach_channel("raw", uniform_dep(0.01));
        let config = XebConfig {
            n_qubits: 2,
            lengths: vec![2, 6, 12],
            sequences_per_length: 6,
            shots: 0,
            seed: 21,
        };
        let out = xeb_run(&config, &noise).unwrap();
        let two = out.two_qubit.unwrap();
        assert_abs_diff_eq!(
            two.gate_p,
            two.cycle_p / (two.single_qubit_p[0] * two.single_qubit_p[1]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn rqc_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = rqc_generate(2, 2, 1, &mut rng).unwrap();
        // 4 single-qubit gates, pattern-A CZ layer, final 4 single-qubit
        let raw_count = c.ops.iter().filter(|g| g.arity() == 1).count();
        let cz_count = c.ops.iter().filter(|g| g.kind == GateKind::Cz).count();
        assert_eq!(raw_count, 8);
        assert_eq!(cz_count, 2); // pattern A on a 2x2 grid: both rows' (0,1) edges
    }

    #[test]
    fn rqc_non_repetition_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let c = rqc_generate(2, 3, 6, &mut rng).unwrap();
            // reconstruct per-qubit gate choices per layer
            let n = 6;
            let mut layers: Vec<Vec<Array2<Complex64>>> = Vec::new();
            let mut current: Vec<Option<Array2<Complex64>>> = vec![None; n];
            let mut count = 0;
            for g in &c.ops {
                if g.arity() == 1 {
                    if let GateKind::Raw(m) = &g.kind {
                        current[g.targets[0]] = Some(m.as_ref().clone());
                        count += 1;
                        if count == n {
                            layers.push(current.iter().map(|m| m.clone().unwrap()).collect());
                            current = vec![None; n];
                            count = 0;
                        }
                    }
                }
            }
            for w in layers.windows(2) {
                for (q, (prev, next)) in w[0].iter().zip(&w[1]).enumerate() {
                    let same = prev
                        .iter()
                        .zip(next.iter())
                        .all(|(a, b)| (a - b).norm() < 1e-12);
                    assert!(!same, "qubit {q} repeated its gate in consecutive cycles");
                }
            }
        }
    }

    #[test]
    fn rqc_distinct_seeds_differ() {
        let mut rng1 = ChaCha8Rng::seed_from_u64(100);
        let mut rng2 = ChaCha8Rng::seed_from_u64(101);
        let a = rqc_generate(2, 2, 3, &mut rng1).unwrap();
        let b = rqc_generate(2, 2, 3, &mut rng2).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn linear_xeb_uniform_sampler_scores_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let circuit = rqc_generate(2, 3, 4, &mut rng).unwrap();
        let n = circuit.n_qubits;
        let samples: Vec<usize> = (0..50_000).map(|_| rng.gen_range(0..1usize << n)).collect();
        let (f, stderr) = linear_xeb_fidelity(&circuit, &samples).unwrap();
        assert!(f.abs() < 5.0 * stderr, "F = {f} ± {stderr}");
    }

    #[test]
    fn linear_xeb_ideal_sampler_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let circuit = rqc_generate(3, 4, 8, &mut rng).unwrap();
        let mut sv = StateVector::zero(circuit.n_qubits).unwrap();
        sv.apply_circuit(&circuit, &[]).unwrap();
        let samples = sv.sample(100_000, &mut rng);
        let (f, stderr) = linear_xeb_fidelity(&circuit, &samples).unwrap();
        assert!((f - 1.0).abs() < 5.0 * stderr, "F = {f} ± {stderr}");
    }

    #[test]
    fn linear_xeb_tracks_mixture_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let circuit = rqc_generate(2, 3, 6, &mut rng).unwrap();
        let n = circuit.n_qubits;
        let mut sv = StateVector::zero(n).unwrap();
        sv.apply_circuit(&circuit, &[]).unwrap();
        // the mixture estimator converges to weight * F_circuit, where
        // F_circuit = 2^n Σp² - 1 is the circuit's own collision statistic
        let dim = (1usize << n) as f64;
        let f_circuit: f64 = dim
            * sv.amplitudes()
                .iter()
                .map(|a| a.norm_sqr().powi(2))
                .sum::<f64>()
            - 1.0;
        let weight = 0.6;
        let samples: Vec<usize> = (0..100_000)
            .map(|_| {
                if rng.gen::<f64>() < weight {
                    sv.sample(1, &mut rng)[0]
                } else {
                    rng.gen_range(0..1usize << n)
                }
            })
            .collect();
        let (f, stderr) = linear_xeb_fidelity(&circuit, &samples).unwrap();
        assert!(
            (f - weight * f_circuit).abs() < 5.0 * stderr,
            "F = {f} ± {stderr}, expected {}",
            weight * f_circuit
        );
    }

    #[test]
    fn haar_su4_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000;
        let values: Vec<f64> = (0..draws)
            .map(|_| {
                let u = haar_su4(&mut rng);
                let tr: Complex64 = (0..4).map(|i| u[[i, i]]).sum();
                tr.norm_sqr()
            })
            .collect();
        let mean = values.iter().sum::<f64>() / draws as f64;
        let var =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (draws as f64 - 1.0);
        let sigma = (var / draws as f64).sqrt();
        assert!(
            (mean - 1.0).abs() < 5.0 * sigma,
            "E|tr|^2 = {mean} ± {sigma}"
        );
        // unitarity
        let u = haar_su4(&mut rng);
        assert!(crate::circuit::unitarity_deviation(&u) < 1e-10);
        let det = det4(&u);
        assert!((det - C1).norm() < 1e-10, "det = {det}");
    }

    #[test]
    fn heavy_set_is_half_the_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for m in 2..=4 {
            let circuit = qv_model_circuit(m, &mut rng).unwrap();
            let mut sv = StateVector::zero(m).unwrap();
            sv.apply_circuit(&circuit, &[]).unwrap();
            let ideal: Vec<f64> = sv.amplitudes().iter().map(|a| a.norm_sqr()).collect();
            let heavy = heavy_set(&ideal);
            let half = 1usize << (m - 1);
            assert!(
                heavy.len() + 1 >= half && heavy.len() <= half + 1,
                "|H_U| = {} at m = {m}",
                heavy.len()
            );
        }
    }

    #[test]
    fn qv_noiseless_passes() {
        let out = qv_run(3, &NoiseModel::ideal(), 31, 30, 0).unwrap();
        for w in &out.per_width {
            assert!(w.pass, "width {} failed: {}", w.width, w.mean_heavy);
        }
        assert_eq!(out.log2_qv, 3);
    }

    #[test]
    fn qv_uniform_output_fails() {
        // fully depolarizing noise on every block: the output is uniform
        let mut noise = NoiseModel::ideal();
        let mut rates = vec![0.0; 16];
        for r in rates.iter_mut() {
            *r = 1.0 / 16.0;
        }
        noise.attach_channel(
            "raw",
            Channel::pauli(&crate::noise::PauliRates::new(2, rates).unwrap()).unwrap(),
        );
        let out = qv_run(2, &noise, 32, 20, 0).unwrap();
        let w = &out.per_width[0];
        assert!(!w.pass);
        assert!((w.mean_heavy - 0.5).abs() < 0.05, "h_U = {}", w.mean_heavy);
        assert_eq!(out.log2_qv, 0);
    }

    #[test]
    fn avg_gate_fidelity_of_identical_unitaries() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let u = haar_su4(&mut rng);
        assert_abs_diff_eq!(avg_gate_fidelity(&u, &u), 1.0, epsilon = 1e-12);
        let v = haar_su4(&mut rng);
        assert!(avg_gate_fidelity(&u, &v) < 1.0);
    }

    /// Routing a QV model circuit onto a line is exact-equivalence
    /// transpilation: after undoing the final layout, the unitary matches
    /// and the average gate fidelity is 1 to 1e-10.
    #[test]
    fn qv_transpiled_circuit_has_unit_fidelity() {
        use crate::circuit::CouplingGraph;
        use crate::compile::{route, Layout};

        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let m = 3;
        let circuit = qv_model_circuit(m, &mut rng).unwrap();
        let graph = CouplingGraph::line(m);
        let routed = route(&circuit, &graph, &Layout::identity(m)).unwrap();

        // dense unitaries via basis-state evolution
        let unitary_of = |c: &Circuit, perm: Option<&[usize]>| -> Array2<Complex64> {
            let dim = 1usize << m;
            let mut u = Array2::zeros((dim, dim));
            for col in 0..dim {
                let mut amps = vec![C0; dim];
                amps[col] = C1;
                let mut sv = StateVector::from_amplitudes(m, amps).unwrap();
                sv.apply_circuit(c, &[]).unwrap();
                let sv = match perm {
                    Some(p) => sv.permute_qubits(p).unwrap(),
                    None => sv,
                };
                for (r, a) in sv.amplitudes().iter().enumerate() {
                    u[[r, col]] = *a;
                }
            }
            u
        };
        let original = unitary_of(&circuit, None);
        let mut inverse_perm = vec![0usize; m];
        for q in 0..m {
            inverse_perm[routed.final_layout.physical(q)] = q;
        }
        let transpiled = unitary_of(&routed.circuit, Some(&inverse_perm));
        let f = avg_gate_fidelity(&original, &transpiled);
        assert!((f - 1.0).abs() < 1e-10, "F_avg = {f}");

        // the ideal output distributions agree after permutation accounting
        let mut a = StateVector::zero(m).unwrap();
        a.apply_circuit(&circuit, &[]).unwrap();
        let mut b = StateVector::zero(m).unwrap();
        b.apply_circuit(&routed.circuit, &[]).unwrap();
        let b = b.permute_qubits(&inverse_perm).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x.norm_sqr() - y.norm_sqr()).abs() < 1e-10);
        }
    }

    #[test]
    fn mirror_noiseless_polarization_is_one() {
        let base = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1]; s q[1];").unwrap();
        let out = mirror_run(&base, &NoiseModel::ideal(), 17, 20, 0).unwrap();
        assert_abs_diff_eq!(out.polarization, 1.0, epsilon = 1e-9);
        for &(_, s) in &out.per_randomization {
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn mirror_prediction_matches_statevector() {
        // the prediction must match a noiseless execution for random
        // Clifford bases
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let group = CliffordGroup::shared(2).unwrap();
        for trial in 0..25 {
            let mut base = Circuit::new(3);
            for _ in 0..4 {
                let idx = group.sample(&mut rng);
                let (a, b) = {
                    let a = rng.gen_range(0..3);
                    let b = (a + 1 + rng.gen_range(0..2)) % 3;
                    (a, b)
                };
                for g in &group.element(idx).word {
                    let targets: Vec<usize> = g
                        .targets
                        .iter()
                        .map(|&t| if t == 0 { a } else { b })
                        .collect();
                    base.push(Gate {
                        kind: g.kind.clone(),
                        targets,
                        param: g.param,
                    })
                    .unwrap();
                }
            }
            let out = mirror_run(&base, &NoiseModel::ideal(), trial, 4, 0).unwrap();
            for &(_, s) in &out.per_randomization {
                assert!(
                    (s - 1.0).abs() < 1e-9,
                    "trial {trial}: predicted bitstring had survival {s}"
                );
            }
        }
    }

    #[test]
    fn mirror_polarization_formula() {
        // w = 2, S = 0.625 -> p = 0.5
        let s = 0.625f64;
        let w = 4.0f64; // 2^2
        let p = (s - 1.0 / w) / (1.0 - 1.0 / w);
        assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn mirror_fully_depolarized_polarization_is_zero() {
        let base = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let mut noise = NoiseModel::ideal();
        let mut rates = vec![0.0; 16];
        for r in rates.iter_mut() {
            *r = 1.0 / 16.0;
        }
        noise.attach_channel(
            "cx",
            Channel::pauli(&crate::noise::PauliRates::new(2, rates).unwrap()).unwrap(),
        );
        let out = mirror_run(&base, &noise, 23, 40, 0).unwrap();
        assert!(out.polarization.abs() < 0.02, "p = {}", out.polarization);
    }

    #[test]
    fn rb_full_depolarization_saturates_at_half() {
        let ch = uniform_dep(1.0);
        let config = RbConfig {
            n_qubits: 1,
            lengths: vec![1, 2, 4],
            sequences_per_length: 4,
            shots: 0,
            seed: 3,
        };
        let out = rb_run(&config, &NoiseModel::ideal(), Some(&ch)).unwrap();
        for &(_, s) in &out.survivals {
            assert_abs_diff_eq!(s, 0.5, epsilon = 1e-10);
        }
    }
}
