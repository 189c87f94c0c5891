//! Quantum error mitigation: zero-noise extrapolation, probabilistic error
//! cancellation, measurement-error mitigation, virtual distillation,
//! symmetry expansion, quantum subspace expansion, Clifford data regression
//! and Pauli twirling.
//!
//! Everything here operates on expectation values and density matrices
//! produced by the simulators, so each method can be checked against exact
//! linear algebra. Monte Carlo estimators shard their work over derived
//! per-sample seeds and are deterministic for a fixed master seed.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use ndarray_linalg::{LeastSquaresSvd, Solve, SVD};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{
    clifford_conjugate, Circuit, Gate, GateKind, Observable, Param, Pauli, PauliString, PhasedPauli,
};
use crate::error::{Error, Result};
use crate::noise::{
    derive_seed, pauli_letters_of_index, Channel, NoiseModel, SquashedDensityState,
};

/// Result of a Richardson extrapolation.
#[derive(Debug, Clone)]
pub struct RichardsonFit {
    pub estimate: f64,
    /// The extrapolation weights γ_i.
    pub gamma: Vec<f64>,
    /// Σγ²: the factor by which the estimator variance grows.
    pub variance_amplification: f64,
}

/// Richardson extrapolation to zero noise from values measured at distinct
/// scale factors λ_i: weights `γ_i = Π_{j≠i} λ_j/(λ_j-λ_i)` satisfy Σγ = 1
/// and Σγλ^j = 0 for j = 1..n, cancelling the first n Taylor orders.
pub fn zne_richardson(points: &[(f64, f64)]) -> Result<RichardsonFit> {
    if points.is_empty() {
        return Err(Error::InvalidInput("need at least one point".into()));
    }
    for (i, (li, _)) in points.iter().enumerate() {
        for (lj, _) in &points[i + 1..] {
            if (li - lj).abs() < 1e-12 {
                return Err(Error::DegenerateInput(format!(
                    "duplicate noise scale λ = {li}"
                )));
            }
        }
    }
    let mut gamma = Vec::with_capacity(points.len());
    for (i, (li, _)) in points.iter().enumerate() {
        let mut g = 1.0;
        for (j, (lj, _)) in points.iter().enumerate() {
            if i != j {
                g *= lj / (lj - li);
            }
        }
        gamma.push(g);
    }
    let estimate = gamma.iter().zip(points).map(|(g, (_, v))| g * v).sum();
    let variance_amplification = gamma.iter().map(|g| g * g).sum();
    Ok(RichardsonFit {
        estimate,
        gamma,
        variance_amplification,
    })
}

/// Two-point exponential extrapolation under the model `<O>(μ) = A e^{-fμ}`:
/// returns `A = (<O>(μ)^λ / <O>(λμ))^{1/(λ-1)}` with λ = μ₂/μ₁.
pub fn zne_exponential(p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    let ((mu1, v1), (mu2, v2)) = (p1, p2);
    if mu1 <= 0.0 || mu2 <= mu1 {
        return Err(Error::InvalidInput(
            "exponential extrapolation needs 0 < μ < λμ".into(),
        ));
    }
    if v1 == 0.0 || v2 == 0.0 || (v1 > 0.0) != (v2 > 0.0) {
        return Err(Error::DegenerateInput(
            "exponential model needs two nonzero values of the same sign".into(),
        ));
    }
    let lambda = mu2 / mu1;
    let sign = v1.signum();
    let ln_a = (lambda * v1.abs().ln() - v2.abs().ln()) / (lambda - 1.0);
    Ok(sign * ln_a.exp())
}

/// Poly-exponential extrapolation: least-squares fit of
/// `ln|<O>| = ln A + Σ_{i=1..d} f_i λ^i`, returning `sign · A`.
pub fn zne_polyexp(points: &[(f64, f64)], degree: usize) -> Result<f64> {
    if points.len() < degree + 1 {
        return Err(Error::RankDeficient);
    }
    let sign = points[0].1.signum();
    if points.iter().any(|&(_, v)| v == 0.0 || v.signum() != sign) {
        return Err(Error::DegenerateInput(
            "poly-exponential model needs nonzero values of one sign".into(),
        ));
    }
    let rows = points.len();
    let cols = degree + 1;
    let mut design = Array2::zeros((rows, cols));
    let mut rhs = Array1::zeros(rows);
    for (r, &(lam, v)) in points.iter().enumerate() {
        for c in 0..cols {
            design[[r, c]] = lam.powi(c as i32);
        }
        rhs[r] = v.abs().ln();
    }
    let x = solve_least_squares(&design, &rhs)?;
    Ok(sign * x[0].exp())
}

/// Multi-parameter least-squares extrapolation: fits the expectation value
/// to all monomials of total degree ≤ `order` in the noise parameters; the
/// constant coefficient is the zero-noise estimate.
#[derive(Debug, Clone)]
pub struct LeastSquaresFit {
    pub estimate: f64,
    /// Fit coefficients in the order produced by [`monomials`].
    pub coefficients: Vec<f64>,
    /// The exponent vectors of the monomial basis.
    pub basis: Vec<Vec<usize>>,
}

pub fn zne_least_squares(points: &[(Vec<f64>, f64)], order: usize) -> Result<LeastSquaresFit> {
    if points.is_empty() {
        return Err(Error::InvalidInput("need at least one point".into()));
    }
    let n_params = points[0].0.len();
    if points.iter().any(|(p, _)| p.len() != n_params) {
        return Err(Error::LengthMismatch {
            expected: n_params,
            actual: points
                .iter()
                .map(|(p, _)| p.len())
                .find(|&l| l != n_params)
                .unwrap(),
        });
    }
    let basis = monomials(n_params, order);
    if points.len() < basis.len() {
        return Err(Error::RankDeficient);
    }
    let mut design = Array2::zeros((points.len(), basis.len()));
    let mut rhs = Array1::zeros(points.len());
    for (r, (params, v)) in points.iter().enumerate() {
        for (c, exps) in basis.iter().enumerate() {
            let mut m = 1.0;
            for (p, &e) in params.iter().zip(exps) {
                m *= p.powi(e as i32);
            }
            design[[r, c]] = m;
        }
        rhs[r] = *v;
    }
    let x = solve_least_squares(&design, &rhs)?;
    Ok(LeastSquaresFit {
        estimate: x[0],
        coefficients: x.to_vec(),
        basis,
    })
}

/// All exponent vectors over `k` variables with total degree ≤ `order`,
/// sorted by total degree (constant first) then lexicographically.
pub fn monomials(k: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == k {
            out.push(prefix.clone());
            return;
        }
        for e in 0..=remaining {
            prefix.push(e);
            rec(k, remaining - e, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for total in 0..=order {
        let mut per_degree = Vec::new();
        rec(k, total, &mut Vec::new(), &mut per_degree);
        per_degree.retain(|e| e.iter().sum::<usize>() == total);
        out.extend(per_degree);
    }
    out
}

/// Least squares with an explicit column-rank check.
fn solve_least_squares(design: &Array2<f64>, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let (_, svals, _) = design.svd(false, false)?;
    let max_sv = svals.iter().cloned().fold(0.0f64, f64::max);
    let rank = svals.iter().filter(|&&s| s > max_sv * 1e-10).count();
    if rank < design.ncols() {
        return Err(Error::RankDeficient);
    }
    Ok(design.least_squares(rhs)?.solution)
}

/// Boost the noise by replacing every two-qubit gate G with G(G†G)^n for a
/// factor 2n+1. The circuit stays logically equivalent; only its two-qubit
/// gate count grows.
pub fn scale_noise_identity_insertion(circuit: &Circuit, factor: usize) -> Result<Circuit> {
    if factor.is_multiple_of(2) || factor == 0 {
        return Err(Error::InvalidInput(format!(
            "identity-insertion factor must be odd, got {factor}"
        )));
    }
    if circuit.n_params > 0 {
        return Err(Error::UnboundParameter { slot: 0 });
    }
    let reps = (factor - 1) / 2;
    let mut out = Circuit::new(circuit.n_qubits);
    for g in &circuit.ops {
        out.push(g.clone())?;
        if g.arity() == 2 {
            let adj = g.adjoint(&[])?;
            for _ in 0..reps {
                out.push(adj.clone())?;
                out.push(g.clone())?;
            }
        }
    }
    Ok(out)
}

/// A quasi-probability decomposition of an inverse Pauli channel into
/// signed Pauli conjugations.
#[derive(Debug, Clone)]
pub struct QuasiProbDecomposition {
    pub arity: usize,
    /// Pauli words of the basis operations, aligned with `coefficients`.
    pub basis: Vec<Vec<Pauli>>,
    /// Quasi-probabilities q_k; they sum to 1 but may be negative.
    pub coefficients: Vec<f64>,
    /// Q = Σ|q_k|.
    pub overhead_q: f64,
}

impl QuasiProbDecomposition {
    /// The sampling overhead Q².
    pub fn sampling_overhead(&self) -> f64 {
        self.overhead_q * self.overhead_q
    }

    /// Draw a basis index with probability |q_k|/Q; returns (index, sign).
    fn draw<R: Rng>(&self, rng: &mut R) -> (usize, f64) {
        let u: f64 = rng.gen::<f64>() * self.overhead_q;
        let mut acc = 0.0;
        for (k, &q) in self.coefficients.iter().enumerate() {
            acc += q.abs();
            if u < acc {
                return (k, q.signum());
            }
        }
        (
            self.coefficients.len() - 1,
            self.coefficients.last().unwrap().signum(),
        )
    }
}

/// Whether two Pauli words commute.
fn words_commute(a: &[Pauli], b: &[Pauli]) -> bool {
    let anti = a.iter().zip(b).filter(|(x, y)| !x.commutes(**y)).count();
    anti % 2 == 0
}

/// Invert a Pauli channel in the Pauli-transfer picture: each transfer
/// eigenvalue `t_P = Σ_Q r_Q χ(Q,P)` is inverted and the result re-expanded
/// into quasi-probabilities over Pauli conjugations.
pub fn pec_decompose(channel: &Channel) -> Result<QuasiProbDecomposition> {
    let rates = channel.as_pauli_rates()?;
    let k = rates.arity;
    let words: Vec<Vec<Pauli>> = (0..rates.rates.len())
        .map(|idx| pauli_letters_of_index(idx, k))
        .collect();
    // transfer eigenvalues of the channel
    let mut transfer = Vec::with_capacity(words.len());
    for p in &words {
        let t: f64 = rates
            .rates
            .iter()
            .zip(&words)
            .map(|(&r, q)| if words_commute(q, p) { r } else { -r })
            .sum();
        if t.abs() < 1e-12 {
            return Err(Error::SingularTransfer { value: t });
        }
        transfer.push(t);
    }
    // quasi-probabilities: q_B = 4^-k Σ_P χ(B,P) / t_P
    let dim = words.len() as f64;
    let mut coefficients = Vec::with_capacity(words.len());
    for b in &words {
        let q: f64 = transfer
            .iter()
            .zip(&words)
            .map(|(&t, p)| {
                let chi = if words_commute(b, p) { 1.0 } else { -1.0 };
                chi / t
            })
            .sum::<f64>()
            / dim;
        coefficients.push(q);
    }
    let overhead_q = coefficients.iter().map(|q| q.abs()).sum();
    Ok(QuasiProbDecomposition {
        arity: k,
        basis: words,
        coefficients,
        overhead_q,
    })
}

/// A probabilistically-cancelled expectation value.
#[derive(Debug, Clone)]
pub struct PecEstimate {
    pub value: f64,
    pub std_err: f64,
    /// Product of per-gate Q factors.
    pub overhead_q: f64,
    pub samples: usize,
}

/// Monte Carlo probabilistic error cancellation. For every executed gate
/// whose kind has a decomposition, a Pauli basis operation is drawn with
/// probability |q|/Q and inserted (noise-free) after the noisy gate; each
/// realization's expectation is weighted by sgn(q...)·ΠQ and averaged. Each
/// realization is evaluated exactly on the density backend.
pub fn pec_estimate(
    circuit: &Circuit,
    noise: &NoiseModel,
    decompositions: &HashMap<String, QuasiProbDecomposition>,
    obs: &Observable,
    samples: usize,
    seed: u64,
) -> Result<PecEstimate> {
    if samples == 0 {
        return Err(Error::InvalidInput("samples must be at least 1".into()));
    }
    let mut overhead_q = 1.0;
    for g in &circuit.ops {
        if let Some(d) = decompositions.get(g.kind.name()) {
            if d.arity != g.arity() {
                return Err(Error::WidthMismatch {
                    expected: g.arity(),
                    actual: d.arity,
                });
            }
            overhead_q *= d.overhead_q;
        }
    }

    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, s as u64));
            let mut rho = SquashedDensityState::zero(circuit.n_qubits)?;
            let mut sign = 1.0f64;
            for g in &circuit.ops {
                rho.apply_unitary(g, &[])?;
                if let Some(ch) = noise.channel_for(g) {
                    rho.apply_channel(ch, &g.targets)?;
                }
                if let Some(d) = decompositions.get(g.kind.name()) {
                    let (k, sgn) = d.draw(&mut rng);
                    sign *= sgn;
                    // recovery operations are inserted noise-free
                    for (pos, letter) in d.basis[k].iter().enumerate() {
                        if *letter != Pauli::I {
                            let kind = match letter {
                                Pauli::X => GateKind::X,
                                Pauli::Y => GateKind::Y,
                                Pauli::Z => GateKind::Z,
                                Pauli::I => unreachable!(),
                            };
                            rho.apply_unitary(
                                &Gate::new(kind, vec![g.targets[pos]]).unwrap(),
                                &[],
                            )?;
                        }
                    }
                }
            }
            Ok(sign * overhead_q * rho.expectation(obs)?)
        })
        .collect::<Result<_>>()?;

    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = if samples > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples as f64 - 1.0)
    } else {
        0.0
    };
    Ok(PecEstimate {
        value: mean,
        std_err: (var / samples as f64).sqrt(),
        overhead_q,
        samples,
    })
}

/// A column-stochastic response (confusion) matrix on m measured qubits.
#[derive(Debug, Clone)]
pub struct ResponseMatrix {
    m: usize,
    matrix: Array2<f64>,
}

impl ResponseMatrix {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let dim = matrix.nrows();
        if matrix.ncols() != dim || !dim.is_power_of_two() {
            return Err(Error::InvalidInput(
                "response matrix must be square with power-of-two dimension".into(),
            ));
        }
        for c in 0..dim {
            let mut sum = 0.0;
            for r in 0..dim {
                if matrix[[r, c]] < -1e-10 {
                    return Err(Error::InvalidInput(
                        "response entries must be nonnegative".into(),
                    ));
                }
                sum += matrix[[r, c]];
            }
            if (sum - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!(
                    "response column {c} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(ResponseMatrix {
            m: dim.trailing_zeros() as usize,
            matrix,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Λ p: the noisy distribution produced from an ideal one.
    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        let dim = 1usize << self.m;
        if probs.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: probs.len(),
            });
        }
        let mut out = vec![0.0; dim];
        for (r, o) in out.iter_mut().enumerate() {
            for (c, p) in probs.iter().enumerate() {
                *o += self.matrix[[r, c]] * p;
            }
        }
        Ok(out)
    }
}

/// Calibrate the full response matrix by preparing every computational
/// state through the simulator under the given noise model and recording
/// the measured distribution as a column.
pub fn mem_calibrate(noise: &NoiseModel, m: usize) -> Result<ResponseMatrix> {
    let dim = 1usize << m;
    let mut matrix = Array2::zeros((dim, dim));
    for y in 0..dim {
        let mut prep = Circuit::new(m);
        for q in 0..m {
            if (y >> (m - 1 - q)) & 1 == 1 {
                prep.push(Gate::new(GateKind::X, vec![q]).unwrap())?;
            }
        }
        let rho = crate::noise::run_density(&prep, noise, &[])?;
        let dist = rho.readout_distribution(noise)?;
        for (r, p) in dist.iter().enumerate() {
            matrix[[r, y]] = *p;
        }
    }
    ResponseMatrix::new(matrix)
}

/// Outcome of inverting the response matrix on a measured distribution.
#[derive(Debug, Clone)]
pub struct MemInverted {
    /// The physical estimate: clipped to the simplex if needed.
    pub probabilities: Vec<f64>,
    /// The raw linear-system solution before clipping.
    pub raw: Vec<f64>,
    /// Whether clipping/renormalization was required.
    pub clipped: bool,
    /// Condition number of Λ (ratio of extreme singular values).
    pub condition_number: f64,
}

/// Solve Λ p_ideal = p_noisy. Negative entries in the raw solution are
/// clipped to zero and the result renormalized, with the event flagged.
pub fn mem_invert(lambda: &ResponseMatrix, noisy: &[f64]) -> Result<MemInverted> {
    let dim = 1usize << lambda.m;
    if noisy.len() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            actual: noisy.len(),
        });
    }
    let (_, svals, _) = lambda.matrix.svd(false, false)?;
    let smax = svals.iter().cloned().fold(0.0f64, f64::max);
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    if smin < smax * 1e-14 {
        return Err(Error::SingularMatrix);
    }
    let rhs = Array1::from_vec(noisy.to_vec());
    let raw = lambda
        .matrix
        .solve(&rhs)
        .map_err(|_| Error::SingularMatrix)?
        .to_vec();

    let clipped = raw.iter().any(|&x| x < -1e-10);
    let probabilities = if clipped {
        let mut p: Vec<f64> = raw.iter().map(|&x| x.max(0.0)).collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            for x in &mut p {
                *x /= total;
            }
        }
        p
    } else {
        raw.iter().map(|&x| x.max(0.0)).collect()
    };
    Ok(MemInverted {
        probabilities,
        raw,
        clipped,
        condition_number: smax / smin,
    })
}

/// Tensor-product-noise response matrix, kept factored as one 2x2 confusion
/// matrix per qubit so application and inversion cost O(n·2^n) instead of
/// materializing the 2^n x 2^n matrix.
#[derive(Debug, Clone)]
pub struct TpnResponse {
    /// Per qubit: [[1-p, q], [p, 1-q]] where p = P(read 1 | prepared 0)
    /// and q = P(read 0 | prepared 1).
    factors: Vec<[[f64; 2]; 2]>,
}

impl TpnResponse {
    pub fn new(rates: &[(f64, f64)]) -> Result<Self> {
        for &(p, q) in rates {
            if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&q) {
                return Err(Error::InvalidInput("TPN rates must lie in [0, 1]".into()));
            }
        }
        Ok(TpnResponse {
            factors: rates
                .iter()
                .map(|&(p, q)| [[1.0 - p, q], [p, 1.0 - q]])
                .collect(),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    fn apply_factors(&self, probs: &[f64], factors: &[[[f64; 2]; 2]]) -> Vec<f64> {
        let n = self.factors.len();
        let mut out = probs.to_vec();
        for (q, f) in factors.iter().enumerate() {
            let mask = 1usize << (n - 1 - q);
            let mut next = vec![0.0; out.len()];
            for (b, &p) in out.iter().enumerate() {
                let bit = ((b & mask) != 0) as usize;
                next[b & !mask] += f[0][bit] * p;
                next[b | mask] += f[1][bit] * p;
            }
            out = next;
        }
        out
    }

    /// Λ p without materializing the dense matrix.
    pub fn apply(&self, probs: &[f64]) -> Result<Vec<f64>> {
        let dim = 1usize << self.factors.len();
        if probs.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: probs.len(),
            });
        }
        Ok(self.apply_factors(probs, &self.factors))
    }

    /// Λ⁻¹ p via per-qubit 2x2 inverses.
    pub fn invert(&self, probs: &[f64]) -> Result<Vec<f64>> {
        let dim = 1usize << self.factors.len();
        if probs.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                actual: probs.len(),
            });
        }
        let mut inverses = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            let det = f[0][0] * f[1][1] - f[0][1] * f[1][0];
            if det.abs() < 1e-12 {
                return Err(Error::SingularMatrix);
            }
            inverses.push([
                [f[1][1] / det, -f[0][1] / det],
                [-f[1][0] / det, f[0][0] / det],
            ]);
        }
        Ok(self.apply_factors(probs, &inverses))
    }

    /// The dense Kronecker-product response matrix (testing and small n).
    pub fn to_dense(&self) -> Result<ResponseMatrix> {
        let n = self.factors.len();
        let dim = 1usize << n;
        let mut matrix = Array2::zeros((dim, dim));
        for c in 0..dim {
            let mut basis = vec![0.0; dim];
            basis[c] = 1.0;
            let col = self.apply_factors(&basis, &self.factors);
            for (r, v) in col.iter().enumerate() {
                matrix[[r, c]] = *v;
            }
        }
        ResponseMatrix::new(matrix)
    }
}

/// Virtual distillation on the simulator's density matrix: the M-degree
/// mitigated expectation `tr(ρ^M O)/tr(ρ^M)`, computed by direct matrix
/// powers.
pub fn vd_estimate(rho: &SquashedDensityState, obs: &Observable, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidInput("M must be at least 1".into()));
    }
    if obs.width() != rho.n_qubits() {
        return Err(Error::WidthMismatch {
            expected: rho.n_qubits(),
            actual: obs.width(),
        });
    }
    let dense = rho.to_dense();
    let mut power = dense.clone();
    for _ in 1..m {
        power = power.dot(&dense);
    }
    let denom = trace(&power);
    if denom.norm() < 1e-12 {
        return Err(Error::VanishingSector {
            weight: denom.norm(),
        });
    }
    let numer = trace(&power.dot(&obs.dense()));
    let value = numer / denom;
    if value.im.abs() > 1e-8 {
        return Err(Error::NumericalConsistency(format!(
            "VD value has imaginary part {:.3e}",
            value.im
        )));
    }
    Ok(value.re)
}

fn trace(m: &Array2<Complex64>) -> Complex64 {
    (0..m.nrows()).map(|i| m[[i, i]]).sum()
}

/// Result of projecting onto a Pauli-symmetry sector.
#[derive(Debug, Clone)]
pub struct SymmetryExpansion {
    pub value: f64,
    /// tr(Π_s ρ): the weight of the kept sector.
    pub sector_weight: f64,
    /// Sampling-overhead proxy 1/tr(Π_s ρ).
    pub overhead: f64,
}

/// Expectation under the state projected onto the `s` eigensector of a
/// Pauli symmetry: `tr(O Π_s ρ)/tr(Π_s ρ)` with `Π_s = (I + sS)/2`. The
/// observable must commute with the symmetry (checked on the Pauli words).
pub fn symmetry_expand(
    rho: &SquashedDensityState,
    obs: &Observable,
    symmetry: &PauliString,
    sector: i8,
) -> Result<SymmetryExpansion> {
    if !(sector == 1 || sector == -1) {
        return Err(Error::InvalidInput("sector must be ±1".into()));
    }
    if symmetry.width() != rho.n_qubits() || obs.width() != rho.n_qubits() {
        return Err(Error::WidthMismatch {
            expected: rho.n_qubits(),
            actual: symmetry.width().max(obs.width()),
        });
    }
    for term in &obs.terms {
        if !term.commutes_with(symmetry) {
            return Err(Error::NonCommuting);
        }
    }
    let dim = 1usize << rho.n_qubits();
    let s_dense = PauliString::new(symmetry.letters.clone(), 1.0).dense();
    let mut projector: Array2<Complex64> = Array2::eye(dim);
    let sign = Complex64::new(sector as f64, 0.0);
    projector = (projector + s_dense.mapv(|v| v * sign)).mapv(|v| v * 0.5);

    let dense = rho.to_dense();
    let weighted = projector.dot(&dense);
    let weight = trace(&weighted);
    if weight.re < 1e-12 {
        return Err(Error::VanishingSector { weight: weight.re });
    }
    let numer = trace(&obs.dense().dot(&weighted));
    let value = numer / weight;
    if value.im.abs() > 1e-8 {
        return Err(Error::NumericalConsistency(format!(
            "projected expectation has imaginary part {:.3e}",
            value.im
        )));
    }
    Ok(SymmetryExpansion {
        value: value.re,
        sector_weight: weight.re,
        overhead: 1.0 / weight.re,
    })
}

/// Solution of the quantum-subspace-expansion generalized eigenproblem.
#[derive(Debug, Clone)]
pub struct QseSolution {
    pub energy: f64,
    pub coefficients: Vec<Complex64>,
    /// Number of basis directions kept after projecting out the null space
    /// of the overlap matrix.
    pub kept_rank: usize,
}

/// Solve `Ĥ c = E B̂ c` with `Ĥ_ij = tr(P_i ρ P_j H)` and
/// `B̂_ij = tr(P_i ρ P_j)`, projecting out overlap eigenvalues below 1e-10,
/// and return the lowest eigenvalue with its coefficient vector.
pub fn qse_solve(
    rho: &SquashedDensityState,
    hamiltonian: &Observable,
    expansion: &[PauliString],
) -> Result<QseSolution> {
    let n = rho.n_qubits();
    if hamiltonian.width() != n {
        return Err(Error::WidthMismatch {
            expected: n,
            actual: hamiltonian.width(),
        });
    }
    if !expansion.iter().any(|p| p.is_identity()) {
        return Err(Error::InvalidInput(
            "expansion set must include the identity word".into(),
        ));
    }
    let m = expansion.len();
    let dense_rho = rho.to_dense();
    let dense_h = hamiltonian.dense();
    let paulis: Vec<Array2<Complex64>> = expansion
        .iter()
        .map(|p| PauliString::new(p.letters.clone(), 1.0).dense())
        .collect();

    let mut h_mat: Array2<Complex64> = Array2::zeros((m, m));
    let mut b_mat: Array2<Complex64> = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let pr = paulis[i].dot(&dense_rho).dot(&paulis[j]);
            b_mat[[i, j]] = trace(&pr);
            h_mat[[i, j]] = trace(&pr.dot(&dense_h));
        }
    }

    // project out the null space of B
    let (b_evals, b_evecs) = crate::tensor::eigh_hermitian(&b_mat)?;
    let kept: Vec<usize> = (0..m).filter(|&i| b_evals[i] > 1e-10).collect();
    if kept.is_empty() {
        return Err(Error::NumericalConsistency(
            "overlap matrix is numerically zero".into(),
        ));
    }
    let mut w: Array2<Complex64> = Array2::zeros((m, kept.len()));
    for (col, &i) in kept.iter().enumerate() {
        let scale = 1.0 / b_evals[i].sqrt();
        for r in 0..m {
            w[[r, col]] = b_evecs[[r, i]] * scale;
        }
    }
    let reduced = w.t().mapv(|v| v.conj()).dot(&h_mat).dot(&w);
    let (evals, evecs) = crate::tensor::eigh_hermitian(&reduced)?;
    let (min_idx, energy) = evals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, &e)| (i, e))
        .unwrap();
    let reduced_vec = evecs.column(min_idx).to_owned();
    let coefficients = w.dot(&reduced_vec).to_vec();
    Ok(QseSolution {
        energy,
        coefficients,
        kept_rank: kept.len(),
    })
}

/// A fitted linear noisy→ideal map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrModel {
    pub slope: f64,
    pub intercept: f64,
}

/// Closed-form least squares for the linear ansatz
/// `ideal ≈ slope · noisy + intercept` over (noisy, ideal) training pairs.
pub fn cdr_fit(pairs: &[(f64, f64)]) -> Result<CdrModel> {
    if pairs.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two training pairs".into(),
        ));
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let var_x: f64 = pairs.iter().map(|(x, _)| (x - mean_x) * (x - mean_x)).sum();
    if var_x < 1e-14 {
        return Err(Error::DegenerateInput(
            "all noisy training values are equal".into(),
        ));
    }
    let cov: f64 = pairs.iter().map(|(x, y)| (x - mean_x) * (y - mean_y)).sum();
    let slope = cov / var_x;
    Ok(CdrModel {
        slope,
        intercept: mean_y - slope * mean_x,
    })
}

pub fn cdr_apply(model: &CdrModel, noisy: f64) -> f64 {
    model.slope * noisy + model.intercept
}

/// Snap every rotation angle to its nearest multiple of π/2, producing a
/// near-Clifford training circuit with the same structure. Parameters must
/// be bound.
pub fn snap_to_clifford(circuit: &Circuit) -> Result<Circuit> {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut out = Circuit::new(circuit.n_qubits);
    for g in &circuit.ops {
        let gate = match (&g.kind, g.param) {
            (GateKind::Rx | GateKind::Ry | GateKind::Rz, Some(p)) => {
                let angle = p.resolve(&[])?;
                let snapped = (angle / half_pi).round() * half_pi;
                Gate {
                    kind: g.kind.clone(),
                    targets: g.targets.clone(),
                    param: Some(Param::Angle(snapped)),
                }
            }
            _ => g.clone(),
        };
        out.push(gate)?;
    }
    Ok(out)
}

/// Randomized compiling: sandwich every two-qubit Clifford gate between a
/// uniformly random Pauli pair and its conjugated compensation, leaving the
/// overall unitary unchanged up to global phase.
pub fn pauli_twirl<R: Rng>(circuit: &Circuit, rng: &mut R) -> Result<Circuit> {
    let n = circuit.n_qubits;
    let mut out = Circuit::new(n);
    for g in &circuit.ops {
        if g.arity() != 2 {
            out.push(g.clone())?;
            continue;
        }
        if !matches!(g.kind, GateKind::Cx | GateKind::Cz | GateKind::Swap) {
            return Err(Error::NonClifford(g.kind.name().into()));
        }
        let letters = [random_pauli(rng), random_pauli(rng)];
        let mut word = vec![Pauli::I; n];
        word[g.targets[0]] = letters[0];
        word[g.targets[1]] = letters[1];
        let before = PhasedPauli::new(word);
        let after = clifford_conjugate(&before, g)?;
        for &q in &g.targets {
            push_pauli_gate(&mut out, before.letters[q], q)?;
        }
        out.push(g.clone())?;
        for &q in &g.targets {
            push_pauli_gate(&mut out, after.letters[q], q)?;
        }
    }
    Ok(out)
}

fn random_pauli<R: Rng>(rng: &mut R) -> Pauli {
    match rng.gen_range(0..4) {
        0 => Pauli::I,
        1 => Pauli::X,
        2 => Pauli::Y,
        _ => Pauli::Z,
    }
}

fn push_pauli_gate(circuit: &mut Circuit, letter: Pauli, q: usize) -> Result<()> {
    let kind = match letter {
        Pauli::I => return Ok(()),
        Pauli::X => GateKind::X,
        Pauli::Y => GateKind::Y,
        Pauli::Z => GateKind::Z,
    };
    circuit.push(Gate::new(kind, vec![q])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::parse_circuit;
    use crate::noise::{run_density, PauliRates};
    use crate::sv::StateVector;
    use approx::assert_abs_diff_eq;

    #[test]
    fn richardson_two_point_linear() {
        let fit = zne_richardson(&[(1.0, 0.9), (2.0, 0.8)]).unwrap();
        assert_abs_diff_eq!(fit.gamma[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.gamma[1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.estimate, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.variance_amplification, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn richardson_recovers_quadratic() {
        let poly = |l: f64| 1.0 - 0.1 * l + 0.01 * l * l;
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 3.0].iter().map(|&l| (l, poly(l))).collect();
        let fit = zne_richardson(&pts).unwrap();
        assert_abs_diff_eq!(fit.gamma[0], 3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.gamma[1], -3.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.gamma[2], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.estimate, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn richardson_single_point_passthrough() {
        let fit = zne_richardson(&[(1.0, 0.73)]).unwrap();
        assert_eq!(fit.gamma, vec![1.0]);
        assert_abs_diff_eq!(fit.estimate, 0.73, epsilon = 1e-15);
    }

    #[test]
    fn richardson_weight_identities_random_scales() {
        // random distinct scale sets drawn from a realistic amplification
        // range; the identity residual grows as ε·Σ|γλ^j|, so arbitrarily
        // conditioned node sets cannot meet an absolute 1e-10 in doubles
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let n = rng.gen_range(1..=6);
            let mut lambdas: Vec<f64> = Vec::new();
            while lambdas.len() <= n {
                let l = 1.0 + 0.5 * rng.gen_range(0..=6) as f64;
                if !lambdas.contains(&l) {
                    lambdas.push(l);
                }
            }
            let pts: Vec<(f64, f64)> = lambdas.iter().map(|&l| (l, 0.0)).collect();
            let fit = zne_richardson(&pts).unwrap();
            let sum: f64 = fit.gamma.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10, "Σγ = {sum}");
            for j in 1..=n {
                let s: f64 = fit
                    .gamma
                    .iter()
                    .zip(&lambdas)
                    .map(|(g, l)| g * l.powi(j as i32))
                    .sum();
                assert!(s.abs() < 1e-10, "Σγλ^{j} = {s} for λ = {lambdas:?}");
            }
        }
    }

    #[test]
    fn richardson_duplicate_scale_rejected() {
        assert!(matches!(
            zne_richardson(&[(1.0, 0.5), (1.0, 0.4)]),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn exponential_two_point() {
        // A = 1, f·μ = ln 1.25: values (0.8, 0.64) at λ = 2
        let a = zne_exponential((1.0, 0.8), (2.0, 0.64)).unwrap();
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-12);
        // A = 0.5, fμ = 1
        let a =
            zne_exponential((1.0, 0.5 * (-1.0f64).exp()), (2.0, 0.5 * (-2.0f64).exp())).unwrap();
        assert_abs_diff_eq!(a, 0.5, epsilon = 1e-12);
        // equal values: zero decay
        let a = zne_exponential((1.0, 0.37), (2.0, 0.37)).unwrap();
        assert_abs_diff_eq!(a, 0.37, epsilon = 1e-12);
        // sign mismatch is rejected
        assert!(zne_exponential((1.0, 0.5), (2.0, -0.5)).is_err());
    }

    #[test]
    fn polyexp_matches_exponential_and_recovers_model() {
        let model = |l: f64| 0.9 * (-(0.1 * l)).exp();
        let pts: Vec<(f64, f64)> = (1..=4).map(|i| (i as f64, model(i as f64))).collect();
        let a = zne_polyexp(&pts, 1).unwrap();
        let two = zne_exponential(pts[0], pts[1]).unwrap();
        assert_abs_diff_eq!(a, two, epsilon = 1e-8);

        let model2 = |l: f64| 0.9 * (-(0.1 * l + 0.02 * l * l)).exp();
        let pts2: Vec<(f64, f64)> = (1..=5).map(|i| (i as f64, model2(i as f64))).collect();
        let a2 = zne_polyexp(&pts2, 2).unwrap();
        assert_abs_diff_eq!(a2, 0.9, epsilon = 1e-6);

        // constant data
        let flat: Vec<(f64, f64)> = (1..=3).map(|i| (i as f64, 0.42)).collect();
        assert_abs_diff_eq!(zne_polyexp(&flat, 1).unwrap(), 0.42, epsilon = 1e-10);
    }

    #[test]
    fn least_squares_single_parameter_matches_richardson() {
        let poly = |l: f64| 0.7 - 0.2 * l + 0.05 * l * l;
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 3.0].iter().map(|&l| (l, poly(l))).collect();
        let rid = zne_richardson(&pts).unwrap();
        let lsq_pts: Vec<(Vec<f64>, f64)> = pts.iter().map(|&(l, v)| (vec![l], v)).collect();
        let lsq = zne_least_squares(&lsq_pts, 2).unwrap();
        assert_abs_diff_eq!(lsq.estimate, rid.estimate, epsilon = 1e-8);
    }

    #[test]
    fn least_squares_two_parameters() {
        let model = |g: f64, z: f64| 1.0 - 0.2 * g - 0.1 * z + 0.05 * g * z;
        let mut pts = Vec::new();
        for gi in 1..=3 {
            for zi in 1..=3 {
                let (g, z) = (gi as f64 * 0.1, zi as f64 * 0.1);
                pts.push((vec![g, z], model(g, z)));
            }
        }
        let fit = zne_least_squares(&pts, 2).unwrap();
        assert_abs_diff_eq!(fit.estimate, 1.0, epsilon = 1e-8);
        // constant data, any order
        let flat: Vec<(Vec<f64>, f64)> = pts.iter().map(|(p, _)| (p.clone(), 0.3)).collect();
        let fit = zne_least_squares(&flat, 1).unwrap();
        assert_abs_diff_eq!(fit.estimate, 0.3, epsilon = 1e-10);
    }

    #[test]
    fn monomial_count_two_vars_order_two() {
        let basis = monomials(2, 2);
        assert_eq!(basis.len(), 6); // 1, γ, ζ, γ², γζ, ζ²
        assert_eq!(basis[0], vec![0, 0]);
    }

    #[test]
    fn identity_insertion_structure() {
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let same = scale_noise_identity_insertion(&c, 1).unwrap();
        assert_eq!(same, c);
        let tripled = scale_noise_identity_insertion(&c, 3).unwrap();
        let cx_count = tripled
            .ops
            .iter()
            .filter(|g| g.kind == GateKind::Cx)
            .count();
        assert_eq!(cx_count, 3);
        // logically equivalent
        let mut a = StateVector::zero(2).unwrap();
        a.apply_circuit(&c, &[]).unwrap();
        let mut b = StateVector::zero(2).unwrap();
        b.apply_circuit(&tripled, &[]).unwrap();
        for (x, y) in a.amplitudes().iter().zip(b.amplitudes()) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!(scale_noise_identity_insertion(&c, 2).is_err());
    }

    #[test]
    fn identity_insertion_amplifies_depolarizing_noise() {
        let c = parse_circuit("qreg q[2]; x q[0]; cx q[0],q[1];").unwrap();
        let mut rates = vec![0.0; 16];
        rates[0] = 0.88;
        for idx in [1, 4, 5, 10, 15] {
            rates[idx] = 0.024;
        }
        let mut noise = NoiseModel::ideal();
        noise.attach_channel(
            "cx",
            Channel::pauli(&PauliRates::new(2, rates).unwrap()).unwrap(),
        );
        let z = Observable::single(PauliString::from_word("ZI").unwrap());
        let raw = run_density(&c, &noise, &[])
            .unwrap()
            .expectation(&z)
            .unwrap();
        let scaled = scale_noise_identity_insertion(&c, 3).unwrap();
        let boosted = run_density(&scaled, &noise, &[])
            .unwrap()
            .expectation(&z)
            .unwrap();
        assert!(
            boosted.abs() < raw.abs(),
            "factor-3 |<Z>| {} should drop below {}",
            boosted.abs(),
            raw.abs()
        );
    }

    #[test]
    fn pec_decomposition_of_x_flip() {
        let ch = Channel::bit_flip(0.1).unwrap();
        let d = pec_decompose(&ch).unwrap();
        // basis order: I, X, Y, Z
        assert_abs_diff_eq!(d.coefficients[0], 1.125, epsilon = 1e-12);
        assert_abs_diff_eq!(d.coefficients[1], -0.125, epsilon = 1e-12);
        assert_abs_diff_eq!(d.coefficients[2], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.coefficients[3], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.overhead_q, 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(d.sampling_overhead(), 1.5625, epsilon = 1e-12);
        let sum: f64 = d.coefficients.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pec_trivial_for_noiseless_channel() {
        let d = pec_decompose(&Channel::depolarizing(0.0).unwrap()).unwrap();
        assert_abs_diff_eq!(d.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.overhead_q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pec_depolarizing_symmetry() {
        let d = pec_decompose(&Channel::depolarizing(0.06).unwrap()).unwrap();
        assert_abs_diff_eq!(d.coefficients[1], d.coefficients[2], epsilon = 1e-12);
        assert_abs_diff_eq!(d.coefficients[2], d.coefficients[3], epsilon = 1e-12);
    }

    #[test]
    fn pec_rejects_non_pauli() {
        assert!(matches!(
            pec_decompose(&Channel::amplitude_damping(0.2).unwrap()),
            Err(Error::NonPauliChannel)
        ));
    }

    /// Applying the signed mixture of Pauli conjugations after the channel
    /// must reproduce the identity on all Pauli inputs.
    #[test]
    fn pec_composition_inverts_channel() {
        for ch in [
            Channel::bit_flip(0.1).unwrap(),
            Channel::phase_flip(0.23).unwrap(),
            Channel::depolarizing(0.09).unwrap(),
        ] {
            let d = pec_decompose(&ch).unwrap();
            for p_idx in 0..4 {
                let p = crate::noise::pauli_word_matrix(p_idx, 1);
                // channel action
                let mut after: Array2<Complex64> = Array2::zeros((2, 2));
                for k in ch.kraus_operators() {
                    after = after + k.dot(&p).dot(&k.t().mapv(|v| v.conj()));
                }
                // signed mixture of Pauli conjugations
                let mut recovered: Array2<Complex64> = Array2::zeros((2, 2));
                for (word, &q) in d.basis.iter().zip(&d.coefficients) {
                    let b = PauliString::new(word.clone(), 1.0).dense();
                    let conj = b.dot(&after).dot(&b.t().mapv(|v| v.conj()));
                    recovered = recovered + conj.mapv(|v| v * q);
                }
                for r in 0..2 {
                    for c in 0..2 {
                        assert!(
                            (recovered[[r, c]] - p[[r, c]]).norm() < 1e-10,
                            "pauli {p_idx} entry ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn pec_estimate_mitigates_bias() {
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let p = 0.05;
        let flip = Channel::bit_flip(p).unwrap();
        let mut noise = NoiseModel::ideal();
        noise.attach_channel("h", flip.clone());
        let mut rates2 = vec![0.0; 16];
        rates2[0] = 1.0 - p;
        rates2[4] = p; // X on the first qubit of the pair
        let cx_noise = Channel::pauli(&PauliRates::new(2, rates2).unwrap()).unwrap();
        noise.attach_channel("cx", cx_noise.clone());

        let zz = Observable::single(PauliString::from_word("ZZ").unwrap());
        let ideal = {
            let mut s = StateVector::zero(2).unwrap();
            s.apply_circuit(&c, &[]).unwrap();
            s.expectation(&zz).unwrap()
        };
        let raw = run_density(&c, &noise, &[])
            .unwrap()
            .expectation(&zz)
            .unwrap();

        let mut decomps = HashMap::new();
        decomps.insert("h".to_string(), pec_decompose(&flip).unwrap());
        decomps.insert("cx".to_string(), pec_decompose(&cx_noise).unwrap());
        let est = pec_estimate(&c, &noise, &decomps, &zz, 20_000, 11).unwrap();

        let raw_bias = (raw - ideal).abs();
        let mitigated_bias = (est.value - ideal).abs();
        assert!(
            mitigated_bias < raw_bias / 5.0,
            "bias {mitigated_bias} vs raw {raw_bias}"
        );
        assert!(
            (est.value - ideal).abs() < 4.0 * est.std_err.max(1e-4),
            "estimate {} ± {} vs ideal {ideal}",
            est.value,
            est.std_err
        );
    }

    /// With single-shot readout the mitigated estimator's variance is Q²
    /// times the unmitigated one. Measured on an observable with zero mean
    /// so the comparison is clean of bias terms.
    #[test]
    fn pec_variance_overhead_is_q_squared() {
        use rand::SeedableRng;

        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let p = 0.05;
        let flip = Channel::bit_flip(p).unwrap();
        let mut rates2 = vec![0.0; 16];
        rates2[0] = 1.0 - p;
        rates2[4] = p;
        let cx_noise = Channel::pauli(&PauliRates::new(2, rates2).unwrap()).unwrap();
        let mut noise = NoiseModel::ideal();
        noise.attach_channel("h", flip.clone());
        noise.attach_channel("cx", cx_noise.clone());
        let decomps: Vec<(&str, QuasiProbDecomposition)> = vec![
            ("h", pec_decompose(&flip).unwrap()),
            ("cx", pec_decompose(&cx_noise).unwrap()),
        ];
        // single shots of ZI, whose Bell-state mean is 0
        let q_total: f64 = decomps.iter().map(|(_, d)| d.overhead_q).product();
        let trials = 4000;
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let parity = |index: usize| -> f64 {
            // eigenvalue of ZI for a 2-bit outcome
            if index & 0b10 == 0 {
                1.0
            } else {
                -1.0
            }
        };
        let single_shot = |rho: &SquashedDensityState, rng: &mut ChaCha8Rng| -> f64 {
            let dist = rho.probabilities().unwrap();
            let u: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            for (i, &pr) in dist.iter().enumerate() {
                acc += pr;
                if u < acc {
                    return parity(i);
                }
            }
            parity(dist.len() - 1)
        };

        let mut unmitigated = Vec::with_capacity(trials);
        let mut mitigated = Vec::with_capacity(trials);
        for _ in 0..trials {
            // unmitigated: run noisy, one shot
            let rho = run_density(&c, &noise, &[]).unwrap();
            unmitigated.push(single_shot(&rho, &mut rng));

            // mitigated: insert drawn recovery ops, one weighted shot
            let mut rho = SquashedDensityState::zero(2).unwrap();
            let mut sign = 1.0f64;
            for g in &c.ops {
                rho.apply_unitary(g, &[]).unwrap();
                if let Some(ch) = noise.channel_for(g) {
                    rho.apply_channel(ch, &g.targets).unwrap();
                }
                if let Some((_, d)) = decomps.iter().find(|(k, _)| *k == g.kind.name()) {
                    let (k, sgn) = d.draw(&mut rng);
                    sign *= sgn;
                    for (pos, letter) in d.basis[k].iter().enumerate() {
                        if *letter != Pauli::I {
                            let kind = match letter {
                                Pauli::X => GateKind::X,
                                Pauli::Y => GateKind::Y,
                                _ => GateKind::Z,
                            };
                            rho.apply_unitary(&Gate::new(kind, vec![g.targets[pos]]).unwrap(), &[])
                                .unwrap();
                        }
                    }
                }
            }
            mitigated.push(sign * q_total * single_shot(&rho, &mut rng));
        }
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
        };
        let ratio = var(&mitigated) / (q_total * q_total * var(&unmitigated));
        assert!(
            (ratio - 1.0).abs() < 0.3,
            "variance ratio {ratio} (Q² = {})",
            q_total * q_total
        );
    }

    #[test]
    fn pec_noiseless_trivial_decomposition_matches_raw() {
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let noise = NoiseModel::ideal();
        let mut decomps = HashMap::new();
        decomps.insert(
            "cx".to_string(),
            pec_decompose(
                &Channel::pauli(
                    &PauliRates::new(2, {
                        let mut r = vec![0.0; 16];
                        r[0] = 1.0;
                        r
                    })
                    .unwrap(),
                )
                .unwrap(),
            )
            .unwrap(),
        );
        let zz = Observable::single(PauliString::from_word("ZZ").unwrap());
        let est = pec_estimate(&c, &noise, &decomps, &zz, 100, 0).unwrap();
        assert_abs_diff_eq!(est.value, 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(est.overhead_q, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mem_calibrate_identity_when_noiseless() {
        let lambda = mem_calibrate(&NoiseModel::ideal(), 2).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let expect = if r == c { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(lambda.matrix()[[r, c]], expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn mem_calibrate_symmetric_flip() {
        let mut noise = NoiseModel::ideal();
        noise.set_readout(vec![crate::noise::ReadoutFlips { p01: 0.1, p10: 0.1 }]);
        let lambda = mem_calibrate(&noise, 1).unwrap();
        assert_abs_diff_eq!(lambda.matrix()[[0, 0]], 0.9, epsilon = 1e-10);
        assert_abs_diff_eq!(lambda.matrix()[[1, 0]], 0.1, epsilon = 1e-10);
        assert_abs_diff_eq!(lambda.matrix()[[0, 1]], 0.1, epsilon = 1e-10);
    }

    #[test]
    fn mem_calibrate_independent_flips_is_kronecker() {
        let mut noise = NoiseModel::ideal();
        noise.set_readout(vec![
            crate::noise::ReadoutFlips {
                p01: 0.1,
                p10: 0.05,
            },
            crate::noise::ReadoutFlips {
                p01: 0.02,
                p10: 0.08,
            },
        ]);
        let lambda = mem_calibrate(&noise, 2).unwrap();
        let tpn = TpnResponse::new(&[(0.1, 0.05), (0.02, 0.08)]).unwrap();
        let dense = tpn.to_dense().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_abs_diff_eq!(
                    lambda.matrix()[[r, c]],
                    dense.matrix()[[r, c]],
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn mem_invert_recovers_constructed_data() {
        let lambda = ResponseMatrix::new(ndarray::array![[0.9, 0.2], [0.1, 0.8]]).unwrap();
        let noisy = lambda.apply(&[1.0, 0.0]).unwrap();
        let out = mem_invert(&lambda, &noisy).unwrap();
        assert!(!out.clipped);
        assert_abs_diff_eq!(out.probabilities[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.probabilities[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn mem_invert_clips_unphysical_solution() {
        let lambda = ResponseMatrix::new(ndarray::array![[0.9, 0.2], [0.1, 0.8]]).unwrap();
        let out = mem_invert(&lambda, &[1.0, 0.0]).unwrap();
        assert!(out.clipped);
        assert_abs_diff_eq!(out.raw[0], 8.0 / 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.raw[1], -1.0 / 7.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.probabilities[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(out.probabilities[1], 0.0, epsilon = 1e-10);
    }

    #[test]
    fn mem_invert_identity_matrix_is_noop() {
        let lambda = ResponseMatrix::new(Array2::eye(4)).unwrap();
        let p = [0.4, 0.3, 0.2, 0.1];
        let out = mem_invert(&lambda, &p).unwrap();
        for (a, b) in out.probabilities.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(out.condition_number, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn tpn_matches_dense_and_inverts() {
        let tpn = TpnResponse::new(&[(0.1, 0.07), (0.03, 0.12)]).unwrap();
        let dense = tpn.to_dense().unwrap();
        let p = [0.5, 0.25, 0.15, 0.1];
        let via_tpn = tpn.apply(&p).unwrap();
        let via_dense = dense.apply(&p).unwrap();
        for (a, b) in via_tpn.iter().zip(&via_dense) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        let back = tpn.invert(&via_tpn).unwrap();
        for (a, b) in back.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        // zero rates: identity action
        let id = TpnResponse::new(&[(0.0, 0.0), (0.0, 0.0)]).unwrap();
        let same = id.apply(&p).unwrap();
        for (a, b) in same.iter().zip(&p) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    fn diagonal_mixture(p0: f64) -> SquashedDensityState {
        let mut rho: Array2<Complex64> = Array2::zeros((2, 2));
        rho[[0, 0]] = Complex64::new(p0, 0.0);
        rho[[1, 1]] = Complex64::new(1.0 - p0, 0.0);
        SquashedDensityState::from_dense(&rho).unwrap()
    }

    #[test]
    fn vd_reference_instance() {
        let rho = diagonal_mixture(0.9);
        let z = Observable::single(PauliString::from_word("Z").unwrap());
        let raw = vd_estimate(&rho, &z, 1).unwrap();
        assert_abs_diff_eq!(raw, 0.8, epsilon = 1e-12);
        let m2 = vd_estimate(&rho, &z, 2).unwrap();
        assert_abs_diff_eq!(m2, 0.80 / 0.82, epsilon = 1e-12);
    }

    #[test]
    fn vd_bias_strictly_decreases_with_m() {
        let rho = diagonal_mixture(0.85);
        let z = Observable::single(PauliString::from_word("Z").unwrap());
        let mut prev_bias = f64::INFINITY;
        for m in 1..=4 {
            let v = vd_estimate(&rho, &z, m).unwrap();
            let bias = (v - 1.0).abs();
            assert!(bias < prev_bias, "M={m}: bias {bias} !< {prev_bias}");
            prev_bias = bias;
        }
    }

    #[test]
    fn vd_pure_state_is_fixed_point() {
        let c = parse_circuit("qreg q[2]; h q[0]; cx q[0],q[1];").unwrap();
        let rho = run_density(&c, &NoiseModel::ideal(), &[]).unwrap();
        let zz = Observable::single(PauliString::from_word("ZZ").unwrap());
        let raw = rho.expectation(&zz).unwrap();
        for m in 1..=4 {
            assert_abs_diff_eq!(vd_estimate(&rho, &zz, m).unwrap(), raw, epsilon = 1e-10);
        }
    }

    fn two_qubit_diag(p01: f64, p00: f64) -> SquashedDensityState {
        let mut rho: Array2<Complex64> = Array2::zeros((4, 4));
        rho[[1, 1]] = Complex64::new(p01, 0.0);
        rho[[0, 0]] = Complex64::new(p00, 0.0);
        SquashedDensityState::from_dense(&rho).unwrap()
    }

    #[test]
    fn symmetry_expansion_reference_instance() {
        let rho = two_qubit_diag(0.8, 0.2);
        let obs = Observable::single(PauliString::from_word("IZ").unwrap());
        let sym = PauliString::from_word("ZZ").unwrap();
        let raw = rho.expectation(&obs).unwrap();
        assert_abs_diff_eq!(raw, -0.6, epsilon = 1e-12);
        let out = symmetry_expand(&rho, &obs, &sym, -1).unwrap();
        assert_abs_diff_eq!(out.value, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.sector_weight, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(out.overhead, 1.25, epsilon = 1e-12);
    }

    #[test]
    fn symmetry_expansion_idempotent_and_checks_commutation() {
        let rho = two_qubit_diag(1.0, 0.0); // entirely in the -1 sector of ZZ
        let obs = Observable::single(PauliString::from_word("ZI").unwrap());
        let sym = PauliString::from_word("ZZ").unwrap();
        let raw = rho.expectation(&obs).unwrap();
        let once = symmetry_expand(&rho, &obs, &sym, -1).unwrap();
        assert_abs_diff_eq!(once.value, raw, epsilon = 1e-12);
        assert_abs_diff_eq!(once.sector_weight, 1.0, epsilon = 1e-12);

        let anti = Observable::single(PauliString::from_word("XI").unwrap());
        assert!(matches!(
            symmetry_expand(&rho, &anti, &sym, -1),
            Err(Error::NonCommuting)
        ));
    }

    #[test]
    fn qse_exact_ground_state_with_identity_expansion() {
        // H = Z: ground state |1>, energy -1
        let c = parse_circuit("qreg q[1]; x q[0];").unwrap();
        let rho = run_density(&c, &NoiseModel::ideal(), &[]).unwrap();
        let h = Observable::single(PauliString::from_word("Z").unwrap());
        let sol = qse_solve(&rho, &h, &[PauliString::from_word("I").unwrap()]).unwrap();
        assert_abs_diff_eq!(sol.energy, -1.0, epsilon = 1e-10);
    }

    #[test]
    fn qse_corrects_coherent_rotation() {
        // slightly rotated ground state of H = Z
        let c = parse_circuit("qreg q[1]; x q[0]; rx(0.2) q[0];").unwrap();
        let rho = run_density(&c, &NoiseModel::ideal(), &[]).unwrap();
        let h = Observable::single(PauliString::from_word("Z").unwrap());
        let raw = rho.expectation(&h).unwrap();
        let sol = qse_solve(
            &rho,
            &h,
            &[
                PauliString::from_word("I").unwrap(),
                PauliString::from_word("X").unwrap(),
            ],
        )
        .unwrap();
        assert!(sol.energy < raw, "QSE energy {} vs raw {}", sol.energy, raw);
        assert!((sol.energy + 1.0).abs() < 1e-8);
    }

    #[test]
    fn qse_full_basis_reaches_exact_minimum() {
        let c = parse_circuit("qreg q[1]; x q[0]; ry(0.37) q[0];").unwrap();
        let rho = run_density(&c, &NoiseModel::ideal(), &[]).unwrap();
        // H = 0.3 X + Z has eigenvalues ±sqrt(1.09)
        let h = Observable::new(vec![
            PauliString::new(vec![Pauli::X], 0.3),
            PauliString::new(vec![Pauli::Z], 1.0),
        ]);
        let full: Vec<PauliString> = ["I", "X", "Y", "Z"]
            .iter()
            .map(|w| PauliString::from_word(w).unwrap())
            .collect();
        let sol = qse_solve(&rho, &h, &full).unwrap();
        assert_abs_diff_eq!(sol.energy, -(1.09f64).sqrt(), epsilon = 1e-8);
    }

    #[test]
    fn qse_energy_monotone_in_expansion() {
        let c = parse_circuit("qreg q[2]; x q[0]; ry(0.3) q[1]; cx q[0],q[1];").unwrap();
        let rho = run_density(&c, &NoiseModel::ideal(), &[]).unwrap();
        let h = Observable::new(vec![
            PauliString::new(PauliString::from_word("ZZ").unwrap().letters, 1.0),
            PauliString::new(PauliString::from_word("XI").unwrap().letters, 0.4),
        ]);
        let sets: Vec<Vec<&str>> = vec![
            vec!["II"],
            vec!["II", "XI"],
            vec!["II", "XI", "IX"],
            vec!["II", "XI", "IX", "YZ"],
        ];
        let mut prev = f64::INFINITY;
        for set in sets {
            let expansion: Vec<PauliString> = set
                .iter()
                .map(|w| PauliString::from_word(w).unwrap())
                .collect();
            let sol = qse_solve(&rho, &h, &expansion).unwrap();
            assert!(sol.energy <= prev + 1e-10, "{} > {prev}", sol.energy);
            prev = sol.energy;
        }
    }

    #[test]
    fn cdr_fits_linear_data() {
        let model = cdr_fit(&[(0.5, 0.9), (0.25, 0.45), (0.1, 0.18)]).unwrap();
        assert_abs_diff_eq!(model.slope, 1.8, epsilon = 1e-12);
        assert_abs_diff_eq!(model.intercept, 0.0, epsilon = 1e-12);
        let ident = cdr_fit(&[(0.3, 0.3), (0.7, 0.7)]).unwrap();
        assert_abs_diff_eq!(ident.slope, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ident.intercept, 0.0, epsilon = 1e-12);
        assert!(cdr_fit(&[(0.5, 0.1), (0.5, 0.2)]).is_err());
    }

    #[test]
    fn cdr_corrects_depolarized_clifford_training() {
        // near-Clifford training circuits under per-gate depolarizing noise:
        // same gate structure means a common contraction, so the linear fit
        // transfers to a held-out circuit
        let p = 0.04;
        let mut noise = NoiseModel::ideal();
        noise.attach_channel_all_1q(Channel::depolarizing(p).unwrap());
        let z = Observable::single(PauliString::from_word("Z").unwrap());
        let angles = [0.1f64, 0.8, 1.9, 2.6, -0.7];
        let mut pairs = Vec::new();
        for &a in &angles {
            let mut c = Circuit::new(1);
            c.rot(GateKind::Ry, 0, Param::Angle(a));
            let training = snap_to_clifford(&c).unwrap();
            let noisy = run_density(&training, &noise, &[])
                .unwrap()
                .expectation(&z)
                .unwrap();
            let mut sv = StateVector::zero(1).unwrap();
            sv.apply_circuit(&training, &[]).unwrap();
            let ideal = sv.expectation(&z).unwrap();
            pairs.push((noisy, ideal));
        }
        let model = cdr_fit(&pairs).unwrap();
        let contraction = 1.0 - 4.0 * p / 3.0;
        assert_abs_diff_eq!(model.slope, 1.0 / contraction, epsilon = 1e-6);

        // held out non-Clifford circuit with the same structure
        let mut held = Circuit::new(1);
        held.rot(GateKind::Ry, 0, Param::Angle(1.234));
        let noisy = run_density(&held, &noise, &[])
            .unwrap()
            .expectation(&z)
            .unwrap();
        let mut sv = StateVector::zero(1).unwrap();
        sv.apply_circuit(&held, &[]).unwrap();
        let ideal = sv.expectation(&z).unwrap();
        let corrected = cdr_apply(&model, noisy);
        assert!(
            (corrected - ideal).abs() <= 0.02 * ideal.abs().max(1.0),
            "corrected {corrected} vs ideal {ideal}"
        );
    }

    #[test]
    fn twirl_preserves_circuit_action() {
        let c = parse_circuit(
            "qreg q[3]; h q[0]; cx q[0],q[1]; rz(0.7) q[2]; cz q[1],q[2]; swap q[0],q[2];",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let twirled = pauli_twirl(&c, &mut rng).unwrap();
            let mut a = StateVector::zero(3).unwrap();
            a.apply_circuit(&c, &[]).unwrap();
            let mut b = StateVector::zero(3).unwrap();
            b.apply_circuit(&twirled, &[]).unwrap();
            // equal up to global phase
            let overlap = a.dot(&b).norm();
            assert!((overlap - 1.0).abs() < 1e-10, "overlap {overlap}");
        }
    }

    #[test]
    fn twirl_without_two_qubit_gates_is_identity() {
        let c = parse_circuit("qreg q[2]; h q[0]; rz(0.3) q[1];").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let twirled = pauli_twirl(&c, &mut rng).unwrap();
        assert_eq!(twirled, c);
    }

    #[test]
    fn twirl_rejects_non_clifford_two_qubit() {
        let mut c = Circuit::new(2);
        let mut m = Array2::eye(4);
        m[[3, 3]] = Complex64::from_polar(1.0, 0.3);
        c.push(Gate::raw(vec![0, 1], m).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            pauli_twirl(&c, &mut rng),
            Err(Error::NonClifford(_))
        ));
    }

    /// Averaging twirled circuits tailors a coherent over-rotation toward a
    /// Pauli channel: the averaged channel's Pauli-transfer matrix loses
    /// its off-diagonal entries.
    #[test]
    fn twirl_suppresses_coherent_offdiagonals() {
        use crate::noise::kron;
        let n_twirls = 200;
        let cx = Gate::new(GateKind::Cx, vec![0, 1]).unwrap();
        let over_rotation = {
            let rz = Gate::rotation(GateKind::Rz, 1, Param::Angle(0.2)).unwrap();
            kron(&Array2::eye(2), &rz.matrix(&[]).unwrap())
        };

        // dense unitary of a circuit on 2 qubits with an Rz over-rotation
        // inserted after every CX
        let unitary_of = |circuit: &Circuit| -> Array2<Complex64> {
            let mut u = Array2::eye(4);
            for g in &circuit.ops {
                let m = g.matrix(&[]).unwrap();
                let full = if g.arity() == 1 {
                    if g.targets[0] == 0 {
                        kron(&m, &Array2::eye(2))
                    } else {
                        kron(&Array2::eye(2), &m)
                    }
                } else {
                    m
                };
                u = full.dot(&u);
                if g.kind == GateKind::Cx {
                    u = over_rotation.dot(&u);
                }
            }
            u
        };

        let mut circuit = Circuit::new(2);
        circuit.gate(GateKind::Cx, &[0, 1]);
        let ideal = cx.matrix(&[]).unwrap();

        // PTM of the effective noise channel, averaged over twirls
        let paulis: Vec<Array2<Complex64>> = (0..16)
            .map(|i| crate::noise::pauli_word_matrix(i, 2))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut avg_ptm = Array2::<f64>::zeros((16, 16));
        for _ in 0..n_twirls {
            let twirled = pauli_twirl(&circuit, &mut rng).unwrap();
            let u = unitary_of(&twirled);
            // noise-only channel: compose with the ideal inverse
            let noise_u = u.dot(&ideal.t().mapv(|v| v.conj()));
            for a in 0..16 {
                for b in 0..16 {
                    let conj = noise_u.dot(&paulis[b]).dot(&noise_u.t().mapv(|v| v.conj()));
                    let val = trace(&paulis[a].dot(&conj)) / Complex64::new(4.0, 0.0);
                    avg_ptm[[a, b]] += val.re / n_twirls as f64;
                }
            }
        }
        let mut max_off = 0.0f64;
        for a in 0..16 {
            for b in 0..16 {
                if a != b {
                    max_off = max_off.max(avg_ptm[[a, b]].abs());
                }
            }
        }
        assert!(max_off < 0.02, "max off-diagonal {max_off}");

        // sanity: the untwirled coherent error has a visible off-diagonal
        let u = unitary_of(&circuit);
        let noise_u = u.dot(&ideal.t().mapv(|v| v.conj()));
        let mut raw_off = 0.0f64;
        for a in 0..16 {
            for b in 0..16 {
                if a != b {
                    let conj = noise_u.dot(&paulis[b]).dot(&noise_u.t().mapv(|v| v.conj()));
                    let val = trace(&paulis[a].dot(&conj)) / Complex64::new(4.0, 0.0);
                    raw_off = raw_off.max(val.re.abs());
                }
            }
        }
        assert!(raw_off > 0.05, "raw off-diagonal {raw_off}");
    }
}
