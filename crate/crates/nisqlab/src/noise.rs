//! Noisy-circuit simulation.
//!
//! Two equivalent routes are provided. [`run_density`] evolves the density
//! operator exactly by flattening it into a 2n-qubit "squashed" state
//! vector: a unitary gate U becomes U on the ket indices followed by U* on
//! the bra copies, and a k-qubit channel becomes an ordinary 2k-qubit gate
//! built from its Kraus operators. [`run_pauli_mc`] instead samples noise
//! realizations: after every gate a Pauli error is drawn from the model's
//! rate table and inserted, each trajectory is simulated noiselessly, and
//! results are averaged.

use std::collections::HashMap;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::{Circuit, Gate, GateKind, Observable, Pauli};
use crate::error::{Error, Result};
use crate::sv::StateVector;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// A CPTP channel in Kraus form.
#[derive(Debug, Clone)]
pub struct Channel {
    kraus: Vec<Array2<Complex64>>,
    arity: usize,
}

impl Channel {
    /// Validates trace preservation: sum K†K = I to 1e-10.
    pub fn new(kraus: Vec<Array2<Complex64>>) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::InvalidInput(
                "channel needs at least one Kraus operator".into(),
            ));
        }
        let dim = kraus[0].nrows();
        if !dim.is_power_of_two() || dim < 2 {
            return Err(Error::InvalidInput(
                "Kraus dimension must be a power of two".into(),
            ));
        }
        let mut acc: Array2<Complex64> = Array2::zeros((dim, dim));
        for k in &kraus {
            if k.nrows() != dim || k.ncols() != dim {
                return Err(Error::InvalidInput(
                    "Kraus operators must share a dimension".into(),
                ));
            }
            acc = acc + k.t().mapv(|v| v.conj()).dot(k);
        }
        let mut dev: f64 = 0.0;
        for r in 0..dim {
            for c in 0..dim {
                let expect = if r == c { C1 } else { C0 };
                dev = dev.max((acc[[r, c]] - expect).norm());
            }
        }
        if dev > 1e-10 {
            return Err(Error::NumericalConsistency(format!(
                "channel is not trace preserving (deviation {dev:.3e})"
            )));
        }
        Ok(Channel {
            arity: dim.trailing_zeros() as usize,
            kraus,
        })
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn kraus_operators(&self) -> &[Array2<Complex64>] {
        &self.kraus
    }

    /// Identity channel on one qubit.
    pub fn identity() -> Self {
        Channel::new(vec![Array2::eye(2)]).unwrap()
    }

    /// Depolarizing with the convention ρ -> (1-p)ρ + (p/3)(XρX + YρY + ZρZ).
    pub fn depolarizing(p: f64) -> Result<Self> {
        check_prob(p)?;
        let mut ops = vec![Array2::eye(2).mapv(|v: Complex64| v * (1.0 - p).sqrt())];
        for letter in [Pauli::X, Pauli::Y, Pauli::Z] {
            ops.push(letter.matrix().mapv(|v| v * (p / 3.0).sqrt()));
        }
        Channel::new(ops)
    }

    /// Depolarizing in the uniform convention ρ -> (1-p)ρ + p·I/2^k, which
    /// contracts every non-identity Pauli component by exactly 1-p.
    pub fn uniform_depolarizing(p: f64, arity: usize) -> Result<Self> {
        check_prob(p)?;
        let words = 1usize << (2 * arity);
        let mut rates = vec![p / words as f64; words];
        rates[0] += 1.0 - p;
        Channel::pauli(&PauliRates::new(arity, rates)?)
    }

    pub fn bit_flip(p: f64) -> Result<Self> {
        check_prob(p)?;
        Channel::new(vec![
            Array2::eye(2).mapv(|v: Complex64| v * (1.0 - p).sqrt()),
            Pauli::X.matrix().mapv(|v| v * p.sqrt()),
        ])
    }

    pub fn phase_flip(p: f64) -> Result<Self> {
        check_prob(p)?;
        Channel::new(vec![
            Array2::eye(2).mapv(|v: Complex64| v * (1.0 - p).sqrt()),
            Pauli::Z.matrix().mapv(|v| v * p.sqrt()),
        ])
    }

    pub fn amplitude_damping(gamma: f64) -> Result<Self> {
        check_prob(gamma)?;
        let mut k0: Array2<Complex64> = Array2::eye(2);
        k0[[1, 1]] = Complex64::new((1.0 - gamma).sqrt(), 0.0);
        let mut k1: Array2<Complex64> = Array2::zeros((2, 2));
        k1[[0, 1]] = Complex64::new(gamma.sqrt(), 0.0);
        Channel::new(vec![k0, k1])
    }

    /// A k-qubit Pauli channel from a full rate table over the 4^k Pauli
    /// words (identity first, index = base-4 digits I,X,Y,Z per qubit).
    pub fn pauli(rates: &PauliRates) -> Result<Self> {
        let ops = rates
            .rates
            .iter()
            .enumerate()
            .filter(|(_, &r)| r > 0.0)
            .map(|(idx, &r)| pauli_word_matrix(idx, rates.arity).mapv(|v| v * r.sqrt()))
            .collect();
        Channel::new(ops)
    }

    /// If every Kraus operator is proportional to a Pauli word, return the
    /// rate table; otherwise `NonPauliChannel`.
    pub fn as_pauli_rates(&self) -> Result<PauliRates> {
        let k = self.arity;
        let mut rates = vec![0.0f64; 1 << (2 * k)];
        for m in &self.kraus {
            let mut matched = false;
            for (idx, rate) in rates.iter_mut().enumerate() {
                let p = pauli_word_matrix(idx, k);
                // m = c * p with |c|^2 the rate
                let mut coeff = None;
                let mut ok = true;
                'outer: for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let pv = p[[r, c]];
                        let mv = m[[r, c]];
                        if pv.norm() < 1e-12 {
                            if mv.norm() > 1e-10 {
                                ok = false;
                                break 'outer;
                            }
                        } else {
                            let ratio = mv / pv;
                            match coeff {
                                None => coeff = Some(ratio),
                                Some(prev) => {
                                    if (prev - ratio).norm() > 1e-10 {
                                        ok = false;
                                        break 'outer;
                                    }
                                }
                            }
                        }
                    }
                }
                if ok {
                    if let Some(c) = coeff {
                        *rate += c.norm_sqr();
                        matched = true;
                        break;
                    }
                }
            }
            if !matched {
                return Err(Error::NonPauliChannel);
            }
        }
        PauliRates::new(k, rates)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidInput(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Dense matrix of the `k`-qubit Pauli word encoded by base-4 digits of
/// `idx` (most significant digit = first qubit; 0=I 1=X 2=Y 3=Z).
pub(crate) fn pauli_word_matrix(idx: usize, k: usize) -> Array2<Complex64> {
    let mut m: Array2<Complex64> = Array2::eye(1);
    for q in 0..k {
        let digit = (idx >> (2 * (k - 1 - q))) & 3;
        let letter = match digit {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        };
        m = kron(&m, &letter.matrix());
    }
    m
}

pub(crate) fn pauli_letters_of_index(idx: usize, k: usize) -> Vec<Pauli> {
    (0..k)
        .map(|q| match (idx >> (2 * (k - 1 - q))) & 3 {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            _ => Pauli::Z,
        })
        .collect()
}

pub(crate) fn kron(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = a[[i, j]] * b[[k, l]];
                }
            }
        }
    }
    out
}

/// A normalized Pauli error rate table over the 4^k words of k qubits.
#[derive(Debug, Clone)]
pub struct PauliRates {
    pub arity: usize,
    /// Indexed by base-4 Pauli word, identity first.
    pub rates: Vec<f64>,
}

impl PauliRates {
    pub fn new(arity: usize, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != 1 << (2 * arity) {
            return Err(Error::LengthMismatch {
                expected: 1 << (2 * arity),
                actual: rates.len(),
            });
        }
        if rates.iter().any(|&r| r < 0.0) {
            return Err(Error::InvalidInput(
                "Pauli rates must be nonnegative".into(),
            ));
        }
        let total: f64 = rates.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "Pauli rates must sum to 1, got {total}"
            )));
        }
        Ok(PauliRates { arity, rates })
    }

    /// Single-qubit table {p_I, p_X, p_Y, p_Z}.
    pub fn one_qubit(p_i: f64, p_x: f64, p_y: f64, p_z: f64) -> Result<Self> {
        PauliRates::new(1, vec![p_i, p_x, p_y, p_z])
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (idx, &r) in self.rates.iter().enumerate() {
            acc += r;
            if u < acc {
                return idx;
            }
        }
        self.rates.len() - 1
    }
}

/// Per-qubit readout confusion: probabilities of reading 1 given 0 and of
/// reading 0 given 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReadoutFlips {
    pub p01: f64,
    pub p10: f64,
}

/// Noise attached to a circuit: per-gate-kind channels fired after each
/// matching gate (exact density route), per-gate-kind Pauli rate tables
/// (Monte Carlo route), and optional classical readout confusion.
#[derive(Debug, Clone, Default)]
pub struct NoiseModel {
    channels: HashMap<String, Channel>,
    pauli_rates: HashMap<String, PauliRates>,
    readout: Option<Vec<ReadoutFlips>>,
}

impl NoiseModel {
    pub fn ideal() -> Self {
        NoiseModel::default()
    }

    /// Attach a channel to every gate of the given kind name (e.g. "cx").
    pub fn attach_channel(&mut self, kind: &str, channel: Channel) -> &mut Self {
        self.channels.insert(kind.to_string(), channel);
        self
    }

    /// Attach to every gate kind in one call.
    pub fn attach_channel_all_1q(&mut self, channel: Channel) -> &mut Self {
        for kind in ["i", "x", "y", "z", "h", "s", "t", "rx", "ry", "rz"] {
            self.channels.insert(kind.into(), channel.clone());
        }
        self
    }

    pub fn attach_pauli_rates(&mut self, kind: &str, rates: PauliRates) -> &mut Self {
        self.pauli_rates.insert(kind.to_string(), rates);
        self
    }

    pub fn set_readout(&mut self, flips: Vec<ReadoutFlips>) -> &mut Self {
        self.readout = Some(flips);
        self
    }

    pub fn channel_for(&self, gate: &Gate) -> Option<&Channel> {
        self.channels.get(gate.kind.name())
    }

    pub fn pauli_rates_for(&self, gate: &Gate) -> Option<&PauliRates> {
        self.pauli_rates.get(gate.kind.name())
    }

    pub fn readout(&self) -> Option<&[ReadoutFlips]> {
        self.readout.as_deref()
    }

    pub fn is_trivial(&self) -> bool {
        self.channels.is_empty() && self.pauli_rates.is_empty() && self.readout.is_none()
    }
}

/// The squashed-vector representation of a density operator: a 2n-qubit
/// state with ket indices first and bra indices second.
#[derive(Debug, Clone)]
pub struct SquashedDensityState {
    n: usize,
    vec: StateVector,
}

impl SquashedDensityState {
    pub fn zero(n: usize) -> Result<Self> {
        Ok(SquashedDensityState {
            n,
            vec: StateVector::zero(2 * n)?,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n
    }

    /// The raw 2n-qubit vector.
    pub fn squashed_vector(&self) -> &StateVector {
        &self.vec
    }

    /// Apply a unitary gate: U on the ket copy, U* on the bra copy.
    pub fn apply_unitary(&mut self, gate: &Gate, params: &[f64]) -> Result<()> {
        if matches!(gate.kind, GateKind::Barrier | GateKind::I) {
            return Ok(());
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
        self.vec.apply_matrix(&m, &gate.targets);
        let conj = m.mapv(|v| v.conj());
        let bra_targets: Vec<usize> = gate.targets.iter().map(|t| t + self.n).collect();
        self.vec.apply_matrix(&conj, &bra_targets);
        Ok(())
    }

    /// Apply a channel to the given (ket-side) qubits via its superoperator.
    pub fn apply_channel(&mut self, channel: &Channel, targets: &[usize]) -> Result<()> {
        if channel.arity() != targets.len() {
            return Err(Error::WidthMismatch {
                expected: channel.arity(),
                actual: targets.len(),
            });
        }
        let m = to_superop(channel);
        let mut full_targets = targets.to_vec();
        full_targets.extend(targets.iter().map(|t| t + self.n));
        self.vec.apply_matrix(&m, &full_targets);
        Ok(())
    }

    /// tr(ρ).
    pub fn trace(&self) -> Complex64 {
        let n = self.n;
        let amps = self.vec.amplitudes();
        let mut acc = C0;
        for b in 0..1usize << n {
            acc += amps[(b << n) | b];
        }
        acc
    }

    /// The probability of measuring bitstring `b`, i.e. <b|ρ|b>. The value
    /// is checked to be real and clamped to [0, 1].
    pub fn probability(&self, bits: &[u8]) -> Result<f64> {
        if bits.len() != self.n {
            return Err(Error::LengthMismatch {
                expected: self.n,
                actual: bits.len(),
            });
        }
        let b = crate::circuit::bits_to_index(bits);
        let v = self.vec.amplitudes()[(b << self.n) | b];
        if v.im.abs() > 1e-10 {
            return Err(Error::NumericalConsistency(format!(
                "probability has imaginary part {:.3e}",
                v.im
            )));
        }
        Ok(v.re.clamp(0.0, 1.0))
    }

    /// All 2^n outcome probabilities (diagonal of ρ), clamped to [0, 1].
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let n = self.n;
        let amps = self.vec.amplitudes();
        let mut out = Vec::with_capacity(1 << n);
        for b in 0..1usize << n {
            let v = amps[(b << n) | b];
            if v.im.abs() > 1e-10 {
                return Err(Error::NumericalConsistency(format!(
                    "probability has imaginary part {:.3e}",
                    v.im
                )));
            }
            out.push(v.re.clamp(0.0, 1.0));
        }
        Ok(out)
    }

    /// tr(Ôρ) for a Pauli-sum observable, evaluated by direct index loops.
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        if obs.width() != self.n {
            return Err(Error::WidthMismatch {
                expected: self.n,
                actual: obs.width(),
            });
        }
        let n = self.n;
        let amps = self.vec.amplitudes();
        let mut total = C0;
        for term in &obs.terms {
            let (mx, _) = term.masks();
            let mut acc = C0;
            // tr(Pρ) = sum_b P[b, b^mx] ρ[b^mx, b]
            for b in 0..1usize << n {
                let col = b ^ mx;
                acc += term.basis_action(col) * amps[(col << n) | b];
            }
            total += acc * term.coefficient;
        }
        if total.im.abs() > 1e-8 {
            return Err(Error::NumericalConsistency(format!(
                "expectation has imaginary part {:.3e}",
                total.im
            )));
        }
        Ok(total.re)
    }

    /// Reshape into the dense density matrix (small n).
    pub fn to_dense(&self) -> Array2<Complex64> {
        let dim = 1usize << self.n;
        let amps = self.vec.amplitudes();
        let mut rho = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                // ρ_{ket r, bra c} is stored at squashed index (r, c)
                rho[[r, c]] = amps[(r << self.n) | c];
            }
        }
        rho
    }

    /// Build a squashed state from a dense density matrix.
    pub fn from_dense(rho: &Array2<Complex64>) -> Result<Self> {
        let dim = rho.nrows();
        if !dim.is_power_of_two() || rho.ncols() != dim {
            return Err(Error::InvalidInput(
                "density matrix must be square power-of-two".into(),
            ));
        }
        let n = dim.trailing_zeros() as usize;
        let mut amps = vec![C0; dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                amps[(r << n) | c] = rho[[r, c]];
            }
        }
        Ok(SquashedDensityState {
            n,
            vec: StateVector::from_amplitudes(2 * n, amps)?,
        })
    }

    /// Apply classical readout confusion to the outcome distribution.
    pub fn readout_distribution(&self, noise: &NoiseModel) -> Result<Vec<f64>> {
        let probs = self.probabilities()?;
        match noise.readout() {
            None => Ok(probs),
            Some(flips) => Ok(apply_readout_flips(&probs, flips, self.n)),
        }
    }
}

/// Apply independent per-qubit confusion matrices to a distribution.
pub fn apply_readout_flips(probs: &[f64], flips: &[ReadoutFlips], n: usize) -> Vec<f64> {
    let mut out = probs.to_vec();
    for (q, f) in flips.iter().enumerate().take(n) {
        let mask = 1usize << (n - 1 - q);
        let mut next = vec![0.0; out.len()];
        for (b, &p) in out.iter().enumerate() {
            if b & mask == 0 {
                next[b] += p * (1.0 - f.p01);
                next[b | mask] += p * f.p01;
            } else {
                next[b] += p * (1.0 - f.p10);
                next[b & !mask] += p * f.p10;
            }
        }
        out = next;
    }
    out
}

/// The 2k-qubit gate equivalent of a k-qubit channel on the squashed
/// vector: `M[(τ,τ'),(σ,σ')] = Σ_s K[τ,σ] K*[τ',σ']` with ket indices
/// leading.
pub fn to_superop(channel: &Channel) -> Array2<Complex64> {
    let dim = 1usize << channel.arity();
    let mut m: Array2<Complex64> = Array2::zeros((dim * dim, dim * dim));
    for k in &channel.kraus {
        for tau in 0..dim {
            for taup in 0..dim {
                for sig in 0..dim {
                    for sigp in 0..dim {
                        m[[tau * dim + taup, sig * dim + sigp]] +=
                            k[[tau, sig]] * k[[taup, sigp]].conj();
                    }
                }
            }
        }
    }
    m
}

/// Evolve the density operator exactly through the circuit, firing attached
/// channels after each matching gate.
pub fn run_density(
    circuit: &Circuit,
    noise: &NoiseModel,
    params: &[f64],
) -> Result<SquashedDensityState> {
    let mut rho = SquashedDensityState::zero(circuit.n_qubits)?;
    for g in &circuit.ops {
        rho.apply_unitary(g, params)?;
        if let Some(ch) = noise.channel_for(g) {
            if ch.arity() != g.arity() {
                return Err(Error::WidthMismatch {
                    expected: g.arity(),
                    actual: ch.arity(),
                });
            }
            rho.apply_channel(ch, &g.targets)?;
        }
    }
    Ok(rho)
}

/// Results of the Pauli-insertion Monte Carlo route.
#[derive(Debug, Clone)]
pub struct PauliMcResult {
    /// One sampled bitstring (as a basis index) per shot.
    pub samples: Vec<usize>,
    /// Mean of each requested observable over trajectories.
    pub means: Vec<f64>,
    /// Standard error of each mean.
    pub std_errs: Vec<f64>,
}

/// Simulate `shots` noise realizations: per shot, draw a Pauli after each
/// gate from its rate table, run the unitary trajectory on the state-vector
/// backend, record one sampled bitstring and the exact per-trajectory
/// observable values. Shots are deterministic functions of (seed, shot
/// index), so results do not depend on the worker count.
pub fn run_pauli_mc(
    circuit: &Circuit,
    noise: &NoiseModel,
    observables: &[Observable],
    shots: usize,
    seed: u64,
    params: &[f64],
) -> Result<PauliMcResult> {
    if shots == 0 {
        return Err(Error::InvalidInput("shots must be at least 1".into()));
    }
    let bound = circuit.bind(params)?;
    let per_shot: Vec<(usize, Vec<f64>)> = (0..shots)
        .into_par_iter()
        .map(|shot| -> Result<(usize, Vec<f64>)> {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, shot as u64));
            let mut state = StateVector::zero(bound.n_qubits)?;
            for g in &bound.ops {
                state.apply_gate(g, &[])?;
                if let Some(rates) = noise.pauli_rates_for(g) {
                    if rates.arity != g.arity() {
                        return Err(Error::WidthMismatch {
                            expected: g.arity(),
                            actual: rates.arity,
                        });
                    }
                    let word = rates.draw(&mut rng);
                    if word != 0 {
                        let letters = pauli_letters_of_index(word, rates.arity);
                        for (pos, letter) in letters.iter().enumerate() {
                            if *letter != Pauli::I {
                                let m = letter.matrix();
                                state.apply_matrix(&m, &[g.targets[pos]]);
                            }
                        }
                    }
                }
            }
            let mut values = Vec::with_capacity(observables.len());
            for obs in observables {
                values.push(state.expectation(obs)?);
            }
            let idx = state.sample(1, &mut rng)[0];
            Ok((idx, values))
        })
        .collect::<Result<_>>()?;

    let samples: Vec<usize> = per_shot.iter().map(|(i, _)| *i).collect();
    let mut means = vec![0.0f64; observables.len()];
    for (_, vals) in &per_shot {
        for (m, v) in means.iter_mut().zip(vals) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= shots as f64;
    }
    let mut std_errs = vec![0.0f64; observables.len()];
    if shots > 1 {
        for (_, vals) in &per_shot {
            for ((se, v), m) in std_errs.iter_mut().zip(vals).zip(&means) {
                *se += (v - m) * (v - m);
            }
        }
        for se in &mut std_errs {
            *se = (*se / (shots as f64 - 1.0) / shots as f64).sqrt();
        }
    }
    Ok(PauliMcResult {
        samples,
        means,
        std_errs,
    })
}

/// SplitMix64-style seed derivation so shard seeds are decorrelated.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
