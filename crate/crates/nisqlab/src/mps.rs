//! Matrix-product-state simulator in right-canonical form.
//!
//! The state is factored as a chain of rank-3 site tensors
//! `B[left, phys, right]`, each satisfying the right-canonical condition,
//! together with the Schmidt vector λ on every bond. Two-qubit gates use the
//! Hastings-style update: the two-site block is contracted with the left λ
//! before the SVD, and the new left tensor is recovered as `C·V†` rather
//! than from the SVD's `U`, which avoids dividing by small Schmidt values.
//!
//! Truncation drops singular values below `eps_trunc`, caps the bond at
//! `d_cap`, and renormalizes the surviving spectrum so the state stays a
//! probability distribution; the discarded weight is reported, not thrown.

use ndarray::{s, Array1, Array2, Array3, Array4};
use ndarray_linalg::SVD;
use num_complex::Complex64;
use rand::Rng;

use crate::circuit::{Circuit, Gate, GateKind, Observable, Pauli};
use crate::error::{Error, Result};
use crate::sv::{permute_gate_matrix, StateVector};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Outcome of a gate application: the weight removed by truncation and the
/// largest bond dimension afterwards.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruncationReport {
    pub discarded_weight: f64,
    pub max_bond: usize,
}

impl TruncationReport {
    fn merge(&mut self, other: TruncationReport) {
        self.discarded_weight += other.discarded_weight;
        self.max_bond = self.max_bond.max(other.max_bond);
    }
}

/// A matrix product state with a bond-dimension cap and a truncation
/// threshold.
#[derive(Debug, Clone)]
pub struct MpsState {
    /// Site tensors `B[left, phys, right]`, all right-canonical.
    tensors: Vec<Array3<Complex64>>,
    /// λ vectors on the n-1 internal bonds, nonnegative and descending.
    lambdas: Vec<Array1<f64>>,
    d_cap: usize,
    eps_trunc: f64,
}

impl MpsState {
    /// |0...0> as a product MPS with all bonds of size 1.
    pub fn product_zero(n: usize, d_cap: usize, eps_trunc: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::DegenerateInput(
                "an MPS needs at least 2 sites; use the state-vector backend for n=1".into(),
            ));
        }
        if d_cap == 0 {
            return Err(Error::InvalidInput("d_cap must be at least 1".into()));
        }
        if eps_trunc < 0.0 {
            return Err(Error::InvalidInput("eps_trunc must be nonnegative".into()));
        }
        let mut site = Array3::zeros((1, 2, 1));
        site[[0, 0, 0]] = C1;
        Ok(MpsState {
            tensors: vec![site; n],
            lambdas: vec![Array1::ones(1); n - 1],
            d_cap,
            eps_trunc,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.tensors.len()
    }

    pub fn d_cap(&self) -> usize {
        self.d_cap
    }

    pub fn eps_trunc(&self) -> f64 {
        self.eps_trunc
    }

    /// λ on the bond between sites `j` and `j+1`.
    pub fn lambda(&self, bond: usize) -> &Array1<f64> {
        &self.lambdas[bond]
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.lambdas.iter().map(|l| l.len()).collect()
    }

    /// Apply a gate, dispatching on arity and adjacency. Returns the
    /// aggregated truncation report (zero for single-qubit gates).
    pub fn apply_gate(&mut self, gate: &Gate, params: &[f64]) -> Result<TruncationReport> {
        let n = self.n_qubits();
        for &t in &gate.targets {
            if t >= n {
                return Err(Error::QubitOutOfRange { index: t, width: n });
            }
        }
        match gate.arity() {
            0 => Ok(TruncationReport::default()), // barrier
            1 => {
                if gate.kind != GateKind::I {
                    let m = gate.matrix(params)?;
                    self.apply_1q_matrix(&m, gate.targets[0]);
                }
                Ok(TruncationReport {
                    discarded_weight: 0.0,
                    max_bond: self.bond_dims().into_iter().max().unwrap_or(1),
                })
            }
            2 => {
                let m = gate.matrix(params)?;
                Ok(self.apply_2q(&m, gate.targets[0], gate.targets[1]))
            }
            3 if gate.kind == GateKind::Ccz => {
                let [a, b, c] = [gate.targets[0], gate.targets[1], gate.targets[2]];
                let mut report = TruncationReport::default();
                for g in decompose_ccz(a, b, c) {
                    report.merge(self.apply_gate(&g, &[])?);
                }
                Ok(report)
            }
            _ => Err(Error::InvalidGate(format!(
                "MPS backend does not support {}-qubit raw gates",
                gate.arity()
            ))),
        }
    }

    pub fn apply_circuit(&mut self, circuit: &Circuit, params: &[f64]) -> Result<TruncationReport> {
        if circuit.n_qubits != self.n_qubits() {
            return Err(Error::WidthMismatch {
                expected: self.n_qubits(),
                actual: circuit.n_qubits,
            });
        }
        let mut report = TruncationReport::default();
        for g in &circuit.ops {
            report.merge(self.apply_gate(g, params)?);
        }
        Ok(report)
    }

    /// Single-qubit update: contracts the physical index only. Canonical
    /// form is preserved because the gate is unitary.
    pub fn apply_1q_matrix(&mut self, m: &Array2<Complex64>, site: usize) {
        let b = &self.tensors[site];
        let (dl, _, dr) = b.dim();
        let mut out = Array3::zeros((dl, 2, dr));
        for l in 0..dl {
            for r in 0..dr {
                for sp in 0..2 {
                    let mut acc = C0;
                    for sig in 0..2 {
                        acc += m[[sp, sig]] * b[[l, sig, r]];
                    }
                    out[[l, sp, r]] = acc;
                }
            }
        }
        self.tensors[site] = out;
    }

    /// Two-qubit gate on arbitrary sites. Non-adjacent pairs are brought
    /// together with a SWAP chain and restored afterwards.
    pub fn apply_2q(&mut self, m: &Array2<Complex64>, t0: usize, t1: usize) -> TruncationReport {
        assert_ne!(t0, t1);
        let (lo, hi) = (t0.min(t1), t0.max(t1));
        // canonicalize so the matrix's most significant gate bit is the
        // lower site index
        let matrix = if t0 < t1 {
            m.clone()
        } else {
            permute_gate_matrix(m, &[t0, t1], &[t1, t0])
        };
        if hi == lo + 1 {
            return self.apply_2q_adjacent(&matrix, lo);
        }
        let swap = Gate::new(GateKind::Swap, vec![0, 1])
            .unwrap()
            .matrix(&[])
            .unwrap();
        let mut report = TruncationReport::default();
        // walk the lower site up to hi-1
        for k in lo..hi - 1 {
            report.merge(self.apply_2q_adjacent(&swap, k));
        }
        report.merge(self.apply_2q_adjacent(&matrix, hi - 1));
        for k in (lo..hi - 1).rev() {
            report.merge(self.apply_2q_adjacent(&swap, k));
        }
        report
    }

    /// Hastings-style two-site update on sites (j, j+1); the matrix's most
    /// significant gate bit addresses site j.
    pub fn apply_2q_adjacent(&mut self, m: &Array2<Complex64>, j: usize) -> TruncationReport {
        let n = self.n_qubits();
        assert!(j + 1 < n);
        let bj = &self.tensors[j];
        let bk = &self.tensors[j + 1];
        let (dl, _, dm) = bj.dim();
        let dr = bk.dim().2;

        // two-site block T[l, s1, s2, r], then gate applied -> C
        let mut c_block: Array4<Complex64> = Array4::zeros((dl, 2, 2, dr));
        {
            let mut t_block: Array4<Complex64> = Array4::zeros((dl, 2, 2, dr));
            for l in 0..dl {
                for s1 in 0..2 {
                    for s2 in 0..2 {
                        for r in 0..dr {
                            let mut acc = C0;
                            for a in 0..dm {
                                acc += bj[[l, s1, a]] * bk[[a, s2, r]];
                            }
                            t_block[[l, s1, s2, r]] = acc;
                        }
                    }
                }
            }
            for l in 0..dl {
                for r in 0..dr {
                    for sp1 in 0..2 {
                        for sp2 in 0..2 {
                            let mut acc = C0;
                            for s1 in 0..2 {
                                for s2 in 0..2 {
                                    acc += m[[(sp1 << 1) | sp2, (s1 << 1) | s2]]
                                        * t_block[[l, s1, s2, r]];
                                }
                            }
                            c_block[[l, sp1, sp2, r]] = acc;
                        }
                    }
                }
            }
        }

        // weight the left bond by the stored Schmidt vector before the SVD
        let left_lambda: Array1<f64> = if j == 0 {
            Array1::ones(dl)
        } else {
            self.lambdas[j - 1].clone()
        };
        let mut weighted: Array2<Complex64> = Array2::zeros((dl * 2, 2 * dr));
        for l in 0..dl {
            for sp1 in 0..2 {
                for sp2 in 0..2 {
                    for r in 0..dr {
                        weighted[[l * 2 + sp1, sp2 * dr + r]] =
                            c_block[[l, sp1, sp2, r]] * left_lambda[l];
                    }
                }
            }
        }

        let (_, svals, vt) = weighted.svd(false, true).expect("SVD failed");
        let vt = vt.unwrap();

        // drop below eps, then cap, then renormalize the kept spectrum.
        // Singular values at numerical zero must always go: keeping them
        // stores zero-weight bond directions in which the C·V† recovery is
        // unconstrained and the right-canonical property silently breaks.
        let total: f64 = svals.iter().map(|s| s * s).sum();
        let rank_floor = svals.iter().cloned().fold(0.0f64, f64::max) * 1e-13;
        let mut keep = svals
            .iter()
            .take_while(|&&s| s >= self.eps_trunc && s > rank_floor)
            .count();
        keep = keep.min(self.d_cap).max(1);
        let kept_sq: f64 = svals.iter().take(keep).map(|s| s * s).sum();
        let discarded = (total - kept_sq).max(0.0);
        let renorm = kept_sq.sqrt();

        let new_lambda = Array1::from_iter(svals.iter().take(keep).map(|s| s / renorm));

        // right tensor: rows of V† are right-canonical by construction
        let mut new_bk: Array3<Complex64> = Array3::zeros((keep, 2, dr));
        for a in 0..keep {
            for sp2 in 0..2 {
                for r in 0..dr {
                    new_bk[[a, sp2, r]] = vt[[a, sp2 * dr + r]];
                }
            }
        }
        // left tensor: C · V† (on the unweighted block), renormalized
        let mut new_bj: Array3<Complex64> = Array3::zeros((dl, 2, keep));
        for l in 0..dl {
            for sp1 in 0..2 {
                for a in 0..keep {
                    let mut acc = C0;
                    for sp2 in 0..2 {
                        for r in 0..dr {
                            acc += c_block[[l, sp1, sp2, r]] * vt[[a, sp2 * dr + r]].conj();
                        }
                    }
                    new_bj[[l, sp1, a]] = acc / renorm;
                }
            }
        }

        self.tensors[j] = new_bj;
        self.tensors[j + 1] = new_bk;
        self.lambdas[j] = new_lambda;
        TruncationReport {
            discarded_weight: discarded,
            max_bond: self.bond_dims().into_iter().max().unwrap_or(1),
        }
    }

    /// Amplitude of one bitstring: a left-to-right chain of vector-matrix
    /// products over the selected physical slices.
    pub fn amplitude(&self, bits: &[u8]) -> Result<Complex64> {
        let n = self.n_qubits();
        if bits.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: bits.len(),
            });
        }
        let mut v: Array1<Complex64> = Array1::from_elem(1, C1);
        for (j, &bit) in bits.iter().enumerate() {
            let b = &self.tensors[j];
            let slice = b.slice(s![.., bit as usize, ..]);
            let mut next = Array1::zeros(slice.dim().1);
            for r in 0..slice.dim().1 {
                let mut acc = C0;
                for l in 0..slice.dim().0 {
                    acc += v[l] * slice[[l, r]];
                }
                next[r] = acc;
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Observable expectation using λ²-weighted local contraction for the
    /// support of each term and the right-canonical closure on the right.
    pub fn expectation(&self, obs: &Observable) -> Result<f64> {
        let n = self.n_qubits();
        if obs.width() != n {
            return Err(Error::WidthMismatch {
                expected: n,
                actual: obs.width(),
            });
        }
        let mut total = 0.0;
        for term in &obs.terms {
            if term.is_identity() {
                total += term.coefficient;
                continue;
            }
            let first = term.letters.iter().position(|&p| p != Pauli::I).unwrap();
            let last = term.letters.iter().rposition(|&p| p != Pauli::I).unwrap();
            let dl = self.tensors[first].dim().0;
            let left_lambda: Array1<f64> = if first == 0 {
                Array1::ones(dl)
            } else {
                self.lambdas[first - 1].clone()
            };
            // E[ket bond, bra bond], initialized to diag(λ²)
            let mut env: Array2<Complex64> = Array2::zeros((dl, dl));
            for a in 0..dl {
                env[[a, a]] = Complex64::new(left_lambda[a] * left_lambda[a], 0.0);
            }
            for k in first..=last {
                let op = term.letters[k].matrix();
                let b = &self.tensors[k];
                let (bl, _, br) = b.dim();
                debug_assert_eq!(bl, env.dim().0);
                let mut next: Array2<Complex64> = Array2::zeros((br, br));
                for bket in 0..br {
                    for bbra in 0..br {
                        let mut acc = C0;
                        for a in 0..bl {
                            for ap in 0..bl {
                                let e = env[[a, ap]];
                                if e == C0 {
                                    continue;
                                }
                                for sig in 0..2 {
                                    for sigp in 0..2 {
                                        let o = op[[sigp, sig]];
                                        if o == C0 {
                                            continue;
                                        }
                                        acc +=
                                            e * b[[a, sig, bket]] * o * b[[ap, sigp, bbra]].conj();
                                    }
                                }
                            }
                        }
                        next[[bket, bbra]] = acc;
                    }
                }
                env = next;
            }
            let tr: Complex64 = (0..env.dim().0).map(|a| env[[a, a]]).sum();
            total += term.coefficient * tr.re;
        }
        Ok(total)
    }

    /// Exact ancestral sampling: walk left to right, at each site forming
    /// the 2x2 conditional reduced density, drawing, and conditioning the
    /// boundary vector. Cost O(nD²) per sample.
    pub fn sample<R: Rng>(&self, shots: usize, rng: &mut R) -> Result<Vec<usize>> {
        let n = self.n_qubits();
        let mut out = Vec::with_capacity(shots);
        for _ in 0..shots {
            let mut v: Array1<Complex64> = Array1::from_elem(1, C1);
            let mut index = 0usize;
            for j in 0..n {
                let b = &self.tensors[j];
                let (bl, _, br) = b.dim();
                debug_assert_eq!(bl, v.len());
                let mut w0: Array1<Complex64> = Array1::zeros(br);
                let mut w1: Array1<Complex64> = Array1::zeros(br);
                for r in 0..br {
                    let mut a0 = C0;
                    let mut a1 = C0;
                    for l in 0..bl {
                        a0 += v[l] * b[[l, 0, r]];
                        a1 += v[l] * b[[l, 1, r]];
                    }
                    w0[r] = a0;
                    w1[r] = a1;
                }
                let p0: f64 = w0.iter().map(|x| x.norm_sqr()).sum();
                let p1: f64 = w1.iter().map(|x| x.norm_sqr()).sum();
                let psum = p0 + p1;
                if psum < 1e-14 {
                    return Err(Error::ProbabilityUnderflow { prob: psum });
                }
                let mut bit = if rng.gen::<f64>() * psum < p0 {
                    0u8
                } else {
                    1u8
                };
                // numerical guard: never condition on a branch of weight ~0
                if bit == 0 && p0 < 1e-14 {
                    bit = 1;
                } else if bit == 1 && p1 < 1e-14 {
                    bit = 0;
                }
                let (w, p) = if bit == 0 { (w0, p0) } else { (w1, p1) };
                let scale = 1.0 / p.sqrt();
                v = w.mapv(|x| x * scale);
                index = (index << 1) | bit as usize;
            }
            out.push(index);
        }
        Ok(out)
    }

    /// Max deviation from the right-canonical condition over all sites.
    pub fn canonical_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for b in &self.tensors {
            let (dl, _, dr) = b.dim();
            for a in 0..dl {
                for ap in 0..dl {
                    let mut acc = C0;
                    for sig in 0..2 {
                        for r in 0..dr {
                            acc += b[[a, sig, r]] * b[[ap, sig, r]].conj();
                        }
                    }
                    let expect = if a == ap { C1 } else { C0 };
                    worst = worst.max((acc - expect).norm());
                }
            }
        }
        worst
    }

    /// Σλ² deviation from 1, worst bond.
    pub fn lambda_norm_deviation(&self) -> f64 {
        self.lambdas
            .iter()
            .map(|l| (l.iter().map(|x| x * x).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Contract the chain into a dense state vector (small n only).
    pub fn to_statevector(&self) -> Result<StateVector> {
        let n = self.n_qubits();
        let mut acc: Array2<Complex64> = Array2::from_elem((1, 1), C1);
        for b in &self.tensors {
            let (dl, _, dr) = b.dim();
            let rows = acc.dim().0;
            let mut next: Array2<Complex64> = Array2::zeros((rows * 2, dr));
            for p in 0..rows {
                for sig in 0..2 {
                    for r in 0..dr {
                        let mut s = C0;
                        for l in 0..dl {
                            s += acc[[p, l]] * b[[l, sig, r]];
                        }
                        next[[p * 2 + sig, r]] = s;
                    }
                }
            }
            acc = next;
        }
        let amps: Vec<Complex64> = acc.column(0).to_vec();
        StateVector::from_amplitudes(n, amps)
    }
}

/// Exact decomposition of CCZ into CX, T and T† (the textbook Toffoli
/// construction without its Hadamard sandwich).
fn decompose_ccz(a: usize, b: usize, c: usize) -> Vec<Gate> {
    let t = |q: usize| Gate::new(GateKind::T, vec![q]).unwrap();
    let tdg = |q: usize| {
        let m = Gate::new(GateKind::T, vec![q])
            .unwrap()
            .matrix(&[])
            .unwrap();
        Gate::raw(vec![q], m.t().mapv(|v| v.conj())).unwrap()
    };
    let cx = |x: usize, y: usize| Gate::new(GateKind::Cx, vec![x, y]).unwrap();
    vec![
        cx(b, c),
        tdg(c),
        cx(a, c),
        t(c),
        cx(b, c),
        tdg(c),
        cx(a, c),
        t(b),
        t(c),
        cx(a, b),
        t(a),
        tdg(b),
        cx(a, b),
    ]
}
