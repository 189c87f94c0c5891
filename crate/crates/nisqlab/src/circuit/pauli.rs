//! Pauli strings, observables and Clifford conjugation.

use ndarray::{array, Array2};
use num_complex::Complex64;

use super::{Gate, GateKind};
use crate::error::{Error, Result};

/// A single-qubit Pauli letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(ch: char) -> Option<Pauli> {
        match ch {
            'I' | 'i' => Some(Pauli::I),
            'X' | 'x' => Some(Pauli::X),
            'Y' | 'y' => Some(Pauli::Y),
            'Z' | 'z' => Some(Pauli::Z),
            _ => None,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }

    /// Symplectic (x, z) bits: X=(1,0), Z=(0,1), Y=(1,1).
    fn xz(self) -> (u8, u8) {
        match self {
            Pauli::I => (0, 0),
            Pauli::X => (1, 0),
            Pauli::Y => (1, 1),
            Pauli::Z => (0, 1),
        }
    }

    fn from_xz(x: u8, z: u8) -> Pauli {
        match (x, z) {
            (0, 0) => Pauli::I,
            (1, 0) => Pauli::X,
            (1, 1) => Pauli::Y,
            _ => Pauli::Z,
        }
    }

    pub fn matrix(self) -> Array2<Complex64> {
        let o = Complex64::new(0.0, 0.0);
        let l = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        match self {
            Pauli::I => array![[l, o], [o, l]],
            Pauli::X => array![[o, l], [l, o]],
            Pauli::Y => array![[o, -i], [i, o]],
            Pauli::Z => array![[l, o], [o, -l]],
        }
    }

    /// True if this letter commutes with `other`.
    pub fn commutes(self, other: Pauli) -> bool {
        self == Pauli::I || other == Pauli::I || self == other
    }
}

/// A real-weighted Pauli word over the full register width.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    pub letters: Vec<Pauli>,
    pub coefficient: f64,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>, coefficient: f64) -> Self {
        PauliString {
            letters,
            coefficient,
        }
    }

    /// Parse a word such as `ZZI` with unit coefficient.
    pub fn from_word(word: &str) -> Result<Self> {
        let letters = word
            .chars()
            .map(|ch| {
                Pauli::from_char(ch)
                    .ok_or_else(|| Error::InvalidInput(format!("invalid Pauli letter `{ch}`")))
            })
            .collect::<Result<_>>()?;
        Ok(PauliString::new(letters, 1.0))
    }

    pub fn width(&self) -> usize {
        self.letters.len()
    }

    pub fn word(&self) -> String {
        self.letters.iter().map(|p| p.to_char()).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.letters.iter().all(|&p| p == Pauli::I)
    }

    /// Bit masks of the X- and Z-components, qubit 0 most significant.
    pub fn masks(&self) -> (usize, usize) {
        let n = self.letters.len();
        let mut mx = 0usize;
        let mut mz = 0usize;
        for (q, p) in self.letters.iter().enumerate() {
            let (x, z) = p.xz();
            let bit = 1usize << (n - 1 - q);
            if x == 1 {
                mx |= bit;
            }
            if z == 1 {
                mz |= bit;
            }
        }
        (mx, mz)
    }

    /// The dense 2^n x 2^n matrix `coefficient * P`.
    pub fn dense(&self) -> Array2<Complex64> {
        let n = self.width();
        let dim = 1usize << n;
        let mut m = Array2::zeros((dim, dim));
        let (mx, _) = self.masks();
        for col in 0..dim {
            let row = col ^ mx;
            m[[row, col]] = self.basis_action(col) * self.coefficient;
        }
        m
    }

    /// The scalar λ with `P |b⟩ = λ |b ⊕ mx⟩` (coefficient not included).
    pub fn basis_action(&self, basis: usize) -> Complex64 {
        let n = self.width();
        let mut phase = Complex64::new(1.0, 0.0);
        for (q, p) in self.letters.iter().enumerate() {
            let b = (basis >> (n - 1 - q)) & 1;
            match p {
                Pauli::I | Pauli::X => {}
                Pauli::Z => {
                    if b == 1 {
                        phase = -phase;
                    }
                }
                Pauli::Y => {
                    // Y|0> = i|1>, Y|1> = -i|0>
                    phase *= if b == 0 {
                        Complex64::new(0.0, 1.0)
                    } else {
                        Complex64::new(0.0, -1.0)
                    };
                }
            }
        }
        phase
    }

    /// True if this word commutes with `other` (equal widths assumed).
    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self
            .letters
            .iter()
            .zip(&other.letters)
            .filter(|(a, b)| !a.commutes(**b))
            .count();
        anti % 2 == 0
    }
}

/// A Hermitian observable: a real-weighted sum of Pauli strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub terms: Vec<PauliString>,
}

impl Observable {
    pub fn new(terms: Vec<PauliString>) -> Self {
        Observable { terms }
    }

    pub fn single(term: PauliString) -> Self {
        Observable { terms: vec![term] }
    }

    pub fn width(&self) -> usize {
        self.terms.first().map(|t| t.width()).unwrap_or(0)
    }

    pub fn dense(&self) -> Array2<Complex64> {
        let dim = 1usize << self.width();
        let mut m = Array2::zeros((dim, dim));
        for t in &self.terms {
            m = m + t.dense();
        }
        m
    }
}

/// A Pauli word together with a quarter-turn phase `i^k`, closed under
/// multiplication and Clifford conjugation.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasedPauli {
    /// Phase exponent: the operator equals `i^phase_k * (letters product)`.
    phase_k: u8,
    pub letters: Vec<Pauli>,
}

impl PhasedPauli {
    pub fn new(letters: Vec<Pauli>) -> Self {
        PhasedPauli {
            phase_k: 0,
            letters,
        }
    }

    pub fn identity(n: usize) -> Self {
        PhasedPauli {
            phase_k: 0,
            letters: vec![Pauli::I; n],
        }
    }

    pub fn from_string(p: &PauliString) -> Self {
        PhasedPauli {
            phase_k: 0,
            letters: p.letters.clone(),
        }
    }

    pub fn phase(&self) -> Complex64 {
        match self.phase_k & 3 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        }
    }

    pub fn width(&self) -> usize {
        self.letters.len()
    }

    /// Operator product `self * other` with exact phase tracking.
    pub fn mul(&self, other: &PhasedPauli) -> PhasedPauli {
        debug_assert_eq!(self.width(), other.width());
        // Work in the i^k * prod X^x Z^z normal form: per site,
        // Z^z X^x = (-1)^{zx} X^x Z^z, and Y = i X Z.
        let mut k = (self.phase_k + other.phase_k) as u32;
        let mut letters = Vec::with_capacity(self.width());
        for (a, b) in self.letters.iter().zip(&other.letters) {
            let (xa, za) = a.xz();
            let (xb, zb) = b.xz();
            // to normal form: letter = i^{xz} X^x Z^z
            k += (xa & za) as u32 + (xb & zb) as u32;
            // commute Z^za past X^xb
            k += 2 * (za & xb) as u32;
            let (x, z) = (xa ^ xb, za ^ zb);
            // back from normal form: X^x Z^z = i^{-xz} letter
            k += 4 - (x & z) as u32;
            letters.push(Pauli::from_xz(x, z));
        }
        PhasedPauli {
            phase_k: (k % 4) as u8,
            letters,
        }
    }
}

/// Conjugation image of a single local Pauli under a 1-qubit Clifford:
/// returns (letter, sign) with `C P C† = sign * letter`.
fn conj_1q(kind: &GateKind, p: Pauli) -> Result<(Pauli, i8)> {
    use Pauli::*;
    Ok(match kind {
        GateKind::H => match p {
            I => (I, 1),
            X => (Z, 1),
            Y => (Y, -1),
            Z => (X, 1),
        },
        GateKind::S => match p {
            I => (I, 1),
            X => (Y, 1),
            Y => (X, -1),
            Z => (Z, 1),
        },
        GateKind::X => match p {
            I => (I, 1),
            X => (X, 1),
            Y => (Y, -1),
            Z => (Z, -1),
        },
        GateKind::Y => match p {
            I => (I, 1),
            X => (X, -1),
            Y => (Y, 1),
            Z => (Z, -1),
        },
        GateKind::Z => match p {
            I => (I, 1),
            X => (X, -1),
            Y => (Y, -1),
            Z => (Z, 1),
        },
        GateKind::I => (p, 1),
        other => return Err(Error::NonClifford(other.name().into())),
    })
}

/// Conjugation image of the symplectic generators of a 2-qubit Clifford.
/// Returns the images of X⊗I, Z⊗I, I⊗X, I⊗Z as letter pairs (no signs are
/// needed for CX, CZ and SWAP).
fn conj_2q_generators(kind: &GateKind) -> Result<[[Pauli; 2]; 4]> {
    use Pauli::*;
    Ok(match kind {
        GateKind::Cx => [[X, X], [Z, I], [I, X], [Z, Z]],
        GateKind::Cz => [[X, Z], [Z, I], [Z, X], [I, Z]],
        GateKind::Swap => [[I, X], [I, Z], [X, I], [Z, I]],
        other => return Err(Error::NonClifford(other.name().into())),
    })
}

/// Conjugate a phased Pauli word by a Clifford gate: returns `C P C†`.
///
/// Supported gate kinds: H, S, X, Y, Z, CX, CZ, SWAP (and I / barrier as
/// no-ops). Anything else is rejected as non-Clifford.
pub fn clifford_conjugate(p: &PhasedPauli, gate: &Gate) -> Result<PhasedPauli> {
    let n = p.width();
    for &t in &gate.targets {
        if t >= n {
            return Err(Error::QubitOutOfRange { index: t, width: n });
        }
    }
    match gate.arity() {
        0 => Ok(p.clone()), // barrier
        1 => {
            let q = gate.targets[0];
            let (img, sign) = conj_1q(&gate.kind, p.letters[q])?;
            let mut out = p.clone();
            out.letters[q] = img;
            if sign < 0 {
                out.phase_k = (out.phase_k + 2) % 4;
            }
            Ok(out)
        }
        2 => {
            let (a, b) = (gate.targets[0], gate.targets[1]);
            let gens = conj_2q_generators(&gate.kind)?;
            let (xa, za) = p.letters[a].xz();
            let (xb, zb) = p.letters[b].xz();
            // local pair = i^{xa za + xb zb} Xa^xa Za^za Xb^xb Zb^zb;
            // conjugate each generator factor and multiply the images.
            let mut acc = PhasedPauli::identity(2);
            acc.phase_k = ((xa & za) + (xb & zb)) % 4;
            let factors = [(xa, 0usize), (za, 1), (xb, 2), (zb, 3)];
            for (bit, gen_idx) in factors {
                if bit == 1 {
                    let img = PhasedPauli::new(gens[gen_idx].to_vec());
                    acc = acc.mul(&img);
                }
            }
            let mut out = p.clone();
            out.letters[a] = acc.letters[0];
            out.letters[b] = acc.letters[1];
            out.phase_k = (out.phase_k + acc.phase_k) % 4;
            Ok(out)
        }
        _ => Err(Error::NonClifford(gate.kind.name().into())),
    }
}

/// Conjugate by the inverse gate: returns `C† P C`.
pub fn clifford_conjugate_inv(p: &PhasedPauli, gate: &Gate) -> Result<PhasedPauli> {
    match gate.kind {
        // S† = S^3 up to phase, and conjugation ignores global phase
        GateKind::S => {
            let mut out = p.clone();
            for _ in 0..3 {
                out = clifford_conjugate(&out, gate)?;
            }
            Ok(out)
        }
        _ => clifford_conjugate(p, gate),
    }
}
