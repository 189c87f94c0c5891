//! Text format for circuits and observables.
//!
//! The circuit grammar is a minimal OpenQASM-2-like subset: one statement per
//! line, `;`-terminated, `//` comments. A `qreg q[N];` declaration comes
//! first, followed by gate statements:
//!
//! ```text
//! qreg q[2];
//! h q[0];
//! rx(0.5) q[0];      // literal angle
//! rz(pi/2) q[1];     // pi-multiples
//! ry(theta) q[0];    // symbolic parameter slot
//! cx q[0],q[1];
//! barrier;
//! ```
//!
//! Symbolic parameters are allocated slots in order of first appearance.
//! Observables use one `coeff PAULIWORD` pair per line, e.g. `-0.5 ZZI`.

use std::collections::HashMap;
use std::f64::consts::PI;

use super::pauli::{Observable, Pauli, PauliString};
use super::{Circuit, Gate, GateKind, Param};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Int(usize),
    Float(f64),
    Sym(char),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn skip_ws_and_comments(&mut self) {
        loop {
            match self.peek() {
                Some(c) if c.is_ascii_whitespace() => {
                    self.bump();
                }
                Some(b'/') if self.src.get(self.pos + 1) == Some(&b'/') => {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                _ => break,
            }
        }
    }

    /// Next token plus its starting position, or None at end of input.
    fn next_tok(&mut self) -> Result<Option<(Tok, usize, usize)>> {
        self.skip_ws_and_comments();
        let (line, col) = (self.line, self.col);
        let c = match self.peek() {
            Some(c) => c,
            None => return Ok(None),
        };
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
                self.bump();
            }
            Tok::Ident(
                std::str::from_utf8(&self.src[start..self.pos])
                    .unwrap()
                    .to_string(),
            )
        } else if c.is_ascii_digit() || c == b'.' {
            let start = self.pos;
            let mut is_float = false;
            while let Some(c) = self.peek() {
                match c {
                    b'0'..=b'9' => {
                        self.bump();
                    }
                    b'.' | b'e' | b'E' => {
                        is_float = true;
                        self.bump();
                        if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                            self.bump();
                        }
                    }
                    _ => break,
                }
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
            if is_float {
                Tok::Float(
                    text.parse()
                        .map_err(|_| self.err(format!("bad number `{text}`")))?,
                )
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| self.err(format!("bad integer `{text}`")))?,
                )
            }
        } else if b"[](),;*/-".contains(&c) {
            self.bump();
            Tok::Sym(c as char)
        } else {
            return Err(self.err(format!("unexpected character `{}`", c as char)));
        };
        Ok(Some((tok, line, col)))
    }
}

struct Parser<'a> {
    lex: Lexer<'a>,
    lookahead: Option<(Tok, usize, usize)>,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self> {
        let mut lex = Lexer::new(src);
        let lookahead = lex.next_tok()?;
        Ok(Parser { lex, lookahead })
    }

    fn err_at(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self
            .lookahead
            .as_ref()
            .map(|&(_, l, c)| (l, c))
            .unwrap_or((self.lex.line, self.lex.col));
        Error::Parse {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn advance(&mut self) -> Result<Option<(Tok, usize, usize)>> {
        let out = self.lookahead.take();
        self.lookahead = self.lex.next_tok()?;
        Ok(out)
    }

    fn expect_sym(&mut self, sym: char) -> Result<()> {
        match self.advance()? {
            Some((Tok::Sym(c), _, _)) if c == sym => Ok(()),
            Some((t, l, c)) => Err(Error::Parse {
                line: l,
                col: c,
                msg: format!("expected `{sym}`, found {t:?}"),
            }),
            None => Err(self.err_at(format!("expected `{sym}`, found end of input"))),
        }
    }

    fn expect_int(&mut self) -> Result<usize> {
        match self.advance()? {
            Some((Tok::Int(v), _, _)) => Ok(v),
            Some((t, l, c)) => Err(Error::Parse {
                line: l,
                col: c,
                msg: format!("expected integer, found {t:?}"),
            }),
            None => Err(self.err_at("expected integer, found end of input")),
        }
    }

    fn expect_ident(&mut self) -> Result<(String, usize, usize)> {
        match self.advance()? {
            Some((Tok::Ident(s), l, c)) => Ok((s, l, c)),
            Some((t, l, c)) => Err(Error::Parse {
                line: l,
                col: c,
                msg: format!("expected identifier, found {t:?}"),
            }),
            None => Err(self.err_at("expected identifier, found end of input")),
        }
    }

    /// `q[i]` operand.
    fn qubit(&mut self) -> Result<usize> {
        let (name, l, c) = self.expect_ident()?;
        if name != "q" {
            return Err(Error::Parse {
                line: l,
                col: c,
                msg: format!("expected register `q`, found `{name}`"),
            });
        }
        self.expect_sym('[')?;
        let idx = self.expect_int()?;
        self.expect_sym(']')?;
        Ok(idx)
    }

    /// Angle expression: float, pi-multiples (`pi`, `2*pi`, `pi/2`,
    /// `0.5*pi`), or an identifier naming a parameter slot.
    fn angle_expr(
        &mut self,
        slots: &mut HashMap<String, usize>,
        n_params: &mut usize,
    ) -> Result<Param> {
        let mut sign = 1.0;
        while matches!(self.lookahead, Some((Tok::Sym('-'), _, _))) {
            sign = -sign;
            self.advance()?;
        }
        let (tok, l, c) = self
            .advance()?
            .ok_or_else(|| self.err_at("expected angle expression"))?;
        let mut value = match tok {
            Tok::Float(f) => f,
            Tok::Int(i) => i as f64,
            Tok::Ident(name) if name == "pi" => PI,
            Tok::Ident(name) => {
                if sign < 0.0 {
                    return Err(Error::Parse {
                        line: l,
                        col: c,
                        msg: "negated symbolic parameters are not supported".into(),
                    });
                }
                let next = *n_params;
                let slot = *slots.entry(name).or_insert_with(|| next);
                if slot == *n_params {
                    *n_params += 1;
                }
                return Ok(Param::Slot(slot));
            }
            t => {
                return Err(Error::Parse {
                    line: l,
                    col: c,
                    msg: format!("expected angle expression, found {t:?}"),
                })
            }
        };
        loop {
            match self.lookahead {
                Some((Tok::Sym('*'), _, _)) => {
                    self.advance()?;
                    let (tok, l, c) = self
                        .advance()?
                        .ok_or_else(|| self.err_at("expected factor after `*`"))?;
                    value *= match tok {
                        Tok::Float(f) => f,
                        Tok::Int(i) => i as f64,
                        Tok::Ident(name) if name == "pi" => PI,
                        t => {
                            return Err(Error::Parse {
                                line: l,
                                col: c,
                                msg: format!("expected numeric factor, found {t:?}"),
                            })
                        }
                    };
                }
                Some((Tok::Sym('/'), _, _)) => {
                    self.advance()?;
                    let (tok, l, c) = self
                        .advance()?
                        .ok_or_else(|| self.err_at("expected divisor after `/`"))?;
                    let d = match tok {
                        Tok::Float(f) => f,
                        Tok::Int(i) => i as f64,
                        t => {
                            return Err(Error::Parse {
                                line: l,
                                col: c,
                                msg: format!("expected numeric divisor, found {t:?}"),
                            })
                        }
                    };
                    if d == 0.0 {
                        return Err(Error::Parse {
                            line: l,
                            col: c,
                            msg: "division by zero in angle expression".into(),
                        });
                    }
                    value /= d;
                }
                _ => break,
            }
        }
        Ok(Param::Angle(sign * value))
    }
}

/// Parse the circuit text grammar. Gate order is preserved and symbolic
/// parameters get slots in order of first appearance.
pub fn parse_circuit(text: &str) -> Result<Circuit> {
    let mut p = Parser::new(text)?;

    // qreg header
    let (kw, l, c) = p.expect_ident()?;
    if kw != "qreg" {
        return Err(Error::Parse {
            line: l,
            col: c,
            msg: format!("expected `qreg` declaration first, found `{kw}`"),
        });
    }
    let (reg, l, c) = p.expect_ident()?;
    if reg != "q" {
        return Err(Error::Parse {
            line: l,
            col: c,
            msg: format!("register must be named `q`, found `{reg}`"),
        });
    }
    p.expect_sym('[')?;
    let n_qubits = p.expect_int()?;
    p.expect_sym(']')?;
    p.expect_sym(';')?;
    if n_qubits == 0 {
        return Err(Error::Parse {
            line: l,
            col: c,
            msg: "qreg width must be at least 1".into(),
        });
    }

    let mut circuit = Circuit::new(n_qubits);
    let mut slots: HashMap<String, usize> = HashMap::new();
    let mut n_params = 0usize;

    while p.lookahead.is_some() {
        let (name, l, c) = p.expect_ident()?;
        let kind = match name.as_str() {
            "h" => GateKind::H,
            "x" => GateKind::X,
            "y" => GateKind::Y,
            "z" => GateKind::Z,
            "s" => GateKind::S,
            "t" => GateKind::T,
            "rx" => GateKind::Rx,
            "ry" => GateKind::Ry,
            "rz" => GateKind::Rz,
            "cx" => GateKind::Cx,
            "cz" => GateKind::Cz,
            "swap" => GateKind::Swap,
            "ccz" => GateKind::Ccz,
            "barrier" => {
                p.expect_sym(';')?;
                circuit.push(Gate::new(GateKind::Barrier, vec![]).unwrap())?;
                continue;
            }
            "qreg" => {
                return Err(Error::Parse {
                    line: l,
                    col: c,
                    msg: "duplicate qreg declaration".into(),
                })
            }
            _ => {
                return Err(Error::UnknownGate {
                    name,
                    line: l,
                    col: c,
                })
            }
        };
        let param = if kind.is_parametric() {
            p.expect_sym('(')?;
            let param = p.angle_expr(&mut slots, &mut n_params)?;
            p.expect_sym(')')?;
            Some(param)
        } else {
            None
        };
        let arity = kind.arity();
        let mut targets = Vec::with_capacity(arity);
        targets.push(p.qubit()?);
        for _ in 1..arity {
            p.expect_sym(',')?;
            targets.push(p.qubit()?);
        }
        p.expect_sym(';')?;
        let gate = Gate::with_param(kind, targets, param)?;
        circuit.push(gate)?;
    }
    circuit.n_params = circuit.n_params.max(n_params);
    Ok(circuit)
}

/// Render a circuit back to the text grammar. Parameter slots are written as
/// `p0`, `p1`, ... so that a re-parse reproduces the same slot assignment
/// whenever slots first appear in ascending order. Raw single-qubit gates are
/// emitted as an `rz`-`ry`-`rz` triple equivalent up to global phase; larger
/// raw gates are not representable in the grammar.
pub fn render_circuit(circuit: &Circuit) -> Result<String> {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "qreg q[{}];", circuit.n_qubits).unwrap();
    for g in &circuit.ops {
        match &g.kind {
            GateKind::Barrier => {
                writeln!(out, "barrier;").unwrap();
            }
            GateKind::Raw(m) if g.arity() == 1 => {
                let (alpha, beta, gamma) = zyz_angles(m);
                writeln!(out, "rz({:?}) q[{}];", alpha, g.targets[0]).unwrap();
                writeln!(out, "ry({:?}) q[{}];", beta, g.targets[0]).unwrap();
                writeln!(out, "rz({:?}) q[{}];", gamma, g.targets[0]).unwrap();
            }
            GateKind::Raw(_) => {
                return Err(Error::InvalidInput(
                    "multi-qubit raw matrices are not representable in the circuit grammar".into(),
                ))
            }
            GateKind::I => {
                // the grammar has no identity statement; emit a zero rotation
                writeln!(out, "rz(0) q[{}];", g.targets[0]).unwrap();
            }
            kind => {
                let name = kind.name();
                let targets = g
                    .targets
                    .iter()
                    .map(|t| format!("q[{t}]"))
                    .collect::<Vec<_>>()
                    .join(",");
                match g.param {
                    Some(Param::Angle(a)) => writeln!(out, "{name}({a:?}) {targets};").unwrap(),
                    Some(Param::Slot(s)) => writeln!(out, "{name}(p{s}) {targets};").unwrap(),
                    None => writeln!(out, "{name} {targets};").unwrap(),
                }
            }
        }
    }
    Ok(out)
}

/// ZYZ Euler angles of a single-qubit unitary, up to global phase:
/// `U ~ Rz(c) Ry(b) Rz(a)` where the returned triple is `(a, b, c)` in
/// application order.
fn zyz_angles(m: &ndarray::Array2<num_complex::Complex64>) -> (f64, f64, f64) {
    // strip global phase so that the matrix is special unitary
    let det = m[[0, 0]] * m[[1, 1]] - m[[0, 1]] * m[[1, 0]];
    let phase = det.sqrt();
    let u00 = m[[0, 0]] / phase;
    let u10 = m[[1, 0]] / phase;
    let beta = 2.0 * u10.norm().atan2(u00.norm());
    let (sum, diff) = if u00.norm() > 1e-12 && u10.norm() > 1e-12 {
        (-2.0 * u00.arg(), 2.0 * u10.arg())
    } else if u00.norm() > 1e-12 {
        (-2.0 * u00.arg(), 0.0)
    } else {
        (0.0, 2.0 * u10.arg())
    };
    // U = Rz(sum/2 + diff/2) Ry(beta) Rz(sum/2 - diff/2); application order
    // is rightmost-first.
    let c = sum / 2.0 + diff / 2.0;
    let a = sum / 2.0 - diff / 2.0;
    (a, beta, c)
}

/// Parse the observable text format: `coeff PAULIWORD` per line.
pub fn parse_observable(text: &str) -> Result<Observable> {
    let mut terms = Vec::new();
    let mut width = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split("//").next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let coeff: f64 = parts.next().unwrap().parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            col: 1,
            msg: "expected real coefficient".into(),
        })?;
        let word = parts.next().ok_or(Error::Parse {
            line: lineno + 1,
            col: 1,
            msg: "expected Pauli word after coefficient".into(),
        })?;
        if parts.next().is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                col: 1,
                msg: "trailing tokens after Pauli word".into(),
            });
        }
        let letters: Vec<Pauli> = word
            .chars()
            .map(|ch| {
                Pauli::from_char(ch).ok_or(Error::Parse {
                    line: lineno + 1,
                    col: 1,
                    msg: format!("invalid Pauli letter `{ch}`"),
                })
            })
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(letters.len()),
            Some(w) if w != letters.len() => {
                return Err(Error::Parse {
                    line: lineno + 1,
                    col: 1,
                    msg: format!("Pauli word width {} differs from {}", letters.len(), w),
                })
            }
            _ => {}
        }
        terms.push(PauliString::new(letters, coeff));
    }
    if terms.is_empty() {
        return Err(Error::InvalidInput("observable has no terms".into()));
    }
    Ok(Observable::new(terms))
}
