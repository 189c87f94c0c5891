//! Variational-algorithm engine: loss evaluation, gradients, gradient
//! descent, and the VQE / QAOA-MaxCut reference drivers.
//!
//! Four gradient routes are implemented: first- and second-order finite
//! differences, the parameter-shift rule
//! `∂L/∂θ = (L(θ+π/2) - L(θ-π/2)) / 2` (exact for Pauli rotations in the
//! half-angle convention), and a memory-efficient adjoint sweep that runs
//! the circuit backwards keeping exactly two live state buffers.
//!
//! A parameter slot may be referenced by several gates (QAOA reuses its
//! layer angles across all edges); the parameter-shift and adjoint routes
//! accumulate per-occurrence contributions, so shared slots differentiate
//! correctly.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::circuit::{index_to_bits, Circuit, GateKind, Observable, Param, Pauli, PauliString};
use crate::error::{Error, Result};
use crate::mps::MpsState;
use crate::sv::StateVector;

/// Which simulator evaluates the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Backend {
    Sv,
    Mps { d_cap: usize, eps_trunc: f64 },
}

/// A loss of the form `<0| C†(θ) H C(θ) |0>`.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub circuit: Circuit,
    pub hamiltonian: Observable,
    pub backend: Backend,
}

impl LossSpec {
    pub fn new(circuit: Circuit, hamiltonian: Observable, backend: Backend) -> Result<Self> {
        if hamiltonian.width() != circuit.n_qubits {
            return Err(Error::WidthMismatch {
                expected: circuit.n_qubits,
                actual: hamiltonian.width(),
            });
        }
        Ok(LossSpec {
            circuit,
            hamiltonian,
            backend,
        })
    }
}

/// Evaluate the loss at `theta`.
pub fn loss(spec: &LossSpec, theta: &[f64]) -> Result<f64> {
    loss_of_circuit(spec, &spec.circuit, theta)
}

fn loss_of_circuit(spec: &LossSpec, circuit: &Circuit, theta: &[f64]) -> Result<f64> {
    match spec.backend {
        Backend::Sv => {
            let mut state = StateVector::zero(circuit.n_qubits)?;
            state.apply_circuit(circuit, theta)?;
            state.expectation(&spec.hamiltonian)
        }
        Backend::Mps { d_cap, eps_trunc } => {
            let mut state = MpsState::product_zero(circuit.n_qubits, d_cap, eps_trunc)?;
            state.apply_circuit(circuit, theta)?;
            state.expectation(&spec.hamiltonian)
        }
    }
}

/// Forward differences: m+1 loss evaluations, O(δ) error.
pub fn grad_fd1(spec: &LossSpec, theta: &[f64], delta: f64) -> Result<Vec<f64>> {
    if delta <= 0.0 {
        return Err(Error::InvalidInput("fd step must be positive".into()));
    }
    let base = loss(spec, theta)?;
    let mut grads = Vec::with_capacity(theta.len());
    let mut shifted = theta.to_vec();
    for j in 0..theta.len() {
        shifted[j] = theta[j] + delta;
        grads.push((loss(spec, &shifted)? - base) / delta);
        shifted[j] = theta[j];
    }
    Ok(grads)
}

/// Central differences: 2m evaluations, O(δ²) error.
pub fn grad_fd2(spec: &LossSpec, theta: &[f64], delta: f64) -> Result<Vec<f64>> {
    if delta <= 0.0 {
        return Err(Error::InvalidInput("fd step must be positive".into()));
    }
    let mut grads = Vec::with_capacity(theta.len());
    let mut shifted = theta.to_vec();
    for j in 0..theta.len() {
        shifted[j] = theta[j] + delta;
        let plus = loss(spec, &shifted)?;
        shifted[j] = theta[j] - delta;
        let minus = loss(spec, &shifted)?;
        shifted[j] = theta[j];
        grads.push((plus - minus) / (2.0 * delta));
    }
    Ok(grads)
}

/// Parameter-shift rule, exact for Rx/Ry/Rz. Each occurrence of a slot is
/// shifted independently and the contributions summed.
pub fn grad_pshift(spec: &LossSpec, theta: &[f64]) -> Result<Vec<f64>> {
    let circuit = &spec.circuit;
    // the rule only covers Pauli rotations; other parametric kinds would
    // need their own shift structure
    for g in &circuit.ops {
        if matches!(g.param, Some(Param::Slot(_))) && !g.kind.is_parametric() {
            return Err(Error::InvalidGate(format!(
                "parameter-shift rule requires Pauli rotations, found `{}`",
                g.kind.name()
            )));
        }
    }
    let bound = circuit.bind(theta)?;
    let mut grads = vec![0.0; circuit.n_params];
    for (idx, g) in circuit.ops.iter().enumerate() {
        let slot = match g.param {
            Some(Param::Slot(s)) => s,
            _ => continue,
        };
        let angle = theta[slot];
        let mut shifted = bound.clone();
        shifted.ops[idx].param = Some(Param::Angle(angle + FRAC_PI_2));
        let plus = loss_of_circuit(spec, &shifted, &[])?;
        shifted.ops[idx].param = Some(Param::Angle(angle - FRAC_PI_2));
        let minus = loss_of_circuit(spec, &shifted, &[])?;
        grads[slot] += 0.5 * (plus - minus);
    }
    Ok(grads)
}

/// Memory-efficient adjoint gradient: one forward pass caching the final
/// state and H applied to it, then one backward sweep undoing each gate on
/// both buffers. Exactly two full state buffers are live throughout.
pub fn grad_adjoint(spec: &LossSpec, theta: &[f64]) -> Result<Vec<f64>> {
    if !matches!(spec.backend, Backend::Sv) {
        return Err(Error::InvalidInput(
            "adjoint gradient requires a backend with in-place inverse gate support (sv)".into(),
        ));
    }
    let circuit = &spec.circuit;
    let n = circuit.n_qubits;

    // forward pass
    let mut phi = StateVector::zero(n)?;
    phi.apply_circuit(circuit, theta)?;

    // psi = H |phi>, accumulated term by term; Pauli words are involutions
    // so each application is undone in place after being accumulated
    let mut psi = StateVector::zero(n)?;
    psi.amplitudes_mut()[0] = num_complex::Complex64::new(0.0, 0.0);
    for term in &spec.hamiltonian.terms {
        let (mx, _) = term.masks();
        let dim = 1usize << n;
        for c in 0..dim {
            let contrib = term.basis_action(c) * phi.amplitudes()[c] * term.coefficient;
            psi.amplitudes_mut()[c ^ mx] += contrib;
        }
    }

    let mut grads = vec![0.0; circuit.n_params];
    for g in circuit.ops.iter().rev() {
        if matches!(g.kind, GateKind::Barrier | GateKind::I) {
            continue;
        }
        if let Some(Param::Slot(slot)) = g.param {
            let axis = match g.kind {
                GateKind::Rx => Pauli::X,
                GateKind::Ry => Pauli::Y,
                GateKind::Rz => Pauli::Z,
                _ => {
                    return Err(Error::InvalidGate(format!(
                        "adjoint gradient requires Pauli rotations, found `{}`",
                        g.kind.name()
                    )))
                }
            };
            // v = <psi| P |phi>; dQ/dθ = -i/2 P Q gives grad = Im(v)
            let mut letters = vec![Pauli::I; n];
            letters[g.targets[0]] = axis;
            let p = PauliString::new(letters, 1.0);
            let (mx, _) = p.masks();
            let mut v = num_complex::Complex64::new(0.0, 0.0);
            for c in 0..1usize << n {
                v += psi.amplitudes()[c ^ mx].conj() * p.basis_action(c) * phi.amplitudes()[c];
            }
            grads[slot] += v.im;
        }
        let adj = g.adjoint(theta)?;
        phi.apply_gate(&adj, &[])?;
        psi.apply_gate(&adj, &[])?;
    }
    Ok(grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMethod {
    Fd1,
    Fd2,
    PShift,
    Adjoint,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub method: GradientMethod,
    pub fd_delta: f64,
    /// Stop when the loss change between iterations falls below this.
    pub tol: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            step_size: 0.1,
            max_iters: 1000,
            method: GradientMethod::Adjoint,
            fd_delta: 1e-4,
            tol: 1e-10,
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(Error::InvalidInput("step size must be positive".into()));
        }
        if self.fd_delta <= 0.0 {
            return Err(Error::InvalidInput("fd step must be positive".into()));
        }
        Ok(())
    }
}

/// Full iterate trace of a gradient-descent run.
#[derive(Debug, Clone)]
pub struct OptimizeTrace {
    /// (θ, loss) per iteration, including the starting point.
    pub iterates: Vec<(Vec<f64>, f64)>,
}

impl OptimizeTrace {
    pub fn final_params(&self) -> &[f64] {
        &self.iterates.last().unwrap().0
    }

    pub fn final_loss(&self) -> f64 {
        self.iterates.last().unwrap().1
    }
}

pub fn gradient(spec: &LossSpec, theta: &[f64], config: &OptimizerConfig) -> Result<Vec<f64>> {
    match config.method {
        GradientMethod::Fd1 => grad_fd1(spec, theta, config.fd_delta),
        GradientMethod::Fd2 => grad_fd2(spec, theta, config.fd_delta),
        GradientMethod::PShift => grad_pshift(spec, theta),
        GradientMethod::Adjoint => grad_adjoint(spec, theta),
    }
}

/// Plain gradient descent `θ <- θ - η ∇L` until the loss change drops below
/// tolerance or iterations run out. Ten consecutive increases abort with a
/// divergence error.
pub fn optimize(
    spec: &LossSpec,
    theta0: &[f64],
    config: &OptimizerConfig,
) -> Result<OptimizeTrace> {
    config.validate()?;
    if theta0.len() != spec.circuit.n_params {
        return Err(Error::LengthMismatch {
            expected: spec.circuit.n_params,
            actual: theta0.len(),
        });
    }
    let mut theta = theta0.to_vec();
    let mut prev = loss(spec, &theta)?;
    let mut trace = OptimizeTrace {
        iterates: vec![(theta.clone(), prev)],
    };
    let mut bad_streak = 0usize;
    for _ in 0..config.max_iters {
        let g = gradient(spec, &theta, config)?;
        if g.iter().all(|&x| x == 0.0) {
            break;
        }
        for (t, gi) in theta.iter_mut().zip(&g) {
            *t -= config.step_size * gi;
        }
        let current = loss(spec, &theta)?;
        trace.iterates.push((theta.clone(), current));
        if current > prev + 1e-12 {
            bad_streak += 1;
            if bad_streak >= 10 {
                return Err(Error::Divergence { streak: bad_streak });
            }
        } else {
            bad_streak = 0;
        }
        if (current - prev).abs() < config.tol {
            break;
        }
        prev = current;
    }
    Ok(trace)
}

/// A MaxCut instance on a simple undirected graph.
#[derive(Debug, Clone)]
pub struct MaxCutProblem {
    pub n_vertices: usize,
    pub edges: Vec<(usize, usize)>,
}

impl MaxCutProblem {
    pub fn new(n_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a >= n_vertices || b >= n_vertices {
                return Err(Error::QubitOutOfRange {
                    index: a.max(b),
                    width: n_vertices,
                });
            }
            if a == b {
                return Err(Error::InvalidInput(format!("self-loop on vertex {a}")));
            }
            let e = (a.min(b), a.max(b));
            if canon.contains(&e) {
                return Err(Error::InvalidInput(format!("duplicate edge {e:?}")));
            }
            canon.push(e);
        }
        Ok(MaxCutProblem {
            n_vertices,
            edges: canon,
        })
    }

    /// Parse an edge-list file: one `i j` pair per line.
    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut edges = Vec::new();
        let mut max_v = 0;
        for line in text.lines() {
            let line = line.split("//").next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let a: usize = it
                .next()
                .unwrap()
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad edge line `{line}`")))?;
            let b: usize = it
                .next()
                .ok_or_else(|| Error::InvalidInput(format!("bad edge line `{line}`")))?
                .parse()
                .map_err(|_| Error::InvalidInput(format!("bad edge line `{line}`")))?;
            max_v = max_v.max(a).max(b);
            edges.push((a, b));
        }
        MaxCutProblem::new(max_v + 1, &edges)
    }

    /// The cost Hamiltonian `H_C = Σ_edges (1 - Z_j Z_k)/2`, stored as one
    /// -1/2 ZZ term per edge plus a single identity term carrying m/2.
    pub fn cost_hamiltonian(&self) -> Observable {
        let n = self.n_vertices;
        let mut terms = vec![PauliString::new(
            vec![Pauli::I; n],
            self.edges.len() as f64 / 2.0,
        )];
        for &(a, b) in &self.edges {
            let mut letters = vec![Pauli::I; n];
            letters[a] = Pauli::Z;
            letters[b] = Pauli::Z;
            terms.push(PauliString::new(letters, -0.5));
        }
        Observable::new(terms)
    }

    /// Number of edges cut by an assignment.
    pub fn cut_value(&self, bits: &[u8]) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| bits[a] != bits[b])
            .count()
    }
}

/// The p-layer QAOA circuit for a MaxCut problem. Parameter slots hold the
/// literal rotation angles: slot 2l is the cost-layer Rz angle (equal to
/// -γ_l) and slot 2l+1 the mixer Rx angle (equal to 2β_l).
pub fn qaoa_circuit(problem: &MaxCutProblem, p: usize) -> Circuit {
    let n = problem.n_vertices;
    let mut c = Circuit::new(n);
    for q in 0..n {
        c.gate(GateKind::H, &[q]);
    }
    for layer in 0..p {
        // e^{-iγ(1 - Z_j Z_k)/2} per edge is, up to global phase,
        // CX · Rz(-γ) on the target · CX
        for &(a, b) in &problem.edges {
            c.gate(GateKind::Cx, &[a, b]);
            c.rot(GateKind::Rz, b, Param::Slot(2 * layer));
            c.gate(GateKind::Cx, &[a, b]);
        }
        // e^{-iβ X} = Rx(2β)
        for q in 0..n {
            c.rot(GateKind::Rx, q, Param::Slot(2 * layer + 1));
        }
    }
    c
}

#[derive(Debug, Clone)]
pub struct QaoaResult {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// ⟨H_C⟩ at the optimum.
    pub expected_cut: f64,
    pub best_bitstring: Vec<u8>,
    pub best_cut: usize,
    pub iterations: usize,
}

/// Optimize a p-layer QAOA for MaxCut and sample candidate cuts from the
/// optimized state. A coarse deterministic grid over a shared (γ, β) pair
/// seeds the gradient descent.
pub fn qaoa_maxcut(
    problem: &MaxCutProblem,
    p: usize,
    config: &OptimizerConfig,
    seed: u64,
    shots: usize,
) -> Result<QaoaResult> {
    if p == 0 {
        return Err(Error::InvalidInput("QAOA needs at least one layer".into()));
    }
    let circuit = qaoa_circuit(problem, p);
    let mut neg_cost = problem.cost_hamiltonian();
    for t in &mut neg_cost.terms {
        t.coefficient = -t.coefficient;
    }
    let spec = LossSpec::new(circuit, neg_cost, Backend::Sv)?;

    // coarse grid for the starting point (loss = -<H_C>)
    let mut best_theta = vec![0.0; 2 * p];
    let mut best_loss = f64::INFINITY;
    for gi in 0..8 {
        for bi in 0..8 {
            let a = -((gi as f64 + 0.5) * PI / 8.0);
            let b = (bi as f64 + 0.5) * PI / 8.0;
            let theta: Vec<f64> = (0..p).flat_map(|_| [a, b]).collect();
            let l = loss(&spec, &theta)?;
            if l < best_loss {
                best_loss = l;
                best_theta = theta;
            }
        }
    }

    let trace = optimize(&spec, &best_theta, config)?;
    let theta = trace.final_params().to_vec();
    let expected_cut = -trace.final_loss();

    // sample the optimized state for candidate assignments
    let mut state = StateVector::zero(problem.n_vertices)?;
    state.apply_circuit(&spec.circuit, &theta)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = state.sample(shots.max(1), &mut rng);
    let mut best_bits = index_to_bits(samples[0], problem.n_vertices);
    let mut best_cut = problem.cut_value(&best_bits);
    for &s in &samples[1..] {
        let bits = index_to_bits(s, problem.n_vertices);
        let cut = problem.cut_value(&bits);
        if cut > best_cut {
            best_cut = cut;
            best_bits = bits;
        }
    }

    let gamma: Vec<f64> = (0..p).map(|l| -theta[2 * l]).collect();
    let beta: Vec<f64> = (0..p).map(|l| theta[2 * l + 1] / 2.0).collect();
    Ok(QaoaResult {
        gamma,
        beta,
        expected_cut,
        best_bitstring: best_bits,
        best_cut,
        iterations: trace.iterates.len() - 1,
    })
}

/// Layered ansatz of per-qubit rotations followed by an entangling block
/// along the given edges. Fresh parameter slots are allocated per (layer,
/// qubit, rotation), so the parameter count is `n * layers * rotations`.
#[derive(Debug, Clone)]
pub struct HardwareEfficientAnsatz {
    pub layers: usize,
    pub rotations: Vec<GateKind>,
    pub entangler_edges: Vec<(usize, usize)>,
}

impl HardwareEfficientAnsatz {
    /// Rotations default to [Ry, Rz]; the entangler is CX along the edges.
    pub fn line(n: usize, layers: usize) -> Self {
        HardwareEfficientAnsatz {
            layers,
            rotations: vec![GateKind::Ry, GateKind::Rz],
            entangler_edges: (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
        }
    }

    pub fn param_count(&self, n: usize) -> usize {
        n * self.layers * self.rotations.len()
    }

    pub fn circuit(&self, n: usize) -> Result<Circuit> {
        for kind in &self.rotations {
            if !kind.is_parametric() {
                return Err(Error::InvalidGate(format!(
                    "ansatz rotations must be parametric, found `{}`",
                    kind.name()
                )));
            }
        }
        let mut c = Circuit::new(n);
        let mut slot = 0;
        for _ in 0..self.layers {
            for q in 0..n {
                for kind in &self.rotations {
                    c.rot(kind.clone(), q, Param::Slot(slot));
                    slot += 1;
                }
            }
            for &(a, b) in &self.entangler_edges {
                c.gate(GateKind::Cx, &[a, b]);
            }
        }
        Ok(c)
    }
}
