//! Subcommand implementations.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use nisqlab::benchmarks::{
    linear_xeb_fidelity, mirror_run, qv_run, rb_run, rqc_generate, xeb_run, RbConfig, XebConfig,
};
use nisqlab::circuit::{
    format_bits, parse_circuit, parse_observable, render_circuit, Circuit, CouplingGraph,
    Observable, PauliString,
};
use nisqlab::compile::{cnot_to_matrix, fuse_gates, matrix_to_cnot, route, FuseOptions, Layout};
use nisqlab::error::{Error, Result};
use nisqlab::mitigation::{
    cdr_apply, cdr_fit, mem_calibrate, mem_invert, pauli_twirl, pec_decompose, pec_estimate,
    qse_solve, symmetry_expand, vd_estimate, zne_exponential, zne_least_squares, zne_polyexp,
    zne_richardson, ResponseMatrix, TpnResponse,
};
use nisqlab::mps::MpsState;
use nisqlab::noise::{run_density, NoiseModel};
use nisqlab::peps::PepsState;
use nisqlab::sv::StateVector;
use nisqlab::vqa::{
    grad_adjoint, grad_fd2, grad_pshift, Backend, GradientMethod, LossSpec, OptimizerConfig,
};

use crate::noisefile::load_noise_model;
use crate::report::RunReport;
use crate::{Command, Format, Settings};

pub fn run(command: &Command, settings: &Settings) -> Result<()> {
    let start = Instant::now();
    let mut report = match command {
        Command::Simulate(args) => simulate(settings, args)?,
        Command::Benchmark(args) => benchmark(settings, args)?,
        Command::Mitigate(args) => mitigate(settings, args)?,
        Command::Compile(args) => compile(settings, args)?,
        Command::Gradcheck(args) => gradcheck(settings, args)?,
    };
    report.wall_ms = start.elapsed().as_millis();
    let rendered = match settings.format {
        Format::Json => report.to_json(),
        Format::Csv => report.to_csv()?,
    };
    match &settings.out {
        Some(path) => fs::write(path, rendered.as_bytes())?,
        None => println!("{rendered}"),
    }
    Ok(())
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn load_circuit(path: &Path) -> Result<Circuit> {
    parse_circuit(&read_to_string(path)?)
}

fn load_observable(path: &Path) -> Result<Observable> {
    parse_observable(&read_to_string(path)?)
}

fn load_noise(path: &Option<PathBuf>) -> Result<NoiseModel> {
    match path {
        Some(p) => load_noise_model(&read_to_string(p)?),
        None => Ok(NoiseModel::ideal()),
    }
}

fn parse_bits(s: &str) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(0u8),
            '1' => Ok(1u8),
            _ => Err(Error::InvalidInput(format!("invalid bit `{c}`"))),
        })
        .collect()
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidInput(format!("bad number `{t}`")))
        })
        .collect()
}

fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidInput(format!("bad integer `{t}`")))
        })
        .collect()
}

/// Parse "CxR" grid dimensions (columns x rows).
fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let mut it = s.split(['x', 'X']);
    let a = it
        .next()
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad grid `{s}`")))?;
    let b = it
        .next()
        .and_then(|t| t.trim().parse().ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad grid `{s}`")))?;
    Ok((a, b))
}

fn histogram(samples: &[usize], n: usize) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for &s in samples {
        *hist.entry(format_bits(s, n)).or_insert(0usize) += 1;
    }
    hist
}

fn complex_json(v: num_complex::Complex64) -> Value {
    json!({"re": v.re, "im": v.im})
}

// ---------------------------------------------------------------- simulate

#[derive(Args)]
pub struct SimulateArgs {
    /// Circuit file in the text grammar.
    #[arg(long)]
    pub circuit: PathBuf,

    /// Backend: sv, mps, peps or density.
    #[arg(long, default_value = "sv")]
    pub backend: String,

    /// Task: amplitude, probability, sample or expectation.
    #[arg(long)]
    pub task: String,

    /// Bitstring for amplitude/probability tasks, e.g. 010.
    #[arg(long)]
    pub bits: Option<String>,

    /// Shots for the sample task.
    #[arg(long, default_value_t = 1024)]
    pub shots: usize,

    /// Observable file for the expectation task.
    #[arg(long)]
    pub observable: Option<PathBuf>,

    /// Comma-separated values for the circuit's parameter slots.
    #[arg(long, default_value = "")]
    pub params: String,

    /// Noise model file (density backend).
    #[arg(long)]
    pub noise: Option<PathBuf>,

    /// MPS bond-dimension cap.
    #[arg(long, default_value_t = 64)]
    pub mps_cap: usize,

    /// MPS truncation threshold.
    #[arg(long, default_value_t = 0.0)]
    pub mps_eps: f64,

    /// PEPS grid as columns x rows, e.g. 3x2.
    #[arg(long)]
    pub grid: Option<String>,
}

fn simulate(settings: &Settings, args: &SimulateArgs) -> Result<RunReport> {
    let circuit = load_circuit(&args.circuit)?;
    let params = parse_f64_list(&args.params)?;
    let n = circuit.n_qubits;
    let mut report = RunReport::new(
        format!("simulate --backend {} --task {}", args.backend, args.task),
        settings.seed,
        Some(args.backend.clone()),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);

    let results = match (args.backend.as_str(), args.task.as_str()) {
        ("sv", "amplitude") => {
            let bits = parse_bits(args.bits.as_deref().ok_or_else(required_bits)?)?;
            let mut sv = StateVector::zero(n)?;
            sv.apply_circuit(&circuit, &params)?;
            json!({"amplitude": complex_json(sv.amplitude(&bits)?)})
        }
        ("sv", "sample") => {
            let mut sv = StateVector::zero(n)?;
            sv.apply_circuit(&circuit, &params)?;
            let samples = sv.sample(args.shots, &mut rng);
            json!({"shots": args.shots, "histogram": histogram(&samples, n)})
        }
        ("sv", "expectation") => {
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let mut sv = StateVector::zero(n)?;
            sv.apply_circuit(&circuit, &params)?;
            json!({"expectation": sv.expectation(&obs)?})
        }
        ("mps", "amplitude") => {
            let bits = parse_bits(args.bits.as_deref().ok_or_else(required_bits)?)?;
            let mut mps = MpsState::product_zero(n, args.mps_cap, args.mps_eps)?;
            let trunc = mps.apply_circuit(&circuit, &params)?;
            json!({
                "amplitude": complex_json(mps.amplitude(&bits)?),
                "discarded_weight": trunc.discarded_weight,
                "max_bond": trunc.max_bond,
            })
        }
        ("mps", "sample") => {
            let mut mps = MpsState::product_zero(n, args.mps_cap, args.mps_eps)?;
            let trunc = mps.apply_circuit(&circuit, &params)?;
            let samples = mps.sample(args.shots, &mut rng)?;
            json!({
                "shots": args.shots,
                "histogram": histogram(&samples, n),
                "discarded_weight": trunc.discarded_weight,
            })
        }
        ("mps", "expectation") => {
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let mut mps = MpsState::product_zero(n, args.mps_cap, args.mps_eps)?;
            let trunc = mps.apply_circuit(&circuit, &params)?;
            json!({
                "expectation": mps.expectation(&obs)?,
                "discarded_weight": trunc.discarded_weight,
            })
        }
        ("peps", "amplitude") => {
            let grid = args
                .grid
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("peps backend requires --grid CxR".into()))?;
            let (n_h, n_v) = parse_grid(grid)?;
            if n_h * n_v != n {
                return Err(Error::WidthMismatch {
                    expected: n,
                    actual: n_h * n_v,
                });
            }
            let bits = parse_bits(args.bits.as_deref().ok_or_else(required_bits)?)?;
            let bound = circuit.bind(&params)?;
            let mut peps = PepsState::zero_grid(n_h, n_v)?;
            peps.apply_circuit(&bound, &[])?;
            json!({
                "amplitude": complex_json(peps.amplitude(&bits)?),
                "max_bond": peps.max_bond(),
            })
        }
        ("density", "probability") => {
            let bits = parse_bits(args.bits.as_deref().ok_or_else(required_bits)?)?;
            let noise = load_noise(&args.noise)?;
            let rho = run_density(&circuit.bind(&params)?, &noise, &[])?;
            json!({"probability": rho.probability(&bits)?, "trace": rho.trace().re})
        }
        ("density", "sample") => {
            let noise = load_noise(&args.noise)?;
            let rho = run_density(&circuit.bind(&params)?, &noise, &[])?;
            let dist = rho.readout_distribution(&noise)?;
            let mut samples = Vec::with_capacity(args.shots);
            for _ in 0..args.shots {
                samples.push(sample_from(&dist, &mut rng));
            }
            json!({"shots": args.shots, "histogram": histogram(&samples, n)})
        }
        ("density", "expectation") => {
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let noise = load_noise(&args.noise)?;
            let rho = run_density(&circuit.bind(&params)?, &noise, &[])?;
            json!({"expectation": rho.expectation(&obs)?, "trace": rho.trace().re})
        }
        (backend, task) => {
            return Err(Error::InvalidInput(format!(
                "unsupported backend/task combination `{backend}`/`{task}`"
            )))
        }
    };
    report.results = results;
    Ok(report)
}

fn required_bits() -> Error {
    Error::InvalidInput("this task requires --bits".into())
}

fn required_obs() -> Error {
    Error::InvalidInput("this task requires --observable".into())
}

fn sample_from<R: rand::Rng>(dist: &[f64], rng: &mut R) -> usize {
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

// --------------------------------------------------------------- benchmark

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Protocol: rb, xeb, qv, mirror or rqc-xeb.
    #[arg(long)]
    pub protocol: String,

    /// Noise model file.
    #[arg(long)]
    pub noise: Option<PathBuf>,

    /// Qubit count for rb/xeb (1 or 2).
    #[arg(long, default_value_t = 1)]
    pub qubits: usize,

    /// Comma-separated sequence lengths for rb/xeb.
    #[arg(long, default_value = "2,4,8,16,32,64,128,256")]
    pub lengths: String,

    /// Sequences per length for rb/xeb.
    #[arg(long, default_value_t = 30)]
    pub sequences: usize,

    /// Shots per sequence/circuit; 0 uses exact probabilities.
    #[arg(long, default_value_t = 1000)]
    pub shots: usize,

    /// Maximum width for qv.
    #[arg(long, default_value_t = 4)]
    pub max_width: usize,

    /// Circuits per width for qv.
    #[arg(long, default_value_t = 100)]
    pub circuits: usize,

    /// Base circuit file for mirror.
    #[arg(long)]
    pub circuit: Option<PathBuf>,

    /// Randomizations for mirror.
    #[arg(long, default_value_t = 50)]
    pub randomizations: usize,

    /// RQC grid as columns x rows for rqc-xeb.
    #[arg(long, default_value = "3x3")]
    pub grid: String,

    /// RQC cycle count for rqc-xeb.
    #[arg(long, default_value_t = 8)]
    pub cycles: usize,

    /// Sample count for rqc-xeb fidelity estimation.
    #[arg(long, default_value_t = 100000)]
    pub samples: usize,
}

fn curve(points: &[(f64, f64)]) -> Value {
    Value::Array(
        points
            .iter()
            .map(|&(x, y)| json!({"x": x, "y": y}))
            .collect(),
    )
}

fn benchmark(settings: &Settings, args: &BenchmarkArgs) -> Result<RunReport> {
    let noise = load_noise(&args.noise)?;
    let mut report = RunReport::new(
        format!("benchmark --protocol {}", args.protocol),
        settings.seed,
        Some("density".into()),
    );
    report.results = match args.protocol.as_str() {
        "rb" => {
            let config = RbConfig {
                n_qubits: args.qubits,
                lengths: parse_usize_list(&args.lengths)?,
                sequences_per_length: args.sequences,
                shots: args.shots,
                seed: settings.seed,
            };
            let out = rb_run(&config, &noise, None)?;
            json!({
                "curve": curve(&out.survivals),
                "fit": {"a0": out.fit.a0, "p": out.fit.p, "b0": out.fit.b0,
                         "residual": out.fit.residual, "degenerate": out.fit.degenerate},
                "error_rate": out.error_rate,
            })
        }
        "xeb" => {
            let config = XebConfig {
                n_qubits: args.qubits,
                lengths: parse_usize_list(&args.lengths)?,
                sequences_per_length: args.sequences,
                shots: args.shots,
                seed: settings.seed,
            };
            let out = xeb_run(&config, &noise)?;
            let mut results = json!({
                "curve": curve(&out.alphas),
                "fit": {"a0": out.fit.a0, "p": out.fit.p, "b0": out.fit.b0,
                         "residual": out.fit.residual, "degenerate": out.fit.degenerate},
                "error_rate": out.error_rate,
                "pauli_error": out.pauli_error,
            });
            if let Some(two) = out.two_qubit {
                results["two_qubit"] = json!({
                    "single_qubit_p": two.single_qubit_p,
                    "cycle_p": two.cycle_p,
                    "gate_p": two.gate_p,
                });
            }
            results
        }
        "qv" => {
            let out = qv_run(
                args.max_width,
                &noise,
                settings.seed,
                args.circuits,
                args.shots,
            )?;
            json!({
                "per_width": out.per_width.iter().map(|w| json!({
                    "width": w.width,
                    "mean_heavy": w.mean_heavy,
                    "pass": w.pass,
                })).collect::<Vec<_>>(),
                "log2_qv": out.log2_qv,
                "quantum_volume": 1u64 << out.log2_qv,
            })
        }
        "mirror" => {
            let base = load_circuit(
                args.circuit
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput("mirror requires --circuit".into()))?,
            )?;
            let out = mirror_run(
                &base,
                &noise,
                settings.seed,
                args.randomizations,
                args.shots,
            )?;
            json!({
                "polarization": out.polarization,
                "randomizations": out.per_randomization.len(),
                "survivals": out.per_randomization.iter().map(|&(idx, s)| json!({
                    "ideal_bitstring": format_bits(idx, base.n_qubits),
                    "survival": s,
                })).collect::<Vec<_>>(),
            })
        }
        "rqc-xeb" => {
            let (cols, rows) = parse_grid(&args.grid)?;
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            let circuit = rqc_generate(rows, cols, args.cycles, &mut rng)?;
            let samples = if noise.is_trivial() {
                let mut sv = StateVector::zero(circuit.n_qubits)?;
                sv.apply_circuit(&circuit, &[])?;
                sv.sample(args.samples, &mut rng)
            } else {
                let rho = run_density(&circuit, &noise, &[])?;
                let dist = rho.readout_distribution(&noise)?;
                (0..args.samples)
                    .map(|_| sample_from(&dist, &mut rng))
                    .collect()
            };
            let (fidelity, std_err) = linear_xeb_fidelity(&circuit, &samples)?;
            json!({
                "grid": args.grid,
                "cycles": args.cycles,
                "samples": args.samples,
                "f_xeb": fidelity,
                "std_err": std_err,
            })
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown protocol `{other}`; expected rb, xeb, qv, mirror or rqc-xeb"
            )))
        }
    };
    Ok(report)
}

// ---------------------------------------------------------------- mitigate

#[derive(Args)]
pub struct MitigateArgs {
    /// Method: zne-richardson, zne-exp, zne-polyexp, zne-lsq, pec,
    /// mem-invert, mem-tpn, vd, symmetry, qse, cdr or twirl.
    #[arg(long)]
    pub method: String,

    /// Points file: one `coord... value` row per line (ZNE methods).
    #[arg(long)]
    pub points: Option<PathBuf>,

    /// Polynomial degree / fit order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,

    /// Circuit file (pec, vd, symmetry, qse, twirl).
    #[arg(long)]
    pub circuit: Option<PathBuf>,

    /// Noise model file.
    #[arg(long)]
    pub noise: Option<PathBuf>,

    /// Observable file.
    #[arg(long)]
    pub observable: Option<PathBuf>,

    /// Monte Carlo samples (pec).
    #[arg(long, default_value_t = 10000)]
    pub samples: usize,

    /// Response matrix file: 2^m rows of 2^m entries (mem-invert).
    #[arg(long)]
    pub lambda: Option<PathBuf>,

    /// Calibrate the response matrix on this many qubits from --noise.
    #[arg(long)]
    pub calibrate: Option<usize>,

    /// Noisy distribution to correct, comma separated (mem methods).
    #[arg(long)]
    pub noisy: Option<String>,

    /// Per-qubit TPN rates "p:q,p:q,..." (mem-tpn).
    #[arg(long)]
    pub rates: Option<String>,

    /// Number of state copies M (vd).
    #[arg(long, default_value_t = 2)]
    pub copies: usize,

    /// Pauli word of the symmetry (symmetry).
    #[arg(long)]
    pub symmetry: Option<String>,

    /// Symmetry sector, +1 or -1 (symmetry).
    #[arg(long, default_value_t = 1)]
    pub sector: i8,

    /// Comma-separated Pauli words of the expansion set (qse).
    #[arg(long)]
    pub expansion: Option<String>,

    /// Training pairs file: `noisy ideal` per line (cdr).
    #[arg(long)]
    pub pairs: Option<PathBuf>,

    /// Value to correct with the fitted CDR model.
    #[arg(long)]
    pub apply: Option<f64>,

    /// Output circuit file (twirl).
    #[arg(long)]
    pub out_circuit: Option<PathBuf>,
}

fn load_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = read_to_string(path)?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let line = line.split("//").next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("bad number `{t}`")))
            })
            .collect::<Result<_>>()?;
        if row.len() < 2 {
            return Err(Error::InvalidInput(
                "points file rows need at least `coord value`".into(),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("points file is empty".into()));
    }
    Ok(rows)
}

fn mitigate(settings: &Settings, args: &MitigateArgs) -> Result<RunReport> {
    let mut report = RunReport::new(
        format!("mitigate --method {}", args.method),
        settings.seed,
        None,
    );
    report.results = match args.method.as_str() {
        "zne-richardson" => {
            let rows = load_points(args.points.as_deref().ok_or_else(required_points)?)?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let fit = zne_richardson(&pts)?;
            json!({
                "estimate": fit.estimate,
                "gamma": fit.gamma,
                "variance_amplification": fit.variance_amplification,
                "curve": curve(&pts),
            })
        }
        "zne-exp" => {
            let rows = load_points(args.points.as_deref().ok_or_else(required_points)?)?;
            if rows.len() != 2 {
                return Err(Error::InvalidInput(
                    "zne-exp needs exactly two points".into(),
                ));
            }
            let estimate = zne_exponential((rows[0][0], rows[0][1]), (rows[1][0], rows[1][1]))?;
            json!({"estimate": estimate})
        }
        "zne-polyexp" => {
            let rows = load_points(args.points.as_deref().ok_or_else(required_points)?)?;
            let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            json!({"estimate": zne_polyexp(&pts, args.order)?, "degree": args.order})
        }
        "zne-lsq" => {
            let rows = load_points(args.points.as_deref().ok_or_else(required_points)?)?;
            let pts: Vec<(Vec<f64>, f64)> = rows
                .iter()
                .map(|r| (r[..r.len() - 1].to_vec(), r[r.len() - 1]))
                .collect();
            let fit = zne_least_squares(&pts, args.order)?;
            json!({
                "estimate": fit.estimate,
                "coefficients": fit.coefficients,
                "order": args.order,
            })
        }
        "pec" => {
            let circuit = load_circuit(args.circuit.as_deref().ok_or_else(required_circuit)?)?;
            let noise = load_noise(&args.noise)?;
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            // decompose the inverse of every attached Pauli channel
            let mut decomps = HashMap::new();
            for g in &circuit.ops {
                let kind = g.kind.name().to_string();
                if decomps.contains_key(&kind) {
                    continue;
                }
                if let Some(ch) = noise.channel_for(g) {
                    decomps.insert(kind, pec_decompose(ch)?);
                }
            }
            let bound = circuit.bind(&parse_f64_list("")?)?;
            let raw = run_density(&bound, &noise, &[])?.expectation(&obs)?;
            let est = pec_estimate(&bound, &noise, &decomps, &obs, args.samples, settings.seed)?;
            json!({
                "estimate": est.value,
                "std_err": est.std_err,
                "overhead_q": est.overhead_q,
                "sampling_overhead": est.overhead_q * est.overhead_q,
                "raw": raw,
                "samples": est.samples,
            })
        }
        "mem-invert" => {
            let lambda = match (&args.lambda, args.calibrate) {
                (Some(path), _) => {
                    let rows = load_points(path)?;
                    let dim = rows.len();
                    let mut m = ndarray::Array2::zeros((dim, dim));
                    for (r, row) in rows.iter().enumerate() {
                        if row.len() != dim {
                            return Err(Error::InvalidInput(
                                "response matrix file must be square".into(),
                            ));
                        }
                        for (c, v) in row.iter().enumerate() {
                            m[[r, c]] = *v;
                        }
                    }
                    ResponseMatrix::new(m)?
                }
                (None, Some(m)) => mem_calibrate(&load_noise(&args.noise)?, m)?,
                (None, None) => {
                    return Err(Error::InvalidInput(
                        "mem-invert needs --lambda FILE or --calibrate N with --noise".into(),
                    ))
                }
            };
            let noisy = parse_f64_list(
                args.noisy
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput("mem-invert requires --noisy".into()))?,
            )?;
            let out = mem_invert(&lambda, &noisy)?;
            json!({
                "probabilities": out.probabilities,
                "raw_solution": out.raw,
                "clipped": out.clipped,
                "condition_number": out.condition_number,
            })
        }
        "mem-tpn" => {
            let rates: Vec<(f64, f64)> = args
                .rates
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("mem-tpn requires --rates p:q,...".into()))?
                .split(',')
                .map(|pair| {
                    let mut it = pair.split(':');
                    let p = it.next().and_then(|t| t.trim().parse().ok());
                    let q = it.next().and_then(|t| t.trim().parse().ok());
                    match (p, q) {
                        (Some(p), Some(q)) => Ok((p, q)),
                        _ => Err(Error::InvalidInput(format!("bad rate pair `{pair}`"))),
                    }
                })
                .collect::<Result<_>>()?;
            let tpn = TpnResponse::new(&rates)?;
            let noisy = parse_f64_list(
                args.noisy
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput("mem-tpn requires --noisy".into()))?,
            )?;
            json!({"probabilities": tpn.invert(&noisy)?})
        }
        "vd" => {
            let circuit = load_circuit(args.circuit.as_deref().ok_or_else(required_circuit)?)?;
            let noise = load_noise(&args.noise)?;
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let rho = run_density(&circuit, &noise, &[])?;
            let raw = rho.expectation(&obs)?;
            json!({
                "estimate": vd_estimate(&rho, &obs, args.copies)?,
                "raw": raw,
                "copies": args.copies,
            })
        }
        "symmetry" => {
            let circuit = load_circuit(args.circuit.as_deref().ok_or_else(required_circuit)?)?;
            let noise = load_noise(&args.noise)?;
            let obs = load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let word = args
                .symmetry
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("symmetry requires --symmetry WORD".into()))?;
            let sym = PauliString::from_word(word)?;
            let rho = run_density(&circuit, &noise, &[])?;
            let raw = rho.expectation(&obs)?;
            let out = symmetry_expand(&rho, &obs, &sym, args.sector)?;
            json!({
                "estimate": out.value,
                "raw": raw,
                "sector_weight": out.sector_weight,
                "overhead": out.overhead,
            })
        }
        "qse" => {
            let circuit = load_circuit(args.circuit.as_deref().ok_or_else(required_circuit)?)?;
            let noise = load_noise(&args.noise)?;
            let hamiltonian =
                load_observable(args.observable.as_deref().ok_or_else(required_obs)?)?;
            let expansion: Vec<PauliString> = args
                .expansion
                .as_deref()
                .ok_or_else(|| Error::InvalidInput("qse requires --expansion words".into()))?
                .split(',')
                .map(|w| PauliString::from_word(w.trim()))
                .collect::<Result<_>>()?;
            let rho = run_density(&circuit, &noise, &[])?;
            let raw = rho.expectation(&hamiltonian)?;
            let sol = qse_solve(&rho, &hamiltonian, &expansion)?;
            json!({
                "energy": sol.energy,
                "raw": raw,
                "kept_rank": sol.kept_rank,
            })
        }
        "cdr" => {
            let rows = load_points(args.pairs.as_deref().ok_or_else(|| {
                Error::InvalidInput("cdr requires --pairs FILE of `noisy ideal` rows".into())
            })?)?;
            let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let model = cdr_fit(&pairs)?;
            let mut results = json!({
                "slope": model.slope,
                "intercept": model.intercept,
                "pairs": pairs.len(),
            });
            if let Some(x) = args.apply {
                results["corrected"] = json!(cdr_apply(&model, x));
            }
            results
        }
        "twirl" => {
            let circuit = load_circuit(args.circuit.as_deref().ok_or_else(required_circuit)?)?;
            let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
            let twirled = pauli_twirl(&circuit, &mut rng)?;
            let rendered = render_circuit(&twirled)?;
            if let Some(path) = &args.out_circuit {
                fs::write(path, rendered.as_bytes())?;
            }
            json!({
                "gates_before": circuit.gate_count(),
                "gates_after": twirled.gate_count(),
                "circuit": rendered,
            })
        }
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown mitigation method `{other}`"
            )))
        }
    };
    Ok(report)
}

fn required_points() -> Error {
    Error::InvalidInput("this method requires --points FILE".into())
}

fn required_circuit() -> Error {
    Error::InvalidInput("this method requires --circuit FILE".into())
}

// ----------------------------------------------------------------- compile

#[derive(Args)]
pub struct CompileArgs {
    /// Circuit file.
    #[arg(long)]
    pub circuit: PathBuf,

    /// Comma-separated pass pipeline: fuse, route, cnot-synth.
    #[arg(long, default_value = "fuse")]
    pub passes: String,

    /// Coupling-graph edge-list file (required by route).
    #[arg(long)]
    pub graph: Option<PathBuf>,

    /// Write the compiled circuit here.
    #[arg(long)]
    pub out_circuit: Option<PathBuf>,

    /// Absorb single-qubit gates into two-qubit blocks during fuse.
    #[arg(long, default_value_t = false)]
    pub absorb: bool,
}

fn compile(settings: &Settings, args: &CompileArgs) -> Result<RunReport> {
    let mut circuit = load_circuit(&args.circuit)?;
    let mut report = RunReport::new(
        format!("compile --passes {}", args.passes),
        settings.seed,
        None,
    );
    let mut passes_applied = Vec::new();
    let mut swaps = 0usize;
    let mut final_layout: Option<Vec<usize>> = None;

    for pass in args.passes.split(',').map(str::trim) {
        match pass {
            "fuse" => {
                let opts = FuseOptions {
                    absorb_into_two_qubit: args.absorb,
                    ..FuseOptions::default()
                };
                circuit = fuse_gates(&circuit, &opts)?;
            }
            "route" => {
                let graph_path = args
                    .graph
                    .as_deref()
                    .ok_or_else(|| Error::InvalidInput("route requires --graph FILE".into()))?;
                let graph = CouplingGraph::from_edge_list(&read_to_string(graph_path)?)?;
                let routed = route(&circuit, &graph, &Layout::identity(circuit.n_qubits))?;
                swaps += routed.swaps_inserted;
                final_layout = Some(routed.final_layout.as_slice().to_vec());
                circuit = routed.circuit;
            }
            "cnot-synth" => {
                let matrix = cnot_to_matrix(&circuit)?;
                circuit = matrix_to_cnot(&matrix)?;
            }
            other => {
                return Err(Error::InvalidInput(format!("unknown pass `{other}`")));
            }
        }
        passes_applied.push(pass.to_string());
    }

    let rendered = render_circuit(&circuit)?;
    if let Some(path) = &args.out_circuit {
        fs::write(path, rendered.as_bytes())?;
    }
    report.results = json!({
        "passes": passes_applied,
        "gate_count": circuit.gate_count(),
        "swaps_inserted": swaps,
        "final_layout": final_layout,
        "circuit": rendered,
    });
    Ok(report)
}

// --------------------------------------------------------------- gradcheck

#[derive(Args)]
pub struct GradcheckArgs {
    /// Number of random parametric circuits.
    #[arg(long, default_value_t = 20)]
    pub circuits: usize,

    /// Qubits per circuit.
    #[arg(long, default_value_t = 5)]
    pub qubits: usize,

    /// Parameter count per circuit.
    #[arg(long, default_value_t = 20)]
    pub params: usize,
}

fn gradcheck(settings: &Settings, args: &GradcheckArgs) -> Result<RunReport> {
    use nisqlab::circuit::{Gate, GateKind, Param, Pauli};
    use rand::Rng;

    let mut report = RunReport::new("gradcheck".into(), settings.seed, Some("sv".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut max_adjoint_vs_pshift = 0.0f64;
    let mut max_adjoint_vs_fd2 = 0.0f64;
    for _ in 0..args.circuits {
        let n = args.qubits.max(2);
        let mut circuit = Circuit::new(n);
        let mut slot = 0;
        while slot < args.params {
            for q in 0..n {
                if slot >= args.params {
                    break;
                }
                let kind = match rng.gen_range(0..3) {
                    0 => GateKind::Rx,
                    1 => GateKind::Ry,
                    _ => GateKind::Rz,
                };
                circuit
                    .push(Gate::rotation(kind, q, Param::Slot(slot)).unwrap())
                    .unwrap();
                slot += 1;
            }
            for q in 0..n - 1 {
                if rng.gen::<bool>() {
                    circuit
                        .push(Gate::new(GateKind::Cx, vec![q, q + 1]).unwrap())
                        .unwrap();
                }
            }
        }
        let letters: Vec<Pauli> = (0..n)
            .map(|_| match rng.gen_range(0..4) {
                0 => Pauli::I,
                1 => Pauli::X,
                2 => Pauli::Y,
                _ => Pauli::Z,
            })
            .collect();
        let obs = Observable::single(PauliString::new(letters, 1.0));
        let spec = LossSpec::new(circuit, obs, Backend::Sv)?;
        let theta: Vec<f64> = (0..args.params)
            .map(|_| rng.gen::<f64>() * 6.0 - 3.0)
            .collect();
        let ga = grad_adjoint(&spec, &theta)?;
        let gp = grad_pshift(&spec, &theta)?;
        let gf = grad_fd2(&spec, &theta, 1e-4)?;
        for j in 0..args.params {
            max_adjoint_vs_pshift = max_adjoint_vs_pshift.max((ga[j] - gp[j]).abs());
            max_adjoint_vs_fd2 = max_adjoint_vs_fd2.max((ga[j] - gf[j]).abs());
        }
    }
    let _ = OptimizerConfig {
        method: GradientMethod::Adjoint,
        ..OptimizerConfig::default()
    };
    report.results = json!({
        "circuits": args.circuits,
        "max_adjoint_vs_pshift": max_adjoint_vs_pshift,
        "max_adjoint_vs_fd2": max_adjoint_vs_fd2,
        "pshift_tolerance": 1e-10,
        "fd2_tolerance": 1e-6,
        "pass": max_adjoint_vs_pshift < 1e-10 && max_adjoint_vs_fd2 < 1e-6,
    });
    if max_adjoint_vs_pshift >= 1e-10 || max_adjoint_vs_fd2 >= 1e-6 {
        return Err(Error::NumericalConsistency(format!(
            "gradient cross-check failed: pshift dev {max_adjoint_vs_pshift:.3e}, fd2 dev {max_adjoint_vs_fd2:.3e}"
        )));
    }
    Ok(report)
}
