//! Command-line front end: argument parsing, strict JSON schemas, report
//! assembly, atomic output and the replay suite behind `verify`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use num_rational::BigRational;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::derivative::{self, EndClass, EndOptions, EndSpec, ManifoldClass};
use crate::lagrangian::{self, Attestation, LagrangianInput};
use crate::mapping_torus::{self, FiberAutomorphism, UnitValue};
use crate::profile::ProfileSpec;
use crate::symplectic::{self, int_matrix, validate_symplectic, IntMatrix, SymplecticMatrix};
use crate::tube;
use crate::zorich::{self, IetMode, IetScalar, IetSpec, LoopNorm, QuadSurd};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("schema error in {path}: at `{key}`: {message}")]
    Schema { path: String, key: String, message: String },
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Compute(String),
}

fn compute<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Compute(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Rational,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Twisted cohomology and spectral decisions for a mapping torus.
    MappingTorus,
    /// Closed-image decision for one degenerate end.
    EndVerdict,
    /// Spectral gap decision for a manifold from its ends.
    ManifoldVerdict,
    /// Lyapunov filtration from interval-exchange or synthetic loops.
    Lyapunov,
    /// Lagrangian intersection and reduced H¹ dimension.
    Lagrangian,
    /// Tube quasimode scan.
    Tube,
    /// Replay the worked examples.
    Verify,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::MappingTorus => "mapping-torus",
            Command::EndVerdict => "end-verdict",
            Command::ManifoldVerdict => "manifold-verdict",
            Command::Lyapunov => "lyapunov",
            Command::Lagrangian => "lagrangian",
            Command::Tube => "tube",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "l2ends", version, about = "Spectral gap decisions for ends of hyperbolic 3-manifolds")]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Report path; stdout when omitted. Tube scans ending in .csv are
    /// written as CSV.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long, global = true)]
    pub grid: Option<f64>,
    #[arg(long, global = true)]
    pub tmax: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Inconclusive,
    Failed,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Ok => EXIT_OK,
            Outcome::Inconclusive => EXIT_INCONCLUSIVE,
            Outcome::Failed => EXIT_ERROR,
        }
    }
}

pub struct RunResult {
    pub report: Value,
    pub outcome: Outcome,
    /// Alternative rendering written instead of the JSON report.
    pub csv: Option<String>,
}

fn read_input(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })
}

/// Strict parse with the failing key path.
pub fn parse_json<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::Schema { path: origin.to_string(), key, message: e.into_inner().to_string() }
    })
}

fn load<T: DeserializeOwned>(config: &RunConfig) -> Result<(T, Value), CliError> {
    let path = config.input.as_ref().ok_or_else(|| CliError::Usage(format!("{} needs --input", config.command.name())))?;
    let text = read_input(path)?;
    let origin = path.display().to_string();
    let echo: Value = parse_json(&text, &origin)?;
    Ok((parse_json(&text, &origin)?, echo))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Io { path: path.display().to_string(), message: e.to_string() };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn envelope(config: &RunConfig, inputs: Value, body: Value) -> Value {
    let mut report = json!({
        "tool": "l2ends",
        "version": env!("CARGO_PKG_VERSION"),
        "command": config.command.name(),
        "seed": config.seed,
        "inputs": inputs,
    });
    if let (Value::Object(r), Value::Object(b)) = (&mut report, body) {
        r.extend(b);
    }
    report
}

pub fn run(config: &RunConfig) -> Result<RunResult, CliError> {
    let (inputs, body, outcome, csv) = match config.command {
        Command::MappingTorus => {
            let (input, echo): (MappingTorusInput, Value) = load(config)?;
            let (body, outcome) = mapping_torus_report(&input)?;
            (echo, body, outcome, None)
        }
        Command::EndVerdict => {
            let (spec, echo): (ProfileSpec, Value) = load(config)?;
            let profile = spec.build().map_err(compute)?;
            let v = derivative::end_verdict(&profile, &end_options(config)).map_err(compute)?;
            let outcome = if v.verdict == EndClass::Inconclusive { Outcome::Inconclusive } else { Outcome::Ok };
            (echo, json!({ "verdict": v.verdict, "evidence": v }), outcome, None)
        }
        Command::ManifoldVerdict => {
            let (input, echo): (ManifoldInput, Value) = load(config)?;
            let ends = input
                .ends
                .iter()
                .map(|e| match e {
                    EndInput::GeometricallyFinite => Ok(EndSpec::GeometricallyFinite),
                    EndInput::Degenerate { profile } => profile.build().map(EndSpec::Degenerate).map_err(compute),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let r = derivative::manifold_verdict(&ends, input.inj_radius_positive, &end_options(config)).map_err(compute)?;
            let outcome = if r.verdict == ManifoldClass::Inconclusive { Outcome::Inconclusive } else { Outcome::Ok };
            (echo, json!({ "verdict": r.verdict, "evidence": r }), outcome, None)
        }
        Command::Lyapunov => {
            let (input, echo): (LyapunovInput, Value) = load(config)?;
            let (body, outcome) = lyapunov_report(config, &input)?;
            (echo, body, outcome, None)
        }
        Command::Lagrangian => {
            let (input, echo): (LagrangianInput, Value) = load(config)?;
            let r = lagrangian::run(&input).map_err(compute)?;
            (echo, json!({ "reduced_h1_dim": r.reduced_h1.dim, "evidence": r }), Outcome::Ok, None)
        }
        Command::Tube => {
            let (input, echo): (TubeInput, Value) = load(config)?;
            let density = config.grid.map_or(tube::DEFAULT_DENSITY, |g| g.round().max(4.0) as usize);
            let threshold = config.tol.or(input.threshold).unwrap_or(tube::RESIDUAL_THRESHOLD);
            let scan = tube::essential_spectrum_scan(&input.k, &input.l, density, threshold).map_err(compute)?;
            let mut csv = Vec::new();
            tube::write_scan_csv(&scan.rows, &mut csv).map_err(compute)?;
            let supported: Vec<bool> = scan.verdicts.iter().map(|v| v.supported).collect();
            let body = json!({ "supported": supported, "evidence": scan });
            (echo, body, Outcome::Ok, Some(String::from_utf8(csv).expect("csv is utf-8")))
        }
        Command::Verify => {
            let checks = verify_suite(config.seed);
            let all = checks.iter().all(|c| c.pass);
            let body = json!({ "all_pass": all, "checks": checks });
            (Value::Null, body, if all { Outcome::Ok } else { Outcome::Failed }, None)
        }
    };
    Ok(RunResult { report: envelope(config, inputs, body), outcome, csv })
}

fn end_options(config: &RunConfig) -> EndOptions {
    let d = EndOptions::default();
    EndOptions {
        t_max: config.tmax.unwrap_or(d.t_max),
        density: config.grid.unwrap_or(d.density),
        seed: config.seed,
        kernel_tol: config.tol.unwrap_or(d.kernel_tol),
        split: None,
    }
}

/// Parses arguments, runs, writes the report and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let config = match RunConfig::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&config) {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

pub fn execute(config: &RunConfig) -> Result<Outcome, CliError> {
    let result = run(config)?;
    if config.command == Command::Verify {
        if let Some(checks) = result.report["checks"].as_array() {
            for c in checks {
                let status = if c["pass"].as_bool() == Some(true) { "PASS" } else { "FAIL" };
                eprintln!("{status} {} {}", c["id"].as_str().unwrap_or(""), c["name"].as_str().unwrap_or(""));
            }
        }
    }
    let json_text = serde_json::to_string_pretty(&result.report).expect("reports serialize") + "\n";
    match &config.output {
        Some(path) => {
            let as_csv = path.extension().is_some_and(|e| e == "csv");
            let bytes = match (&result.csv, as_csv) {
                (Some(csv), true) => csv.as_bytes(),
                _ => json_text.as_bytes(),
            };
            write_atomic(path, bytes)?;
        }
        None => print!("{json_text}"),
    }
    Ok(result.outcome)
}

// ---- mapping torus ----

#[derive(Debug, Clone, Deserialize)]
#[serde(transparent)]
pub struct BigMat(#[serde(with = "crate::json::big_matrix")] pub IntMatrix);

/// A bare 2g×2g surface monodromy, or an object.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MappingTorusInput {
    Bare(BigMat),
    Full(MappingTorusSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MappingTorusSpec {
    /// φ₁* on H¹ of a closed surface.
    #[serde(default)]
    pub monodromy: Option<BigMat>,
    /// Full fiber data; overrides `monodromy`.
    #[serde(default)]
    pub fiber: Option<FiberAutomorphism>,
    #[serde(default = "one")]
    pub degree: usize,
    #[serde(default)]
    pub lambda: Option<UnitValue>,
}

fn one() -> usize {
    1
}

fn mapping_torus_report(input: &MappingTorusInput) -> Result<(Value, Outcome), CliError> {
    let spec = match input {
        MappingTorusInput::Bare(m) => {
            MappingTorusSpec { monodromy: Some(m.clone()), fiber: None, degree: 1, lambda: None }
        }
        MappingTorusInput::Full(s) => s.clone(),
    };
    let (fiber, cert) = match (&spec.fiber, &spec.monodromy) {
        (Some(f), _) => (f.clone(), None),
        (None, Some(m)) => {
            let s = validate_symplectic(m.0.clone()).map_err(compute)?;
            let v = symplectic::has_unit_circle_eigenvalue(&s);
            (FiberAutomorphism::surface(&s), Some(v.certificate))
        }
        (None, None) => {
            return Err(CliError::Schema {
                path: "input".into(),
                key: "monodromy".into(),
                message: "either `monodromy` or `fiber` is required".into(),
            })
        }
    };
    let p = spec.degree;
    let unreduced = mapping_torus::unreduced_conditions(&fiber, p).map_err(compute)?;
    let reduced = mapping_torus::reduced_l2_vanishes(&fiber, p).map_err(compute)?;
    let twisted = match &spec.lambda {
        Some(l) => Some(mapping_torus::wang_dims(&fiber, p, l).map_err(compute)?),
        None => None,
    };
    let body = json!({
        "degree": p,
        "zero_in_spectrum": unreduced.kernel_condition,
        "reduced_l2_vanishes": reduced.vanishes,
        "evidence": {
            "certificate": cert,
            "unreduced": unreduced,
            "exceptional_lambdas": reduced.exceptional_lambdas,
            "twisted_dims": twisted,
        }
    });
    Ok((body, Outcome::Ok))
}

// ---- manifold ----

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "end", rename_all = "snake_case", deny_unknown_fields)]
pub enum EndInput {
    GeometricallyFinite,
    Degenerate { profile: ProfileSpec },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldInput {
    pub ends: Vec<EndInput>,
    #[serde(default = "yes")]
    pub inj_radius_positive: bool,
}

fn yes() -> bool {
    true
}

// ---- lyapunov ----

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum LyapunovInput {
    /// Orbit of an exchange; start and transversal are fractions of λ₁.
    Exchange {
        iet: IetSpec,
        #[serde(default)]
        start: Option<Value>,
        #[serde(default)]
        interval: Option<[Value; 2]>,
        returns: usize,
        #[serde(default)]
        cap: Option<u64>,
        genus: usize,
        #[serde(default)]
        loops_csv: Option<PathBuf>,
    },
    /// The golden rotation in exact quadratic arithmetic.
    Golden { returns: usize },
    /// h_n = Mⁿh₀ for a pseudo-Anosov action M, compared with its spectrum.
    Monodromy { monodromy: SymplecticMatrix, iterations: usize },
}

fn fraction(v: &Option<Value>, default: (i64, i64), key: &str) -> Result<BigRational, CliError> {
    match v {
        None => Ok(BigRational::new(BigInt::from(default.0), BigInt::from(default.1))),
        Some(v) => zorich::parse_rational(v).ok_or_else(|| CliError::Schema {
            path: "input".into(),
            key: key.into(),
            message: format!("{v} is not a rational number"),
        }),
    }
}

fn lyapunov_report(config: &RunConfig, input: &LyapunovInput) -> Result<(Value, Outcome), CliError> {
    let tol = config.tol.unwrap_or(0.05);
    match input {
        LyapunovInput::Exchange { iet, start, interval, returns, cap, genus, loops_csv } => {
            let mut spec = iet.clone();
            if let Some(mode) = config.mode {
                spec.mode = match mode {
                    ModeArg::Rational => IetMode::Rational,
                    ModeArg::Float => IetMode::Float,
                };
            }
            let any = spec.build().map_err(compute)?;
            let lo = fraction(&interval.as_ref().map(|i| i[0].clone()), (0, 1), "interval[0]")?;
            let hi = fraction(&interval.as_ref().map(|i| i[1].clone()), (1, 1), "interval[1]")?;
            let p = match start {
                Some(_) => fraction(start, (0, 1), "start")?,
                None => lo.clone(),
            };
            let loops = any.return_loops_scaled(&p, &lo, &hi, *returns, cap.unwrap_or(100_000_000)).map_err(compute)?;
            if let Some(path) = loops_csv {
                let mut buf = Vec::new();
                zorich::write_loops_csv(&loops, &mut buf).map_err(compute)?;
                write_atomic(path, &buf)?;
            }
            filtration_body(&loops, tol, *genus)
        }
        LyapunovInput::Golden { returns } => {
            let loops = golden_loops(*returns).map_err(compute)?;
            filtration_body(&loops, tol, 1)
        }
        LyapunovInput::Monodromy { monodromy, iterations } => {
            let r = zorich::pa_cross_check(monodromy, *iterations, config.seed).map_err(compute)?;
            let genus = monodromy.genus();
            let gap = zorich::gap_decision(&r.filtration, genus, None).map_err(compute)?;
            let ok = r.exponents_match && r.dims_match;
            let body = json!({
                "exponents": r.recovered_exponents,
                "stratum_dims": r.recovered_dims,
                "gap_decision": gap,
                "cross_check_pass": ok,
                "evidence": r,
            });
            Ok((body, Outcome::Ok))
        }
    }
}

/// Returns of the golden rotation from 0 to its first interval.
pub fn golden_loops(returns: usize) -> Result<Vec<zorich::ReturnLoopRecord>, zorich::ZorichError> {
    let iet = zorich::golden_rotation();
    let lo = QuadSurd::origin();
    let hi = iet.lengths()[0].clone();
    zorich::return_loops(&iet, &lo, (&lo, &hi), returns, 100_000_000)
}

fn filtration_body(loops: &[zorich::ReturnLoopRecord], tol: f64, genus: usize) -> Result<(Value, Outcome), CliError> {
    match zorich::filtration(loops, tol, LoopNorm::L2) {
        Ok(f) => {
            let gap = zorich::gap_decision(&f, genus, None).map_err(compute)?;
            let dims: Vec<usize> = f.strata.iter().map(|s| s.dim).collect();
            let exps: Vec<f64> = f.strata.iter().map(|s| s.exponent).collect();
            let body = json!({
                "exponents": exps,
                "stratum_dims": dims,
                "gap_decision": gap,
                "evidence": { "filtration": f, "loops": loops.len() },
            });
            Ok((body, Outcome::Ok))
        }
        Err(zorich::ZorichError::UnresolvedStrata(why)) => {
            Ok((json!({ "gap_decision": Value::Null, "evidence": { "unresolved": why } }), Outcome::Inconclusive))
        }
        Err(e) => Err(compute(e)),
    }
}

// ---- tube ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeInput {
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    #[serde(default)]
    pub threshold: Option<f64>,
}

// ---- verify ----

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub id: &'static str,
    pub name: &'static str,
    pub pass: bool,
    pub seconds: f64,
    pub detail: Value,
}

fn timed(id: &'static str, name: &'static str, f: impl FnOnce() -> (bool, Value)) -> Check {
    let t = Instant::now();
    let (pass, detail) = f();
    Check { id, name, pass, seconds: t.elapsed().as_secs_f64(), detail }
}

fn sm(rows: &[&[i64]]) -> SymplecticMatrix {
    validate_symplectic(int_matrix(rows)).expect("valid fixture")
}

pub fn cat_map() -> SymplecticMatrix {
    sm(&[&[2, 1], &[1, 1]])
}

/// Exact unit-circle decisions on fixed matrices and agreement with float
/// moduli on random generator words.
pub fn check_unit_circle(seed: u64, words: usize) -> (bool, Value) {
    let fixed = [
        ("cat", cat_map(), false),
        ("rotation", sm(&[&[0, -1], &[1, 0]]), true),
        ("identity", SymplecticMatrix::identity(1), true),
        ("shear", sm(&[&[1, 1], &[0, 1]]), true),
    ];
    let fixed_ok: Vec<(&str, bool)> =
        fixed.iter().map(|(n, m, want)| (*n, symplectic::has_unit_circle_eigenvalue(m).verdict == *want)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disagreements = 0;
    for i in 0..words {
        let g = 1 + i % 2;
        let m = symplectic::random_word(g, 8, &mut rng);
        if symplectic::has_unit_circle_eigenvalue(&m).verdict != symplectic::numeric_unit_predicate(&m, 1e-9) {
            disagreements += 1;
        }
    }
    let pass = fixed_ok.iter().all(|x| x.1) && disagreements == 0;
    (pass, json!({ "fixed": fixed_ok, "random_words": words, "disagreements": disagreements }))
}

pub fn check_wang() -> (bool, Value) {
    let one = UnitValue::Float { re: 1.0, im: 0.0 };
    let mut ok = true;
    let mut dims = Vec::new();
    for g in 1..=3 {
        let phi = FiberAutomorphism::surface(&SymplecticMatrix::identity(g));
        let d = mapping_torus::wang_dims(&phi, 1, &one).map(|d| d.h_dim).unwrap_or(usize::MAX);
        ok &= d == 2 * g + 1;
        dims.push(d);
    }
    let cat = FiberAutomorphism::surface(&cat_map());
    let exceptional = mapping_torus::reduced_l2_vanishes(&cat, 1).map(|r| r.exceptional_lambdas).unwrap_or_default();
    let set_ok = exceptional.len() == 1
        && (exceptional[0].approx_value() - num_complex::Complex64::new(1.0, 0.0)).norm() < 1e-12
        && exceptional[0].dims.h_dim == 1;
    let zero = mapping_torus::zero_in_spectrum_unreduced(&cat, 1).unwrap_or(true);
    ok &= set_ok && !zero;
    (ok, json!({ "identity_h1_dims": dims, "cat_exceptional_set_ok": set_ok, "cat_zero_in_spectrum": zero }))
}

pub fn check_product_pairs() -> (bool, Value) {
    let mut rows = Vec::new();
    let mut ok = true;
    for g in [2usize, 3] {
        let row = lagrangian::product_pair(&lagrangian::hyperbolic_monodromy(g)).and_then(|p| {
            let zero = nalgebra::DMatrix::zeros(1, 1);
            let c = lagrangian::reduced_h1_dim(&zero, &p.l1, &p.l2_cyclic, &Attestation::Caller)?;
            let d = lagrangian::reduced_h1_dim(&zero, &p.l1, &p.l2_double, &Attestation::Caller)?;
            Ok((c.dim, d.dim))
        });
        match row {
            Ok((c, d)) => {
                ok &= c == 0 && d == g;
                rows.push(json!({ "genus": g, "cyclic_cover": c, "double": d }));
            }
            Err(e) => {
                ok = false;
                rows.push(json!({ "genus": g, "error": e.to_string() }));
            }
        }
    }
    (ok, json!(rows))
}

pub fn check_filtrations(seed: u64) -> (bool, Value) {
    let golden = golden_loops(10_000)
        .and_then(|loops| zorich::filtration(&loops, 0.05, LoopNorm::L2));
    let (golden_ok, golden_detail) = match golden {
        Ok(f) => {
            let exps: Vec<f64> = f.strata.iter().map(|s| s.exponent).collect();
            let ok = exps.len() == 2 && (exps[0] + 1.0).abs() <= 0.1 && (exps[1] - 1.0).abs() <= 0.1 && f.dim_f0 == 1;
            (ok, json!({ "exponents": exps, "dim_f0": f.dim_f0, "genus": 1 }))
        }
        Err(e) => (false, json!({ "error": e.to_string() })),
    };
    let cases = [
        ("cat", cat_map()),
        ("blockdiag", SymplecticMatrix::direct_sum(&[cat_map(), sm(&[&[3, 1], &[2, 1]])])),
    ];
    let mut ok = golden_ok;
    let mut pa = Vec::new();
    for (name, m) in cases {
        match zorich::pa_cross_check(&m, 400, seed) {
            Ok(r) => {
                ok &= r.exponents_match && r.dims_match;
                pa.push(json!({
                    "case": name,
                    "expected": r.expected_exponents,
                    "recovered": r.recovered_exponents,
                    "max_relative_error": r.max_error,
                    "dims": r.recovered_dims,
                    "dims_match": r.dims_match,
                }));
            }
            Err(e) => {
                ok = false;
                pa.push(json!({ "case": name, "error": e.to_string() }));
            }
        }
    }
    (ok, json!({ "golden": golden_detail, "pseudo_anosov": pa }))
}

/// Monotone trends and terminal values along l ∈ {1e−4, 1e−6, 1e−8}, k = 1,
/// plus stability under doubling the grid.
pub fn check_tube() -> (bool, Value) {
    let ls = [1e-4, 1e-6, 1e-8];
    let bump = tube::Bump::standard();
    let run = |density: usize| -> Result<Vec<tube::Quasimode>, tube::TubeError> {
        ls.iter().map(|&l| tube::quasimode(&tube::TubeConfig::new(l, 1.0)?.with_density(density), &bump)).collect()
    };
    let (coarse, fine) = match (run(tube::DEFAULT_DENSITY), run(2 * tube::DEFAULT_DENSITY)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return (false, json!({ "error": e.to_string() })),
    };
    let c: Vec<f64> = coarse.iter().map(|q| q.c_abs).collect();
    let n: Vec<f64> = coarse.iter().map(|q| (q.norm - 1.0).abs()).collect();
    let r: Vec<f64> = coarse.iter().map(|q| q.residual).collect();
    let dec = |v: &[f64]| v.windows(2).all(|w| w[1] < w[0]);
    let stability = coarse.iter().zip(&fine).map(|(a, b)| (a.residual - b.residual).abs() / b.residual).fold(0.0, f64::max);
    let pass =
        dec(&c) && dec(&n) && dec(&r) && c[2] < 0.05 && n[2] < 0.05 && r[2] < 0.1 && stability < 0.05;
    (pass, json!({ "l": ls, "c_abs": c, "norm_defect": n, "residual": r, "refinement_change": stability }))
}

pub fn verify_suite(seed: u64) -> Vec<Check> {
    vec![
        timed("1", "exact unit-circle decisions", || check_unit_circle(seed, 1000)),
        timed("2", "mapping torus twisted cohomology", check_wang),
        timed("6", "reduced H1 of the product examples", check_product_pairs),
        timed("7", "Lyapunov filtrations", || check_filtrations(seed)),
        timed("8", "tube quasimodes", check_tube),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(args: &[&str]) -> RunConfig {
        RunConfig::try_parse_from(std::iter::once("l2ends").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_parse() {
        let c = config(&["end-verdict", "--input", "p.json", "--tmax", "20", "--grid", "5", "--seed", "7"]);
        assert_eq!(c.command, Command::EndVerdict);
        assert_eq!((c.tmax, c.grid, c.seed), (Some(20.0), Some(5.0), 7));
        let c = config(&["lyapunov", "--mode", "float"]);
        assert_eq!(c.mode, Some(ModeArg::Float));
        assert!(RunConfig::try_parse_from(["l2ends", "frobnicate"]).is_err());
    }

    #[test]
    fn schema_errors_name_the_key() {
        let e = parse_json::<ProfileSpec>(r#"{"kind":"constant","gram":[[1]],"bogus":1}"#, "p.json").unwrap_err();
        assert!(matches!(e, CliError::Schema { .. }), "{e}");
        let e = parse_json::<ManifoldInput>(r#"{"ends":[{"end":"degenerate","profile":{"kind":"constant","gram":"x"}}]}"#, "m.json")
            .unwrap_err();
        match e {
            CliError::Schema { key, path, .. } => {
                assert_eq!(path, "m.json");
                assert!(key.contains("ends"), "{key}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn mapping_torus_bare_and_full() {
        let bare: MappingTorusInput = parse_json("[[2,1],[1,1]]", "x").unwrap();
        let (body, _) = mapping_torus_report(&bare).unwrap();
        assert_eq!(body["zero_in_spectrum"], json!(false));
        let full: MappingTorusInput =
            parse_json(r#"{"monodromy":[[1,0],[0,1]],"lambda":{"re":1.0,"im":0.0}}"#, "x").unwrap();
        let (body, _) = mapping_torus_report(&full).unwrap();
        assert_eq!(body["zero_in_spectrum"], json!(true));
        assert_eq!(body["evidence"]["twisted_dims"]["h_dim"], json!(3));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        assert!(matches!(write_atomic(&dir.path().join("missing/r.json"), b"x"), Err(CliError::Io { .. })));
    }

    #[test]
    fn quick_checks_pass() {
        assert!(check_unit_circle(0, 50).0);
        assert!(check_wang().0);
        assert!(check_product_pairs().0);
    }
}
