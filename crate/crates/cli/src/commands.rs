use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rug::Float;
use serde::Serialize;

use qpc_core::analysis::{
    add_noise, crb as crb_report, crb_sweep, gamma_decomposition, lattice_map, nontrivial_start, period_candidates, r_curve,
    rescaled_sigmas, sda_errors, theorem1_check, Candidate, CandidateOptions, CrbReport, NoiseModel, SdaErrorCurve,
    Theorem1Report,
};
use qpc_core::intensity::{path_amplitude, read_csv_columns};
use qpc_core::numerics::{digits_to_bits, parse_real, to_decimal, PrecisionPolicy};
use qpc_core::oracle::{quadrature_amplitude, QuadratureSpec};
use qpc_core::setup::parse_config_unchecked;
use qpc_core::{parse_config, QpcError, Setup, Simulation};

use crate::manifest::{sha256_hex, RunManifest};
use crate::{AnalyzeArgs, CrbArgs, OracleArgs, SdaArgs, SimulateArgs, ValidateArgs};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path)
        .map_err(QpcError::from)
        .with_context(|| format!("reading {}", path.display()))
}

fn read_text(path: &Path) -> Result<(String, Vec<u8>)> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| QpcError::Parse(format!("{} is not UTF-8", path.display())))?;
    Ok((text, bytes))
}

fn load(path: &Path, digits: Option<u32>) -> Result<(Setup, Vec<u8>)> {
    let (text, bytes) = read_text(path)?;
    let setup = parse_config(&text, digits).with_context(|| format!("loading {}", path.display()))?;
    Ok((setup, bytes))
}

fn print_warnings(setup: &Setup) {
    for w in setup.geometry.overlap_warnings() {
        eprintln!(
            "warning: plane {}: slits {} and {} overlap at {:.3e}",
            w.plane,
            w.slit,
            w.slit + 1,
            w.overlap
        );
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn validate(args: &ValidateArgs, digits: Option<u32>) -> Result<u8> {
    let (text, _) = read_text(&args.config)?;
    let setup = parse_config_unchecked(&text, digits).with_context(|| format!("loading {}", args.config.display()))?;
    let mut violations = setup.geometry.violations();
    if let Err(e) = setup.experiment.validate() {
        violations.push(e.to_string());
    }
    if !violations.is_empty() {
        for v in &violations {
            println!("violation: {v}");
        }
        return Ok(1);
    }
    print_warnings(&setup);
    println!(
        "ok: {} planes, {} classical paths, {} digits",
        setup.geometry.n(),
        setup.geometry.path_count(),
        setup.experiment.precision.decimal_digits
    );
    Ok(0)
}

pub fn simulate(args: &SimulateArgs, digits: Option<u32>) -> Result<u8> {
    let (mut setup, bytes) = load(&args.config, digits)?;
    print_warnings(&setup);
    if let Some(k) = args.k_min {
        setup.experiment.k_min = k;
    }
    if let Some(k) = args.k_max {
        setup.experiment.k_max = k;
    }
    let order = args.exotic.unwrap_or(setup.experiment.exotic_order);
    let noise = match (args.noise_snr, args.noise) {
        (Some(snr), _) => Some(NoiseModel {
            snr_db: Some(snr),
            ..Default::default()
        }),
        (None, true) => Some(
            setup
                .experiment
                .noise
                .clone()
                .ok_or_else(|| QpcError::Invariant("configuration has no [noise] table".into()))?,
        ),
        (None, false) => None,
    };
    let seed = args.seed.unwrap_or(setup.experiment.rng_seed);

    let mut manifest = RunManifest::new("simulate", &args.out, setup.experiment.precision.decimal_digits)?;
    manifest.config_sha256 = Some(sha256_hex(&bytes));
    manifest.add_input(&args.config, &bytes);
    manifest.stage("load");
    let sim = Simulation::new(setup)?;
    manifest.stage("coupling");
    let mut samples = sim.screen_with_order(order)?;
    manifest.stage("intensity");
    if let Some(model) = &noise {
        samples = add_noise(&samples, model, seed)?;
        manifest.stage("noise");
    }
    manifest.write("intensity.csv", &samples.to_csv())?;
    manifest.finish()?;
    println!("wrote {} samples to {}", samples.len(), args.out.join("intensity.csv").display());
    Ok(0)
}

#[derive(Serialize)]
struct GammaSummary {
    m: u32,
    k_tilde: u32,
    /// Against the spectrum of the model intensity; zero up to rounding.
    residual_model: f64,
    /// Against the spectrum of the supplied samples.
    residual_observed: f64,
}

#[derive(Serialize)]
struct AnalyzeReport {
    m_max: u32,
    /// Peak prominence threshold relative to peak height. The existence of a
    /// solution is judged against this tunable value.
    prominence: f64,
    refine_window: f64,
    lattice_tol: f64,
    degenerate: bool,
    degenerate_sizes: Vec<u32>,
    candidates: Vec<Candidate>,
    lattice_error: Option<String>,
    gamma: Option<GammaSummary>,
    theorem1: Option<Theorem1Report>,
    crb: Option<CrbReport>,
}

fn contiguous_from_zero(ks: &[i64], need: usize) -> Result<()> {
    if ks.len() < need || ks.iter().take(need).enumerate().any(|(i, &k)| k != i as i64) {
        bail!(QpcError::Invariant(format!(
            "analysis needs samples k = 0..{} in order",
            need.saturating_sub(1)
        )));
    }
    Ok(())
}

pub fn analyze(args: &AnalyzeArgs, digits: Option<u32>) -> Result<u8> {
    let config = match &args.config {
        Some(p) => Some(load(p, digits)?),
        None => None,
    };
    let policy = match &config {
        Some((s, _)) => s.experiment.precision,
        None => PrecisionPolicy::new(digits.unwrap_or(PrecisionPolicy::default().decimal_digits), 2)?,
    };
    let prec = policy.bits();
    let (text, bytes) = read_text(&args.intensity)?;
    let (ks, cols) = read_csv_columns(&text, &["normalized", "rescaled"], prec)
        .with_context(|| format!("reading {}", args.intensity.display()))?;
    let (normalized, rescaled) = (&cols[0], &cols[1]);
    if args.m_max < 2 {
        bail!(QpcError::Invariant("m-max must be at least 2".into()));
    }
    contiguous_from_zero(&ks, args.m_max as usize)?;

    let mut manifest = RunManifest::new("analyze", &args.out, policy.decimal_digits)?;
    manifest.add_input(&args.intensity, &bytes);
    if let (Some((_, cb)), Some(p)) = (&config, &args.config) {
        manifest.config_sha256 = Some(sha256_hex(cb));
        manifest.add_input(p, cb);
    }
    manifest.stage("load");

    let curve = r_curve(rescaled, args.m_max)?;
    let degenerate_sizes: Vec<u32> = curve.iter().filter(|(_, r)| r.is_none()).map(|(m, _)| *m).collect();
    let valid: Vec<(u32, Float)> = curve.iter().filter_map(|(m, r)| r.clone().map(|r| (*m, r))).collect();
    let mut r_csv = String::from("M,R\n");
    for (m, r) in &curve {
        let _ = writeln!(r_csv, "{m},{}", r.as_ref().map(to_decimal).unwrap_or_default());
    }
    manifest.stage("ratio scan");

    let sim = match &config {
        Some((s, _)) => Some(Simulation::new(s.clone())?),
        None => None,
    };
    let b = sim.as_ref().map(|s| s.lattice_points());
    let opts = CandidateOptions {
        prominence: args.prominence,
        refine_window: args.refine_window,
        lattice_tol: args.lattice_tol,
    };
    let candidates = period_candidates(&valid, b.as_deref(), opts)?;
    if let Some(b) = &b {
        let eps = sda_errors(b, args.m_max)?;
        manifest.write("eps_curve.csv", &eps_csv(&eps))?;
    }
    manifest.stage("candidates");

    let mut report = AnalyzeReport {
        m_max: args.m_max,
        prominence: args.prominence,
        refine_window: args.refine_window,
        lattice_tol: args.lattice_tol,
        degenerate: valid.is_empty(),
        degenerate_sizes,
        candidates,
        lattice_error: None,
        gamma: None,
        theorem1: None,
        crb: None,
    };

    if let (Some(kt), Some(sim)) = (args.k_tilde, &sim) {
        match sim.period_model(kt, args.lattice_tol) {
            Err(f) => {
                report.lattice_error = Some(f.to_string());
                report.theorem1 = Some(theorem1_check(None, kt, Some(rescaled)));
            }
            Ok(model) => {
                let size = kt.max(2);
                if rescaled.len() >= size as usize {
                    let synthetic: Vec<Float> = (0..size as i64).map(|k| model.intensity(k)).collect();
                    let g_model = gamma_decomposition(&model, &synthetic, size)?;
                    let g_obs = gamma_decomposition(&model, rescaled, size)?;
                    report.gamma = Some(GammaSummary {
                        m: size,
                        k_tilde: kt,
                        residual_model: g_model.residual,
                        residual_observed: g_obs.residual,
                    });
                }
                report.theorem1 = Some(theorem1_check(Some(&model), kt, Some(rescaled)));
                if let Some(noise) = &sim.setup.experiment.noise {
                    let sigmas = noise.sigmas(normalized);
                    if sigmas.iter().all(|&s| s > 0.0) {
                        let st = rescaled_sigmas(&sim.coupling.a_last, sim.ts(), &ks, &sigmas);
                        report.crb = Some(crb_report(&model, &ks, &st, 0.0)?);
                    }
                }
            }
        }
        manifest.stage("hypothesis checks");
    }

    manifest.write("r_curve.csv", &r_csv)?;
    manifest.write("report.json", &json(&report)?)?;
    manifest.finish()?;
    if report.degenerate {
        println!("degenerate spectrum: no non-zero frequency content");
    }
    for c in &report.candidates {
        println!(
            "candidate M = {} (peak {}, R = {:.4}, lattice {})",
            c.m,
            c.peak,
            c.r,
            if c.lattice_ok { "ok" } else { "fails" }
        );
    }
    Ok(0)
}

fn eps_csv(c: &SdaErrorCurve) -> String {
    let mut s = String::from("M,eps_mean,eps_max,eps_min\n");
    for m in 1..=c.k_pre {
        let i = (m - 1) as usize;
        let _ = writeln!(
            s,
            "{m},{},{},{}",
            to_decimal(&c.eps_mean[i]),
            to_decimal(&c.eps_max[i]),
            to_decimal(&c.eps_min[i])
        );
    }
    s
}

#[derive(Serialize)]
struct SdaReport {
    k_pre: u32,
    points: usize,
    /// Smallest M for which some M b[n] can leave the interval around zero.
    nontrivial_start: u32,
    argmin_all: u32,
    argmin_nontrivial: u32,
    eps_mean_at_best: f64,
    eps_max_at_best: f64,
    epsilon_bound: Option<f64>,
    solution_exists: Option<bool>,
    lattice_ok: bool,
}

fn read_points(path: &Path, prec: u32) -> Result<(Vec<Float>, Vec<u8>)> {
    let (text, bytes) = read_text(path)?;
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_real(prec, t)?);
    }
    if out.is_empty() {
        bail!(QpcError::Parse(format!("{} holds no values", path.display())));
    }
    Ok((out, bytes))
}

pub fn sda(args: &SdaArgs, digits: Option<u32>) -> Result<u8> {
    let digits_used;
    let mut manifest;
    let b = if let Some(path) = &args.config {
        let (setup, bytes) = load(path, digits)?;
        digits_used = setup.experiment.precision.decimal_digits;
        manifest = RunManifest::new("sda", &args.out, digits_used)?;
        manifest.config_sha256 = Some(sha256_hex(&bytes));
        manifest.add_input(path, &bytes);
        Simulation::new(setup)?.lattice_points()
    } else {
        let path = args.b_file.as_ref().expect("clap requires one source");
        digits_used = digits.unwrap_or(PrecisionPolicy::default().decimal_digits);
        let (b, bytes) = read_points(path, digits_to_bits(digits_used))?;
        manifest = RunManifest::new("sda", &args.out, digits_used)?;
        manifest.add_input(path, &bytes);
        b
    };
    manifest.stage("lattice points");
    let curve = sda_errors(&b, args.k_pre)?;
    manifest.stage("error curves");
    let start = nontrivial_start(&b).min(args.k_pre);
    let best = curve.argmin(start, args.k_pre);
    let mean = curve.mean_at(best).to_f64();
    let report = SdaReport {
        k_pre: args.k_pre,
        points: b.len(),
        nontrivial_start: start,
        argmin_all: curve.argmin(1, args.k_pre),
        argmin_nontrivial: best,
        eps_mean_at_best: mean,
        eps_max_at_best: curve.max_at(best).to_f64(),
        epsilon_bound: args.epsilon_bound,
        solution_exists: args.epsilon_bound.map(|e| mean < e),
        lattice_ok: lattice_map(&b, best, qpc_core::analysis::DEFAULT_LATTICE_TOL).is_ok(),
    };
    manifest.write("eps_curve.csv", &eps_csv(&curve))?;
    manifest.write("sda.json", &json(&report)?)?;
    manifest.finish()?;
    println!("best M = {best}, mean error {mean:.3e}");
    Ok(0)
}

#[derive(Serialize)]
struct CrbTable {
    k_tilde: u32,
    bias_derivative: f64,
    snr_db: Vec<f64>,
    sigma: Vec<f64>,
    sample_counts: Vec<usize>,
    /// `crb[i][j]` for noise level `i` and `j + 1` samples.
    crb: Vec<Vec<f64>>,
}

fn crb_table(sim: &Simulation, args: &CrbArgs) -> Result<CrbTable> {
    let model = sim
        .period_model(args.k_tilde, args.lattice_tol)
        .map_err(|f| QpcError::Invariant(f.to_string()))?;
    let clean = sim.screen()?;
    let count = args.samples.unwrap_or(clean.len()).min(clean.len());
    let positions: Vec<i64> = (clean.k_min..).take(count).collect();
    let normalized = &clean.normalized[..count];
    let mut table = CrbTable {
        k_tilde: args.k_tilde,
        bias_derivative: args.bias_derivative,
        snr_db: args.snr.clone(),
        sigma: Vec::new(),
        sample_counts: (1..=count).collect(),
        crb: Vec::new(),
    };
    for &snr in &args.snr {
        let noise = NoiseModel {
            snr_db: Some(snr),
            ..Default::default()
        };
        let sigmas = noise.sigmas(normalized);
        table.sigma.push(sigmas.first().copied().unwrap_or(0.0));
        let st = rescaled_sigmas(&clean.a_last, sim.ts(), &positions, &sigmas);
        table.crb.push(crb_sweep(&model, &positions, &st, args.bias_derivative)?);
    }
    Ok(table)
}

pub fn crb(args: &CrbArgs, digits: Option<u32>) -> Result<u8> {
    let (setup, bytes) = load(&args.config, digits)?;
    let mut manifest = RunManifest::new("crb", &args.out, setup.experiment.precision.decimal_digits)?;
    manifest.config_sha256 = Some(sha256_hex(&bytes));
    manifest.add_input(&args.config, &bytes);
    let sim = Simulation::new(setup)?;
    manifest.stage("coupling");
    let table = crb_table(&sim, args)?;
    manifest.stage("bound");
    let mut csv = String::from("samples");
    for s in &table.snr_db {
        let _ = write!(csv, ",crb_snr_{s}");
    }
    csv.push('\n');
    for (j, n) in table.sample_counts.iter().enumerate() {
        let _ = write!(csv, "{n}");
        for row in &table.crb {
            let _ = write!(csv, ",{:e}", row[j]);
        }
        csv.push('\n');
    }
    manifest.write("crb.csv", &csv)?;
    manifest.write("crb.json", &json(&table)?)?;
    manifest.finish()?;
    for (s, row) in table.snr_db.iter().zip(&table.crb) {
        println!("SNR {s} dB: CRB with {} samples = {:.4e}", row.len(), row.last().copied().unwrap_or(f64::NAN));
    }
    Ok(0)
}

#[derive(Serialize)]
struct OraclePoint {
    path: u64,
    slits: Vec<i64>,
    x_meters: f64,
    closed_form: String,
    quadrature: String,
    relative_error: f64,
    quadrature_error_estimate: f64,
    converged: bool,
}

#[derive(Serialize)]
struct OracleReport {
    paths: usize,
    points_per_path: usize,
    max_relative_error: f64,
    points: Vec<OraclePoint>,
}

fn complex_text(z: &rug::Complex) -> String {
    let im = to_decimal(z.imag());
    let sign = if im.starts_with('-') { "" } else { "+" };
    format!("{}{sign}{im}i", to_decimal(z.real()))
}

pub fn oracle_check(args: &OracleArgs, digits: Option<u32>) -> Result<u8> {
    let (setup, bytes) = load(&args.config, digits)?;
    let mut manifest = RunManifest::new("oracle-check", &args.out, setup.experiment.precision.decimal_digits)?;
    manifest.config_sha256 = Some(sha256_hex(&bytes));
    manifest.add_input(&args.config, &bytes);
    let sim = Simulation::new(setup)?;
    manifest.stage("coupling");
    // Paths nearest the optical axis first, so a small --paths count covers
    // the dominant contributions.
    let mut order: Vec<usize> = (0..sim.paths.len()).collect();
    order.sort_by_key(|&i| (sim.paths[i].s.iter().map(|s| s.abs()).sum::<i64>(), i));
    let e = &sim.setup.experiment;
    let p = args.points.max(1) as i64;
    let span = e.k_max - e.k_min;
    let xs: Vec<Float> = (0..p)
        .map(|i| {
            let k = if p == 1 { e.k_min } else { e.k_min + span * i / (p - 1) };
            Float::with_val(sim.prec(), sim.ts() * k)
        })
        .collect();
    let spec = QuadratureSpec::default();
    let mut points = Vec::new();
    for &idx in order.iter().take(args.paths) {
        let traj = &sim.paths[idx];
        let q = quadrature_amplitude(&sim.setup.geometry, &sim.setup.constants, traj, &xs, &spec)?;
        for (v, x) in q.values.iter().zip(&xs) {
            let cf = path_amplitude(&sim.coupling, traj, x);
            points.push(OraclePoint {
                path: traj.n,
                slits: traj.s.clone(),
                x_meters: x.to_f64(),
                closed_form: complex_text(&cf),
                quadrature: complex_text(&v.to_complex(sim.prec())),
                relative_error: v.relative_error(&cf),
                quadrature_error_estimate: q.error_estimate,
                converged: q.converged,
            });
        }
    }
    manifest.stage("quadrature");
    let max = points.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    let report = OracleReport {
        paths: args.paths.min(sim.paths.len()),
        points_per_path: xs.len(),
        max_relative_error: max,
        points,
    };
    manifest.write("oracle.json", &json(&report)?)?;
    manifest.finish()?;
    println!("max relative error {max:.3e} over {} points", report.points.len());
    Ok(0)
}
