//! Classical trajectories, per-path amplitudes and detector intensity samples.

use std::fmt::Write as _;

use rayon::prelude::*;
use rug::{Complex, Float};

use crate::error::{QpcError, Result};
use crate::numerics::{compensated_complex_sum, pi, real_sum, to_decimal};
use crate::propagator::{quadratic_form, CouplingModel};
use crate::setup::SetupGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySelector {
    pub n: u64,
    /// Slit labels `s_{n,j}` in `-S_j..=S_j`.
    pub s: Vec<i64>,
    pub x: Vec<Float>,
}

impl TrajectorySelector {
    /// Lattice point `x_n T_s / (2 pi)`.
    pub fn x_scaled(&self, ts: &Float) -> Vec<Float> {
        let prec = ts.prec();
        let scale = Float::with_val(prec, ts / (pi(prec) * 2u32));
        self.x.iter().map(|v| Float::with_val(prec, v * &scale)).collect()
    }
}

pub fn dot(a: &[Float], b: &[Float], prec: u32) -> Float {
    let terms: Vec<Float> = a.iter().zip(b).map(|(x, y)| Float::with_val(prec, x * y)).collect();
    real_sum(&terms, prec)
}

/// Decodes path index `n` with plane 1 as the most significant digit.
pub fn decode_path(geom: &SetupGeometry, n: u64) -> TrajectorySelector {
    let counts = geom.slit_counts();
    let mut digits = vec![0usize; counts.len()];
    let mut rest = n;
    for (j, &c) in counts.iter().enumerate().rev() {
        digits[j] = (rest % c as u64) as usize;
        rest /= c as u64;
    }
    let s = digits
        .iter()
        .zip(&geom.planes)
        .map(|(&d, p)| d as i64 - p.half_count() as i64)
        .collect();
    let x = digits
        .iter()
        .zip(&geom.planes)
        .map(|(&d, p)| p.centers[d].clone())
        .collect();
    TrajectorySelector { n, s, x }
}

pub fn enumerate_paths(geom: &SetupGeometry) -> impl Iterator<Item = TrajectorySelector> + '_ {
    let total = geom.path_count() as u64;
    (0..total).map(move |n| decode_path(geom, n))
}

/// Path-dependent factors of one classical amplitude.
#[derive(Debug, Clone)]
pub struct PathTerm {
    /// `chi_0 prod sqrt(xi_j) exp(x^T H x)`.
    pub base: Complex,
    /// `(c + i d) . x`.
    pub lin: Complex,
}

pub fn path_term(coupling: &CouplingModel, traj: &TrajectorySelector) -> PathTerm {
    let prec = coupling.prec;
    let q = quadratic_form(&coupling.h, &traj.x);
    let base = Complex::with_val(prec, q.exp_ref()) * &coupling.prefactor;
    let lin = Complex::with_val(
        prec,
        (dot(&coupling.c_vec, &traj.x, prec), dot(&coupling.d_vec, &traj.x, prec)),
    );
    PathTerm { base, lin }
}

fn envelope_exponent(coupling: &CouplingModel, x: &Float) -> Complex {
    let prec = coupling.prec;
    let x2 = Float::with_val(prec, x.square_ref());
    Complex::with_val(prec, (Float::with_val(prec, &coupling.a_last * &x2), Float::with_val(prec, &coupling.b_last * &x2)))
}

fn term_at(term: &PathTerm, envelope: &Complex, x: &Float, prec: u32) -> Complex {
    let e = Complex::with_val(prec, &term.lin * x) + envelope;
    Complex::with_val(prec, e.exp_ref()) * &term.base
}

/// `Psi_{n,N}(x)` for one classical trajectory.
pub fn path_amplitude(coupling: &CouplingModel, traj: &TrajectorySelector, x: &Float) -> Complex {
    let prec = coupling.prec;
    term_at(&path_term(coupling, traj), &envelope_exponent(coupling, x), x, prec)
}

pub fn sample_positions(k_min: i64, k_max: i64, ts: &Float) -> Vec<(i64, Float)> {
    (k_min..=k_max).map(|k| (k, Float::with_val(ts.prec(), ts * k))).collect()
}

/// `sum_n Psi_{n,N}(k T_s)` for every sample, each sum exactly rounded.
pub fn amplitude_sums(coupling: &CouplingModel, paths: &[TrajectorySelector], positions: &[(i64, Float)]) -> Vec<Complex> {
    let prec = coupling.prec;
    let terms: Vec<PathTerm> = paths.par_iter().map(|t| path_term(coupling, t)).collect();
    positions
        .par_iter()
        .map(|(_, x)| {
            let env = envelope_exponent(coupling, x);
            let psi: Vec<Complex> = terms.iter().map(|t| term_at(t, &env, x, prec)).collect();
            compensated_complex_sum(&psi, prec)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScreenSamples {
    pub k_min: i64,
    pub k_max: i64,
    pub sampling_interval: Float,
    pub raw: Vec<Float>,
    pub normalized: Vec<Float>,
    pub rescaled: Vec<Float>,
    pub lambda: Float,
    pub a_last: Float,
    pub exotic_order: Option<u32>,
}

impl ScreenSamples {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn index_of(&self, k: i64) -> Option<usize> {
        (k >= self.k_min && k <= self.k_max).then(|| (k - self.k_min) as usize)
    }

    pub fn rescaled_at(&self, k: i64) -> Option<&Float> {
        self.index_of(k).map(|i| &self.rescaled[i])
    }

    /// `Ĩ[k]` for `k = 0..count`, requiring those samples to be present.
    pub fn rescaled_from_zero(&self, count: usize) -> Result<Vec<Float>> {
        (0..count as i64)
            .map(|k| {
                self.rescaled_at(k).cloned().ok_or_else(|| {
                    QpcError::Invariant(format!("sample k = {k} is outside [{}, {}]", self.k_min, self.k_max))
                })
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("k,x_meters,raw,normalized,rescaled");
        if self.exotic_order.is_some() {
            s.push_str(",N_E");
        }
        s.push('\n');
        for (i, k) in (self.k_min..=self.k_max).enumerate() {
            let x = Float::with_val(self.sampling_interval.prec(), &self.sampling_interval * k);
            let _ = write!(
                s,
                "{},{},{},{},{}",
                k,
                to_decimal(&x),
                to_decimal(&self.raw[i]),
                to_decimal(&self.normalized[i]),
                to_decimal(&self.rescaled[i])
            );
            if let Some(ne) = self.exotic_order {
                let _ = write!(s, ",{ne}");
            }
            s.push('\n');
        }
        s
    }
}

/// Reads `(k, rescaled)` pairs from the CSV produced by [`ScreenSamples::to_csv`].
pub fn read_rescaled_csv(text: &str, prec: u32) -> Result<Vec<(i64, Float)>> {
    let (ks, mut cols) = read_csv_columns(text, &["rescaled"], prec)?;
    Ok(ks.into_iter().zip(cols.remove(0)).collect())
}

/// Sample indices and the named numeric columns of an intensity CSV.
pub fn read_csv_columns(text: &str, names: &[&str], prec: u32) -> Result<(Vec<i64>, Vec<Vec<Float>>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| QpcError::Parse("empty intensity file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| *c == name)
            .ok_or_else(|| QpcError::Parse(format!("intensity file has no `{name}` column")))
    };
    let k_col = find("k")?;
    let wanted: Vec<usize> = names.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let mut ks = Vec::new();
    let mut out = vec![Vec::new(); names.len()];
    for (line_no, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |c: usize| {
            fields
                .get(c)
                .map(|f| f.trim())
                .ok_or_else(|| QpcError::Parse(format!("line {}: missing column", line_no + 2)))
        };
        let k: i64 = get(k_col)?
            .parse()
            .map_err(|_| QpcError::Parse(format!("line {}: bad sample index", line_no + 2)))?;
        ks.push(k);
        for (dst, &c) in out.iter_mut().zip(&wanted) {
            dst.push(crate::numerics::parse_real(prec, get(c)?)?);
        }
    }
    Ok((ks, out))
}

/// Turns amplitude sums into raw, normalized and rescaled intensities.
pub fn samples_from_sums(
    coupling: &CouplingModel,
    sums: &[Complex],
    positions: &[(i64, Float)],
    ts: &Float,
    exotic_order: Option<u32>,
) -> Result<ScreenSamples> {
    let prec = coupling.prec;
    let mut raw = Vec::with_capacity(sums.len());
    let mut normalized = Vec::with_capacity(sums.len());
    let mut rescaled = Vec::with_capacity(sums.len());
    for (sum, (k, x)) in sums.iter().zip(positions) {
        let r = Float::with_val(prec, sum.norm_ref());
        let nrm = Float::with_val(prec, &r / &coupling.lambda);
        let expo = Float::with_val(prec, &coupling.a_last * Float::with_val(prec, x.square_ref())) * -2i32;
        let env = expo.exp();
        if !env.is_finite() || env.is_zero() {
            return Err(QpcError::Range(format!("envelope factor overflows at k = {k}")));
        }
        let res = Float::with_val(prec, &nrm * &env);
        raw.push(r);
        normalized.push(nrm);
        rescaled.push(res);
    }
    Ok(ScreenSamples {
        k_min: positions.first().map(|p| p.0).unwrap_or(0),
        k_max: positions.last().map(|p| p.0).unwrap_or(-1),
        sampling_interval: ts.clone(),
        raw,
        normalized,
        rescaled,
        lambda: coupling.lambda.clone(),
        a_last: coupling.a_last.clone(),
        exotic_order,
    })
}

pub fn screen_intensity(
    coupling: &CouplingModel,
    paths: &[TrajectorySelector],
    k_min: i64,
    k_max: i64,
    ts: &Float,
) -> Result<ScreenSamples> {
    if k_min > k_max {
        return Err(QpcError::Invariant(format!("empty sample range [{k_min}, {k_max}]")));
    }
    let positions = sample_positions(k_min, k_max, ts);
    let sums = amplitude_sums(coupling, paths, &positions);
    samples_from_sums(coupling, &sums, &positions, ts, None)
}

/// Real weight `gamma_f = exp(x^T H_R x + c.x k T_s)` and phase
/// `Theta = x^T H_I x + d.x k T_s` of one path at sample `k`.
pub fn gamma_theta(coupling: &CouplingModel, traj: &TrajectorySelector, k: i64, ts: &Float) -> (Float, Float) {
    let prec = coupling.prec;
    let q = quadratic_form(&coupling.h, &traj.x);
    let kts = Float::with_val(prec, ts * k);
    let cx = dot(&coupling.c_vec, &traj.x, prec);
    let dx = dot(&coupling.d_vec, &traj.x, prec);
    let gamma = (Float::with_val(prec, &cx * &kts) + q.real()).exp();
    let theta = Float::with_val(prec, &dx * &kts) + q.imag();
    (gamma, theta)
}

/// `|sum_n gamma_f e^{i Theta}|^2`, the rescaled intensity rebuilt from
/// per-path weights and phases.
pub fn reassemble_rescaled(coupling: &CouplingModel, paths: &[TrajectorySelector], k: i64, ts: &Float) -> Float {
    let prec = coupling.prec;
    let terms: Vec<Complex> = paths
        .iter()
        .map(|p| {
            let (g, th) = gamma_theta(coupling, p, k, ts);
            let phase = Complex::with_val(prec, (0, th)).exp();
            phase * g
        })
        .collect();
    Float::with_val(prec, compensated_complex_sum(&terms, prec).norm_ref())
}
