//! Period finding on detector samples: simultaneous Diophantine approximation
//! errors, lattice mapping, IFFT ratio scan, the interference-envelope
//! theorem check, noise injection and the Cramer-Rao bound.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rug::ops::Pow;
use rug::{Complex, Float};
use serde::{Deserialize, Serialize};

use crate::error::{QpcError, Result};
use crate::intensity::{dot, ScreenSamples, TrajectorySelector};
use crate::numerics::{compensated_complex_sum, ifft_normalized, pi, real_sum};
use crate::propagator::{quadratic_form, CouplingModel};

pub const DEFAULT_LATTICE_TOL: f64 = 1e-6;
pub const DEFAULT_PROMINENCE: f64 = 0.05;
pub const DEFAULT_REFINE_WINDOW: f64 = 0.08;

/// `b[n] = d . x_n T_s / (2 pi)` for every trajectory.
pub fn lattice_points(coupling: &CouplingModel, paths: &[TrajectorySelector], ts: &Float) -> Vec<Float> {
    let prec = coupling.prec;
    paths
        .iter()
        .map(|p| dot(&coupling.d_vec, &p.x_scaled(ts), prec))
        .collect()
}

/// Distance from `x` to the nearest integer, with that integer.
pub fn nearest_integer(x: &Float) -> (Float, Float) {
    let z = Float::with_val(x.prec(), x.round_ref());
    let d = Float::with_val(x.prec(), x - &z).abs();
    (d, z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdaErrorCurve {
    pub k_pre: u32,
    /// Index `M - 1` holds the value for denominator `M`.
    pub eps_mean: Vec<Float>,
    pub eps_max: Vec<Float>,
    pub eps_min: Vec<Float>,
}

impl SdaErrorCurve {
    pub fn mean_at(&self, m: u32) -> &Float {
        &self.eps_mean[(m - 1) as usize]
    }

    pub fn max_at(&self, m: u32) -> &Float {
        &self.eps_max[(m - 1) as usize]
    }

    /// Smallest-index minimizer of the mean error over `lo..=hi`.
    pub fn argmin(&self, lo: u32, hi: u32) -> u32 {
        let hi = hi.min(self.k_pre);
        let mut best = lo;
        for m in lo..=hi {
            if self.mean_at(m) < self.mean_at(best) {
                best = m;
            }
        }
        best
    }
}

pub fn sda_errors(b: &[Float], k_pre: u32) -> Result<SdaErrorCurve> {
    if k_pre == 0 {
        return Err(QpcError::Invariant("search bound must be at least 1".into()));
    }
    if b.is_empty() {
        return Err(QpcError::Invariant("no lattice points".into()));
    }
    let prec = b[0].prec();
    let rows: Vec<(Float, Float, Float)> = (1..=k_pre)
        .into_par_iter()
        .map(|m| {
            let eps: Vec<Float> = b
                .iter()
                .map(|v| nearest_integer(&Float::with_val(prec, v * m)).0)
                .collect();
            let mean = real_sum(&eps, prec) / b.len() as u64;
            let max = eps.iter().fold(Float::with_val(prec, 0), |a, e| a.max(e));
            let min = eps.iter().fold(Float::with_val(prec, 1), |a, e| a.min(e));
            (mean, max, min)
        })
        .collect();
    let mut curve = SdaErrorCurve {
        k_pre,
        eps_mean: Vec::with_capacity(rows.len()),
        eps_max: Vec::with_capacity(rows.len()),
        eps_min: Vec::with_capacity(rows.len()),
    };
    for (a, b, c) in rows {
        curve.eps_mean.push(a);
        curve.eps_max.push(b);
        curve.eps_min.push(c);
    }
    Ok(curve)
}

/// Smallest `M` with `M max|b| > 1/2`. Below it every `M b[n]` lies within
/// half a unit of zero, so a small error there says nothing about a common
/// denominator.
pub fn nontrivial_start(b: &[Float]) -> u32 {
    let max = b.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max);
    if max == 0.0 {
        return 1;
    }
    ((0.5 / max).floor() as u32 + 1).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeMap {
    pub k_tilde: u32,
    /// `round(k_tilde b[n]) mod k_tilde`.
    pub g2_tilde: Vec<i64>,
    pub max_error: Float,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeFailure {
    pub k_tilde: u32,
    pub n: usize,
    pub error: f64,
}

impl std::fmt::Display for LatticeFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "period {} leaves lattice point {} at distance {:.3e} from an integer",
            self.k_tilde, self.n, self.error
        )
    }
}

pub fn lattice_map(b: &[Float], k_tilde: u32, tol: f64) -> std::result::Result<LatticeMap, LatticeFailure> {
    let prec = b.first().map(|v| v.prec()).unwrap_or(64);
    let mut g2 = Vec::with_capacity(b.len());
    let mut worst = (0usize, Float::with_val(prec, 0));
    for (n, v) in b.iter().enumerate() {
        let (d, z) = nearest_integer(&Float::with_val(prec, v * k_tilde));
        if d > worst.1 {
            worst = (n, d.clone());
        }
        let z = z.to_integer().expect("finite").to_i64().expect("fits in i64");
        g2.push(z.rem_euclid(k_tilde as i64));
    }
    if worst.1 > tol {
        return Err(LatticeFailure {
            k_tilde,
            n: worst.0,
            error: worst.1.to_f64(),
        });
    }
    Ok(LatticeMap {
        k_tilde,
        g2_tilde: g2,
        max_error: worst.1,
    })
}

/// Sum-of-sinusoids model of the rescaled intensity,
/// `Ĩ[k] = |sum_n g3[n] e^{g1[n] k} e^{i 2 pi G2[n] k / k_tilde}|^2`.
#[derive(Debug, Clone)]
pub struct PeriodModel {
    pub k_tilde: u32,
    pub g1: Vec<Float>,
    pub g3: Vec<Complex>,
    pub g2_tilde: Vec<i64>,
}

impl PeriodModel {
    pub fn from_coupling(coupling: &CouplingModel, paths: &[TrajectorySelector], ts: &Float, lattice: &LatticeMap) -> Self {
        let prec = coupling.prec;
        let g1 = paths
            .iter()
            .map(|p| Float::with_val(prec, dot(&coupling.c_vec, &p.x, prec) * ts))
            .collect();
        let g3 = paths
            .iter()
            .map(|p| quadratic_form(&coupling.h, &p.x).exp())
            .collect();
        Self {
            k_tilde: lattice.k_tilde,
            g1,
            g3,
            g2_tilde: lattice.g2_tilde.clone(),
        }
    }

    pub fn prec(&self) -> u32 {
        self.g1.first().map(|v| v.prec()).unwrap_or(64)
    }

    fn omega(&self, k_tilde: &Float) -> Float {
        let prec = self.prec();
        Float::with_val(prec, pi(prec) * 2u32) / k_tilde
    }

    /// Per-path terms `g3 e^{g1 k} e^{i G2 omega k}` for a continuous period.
    fn terms(&self, k: i64, k_tilde: &Float) -> Vec<Complex> {
        let prec = self.prec();
        let w = self.omega(k_tilde);
        self.g1
            .iter()
            .zip(&self.g3)
            .zip(&self.g2_tilde)
            .map(|((g1, g3), &g2)| {
                let re = Float::with_val(prec, g1 * k);
                let im = Float::with_val(prec, &w * (g2 * k));
                Complex::with_val(prec, (re, im)).exp() * g3
            })
            .collect()
    }

    pub fn intensity_at(&self, k: i64, k_tilde: &Float) -> Float {
        let prec = self.prec();
        Float::with_val(prec, compensated_complex_sum(&self.terms(k, k_tilde), prec).norm_ref())
    }

    pub fn intensity(&self, k: i64) -> Float {
        self.intensity_at(k, &Float::with_val(self.prec(), self.k_tilde))
    }

    /// Closed-form derivative of `Ĩ[k]` with respect to the period, as the
    /// double sum over path pairs.
    pub fn derivative_at(&self, k: i64, k_tilde: &Float) -> Float {
        let prec = self.prec();
        let u = self.terms(k, k_tilde);
        let scale = Float::with_val(prec, pi(prec) * 2u32) * k / Float::with_val(prec, k_tilde.square_ref());
        let mut pairs = Vec::with_capacity(u.len() * u.len());
        for (n, un) in u.iter().enumerate() {
            for (l, ul) in u.iter().enumerate() {
                let dg = self.g2_tilde[l] - self.g2_tilde[n];
                if dg == 0 {
                    continue;
                }
                let a = Complex::with_val(prec, un * Complex::with_val(prec, ul.conj_ref()));
                let factor = Complex::with_val(prec, (0, Float::with_val(prec, &scale * dg)));
                pairs.push(a * factor);
            }
        }
        compensated_complex_sum(&pairs, prec).real().clone()
    }

    pub fn derivative(&self, k: i64) -> Float {
        self.derivative_at(k, &Float::with_val(self.prec(), self.k_tilde))
    }

    /// `H[k, o] = sum_n g3 e^{g1 (k_tilde - k)} e^{-i 2 pi o[n] k / k_tilde}`
    /// with `o = G2` or `o = 0`.
    pub fn h_value(&self, k: i64, oscillating: bool) -> Complex {
        let prec = self.prec();
        let kt = self.k_tilde as i64;
        let w = self.omega(&Float::with_val(prec, self.k_tilde));
        let terms: Vec<Complex> = self
            .g1
            .iter()
            .zip(&self.g3)
            .zip(&self.g2_tilde)
            .map(|((g1, g3), &g2)| {
                let re = Float::with_val(prec, g1 * (kt - k));
                let o = if oscillating { g2 } else { 0 };
                let im = -Float::with_val(prec, &w * (o * k));
                Complex::with_val(prec, (re, im)).exp() * g3
            })
            .collect();
        compensated_complex_sum(&terms, prec)
    }
}

#[derive(Debug, Clone)]
pub struct ScanEntry {
    pub m: u32,
    pub spectrum: Vec<Complex>,
    /// `None` when every non-zero bin vanishes.
    pub r: Option<Float>,
}

/// IFFT of `Ĩ[0..M]` and the ratio of the zero bin to the mean of the others.
pub fn ifft_scan(samples: &[Float], m: u32) -> Result<ScanEntry> {
    if m < 2 {
        return Err(QpcError::Invariant("scan size must be at least 2".into()));
    }
    let m_us = m as usize;
    if samples.len() < m_us {
        return Err(QpcError::Invariant(format!(
            "scan size {m} needs {m} samples, found {}",
            samples.len()
        )));
    }
    let prec = samples[0].prec();
    let input: Vec<Complex> = samples[..m_us].iter().map(|v| Complex::with_val(prec, v)).collect();
    let spectrum = ifft_normalized(&input, prec)?;
    let mags: Vec<Float> = spectrum[1..].iter().map(|z| Float::with_val(prec, z.abs_ref())).collect();
    let mean = real_sum(&mags, prec) / (m - 1);
    // Bins at rounding level relative to the zero bin count as empty.
    let floor = Float::with_val(prec, spectrum[0].abs_ref()) * Float::with_val(prec, Float::with_val(prec, 2).pow(-(prec as i32) / 2));
    let r = if mean <= floor {
        None
    } else {
        Some(Float::with_val(prec, spectrum[0].abs_ref()) / mean)
    };
    Ok(ScanEntry { m, spectrum, r })
}

/// `R[M]` for `M = 2..=m_max`.
pub fn r_curve(samples: &[Float], m_max: u32) -> Result<Vec<(u32, Option<Float>)>> {
    (2..=m_max)
        .into_par_iter()
        .map(|m| ifft_scan(samples, m).map(|e| (m, e.r)))
        .collect()
}

/// `Gamma_M[p/M, h/k_tilde]` for every `p` and residue class `h`.
#[derive(Debug, Clone)]
pub struct GammaDecomposition {
    pub m: u32,
    pub k_tilde: u32,
    /// `terms[p][h]`.
    pub terms: Vec<Vec<Complex>>,
    /// Largest `|sum_h Gamma - IFFT| / max|IFFT|` over `p`.
    pub residual: f64,
}

pub fn gamma_decomposition(model: &PeriodModel, samples: &[Float], m: u32) -> Result<GammaDecomposition> {
    let prec = model.prec();
    let kt = model.k_tilde as i64;
    let entry = ifft_scan(samples, m)?;
    let sqrt_m = Float::with_val(prec, m).sqrt();
    let two_pi = Float::with_val(prec, pi(prec) * 2u32);
    let np = model.g1.len();
    let mut terms = vec![vec![Complex::new(prec); model.k_tilde as usize]; m as usize];
    let one = Complex::with_val(prec, 1);
    for p in 0..m as i64 {
        let mut buckets: Vec<Vec<Complex>> = vec![Vec::new(); model.k_tilde as usize];
        for n in 0..np {
            for l in 0..np {
                let h = (model.g2_tilde[l] - model.g2_tilde[n]).rem_euclid(kt);
                let a = Complex::with_val(prec, &model.g3[n] * Complex::with_val(prec, model.g3[l].conj_ref()));
                let alpha = Float::with_val(prec, &model.g1[n] + &model.g1[l]);
                // gamma = e^alpha e^{-i 2 pi (h / k_tilde - p / M)}
                let frac = Float::with_val(prec, h) / kt - Float::with_val(prec, p) / m;
                let gamma = Complex::with_val(prec, (alpha, -Float::with_val(prec, &two_pi * frac))).exp();
                let gap = Complex::with_val(prec, &one - &gamma);
                let ratio = if Float::with_val(prec, gap.abs_ref()) < Float::with_val(prec, 1e-30) {
                    let mut acc = Vec::with_capacity(m as usize);
                    let mut g = one.clone();
                    for _ in 0..m {
                        acc.push(g.clone());
                        g *= &gamma;
                    }
                    compensated_complex_sum(&acc, prec)
                } else {
                    let gm = Complex::with_val(prec, (&gamma).pow(m));
                    (one.clone() - gm) / gap
                };
                buckets[h as usize].push(a * ratio / &sqrt_m);
            }
        }
        for (h, b) in buckets.iter().enumerate() {
            terms[p as usize][h] = compensated_complex_sum(b, prec);
        }
    }
    let scale = entry
        .spectrum
        .iter()
        .map(|z| Float::with_val(prec, z.abs_ref()).to_f64())
        .fold(0.0, f64::max);
    let mut residual = 0.0f64;
    for (p, row) in terms.iter().enumerate() {
        let sum = compensated_complex_sum(row, prec);
        let diff = Complex::with_val(prec, &sum - &entry.spectrum[p]);
        let d = Float::with_val(prec, diff.abs_ref()).to_f64();
        residual = residual.max(if scale > 0.0 { d / scale } else { d });
    }
    Ok(GammaDecomposition {
        m,
        k_tilde: model.k_tilde,
        terms,
        residual,
    })
}

/// Strict local maxima whose topographic prominence is at least
/// `rel_prominence` times the peak height.
pub fn local_maxima(curve: &[(u32, Float)], rel_prominence: f64) -> Vec<u32> {
    let v: Vec<f64> = curve.iter().map(|(_, r)| r.to_f64()).collect();
    let mut out = Vec::new();
    for i in 1..v.len().saturating_sub(1) {
        if !(v[i] > v[i - 1] && v[i] >= v[i + 1]) {
            continue;
        }
        let mut left_min = v[i];
        let mut j = i;
        while j > 0 {
            j -= 1;
            if v[j] > v[i] {
                break;
            }
            left_min = left_min.min(v[j]);
        }
        let mut right_min = v[i];
        let mut j = i;
        while j + 1 < v.len() {
            j += 1;
            if v[j] > v[i] {
                break;
            }
            right_min = right_min.min(v[j]);
        }
        let prominence = v[i] - left_min.max(right_min);
        if prominence >= rel_prominence * v[i] {
            out.push(curve[i].0);
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Candidate {
    /// Refined period estimate.
    #[serde(rename = "M")]
    pub m: u32,
    /// Location of the ratio peak that produced this candidate.
    pub peak: u32,
    /// Multiple of the fundamental candidate, if this is one.
    pub harmonic: Option<u32>,
    #[serde(rename = "R")]
    pub r: f64,
    pub lattice_ok: bool,
    pub eps_mean: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct CandidateOptions {
    pub prominence: f64,
    pub refine_window: f64,
    pub lattice_tol: f64,
}

impl Default for CandidateOptions {
    fn default() -> Self {
        Self {
            prominence: DEFAULT_PROMINENCE,
            refine_window: DEFAULT_REFINE_WINDOW,
            lattice_tol: DEFAULT_LATTICE_TOL,
        }
    }
}

/// Ratio peaks turned into period candidates. The first peak is moved to the
/// best Diophantine denominator within a relative window; later peaks that
/// sit within the same window of a multiple of that fundamental are reported
/// as the multiple, others are refined independently. Every candidate is then
/// checked against the lattice. Without lattice points the raw peaks are
/// reported.
pub fn period_candidates(r: &[(u32, Float)], b: Option<&[Float]>, opts: CandidateOptions) -> Result<Vec<Candidate>> {
    let peaks = local_maxima(r, opts.prominence);
    let r_at = |m: u32| r.iter().find(|(x, _)| *x == m).map(|(_, v)| v.to_f64()).unwrap_or(f64::NAN);
    let Some(b) = b else {
        return Ok(peaks
            .into_iter()
            .map(|p| Candidate {
                m: p,
                peak: p,
                harmonic: None,
                r: r_at(p),
                lattice_ok: false,
                eps_mean: f64::NAN,
            })
            .collect());
    };
    let reach = |p: u32| ((p as f64) * (1.0 + opts.refine_window)).ceil() as u32;
    let hi = peaks.iter().map(|&p| reach(p)).max().unwrap_or(1).max(1);
    let curve = sda_errors(b, hi)?;
    let floor = nontrivial_start(b);
    let mut fundamental: Option<u32> = None;
    let mut out: Vec<Candidate> = Vec::new();
    for p in peaks {
        let width = (p as f64) * opts.refine_window;
        let snapped = fundamental.and_then(|f| {
            let h = ((p as f64) / (f as f64)).round() as u32;
            (h >= 2 && ((h * f) as f64 - p as f64).abs() <= width && h * f <= curve.k_pre).then_some((h * f, h))
        });
        let (m, harmonic) = match snapped {
            Some((m, h)) => (m, Some(h)),
            None => {
                let lo = (((p as f64) - width).floor() as u32).max(floor).max(1);
                let top = reach(p);
                if lo > top {
                    continue;
                }
                let m = curve.argmin(lo, top);
                if fundamental.is_none() {
                    fundamental = Some(m);
                    (m, Some(1))
                } else {
                    (m, None)
                }
            }
        };
        if out.iter().any(|c| c.m == m) {
            continue;
        }
        out.push(Candidate {
            m,
            peak: p,
            harmonic,
            r: r_at(p),
            lattice_ok: lattice_map(b, m, opts.lattice_tol).is_ok(),
            eps_mean: curve.mean_at(m).to_f64(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Theorem1Report {
    pub k_tilde: u32,
    pub lattice_ok: bool,
    /// `|H[k, G2]| <= |H[k, 0]|` for every offset `0 <= k <= k_tilde`.
    pub oscillation_bounded: bool,
    /// `|H[k, 0]|` strictly decreasing in the offset, so the envelope grows
    /// with the sample index up to `k_tilde`.
    pub envelope_monotone: bool,
    /// `Ĩ[k_tilde] > Ĩ[k]` for all `k < k_tilde` on the supplied samples.
    pub conclusion_holds: Option<bool>,
    pub conclusion_asserted: bool,
    pub first_violation: Option<String>,
}

pub fn theorem1_check(model: Option<&PeriodModel>, k_tilde: u32, observed: Option<&[Float]>) -> Theorem1Report {
    let conclusion = observed.and_then(|s| {
        let kt = k_tilde as usize;
        (s.len() > kt).then(|| s[..kt].iter().all(|v| *v < s[kt]))
    });
    let Some(model) = model else {
        return Theorem1Report {
            k_tilde,
            lattice_ok: false,
            oscillation_bounded: false,
            envelope_monotone: false,
            conclusion_holds: conclusion,
            conclusion_asserted: false,
            first_violation: Some("lattice mapping failed".into()),
        };
    };
    let prec = model.prec();
    let kt = k_tilde as i64;
    let env: Vec<Float> = (0..=kt)
        .map(|k| Float::with_val(prec, model.h_value(k, false).abs_ref()))
        .collect();
    let osc: Vec<Float> = (0..=kt)
        .map(|k| Float::with_val(prec, model.h_value(k, true).abs_ref()))
        .collect();
    let mut first_violation = None;
    // Allow rounding slack where the two sums coincide (offset 0).
    let slack = Float::with_val(prec, 1) + Float::with_val(prec, Float::with_val(prec, 2).pow(-(prec as i32) / 2));
    let mut oscillation_bounded = true;
    for k in 0..=kt as usize {
        if osc[k] > Float::with_val(prec, &env[k] * &slack) {
            oscillation_bounded = false;
            first_violation.get_or_insert(format!("oscillating sum exceeds envelope at offset {k}"));
            break;
        }
    }
    let mut envelope_monotone = true;
    for k in 1..=kt as usize {
        if env[k] >= env[k - 1] {
            envelope_monotone = false;
            first_violation.get_or_insert(format!("envelope does not decrease at offset {k}"));
            break;
        }
    }
    let asserted = oscillation_bounded && envelope_monotone;
    Theorem1Report {
        k_tilde,
        lattice_ok: true,
        oscillation_bounded,
        envelope_monotone,
        conclusion_holds: conclusion,
        conclusion_asserted: asserted,
        first_violation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Signal-to-noise ratio against the RMS normalized intensity.
    pub snr_db: Option<f64>,
    /// Constant standard deviation of the normalized-intensity noise.
    pub sigma: Option<f64>,
    pub sigma_max: Option<f64>,
    pub seed: Option<u64>,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_some() && self.sigma.is_some() {
            return Err(QpcError::Invariant("noise takes either snr_db or sigma, not both".into()));
        }
        for (name, v) in [("sigma", self.sigma), ("sigma_max", self.sigma_max)] {
            if let Some(v) = v {
                if !(v >= 0.0) {
                    return Err(QpcError::Invariant(format!("noise {name} must be non-negative")));
                }
            }
        }
        if let Some(s) = self.snr_db {
            if !s.is_finite() {
                return Err(QpcError::Invariant("snr_db must be finite".into()));
            }
        }
        Ok(())
    }

    /// Per-sample deviation `sigma_k` of the normalized-intensity noise.
    pub fn sigmas(&self, normalized: &[Float]) -> Vec<f64> {
        let base = match (self.sigma, self.snr_db) {
            (Some(s), _) => s,
            (None, Some(snr)) => rms(normalized) / 10f64.powf(snr / 20.0),
            (None, None) => 0.0,
        };
        let s = match self.sigma_max {
            Some(max) => base.min(max),
            None => base,
        };
        vec![s; normalized.len()]
    }
}

fn rms(v: &[Float]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let prec = v[0].prec();
    let sq: Vec<Float> = v.iter().map(|x| Float::with_val(prec, x.square_ref())).collect();
    (real_sum(&sq, prec) / v.len() as u64).sqrt().to_f64()
}

/// Adds seeded Gaussian noise to the normalized samples and carries the
/// amplified noise into the rescaled samples.
pub fn add_noise(samples: &ScreenSamples, model: &NoiseModel, seed: u64) -> Result<ScreenSamples> {
    model.validate()?;
    let seed = model.seed.unwrap_or(seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sigmas = model.sigmas(&samples.normalized);
    let prec = samples.lambda.prec();
    let mut out = samples.clone();
    for (i, k) in (samples.k_min..=samples.k_max).enumerate() {
        let s = sigmas[i];
        if s == 0.0 {
            continue;
        }
        let dist = Normal::new(0.0, s).map_err(|e| QpcError::Invariant(e.to_string()))?;
        let n = Float::with_val(prec, dist.sample(&mut rng));
        let x = Float::with_val(prec, &samples.sampling_interval * k);
        let amp = (Float::with_val(prec, &samples.a_last * Float::with_val(prec, x.square_ref())) * -2i32).exp();
        out.normalized[i] += &n;
        out.raw[i] = Float::with_val(prec, &out.normalized[i] * &samples.lambda);
        out.rescaled[i] += Float::with_val(prec, &n * &amp);
    }
    Ok(out)
}

/// `sigma~[k] = exp(-2 A (k T_s)^2) sigma_k`.
pub fn rescaled_sigmas(a_last: &Float, ts: &Float, positions: &[i64], sigmas: &[f64]) -> Vec<Float> {
    let prec = a_last.prec();
    positions
        .iter()
        .zip(sigmas)
        .map(|(&k, &s)| {
            let x = Float::with_val(prec, ts * k);
            (Float::with_val(prec, a_last * Float::with_val(prec, x.square_ref())) * -2i32).exp() * s
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CrbReport {
    pub fisher: f64,
    /// `f64::INFINITY` when the samples carry no information.
    pub crb: f64,
    pub bias_derivative: f64,
    pub sample_positions: Vec<i64>,
    pub derivatives: Vec<f64>,
}

/// Cramer-Rao bound for the period from samples at `positions` with
/// rescaled deviations `sigma_tilde`.
pub fn crb(model: &PeriodModel, positions: &[i64], sigma_tilde: &[Float], bias_derivative: f64) -> Result<CrbReport> {
    if positions.len() != sigma_tilde.len() {
        return Err(QpcError::Invariant("one deviation per sample position is required".into()));
    }
    if sigma_tilde.iter().any(|s| *s <= 0) {
        return Err(QpcError::Invariant("rescaled noise deviations must be positive".into()));
    }
    let prec = model.prec();
    let derivs: Vec<Float> = positions.par_iter().map(|&k| model.derivative(k)).collect();
    let info_terms: Vec<Float> = derivs
        .iter()
        .zip(sigma_tilde)
        .map(|(d, s)| Float::with_val(prec, d / s).square())
        .collect();
    let fisher = real_sum(&info_terms, prec);
    let num = (1.0 + bias_derivative).powi(2);
    let crb = if fisher.is_zero() {
        f64::INFINITY
    } else {
        (Float::with_val(prec, num) / &fisher).to_f64()
    };
    Ok(CrbReport {
        fisher: fisher.to_f64(),
        crb,
        bias_derivative,
        sample_positions: positions.to_vec(),
        derivatives: derivs.iter().map(|d| d.to_f64()).collect(),
    })
}

/// CRB from the first `j` samples for every `j = 1..=positions.len()`.
pub fn crb_sweep(model: &PeriodModel, positions: &[i64], sigma_tilde: &[Float], bias_derivative: f64) -> Result<Vec<f64>> {
    if positions.len() != sigma_tilde.len() {
        return Err(QpcError::Invariant("one deviation per sample position is required".into()));
    }
    if sigma_tilde.iter().any(|s| *s <= 0) {
        return Err(QpcError::Invariant("rescaled noise deviations must be positive".into()));
    }
    let prec = model.prec();
    let derivs: Vec<Float> = positions.par_iter().map(|&k| model.derivative(k)).collect();
    let num = Float::with_val(prec, (1.0 + bias_derivative).powi(2));
    let mut fisher = Float::with_val(prec, 0);
    let mut out = Vec::with_capacity(positions.len());
    for (d, s) in derivs.iter().zip(sigma_tilde) {
        fisher += Float::with_val(prec, d / s).square();
        out.push(if fisher.is_zero() {
            f64::INFINITY
        } else {
            Float::with_val(prec, &num / &fisher).to_f64()
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::relative_difference;

    const PREC: u32 = 213;

    fn f(v: f64) -> Float {
        Float::with_val(PREC, v)
    }

    #[test]
    fn integer_points_have_zero_error() {
        let b: Vec<Float> = [3.0, -2.0, 7.0].iter().map(|&v| f(v)).collect();
        let c = sda_errors(&b, 10).unwrap();
        assert!(c.eps_mean.iter().all(|e| e.is_zero()));
    }

    #[test]
    fn sevenths_map_to_residues() {
        let b: Vec<Float> = (0..10).map(|n| Float::with_val(PREC, n) / 7u32).collect();
        let l = lattice_map(&b, 7, 1e-6).unwrap();
        assert_eq!(l.g2_tilde, (0..10).map(|n| n % 7).collect::<Vec<i64>>());
        let err = lattice_map(&b, 6, 1e-6).unwrap_err();
        assert!(err.error > 1e-3);
        let c = sda_errors(&b, 14).unwrap();
        assert!(c.mean_at(7).is_zero() && c.mean_at(14).is_zero());
        for m in 1..=14 {
            assert!(c.eps_min[m - 1] <= c.eps_mean[m - 1] && c.eps_mean[m - 1] <= c.eps_max[m - 1]);
            assert!(c.eps_max[m - 1] <= 0.5);
        }
    }

    #[test]
    fn trivial_regime_bound() {
        let b = vec![f(0.01), f(-0.02)];
        assert_eq!(nontrivial_start(&b), 26);
    }

    fn synthetic(k_tilde: u32) -> PeriodModel {
        let g1 = [0.004, -0.002, 0.001, 0.003];
        let g3 = [(1.0, 0.2), (0.5, -0.3), (0.2, 0.1), (0.7, 0.0)];
        let g2 = [0i64, 5, 9, 2];
        PeriodModel {
            k_tilde,
            g1: g1.iter().map(|&v| f(v)).collect(),
            g3: g3.iter().map(|&v| Complex::with_val(PREC, v)).collect(),
            g2_tilde: g2.to_vec(),
        }
    }

    #[test]
    fn gamma_terms_sum_to_spectrum() {
        let m = synthetic(12);
        let samples: Vec<Float> = (0..40).map(|k| m.intensity(k)).collect();
        for size in [5u32, 12, 17, 24, 36] {
            let g = gamma_decomposition(&m, &samples, size).unwrap();
            assert!(g.residual < 1e-50, "M={size} residual={}", g.residual);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let m = synthetic(12);
        let h = f(1e-12);
        for k in [1i64, 5, 11, 30] {
            let kt = f(12.0);
            let up = m.intensity_at(k, &Float::with_val(PREC, &kt + &h));
            let dn = m.intensity_at(k, &Float::with_val(PREC, &kt - &h));
            let fd = (up - dn) / Float::with_val(PREC, &h * 2u32);
            assert!(relative_difference(&fd, &m.derivative(k)) < 1e-10, "k={k}");
        }
    }

    #[test]
    fn flat_input_is_degenerate() {
        let s = vec![f(2.0); 16];
        let e = ifft_scan(&s, 8).unwrap();
        assert!(e.r.is_none());
        assert!(ifft_scan(&s, 1).is_err());
    }

    #[test]
    fn noise_is_reproducible_and_zero_sigma_is_identity() {
        let s = ScreenSamples {
            k_min: 0,
            k_max: 3,
            sampling_interval: f(1e-6),
            raw: vec![f(1.0); 4],
            normalized: vec![f(1.0); 4],
            rescaled: vec![f(1.0); 4],
            lambda: f(1.0),
            a_last: f(-1e7),
            exotic_order: None,
        };
        let zero = NoiseModel {
            sigma: Some(0.0),
            ..Default::default()
        };
        assert_eq!(add_noise(&s, &zero, 3).unwrap(), s);
        let m = NoiseModel {
            snr_db: Some(5.0),
            ..Default::default()
        };
        let a = add_noise(&s, &m, 7).unwrap();
        let b = add_noise(&s, &m, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, s);
    }

    #[test]
    fn crb_scales_with_variance() {
        let m = synthetic(12);
        let pos: Vec<i64> = (0..30).collect();
        let s1 = vec![f(0.01); 30];
        let s2 = vec![f(0.02); 30];
        let a = crb(&m, &pos, &s1, 0.0).unwrap();
        let b = crb(&m, &pos, &s2, 0.0).unwrap();
        assert!(a.crb > 0.0);
        assert!((b.crb / a.crb - 4.0).abs() < 1e-12);
        let only_zero = crb(&m, &[0], &[f(0.01)], 0.0).unwrap();
        assert!(only_zero.crb.is_infinite());
    }

    #[test]
    fn peaks_respect_prominence() {
        let curve: Vec<(u32, Float)> = [1.0, 3.0, 2.9, 2.95, 1.0, 5.0, 0.5]
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as u32 + 2, f(v)))
            .collect();
        assert_eq!(local_maxima(&curve, 0.05), vec![3, 7]);
        assert_eq!(local_maxima(&curve, 0.0), vec![3, 5, 7]);
    }
}
