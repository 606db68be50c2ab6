//! Configuration model, unit handling and geometric validation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rug::Float;
use serde::Deserialize;

use crate::analysis::NoiseModel;
use crate::error::{QpcError, Result};
use crate::numerics::{parse_real, to_decimal, PrecisionPolicy};

pub const DEFAULT_OVERLAP_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_PATH_CAP: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalConstants {
    pub mass: Float,
    pub hbar: Float,
    pub v_z: Float,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub half_width: Float,
    pub centers: Vec<Float>,
}

impl Plane {
    /// `S_j`, so that slit labels run over `-S_j..=S_j`.
    pub fn half_count(&self) -> usize {
        self.centers.len() / 2
    }

    pub fn center(&self, label: i64) -> &Float {
        &self.centers[(label + self.half_count() as i64) as usize]
    }
}

/// Slit planes `1..N-1` followed by the detector at plane `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetupGeometry {
    pub planes: Vec<Plane>,
    /// `L_{j-1,j}` for `j = 1..=N`.
    pub distances: Vec<Float>,
    pub source_width: Float,
    pub separation_factor: Float,
    pub overlap_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapWarning {
    pub plane: usize,
    pub slit: usize,
    pub overlap: f64,
}

impl SetupGeometry {
    /// Number of planes including the detector.
    pub fn n(&self) -> usize {
        self.planes.len() + 1
    }

    pub fn slit_counts(&self) -> Vec<usize> {
        self.planes.iter().map(|p| p.centers.len()).collect()
    }

    pub fn path_count(&self) -> u128 {
        self.planes.iter().map(|p| p.centers.len() as u128).product()
    }

    pub fn prec(&self) -> u32 {
        self.source_width.prec()
    }

    /// Every hard constraint that fails, described by plane and slit.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.planes.is_empty() {
            out.push("at least one slit plane is required (N >= 2)".to_string());
        }
        if self.distances.len() != self.n() {
            out.push(format!(
                "expected {} plane distances, found {}",
                self.n(),
                self.distances.len()
            ));
        }
        for (j, l) in self.distances.iter().enumerate() {
            if !l.is_finite() || *l <= 0 {
                out.push(format!("distance L_{{{},{}}} must be positive", j, j + 1));
            }
        }
        if !self.source_width.is_finite() || self.source_width <= 0 {
            out.push("source width must be positive".to_string());
        }
        if !self.separation_factor.is_finite() || self.separation_factor < 1 {
            out.push("separation factor must be at least 1".to_string());
        }
        for (idx, plane) in self.planes.iter().enumerate() {
            let j = idx + 1;
            if !plane.half_width.is_finite() || plane.half_width <= 0 {
                out.push(format!("plane {j}: slit half-width must be positive"));
            }
            if plane.centers.is_empty() || plane.centers.len() % 2 == 0 {
                out.push(format!(
                    "plane {j}: slit count {} must be odd so labels run over -S..=S",
                    plane.centers.len()
                ));
            }
            let min_gap = Float::with_val(self.prec(), &plane.half_width * &self.separation_factor) * 2u32;
            for (i, pair) in plane.centers.windows(2).enumerate() {
                let gap = Float::with_val(self.prec(), &pair[1] - &pair[0]);
                if gap <= 0 {
                    out.push(format!("plane {j}: centers {i} and {} are not strictly increasing", i + 1));
                } else if gap <= min_gap {
                    out.push(format!(
                        "plane {j}: gap between slits {i} and {} is {:.6e} m, separation requires more than {:.6e} m",
                        i + 1,
                        gap.to_f64(),
                        min_gap.to_f64()
                    ));
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(QpcError::Invariant(v.join("; ")))
        }
    }

    /// Adjacent slit pairs whose Gaussian overlap is not small.
    pub fn overlap_warnings(&self) -> Vec<OverlapWarning> {
        let mut out = Vec::new();
        for (idx, plane) in self.planes.iter().enumerate() {
            let beta = plane.half_width.to_f64();
            for (i, pair) in plane.centers.windows(2).enumerate() {
                let gap = Float::with_val(self.prec(), &pair[1] - &pair[0]).to_f64();
                let overlap = (-(gap * gap) / (2.0 * beta * beta)).exp();
                if overlap >= self.overlap_threshold {
                    out.push(OverlapWarning {
                        plane: idx + 1,
                        slit: i,
                        overlap,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub sampling_interval: Float,
    pub k_min: i64,
    pub k_max: i64,
    pub exotic_order: u32,
    pub precision: PrecisionPolicy,
    pub noise: Option<NoiseModel>,
    pub rng_seed: u64,
    pub d_override: Option<Vec<Float>>,
    pub path_cap: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sampling_interval.is_finite() || self.sampling_interval <= 0 {
            return Err(QpcError::Invariant("sampling interval must be positive".into()));
        }
        if self.k_min > self.k_max {
            return Err(QpcError::Invariant(format!(
                "empty sample range [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        self.precision.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub constants: PhysicalConstants,
    pub geometry: SetupGeometry,
    pub experiment: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSchedule {
    /// `t_{j-1,j}` for `j = 1..=N`.
    pub steps: Vec<Float>,
    /// `t_j`, time of arrival at plane `j`.
    pub cumulative: Vec<Float>,
}

pub fn derive_schedule(geom: &SetupGeometry, consts: &PhysicalConstants) -> TimeSchedule {
    let prec = geom.prec();
    let steps: Vec<Float> = geom
        .distances
        .iter()
        .map(|l| Float::with_val(prec, l / &consts.v_z))
        .collect();
    let mut acc = Float::new(prec);
    let cumulative = steps
        .iter()
        .map(|t| {
            acc += t;
            acc.clone()
        })
        .collect();
    TimeSchedule { steps, cumulative }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Length,
    Mass,
    Action,
    Velocity,
    InverseArea,
}

impl Quantity {
    fn scale(self, unit: &str) -> Option<&'static str> {
        let unit: String = unit.chars().filter(|c| !c.is_whitespace()).collect();
        let s = match (self, unit.as_str()) {
            (_, "") => "1",
            (Quantity::Length, "m") => "1",
            (Quantity::Length, "mm") => "1e-3",
            (Quantity::Length, "um" | "µm" | "μm") => "1e-6",
            (Quantity::Length, "nm") => "1e-9",
            (Quantity::Length, "pm") => "1e-12",
            (Quantity::Mass, "kg") => "1",
            (Quantity::Mass, "g") => "1e-3",
            (Quantity::Action, "J*s" | "J·s" | "Js") => "1",
            (Quantity::Velocity, "m/s") => "1",
            (Quantity::Velocity, "km/s") => "1e3",
            (Quantity::InverseArea, "m^-2" | "1/m^2" | "m-2") => "1",
            (Quantity::InverseArea, "nm^-2" | "1/nm^2") => "1e18",
            _ => return None,
        };
        Some(s)
    }

    fn si_unit(self) -> &'static str {
        match self {
            Quantity::Length => "m",
            Quantity::Mass => "kg",
            Quantity::Action => "J*s",
            Quantity::Velocity => "m/s",
            Quantity::InverseArea => "m^-2",
        }
    }
}

/// Parses `"<number> <unit>"` into SI at `prec` bits.
pub fn parse_quantity(text: &str, kind: Quantity, prec: u32) -> Result<Float> {
    let trimmed = text.trim();
    let split = trimmed
        .find(|c: char| c.is_whitespace())
        .unwrap_or(trimmed.len());
    let (number, unit) = trimmed.split_at(split);
    let scale = kind
        .scale(unit)
        .ok_or_else(|| QpcError::Parse(format!("unknown unit `{}` in `{text}`", unit.trim())))?;
    let value = parse_real(prec, number)?;
    if scale == "1" {
        Ok(value)
    } else {
        Ok(value * parse_real(prec, scale)?)
    }
}

fn format_quantity(x: &Float, kind: Quantity) -> String {
    format!("\"{} {}\"", to_decimal(x), kind.si_unit())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    constants: RawConstants,
    geometry: RawGeometry,
    experiment: RawExperiment,
    noise: Option<NoiseModel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstants {
    mass: String,
    hbar: String,
    v_z: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGeometry {
    source_width: String,
    distances: Vec<String>,
    separation_factor: Option<f64>,
    overlap_threshold: Option<f64>,
    plane: BTreeMap<String, RawPlane>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlane {
    half_width: String,
    centers: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    sampling_interval: String,
    k_min: i64,
    k_max: i64,
    #[serde(default)]
    exotic_order: u32,
    decimal_digits: Option<u32>,
    escalation_factor: Option<u32>,
    #[serde(default)]
    rng_seed: u64,
    d_override: Option<Vec<String>>,
    path_cap: Option<u64>,
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<Setup> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text, None)
}

/// Parses configuration text; `digits` overrides the configured precision.
pub fn parse_config(text: &str, digits: Option<u32>) -> Result<Setup> {
    let setup = parse_config_unchecked(text, digits)?;
    setup.geometry.validate()?;
    Ok(setup)
}

/// Parses without enforcing the geometric constraints, so that callers can
/// list every violation.
pub fn parse_config_unchecked(text: &str, digits: Option<u32>) -> Result<Setup> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| QpcError::Parse(e.to_string()))?;
    let defaults = PrecisionPolicy::default();
    let precision = PrecisionPolicy::new(
        digits.or(raw.experiment.decimal_digits).unwrap_or(defaults.decimal_digits),
        raw.experiment.escalation_factor.unwrap_or(defaults.escalation_factor),
    )?;
    let prec = precision.bits();

    let constants = PhysicalConstants {
        mass: parse_quantity(&raw.constants.mass, Quantity::Mass, prec)?,
        hbar: parse_quantity(&raw.constants.hbar, Quantity::Action, prec)?,
        v_z: parse_quantity(&raw.constants.v_z, Quantity::Velocity, prec)?,
    };
    for (name, v) in [("mass", &constants.mass), ("hbar", &constants.hbar), ("v_z", &constants.v_z)] {
        if !v.is_finite() || *v <= 0 {
            return Err(QpcError::Invariant(format!("constant {name} must be positive")));
        }
    }

    let mut indexed = Vec::new();
    for (key, plane) in raw.geometry.plane {
        let j: usize = key
            .parse()
            .map_err(|_| QpcError::Parse(format!("plane key `{key}` is not an integer")))?;
        indexed.push((j, plane));
    }
    indexed.sort_by_key(|(j, _)| *j);
    let mut planes = Vec::new();
    for (pos, (j, plane)) in indexed.into_iter().enumerate() {
        if j != pos + 1 {
            return Err(QpcError::Parse(format!(
                "planes must be numbered 1, 2, ...; found plane {j} at position {}",
                pos + 1
            )));
        }
        let centers = plane
            .centers
            .iter()
            .map(|c| parse_quantity(c, Quantity::Length, prec))
            .collect::<Result<Vec<_>>>()?;
        planes.push(Plane {
            half_width: parse_quantity(&plane.half_width, Quantity::Length, prec)?,
            centers,
        });
    }

    let geometry = SetupGeometry {
        planes,
        distances: raw
            .geometry
            .distances
            .iter()
            .map(|d| parse_quantity(d, Quantity::Length, prec))
            .collect::<Result<Vec<_>>>()?,
        source_width: parse_quantity(&raw.geometry.source_width, Quantity::Length, prec)?,
        separation_factor: Float::with_val(prec, raw.geometry.separation_factor.unwrap_or(1.0)),
        overlap_threshold: raw.geometry.overlap_threshold.unwrap_or(DEFAULT_OVERLAP_THRESHOLD),
    };

    let e = raw.experiment;
    let experiment = ExperimentConfig {
        sampling_interval: parse_quantity(&e.sampling_interval, Quantity::Length, prec)?,
        k_min: e.k_min,
        k_max: e.k_max,
        exotic_order: e.exotic_order,
        precision,
        noise: raw.noise,
        rng_seed: e.rng_seed,
        d_override: e
            .d_override
            .map(|v| {
                v.iter()
                    .map(|d| parse_quantity(d, Quantity::InverseArea, prec))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?,
        path_cap: e.path_cap.unwrap_or(DEFAULT_PATH_CAP),
    };
    experiment.validate()?;
    if let Some(noise) = &experiment.noise {
        noise.validate()?;
    }
    Ok(Setup {
        constants,
        geometry,
        experiment,
    })
}

impl Setup {
    /// Serializes back to the configuration schema with SI values written at
    /// full precision.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let c = &self.constants;
        let _ = writeln!(s, "[constants]");
        let _ = writeln!(s, "mass = {}", format_quantity(&c.mass, Quantity::Mass));
        let _ = writeln!(s, "hbar = {}", format_quantity(&c.hbar, Quantity::Action));
        let _ = writeln!(s, "v_z = {}", format_quantity(&c.v_z, Quantity::Velocity));
        let g = &self.geometry;
        let _ = writeln!(s, "\n[geometry]");
        let _ = writeln!(s, "source_width = {}", format_quantity(&g.source_width, Quantity::Length));
        let dist: Vec<String> = g.distances.iter().map(|d| format_quantity(d, Quantity::Length)).collect();
        let _ = writeln!(s, "distances = [{}]", dist.join(", "));
        let _ = writeln!(s, "separation_factor = {}", g.separation_factor.to_f64());
        let _ = writeln!(s, "overlap_threshold = {:e}", g.overlap_threshold);
        for (idx, p) in g.planes.iter().enumerate() {
            let _ = writeln!(s, "\n[geometry.plane.{}]", idx + 1);
            let _ = writeln!(s, "half_width = {}", format_quantity(&p.half_width, Quantity::Length));
            let centers: Vec<String> = p.centers.iter().map(|c| format_quantity(c, Quantity::Length)).collect();
            let _ = writeln!(s, "centers = [{}]", centers.join(", "));
        }
        let e = &self.experiment;
        let _ = writeln!(s, "\n[experiment]");
        let _ = writeln!(s, "sampling_interval = {}", format_quantity(&e.sampling_interval, Quantity::Length));
        let _ = writeln!(s, "k_min = {}", e.k_min);
        let _ = writeln!(s, "k_max = {}", e.k_max);
        let _ = writeln!(s, "exotic_order = {}", e.exotic_order);
        let _ = writeln!(s, "decimal_digits = {}", e.precision.decimal_digits);
        let _ = writeln!(s, "escalation_factor = {}", e.precision.escalation_factor);
        let _ = writeln!(s, "rng_seed = {}", e.rng_seed);
        let _ = writeln!(s, "path_cap = {}", e.path_cap);
        if let Some(d) = &e.d_override {
            let v: Vec<String> = d.iter().map(|x| format_quantity(x, Quantity::InverseArea)).collect();
            let _ = writeln!(s, "d_override = [{}]", v.join(", "));
        }
        if let Some(n) = &e.noise {
            let _ = writeln!(s, "\n[noise]");
            if let Some(v) = n.snr_db {
                let _ = writeln!(s, "snr_db = {v:?}");
            }
            if let Some(v) = n.sigma {
                let _ = writeln!(s, "sigma = {v:?}");
            }
            if let Some(v) = n.sigma_max {
                let _ = writeln!(s, "sigma_max = {v:?}");
            }
            if let Some(v) = n.seed {
                let _ = writeln!(s, "seed = {v}");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PREC: u32 = 213;

    #[test]
    fn units_convert_to_si() {
        let x = parse_quantity("196.5 nm", Quantity::Length, PREC).unwrap();
        assert!((x.to_f64() - 196.5e-9).abs() < 1e-22);
        let u = parse_quantity("1 µm", Quantity::Length, PREC).unwrap();
        assert_eq!(u.to_f64(), 1e-6);
        assert!(parse_quantity("1 furlong", Quantity::Length, PREC).is_err());
        assert!(parse_quantity("1 kg", Quantity::Length, PREC).is_err());
        assert!(parse_quantity("1.05e-34 J s", Quantity::Action, PREC).is_ok());
    }

    fn consts() -> PhysicalConstants {
        PhysicalConstants {
            mass: Float::with_val(PREC, 9.11e-31),
            hbar: Float::with_val(PREC, 1.05e-34),
            v_z: parse_real(PREC, "1.46e7").unwrap(),
        }
    }

    fn geometry(distances: &[f64]) -> SetupGeometry {
        SetupGeometry {
            planes: vec![Plane {
                half_width: Float::with_val(PREC, 1e-7),
                centers: vec![Float::with_val(PREC, 0.0)],
            }],
            distances: distances.iter().map(|&d| Float::with_val(PREC, d)).collect(),
            source_width: Float::with_val(PREC, 5e-7),
            separation_factor: Float::with_val(PREC, 1),
            overlap_threshold: DEFAULT_OVERLAP_THRESHOLD,
        }
    }

    #[test]
    fn schedule_divides_by_velocity() {
        let mut g = geometry(&[1.0, 400e-6]);
        g.planes.push(g.planes[0].clone());
        g.distances.push(Float::with_val(PREC, 1.0));
        let t = derive_schedule(&g, &consts());
        let expect = [6.8493e-8, 2.7397e-11, 6.8493e-8];
        for (a, b) in t.steps.iter().zip(expect) {
            assert!((a.to_f64() / b - 1.0).abs() < 1e-4);
        }
        assert!(t.cumulative.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn doubling_velocity_halves_times() {
        let g = geometry(&[0.3, 0.7]);
        let c = consts();
        let mut fast = c.clone();
        fast.v_z *= 2u32;
        let a = derive_schedule(&g, &c);
        let b = derive_schedule(&g, &fast);
        for (x, y) in a.steps.iter().zip(&b.steps) {
            assert_eq!(Float::with_val(PREC, y * 2u32), *x);
        }
    }

    #[test]
    fn gap_of_exactly_two_beta_is_rejected() {
        let mut g = geometry(&[1.0, 1.0]);
        g.planes[0].centers = vec![
            Float::with_val(PREC, -2e-7),
            Float::with_val(PREC, 0.0),
            Float::with_val(PREC, 2e-7),
        ];
        assert!(g.validate().is_err());
        g.planes[0].centers[2] = Float::with_val(PREC, 2.0001e-7);
        g.planes[0].centers[0] = Float::with_val(PREC, -2.0001e-7);
        assert!(g.validate().is_ok());
        assert!(!g.overlap_warnings().is_empty());
    }
}
