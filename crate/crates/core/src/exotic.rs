//! Exotic trajectories that hop between slits of one plane before moving on.

use rayon::prelude::*;
use rug::{Complex, Float};

use crate::error::{QpcError, Result};
use crate::intensity::{amplitude_sums, enumerate_paths, sample_positions, samples_from_sums, ScreenSamples, TrajectorySelector};
use crate::numerics::{compensated_complex_sum, pi};
use crate::propagator::{CouplingModel, GaussianState, PlaneIterates};
use crate::setup::{derive_schedule, PhysicalConstants, SetupGeometry, TimeSchedule};

/// Guard bits carried by per-chunk accumulators.
const ACCUMULATOR_GUARD: u32 = 64;
/// Samples between exact re-evaluations in the geometric recurrence.
const ANCHOR_SPACING: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExoticCounts {
    /// Exotic-only count per plane, excluding classical passages.
    pub per_plane_exotic: Vec<u128>,
    /// Classical plus exotic count per plane.
    pub per_plane_total: Vec<u128>,
    /// Cumulative counts arriving at planes `2..=N`.
    pub cumulative_exotic: Vec<u128>,
    pub cumulative_total: Vec<u128>,
}

impl ExoticCounts {
    pub fn sensor_total(&self) -> u128 {
        *self.cumulative_total.last().unwrap_or(&1)
    }
}

fn overflow() -> QpcError {
    QpcError::Resource("exotic path count overflows 128 bits".into())
}

pub fn count_exotic(slit_counts: &[usize], n_e: u32) -> Result<ExoticCounts> {
    let mut per_plane_exotic = Vec::new();
    let mut per_plane_total = Vec::new();
    for &s in slit_counts {
        let s = s as u128;
        let mut power: u128 = 1;
        let mut series: u128 = 1;
        for _ in 0..n_e {
            power = power.checked_mul(s.saturating_sub(1)).ok_or_else(overflow)?;
            series = series.checked_add(power).ok_or_else(overflow)?;
        }
        let total = s.checked_mul(series).ok_or_else(overflow)?;
        per_plane_total.push(total);
        per_plane_exotic.push(total - s);
    }
    let cumulate = |v: &[u128]| -> Result<Vec<u128>> {
        let mut acc: u128 = 1;
        v.iter()
            .map(|&x| {
                acc = acc.checked_mul(x).ok_or_else(overflow)?;
                Ok(acc)
            })
            .collect()
    };
    Ok(ExoticCounts {
        cumulative_exotic: cumulate(&per_plane_exotic)?,
        cumulative_total: cumulate(&per_plane_total)?,
        per_plane_exotic,
        per_plane_total,
    })
}

/// Every visit sequence through one plane with at most `n_e` extra hops.
/// Sequences are ordered by hop count, then entrance slit, then lexicographically.
pub fn visit_sequences(slits: usize, n_e: u32) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for hops in 0..=n_e as usize {
        for entrance in 0..slits {
            let mut stack = vec![vec![entrance]];
            while let Some(seq) = stack.pop() {
                if seq.len() == hops + 1 {
                    out.push(seq);
                    continue;
                }
                let last = *seq.last().expect("non-empty");
                for next in (0..slits).rev().filter(|&s| s != last) {
                    let mut ext = seq.clone();
                    ext.push(next);
                    stack.push(ext);
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExoticTrajectory {
    pub base: TrajectorySelector,
    /// Visited slit indices (0-based) per plane; the first entry is the entrance slit.
    pub visits: Vec<Vec<usize>>,
}

impl ExoticTrajectory {
    pub fn new(geom: &SetupGeometry, visits: Vec<Vec<usize>>) -> Result<Self> {
        if visits.len() != geom.planes.len() {
            return Err(QpcError::Invariant("one visit sequence per plane is required".into()));
        }
        let counts = geom.slit_counts();
        let mut n: u64 = 0;
        for (j, seq) in visits.iter().enumerate() {
            if seq.is_empty() || seq.iter().any(|&s| s >= counts[j]) {
                return Err(QpcError::Invariant(format!("plane {}: invalid visit sequence", j + 1)));
            }
            if seq.windows(2).any(|w| w[0] == w[1]) {
                return Err(QpcError::Invariant(format!("plane {}: consecutive visits repeat a slit", j + 1)));
            }
            n = n * counts[j] as u64 + seq[0] as u64;
        }
        let base = crate::intensity::decode_path(geom, n);
        Ok(Self { base, visits })
    }

    pub fn is_classical(&self) -> bool {
        self.visits.iter().all(|v| v.len() == 1)
    }

    pub fn hops(&self, plane: usize) -> usize {
        self.visits[plane].len() - 1
    }

    /// `|X_{j,s_k} - X_{j,s_{k-1}}|` for each hop on plane `plane` (0-based).
    pub fn hop_distances(&self, geom: &SetupGeometry, plane: usize) -> Vec<Float> {
        let centers = &geom.planes[plane].centers;
        self.visits[plane]
            .windows(2)
            .map(|w| Float::with_val(geom.prec(), &centers[w[1]] - &centers[w[0]]).abs())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSpread {
    pub plane: usize,
    pub p_mean: Float,
    pub p_sq_mean: Float,
    pub delta_p: Float,
    pub delta_v: Float,
}

/// Closed-form `<p>` and `<p^2>` of a superposition of Gaussian terms.
pub fn momentum_spread(states: &[GaussianState], consts: &PhysicalConstants, plane: usize) -> Result<MomentumSpread> {
    let Some(first) = states.first() else {
        return Err(QpcError::Invariant("momentum of an empty state".into()));
    };
    let prec = first.prec();
    if states.iter().any(|s| *s.quad.real() >= 0) {
        return Err(QpcError::Invariant(format!("plane {plane}: state is not normalizable")));
    }
    let pi_c = Complex::with_val(prec, pi(prec));
    let mut norm = Vec::new();
    let mut first_moment = Vec::new();
    let mut second_moment = Vec::new();
    for s1 in states {
        let a1c = Complex::with_val(prec, s1.quad.conj_ref());
        let b1c = Complex::with_val(prec, s1.lin.conj_ref());
        let l1c = Complex::with_val(prec, s1.log_amp.conj_ref());
        let two_a1c = Complex::with_val(prec, &a1c * 2u32);
        for s2 in states {
            let al = Complex::with_val(prec, &a1c + &s2.quad);
            let be = Complex::with_val(prec, &b1c + &s2.lin);
            let log_w = Complex::with_val(prec, &l1c + &s2.log_amp)
                + Complex::with_val(prec, Complex::with_val(prec, -&al).recip() * &pi_c).ln() / 2u32
                - Complex::with_val(prec, be.square_ref()) / Complex::with_val(prec, &al * 4u32);
            let i0 = Complex::with_val(prec, log_w).exp();
            let m1 = -Complex::with_val(prec, &be / Complex::with_val(prec, &al * 2u32));
            let m2 = -Complex::with_val(prec, &al * 2u32).recip() + Complex::with_val(prec, m1.square_ref());
            let two_a2 = Complex::with_val(prec, &s2.quad * 2u32);
            let d1 = Complex::with_val(prec, &two_a2 * &m1) + &s2.lin;
            let d2 = Complex::with_val(prec, &two_a1c * &two_a2) * &m2
                + (Complex::with_val(prec, &two_a1c * &s2.lin) + Complex::with_val(prec, &b1c * &two_a2)) * &m1
                + Complex::with_val(prec, &b1c * &s2.lin);
            first_moment.push(Complex::with_val(prec, &d1 * &i0));
            second_moment.push(Complex::with_val(prec, &d2 * &i0));
            norm.push(i0);
        }
    }
    let n = compensated_complex_sum(&norm, prec);
    let hbar = &consts.hbar;
    // <p> = (hbar / i) sum / N, whose real part is hbar Im(sum / N)
    let p1 = compensated_complex_sum(&first_moment, prec) / &n;
    let p_mean = Float::with_val(prec, p1.imag() * hbar);
    let p2 = compensated_complex_sum(&second_moment, prec) / &n;
    let p_sq_mean = Float::with_val(prec, p2.real() * Float::with_val(prec, hbar.square_ref()));
    let var = Float::with_val(prec, &p_sq_mean - Float::with_val(prec, p_mean.square_ref()));
    if var <= 0 {
        return Err(QpcError::Invariant(format!("plane {plane}: momentum variance is not positive")));
    }
    let delta_p = var.sqrt();
    let delta_v = Float::with_val(prec, &delta_p / &consts.mass);
    Ok(MomentumSpread {
        plane,
        p_mean,
        p_sq_mean,
        delta_p,
        delta_v,
    })
}

/// Classical superposition arriving at each slit plane, before its window.
pub fn classical_plane_states(
    geom: &SetupGeometry,
    consts: &PhysicalConstants,
    iterates: &PlaneIterates,
    schedule: &TimeSchedule,
) -> Vec<Vec<GaussianState>> {
    let mut layer = vec![GaussianState::from_initial(&iterates.initial)];
    let mut out = Vec::with_capacity(geom.planes.len());
    for (j, plane) in geom.planes.iter().enumerate() {
        out.push(layer.clone());
        let mut next = Vec::with_capacity(layer.len() * plane.centers.len());
        for s in &layer {
            for x in &plane.centers {
                let mut st = s.clone();
                st.window(&plane.half_width, x);
                st.propagate(consts, &schedule.steps[j + 1]);
                next.push(st);
            }
        }
        layer = next;
    }
    out
}

/// Everything needed to evolve exotic trajectories.
#[derive(Debug, Clone)]
pub struct ExoticModel {
    pub geometry: SetupGeometry,
    pub constants: PhysicalConstants,
    pub schedule: TimeSchedule,
    pub initial: GaussianState,
    pub spreads: Vec<MomentumSpread>,
    pub exotic_order: u32,
}

impl ExoticModel {
    pub fn new(geom: &SetupGeometry, consts: &PhysicalConstants, iterates: &PlaneIterates, n_e: u32) -> Result<Self> {
        let schedule = derive_schedule(geom, consts);
        let spreads = classical_plane_states(geom, consts, iterates, &schedule)
            .iter()
            .enumerate()
            .map(|(j, states)| momentum_spread(states, consts, j + 1))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            geometry: geom.clone(),
            constants: consts.clone(),
            schedule,
            initial: GaussianState::from_initial(&iterates.initial),
            spreads,
            exotic_order: n_e,
        })
    }

    /// `t^E = m dx / delta_p` for a hop of length `dx` on plane `plane` (0-based).
    pub fn hop_time(&self, plane: usize, dx: &Float) -> Float {
        let prec = dx.prec();
        Float::with_val(prec, &self.constants.mass * dx) / &self.spreads[plane].delta_p
    }

    /// Applies one plane: entrance window, hops, then flight to the next plane.
    pub fn apply_plane(&self, state: &mut GaussianState, plane: usize, visits: &[usize]) -> Result<()> {
        let p = &self.geometry.planes[plane];
        state.window(&p.half_width, &p.centers[visits[0]]);
        for w in visits.windows(2) {
            let dx = Float::with_val(self.geometry.prec(), &p.centers[w[1]] - &p.centers[w[0]]).abs();
            if dx.is_zero() {
                return Err(QpcError::Invariant(format!("plane {}: zero hop distance", plane + 1)));
            }
            state.propagate(&self.constants, &self.hop_time(plane, &dx));
            state.window(&p.half_width, &p.centers[w[1]]);
        }
        state.propagate(&self.constants, &self.schedule.steps[plane + 1]);
        Ok(())
    }

    pub fn final_state(&self, traj: &ExoticTrajectory) -> Result<GaussianState> {
        let mut st = self.initial.clone();
        for (j, v) in traj.visits.iter().enumerate() {
            self.apply_plane(&mut st, j, v)?;
        }
        Ok(st)
    }
}

pub fn exotic_amplitude(model: &ExoticModel, traj: &ExoticTrajectory, x: &Float) -> Result<Complex> {
    Ok(model.final_state(traj)?.evaluate(x))
}

/// Adds `exp(log_amp + quad x_k^2 + lin x_k)` for consecutive samples into `acc`.
fn accumulate_state(state: &GaussianState, k_min: i64, ts: &Float, ts2: &Float, acc: &mut [Complex]) {
    let prec = state.prec();
    let q = (Complex::with_val(prec, &state.quad * ts2) * 2u32).exp();
    let lin_ts = Complex::with_val(prec, &state.lin * ts);
    for (block, chunk) in acc.chunks_mut(ANCHOR_SPACING).enumerate() {
        let k0 = k_min + (block * ANCHOR_SPACING) as i64;
        let x0 = Float::with_val(prec, ts * k0);
        let mut v = state.evaluate(&x0);
        let mut r = Complex::with_val(prec, &state.quad * ts2) * (2 * k0 + 1);
        r += &lin_ts;
        let mut r = r.exp();
        let n = chunk.len();
        for (i, slot) in chunk.iter_mut().enumerate() {
            *slot += &v;
            if i + 1 < n {
                v *= &r;
                r *= &q;
            }
        }
    }
}

/// Classical plus exotic intensity up to order `n_e`.
///
/// The exotic sum is partitioned by the first-plane visit sequence; each part
/// is accumulated sequentially with guard bits and the parts are combined with
/// an exactly rounded sum, so the result does not depend on thread scheduling.
pub fn exotic_screen_intensity(
    model: &ExoticModel,
    coupling: &CouplingModel,
    k_min: i64,
    k_max: i64,
    ts: &Float,
    path_cap: u64,
) -> Result<ScreenSamples> {
    let geom = &model.geometry;
    let n_e = model.exotic_order;
    let counts = count_exotic(&geom.slit_counts(), n_e)?;
    if counts.sensor_total() > path_cap as u128 {
        return Err(QpcError::Resource(format!(
            "{} sensor paths exceed the cap of {path_cap}",
            counts.sensor_total()
        )));
    }
    if k_min > k_max {
        return Err(QpcError::Invariant(format!("empty sample range [{k_min}, {k_max}]")));
    }
    let prec = coupling.prec;
    let positions = sample_positions(k_min, k_max, ts);
    let classical_paths: Vec<TrajectorySelector> = enumerate_paths(geom).collect();
    let classical = amplitude_sums(coupling, &classical_paths, &positions);

    let sequences: Vec<Vec<Vec<usize>>> = geom.slit_counts().iter().map(|&s| visit_sequences(s, n_e)).collect();
    let len = positions.len();
    let acc_prec = prec + ACCUMULATOR_GUARD;
    let ts2 = Float::with_val(prec, ts.square_ref());

    let partials: Vec<Vec<Complex>> = sequences[0]
        .par_iter()
        .map(|first| -> Result<Vec<Complex>> {
            let mut acc = vec![Complex::new(acc_prec); len];
            let mut st = model.initial.clone();
            model.apply_plane(&mut st, 0, first)?;
            let mut stack = vec![(1usize, st, first.len() > 1)];
            while let Some((plane, state, exotic)) = stack.pop() {
                if plane == sequences.len() {
                    if exotic {
                        accumulate_state(&state, k_min, ts, &ts2, &mut acc);
                    }
                    continue;
                }
                for seq in sequences[plane].iter().rev() {
                    let mut next = state.clone();
                    model.apply_plane(&mut next, plane, seq)?;
                    stack.push((plane + 1, next, exotic || seq.len() > 1));
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let sums: Vec<Complex> = (0..len)
        .map(|i| {
            let parts: Vec<Complex> = partials.iter().map(|p| p[i].clone()).collect();
            let exotic = compensated_complex_sum(&parts, prec);
            compensated_complex_sum(&[classical[i].clone(), exotic], prec)
        })
        .collect();
    samples_from_sums(coupling, &sums, &positions, ts, Some(n_e))
}
