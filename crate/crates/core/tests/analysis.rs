mod common;

use proptest::prelude::*;
use rug::{Complex, Float};

use qpc_core::analysis::{
    add_noise, crb, lattice_map, local_maxima, r_curve, sda_errors, theorem1_check, NoiseModel, PeriodModel,
};
use qpc_core::numerics::relative_difference;
use qpc_core::setup::{Plane, SetupGeometry};
use qpc_core::Simulation;

const PREC: u32 = 213;

fn model(g1: &[f64], g3: &[(f64, f64)], g2: &[i64], k_tilde: u32) -> PeriodModel {
    PeriodModel {
        k_tilde,
        g1: g1.iter().map(|&v| Float::with_val(PREC, v)).collect(),
        g3: g3.iter().map(|&v| Complex::with_val(PREC, v)).collect(),
        g2_tilde: g2.to_vec(),
    }
}

fn valid(curve: Vec<(u32, Option<Float>)>) -> Vec<(u32, Float)> {
    curve.into_iter().filter_map(|(m, r)| r.map(|r| (m, r))).collect()
}

/// With only a few periods of data the ratio also has minor maxima near
/// rational approximants, so the multiples of the period are checked as
/// maxima that dominate every size within a third of a period.
#[test]
fn synthetic_period_twelve_peaks_at_multiples() {
    for g3 in [
        [(1.0, 0.0), (0.7, 0.2), (0.4, -0.5)],
        [(1.0, 0.0), (0.3, 0.0), (0.2, 0.0)],
    ] {
        let m = model(&[0.0, 0.0, 0.0], &g3, &[0, 5, 7], 12);
        let samples: Vec<Float> = (0..40).map(|k| m.intensity(k)).collect();
        let curve = valid(r_curve(&samples, 40).unwrap());
        let peaks = local_maxima(&curve, 0.05);
        let r = |size: u32| curve.iter().find(|(s, _)| *s == size).unwrap().1.to_f64();
        for multiple in [12, 24, 36] {
            assert!(peaks.contains(&multiple), "{multiple} missing from {peaks:?}");
            for size in multiple - 4..=(multiple + 4).min(40) {
                assert!(size == multiple || r(size) < r(multiple), "R[{size}] >= R[{multiple}]");
            }
        }
    }
}

#[test]
fn pure_growth_has_no_fluctuation() {
    let samples: Vec<Float> = (0..60).map(|k| Float::with_val(PREC, 0.03 * k as f64).exp()).collect();
    let curve = valid(r_curve(&samples, 60).unwrap());
    assert!(local_maxima(&curve, 0.05).is_empty());
}

#[test]
fn sim1_lattice_holds_at_173_only() {
    let sim = Simulation::new(common::load("sim1")).unwrap();
    let b = sim.lattice_points();
    assert!(lattice_map(&b, 173, 1e-6).is_ok());
    let failure = lattice_map(&b, 172, 1e-6).unwrap_err();
    assert!(failure.error > 0.01);
}

#[test]
fn lattice_agrees_with_error_curve() {
    let sim = Simulation::new(common::load("sim2")).unwrap();
    let b = sim.lattice_points();
    let curve = sda_errors(&b, 200).unwrap();
    for m in 1..=200u32 {
        let tol = 0.1;
        assert_eq!(lattice_map(&b, m, tol).is_ok(), curve.max_at(m).to_f64() <= tol, "M = {m}");
        let (lo, mean, hi) = (curve.eps_min[m as usize - 1].clone(), curve.mean_at(m), curve.max_at(m));
        assert!(lo >= 0 && lo <= *mean && mean <= hi && *hi <= 0.5);
    }
}

#[test]
fn single_path_satisfies_theorem() {
    let m = model(&[0.05], &[(1.0, 0.0)], &[3], 12);
    let observed: Vec<Float> = (0..=12).map(|k| m.intensity(k)).collect();
    let r = theorem1_check(Some(&m), 12, Some(&observed));
    assert!(r.oscillation_bounded && r.envelope_monotone && r.conclusion_asserted);
    assert_eq!(r.conclusion_holds, Some(true));
    assert!(observed.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn growing_minority_path_breaks_monotonicity() {
    let m = model(&[0.02, -0.1], &[(1.0, 0.0), (3.0, 0.0)], &[0, 4], 12);
    let observed: Vec<Float> = (0..=12).map(|k| m.intensity(k)).collect();
    let r = theorem1_check(Some(&m), 12, Some(&observed));
    assert!(!r.envelope_monotone);
    assert!(!r.conclusion_asserted);
    assert!(r.first_violation.is_some());
}

#[test]
fn failed_lattice_reports_no_conditions() {
    let r = theorem1_check(None, 172, None);
    assert!(!r.lattice_ok && !r.conclusion_asserted);
}

#[test]
fn noise_is_seed_determined() {
    let sim = Simulation::new(common::load_with_digits("sim1", 32)).unwrap();
    let screen = sim.screen().unwrap();
    let noise = NoiseModel {
        sigma: Some(1e-3),
        ..Default::default()
    };
    let a = add_noise(&screen, &noise, 9).unwrap();
    let b = add_noise(&screen, &noise, 9).unwrap();
    let c = add_noise(&screen, &noise, 10).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_ne!(a.to_csv(), c.to_csv());
    let silent = NoiseModel {
        sigma: Some(0.0),
        ..Default::default()
    };
    assert_eq!(add_noise(&screen, &silent, 9).unwrap(), screen);
}

#[test]
fn uninformative_samples_give_infinite_bound() {
    let m = model(&[0.01], &[(1.0, 0.0)], &[0], 12);
    let sig = vec![Float::with_val(PREC, 0.1); 5];
    let r = crb(&m, &[0, 1, 2, 3, 4], &sig, 0.0).unwrap();
    assert!(r.crb.is_infinite());
}

#[test]
fn lower_precision_agrees_with_higher() {
    let lo = Simulation::new(common::load_with_digits("sim1", 40)).unwrap();
    let hi = Simulation::new(common::load_with_digits("sim1", 80)).unwrap();
    let (a, b) = (lo.screen().unwrap(), hi.screen().unwrap());
    for (x, y) in a.rescaled.iter().zip(&b.rescaled) {
        assert!(relative_difference(x, y) < 1e-30);
    }
}

fn geometry(beta: u32, centers: &[Vec<i32>]) -> SetupGeometry {
    let f = |v: f64| Float::with_val(64, v);
    SetupGeometry {
        planes: centers
            .iter()
            .map(|c| Plane {
                half_width: f(beta as f64),
                centers: c.iter().map(|&v| f(v as f64)).collect(),
            })
            .collect(),
        distances: vec![f(1.0); centers.len() + 1],
        source_width: f(1.0),
        separation_factor: f(1.0),
        overlap_threshold: 1e-6,
    }
}

proptest! {
    #[test]
    fn geometry_accepted_iff_constraints_hold(
        beta in 1u32..20,
        centers in prop::collection::vec(prop::collection::vec(-200i32..200, 1..6), 1..4),
    ) {
        let g = geometry(beta, &centers);
        let expected = centers.iter().all(|c| {
            c.len() % 2 == 1 && c.windows(2).all(|w| w[1] - w[0] > 2 * beta as i32)
        });
        prop_assert_eq!(g.validate().is_ok(), expected);
    }

    #[test]
    fn sorted_wide_gaps_are_accepted(beta in 1u32..20, slack in 1i32..50, count in 0usize..3) {
        let gap = 2 * beta as i32 + slack;
        let c: Vec<i32> = (0..2 * count as i32 + 1).map(|i| i * gap).collect();
        prop_assert!(geometry(beta, &[c]).validate().is_ok());
    }
}

#[test]
fn full_precision_sim1_rounds_to_published_digits() {
    let full = common::load("sim1").geometry;
    let rounded = common::load("sim1_rounded").geometry;
    let tenth_nm = |v: &Float| (Float::with_val(v.prec(), v * 1e10).round()).to_f64();
    for (a, b) in full.planes.iter().zip(&rounded.planes) {
        assert_eq!(tenth_nm(&a.half_width), tenth_nm(&b.half_width));
        for (x, y) in a.centers.iter().zip(&b.centers) {
            assert_eq!(tenth_nm(x), tenth_nm(y));
        }
    }
    assert_eq!(full.distances, rounded.distances);
}
