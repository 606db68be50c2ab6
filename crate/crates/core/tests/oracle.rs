mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::{Complex, Float};

use qpc_core::exotic::momentum_spread;
use qpc_core::intensity::{amplitude_sums, decode_path, path_amplitude, sample_positions};
use qpc_core::oracle::{quadrature_amplitude, quadrature_moments, QuadratureSpec, Rule, Scaled, WindowShape};
use qpc_core::propagator::{coupling_for, GaussianState};
use qpc_core::setup::{Plane, SetupGeometry};

const PREC: u32 = 128;

fn f(v: f64) -> Float {
    Float::with_val(PREC, v)
}

fn single_slit(center: f64) -> SetupGeometry {
    SetupGeometry {
        planes: vec![Plane {
            half_width: f(2e-7),
            centers: vec![f(center)],
        }],
        distances: vec![f(1.0), f(1.0)],
        source_width: f(5e-7),
        separation_factor: f(1.0),
        overlap_threshold: 1e-6,
    }
}

fn sum_scaled(values: &[Scaled]) -> Complex {
    values
        .iter()
        .fold(Complex::new(PREC), |acc, v| acc + v.to_complex(PREC))
}

#[test]
fn single_centered_slit_matches_closed_form() {
    let consts = common::electron(PREC);
    let geom = single_slit(0.0);
    let (_, cm) = coupling_for(&geom, &consts).unwrap();
    let traj = decode_path(&geom, 0);
    let x = [f(0.0)];
    let q = quadrature_amplitude(&geom, &consts, &traj, &x, &QuadratureSpec::default()).unwrap();
    assert!(q.converged);
    assert!(q.values[0].relative_error(&path_amplitude(&cm, &traj, &x[0])) < 1e-8);
}

#[test]
fn mirrored_geometry_gives_mirrored_amplitude() {
    let consts = common::electron(PREC);
    let spec = QuadratureSpec::default();
    let xs = [f(3e-5), f(-7e-5)];
    let neg: Vec<Float> = xs.iter().map(|x| Float::with_val(PREC, -x)).collect();
    let (right, left) = (single_slit(4e-7), single_slit(-4e-7));
    let a = quadrature_amplitude(&right, &consts, &decode_path(&right, 0), &xs, &spec).unwrap();
    let b = quadrature_amplitude(&left, &consts, &decode_path(&left, 0), &neg, &spec).unwrap();
    for (p, q) in a.values.iter().zip(&b.values) {
        assert!(p.relative_error(&q.to_complex(PREC)) < 1e-10);
    }
}

#[test]
fn node_doubling_reports_small_error() {
    let consts = common::electron(PREC);
    let geom = single_slit(1e-7);
    let traj = decode_path(&geom, 0);
    let spec = QuadratureSpec {
        rule: Rule::Trapezoid,
        ..Default::default()
    };
    let q = quadrature_amplitude(&geom, &consts, &traj, &[f(1e-5)], &spec).unwrap();
    assert!(q.error_estimate < 1e-9, "estimate {}", q.error_estimate);
}

#[test]
fn rectangular_window_runs_and_differs_from_gaussian() {
    let consts = common::electron(PREC);
    let geom = single_slit(0.0);
    let traj = decode_path(&geom, 0);
    let x = [f(0.0)];
    let gauss = quadrature_amplitude(&geom, &consts, &traj, &x, &QuadratureSpec::default()).unwrap();
    let rect = quadrature_amplitude(
        &geom,
        &consts,
        &traj,
        &x,
        &QuadratureSpec {
            window: WindowShape::Rectangular,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(rect.values[0].mantissa.norm().is_finite());
    assert!(gauss.values[0].relative_error(&rect.values[0].to_complex(PREC)) > 1e-3);
}

#[test]
fn plane_limit_is_enforced() {
    let consts = common::electron(PREC);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let geom = common::random_geometry(&mut rng, 4, PREC);
    let traj = decode_path(&geom, 0);
    assert!(quadrature_amplitude(&geom, &consts, &traj, &[f(0.0)], &QuadratureSpec::default()).is_err());
}

#[test]
fn screen_amplitude_matches_summed_quadrature() {
    let consts = common::electron(PREC);
    let spec = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ts = f(2e-5);
    for planes in [1, 2] {
        let geom = common::random_geometry(&mut rng, planes, PREC);
        let (_, cm) = coupling_for(&geom, &consts).unwrap();
        let paths: Vec<_> = (0..geom.path_count() as u64).map(|n| decode_path(&geom, n)).collect();
        let positions = sample_positions(-5, 5, &ts);
        let xs: Vec<Float> = positions.iter().map(|p| p.1.clone()).collect();
        let sums = amplitude_sums(&cm, &paths, &positions);
        let per_path: Vec<Vec<Scaled>> = paths
            .iter()
            .map(|p| quadrature_amplitude(&geom, &consts, p, &xs, &spec).unwrap().values)
            .collect();
        for (i, sum) in sums.iter().enumerate() {
            let column: Vec<Scaled> = per_path.iter().map(|v| v[i]).collect();
            let quad = sum_scaled(&column);
            let diff = Complex::with_val(PREC, &quad - sum);
            let err = Float::with_val(PREC, diff.abs_ref()) / Float::with_val(PREC, sum.abs_ref());
            assert!(err < 1e-6, "N = {}, point {i}: {}", planes + 1, err.to_f64());
        }
    }
}

fn gaussian(la: (f64, f64), a: (f64, f64), b: (f64, f64)) -> GaussianState {
    GaussianState {
        log_amp: Complex::with_val(PREC, la),
        quad: Complex::with_val(PREC, a),
        lin: Complex::with_val(PREC, b),
    }
}

#[test]
fn moments_of_simple_packets() {
    let consts = common::electron(PREC);
    let spec = QuadratureSpec::default();
    let sigma = 2.5e-7;
    let a = -1.0 / (4.0 * sigma * sigma);
    let hbar = consts.hbar.to_f64();

    let rest = quadrature_moments(&[gaussian((0.0, 0.0), (a, 0.0), (0.0, 0.0))], &consts.hbar, &spec).unwrap();
    assert!(rest.p_mean.abs() < 1e-12 * hbar / sigma);
    let dp = rest.p_sq_mean.sqrt();
    let expect = hbar / (2.0 * sigma);
    assert!((dp - expect).abs() / expect < 1e-8, "{dp} vs {expect}");

    let boost = 3e6;
    let moving = quadrature_moments(&[gaussian((0.0, 0.0), (a, 0.0), (0.0, boost))], &consts.hbar, &spec).unwrap();
    assert!((moving.p_mean - hbar * boost).abs() / (hbar * boost) < 1e-8);
}

#[test]
fn moments_of_random_superpositions_match_closed_form() {
    let consts = common::electron(PREC);
    let spec = QuadratureSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    for _ in 0..20 {
        let terms = rng.gen_range(1..=3);
        let states: Vec<GaussianState> = (0..terms)
            .map(|_| {
                let sigma: f64 = rng.gen_range(1.5e-7..4e-7);
                let center: f64 = rng.gen_range(-1e-6..1e-6);
                let re = -1.0 / (4.0 * sigma * sigma);
                let im = rng.gen_range(-2.0..2.0) * re;
                let lin_im = rng.gen_range(-5e6..5e6);
                gaussian(
                    (rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0)),
                    (re, im),
                    (-2.0 * re * center, lin_im),
                )
            })
            .collect();
        let closed = momentum_spread(&states, &consts, 1).unwrap();
        let quad = quadrature_moments(&states, &consts.hbar, &spec).unwrap();
        let scale = closed.p_sq_mean.to_f64().sqrt();
        assert!((quad.p_mean - closed.p_mean.to_f64()).abs() / scale < 1e-6);
        assert!((quad.p_sq_mean - closed.p_sq_mean.to_f64()).abs() / closed.p_sq_mean.to_f64() < 1e-6);
    }
}
