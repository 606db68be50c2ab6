#![allow(dead_code)]

use std::path::PathBuf;

use qpc_core::setup::{Plane, PhysicalConstants, SetupGeometry};
use qpc_core::{load_config, parse_config, Setup};
use rand::Rng;
use rug::Float;

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

pub fn load(name: &str) -> Setup {
    load_config(&config_path(name)).expect("bundled configuration loads")
}

pub fn load_with_digits(name: &str, digits: u32) -> Setup {
    let text = std::fs::read_to_string(config_path(name)).expect("bundled configuration exists");
    parse_config(&text, Some(digits)).expect("bundled configuration loads")
}

pub fn electron(prec: u32) -> PhysicalConstants {
    PhysicalConstants {
        mass: Float::with_val(prec, 9.11e-31),
        hbar: Float::with_val(prec, 1.05e-34),
        v_z: Float::with_val(prec, 1.46e7),
    }
}

/// Three slits per plane, widths 150 to 300 nm, inter-plane gaps of a few
/// millimetres and 1 m source and detector legs. Paths through such stacks
/// keep amplitudes within reach of double-precision quadrature.
pub fn random_geometry<R: Rng>(rng: &mut R, slit_planes: usize, prec: u32) -> SetupGeometry {
    let f = |v: f64| Float::with_val(prec, v);
    let mut planes = Vec::with_capacity(slit_planes);
    let mut distances = vec![f(1.0)];
    for j in 0..slit_planes {
        let beta: f64 = rng.gen_range(1.5e-7..3e-7);
        let gap = beta * rng.gen_range(3.0..6.0);
        let off: f64 = rng.gen_range(-1e-6..1e-6);
        planes.push(Plane {
            half_width: f(beta),
            centers: vec![f(off - gap), f(off), f(off + gap)],
        });
        if j + 1 < slit_planes {
            distances.push(f(rng.gen_range(1e-3..5e-3)));
        }
    }
    distances.push(f(1.0));
    SetupGeometry {
        planes,
        distances,
        source_width: f(5e-7),
        separation_factor: f(1.0),
        overlap_threshold: 1e-6,
    }
}
