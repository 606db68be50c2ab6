//! End-to-end runs: a parsed set-up turned into detector samples and the
//! quantities the period finder works on.

use rug::Float;

use crate::analysis::{lattice_map, lattice_points, LatticeFailure, PeriodModel};
use crate::error::{QpcError, Result};
use crate::exotic::{exotic_screen_intensity, ExoticModel};
use crate::intensity::{enumerate_paths, screen_intensity, ScreenSamples, TrajectorySelector};
use crate::propagator::{coupling_for, CouplingModel, PlaneIterates};
use crate::setup::Setup;

#[derive(Debug, Clone)]
pub struct Simulation {
    pub setup: Setup,
    pub iterates: PlaneIterates,
    pub coupling: CouplingModel,
    pub paths: Vec<TrajectorySelector>,
}

impl Simulation {
    pub fn new(setup: Setup) -> Result<Self> {
        setup.geometry.validate()?;
        setup.experiment.validate()?;
        let total = setup.geometry.path_count();
        if total > setup.experiment.path_cap as u128 {
            return Err(QpcError::Resource(format!(
                "{total} paths exceed the cap of {}",
                setup.experiment.path_cap
            )));
        }
        let (iterates, mut coupling) = coupling_for(&setup.geometry, &setup.constants)?;
        if let Some(d) = &setup.experiment.d_override {
            coupling = coupling.with_d_override(d)?;
        }
        let paths = enumerate_paths(&setup.geometry).collect();
        Ok(Self {
            setup,
            iterates,
            coupling,
            paths,
        })
    }

    pub fn prec(&self) -> u32 {
        self.coupling.prec
    }

    pub fn ts(&self) -> &Float {
        &self.setup.experiment.sampling_interval
    }

    /// Classical screen over the configured sample range.
    pub fn screen(&self) -> Result<ScreenSamples> {
        let e = &self.setup.experiment;
        screen_intensity(&self.coupling, &self.paths, e.k_min, e.k_max, self.ts())
    }

    /// Screen including trajectories with up to `n_e` extra visits per plane.
    pub fn screen_with_order(&self, n_e: u32) -> Result<ScreenSamples> {
        if n_e == 0 {
            return self.screen();
        }
        let e = &self.setup.experiment;
        let model = ExoticModel::new(&self.setup.geometry, &self.setup.constants, &self.iterates, n_e)?;
        exotic_screen_intensity(&model, &self.coupling, e.k_min, e.k_max, self.ts(), e.path_cap)
    }

    pub fn lattice_points(&self) -> Vec<Float> {
        lattice_points(&self.coupling, &self.paths, self.ts())
    }

    pub fn period_model(&self, k_tilde: u32, tol: f64) -> std::result::Result<PeriodModel, LatticeFailure> {
        let b = self.lattice_points();
        let lattice = lattice_map(&b, k_tilde, tol)?;
        Ok(PeriodModel::from_coupling(&self.coupling, &self.paths, self.ts(), &lattice))
    }
}
