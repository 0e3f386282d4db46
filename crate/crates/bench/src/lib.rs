//! Fixtures shared by the engine benchmarks.

use spincat::cat_analysis::gaussian_mixture;
use spincat::drive::DriveProfile;
use spincat::observables::{DensitySnapshot, SpatialGrid};
use spincat::quantum::{coherent_state, CoherentInit, QuantumModel, Spinor, SpinorFockState};

/// Displaced coherent state at `z = -20`, spin up, in an `n`-state basis.
pub fn displaced_state(n: usize) -> SpinorFockState {
    coherent_state(CoherentInit::from_means(-20.0, 0.0), Spinor::from_angles(0.0, 0.0), n).expect("basis covers z = -20")
}

/// Same state with the spin on the equator, so both components are populated.
pub fn equatorial_state(n: usize) -> SpinorFockState {
    coherent_state(
        CoherentInit::from_means(-20.0, 0.0),
        Spinor::from_angles(std::f64::consts::FRAC_PI_2, 0.0),
        n,
    )
    .expect("basis covers z = -20")
}

pub fn fig3_model() -> QuantumModel {
    QuantumModel::new(40.0, 0.03, DriveProfile::fig3())
}

/// Two well separated peaks with a 3:1 area split.
pub fn two_peak_density(points: usize) -> DensitySnapshot {
    let grid = SpatialGrid::new(-30.0, 30.0, points).expect("valid grid");
    gaussian_mixture(grid, 0.0, &[(0.75, -6.0, 0.7), (0.25, 6.0, 0.7)]).expect("finite mixture")
}
