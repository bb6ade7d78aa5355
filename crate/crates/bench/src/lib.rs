//! Shared fixtures for the benchmarks.

use esf::estimators::Dataset;
use esf::montecarlo::{draw_spatial, simulate_y, simulated_dataset, SimulationSpec};
use esf::seed;
use esf::{EigenBasis, SpatialWeights};

pub struct Fixture {
    pub data: Dataset,
    pub w: SpatialWeights,
    pub basis: EigenBasis,
}

/// One setup-A dataset (first-order lag) with its weights and eigenbasis.
pub fn lag_fixture(n: usize, mu: f64, rho: f64, seed_value: u64) -> Fixture {
    let spec = SimulationSpec::setup_a(n, mu, rho);
    let draw = draw_spatial(n, mu, &spec.rho, seed_value).expect("weights draw");
    let mut rng = seed::stream(seed_value, &[1]);
    let (y, x) = simulate_y(&spec, &draw.w, &draw.basis, &mut rng).expect("lag system solves");
    Fixture {
        data: simulated_dataset(y, &x).expect("dataset"),
        w: draw.w,
        basis: draw.basis,
    }
}
