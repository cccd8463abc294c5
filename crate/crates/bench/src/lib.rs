//! Benchmark fixtures shared by the criterion targets.

use cgflow::fields::{sample_poisson_inclusions, sample_stream_field, FgfParams, OverlapMode, PoissonParams};
use cgflow::{CoefficientField, Region, TriadicCube};

/// High-contrast Poisson inclusions on the level-`level` cube.
pub fn poisson(level: u32, seed: u64) -> CoefficientField {
    let p = PoissonParams { rho1: 0.02, rho2: 0.02, lambda: 0.1, big_lambda: 10.0, radius: 1.0, mode: OverlapMode::Indicator };
    sample_poisson_inclusions(&p, &Region::from_cube(&TriadicCube::origin(2, level)), seed).unwrap()
}

/// Divergence-free stream field on the level-`level` cube.
pub fn stream(level: u32, seed: u64) -> CoefficientField {
    sample_stream_field(1.0, &FgfParams::new(0.5, 0, 3), &Region::from_cube(&TriadicCube::origin(2, level)), seed).unwrap()
}
