//! Energy of frequency-truncated solutions v_N across N.
//!
//! Each member's data is truncated to |ξ| ≲ N, the forced equation is solved
//! for every N in lockstep, and the median of sup_t ‖(v_N, ∂ₜv_N)‖_{H¹} is
//! reported per level.

use std::f64::consts::PI;

use wiener_nlw::experiments::{uniform_energy, BaseData, EnsembleSpec, Level, SweepParams};
use wiener_nlw::grid::{make_grid, Cutoff};
use wiener_nlw::randomization::{DistributionKind, RoughProfile};
use wiener_nlw::solver::SolverConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ensemble = EnsembleSpec {
        grid: make_grid(3, 16, 2.0 * PI / 1.2, 3.0)?,
        base: BaseData::Rough {
            s: 0.75,
            profile: RoughProfile::PowerLaw,
            data_seed: 0,
            norm: Some(10.0),
        },
        distribution: DistributionKind::StandardGaussianComplex,
        members: 20,
        seed: 3,
        cutoff: Cutoff::SmoothPsi,
    }
    .prepare()?;
    let params = SweepParams {
        levels: vec![Level::dyadic(2)?, Level::dyadic(4)?, Level::dyadic(8)?, Level::Full],
        final_time: 1.0,
        solver: SolverConfig::new(0.02),
        s: None,
        alpha: None,
        samples_per_unit: None,
        control: false,
    };
    let (envelope, _) = uniform_energy(&ensemble, &params)?;
    for row in &envelope.rows {
        println!("N = {:>4}: median {:.4}, q90 {:.4}, max {:.4}", row.level, row.median, row.q90, row.max);
    }
    println!("median spread {:.3}, within factor two: {}", envelope.median_spread, envelope.within_factor_two);
    Ok(())
}
