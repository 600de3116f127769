//! Convergence of z_N → z and v_N → v as the truncation level grows.

use std::f64::consts::PI;

use wiener_nlw::experiments::{truncation_convergence, BaseData, EnsembleSpec, Level, SweepParams};
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
        members: 10,
        seed: 4,
        cutoff: Cutoff::SmoothPsi,
    }
    .prepare()?;
    let params = SweepParams {
        levels: vec![Level::dyadic(1)?, Level::dyadic(2)?, Level::dyadic(4)?, Level::dyadic(8)?],
        final_time: 1.0,
        solver: SolverConfig::new(0.02),
        s: None,
        alpha: None,
        samples_per_unit: None,
        control: true,
    };
    let (report, _) = truncation_convergence(&ensemble, &params)?;
    for (i, n) in report.levels.iter().enumerate() {
        println!(
            "N = {n:>2}: median ‖z - z_N‖ {:.3e}, median ‖v - v_N‖ {:.3e}",
            report.median_forcing_diff[i], report.median_solution_diff[i]
        );
    }
    println!("forcing slope {:.3} (rate α = {:.3})", report.forcing_slope, report.alpha);
    println!("solution strictly decreasing: {}", report.strictly_decreasing);
    println!("median half-step control error {:.2e}", report.median_control_error.unwrap_or(f64::NAN));
    Ok(())
}
