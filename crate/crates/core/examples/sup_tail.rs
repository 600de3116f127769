//! Tail of sup_t ‖S(t)(u₀^ω, u₁^ω)‖_{L⁶} over a dyadic time grid, and the
//! decay of dyadic increments for band-limited data.

use std::f64::consts::PI;

use wiener_nlw::experiments::{band_limited_pair, increment_decay, sup_tail_study, BaseData, EnsembleSpec};
use wiener_nlw::grid::{make_grid, Cutoff};
use wiener_nlw::propagator::{dyadic_time_sup, Component, LinearEvolution};
use wiener_nlw::randomization::DistributionKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let grid = make_grid(3, 16, 2.0 * PI / 0.8, 3.0)?;
    let ensemble = EnsembleSpec {
        grid,
        base: BaseData::Gaussian {
            amplitude: 1.0,
            width: 1.0,
            velocity_amplitude: 0.0,
        },
        distribution: DistributionKind::Rademacher,
        members: 200,
        seed: 2,
        cutoff: Cutoff::SmoothPsi,
    }
    .prepare()?;
    let study = sup_tail_study(&ensemble, 6.0, &[1.0, 4.0], 8)?;
    for (t, (s, tilde)) in [1.0, 4.0].iter().zip(study.s_tails.iter().zip(&study.tilde_tails)) {
        let slope = |c: &wiener_nlw::experiments::TailCurve| c.fit.as_ref().map_or(f64::NAN, |f| f.slope);
        println!("T = {t}: S slope {:.3}, S̃ slope {:.3}", slope(s), slope(tilde));
    }

    let data = band_limited_pair(grid, 4.0, 9);
    let sup = dyadic_time_sup(&LinearEvolution::new(&data, Component::Position), (0.0, 1.0), 10, 6.0, true);
    let check = increment_decay(&sup.increments, 1.0, 4.0);
    let shown: Vec<String> = sup.increments.iter().map(|x| format!("{x:.3e}")).collect();
    println!("increments: {}", shown.join(" "));
    println!("fine-level rate {:.3} over {} levels (0.5 expected)", check.fine_rate, check.fine_levels);
    Ok(())
}
