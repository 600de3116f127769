//! Frequency of members outside the set where the forcing bounds hold.

use std::f64::consts::PI;

use wiener_nlw::experiments::{exceptional_set_probe, quantile, BaseData, EnsembleSpec, ExceptionalParams};
use wiener_nlw::grid::{make_grid, Cutoff};
use wiener_nlw::randomization::DistributionKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ensemble = EnsembleSpec {
        grid: make_grid(3, 16, 2.0 * PI / 0.8, 3.0)?,
        base: BaseData::Gaussian {
            amplitude: 1.0,
            width: 1.0,
            velocity_amplitude: 0.0,
        },
        distribution: DistributionKind::UniformDisk,
        members: 200,
        seed: 5,
        cutoff: Cutoff::SmoothPsi,
    }
    .prepare()?;
    let mut params = ExceptionalParams {
        final_time: 1.0,
        alpha: 0.25,
        threshold: f64::INFINITY,
        sweep_thresholds: Vec::new(),
        k: 10.0,
        theta: 0.2,
        tau: 0.25,
        samples_per_unit: None,
        solver: None,
    };
    // One pass to place thresholds at quantiles of the observed norms.
    let probe = exceptional_set_probe(&ensemble, &params)?;
    let norms: Vec<f64> = probe.rows.iter().map(|r| r.bessel_norm).collect();
    params.threshold = quantile(&norms, 0.9);
    params.sweep_thresholds = [0.5, 0.75, 0.9, 0.99].iter().map(|&p| quantile(&norms, p)).collect();
    let report = exceptional_set_probe(&ensemble, &params)?;
    println!(
        "threshold {:.4}: violation {:.3} in [{:.3}, {:.3}], tail estimate {:.3}",
        report.threshold,
        report.bound_violation,
        report.bound_violation_interval.0,
        report.bound_violation_interval.1,
        report.tail_estimate
    );
    for (t, p) in &report.tradeoff {
        println!("  threshold {t:.4} → exceptional fraction {p:.3}");
    }
    Ok(())
}
