//! Empirical size of the set where the forcing bounds fail.
//!
//! A member is exceptional when `‖⟨∇⟩^α z^ω‖_{L⁵_T L¹⁰_x}` exceeds the
//! threshold, when `‖z^ω‖_{L⁵_{I_j} L¹⁰_x} ≤ K|I_j|^θ` fails on some
//! `I_j = [jτ, (j+1)τ]`, or when its perturbed solve aborts.

use serde::{Deserialize, Serialize};

use super::{sampling_steps, wilson_interval, Ensemble, ExperimentError, TailCurve};
use crate::grid::{FieldPair, Multiplier};
use crate::norms::{series_norm, smallness_condition, Exponent, NormSeries};
use crate::propagator::{Component, LinearEvolution};
use crate::solver::{Forcing, Integrator, SolverConfig, SolverError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExceptionalParams {
    pub final_time: f64,
    pub alpha: f64,
    /// Threshold on `‖⟨∇⟩^α z‖_{L⁵_T L¹⁰_x}` defining the good set.
    pub threshold: f64,
    /// Thresholds for the trade-off curve.
    #[serde(default)]
    pub sweep_thresholds: Vec<f64>,
    pub k: f64,
    pub theta: f64,
    pub tau: f64,
    #[serde(default)]
    pub samples_per_unit: Option<f64>,
    /// Solve the perturbed equation for members in the good set.
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    NotRun,
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberExceptional {
    pub member: usize,
    /// `‖⟨∇⟩^α z‖_{L⁵_T L¹⁰_x}`
    pub bessel_norm: f64,
    /// `max_j ‖z‖_{L⁵_{I_j} L¹⁰_x} / (K|I_j|^θ)`
    pub worst_interval_ratio: f64,
    pub smallness_pass: bool,
    pub solve: SolveStatus,
}

impl MemberExceptional {
    pub fn exceeds(&self, threshold: f64) -> bool {
        self.bessel_norm > threshold
    }

    pub fn is_good(&self, threshold: f64) -> bool {
        !self.exceeds(threshold) && self.smallness_pass && self.solve != SolveStatus::Aborted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExceptionalReport {
    pub members: usize,
    pub threshold: f64,
    /// Fraction with the `⟨∇⟩^α` bound violated.
    pub bound_violation: f64,
    pub bound_violation_interval: (f64, f64),
    /// Same event read off the tail curve of the norms.
    pub tail_estimate: f64,
    /// `tail_estimate` lies inside `bound_violation_interval`.
    pub consistent: bool,
    /// Fraction failing the per-interval smallness.
    pub smallness_violation: f64,
    /// Fraction outside the good set, aborted solves included.
    pub exceptional: f64,
    /// `(threshold, exceptional fraction)`
    pub tradeoff: Vec<(f64, f64)>,
    pub solves_attempted: usize,
    pub solves_completed: usize,
    pub tail: Option<TailCurve>,
    #[serde(skip)]
    pub rows: Vec<MemberExceptional>,
}

pub fn exceptional_set_probe(ensemble: &Ensemble, params: &ExceptionalParams) -> Result<ExceptionalReport, ExperimentError> {
    let grid = *ensemble.grid();
    let horizon = params.final_time;
    if !(horizon > 0.0 && params.threshold > 0.0) {
        return Err(ExperimentError::InvalidParameter("final time and threshold must be positive".into()));
    }
    if let Some(config) = &params.solver {
        config.validate(&grid)?;
    }
    let steps = sampling_steps(&grid, horizon, params.samples_per_unit);
    let dt = horizon / steps as f64;
    let bessel = Multiplier::bessel(grid, params.alpha);
    let q = Exponent::new(5.0)?;
    let rows = ensemble.map(|member, data| {
        let smoothed = FieldPair {
            position: bessel.apply(&data.position),
            velocity: bessel.apply(&data.velocity),
        };
        let series = NormSeries::from_evolution(
            &LinearEvolution::new(&smoothed, Component::Position),
            &[10.0],
            0.0,
            dt,
            steps + 1,
        )
        .remove(0);
        let bessel_norm = series_norm(&series, q, (0.0, horizon))?.value;
        let plain = NormSeries::from_evolution(&LinearEvolution::new(&data, Component::Position), &[10.0], 0.0, dt, steps + 1)
            .remove(0);
        let small = smallness_condition(&plain, q, params.k, params.theta, params.tau)?;
        let worst_interval_ratio = small
            .norms
            .iter()
            .zip(&small.bounds)
            .map(|(n, b)| n / b)
            .fold(0.0, f64::max);
        let mut row = MemberExceptional {
            member,
            bessel_norm,
            worst_interval_ratio,
            smallness_pass: small.all_pass(),
            solve: SolveStatus::NotRun,
        };
        if let Some(config) = &params.solver {
            if row.is_good(params.threshold) {
                let forcing = Forcing::linear(&data);
                let zero = FieldPair::zeros(grid);
                let mut solver = Integrator::new(&zero, &forcing, config, horizon)?;
                row.solve = SolveStatus::Completed;
                while !solver.is_finished() {
                    match solver.step() {
                        Ok(()) => {}
                        Err(SolverError::NanDetected { .. }) => {
                            row.solve = SolveStatus::Aborted;
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        Ok(row)
    })?;

    let m = rows.len();
    let frac = |count: usize| count as f64 / m as f64;
    let violations = rows.iter().filter(|r| r.exceeds(params.threshold)).count();
    let norms: Vec<f64> = rows.iter().map(|r| r.bessel_norm).collect();
    let tail = TailCurve::from_samples(&norms).ok();
    let tail_estimate = match &tail {
        Some(t) => t.exceedance_at(params.threshold),
        None => frac(violations),
    };
    let interval = wilson_interval(violations, m);
    let mut thresholds = params.sweep_thresholds.clone();
    thresholds.sort_by(f64::total_cmp);
    let tradeoff = thresholds
        .iter()
        .map(|&t| (t, frac(rows.iter().filter(|r| !r.is_good(t)).count())))
        .collect();
    Ok(ExceptionalReport {
        members: m,
        threshold: params.threshold,
        bound_violation: frac(violations),
        bound_violation_interval: interval,
        tail_estimate,
        consistent: interval.0 <= tail_estimate && tail_estimate <= interval.1,
        smallness_violation: frac(rows.iter().filter(|r| !r.smallness_pass).count()),
        exceptional: frac(rows.iter().filter(|r| !r.is_good(params.threshold)).count()),
        tradeoff,
        solves_attempted: rows.iter().filter(|r| r.solve != SolveStatus::NotRun).count(),
        solves_completed: rows.iter().filter(|r| r.solve == SolveStatus::Completed).count(),
        tail,
        rows,
    })
}
