//! Frequency-truncated solutions `v_N` of the forced equation, solved in
//! lockstep with the full-band solution for every ensemble member.
//!
//! For each level `N`, the data are `𝐏_{≤N}(u₀^ω, u₁^ω)`, the forcing is
//! their free evolution `z_N`, and `v_N` solves
//! `∂ₜ²v - Δv + (v + z_N)⁵ = 0` from zero data. All levels share one step
//! size, so differences `v - v_N` are taken at common times without storing
//! trajectories.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{log_log_slope, median, quantile, sampling_steps, Ensemble, ExperimentError};
use crate::grid::{Dyadic, FieldPair, GridSpec, Multiplier};
use crate::norms::{series_norm, Exponent, NormSeries};
use crate::propagator::{Component, LinearEvolution};
use crate::solver::{truncate_data, Forcing, Integrator, SolverConfig, SolverError};

/// A truncation level: dyadic `N` or the full grid band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Level {
    Dyadic(Dyadic),
    Full,
}

impl Level {
    pub fn dyadic(n: u32) -> Result<Level, ExperimentError> {
        Ok(Level::Dyadic(Dyadic::new(n)?))
    }

    /// `N` as a number; infinite for the full band.
    pub fn value(self) -> f64 {
        match self {
            Level::Dyadic(n) => n.get() as f64,
            Level::Full => f64::INFINITY,
        }
    }

    pub fn truncate(self, data: &FieldPair) -> FieldPair {
        match self {
            Level::Dyadic(n) => truncate_data(data, n),
            Level::Full => data.clone(),
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Level::Dyadic(n) => f.pad(&n.get().to_string()),
            Level::Full => f.pad("full"),
        }
    }
}

impl FromStr for Level {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" => Ok(Level::Full),
            other => other
                .parse::<u32>()
                .map_err(|_| ExperimentError::InvalidParameter(format!("bad level {other:?}")))
                .and_then(Level::dyadic),
        }
    }
}

impl Serialize for Level {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Level::Dyadic(n) => s.serialize_u32(n.get()),
            Level::Full => s.serialize_str("full"),
        }
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(n) => Level::dyadic(n),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    pub levels: Vec<Level>,
    pub final_time: f64,
    pub solver: SolverConfig,
    /// Regularity used for `δ = (s - 1/2)/2`; defaults to that of rough
    /// base data.
    #[serde(default)]
    pub s: Option<f64>,
    /// Order of the `⟨∇⟩^α` bound on `z - z_N`; defaults to `s`.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Samples per unit time for forcing statistics.
    #[serde(default)]
    pub samples_per_unit: Option<f64>,
    /// Also solve the full band with half the step, to estimate the time
    /// discretization error of the reference.
    #[serde(default)]
    pub control: bool,
}

/// Statistics of the forcing on `[0, T]`, with `δ = (s - 1/2)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForcingStats {
    /// `‖z_N‖¹⁰_{L¹⁰_{T,x}}`
    pub l10: f64,
    /// `‖z_N‖⁶_{L^∞_T L⁶_x}`
    pub linf_l6: f64,
    /// `‖z_N‖²_{L^∞_{T,x}}`
    pub linf: f64,
    /// `‖z̃_N‖⁶_{L⁶_{T,x}}`
    pub tilde_l6: f64,
    /// `‖⟨∇⟩^{s-δ} z̃_N‖_{L^∞_{T,x}}`
    pub tilde_bessel: f64,
}

impl ForcingStats {
    pub fn total(&self) -> f64 {
        self.l10 + self.linf_l6 + self.linf + self.tilde_l6 + self.tilde_bessel
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: Level,
    /// `sup_t ‖(v_N, ∂ₜv_N)‖_{𝓗¹}`; NaN when the solve aborted.
    pub sup_h1: f64,
    pub nan_time: Option<f64>,
    pub stats: ForcingStats,
    /// `‖z - z_N‖_{L⁵_T L¹⁰_x}`
    pub forcing_diff: f64,
    /// `N^{-α} ‖⟨∇⟩^α z‖_{L⁵_T L¹⁰_x}`
    pub forcing_bound: f64,
    /// `sup_t ‖(v - v_N)(t)‖_{𝓗¹}`; NaN without a full-band reference or
    /// when either solve aborted.
    pub solution_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemberSweep {
    pub member: usize,
    /// One record per level.
    pub records: Vec<LevelRecord>,
    /// `sup_t ‖v_{dt}(t) - v_{dt/2}(t)‖_{𝓗¹}` for the full band.
    pub control_error: Option<f64>,
}

impl MemberSweep {
    pub fn aborted(&self) -> bool {
        self.records.iter().any(|r| r.nan_time.is_some())
    }

    pub fn record(&self, level: Level) -> Option<&LevelRecord> {
        self.records.iter().find(|r| r.level == level)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub levels: Vec<Level>,
    pub final_time: f64,
    pub step_size: f64,
    pub members: Vec<MemberSweep>,
}

impl SweepResult {
    pub fn aborted_members(&self) -> usize {
        self.members.iter().filter(|m| m.aborted()).count()
    }

    fn column<F: Fn(&LevelRecord) -> f64>(&self, level: Level, f: F) -> Vec<f64> {
        self.members
            .iter()
            .filter_map(|m| m.record(level).map(&f))
            .collect()
    }
}

/// `‖(u, p)‖_{𝓗¹}` from spectra.
fn h1_spectral(grid: &GridSpec, omega: &[f64], u: &[Complex64], p: &[Complex64]) -> f64 {
    let sum: f64 = (0..u.len())
        .map(|k| (1.0 + omega[k] * omega[k]) * u[k].norm_sqr() + p[k].norm_sqr())
        .sum();
    (sum * grid.volume()).sqrt()
}

fn h1_difference(grid: &GridSpec, omega: &[f64], a: &Integrator, b: &Integrator) -> f64 {
    let (ua, pa) = (a.position_spectral(), a.velocity_spectral());
    let (ub, pb) = (b.position_spectral(), b.velocity_spectral());
    let sum: f64 = (0..ua.len())
        .map(|k| (1.0 + omega[k] * omega[k]) * (ua[k] - ub[k]).norm_sqr() + (pa[k] - pb[k]).norm_sqr())
        .sum();
    (sum * grid.volume()).sqrt()
}

struct Sampling {
    dt: f64,
    count: usize,
}

fn lp_norm(evolution: &LinearEvolution, sampling: &Sampling, q: f64, r: f64, horizon: f64) -> Result<f64, ExperimentError> {
    let series = NormSeries::from_evolution(evolution, &[r], 0.0, sampling.dt, sampling.count).remove(0);
    Ok(series_norm(&series, Exponent::new(q)?, (0.0, horizon))?.value)
}

fn forcing_stats(
    data: &FieldPair,
    bessel: &Multiplier,
    sampling: &Sampling,
    horizon: f64,
) -> Result<ForcingStats, ExperimentError> {
    let z = LinearEvolution::new(data, Component::Position);
    let series = NormSeries::from_evolution(&z, &[10.0, 6.0, f64::INFINITY], 0.0, sampling.dt, sampling.count);
    let full = (0.0, horizon);
    let l10 = series_norm(&series[0], Exponent::new(10.0)?, full)?.value.powi(10);
    let linf_l6 = series_norm(&series[1], Exponent::INFINITY, full)?.value.powi(6);
    let linf = series_norm(&series[2], Exponent::INFINITY, full)?.value.powi(2);
    let tilde = LinearEvolution::new(data, Component::Tilde);
    let tilde_l6 = lp_norm(&tilde, sampling, 6.0, 6.0, horizon)?.powi(6);
    let smoothed = FieldPair {
        position: bessel.apply(&data.position),
        velocity: bessel.apply(&data.velocity),
    };
    let tilde_bessel = lp_norm(
        &LinearEvolution::new(&smoothed, Component::Tilde),
        sampling,
        f64::INFINITY,
        f64::INFINITY,
        horizon,
    )?;
    Ok(ForcingStats {
        l10,
        linf_l6,
        linf,
        tilde_l6,
        tilde_bessel,
    })
}

fn resolve_s(ensemble: &Ensemble, params: &SweepParams) -> Result<f64, ExperimentError> {
    let s = params
        .s
        .or(ensemble.spec().base.regularity())
        .ok_or_else(|| ExperimentError::InvalidParameter("regularity s is required for non-rough base data".into()))?;
    if !(s > 0.5 && s < 1.0) {
        return Err(ExperimentError::InvalidParameter(format!("s = {s} is outside (1/2, 1)")));
    }
    Ok(s)
}

/// Solves every level for every member. Levels must be ascending and
/// dyadic levels must not exceed the grid band limit. Differences
/// `v - v_N` are recorded when the last level is the full band.
pub fn truncation_sweep(ensemble: &Ensemble, params: &SweepParams) -> Result<SweepResult, ExperimentError> {
    let grid = *ensemble.grid();
    let s = resolve_s(ensemble, params)?;
    let alpha = params.alpha.unwrap_or(s);
    if params.levels.is_empty() || params.levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::InvalidParameter("levels must be nonempty and strictly ascending".into()));
    }
    for level in &params.levels {
        if level.value().is_finite() && level.value() > grid.band_limit() {
            return Err(ExperimentError::InvalidParameter(format!(
                "level {level} exceeds the grid band limit {:.3}",
                grid.band_limit()
            )));
        }
    }
    if !(params.final_time > 0.0) {
        return Err(ExperimentError::InvalidParameter("final time must be positive".into()));
    }
    params.solver.validate(&grid)?;
    let levels = params.levels.clone();
    let has_reference = *levels.last().unwrap() == Level::Full;
    if params.control && !has_reference {
        return Err(ExperimentError::InvalidParameter("the time-step control needs the full band among the levels".into()));
    }
    let full_index = levels.len() - 1;
    let (_, step_size) = params.solver.steps_for(params.final_time);
    let horizon = params.final_time;
    let steps = sampling_steps(&grid, horizon, params.samples_per_unit);
    let sampling = Sampling {
        dt: horizon / steps as f64,
        count: steps + 1,
    };
    let bessel = Multiplier::bessel(grid, s - (s - 0.5) / 2.0);
    let alpha_bessel = Multiplier::bessel(grid, alpha);
    let omega = grid.abs_frequencies();

    let members = ensemble.map(|member, data| {
        let truncated: Vec<FieldPair> = levels.iter().map(|l| l.truncate(&data)).collect();
        let smoothed = FieldPair {
            position: alpha_bessel.apply(&data.position),
            velocity: alpha_bessel.apply(&data.velocity),
        };
        let alpha_norm = lp_norm(
            &LinearEvolution::new(&smoothed, Component::Position),
            &sampling,
            5.0,
            10.0,
            horizon,
        )?;
        let mut records = Vec::with_capacity(levels.len());
        for (level, data_n) in levels.iter().zip(&truncated) {
            let stats = forcing_stats(data_n, &bessel, &sampling, horizon)?;
            let forcing_diff = match level {
                Level::Full => 0.0,
                Level::Dyadic(_) => lp_norm(
                    &LinearEvolution::new(&data.minus(data_n)?, Component::Position),
                    &sampling,
                    5.0,
                    10.0,
                    horizon,
                )?,
            };
            records.push(LevelRecord {
                level: *level,
                sup_h1: 0.0,
                nan_time: None,
                stats,
                forcing_diff,
                forcing_bound: match level {
                    Level::Full => 0.0,
                    _ => level.value().powf(-alpha) * alpha_norm,
                },
                solution_diff: 0.0,
            });
        }

        let forcings: Vec<Forcing> = truncated.iter().map(Forcing::linear).collect();
        let zero = FieldPair::zeros(grid);
        let mut solvers = forcings
            .iter()
            .map(|f| Integrator::new(&zero, f, &params.solver, horizon))
            .collect::<Result<Vec<_>, _>>()?;
        let mut control = if params.control {
            // Slightly below h/2 so that rounding cannot add a step.
            let config = SolverConfig {
                dt: 0.5 * step_size * (1.0 - 1e-12),
                ..params.solver
            };
            let c = Integrator::new(&zero, &forcings[full_index], &config, horizon)?;
            if c.total_steps() != 2 * solvers[full_index].total_steps() {
                return Err(ExperimentError::InvalidParameter("control run is not aligned with the main steps".into()));
            }
            Some(c)
        } else {
            None
        };
        let mut control_error = control.as_ref().map(|_| 0.0f64);
        let mut alive = vec![true; levels.len()];
        let total_steps = solvers[full_index].total_steps();
        for _ in 0..total_steps {
            for (i, solver) in solvers.iter_mut().enumerate() {
                if !alive[i] {
                    continue;
                }
                match solver.step() {
                    Ok(()) => {
                        let h1 = h1_spectral(&grid, &omega, solver.position_spectral(), solver.velocity_spectral());
                        records[i].sup_h1 = records[i].sup_h1.max(h1);
                    }
                    Err(SolverError::NanDetected { time }) => {
                        alive[i] = false;
                        records[i].nan_time = Some(time);
                        records[i].sup_h1 = f64::NAN;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            if has_reference && alive[full_index] {
                for i in 0..full_index {
                    if alive[i] {
                        let d = h1_difference(&grid, &omega, &solvers[i], &solvers[full_index]);
                        records[i].solution_diff = records[i].solution_diff.max(d);
                    }
                }
                if let (Some(c), Some(err)) = (control.as_mut(), control_error.as_mut()) {
                    let ok = c.step().and_then(|_| c.step()).is_ok();
                    *err = if ok {
                        err.max(h1_difference(&grid, &omega, c, &solvers[full_index]))
                    } else {
                        f64::NAN
                    };
                }
            }
        }
        let compared = if has_reference { full_index } else { records.len() };
        for i in 0..compared {
            if !has_reference || !alive[i] || !alive[full_index] {
                records[i].solution_diff = f64::NAN;
            }
        }
        if !alive[full_index] {
            control_error = control_error.map(|_| f64::NAN);
        }
        Ok(MemberSweep {
            member,
            records,
            control_error,
        })
    })?;
    Ok(SweepResult {
        levels,
        final_time: params.final_time,
        step_size,
        members,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub level: Level,
    pub samples: usize,
    pub aborted: usize,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
    /// Medians of the forcing statistics and of their sum.
    pub stats_median: [f64; 6],
}

/// Quantiles of `sup_t ‖(v_N, ∂ₜv_N)‖_{𝓗¹}` per level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyEnvelope {
    pub final_time: f64,
    pub rows: Vec<EnvelopeRow>,
    /// Largest over smallest median across levels.
    pub median_spread: f64,
    /// `median_spread < 2`; a practical stand-in for a bound independent
    /// of `N`, not a quantitative statement.
    pub within_factor_two: bool,
    pub aborted_members: usize,
}

impl EnergyEnvelope {
    pub fn from_sweep(sweep: &SweepResult, levels: &[Level]) -> EnergyEnvelope {
        let rows: Vec<EnvelopeRow> = levels
            .iter()
            .map(|&level| {
                let values = sweep.column(level, |r| r.sup_h1);
                let aborted = values.iter().filter(|v| v.is_nan()).count();
                let stat = |f: fn(&ForcingStats) -> f64| median(&sweep.column(level, |r| f(&r.stats)));
                EnvelopeRow {
                    level,
                    samples: values.len() - aborted,
                    aborted,
                    median: median(&values),
                    q90: quantile(&values, 0.9),
                    max: values.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max),
                    stats_median: [
                        stat(|s| s.l10),
                        stat(|s| s.linf_l6),
                        stat(|s| s.linf),
                        stat(|s| s.tilde_l6),
                        stat(|s| s.tilde_bessel),
                        stat(ForcingStats::total),
                    ],
                }
            })
            .collect();
        let medians: Vec<f64> = rows.iter().map(|r| r.median).collect();
        let hi = medians.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = medians.iter().cloned().fold(f64::INFINITY, f64::min);
        let median_spread = if lo > 0.0 { hi / lo } else if hi == 0.0 { 1.0 } else { f64::INFINITY };
        EnergyEnvelope {
            final_time: sweep.final_time,
            rows,
            median_spread,
            within_factor_two: median_spread < 2.0,
            aborted_members: sweep.aborted_members(),
        }
    }
}

/// Envelope of `sup_t ‖(v_N, ∂ₜv_N)‖_{𝓗¹}` over the requested levels.
pub fn uniform_energy(ensemble: &Ensemble, params: &SweepParams) -> Result<(EnergyEnvelope, SweepResult), ExperimentError> {
    let sweep = truncation_sweep(ensemble, params)?;
    Ok((EnergyEnvelope::from_sweep(&sweep, &params.levels), sweep))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<u32>,
    pub alpha: f64,
    pub median_forcing_diff: Vec<f64>,
    pub median_solution_diff: Vec<f64>,
    /// Largest `‖z - z_N‖ / (N^{-α}‖⟨∇⟩^α z‖)` over members, per level.
    pub max_bound_ratio: Vec<f64>,
    pub forcing_slope: f64,
    pub solution_slope: f64,
    pub strictly_decreasing: bool,
    pub median_control_error: Option<f64>,
}

impl ConvergenceReport {
    pub fn from_sweep(sweep: &SweepResult, levels: &[Level], alpha: f64) -> ConvergenceReport {
        let dyadic: Vec<Level> = levels.iter().copied().filter(|l| *l != Level::Full).collect();
        let ns: Vec<f64> = dyadic.iter().map(|l| l.value()).collect();
        let forcing: Vec<f64> = dyadic
            .iter()
            .map(|&l| median(&sweep.column(l, |r| r.forcing_diff)))
            .collect();
        let solution: Vec<f64> = dyadic
            .iter()
            .map(|&l| median(&sweep.column(l, |r| r.solution_diff)))
            .collect();
        let max_bound_ratio = dyadic
            .iter()
            .map(|&l| {
                sweep
                    .column(l, |r| if r.forcing_bound > 0.0 { r.forcing_diff / r.forcing_bound } else { 0.0 })
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect();
        let controls: Vec<f64> = sweep.members.iter().filter_map(|m| m.control_error).collect();
        ConvergenceReport {
            levels: dyadic.iter().map(|l| l.value() as u32).collect(),
            alpha,
            forcing_slope: log_log_slope(&ns, &forcing),
            solution_slope: log_log_slope(&ns, &solution),
            strictly_decreasing: solution.windows(2).all(|w| w[1] < w[0]),
            median_forcing_diff: forcing,
            median_solution_diff: solution,
            max_bound_ratio,
            median_control_error: if controls.is_empty() { None } else { Some(median(&controls)) },
        }
    }

    /// Error when the reference is not trusted: its time-step control
    /// difference must be at least ten times below every median solution
    /// difference.
    pub fn check_reference(&self) -> Result<(), ExperimentError> {
        if let Some(control) = self.median_control_error {
            let finest = self.median_solution_diff.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(10.0 * control < finest) {
                return Err(ExperimentError::ReferenceTooCoarse { control, finest });
            }
        }
        Ok(())
    }
}

/// Convergence of `z_N → z` and `v_N → v` along dyadic levels, against the
/// full-band solution on the same grid. Requires
/// `band limit ≥ 2·max N`.
pub fn truncation_convergence(
    ensemble: &Ensemble,
    params: &SweepParams,
) -> Result<(ConvergenceReport, SweepResult), ExperimentError> {
    let grid = ensemble.grid();
    let top = params
        .levels
        .iter()
        .filter(|l| **l != Level::Full)
        .map(|l| l.value())
        .fold(0.0, f64::max);
    if grid.band_limit() < 2.0 * top {
        return Err(ExperimentError::InvalidParameter(format!(
            "band limit {:.3} is below 2·max N = {}",
            grid.band_limit(),
            2.0 * top
        )));
    }
    let s = resolve_s(ensemble, params)?;
    let mut with_reference = params.clone();
    if with_reference.levels.last() != Some(&Level::Full) {
        with_reference.levels.push(Level::Full);
    }
    let sweep = truncation_sweep(ensemble, &with_reference)?;
    let report = ConvergenceReport::from_sweep(&sweep, &params.levels, params.alpha.unwrap_or(s));
    report.check_reference()?;
    Ok((report, sweep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{BaseData, EnsembleSpec};
    use crate::grid::{make_grid, Cutoff};
    use crate::propagator::linear_propagate;
    use crate::randomization::{DistributionKind, RoughProfile};
    use crate::solver::evolve_nlw;
    use std::f64::consts::PI;

    fn rough_ensemble(n: usize, members: usize) -> Ensemble {
        EnsembleSpec {
            grid: make_grid(2, n, 2.0 * PI / 1.2, 3.0).unwrap(),
            base: BaseData::Rough {
                s: 0.75,
                profile: RoughProfile::PowerLaw,
                data_seed: 0,
                norm: Some(1.0),
            },
            distribution: DistributionKind::StandardGaussianComplex,
            members,
            seed: 5,
            cutoff: Cutoff::SmoothPsi,
        }
        .prepare()
        .unwrap()
    }

    fn params(levels: Vec<Level>, t: f64) -> SweepParams {
        SweepParams {
            levels,
            final_time: t,
            solver: SolverConfig::new(0.02),
            s: None,
            alpha: None,
            samples_per_unit: Some(64.0),
            control: false,
        }
    }

    #[test]
    fn level_parsing() {
        assert_eq!("full".parse::<Level>().unwrap(), Level::Full);
        assert_eq!("8".parse::<Level>().unwrap(), Level::dyadic(8).unwrap());
        assert!("6".parse::<Level>().is_err());
        let levels: Vec<Level> = serde_json::from_str("[2, 4, \"full\"]").unwrap();
        assert_eq!(serde_json::to_string(&levels).unwrap(), "[2,4,\"full\"]");
        assert!(Level::dyadic(16).unwrap() < Level::Full);
    }

    #[test]
    fn no_low_frequency_content_gives_zero_envelope() {
        let e = EnsembleSpec {
            grid: make_grid(2, 16, 2.0 * PI, 3.0).unwrap(),
            base: BaseData::PlaneWave {
                wavenumber: [3, 0, 0],
                amplitude: 1.0,
            },
            distribution: DistributionKind::StandardGaussianComplex,
            members: 2,
            seed: 1,
            cutoff: Cutoff::SmoothPsi,
        }
        .prepare()
        .unwrap();
        let mut p = params(vec![Level::dyadic(1).unwrap()], 0.5);
        p.s = Some(0.75);
        let (env, sweep) = uniform_energy(&e, &p).unwrap();
        // Only roundoff from the physical-space construction survives.
        assert!(env.rows[0].median < 1e-12, "{:?}", env.rows[0]);
        assert!(sweep.members.iter().all(|m| m.records[0].stats.total() < 1e-12));
        assert_eq!(sweep.members[0].records.len(), 1);
        assert!(sweep.members[0].records[0].solution_diff.is_nan());
    }

    #[test]
    fn full_band_matches_direct_split() {
        let e = rough_ensemble(16, 1);
        let p = params(vec![Level::Full], 0.5);
        let (_, sweep) = uniform_energy(&e, &p).unwrap();
        let data = e.member(0).unwrap();
        let u = evolve_nlw(&data, 0.5, &p.solver).unwrap();
        let direct = u
            .times
            .iter()
            .zip(&u.snapshots)
            .map(|(&t, snap)| snap.minus(&linear_propagate(&data, t)).unwrap().h1_norm())
            .fold(0.0, f64::max);
        let swept = sweep.members[0].records[0].sup_h1;
        assert!((swept / direct - 1.0).abs() < 1e-6, "{swept} vs {direct}");
    }

    #[test]
    fn longer_time_does_not_lower_envelope() {
        let e = rough_ensemble(16, 2);
        let levels = vec![Level::dyadic(2).unwrap(), Level::dyadic(4).unwrap()];
        let short = truncation_sweep(&e, &params(levels.clone(), 0.4)).unwrap();
        let long = truncation_sweep(&e, &params(levels, 0.8)).unwrap();
        for (a, b) in short.members.iter().zip(&long.members) {
            for (ra, rb) in a.records.iter().zip(&b.records) {
                assert!(rb.sup_h1 >= ra.sup_h1);
            }
        }
    }

    #[test]
    fn band_limited_data_is_left_alone() {
        let e = EnsembleSpec {
            grid: make_grid(2, 16, 2.0 * PI / 1.2, 3.0).unwrap(),
            base: BaseData::BandLimited {
                max_frequency: 1.0,
                data_seed: 2,
            },
            distribution: DistributionKind::StandardGaussianComplex,
            members: 2,
            seed: 1,
            cutoff: Cutoff::SmoothPsi,
        }
        .prepare()
        .unwrap();
        let mut p = params(vec![Level::dyadic(2).unwrap(), Level::dyadic(4).unwrap()], 0.3);
        p.s = Some(0.75);
        let (report, _) = truncation_convergence(&e, &p).unwrap();
        assert!(report.median_forcing_diff.iter().all(|&d| d < 1e-12), "{report:?}");
        assert!(report.median_solution_diff.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn convergence_checks_band_and_reference() {
        let e = rough_ensemble(16, 3);
        let too_fine = params(vec![Level::dyadic(8).unwrap()], 0.2);
        assert!(truncation_convergence(&e, &too_fine).is_err());
        let mut p = params(vec![Level::dyadic(1).unwrap(), Level::dyadic(2).unwrap(), Level::dyadic(4).unwrap()], 0.5);
        p.control = true;
        let (report, sweep) = truncation_convergence(&e, &p).unwrap();
        assert_eq!(sweep.aborted_members(), 0);
        assert!(report.strictly_decreasing, "{report:?}");
        assert!(report.forcing_slope < 0.0);
        assert!(report.median_control_error.unwrap() < report.median_solution_diff[2] / 10.0);
        let coarse = ConvergenceReport {
            median_control_error: Some(1.0),
            ..report
        };
        assert!(matches!(coarse.check_reference(), Err(ExperimentError::ReferenceTooCoarse { .. })));
    }

    #[test]
    fn invalid_levels() {
        let e = rough_ensemble(16, 1);
        let unsorted = params(vec![Level::dyadic(4).unwrap(), Level::dyadic(2).unwrap()], 0.2);
        assert!(truncation_sweep(&e, &unsorted).is_err());
        let beyond = params(vec![Level::dyadic(64).unwrap()], 0.2);
        assert!(truncation_sweep(&e, &beyond).is_err());
        let mut outside = params(vec![Level::Full], 0.2);
        outside.s = Some(0.45);
        assert!(truncation_sweep(&e, &outside).is_err());
    }
}
