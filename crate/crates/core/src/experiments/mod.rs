//! Monte Carlo ensembles of randomized data and the statistics drawn from
//! them: exceedance curves with sub-Gaussian fits, sup-in-time tails, energy
//! envelopes of frequency-truncated solutions, truncation convergence and
//! exceptional-set frequencies.
//!
//! Every member is a pure function of `(EnsembleSpec, member id)`. Members
//! run in parallel and are collected in id order, so every report is
//! independent of the thread count.

mod energy;
mod exceptional;
mod tail;

pub use energy::{
    truncation_convergence, truncation_sweep, uniform_energy, ConvergenceReport, EnergyEnvelope, EnvelopeRow,
    ForcingStats, Level, LevelRecord, MemberSweep, SweepParams, SweepResult,
};
pub use exceptional::{exceptional_set_probe, ExceptionalParams, ExceptionalReport, MemberExceptional, SolveStatus};
pub use tail::{
    increment_decay, strichartz_norms, strichartz_tail, strichartz_tail_scaling, sup_tail, sup_tail_study,
    DecayCheck, ScalingCheck, StrichartzReport, SupTailRow, SupTailStudy,
};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Cutoff, Field, FieldPair, GridError, GridSpec};
use crate::norms::NormError;
use crate::randomization::{
    derive_seed, make_rough_pair, sample_coefficients, DistributionKind, RandomizationError, Randomizer,
    RoughProfile,
};
use crate::solver::SolverError;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Randomization(#[from] RandomizationError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Norm(#[from] NormError),
    #[error("degenerate ensemble: all {0} samples are equal")]
    DegenerateEnsemble(usize),
    #[error("a tail fit needs at least {needed} members, got {got}")]
    TooFewMembers { needed: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("reference too coarse: time-step control difference {control:e} is not 10x below the smallest truncation difference {finest:e}")]
    ReferenceTooCoarse { control: f64, finest: f64 },
}

/// Smallest ensemble for which a tail fit is attempted.
pub const MIN_TAIL_MEMBERS: usize = 100;

/// Deterministic base pair `(u₀, u₁)` before randomization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BaseData {
    Zero,
    /// `u₀ = A e^{-|x|²/(2w²)}`, `u₁ = B e^{-|x|²/(2w²)}`.
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        velocity_amplitude: f64,
    },
    /// `u₀ = A cos(ξ_k · x)` at the lattice frequency with integer
    /// wavenumbers `k`, `u₁ = 0`.
    PlaneWave { wavenumber: [i64; 3], amplitude: f64 },
    /// Random Gaussian spectrum with `|û₀(ξ)| ∝ |ξ|^{-d/2-1}` on
    /// `0 < |ξ| ≤ max_frequency`, `u₁ = 0`; every dyadic shell carries
    /// comparable `Ḣ¹` mass.
    BandLimited { max_frequency: f64, data_seed: u64 },
    /// Power-law data of regularity just below `s`, optionally rescaled
    /// to `‖(u₀,u₁)‖_{𝓗^s} = norm`.
    Rough {
        s: f64,
        profile: RoughProfile,
        #[serde(default)]
        data_seed: u64,
        #[serde(default)]
        norm: Option<f64>,
    },
}

impl BaseData {
    pub fn build(&self, grid: GridSpec) -> Result<FieldPair, ExperimentError> {
        Ok(match *self {
            BaseData::Zero => FieldPair::zeros(grid),
            BaseData::Gaussian {
                amplitude,
                width,
                velocity_amplitude,
            } => {
                if !(width > 0.0) {
                    return Err(ExperimentError::InvalidParameter(format!("width must be positive, got {width}")));
                }
                let bump = |a: f64| {
                    Field::from_fn(grid, move |x| {
                        let r2: f64 = x.iter().map(|c| c * c).sum();
                        a * (-r2 / (2.0 * width * width)).exp()
                    })
                };
                FieldPair::new(bump(amplitude), bump(velocity_amplitude))?
            }
            BaseData::PlaneWave { wavenumber, amplitude } => {
                let dk = grid.frequency_step();
                let half = (grid.points_per_axis() / 2) as i64;
                if wavenumber[..grid.dim()].iter().any(|k| k.abs() >= half)
                    || wavenumber[grid.dim()..].iter().any(|&k| k != 0)
                {
                    return Err(ExperimentError::InvalidParameter(format!(
                        "wavenumber {wavenumber:?} is not resolved below Nyquist"
                    )));
                }
                let u0 = Field::from_fn(grid, |x| {
                    let phase: f64 = (0..3).map(|a| wavenumber[a] as f64 * dk * x[a]).sum();
                    amplitude * phase.cos()
                });
                FieldPair::new(u0, Field::zeros(grid))?
            }
            BaseData::BandLimited {
                max_frequency,
                data_seed,
            } => band_limited_pair(grid, max_frequency, data_seed),
            BaseData::Rough {
                s,
                profile,
                data_seed,
                norm,
            } => {
                let rough = make_rough_pair(grid, s, profile, data_seed)?;
                match norm {
                    Some(target) => rough.normalized(target).pair,
                    None => rough.pair,
                }
            }
        })
    }

    /// Regularity of rough data.
    pub fn regularity(&self) -> Option<f64> {
        match *self {
            BaseData::Rough { s, .. } => Some(s),
            _ => None,
        }
    }
}

/// Random real pair with Gaussian coefficients of modulus `|ξ|^{-d/2-1}`
/// on `0 < |ξ| ≤ max_frequency` and zero velocity.
pub fn band_limited_pair(grid: GridSpec, max_frequency: f64, seed: u64) -> FieldPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = grid.abs_frequencies();
    let exponent = -(grid.dim() as f64) / 2.0 - 1.0;
    let mut spec = vec![Complex64::default(); grid.len()];
    for k in 0..grid.len() {
        let j = grid.conjugate_index(k);
        if j < k || omega[k] == 0.0 || omega[k] > max_frequency {
            continue;
        }
        let re: f64 = rng.sample(rand_distr::StandardNormal);
        let im: f64 = if j == k { 0.0 } else { rng.sample(rand_distr::StandardNormal) };
        spec[k] = Complex64::new(re, im) * omega[k].powf(exponent);
        spec[j] = spec[k].conj();
    }
    let position = Field::from_spectral(grid, spec).expect("length matches grid");
    FieldPair {
        position,
        velocity: Field::zeros(grid),
    }
}

/// A seeded ensemble of Wiener randomizations of one base pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub grid: GridSpec,
    pub base: BaseData,
    pub distribution: DistributionKind,
    pub members: usize,
    pub seed: u64,
    #[serde(default = "default_cutoff")]
    pub cutoff: Cutoff,
}

fn default_cutoff() -> Cutoff {
    Cutoff::SmoothPsi
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.members == 0 {
            return Err(ExperimentError::InvalidParameter("ensemble needs at least one member".into()));
        }
        Ok(())
    }

    /// Seed of member `m`.
    pub fn member_seed(&self, m: usize) -> u64 {
        derive_seed(self.seed, m as u64)
    }

    /// Builds the base pair and randomization operator once.
    pub fn prepare(&self) -> Result<Ensemble, ExperimentError> {
        self.validate()?;
        Ok(Ensemble {
            spec: self.clone(),
            base: self.base.build(self.grid)?,
            randomizer: Randomizer::new(self.grid, self.cutoff),
        })
    }
}

/// A prepared ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    spec: EnsembleSpec,
    base: FieldPair,
    randomizer: Randomizer,
}

impl Ensemble {
    pub fn spec(&self) -> &EnsembleSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec.grid
    }

    pub fn base(&self) -> &FieldPair {
        &self.base
    }

    pub fn len(&self) -> usize {
        self.spec.members
    }

    pub fn is_empty(&self) -> bool {
        self.spec.members == 0
    }

    /// Randomized data `(u₀^ω, u₁^ω)` of member `m`.
    pub fn member(&self, m: usize) -> Result<FieldPair, ExperimentError> {
        let coeffs = sample_coefficients(self.spec.grid, self.spec.distribution, self.spec.member_seed(m));
        Ok(self.randomizer.apply(&self.base, &coeffs)?)
    }

    /// `f(m, data)` for every member, in member order.
    pub fn map<T, F>(&self, f: F) -> Result<Vec<T>, ExperimentError>
    where
        T: Send,
        F: Fn(usize, FieldPair) -> Result<T, ExperimentError> + Sync,
    {
        (0..self.len())
            .into_par_iter()
            .map(|m| f(m, self.member(m)?))
            .collect()
    }
}

/// Wilson score interval at 95% for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = k as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt();
    let lower = if k == 0 { 0.0 } else { (centre - half).max(0.0) };
    let upper = if k == n { 1.0 } else { (centre + half).min(1.0) };
    (lower, upper)
}

/// Weighted least-squares fit `log P ≈ intercept + slope·λ²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailFit {
    pub slope: f64,
    pub intercept: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Empirical exceedance `P(X > λ)` on a λ grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub samples: usize,
    pub median: f64,
    pub lambdas: Vec<f64>,
    pub counts: Vec<usize>,
    pub exceedance: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub fit: Option<TailFit>,
}

/// Points of the automatic λ grid.
pub const DEFAULT_LAMBDA_POINTS: usize = 64;

/// Exceedances below this count are excluded from fits.
pub const MIN_FIT_EXCEEDANCES: usize = 10;

impl TailCurve {
    /// Tail on `DEFAULT_LAMBDA_POINTS` evenly spaced λ from the sample
    /// minimum to the sample maximum; samples equal to within roundoff are
    /// an error.
    pub fn from_samples(samples: &[f64]) -> Result<TailCurve, ExperimentError> {
        let (lo, hi) = samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if samples.is_empty() || !(hi - lo > 1e-12 * hi.abs().max(lo.abs())) {
            return Err(ExperimentError::DegenerateEnsemble(samples.len()));
        }
        let n = DEFAULT_LAMBDA_POINTS;
        let lambdas: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        TailCurve::on_grid(samples, &lambdas)
    }

    /// Tail on an explicit increasing λ grid; degenerate samples give a
    /// step function.
    pub fn on_grid(samples: &[f64], lambdas: &[f64]) -> Result<TailCurve, ExperimentError> {
        if samples.is_empty() {
            return Err(ExperimentError::InvalidParameter("no samples".into()));
        }
        if lambdas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ExperimentError::InvalidParameter("λ grid must increase".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(ExperimentError::InvalidParameter("non-finite sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let m = sorted.len();
        let median = if m % 2 == 1 {
            sorted[m / 2]
        } else {
            0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
        };
        let mut curve = TailCurve {
            samples: m,
            median,
            lambdas: lambdas.to_vec(),
            counts: Vec::with_capacity(lambdas.len()),
            exceedance: Vec::with_capacity(lambdas.len()),
            lower: Vec::with_capacity(lambdas.len()),
            upper: Vec::with_capacity(lambdas.len()),
            fit: None,
        };
        for &l in lambdas {
            let count = m - sorted.partition_point(|&x| x <= l);
            let (lo, hi) = wilson_interval(count, m);
            curve.counts.push(count);
            curve.exceedance.push(count as f64 / m as f64);
            curve.lower.push(lo);
            curve.upper.push(hi);
        }
        curve.fit = curve.fit_gaussian_tail();
        Ok(curve)
    }

    /// Linear interpolation of the exceedance on the λ grid.
    pub fn exceedance_at(&self, lambda: f64) -> f64 {
        let i = self.lambdas.partition_point(|&l| l <= lambda);
        if i == 0 {
            return self.exceedance[0];
        }
        if i >= self.lambdas.len() {
            return *self.exceedance.last().unwrap();
        }
        let (l0, l1) = (self.lambdas[i - 1], self.lambdas[i]);
        let w = (lambda - l0) / (l1 - l0);
        (1.0 - w) * self.exceedance[i - 1] + w * self.exceedance[i]
    }

    /// Weighted fit of `log P` against `λ²` on `λ ≥ median` with at least
    /// `MIN_FIT_EXCEEDANCES` exceedances; weights are inverse squared Wilson
    /// half-widths in log space. Needs three points.
    fn fit_gaussian_tail(&self) -> Option<TailFit> {
        let z = 1.959_963_984_540_054;
        let mut xs = Vec::new();
        for i in 0..self.lambdas.len() {
            if self.lambdas[i] < self.median || self.counts[i] < MIN_FIT_EXCEEDANCES {
                continue;
            }
            let sigma = (self.upper[i].ln() - self.lower[i].ln()) / (2.0 * z);
            xs.push((self.lambdas[i], self.exceedance[i].ln(), 1.0 / (sigma * sigma)));
        }
        if xs.len() < 3 {
            return None;
        }
        let sw: f64 = xs.iter().map(|p| p.2).sum();
        let mx = xs.iter().map(|p| p.2 * p.0 * p.0).sum::<f64>() / sw;
        let my = xs.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
        let sxx: f64 = xs.iter().map(|p| p.2 * (p.0 * p.0 - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().map(|p| p.2 * (p.0 * p.0 - mx) * (p.1 - my)).sum();
        if !(sxx > 0.0) {
            return None;
        }
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_tot: f64 = xs.iter().map(|p| p.2 * (p.1 - my).powi(2)).sum();
        let ss_res: f64 = xs
            .iter()
            .map(|p| p.2 * (p.1 - intercept - slope * p.0 * p.0).powi(2))
            .sum();
        let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        Some(TailFit {
            slope,
            intercept,
            lambda_min: xs[0].0,
            lambda_max: xs.last().unwrap().0,
            r_squared,
            points: xs.len(),
        })
    }

    /// Plot-ready `(λ, log P)` pairs with `P > 0`.
    pub fn log_points(&self) -> Vec<(f64, f64)> {
        self.lambdas
            .iter()
            .zip(&self.exceedance)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&l, &p)| (l, p.ln()))
            .collect()
    }
}

/// Median of finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolated quantile of the finite values.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < v.len() {
        v[i] * (1.0 - frac) + v[i + 1] * frac
    } else {
        v[i]
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Time step `T/steps` with about `per_unit` samples per unit time, at
/// least 8·(band limit) so the fastest mode gets a dozen samples per period.
pub(crate) fn sampling_steps(grid: &GridSpec, horizon: f64, per_unit: Option<f64>) -> usize {
    let per_unit = per_unit.unwrap_or(8.0 * grid.band_limit());
    ((horizon * per_unit).ceil() as usize).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn wilson_reference_values() {
        // 5 of 10 at 95%: (0.2366, 0.7634).
        let (lo, hi) = wilson_interval(5, 10);
        assert!((lo - 0.236_593).abs() < 1e-5 && (hi - 0.763_407).abs() < 1e-5);
        let (lo, hi) = wilson_interval(0, 100);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.036_994).abs() < 1e-5);
    }

    #[test]
    fn exceedance_below_minimum_is_one() {
        let c = TailCurve::on_grid(&[1.0, 2.0, 3.0], &[0.5, 1.5, 3.5]).unwrap();
        assert_eq!(c.exceedance, vec![1.0, 2.0 / 3.0, 0.0]);
        assert_eq!(c.exceedance_at(0.1), 1.0);
    }

    #[test]
    fn degenerate_samples() {
        assert!(matches!(
            TailCurve::from_samples(&[2.0; 50]),
            Err(ExperimentError::DegenerateEnsemble(50))
        ));
        let step = TailCurve::on_grid(&[2.0; 50], &[1.0, 1.9, 2.0, 2.1]).unwrap();
        assert_eq!(step.exceedance, vec![1.0, 1.0, 0.0, 0.0]);
        assert!(step.fit.is_none());
    }

    #[test]
    fn rayleigh_tail_is_gaussian_in_lambda() {
        // |g| for a standard complex Gaussian has P(|g| > λ) = exp(-λ²).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples: Vec<f64> = (0..20_000)
            .map(|_| {
                let re: f64 = rng.sample(rand_distr::StandardNormal);
                let im: f64 = rng.sample(rand_distr::StandardNormal);
                ((re * re + im * im) / 2.0).sqrt()
            })
            .collect();
        let fit = TailCurve::from_samples(&samples).unwrap().fit.unwrap();
        assert!((fit.slope + 1.0).abs() < 0.05, "{fit:?}");
        assert!(fit.r_squared > 0.99);
    }

    #[test]
    fn quantiles_and_slopes() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.9), 4.6);
        assert!(median(&[f64::NAN]).is_nan());
        let xs = [2.0, 4.0, 8.0, 16.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.75)).collect();
        assert!((log_log_slope(&xs, &ys) + 0.75).abs() < 1e-12);
    }

    #[test]
    fn base_data_builds() {
        let g = make_grid(2, 16, 2.0 * std::f64::consts::PI, 3.0).unwrap();
        let plane = BaseData::PlaneWave {
            wavenumber: [3, 1, 0],
            amplitude: 2.0,
        }
        .build(g)
        .unwrap();
        let spec = plane.position.spectral();
        let nonzero = spec.iter().filter(|c| c.norm() > 1e-12).count();
        assert_eq!(nonzero, 2);
        assert!(BaseData::PlaneWave {
            wavenumber: [8, 0, 0],
            amplitude: 1.0
        }
        .build(g)
        .is_err());
        let band = BaseData::BandLimited {
            max_frequency: 4.0,
            data_seed: 1,
        }
        .build(g)
        .unwrap();
        assert!(band.position.hermitian_defect() < 1e-14);
        let omega = g.abs_frequencies();
        for (c, w) in band.position.spectral().iter().zip(&omega) {
            if *w > 4.0 {
                assert_eq!(c.norm(), 0.0);
            }
        }
        assert_eq!(BaseData::Zero.build(g).unwrap().h1_norm(), 0.0);
    }

    #[test]
    fn ensemble_spec_serde() {
        let spec = EnsembleSpec {
            grid: make_grid(3, 16, 7.0, 3.0).unwrap(),
            base: BaseData::Rough {
                s: 0.75,
                profile: RoughProfile::RandomizedPhasePowerLaw,
                data_seed: 3,
                norm: Some(1.0),
            },
            distribution: DistributionKind::StandardGaussianComplex,
            members: 10,
            seed: 9,
            cutoff: Cutoff::SmoothPsi,
        };
        let text = toml::to_string(&spec).unwrap();
        assert_eq!(toml::from_str::<EnsembleSpec>(&text).unwrap(), spec);
    }

    #[test]
    fn members_are_deterministic_and_distinct() {
        let spec = EnsembleSpec {
            grid: make_grid(1, 32, 10.0, 3.0).unwrap(),
            base: BaseData::Gaussian {
                amplitude: 1.0,
                width: 1.0,
                velocity_amplitude: 0.5,
            },
            distribution: DistributionKind::Rademacher,
            members: 3,
            seed: 4,
            cutoff: Cutoff::SmoothPsi,
        };
        let e = spec.prepare().unwrap();
        let a = e.map(|_, d| Ok(d.h1_norm())).unwrap();
        let b = e.map(|_, d| Ok(d.h1_norm())).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    proptest! {
        #[test]
        fn exceedance_is_nonincreasing(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let samples: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..5.0)).collect();
            let c = TailCurve::from_samples(&samples).unwrap();
            prop_assert!(c.exceedance.windows(2).all(|w| w[1] <= w[0]));
            for i in 0..c.lambdas.len() {
                prop_assert!(c.lower[i] <= c.exceedance[i] && c.exceedance[i] <= c.upper[i]);
            }
        }
    }
}
