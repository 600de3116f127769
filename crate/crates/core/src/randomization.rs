//! Wiener randomization: random coefficients attached to unit frequency
//! cubes, and the randomized data `Σ_n g_{n,j} ψ(D - n) u_j`.
//!
//! Every coefficient is drawn from its own counter-based stream keyed by the
//! master seed and `(n, j)`, so the values never depend on the order in
//! which cubes are visited or on how an ensemble is split across threads.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{sobolev_norm, CubeIndex, CubeKernel, Cutoff, Field, FieldPair, GridError, GridSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RandomizationError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("regularity {0} is outside (0, 1)")]
    InvalidRegularity(f64),
    #[error("coefficient sequence is not Hermitian symmetric (defect {0:.3e})")]
    NonSymmetricSequence(f64),
    #[error("coefficient document does not match its grid (hash {expected}, found {found})")]
    HashMismatch { expected: String, found: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Law of the coefficients. All have mean zero and `E|g|² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionKind {
    /// `Re g, Im g` independent `N(0, 1/2)`; `g₀ ~ N(0, 1)`.
    StandardGaussianComplex,
    /// `Re g, Im g` independent uniform on `{±1/√2}`; `g₀` uniform on `{±1}`.
    Rademacher,
    /// `g` uniform on the disk of radius `√2`; `g₀` uniform on `[-√3, √3]`.
    UniformDisk,
}

impl DistributionKind {
    pub const ALL: [DistributionKind; 3] = [
        DistributionKind::StandardGaussianComplex,
        DistributionKind::Rademacher,
        DistributionKind::UniformDisk,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            DistributionKind::StandardGaussianComplex => "standard-gaussian-complex",
            DistributionKind::Rademacher => "rademacher",
            DistributionKind::UniformDisk => "uniform-disk",
        }
    }

    fn draw(self, rng: &mut ChaCha8Rng, zero_mode: bool) -> Complex64 {
        match (self, zero_mode) {
            (DistributionKind::StandardGaussianComplex, true) => {
                Complex64::new(rng.sample(StandardNormal), 0.0)
            }
            (DistributionKind::StandardGaussianComplex, false) => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * FRAC_1_SQRT_2
            }
            (DistributionKind::Rademacher, true) => Complex64::new(sign(rng), 0.0),
            (DistributionKind::Rademacher, false) => {
                Complex64::new(sign(rng), sign(rng)) * FRAC_1_SQRT_2
            }
            (DistributionKind::UniformDisk, true) => {
                Complex64::new(rng.random_range(-3f64.sqrt()..3f64.sqrt()), 0.0)
            }
            (DistributionKind::UniformDisk, false) => {
                let radius = (2.0 * rng.random::<f64>()).sqrt();
                let angle = 2.0 * PI * rng.random::<f64>();
                Complex64::from_polar(radius, angle)
            }
        }
    }
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Seed of ensemble member `index`, decorrelated from the master seed by a
/// splitmix64 finalizer.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const COMPONENT_BITS: u32 = 21;
const COMPONENT_OFFSET: i64 = 1 << (COMPONENT_BITS - 1);

/// Stream identifier of `(n, j)`: three 21-bit offset components and one bit
/// for `j`.
fn stream_id(n: CubeIndex, j: usize) -> u64 {
    let mut id = 0u64;
    for &c in &n.0 {
        debug_assert!(c.abs() < COMPONENT_OFFSET);
        id = (id << COMPONENT_BITS) | (c + COMPONENT_OFFSET) as u64;
    }
    (id << 1) | (j as u64 & 1)
}

/// The single coefficient `g_{n,j}` for a given seed, with `g_{-n,j}`
/// obtained by conjugation.
pub fn coefficient(distribution: DistributionKind, seed: u64, n: CubeIndex, j: usize) -> Complex64 {
    if n.is_zero() || n.in_half_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id(n, j));
        distribution.draw(&mut rng, n.is_zero())
    } else {
        coefficient(distribution, seed, n.neg(), j).conj()
    }
}

/// Coefficients `g_{n,j}`, `j ∈ {0, 1}`, for every cube touching a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomCoefficients {
    grid: GridSpec,
    radius: i64,
    seed: u64,
    distribution: DistributionKind,
    values: [Vec<Complex64>; 2],
}

/// Serialized form of [`RandomCoefficients`]; values are regenerated from
/// the seed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDocument {
    pub seed: u64,
    pub distribution: DistributionKind,
    pub grid: GridSpec,
    pub grid_hash: String,
}

impl Serialize for RandomCoefficients {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.document().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RandomCoefficients {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let doc = CoefficientDocument::deserialize(deserializer)?;
        RandomCoefficients::from_document(&doc).map_err(serde::de::Error::custom)
    }
}

impl RandomCoefficients {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> DistributionKind {
        self.distribution
    }

    /// Largest `|n_a|` covered.
    pub fn radius(&self) -> i64 {
        self.radius
    }

    /// All covered cube indices, in storage order.
    pub fn cubes(&self) -> Vec<CubeIndex> {
        let side = (2 * self.radius + 1) as usize;
        let d = self.grid.dim();
        (0..side.pow(d as u32)).map(|flat| self.cube_at(flat)).collect()
    }

    fn cube_at(&self, mut flat: usize) -> CubeIndex {
        let side = (2 * self.radius + 1) as usize;
        let mut n = [0i64; 3];
        for a in (0..self.grid.dim()).rev() {
            n[a] = (flat % side) as i64 - self.radius;
            flat /= side;
        }
        CubeIndex(n)
    }

    fn slot(&self, n: CubeIndex) -> Option<usize> {
        let side = 2 * self.radius + 1;
        let mut flat = 0i64;
        for a in 0..3 {
            let c = n.0[a];
            if a >= self.grid.dim() {
                if c != 0 {
                    return None;
                }
                continue;
            }
            if c.abs() > self.radius {
                return None;
            }
            flat = flat * side + c + self.radius;
        }
        Some(flat as usize)
    }

    /// `g_{n,j}`, or `None` for a cube outside the covered range.
    pub fn get(&self, n: CubeIndex, j: usize) -> Option<Complex64> {
        self.slot(n).map(|i| self.values[j][i])
    }

    /// Replaces every value; used to build deterministic test families.
    pub fn with_values<F>(mut self, f: F) -> RandomCoefficients
    where
        F: Fn(CubeIndex, usize) -> Complex64,
    {
        let cubes = self.cubes();
        for j in 0..2 {
            self.values[j] = cubes.iter().map(|&n| f(n, j)).collect();
        }
        self
    }

    pub fn document(&self) -> CoefficientDocument {
        CoefficientDocument {
            seed: self.seed,
            distribution: self.distribution,
            grid: self.grid,
            grid_hash: self.grid.hash(),
        }
    }

    pub fn from_document(doc: &CoefficientDocument) -> Result<RandomCoefficients, RandomizationError> {
        let found = doc.grid.hash();
        if found != doc.grid_hash {
            return Err(RandomizationError::HashMismatch {
                expected: doc.grid_hash.clone(),
                found,
            });
        }
        Ok(sample_coefficients(doc.grid, doc.distribution, doc.seed))
    }

    /// `max |g_{-n,j} - conj g_{n,j}|` over the covered range.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for n in self.cubes() {
            for j in 0..2 {
                let a = self.get(n, j).unwrap();
                let b = self.get(n.neg(), j).unwrap();
                worst = worst.max((a - b.conj()).norm());
            }
        }
        worst
    }
}

/// Draws `g_{n,j}` for every cube within the grid's cube range.
pub fn sample_coefficients(grid: GridSpec, distribution: DistributionKind, seed: u64) -> RandomCoefficients {
    let radius = grid.max_frequency().ceil() as i64 + 1;
    let mut coeffs = RandomCoefficients {
        grid,
        radius,
        seed,
        distribution,
        values: [Vec::new(), Vec::new()],
    };
    let cubes = coeffs.cubes();
    for j in 0..2 {
        coeffs.values[j] = cubes
            .iter()
            .map(|&n| coefficient(distribution, seed, n, j))
            .collect();
    }
    coeffs
}

/// Reusable randomization operator for one grid and cutoff.
#[derive(Debug, Clone)]
pub struct Randomizer {
    kernel: CubeKernel,
}

impl Randomizer {
    pub fn new(grid: GridSpec, cutoff: Cutoff) -> Randomizer {
        Randomizer {
            kernel: CubeKernel::new(grid, cutoff),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.kernel.grid()
    }

    pub fn cutoff(&self) -> Cutoff {
        self.kernel.cutoff()
    }

    /// Cubes in range whose projector vanishes on the grid; they contribute
    /// nothing to the randomized data.
    pub fn empty_cube_count(&self) -> usize {
        self.kernel.empty_cube_count()
    }

    /// The random multiplier `Σ_n g_{n,j} ψ(ξ - n)` on every spectral slot.
    pub fn symbol(&self, coeffs: &RandomCoefficients, j: usize) -> Vec<Complex64> {
        self.kernel
            .combine(|n| coeffs.get(n, j).unwrap_or_default())
    }

    pub fn apply(&self, pair: &FieldPair, coeffs: &RandomCoefficients) -> Result<FieldPair, RandomizationError> {
        if pair.grid() != self.grid() || coeffs.grid() != self.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let fields = [&pair.position, &pair.velocity];
        let mut out = Vec::with_capacity(2);
        for (j, field) in fields.into_iter().enumerate() {
            let symbol = self.symbol(coeffs, j);
            let spectral = field
                .spectral()
                .iter()
                .zip(&symbol)
                .map(|(c, m)| c * m)
                .collect();
            out.push(Field::from_spectral(*self.grid(), spectral)?);
        }
        let velocity = out.pop().unwrap();
        let position = out.pop().unwrap();
        Ok(FieldPair { position, velocity })
    }
}

/// `(Σ_n g_{n,0} ψ(D-n) u₀, Σ_n g_{n,1} ψ(D-n) u₁)`.
pub fn randomize_pair(
    u0: &Field,
    u1: &Field,
    coeffs: &RandomCoefficients,
    cutoff: Cutoff,
) -> Result<FieldPair, RandomizationError> {
    let pair = FieldPair::new(u0.clone(), u1.clone())?;
    Randomizer::new(*coeffs.grid(), cutoff).apply(&pair, coeffs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoughProfile {
    /// Real, centred power law.
    PowerLaw,
    /// Power law times seeded Hermitian random phases.
    RandomizedPhasePowerLaw,
}

/// Exponent margin `ε₀` putting the data just outside `𝓗^{s+ε}` for every `ε > 0`.
pub const ROUGHNESS_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RoughPair {
    pub pair: FieldPair,
    pub s: f64,
    /// `‖(u₀,u₁)‖_{𝓗^s}` measured on the grid.
    pub norm: f64,
}

impl RoughPair {
    /// Rescales so that the measured `𝓗^s` norm equals `target`.
    pub fn normalized(self, target: f64) -> RoughPair {
        let factor = if self.norm > 0.0 { target / self.norm } else { 0.0 };
        RoughPair {
            pair: self.pair.scaled(factor),
            s: self.s,
            norm: self.norm * factor,
        }
    }
}

/// A real pair with `|û₀(ξ)| ∝ ⟨ξ⟩^{-s-d/2-ε₀}` and
/// `|û₁(ξ)| ∝ ⟨ξ⟩^{-(s-1)-d/2-ε₀}`, centred at the origin, with the Nyquist
/// slots empty.
///
/// The coefficients approximate the continuum profile with that Fourier
/// transform, `(2π)^{-d/2} f̂(ξ_k) (2π/L)^d`, so refining the grid at fixed
/// box size only adds higher frequencies.
pub fn make_rough_pair(
    grid: GridSpec,
    s: f64,
    profile: RoughProfile,
    seed: u64,
) -> Result<RoughPair, RandomizationError> {
    if !(s > 0.0 && s < 1.0) {
        return Err(RandomizationError::InvalidRegularity(s));
    }
    let d = grid.dim() as f64;
    let dk = grid.frequency_step();
    let weight = dk.powf(d) / (2.0 * PI).powf(d / 2.0);
    let n = grid.points_per_axis();
    let build = |sigma: f64, j: usize| -> Vec<Complex64> {
        let exponent = -sigma - d / 2.0 - ROUGHNESS_MARGIN;
        (0..grid.len())
            .map(|flat| {
                let idx = grid.multi_index(flat);
                let mut k = [0i64; 3];
                for a in 0..grid.dim() {
                    if idx[a] == n / 2 {
                        return Complex64::default();
                    }
                    k[a] = grid.wavenumber(idx[a]);
                }
                let xi2: f64 = k.iter().map(|&c| (c as f64 * dk).powi(2)).sum();
                let parity = if k.iter().sum::<i64>().rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let amplitude = weight * parity * (1.0 + xi2).powf(0.5 * exponent);
                let phase = match profile {
                    RoughProfile::PowerLaw => Complex64::new(1.0, 0.0),
                    RoughProfile::RandomizedPhasePowerLaw => phase_factor(seed, CubeIndex(k), j),
                };
                phase * amplitude
            })
            .collect()
    };
    let u0 = Field::from_spectral(grid, build(s, 0))?;
    let u1 = Field::from_spectral(grid, build(s - 1.0, 1))?;
    let pair = FieldPair::new(u0, u1)?;
    let norm = pair.sobolev_norm(s, false)?;
    Ok(RoughPair { pair, s, norm })
}

/// Unimodular phase with `phase(-k) = conj phase(k)`, real at `k = 0`.
fn phase_factor(seed: u64, k: CubeIndex, j: usize) -> Complex64 {
    if k.is_zero() {
        return Complex64::new(1.0, 0.0);
    }
    if !k.in_half_lattice() {
        return phase_factor(seed, k.neg(), j).conj();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5048_4153_45));
    rng.set_stream(stream_id(k, j));
    Complex64::from_polar(1.0, 2.0 * PI * rng.random::<f64>())
}

/// Independent draws of the coefficient family, one per member seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientEnsemble {
    pub distribution: DistributionKind,
    pub seed: u64,
    pub members: usize,
}

impl CoefficientEnsemble {
    /// `g_{n,j}` of member `m`.
    pub fn coefficient(&self, m: usize, n: CubeIndex, j: usize) -> Complex64 {
        coefficient(self.distribution, derive_seed(self.seed, m as u64), n, j)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentRow {
    pub p: f64,
    /// `(E|Σ g_n c_n|^p)^{1/p}` over the ensemble.
    pub moment: f64,
    /// `moment / (√p ‖c‖_{ℓ²})`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub l2_norm: f64,
    pub members: usize,
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn max_ratio(&self) -> f64 {
        self.rows.iter().map(|r| r.ratio).fold(0.0, f64::max)
    }
}

/// Empirical moments of `Σ_n g_{n,0} c_n` for a Hermitian sequence `c`.
pub fn khintchine_check(
    ensemble: &CoefficientEnsemble,
    c: &[(CubeIndex, Complex64)],
    exponents: &[f64],
) -> Result<MomentReport, RandomizationError> {
    if ensemble.members == 0 {
        return Err(RandomizationError::InvalidParameter("ensemble is empty".into()));
    }
    if let Some(&p) = exponents.iter().find(|&&p| !(p >= 2.0 && p.is_finite())) {
        return Err(RandomizationError::InvalidParameter(format!("moment exponent {p} is not in [2, ∞)")));
    }
    let lookup: std::collections::HashMap<CubeIndex, Complex64> = c.iter().copied().collect();
    let scale = c.iter().map(|(_, v)| v.norm()).fold(0.0, f64::max);
    let mut defect = 0.0f64;
    for (n, v) in c {
        let partner = lookup.get(&n.neg()).copied().unwrap_or_default();
        defect = defect.max((partner - v.conj()).norm());
    }
    if defect > 1e-12 * scale.max(f64::MIN_POSITIVE) && defect > 0.0 {
        return Err(RandomizationError::NonSymmetricSequence(defect));
    }
    let l2_norm = c.iter().map(|(_, v)| v.norm_sqr()).sum::<f64>().sqrt();
    let samples: Vec<f64> = (0..ensemble.members)
        .map(|m| {
            c.iter()
                .map(|&(n, v)| (ensemble.coefficient(m, n, 0) * v).re)
                .sum()
        })
        .collect();
    let rows = exponents
        .iter()
        .map(|&p| {
            let mean = samples.iter().map(|x| x.abs().powf(p)).sum::<f64>() / samples.len() as f64;
            let moment = mean.powf(1.0 / p);
            let ratio = if l2_norm > 0.0 { moment / (p.sqrt() * l2_norm) } else { 0.0 };
            MomentRow { p, moment, ratio }
        })
        .collect();
    Ok(MomentReport {
        l2_norm,
        members: ensemble.members,
        rows,
    })
}

/// `‖u₀^ω‖_{H^s} / ‖u₀‖_{H^s}` for one randomized sample.
pub fn regularity_ratio(original: &Field, randomized: &Field, s: f64) -> Result<f64, GridError> {
    Ok(sobolev_norm(randomized, s, false)? / sobolev_norm(original, s, false)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cube_project, lebesgue_norm, make_grid};
    use proptest::prelude::*;

    fn grid3() -> GridSpec {
        make_grid(3, 8, 2.0 * PI / 0.8, 1.0).unwrap()
    }

    #[test]
    fn rademacher_support() {
        let c = sample_coefficients(grid3(), DistributionKind::Rademacher, 17);
        for n in c.cubes() {
            for j in 0..2 {
                let g = c.get(n, j).unwrap();
                if n.is_zero() {
                    assert!(g == Complex64::new(1.0, 0.0) || g == Complex64::new(-1.0, 0.0));
                } else {
                    assert!((g.norm() - 1.0).abs() < 1e-15);
                    assert!((g.re.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
                    assert!((g.im.abs() - FRAC_1_SQRT_2).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn hermitian_pair_product() {
        for dist in DistributionKind::ALL {
            let c = sample_coefficients(grid3(), dist, 5);
            let a = c.get(CubeIndex([1, 0, 0]), 0).unwrap();
            let b = c.get(CubeIndex([-1, 0, 0]), 0).unwrap();
            assert!((a * b - Complex64::new(a.norm_sqr(), 0.0)).norm() < 1e-15);
            assert_eq!(b, a.conj());
            assert_eq!(c.hermitian_defect(), 0.0);
            assert_eq!(c.get(CubeIndex::ZERO, 1).unwrap().im, 0.0);
        }
    }

    #[test]
    fn gaussian_moments_of_one_coefficient() {
        let m = 100_000;
        let n = CubeIndex([1, 0, 0]);
        let mut mean = Complex64::default();
        let mut second = 0.0;
        for i in 0..m {
            let g = coefficient(DistributionKind::StandardGaussianComplex, derive_seed(2024, i), n, 0);
            mean += g;
            second += g.norm_sqr();
        }
        mean /= m as f64;
        second /= m as f64;
        assert!(mean.norm() < 3.0 / (m as f64).sqrt());
        assert!((second - 1.0).abs() < 0.02);
    }

    #[test]
    fn all_laws_have_unit_variance_and_balanced_components() {
        let m = 40_000;
        for dist in DistributionKind::ALL {
            for n in [CubeIndex::ZERO, CubeIndex([2, -1, 0])] {
                let (mut s2, mut re2, mut reim) = (0.0, 0.0, 0.0);
                for i in 0..m {
                    let g = coefficient(dist, derive_seed(9, i), n, 1);
                    s2 += g.norm_sqr();
                    re2 += g.re * g.re;
                    reim += g.re * g.im;
                }
                let mf = m as f64;
                assert!((s2 / mf - 1.0).abs() < 0.03, "{dist:?}");
                if !n.is_zero() {
                    assert!((re2 / mf - 0.5).abs() < 0.02, "{dist:?}");
                    assert!((reim / mf).abs() < 0.02, "{dist:?}");
                }
            }
        }
    }

    #[test]
    fn j_streams_are_uncorrelated() {
        let m = 20_000;
        let n = CubeIndex([0, 1, 0]);
        let corr: f64 = (0..m)
            .map(|i| {
                let s = derive_seed(3, i);
                let a = coefficient(DistributionKind::StandardGaussianComplex, s, n, 0);
                let b = coefficient(DistributionKind::StandardGaussianComplex, s, n, 1);
                (a * b.conj()).re
            })
            .sum::<f64>()
            / m as f64;
        assert!(corr.abs() < 3.0 / (m as f64).sqrt());
    }

    fn smooth_field(grid: GridSpec) -> Field {
        Field::from_fn(grid, |x| {
            let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
            (-0.5 * r2).exp() * (1.0 + 0.3 * x[0])
        })
    }

    #[test]
    fn unit_coefficients_reproduce_the_data() {
        let g = make_grid(3, 16, 9.0, 1.0).unwrap();
        let u0 = smooth_field(g);
        let u1 = u0.scaled(-0.5);
        for cutoff in [Cutoff::SmoothPsi, Cutoff::SharpIndicator] {
            let ones = sample_coefficients(g, DistributionKind::Rademacher, 0)
                .with_values(|_, _| Complex64::new(1.0, 0.0));
            let out = randomize_pair(&u0, &u1, &ones, cutoff).unwrap();
            assert!(out.position.max_spectral_deviation(&u0) < 1e-14);
            assert!(out.velocity.max_spectral_deviation(&u1) < 1e-14);
        }
    }

    #[test]
    fn single_cube_data_is_scaled_by_its_coefficient() {
        let g = make_grid(2, 32, 2.0 * PI, 1.0).unwrap();
        // Frequencies (3, 0) and (-3, 0) sit in sharp cubes ±(3, 0).
        let u0 = Field::from_fn(g, |x| (3.0 * x[0]).cos());
        let c = sample_coefficients(g, DistributionKind::StandardGaussianComplex, 44);
        let out = randomize_pair(&u0, &Field::zeros(g), &c, Cutoff::SharpIndicator).unwrap();
        let gm = c.get(CubeIndex([3, 0, 0]), 0).unwrap();
        let expected = gm.norm() * sobolev_norm(&u0, 0.0, false).unwrap();
        let got = sobolev_norm(&out.position, 0.0, false).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn randomized_fields_are_real() {
        let g = make_grid(3, 16, 7.0, 1.0).unwrap();
        let rough = make_rough_pair(g, 0.7, RoughProfile::RandomizedPhasePowerLaw, 8).unwrap();
        for dist in DistributionKind::ALL {
            for cutoff in [Cutoff::SmoothPsi, Cutoff::SharpIndicator] {
                let c = sample_coefficients(g, dist, 77);
                let out = Randomizer::new(g, cutoff).apply(&rough.pair, &c).unwrap();
                assert!(out.position.imaginary_residue() < 1e-12);
                assert!(out.velocity.imaginary_residue() < 1e-12);
            }
        }
    }

    #[test]
    fn sharp_gaussian_mean_square_matches_cube_sum() {
        let g = make_grid(2, 16, 9.0, 1.0).unwrap();
        let u0 = Field::from_fn(g, |x| (-(x[0] * x[0] + 2.0 * x[1] * x[1]) / 2.0).exp()).without_nyquist();
        let randomizer = Randomizer::new(g, Cutoff::SharpIndicator);
        let members = 2000;
        let mut mean = 0.0;
        for m in 0..members {
            let c = sample_coefficients(g, DistributionKind::StandardGaussianComplex, derive_seed(1, m));
            let out = randomizer.apply(&FieldPair::new(u0.clone(), Field::zeros(g)).unwrap(), &c).unwrap();
            mean += sobolev_norm(&out.position, 0.0, false).unwrap().powi(2);
        }
        mean /= members as f64;
        let kernel = CubeKernel::new(g, Cutoff::SharpIndicator);
        let oracle: f64 = kernel
            .cubes()
            .into_iter()
            .filter_map(|n| cube_project(&u0, n, Cutoff::SharpIndicator).ok())
            .map(|p| sobolev_norm(&p, 0.0, false).unwrap().powi(2))
            .sum();
        assert!((mean / oracle - 1.0).abs() < 0.05, "{mean} vs {oracle}");
    }

    #[test]
    fn rough_pair_regularity() {
        let coarse = make_grid(3, 32, PI, 1.0).unwrap();
        let fine = make_grid(3, 64, PI, 1.0).unwrap();
        let a = make_rough_pair(coarse, 0.75, RoughProfile::PowerLaw, 1).unwrap();
        let b = make_rough_pair(fine, 0.75, RoughProfile::PowerLaw, 1).unwrap();
        let low_a = sobolev_norm(&a.pair.position, 0.6, false).unwrap();
        let low_b = sobolev_norm(&b.pair.position, 0.6, false).unwrap();
        assert!((low_b / low_a - 1.0).abs() < 0.05, "{low_a} {low_b}");
        let high_a = sobolev_norm(&a.pair.position, 0.9, false).unwrap();
        let high_b = sobolev_norm(&b.pair.position, 0.9, false).unwrap();
        assert!(high_b > high_a * 1.05);
        let recomputed = a.pair.sobolev_norm(0.75, false).unwrap();
        assert!((recomputed - a.norm).abs() <= 1e-12 * a.norm);
    }

    #[test]
    fn rough_pair_is_centred_and_deterministic() {
        let g = make_grid(2, 32, 10.0, 1.0).unwrap();
        let a = make_rough_pair(g, 0.6, RoughProfile::PowerLaw, 3).unwrap();
        let b = make_rough_pair(g, 0.6, RoughProfile::PowerLaw, 3).unwrap();
        assert_eq!(a, b);
        let values = a.pair.position.physical();
        let centre = 16 * 32 + 16;
        let peak = values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(values[centre], peak);
        assert!(a.pair.position.imaginary_residue() < 1e-13);
        assert_eq!(make_rough_pair(g, 1.2, RoughProfile::PowerLaw, 3).unwrap_err(), RandomizationError::InvalidRegularity(1.2));
    }

    #[test]
    fn khintchine_single_pair() {
        let e = CoefficientEnsemble {
            distribution: DistributionKind::StandardGaussianComplex,
            seed: 10,
            members: 10_000,
        };
        let n = CubeIndex([2, 1, 0]);
        let c = [(n, Complex64::new(0.5, 0.0)), (n.neg(), Complex64::new(0.5, 0.0))];
        let r = khintchine_check(&e, &c, &[2.0]).unwrap();
        assert!((r.l2_norm - FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((r.rows[0].moment / r.l2_norm - 1.0).abs() < 0.05);
    }

    #[test]
    fn khintchine_second_moment_any_law() {
        let c = [
            (CubeIndex::ZERO, Complex64::new(0.3, 0.0)),
            (CubeIndex([1, 0, 0]), Complex64::new(0.2, -0.7)),
            (CubeIndex([-1, 0, 0]), Complex64::new(0.2, 0.7)),
            (CubeIndex([0, 3, -1]), Complex64::new(-1.0, 0.4)),
            (CubeIndex([0, -3, 1]), Complex64::new(-1.0, -0.4)),
        ];
        for distribution in DistributionKind::ALL {
            let e = CoefficientEnsemble { distribution, seed: 4, members: 10_000 };
            let r = khintchine_check(&e, &c, &[2.0, 4.0, 8.0]).unwrap();
            assert!((r.rows[0].moment / r.l2_norm - 1.0).abs() < 0.05, "{distribution:?}");
            assert!(r.max_ratio() < 1.0);
        }
    }

    #[test]
    fn khintchine_edge_cases() {
        let e = CoefficientEnsemble {
            distribution: DistributionKind::Rademacher,
            seed: 0,
            members: 1000,
        };
        let zero = [(CubeIndex([1, 0, 0]), Complex64::default())];
        assert_eq!(khintchine_check(&e, &zero, &[2.0]).unwrap().rows[0].moment, 0.0);
        let bad = [(CubeIndex([1, 0, 0]), Complex64::new(1.0, 0.0))];
        assert!(matches!(khintchine_check(&e, &bad, &[2.0]), Err(RandomizationError::NonSymmetricSequence(_))));
    }

    #[test]
    fn document_round_trip_regenerates_values() {
        let c = sample_coefficients(grid3(), DistributionKind::UniformDisk, 99);
        let json = serde_json::to_string(&c).unwrap();
        assert!(!json.contains("values"));
        let back: RandomCoefficients = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        let mut doc = c.document();
        doc.grid_hash = "0000".into();
        assert!(RandomCoefficients::from_document(&doc).is_err());
    }

    #[test]
    fn regularity_is_preserved() {
        let g = make_grid(3, 16, 7.0, 1.0).unwrap();
        let rough = make_rough_pair(g, 0.7, RoughProfile::PowerLaw, 0).unwrap();
        let randomizer = Randomizer::new(g, Cutoff::SmoothPsi);
        let mut ratios: Vec<f64> = (0..200)
            .map(|m| {
                let c = sample_coefficients(g, DistributionKind::StandardGaussianComplex, derive_seed(6, m));
                let out = randomizer.apply(&rough.pair, &c).unwrap();
                regularity_ratio(&rough.pair.position, &out.position, 0.7).unwrap()
            })
            .collect();
        ratios.sort_by(f64::total_cmp);
        let median = ratios[100];
        assert!((0.5..=2.0).contains(&median), "median {median}");
    }

    #[test]
    fn integrability_gain_is_resolution_stable() {
        let mut p99 = Vec::new();
        for n in [16, 32] {
            let g = make_grid(3, n, 2.0 * PI / 0.8, 1.0).unwrap();
            let rough = make_rough_pair(g, 0.7, RoughProfile::RandomizedPhasePowerLaw, 12).unwrap();
            // Remove the single-cube concentration at the origin.
            let u0 = rough.pair.position.minus(&cube_project(&rough.pair.position, CubeIndex::ZERO, Cutoff::SmoothPsi).unwrap()).unwrap();
            let l2 = sobolev_norm(&u0, 0.0, false).unwrap();
            let randomizer = Randomizer::new(g, Cutoff::SmoothPsi);
            let pair = FieldPair::new(u0, Field::zeros(g)).unwrap();
            let mut ratios: Vec<f64> = (0..100)
                .map(|m| {
                    let c = sample_coefficients(g, DistributionKind::StandardGaussianComplex, derive_seed(21, m));
                    let out = randomizer.apply(&pair, &c).unwrap();
                    lebesgue_norm(&out.position, 6.0).unwrap() / l2
                })
                .collect();
            ratios.sort_by(f64::total_cmp);
            p99.push(ratios[98]);
        }
        let q = p99[1] / p99[0];
        assert!((0.5..=2.0).contains(&q), "{p99:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn sampling_is_deterministic_and_hermitian(seed in any::<u64>(), which in 0usize..3) {
            let dist = DistributionKind::ALL[which];
            let a = sample_coefficients(grid3(), dist, seed);
            let b = sample_coefficients(grid3(), dist, seed);
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.hermitian_defect(), 0.0);
            prop_assert_eq!(a.get(CubeIndex::ZERO, 0).unwrap().im, 0.0);
        }

        #[test]
        fn coefficient_does_not_depend_on_enumeration(seed in any::<u64>(), x in -5i64..=5, y in -5i64..=5, z in -5i64..=5) {
            let c = sample_coefficients(grid3(), DistributionKind::StandardGaussianComplex, seed);
            let n = CubeIndex([x, y, z]);
            prop_assert_eq!(c.get(n, 1).unwrap(), coefficient(DistributionKind::StandardGaussianComplex, seed, n, 1));
        }
    }
}
