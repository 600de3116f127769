//! Periodic-box discretization, fields, Fourier multipliers and norms.
//!
//! The box is `[-L/2, L/2)^d` sampled at `n` points per axis. Spectral data
//! is stored in FFT order: axis index `i` carries wavenumber `i` for
//! `i < n/2` and `i - n` otherwise, so frequency `ξ = (2π/L)·k`. The forward
//! transform carries the `1/n^d` factor and is taken relative to the first
//! grid point, so `u(x) = Σ_k û_k e^{iξ·(x + L/2)}` and
//! `‖u‖²_{L²} = L^d Σ_k |û_k|²`. A profile centred at the origin therefore
//! carries the sign `(-1)^{k₁+…+k_d}` in its coefficients.
//!
//! The index `n/2` on each axis is the Nyquist mode. It is the grid image of
//! both `+n/2` and `-n/2`, and every multiplier symbol is averaged over those
//! images there, which keeps Hermitian symbols Hermitian on the grid.

use std::borrow::Cow;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fft::{self, Direction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("buffer length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("cube {0} contains no lattice frequency")]
    CubeOutOfRange(CubeIndex),
    #[error("homogeneous norm of negative order is undefined for a field with nonzero mean")]
    UndefinedNorm,
}

/// Plain grid parameters, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    pub dim: usize,
    pub points_per_axis: usize,
    pub box_length: f64,
    #[serde(default = "default_dealias_ratio")]
    pub dealias_ratio: f64,
}

fn default_dealias_ratio() -> f64 {
    3.0
}

/// Validated periodic box geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridParams", into = "GridParams")]
pub struct GridSpec {
    dim: usize,
    n: usize,
    length: f64,
    dealias_ratio: f64,
}

impl TryFrom<GridParams> for GridSpec {
    type Error = GridError;

    fn try_from(p: GridParams) -> Result<Self, Self::Error> {
        make_grid(p.dim, p.points_per_axis, p.box_length, p.dealias_ratio)
    }
}

impl From<GridSpec> for GridParams {
    fn from(g: GridSpec) -> Self {
        GridParams {
            dim: g.dim,
            points_per_axis: g.n,
            box_length: g.length,
            dealias_ratio: g.dealias_ratio,
        }
    }
}

/// Builds a grid, checking `dim ∈ {1,2,3}`, a power-of-two point count of
/// at least 8, a positive box length and a dealiasing ratio of at least 1.
pub fn make_grid(
    dim: usize,
    points_per_axis: usize,
    box_length: f64,
    dealias_ratio: f64,
) -> Result<GridSpec, GridError> {
    if !(1..=3).contains(&dim) {
        return Err(GridError::InvalidParameter(format!("dim must be 1, 2 or 3, got {dim}")));
    }
    if points_per_axis < 8 || !points_per_axis.is_power_of_two() {
        return Err(GridError::InvalidParameter(format!(
            "points_per_axis must be a power of two >= 8, got {points_per_axis}"
        )));
    }
    if !(box_length.is_finite() && box_length > 0.0) {
        return Err(GridError::InvalidParameter(format!(
            "box_length must be positive, got {box_length}"
        )));
    }
    if !(dealias_ratio.is_finite() && dealias_ratio >= 1.0) {
        return Err(GridError::InvalidParameter(format!(
            "dealias_ratio must be >= 1, got {dealias_ratio}"
        )));
    }
    Ok(GridSpec {
        dim,
        n: points_per_axis,
        length: box_length,
        dealias_ratio,
    })
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points_per_axis(&self) -> usize {
        self.n
    }

    pub fn box_length(&self) -> f64 {
        self.length
    }

    pub fn dealias_ratio(&self) -> f64 {
        self.dealias_ratio
    }

    /// Same geometry with a different dealiasing ratio.
    pub fn with_dealias_ratio(&self, ratio: f64) -> Result<GridSpec, GridError> {
        make_grid(self.dim, self.n, self.length, ratio)
    }

    /// Total number of grid points, `n^d`.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn volume(&self) -> f64 {
        self.length.powi(self.dim as i32)
    }

    /// Lattice spacing in frequency, `2π/L`.
    pub fn frequency_step(&self) -> f64 {
        2.0 * PI / self.length
    }

    /// Signed wavenumber of axis index `i`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        if i < self.n / 2 {
            i as i64
        } else {
            i as i64 - self.n as i64
        }
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        i == self.n / 2
    }

    /// Frequencies `ξ_k` represented along one axis, in ascending order.
    pub fn axis_frequencies(&self) -> Vec<f64> {
        let h = self.n as i64 / 2;
        (-h..h).map(|k| k as f64 * self.frequency_step()).collect()
    }

    /// Largest per-axis frequency magnitude `(2π/L)·n/2`.
    pub fn max_frequency(&self) -> f64 {
        self.frequency_step() * (self.n / 2) as f64
    }

    /// Largest radial frequency on the grid, `√d` times the axis maximum.
    pub fn band_limit(&self) -> f64 {
        self.max_frequency() * (self.dim as f64).sqrt()
    }

    /// Points per axis of the padded grid used for nonlinear products.
    pub fn padded_points(&self) -> usize {
        let m = (self.dealias_ratio * self.n as f64 - 1e-9).ceil() as usize;
        m + m % 2
    }

    /// Whether nonlinear products are additionally smoothed by a spectral
    /// filter (padding below the exact quintic ratio of 3).
    pub fn uses_filter(&self) -> bool {
        self.dealias_ratio < 3.0
    }

    /// Axis indices of flat index `flat`; unused axes are zero.
    pub fn multi_index(&self, flat: usize) -> [usize; 3] {
        let mut out = [0usize; 3];
        let mut rem = flat;
        for a in (0..self.dim).rev() {
            out[a] = rem % self.n;
            rem /= self.n;
        }
        out
    }

    /// Frequency vector of every spectral slot, in storage order.
    pub fn frequency_vectors(&self) -> Vec<[f64; 3]> {
        let dk = self.frequency_step();
        (0..self.len())
            .map(|flat| {
                let idx = self.multi_index(flat);
                let mut xi = [0.0; 3];
                for a in 0..self.dim {
                    xi[a] = dk * self.wavenumber(idx[a]) as f64;
                }
                xi
            })
            .collect()
    }

    /// `|ξ|` for every spectral slot.
    pub fn abs_frequencies(&self) -> Vec<f64> {
        self.frequency_vectors()
            .iter()
            .map(|xi| (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt())
            .collect()
    }

    /// Physical coordinates of every grid point, in storage order.
    pub fn coordinates(&self) -> Vec<[f64; 3]> {
        let h = self.spacing();
        (0..self.len())
            .map(|flat| {
                let idx = self.multi_index(flat);
                let mut x = [0.0; 3];
                for a in 0..self.dim {
                    x[a] = -0.5 * self.length + idx[a] as f64 * h;
                }
                x
            })
            .collect()
    }

    /// Flat index of the slot holding `-k`.
    pub fn conjugate_index(&self, flat: usize) -> usize {
        let idx = self.multi_index(flat);
        let mut out = 0;
        for &i in idx.iter().take(self.dim) {
            out = out * self.n + (self.n - i) % self.n;
        }
        out
    }

    /// Symbol array for an arbitrary function of frequency. On Nyquist
    /// slots the function is averaged over the `±` images.
    pub fn symbol_from_fn<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn([f64; 3]) -> Complex64,
    {
        let dk = self.frequency_step();
        (0..self.len())
            .map(|flat| {
                let idx = self.multi_index(flat);
                let mut xi = [0.0; 3];
                let mut nyq = Vec::new();
                for a in 0..self.dim {
                    xi[a] = dk * self.wavenumber(idx[a]) as f64;
                    if self.is_nyquist(idx[a]) {
                        nyq.push(a);
                    }
                }
                if nyq.is_empty() {
                    return f(xi);
                }
                let images = 1usize << nyq.len();
                let mut acc = Complex64::default();
                for mask in 0..images {
                    let mut image = xi;
                    for (bit, &a) in nyq.iter().enumerate() {
                        if mask & (1 << bit) != 0 {
                            image[a] = -image[a];
                        }
                    }
                    acc += f(image);
                }
                acc / images as f64
            })
            .collect()
    }

    /// Symbol array for a radial real function `f(|ξ|)`.
    pub fn radial_symbol<F>(&self, f: F) -> Vec<Complex64>
    where
        F: Fn(f64) -> f64,
    {
        self.abs_frequencies()
            .into_iter()
            .map(|r| Complex64::new(f(r), 0.0))
            .collect()
    }

    /// Short content hash identifying the grid.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&GridParams::from(*self)).expect("grid serializes");
        let digest = Sha256::digest(json.as_bytes());
        hex::encode(&digest[..8])
    }

    pub fn dealiaser(&self) -> Dealiaser {
        Dealiaser::new(*self)
    }

    pub(crate) fn to_spectral(&self, physical: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = physical.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft::transform(&mut buf, self.n, self.dim, Direction::Forward);
        buf
    }

    pub(crate) fn to_physical(&self, spectral: &[Complex64]) -> Vec<f64> {
        let mut buf = spectral.to_vec();
        fft::transform(&mut buf, self.n, self.dim, Direction::Inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<(), GridError> {
        if len == self.len() {
            Ok(())
        } else {
            Err(GridError::LengthMismatch {
                expected: self.len(),
                got: len,
            })
        }
    }
}

/// A real scalar field on a grid, held in physical and/or spectral form.
#[derive(Debug, Clone)]
pub struct Field {
    grid: GridSpec,
    physical: Option<Vec<f64>>,
    spectral: Option<Vec<Complex64>>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.spectral() == other.spectral()
    }
}

impl Field {
    pub fn zeros(grid: GridSpec) -> Field {
        Field {
            grid,
            physical: None,
            spectral: Some(vec![Complex64::default(); grid.len()]),
        }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Field {
        Field {
            grid,
            physical: Some(vec![value; grid.len()]),
            spectral: None,
        }
    }

    pub fn from_physical(grid: GridSpec, data: Vec<f64>) -> Result<Field, GridError> {
        grid.check_len(data.len())?;
        Ok(Field {
            grid,
            physical: Some(data),
            spectral: None,
        })
    }

    /// Wraps spectral coefficients. The caller is responsible for Hermitian
    /// symmetry; see [`Field::hermitian_defect`].
    pub fn from_spectral(grid: GridSpec, data: Vec<Complex64>) -> Result<Field, GridError> {
        grid.check_len(data.len())?;
        Ok(Field {
            grid,
            physical: None,
            spectral: Some(data),
        })
    }

    /// Samples `f` at the grid points. Only the first `dim` coordinates of
    /// the argument are meaningful.
    pub fn from_fn<F>(grid: GridSpec, f: F) -> Field
    where
        F: Fn([f64; 3]) -> f64,
    {
        let data = grid.coordinates().into_iter().map(f).collect();
        Field {
            grid,
            physical: Some(data),
            spectral: None,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn has_physical(&self) -> bool {
        self.physical.is_some()
    }

    pub fn has_spectral(&self) -> bool {
        self.spectral.is_some()
    }

    pub fn physical(&self) -> Cow<'_, [f64]> {
        match (&self.physical, &self.spectral) {
            (Some(p), _) => Cow::Borrowed(p),
            (None, Some(s)) => Cow::Owned(self.grid.to_physical(s)),
            (None, None) => unreachable!("field holds no representation"),
        }
    }

    pub fn spectral(&self) -> Cow<'_, [Complex64]> {
        match (&self.spectral, &self.physical) {
            (Some(s), _) => Cow::Borrowed(s),
            (None, Some(p)) => Cow::Owned(self.grid.to_spectral(p)),
            (None, None) => unreachable!("field holds no representation"),
        }
    }

    pub fn into_spectral(self) -> Vec<Complex64> {
        match self.spectral {
            Some(s) => s,
            None => self.grid.to_spectral(self.physical.as_deref().unwrap()),
        }
    }

    pub fn into_physical(self) -> Vec<f64> {
        match self.physical {
            Some(p) => p,
            None => self.grid.to_physical(self.spectral.as_deref().unwrap()),
        }
    }

    /// Mutable spectral access; the physical representation is dropped.
    pub fn spectral_mut(&mut self) -> &mut Vec<Complex64> {
        if self.spectral.is_none() {
            let p = self.physical.as_deref().unwrap();
            self.spectral = Some(self.grid.to_spectral(p));
        }
        self.physical = None;
        self.spectral.as_mut().unwrap()
    }

    /// Mutable physical access; the spectral representation is dropped.
    pub fn physical_mut(&mut self) -> &mut Vec<f64> {
        if self.physical.is_none() {
            let s = self.spectral.as_deref().unwrap();
            self.physical = Some(self.grid.to_physical(s));
        }
        self.spectral = None;
        self.physical.as_mut().unwrap()
    }

    /// Computes and caches both representations.
    pub fn materialize(&mut self) {
        if self.spectral.is_none() {
            self.spectral = Some(self.grid.to_spectral(self.physical.as_deref().unwrap()));
        }
        if self.physical.is_none() {
            self.physical = Some(self.grid.to_physical(self.spectral.as_deref().unwrap()));
        }
    }

    /// `max_k |û_k - conj(û_{-k})|`, zero for a real field.
    pub fn hermitian_defect(&self) -> f64 {
        let s = self.spectral();
        (0..s.len())
            .map(|k| (s[k] - s[self.grid.conjugate_index(k)].conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Largest imaginary part left by a complex inverse transform, relative
    /// to the largest real part.
    pub fn imaginary_residue(&self) -> f64 {
        let mut buf = self.spectral().into_owned();
        fft::transform(&mut buf, self.grid.n, self.grid.dim, Direction::Inverse);
        let (re, im) = buf
            .iter()
            .fold((0.0f64, 0.0f64), |(r, i), c| (r.max(c.re.abs()), i.max(c.im.abs())));
        if re == 0.0 {
            im
        } else {
            im / re
        }
    }

    pub fn scaled(&self, factor: f64) -> Field {
        let spectral = self.spectral().iter().map(|c| c * factor).collect();
        Field {
            grid: self.grid,
            physical: None,
            spectral: Some(spectral),
        }
    }

    /// `a·self + b·other`, computed spectrally.
    pub fn combine(&self, a: f64, other: &Field, b: f64) -> Result<Field, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        let x = self.spectral();
        let y = other.spectral();
        let spectral = x.iter().zip(y.iter()).map(|(p, q)| p * a + q * b).collect();
        Ok(Field {
            grid: self.grid,
            physical: None,
            spectral: Some(spectral),
        })
    }

    pub fn plus(&self, other: &Field) -> Result<Field, GridError> {
        self.combine(1.0, other, 1.0)
    }

    pub fn minus(&self, other: &Field) -> Result<Field, GridError> {
        self.combine(1.0, other, -1.0)
    }

    /// `∫ u·w dx` over the box.
    pub fn inner(&self, other: &Field) -> Result<f64, GridError> {
        if self.grid != other.grid {
            return Err(GridError::GridMismatch);
        }
        let x = self.spectral();
        let y = other.spectral();
        let sum: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p * q.conj()).re).sum();
        Ok(sum * self.grid.volume())
    }

    /// Largest spectral coefficient difference to `other`.
    pub fn max_spectral_deviation(&self, other: &Field) -> f64 {
        self.spectral()
            .iter()
            .zip(other.spectral().iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Zeroes the Nyquist slots.
    pub fn without_nyquist(&self) -> Field {
        let mut s = self.spectral().into_owned();
        zero_nyquist(&self.grid, &mut s);
        Field::from_spectral(self.grid, s).expect("length preserved")
    }
}

pub(crate) fn zero_nyquist(grid: &GridSpec, spectral: &mut [Complex64]) {
    for (flat, c) in spectral.iter_mut().enumerate() {
        let idx = grid.multi_index(flat);
        if idx.iter().take(grid.dim).any(|&i| grid.is_nyquist(i)) {
            *c = Complex64::default();
        }
    }
}

/// A state `(u, ∂ₜu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPair {
    pub position: Field,
    pub velocity: Field,
}

impl FieldPair {
    pub fn new(position: Field, velocity: Field) -> Result<FieldPair, GridError> {
        if position.grid != velocity.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(FieldPair { position, velocity })
    }

    pub fn zeros(grid: GridSpec) -> FieldPair {
        FieldPair {
            position: Field::zeros(grid),
            velocity: Field::zeros(grid),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.position.grid
    }

    pub fn scaled(&self, factor: f64) -> FieldPair {
        FieldPair {
            position: self.position.scaled(factor),
            velocity: self.velocity.scaled(factor),
        }
    }

    pub fn minus(&self, other: &FieldPair) -> Result<FieldPair, GridError> {
        Ok(FieldPair {
            position: self.position.minus(&other.position)?,
            velocity: self.velocity.minus(&other.velocity)?,
        })
    }

    pub fn plus(&self, other: &FieldPair) -> Result<FieldPair, GridError> {
        Ok(FieldPair {
            position: self.position.plus(&other.position)?,
            velocity: self.velocity.plus(&other.velocity)?,
        })
    }

    /// `‖(u, ∂ₜu)‖_{𝓗^s} = (‖u‖²_{H^s} + ‖∂ₜu‖²_{H^{s-1}})^{1/2}`, inhomogeneous
    /// or homogeneous.
    pub fn sobolev_norm(&self, s: f64, homogeneous: bool) -> Result<f64, GridError> {
        let a = sobolev_norm(&self.position, s, homogeneous)?;
        let b = sobolev_norm(&self.velocity, s - 1.0, homogeneous)?;
        Ok(a.hypot(b))
    }

    /// Homogeneous energy norm `‖(u,∂ₜu)‖_{Ḣ¹×L²}`; never fails because
    /// the position enters with a nonnegative order.
    pub fn energy_norm(&self) -> f64 {
        let a = sobolev_norm(&self.position, 1.0, true).expect("order 1 is always defined");
        let b = sobolev_norm(&self.velocity, 0.0, false).expect("order 0 is always defined");
        a.hypot(b)
    }

    /// `‖(u,∂ₜu)‖_{H¹×L²}`.
    pub fn h1_norm(&self) -> f64 {
        let a = sobolev_norm(&self.position, 1.0, false).expect("order 1 is always defined");
        let b = sobolev_norm(&self.velocity, 0.0, false).expect("order 0 is always defined");
        a.hypot(b)
    }
}

/// Family tag of a Fourier multiplier.
#[derive(Debug, Clone, PartialEq)]
pub enum MultiplierKind {
    LittlewoodPaley { n: Dyadic, mode: LpMode },
    Cube { n: CubeIndex, cutoff: Cutoff },
    Bessel { s: f64 },
    Homogeneous { s: f64 },
    Propagator(String),
    Composite,
    Custom(String),
}

/// A diagonal operator in frequency.
#[derive(Debug, Clone)]
pub struct Multiplier {
    grid: GridSpec,
    symbol: Vec<Complex64>,
    kind: MultiplierKind,
}

impl Multiplier {
    pub fn new(grid: GridSpec, symbol: Vec<Complex64>, kind: MultiplierKind) -> Result<Self, GridError> {
        grid.check_len(symbol.len())?;
        Ok(Multiplier { grid, symbol, kind })
    }

    /// Littlewood–Paley symbol (`φ_N`, `φ_{≤N}` or `1 - φ_{<N}`).
    pub fn littlewood_paley(grid: GridSpec, n: Dyadic, mode: LpMode) -> Multiplier {
        let big_n = n.get() as f64;
        let symbol = grid.radial_symbol(|r| lp_symbol(r, big_n, mode));
        Multiplier {
            grid,
            symbol,
            kind: MultiplierKind::LittlewoodPaley { n, mode },
        }
    }

    /// Bessel potential `⟨ξ⟩^s`.
    pub fn bessel(grid: GridSpec, s: f64) -> Multiplier {
        let symbol = grid.radial_symbol(|r| (1.0 + r * r).powf(0.5 * s));
        Multiplier {
            grid,
            symbol,
            kind: MultiplierKind::Bessel { s },
        }
    }

    /// Riesz potential `|ξ|^s`, taken as zero at `ξ = 0` for `s ≠ 0`.
    pub fn homogeneous(grid: GridSpec, s: f64) -> Multiplier {
        let symbol = grid.radial_symbol(|r| {
            if r == 0.0 {
                if s == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                r.powf(s)
            }
        });
        Multiplier {
            grid,
            symbol,
            kind: MultiplierKind::Homogeneous { s },
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kind(&self) -> &MultiplierKind {
        &self.kind
    }

    pub fn symbol(&self) -> &[Complex64] {
        &self.symbol
    }

    pub fn apply(&self, field: &Field) -> Field {
        assert_eq!(self.grid, field.grid, "multiplier and field grids differ");
        let spectral = field
            .spectral()
            .iter()
            .zip(&self.symbol)
            .map(|(c, m)| c * m)
            .collect();
        Field {
            grid: self.grid,
            physical: None,
            spectral: Some(spectral),
        }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Multiplier) -> Multiplier {
        assert_eq!(self.grid, other.grid, "multiplier grids differ");
        Multiplier {
            grid: self.grid,
            symbol: self.symbol.iter().zip(&other.symbol).map(|(a, b)| a * b).collect(),
            kind: MultiplierKind::Composite,
        }
    }

    /// `max_k |m(k) - conj m(-k)|`; zero means real fields map to real fields.
    pub fn hermitian_defect(&self) -> f64 {
        (0..self.symbol.len())
            .map(|k| (self.symbol[k] - self.symbol[self.grid.conjugate_index(k)].conj()).norm())
            .fold(0.0, f64::max)
    }
}

/// A dyadic integer `N = 2^j ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Dyadic(u32);

impl Dyadic {
    pub fn new(n: u32) -> Result<Dyadic, GridError> {
        if n >= 1 && n.is_power_of_two() {
            Ok(Dyadic(n))
        } else {
            Err(GridError::InvalidParameter(format!("{n} is not a dyadic integer >= 1")))
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// All dyadic `N` with `φ_N` nonzero somewhere on `grid`.
    pub fn covering(grid: &GridSpec) -> Vec<Dyadic> {
        let top = grid.band_limit();
        let mut out = vec![Dyadic(1)];
        let mut n = 2u32;
        // φ_N vanishes below 5N/8, so N up to 8/5 of the band limit suffices.
        while (n as f64) * 5.0 / 8.0 <= top {
            out.push(Dyadic(n));
            n *= 2;
        }
        out
    }
}

impl TryFrom<u32> for Dyadic {
    type Error = GridError;
    fn try_from(n: u32) -> Result<Self, Self::Error> {
        Dyadic::new(n)
    }
}

impl From<Dyadic> for u32 {
    fn from(d: Dyadic) -> u32 {
        d.0
    }
}

impl std::fmt::Display for Dyadic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(&self.0.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LpMode {
    /// `𝐏_N`
    ExactN,
    /// `𝐏_{≤N}`
    AtMostN,
    /// `𝐏_{≥N}`
    AtLeastN,
}

/// Smooth transition from 1 at `x ≤ 0` to 0 at `x ≥ 1`.
fn smooth_step_down(x: f64) -> f64 {
    fn f(t: f64) -> f64 {
        if t > 0.0 {
            (-1.0 / t).exp()
        } else {
            0.0
        }
    }
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        f(1.0 - x) / (f(1.0 - x) + f(x))
    }
}

/// The Littlewood–Paley bump: `1` on `[-5/4, 5/4]`, `0` outside
/// `[-8/5, 8/5]`, smooth and monotone in between.
pub fn lp_bump(r: f64) -> f64 {
    let r = r.abs();
    const INNER: f64 = 5.0 / 4.0;
    const OUTER: f64 = 8.0 / 5.0;
    smooth_step_down((r - INNER) / (OUTER - INNER))
}

fn lp_symbol(r: f64, big_n: f64, mode: LpMode) -> f64 {
    match mode {
        LpMode::AtMostN => lp_bump(r / big_n),
        LpMode::ExactN => {
            if big_n == 1.0 {
                lp_bump(r)
            } else {
                lp_bump(r / big_n) - lp_bump(2.0 * r / big_n)
            }
        }
        LpMode::AtLeastN => {
            if big_n == 1.0 {
                1.0
            } else {
                1.0 - lp_bump(2.0 * r / big_n)
            }
        }
    }
}

pub fn littlewood_paley_project(field: &Field, n: Dyadic, mode: LpMode) -> Field {
    Multiplier::littlewood_paley(field.grid, n, mode).apply(field)
}

/// Integer lattice point labelling a unit frequency cube; axes beyond the
/// grid dimension are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CubeIndex(pub [i64; 3]);

impl CubeIndex {
    pub const ZERO: CubeIndex = CubeIndex([0, 0, 0]);

    pub fn neg(self) -> CubeIndex {
        CubeIndex([-self.0[0], -self.0[1], -self.0[2]])
    }

    pub fn is_zero(self) -> bool {
        self.0 == [0, 0, 0]
    }

    /// Membership in the half lattice whose last nonzero coordinate is
    /// positive; the lattice is this set, its negative and the origin.
    pub fn in_half_lattice(self) -> bool {
        self.0.iter().rev().find(|&&c| c != 0).is_some_and(|&c| c > 0)
    }
}

impl std::fmt::Display for CubeIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

/// Frequency cutoff used by the unit-cube decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Cutoff {
    /// Smooth `ψ(ξ - n)` with `supp ψ ⊂ [-1,1]^d` and `Σ_n ψ(ξ - n) = 1`.
    SmoothPsi,
    /// Indicator of `n + [-1/2, 1/2)^d`.
    SharpIndicator,
}

/// One-dimensional bump `exp(-1/(1-t²))` on `(-1, 1)`.
fn cube_bump(t: f64) -> f64 {
    if t.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// Normalized one-dimensional factor of `ψ`: `b(t) / Σ_m b(t - m)`.
pub fn psi_factor(t: f64) -> f64 {
    let b = cube_bump(t);
    if b == 0.0 {
        return 0.0;
    }
    let base = t.floor() as i64;
    let total: f64 = (base - 1..=base + 2).map(|m| cube_bump(t - m as f64)).sum();
    b / total
}

/// The smooth cube cutoff `ψ(ξ) = Π_a psi_factor(ξ_a)`.
pub fn psi(xi: &[f64]) -> f64 {
    xi.iter().map(|&t| psi_factor(t)).product()
}

/// Index of the sharp cube containing `x`, rounding half away from zero so
/// that `cube(-x) = -cube(x)`.
fn sharp_cube(x: f64) -> i64 {
    x.signum() as i64 * (x.abs() + 0.5).floor() as i64
}

/// Per-axis cube weights: for each axis index, the cubes `m` whose factor
/// is nonzero there, with that factor. Nyquist slots average both images.
#[derive(Debug, Clone)]
pub struct CubeKernel {
    grid: GridSpec,
    cutoff: Cutoff,
    axis: Vec<Vec<(i64, f64)>>,
}

impl CubeKernel {
    pub fn new(grid: GridSpec, cutoff: Cutoff) -> CubeKernel {
        let dk = grid.frequency_step();
        let axis = (0..grid.points_per_axis())
            .map(|i| {
                let xi = dk * grid.wavenumber(i) as f64;
                let images: &[f64] = if grid.is_nyquist(i) { &[xi, -xi] } else { &[xi] };
                let share = 1.0 / images.len() as f64;
                let mut out: Vec<(i64, f64)> = Vec::new();
                for &x in images {
                    let contributions: Vec<(i64, f64)> = match cutoff {
                        Cutoff::SharpIndicator => vec![(sharp_cube(x), 1.0)],
                        Cutoff::SmoothPsi => {
                            let base = x.floor() as i64;
                            (base - 1..=base + 2)
                                .map(|m| (m, psi_factor(x - m as f64)))
                                .filter(|&(_, w)| w > 0.0)
                                .collect()
                        }
                    };
                    for (m, w) in contributions {
                        match out.iter_mut().find(|(k, _)| *k == m) {
                            Some(slot) => slot.1 += share * w,
                            None => out.push((m, share * w)),
                        }
                    }
                }
                out
            })
            .collect();
        CubeKernel { grid, cutoff, axis }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn cutoff(&self) -> Cutoff {
        self.cutoff
    }

    /// Largest `|n_a|` of any cube touching the grid, `⌈ξ_max⌉ + 1`.
    pub fn radius(&self) -> i64 {
        self.grid.max_frequency().ceil() as i64 + 1
    }

    /// Every cube index with `|n_a| ≤ radius` on the grid axes.
    pub fn cubes(&self) -> Vec<CubeIndex> {
        let r = self.radius();
        let d = self.grid.dim();
        let side = (2 * r + 1) as usize;
        (0..side.pow(d as u32))
            .map(|mut flat| {
                let mut n = [0i64; 3];
                for a in (0..d).rev() {
                    n[a] = (flat % side) as i64 - r;
                    flat /= side;
                }
                CubeIndex(n)
            })
            .collect()
    }

    /// Number of cubes in range whose projector vanishes on every lattice
    /// frequency of the grid.
    pub fn empty_cube_count(&self) -> usize {
        let mut present: Vec<i64> = self.axis.iter().flatten().map(|&(m, _)| m).collect();
        present.sort_unstable();
        present.dedup();
        let r = self.radius();
        let hit = present.iter().filter(|m| m.abs() <= r).count();
        let side = (2 * r + 1) as usize;
        let d = self.grid.dim() as u32;
        side.pow(d) - hit.pow(d)
    }

    /// Cube weights active at axis index `i`.
    pub fn axis_weights(&self, i: usize) -> &[(i64, f64)] {
        &self.axis[i]
    }

    /// Symbol of the projection onto cube `n`.
    pub fn symbol(&self, n: CubeIndex) -> Vec<Complex64> {
        let d = self.grid.dim();
        (0..self.grid.len())
            .map(|flat| {
                let idx = self.grid.multi_index(flat);
                let mut w = 1.0;
                for a in 0..d {
                    w *= self.axis[idx[a]]
                        .iter()
                        .find(|(m, _)| *m == n.0[a])
                        .map_or(0.0, |&(_, v)| v);
                    if w == 0.0 {
                        break;
                    }
                }
                Complex64::new(w, 0.0)
            })
            .collect()
    }

    /// `Σ_n c(n) ψ(ξ - n)` evaluated on every spectral slot, where `c` gives
    /// the value attached to each cube.
    pub fn combine<F>(&self, coefficient: F) -> Vec<Complex64>
    where
        F: Fn(CubeIndex) -> Complex64,
    {
        let d = self.grid.dim();
        (0..self.grid.len())
            .map(|flat| {
                let idx = self.grid.multi_index(flat);
                let lists: Vec<&[(i64, f64)]> = (0..d).map(|a| self.axis[idx[a]].as_slice()).collect();
                let mut acc = Complex64::default();
                let mut pos = [0usize; 3];
                'outer: loop {
                    let mut n = [0i64; 3];
                    let mut w = 1.0;
                    for a in 0..d {
                        let (m, v) = lists[a][pos[a]];
                        n[a] = m;
                        w *= v;
                    }
                    acc += coefficient(CubeIndex(n)) * w;
                    for a in (0..d).rev() {
                        pos[a] += 1;
                        if pos[a] < lists[a].len() {
                            continue 'outer;
                        }
                        pos[a] = 0;
                    }
                    break;
                }
                acc
            })
            .collect()
    }
}

/// Projection onto the frequency cube labelled `n`.
///
/// A single cube is not symmetric under `ξ ↦ -ξ`, so the result is the
/// spectrum of a complex-valued function; only `n` and `-n` together give a
/// real field. The physical view of the returned field is its real part.
pub fn cube_project(field: &Field, n: CubeIndex, cutoff: Cutoff) -> Result<Field, GridError> {
    let kernel = CubeKernel::new(field.grid, cutoff);
    let symbol = kernel.symbol(n);
    if symbol.iter().all(|m| m.re == 0.0) {
        return Err(GridError::CubeOutOfRange(n));
    }
    Ok(Multiplier::new(field.grid, symbol, MultiplierKind::Cube { n, cutoff })?.apply(field))
}

/// `‖u‖_{H^s}` (weight `⟨ξ⟩`) or `‖u‖_{Ḣ^s}` (weight `|ξ|`), normalized so
/// that `s = 0` equals the physical `L²` quadrature norm. The zero mode is
/// dropped from homogeneous norms of positive order.
pub fn sobolev_norm(field: &Field, s: f64, homogeneous: bool) -> Result<f64, GridError> {
    let spec = field.spectral();
    let grid = field.grid;
    let abs = grid.abs_frequencies();
    let total: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
    let mut sum = 0.0;
    for (c, &r) in spec.iter().zip(&abs) {
        let weight = if homogeneous {
            if r == 0.0 {
                if s == 0.0 {
                    1.0
                } else if s > 0.0 {
                    0.0
                } else {
                    if c.norm_sqr() > 1e-24 * total {
                        return Err(GridError::UndefinedNorm);
                    }
                    0.0
                }
            } else {
                r.powf(2.0 * s)
            }
        } else {
            (1.0 + r * r).powf(s)
        };
        sum += weight * c.norm_sqr();
    }
    Ok((sum * grid.volume()).sqrt())
}

/// `(Σ_x |u(x)|^r · h^d)^{1/r}`; `r = ∞` gives the maximum.
pub fn lebesgue_norm(field: &Field, r: f64) -> Result<f64, GridError> {
    if r.is_nan() || r < 1.0 {
        return Err(GridError::InvalidParameter(format!("Lebesgue exponent must be in [1, ∞], got {r}")));
    }
    Ok(lebesgue_norm_values(&field.physical(), r, field.grid.cell_volume()))
}

pub(crate) fn lebesgue_norm_values(values: &[f64], r: f64, cell: f64) -> f64 {
    if r.is_infinite() {
        return values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    }
    let sum: f64 = if r == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else if r.fract() == 0.0 && r <= 64.0 {
        let k = r as i32;
        values.iter().map(|v| v.abs().powi(k)).sum()
    } else {
        values.iter().map(|v| v.abs().powf(r)).sum()
    };
    (sum * cell).powf(1.0 / r)
}

/// Pointwise operations on a padded grid for nonlinear products.
///
/// Inputs are zero-padded to `M = padded_points()` per axis, combined
/// pointwise, transformed back and truncated. When the padding ratio is
/// below 3 the result is also damped by the exponential filter
/// `Π_a exp(-36 (|k_a| / (n/2))^36)`. The Nyquist slots of the output are
/// always zero.
#[derive(Debug, Clone)]
pub struct Dealiaser {
    grid: GridSpec,
    m: usize,
    /// For each base slot, its flat index on the padded grid.
    map: Vec<usize>,
    /// For Nyquist slots, the padded images and their share.
    images: Vec<(usize, Vec<usize>)>,
    filter: Option<Vec<f64>>,
    nyquist: Vec<bool>,
}

impl Dealiaser {
    pub fn new(grid: GridSpec) -> Dealiaser {
        let n = grid.points_per_axis();
        let m = grid.padded_points();
        let d = grid.dim();
        let pad_axis = |k: i64| -> usize { k.rem_euclid(m as i64) as usize };
        let mut map = Vec::with_capacity(grid.len());
        let mut images = Vec::new();
        let mut nyquist = Vec::with_capacity(grid.len());
        for flat in 0..grid.len() {
            let idx = grid.multi_index(flat);
            let mut p = 0;
            for a in 0..d {
                p = p * m + pad_axis(grid.wavenumber(idx[a]));
            }
            map.push(p);
            let nyq: Vec<usize> = (0..d).filter(|&a| grid.is_nyquist(idx[a])).collect();
            nyquist.push(!nyq.is_empty());
            if !nyq.is_empty() && m > n {
                let count = 1usize << nyq.len();
                let list = (0..count)
                    .map(|mask| {
                        let mut p = 0;
                        for a in 0..d {
                            let mut k = grid.wavenumber(idx[a]);
                            if let Some(bit) = nyq.iter().position(|&b| b == a) {
                                if mask & (1 << bit) != 0 {
                                    k = -k;
                                }
                            }
                            p = p * m + pad_axis(k);
                        }
                        p
                    })
                    .collect();
                images.push((flat, list));
            }
        }
        let filter = grid.uses_filter().then(|| {
            let half = (n / 2) as f64;
            (0..grid.len())
                .map(|flat| {
                    let idx = grid.multi_index(flat);
                    (0..d)
                        .map(|a| {
                            let k = grid.wavenumber(idx[a]).unsigned_abs() as f64 / half;
                            (-36.0 * k.powi(36)).exp()
                        })
                        .product()
                })
                .collect()
        });
        Dealiaser {
            grid,
            m,
            map,
            images,
            filter,
            nyquist,
        }
    }

    pub fn padded_points(&self) -> usize {
        self.m
    }

    pub fn padded_len(&self) -> usize {
        self.m.pow(self.grid.dim() as u32)
    }

    /// Physical values on the padded grid of the trigonometric interpolant
    /// with the given spectrum.
    pub fn padded_physical(&self, spectral: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::default(); self.padded_len()];
        self.scatter(spectral, &mut buf);
        fft::transform(&mut buf, self.m, self.grid.dim(), Direction::Inverse);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Two padded physical fields from one complex transform.
    pub fn padded_physical_pair(&self, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
        let i = Complex64::new(0.0, 1.0);
        let mut buf = vec![Complex64::default(); self.padded_len()];
        let mut tmp = vec![Complex64::default(); self.padded_len()];
        self.scatter(a, &mut buf);
        self.scatter(b, &mut tmp);
        for (x, y) in buf.iter_mut().zip(&tmp) {
            *x += i * y;
        }
        fft::transform(&mut buf, self.m, self.grid.dim(), Direction::Inverse);
        buf.into_iter().map(|c| (c.re, c.im)).unzip()
    }

    fn scatter(&self, spectral: &[Complex64], buf: &mut [Complex64]) {
        for (c, &p) in spectral.iter().zip(&self.map) {
            buf[p] = *c;
        }
        for (flat, list) in &self.images {
            let share = spectral[*flat] / list.len() as f64;
            for &p in list {
                buf[p] = share;
            }
        }
    }

    /// Forward transform of padded physical values, truncated to the base
    /// grid, filtered if configured, with Nyquist slots zeroed.
    pub fn project(&self, padded: Vec<f64>) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = padded.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        fft::transform(&mut buf, self.m, self.grid.dim(), Direction::Forward);
        let mut out: Vec<Complex64> = self.map.iter().map(|&p| buf[p]).collect();
        for (c, &nyq) in out.iter_mut().zip(&self.nyquist) {
            if nyq {
                *c = Complex64::default();
            }
        }
        if let Some(f) = &self.filter {
            for (c, w) in out.iter_mut().zip(f) {
                *c *= w;
            }
        }
        out
    }

    /// Spectrum of `op(u₁(x), …, u_k(x))` for the given input spectra.
    pub fn pointwise<F>(&self, inputs: &[&[Complex64]], op: F) -> Vec<Complex64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let physical: Vec<Vec<f64>> = inputs.iter().map(|s| self.padded_physical(s)).collect();
        let mut args = vec![0.0; inputs.len()];
        let values = (0..self.padded_len())
            .map(|p| {
                for (slot, field) in args.iter_mut().zip(&physical) {
                    *slot = field[p];
                }
                op(&args)
            })
            .collect();
        self.project(values)
    }

    /// `∫ op(u(x)) dx` by quadrature on the padded grid.
    pub fn integrate<F>(&self, spectral: &[Complex64], op: F) -> f64
    where
        F: Fn(f64) -> f64,
    {
        let values = self.padded_physical(spectral);
        let sum: f64 = values.iter().map(|&v| op(v)).sum();
        sum * self.grid.volume() / self.padded_len() as f64
    }
}
