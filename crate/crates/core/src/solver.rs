//! Time integration of `∂ₜ²u - Δu + u⁵ = 0` and of the forced equation
//! `∂ₜ²v - Δv + (v + z)⁵ = 0`.
//!
//! The scheme is fourth-order Runge–Kutta in the interaction picture
//! (Lawson's integrating-factor method): the linear flow is applied through
//! its exact per-mode 2×2 matrix, so only the nonlinearity is discretized.
//! With `E_h` the exact linear flow and `F(X, t) = (0, -P[(u + z(t))⁵])`,
//!
//! ```text
//! k₁ = F(Xₙ, tₙ)
//! k₂ = F(E_{h/2}(Xₙ + h/2·k₁), tₙ + h/2)
//! k₃ = F(E_{h/2}Xₙ + h/2·k₂, tₙ + h/2)
//! k₄ = F(E_h Xₙ + h·E_{h/2}k₃, tₙ + h)
//! Xₙ₊₁ = E_h Xₙ + h/6·(E_h k₁ + 2E_{h/2}(k₂ + k₃) + k₄)
//! ```
//!
//! The quintic term is evaluated on the padded grid of the [`GridSpec`].

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{
    littlewood_paley_project, make_grid, sobolev_norm, Dealiaser, Dyadic, Field, FieldPair, GridError, GridSpec,
    LpMode, Multiplier, MultiplierKind,
};
use crate::propagator::{Component, LinearEvolution};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value at t = {time}; the time step is too large for this data")]
    NanDetected { time: f64 },
    #[error("incompatible scale: {0}")]
    IncompatibleScale(String),
    #[error("forcing cannot be evaluated at t = {0}")]
    ForcingRange(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("trajectory container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    IntegratingFactorRk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub dt: f64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    /// Drop the nonlinearity (free evolution, forcing ignored).
    #[serde(default)]
    pub linear_limit: bool,
}

fn default_stride() -> usize {
    1
}

impl SolverConfig {
    pub fn new(dt: f64) -> SolverConfig {
        SolverConfig {
            dt,
            scheme: Scheme::IntegratingFactorRk4,
            snapshot_stride: 1,
            linear_limit: false,
        }
    }

    /// Stride storing every step up to `T = 1` and every fourth beyond.
    pub fn default_stride_for(final_time: f64) -> usize {
        if final_time <= 1.0 {
            1
        } else {
            4
        }
    }

    pub fn with_stride(mut self, stride: usize) -> SolverConfig {
        self.snapshot_stride = stride;
        self
    }

    pub fn linear(mut self) -> SolverConfig {
        self.linear_limit = true;
        self
    }

    /// Checks `0 < dt ≤ spacing/2` and a positive stride.
    pub fn validate(&self, grid: &GridSpec) -> Result<(), SolverError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(SolverError::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > 0.5 * grid.spacing() * (1.0 + 1e-12) {
            return Err(SolverError::InvalidConfig(format!(
                "dt = {} exceeds half the grid spacing {}",
                self.dt,
                0.5 * grid.spacing()
            )));
        }
        if self.snapshot_stride == 0 {
            return Err(SolverError::InvalidConfig("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps and the step size that lands exactly on `final_time`.
    pub fn steps_for(&self, final_time: f64) -> (usize, f64) {
        let steps = ((final_time / self.dt) - 1e-9).ceil().max(1.0) as usize;
        (steps, final_time / steps as f64)
    }
}

/// Exact linear flow over one time increment, per mode.
#[derive(Debug, Clone)]
struct LinearStep {
    cos: Vec<f64>,
    /// `sin(ωh)/ω`, `h` at `ω = 0`.
    sin_over: Vec<f64>,
    /// `-ω sin(ωh)`
    minus_omega_sin: Vec<f64>,
}

impl LinearStep {
    fn new(omega: &[f64], h: f64) -> LinearStep {
        let mut cos = Vec::with_capacity(omega.len());
        let mut sin_over = Vec::with_capacity(omega.len());
        let mut minus_omega_sin = Vec::with_capacity(omega.len());
        for &w in omega {
            let (s, c) = (w * h).sin_cos();
            cos.push(c);
            sin_over.push(if w == 0.0 { h } else { s / w });
            minus_omega_sin.push(-w * s);
        }
        LinearStep {
            cos,
            sin_over,
            minus_omega_sin,
        }
    }
}

/// The field `z` entering `(v + z)⁵`.
#[derive(Debug, Clone)]
pub enum Forcing {
    Zero,
    /// Free evolution `z(t) = S(t)(z₀, z₁)`, evaluated exactly.
    Linear(LinearEvolution),
    /// Stored positions, interpolated with four-point Lagrange polynomials.
    Trajectory(Trajectory),
}

impl Forcing {
    pub fn linear(data: &FieldPair) -> Forcing {
        Forcing::Linear(LinearEvolution::new(data, Component::Position))
    }

    pub fn descriptor(&self) -> &'static str {
        match self {
            Forcing::Zero => "zero",
            Forcing::Linear(_) => "linear",
            Forcing::Trajectory(_) => "trajectory",
        }
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        match self {
            Forcing::Zero => None,
            Forcing::Linear(e) => Some(e.grid()),
            Forcing::Trajectory(t) => Some(&t.grid),
        }
    }

    /// Spectrum of `z(t)`, `None` for zero forcing.
    pub fn position_at(&self, t: f64) -> Result<Option<Vec<Complex64>>, SolverError> {
        match self {
            Forcing::Zero => Ok(None),
            Forcing::Linear(e) => Ok(Some(e.spectral_at(t))),
            Forcing::Trajectory(traj) => traj.interpolate_position(t).map(Some),
        }
    }
}

/// Step-by-step integrator; [`evolve_nlw`] and [`evolve_perturbed`] drive
/// it and record snapshots.
#[derive(Debug)]
pub struct Integrator<'a> {
    grid: GridSpec,
    config: SolverConfig,
    forcing: &'a Forcing,
    dealiaser: Dealiaser,
    full: LinearStep,
    half: LinearStep,
    h: f64,
    steps: usize,
    taken: usize,
    u: Vec<Complex64>,
    p: Vec<Complex64>,
}

impl<'a> Integrator<'a> {
    pub fn new(
        data: &FieldPair,
        forcing: &'a Forcing,
        config: &SolverConfig,
        final_time: f64,
    ) -> Result<Integrator<'a>, SolverError> {
        let grid = *data.grid();
        config.validate(&grid)?;
        if !(final_time.is_finite() && final_time > 0.0) {
            return Err(SolverError::InvalidConfig(format!("final time must be positive, got {final_time}")));
        }
        if let Some(g) = forcing.grid() {
            if *g != grid {
                return Err(GridError::GridMismatch.into());
            }
        }
        let (steps, h) = config.steps_for(final_time);
        let omega = grid.abs_frequencies();
        Ok(Integrator {
            grid,
            config: *config,
            forcing,
            dealiaser: grid.dealiaser(),
            full: LinearStep::new(&omega, h),
            half: LinearStep::new(&omega, 0.5 * h),
            h,
            steps,
            taken: 0,
            u: data.position.spectral().into_owned(),
            p: data.velocity.spectral().into_owned(),
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn step_size(&self) -> f64 {
        self.h
    }

    pub fn total_steps(&self) -> usize {
        self.steps
    }

    pub fn steps_taken(&self) -> usize {
        self.taken
    }

    pub fn is_finished(&self) -> bool {
        self.taken >= self.steps
    }

    pub fn time(&self) -> f64 {
        self.taken as f64 * self.h
    }

    pub fn position_spectral(&self) -> &[Complex64] {
        &self.u
    }

    pub fn velocity_spectral(&self) -> &[Complex64] {
        &self.p
    }

    pub fn state(&self) -> FieldPair {
        FieldPair {
            position: Field::from_spectral(self.grid, self.u.clone()).expect("length preserved"),
            velocity: Field::from_spectral(self.grid, self.p.clone()).expect("length preserved"),
        }
    }

    /// `-P[(u + z(t))⁵]`.
    fn nonlinear(&self, u: &[Complex64], t: f64) -> Result<Vec<Complex64>, SolverError> {
        let total: Vec<Complex64> = match self.forcing.position_at(t)? {
            None => u.to_vec(),
            Some(z) => u.iter().zip(&z).map(|(a, b)| a + b).collect(),
        };
        let mut out = self.dealiaser.pointwise(&[&total], |v| v[0].powi(5));
        for c in out.iter_mut() {
            *c = -*c;
        }
        Ok(out)
    }

    /// Advances one step of size `h`.
    pub fn step(&mut self) -> Result<(), SolverError> {
        let t = self.time();
        let h = self.h;
        let len = self.u.len();
        if self.config.linear_limit {
            for k in 0..len {
                let (u, p) = (self.u[k], self.p[k]);
                self.u[k] = self.full.cos[k] * u + self.full.sin_over[k] * p;
                self.p[k] = self.full.minus_omega_sin[k] * u + self.full.cos[k] * p;
            }
        } else {
            let (f, g) = (&self.full, &self.half);
            let w1 = self.nonlinear(&self.u, t)?;
            let stage: Vec<Complex64> = (0..len)
                .map(|k| g.cos[k] * self.u[k] + g.sin_over[k] * (self.p[k] + w1[k] * (0.5 * h)))
                .collect();
            let w2 = self.nonlinear(&stage, t + 0.5 * h)?;
            let stage: Vec<Complex64> = (0..len)
                .map(|k| g.cos[k] * self.u[k] + g.sin_over[k] * self.p[k])
                .collect();
            let w3 = self.nonlinear(&stage, t + 0.5 * h)?;
            let stage: Vec<Complex64> = (0..len)
                .map(|k| f.cos[k] * self.u[k] + f.sin_over[k] * self.p[k] + g.sin_over[k] * w3[k] * h)
                .collect();
            let w4 = self.nonlinear(&stage, t + h)?;
            let sixth = h / 6.0;
            for k in 0..len {
                let (u, p) = (self.u[k], self.p[k]);
                let mid = w2[k] + w3[k];
                self.u[k] = f.cos[k] * u + f.sin_over[k] * p + (f.sin_over[k] * w1[k] + 2.0 * g.sin_over[k] * mid) * sixth;
                self.p[k] = f.minus_omega_sin[k] * u
                    + f.cos[k] * p
                    + (f.cos[k] * w1[k] + 2.0 * g.cos[k] * mid + w4[k]) * sixth;
            }
        }
        self.taken += 1;
        let finite = self.u.iter().chain(&self.p).all(|c| c.re.is_finite() && c.im.is_finite());
        if finite {
            Ok(())
        } else {
            Err(SolverError::NanDetected { time: self.time() })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub config: SolverConfig,
    pub forcing: String,
    pub config_hash: String,
}

/// Time-ordered snapshots of `(u, ∂ₜu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub snapshots: Vec<FieldPair>,
    pub meta: TrajectoryMeta,
}

fn config_hash(config: &SolverConfig, forcing: &str) -> String {
    let json = serde_json::json!({ "solver": config, "forcing": forcing });
    hex::encode(&Sha256::digest(json.to_string().as_bytes())[..8])
}

const MAGIC: &[u8; 8] = b"WNLWTRJ1";

#[derive(Serialize, Deserialize)]
struct ContainerHeader {
    grid: GridSpec,
    snapshots: usize,
    meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &FieldPair {
        self.snapshots.last().expect("trajectory is never empty")
    }

    /// Checks strictly increasing times and a shared grid.
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.times.len() != self.snapshots.len() || self.times.is_empty() {
            return Err(SolverError::Format("times and snapshots differ in length".into()));
        }
        if self.times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolverError::Format("times are not strictly increasing".into()));
        }
        if self.snapshots.iter().any(|s| *s.grid() != self.grid) {
            return Err(GridError::GridMismatch.into());
        }
        Ok(())
    }

    /// Position spectrum at `t` by four-point Lagrange interpolation.
    pub fn interpolate_position(&self, t: f64) -> Result<Vec<Complex64>, SolverError> {
        let n = self.times.len();
        let (first, last) = (self.times[0], self.times[n - 1]);
        let slack = 1e-9 * (last - first).abs().max(1.0);
        if t < first - slack || t > last + slack {
            return Err(SolverError::ForcingRange(t));
        }
        let i = self.times.partition_point(|&s| s <= t).saturating_sub(1);
        let width = n.min(4);
        let start = i.saturating_sub(1).min(n - width);
        let nodes = &self.times[start..start + width];
        let mut out = vec![Complex64::default(); self.grid.len()];
        for (a, &ta) in nodes.iter().enumerate() {
            let mut w = 1.0;
            for (b, &tb) in nodes.iter().enumerate() {
                if a != b {
                    w *= (t - tb) / (ta - tb);
                }
            }
            if w == 0.0 {
                continue;
            }
            let spec = self.snapshots[start + a].position.spectral();
            for (o, c) in out.iter_mut().zip(spec.iter()) {
                *o += c * w;
            }
        }
        Ok(out)
    }

    /// Writes the binary container: magic, header length and JSON header,
    /// then per snapshot the time and both spectra as little-endian `f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SolverError> {
        let header = serde_json::to_vec(&ContainerHeader {
            grid: self.grid,
            snapshots: self.len(),
            meta: self.meta.clone(),
        })
        .map_err(|e| SolverError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (t, snap) in self.times.iter().zip(&self.snapshots) {
            w.write_all(&t.to_le_bytes())?;
            for field in [&snap.position, &snap.velocity] {
                for c in field.spectral().iter() {
                    w.write_all(&c.re.to_le_bytes())?;
                    w.write_all(&c.im.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Trajectory, SolverError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SolverError::Format("bad magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let mut header = vec![0u8; u64::from_le_bytes(word) as usize];
        r.read_exact(&mut header)?;
        let header: ContainerHeader =
            serde_json::from_slice(&header).map_err(|e| SolverError::Format(e.to_string()))?;
        let grid = header.grid;
        let mut read_f64 = |r: &mut R| -> Result<f64, SolverError> {
            r.read_exact(&mut word)?;
            Ok(f64::from_le_bytes(word))
        };
        let mut times = Vec::with_capacity(header.snapshots);
        let mut snapshots = Vec::with_capacity(header.snapshots);
        for _ in 0..header.snapshots {
            times.push(read_f64(&mut r)?);
            let mut fields = Vec::with_capacity(2);
            for _ in 0..2 {
                let mut spec = Vec::with_capacity(grid.len());
                for _ in 0..grid.len() {
                    let re = read_f64(&mut r)?;
                    let im = read_f64(&mut r)?;
                    spec.push(Complex64::new(re, im));
                }
                fields.push(Field::from_spectral(grid, spec)?);
            }
            let velocity = fields.pop().unwrap();
            let position = fields.pop().unwrap();
            snapshots.push(FieldPair { position, velocity });
        }
        let traj = Trajectory {
            grid,
            times,
            snapshots,
            meta: header.meta,
        };
        traj.validate()?;
        Ok(traj)
    }
}

fn run(
    data: &FieldPair,
    forcing: &Forcing,
    final_time: f64,
    config: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    let mut integrator = Integrator::new(data, forcing, config, final_time)?;
    let mut times = vec![0.0];
    let mut snapshots = vec![integrator.state()];
    while !integrator.is_finished() {
        integrator.step()?;
        let k = integrator.steps_taken();
        if k % config.snapshot_stride == 0 || integrator.is_finished() {
            times.push(integrator.time());
            snapshots.push(integrator.state());
        }
    }
    let descriptor = forcing.descriptor().to_string();
    Ok(Trajectory {
        grid: *data.grid(),
        times,
        snapshots,
        meta: TrajectoryMeta {
            config: *config,
            config_hash: config_hash(config, &descriptor),
            forcing: descriptor,
        },
    })
}

/// Solves `∂ₜ²u - Δu + u⁵ = 0` on `[0, T]` from `data`.
pub fn evolve_nlw(data: &FieldPair, final_time: f64, config: &SolverConfig) -> Result<Trajectory, SolverError> {
    run(data, &Forcing::Zero, final_time, config)
}

/// Solves `∂ₜ²v - Δv + (v + z)⁵ = 0` on `[0, T]`, from `data` or from zero.
pub fn evolve_perturbed(
    forcing: &Forcing,
    final_time: f64,
    config: &SolverConfig,
    data: Option<&FieldPair>,
) -> Result<Trajectory, SolverError> {
    let grid = match (forcing.grid(), data) {
        (_, Some(d)) => *d.grid(),
        (Some(g), None) => *g,
        (None, None) => {
            return Err(SolverError::InvalidConfig(
                "zero forcing without data has no grid; pass zero data explicitly".into(),
            ))
        }
    };
    let zero = FieldPair::zeros(grid);
    run(data.unwrap_or(&zero), forcing, final_time, config)
}

/// The three summands of `E(u) = ∫ ½(∂ₜu)² + ½|∇u|² + ⅙u⁶ dx` and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyComponents {
    pub kinetic: f64,
    pub gradient: f64,
    pub potential: f64,
    pub total: f64,
}

/// Energy evaluator reusing one padded grid fine enough to integrate `u⁶`
/// exactly for band-limited `u`.
#[derive(Debug, Clone)]
pub struct EnergyMeter {
    grid: GridSpec,
    omega2: Vec<f64>,
    dealiaser: Dealiaser,
}

impl EnergyMeter {
    pub fn new(grid: GridSpec) -> EnergyMeter {
        let fine = grid
            .with_dealias_ratio(grid.dealias_ratio().max(3.0))
            .expect("ratio above 1 is valid");
        EnergyMeter {
            grid,
            omega2: grid.abs_frequencies().iter().map(|w| w * w).collect(),
            dealiaser: fine.dealiaser(),
        }
    }

    pub fn measure_spectral(&self, u: &[Complex64], p: &[Complex64]) -> EnergyComponents {
        let v = self.grid.volume();
        let kinetic = 0.5 * v * p.iter().map(|c| c.norm_sqr()).sum::<f64>();
        let gradient = 0.5 * v * u.iter().zip(&self.omega2).map(|(c, w)| w * c.norm_sqr()).sum::<f64>();
        let potential = self.dealiaser.integrate(u, |x| x.powi(6)) / 6.0;
        EnergyComponents {
            kinetic,
            gradient,
            potential,
            total: kinetic + gradient + potential,
        }
    }

    pub fn measure(&self, pair: &FieldPair) -> EnergyComponents {
        self.measure_spectral(&pair.position.spectral(), &pair.velocity.spectral())
    }
}

pub fn energy(pair: &FieldPair) -> EnergyComponents {
    EnergyMeter::new(*pair.grid()).measure(pair)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub kinetic: Vec<f64>,
    pub gradient: Vec<f64>,
    pub potential: Vec<f64>,
    pub total: Vec<f64>,
}

impl EnergyTrace {
    pub fn from_trajectory(traj: &Trajectory) -> EnergyTrace {
        let meter = EnergyMeter::new(traj.grid);
        let mut trace = EnergyTrace {
            times: traj.times.clone(),
            kinetic: Vec::new(),
            gradient: Vec::new(),
            potential: Vec::new(),
            total: Vec::new(),
        };
        for snap in &traj.snapshots {
            let e = meter.measure(snap);
            trace.kinetic.push(e.kinetic);
            trace.gradient.push(e.gradient);
            trace.potential.push(e.potential);
            trace.total.push(e.total);
        }
        trace
    }

    /// `max_t |E(t) - E(0)| / E(0)`.
    pub fn relative_drift(&self) -> f64 {
        let e0 = self.total[0];
        self.total.iter().map(|e| (e - e0).abs()).fold(0.0, f64::max) / e0.abs().max(f64::MIN_POSITIVE)
    }
}

/// `𝐏_{≤N}` applied to both components.
pub fn truncate_data(pair: &FieldPair, n: Dyadic) -> FieldPair {
    FieldPair {
        position: littlewood_paley_project(&pair.position, n, LpMode::AtMostN),
        velocity: littlewood_paley_project(&pair.velocity, n, LpMode::AtMostN),
    }
}

/// Sharp truncation to `|ξ| ≤ N`, an exact projection.
pub fn truncate_data_sharp(pair: &FieldPair, n: Dyadic) -> FieldPair {
    let grid = *pair.grid();
    let cut = n.get() as f64;
    let m = Multiplier::new(
        grid,
        grid.radial_symbol(|r| if r <= cut { 1.0 } else { 0.0 }),
        MultiplierKind::Custom(format!("sharp ball {cut}")),
    )
    .expect("symbol matches grid");
    FieldPair {
        position: m.apply(&pair.position),
        velocity: m.apply(&pair.velocity),
    }
}

/// Pointwise `(5zv⁴, 10z²v³ + 10z³v² + 5z⁴v + z⁵)`.
pub fn split_pointwise(z: f64, v: f64) -> (f64, f64) {
    let (z2, v2) = (z * z, v * v);
    let leading = 5.0 * z * v2 * v2;
    let remainder = 10.0 * z2 * v2 * v + 10.0 * z2 * z * v2 + 5.0 * z2 * z2 * v + z2 * z2 * z;
    (leading, remainder)
}

/// `(5zv⁴, 𝒩(z, v))` on the padded grid, so that
/// `(z + v)⁵ - v⁵ = 5zv⁴ + 𝒩(z, v)`.
pub fn nonlinearity_split(z: &Field, v: &Field) -> Result<(Field, Field), GridError> {
    if z.grid() != v.grid() {
        return Err(GridError::GridMismatch);
    }
    let grid = *z.grid();
    let d = grid.dealiaser();
    let (zs, vs) = (z.spectral(), v.spectral());
    let leading = d.pointwise(&[&zs, &vs], |x| split_pointwise(x[0], x[1]).0);
    let remainder = d.pointwise(&[&zs, &vs], |x| split_pointwise(x[0], x[1]).1);
    Ok((Field::from_spectral(grid, leading)?, Field::from_spectral(grid, remainder)?))
}

/// Terms of the energy identity for the forced equation along a stored
/// trajectory of `v`:
/// `E(v)(t) - E(v)(0) = -∫₀ᵗ∫ ∂ₜv·[5zv⁴ + 𝒩(z,v)] = I(t) + II(t)`,
/// with `I = I₁ + I₂`, `I₁(t) = -∫ z(t)v(t)⁵ + ∫ z(0)v(0)⁵`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyIdentity {
    pub times: Vec<f64>,
    /// `E(v)(t)` measured directly.
    pub direct: Vec<f64>,
    /// `E(v)(0) + I(t) + II(t)` by trapezoid quadrature in time.
    pub reconstructed: Vec<f64>,
    pub i: Vec<f64>,
    pub ii: Vec<f64>,
    pub i1: Vec<f64>,
    pub i2: Vec<f64>,
}

impl EnergyIdentity {
    /// `max_t |reconstructed - direct| / max_t |direct|`.
    pub fn relative_mismatch(&self) -> f64 {
        let scale = self.direct.iter().map(|e| e.abs()).fold(0.0, f64::max);
        let worst = self
            .direct
            .iter()
            .zip(&self.reconstructed)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst / scale.max(f64::MIN_POSITIVE)
    }
}

pub fn energy_identity(traj: &Trajectory, forcing: &Forcing) -> Result<EnergyIdentity, SolverError> {
    let grid = traj.grid;
    let meter = EnergyMeter::new(grid);
    let exact = grid.with_dealias_ratio(grid.dealias_ratio().max(3.5))?.dealiaser();
    let cell = grid.volume() / exact.padded_len() as f64;
    let zero = vec![Complex64::default(); grid.len()];
    let mut direct = Vec::new();
    // Integrands of I and II, and the boundary term ∫ z v⁵.
    let mut rate_i = Vec::new();
    let mut rate_ii = Vec::new();
    let mut boundary = Vec::new();
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        direct.push(meter.measure(snap).total);
        let z = forcing.position_at(*t)?.unwrap_or_else(|| zero.clone());
        let v = snap.position.spectral();
        let (zp, vp) = exact.padded_physical_pair(&z, &v);
        let pp = exact.padded_physical(&snap.velocity.spectral());
        let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
        for k in 0..zp.len() {
            let (lead, rest) = split_pointwise(zp[k], vp[k]);
            a -= pp[k] * lead;
            b -= pp[k] * rest;
            c += zp[k] * vp[k].powi(5);
        }
        rate_i.push(a * cell);
        rate_ii.push(b * cell);
        boundary.push(c * cell);
    }
    let cumulative = |rate: &[f64]| -> Vec<f64> {
        let mut acc = vec![0.0];
        for k in 1..rate.len() {
            let dt = traj.times[k] - traj.times[k - 1];
            acc.push(acc[k - 1] + 0.5 * dt * (rate[k] + rate[k - 1]));
        }
        acc
    };
    let i = cumulative(&rate_i);
    let ii = cumulative(&rate_ii);
    let i1: Vec<f64> = boundary.iter().map(|b| -(b - boundary[0])).collect();
    let i2: Vec<f64> = i.iter().zip(&i1).map(|(a, b)| a - b).collect();
    let reconstructed = i.iter().zip(&ii).map(|(a, b)| direct[0] + a + b).collect();
    Ok(EnergyIdentity {
        times: traj.times.clone(),
        direct,
        reconstructed,
        i,
        ii,
        i1,
        i2,
    })
}

/// Largest `λ` exponent `m` accepted by [`scaling_transform`] for a grid,
/// limited by the eight-point minimum.
fn scaled_grid(grid: &GridSpec, lambda: f64) -> Result<(GridSpec, i32), SolverError> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(SolverError::IncompatibleScale(format!("λ must be positive, got {lambda}")));
    }
    let m = lambda.log2().round() as i32;
    if (2f64.powi(m) - lambda).abs() > 1e-12 * lambda {
        return Err(SolverError::IncompatibleScale(format!("λ = {lambda} is not a power of two")));
    }
    let n = grid.points_per_axis() as f64 / lambda;
    if n < 8.0 {
        return Err(SolverError::IncompatibleScale(format!(
            "rescaled grid would have {n} points per axis"
        )));
    }
    let scaled = make_grid(grid.dim(), n as usize, grid.box_length() / lambda, grid.dealias_ratio())?;
    Ok((scaled, m))
}

fn rescale_field(field: &Field, target: &GridSpec, factor: f64) -> Result<Field, SolverError> {
    let source = field.grid();
    let spec = field.spectral();
    let limit = (target.points_per_axis() / 2) as i64;
    let mut out = vec![Complex64::default(); target.len()];
    let to_target = |k: i64| -> usize { k.rem_euclid(target.points_per_axis() as i64) as usize };
    for (flat, c) in spec.iter().enumerate() {
        let idx = source.multi_index(flat);
        let mut t = 0;
        let mut inside = true;
        for a in 0..source.dim() {
            let k = source.wavenumber(idx[a]);
            if k.abs() >= limit {
                inside = false;
            }
            t = t * target.points_per_axis() + to_target(k);
        }
        if inside {
            out[t] = c * factor;
        } else if c.norm() > 0.0 {
            return Err(SolverError::IncompatibleScale(format!(
                "content at |k| >= {limit} does not fit the rescaled grid"
            )));
        }
    }
    Ok(Field::from_spectral(*target, out)?)
}

/// `u_λ(t, x) = λ^{1/2} u(λt, λx)` for a state: position scaled by `λ^{1/2}`,
/// velocity by `λ^{3/2}`, box by `1/λ`. `λ` must be a power of two and the
/// spectrum must fit on the rescaled grid, which keeps the spacing fixed.
/// In three dimensions both the energy and the `𝓗̇¹` norm are invariant.
pub fn scaling_transform(pair: &FieldPair, lambda: f64) -> Result<FieldPair, SolverError> {
    let (target, _) = scaled_grid(pair.grid(), lambda)?;
    Ok(FieldPair {
        position: rescale_field(&pair.position, &target, lambda.sqrt())?,
        velocity: rescale_field(&pair.velocity, &target, lambda.powf(1.5))?,
    })
}

/// Rescales every snapshot and maps times `t ↦ t/λ`.
pub fn scale_trajectory(traj: &Trajectory, lambda: f64) -> Result<Trajectory, SolverError> {
    let (target, _) = scaled_grid(&traj.grid, lambda)?;
    let snapshots = traj
        .snapshots
        .iter()
        .map(|s| scaling_transform(s, lambda))
        .collect::<Result<Vec<_>, _>>()?;
    let mut meta = traj.meta.clone();
    meta.config.dt /= lambda;
    Ok(Trajectory {
        grid: target,
        times: traj.times.iter().map(|t| t / lambda).collect(),
        snapshots,
        meta,
    })
}

/// `sup_t ‖(v, ∂ₜv)‖_{𝓗¹}` over the snapshots of a trajectory.
pub fn sup_h1(traj: &Trajectory) -> f64 {
    traj.snapshots.iter().map(FieldPair::h1_norm).fold(0.0, f64::max)
}

/// Largest violation ratio of `‖v(t)‖_{L²} ≤ t·max_{t'≤t}‖∂ₜv(t')‖_{L²}`
/// along a trajectory started from zero data; values ≤ 1 satisfy the bound.
pub fn l2_growth_ratio(traj: &Trajectory) -> f64 {
    let mut running = 0.0f64;
    let mut worst = 0.0f64;
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        running = running.max(sobolev_norm(&snap.velocity, 0.0, false).unwrap());
        let v = sobolev_norm(&snap.position, 0.0, false).unwrap();
        let bound = t * running;
        if v > 0.0 {
            worst = worst.max(if bound > 0.0 { v / bound } else { f64::INFINITY });
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lebesgue_norm, make_grid};
    use crate::propagator::linear_propagate;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn bump(grid: GridSpec, amplitude: f64) -> FieldPair {
        let u0 = Field::from_fn(grid, |x| {
            amplitude * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()
        });
        let u1 = Field::from_fn(grid, |x| {
            0.5 * amplitude * x[0] * (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp()
        });
        FieldPair::new(u0.without_nyquist(), u1.without_nyquist()).unwrap()
    }

    fn small_grid() -> GridSpec {
        make_grid(3, 16, 10.0, 3.0).unwrap()
    }

    #[test]
    fn energy_examples() {
        let g = make_grid(3, 8, 3.0, 1.0).unwrap();
        let e = energy(&FieldPair::zeros(g));
        assert_eq!((e.kinetic, e.gradient, e.potential, e.total), (0.0, 0.0, 0.0, 0.0));

        let c = 0.7;
        let e = energy(&FieldPair::new(Field::zeros(g), Field::constant(g, c)).unwrap());
        assert!((e.kinetic - c * c * 27.0 / 2.0).abs() < 1e-12);
        assert_eq!(e.gradient, 0.0);
        assert_eq!(e.potential, 0.0);

        let length = 5.0;
        let g = make_grid(1, 32, length, 1.0).unwrap();
        let k = 2.0 * PI / length;
        let pair = FieldPair::new(Field::from_fn(g, |x| (k * x[0]).cos()), Field::zeros(g)).unwrap();
        let e = energy(&pair);
        // ½∫|∂ₓu|² = ½k²·L/2.
        assert!((e.gradient - 0.5 * k * k * length / 2.0).abs() < 1e-12);
        let m = 200_000;
        let h = length / m as f64;
        let dense: f64 = (0..m).map(|i| (k * (i as f64 + 0.5) * h).cos().powi(6)).sum::<f64>() * h;
        assert!((dense - 5.0 * length / 16.0).abs() < 1e-9);
        assert!((e.potential - dense / 6.0).abs() < 1e-9);
    }

    #[test]
    fn zero_data_stays_zero() {
        let g = small_grid();
        let traj = evolve_nlw(&FieldPair::zeros(g), 0.2, &SolverConfig::new(0.05)).unwrap();
        assert_eq!(traj.len(), 5);
        for snap in &traj.snapshots {
            assert!(snap.position.spectral().iter().all(|c| c.norm() == 0.0));
        }
        let v = evolve_perturbed(&Forcing::Zero, 0.2, &SolverConfig::new(0.05), Some(&FieldPair::zeros(g))).unwrap();
        assert!(v.final_state().energy_norm() == 0.0);
    }

    #[test]
    fn linear_limit_is_exact() {
        let g = small_grid();
        let data = bump(g, 1.0);
        let traj = evolve_nlw(&data, 1.0, &SolverConfig::new(0.1).linear()).unwrap();
        for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
            let exact = linear_propagate(&data, *t);
            assert!(snap.position.max_spectral_deviation(&exact.position) < 1e-12);
            assert!(snap.velocity.max_spectral_deviation(&exact.velocity) < 1e-12);
        }
    }

    #[test]
    fn final_time_is_hit_exactly() {
        let g = small_grid();
        let traj = evolve_nlw(&bump(g, 0.5), 0.35, &SolverConfig::new(0.1).with_stride(2)).unwrap();
        assert_eq!(*traj.times.last().unwrap(), 0.35);
        assert_eq!(traj.times.len(), 3);
        traj.validate().unwrap();
    }

    #[test]
    fn rejects_large_time_step() {
        let g = small_grid();
        let err = evolve_nlw(&bump(g, 1.0), 1.0, &SolverConfig::new(0.4)).unwrap_err();
        assert!(matches!(err, SolverError::InvalidConfig(_)));
    }

    #[test]
    fn energy_is_conserved_and_coercive() {
        let g = small_grid();
        let data = bump(g, 1.2);
        let traj = evolve_nlw(&data, 1.0, &SolverConfig::new(0.01).with_stride(10)).unwrap();
        let trace = EnergyTrace::from_trajectory(&traj);
        assert!(trace.relative_drift() < 1e-7, "drift {}", trace.relative_drift());
        assert!(trace.potential[0] > 0.01 * trace.total[0]);
        for k in 0..trace.times.len() {
            assert!(trace.kinetic[k] >= 0.0 && trace.gradient[k] >= 0.0 && trace.potential[k] >= 0.0);
            let norm = traj.snapshots[k].energy_norm();
            assert!(norm * norm <= 2.0 * trace.total[k] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn self_convergence_is_fourth_order() {
        let g = small_grid();
        let data = bump(g, 1.5);
        let solve = |dt: f64| evolve_nlw(&data, 1.0, &SolverConfig::new(dt).with_stride(1000)).unwrap();
        let a = solve(0.1);
        let b = solve(0.05);
        let c = solve(0.025);
        let diff = |x: &Trajectory, y: &Trajectory| x.final_state().minus(y.final_state()).unwrap().h1_norm();
        let order = (diff(&a, &b) / diff(&b, &c)).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn time_reversal_returns_initial_data() {
        let g = small_grid();
        let data = bump(g, 1.2);
        let config = SolverConfig::new(0.01).with_stride(1000);
        let forward = evolve_nlw(&data, 0.5, &config).unwrap();
        let end = forward.final_state();
        let flipped = FieldPair::new(end.position.clone(), end.velocity.scaled(-1.0)).unwrap();
        let back = evolve_nlw(&flipped, 0.5, &config).unwrap();
        let end = back.final_state();
        let restored = FieldPair::new(end.position.clone(), end.velocity.scaled(-1.0)).unwrap();
        let rel = restored.minus(&data).unwrap().h1_norm() / data.h1_norm();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn split_matches_full_solution() {
        let g = small_grid();
        let data = bump(g, 1.2);
        let config = SolverConfig::new(0.01).with_stride(1000);
        let u = evolve_nlw(&data, 0.5, &config).unwrap();
        let forcing = Forcing::linear(&data);
        let v = evolve_perturbed(&forcing, 0.5, &config, None).unwrap();
        let z = linear_propagate(&data, 0.5);
        let sum = z.plus(v.final_state()).unwrap();
        let rel = sum.minus(u.final_state()).unwrap().h1_norm() / u.final_state().h1_norm();
        assert!(rel < 1e-10, "{rel}");
    }

    #[test]
    fn trajectory_forcing_interpolates_to_scheme_order() {
        let g = small_grid();
        let data = bump(g, 1.2);
        let config = SolverConfig::new(0.02).with_stride(1000);
        let exact = evolve_perturbed(&Forcing::linear(&data), 0.5, &config, None).unwrap();
        let z = evolve_nlw(&data, 0.5, &SolverConfig::new(0.01).linear()).unwrap();
        let interp = evolve_perturbed(&Forcing::Trajectory(z), 0.5, &config, None).unwrap();
        let rel = interp.final_state().minus(exact.final_state()).unwrap().h1_norm() / exact.final_state().h1_norm();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn energy_identity_and_l2_bound_hold() {
        let g = small_grid();
        let data = bump(g, 1.2);
        let forcing = Forcing::linear(&data);
        let v = evolve_perturbed(&forcing, 0.6, &SolverConfig::new(0.004), None).unwrap();
        let identity = energy_identity(&v, &forcing).unwrap();
        assert!(identity.relative_mismatch() < 1e-4, "{}", identity.relative_mismatch());
        for k in 0..identity.times.len() {
            assert!((identity.i1[k] + identity.i2[k] - identity.i[k]).abs() < 1e-12);
        }
        assert!(l2_growth_ratio(&v) <= 1.0 + 1e-6);
    }

    #[test]
    fn container_round_trip_is_exact() {
        let g = make_grid(2, 8, 3.0, 3.0).unwrap();
        let data = FieldPair::new(Field::from_fn(g, |x| (x[0] * 2.0).sin() + 0.1), Field::from_fn(g, |x| x[1].cos())).unwrap();
        let traj = evolve_nlw(&data, 0.3, &SolverConfig::new(0.1)).unwrap();
        let mut bytes = Vec::new();
        traj.write_to(&mut bytes).unwrap();
        let back = Trajectory::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, traj);
        for (a, b) in back.snapshots.iter().zip(&traj.snapshots) {
            for (x, y) in a.position.spectral().iter().zip(b.position.spectral().iter()) {
                assert_eq!(x.re.to_bits(), y.re.to_bits());
                assert_eq!(x.im.to_bits(), y.im.to_bits());
            }
        }
        bytes[0] = b'X';
        assert!(Trajectory::read_from(bytes.as_slice()).is_err());
    }

    #[test]
    fn truncation_examples() {
        let g = small_grid();
        let data = bump(g, 1.0);
        let full = truncate_data(&data, Dyadic::new(16).unwrap());
        assert!(full.position.max_spectral_deviation(&data.position) == 0.0);
        let dk = g.frequency_step();
        assert!(3.0 * dk > 1.6);
        let high = FieldPair::new(
            Field::from_fn(g, |x| (3.0 * dk * x[0]).cos() + (3.0 * dk * x[1]).sin()),
            Field::zeros(g),
        )
        .unwrap();
        let low = truncate_data(&high, Dyadic::new(1).unwrap());
        assert!(low.position.spectral().iter().all(|c| c.norm() < 1e-15));

        let once = truncate_data(&data, Dyadic::new(2).unwrap());
        let twice = truncate_data(&once, Dyadic::new(2).unwrap());
        let n0 = sobolev_norm(&data.position, 0.0, false).unwrap();
        let n1 = sobolev_norm(&once.position, 0.0, false).unwrap();
        let n2 = sobolev_norm(&twice.position, 0.0, false).unwrap();
        assert!(n0 - n1 >= n1 - n2 - 1e-15 && n2 <= n1);
        let sharp = truncate_data_sharp(&data, Dyadic::new(2).unwrap());
        assert_eq!(truncate_data_sharp(&sharp, Dyadic::new(2).unwrap()), sharp);
    }

    #[test]
    fn nonlinearity_split_cases() {
        let g = make_grid(3, 8, 4.0, 3.0).unwrap();
        let v = Field::from_fn(g, |x| (x[0] * 1.5).cos() * 0.3);
        let z = Field::from_fn(g, |x| (x[1] * 1.5).sin() * 0.8);
        let zero = Field::zeros(g);
        let (a, b) = nonlinearity_split(&zero, &v).unwrap();
        assert!(a.spectral().iter().chain(b.spectral().iter()).all(|c| c.norm() < 1e-15));
        let (a, b) = nonlinearity_split(&z, &zero).unwrap();
        assert!(a.spectral().iter().all(|c| c.norm() < 1e-15));
        let z5 = g.dealiaser().pointwise(&[&z.spectral()], |x| x[0].powi(5));
        let dev = b.spectral().iter().zip(&z5).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-15);
    }

    proptest! {
        #[test]
        fn binomial_identity_holds_pointwise(z in -3.0f64..3.0, v in -3.0f64..3.0) {
            let (a, b) = split_pointwise(z, v);
            let scale = z.abs().max(v.abs()).max(1.0).powi(5);
            prop_assert!(((z + v).powi(5) - v.powi(5) - a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn scaling_examples() {
        let g = make_grid(3, 32, 8.0, 3.0).unwrap();
        let data = bump(make_grid(3, 32, 8.0, 3.0).unwrap(), 1.0);
        let same = scaling_transform(&data, 1.0).unwrap();
        assert_eq!(same, data);
        // Band-limit the data to the half band so it fits on 16 points.
        let narrow = truncate_data_sharp(&data, Dyadic::new(2).unwrap());
        assert!(2.0 < 0.5 * g.max_frequency());
        let scaled = scaling_transform(&narrow, 2.0).unwrap();
        assert_eq!(scaled.grid().points_per_axis(), 16);
        assert_eq!(scaled.grid().box_length(), 4.0);
        let (e0, e1) = (energy(&narrow).total, energy(&scaled).total);
        assert!((e0 - e1).abs() < 1e-10 * e0);
        let (h0, h1) = (narrow.energy_norm(), scaled.energy_norm());
        assert!((h0 - h1).abs() < 1e-10 * h0);
        // The sup norm scales by λ^{1/2}.
        let s0 = lebesgue_norm(&narrow.position, f64::INFINITY).unwrap();
        let s1 = lebesgue_norm(&scaled.position, f64::INFINITY).unwrap();
        assert!((s1 / s0 - 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(scaling_transform(&data, 2.0), Err(SolverError::IncompatibleScale(_))));
        assert!(matches!(scaling_transform(&data, 3.0), Err(SolverError::IncompatibleScale(_))));
    }

    #[test]
    fn scaled_linear_trajectory_matches_direct_evolution() {
        let g = make_grid(3, 16, 2.0 * PI / 0.4, 3.0).unwrap();
        let data = truncate_data_sharp(&bump(g, 1.0), Dyadic::new(1).unwrap());
        let traj = evolve_nlw(&data, 0.4, &SolverConfig::new(0.1).linear()).unwrap();
        let scaled = scale_trajectory(&traj, 2.0).unwrap();
        for (k, t) in scaled.times.iter().enumerate() {
            assert!((t - 0.05 * k as f64).abs() < 1e-15);
        }
        let start = scaling_transform(&data, 2.0).unwrap();
        for (t, snap) in scaled.times.iter().zip(&scaled.snapshots) {
            let exact = linear_propagate(&start, *t);
            let rel = snap.minus(&exact).unwrap().energy_norm() / exact.energy_norm();
            assert!(rel < 1e-12, "{rel}");
        }
    }
}
