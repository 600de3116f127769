//! Exact linear wave propagators, applied mode by mode in frequency.
//!
//! With `ω = |ξ|` and `⟨ξ⟩ = (1 + ω²)^{1/2}`:
//!
//! * `S(t)(u₀,u₁) = cos(tω)û₀ + sin(tω)/ω · û₁`
//! * `∂ₜS(t)(u₀,u₁) = -ω sin(tω)û₀ + cos(tω)û₁`
//! * `S̃(t)(u₀,u₁) = -(ω/⟨ξ⟩) sin(tω)û₀ + cos(tω)/⟨ξ⟩ · û₁`
//! * `S±(t)φ = e^{±itω}φ̂`
//!
//! `sin(tω)/ω` is replaced by its limit `t` at `ξ = 0`, so on the torus the
//! mean of `u₁` makes the mean of `u` grow linearly.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::fft::{self, Direction};
use crate::grid::{lebesgue_norm_values, Field, FieldPair, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorKind {
    FullWaveS,
    TildeS,
    HalfWavePlus,
    HalfWaveMinus,
    SineOverGradient,
}

fn sin_over(omega: f64, t: f64) -> f64 {
    if omega == 0.0 {
        t
    } else {
        (omega * t).sin() / omega
    }
}

impl PropagatorKind {
    /// Symbols `(m₀, m₁)` at time `t`, so that the output spectrum is
    /// `m₀·û₀ + m₁·û₁`. Kinds acting on a single field use `m₀` only.
    pub fn symbols(self, grid: &GridSpec, t: f64) -> [Vec<Complex64>; 2] {
        let omega = grid.abs_frequencies();
        let real = |f: &dyn Fn(f64) -> f64| -> Vec<Complex64> {
            omega.iter().map(|&w| Complex64::new(f(w), 0.0)).collect()
        };
        match self {
            PropagatorKind::FullWaveS => [real(&|w| (w * t).cos()), real(&|w| sin_over(w, t))],
            PropagatorKind::TildeS => [
                real(&|w| -w / (1.0 + w * w).sqrt() * (w * t).sin()),
                real(&|w| (w * t).cos() / (1.0 + w * w).sqrt()),
            ],
            PropagatorKind::HalfWavePlus | PropagatorKind::HalfWaveMinus => {
                let sign = if self == PropagatorKind::HalfWavePlus { 1.0 } else { -1.0 };
                let m0 = omega
                    .iter()
                    .map(|&w| Complex64::from_polar(1.0, sign * w * t))
                    .collect();
                [m0, vec![Complex64::default(); grid.len()]]
            }
            PropagatorKind::SineOverGradient => {
                [real(&|w| sin_over(w, t)), vec![Complex64::default(); grid.len()]]
            }
        }
    }
}

/// Symbol of `∂ₜS(t)` on `(û₀, û₁)`.
pub fn velocity_symbols(grid: &GridSpec, t: f64) -> [Vec<Complex64>; 2] {
    let omega = grid.abs_frequencies();
    [
        omega.iter().map(|&w| Complex64::new(-w * (w * t).sin(), 0.0)).collect(),
        omega.iter().map(|&w| Complex64::new((w * t).cos(), 0.0)).collect(),
    ]
}

fn apply2(grid: &GridSpec, m: &[Vec<Complex64>; 2], a: &[Complex64], b: &[Complex64]) -> Field {
    let spectral = (0..grid.len()).map(|k| m[0][k] * a[k] + m[1][k] * b[k]).collect();
    Field::from_spectral(*grid, spectral).expect("length preserved")
}

/// `(S(t)(u₀,u₁), ∂ₜS(t)(u₀,u₁))`.
pub fn linear_propagate(pair: &FieldPair, t: f64) -> FieldPair {
    let grid = *pair.grid();
    let a = pair.position.spectral();
    let b = pair.velocity.spectral();
    let position = apply2(&grid, &PropagatorKind::FullWaveS.symbols(&grid, t), &a, &b);
    let velocity = apply2(&grid, &velocity_symbols(&grid, t), &a, &b);
    FieldPair { position, velocity }
}

/// `S̃(t)(u₀,u₁)`, with `∂ₜS(t) = ⟨∇⟩S̃(t)`.
pub fn tilde_propagate(pair: &FieldPair, t: f64) -> Field {
    let grid = *pair.grid();
    apply2(
        &grid,
        &PropagatorKind::TildeS.symbols(&grid, t),
        &pair.position.spectral(),
        &pair.velocity.spectral(),
    )
}

/// `sin(t|∇|)/|∇| φ`.
pub fn sine_over_gradient(field: &Field, t: f64) -> Field {
    let grid = *field.grid();
    let [m, _] = PropagatorKind::SineOverGradient.symbols(&grid, t);
    let spectral = field.spectral().iter().zip(&m).map(|(c, s)| c * s).collect();
    Field::from_spectral(grid, spectral).expect("length preserved")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HalfWaveSign {
    Plus,
    Minus,
}

/// A complex-valued field, held spectrally.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    spectral: Vec<Complex64>,
}

impl ComplexField {
    pub fn from_spectral(grid: GridSpec, spectral: Vec<Complex64>) -> ComplexField {
        assert_eq!(grid.len(), spectral.len(), "spectrum does not match grid");
        ComplexField { grid, spectral }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn spectral(&self) -> &[Complex64] {
        &self.spectral
    }

    pub fn physical(&self) -> Vec<Complex64> {
        let mut buf = self.spectral.clone();
        fft::transform(&mut buf, self.grid.points_per_axis(), self.grid.dim(), Direction::Inverse);
        buf
    }

    pub fn l2_norm(&self) -> f64 {
        (self.spectral.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.grid.volume()).sqrt()
    }

    /// Real part as a real field.
    pub fn real_part(&self) -> Field {
        let spectral = (0..self.spectral.len())
            .map(|k| 0.5 * (self.spectral[k] + self.spectral[self.grid.conjugate_index(k)].conj()))
            .collect();
        Field::from_spectral(self.grid, spectral).expect("length preserved")
    }
}

/// `S±(t)φ`; the result is complex in general.
pub fn half_wave_propagate(field: &Field, t: f64, sign: HalfWaveSign) -> ComplexField {
    half_wave_apply(field.grid(), &field.spectral(), t, sign)
}

/// `S±(t)` applied to an already complex field.
pub fn half_wave_apply(grid: &GridSpec, spectral: &[Complex64], t: f64, sign: HalfWaveSign) -> ComplexField {
    let kind = match sign {
        HalfWaveSign::Plus => PropagatorKind::HalfWavePlus,
        HalfWaveSign::Minus => PropagatorKind::HalfWaveMinus,
    };
    let [m, _] = kind.symbols(grid, t);
    ComplexField {
        grid: *grid,
        spectral: spectral.iter().zip(&m).map(|(c, s)| c * s).collect(),
    }
}

/// Which component of the free evolution a [`LinearEvolution`] produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Component {
    /// `S(t)(u₀,u₁)`
    Position,
    /// `∂ₜS(t)(u₀,u₁)`
    Velocity,
    /// `S̃(t)(u₀,u₁)`
    Tilde,
}

/// Fast evaluator of one component of the free evolution of a fixed pair,
/// written per mode as `A cos(ωt) + B sin(ωt)` with the zero mode
/// `C₀ + t D₀`.
#[derive(Debug, Clone)]
pub struct LinearEvolution {
    grid: GridSpec,
    omega: Vec<f64>,
    a: Vec<Complex64>,
    b: Vec<Complex64>,
    c0: Complex64,
    d0: Complex64,
}

/// Snapshots between exact re-evaluations of the phase recurrence; even.
const RESYNC: usize = 32;

impl LinearEvolution {
    pub fn new(pair: &FieldPair, component: Component) -> LinearEvolution {
        let grid = *pair.grid();
        let omega = grid.abs_frequencies();
        let u0 = pair.position.spectral();
        let u1 = pair.velocity.spectral();
        let mut a = Vec::with_capacity(grid.len());
        let mut b = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let w = omega[k];
            let bracket = (1.0 + w * w).sqrt();
            let (ak, bk) = match component {
                Component::Position => (u0[k], if w == 0.0 { Complex64::default() } else { u1[k] / w }),
                Component::Velocity => (u1[k], -u0[k] * w),
                Component::Tilde => (u1[k] / bracket, -u0[k] * (w / bracket)),
            };
            a.push(ak);
            b.push(bk);
        }
        // The zero mode is always slot 0.
        let (c0, d0) = match component {
            Component::Position => (u0[0], u1[0]),
            Component::Velocity | Component::Tilde => (u1[0], Complex64::default()),
        };
        LinearEvolution {
            grid,
            omega,
            a,
            b,
            c0,
            d0,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn fill(&self, t: f64, out: &mut [Complex64]) {
        for k in 0..out.len() {
            let (s, c) = (self.omega[k] * t).sin_cos();
            out[k] = self.a[k] * c + self.b[k] * s;
        }
        out[0] = self.c0 + self.d0 * t;
    }

    /// Spectrum at time `t`.
    pub fn spectral_at(&self, t: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.grid.len()];
        self.fill(t, &mut out);
        out
    }

    pub fn field_at(&self, t: f64) -> Field {
        Field::from_spectral(self.grid, self.spectral_at(t)).expect("length preserved")
    }

    /// Upper bound for `sup_t ‖∂ₜz(t)‖_{L^∞}`.
    pub fn lipschitz_bound(&self) -> f64 {
        let modes: f64 = (0..self.grid.len())
            .map(|k| self.omega[k] * (self.a[k].norm() + self.b[k].norm()))
            .sum();
        modes + self.d0.norm()
    }

    /// Calls `visit(index, values)` with the physical field at each time
    /// `t₀ + i·dt`, `i < count`. Two time levels share one complex inverse
    /// transform, and phases advance by rotation with periodic exact
    /// re-evaluation.
    pub fn sample_uniform<F>(&self, t0: f64, dt: f64, count: usize, mut visit: F)
    where
        F: FnMut(usize, &[f64]),
    {
        let len = self.grid.len();
        let n = self.grid.points_per_axis();
        let dim = self.grid.dim();
        let step: Vec<Complex64> = self.omega.iter().map(|&w| Complex64::from_polar(1.0, w * dt)).collect();
        let mut phase: Vec<Complex64> = Vec::new();
        let mut buf = vec![Complex64::default(); len];
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        let spectrum_at = |phase: &[Complex64], i: usize, k: usize| -> Complex64 {
            if k == 0 {
                self.c0 + self.d0 * (t0 + i as f64 * dt)
            } else {
                self.a[k] * phase[k].re + self.b[k] * phase[k].im
            }
        };
        let mut i = 0;
        while i < count {
            if i % RESYNC == 0 {
                let t = t0 + i as f64 * dt;
                phase = self.omega.iter().map(|&w| Complex64::from_polar(1.0, w * t)).collect();
            }
            let pair = i + 1 < count;
            for k in 0..len {
                buf[k] = spectrum_at(&phase, i, k);
            }
            if pair {
                for (p, s) in phase.iter_mut().zip(&step) {
                    *p *= s;
                }
                let j = Complex64::new(0.0, 1.0);
                for k in 0..len {
                    buf[k] += j * spectrum_at(&phase, i + 1, k);
                }
            }
            fft::transform(&mut buf, n, dim, Direction::Inverse);
            for k in 0..len {
                re[k] = buf[k].re;
                im[k] = buf[k].im;
            }
            visit(i, &re);
            if pair {
                visit(i + 1, &im);
            }
            for (p, s) in phase.iter_mut().zip(&step) {
                *p *= s;
            }
            i += 2;
        }
    }
}

/// Result of [`dyadic_time_sup`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DyadicSup {
    /// `max_ℓ ‖z(t_ℓ)‖_{L^r}` over the finest grid.
    pub sup: f64,
    /// Time at which the maximum is attained.
    pub argmax: f64,
    /// Norm at the left endpoint.
    pub initial: f64,
    /// `increments[k-1] = max_ℓ ‖z(t_{ℓ,k}) - z(t_{ℓ',k-1})‖_{L^r}`,
    /// `t_{ℓ',k-1}` the nearest coarser point to the left.
    pub increments: Vec<f64>,
}

/// `sup_t ‖z(t)‖_{L^r}` over the dyadic points `a + ℓ(b-a)2^{-K}`, and the
/// per-level increments when requested.
pub fn dyadic_time_sup(
    evolution: &LinearEvolution,
    interval: (f64, f64),
    depth: u32,
    r: f64,
    with_increments: bool,
) -> DyadicSup {
    assert!(depth <= 16, "dyadic depth above 16");
    let (a, b) = interval;
    let points = (1usize << depth) + 1;
    let dt = (b - a) / (1u64 << depth) as f64;
    let cell = evolution.grid.cell_volume();
    let mut sup = f64::MIN;
    let mut argmax = a;
    let mut initial = 0.0;
    evolution.sample_uniform(a, dt, points, |i, values| {
        let v = lebesgue_norm_values(values, r, cell);
        if i == 0 {
            initial = v;
        }
        if v > sup {
            sup = v;
            argmax = a + i as f64 * dt;
        }
    });
    let mut increments = Vec::new();
    if with_increments {
        let len = evolution.grid.len();
        let mut diff = vec![Complex64::default(); len];
        let mut other = vec![Complex64::default(); len];
        for k in 1..=depth {
            let h = (b - a) / (1u64 << k) as f64;
            let mut worst = 0.0f64;
            for l in (1..(1usize << k)).step_by(2) {
                let t = a + l as f64 * h;
                evolution.fill(t, &mut diff);
                evolution.fill(t - h, &mut other);
                for (d, o) in diff.iter_mut().zip(&other) {
                    *d -= o;
                }
                let values = evolution_physical(&evolution.grid, &mut diff);
                worst = worst.max(lebesgue_norm_values(&values, r, cell));
            }
            increments.push(worst);
        }
    }
    DyadicSup {
        sup,
        argmax,
        initial,
        increments,
    }
}

fn evolution_physical(grid: &GridSpec, spectral: &mut [Complex64]) -> Vec<f64> {
    fft::transform(spectral, grid.points_per_axis(), grid.dim(), Direction::Inverse);
    spectral.iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lebesgue_norm, make_grid, sobolev_norm, Multiplier};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn band_limited_pair(grid: GridSpec, seed: u64, cutoff: f64) -> FieldPair {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut make = || {
            let data = (0..grid.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = Field::from_physical(grid, data).unwrap();
            let m = Multiplier::new(
                grid,
                grid.radial_symbol(|r| if r <= cutoff { 1.0 } else { 0.0 }),
                crate::grid::MultiplierKind::Custom("band".into()),
            )
            .unwrap();
            m.apply(&f)
        };
        let u0 = make();
        let u1 = make();
        FieldPair::new(u0, u1).unwrap()
    }

    #[test]
    fn identity_at_time_zero() {
        let g = make_grid(3, 8, 5.0, 1.0).unwrap();
        let p = band_limited_pair(g, 1, 10.0);
        let q = linear_propagate(&p, 0.0);
        assert_eq!(q, p);
    }

    #[test]
    fn constant_velocity_grows_linearly() {
        let g = make_grid(2, 16, 4.0, 1.0).unwrap();
        let p = FieldPair::new(Field::zeros(g), Field::constant(g, 0.7)).unwrap();
        let q = linear_propagate(&p, 2.5);
        for v in q.position.physical().iter() {
            assert!((v - 1.75).abs() < 1e-14);
        }
        for v in q.velocity.physical().iter() {
            assert!((v - 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn cosine_mode_matches_dalembert() {
        let g = make_grid(3, 16, 2.0 * PI, 1.0).unwrap();
        let k = 3.0;
        let p = FieldPair::new(Field::from_fn(g, |x| (k * x[0]).cos()), Field::zeros(g)).unwrap();
        for t in [0.3, 1.0, 7.7] {
            let q = linear_propagate(&p, t);
            let expected = Field::from_fn(g, |x| (k * t).cos() * (k * x[0]).cos());
            let a = q.position.physical();
            let b = expected.physical();
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tilde_at_zero_with_zero_velocity_vanishes() {
        let g = make_grid(2, 16, 6.0, 1.0).unwrap();
        let p = band_limited_pair(g, 3, 100.0);
        let p = FieldPair::new(p.position, Field::zeros(g)).unwrap();
        let out = tilde_propagate(&p, 0.0);
        assert!(out.spectral().iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn tilde_single_mode_amplitude() {
        let g = make_grid(1, 32, 2.0 * PI, 1.0).unwrap();
        let k = 4.0;
        let p = FieldPair::new(Field::zeros(g), Field::from_fn(g, |x| (k * x[0]).cos())).unwrap();
        let t = 0.9;
        let out = tilde_propagate(&p, t);
        let ratio = out.spectral()[4] / p.velocity.spectral()[4];
        assert!((ratio.re - (t * k).cos() / (1.0 + k * k).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tilde_is_time_derivative_over_bracket() {
        let g = make_grid(3, 16, 7.0, 1.0).unwrap();
        for t in [0.0, 0.4, 2.3] {
            let st = PropagatorKind::TildeS.symbols(&g, t);
            let dt = velocity_symbols(&g, t);
            let bracket = Multiplier::bessel(g, 1.0);
            for j in 0..2 {
                for k in 0..g.len() {
                    let lhs = st[j][k] * bracket.symbol()[k];
                    assert!((lhs - dt[j][k]).norm() <= 1e-14 * (1.0 + dt[j][k].norm()));
                }
            }
        }
    }

    #[test]
    fn finite_difference_order_of_tilde_identity() {
        let g = make_grid(3, 16, 2.0 * PI / 0.8, 1.0).unwrap();
        let p = band_limited_pair(g, 9, 4.0);
        let t = 0.7;
        let bracket = Multiplier::bessel(g, 1.0);
        let target = bracket.apply(&tilde_propagate(&p, t));
        let error = |h: f64| {
            let plus = linear_propagate(&p, t + h).position;
            let minus = linear_propagate(&p, t - h).position;
            let fd = plus.combine(0.5 / h, &minus, -0.5 / h).unwrap();
            sobolev_norm(&fd.minus(&target).unwrap(), 0.0, false).unwrap()
        };
        let order = (error(1e-3) / error(1e-4)).log10();
        assert!(order >= 1.9, "observed order {order}");
    }

    #[test]
    fn half_wave_properties() {
        let g = make_grid(3, 8, 5.0, 1.0).unwrap();
        for seed in 0..20 {
            let phi = band_limited_pair(g, seed, 100.0).position;
            let norm = sobolev_norm(&phi, 0.0, false).unwrap();
            for t in [0.1, 1.0, 7.0] {
                let plus = half_wave_propagate(&phi, t, HalfWaveSign::Plus);
                assert!((plus.l2_norm() - norm).abs() < 1e-12 * norm);
                let back = half_wave_apply(&g, plus.spectral(), t, HalfWaveSign::Minus);
                let dev = back
                    .spectral()
                    .iter()
                    .zip(phi.spectral().iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(dev < 1e-14);
                let minus = half_wave_propagate(&phi, t, HalfWaveSign::Minus);
                let avg: Vec<Complex64> = plus
                    .spectral()
                    .iter()
                    .zip(minus.spectral())
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                let cos = linear_propagate(&FieldPair::new(phi.clone(), Field::zeros(g)).unwrap(), t).position;
                let dev = avg
                    .iter()
                    .zip(cos.spectral().iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0, f64::max);
                assert!(dev < 1e-12);
            }
        }
    }

    #[test]
    fn evolution_matches_direct_propagation() {
        let g = make_grid(3, 8, 6.0, 1.0).unwrap();
        let mut p = band_limited_pair(g, 4, 100.0);
        p.velocity = p.velocity.plus(&Field::constant(g, 0.3)).unwrap();
        let comps = [Component::Position, Component::Velocity, Component::Tilde];
        for comp in comps {
            let ev = LinearEvolution::new(&p, comp);
            let t0 = -0.3;
            let dt = 0.0713;
            let count = 101;
            ev.sample_uniform(t0, dt, count, |i, values| {
                let t = t0 + i as f64 * dt;
                let direct = match comp {
                    Component::Position => linear_propagate(&p, t).position,
                    Component::Velocity => linear_propagate(&p, t).velocity,
                    Component::Tilde => tilde_propagate(&p, t),
                };
                let d = direct.physical();
                for (x, y) in values.iter().zip(d.iter()) {
                    assert!((x - y).abs() < 1e-11, "{comp:?} at step {i}");
                }
            });
        }
    }

    #[test]
    fn stationary_pair_sup_is_initial_value() {
        let g = make_grid(3, 8, 6.0, 1.0).unwrap();
        let p = FieldPair::new(Field::constant(g, 1.3), Field::zeros(g)).unwrap();
        let ev = LinearEvolution::new(&p, Component::Position);
        let out = dyadic_time_sup(&ev, (0.5, 2.0), 6, 4.0, false);
        assert!((out.sup - out.initial).abs() < 1e-13);
        let direct = lebesgue_norm(&p.position, 4.0).unwrap();
        assert!((out.initial - direct).abs() < 1e-13);
    }

    #[test]
    fn increments_decay_geometrically_for_band_limited_data() {
        let g = make_grid(3, 16, 2.0 * PI / 0.8, 1.0).unwrap();
        let p = band_limited_pair(g, 6, 2.0);
        let ev = LinearEvolution::new(&p, Component::Position);
        let out = dyadic_time_sup(&ev, (0.0, 1.0), 10, 6.0, true);
        // 2^{-k} ξ_max < 1 from k = 2 on.
        for k in 3..10 {
            let ratio = out.increments[k] / out.increments[k - 1];
            assert!(ratio < 0.6, "level {} ratio {ratio}", k + 1);
        }
        let tail = out.increments[9] / out.increments[8];
        assert!((tail - 0.5).abs() < 0.02);
    }

    #[test]
    fn refinement_changes_sup_within_lipschitz_bound() {
        let g = make_grid(3, 16, 2.0 * PI / 0.8, 1.0).unwrap();
        let p = band_limited_pair(g, 8, 2.0);
        let ev = LinearEvolution::new(&p, Component::Position);
        let r = 6.0;
        let lip = ev.lipschitz_bound() * g.volume().powf(1.0 / r);
        for depth in [3, 5, 7] {
            let coarse = dyadic_time_sup(&ev, (0.0, 2.0), depth, r, false).sup;
            let fine = dyadic_time_sup(&ev, (0.0, 2.0), depth + 2, r, false).sup;
            assert!(fine >= coarse - 1e-12);
            assert!(fine - coarse < 2.0 * lip * 2.0 / (1u64 << depth) as f64);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn group_law_reversal_and_energy(seed in 0u64..1000, t1 in -5.0f64..5.0, t2 in -5.0f64..5.0) {
            let g = make_grid(3, 8, 5.0, 1.0).unwrap();
            let p = band_limited_pair(g, seed, 3.0);
            let twice = linear_propagate(&linear_propagate(&p, t1), t2);
            let once = linear_propagate(&p, t1 + t2);
            prop_assert!(twice.position.max_spectral_deviation(&once.position) < 1e-12);
            prop_assert!(twice.velocity.max_spectral_deviation(&once.velocity) < 1e-12);
            let back = linear_propagate(&linear_propagate(&p, t1), -t1);
            prop_assert!(back.position.max_spectral_deviation(&p.position) < 1e-12);
            prop_assert!(back.velocity.max_spectral_deviation(&p.velocity) < 1e-12);
            let mut q = p.clone();
            q.position = q.position.minus(&Field::constant(g, q.position.spectral()[0].re)).unwrap();
            q.velocity = q.velocity.minus(&Field::constant(g, q.velocity.spectral()[0].re)).unwrap();
            let e0 = q.energy_norm();
            let e1 = linear_propagate(&q, t1).energy_norm();
            prop_assert!((e0 - e1).abs() < 1e-12 * e0);
        }
    }
}
