//! Exceedance tails of space-time and sup-in-time norms of the free
//! evolution of randomized data.

use serde::Serialize;

use super::{sampling_steps, Ensemble, ExperimentError, TailCurve, MIN_TAIL_MEMBERS};
use crate::norms::{series_norm, Exponent, NormSeries, SpaceTimeNorm};
use crate::propagator::{dyadic_time_sup, Component, LinearEvolution};

fn check_members(ensemble: &Ensemble) -> Result<(), ExperimentError> {
    if ensemble.len() < MIN_TAIL_MEMBERS {
        return Err(ExperimentError::TooFewMembers {
            needed: MIN_TAIL_MEMBERS,
            got: ensemble.len(),
        });
    }
    Ok(())
}

/// `‖S(t)(u₀^ω,u₁^ω)‖_{L^q_I L^r_x}` for every member and every interval,
/// from one pass over `[0, max b]` with `per_unit` samples per unit time
/// (default `8·band limit`). Indexed `[member][interval]`.
pub fn strichartz_norms(
    ensemble: &Ensemble,
    q: f64,
    r: f64,
    intervals: &[(f64, f64)],
    per_unit: Option<f64>,
) -> Result<Vec<Vec<SpaceTimeNorm>>, ExperimentError> {
    if !(q.is_finite() && r.is_finite()) {
        return Err(ExperimentError::InvalidParameter("q and r must be finite".into()));
    }
    let q = Exponent::new(q)?;
    if intervals.is_empty() {
        return Err(ExperimentError::InvalidParameter("no intervals".into()));
    }
    for &(a, b) in intervals {
        if !(a >= 0.0 && b > a && b - a <= 10.0) {
            return Err(ExperimentError::InvalidParameter(format!(
                "interval [{a}, {b}] must satisfy 0 ≤ a < b ≤ a + 10"
            )));
        }
    }
    let horizon = intervals.iter().map(|i| i.1).fold(0.0, f64::max);
    let steps = sampling_steps(ensemble.grid(), horizon, per_unit);
    let dt = horizon / steps as f64;
    ensemble.map(|_, data| {
        let evolution = LinearEvolution::new(&data, Component::Position);
        let series = NormSeries::from_evolution(&evolution, &[r], 0.0, dt, steps + 1).remove(0);
        intervals
            .iter()
            .map(|&i| series_norm(&series, q, i).map_err(Into::into))
            .collect()
    })
}

/// Tail of `‖S(t)(u₀^ω,u₁^ω)‖_{L^q_I L^r_x}` over the ensemble.
pub fn strichartz_tail(
    ensemble: &Ensemble,
    q: f64,
    r: f64,
    interval: (f64, f64),
) -> Result<TailCurve, ExperimentError> {
    check_members(ensemble)?;
    let norms = strichartz_norms(ensemble, q, r, &[interval], None)?;
    let samples: Vec<f64> = norms.iter().map(|m| m[0].value).collect();
    TailCurve::from_samples(&samples)
}

/// Comparison of fitted slopes on two intervals with the `|I|^{2/q}` law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingCheck {
    /// `slope(short) / slope(long)`.
    pub observed_ratio: f64,
    /// `(|I_long| / |I_short|)^{2/q}`.
    pub predicted_ratio: f64,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrichartzReport {
    pub q: f64,
    pub r: f64,
    pub intervals: Vec<(f64, f64)>,
    pub tails: Vec<TailCurve>,
    pub scaling: Option<ScalingCheck>,
    /// `[member][interval]`
    #[serde(skip)]
    pub norms: Vec<Vec<SpaceTimeNorm>>,
}

/// Relative tolerance of the interval scaling check.
pub const SCALING_TOLERANCE: f64 = 0.3;

/// Tails on a long and a short interval sharing one pass per member, with
/// the slope ratio compared to `(|I_long|/|I_short|)^{2/q}`.
pub fn strichartz_tail_scaling(
    ensemble: &Ensemble,
    q: f64,
    r: f64,
    long: (f64, f64),
    short: (f64, f64),
) -> Result<StrichartzReport, ExperimentError> {
    check_members(ensemble)?;
    let intervals = vec![long, short];
    let norms = strichartz_norms(ensemble, q, r, &intervals, None)?;
    let tails = (0..2)
        .map(|i| TailCurve::from_samples(&norms.iter().map(|m| m[i].value).collect::<Vec<_>>()))
        .collect::<Result<Vec<_>, _>>()?;
    let scaling = match (tails[0].fit, tails[1].fit) {
        (Some(a), Some(b)) => {
            let observed_ratio = b.slope / a.slope;
            let predicted_ratio = ((long.1 - long.0) / (short.1 - short.0)).powf(2.0 / q);
            let relative_error = (observed_ratio / predicted_ratio - 1.0).abs();
            Some(ScalingCheck {
                observed_ratio,
                predicted_ratio,
                relative_error,
                pass: relative_error <= SCALING_TOLERANCE,
            })
        }
        _ => None,
    };
    Ok(StrichartzReport {
        q,
        r,
        intervals,
        tails,
        scaling,
        norms,
    })
}

/// Per-member sup and its location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupTailRow {
    pub member: usize,
    pub component: &'static str,
    pub final_time: f64,
    pub r: f64,
    pub sup: f64,
    pub argmax: f64,
}

fn component_tag(c: Component) -> &'static str {
    match c {
        Component::Position => "S",
        Component::Velocity => "dS",
        Component::Tilde => "S~",
    }
}

/// Tail of `sup_{t ∈ [0,T]} ‖z(t)‖_{L^r}` on the dyadic grid of depth `K`,
/// with `z` the position (`S`) or the tilde (`S̃`) component.
pub fn sup_tail(
    ensemble: &Ensemble,
    r: f64,
    final_time: f64,
    depth: u32,
    component: Component,
) -> Result<(TailCurve, Vec<SupTailRow>), ExperimentError> {
    check_members(ensemble)?;
    let rows = sup_rows(ensemble, r, final_time, depth, component)?;
    let samples: Vec<f64> = rows.iter().map(|row| row.sup).collect();
    Ok((TailCurve::from_samples(&samples)?, rows))
}

fn sup_rows(
    ensemble: &Ensemble,
    r: f64,
    final_time: f64,
    depth: u32,
    component: Component,
) -> Result<Vec<SupTailRow>, ExperimentError> {
    if !(r >= 2.0) {
        return Err(ExperimentError::InvalidParameter(format!("r = {r} is below 2")));
    }
    if depth > 14 {
        return Err(ExperimentError::InvalidParameter(format!("dyadic depth {depth} exceeds 14")));
    }
    if !(final_time > 0.0) {
        return Err(ExperimentError::InvalidParameter("final time must be positive".into()));
    }
    ensemble.map(|member, data| {
        let evolution = LinearEvolution::new(&data, component);
        let sup = dyadic_time_sup(&evolution, (0.0, final_time), depth, r, false);
        Ok(SupTailRow {
            member,
            component: component_tag(component),
            final_time,
            r,
            sup: sup.sup,
            argmax: sup.argmax,
        })
    })
}

/// Sub-Gaussian slopes of the `S` and `S̃` sup tails for several `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupTailStudy {
    pub r: f64,
    pub depth: u32,
    pub times: Vec<f64>,
    pub s_tails: Vec<TailCurve>,
    pub tilde_tails: Vec<TailCurve>,
    /// `|slope(T_last)| / |slope(T_first)|` for `S`; values well below one
    /// mean the tail widens with `T`.
    pub s_slope_ratio: Option<f64>,
    pub tilde_slope_ratio: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<SupTailRow>,
}

/// Runs [`sup_tail`] for `S` and `S̃` at each final time. Only reported.
pub fn sup_tail_study(ensemble: &Ensemble, r: f64, times: &[f64], depth: u32) -> Result<SupTailStudy, ExperimentError> {
    check_members(ensemble)?;
    let mut study = SupTailStudy {
        r,
        depth,
        times: times.to_vec(),
        s_tails: Vec::new(),
        tilde_tails: Vec::new(),
        s_slope_ratio: None,
        tilde_slope_ratio: None,
        rows: Vec::new(),
    };
    for &t in times {
        for component in [Component::Position, Component::Tilde] {
            let (tail, rows) = sup_tail(ensemble, r, t, depth, component)?;
            study.rows.extend(rows);
            match component {
                Component::Position => study.s_tails.push(tail),
                _ => study.tilde_tails.push(tail),
            }
        }
    }
    let ratio = |tails: &[TailCurve]| match (tails.first()?.fit, tails.last()?.fit) {
        (Some(a), Some(b)) => Some(b.slope.abs() / a.slope.abs()),
        _ => None,
    };
    study.s_slope_ratio = ratio(&study.s_tails);
    study.tilde_slope_ratio = ratio(&study.tilde_tails);
    Ok(study)
}

/// Decay of dyadic increments against `min(1, 2^{-k} T N)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCheck {
    pub increments: Vec<f64>,
    /// `increments[k-1] / min(1, 2^{-k} T N)`
    pub constants: Vec<f64>,
    /// Geometric mean of `increments[k] / increments[k-1]` over levels
    /// with `2^{-k} T N ≤ 1/8`.
    pub fine_rate: f64,
    pub fine_levels: usize,
    pub pass: bool,
}

/// Checks that increments at spacing `2^{-k}T` fall off like
/// `min(1, 2^{-k}TN)`: halving per level once `2^{-k}TN` is small.
pub fn increment_decay(increments: &[f64], final_time: f64, max_frequency: f64) -> DecayCheck {
    let scale = |k: usize| (final_time * max_frequency / (1u64 << k) as f64).min(1.0);
    let constants: Vec<f64> = increments
        .iter()
        .enumerate()
        .map(|(i, &inc)| inc / scale(i + 1))
        .collect();
    let mut log_sum = 0.0;
    let mut fine_levels = 0;
    for i in 1..increments.len() {
        if final_time * max_frequency / (1u64 << i) as f64 <= 0.125 && increments[i - 1] > 0.0 {
            log_sum += (increments[i] / increments[i - 1]).ln();
            fine_levels += 1;
        }
    }
    let fine_rate = if fine_levels > 0 {
        (log_sum / fine_levels as f64).exp()
    } else {
        f64::NAN
    };
    DecayCheck {
        increments: increments.to_vec(),
        constants,
        fine_rate,
        fine_levels,
        pass: fine_levels >= 2 && (0.4..=0.6).contains(&fine_rate),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::{BaseData, EnsembleSpec};
    use crate::grid::{make_grid, Cutoff};
    use crate::randomization::DistributionKind;

    fn plane_ensemble(distribution: DistributionKind, members: usize) -> Ensemble {
        // ξ = 2 lies on the cube lattice for L = 2π, and 64 points resolve
        // cos¹⁰ exactly, so spatial norms do not depend on the phase.
        EnsembleSpec {
            grid: make_grid(1, 64, 2.0 * std::f64::consts::PI, 3.0).unwrap(),
            base: BaseData::PlaneWave {
                wavenumber: [2, 0, 0],
                amplitude: 1.0,
            },
            distribution,
            members,
            seed: 21,
            cutoff: Cutoff::SmoothPsi,
        }
        .prepare()
        .unwrap()
    }

    #[test]
    fn single_cube_norm_is_modulus_times_constant() {
        let e = plane_ensemble(DistributionKind::StandardGaussianComplex, 100);
        let norms = strichartz_norms(&e, 5.0, 10.0, &[(0.0, 1.0)], Some(200.0)).unwrap();
        let coeffs: Vec<f64> = (0..100)
            .map(|m| {
                let c = crate::randomization::sample_coefficients(*e.grid(), e.spec().distribution, e.spec().member_seed(m));
                c.get(crate::grid::CubeIndex([2, 0, 0]), 0).unwrap().norm()
            })
            .collect();
        let ratio0 = norms[0][0].value / coeffs[0];
        for m in 1..100 {
            assert!((norms[m][0].value / coeffs[m] / ratio0 - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn single_cube_tail_matches_modulus_tail() {
        // P(|g| > λ) = e^{-λ²}, so the fitted slope of the norm tail is
        // -1/c² with c the constant above.
        let e = plane_ensemble(DistributionKind::StandardGaussianComplex, 5000);
        let norms = strichartz_norms(&e, 5.0, 10.0, &[(0.0, 1.0)], Some(64.0)).unwrap();
        let samples: Vec<f64> = norms.iter().map(|m| m[0].value).collect();
        let c = {
            let coeff = crate::randomization::sample_coefficients(*e.grid(), e.spec().distribution, e.spec().member_seed(0));
            samples[0] / coeff.get(crate::grid::CubeIndex([2, 0, 0]), 0).unwrap().norm()
        };
        let fit = TailCurve::from_samples(&samples).unwrap().fit.unwrap();
        let direct = -1.0 / (c * c);
        assert!((fit.slope / direct - 1.0).abs() < 0.1, "{} vs {direct}", fit.slope);
    }

    #[test]
    fn rademacher_single_cube_is_deterministic() {
        let e = plane_ensemble(DistributionKind::Rademacher, 100);
        assert!(matches!(
            strichartz_tail(&e, 5.0, 10.0, (0.0, 1.0)),
            Err(ExperimentError::DegenerateEnsemble(100))
        ));
        let norms = strichartz_norms(&e, 5.0, 10.0, &[(0.0, 1.0)], Some(64.0)).unwrap();
        let v = norms[0][0].value;
        let samples: Vec<f64> = norms.iter().map(|m| m[0].value).collect();
        assert!(samples.iter().all(|x| (x - v).abs() < 1e-12 * v));
        let step = TailCurve::on_grid(&samples, &[0.5 * v, 2.0 * v]).unwrap();
        assert_eq!(step.exceedance, vec![1.0, 0.0]);
    }

    #[test]
    fn preconditions() {
        let e = plane_ensemble(DistributionKind::StandardGaussianComplex, 100);
        assert!(strichartz_norms(&e, f64::INFINITY, 10.0, &[(0.0, 1.0)], None).is_err());
        assert!(strichartz_norms(&e, 5.0, 10.0, &[(0.0, 11.0)], None).is_err());
        let small = plane_ensemble(DistributionKind::StandardGaussianComplex, 10);
        assert!(matches!(
            strichartz_tail(&small, 5.0, 10.0, (0.0, 1.0)),
            Err(ExperimentError::TooFewMembers { .. })
        ));
        assert!(sup_tail(&e, 1.5, 1.0, 4, Component::Position).is_err());
        assert!(sup_tail(&e, 6.0, 1.0, 15, Component::Position).is_err());
    }

    #[test]
    fn zero_data_sups_vanish() {
        let e = EnsembleSpec {
            grid: make_grid(1, 32, 10.0, 3.0).unwrap(),
            base: BaseData::Zero,
            distribution: DistributionKind::StandardGaussianComplex,
            members: 100,
            seed: 1,
            cutoff: Cutoff::SmoothPsi,
        }
        .prepare()
        .unwrap();
        let rows = sup_rows(&e, 6.0, 1.0, 6, Component::Position).unwrap();
        assert!(rows.iter().all(|r| r.sup == 0.0));
    }

    #[test]
    fn tiny_interval_sup_is_single_time_norm() {
        let e = plane_ensemble(DistributionKind::StandardGaussianComplex, 100);
        let data = e.member(3).unwrap();
        let ev = LinearEvolution::new(&data, Component::Position);
        let t = 1e-9;
        let sup = dyadic_time_sup(&ev, (0.0, t), 2, 10.0, false).sup;
        let single = crate::grid::lebesgue_norm(&data.position, 10.0).unwrap();
        assert!((sup / single - 1.0).abs() < 1e-9);
    }

    #[test]
    fn dyadic_refinement_changes_little_on_band_limited_data() {
        let g = make_grid(3, 16, 2.0 * std::f64::consts::PI, 3.0).unwrap();
        for seed in 0..5 {
            let data = crate::experiments::band_limited_pair(g, 4.0, seed);
            let ev = LinearEvolution::new(&data, Component::Position);
            let a = dyadic_time_sup(&ev, (0.0, 1.0), 10, 6.0, false).sup;
            let b = dyadic_time_sup(&ev, (0.0, 1.0), 12, 6.0, false).sup;
            assert!((b - a).abs() / b < 0.01);
            assert!(b >= a);
        }
    }

    #[test]
    fn increments_decay_geometrically() {
        let g = make_grid(3, 16, 2.0 * std::f64::consts::PI, 3.0).unwrap();
        let data = crate::experiments::band_limited_pair(g, 4.0, 2);
        let ev = LinearEvolution::new(&data, Component::Position);
        let sup = dyadic_time_sup(&ev, (0.0, 1.0), 10, 6.0, true);
        let check = increment_decay(&sup.increments, 1.0, 4.0);
        assert!(check.pass, "{check:?}");
        let cmax = check.constants.iter().cloned().fold(0.0, f64::max);
        assert!(cmax.is_finite());
        // A pure linear ramp halves exactly.
        let ramp: Vec<f64> = (1..=10).map(|k| 0.5f64.powi(k)).collect();
        assert!((increment_decay(&ramp, 1.0, 4.0).fine_rate - 0.5).abs() < 1e-12);
    }

    #[test]
    fn repeated_runs_agree() {
        let a = plane_ensemble(DistributionKind::StandardGaussianComplex, 100);
        let b = plane_ensemble(DistributionKind::StandardGaussianComplex, 100);
        let na = strichartz_norms(&a, 5.0, 10.0, &[(0.0, 0.5)], Some(32.0)).unwrap();
        let nb = strichartz_norms(&b, 5.0, 10.0, &[(0.0, 0.5)], Some(32.0)).unwrap();
        assert_eq!(na, nb);
    }
}
