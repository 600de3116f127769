//! Space-time Lebesgue norms `‖u‖_{L^q_t(I; L^r_x)}` over sampled
//! trajectories, admissibility of exponent pairs, and interval subdivision.
//!
//! A [`NormSeries`] holds `‖u(tᵢ)‖_{L^r}` at sample times. For finite `q`
//! the time integral of `‖u(t)‖^q_{L^r}` is the exact integral of the
//! piecewise-linear interpolant of the sampled powers (the trapezoid rule on
//! sample-aligned intervals), which makes interval values additive in the
//! `q`-th power and lets intervals be cut anywhere.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::grid::lebesgue_norm_values;
use crate::propagator::LinearEvolution;
use crate::solver::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NormError {
    #[error("interval [{a}, {b}] contains {found} samples; at least 2 are needed")]
    InsufficientSnapshots { a: f64, b: f64, found: usize },
    #[error("subdivision needs more than {max_intervals} intervals")]
    BudgetExceeded { max_intervals: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// A Lebesgue exponent in `[1, ∞]`; written as a number or `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const INFINITY: Exponent = Exponent(f64::INFINITY);

    pub fn new(value: f64) -> Result<Exponent, NormError> {
        if value.is_nan() || value < 1.0 {
            Err(NormError::InvalidParameter(format!("exponent {value} is not in [1, ∞]")))
        } else {
            Ok(Exponent(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `1/p`, zero for `p = ∞`.
    pub fn reciprocal(self) -> f64 {
        1.0 / self.0
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            write!(f, "inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Exponent {
    type Err = NormError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "inf" | "infinity" | "∞" => Ok(Exponent::INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| NormError::InvalidParameter(format!("cannot parse exponent {other:?}")))
                .and_then(Exponent::new),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(v) => Exponent::new(v),
            Raw::Text(t) => t.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// `‖u(tᵢ)‖_{L^r}` at increasing sample times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormSeries {
    pub r: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl NormSeries {
    pub fn new(r: f64, times: Vec<f64>, values: Vec<f64>) -> Result<NormSeries, NormError> {
        if times.len() != values.len() {
            return Err(NormError::InvalidParameter("times and values differ in length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(NormError::InvalidParameter("times must increase strictly".into()));
        }
        Ok(NormSeries { r, times, values })
    }

    /// Position norms of every snapshot of a trajectory.
    pub fn from_trajectory(traj: &Trajectory, r: f64) -> NormSeries {
        let cell = traj.grid.cell_volume();
        let values = traj
            .snapshots
            .iter()
            .map(|s| lebesgue_norm_values(&s.position.physical(), r, cell))
            .collect();
        NormSeries {
            r,
            times: traj.times.clone(),
            values,
        }
    }

    /// Series for several `r` from one pass over `t₀ + i·dt`, `i < count`.
    pub fn from_evolution(evolution: &LinearEvolution, rs: &[f64], t0: f64, dt: f64, count: usize) -> Vec<NormSeries> {
        let cell = evolution.grid().cell_volume();
        let times: Vec<f64> = (0..count).map(|i| t0 + i as f64 * dt).collect();
        let mut values = vec![Vec::with_capacity(count); rs.len()];
        evolution.sample_uniform(t0, dt, count, |_, field| {
            for (slot, &r) in values.iter_mut().zip(rs) {
                slot.push(lebesgue_norm_values(field, r, cell));
            }
        });
        rs.iter()
            .zip(values)
            .map(|(&r, v)| NormSeries {
                r,
                times: times.clone(),
                values: v,
            })
            .collect()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().unwrap())
    }

    /// Every other sample, keeping the first.
    pub fn half_stride(&self) -> NormSeries {
        NormSeries {
            r: self.r,
            times: self.times.iter().step_by(2).copied().collect(),
            values: self.values.iter().step_by(2).copied().collect(),
        }
    }

    fn samples_in(&self, a: f64, b: f64) -> usize {
        let eps = 1e-12 * (b - a).abs().max(1.0);
        self.times.iter().filter(|&&t| t >= a - eps && t <= b + eps).count()
    }

    /// Linear interpolant of `values^q` at `t`.
    fn power_at(&self, t: f64, q: f64) -> f64 {
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.values[0].powf(q);
        }
        if i >= self.times.len() {
            return self.values.last().unwrap().powf(q);
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let w = (t - t0) / (t1 - t0);
        (1.0 - w) * self.values[i - 1].powf(q) + w * self.values[i].powf(q)
    }

    /// `∫_a^b ‖u(t)‖^q dt` for the piecewise-linear interpolant.
    pub fn integral(&self, q: f64, a: f64, b: f64) -> f64 {
        let mut total = 0.0;
        let mut left = a;
        let mut f_left = self.power_at(a, q);
        for (&t, &v) in self.times.iter().zip(&self.values) {
            if t <= a {
                continue;
            }
            if t >= b {
                break;
            }
            let f = v.powf(q);
            total += 0.5 * (t - left) * (f + f_left);
            left = t;
            f_left = f;
        }
        total + 0.5 * (b - left) * (f_left + self.power_at(b, q))
    }

    fn max_over(&self, a: f64, b: f64) -> f64 {
        let eps = 1e-12 * (b - a).abs().max(1.0);
        self.times
            .iter()
            .zip(&self.values)
            .filter(|(&t, _)| t >= a - eps && t <= b + eps)
            .map(|(_, &v)| v)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    TrapezoidOverSnapshots,
    MaxOverSnapshots,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpaceTimeNorm {
    pub q: Exponent,
    pub r: f64,
    pub interval: (f64, f64),
    pub value: f64,
    pub quadrature: Quadrature,
    /// `|value(half stride) - value| / 3`; zero for the maximum rule, NaN
    /// when fewer than three samples fall in the interval.
    pub quad_error_est: f64,
}

/// Evaluates `‖u‖_{L^q(I; L^r)}` on a norm series.
pub fn series_norm(series: &NormSeries, q: Exponent, interval: (f64, f64)) -> Result<SpaceTimeNorm, NormError> {
    let (a, b) = interval;
    let (lo, hi) = series.span();
    let eps = 1e-12 * (hi - lo).abs().max(1.0);
    if !(a < b) || a < lo - eps || b > hi + eps {
        return Err(NormError::InvalidParameter(format!(
            "interval [{a}, {b}] is not inside the sampled range [{lo}, {hi}]"
        )));
    }
    let found = series.samples_in(a, b);
    if found < 2 {
        return Err(NormError::InsufficientSnapshots { a, b, found });
    }
    if q.is_infinite() {
        return Ok(SpaceTimeNorm {
            q,
            r: series.r,
            interval,
            value: series.max_over(a, b),
            quadrature: Quadrature::MaxOverSnapshots,
            quad_error_est: 0.0,
        });
    }
    let qv = q.value();
    let value = series.integral(qv, a, b).powf(1.0 / qv);
    let coarse = series.half_stride();
    let quad_error_est = if found >= 3 && coarse.samples_in(a, b) >= 2 {
        (coarse.integral(qv, a, b).powf(1.0 / qv) - value).abs() / 3.0
    } else {
        f64::NAN
    };
    Ok(SpaceTimeNorm {
        q,
        r: series.r,
        interval,
        value,
        quadrature: Quadrature::TrapezoidOverSnapshots,
        quad_error_est,
    })
}

/// `‖u‖_{L^q(I; L^r)}` of the position component of a trajectory.
pub fn spacetime_norm(traj: &Trajectory, q: Exponent, r: f64, interval: (f64, f64)) -> Result<SpaceTimeNorm, NormError> {
    series_norm(&NormSeries::from_trajectory(traj, r), q, interval)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Admissibility {
    pub admissible: bool,
    pub reasons: Vec<String>,
}

/// `(q, r)` is `s`-wave admissible when `q ≥ 2`, `2 ≤ r < ∞`,
/// `1/q + 1/r ≤ 1/2` and `1/q + 3/r = 3/2 - s`.
pub fn admissible_pair_check(q: Exponent, r: Exponent, s: f64) -> Admissibility {
    let mut reasons = Vec::new();
    if q.value() < 2.0 {
        reasons.push(format!("q = {q} is below 2"));
    }
    if r.is_infinite() {
        reasons.push("r = ∞ is excluded".into());
    } else if r.value() < 2.0 {
        reasons.push(format!("r = {r} is below 2"));
    }
    let (iq, ir) = (q.reciprocal(), r.reciprocal());
    if iq + ir > 0.5 + 1e-12 {
        reasons.push(format!("1/q + 1/r = {} exceeds 1/2", iq + ir));
    }
    let scaling = iq + 3.0 * ir;
    if (scaling - (1.5 - s)).abs() > 1e-12 {
        reasons.push(format!("1/q + 3/r = {scaling} differs from 3/2 - s = {}", 1.5 - s));
    }
    Admissibility {
        admissible: reasons.is_empty(),
        reasons,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntervalPartition {
    pub parent: (f64, f64),
    /// Interval endpoints, starting with `parent.0` and ending with `parent.1`.
    pub cuts: Vec<f64>,
    pub norms: Vec<f64>,
    pub small: Vec<bool>,
}

impl IntervalPartition {
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.cuts.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }
}

/// Greedy left-to-right partition of the sampled range into intervals
/// with `‖u‖_{L^q(I; L^r)} ≤ 4η`; each cut is placed where the running
/// integral reaches `(4η)^q`.
pub fn subdivide_until_small(
    series: &NormSeries,
    q: f64,
    eta: f64,
    max_intervals: usize,
) -> Result<IntervalPartition, NormError> {
    if !(eta > 0.0) || !(q.is_finite() && q >= 1.0) {
        return Err(NormError::InvalidParameter(format!("need η > 0 and finite q ≥ 1, got η = {eta}, q = {q}")));
    }
    let (a, b) = series.span();
    let budget = (4.0 * eta).powf(q);
    let mut cuts = vec![a];
    let mut norms = Vec::new();
    let mut acc = 0.0;
    for i in 1..series.times.len() {
        let (t0, t1) = (series.times[i - 1], series.times[i]);
        let (f0, f1) = (series.values[i - 1].powf(q), series.values[i].powf(q));
        let mut start = t0;
        let mut f_start = f0;
        loop {
            let slope = (f1 - f0) / (t1 - t0);
            let piece = 0.5 * (t1 - start) * (f_start + f1);
            if acc + piece <= budget {
                acc += piece;
                break;
            }
            // Solve f_start·x + slope·x²/2 = budget - acc for the cut offset x.
            let need = budget - acc;
            let x = if slope.abs() < 1e-300 {
                need / f_start
            } else {
                let disc = (f_start * f_start + 2.0 * slope * need).max(0.0);
                (-f_start + disc.sqrt()) / slope
            };
            let cut = (start + x).clamp(start, t1);
            cuts.push(cut);
            norms.push(4.0 * eta);
            if norms.len() >= max_intervals {
                return Err(NormError::BudgetExceeded { max_intervals });
            }
            acc = 0.0;
            f_start = f0 + slope * (cut - t0);
            start = cut;
        }
    }
    if *cuts.last().unwrap() < b {
        cuts.push(b);
        norms.push(acc.powf(1.0 / q));
    } else {
        // The last cut landed on the end point; its interval is already full.
        *cuts.last_mut().unwrap() = b;
    }
    if norms.len() > max_intervals {
        return Err(NormError::BudgetExceeded { max_intervals });
    }
    let small = norms.iter().map(|&n| n <= 4.0 * eta * (1.0 + 1e-9)).collect();
    Ok(IntervalPartition {
        parent: (a, b),
        cuts,
        norms,
        small,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallnessReport {
    pub intervals: Vec<(f64, f64)>,
    pub norms: Vec<f64>,
    /// `K|I_j|^θ`
    pub bounds: Vec<f64>,
    pub pass: Vec<bool>,
}

impl SmallnessReport {
    pub fn all_pass(&self) -> bool {
        self.pass.iter().all(|&p| p)
    }
}

/// Checks `‖u‖_{L^q(I_j; L^r)} ≤ K|I_j|^θ` on `I_j = [jτ, (j+1)τ] ∩ [0, T]`.
pub fn smallness_condition(
    series: &NormSeries,
    q: Exponent,
    k: f64,
    theta: f64,
    tau: f64,
) -> Result<SmallnessReport, NormError> {
    if !(tau > 0.0 && k > 0.0 && theta > 0.0) {
        return Err(NormError::InvalidParameter("K, θ and τ must be positive".into()));
    }
    let (a, b) = series.span();
    let mut report = SmallnessReport {
        intervals: Vec::new(),
        norms: Vec::new(),
        bounds: Vec::new(),
        pass: Vec::new(),
    };
    let mut j = 0usize;
    loop {
        let lo = a + j as f64 * tau;
        if lo >= b - 1e-12 * (b - a) {
            break;
        }
        let hi = (lo + tau).min(b);
        let norm = series_norm(series, q, (lo, hi))?.value;
        let bound = k * (hi - lo).powf(theta);
        report.intervals.push((lo, hi));
        report.norms.push(norm);
        report.bounds.push(bound);
        report.pass.push(norm <= bound);
        j += 1;
    }
    Ok(report)
}

/// Fraction of ensemble members passing on every interval.
pub fn smallness_fraction(reports: &[SmallnessReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.all_pass()).count() as f64 / reports.len() as f64
}

/// One CSV row `(sample_id, q, r, a, b, value, quad_error_est)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormRow {
    pub sample_id: u64,
    pub q: Exponent,
    pub r: Exponent,
    pub a: f64,
    pub b: f64,
    pub value: f64,
    pub quad_error_est: f64,
}

impl NormRow {
    pub const HEADER: &'static str = "sample_id,q,r,a,b,value,quad_error_est";

    pub fn from_norm(sample_id: u64, norm: &SpaceTimeNorm) -> NormRow {
        NormRow {
            sample_id,
            q: norm.q,
            r: Exponent(norm.r),
            a: norm.interval.0,
            b: norm.interval.1,
            value: norm.value,
            quad_error_est: norm.quad_error_est,
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{:e}",
            self.sample_id, self.q, self.r, self.a, self.b, self.value, self.quad_error_est
        )
    }
}
