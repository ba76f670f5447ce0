//! Weighted ergodic averages, level-set fractions and shift diagnostics for
//! sampled mean-square curves `t ↦ Ê‖Y(t)‖²`.
//!
//! Averages and level-set fractions share one set of nonnegative quadrature
//! weights, so the finite-radius inequalities
//! `avg >= ε·frac` and `avg <= M·frac + ε` hold exactly term by term.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::integrate_adaptive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    ConstantOne,
    ExpDecay,
    Custom,
}

/// A weight `ρ > 0` with `m(r,ρ) = ∫_{-r}^{r} ρ`.
#[derive(Clone)]
pub struct WeightFunction {
    kind: WeightKind,
    custom: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl std::fmt::Debug for WeightFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "WeightFunction({:?})", self.kind)
    }
}

impl PartialEq for WeightFunction {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.kind != WeightKind::Custom
    }
}

impl WeightFunction {
    pub fn constant_one() -> Self {
        Self {
            kind: WeightKind::ConstantOne,
            custom: None,
        }
    }

    /// `ρ(t) = e^{-t}`.
    pub fn exp_decay() -> Self {
        Self {
            kind: WeightKind::ExpDecay,
            custom: None,
        }
    }

    pub fn custom<F: Fn(f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Self {
            kind: WeightKind::Custom,
            custom: Some(Arc::new(f)),
        }
    }

    pub fn from_kind(kind: WeightKind) -> Result<Self> {
        match kind {
            WeightKind::ConstantOne => Ok(Self::constant_one()),
            WeightKind::ExpDecay => Ok(Self::exp_decay()),
            WeightKind::Custom => Err(Error::Unsupported(
                "custom weights cannot be declared in configuration".into(),
            )),
        }
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.kind {
            WeightKind::ConstantOne => 1.0,
            WeightKind::ExpDecay => (-t).exp(),
            WeightKind::Custom => (self.custom.as_ref().expect("custom weight"))(t),
        }
    }

    /// `m(r,ρ)`, in closed form for the built-in weights.
    pub fn mass(&self, r: f64) -> f64 {
        match self.kind {
            WeightKind::ConstantOne => 2.0 * r,
            WeightKind::ExpDecay => r.exp() - (-r).exp(),
            WeightKind::Custom => integrate_adaptive(|t| self.eval(t), -r, r, 1e-12 * (1.0 + r)),
        }
    }

    /// Positivity on `grid` and strict growth of `m` along `r_grid` (each
    /// step must add at least 0.1% of the previous mass).
    pub fn validate(&self, grid: &[f64], r_grid: &[f64]) -> Result<()> {
        if let Some(&t) = grid.iter().find(|&&t| !(self.eval(t) > 0.0)) {
            return Err(Error::InvalidArgument(format!("weight not positive at t = {t}")));
        }
        for w in r_grid.windows(2) {
            let (a, b) = (self.mass(w[0]), self.mass(w[1]));
            if !(b > a * 1.001) {
                return Err(Error::InvalidArgument(format!(
                    "m(r) plateaus between r = {} ({a:e}) and r = {} ({b:e})",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Nonnegative quadrature weights `W_i·ρ(t_i)` on the samples for `[-r, r]`,
/// from the trapezoid rule on the samples plus linearly interpolated endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedQuadrature {
    pub r: f64,
    first: usize,
    weights: Vec<f64>,
    total: f64,
}

fn coverage(times: &[f64], r: f64) -> Result<()> {
    let slack = 1e-9 * (1.0 + r);
    if times.len() < 2 || times[0] > -r + slack || *times.last().expect("nonempty") < r - slack {
        return Err(Error::CoverageGap { lo: -r, hi: r });
    }
    Ok(())
}

impl WeightedQuadrature {
    pub fn new(times: &[f64], rho: &WeightFunction, r: f64) -> Result<Self> {
        if !(r > 0.0) {
            return Err(Error::InvalidArgument(format!("radius {r}")));
        }
        coverage(times, r)?;
        let slack = 1e-9 * (1.0 + r);
        // nodes: -r, interior samples, r; each node as a mix of two samples
        let lo_idx = times.partition_point(|&t| t < -r - slack).min(times.len() - 1);
        let hi_idx = times.partition_point(|&t| t <= r + slack).max(1) - 1;
        let mut nodes: Vec<(f64, usize, usize, f64)> = Vec::new();
        let mix = |x: f64| -> (usize, usize, f64) {
            let j = times.partition_point(|&t| t < x).clamp(1, times.len() - 1);
            let (a, b) = (times[j - 1], times[j]);
            let theta = ((x - a) / (b - a)).clamp(0.0, 1.0);
            (j - 1, j, theta)
        };
        let push_end = |nodes: &mut Vec<(f64, usize, usize, f64)>, x: f64| {
            let (a, b, th) = mix(x);
            nodes.push((x, a, b, th));
        };
        push_end(&mut nodes, -r);
        for (i, &t) in times.iter().enumerate() {
            if t > -r + slack && t < r - slack {
                nodes.push((t, i, i, 0.0));
            }
        }
        push_end(&mut nodes, r);
        let first = lo_idx.saturating_sub(1);
        let last = (hi_idx + 1).min(times.len() - 1);
        let mut weights = vec![0.0; last - first + 1];
        for k in 0..nodes.len() {
            let left = if k > 0 { nodes[k].0 - nodes[k - 1].0 } else { 0.0 };
            let right = if k + 1 < nodes.len() { nodes[k + 1].0 - nodes[k].0 } else { 0.0 };
            let (t, a, b, th) = nodes[k];
            let w = 0.5 * (left + right) * rho.eval(t);
            weights[a - first] += (1.0 - th) * w;
            weights[b - first] += th * w;
        }
        let total = weights.iter().sum();
        Ok(Self {
            r,
            first,
            weights,
            total,
        })
    }

    /// Discrete `m(r,ρ)`.
    pub fn mass(&self) -> f64 {
        self.total
    }

    /// `Σ W_i v_i / Σ W_i`.
    pub fn average(&self, values: &[f64]) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(&values[self.first..])
            .map(|(w, v)| w * v)
            .sum();
        s / self.total
    }

    /// Weighted share of samples with `value >= eps`.
    pub fn fraction(&self, values: &[f64], eps: f64) -> f64 {
        let s: f64 = self
            .weights
            .iter()
            .zip(&values[self.first..])
            .filter(|(_, v)| **v >= eps)
            .map(|(w, _)| w)
            .sum();
        (s / self.total).clamp(0.0, 1.0)
    }
}

/// Sampled `t ↦ Ê‖Y(t)‖²` with optional per-stamp standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredNormSamples {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
}

impl SquaredNormSamples {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidArgument("times and values differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NonIncreasingGrid(0));
        }
        Ok(Self {
            times,
            values,
            std_errors: None,
        })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(lo: f64, hi: f64, n: usize, f: F) -> Self {
        let times: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
        let values = times.iter().map(|&t| f(t)).collect();
        Self {
            times,
            values,
            std_errors: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedMean {
    pub value: f64,
    /// Propagated from per-stamp standard errors (assumed independent);
    /// zero when none are attached.
    pub std_error: f64,
}

/// `(1/m(r,ρ)) ∫_{-r}^{r} Ê‖Y(t)‖² ρ(t) dt`.
pub fn weighted_average(samples: &SquaredNormSamples, rho: &WeightFunction, r: f64) -> Result<WeightedMean> {
    let quad = WeightedQuadrature::new(&samples.times, rho, r)?;
    let value = quad.average(&samples.values);
    let std_error = samples.std_errors.as_ref().map_or(0.0, |se| {
        let sq: Vec<f64> = se.iter().map(|s| s * s).collect();
        let var: f64 = quad
            .weights
            .iter()
            .zip(&sq[quad.first..])
            .map(|(w, v)| w * w * v)
            .sum();
        var.sqrt() / quad.total
    });
    Ok(WeightedMean { value, std_error })
}

/// ρ-measure of `{t ∈ [-r,r] : Ê‖Y(t)‖² >= ε}` over `m(r,ρ)`.
pub fn levelset_fraction(samples: &SquaredNormSamples, rho: &WeightFunction, r: f64, eps: f64) -> Result<f64> {
    Ok(WeightedQuadrature::new(&samples.times, rho, r)?.fraction(&samples.values, eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSetRow {
    pub r: f64,
    pub eps: f64,
    pub average: f64,
    pub fraction: f64,
}

/// Checks `avg >= ε·frac` and `avg <= M·frac + ε` on every `(r, ε)`.
pub fn levelset_crosscheck(
    samples: &SquaredNormSamples,
    m_bound: f64,
    rho: &WeightFunction,
    r_grid: &[f64],
    eps_grid: &[f64],
) -> Result<Vec<LevelSetRow>> {
    let sup = samples.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if sup > m_bound || samples.values.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "samples must lie in [0, {m_bound}], sup is {sup}"
        )));
    }
    let mut rows = Vec::new();
    for &r in r_grid {
        let quad = WeightedQuadrature::new(&samples.times, rho, r)?;
        let average = quad.average(&samples.values);
        for &eps in eps_grid {
            let fraction = quad.fraction(&samples.values, eps);
            let lower = eps * fraction;
            let upper = m_bound * fraction + eps;
            let slack = 1e-12 * (average.abs() + upper.abs());
            if average < lower - slack {
                return Err(Error::LevelSetViolation {
                    which: 'a',
                    r,
                    eps,
                    detail: format!("average {average:e} < eps·fraction {lower:e}"),
                });
            }
            if average > upper + slack {
                return Err(Error::LevelSetViolation {
                    which: 'b',
                    r,
                    eps,
                    detail: format!("average {average:e} > M·fraction + eps {upper:e}"),
                });
            }
            rows.push(LevelSetRow {
                r,
                eps,
                average,
                fraction,
            });
        }
    }
    Ok(rows)
}

fn interpolate(times: &[f64], values: &[f64], x: f64) -> f64 {
    let j = times.partition_point(|&t| t < x).clamp(1, times.len() - 1);
    let (a, b) = (times[j - 1], times[j]);
    let th = ((x - a) / (b - a)).clamp(0.0, 1.0);
    (1.0 - th) * values[j - 1] + th * values[j]
}

/// For each shift `s`, `sup_{t ∈ [lo, hi]} |E(t+s) − Ẽ(t)|` where `Ẽ` is the
/// candidate limit (the unshifted samples by default). Diagnostic only.
pub fn shift_compare(
    samples: &SquaredNormSamples,
    candidate: Option<&SquaredNormSamples>,
    window: (f64, f64),
    shifts: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let target = candidate.unwrap_or(samples);
    let (lo, hi) = window;
    let (t0, t1) = (samples.times[0], *samples.times.last().expect("nonempty"));
    let (c0, c1) = (target.times[0], *target.times.last().expect("nonempty"));
    if lo < c0 || hi > c1 {
        return Err(Error::CoverageGap { lo, hi });
    }
    let mut out = Vec::with_capacity(shifts.len());
    for &s in shifts {
        if lo + s < t0 - 1e-12 || hi + s > t1 + 1e-12 {
            return Err(Error::CoverageGap { lo: lo + s, hi: hi + s });
        }
        let sup = target
            .times
            .iter()
            .zip(&target.values)
            .filter(|(t, _)| **t >= lo && **t <= hi)
            .map(|(&t, &v)| (interpolate(&samples.times, &samples.values, t + s) - v).abs())
            .fold(0.0, f64::max);
        out.push((s, sup));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decaying,
    Flat,
    Growing,
}

/// Ratio each successive average must stay under to count as decaying.
pub const DECAY_FACTOR: f64 = 0.7;

/// Default doubling radius grid.
pub const R_GRID: [f64; 5] = [5.0, 10.0, 20.0, 40.0, 80.0];

/// Trend over a doubling radius grid, judged on radii from 10 on.
pub fn trend_verdict(r_grid: &[f64], averages: &[f64]) -> Trend {
    let pairs: Vec<(f64, f64)> = r_grid
        .iter()
        .zip(averages)
        .filter(|(r, _)| **r >= 10.0)
        .map(|(_, a)| *a)
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| (w[0], w[1]))
        .collect();
    if pairs.is_empty() {
        return Trend::Flat;
    }
    if pairs.iter().all(|(a, b)| *b <= DECAY_FACTOR * a) {
        Trend::Decaying
    } else if pairs.iter().all(|(a, b)| *b * DECAY_FACTOR >= *a && *b > *a) {
        Trend::Growing
    } else {
        Trend::Flat
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErgodicReport {
    pub weight: WeightKind,
    pub r_grid: Vec<f64>,
    pub averages: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// `levelset_fractions[i][j]` at `r_grid[i]`, `eps_grid[j]`.
    pub levelset_fractions: Vec<Vec<f64>>,
    pub verdict_trend: Trend,
}

impl ErgodicReport {
    /// Builds the report from per-radius averages (with standard errors)
    /// and the mean curve for the level sets.
    pub fn build(
        samples: &SquaredNormSamples,
        rho: &WeightFunction,
        r_grid: &[f64],
        eps_grid: &[f64],
        averages: Vec<f64>,
        std_errors: Vec<f64>,
    ) -> Result<Self> {
        let mut fractions = Vec::with_capacity(r_grid.len());
        for &r in r_grid {
            let quad = WeightedQuadrature::new(&samples.times, rho, r)?;
            fractions.push(eps_grid.iter().map(|&e| quad.fraction(&samples.values, e)).collect());
        }
        Ok(Self {
            weight: rho.kind(),
            verdict_trend: trend_verdict(r_grid, &averages),
            r_grid: r_grid.to_vec(),
            averages,
            std_errors,
            eps_grid: eps_grid.to_vec(),
            levelset_fractions: fractions,
        })
    }

    /// Report computed directly from the mean curve.
    pub fn from_samples(
        samples: &SquaredNormSamples,
        rho: &WeightFunction,
        r_grid: &[f64],
        eps_grid: &[f64],
    ) -> Result<Self> {
        let mut averages = Vec::new();
        let mut errs = Vec::new();
        for &r in r_grid {
            let m = weighted_average(samples, rho, r)?;
            averages.push(m.value);
            errs.push(m.std_error);
        }
        Self::build(samples, rho, r_grid, eps_grid, averages, errs)
    }

    /// Columns `r, average, stderr, frac_eps=...`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        write!(out, "r,average,stderr")?;
        for e in &self.eps_grid {
            write!(out, ",frac_eps={e:e}")?;
        }
        writeln!(out)?;
        for (i, r) in self.r_grid.iter().enumerate() {
            write!(out, "{r},{:e},{:e}", self.averages[i], self.std_errors[i])?;
            for f in &self.levelset_fractions[i] {
                write!(out, ",{f:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
