//! Diagonal evolution families `U(t,s)` on the sine basis.
//!
//! Every supported family has the form
//! `U(t,s)e_n = exp(P(s,t))·exp(-λ_n (t-s))·e_n`, where `P` is a scalar
//! potential integral (zero unless the family carries the almost automorphic
//! potential).

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate_adaptive, linear_fit};
use crate::spectral::SpectralField;

/// Integrand `θ ↦ sin(1/(2 + sin θ + sin πθ))` of the potential.
pub fn potential(theta: f64) -> f64 {
    (1.0 / (2.0 + theta.sin() + (PI * theta).sin())).sin()
}

const CACHE_STEP: f64 = 1e-3;
const CELL_TOL: f64 = 1e-13;

/// Node values of `Φ(θ) = ∫_{lo}^{θ} potential` on a `10⁻³` grid.
///
/// Off-node values add a short adaptive quadrature from the nearest node. The
/// denominator of the integrand gets arbitrarily close to zero, where the
/// integrand oscillates too fast for polynomial interpolation between nodes.
#[derive(Debug, Clone)]
pub struct PotentialIntegralCache {
    lo: f64,
    nodes: Vec<f64>,
}

impl PotentialIntegralCache {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "potential cache range [{lo}, {hi}]"
            )));
        }
        let cells = ((hi - lo) / CACHE_STEP).ceil() as usize;
        let mut nodes = Vec::with_capacity(cells + 1);
        let mut acc = crate::numerics::KahanSum::default();
        nodes.push(0.0);
        for i in 0..cells {
            let a = lo + i as f64 * CACHE_STEP;
            acc.add(integrate_adaptive(potential, a, a + CACHE_STEP, CELL_TOL));
            nodes.push(acc.value());
        }
        Ok(Self { lo, nodes })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.node_time(self.nodes.len() - 1))
    }

    fn node_time(&self, i: usize) -> f64 {
        self.lo + i as f64 * CACHE_STEP
    }

    fn contains(&self, x: f64) -> bool {
        let (a, b) = self.range();
        x >= a && x <= b
    }

    fn antiderivative(&self, x: f64) -> f64 {
        let i = (((x - self.lo) / CACHE_STEP).round() as usize).min(self.nodes.len() - 1);
        self.nodes[i] + integrate_adaptive(potential, self.node_time(i), x, CELL_TOL)
    }

    /// `∫_s^t potential(θ) dθ`.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        if s == t {
            return 0.0;
        }
        if self.contains(s) && self.contains(t) {
            self.antiderivative(t) - self.antiderivative(s)
        } else {
            integrate_adaptive(potential, s, t, 1e-11)
        }
    }
}

/// Which linear operator generates the family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    /// `λ_n = n²π²`.
    HeatSemigroup,
    /// Heat semigroup times `exp(∫_s^t potential)`.
    HeatWithAlmostAutomorphicPotential,
    /// Autonomous diagonal family with the given per-mode rates.
    Custom { rates: Vec<f64> },
}

/// Declarative family description as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyConfig {
    #[serde(flatten)]
    pub kind: FamilyKind,
    #[serde(rename = "M")]
    pub m: f64,
    pub delta: f64,
}

impl FamilyConfig {
    pub fn heat() -> Self {
        Self {
            kind: FamilyKind::HeatSemigroup,
            m: 1.0,
            delta: PI * PI,
        }
    }

    pub fn example() -> Self {
        Self {
            kind: FamilyKind::HeatWithAlmostAutomorphicPotential,
            m: 1.0,
            delta: PI * PI - 1.0,
        }
    }

    /// Custom family with `M = 1` and `δ = min rate`.
    pub fn custom(rates: Vec<f64>) -> Self {
        let delta = rates.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            kind: FamilyKind::Custom { rates },
            m: 1.0,
            delta,
        }
    }
}

/// A constructed evolution family with dissipation constants `(M, δ)`.
#[derive(Debug, Clone)]
pub struct EvolutionFamily {
    config: FamilyConfig,
    shift: f64,
    cache: Option<Arc<PotentialIntegralCache>>,
}

impl EvolutionFamily {
    /// Builds a family; potential families cache their integral over
    /// `cache_range` (queries outside fall back to direct quadrature).
    pub fn new(config: FamilyConfig, cache_range: (f64, f64)) -> Result<Self> {
        if !(config.m >= 1.0) || !config.m.is_finite() {
            return Err(Error::NonPositiveConstant {
                name: "M (must be >= 1)",
                value: config.m,
            });
        }
        if !(config.delta > 0.0) || !config.delta.is_finite() {
            return Err(Error::NonPositiveConstant {
                name: "delta",
                value: config.delta,
            });
        }
        let cache = match &config.kind {
            FamilyKind::HeatWithAlmostAutomorphicPotential => Some(Arc::new(
                PotentialIntegralCache::new(cache_range.0, cache_range.1)?,
            )),
            FamilyKind::Custom { rates } => {
                if rates.is_empty() || rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
                    return Err(Error::InvalidArgument(format!(
                        "custom rates must be finite and nonnegative: {rates:?}"
                    )));
                }
                None
            }
            FamilyKind::HeatSemigroup => None,
        };
        Ok(Self {
            config,
            shift: 0.0,
            cache,
        })
    }

    pub fn heat() -> Self {
        Self::new(FamilyConfig::heat(), (0.0, 1.0)).expect("valid constants")
    }

    /// The almost automorphic potential family, cached on `[-10, 10]`.
    pub fn example() -> Self {
        Self::new(FamilyConfig::example(), (-10.0, 10.0)).expect("valid constants")
    }

    pub fn custom(rates: Vec<f64>) -> Result<Self> {
        Self::new(FamilyConfig::custom(rates), (0.0, 1.0))
    }

    pub fn config(&self) -> &FamilyConfig {
        &self.config
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.config.kind
    }

    pub fn m(&self) -> f64 {
        self.config.m
    }

    pub fn delta(&self) -> f64 {
        self.config.delta
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// History length after which `M·e^{-δ·T} <= tol`.
    pub fn burn_in(&self, tol: f64) -> f64 {
        (self.config.m / tol).ln().max(0.0) / self.config.delta
    }

    /// Decay rate `λ_n` of mode `n` (1-based).
    pub fn mode_rate(&self, n: usize) -> Result<f64> {
        match &self.config.kind {
            FamilyKind::HeatSemigroup | FamilyKind::HeatWithAlmostAutomorphicPotential => {
                Ok((n * n) as f64 * PI * PI)
            }
            FamilyKind::Custom { rates } => rates.get(n - 1).copied().ok_or_else(|| {
                Error::MismatchedSpecs(format!(
                    "custom family has {} rates, mode {n} requested",
                    rates.len()
                ))
            }),
        }
    }

    pub fn mode_rates(&self, n_modes: usize) -> Result<Vec<f64>> {
        (1..=n_modes).map(|n| self.mode_rate(n)).collect()
    }

    /// Scalar log-factor `P(s,t)` shared by all modes.
    pub fn log_scalar(&self, t: f64, s: f64) -> f64 {
        match &self.cache {
            Some(cache) => cache.integral(s + self.shift, t + self.shift),
            None => 0.0,
        }
    }

    /// Per-mode multipliers of `U(t,s)`.
    pub fn factors(&self, t: f64, s: f64, n_modes: usize) -> Result<Vec<f64>> {
        if !(t >= s) {
            return Err(Error::TimeOrder { t, s });
        }
        let p = self.log_scalar(t, s);
        let dt = t - s;
        self.mode_rates(n_modes)
            .map(|rates| rates.iter().map(|l| (p - l * dt).exp()).collect())
    }

    /// `U(t,s)u`; exact identity when `t = s`.
    pub fn apply(&self, t: f64, s: f64, u: &SpectralField) -> Result<SpectralField> {
        if !(t >= s) {
            return Err(Error::TimeOrder { t, s });
        }
        if t == s {
            return Ok(u.clone());
        }
        let f = self.factors(t, s, u.n_modes())?;
        let coeffs = u.coeffs().iter().zip(&f).map(|(c, k)| c * k).collect();
        SpectralField::new(coeffs)
    }
}

/// `T(t)u` for the Dirichlet heat semigroup.
pub fn heat_semigroup_apply(t: f64, u: &SpectralField) -> Result<SpectralField> {
    if !(t >= 0.0) {
        return Err(Error::NegativeTime(t));
    }
    let coeffs = u
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, c)| c * (-(((i + 1) * (i + 1)) as f64) * PI * PI * t).exp())
        .collect();
    SpectralField::new(coeffs)
}

/// `U(t,s)u = T(t-s)·exp(∫_s^t potential)·u`.
pub fn example_family_apply(
    t: f64,
    s: f64,
    u: &SpectralField,
    cache: &PotentialIntegralCache,
) -> Result<SpectralField> {
    if !(t >= s) {
        return Err(Error::TimeOrder { t, s });
    }
    if t == s {
        return Ok(u.clone());
    }
    Ok(heat_semigroup_apply(t - s, u)?.scaled(cache.integral(s, t).exp()))
}

/// Fitted envelope `‖U(t,s)u‖/‖u‖ ≈ M̂·e^{-δ̂(t-s)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipationFit {
    pub m_hat: f64,
    pub delta_hat: f64,
    /// Largest ratio of observed norm to the declared envelope.
    pub worst_envelope_ratio: f64,
}

/// Log-linear least-squares fit of the decay of `U` over the probes, after
/// checking that every probe lies under the declared envelope (slack `10⁻¹⁰`).
/// Probes whose image underflows to zero satisfy the envelope but are left
/// out of the fit.
pub fn estimate_dissipation(
    fam: &EvolutionFamily,
    probes: &[(f64, f64, SpectralField)],
) -> Result<DissipationFit> {
    let mut gaps = Vec::new();
    let mut logs = Vec::new();
    let mut worst: f64 = 0.0;
    for (t, s, u) in probes {
        let n0 = u.norm();
        if n0 == 0.0 {
            return Err(Error::ZeroProbe);
        }
        let ratio = fam.apply(*t, *s, u)?.norm() / n0;
        let gap = t - s;
        let bound = fam.m() * (-fam.delta() * gap).exp();
        if ratio > bound + 1e-10 {
            return Err(Error::EnvelopeViolated { gap, ratio, bound });
        }
        worst = worst.max(ratio / bound);
        if gap > 0.0 && ratio > 0.0 {
            gaps.push(gap);
            logs.push(ratio.ln());
        }
    }
    let lo = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = gaps.iter().copied().fold(0.0, f64::max);
    if gaps.len() < 2 || hi < 100.0 * lo {
        return Err(Error::DegenerateProbes(format!(
            "positive gaps span [{lo}, {hi}], need two decades"
        )));
    }
    let (intercept, slope) = linear_fit(&gaps, &logs)
        .ok_or_else(|| Error::DegenerateProbes("singular fit".into()))?;
    Ok(DissipationFit {
        m_hat: intercept.exp(),
        delta_hat: -slope,
        worst_envelope_ratio: worst,
    })
}

/// `(t,s) ↦ U(t + shift, s + shift)`.
pub fn shift_family(fam: &EvolutionFamily, shift: f64) -> EvolutionFamily {
    let mut out = fam.clone();
    out.shift += shift;
    out
}

/// Largest `‖U(t+h,s+h)u − U(t,s)u‖` over the probes.
pub fn shift_sup_difference(
    fam: &EvolutionFamily,
    shift: f64,
    probes: &[(f64, f64, SpectralField)],
) -> Result<f64> {
    let shifted = shift_family(fam, shift);
    let mut sup: f64 = 0.0;
    for (t, s, u) in probes {
        let d = shifted.apply(*t, *s, u)?.distance_sq(&fam.apply(*t, *s, u)?);
        sup = sup.max(d.sqrt());
    }
    Ok(sup)
}
