//! Nemytskii nonlinearities built from a small library of scalar forms.
//!
//! A [`PointwiseMap`] is a sum of terms `coeff·τ(t)·σ(u)` acting pointwise on
//! `u(ξ)`. Drift, diffusion and jump coefficients of the equation are all
//! maps of this kind; jump coefficients act on a mark `z` as `h(t,u)·z`.

use serde::{Deserialize, Serialize};

use crate::spectral::{Basis, SpectralField};

/// Ramp `η(t) = t` on `[0, 1]`, `1` after, `0` before.
pub fn eta(t: f64) -> f64 {
    if t < 0.0 {
        0.0
    } else if t <= 1.0 {
        t
    } else {
        1.0
    }
}

/// Almost automorphic coefficient `sin(1/(2 + cos t + cos ωt))`.
pub fn quasi_periodic(t: f64, omega: f64) -> f64 {
    (1.0 / (2.0 + t.cos() + (omega * t).cos())).sin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeFactor {
    One,
    Eta,
    QuasiPeriodic { omega: f64 },
}

impl TimeFactor {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            TimeFactor::One => 1.0,
            TimeFactor::Eta => eta(t),
            TimeFactor::QuasiPeriodic { omega } => quasi_periodic(t, omega),
        }
    }

    /// Whether the factor belongs to the ergodically null (pseudo) part.
    pub fn is_pseudo(&self) -> bool {
        matches!(self, TimeFactor::Eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFn {
    Identity,
    One,
    Sin,
    Cos,
}

impl StateFn {
    pub fn eval(&self, u: f64) -> f64 {
        match self {
            StateFn::Identity => u,
            StateFn::One => 1.0,
            StateFn::Sin => u.sin(),
            StateFn::Cos => u.cos(),
        }
    }

    /// Global Lipschitz constant of the scalar map.
    pub fn lipschitz(&self) -> f64 {
        match self {
            StateFn::One => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub time: TimeFactor,
    pub state: StateFn,
}

impl Term {
    pub fn new(coeff: f64, time: TimeFactor, state: StateFn) -> Self {
        Self { coeff, time, state }
    }
}

/// `u ↦ Σ coeff·τ(t)·σ(u)`, applied pointwise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointwiseMap {
    pub terms: Vec<Term>,
}

impl PointwiseMap {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<Term>) -> Self {
        Self { terms }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    pub fn eval(&self, t: f64, u: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| term.coeff * term.time.eval(t) * term.state.eval(u))
            .sum()
    }

    /// The map at a fixed time; same arithmetic as [`PointwiseMap::eval`].
    pub fn at(&self, t: f64) -> FrozenMap {
        FrozenMap {
            terms: self
                .terms
                .iter()
                .map(|term| (term.coeff * term.time.eval(t), term.state))
                .collect(),
        }
    }

    /// Value at time `t` when the map does not depend on the state.
    pub fn state_free_value(&self, t: f64) -> Option<f64> {
        self.terms
            .iter()
            .all(|term| term.state == StateFn::One || term.coeff == 0.0)
            .then(|| self.eval(t, 0.0))
    }

    /// Bound `k·Σ (coeff·sup|τ|·Lip σ)²` on the squared pointwise Lipschitz
    /// constant, `k` the number of state-dependent terms (Cauchy-Schwarz).
    pub fn lipschitz_sq_bound(&self) -> f64 {
        let parts: Vec<f64> = self
            .terms
            .iter()
            .map(|t| t.coeff.abs() * t.state.lipschitz())
            .filter(|&x| x > 0.0)
            .collect();
        parts.len() as f64 * parts.iter().map(|x| x * x).sum::<f64>()
    }

    /// Splits into the automorphic part (all but η-gated terms) and the
    /// η-gated pseudo part.
    pub fn split(&self) -> (PointwiseMap, PointwiseMap) {
        let (pseudo, auto): (Vec<Term>, Vec<Term>) =
            self.terms.iter().partition(|t| t.time.is_pseudo());
        (PointwiseMap::new(auto), PointwiseMap::new(pseudo))
    }

    /// Grid values of the map composed with `u`.
    pub fn on_grid(&self, t: f64, u_grid: &[f64], out: &mut [f64]) {
        let f = self.at(t);
        for (o, &u) in out.iter_mut().zip(u_grid) {
            *o = f.eval(u);
        }
    }

    /// Galerkin projection of `ξ ↦ map(t, u(ξ))`.
    pub fn apply(&self, basis: &Basis, t: f64, u: &SpectralField) -> SpectralField {
        if let Some(c) = self.state_free_value(t) {
            return basis.ones().scaled(c);
        }
        let f = self.at(t);
        basis.apply_pointwise(u, |x| f.eval(x))
    }

    /// Galerkin projection of `ξ ↦ map(t, u(ξ))·z(ξ)`.
    pub fn multiply(
        &self,
        basis: &Basis,
        t: f64,
        u: &SpectralField,
        z: &SpectralField,
    ) -> SpectralField {
        if let Some(c) = self.state_free_value(t) {
            let mut out = SpectralField::zeros(basis.n_modes());
            out.axpy(c, z);
            return out;
        }
        let f = self.at(t);
        let ug = basis.to_grid(u);
        let zg = basis.to_grid(z);
        let values: Vec<f64> = ug
            .iter()
            .zip(&zg)
            .map(|(&x, &w)| f.eval(x) * w)
            .collect();
        basis.from_grid(&values)
    }
}

/// `u ↦ Σ wᵢ·σᵢ(u)`: a [`PointwiseMap`] with its time factors evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenMap {
    terms: Vec<(f64, StateFn)>,
}

impl FrozenMap {
    pub fn eval(&self, u: f64) -> f64 {
        self.terms.iter().map(|(w, s)| w * s.eval(u)).sum()
    }
}

/// Drift `f`, diffusion multiplier `g`, and jump coefficients `h` for the
/// small and large regimes, plus the declared Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinearities {
    #[serde(default)]
    pub drift: PointwiseMap,
    #[serde(default)]
    pub diffusion: PointwiseMap,
    #[serde(default)]
    pub small_jump: PointwiseMap,
    #[serde(default)]
    pub large_jump: PointwiseMap,
    pub lipschitz: f64,
}

impl Nonlinearities {
    pub fn zero() -> Self {
        Self {
            drift: PointwiseMap::zero(),
            diffusion: PointwiseMap::zero(),
            small_jump: PointwiseMap::zero(),
            large_jump: PointwiseMap::zero(),
            lipschitz: 0.0,
        }
    }

    /// Additive noise: `g ≡ 1`, `h ≡ 1`, no drift.
    pub fn additive() -> Self {
        let one = PointwiseMap::new(vec![Term::new(1.0, TimeFactor::One, StateFn::One)]);
        Self {
            drift: PointwiseMap::zero(),
            diffusion: one.clone(),
            small_jump: one.clone(),
            large_jump: one,
            lipschitz: 0.0,
        }
    }

    pub fn maps(&self) -> [&PointwiseMap; 4] {
        [&self.drift, &self.diffusion, &self.small_jump, &self.large_jump]
    }

    /// Whether every coefficient is independent of the state.
    pub fn is_state_free(&self) -> bool {
        self.maps()
            .iter()
            .all(|m| m.terms.iter().all(|t| t.state == StateFn::One || t.coeff == 0.0))
    }

    /// Largest pointwise squared Lipschitz bound among the four maps.
    pub fn pointwise_lipschitz_sq(&self) -> f64 {
        self.maps()
            .iter()
            .map(|m| m.lipschitz_sq_bound())
            .fold(0.0, f64::max)
    }

    /// `(automorphic, pseudo)` parts; both inherit the declared constant.
    pub fn split(&self) -> (Nonlinearities, Nonlinearities) {
        let (d0, d1) = self.drift.split();
        let (g0, g1) = self.diffusion.split();
        let (s0, s1) = self.small_jump.split();
        let (l0, l1) = self.large_jump.split();
        (
            Nonlinearities {
                drift: d0,
                diffusion: g0,
                small_jump: s0,
                large_jump: l0,
                lipschitz: self.lipschitz,
            },
            Nonlinearities {
                drift: d1,
                diffusion: g1,
                small_jump: s1,
                large_jump: l1,
                lipschitz: self.lipschitz,
            },
        )
    }
}
