//! Closed-form existence and stability conditions, plus an empirical check of
//! the declared Lipschitz constant.
//!
//! With `x = (1+2c)/δ² + 2/δ`:
//! existence needs `x < 1/(4M²L)`, global stability needs `5M²L·x < 1`, and the
//! local stability radius is
//! `r₁ = min{r, (r/(√5·M))·√(1 − 5M²L_r·x)}`.
//!
//! The local stability result is stated under the global hypotheses but its
//! inequality uses the ball constant `L_r`; [`check_local_stability`] follows
//! the inequality and reads `cs.lipschitz` as `L_r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mild::Model;
use crate::noise::Regime;
use crate::nonlinear::{Nonlinearities, PointwiseMap};
use crate::spectral::SpectralField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantSet {
    #[serde(rename = "M")]
    pub m: f64,
    pub delta: f64,
    /// Large-jump rate `ν({|x| >= 1})`.
    pub c: f64,
    /// Global `L`, or the ball constant `L_r` when `ball_r` is set.
    #[serde(rename = "L")]
    pub lipschitz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ball_r: Option<f64>,
}

impl ConstantSet {
    pub fn new(m: f64, delta: f64, c: f64, lipschitz: f64) -> Self {
        Self {
            m,
            delta,
            c,
            lipschitz,
            ball_r: None,
        }
    }

    /// `(1+2c)/δ² + 2/δ`
    pub fn x(&self) -> f64 {
        (1.0 + 2.0 * self.c) / (self.delta * self.delta) + 2.0 / self.delta
    }

    fn validate(&self, allow_zero_l: bool) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::NonPositiveConstant { name, value: v })
            }
        };
        positive("M", self.m)?;
        positive("delta", self.delta)?;
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::NonPositiveConstant {
                name: "c",
                value: self.c,
            });
        }
        if allow_zero_l {
            if !(self.lipschitz >= 0.0) || !self.lipschitz.is_finite() {
                return Err(Error::NonPositiveConstant {
                    name: "L",
                    value: self.lipschitz,
                });
            }
        } else {
            positive("L", self.lipschitz)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionName {
    Existence,
    LocalExistence,
    GlobalStability,
    LocalStability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: ConditionName,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// `(rhs − lhs)/rhs`
    pub margin: f64,
    /// Largest `L` for which the inequality holds at these `M, δ, c`.
    pub l_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r1_bound: Option<f64>,
}

fn report(name: ConditionName, lhs: f64, rhs: f64, l_threshold: f64, r1_bound: Option<f64>) -> ConditionReport {
    ConditionReport {
        name,
        lhs,
        rhs,
        pass: lhs < rhs,
        margin: (rhs - lhs) / rhs,
        l_threshold,
        r1_bound,
    }
}

/// Existence: `x < 1/(4M²L)`. With `local = true` the same inequality is
/// read with the ball constant `L_r`.
pub fn check_existence_with(cs: &ConstantSet, local: bool) -> Result<ConditionReport> {
    cs.validate(false)?;
    let x = cs.x();
    let name = if local {
        ConditionName::LocalExistence
    } else {
        ConditionName::Existence
    };
    Ok(report(
        name,
        x,
        1.0 / (4.0 * cs.m * cs.m * cs.lipschitz),
        1.0 / (4.0 * cs.m * cs.m * x),
        None,
    ))
}

pub fn check_existence(cs: &ConstantSet) -> Result<ConditionReport> {
    check_existence_with(cs, cs.ball_r.is_some())
}

/// Global stability: `5M²L(1+2c)/δ² + 10M²L/δ < 1`.
pub fn check_global_stability(cs: &ConstantSet) -> Result<ConditionReport> {
    cs.validate(true)?;
    let k = 5.0 * cs.m * cs.m * cs.x();
    Ok(report(ConditionName::GlobalStability, k * cs.lipschitz, 1.0, 1.0 / k, None))
}

/// Local stability on the ball of radius `ball_r` with constant `L_r`.
/// Fails without a bound when the square root would be imaginary.
pub fn check_local_stability(cs: &ConstantSet) -> Result<ConditionReport> {
    cs.validate(true)?;
    let r = cs.ball_r.ok_or_else(|| {
        Error::InvalidArgument("local stability needs a ball radius".into())
    })?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::NonPositiveConstant { name: "r", value: r });
    }
    let k = 5.0 * cs.m * cs.m * cs.x();
    let lhs = k * cs.lipschitz;
    let disc = 1.0 - lhs;
    let r1 = (disc > 0.0).then(|| r.min(r / (5f64.sqrt() * cs.m) * disc.sqrt()));
    Ok(report(ConditionName::LocalStability, lhs, 1.0, 1.0 / k, r1))
}

/// `max{2a₁²+2a₂², 2a₃²+2a₄², 2a₅²+2a₆²}`.
pub fn example_lipschitz(a: [f64; 6]) -> Result<f64> {
    if let Some(&v) = a.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveConstant { name: "a_i", value: v });
    }
    let pair = |i: usize| 2.0 * a[i] * a[i] + 2.0 * a[i + 1] * a[i + 1];
    Ok(pair(0).max(pair(2)).max(pair(4)))
}

/// The six Lipschitz inequality forms, in hypothesis order.
pub const LIPSCHITZ_FORMS: [&str; 6] = [
    "drift f",
    "diffusion g Q^1/2 (Hilbert-Schmidt)",
    "small-jump F against nu on |x|<1",
    "automorphic part of small-jump F",
    "large-jump G against nu on |x|>=1",
    "automorphic part of large-jump G",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzProbe {
    /// Largest observed ratio per form.
    pub per_form: [f64; 6],
    pub max_ratio: f64,
    pub pairs: usize,
}

fn diff_grid(map: &PointwiseMap, t: f64, ua: &[f64], ub: &[f64], out: &mut [f64]) {
    let f = map.at(t);
    for ((o, &a), &b) in out.iter_mut().zip(ua).zip(ub) {
        *o = f.eval(a) - f.eval(b);
    }
}

/// `∫ ‖(h(Y) − h(Z))·e_k‖² ν(dx)` for mark-linear coefficients `h·x e_k`, as
/// the squared mark moment times the grid norm.
fn jump_form(
    model: &Model,
    map: &PointwiseMap,
    regime: Regime,
    t: f64,
    ua: &[f64],
    ub: &[f64],
    scratch: &mut [f64],
    dir_grid: &[f64],
) -> f64 {
    let m2 = model.nu.second_moment(regime);
    if m2 == 0.0 || map.is_zero() {
        return 0.0;
    }
    diff_grid(map, t, ua, ub, scratch);
    let q = model.basis.spec().quadrature_points as f64;
    let v: f64 = scratch.iter().zip(dir_grid).map(|(d, e)| (d * e).powi(2)).sum::<f64>() / q;
    m2 * v
}

/// Samples random pairs `(Y, Z)` and times and reports the largest ratio of
/// each integral form to `‖Y − Z‖²`. Norms use the collocation quadrature.
///
/// Fails with [`Error::LipschitzExceeded`] when a ratio exceeds the declared
/// constant by more than 5%.
pub fn empirical_lipschitz(model: &Model, nl: &Nonlinearities, pairs: usize, seed: u64) -> Result<LipschitzProbe> {
    if pairs < 1000 {
        return Err(Error::InvalidArgument(format!("need at least 10³ pairs, got {pairs}")));
    }
    let basis = &model.basis;
    let n = basis.n_modes();
    let q = basis.points().len();
    let (auto, _) = nl.split();
    let dir_small = basis.to_grid(&SpectralField::unit(n, model.nu.direction(Regime::Small)));
    let dir_large = basis.to_grid(&SpectralField::unit(n, model.nu.direction(Regime::Large)));
    let wiener_grids: Vec<(f64, Vec<f64>)> = model
        .wiener
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(k, &qk)| (qk, basis.to_grid(&SpectralField::unit(n, k + 1))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_form = [0.0f64; 6];
    let mut scratch = vec![0.0; q];
    let mut worst: Option<(usize, usize, f64)> = None;
    let qn = basis.spec().quadrature_points as f64;
    for pair in 0..pairs {
        // fields with decaying random spectra over a range of amplitudes
        let scale = 10f64.powf(rng.gen_range(-2.0..1.0));
        let gen = |rng: &mut ChaCha8Rng| {
            let c: Vec<f64> = (1..=n)
                .map(|k| scale * rng.gen_range(-1.0..1.0) / k as f64)
                .collect();
            SpectralField::new(c).expect("nonempty")
        };
        let y = gen(&mut rng);
        let z = gen(&mut rng);
        let t = rng.gen_range(-20.0..20.0);
        let ua = basis.to_grid(&y);
        let ub = basis.to_grid(&z);
        let dist: f64 = ua.iter().zip(&ub).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / qn;
        if dist == 0.0 {
            continue;
        }
        diff_grid(&nl.drift, t, &ua, &ub, &mut scratch);
        let f = scratch.iter().map(|d| d * d).sum::<f64>() / qn;
        let mut g = 0.0;
        if !nl.diffusion.is_zero() {
            diff_grid(&nl.diffusion, t, &ua, &ub, &mut scratch);
            for (qk, ek) in &wiener_grids {
                g += qk * scratch.iter().zip(ek).map(|(d, e)| (d * e).powi(2)).sum::<f64>() / qn;
            }
        }
        let forms = [
            f,
            g,
            jump_form(model, &nl.small_jump, Regime::Small, t, &ua, &ub, &mut scratch, &dir_small),
            jump_form(model, &auto.small_jump, Regime::Small, t, &ua, &ub, &mut scratch, &dir_small),
            jump_form(model, &nl.large_jump, Regime::Large, t, &ua, &ub, &mut scratch, &dir_large),
            jump_form(model, &auto.large_jump, Regime::Large, t, &ua, &ub, &mut scratch, &dir_large),
        ];
        for (i, v) in forms.iter().enumerate() {
            let ratio = v / dist;
            if ratio > per_form[i] {
                per_form[i] = ratio;
            }
            if ratio > nl.lipschitz * 1.05 && worst.is_none_or(|w| ratio > w.2) {
                worst = Some((pair, i, ratio));
            }
        }
    }
    if let Some((pair, form, observed)) = worst {
        return Err(Error::LipschitzExceeded {
            declared: nl.lipschitz,
            observed,
            inequality: LIPSCHITZ_FORMS[form],
            pair,
        });
    }
    Ok(LipschitzProbe {
        max_ratio: per_form.iter().copied().fold(0.0, f64::max),
        per_form,
        pairs,
    })
}
