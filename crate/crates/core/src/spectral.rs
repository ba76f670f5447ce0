//! Galerkin representation of `L²[0,1]` in the Dirichlet sine basis
//! `e_n(r) = √2 sin(nπr)`.

use std::f64::consts::{PI, SQRT_2};
use std::ops::{Add, AddAssign, Index, IndexMut, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Square-integrable field stored as coefficients against `e_1, e_2, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpectralField {
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidArgument(
                "a spectral field needs at least one mode".into(),
            ));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_modes: usize) -> Self {
        Self {
            coeffs: vec![0.0; n_modes.max(1)],
        }
    }

    /// Basis vector `e_mode` (1-based).
    pub fn unit(n_modes: usize, mode: usize) -> Self {
        let mut f = Self::zeros(n_modes);
        if (1..=f.coeffs.len()).contains(&mode) {
            f.coeffs[mode - 1] = 1.0;
        }
        f
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Squared `L²` norm; Parseval in the orthonormal basis.
    pub fn norm_sq(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    /// `L²` norm, rescaled when the squared sum under- or overflows.
    pub fn norm(&self) -> f64 {
        let sq = self.norm_sq();
        if sq.is_normal() && sq.is_finite() {
            return sq.sqrt();
        }
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if scale == 0.0 || !scale.is_finite() {
            return scale;
        }
        scale * self.coeffs.iter().map(|c| (c / scale).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SpectralField) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn scaled(&self, k: f64) -> SpectralField {
        SpectralField {
            coeffs: self.coeffs.iter().map(|c| k * c).collect(),
        }
    }

    /// `self += k * other` over the common modes.
    pub fn axpy(&mut self, k: f64, other: &SpectralField) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += k * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }

    pub fn distance_sq(&self, other: &SpectralField) -> f64 {
        let n = self.coeffs.len().max(other.coeffs.len());
        (0..n)
            .map(|i| {
                let a = self.coeffs.get(i).copied().unwrap_or(0.0);
                let b = other.coeffs.get(i).copied().unwrap_or(0.0);
                (a - b) * (a - b)
            })
            .sum()
    }
}

impl Index<usize> for SpectralField {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.coeffs[i]
    }
}

impl IndexMut<usize> for SpectralField {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.coeffs[i]
    }
}

impl AddAssign<&SpectralField> for SpectralField {
    fn add_assign(&mut self, rhs: &SpectralField) {
        self.axpy(1.0, rhs);
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

/// Evaluates `Σ coeffs[n]·√2·sin(nπr)`; exactly zero on the boundary.
pub fn eval_field(u: &SpectralField, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) || r.is_nan() {
        return Err(Error::OutOfDomain(r));
    }
    if r == 0.0 || r == 1.0 {
        return Ok(0.0);
    }
    Ok(u
        .coeffs
        .iter()
        .enumerate()
        .map(|(n, c)| c * SQRT_2 * ((n + 1) as f64 * PI * r).sin())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub n_modes: usize,
    pub quadrature_points: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            n_modes: 32,
            quadrature_points: 128,
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::Config("n_modes must be positive".into()));
        }
        if self.quadrature_points < 2 * self.n_modes {
            return Err(Error::Config(format!(
                "quadrature_points = {} is below the anti-aliasing floor 2·n_modes = {}",
                self.quadrature_points,
                2 * self.n_modes
            )));
        }
        Ok(())
    }
}

/// Truncated sine basis with its collocation grid `r_j = j/Q`, `j = 1..Q-1`.
///
/// Projection uses the trapezoid rule on that grid, which is the discrete
/// sine transform: it inverts [`Basis::to_grid`] exactly for every mode
/// below `Q`.
#[derive(Debug, Clone)]
pub struct Basis {
    spec: BasisSpec,
    points: Arc<[f64]>,
    // row j holds e_1(r_j), ..., e_N(r_j)
    table: Arc<[f64]>,
    ones: SpectralField,
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        spec.validate()?;
        let q = spec.quadrature_points;
        let n = spec.n_modes;
        let points: Vec<f64> = (1..q).map(|j| j as f64 / q as f64).collect();
        let mut table = Vec::with_capacity(points.len() * n);
        for j in 1..q {
            for m in 1..=n {
                // exact integer reduction keeps the table symmetric
                let k = (m * j) % (2 * q);
                table.push(SQRT_2 * (PI * k as f64 / q as f64).sin());
            }
        }
        let mut basis = Basis {
            spec,
            points: points.into(),
            table: table.into(),
            ones: SpectralField::zeros(n),
        };
        let ones = vec![1.0; basis.points.len()];
        basis.ones = basis.from_grid(&ones);
        Ok(basis)
    }

    pub fn spec(&self) -> BasisSpec {
        self.spec
    }

    pub fn n_modes(&self) -> usize {
        self.spec.n_modes
    }

    /// Interior collocation points.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Projection of the constant function 1.
    pub fn ones(&self) -> &SpectralField {
        &self.ones
    }

    /// Values of `u` on the collocation grid; extra modes beyond the basis
    /// are ignored.
    pub fn to_grid(&self, u: &SpectralField) -> Vec<f64> {
        let mut out = vec![0.0; self.points.len()];
        self.to_grid_into(u.coeffs(), &mut out);
        out
    }

    pub fn to_grid_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.spec.n_modes;
        let m = coeffs.len().min(n);
        for (row, v) in self.table.chunks_exact(n).zip(out.iter_mut()) {
            *v = row[..m].iter().zip(&coeffs[..m]).map(|(a, b)| a * b).sum();
        }
    }

    /// Discrete projection of grid values onto the basis.
    pub fn from_grid(&self, values: &[f64]) -> SpectralField {
        let n = self.spec.n_modes;
        let mut coeffs = vec![0.0; n];
        for (row, &v) in self.table.chunks_exact(n).zip(values) {
            if v != 0.0 {
                for (c, e) in coeffs.iter_mut().zip(row) {
                    *c += v * e;
                }
            }
        }
        let w = 1.0 / self.spec.quadrature_points as f64;
        coeffs.iter_mut().for_each(|c| *c *= w);
        SpectralField { coeffs }
    }

    /// `coeffs[n] ≈ ∫₀¹ f(r) e_n(r) dr` by the composite trapezoid rule.
    pub fn project_function<F: Fn(f64) -> f64>(&self, f: F) -> SpectralField {
        let values: Vec<f64> = self.points.iter().map(|&r| f(r)).collect();
        self.from_grid(&values)
    }

    /// Pointwise (Nemytskii) application of a scalar map, pseudospectrally.
    pub fn apply_pointwise<F: Fn(f64) -> f64>(&self, u: &SpectralField, f: F) -> SpectralField {
        let values: Vec<f64> = self.to_grid(u).into_iter().map(f).collect();
        self.from_grid(&values)
    }

    /// `∫₀¹ u(r)² dr` by the same trapezoid rule.
    pub fn quadrature_norm_sq(&self, u: &SpectralField) -> f64 {
        let q = self.spec.quadrature_points as f64;
        self.to_grid(u).iter().map(|v| v * v).sum::<f64>() / q
    }
}

/// Free-function form of [`Basis::project_function`].
pub fn project_function<F: Fn(f64) -> f64>(f: F, basis: &Basis) -> SpectralField {
    basis.project_function(f)
}
