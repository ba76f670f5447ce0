//! Stochastic drivers: Q-Wiener increments plus small (compensated) and
//! large (uncompensated) Poisson jump streams of a two-sided Lévy process.
//!
//! Marks are scalar amplitudes along a fixed basis direction, so a mark is the
//! field `x·e_k` and `|x|_V = |x|`. Small and large regimes may use different
//! directions. Small jumps must have finite activity; the compensator is
//! subtracted by the integrator, not here.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::integrate_adaptive;
use crate::spectral::SpectralField;

/// One component of a jump-size law on scalar amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpLaw {
    /// Point mass `mass` at amplitude `at`.
    Atom { at: f64, mass: f64 },
    /// Constant density on `[lo, hi]`.
    Uniform { lo: f64, hi: f64, density: f64 },
    /// Density `scale·x^exponent` on `[lo, hi]` with `0 <= lo`.
    Power {
        lo: f64,
        hi: f64,
        scale: f64,
        exponent: f64,
    },
}

/// Declarative description of an intensity measure ν.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub components: Vec<JumpLaw>,
    /// Basis mode carrying small marks.
    #[serde(default = "first_mode")]
    pub small_direction: usize,
    /// Basis mode carrying large marks.
    #[serde(default = "first_mode")]
    pub large_direction: usize,
}

fn first_mode() -> usize {
    1
}

impl MeasureSpec {
    pub fn empty() -> Self {
        Self {
            components: Vec::new(),
            small_direction: 1,
            large_direction: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum PieceShape {
    Atom(f64),
    Uniform { lo: f64, hi: f64 },
    Power { lo: f64, hi: f64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Piece {
    shape: PieceShape,
    mass: f64,
    scale: f64,
}

// ∫_a^b s·x^p dx, allowing b = ∞
fn power_moment(s: f64, p: f64, a: f64, b: f64) -> f64 {
    if (p + 1.0).abs() < 1e-14 {
        if a == 0.0 || b.is_infinite() {
            f64::INFINITY
        } else {
            s * (b / a).ln()
        }
    } else {
        let q = p + 1.0;
        if (a == 0.0 && q < 0.0) || (b.is_infinite() && q > 0.0) {
            return f64::INFINITY;
        }
        let hb = if b.is_infinite() { 0.0 } else { b.powf(q) };
        let ha = if a == 0.0 { 0.0 } else { a.powf(q) };
        s * (hb - ha) / q
    }
}

impl Piece {
    fn moment(&self, k: i32) -> f64 {
        match self.shape {
            PieceShape::Atom(x) => self.mass * x.powi(k),
            PieceShape::Uniform { lo, hi } => {
                let kk = (k + 1) as f64;
                self.scale * (hi.powi(k + 1) - lo.powi(k + 1)) / kk
            }
            PieceShape::Power { lo, hi, exponent } => {
                power_moment(self.scale, exponent + k as f64, lo, hi)
            }
        }
    }

    fn integrate<F: Fn(f64) -> f64>(&self, g: &F) -> f64 {
        match self.shape {
            PieceShape::Atom(x) => self.mass * g(x),
            PieceShape::Uniform { lo, hi } => {
                self.scale * integrate_adaptive(g, lo, hi, 1e-12)
            }
            PieceShape::Power { lo, hi, exponent } => {
                let s = self.scale;
                if hi.is_infinite() {
                    // x = lo / u maps (0, 1] onto [lo, ∞)
                    integrate_adaptive(
                        |u: f64| {
                            if u <= 0.0 {
                                0.0
                            } else {
                                let x = lo / u;
                                s * x.powf(exponent) * g(x) * lo / (u * u)
                            }
                        },
                        0.0,
                        1.0,
                        1e-12,
                    )
                } else {
                    integrate_adaptive(|x: f64| s * x.powf(exponent) * g(x), lo, hi, 1e-12)
                }
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.shape {
            PieceShape::Atom(x) => x,
            PieceShape::Uniform { lo, hi } => lo + (hi - lo) * rng.gen::<f64>(),
            PieceShape::Power { lo, hi, exponent } => {
                let u: f64 = rng.gen();
                let q = exponent + 1.0;
                if q.abs() < 1e-14 {
                    lo * (hi / lo).powf(u)
                } else {
                    let ha = if lo == 0.0 { 0.0 } else { lo.powf(q) };
                    let hb = if hi.is_infinite() { 0.0 } else { hi.powf(q) };
                    (ha + u * (hb - ha)).powf(1.0 / q)
                }
            }
        }
    }
}

/// Intensity measure split at `|x| = 1` into finite small and large parts.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityMeasure {
    spec: MeasureSpec,
    small: Vec<Piece>,
    large: Vec<Piece>,
    /// `ν({0 < |x| < 1})`
    pub mass_small: f64,
    /// `c = ν({|x| >= 1})`
    pub mass_large: f64,
    /// `∫_{|x|<1} x ν(dx)`
    pub first_moment_small: f64,
    /// `∫_{|x|<1} x² ν(dx)`
    pub second_moment_small: f64,
    /// `∫_{|x|>=1} x ν(dx)`; may be infinite
    pub first_moment_large: f64,
    /// `∫_{|x|>=1} x² ν(dx)`; may be infinite
    pub second_moment_large: f64,
}

fn check_finite_param(name: &str, v: f64) -> Result<()> {
    if v.is_nan() {
        return Err(Error::InvalidMeasure(format!("{name} is NaN")));
    }
    Ok(())
}

fn split_component(law: &JumpLaw, small: &mut Vec<Piece>, large: &mut Vec<Piece>) -> Result<()> {
    match *law {
        JumpLaw::Atom { at, mass } => {
            check_finite_param("atom location", at)?;
            if !at.is_finite() || at == 0.0 {
                return Err(Error::InvalidMeasure(format!(
                    "atom location must be finite and nonzero, got {at}"
                )));
            }
            if !(mass >= 0.0) || !mass.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom mass {mass}")));
            }
            let piece = Piece {
                shape: PieceShape::Atom(at),
                mass,
                scale: 1.0,
            };
            if at.abs() < 1.0 {
                small.push(piece);
            } else {
                large.push(piece);
            }
        }
        JumpLaw::Uniform { lo, hi, density } => {
            check_finite_param("lo", lo)?;
            check_finite_param("hi", hi)?;
            if !(lo < hi) || !(density >= 0.0) || !density.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "uniform law needs lo < hi and finite density >= 0, got [{lo}, {hi}] @ {density}"
                )));
            }
            if density == 0.0 {
                return Ok(());
            }
            if lo.is_infinite() || hi.is_infinite() {
                return Err(Error::InfiniteLargeMass(format!(
                    "uniform density {density} on unbounded interval [{lo}, {hi}]"
                )));
            }
            let mut push = |a: f64, b: f64, into_small: bool| {
                if b > a {
                    let p = Piece {
                        shape: PieceShape::Uniform { lo: a, hi: b },
                        mass: density * (b - a),
                        scale: density,
                    };
                    if into_small {
                        small.push(p);
                    } else {
                        large.push(p);
                    }
                }
            };
            push(lo, hi.min(-1.0), false);
            push(lo.max(-1.0), hi.min(1.0), true);
            push(lo.max(1.0), hi, false);
        }
        JumpLaw::Power {
            lo,
            hi,
            scale,
            exponent,
        } => {
            check_finite_param("lo", lo)?;
            check_finite_param("hi", hi)?;
            check_finite_param("exponent", exponent)?;
            if !(lo >= 0.0) || !(lo < hi) || !(scale >= 0.0) || !scale.is_finite() {
                return Err(Error::InvalidMeasure(format!(
                    "power law needs 0 <= lo < hi and scale >= 0, got [{lo}, {hi}] scale {scale}"
                )));
            }
            if scale == 0.0 {
                return Ok(());
            }
            if lo < 1.0 {
                let b = hi.min(1.0);
                if power_moment(scale, exponent + 2.0, lo, b).is_infinite() {
                    return Err(Error::NonIntegrableSecondMoment(format!(
                        "∫ x² · {scale}·x^{exponent} diverges on ({lo}, {b})"
                    )));
                }
                let mass = power_moment(scale, exponent, lo, b);
                if mass.is_infinite() {
                    return Err(Error::InfiniteActivity(format!(
                        "∫ {scale}·x^{exponent} diverges on ({lo}, {b})"
                    )));
                }
                small.push(Piece {
                    shape: PieceShape::Power {
                        lo,
                        hi: b,
                        exponent,
                    },
                    mass,
                    scale,
                });
            }
            if hi > 1.0 {
                let a = lo.max(1.0);
                let mass = power_moment(scale, exponent, a, hi);
                if mass.is_infinite() {
                    return Err(Error::InfiniteLargeMass(format!(
                        "∫ {scale}·x^{exponent} diverges on [{a}, {hi}]"
                    )));
                }
                large.push(Piece {
                    shape: PieceShape::Power { lo: a, hi, exponent },
                    mass,
                    scale,
                });
            }
        }
    }
    Ok(())
}

/// Builds ν from its declared components, validating the integrability
/// condition `∫ (|y|² ∧ 1) ν(dy) < ∞` together with finite small-jump activity.
pub fn build_intensity(spec: &MeasureSpec) -> Result<IntensityMeasure> {
    if spec.small_direction == 0 || spec.large_direction == 0 {
        return Err(Error::InvalidMeasure("mark directions are 1-based modes".into()));
    }
    let mut small = Vec::new();
    let mut large = Vec::new();
    for law in &spec.components {
        split_component(law, &mut small, &mut large)?;
    }
    let sum = |pieces: &[Piece], k: i32| pieces.iter().map(|p| p.moment(k)).sum::<f64>();
    let mass_small: f64 = small.iter().map(|p| p.mass).sum();
    let mass_large: f64 = large.iter().map(|p| p.mass).sum();
    Ok(IntensityMeasure {
        spec: spec.clone(),
        first_moment_small: sum(&small, 1),
        second_moment_small: sum(&small, 2),
        first_moment_large: sum(&large, 1),
        second_moment_large: sum(&large, 2),
        small,
        large,
        mass_small,
        mass_large,
    })
}

/// Which side of the unit-ball threshold a jump falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Small,
    Large,
}

impl Regime {
    pub fn of_norm(norm: f64) -> Regime {
        if norm < 1.0 {
            Regime::Small
        } else {
            Regime::Large
        }
    }
}

impl IntensityMeasure {
    pub fn none() -> Self {
        build_intensity(&MeasureSpec::empty()).expect("empty measure is valid")
    }

    pub fn spec(&self) -> &MeasureSpec {
        &self.spec
    }

    pub fn direction(&self, regime: Regime) -> usize {
        match regime {
            Regime::Small => self.spec.small_direction,
            Regime::Large => self.spec.large_direction,
        }
    }

    pub fn mass(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Small => self.mass_small,
            Regime::Large => self.mass_large,
        }
    }

    pub fn second_moment(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Small => self.second_moment_small,
            Regime::Large => self.second_moment_large,
        }
    }

    /// Mark field `x·e_k` for amplitude `x` in the given regime.
    pub fn mark_field(&self, regime: Regime, amplitude: f64) -> SpectralField {
        let k = self.direction(regime);
        SpectralField::unit(k, k).scaled(amplitude)
    }

    /// `∫_{|x|<1} x ν(dx)` as a field along the small-jump direction.
    pub fn small_mean_mark(&self) -> SpectralField {
        self.mark_field(Regime::Small, self.first_moment_small)
    }

    /// Draws a normalized small-jump amplitude (`|x| < 1`).
    pub fn sample_small<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        sample_pieces(&self.small, self.mass_small, rng)
    }

    /// Draws a normalized large-jump amplitude (`|x| >= 1`).
    pub fn sample_large<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        sample_pieces(&self.large, self.mass_large, rng)
    }

    /// `∫ g(x) ν(dx)` over one regime, by quadrature.
    pub fn integrate<F: Fn(f64) -> f64>(&self, regime: Regime, g: F) -> f64 {
        let pieces = match regime {
            Regime::Small => &self.small,
            Regime::Large => &self.large,
        };
        pieces.iter().map(|p| p.integrate(&g)).sum()
    }
}

fn sample_pieces<R: Rng>(pieces: &[Piece], total: f64, rng: &mut R) -> Option<f64> {
    if total <= 0.0 {
        return None;
    }
    let mut target = rng.gen::<f64>() * total;
    for p in pieces {
        if target < p.mass {
            return Some(p.sample(rng));
        }
        target -= p.mass;
    }
    pieces.iter().rev().find(|p| p.mass > 0.0).map(|p| p.sample(rng))
}

/// Spectrum of the trace-class covariance `Q` in the Galerkin basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WienerSpec {
    eigenvalues: Vec<f64>,
}

impl WienerSpec {
    pub fn new(eigenvalues: Vec<f64>) -> Result<Self> {
        for (index, &value) in eigenvalues.iter().enumerate() {
            if value.is_nan() || value < 0.0 {
                return Err(Error::NegativeEigenvalue { index, value });
            }
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "eigenvalue {index} is not finite"
                )));
            }
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument(
                "covariance eigenvalues must be nonincreasing".into(),
            ));
        }
        Ok(Self { eigenvalues })
    }

    /// No Wiener forcing.
    pub fn none() -> Self {
        Self {
            eigenvalues: Vec::new(),
        }
    }

    /// `q_k ∝ k^{-2}` for `k = 1..=modes`, normalized to the given trace.
    pub fn inverse_square(modes: usize, trace: f64) -> Self {
        let raw: Vec<f64> = (1..=modes).map(|k| 1.0 / (k * k) as f64).collect();
        let total: f64 = raw.iter().sum();
        Self {
            eigenvalues: raw.iter().map(|q| trace * q / total).collect(),
        }
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Tr Q`
    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        Self::new(self.eigenvalues.clone()).map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: SpectralField,
    pub regime: Regime,
}

/// One sampled realization of the driving noise on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePath {
    pub grid: Vec<f64>,
    /// `wiener_increments[k]` covers `(grid[k], grid[k+1]]`.
    pub wiener_increments: Vec<Vec<f64>>,
    /// Time-ordered jumps.
    pub jumps: Vec<JumpEvent>,
    pub seed: u64,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::EmptyGrid(grid.len()));
    }
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite() {
            return Err(Error::NonIncreasingGrid(i + 1));
        }
    }
    Ok(())
}

const STREAM_WIENER: u64 = 1;
const STREAM_SMALL: u64 = 2;
const STREAM_LARGE: u64 = 3;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn compound_poisson(
    nu: &IntensityMeasure,
    regime: Regime,
    t0: f64,
    t1: f64,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<JumpEvent>,
) {
    let rate = nu.mass(regime);
    if rate <= 0.0 {
        return;
    }
    let exp = Exp::new(rate).expect("positive rate");
    let mut t = t0;
    loop {
        t += rng.sample(exp);
        if t > t1 {
            break;
        }
        let amplitude = match regime {
            Regime::Small => nu.sample_small(rng),
            Regime::Large => nu.sample_large(rng),
        }
        .expect("positive mass has a sampler");
        out.push(JumpEvent {
            time: t,
            mark: nu.mark_field(regime, amplitude),
            regime,
        });
    }
}

/// Samples Wiener increments and both jump streams on `grid`.
///
/// The seed is split into independent Wiener, small-jump and large-jump
/// sub-streams, so the result is a pure function of its arguments.
pub fn sample_noise_path(
    nu: &IntensityMeasure,
    w: &WienerSpec,
    grid: &[f64],
    seed: u64,
) -> Result<NoisePath> {
    check_grid(grid)?;
    w.validate()?;
    let mut rng_w = substream(seed, STREAM_WIENER);
    let sd: Vec<f64> = w.eigenvalues.iter().map(|q| q.sqrt()).collect();
    let wiener_increments = grid
        .windows(2)
        .map(|step| {
            let dt_sqrt = (step[1] - step[0]).sqrt();
            sd.iter()
                .map(|s| {
                    let z: f64 = rng_w.sample(StandardNormal);
                    s * dt_sqrt * z
                })
                .collect()
        })
        .collect();
    let (t0, t1) = (grid[0], grid[grid.len() - 1]);
    let mut jumps = Vec::new();
    compound_poisson(nu, Regime::Small, t0, t1, &mut substream(seed, STREAM_SMALL), &mut jumps);
    compound_poisson(nu, Regime::Large, t0, t1, &mut substream(seed, STREAM_LARGE), &mut jumps);
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(NoisePath {
        grid: grid.to_vec(),
        wiener_increments,
        jumps,
        seed,
    })
}

/// Glues a backward path (reflected through 0) to a forward path, giving a
/// path on `[-T_b, T_f]`.
///
/// Reflection negates the Wiener increments, so that `L(t) = L_b(-t)` for
/// `t <= 0`, and moves a backward jump at time `τ` to `-τ` with its mark
/// unchanged.
pub fn two_sided_extend(forward: &NoisePath, backward: &NoisePath) -> Result<NoisePath> {
    check_grid(&forward.grid)?;
    check_grid(&backward.grid)?;
    if forward.grid[0] != 0.0 || backward.grid[0] != 0.0 {
        return Err(Error::MismatchedSpecs("both paths must start at time 0".into()));
    }
    if forward.seed == backward.seed {
        return Err(Error::MismatchedSpecs(
            "forward and backward paths must use independent seeds".into(),
        ));
    }
    let width = |p: &NoisePath| p.wiener_increments.first().map_or(0, Vec::len);
    if width(forward) != width(backward) {
        return Err(Error::MismatchedSpecs(format!(
            "Wiener dimension {} vs {}",
            width(forward),
            width(backward)
        )));
    }
    let hf = forward.grid[1] - forward.grid[0];
    let hb = backward.grid[1] - backward.grid[0];
    if (hf - hb).abs() > 1e-12 * hf.max(hb) {
        return Err(Error::MismatchedSpecs(format!("grid spacing {hf} vs {hb}")));
    }
    let mut grid: Vec<f64> = backward.grid.iter().rev().map(|t| -t).collect();
    grid.extend_from_slice(&forward.grid[1..]);
    let mut wiener_increments: Vec<Vec<f64>> = backward
        .wiener_increments
        .iter()
        .rev()
        .map(|dw| dw.iter().map(|x| -x).collect())
        .collect();
    wiener_increments.extend(forward.wiener_increments.iter().cloned());
    let mut jumps: Vec<JumpEvent> = backward
        .jumps
        .iter()
        .rev()
        .map(|j| JumpEvent {
            time: -j.time,
            mark: j.mark.clone(),
            regime: j.regime,
        })
        .collect();
    jumps.extend(forward.jumps.iter().cloned());
    Ok(NoisePath {
        grid,
        wiener_increments,
        jumps,
        seed: forward.seed,
    })
}

impl NoisePath {
    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// Index `k` of the step `(grid[k], grid[k+1]]` containing `time`; a
    /// jump exactly on a stamp belongs to the step ending there.
    pub fn step_of(&self, time: f64) -> usize {
        let i = self.grid.partition_point(|&g| g < time);
        i.saturating_sub(1).min(self.n_steps() - 1)
    }

    /// Jumps bucketed by step, in time order.
    pub fn jumps_by_step(&self) -> Vec<(usize, &JumpEvent)> {
        self.jumps.iter().map(|j| (self.step_of(j.time), j)).collect()
    }

    pub fn count(&self, regime: Regime, from: f64, to: f64) -> usize {
        self.jumps
            .iter()
            .filter(|j| j.regime == regime && j.time > from && j.time <= to)
            .count()
    }

    /// Writes the path as CSV rows: `G,t` for grid stamps, `W,k,dw...` for
    /// Wiener increments and `J,time,regime,coeffs...` for jumps.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={}", self.seed)?;
        for t in &self.grid {
            writeln!(out, "G,{t:e}")?;
        }
        for (k, dw) in self.wiener_increments.iter().enumerate() {
            write!(out, "W,{k}")?;
            for x in dw {
                write!(out, ",{x:e}")?;
            }
            writeln!(out)?;
        }
        for j in &self.jumps {
            let tag = match j.regime {
                Regime::Small => "small",
                Regime::Large => "large",
            };
            write!(out, "J,{:e},{tag}", j.time)?;
            for c in j.mark.coeffs() {
                write!(out, ",{c:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let bad = |line: &str| Error::Config(format!("malformed noise path row `{line}`"));
        let num = |s: &str, line: &str| s.trim().parse::<f64>().map_err(|_| bad(line));
        let mut path = NoisePath {
            grid: Vec::new(),
            wiener_increments: Vec::new(),
            jumps: Vec::new(),
            seed: 0,
        };
        for line in input.lines() {
            let line = line?;
            if let Some(seed) = line.strip_prefix("# seed=") {
                path.seed = seed.trim().parse().map_err(|_| bad(&line))?;
                continue;
            }
            let mut cols = line.split(',');
            match cols.next() {
                Some("G") => path.grid.push(num(cols.next().ok_or_else(|| bad(&line))?, &line)?),
                Some("W") => {
                    cols.next();
                    let dw = cols.map(|c| num(c, &line)).collect::<Result<Vec<_>>>()?;
                    path.wiener_increments.push(dw);
                }
                Some("J") => {
                    let time = num(cols.next().ok_or_else(|| bad(&line))?, &line)?;
                    let regime = match cols.next() {
                        Some("small") => Regime::Small,
                        Some("large") => Regime::Large,
                        _ => return Err(bad(&line)),
                    };
                    let coeffs = cols.map(|c| num(c, &line)).collect::<Result<Vec<_>>>()?;
                    path.jumps.push(JumpEvent {
                        time,
                        mark: SpectralField::new(coeffs)?,
                        regime,
                    });
                }
                Some("") | None => {}
                Some(_) => return Err(bad(&line)),
            }
        }
        check_grid(&path.grid)?;
        if path.wiener_increments.len() != path.n_steps() {
            return Err(Error::Config("Wiener rows do not match grid".into()));
        }
        Ok(path)
    }
}

/// Separable integrand `φ(t)·ψ(x)` over the small-jump regime.
///
/// Evaluates `∫∫ φ(s)ψ(x) Ñ(ds, dx)` on the path with left-point (predictable)
/// evaluation of `φ` and the same step attribution as the integrator.
pub fn compensated_small_integral<P, S>(
    path: &NoisePath,
    nu: &IntensityMeasure,
    phi: P,
    psi: S,
) -> f64
where
    P: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let dir = nu.direction(Regime::Small);
    let compensator_rate = nu.integrate(Regime::Small, &psi);
    let mut total = crate::numerics::KahanSum::default();
    for (k, j) in path.jumps_by_step() {
        if j.regime == Regime::Small {
            let amp = j.mark.coeffs().get(dir - 1).copied().unwrap_or(0.0);
            total.add(phi(path.grid[k]) * psi(amp));
        }
    }
    for step in path.grid.windows(2) {
        total.add(-phi(step[0]) * (step[1] - step[0]) * compensator_rate);
    }
    total.value()
}

/// Isometry prediction `Σ_k φ(t_k)² Δt_k ∫ ψ² dν` for
/// [`compensated_small_integral`].
pub fn small_isometry_variance<P, S>(grid: &[f64], nu: &IntensityMeasure, phi: P, psi: S) -> f64
where
    P: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    let m2 = nu.integrate(Regime::Small, |x| psi(x).powi(2));
    grid.windows(2)
        .map(|s| phi(s[0]).powi(2) * (s[1] - s[0]))
        .sum::<f64>()
        * m2
}
