//! Mild solutions by exponential Euler stepping and Picard iteration.
//!
//! One step of the scheme is
//!
//! ```text
//! Y_{k+1} = U(t_{k+1}, t_k)[Y_k + f(t_k,Y_k)Δt + g(t_k,Y_k)·ΔW_k
//!           + h_s(t_k,Y_k)·(Σ_small z_j − Δt ∫_{|x|<1} x ν(dx))
//!           + h_l(t_k,Y_k)·Σ_large z_j]
//! ```
//!
//! with products taken pointwise on the collocation grid. Jumps inside the
//! step see the pre-jump state `Y_k`.

use std::io::Write;

use crate::ensemble::{run_paths, EnsembleStats};
use crate::error::{Error, Result};
use crate::evolution::EvolutionFamily;
use crate::noise::{sample_noise_path, two_sided_extend, IntensityMeasure, NoisePath, Regime, WienerSpec};
use crate::nonlinear::{Nonlinearities, PointwiseMap};
use crate::numerics::{linear_fit, splitmix64};
use crate::spectral::{Basis, SpectralField};

/// Everything the integrator needs besides the Monte Carlo plan.
#[derive(Debug, Clone)]
pub struct Model {
    pub basis: Basis,
    pub family: EvolutionFamily,
    pub nu: IntensityMeasure,
    pub wiener: WienerSpec,
    pub nl: Nonlinearities,
}

impl Model {
    pub fn new(
        basis: Basis,
        family: EvolutionFamily,
        nu: IntensityMeasure,
        wiener: WienerSpec,
        nl: Nonlinearities,
    ) -> Result<Self> {
        let n = basis.n_modes();
        if wiener.n_modes() > n {
            return Err(Error::MismatchedSpecs(format!(
                "{} Wiener modes exceed the {n}-mode basis",
                wiener.n_modes()
            )));
        }
        for regime in [Regime::Small, Regime::Large] {
            if nu.mass(regime) > 0.0 && nu.direction(regime) > n {
                return Err(Error::MismatchedSpecs(format!(
                    "jump direction {} outside the {n}-mode basis",
                    nu.direction(regime)
                )));
            }
        }
        family.mode_rates(n)?;
        Ok(Self {
            basis,
            family,
            nu,
            wiener,
            nl,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.basis.n_modes()
    }

    /// Same model with other nonlinearities.
    pub fn with_nonlinearities(&self, nl: Nonlinearities) -> Model {
        Model { nl, ..self.clone() }
    }

    pub fn sample_noise(&self, grid: &[f64], seed: u64) -> Result<NoisePath> {
        sample_noise_path(&self.nu, &self.wiener, grid, seed)
    }

    /// Noise on a uniform grid with spacing `dt` covering `[a, b]`.
    ///
    /// Windows reaching below zero glue an independent backward path
    /// (reflected) to the forward one, so time 0 is always a grid stamp and the
    /// forward part does not depend on how far back the window reaches.
    pub fn sample_window_noise(&self, a: f64, b: f64, dt: f64, seed: u64) -> Result<NoisePath> {
        if !(dt > 0.0) || !(b > a) {
            return Err(Error::InvalidArgument(format!("window [{a}, {b}] with dt {dt}")));
        }
        let steps = |len: f64| ((len / dt) - 1e-9).ceil().max(1.0) as usize;
        let uniform = |n: usize, start: f64| -> Vec<f64> {
            (0..=n).map(|k| start + k as f64 * dt).collect()
        };
        if a >= 0.0 {
            return self.sample_noise(&uniform(steps(b - a), a), seed);
        }
        let fwd_len = b.max(dt);
        let forward = self.sample_noise(&uniform(steps(fwd_len), 0.0), seed)?;
        let back_seed = splitmix64(seed ^ 0xB5AD_4ECE_DA1C_E2A9);
        let backward = self.sample_noise(&uniform(steps(-a), 0.0), back_seed)?;
        two_sided_extend(&forward, &backward)
    }
}

/// Noise increments attributed to one step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSegment {
    pub dw: Vec<f64>,
    /// Sum of small marks in the step (compensator not included).
    pub small: Option<SpectralField>,
    /// Sum of large marks in the step.
    pub large: Option<SpectralField>,
}

impl NoiseSegment {
    pub fn quiet(n_wiener: usize) -> Self {
        Self {
            dw: vec![0.0; n_wiener],
            small: None,
            large: None,
        }
    }
}

fn add_mark(slot: &mut Option<SpectralField>, mark: &SpectralField) {
    match slot {
        Some(acc) => {
            if acc.n_modes() < mark.n_modes() {
                let mut wider = SpectralField::zeros(mark.n_modes());
                wider.axpy(1.0, acc);
                *acc = wider;
            }
            acc.axpy(1.0, mark);
        }
        None => *slot = Some(mark.clone()),
    }
}

/// Splits a path into per-step segments; a jump in `(t_k, t_{k+1}]` goes to
/// step `k`.
pub fn segments(path: &NoisePath) -> Vec<NoiseSegment> {
    let mut out: Vec<NoiseSegment> = path
        .wiener_increments
        .iter()
        .map(|dw| NoiseSegment {
            dw: dw.clone(),
            small: None,
            large: None,
        })
        .collect();
    for (k, j) in path.jumps_by_step() {
        let seg = &mut out[k];
        match j.regime {
            Regime::Small => add_mark(&mut seg.small, &j.mark),
            Regime::Large => add_mark(&mut seg.large, &j.mark),
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
struct Workspace {
    u: Vec<f64>,
    noise: Vec<f64>,
    values: Vec<f64>,
}

enum Action<'a> {
    Skip,
    Spectral(f64),
    Grid(&'a PointwiseMap),
}

fn classify(map: &PointwiseMap, t: f64) -> Action<'_> {
    if map.is_zero() {
        return Action::Skip;
    }
    match map.state_free_value(t) {
        Some(0.0) => Action::Skip,
        Some(c) => Action::Spectral(c),
        None => Action::Grid(map),
    }
}

/// Forcing `f Δt + g·ΔW + h_s·Z_s + h_l·Z_l` evaluated at `eval_at`, added
/// into `acc`.
fn accumulate_forcing(
    model: &Model,
    nl: &Nonlinearities,
    t: f64,
    dt: f64,
    eval_at: &SpectralField,
    seg: &NoiseSegment,
    ws: &mut Workspace,
    acc: &mut SpectralField,
) {
    let basis = &model.basis;
    let q = basis.points().len();
    let mut grid_used = false;
    let mut state_ready = false;
    if ws.values.len() != q {
        ws.values = vec![0.0; q];
        ws.u = vec![0.0; q];
        ws.noise = vec![0.0; q];
    }

    let compensated_small = {
        let mut z = seg.small.clone();
        if model.nu.mass_small > 0.0 && model.nu.first_moment_small != 0.0 {
            let mean = model.nu.small_mean_mark();
            match &mut z {
                Some(f) => {
                    let mut w = SpectralField::zeros(f.n_modes().max(mean.n_modes()));
                    w.axpy(1.0, f);
                    w.axpy(-dt, &mean);
                    *f = w;
                }
                None => z = Some(mean.scaled(-dt)),
            }
        }
        z
    };
    let dw_nonzero = seg.dw.iter().any(|&x| x != 0.0);

    let terms: [(&PointwiseMap, Option<&[f64]>, f64); 4] = [
        (&nl.drift, None, dt),
        (&nl.diffusion, dw_nonzero.then_some(seg.dw.as_slice()), 1.0),
        (&nl.small_jump, compensated_small.as_ref().map(SpectralField::coeffs), 1.0),
        (&nl.large_jump, seg.large.as_ref().map(SpectralField::coeffs), 1.0),
    ];

    for (i, (map, noise, scale)) in terms.into_iter().enumerate() {
        // the drift multiplies the constant field, the others a noise field
        if i > 0 && noise.is_none() {
            continue;
        }
        match classify(map, t) {
            Action::Skip => {}
            Action::Spectral(c) => match noise {
                None => acc.axpy(c * scale, basis.ones()),
                Some(z) => {
                    for (a, zi) in acc.coeffs_mut().iter_mut().zip(z) {
                        *a += c * scale * zi;
                    }
                }
            },
            Action::Grid(map) => {
                let map = map.at(t);
                if !grid_used {
                    ws.values.iter_mut().for_each(|v| *v = 0.0);
                    grid_used = true;
                }
                if !state_ready {
                    basis.to_grid_into(eval_at.coeffs(), &mut ws.u);
                    state_ready = true;
                }
                match noise {
                    None => {
                        for (v, &u) in ws.values.iter_mut().zip(&ws.u) {
                            *v += scale * map.eval(u);
                        }
                    }
                    Some(z) => {
                        basis.to_grid_into(z, &mut ws.noise);
                        for ((v, &u), &w) in ws.values.iter_mut().zip(&ws.u).zip(&ws.noise) {
                            *v += scale * map.eval(u) * w;
                        }
                    }
                }
            }
        }
    }
    if grid_used {
        let projected = basis.from_grid(&ws.values);
        acc.axpy(1.0, &projected);
    }
}

fn check_state(model: &Model, y: &SpectralField) -> Result<()> {
    if y.n_modes() != model.n_modes() {
        return Err(Error::MismatchedSpecs(format!(
            "state has {} modes, basis has {}",
            y.n_modes(),
            model.n_modes()
        )));
    }
    Ok(())
}

/// One exponential Euler step from `t0` to `t1`.
pub fn step_exponential_euler(
    model: &Model,
    state: &SpectralField,
    t0: f64,
    t1: f64,
    seg: &NoiseSegment,
) -> Result<SpectralField> {
    check_state(model, state)?;
    if !(t1 >= t0) {
        return Err(Error::TimeOrder { t: t1, s: t0 });
    }
    let factors = model.family.factors(t1, t0, model.n_modes())?;
    let mut ws = Workspace::default();
    let mut acc = state.clone();
    accumulate_forcing(model, &model.nl, t0, t1 - t0, state, seg, &mut ws, &mut acc);
    for (a, f) in acc.coeffs_mut().iter_mut().zip(&factors) {
        *a *= f;
    }
    if !acc.is_finite() {
        return Err(Error::NonFinite(t1));
    }
    Ok(acc)
}

/// Exponential Euler integrator with per-step propagators precomputed for a
/// fixed grid.
#[derive(Debug, Clone)]
pub struct Integrator<'a> {
    model: &'a Model,
    grid: Vec<f64>,
    factors: Vec<f64>,
    ws: Workspace,
}

impl<'a> Integrator<'a> {
    pub fn new(model: &'a Model, grid: &[f64]) -> Result<Self> {
        if grid.len() < 2 {
            return Err(Error::EmptyGrid(grid.len()));
        }
        let n = model.n_modes();
        let rates = model.family.mode_rates(n)?;
        let mut factors = Vec::with_capacity((grid.len() - 1) * n);
        let mut cached: Option<(f64, Vec<f64>)> = None;
        for (i, w) in grid.windows(2).enumerate() {
            let dt = w[1] - w[0];
            if !(dt > 0.0) {
                return Err(Error::NonIncreasingGrid(i + 1));
            }
            let decay = match &cached {
                Some((h, d)) if *h == dt => d.clone(),
                _ => {
                    let d: Vec<f64> = rates.iter().map(|l| (-l * dt).exp()).collect();
                    cached = Some((dt, d.clone()));
                    d
                }
            };
            let scalar = model.family.log_scalar(w[1], w[0]).exp();
            factors.extend(decay.iter().map(|d| d * scalar));
        }
        Ok(Self {
            model,
            grid: grid.to_vec(),
            factors,
            ws: Workspace::default(),
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// `U(t_{k+1},t_k)[y + forcing(nl, eval_at)]`.
    pub fn step_with(
        &mut self,
        k: usize,
        y: &SpectralField,
        eval_at: &SpectralField,
        nl: &Nonlinearities,
        seg: &NoiseSegment,
    ) -> Result<SpectralField> {
        let (t0, t1) = (self.grid[k], self.grid[k + 1]);
        let mut acc = y.clone();
        accumulate_forcing(self.model, nl, t0, t1 - t0, eval_at, seg, &mut self.ws, &mut acc);
        let n = self.model.n_modes();
        for (a, f) in acc.coeffs_mut().iter_mut().zip(&self.factors[k * n..(k + 1) * n]) {
            *a *= f;
        }
        if !acc.is_finite() {
            return Err(Error::NonFinite(t1));
        }
        Ok(acc)
    }

    pub fn step(&mut self, k: usize, y: &SpectralField, seg: &NoiseSegment) -> Result<SpectralField> {
        let model = self.model;
        self.step_with(k, y, y, &model.nl, seg)
    }
}

fn check_path(grid: &[f64], path: &NoisePath) -> Result<()> {
    if path.grid != grid {
        return Err(Error::MismatchedSpecs("noise path grid differs from the integrator grid".into()));
    }
    Ok(())
}

/// Integrates from `y0` at `path.grid[0]`, calling `observe(k, Y(t_k))` at
/// every stamp.
pub fn simulate_path<O>(model: &Model, y0: &SpectralField, path: &NoisePath, mut observe: O) -> Result<()>
where
    O: FnMut(usize, &SpectralField),
{
    check_state(model, y0)?;
    let mut integ = Integrator::new(model, &path.grid)?;
    check_path(integ.grid(), path)?;
    let segs = segments(path);
    let mut y = y0.clone();
    observe(0, &y);
    for (k, seg) in segs.iter().enumerate() {
        y = integ.step(k, &y, seg)?;
        observe(k + 1, &y);
    }
    Ok(())
}

/// A sampled solution path.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Vec<f64>,
    pub states: Vec<SpectralField>,
    pub seed: u64,
}

impl Trajectory {
    pub fn sq_norms(&self) -> Vec<f64> {
        self.states.iter().map(SpectralField::norm_sq).collect()
    }

    /// Columns `t, coeff_1..coeff_n`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.states.first().map_or(0, SpectralField::n_modes);
        write!(out, "t")?;
        for i in 1..=n {
            write!(out, ",coeff_{i}")?;
        }
        writeln!(out)?;
        for (t, y) in self.grid.iter().zip(&self.states) {
            write!(out, "{t}")?;
            for c in y.coeffs() {
                write!(out, ",{c:e}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Samples noise on `grid` with `seed` and integrates from `y0`.
pub fn simulate_trajectory(model: &Model, y0: &SpectralField, grid: &[f64], seed: u64) -> Result<Trajectory> {
    let path = model.sample_noise(grid, seed)?;
    simulate_noise_path(model, y0, &path)
}

pub fn simulate_noise_path(model: &Model, y0: &SpectralField, path: &NoisePath) -> Result<Trajectory> {
    let mut states = Vec::with_capacity(path.grid.len());
    simulate_path(model, y0, path, |_, y| states.push(y.clone()))?;
    Ok(Trajectory {
        grid: path.grid.clone(),
        states,
        seed: path.seed,
    })
}

/// Runs `Y = Y₁ + Y₂`, where `Y₁` collects the automorphic forcing and `Y₂`
/// the pseudo forcing, both evaluated at the full state `Y`. `Y₁(t₀) = y0`
/// and `Y₂(t₀) = 0`.
pub fn simulate_decomposed<O>(
    model: &Model,
    parts: (&Nonlinearities, &Nonlinearities),
    y0: &SpectralField,
    path: &NoisePath,
    mut observe: O,
) -> Result<()>
where
    O: FnMut(usize, &SpectralField, &SpectralField),
{
    check_state(model, y0)?;
    let mut integ = Integrator::new(model, &path.grid)?;
    check_path(integ.grid(), path)?;
    let segs = segments(path);
    let mut y1 = y0.clone();
    let mut y2 = SpectralField::zeros(model.n_modes());
    observe(0, &y1, &y2);
    for (k, seg) in segs.iter().enumerate() {
        let y = &y1 + &y2;
        let n1 = integ.step_with(k, &y1, &y, parts.0, seg)?;
        y2 = integ.step_with(k, &y2, &y, parts.1, seg)?;
        y1 = n1;
        observe(k + 1, &y1, &y2);
    }
    Ok(())
}

/// Two solutions from different initial states under the same noise;
/// `observe(k, Y_a, Y_b)`.
pub fn simulate_coupled<O>(
    model: &Model,
    y0a: &SpectralField,
    y0b: &SpectralField,
    path: &NoisePath,
    mut observe: O,
) -> Result<()>
where
    O: FnMut(usize, &SpectralField, &SpectralField),
{
    check_state(model, y0a)?;
    check_state(model, y0b)?;
    let mut integ = Integrator::new(model, &path.grid)?;
    check_path(integ.grid(), path)?;
    let segs = segments(path);
    let mut a = y0a.clone();
    let mut b = y0b.clone();
    observe(0, &a, &b);
    for (k, seg) in segs.iter().enumerate() {
        a = integ.step(k, &a, seg)?;
        b = integ.step(k, &b, seg)?;
        observe(k + 1, &a, &b);
    }
    Ok(())
}

/// History truncation length `ln(M/tol)/δ` for the default tolerance `10⁻⁸`.
pub fn default_burn_in(family: &EvolutionFamily) -> f64 {
    family.burn_in(TRUNCATION_TOL)
}

pub const TRUNCATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Convolution {
    pub value: SpectralField,
    /// `M·e^{-δ(t-a)}`
    pub truncation_factor: f64,
    /// `truncation_factor · sup_s ‖forcing(s)‖ / δ` over the window.
    pub truncation_bound: f64,
    pub warning: Option<String>,
}

/// Truncated infinite-history convolution over `[a, t]` for state-free
/// integrands: the model's coefficient maps are evaluated at the zero state.
pub fn stochastic_convolution(model: &Model, a: f64, t: f64, dt: f64, seed: u64) -> Result<Convolution> {
    let path = model.sample_window_noise(a, t, dt, seed)?;
    let zero = SpectralField::zeros(model.n_modes());
    let mut integ = Integrator::new(model, &path.grid)?;
    let segs = segments(&path);
    let mut y = zero.clone();
    let mut sup_forcing: f64 = 0.0;
    for (k, seg) in segs.iter().enumerate() {
        let t0 = path.grid[k];
        let f = model.nl.drift.apply(&model.basis, t0, &zero);
        sup_forcing = sup_forcing.max(f.norm());
        y = integ.step_with(k, &y, &zero, &model.nl, seg)?;
    }
    let start = path.grid[0];
    let end = *path.grid.last().expect("nonempty grid");
    let len = end - start;
    let fam = &model.family;
    let factor = fam.m() * (-fam.delta() * len).exp();
    let burn = default_burn_in(fam);
    let warning = (len < burn).then(|| {
        format!("window length {len:.4} is below burn-in {burn:.4}; truncation factor {factor:e}")
    });
    Ok(Convolution {
        value: y,
        truncation_factor: factor,
        truncation_bound: factor * sup_forcing / fam.delta(),
        warning,
    })
}

/// Outcome of the Picard iteration `Y^{k+1} = S(Y^k)` from `Y⁰ ≡ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    /// Smallest `k` with `gap_k <= tol` (so `Y^k` is converged), or `max_iter`.
    pub iterates: usize,
    pub converged: bool,
    /// `gap_k = sup_t (Ê‖Y^{k+1}(t) − Y^k(t)‖²)^{1/2}` for `k = 0..max_iter`.
    pub sup_norm_gaps: Vec<f64>,
    /// Fitted per-iteration ratio of squared gaps.
    pub contraction_rate_hat: f64,
    pub n_paths: usize,
    pub window: (f64, f64),
    /// Bias bound `M·e^{-δ·burn_in}` from starting the window at a finite time.
    pub truncation_factor: f64,
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub report: PicardReport,
    /// `Ê‖Y^K(t)‖²` of the final iterate on the window grid.
    pub final_sq_norm: EnsembleStats,
    /// First path's final iterate.
    pub sample: Trajectory,
}

/// Squared gaps per iteration and stamp for one path, plus its final iterate.
fn picard_path(model: &Model, path: &NoisePath, max_iter: usize) -> Result<(Vec<Vec<f64>>, Vec<SpectralField>)> {
    let mut integ = Integrator::new(model, &path.grid)?;
    let segs = segments(path);
    let n = model.n_modes();
    let stamps = path.grid.len();
    let mut prev: Vec<SpectralField> = vec![SpectralField::zeros(n); stamps];
    let mut gaps = Vec::with_capacity(max_iter);
    for _ in 0..max_iter {
        let mut next = Vec::with_capacity(stamps);
        next.push(SpectralField::zeros(n));
        for (k, seg) in segs.iter().enumerate() {
            let y = match integ.step_with(k, &next[k], &prev[k], &model.nl, seg) {
                Ok(y) => y,
                Err(Error::NonFinite(_)) => {
                    gaps.push(vec![f64::INFINITY; stamps]);
                    return Ok((pad(gaps, max_iter, stamps), prev));
                }
                Err(e) => return Err(e),
            };
            next.push(y);
        }
        let g: Vec<f64> = next.iter().zip(&prev).map(|(a, b)| a.distance_sq(b)).collect();
        let done = g.iter().all(|&x| x == 0.0);
        gaps.push(g);
        prev = next;
        if done {
            break;
        }
    }
    Ok((pad(gaps, max_iter, stamps), prev))
}

// fills iterations skipped after an exact fixed point (zeros) or a blow-up
// (infinities)
fn pad(mut gaps: Vec<Vec<f64>>, max_iter: usize, stamps: usize) -> Vec<Vec<f64>> {
    let fill = match gaps.last() {
        Some(g) if g.iter().any(|x| x.is_infinite()) => f64::INFINITY,
        _ => 0.0,
    };
    while gaps.len() < max_iter {
        gaps.push(vec![fill; stamps]);
    }
    gaps
}

/// Fitted ratio of successive squared gaps from the geometric tail, ignoring
/// the first gap (measured from `Y⁰ ≡ 0`) and gaps at the rounding floor.
pub fn fit_contraction_rate(gaps: &[f64]) -> f64 {
    let floor = gaps.iter().copied().fold(0.0, f64::max) * 1e-12;
    let pts: Vec<(f64, f64)> = gaps
        .iter()
        .enumerate()
        .skip(1)
        .take_while(|(_, g)| g.is_finite() && **g > floor.max(1e-300))
        .map(|(k, g)| (k as f64, 2.0 * g.ln()))
        .collect();
    if pts.len() < 2 {
        if gaps.len() >= 2 && gaps[0] > 0.0 && gaps[1].is_finite() {
            return (gaps[1] / gaps[0]).powi(2);
        }
        return 0.0;
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    linear_fit(&xs, &ys).map_or(0.0, |(_, slope)| slope.exp())
}

/// Picard iteration on `[-burn_in, horizon]` with common random numbers: each
/// path's noise is drawn once and reused by every iterate.
pub fn picard_solve(
    model: &Model,
    horizon: f64,
    dt: f64,
    burn_in: f64,
    n_paths: usize,
    root_seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<PicardOutcome> {
    if max_iter == 0 || n_paths == 0 {
        return Err(Error::InvalidArgument("picard needs max_iter >= 1 and n_paths >= 1".into()));
    }
    let a = -burn_in;
    let probe = model.sample_window_noise(a, horizon, dt, 0)?;
    let times = probe.grid.clone();
    let stamps = times.len();
    let mut gap_acc: Vec<EnsembleStats> = (0..max_iter).map(|_| EnsembleStats::new(times.clone())).collect();
    let mut final_sq = EnsembleStats::new(times.clone());
    let mut sample: Option<Trajectory> = None;
    run_paths(
        n_paths,
        root_seed,
        |_, seed| {
            let path = model.sample_window_noise(a, horizon, dt, seed)?;
            let (gaps, last) = picard_path(model, &path, max_iter)?;
            Ok((gaps, last, seed))
        },
        |i, (gaps, last, seed)| {
            for (acc, g) in gap_acc.iter_mut().zip(&gaps) {
                acc.push_path(g);
            }
            let sq: Vec<f64> = last.iter().map(SpectralField::norm_sq).collect();
            final_sq.push_path(&sq);
            if i == 0 {
                sample = Some(Trajectory {
                    grid: times.clone(),
                    states: last,
                    seed,
                });
            }
            Ok(())
        },
    )?;
    debug_assert!(gap_acc.iter().all(|g| g.times.len() == stamps));
    let sup_norm_gaps: Vec<f64> = gap_acc
        .iter()
        .map(|acc| acc.means().into_iter().fold(0.0, f64::max).sqrt())
        .collect();
    let mut growth = 0;
    for (k, w) in sup_norm_gaps.windows(2).enumerate() {
        if !w[1].is_finite() || (w[1] > w[0] && w[1] > tol) {
            growth += 1;
        } else {
            growth = 0;
        }
        if growth >= 3 || !w[1].is_finite() {
            return Err(Error::Divergence {
                iterations: k + 2,
                last_gap: w[1],
            });
        }
    }
    let first_ok = sup_norm_gaps.iter().position(|&g| g <= tol);
    let report = PicardReport {
        iterates: first_ok.unwrap_or(max_iter),
        converged: first_ok.is_some(),
        contraction_rate_hat: fit_contraction_rate(&sup_norm_gaps),
        sup_norm_gaps,
        n_paths,
        window: (times[0], *times.last().expect("nonempty")),
        truncation_factor: model.family.m() * (-model.family.delta() * (-times[0]).max(0.0)).exp(),
    };
    Ok(PicardOutcome {
        report,
        final_sq_norm: final_sq,
        sample: sample.expect("at least one path"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinear::{StateFn, Term, TimeFactor};
    use crate::spectral::BasisSpec;

    fn heat_model(nl: Nonlinearities) -> Model {
        Model::new(
            Basis::new(BasisSpec::default()).unwrap(),
            EvolutionFamily::heat(),
            IntensityMeasure::none(),
            WienerSpec::none(),
            nl,
        )
        .unwrap()
    }

    #[test]
    fn free_heat_step() {
        let m = heat_model(Nonlinearities::zero());
        let e1 = SpectralField::unit(32, 1);
        let y = step_exponential_euler(&m, &e1, 0.0, 0.1, &NoiseSegment::quiet(0)).unwrap();
        assert!((y[0] - 0.372_707_838_853_437_94).abs() < 1e-15);
        let same = step_exponential_euler(&m, &e1, 0.3, 0.3, &NoiseSegment::quiet(0)).unwrap();
        assert_eq!(same, e1);
    }

    #[test]
    fn free_heat_trajectory_reaches_exp_minus_pi_squared() {
        let m = heat_model(Nonlinearities::zero());
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.01).collect();
        let tr = simulate_trajectory(&m, &SpectralField::unit(32, 1), &grid, 1).unwrap();
        let last = tr.states.last().unwrap();
        assert!((last[0] / 5.172_318_620_381_234e-5 - 1.0).abs() < 1e-12);
        let zero = simulate_trajectory(&m, &SpectralField::zeros(32), &grid, 1).unwrap();
        assert!(zero.states.iter().all(|s| s.norm_sq() == 0.0));
    }

    #[test]
    fn constant_drift_matches_convolution_to_first_order() {
        let phi = 0.7;
        let nl = Nonlinearities {
            drift: PointwiseMap::new(vec![Term::new(phi, TimeFactor::One, StateFn::One)]),
            ..Nonlinearities::zero()
        };
        let m = heat_model(nl);
        let lam = std::f64::consts::PI.powi(2);
        let run = |dt: f64| {
            let n = (1.0 / dt).round() as usize;
            let grid: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
            let tr = simulate_trajectory(&m, &SpectralField::zeros(32), &grid, 0).unwrap();
            tr.states.last().unwrap()[0]
        };
        let phi1 = phi * m.basis.ones()[0];
        let exact = phi1 * (1.0 - (-lam).exp()) / lam;
        let e1 = (run(0.01) - exact).abs();
        let e2 = (run(0.005) - exact).abs();
        assert!(e1 < 0.1 * exact);
        assert!((e1 / e2 - 2.0).abs() < 0.1, "ratio {}", e1 / e2);
    }

    #[test]
    fn single_jump_uses_pre_jump_state() {
        // h(u) = u, one large jump with mark e_1 at t = 0.05 inside (0, 0.1]
        let nl = Nonlinearities {
            large_jump: PointwiseMap::new(vec![Term::new(1.0, TimeFactor::One, StateFn::Identity)]),
            ..Nonlinearities::zero()
        };
        let m = heat_model(nl);
        let y0 = SpectralField::unit(32, 1).scaled(2.0);
        let seg = NoiseSegment {
            dw: vec![],
            small: None,
            large: Some(SpectralField::unit(32, 1)),
        };
        let y = step_exponential_euler(&m, &y0, 0.0, 0.1, &seg).unwrap();
        // by hand: y0 + project(y0·e_1) then T(0.1)
        let prod = m.basis.apply_pointwise(&SpectralField::unit(32, 1), |u| 2.0 * u * u);
        let expect = heat_decay(&(&y0 + &prod), 0.1);
        assert!(y.distance_sq(&expect) < 1e-26);
    }

    fn heat_decay(u: &SpectralField, t: f64) -> SpectralField {
        crate::evolution::heat_semigroup_apply(t, u).unwrap()
    }

    #[test]
    fn deterministic_in_seed() {
        let nu = crate::noise::build_intensity(&crate::noise::MeasureSpec {
            components: vec![crate::noise::JumpLaw::Atom { at: 1.0, mass: 0.5 }],
            ..crate::noise::MeasureSpec::empty()
        })
        .unwrap();
        let m = Model::new(
            Basis::new(BasisSpec::default()).unwrap(),
            EvolutionFamily::example(),
            nu,
            WienerSpec::inverse_square(4, 0.5),
            Nonlinearities::additive(),
        )
        .unwrap();
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.02).collect();
        let a = simulate_trajectory(&m, &SpectralField::zeros(32), &grid, 3).unwrap();
        let b = simulate_trajectory(&m, &SpectralField::zeros(32), &grid, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn state_free_picard_converges_after_one_iterate() {
        let m = Model::new(
            Basis::new(BasisSpec::default()).unwrap(),
            EvolutionFamily::heat(),
            IntensityMeasure::none(),
            WienerSpec::inverse_square(2, 0.5),
            Nonlinearities::additive(),
        )
        .unwrap();
        let out = picard_solve(&m, 0.5, 0.01, 0.2, 8, 1, 4, 1e-12).unwrap();
        assert_eq!(out.report.iterates, 1);
        assert!(out.report.converged);
    }

    #[test]
    fn constant_forcing_convolution() {
        let phi = 1.3;
        let nl = Nonlinearities {
            drift: PointwiseMap::new(vec![Term::new(phi, TimeFactor::One, StateFn::One)]),
            ..Nonlinearities::zero()
        };
        let m = heat_model(nl);
        let c = stochastic_convolution(&m, 0.0, 3.0, 1e-3, 0).unwrap();
        assert!(c.warning.is_none());
        let lam = std::f64::consts::PI.powi(2);
        // exponential Euler with left-point forcing sums a geometric series:
        // Σ_k e^{-λ(k+1)Δt} Δt φ₁
        let dt = 1e-3;
        let q = (-lam * dt).exp();
        let oracle = phi * m.basis.ones()[0] * dt * q * (1.0 - q.powi(3000)) / (1.0 - q);
        assert!((c.value[0] - oracle).abs() < 1e-12 * oracle.abs());
        let cont = phi * m.basis.ones()[0] * (1.0 - (-3.0 * lam).exp()) / lam;
        assert!((c.value[0] - cont).abs() < 0.01 * cont);
        let short = stochastic_convolution(&m, 0.0, 0.5, 1e-3, 0).unwrap();
        assert!(short.warning.is_some());
    }
}
