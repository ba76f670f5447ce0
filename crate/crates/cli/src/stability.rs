//! Coupled-noise stability runs: two solutions under the same noise, their
//! mean-square gap, and ball invariance for the local result.

use std::io::Write;

use levy_spde::conditions::check_local_stability;
use levy_spde::ensemble::{run_paths, EnsembleStats};
use levy_spde::mild::simulate_coupled;
use levy_spde::numerics::linear_fit;
use levy_spde::{Scenario, SpectralField};
use serde::Serialize;

use crate::{CliError, CliResult};

/// Gaps before this time are treated as transient.
pub const TRANSIENT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    /// `Ê‖Y(t) − Y*(t)‖²`
    pub gap: Vec<f64>,
    pub gap_stderr: Vec<f64>,
    /// `e^{εt}·gap`
    pub exp_weighted_gap: Vec<f64>,
    pub epsilon: f64,
    /// Decay rate of `gap` fitted on `t >= TRANSIENT`.
    pub fit_rate: f64,
    pub n_paths: usize,
}

impl StabilityReport {
    fn from_stats(stats: &EnsembleStats, epsilon: f64, n_paths: usize) -> Self {
        let gap = stats.means();
        let exp_weighted_gap = stats
            .times
            .iter()
            .zip(&gap)
            .map(|(t, g)| (epsilon * t).exp() * g)
            .collect();
        Self {
            fit_rate: fit_decay_rate(&stats.times, &gap, TRANSIENT),
            times: stats.times.clone(),
            gap_stderr: stats.std_errors(),
            gap,
            exp_weighted_gap,
            epsilon,
            n_paths,
        }
    }

    /// First stamp after `t0` where the weighted gap rises by more than three
    /// standard errors of the later estimate. A gap that has underflowed to
    /// zero counts as decreased.
    pub fn first_increase_after(&self, t0: f64) -> Option<f64> {
        (1..self.times.len())
            .filter(|&k| self.times[k - 1] >= t0)
            .find(|&k| {
                let (prev, next) = (self.exp_weighted_gap[k - 1], self.exp_weighted_gap[k]);
                let slack = 3.0 * (self.epsilon * self.times[k]).exp() * self.gap_stderr[k];
                next > prev + slack || (next == prev && prev > 0.0 && slack == 0.0)
            })
            .map(|k| self.times[k])
    }

    /// Columns `t, gap, stderr, exp_weighted_gap`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,gap,stderr,exp_weighted_gap")?;
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{},{:e},{:e},{:e}",
                self.times[i], self.gap[i], self.gap_stderr[i], self.exp_weighted_gap[i]
            )?;
        }
        Ok(())
    }
}

/// `−slope` of `ln gap` against `t` over positive gaps with `t >= t0`.
pub fn fit_decay_rate(times: &[f64], gap: &[f64], t0: f64) -> f64 {
    let pick = |from: f64| -> (Vec<f64>, Vec<f64>) {
        times
            .iter()
            .zip(gap)
            .filter(|(t, g)| **t >= from && **g > 0.0 && g.is_finite())
            .map(|(t, g)| (*t, g.ln()))
            .unzip()
    };
    let (mut xs, mut ys) = pick(t0);
    if xs.len() < 2 {
        (xs, ys) = pick(f64::NEG_INFINITY);
    }
    linear_fit(&xs, &ys).map_or(f64::NAN, |(_, slope)| -slope)
}

fn coupled_stats(
    scn: &Scenario,
    y0a: &SpectralField,
    y0b: &SpectralField,
    n_paths: usize,
    root_seed: u64,
) -> CliResult<(EnsembleStats, EnsembleStats)> {
    let grid = scn.grid();
    let mut gaps = EnsembleStats::new(grid.clone());
    let mut norms = EnsembleStats::new(grid.clone());
    run_paths(
        n_paths,
        root_seed,
        |_, seed| {
            let path = scn.model.sample_noise(&grid, seed)?;
            let mut gap = Vec::with_capacity(grid.len());
            let mut norm = Vec::with_capacity(grid.len());
            simulate_coupled(&scn.model, y0a, y0b, &path, |_, a, b| {
                gap.push(a.distance_sq(b));
                norm.push(a.norm_sq());
            })?;
            Ok((gap, norm))
        },
        |_, (gap, norm)| {
            gaps.push_path(&gap);
            norms.push_path(&norm);
            Ok(())
        },
    )?;
    Ok((gaps, norms))
}

/// Mean-square gap between solutions from `y0a` and `y0b` under common noise.
pub fn run_stability(
    scn: &Scenario,
    y0a: &SpectralField,
    y0b: &SpectralField,
    epsilon: f64,
    n_paths: usize,
    root_seed: u64,
) -> CliResult<StabilityReport> {
    if !(epsilon >= 0.0) {
        return Err(CliError::Config(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    let (gaps, _) = coupled_stats(scn, y0a, y0b, n_paths, root_seed)?;
    Ok(StabilityReport::from_stats(&gaps, epsilon, n_paths))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalStabilityReport {
    pub r: f64,
    pub r1_bound: f64,
    pub y0_norm: f64,
    /// `Ê‖Y(t)‖²` from `y0`.
    pub sq_norm: Vec<f64>,
    pub sq_norm_stderr: Vec<f64>,
    /// First stamp with `Ê‖Y‖² − 3·stderr > r²`.
    pub first_exit: Option<f64>,
    /// Gap between the solutions from `y0` and from `0`.
    pub stability: StabilityReport,
}

impl LocalStabilityReport {
    pub fn ensure_invariant(&self) -> CliResult<()> {
        match self.first_exit {
            Some(t) => Err(CliError::Assertion(format!(
                "solution leaves the ball of radius {} at t = {t}",
                self.r
            ))),
            None => Ok(()),
        }
    }
}

/// Ball invariance for the local result: the declared constant is read as
/// `L_r` on the ball of radius `r`, and `‖y0‖` must not exceed the bound
/// `r₁` from the local stability check.
pub fn run_local_stability(
    scn: &Scenario,
    r: f64,
    y0: &SpectralField,
    epsilon: f64,
    n_paths: usize,
    root_seed: u64,
) -> CliResult<LocalStabilityReport> {
    let mut cs = scn.constants();
    cs.ball_r = Some(r);
    let check = check_local_stability(&cs)?;
    let r1 = match (check.pass, check.r1_bound) {
        (true, Some(b)) => b,
        _ => {
            return Err(CliError::Config(format!(
                "local stability condition fails (lhs {:.6} >= 1)",
                check.lhs
            )))
        }
    };
    if y0.norm() > r1 {
        return Err(CliError::Config(format!(
            "initial norm {} exceeds the admissible radius r1 = {r1}",
            y0.norm()
        )));
    }
    let zero = SpectralField::zeros(y0.n_modes());
    let (gaps, norms) = coupled_stats(scn, y0, &zero, n_paths, root_seed)?;
    let sq_norm = norms.means();
    let sq_norm_stderr = norms.std_errors();
    let first_exit = norms
        .times
        .iter()
        .zip(sq_norm.iter().zip(&sq_norm_stderr))
        .find(|(_, (m, se))| *m - 3.0 * *se > r * r)
        .map(|(t, _)| *t);
    Ok(LocalStabilityReport {
        r,
        r1_bound: r1,
        y0_norm: y0.norm(),
        sq_norm,
        sq_norm_stderr,
        first_exit,
        stability: StabilityReport::from_stats(&gaps, epsilon, n_paths),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decay_fit_recovers_exponential() {
        let times: Vec<f64> = (0..=100).map(|k| k as f64 * 0.05).collect();
        let gap: Vec<f64> = times.iter().map(|t| 3.0 * (-7.5 * t).exp()).collect();
        assert!((fit_decay_rate(&times, &gap, 0.5) - 7.5).abs() < 1e-10);
        let zeros = vec![0.0; times.len()];
        assert!(fit_decay_rate(&times, &zeros, 0.5).is_nan());
    }
}
