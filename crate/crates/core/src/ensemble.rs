//! Deterministic Monte Carlo driver.
//!
//! Paths are evaluated in parallel in fixed-size chunks, then folded into the
//! reducer strictly in path order, so results do not depend on the number of
//! worker threads.

use std::io::Write;

use rayon::prelude::*;

use crate::error::Result;
use crate::numerics::{derive_seed, MeanVar};

const CHUNK: usize = 64;

/// Runs `map(index, seed)` for every path and feeds the outputs to `fold` in
/// index order. Stops at the first error (in index order).
pub fn run_paths<T, M, F>(n_paths: usize, root_seed: u64, map: M, mut fold: F) -> Result<()>
where
    T: Send,
    M: Fn(usize, u64) -> Result<T> + Sync,
    F: FnMut(usize, T) -> Result<()>,
{
    let mut start = 0;
    while start < n_paths {
        let end = (start + CHUNK).min(n_paths);
        let outs: Vec<Result<T>> = (start..end)
            .into_par_iter()
            .map(|i| map(i, derive_seed(root_seed, i as u64)))
            .collect();
        for (i, out) in (start..end).zip(outs) {
            fold(i, out?)?;
        }
        start = end;
    }
    Ok(())
}

/// Per-stamp mean and standard error of a scalar path statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub acc: Vec<MeanVar>,
}

impl EnsembleStats {
    pub fn new(times: Vec<f64>) -> Self {
        let acc = vec![MeanVar::default(); times.len()];
        Self { times, acc }
    }

    pub fn push_path(&mut self, values: &[f64]) {
        for (a, &v) in self.acc.iter_mut().zip(values) {
            a.push(v);
        }
    }

    pub fn n_paths(&self) -> u64 {
        self.acc.first().map_or(0, MeanVar::count)
    }

    pub fn means(&self) -> Vec<f64> {
        self.acc.iter().map(MeanVar::mean).collect()
    }

    pub fn std_errors(&self) -> Vec<f64> {
        self.acc.iter().map(MeanVar::std_error).collect()
    }

    /// Writes `t,mean,stderr` rows.
    pub fn write_csv<W: Write>(&self, mut out: W, value_name: &str) -> Result<()> {
        writeln!(out, "t,{value_name},stderr")?;
        for (t, a) in self.times.iter().zip(&self.acc) {
            writeln!(out, "{t},{:e},{:e}", a.mean(), a.std_error())?;
        }
        Ok(())
    }
}
