use levy_spde::noise::{
    build_intensity, compensated_small_integral, sample_noise_path, small_isometry_variance,
    two_sided_extend, JumpLaw, MeasureSpec, Regime, WienerSpec,
};
use levy_spde::numerics::{derive_seed, MeanVar};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

fn uniform_grid(t1: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t1 * k as f64 / n as f64).collect()
}

fn large_atom(mass: f64) -> MeasureSpec {
    MeasureSpec {
        components: vec![JumpLaw::Atom { at: 2.0, mass }],
        ..MeasureSpec::empty()
    }
}

/// Sample mean and a standard error for the sample variance.
fn variance_with_error(xs: &[f64]) -> (f64, f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let centred: Vec<f64> = xs.iter().map(|x| (x - mean).powi(2)).collect();
    let var = centred.iter().sum::<f64>() / (n - 1.0);
    let m4 = centred.iter().map(|c| (c - var).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt(), var, (m4 / n).sqrt())
}

#[test]
fn large_jump_counts_pass_chi_square() {
    let nu = build_intensity(&large_atom(0.3)).unwrap();
    let grid = vec![0.0, 50.0, 100.0];
    let n_paths = 2000;
    let mut counts = Vec::with_capacity(n_paths);
    let mut window = MeanVar::default();
    for i in 0..n_paths {
        let p = sample_noise_path(&nu, &WienerSpec::none(), &grid, derive_seed(11, i as u64)).unwrap();
        counts.push(p.count(Regime::Large, 0.0, 100.0));
        window.push(p.count(Regime::Large, 20.0, 30.0) as f64);
        assert!(p.jumps.iter().all(|j| j.regime == Regime::Large));
    }
    // the 10-unit window is Poisson(3)
    assert!((window.mean() - 3.0).abs() < 4.0 * (3.0 / n_paths as f64).sqrt());

    let law = Poisson::new(30.0).unwrap();
    // bins [0,21], 22, ..., 38, [39,∞), each expecting at least 5 counts
    let mut edges: Vec<(u64, u64)> = vec![(0, 21)];
    edges.extend((22..=38).map(|k| (k, k)));
    edges.push((39, u64::MAX));
    let mut stat = 0.0;
    for &(lo, hi) in &edges {
        let p: f64 = if hi == u64::MAX {
            1.0 - (0..lo).map(|k| law.pmf(k)).sum::<f64>()
        } else {
            (lo..=hi).map(|k| law.pmf(k)).sum()
        };
        let expected = p * n_paths as f64;
        assert!(expected >= 5.0);
        let observed = counts.iter().filter(|&&c| (c as u64) >= lo && (c as u64) <= hi).count() as f64;
        stat += (observed - expected).powi(2) / expected;
    }
    let dof = (edges.len() - 1) as f64;
    let critical = ChiSquared::new(dof).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi-square {stat} >= {critical}");
}

#[test]
fn wiener_increment_covariance_is_diagonal() {
    let w = WienerSpec::new(vec![0.5, 0.2, 0.05]).unwrap();
    let nu = build_intensity(&MeasureSpec::empty()).unwrap();
    let dt = 0.1;
    let grid = uniform_grid(400.0, 4000);
    let mut var = [MeanVar::default(), MeanVar::default(), MeanVar::default()];
    let mut cross = MeanVar::default();
    for i in 0..5u64 {
        let p = sample_noise_path(&nu, &w, &grid, derive_seed(3, i)).unwrap();
        for dw in &p.wiener_increments {
            for (acc, x) in var.iter_mut().zip(dw) {
                acc.push(x * x);
            }
            cross.push(dw[0] * dw[1]);
        }
    }
    for (k, acc) in var.iter().enumerate() {
        let target = w.eigenvalues()[k] * dt;
        assert!(
            (acc.mean() - target).abs() < 4.0 * acc.std_error(),
            "mode {k}: {} vs {target}",
            acc.mean()
        );
    }
    assert!(cross.mean().abs() < 4.0 * cross.std_error());
}

#[test]
fn compensated_small_integral_is_centred_and_isometric() {
    let spec = MeasureSpec {
        components: vec![
            JumpLaw::Uniform { lo: -0.5, hi: 0.9, density: 1.5 },
            JumpLaw::Power { lo: 0.0, hi: 1.0, scale: 0.5, exponent: -0.5 },
        ],
        ..MeasureSpec::empty()
    };
    let nu = build_intensity(&spec).unwrap();
    assert!(nu.first_moment_small.abs() > 0.1);
    let grid = uniform_grid(1.0, 20);
    let phi = |t: f64| if t < 0.5 { 1.0 } else { -2.0 };
    let psi = |x: f64| x;
    let samples: Vec<f64> = (0..10_000u64)
        .map(|i| {
            let p = sample_noise_path(&nu, &WienerSpec::none(), &grid, derive_seed(5, i)).unwrap();
            compensated_small_integral(&p, &nu, phi, psi)
        })
        .collect();
    let (mean, mean_se, var, var_se) = variance_with_error(&samples);
    assert!(mean.abs() < 4.0 * mean_se, "mean {mean} se {mean_se}");
    let predicted = small_isometry_variance(&grid, &nu, phi, psi);
    // (0.5·1 + 0.5·4)·(1.5·(0.9³+0.5³)/3 + 0.5·0.4)
    let closed = 2.5 * (0.5 * (0.729 + 0.125) + 0.2);
    assert!((predicted - closed).abs() < 1e-9);
    assert!((var - predicted).abs() < 3.0 * var_se, "var {var} vs {predicted} (se {var_se})");
}

#[test]
fn degenerate_noise_has_no_randomness() {
    let nu = build_intensity(&MeasureSpec::empty()).unwrap();
    let w = WienerSpec::new(vec![0.0, 0.0]).unwrap();
    let p = sample_noise_path(&nu, &w, &uniform_grid(1.0, 10), 99).unwrap();
    assert!(p.jumps.is_empty());
    assert!(p.wiener_increments.iter().flatten().all(|x| *x == 0.0));
}

#[test]
fn two_sided_path_reflects_backward_jumps() {
    let nu = build_intensity(&large_atom(2.0)).unwrap();
    let w = WienerSpec::new(vec![1.0]).unwrap();
    let fwd = sample_noise_path(&nu, &w, &uniform_grid(1.0, 10), 1).unwrap();
    let bwd = sample_noise_path(&nu, &w, &uniform_grid(1.0, 10), 2).unwrap();
    let both = two_sided_extend(&fwd, &bwd).unwrap();
    assert_eq!(both.grid.len(), 21);
    assert_eq!(both.grid[10], 0.0);
    assert!((both.grid[0] + 1.0).abs() < 1e-15);
    for j in &bwd.jumps {
        assert!(both.jumps.iter().any(|k| k.time == -j.time && k.mark == j.mark));
    }
    assert!(both.jumps.windows(2).all(|w| w[0].time <= w[1].time));
    assert_eq!(both.jumps.len(), fwd.jumps.len() + bwd.jumps.len());
    assert_eq!(both.wiener_increments[9][0], -bwd.wiener_increments[0][0]);
    assert!(two_sided_extend(&fwd, &fwd).is_err());
}

#[test]
fn csv_round_trip_preserves_path() {
    let spec = MeasureSpec {
        components: vec![
            JumpLaw::Atom { at: -1.5, mass: 3.0 },
            JumpLaw::Uniform { lo: 0.1, hi: 0.6, density: 4.0 },
        ],
        small_direction: 2,
        large_direction: 3,
    };
    let nu = build_intensity(&spec).unwrap();
    let w = WienerSpec::inverse_square(3, 1.0);
    let p = sample_noise_path(&nu, &w, &uniform_grid(2.0, 16), 77).unwrap();
    assert!(!p.jumps.is_empty());
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let back = levy_spde::NoisePath::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back, p);
}
