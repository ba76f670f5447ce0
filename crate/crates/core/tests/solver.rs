use std::f64::consts::PI;

use levy_spde::ensemble::{run_paths, EnsembleStats};
use levy_spde::mild::{
    picard_solve, simulate_coupled, simulate_decomposed, simulate_noise_path, simulate_path,
    simulate_trajectory, stochastic_convolution,
};
use levy_spde::noise::{build_intensity, JumpEvent, JumpLaw, MeasureSpec, NoisePath, Regime};
use levy_spde::numerics::{derive_seed, MeanVar};
use levy_spde::scenario::{build_heat_example, heat_example_nonlinearities, DEFAULT_A};
use levy_spde::{
    Basis, BasisSpec, EvolutionFamily, IntensityMeasure, McPlan, Model, Nonlinearities,
    PointwiseMap, SpectralField, StateFn, Term, TimeFactor, WienerSpec,
};

fn grid(t0: f64, t1: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t0 + (t1 - t0) * k as f64 / n as f64).collect()
}

fn one_mode_model(rate: f64, nu: IntensityMeasure, wiener: WienerSpec, nl: Nonlinearities) -> Model {
    let basis = Basis::new(BasisSpec { n_modes: 1, quadrature_points: 2 }).unwrap();
    Model::new(basis, EvolutionFamily::custom(vec![rate]).unwrap(), nu, wiener, nl).unwrap()
}

fn constant(c: f64) -> PointwiseMap {
    PointwiseMap::new(vec![Term::new(c, TimeFactor::One, StateFn::One)])
}

#[test]
fn ou_pilot_matches_discrete_stationary_variance() {
    let a = 1.0;
    let m = one_mode_model(a, IntensityMeasure::none(), WienerSpec::new(vec![1.0]).unwrap(), Nonlinearities::additive());
    let h = 0.01;
    let n = 1000;
    let mut acc = MeanVar::default();
    for i in 0..4000u64 {
        let conv = stochastic_convolution(&m, 0.0, 10.0, h, derive_seed(21, i)).unwrap();
        acc.push(conv.value[0].powi(2));
        if i == 0 {
            // burn-in for δ = 1 is ln(10⁸) ≈ 18.4, longer than the window
            assert!(conv.warning.is_some());
            assert!((conv.truncation_factor - (-10f64).exp()).abs() < 1e-15);
        }
    }
    let r = (-2.0 * a * h).exp();
    let discrete = h * r * (1.0 - r.powi(n)) / (1.0 - r);
    assert!((discrete - 0.495_016_6).abs() < 1e-6);
    assert!((acc.mean() - discrete).abs() < 3.0 * acc.std_error(), "{} vs {discrete}", acc.mean());
}

#[test]
fn constant_drift_convolution_matches_geometric_sum() {
    let basis = Basis::new(BasisSpec::default()).unwrap();
    let phi = 0.7;
    let nl = Nonlinearities { drift: constant(phi), ..Nonlinearities::zero() };
    let m = Model::new(basis.clone(), EvolutionFamily::heat(), IntensityMeasure::none(), WienerSpec::none(), nl).unwrap();
    let h = 1e-3;
    let conv = stochastic_convolution(&m, 0.0, 0.5, h, 1).unwrap();
    assert!(conv.warning.is_some());
    for n in 1..=basis.n_modes() {
        let lam = (n as f64 * PI).powi(2);
        let fn_ = phi * basis.ones()[n - 1];
        let r = (-lam * h).exp();
        let discrete = fn_ * h * r * (1.0 - r.powi(500)) / (1.0 - r);
        let continuous = fn_ * (1.0 - (-lam * 0.5).exp()) / lam;
        assert!((conv.value[n - 1] - discrete).abs() < 1e-12 * (1.0 + discrete.abs()));
        assert!((conv.value[n - 1] - continuous).abs() <= fn_.abs() * h);
    }
}

#[test]
fn isometry_transfers_to_linear_jump_state() {
    let spec = MeasureSpec {
        components: vec![JumpLaw::Uniform { lo: -0.5, hi: 0.9, density: 1.5 }],
        ..MeasureSpec::empty()
    };
    let nu = build_intensity(&spec).unwrap();
    let m2 = nu.second_moment_small;
    let nl = Nonlinearities { small_jump: constant(1.0), ..Nonlinearities::zero() };
    let rate = 2.0;
    let m = one_mode_model(rate, nu, WienerSpec::none(), nl);
    let (h, n) = (0.05, 40);
    let g = grid(0.0, h * n as f64, n);
    let mut acc = MeanVar::default();
    let mut sq = MeanVar::default();
    let y0 = SpectralField::zeros(1);
    for i in 0..10_000u64 {
        let tr = simulate_trajectory(&m, &y0, &g, derive_seed(8, i)).unwrap();
        let y = tr.states[n][0];
        acc.push(y);
        sq.push(y * y);
    }
    let predicted: f64 = m2 * h * (1..=n).map(|j| (-2.0 * rate * h * j as f64).exp()).sum::<f64>();
    assert!(acc.mean().abs() < 4.0 * acc.std_error());
    assert!((sq.mean() - predicted).abs() < 3.0 * sq.std_error(), "{} vs {predicted}", sq.mean());
}

#[test]
fn jumps_use_the_pre_jump_state() {
    let basis = Basis::new(BasisSpec::default()).unwrap();
    let n = basis.n_modes();
    let nu = build_intensity(&MeasureSpec {
        components: vec![JumpLaw::Atom { at: 1.0, mass: 1.0 }],
        ..MeasureSpec::empty()
    })
    .unwrap();
    let nl = Nonlinearities {
        large_jump: PointwiseMap::new(vec![Term::new(0.5, TimeFactor::One, StateFn::Identity)]),
        ..Nonlinearities::zero()
    };
    let fam = EvolutionFamily::heat();
    let m = Model::new(basis.clone(), fam.clone(), nu.clone(), WienerSpec::none(), nl).unwrap();
    let mark = nu.mark_field(Regime::Large, 1.0);
    let path_with = |time: f64| NoisePath {
        grid: vec![0.0, 0.1, 0.2, 0.3],
        wiener_increments: vec![vec![]; 3],
        jumps: vec![JumpEvent { time, mark: mark.clone(), regime: Regime::Large }],
        seed: 0,
    };
    let mut y0 = SpectralField::zeros(n);
    y0[0] = 1.0;
    y0[1] = 1.0;

    let tr = simulate_noise_path(&m, &y0, &path_with(0.25)).unwrap();
    let pre = fam.apply(0.2, 0.0, &y0).unwrap();
    assert!(tr.states[2].distance_sq(&pre) < 1e-28);
    let kick = |y: &SpectralField| {
        let (y, z) = (y.clone(), mark.clone());
        let mut z_full = SpectralField::zeros(n);
        z_full.axpy(1.0, &z);
        basis.project_function(move |r| {
            0.5 * levy_spde::eval_field(&y, r).unwrap() * levy_spde::eval_field(&z_full, r).unwrap()
        })
    };
    let expected = fam.apply(0.3, 0.2, &(&pre + &kick(&pre))).unwrap();
    assert!(tr.states[3].distance_sq(&expected) < 1e-24);
    // evaluating at the post-jump state would differ visibly
    let post = &pre + &kick(&pre);
    let wrong = fam.apply(0.3, 0.2, &(&pre + &kick(&post))).unwrap();
    assert!(tr.states[3].distance_sq(&wrong) > 1e-8);

    // a jump on a stamp belongs to the step ending there
    let on_stamp = simulate_noise_path(&m, &y0, &path_with(0.2)).unwrap();
    assert_eq!(on_stamp.states[1], tr.states[1]);
    assert!(on_stamp.states[2].distance_sq(&pre) > 1e-8);
}

#[test]
fn drift_only_endpoint_converges_at_first_order() {
    let basis = Basis::new(BasisSpec::default()).unwrap();
    let nl = Nonlinearities {
        drift: heat_example_nonlinearities([3.0, 3.0, 0.0, 0.0, 0.0, 0.0]).unwrap().drift,
        ..Nonlinearities::zero()
    };
    let m = Model::new(basis, EvolutionFamily::example(), IntensityMeasure::none(), WienerSpec::none(), nl).unwrap();
    let mut y0 = SpectralField::zeros(32);
    y0[0] = 1.0;
    y0[2] = 0.5;
    let end = |steps: usize| {
        let tr = simulate_trajectory(&m, &y0, &grid(0.0, 1.0, steps), 0).unwrap();
        tr.states[steps].clone()
    };
    let ends: Vec<SpectralField> = [50, 100, 200, 400].iter().map(|&s| end(s)).collect();
    let diffs: Vec<f64> = ends.windows(2).map(|w| w[0].distance_sq(&w[1]).sqrt()).collect();
    for (i, d) in diffs.iter().enumerate() {
        let dt = 0.02 / 2f64.powi(i as i32);
        assert!(*d <= 2.0 * dt, "step {dt}: change {d}");
    }
    for w in diffs.windows(2) {
        let ratio = w[1] / w[0];
        assert!(ratio > 0.4 && ratio < 0.6, "ratio {ratio}");
    }
}

#[test]
fn decomposed_parts_sum_to_the_full_solution() {
    let mc = McPlan { horizon: 2.0, ..McPlan::default() };
    let scn = build_heat_example([0.3, 0.2, 0.25, 0.15, 0.2, 0.1], mc).unwrap();
    let model = &scn.model;
    let (auto, pseudo) = model.nl.split();
    let path = model.sample_window_noise(-1.0, 2.0, 0.01, 4).unwrap();
    let mut y0 = SpectralField::zeros(32);
    y0[0] = 0.8;
    let mut full = Vec::new();
    simulate_path(model, &y0, &path, |_, y| full.push(y.clone())).unwrap();
    let mut worst: f64 = 0.0;
    let mut y2_mass = 0.0;
    simulate_decomposed(model, (&auto, &pseudo), &y0, &path, |k, y1, y2| {
        let d = (y1 + y2).distance_sq(&full[k]).sqrt() / (1.0 + full[k].norm());
        worst = worst.max(d);
        y2_mass += y2.norm_sq();
    })
    .unwrap();
    assert!(worst < 1e-12, "worst relative mismatch {worst}");
    assert!(y2_mass > 0.0);
}

#[test]
fn coupled_identical_starts_stay_identical() {
    let scn = build_heat_example(DEFAULT_A, McPlan::default()).unwrap();
    let path = scn.model.sample_window_noise(0.0, 1.0, 0.01, 3).unwrap();
    let y0 = SpectralField::unit(32, 2);
    simulate_coupled(&scn.model, &y0, &y0, &path, |_, a, b| assert_eq!(a, b)).unwrap();
}

#[test]
fn simulation_is_deterministic_given_seed() {
    let scn = build_heat_example(DEFAULT_A, McPlan::default()).unwrap();
    let y0 = SpectralField::unit(32, 1);
    let a = scn.simulate(&y0, 17).unwrap();
    let b = scn.simulate(&y0, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.states.len(), a.grid.len());
    assert!(a.states.iter().all(SpectralField::is_finite));
    let c = scn.simulate(&y0, 18).unwrap();
    assert_ne!(a, c);

    let times = grid(0.0, 0.5, 50);
    let stats = || {
        let mut acc = EnsembleStats::new(times.clone());
        run_paths(
            150,
            9,
            |_, seed| Ok(simulate_trajectory(&scn.model, &y0, &times, seed)?.sq_norms()),
            |_, v| {
                acc.push_path(&v);
                Ok(())
            },
        )
        .unwrap();
        acc
    };
    let (s1, s2) = (stats(), stats());
    assert_eq!(s1.means(), s2.means());
    assert_eq!(s1.std_errors(), s2.std_errors());
}

#[test]
fn picard_with_state_free_coefficients_converges_in_one_iteration() {
    let basis = Basis::new(BasisSpec { n_modes: 8, quadrature_points: 32 }).unwrap();
    let m = Model::new(
        basis,
        EvolutionFamily::heat(),
        IntensityMeasure::none(),
        WienerSpec::inverse_square(4, 0.5),
        Nonlinearities::additive(),
    )
    .unwrap();
    let out = picard_solve(&m, 1.0, 0.01, 1.0, 10, 5, 4, 1e-12).unwrap();
    assert!(out.report.converged);
    assert_eq!(out.report.iterates, 1);
    assert!(out.report.sup_norm_gaps[0] > 0.0);
    assert_eq!(out.report.sup_norm_gaps[1], 0.0);
}

#[test]
fn picard_gaps_contract_for_the_heat_example() {
    let mc = McPlan { horizon: 1.0, n_paths: 100, ..McPlan::default() };
    let scn = build_heat_example(DEFAULT_A, mc).unwrap();
    let cs = scn.constants();
    let theta = 4.0 * cs.m * cs.m * cs.lipschitz * cs.x();
    let out = picard_solve(&scn.model, 1.0, 0.01, scn.burn_in(), 40, 2, 8, 1e-6).unwrap();
    let r = &out.report;
    assert!(r.converged, "{r:?}");
    let active: Vec<f64> = r.sup_norm_gaps.iter().copied().take_while(|g| *g > 1e-14).collect();
    assert!(active.windows(2).skip(1).all(|w| w[1] < w[0]), "{:?}", r.sup_norm_gaps);
    assert!(r.contraction_rate_hat <= theta * 1.1, "{} vs {theta}", r.contraction_rate_hat);
    assert!(r.truncation_factor <= 1.0001e-8);
    assert_eq!(out.sample.states.len(), out.final_sq_norm.times.len());
}
