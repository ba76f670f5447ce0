use std::path::Path;
use std::process::Command as Proc;

use levy_spde::scenario::modes;
use levy_spde::SpectralField;
use levy_spde_cli::output::OutputDir;
use levy_spde_cli::{
    load_scenario, run_command, run_local_stability, run_stability, run_stability_stage, CliError,
    Command, RunOutcome, RunPlan,
};

fn bin(args: &[&str]) -> (i32, String, String) {
    let out = Proc::new(env!("CARGO_BIN_EXE_levy-spde")).args(args).output().unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn check_prints_the_condition_table_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, stderr) = bin(&["check", "--out", path_str(dir.path())]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("existence") && stdout.contains("global_stability"));
    for f in ["conditions.json", "manifest.json", "scenario.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let conditions: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("conditions.json")).unwrap()).unwrap();
    let theta = conditions["picard_rate_bound"].as_f64().unwrap();
    assert!((theta - 0.03933).abs() < 1e-4, "{theta}");
}

#[test]
fn configuration_problems_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = path_str(dir.path());
    assert_eq!(bin(&["check", "--out", out, "--set", "mc.dt"]).0, 2);
    assert_eq!(bin(&["check", "--out", out, "--scenario", "/nonexistent/s.toml"]).0, 2);
    assert_eq!(bin(&["check", "--out", out, "--paths", "10"]).0, 2);
    assert_eq!(bin(&["check", "--out", out, "--set", "constants.L=0.5"]).0, 2);
}

#[test]
fn unwritable_output_directory_is_a_structured_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("out");
    let (code, _, stderr) = bin(&["reproduce-example", "--out", path_str(&target)]);
    assert_eq!(code, 2);
    assert!(stderr.contains("cannot write"), "{stderr}");

    let err = run_command(&RunPlan::new(Command::Check, &target)).unwrap_err();
    assert!(matches!(err, CliError::Io { ref path, .. } if path == &target), "{err:?}");
}

#[test]
fn failing_existence_condition_is_an_assertion_failure() {
    // 4a² = 1.2 exceeds the existence threshold 1.017
    let a = (1.2f64 / 4.0).sqrt();
    let dir = tempfile::tempdir().unwrap();
    let coeffs = format!("origin.a=[{a},{a},{a},{a},{a},{a}]");
    let (code, _, stderr) = bin(&["check", "--out", path_str(dir.path()), "--set", &coeffs]);
    assert_eq!(code, 1, "{stderr}");
    assert!(stderr.contains("existence condition fails"));
}

#[test]
fn rerunning_from_the_saved_scenario_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let (code, _, stderr) = bin(&["simulate", "--out", path_str(&first), "--paths", "100", "--seed", "99"]);
    assert_eq!(code, 0, "{stderr}");
    let saved = first.join("scenario.toml");
    let (code, _, _) = bin(&["simulate", "--out", path_str(&second), "--scenario", path_str(&saved)]);
    assert_eq!(code, 0);
    for f in ["trajectory_stats.csv", "sample_path.csv", "scenario.toml"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f}");
    }
    let manifest = |p: &Path| -> serde_json::Value {
        serde_json::from_str(&std::fs::read_to_string(p.join("manifest.json")).unwrap()).unwrap()
    };
    let (m1, m2) = (manifest(&first), manifest(&second));
    assert_eq!(m1["scenario_sha256"], m2["scenario_sha256"]);
    assert_eq!(m1["root_seed"], 99);
    assert_eq!(m2["n_paths"], 100);
}

#[test]
fn aborted_stage_keeps_partial_reports() {
    let dir = tempfile::tempdir().unwrap();
    let plan = RunPlan::new(Command::Ergodic, dir.path()).with_override("origin.kind", "custom");
    let err = run_command(&plan).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(dir.path().join("conditions.json").exists());
    let manifest = std::fs::read_to_string(dir.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("conditions.json"));
}

#[test]
fn identical_initial_states_have_zero_gap() {
    let scn = load_scenario(&RunPlan::new(Command::Stability, "unused").with_override("mc.horizon", "1.0")).unwrap();
    let y0 = modes(scn.model.n_modes(), &[(1, 0.7), (3, -0.2)]);
    let rep = run_stability(&scn, &y0, &y0, 0.5, 100, 5).unwrap();
    assert!(rep.gap.iter().all(|g| *g == 0.0));
    assert!(rep.exp_weighted_gap.iter().all(|g| *g == 0.0));
    assert_eq!(rep.first_increase_after(0.0), None);
    assert!(run_stability(&scn, &y0, &y0, -0.1, 100, 5).is_err());
}

#[test]
fn weighted_gap_decays_for_the_heat_example() {
    let scn = load_scenario(&RunPlan::new(Command::Stability, "unused")).unwrap();
    let n = scn.model.n_modes();
    let rep = run_stability(&scn, &SpectralField::zeros(n), &SpectralField::unit(n, 1), 0.5, 200, 11).unwrap();
    assert!(rep.gap.iter().all(|g| *g >= 0.0));
    assert_eq!(rep.first_increase_after(1.0), None);
    let at = |t: f64| rep.exp_weighted_gap[rep.times.iter().position(|s| (s - t).abs() < 1e-9).unwrap()];
    assert!(at(5.0) < 1e-10 * at(1.0));
    assert!(rep.fit_rate > 2.0 * (std::f64::consts::PI.powi(2) - 1.0) * 0.9, "{}", rep.fit_rate);
}

fn local_plan() -> RunPlan {
    // 4a² = 0.4 on the ball of radius 1
    let a = 0.1f64.sqrt();
    RunPlan::new(Command::Stability, "unused")
        .with_override("origin.a", format!("[{a},{a},{a},{a},{a},{a}]"))
        .with_override("constants.ball_r", "1.0")
}

#[test]
fn ball_invariance_from_an_admissible_start() {
    let scn = load_scenario(&local_plan()).unwrap();
    assert!((scn.constants().lipschitz - 0.4).abs() < 1e-12);
    let n = scn.model.n_modes();
    let probe = run_local_stability(&scn, 1.0, &SpectralField::zeros(n), 0.5, 100, 3).unwrap();
    let r1 = probe.r1_bound;
    assert!(r1 > 0.0 && r1 < 1.0, "{r1}");
    let y0 = SpectralField::unit(n, 1).scaled(r1);
    let rep = run_local_stability(&scn, 1.0, &y0, 0.5, 200, 3).unwrap();
    assert_eq!(rep.first_exit, None);
    rep.ensure_invariant().unwrap();
    assert!(rep.sq_norm.iter().all(|v| *v <= 1.0));
    assert_eq!(rep.stability.first_increase_after(0.5), None);
}

#[test]
fn local_run_rejects_a_start_on_the_sphere() {
    let scn = load_scenario(&local_plan()).unwrap();
    let y0 = SpectralField::unit(scn.model.n_modes(), 2);
    let err = run_local_stability(&scn, 1.0, &y0, 0.5, 100, 3).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("exceeds the admissible radius"));
}

#[test]
fn stability_stage_with_ball_radius_writes_the_local_report() {
    let dir = tempfile::tempdir().unwrap();
    let plan = local_plan().with_override("mc.n_paths", "100").with_override("mc.horizon", "2.0");
    let scn = load_scenario(&plan).unwrap();
    let mut out = OutputDir::create(dir.path()).unwrap();
    let mut log = RunOutcome::default();
    run_stability_stage(&scn, &mut out, &mut log, 0.4).unwrap();
    assert!(log.failures.is_empty(), "{:?}", log.failures);
    assert!(dir.path().join("local_stability.json").exists());
    assert!(dir.path().join("stability_report.csv").exists());
}

#[test]
fn inflated_coefficients_demote_stability_to_a_diagnostic() {
    // 4a² = 0.9: existence holds, global stability does not
    let a = (0.9f64 / 4.0).sqrt();
    let dir = tempfile::tempdir().unwrap();
    let coeffs = format!("origin.a=[{a},{a},{a},{a},{a},{a}]");
    let (code, _, stderr) = bin(&["reproduce-example", "--out", path_str(dir.path()), "--paths", "100", "--set", &coeffs]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stderr.contains("warning: global stability condition fails"), "{stderr}");
    assert!(!stderr.contains("FAILED"));
    let conditions = std::fs::read_to_string(dir.path().join("conditions.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&conditions).unwrap();
    let rows = v["conditions"].as_array().unwrap();
    assert_eq!(rows[0]["pass"], true);
    assert_eq!(rows[1]["name"], "global_stability");
    assert_eq!(rows[1]["pass"], false);
    for f in ["picard_report.json", "ergodic_report.csv", "stability_report.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}
