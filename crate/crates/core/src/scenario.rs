//! Scenario files, validation, and the stochastic heat equation example.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::automorphy::{WeightFunction, WeightKind, R_GRID};
use crate::conditions::{empirical_lipschitz, example_lipschitz, ConstantSet};
use crate::error::{Error, Result};
use crate::evolution::{estimate_dissipation, EvolutionFamily, FamilyConfig, FamilyKind};
use crate::mild::{default_burn_in, simulate_trajectory, Model, Trajectory};
use crate::noise::{build_intensity, JumpLaw, MeasureSpec, WienerSpec};
use crate::nonlinear::{Nonlinearities, PointwiseMap, StateFn, Term, TimeFactor};
use crate::spectral::{Basis, BasisSpec, SpectralField};

/// The shipped heat example configuration.
pub const HEAT_EXAMPLE_TOML: &str = include_str!("../scenarios/heat_example.toml");

/// Default coefficients `a₁..a₆` of the example.
pub const DEFAULT_A: [f64; 6] = [0.1; 6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPlan {
    pub n_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    /// History length before time 0; derived from `(M, δ)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<f64>,
    pub root_seed: u64,
    pub picard_max_iter: usize,
    pub picard_tol: f64,
}

impl Default for McPlan {
    fn default() -> Self {
        Self {
            n_paths: 200,
            dt: 0.01,
            horizon: 5.0,
            burn_in: None,
            root_seed: 20_240_601,
            picard_max_iter: 10,
            picard_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    HeatExample { a: [f64; 6] },
    Custom,
}

/// Serializable scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub origin: Origin,
    pub basis: BasisSpec,
    pub family: FamilyConfig,
    pub wiener: WienerSpec,
    pub jumps: MeasureSpec,
    pub nonlinearities: Nonlinearities,
    pub weight: WeightKind,
    pub mc: McPlan,
    pub constants: ConstantSet,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Builds runtime objects. Structural problems are errors; softer
    /// problems are left to [`validate`].
    pub fn build(&self) -> Result<Scenario> {
        let basis = Basis::new(self.basis)?;
        let nu = build_intensity(&self.jumps)?;
        let wiener = WienerSpec::new(self.wiener.eigenvalues().to_vec())?;
        let weight = WeightFunction::from_kind(self.weight)?;
        let provisional = EvolutionFamily::new(
            FamilyConfig {
                kind: FamilyKind::HeatSemigroup,
                ..self.family.clone()
            },
            (0.0, 1.0),
        )?;
        let burn = self.mc.burn_in.unwrap_or_else(|| default_burn_in(&provisional));
        let reach = self.mc.horizon.max(R_GRID[R_GRID.len() - 1]) + 1.0;
        let family = EvolutionFamily::new(self.family.clone(), (-(reach + burn + 1.0), reach))?;
        let model = Model::new(basis, family, nu, wiener, self.nonlinearities.clone())?;
        Ok(Scenario {
            config: self.clone(),
            model,
            weight,
            burn_in: burn,
        })
    }
}

/// A validated-to-build scenario with its runtime model.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Model,
    pub weight: WeightFunction,
    burn_in: f64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        ScenarioConfig::from_toml(text)?.build()
    }

    pub fn mc(&self) -> &McPlan {
        &self.config.mc
    }

    pub fn burn_in(&self) -> f64 {
        self.burn_in
    }

    pub fn constants(&self) -> ConstantSet {
        self.config.constants
    }

    /// Constants implied by the model itself.
    pub fn implied_constants(&self) -> ConstantSet {
        ConstantSet::new(
            self.model.family.m(),
            self.model.family.delta(),
            self.model.nu.mass_large,
            self.model.nl.lipschitz,
        )
    }

    /// Uniform grid on `[0, horizon]`.
    pub fn grid(&self) -> Vec<f64> {
        let mc = &self.config.mc;
        let n = ((mc.horizon / mc.dt) - 1e-9).ceil().max(1.0) as usize;
        (0..=n).map(|k| k as f64 * mc.dt).collect()
    }

    pub fn simulate(&self, y0: &SpectralField, seed: u64) -> Result<Trajectory> {
        simulate_trajectory(&self.model, y0, &self.grid(), seed)
    }
}

fn qp(omega: f64) -> TimeFactor {
    TimeFactor::QuasiPeriodic { omega }
}

/// Nonlinearities of the heat example with coefficients `a`.
pub fn heat_example_nonlinearities(a: [f64; 6]) -> Result<Nonlinearities> {
    let lipschitz = example_lipschitz(a)?;
    let s2 = SQRT_2;
    let s3 = 3f64.sqrt();
    let jump = PointwiseMap::new(vec![
        Term::new(a[4], qp(s2), StateFn::Identity),
        Term::new(a[5], TimeFactor::Eta, StateFn::Sin),
    ]);
    Ok(Nonlinearities {
        drift: PointwiseMap::new(vec![
            Term::new(a[0], qp(s2), StateFn::Identity),
            Term::new(a[1], TimeFactor::Eta, StateFn::Cos),
        ]),
        diffusion: PointwiseMap::new(vec![
            Term::new(a[2], qp(s3), StateFn::Identity),
            Term::new(a[3], TimeFactor::Eta, StateFn::Sin),
        ]),
        small_jump: jump.clone(),
        large_jump: jump,
        lipschitz,
    })
}

/// Example noise: `Tr Q = 1/2` over 8 modes; jumps along `e_1` with an atom of
/// mass 0.3 at amplitude 1 and uniform small amplitudes of total mass 0.7 and
/// mean square 0.1 (so the compensator vanishes).
pub fn heat_example_noise() -> (WienerSpec, MeasureSpec) {
    let b = 0.3f64.sqrt();
    (
        WienerSpec::inverse_square(8, 0.5),
        MeasureSpec {
            components: vec![
                JumpLaw::Atom { at: 1.0, mass: 0.3 },
                JumpLaw::Uniform {
                    lo: -b,
                    hi: b,
                    density: 0.7 / (2.0 * b),
                },
            ],
            small_direction: 1,
            large_direction: 1,
        },
    )
}

/// Configuration of the stochastic heat equation with the almost automorphic
/// potential family, weight `e^{-t}` and coefficients `a`.
pub fn heat_example_config(a: [f64; 6], mc: McPlan) -> Result<ScenarioConfig> {
    let nonlinearities = heat_example_nonlinearities(a)?;
    let (wiener, jumps) = heat_example_noise();
    let c = build_intensity(&jumps)?.mass_large;
    let family = FamilyConfig::example();
    Ok(ScenarioConfig {
        origin: Origin::HeatExample { a },
        basis: BasisSpec::default(),
        constants: ConstantSet::new(family.m, family.delta, c, nonlinearities.lipschitz),
        family,
        wiener,
        jumps,
        nonlinearities,
        weight: WeightKind::ExpDecay,
        mc,
    })
}

pub fn build_heat_example(a: [f64; 6], mc: McPlan) -> Result<Scenario> {
    heat_example_config(a, mc)?.build()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionSpec {
    pub automorphic_part: Nonlinearities,
    pub pseudo_part: Nonlinearities,
}

/// Splits the example's coefficients into the recurrent terms (`a₁, a₃, a₅`)
/// and the η-gated terms (`a₂, a₄, a₆`), checking the sum on random probes.
pub fn split_decomposition(scn: &Scenario) -> Result<DecompositionSpec> {
    if !matches!(scn.config.origin, Origin::HeatExample { .. }) {
        return Err(Error::Unsupported(
            "decomposition is only declared for the heat example".into(),
        ));
    }
    let nl = &scn.model.nl;
    let (auto, pseudo) = nl.split();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let t = rng.gen_range(-20.0..20.0);
        let u = rng.gen_range(-5.0..5.0);
        for ((whole, a), p) in nl.maps().iter().zip(auto.maps()).zip(pseudo.maps()) {
            let diff = (a.eval(t, u) + p.eval(t, u) - whole.eval(t, u)).abs();
            if diff > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "decomposition mismatch {diff:e} at t = {t}, u = {u}"
                )));
            }
        }
    }
    Ok(DecompositionSpec {
        automorphic_part: auto,
        pseudo_part: pseudo,
    })
}

/// All scenario diagnostics; empty means clean.
pub fn validate(cfg: &ScenarioConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mc = &cfg.mc;
    if !(mc.dt > 0.0) {
        out.push(format!("nonpositive step: dt = {}", mc.dt));
    } else if !(mc.horizon >= 10.0 * mc.dt) {
        out.push(format!("horizon {} shorter than 10 steps of {}", mc.horizon, mc.dt));
    }
    if mc.n_paths < 100 {
        out.push(format!("n_paths = {} is below 100", mc.n_paths));
    }
    if mc.picard_max_iter == 0 {
        out.push("picard_max_iter must be positive".into());
    }
    if let Some(b) = mc.burn_in {
        if !(b >= 0.0) {
            out.push(format!("negative burn-in {b}"));
        }
    }
    let scn = match cfg.build() {
        Ok(s) => s,
        Err(e) => {
            out.push(format!("scenario does not build: {e}"));
            return out;
        }
    };
    let declared = cfg.constants;
    let implied = scn.implied_constants();
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
    for (name, a, b) in [
        ("M", declared.m, implied.m),
        ("delta", declared.delta, implied.delta),
        ("c", declared.c, implied.c),
        ("L", declared.lipschitz, implied.lipschitz),
    ] {
        if !close(a, b) {
            out.push(format!("constant {name} = {a} disagrees with the model value {b}"));
        }
    }
    if let Err(e) = empirical_lipschitz(&scn.model, &scn.model.nl, 1000, mc.root_seed) {
        out.push(format!("Lipschitz: {e}"));
    }
    let n = scn.model.n_modes().min(4);
    let probes: Vec<_> = [0.01, 0.03, 0.1, 0.3, 1.0, 2.0, 5.0]
        .iter()
        .enumerate()
        .flat_map(|(i, &g)| {
            let s = -1.7 + 0.37 * i as f64;
            (1..=n).map(move |k| (s + g, s, SpectralField::unit(n, k)))
        })
        .collect();
    if let Err(e) = estimate_dissipation(&scn.model.family, &probes) {
        out.push(format!("dissipation: {e}"));
    }
    out
}

/// `u₀ = e_1 + e_2` and similar helpers for the examples.
pub fn modes(n_modes: usize, entries: &[(usize, f64)]) -> SpectralField {
    let mut f = SpectralField::zeros(n_modes);
    for &(k, v) in entries {
        f[k - 1] = v;
    }
    f
}

/// `δ = π² − 1` of the example family.
pub const EXAMPLE_DELTA: f64 = PI * PI - 1.0;
