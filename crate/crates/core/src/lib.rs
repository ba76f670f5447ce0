//! Simulation of semilinear stochastic evolution equations driven by
//! two-sided Lévy noise, with diagnostics for square-mean almost automorphic
//! and ergodic behaviour of their mild solutions.

pub mod automorphy;
pub mod conditions;
pub mod ensemble;
pub mod error;
pub mod evolution;
pub mod mild;
pub mod noise;
pub mod nonlinear;
pub mod numerics;
pub mod scenario;
pub mod spectral;

pub use automorphy::{ErgodicReport, SquaredNormSamples, Trend, WeightFunction, WeightKind};
pub use conditions::{ConditionReport, ConstantSet};
pub use error::{Error, Result};
pub use evolution::{EvolutionFamily, FamilyConfig, FamilyKind, PotentialIntegralCache};
pub use mild::{Model, PicardReport, Trajectory};
pub use noise::{
    build_intensity, sample_noise_path, two_sided_extend, IntensityMeasure, JumpEvent, JumpLaw,
    MeasureSpec, NoisePath, Regime, WienerSpec,
};
pub use nonlinear::{FrozenMap, Nonlinearities, PointwiseMap, StateFn, Term, TimeFactor};
pub use scenario::{McPlan, Scenario, ScenarioConfig};
pub use spectral::{eval_field, project_function, Basis, BasisSpec, SpectralField};
