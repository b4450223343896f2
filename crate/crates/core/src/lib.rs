//! Budget-constrained dynamic sensor masking for final-state opacity.
//!
//! A system is modelled as a hidden Markov model whose emissions depend on a
//! sensor configuration chosen by a randomized mask. The mask is a softmax
//! policy over the product of system states and configurations. The crate
//! evaluates the observer's residual uncertainty about a secret predicate of
//! the final state (conditional entropy, in bits) together with its exact
//! gradient via observable operators, evaluates the expected masking cost,
//! and runs a primal-dual loop that maximizes entropy under a cost budget.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the `F64`
//! aliases below are what the CLI and most callers use.

pub mod cost;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod inference;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod policy;
pub mod scalar;
pub mod scenarios;

pub use cost::{exact_value, exact_value_gradient, reinforce_value_gradient, sample_trajectories, Trajectory};
pub use entropy::{
    exact_conditional_entropy, exact_entropy_gradient, sampled_conditional_entropy, sampled_entropy_gradient,
    EntropyEstimate, EstimateMode, DEFAULT_ENUMERATION_CAP,
};
pub use error::{Error, Result};
pub use inference::{ObservableOperatorSet, OperatorModel, SecretPosterior, SequenceEvaluator};
pub use model::{binary_entropy, HmmSpec, MaskMdp};
pub use optimizer::{lagrangian, synthesize, LagrangianState, SynthesisConfig, SynthesisTrace, TraceRow};
pub use policy::{ConditioningMode, PolicyParams};
pub use scalar::Scalar;
pub use scenarios::{GridworldConfig, SensorScenario};

pub type HmmSpecF64 = HmmSpec<f64>;
pub type MaskMdpF64 = MaskMdp<f64>;
pub type PolicyParamsF64 = PolicyParams<f64>;
pub type SensorScenarioF64 = SensorScenario<f64>;
pub type GridworldConfigF64 = GridworldConfig<f64>;
pub type SynthesisConfigF64 = SynthesisConfig<f64>;
pub type SynthesisTraceF64 = SynthesisTrace<f64>;

pub type HmmSpecF32 = HmmSpec<f32>;
pub type MaskMdpF32 = MaskMdp<f32>;
pub type PolicyParamsF32 = PolicyParams<f32>;
