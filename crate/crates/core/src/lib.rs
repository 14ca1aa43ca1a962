//! Numerical lab for preference optimization under different sampling schemes.
//!
//! * [`model`]: Gaussian linear policies, the quadratic oracle reward and the relative logit.
//! * [`sampling`]: Bradley–Terry labeling, standard and best-of-K pair generation.
//! * [`analytic`]: closed-form RLHF minimizer, online recursion, η/γ quadrature, Fisher matrix.
//! * [`dpo`]: DPO loss, gradients, Hessians and the online training loop.
//! * [`discrete`]: enumerable finite instances with tabular and featurized logit policies.

pub mod analytic;
pub mod discrete;
pub mod dpo;
pub mod error;
pub mod model;
pub mod quadrature;
pub mod rng;
pub mod sampling;
pub mod special;

pub use error::{LabError, Result};
pub use model::{GaussianLinearPolicy, PreferenceDataset, PreferenceTuple, RewardOracle, Vector};
pub use rng::Stream;
pub use sampling::SamplerSpec;
