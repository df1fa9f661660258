//! Constrained diffusion sampling: reverse diffusion chains whose iterates
//! are projected onto symbolic constraint sets, for continuous vectors
//! (Euclidean projections) and token sequences (KL projections).
//!
//! ```
//! use nsd_core::models::{GaussianMixture, NoiseSchedule, ScoreModel};
//! use nsd_core::projections::{AlmConfig, ConstraintSet, LinearConstraint};
//! use nsd_core::sampler_continuous::sample_constrained;
//!
//! let sched = NoiseSchedule::linear(50);
//! let gmm = GaussianMixture::isotropic(vec![0.0, 0.0], 1.0).unwrap();
//! let model = ScoreModel::analytic(gmm, sched.clone());
//! let cs = ConstraintSet::new().with(LinearConstraint::new(vec![1.0, 0.0], 0.5).unwrap());
//! let (samples, _trace) = sample_constrained(&model, &sched, &cs, &AlmConfig::default(), 8, 7).unwrap();
//! assert!(samples.iter().all(|x| x[0] <= 0.5 + 1e-8));
//! ```

// `!(x > 0.0)` style checks are there to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constraints_domain;
pub mod error;
pub mod models;
pub mod numerics;
pub mod projections;
pub mod sampler_continuous;
pub mod sampler_discrete;

pub use error::{Error, Result};
pub use numerics::{SeededRng, SimplexRow};
pub use projections::{Constraint, ConstraintSet};
pub use sampler_discrete::{CategoricalSequence, SequenceConstraint, SequenceConstraintSet};
