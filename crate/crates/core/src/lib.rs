//! Equilibrium propagation for fixed-point recurrent networks whose dynamics
//! follow a general vector field.
//!
//! The network state relaxes under `ds/dt = mu(x, s)` to a free fixed point;
//! a second phase adds a weak pull `beta * (y - s_0)` on the output layer and
//! relaxes again. The local, Hebbian-style update `rho(s_j) * ds_i / beta`
//! between the two fixed points approximates `-dJ/dtheta`, exactly so when
//! the Jacobian of `mu` is symmetric.
//!
//! - [`dynamics`]: vector fields, cost, clipped-Euler relaxation, prediction
//! - [`learning`]: two-phase training, update estimates, closed-form `nu` and gradient
//! - [`rbp`]: recurrent backpropagation and the temporal-derivative process
//! - [`diagnostics`]: finite-difference oracles, fixed-point derivative checks, alignment
//! - [`mnist`]: IDX loading and deterministic subsetting
//! - [`exec`]: parallel map with a sequential fallback

// Negated float comparisons in this crate are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod learning;
pub mod linearize;
pub mod mnist;
pub mod network;
pub mod rbp;

pub use activation::Activation;
pub use dynamics::{
    cost, mu, mu_augmented, objective, predict, relax, AlphaOrder, EulerSign, FixedPointResult, HyperParams, Phase1Init,
};
pub use error::{Error, Phase, Result};
pub use exec::Execution;
pub use learning::{
    apply_update, grad_exact, nu_estimate, nu_exact, run_two_phases, train_epoch, EpochStats, PhasePair, UpdateMode,
};
pub use network::{FieldKind, LayeredNetwork, NetworkState, ParamDelta};
