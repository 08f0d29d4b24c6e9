//! Numerical core for one-hidden-layer normalizing flows.
//!
//! Two model families are implemented over the same parameter containers:
//!
//! * **UNF** (unconstrained): the Jacobian diagonal `∂f_i/∂x_i` is modeled as
//!   `φ(N_i)` with `φ = ELU+1 > 0`, a ReLU network `N_i` over the normalized
//!   embedding of `x_{1:i}`, and `f_i` recovered by rectangle quadrature.
//! * **CNF** (constrained): `f_i` is a tanh network over `x_{1:i}` trained with
//!   projected SGD keeping the weight on its own coordinate at least `ε`.
//!
//! On top of the forward passes the crate carries hand-rolled exact gradients,
//! SGD / projected-SGD training, the linearized (pseudo-network) counterparts
//! with coupling and convexity diagnostics, flow inversion and density
//! evaluation, and synthetic dataset generators.
//!
//! The crate is `no_std` (with `alloc`); scalar math goes through `libm` so
//! results do not depend on the host `std` build. All randomness flows through
//! the seeded generator in [`rng`], which makes every run reproducible from
//! its config.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod activations;
pub mod datasets;
pub mod density;
mod error;
pub mod linalg;
pub mod loss;
mod math;
pub mod model;
pub mod pseudo;
pub mod quad;
pub mod rng;
pub mod train;

pub use error::CoreError;
pub use model::{BaseDist, DimOffsets, Family, FlowModel, FlowParams, Offsets};
pub use rng::Rng;
