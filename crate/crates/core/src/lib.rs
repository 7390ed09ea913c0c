//! Minimax neural solver for elliptic boundary-value problems.
//!
//! A trial network `u_θ` and a multiplier network `v_τ` play a saddle-point
//! game on the Monte Carlo Lagrangian
//!
//! ```text
//! L(θ, τ) = Σ_s |Γ_s| / (2 N_s) Σ (B u_θ − g)²  +  |Ω| / N Σ (A u_θ − f) · v_τ
//! ```
//!
//! trained by alternating RMSprop ascent on `τ` and descent on `θ`. PDE
//! residuals come from second-order jets propagated through the trial network
//! ([`jet`], [`tape`]); parameter gradients come from a reverse sweep over the
//! recorded jet computation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases below fix the double-precision instantiation used by the CLI.

pub mod error;
pub mod experiments;
pub mod fd;
pub mod geometry;
pub mod jet;
pub mod loss;
pub mod network;
pub mod problems;
pub mod scalar;
pub mod tape;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use jet::{Jet, JetBatch};
pub use network::MlpNet;
pub use scalar::Scalar;
pub use tape::{AdjointTape, JetMatrix, Order};

pub type Jet64 = Jet<f64>;
pub type Jet32 = Jet<f32>;
pub type MlpNet64 = MlpNet<f64>;
pub type MlpNet32 = MlpNet<f32>;
