//! Quantitative analysis of slow-fast stochastic differential equations.
//!
//! The crate works with systems of the form
//!
//! ```text
//! dx_t = (1/ε) f(x_t, y_t, ε) dt + (σ/√ε) F(x_t, y_t, ε) dW_t
//! dy_t = g(x_t, y_t, ε) dt + ρσ G(x_t, y_t, ε) dW_t
//! ```
//!
//! where `x ∈ ℝⁿ` is fast, `y ∈ ℝᵐ` is slow and `W` is a shared
//! k-dimensional Brownian motion. Around a uniformly asymptotically stable
//! slow manifold the sample paths concentrate in an ellipsoidal layer
//! `B(h) = {⟨x − x̄(y,ε), X̄(y,ε)⁻¹ (x − x̄(y,ε))⟩ < h²}` whose cross-section
//! is a Lyapunov-equation solution. The modules build that geometry and
//! measure first-exit statistics, slow-variable spreading and
//! bifurcation-passage scaling by Monte Carlo at desk scale:
//!
//! * [`model`] — system definitions, validation, and the benchmark catalog;
//! * [`manifold`] — slow manifold `x*(y)`, adiabatic correction, stability;
//! * [`lyap`] — Lyapunov solves, controllability, the concentration metric;
//! * [`flow`] — reduced orbits, principal solutions, χ-functions, covariance
//!   evolution;
//! * [`sde`] — Euler-Maruyama integrators with reproducible noise streams;
//! * [`exitlab`] — layer membership, first-exit estimation, exponent fits;
//! * [`bif`] — stable/bifurcating splitting, centre-manifold metric,
//!   pitchfork scaling experiments;
//! * [`cli`] — experiment configs, dispatch and CSV artifacts.
//!
//! Every Monte Carlo entry point takes a master seed and derives one
//! independent noise stream per path, so results are bit-identical across
//! reruns and worker counts. See the `examples/` directory for one runnable
//! example per capability.

pub mod bif;
pub mod cli;
pub mod error;
pub mod exitlab;
pub mod flow;
pub mod linalg;
pub mod lyap;
pub mod manifold;
pub mod model;
pub mod sde;

pub use error::{Error, Result};
