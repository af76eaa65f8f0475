//! Numerical laboratory for skew products of quadratic maps over uniformly
//! expanding base maps.
//!
//! The object of study is the map
//!
//! ```text
//! F(theta, y) = (h(theta), Q_b(y) + alpha * phi(theta))
//! ```
//!
//! on `I_a x [-sqrt(2b), sqrt(2b)]`, where `Q_c(x) = c - x^2` is a quadratic
//! map whose critical orbit is strictly pre-periodic, `h = h0^{m1}` is the
//! `m1`-th iterate of the base map `Q_a` conjugated to expanding coordinates,
//! and `phi` is a polynomial coupling of small size `alpha`.
//!
//! The crate builds the system from certified parameters and verifies, at
//! desk scale, the quantitative properties one expects from it: two positive
//! Lyapunov exponents, non-flatness of evolved horizontal curves, slow
//! recurrence to the critical line `y = 0`, and existence/uniqueness
//! diagnostics for the absolutely continuous invariant measure.
//!
//! Module layout mirrors the pipeline:
//!
//! * [`mt`] — certification of strictly pre-periodic quadratic parameters and
//!   their post-critical data.
//! * [`expanding`] — the singular metric, the expanding coordinate change,
//!   Markov partitions and inverse branches of the conjugated base map.
//! * [`skew`] — assembly and iteration of the skew product, Lyapunov
//!   exponents, and the derived constants of the parameter regime.
//! * [`curves`] — evolution of horizontal curves, the truncated series family
//!   approximating their derivatives, non-flatness and separation tests.
//! * [`measures`] — transfer-operator discretization, attractor covers, and
//!   the recurrence Monte-Carlo experiments.
//!
//! Everything is deterministic: all randomness flows from explicit 64-bit
//! seeds through counter-based generators ([`rng::CounterRng`]), and parallel
//! reductions happen in fixed index order.

pub mod cheb;
pub mod curves;
pub mod dd;
pub mod error;
pub mod expanding;
pub mod measures;
pub mod mt;
pub mod quad;
pub mod rng;
pub mod skew;

pub use error::{Error, Result};
