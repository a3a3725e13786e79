//! Ergodic coverage trajectories from an annular latent process.
//!
//! The pipeline has two stages. A radial back-and-forth process on the
//! annulus `δ ≤ ‖z‖ ≤ 1` is exactly uniform per cycle ([`latent`]); a
//! time-conditioned velocity field trained by minibatch-OT conditional flow
//! matching ([`cfm`]) is integrated into a pushforward map ([`flow`]) that
//! carries the latent trajectory onto a prescribed target density
//! ([`targets`]). Because ergodicity survives any measurable pushforward, the
//! composed trajectory covers the achieved density at the i.i.d. Monte-Carlo
//! rate; [`eval`] measures how close that density is to the target and
//! evaluates the energy, convergence and approximation diagnostics.

pub mod assignment;
pub mod cfm;
pub mod energy;
pub mod error;
pub mod eval;
pub mod fleet;
pub mod flow;
pub mod latent;
pub mod net;
pub mod ot;
pub mod presets;
pub mod rng;
pub mod targets;
pub mod trajectory;

pub use error::{Error, Result};

/// A point (or vector) in the plane.
pub type Point = [f64; 2];

#[inline]
pub(crate) fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

#[inline]
pub(crate) fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[inline]
pub(crate) fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}
