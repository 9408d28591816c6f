//! Numerical laboratory for Siegel-boundary dynamics of bounded-type rotation
//! number.
//!
//! The lab studies degree-`2d-1` Blaschke products
//!
//! ```text
//!   F(z) = lambda z^d prod_{i=1}^{d-1} (1 - conj(a_i) z) / (z - a_i),
//!   |a_i| < 1,  |lambda| = 1,
//! ```
//!
//! whose restriction to the unit circle is an analytic homeomorphism with
//! critical points on the circle (the classical member is `d = 2`,
//! `a_1 = 1/3`, with a local-degree-3 critical point at `z = 1`). For
//! bounded-type rotation numbers these maps are the standard surgery models
//! of Siegel quadratics, and the combinatorial backbone of their boundary
//! dynamics — closest-return times, dynamical partitions, bubble rays,
//! puzzle disks and their moduli — can be built and measured explicitly.
//!
//! Everything here is desk-scale and deterministic: exact integer
//! combinatorics where the statements are exact, floating point with
//! reported error bars where they are geometric.
//!
//! # Modules
//!
//! * [`cf`] — continued fractions, convergents, return times `r_n`, and the
//!   exact growth/nesting inequalities they satisfy.
//! * [`circle`] — circle-map lifts, rotation-number estimation, closest
//!   return arcs, dynamical partitions and real a priori bounds,
//!   combinatorial addresses.
//! * [`blaschke`] — the Blaschke family: evaluation, validation, critical
//!   sets, and solving for `lambda` from a target rotation number.
//! * [`rays`] — Green potential of the basin of infinity, external and
//!   internal rays, equipotentials.
//! * [`bubbles`] — bubbles (iterated preimages of the unit disk), bubble
//!   rays, the initial puzzle, pullbacks along the circle, puzzle disks and
//!   fiber diameters.
//! * [`modulus`] — discrete extremal length: annulus moduli and
//!   quadrilateral path families on conductance grids, Poincaré
//!   neighborhoods of arcs, superadditivity checks.
//! * [`experiments`] — configuration, reproducible pipelines, run
//!   manifests, PNG rendering.
//!
//! # Examples
//!
//! Each major capability has a runnable example:
//!
//! ```text
//! cargo run --release --example cf_basics
//! cargo run --release --example rotation_number
//! cargo run --release --example solve_member
//! cargo run --release --example real_bounds
//! cargo run --release --example trace_rays
//! cargo run --release --example bubble_rays
//! cargo run --release --example puzzle_disks
//! cargo run --release --example annulus_moduli
//! cargo run --release --example fiber_shrinkage
//! cargo run --release --example render_basin
//! ```
//!
//! The thin `siegel-lab` binary exposes the same pipelines as subcommands
//! (`cf`, `circle`, `blaschke`, `rays`, `puzzle`, `modulus`, `verify`,
//! `render`) driven by a JSON config; see `--help`.

pub mod blaschke;
pub mod bubbles;
pub mod cf;
pub mod circle;
pub mod error;
pub mod experiments;
pub mod geom;
pub mod modulus;
pub mod rays;

pub use error::{Error, Result};
