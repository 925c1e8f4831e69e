//! Reconstruction of a weak refractive-index perturbation from
//! intensity-only (phaseless) wave measurements on a sphere.
//!
//! The library covers the full desk-scale workflow:
//!
//! * synthesize travel times, amplitudes and intensity-vs-frequency series
//!   for an analytic phantom ([`phantom`], [`forward`]);
//! * recover the travel time and amplitude of each chord from its frequency
//!   sweep ([`extract`]);
//! * invert travel-time data slice by slice with filtered backprojection
//!   ([`radon`]);
//! * invert amplitude data through the weighted ray transform, an Abel-type
//!   reduction and a Volterra iteration ([`abel`]), followed by a Dirichlet
//!   solve on the ball ([`elliptic`]);
//! * compare reconstructions against the exact phantom ([`volume`]) and run
//!   everything end to end from a JSON configuration ([`pipeline`]).
//!
//! A narrative guide with runnable examples lives in the `book/` directory
//! and is kept in sync with the crate by doc-testing its chapters (see
//! [`guide`]).

pub mod abel;
pub mod elliptic;
pub mod error;
pub mod extract;
pub mod forward;
pub mod geometry;
pub mod guide;
pub mod io;
pub mod math;
pub mod phantom;
pub mod pipeline;
pub mod radon;
pub mod volume;

pub use error::{Error, Result};
