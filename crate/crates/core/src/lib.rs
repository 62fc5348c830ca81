//! Numerical machinery for two-scale quantum dynamics.
//!
//! A composite body is described by an *external* wave over its center of
//! mass and a *relative* wave over internal coordinates. This crate evolves
//! both, extracts their Madelung density/action, integrates de Broglie–Bohm
//! and Newton trajectories, computes classical min-plus actions, and runs the
//! mean-field system for individual internal waves.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bohm;
pub mod classical;
pub mod coherent;
pub mod error;
pub mod field;
pub mod grid;
pub mod io;
pub mod madelung;
pub mod manybody;
pub mod potential;
pub mod propagator;
pub mod spectral;
pub mod two_scale;

pub use error::{Error, Result};
pub use field::{gaussian_packet, Frame, PolarField, WaveField};
pub use grid::{Axis, Grid, Point};
pub use potential::{Barrier, PairPotential, PotentialSpec};
pub use propagator::{EvolutionRecord, Splitting, Stepping};
