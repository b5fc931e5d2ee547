//! Noncommutative topological invariants on finite-volume lattice models.
//!
//! This crate discretizes continuum magnetic Schrödinger operators with
//! disorder onto finite boxes, builds Fermi projections and Fermi unitaries
//! from dense spectral data, and evaluates the trace-per-unit-volume pairings
//! that detect topological phases: even and odd Chern numbers, Fredholm index
//! compressions, the real-space triple-overlap index, and their mod-2
//! refinements for time-reversal symmetric models. Sobolev-norm diagnostics
//! and kernel-decay fits quantify when those pairings are trustworthy, and a
//! strip geometry exposes the boundary spectral flow matched against the bulk
//! invariant.
//!
//! The crate is organized bottom-up:
//!
//! - [`clifford`]: exact complex Clifford representations and the mod-8
//!   index classification of symmetry classes,
//! - [`lattice`]: magnetic hopping Hamiltonians on box, torus and strip
//!   geometries, with reproducible disorder ensembles,
//! - [`spectral`]: dense diagonalization (with an on-disk cache), Fermi
//!   projections, Fermi unitaries, and smooth switch functions,
//! - [`invariants`]: window traces and the Chern / index pairings,
//! - [`sobolev`]: position-weighted Schatten norms, decay fits, and
//!   localization-length reports,
//! - [`bulkedge`]: edge unitaries, boundary winding, and the bulk-edge
//!   comparison,
//! - [`harness`]: batch experiment driver shared by the CLI and the tests.

extern crate blas_src;

pub mod bulkedge;
pub mod clifford;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod invariants;
pub mod lattice;
pub mod sobolev;
pub mod spectral;

pub use error::{Error, Result};

/// Complex double-precision scalar used for every operator kernel.
pub type C64 = num_complex::Complex64;

/// Dense complex matrix; all operators on the finite lattice are stored dense.
pub type CMat = ndarray::Array2<C64>;

/// Dense real vector, used for spectra and position coordinates.
pub type RVec = ndarray::Array1<f64>;
