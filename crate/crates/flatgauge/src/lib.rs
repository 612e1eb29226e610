//! Numerical laboratory for multiscale boundary flatness.
//!
//! The crate measures how far a pair of disjoint open sets is from the
//! half-space model, at every location and scale: spherical-trace mismatch
//! coefficients, Dirichlet eigenvalues of spherical regions and their
//! characteristic constants, Jones-type beta numbers, dyadic lattices and
//! corona decompositions over boundary samples, Carleson-type square
//! function sums, the Alt-Caffarelli-Friedman functional, and walk-on-spheres
//! harmonic measure. Everything is driven by analytic test domains with
//! closed-form oracles.

pub mod acf;
pub mod boundary;
pub mod carleson;
pub mod corona;
pub mod domain;
pub mod error;
pub mod flatness;
pub mod geo;
pub mod lattice;
pub mod sphere;
pub mod spectra;
pub mod table;
pub mod wos;

pub use boundary::{estimate_adr_constants, sample_boundary, BoundarySample};
pub use domain::{Classification, DomainPair};
pub use error::Error;
pub use geo::{HalfSpaceParam, PlaneParam, Point};
pub use sphere::{build_grid, region_measure, trace_region, RegionMask, SphereGrid};
pub use spectra::{a_coefficient, characteristic_constant, CharacteristicConstant};

