//! Computational toolkit for higher-order Fourier analysis on finite
//! abelian groups: Gowers uniformity norms, U^2/U^3 inverse extraction,
//! Bohr set regularity, exact integration of bilinear data to locally
//! quadratic phases, their lifts and nilmanifold encodings, plus repair
//! algorithms for almost homomorphisms and approximate cocycles, and a
//! small sampling laboratory for shift systems over Folner boxes.
//!
//! Exact paths (character pairings, Bohr membership, lattice work, phase
//! integration) run over arbitrary-precision rationals; analytic paths
//! (transforms, norms, correlations) run over `f64` complex numbers.

pub mod bohr;
pub mod budget;
pub mod error;
pub mod folner;
pub mod fourier;
pub mod gowers;
pub mod group;
pub mod heisenberg;
pub mod hostkra;
pub mod inverse;
pub mod lift;
pub mod linalg;
pub mod repair;
pub mod torus;

pub use budget::Budget;
pub use error::{Error, Result};
