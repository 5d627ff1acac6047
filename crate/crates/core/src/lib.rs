//! Koopman–van Hove dynamics on a discretised phase plane: prequantum
//! evolution, its contact-geometric lift, the Madelung / hydrodynamic
//! picture, density-matrix evolution and a Schrödinger / quantum
//! hydrodynamics comparison.

pub mod contact;
pub mod diag;
pub mod error;
pub mod field;
pub mod grid;
pub mod hamiltonian;
pub mod interp;
pub mod io;
pub mod kvh;
pub mod liouville;
pub mod madelung;
mod par;
pub mod qhd;
pub mod vonneumann;

pub use contact::ContactTransform;
pub use diag::{Outcome, Warning};
pub use error::{Error, Result};
pub use field::ScalarField;
pub use grid::{BoundaryMode, Direction, PhaseGrid, Stencil};
pub use hamiltonian::{HamiltonianSpec, OneForm, Polynomial};
pub use interp::{BicubicInterpolator, PhaseSpaceFn, SpectralInterpolator};
pub use liouville::DensityField;
pub use madelung::{HydroState, PolarPair};
pub use qhd::{Line, QWaveFunction};
pub use vonneumann::VNKernel;
pub use kvh::{EvolveOptions, ExitPolicy, GaussianPacket, PrequantumOperator, Scheme, Trajectory, WaveFunction};

pub type C64 = num_complex::Complex64;
