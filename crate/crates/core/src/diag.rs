//! Non-fatal diagnostics attached to results.

use std::fmt;

use crate::field::ScalarField;

#[derive(Clone, Debug, PartialEq)]
pub enum Warning {
    /// Fraction of `|Ψ|²` (or `|ρ|`) mass inside the boundary margin.
    BoundarySupport { margin_mass: f64 },
    /// `dt · max|X_H| / min(dq, dp)` above the advisory bound.
    Cfl { courant: f64, bound: f64 },
    /// Characteristics that left the box and were handled by the exit policy.
    DomainExits { count: usize },
    /// A density that is expected to stay nonnegative dipped below zero.
    NegativeDensity { min: f64 },
    /// Nodes whose phase was masked because the density was below threshold.
    MaskedNodes { count: usize },
    /// An operator expected to be Hermitian is not, to the stated residual.
    NonHermitian { residual: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::BoundarySupport { margin_mass } => {
                write!(f, "support reaches the boundary margin (mass fraction {margin_mass:.3e})")
            }
            Warning::Cfl { courant, bound } => {
                write!(f, "Courant number {courant:.3} exceeds advisory bound {bound}")
            }
            Warning::DomainExits { count } => {
                write!(f, "{count} characteristics left the domain")
            }
            Warning::NegativeDensity { min } => write!(f, "density minimum {min:.3e} < 0"),
            Warning::MaskedNodes { count } => write!(f, "{count} nodes masked in phase unwrapping"),
            Warning::NonHermitian { residual } => {
                write!(f, "operator Hermiticity residual {residual:.3e}")
            }
        }
    }
}

/// A value together with the warnings raised while computing it.
#[derive(Clone, Debug)]
pub struct Outcome<T> {
    pub value: T,
    pub warnings: Vec<Warning>,
}

impl<T> Outcome<T> {
    pub fn clean(value: T) -> Self {
        Self { value, warnings: Vec::new() }
    }

    pub fn map<U>(self, f: impl FnOnce(T) -> U) -> Outcome<U> {
        Outcome { value: f(self.value), warnings: self.warnings }
    }

    pub fn into_value(self) -> T {
        self.value
    }
}

/// Default margin: 10% of the box width on every side.
pub const BOUNDARY_MARGIN: f64 = 0.1;
/// Mass fraction in the margin above which a warning is raised.
pub const MARGIN_MASS_TOL: f64 = 1e-10;

/// Fraction of `∫|f|²` lying within `frac` of the box edges.
pub fn margin_mass_fraction(f: &ScalarField, frac: f64) -> f64 {
    let g = f.grid();
    let (nq, np) = g.shape();
    let mq = (frac * nq as f64).ceil() as usize;
    let mp = (frac * np as f64).ceil() as usize;
    let mut total = 0.0;
    let mut edge = 0.0;
    for ((i, j), v) in f.values().indexed_iter() {
        let w = v.norm_sqr();
        total += w;
        if i < mq || i + mq >= nq || j < mp || j + mp >= np {
            edge += w;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        edge / total
    }
}

pub fn support_warning(f: &ScalarField) -> Option<Warning> {
    let m = margin_mass_fraction(f, BOUNDARY_MARGIN);
    (m > MARGIN_MASS_TOL).then_some(Warning::BoundarySupport { margin_mass: m })
}
