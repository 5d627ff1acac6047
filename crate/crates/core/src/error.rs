use thiserror::Error;

/// Errors raised by the phase-space solvers and their checks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value in {context} at node ({i}, {j})")]
    NonFinite {
        context: &'static str,
        i: usize,
        j: usize,
    },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("hbar mismatch: {left} vs {right}")]
    HbarMismatch { left: f64, right: f64 },

    #[error("characteristic from node ({i}, {j}) left the domain at ({q:.6}, {p:.6})")]
    DomainExit { i: usize, j: usize, q: f64, p: f64 },

    #[error("point ({q:.6}, {p:.6}) left the domain")]
    PointExit { q: f64, p: f64 },

    #[error("Hamiltonian `{name}`: supplied {which} disagrees with finite differences at ({q:.4}, {p:.4}) (relative error {rel:.3e})")]
    PartialsMismatch {
        name: String,
        which: &'static str,
        q: f64,
        p: f64,
        rel: f64,
    },

    #[error("closed-form Poisson bracket needs polynomial Hamiltonians (`{0}` is not)")]
    BracketUnavailable(String),

    #[error("wavefunction is not normalised (norm^2 = {0})")]
    Unnormalized(f64),

    #[error("density has mass {0}, expected 1")]
    UnnormalizedDensity(f64),

    #[error("density is negative (min {0:.3e})")]
    NegativeDensity(f64),

    #[error("phase field has {0} masked nodes; a full-grid phase is required")]
    MaskedPhase(usize),

    #[error("every node is masked")]
    EverythingMasked,

    #[error("evolution produced non-finite values at t = {t}")]
    Diverged {
        t: f64,
        last_good: Box<crate::kvh::Trajectory>,
    },

    #[error("evolution produced non-finite values at t = {0}")]
    NonFiniteState(f64),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
