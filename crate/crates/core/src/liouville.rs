//! Reference solvers for the Liouville equation `∂_t ρ = {H, ρ}`.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::diag::{Outcome, Warning};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{integrate, PhaseGrid};
use crate::hamiltonian::HamiltonianSpec;
use crate::interp::{BicubicInterpolator, PhaseSpaceFn};
use crate::kvh::{explicit_step, resolve_exit, trace_nodes, EvolveOptions, ExitPolicy};

/// A real phase-space density (stored with zero imaginary part).
#[derive(Clone, Debug)]
pub struct DensityField {
    rho: ScalarField,
}

impl DensityField {
    /// Takes the real part of `field`.
    pub fn new(field: ScalarField) -> Self {
        let rho = field.map(|v| Complex64::new(v.re, 0.0));
        Self { rho }
    }

    pub fn from_fn(grid: &PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self { rho: ScalarField::from_real_fn(grid, f) }
    }

    pub fn field(&self) -> &ScalarField {
        &self.rho
    }
    pub fn grid(&self) -> &PhaseGrid {
        self.rho.grid()
    }
    pub fn values(&self) -> Array2<f64> {
        self.rho.re()
    }

    pub fn mass(&self) -> f64 {
        integrate(&self.rho).re
    }

    /// `∫ ρ² dz`.
    pub fn casimir2(&self) -> f64 {
        self.rho.norm_sq()
    }

    pub fn min(&self) -> f64 {
        self.rho.values().iter().map(|v| v.re).fold(f64::INFINITY, f64::min)
    }
    pub fn max(&self) -> f64 {
        self.rho.values().iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One line of a density comparison log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensityRow {
    pub t: f64,
    pub l1_error: f64,
    pub l2_error: f64,
    pub min_rho: f64,
}

/// Compares `rho` against `reference` on the same grid.
pub fn compare_densities(t: f64, rho: &DensityField, reference: &DensityField) -> Result<DensityRow> {
    if rho.grid() != reference.grid() {
        return Err(Error::GridMismatch);
    }
    let diff = rho.field().sub(reference.field());
    Ok(DensityRow { t, l1_error: diff.norm_l1(), l2_error: diff.norm_l2(), min_rho: rho.min() })
}

/// `{H, ρ} = H_q ρ_p - H_p ρ_q` with closed-form partials of `H`.
pub fn liouville_rhs(rho: &DensityField, h: &HamiltonianSpec) -> DensityField {
    let g = rho.grid();
    DensityField {
        rho: ScalarField::new(g.clone(), bracket_with(h, g, rho.rho.values())),
    }
}

fn bracket_with(h: &HamiltonianSpec, g: &PhaseGrid, f: &Array2<Complex64>) -> Array2<Complex64> {
    let hq = g.sample_real(|q, p| h.dhdq(q, p));
    let hp = g.sample_real(|q, p| h.dhdp(q, p));
    bracket_sampled(g, &hq, &hp, f)
}

fn bracket_sampled(
    g: &PhaseGrid,
    hq: &Array2<f64>,
    hp: &Array2<f64>,
    f: &Array2<Complex64>,
) -> Array2<Complex64> {
    let fq = g.d_q(f);
    let mut out = g.d_p(f);
    Zip::from(&mut out)
        .and(&fq)
        .and(hq)
        .and(hp)
        .for_each(|o, &a, &b, &c| *o = *o * b - a * c);
    out
}

/// Semi-Lagrangian pushforward `ρ(t, z) = ρ0(η_{-t} z)`. The flow is
/// symplectic, so no Jacobian factor enters.
pub fn evolve_pushforward(
    rho0: &DensityField,
    h: &HamiltonianSpec,
    t: f64,
    dt: f64,
    policy: ExitPolicy,
) -> Result<Outcome<DensityField>> {
    let interp = BicubicInterpolator::new(&rho0.rho);
    pushforward_fn(&interp, rho0.grid(), h, t, dt, policy)
}

/// Pushforward of an arbitrary (e.g. analytic) initial density.
pub fn pushforward_fn(
    rho0: &impl PhaseSpaceFn,
    grid: &PhaseGrid,
    h: &HamiltonianSpec,
    t: f64,
    dt: f64,
    policy: ExitPolicy,
) -> Result<Outcome<DensityField>> {
    let feet = trace_nodes(h, grid, -t, dt)?;
    let mut exits = 0;
    let mut values = Array2::zeros(grid.shape());
    for ((i, j), r) in feet.indexed_iter() {
        if let Some((q, p)) = resolve_exit(grid, policy, (i, j), r, &mut exits)? {
            values[[i, j]] = Complex64::new(rho0.eval(q, p).re, 0.0);
        }
    }
    let warnings = if exits > 0 { vec![Warning::DomainExits { count: exits }] } else { Vec::new() };
    Ok(Outcome {
        value: DensityField { rho: ScalarField::new(grid.clone(), values) },
        warnings,
    })
}

/// Eulerian cross-check: time-steps `∂_t ρ = {H, ρ}` with the grid
/// derivatives. Returns the states at the kept steps (first is `ρ0`).
pub fn evolve_eulerian(
    rho0: &DensityField,
    h: &HamiltonianSpec,
    opts: &EvolveOptions,
) -> Result<Vec<(f64, DensityField)>> {
    let (n, step) = opts.steps()?;
    let g = rho0.grid().clone();
    let hq = g.sample_real(|q, p| h.dhdq(q, p));
    let hp = g.sample_real(|q, p| h.dhdp(q, p));
    let mut out = vec![(0.0, rho0.clone())];
    let mut v = rho0.rho.values().clone();
    for k in 1..=n {
        v = explicit_step(opts.scheme, &v, step, |f| bracket_sampled(&g, &hq, &hp, f));
        if v.iter().any(|x| !x.re.is_finite()) {
            return Err(Error::NonFiniteState(k as f64 * step));
        }
        if opts.keeps(k, n) {
            let t = if k == n { opts.t_final } else { k as f64 * step };
            out.push((t, DensityField::new(ScalarField::new(g.clone(), v.clone()))));
        }
    }
    Ok(out)
}
