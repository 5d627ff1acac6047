//! Classical Hamiltonians on the phase plane and the geometric objects they
//! generate: X_H, the phase-space Lagrangian L_H, the canonical one-form and
//! the map 𝕁 from covectors to vectors.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::PhaseGrid;

type RealFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Sparse polynomial `Σ c_ab q^a p^b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Polynomial {
    terms: BTreeMap<(u32, u32), f64>,
}

impl Polynomial {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from `(power of q, power of p, coefficient)` triples; repeated
    /// monomials are summed.
    pub fn from_terms(terms: impl IntoIterator<Item = (u32, u32, f64)>) -> Self {
        let mut p = Self::new();
        for (a, b, c) in terms {
            p.add_term(a, b, c);
        }
        p
    }

    pub fn add_term(&mut self, a: u32, b: u32, c: f64) {
        let e = self.terms.entry((a, b)).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&(a, b));
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.terms.iter().map(|(&(a, b), &c)| (a, b, c))
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|(a, b)| a + b).max().unwrap_or(0)
    }

    pub fn eval(&self, q: f64, p: f64) -> f64 {
        self.terms
            .iter()
            .map(|(&(a, b), &c)| c * q.powi(a as i32) * p.powi(b as i32))
            .sum()
    }

    pub fn d_q(&self) -> Self {
        Self::from_terms(
            self.terms()
                .filter(|&(a, _, _)| a > 0)
                .map(|(a, b, c)| (a - 1, b, c * a as f64)),
        )
    }

    pub fn d_p(&self) -> Self {
        Self::from_terms(
            self.terms()
                .filter(|&(_, b, _)| b > 0)
                .map(|(a, b, c)| (a, b - 1, c * b as f64)),
        )
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::new();
        for (a1, b1, c1) in self.terms() {
            for (a2, b2, c2) in other.terms() {
                out.add_term(a1 + a2, b1 + b2, c1 * c2);
            }
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (a, b, c) in other.terms() {
            out.add_term(a, b, -c);
        }
        out
    }

    /// `{f, g} = f_q g_p - f_p g_q`.
    pub fn bracket(&self, other: &Self) -> Self {
        self.d_q().mul(&other.d_p()).sub(&self.d_p().mul(&other.d_q()))
    }
}

/// A time-independent Hamiltonian with closed-form partial derivatives.
#[derive(Clone)]
pub struct HamiltonianSpec {
    name: String,
    h: RealFn,
    dhdq: RealFn,
    dhdp: RealFn,
    poly: Option<Polynomial>,
}

impl fmt::Debug for HamiltonianSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HamiltonianSpec")
            .field("name", &self.name)
            .field("poly", &self.poly)
            .finish()
    }
}

/// Where the supplied partials are compared against finite differences.
const CHECK_BOX: f64 = 4.0;
const CHECK_POINTS: usize = 32;
const CHECK_SEED: u64 = 0x6b76_6801;

impl HamiltonianSpec {
    /// Wraps `H` and its partials, checking the partials against central
    /// differences of `H` at seeded random points.
    pub fn new(
        name: impl Into<String>,
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dhdq: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dhdp: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            h: Arc::new(h),
            dhdq: Arc::new(dhdq),
            dhdp: Arc::new(dhdp),
            poly: None,
        };
        spec.validate_partials(CHECK_SEED)?;
        Ok(spec)
    }

    pub fn from_polynomial(name: impl Into<String>, poly: Polynomial) -> Self {
        let flat = |p: &Polynomial| -> Vec<(i32, i32, f64)> {
            p.terms().map(|(a, b, c)| (a as i32, b as i32, c)).collect()
        };
        let eval = |t: &[(i32, i32, f64)], q: f64, p: f64| -> f64 {
            t.iter().map(|&(a, b, c)| c * q.powi(a) * p.powi(b)).sum()
        };
        let (t0, tq, tp) = (flat(&poly), flat(&poly.d_q()), flat(&poly.d_p()));
        Self {
            name: name.into(),
            h: Arc::new(move |q, p| eval(&t0, q, p)),
            dhdq: Arc::new(move |q, p| eval(&tq, q, p)),
            dhdp: Arc::new(move |q, p| eval(&tp, q, p)),
            poly: Some(poly),
        }
    }

    fn validate_partials(&self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..CHECK_POINTS {
            let q = rng.random_range(-CHECK_BOX..CHECK_BOX);
            let p = rng.random_range(-CHECK_BOX..CHECK_BOX);
            let dq = 1e-5 * q.abs().max(1.0);
            let dp = 1e-5 * p.abs().max(1.0);
            let fd_q = (self.h(q + dq, p) - self.h(q - dq, p)) / (2.0 * dq);
            let fd_p = (self.h(q, p + dp) - self.h(q, p - dp)) / (2.0 * dp);
            for (which, exact, fd) in [
                ("dH/dq", self.dhdq(q, p), fd_q),
                ("dH/dp", self.dhdp(q, p), fd_p),
            ] {
                let rel = (exact - fd).abs() / exact.abs().max(1.0);
                if !(rel <= 1e-6) {
                    return Err(Error::PartialsMismatch {
                        name: self.name.clone(),
                        which,
                        q,
                        p,
                        rel,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn polynomial(&self) -> Option<&Polynomial> {
        self.poly.as_ref()
    }
    pub fn h(&self, q: f64, p: f64) -> f64 {
        (self.h)(q, p)
    }
    pub fn dhdq(&self, q: f64, p: f64) -> f64 {
        (self.dhdq)(q, p)
    }
    pub fn dhdp(&self, q: f64, p: f64) -> f64 {
        (self.dhdp)(q, p)
    }

    /// `X_H = (∂_p H, -∂_q H)` at a point.
    pub fn vector_field_at(&self, q: f64, p: f64) -> (f64, f64) {
        (self.dhdp(q, p), -self.dhdq(q, p))
    }

    /// `L_H = p ∂_p H - H` at a point.
    pub fn lagrangian_at(&self, q: f64, p: f64) -> f64 {
        p * self.dhdp(q, p) - self.h(q, p)
    }

    /// Harmonic oscillator `(q² + p²)/2`.
    pub fn harmonic() -> Self {
        Self::from_polynomial("harmonic", Polynomial::from_terms([(2, 0, 0.5), (0, 2, 0.5)]))
    }

    /// Free particle `p²/2`.
    pub fn free() -> Self {
        Self::from_polynomial("free", Polynomial::from_terms([(0, 2, 0.5)]))
    }

    /// Quartic oscillator `p²/2 + q⁴/4`.
    pub fn quartic() -> Self {
        Self::from_polynomial("quartic", Polynomial::from_terms([(0, 2, 0.5), (4, 0, 0.25)]))
    }

    /// Pendulum `p²/2 - cos q`.
    pub fn pendulum() -> Self {
        Self {
            name: "pendulum".into(),
            h: Arc::new(|q: f64, p: f64| 0.5 * p * p - q.cos()),
            dhdq: Arc::new(|q: f64, _| q.sin()),
            dhdp: Arc::new(|_, p| p),
            poly: None,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::from_polynomial("constant", Polynomial::from_terms([(0, 0, c)]))
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "harmonic" => Ok(Self::harmonic()),
            "free" => Ok(Self::free()),
            "quartic" => Ok(Self::quartic()),
            "pendulum" => Ok(Self::pendulum()),
            other => Err(Error::InvalidParameter(format!(
                "unknown Hamiltonian `{other}` (expected harmonic, free, quartic or pendulum)"
            ))),
        }
    }

    pub fn scenario_names() -> &'static [&'static str] {
        &["harmonic", "free", "quartic", "pendulum"]
    }
}

/// Closed-form `{H, F}` for polynomial Hamiltonians.
pub fn closed_form_bracket(h: &HamiltonianSpec, f: &HamiltonianSpec) -> Result<HamiltonianSpec> {
    let ph = h
        .polynomial()
        .ok_or_else(|| Error::BracketUnavailable(h.name().to_string()))?;
    let pf = f
        .polynomial()
        .ok_or_else(|| Error::BracketUnavailable(f.name().to_string()))?;
    Ok(HamiltonianSpec::from_polynomial(
        format!("{{{},{}}}", h.name(), f.name()),
        ph.bracket(pf),
    ))
}

/// Covector field `a_q dq + a_p dp` on a grid.
#[derive(Clone, Debug)]
pub struct OneForm {
    pub a_q: ScalarField,
    pub a_p: ScalarField,
}

impl OneForm {
    pub fn new(a_q: ScalarField, a_p: ScalarField) -> Result<Self> {
        if a_q.grid() != a_p.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { a_q, a_p })
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.a_q.grid()
    }

    /// Contraction `a(v) = a_q v_q + a_p v_p`.
    pub fn pair(&self, v_q: &ScalarField, v_p: &ScalarField) -> ScalarField {
        self.a_q.mul(v_q).add(&self.a_p.mul(v_p))
    }
}

/// Samples `X_H = (∂_p H, -∂_q H)` on the grid.
pub fn hamiltonian_vector_field(h: &HamiltonianSpec, grid: &PhaseGrid) -> (ScalarField, ScalarField) {
    (
        ScalarField::from_real_fn(grid, |q, p| h.dhdp(q, p)),
        ScalarField::from_real_fn(grid, |q, p| -h.dhdq(q, p)),
    )
}

/// Samples `L_H = p ∂_p H - H` on the grid.
pub fn phase_space_lagrangian(h: &HamiltonianSpec, grid: &PhaseGrid) -> ScalarField {
    ScalarField::from_real_fn(grid, |q, p| h.lagrangian_at(q, p))
}

/// `𝒜 = p dq`.
pub fn canonical_one_form(grid: &PhaseGrid) -> OneForm {
    OneForm {
        a_q: ScalarField::from_real_fn(grid, |_, p| p),
        a_p: ScalarField::zeros(grid),
    }
}

/// `𝕁(a_q, a_p) = (a_p, -a_q)`, so that `𝕁(dH) = X_H`.
pub fn jmap(a: &OneForm) -> (ScalarField, ScalarField) {
    (a.a_p.clone(), a.a_q.scale(Complex64::new(-1.0, 0.0)))
}

/// End point of a classical trajectory together with the action integral
/// `∫ L_H ds` accumulated along it.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FlowResult {
    pub q: f64,
    pub p: f64,
    /// `∫_0^t L_H(η_s z0) ds` (negative-oriented when `t < 0`).
    pub action: f64,
    /// Whether any intermediate stage left the supplied domain.
    pub left_domain: bool,
}

fn check_step(t: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() || !t.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "flow needs finite t and dt > 0, got t = {t}, dt = {dt}"
        )));
    }
    if t != 0.0 && dt > t.abs() {
        return Err(Error::InvalidParameter(format!(
            "step {dt} is longer than the flow time {t}"
        )));
    }
    Ok(())
}

/// Integrates `ż = X_H(z)` from `z0` for time `t` (either sign) with
/// classical RK4 in `ceil(|t|/dt)` equal steps.
pub fn flow_map(h: &HamiltonianSpec, t: f64, z0: (f64, f64), dt: f64) -> Result<(f64, f64)> {
    let r = flow_with_action(h, t, z0, dt, None)?;
    Ok((r.q, r.p))
}

/// Same as [`flow_map`] but also integrates `ȧ = L_H(z)` and reports
/// whether the path left `domain`.
pub fn flow_with_action(
    h: &HamiltonianSpec,
    t: f64,
    z0: (f64, f64),
    dt: f64,
    domain: Option<&PhaseGrid>,
) -> Result<FlowResult> {
    check_step(t, dt)?;
    if t == 0.0 {
        return Ok(FlowResult {
            q: z0.0,
            p: z0.1,
            action: 0.0,
            left_domain: domain.is_some_and(|g| !g.contains(z0.0, z0.1)),
        });
    }
    let n = (t.abs() / dt).ceil().max(1.0) as usize;
    let step = t / n as f64;
    Ok(rk4_flow(h, n, step, z0, domain))
}

/// RK4 for the augmented system `(q, p, a)' = (X_H, L_H)`.
pub(crate) fn rk4_flow(
    h: &HamiltonianSpec,
    n: usize,
    step: f64,
    z0: (f64, f64),
    domain: Option<&PhaseGrid>,
) -> FlowResult {
    let rhs = |q: f64, p: f64| -> [f64; 3] {
        let hq = h.dhdq(q, p);
        let hp = h.dhdp(q, p);
        [hp, -hq, p * hp - h.h(q, p)]
    };
    let (mut q, mut p) = z0;
    let mut a = 0.0;
    let mut left = domain.is_some_and(|g| !g.contains(q, p));
    for _ in 0..n {
        let k1 = rhs(q, p);
        let k2 = rhs(q + 0.5 * step * k1[0], p + 0.5 * step * k1[1]);
        let k3 = rhs(q + 0.5 * step * k2[0], p + 0.5 * step * k2[1]);
        let k4 = rhs(q + step * k3[0], p + step * k3[1]);
        q += step / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        p += step / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
        a += step / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]);
        if let Some(g) = domain {
            left |= !g.contains(q, p);
        }
    }
    FlowResult {
        q,
        p,
        action: a,
        left_domain: left,
    }
}
