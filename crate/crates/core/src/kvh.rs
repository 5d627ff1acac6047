//! Koopman wavefunctions and their unitary evolution under the prequantum
//! operator `L̂_H Ψ = iħ{H,Ψ} - L_H Ψ`.

use std::fmt;

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::diag::{support_warning, Outcome, Warning};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::PhaseGrid;
use crate::hamiltonian::{closed_form_bracket, rk4_flow, FlowResult, HamiltonianSpec};
use crate::interp::PhaseSpaceFn;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Classical wavefunction: a complex field on phase space together with the
/// action scale ħ that sets its phase units.
#[derive(Clone, Debug)]
pub struct WaveFunction {
    field: ScalarField,
    hbar: f64,
}

impl WaveFunction {
    pub fn new(field: ScalarField, hbar: f64) -> Result<Self> {
        if !(hbar > 0.0 && hbar.is_finite()) {
            return Err(Error::InvalidParameter(format!("hbar must be positive, got {hbar}")));
        }
        Ok(Self { field, hbar })
    }

    pub fn from_fn(grid: &PhaseGrid, hbar: f64, f: impl PhaseSpaceFn) -> Result<Self> {
        Self::new(ScalarField::from_fn(grid, |q, p| f.eval(q, p)), hbar)
    }

    pub fn field(&self) -> &ScalarField {
        &self.field
    }
    pub fn into_field(self) -> ScalarField {
        self.field
    }
    pub fn values(&self) -> &Array2<Complex64> {
        self.field.values()
    }
    pub fn grid(&self) -> &PhaseGrid {
        self.field.grid()
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    pub fn with_values(&self, values: Array2<Complex64>) -> Self {
        Self {
            field: ScalarField::new(self.grid().clone(), values),
            hbar: self.hbar,
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.field.norm_sq()
    }
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Unnormalized(n * n));
        }
        Ok(self.with_values(self.values().mapv(|v| v / n)))
    }

    fn compatible(&self, other: &Self) -> Result<()> {
        if self.grid() != other.grid() {
            return Err(Error::GridMismatch);
        }
        if self.hbar != other.hbar {
            return Err(Error::HbarMismatch { left: self.hbar, right: other.hbar });
        }
        Ok(())
    }
}

/// `⟨Ψ1|Ψ2⟩ = ∫ conj(Ψ1) Ψ2 dz`.
pub fn hermitian_inner(a: &WaveFunction, b: &WaveFunction) -> Result<Complex64> {
    a.compatible(b)?;
    Ok(a.field.inner(&b.field))
}

/// `Ω(Ψ1, Ψ2) = 2ħ Im⟨Ψ1|Ψ2⟩`.
pub fn symplectic_form(a: &WaveFunction, b: &WaveFunction) -> Result<f64> {
    Ok(2.0 * a.hbar * hermitian_inner(a, b)?.im)
}

/// Gaussian packet `N exp(-(x²+y²)/(4s²)) exp(iS/ħ)` with `x = q - q0`,
/// `y = p - p0` and quadratic phase
/// `S = k_q x + k_p y + a_qq x² + a_qp x y + a_pp y²`.
/// `s` is the standard deviation of `|Ψ|²`; the packet has unit norm on the
/// whole plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianPacket {
    pub center: (f64, f64),
    pub width: f64,
    pub k: (f64, f64),
    pub a_qq: f64,
    pub a_qp: f64,
    pub a_pp: f64,
    pub hbar: f64,
}

impl GaussianPacket {
    pub fn new(center: (f64, f64), width: f64, hbar: f64) -> Self {
        Self {
            center,
            width,
            k: (0.0, 0.0),
            a_qq: 0.0,
            a_qp: 0.0,
            a_pp: 0.0,
            hbar,
        }
    }

    pub fn with_linear_phase(mut self, k_q: f64, k_p: f64) -> Self {
        self.k = (k_q, k_p);
        self
    }

    pub fn with_quadratic_phase(mut self, a_qq: f64, a_qp: f64, a_pp: f64) -> Self {
        self.a_qq = a_qq;
        self.a_qp = a_qp;
        self.a_pp = a_pp;
        self
    }

    pub fn phase(&self, q: f64, p: f64) -> f64 {
        let (x, y) = (q - self.center.0, p - self.center.1);
        self.k.0 * x + self.k.1 * y + self.a_qq * x * x + self.a_qp * x * y + self.a_pp * y * y
    }

    pub fn density(&self, q: f64, p: f64) -> f64 {
        let (x, y) = (q - self.center.0, p - self.center.1);
        let s2 = self.width * self.width;
        (-(x * x + y * y) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2)
    }

    pub fn sample(&self, grid: &PhaseGrid) -> Result<WaveFunction> {
        WaveFunction::from_fn(grid, self.hbar, *self)
    }
}

impl PhaseSpaceFn for GaussianPacket {
    fn eval(&self, q: f64, p: f64) -> Complex64 {
        Complex64::from_polar(self.density(q, p).sqrt(), self.phase(q, p) / self.hbar)
    }
}

/// The prequantum operator of a fixed Hamiltonian, with `∂_q H`, `∂_p H` and
/// `L_H` cached on the grid.
#[derive(Clone, Debug)]
pub struct PrequantumOperator {
    grid: PhaseGrid,
    h_q: Array2<f64>,
    h_p: Array2<f64>,
    lagrangian: Array2<f64>,
}

impl PrequantumOperator {
    pub fn new(h: &HamiltonianSpec, grid: &PhaseGrid) -> Self {
        Self {
            grid: grid.clone(),
            h_q: grid.sample_real(|q, p| h.dhdq(q, p)),
            h_p: grid.sample_real(|q, p| h.dhdp(q, p)),
            lagrangian: grid.sample_real(|q, p| h.lagrangian_at(q, p)),
        }
    }

    /// Builds the operator from sampled `∂_q H`, `∂_p H` and `H`; used for
    /// Hamiltonians only known on the grid (e.g. `H∘η`).
    pub fn from_samples(
        grid: &PhaseGrid,
        h_q: Array2<f64>,
        h_p: Array2<f64>,
        h: &Array2<f64>,
    ) -> Result<Self> {
        if h_q.dim() != grid.shape() || h_p.dim() != grid.shape() || h.dim() != grid.shape() {
            return Err(Error::GridMismatch);
        }
        let mut lagrangian = Array2::zeros(grid.shape());
        for ((i, j), l) in lagrangian.indexed_iter_mut() {
            *l = grid.p(j) * h_p[[i, j]] - h[[i, j]];
        }
        Ok(Self { grid: grid.clone(), h_q, h_p, lagrangian })
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }
    pub fn h_q(&self) -> &Array2<f64> {
        &self.h_q
    }
    pub fn h_p(&self) -> &Array2<f64> {
        &self.h_p
    }
    pub fn lagrangian(&self) -> &Array2<f64> {
        &self.lagrangian
    }

    /// `{H, Ψ} = H_q Ψ_p - H_p Ψ_q` on raw node values.
    pub fn bracket(&self, psi: &Array2<Complex64>) -> Array2<Complex64> {
        let dq = self.grid.d_q(psi);
        let mut out = self.grid.d_p(psi);
        Zip::from(&mut out)
            .and(&dq)
            .and(&self.h_q)
            .and(&self.h_p)
            .for_each(|o, &fq, &hq, &hp| *o = *o * hq - fq * hp);
        out
    }

    /// `L̂_H Ψ = iħ{H,Ψ} - L_H Ψ`.
    pub fn apply(&self, psi: &Array2<Complex64>, hbar: f64) -> Array2<Complex64> {
        let mut out = self.bracket(psi);
        Zip::from(&mut out)
            .and(psi)
            .and(&self.lagrangian)
            .for_each(|o, &v, &l| *o = *o * I * hbar - v * l);
        out
    }

    /// `∂_t Ψ = -(i/ħ) L̂_H Ψ = {H,Ψ} + (i/ħ) L_H Ψ`.
    pub fn rhs(&self, psi: &Array2<Complex64>, hbar: f64) -> Array2<Complex64> {
        let mut out = self.bracket(psi);
        Zip::from(&mut out)
            .and(psi)
            .and(&self.lagrangian)
            .for_each(|o, &v, &l| *o += v * I * (l / hbar));
        out
    }

    /// `max |X_H|`, used in the Courant estimate.
    pub fn max_speed(&self) -> f64 {
        self.h_q
            .iter()
            .zip(self.h_p.iter())
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }

    /// Upper bound on the spectral radius of the discrete `(1/ħ) L̂_H`.
    pub fn rate_bound(&self, hbar: f64) -> f64 {
        let g = &self.grid;
        let kq = std::f64::consts::PI / g.dq();
        let kp = std::f64::consts::PI / g.dp();
        let max = |a: &Array2<f64>| a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        max(&self.h_p) * kq + max(&self.h_q) * kp + max(&self.lagrangian) / hbar
    }
}

/// `L̂_H Ψ`, with a warning if Ψ has support in the boundary margin.
pub fn apply_prequantum(h: &HamiltonianSpec, psi: &WaveFunction) -> Outcome<WaveFunction> {
    let op = PrequantumOperator::new(h, psi.grid());
    let value = psi.with_values(op.apply(psi.values(), psi.hbar));
    Outcome {
        value,
        warnings: support_warning(psi.field()).into_iter().collect(),
    }
}

/// `∂_t Ψ` of the KvH equation.
pub fn kvh_rhs(h: &HamiltonianSpec, psi: &WaveFunction) -> Outcome<WaveFunction> {
    let op = PrequantumOperator::new(h, psi.grid());
    let value = psi.with_values(op.rhs(psi.values(), psi.hbar));
    Outcome {
        value,
        warnings: support_warning(psi.field()).into_iter().collect(),
    }
}

/// `⟨Ψ|L̂_H Ψ⟩` including its (round-off) imaginary part.
pub fn kvh_energy_complex(op: &PrequantumOperator, psi: &WaveFunction) -> Complex64 {
    let lp = psi.with_values(op.apply(psi.values(), psi.hbar));
    psi.field().inner(lp.field())
}

/// `h(Ψ) = Re ⟨Ψ|L̂_H Ψ⟩`.
pub fn kvh_energy(h: &HamiltonianSpec, psi: &WaveFunction) -> f64 {
    kvh_energy_complex(&PrequantumOperator::new(h, psi.grid()), psi).re
}

/// `‖[L̂_H, L̂_F]Ψ - iħ L̂_{H,F} Ψ‖ / ‖Ψ‖` with `{H,F}` in closed form.
pub fn commutator_residual(h: &HamiltonianSpec, f: &HamiltonianSpec, psi: &WaveFunction) -> Result<f64> {
    let hf = closed_form_bracket(h, f)?;
    let grid = psi.grid();
    let hbar = psi.hbar;
    let lh = PrequantumOperator::new(h, grid);
    let lf = PrequantumOperator::new(f, grid);
    let lb = PrequantumOperator::new(&hf, grid);
    let v = psi.values();
    let hfv = lh.apply(&lf.apply(v, hbar), hbar);
    let fhv = lf.apply(&lh.apply(v, hbar), hbar);
    let bv = lb.apply(v, hbar);
    let res = hfv - fhv - bv.mapv(|x| x * I * hbar);
    let res = ScalarField::new(grid.clone(), res);
    Ok(res.norm_l2() / psi.norm())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Rk4,
    /// Explicit two-stage midpoint rule.
    Midpoint,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Rk4 => "rk4",
            Scheme::Midpoint => "midpoint",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rk4" => Ok(Scheme::Rk4),
            "midpoint" => Ok(Scheme::Midpoint),
            other => Err(Error::InvalidParameter(format!("unknown scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvolveOptions {
    pub t_final: f64,
    /// Requested step; the actual step is `t_final / ceil(t_final / dt)` so
    /// that the run ends exactly at `t_final`.
    pub dt: f64,
    pub scheme: Scheme,
    /// Keep every `stride`-th step (the final state is always kept).
    pub stride: usize,
    pub cfl_bound: f64,
}

impl EvolveOptions {
    pub fn new(t_final: f64, dt: f64) -> Self {
        Self {
            t_final,
            dt,
            scheme: Scheme::Rk4,
            stride: usize::MAX,
            cfl_bound: 0.5,
        }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    pub fn scheme(mut self, scheme: Scheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub(crate) fn steps(&self) -> Result<(usize, f64)> {
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_final must be finite and nonnegative, got {}",
                self.t_final
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        if self.t_final == 0.0 {
            return Ok((0, 0.0));
        }
        let n = (self.t_final / self.dt).ceil().max(1.0) as usize;
        Ok((n, self.t_final / n as f64))
    }

    pub(crate) fn keeps(&self, step: usize, n: usize) -> bool {
        step == n || step.is_multiple_of(self.stride.max(1))
    }
}

/// One row of the conserved-quantity log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConservedRow {
    pub t: f64,
    pub norm: f64,
    pub energy: f64,
}

/// Snapshots of a KvH run plus its conserved-quantity log.
#[derive(Clone)]
pub struct Trajectory {
    pub hbar: f64,
    pub scheme: Scheme,
    /// Step actually taken.
    pub dt: f64,
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
    pub log: Vec<ConservedRow>,
    pub warnings: Vec<Warning>,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("hbar", &self.hbar)
            .field("scheme", &self.scheme)
            .field("dt", &self.dt)
            .field("snapshots", &self.snapshots.len())
            .field("t_last", &self.times.last())
            .finish()
    }
}

impl Trajectory {
    pub fn last(&self) -> WaveFunction {
        WaveFunction {
            field: self.snapshots.last().expect("trajectory is never empty").clone(),
            hbar: self.hbar,
        }
    }

    pub fn snapshot(&self, k: usize) -> WaveFunction {
        WaveFunction { field: self.snapshots[k].clone(), hbar: self.hbar }
    }

    /// `max_t |‖Ψ(t)‖ - ‖Ψ(0)‖|` over logged times.
    pub fn norm_drift(&self) -> f64 {
        let n0 = self.log[0].norm;
        self.log.iter().map(|r| (r.norm - n0).abs()).fold(0.0, f64::max)
    }

    pub fn energy_drift(&self) -> f64 {
        let e0 = self.log[0].energy;
        self.log.iter().map(|r| (r.energy - e0).abs()).fold(0.0, f64::max)
    }
}

fn courant_warning(op: &PrequantumOperator, dt: f64, bound: f64) -> Option<Warning> {
    let g = op.grid();
    let courant = dt * op.max_speed() / g.dq().min(g.dp());
    (courant > bound).then_some(Warning::Cfl { courant, bound })
}

fn axpy(y: &Array2<Complex64>, a: f64, x: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = y.clone();
    out.scaled_add(Complex64::new(a, 0.0), x);
    out
}

/// One step of the chosen explicit scheme for `ψ' = f(ψ)`.
pub(crate) fn explicit_step(
    scheme: Scheme,
    psi: &Array2<Complex64>,
    h: f64,
    f: impl Fn(&Array2<Complex64>) -> Array2<Complex64>,
) -> Array2<Complex64> {
    match scheme {
        Scheme::Rk4 => {
            let k1 = f(psi);
            let k2 = f(&axpy(psi, 0.5 * h, &k1));
            let k3 = f(&axpy(psi, 0.5 * h, &k2));
            let k4 = f(&axpy(psi, h, &k3));
            let mut out = psi.clone();
            Zip::from(&mut out)
                .and(&k1)
                .and(&k2)
                .and(&k3)
                .and(&k4)
                .for_each(|o, &a, &b, &c, &d| *o += (a + (b + c) * 2.0 + d) * (h / 6.0));
            out
        }
        Scheme::Midpoint => {
            let k1 = f(psi);
            let k2 = f(&axpy(psi, 0.5 * h, &k1));
            axpy(psi, h, &k2)
        }
    }
}

fn all_finite(a: &Array2<Complex64>) -> bool {
    a.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// Integrates the KvH equation from `psi0`.
pub fn evolve(h: &HamiltonianSpec, psi0: &WaveFunction, opts: &EvolveOptions) -> Result<Trajectory> {
    let op = PrequantumOperator::new(h, psi0.grid());
    evolve_with(&op, psi0, opts)
}

pub fn evolve_with(op: &PrequantumOperator, psi0: &WaveFunction, opts: &EvolveOptions) -> Result<Trajectory> {
    let (n, step) = opts.steps()?;
    let hbar = psi0.hbar;
    let mut traj = Trajectory {
        hbar,
        scheme: opts.scheme,
        dt: step,
        times: vec![0.0],
        snapshots: vec![psi0.field().clone()],
        log: vec![ConservedRow {
            t: 0.0,
            norm: psi0.norm(),
            energy: kvh_energy_complex(op, psi0).re,
        }],
        warnings: Vec::new(),
    };
    traj.warnings.extend(support_warning(psi0.field()));
    traj.warnings.extend(courant_warning(op, step, opts.cfl_bound));
    let mut psi = psi0.values().clone();
    for k in 1..=n {
        psi = explicit_step(opts.scheme, &psi, step, |v| op.rhs(v, hbar));
        let t = if k == n { opts.t_final } else { k as f64 * step };
        if !all_finite(&psi) {
            return Err(Error::Diverged { t, last_good: Box::new(traj) });
        }
        if opts.keeps(k, n) {
            let wf = psi0.with_values(psi.clone());
            traj.log.push(ConservedRow {
                t,
                norm: wf.norm(),
                energy: kvh_energy_complex(op, &wf).re,
            });
            traj.times.push(t);
            traj.snapshots.push(wf.field);
        }
    }
    if let Some(w) = support_warning(traj.snapshots.last().unwrap()) {
        if !traj.warnings.contains(&w) {
            traj.warnings.push(w);
        }
    }
    Ok(traj)
}

/// What to do with a characteristic that leaves the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitPolicy {
    /// Fail, naming the node.
    Error,
    /// Treat the initial data as zero outside the box.
    Zero,
    /// Evaluate the initial data at the periodic image.
    Wrap,
}

impl ExitPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(ExitPolicy::Error),
            "zero" => Ok(ExitPolicy::Zero),
            "wrap" => Ok(ExitPolicy::Wrap),
            other => Err(Error::InvalidParameter(format!("unknown exit policy `{other}`"))),
        }
    }
}

/// Flows every node for time `t` (negative traces backwards), returning the
/// end points and accumulated actions `∫_0^t L_H ds`.
pub fn trace_nodes(h: &HamiltonianSpec, grid: &PhaseGrid, t: f64, dt: f64) -> Result<Array2<FlowResult>> {
    if !(dt > 0.0 && dt.is_finite() && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("need finite t and dt > 0, got t = {t}, dt = {dt}")));
    }
    let n = if t == 0.0 { 0 } else { (t.abs() / dt).ceil().max(1.0) as usize };
    let step = if n == 0 { 0.0 } else { t / n as f64 };
    Ok(crate::par::map_nodes(grid, |i, j| rk4_flow(h, n, step, grid.node(i, j), Some(grid))))
}

/// Resolves the foot of a characteristic under `policy`; `None` means the
/// contribution is zero.
pub(crate) fn resolve_exit(
    grid: &PhaseGrid,
    policy: ExitPolicy,
    node: (usize, usize),
    r: &FlowResult,
    exits: &mut usize,
) -> Result<Option<(f64, f64)>> {
    let outside = !grid.contains(r.q, r.p);
    if !outside {
        return Ok(Some((r.q, r.p)));
    }
    *exits += 1;
    match policy {
        ExitPolicy::Error => Err(Error::DomainExit { i: node.0, j: node.1, q: r.q, p: r.p }),
        ExitPolicy::Zero => Ok(None),
        ExitPolicy::Wrap => Ok(Some(grid.wrap(r.q, r.p))),
    }
}

/// Exact solution by characteristics:
/// `Ψ(t, z) = exp(-(i/ħ) a) Ψ0(η_{-t} z)` where `a = ∫_0^{-t} L_H(η_s z) ds`.
///
/// `psi0` may be an analytic closure or a [`crate::BicubicInterpolator`].
pub fn characteristics_oracle(
    h: &HamiltonianSpec,
    psi0: &impl PhaseSpaceFn,
    grid: &PhaseGrid,
    hbar: f64,
    t: f64,
    dt: f64,
    policy: ExitPolicy,
) -> Result<Outcome<WaveFunction>> {
    let feet = trace_nodes(h, grid, -t, dt)?;
    let mut exits = 0;
    let mut values = Array2::zeros(grid.shape());
    for ((i, j), r) in feet.indexed_iter() {
        if let Some((q, p)) = resolve_exit(grid, policy, (i, j), r, &mut exits)? {
            values[[i, j]] = psi0.eval(q, p) * Complex64::from_polar(1.0, -r.action / hbar);
        }
    }
    let wf = WaveFunction::new(ScalarField::new(grid.clone(), values), hbar)?;
    let warnings = if exits > 0 { vec![Warning::DomainExits { count: exits }] } else { Vec::new() };
    Ok(Outcome { value: wf, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Polynomial;
    use crate::BicubicInterpolator;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn grid64() -> PhaseGrid {
        PhaseGrid::periodic_square(8.0, 64).unwrap()
    }

    fn packet(hbar: f64) -> GaussianPacket {
        GaussianPacket::new((1.0, -0.5), 0.7, hbar).with_quadratic_phase(0.2, -0.1, 0.15)
    }

    fn max_diff(a: &WaveFunction, b: &WaveFunction) -> f64 {
        a.field().sub(b.field()).max_abs()
    }

    #[test]
    fn gaussian_normalisation_and_overlap() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        assert!((hermitian_inner(&psi, &psi).unwrap().re - 1.0).abs() < 1e-10);
        // displaced packets: |⟨a|b⟩| = exp(-d²/(8 s²)) for equal real widths
        let s = 0.3;
        let a = GaussianPacket::new((-3.5, 0.0), s, 1.0).sample(&g).unwrap();
        let b = GaussianPacket::new((3.5, 0.0), s, 1.0).sample(&g).unwrap();
        let exact = (-(7.0f64 * 7.0) / (8.0 * s * s)).exp();
        let ov = hermitian_inner(&a, &b).unwrap().norm();
        assert!(exact < 1e-12 && ov < 1e-12, "{ov}");
        let ab = hermitian_inner(&a, &psi).unwrap();
        let ba = hermitian_inner(&psi, &a).unwrap();
        assert_eq!(ab, ba.conj());
    }

    #[test]
    fn inner_rejects_mismatch() {
        let g = grid64();
        let a = packet(1.0).sample(&g).unwrap();
        let b = packet(0.5).sample(&g).unwrap();
        assert!(matches!(hermitian_inner(&a, &b), Err(Error::HbarMismatch { .. })));
        let c = packet(1.0).sample(&PhaseGrid::periodic_square(7.0, 64).unwrap()).unwrap();
        assert!(matches!(hermitian_inner(&a, &c), Err(Error::GridMismatch)));
    }

    #[test]
    fn symplectic_form_examples() {
        let g = grid64();
        let a = packet(0.7).sample(&g).unwrap();
        let b = GaussianPacket::new((0.0, 0.3), 0.9, 0.7).with_linear_phase(0.4, 0.0).sample(&g).unwrap();
        assert_eq!(symplectic_form(&a, &a).unwrap(), 0.0);
        let ia = a.with_values(a.values().mapv(|v| v * I));
        let w = symplectic_form(&a, &ia).unwrap();
        assert!((w - 2.0 * 0.7 * a.norm_sq()).abs() < 1e-14);
        assert_eq!(symplectic_form(&a, &b).unwrap(), -symplectic_form(&b, &a).unwrap());
    }

    #[test]
    fn prequantum_of_constant_and_on_constants() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        let c = 2.5;
        let out = apply_prequantum(&HamiltonianSpec::constant(c), &psi).value;
        assert!(out.field().sub(&psi.field().scale(Complex64::new(c, 0.0))).max_abs() < 1e-14);
        let one = WaveFunction::new(ScalarField::constant(&g, Complex64::new(1.0, 0.0)), 1.0).unwrap();
        let h = HamiltonianSpec::harmonic();
        let out = apply_prequantum(&h, &one);
        let exact = ScalarField::from_real_fn(&g, |q, p| -h.lagrangian_at(q, p));
        assert!(out.value.field().sub(&exact).max_abs() < 1e-11);
        // a constant field fills the margin
        assert!(matches!(out.warnings[..], [Warning::BoundarySupport { .. }]));
    }

    #[test]
    fn prequantum_matches_composed_grid_ops() {
        // FD4 differentiates the quadratic H exactly, so the grid-assembled
        // bracket agrees with the cached closed-form partials to round-off
        let g = PhaseGrid::new((-8.0, 8.0), (-8.0, 8.0), 64, 64, crate::BoundaryMode::FiniteDifference4).unwrap();
        let psi = packet(0.5).sample(&g).unwrap();
        let h = HamiltonianSpec::harmonic();
        let got = apply_prequantum(&h, &psi);
        assert!(got.warnings.is_empty());
        let hf = ScalarField::from_real_fn(&g, |q, p| h.h(q, p));
        let br = crate::grid::poisson_bracket(&hf, psi.field()).unwrap();
        let l = crate::hamiltonian::phase_space_lagrangian(&h, &g);
        let exact = br.scale(I * 0.5).sub(&l.mul(psi.field()));
        let diff = got.value.field().sub(&exact).max_abs();
        assert!(diff < 1e-12, "{diff}");
        // rhs is the scaled operator
        let rhs = kvh_rhs(&h, &psi).value;
        let scaled = got.value.field().scale(Complex64::new(0.0, -1.0 / 0.5));
        assert!(rhs.field().sub(&scaled).max_abs() < 1e-12);
    }

    #[test]
    fn prequantum_is_hermitian() {
        let g = grid64();
        for hbar in [1.0, 0.1] {
            let a = packet(hbar).sample(&g).unwrap();
            let b = GaussianPacket::new((-1.0, 1.2), 0.8, hbar).with_linear_phase(0.3, -0.2).sample(&g).unwrap();
            for h in [HamiltonianSpec::harmonic(), HamiltonianSpec::quartic(), HamiltonianSpec::pendulum()] {
                let la = apply_prequantum(&h, &a).value;
                let lb = apply_prequantum(&h, &b).value;
                let l = hermitian_inner(&a, &lb).unwrap();
                let r = hermitian_inner(&la, &b).unwrap();
                assert!((l - r).norm() < 1e-8 * a.norm() * b.norm(), "{} {}", h.name(), (l - r).norm());
            }
        }
    }

    #[test]
    fn zero_hamiltonian_rhs_vanishes() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        let zero = HamiltonianSpec::from_polynomial("zero", Polynomial::new());
        assert_eq!(kvh_rhs(&zero, &psi).value.field().max_abs(), 0.0);
    }

    #[test]
    fn energy_examples() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        assert!((kvh_energy(&HamiltonianSpec::constant(1.7), &psi) - 1.7).abs() < 1e-10);
        let h = HamiltonianSpec::quartic();
        let rot = psi.with_values(psi.values().mapv(|v| v * Complex64::from_polar(1.0, 0.9)));
        assert!((kvh_energy(&h, &psi) - kvh_energy(&h, &rot)).abs() < 1e-12);
        let e = kvh_energy_complex(&PrequantumOperator::new(&h, &g), &psi);
        assert!(e.im.abs() < 1e-10);
    }

    #[test]
    fn commutator_examples() {
        let g = PhaseGrid::periodic_square(8.0, 96).unwrap();
        let psi = GaussianPacket::new((0.0, 0.0), 0.8, 1.0).with_quadratic_phase(0.1, 0.05, -0.1).sample(&g).unwrap();
        let h = HamiltonianSpec::harmonic();
        assert!(commutator_residual(&h, &h, &psi).unwrap() < 1e-12);
        let q = HamiltonianSpec::from_polynomial("q", Polynomial::from_terms([(1, 0, 1.0)]));
        let p = HamiltonianSpec::from_polynomial("p", Polynomial::from_terms([(0, 1, 1.0)]));
        assert!(commutator_residual(&q, &p, &psi).unwrap() < 1e-8);
        let qp = HamiltonianSpec::from_polynomial("qp", Polynomial::from_terms([(1, 1, 1.0)]));
        assert!(commutator_residual(&h, &qp, &psi).unwrap() < 1e-6);
        assert!(commutator_residual(&h, &HamiltonianSpec::pendulum(), &psi).is_err());
    }

    #[test]
    fn evolve_zero_time_and_constant_hamiltonian() {
        let g = grid64();
        let psi = packet(0.5).sample(&g).unwrap();
        let tr = evolve(&HamiltonianSpec::harmonic(), &psi, &EvolveOptions::new(0.0, 1e-3)).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(max_diff(&tr.last(), &psi), 0.0);
        let c = 0.8;
        let t = 1.3;
        let tr = evolve(&HamiltonianSpec::constant(c), &psi, &EvolveOptions::new(t, 1e-3)).unwrap();
        let exact = psi.with_values(psi.values().mapv(|v| v * Complex64::from_polar(1.0, -c * t / 0.5)));
        assert!(max_diff(&tr.last(), &exact) < 1e-10);
    }

    #[test]
    fn evolve_rejects_bad_steps() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        let h = HamiltonianSpec::free();
        assert!(evolve(&h, &psi, &EvolveOptions::new(1.0, 0.0)).is_err());
        assert!(evolve(&h, &psi, &EvolveOptions::new(-1.0, 0.1)).is_err());
    }

    #[test]
    fn divergence_returns_last_good() {
        let g = grid64();
        let psi = packet(1.0).sample(&g).unwrap();
        // far beyond the RK4 stability limit
        let opts = EvolveOptions::new(40.0, 0.5).stride(1);
        match evolve(&HamiltonianSpec::quartic(), &psi, &opts) {
            Err(Error::Diverged { t, last_good }) => {
                assert!(t > 0.0);
                assert!(!last_good.snapshots.is_empty());
                assert!(last_good.snapshots.iter().all(|s| s.is_finite()));
                assert!(last_good.warnings.iter().any(|w| matches!(w, Warning::Cfl { .. })));
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn free_particle_oracle_closed_form() {
        let g = grid64();
        let hbar = 0.5;
        let pk = packet(hbar);
        let t = 0.7;
        let o = characteristics_oracle(&HamiltonianSpec::free(), &pk, &g, hbar, t, 1e-3, ExitPolicy::Zero).unwrap();
        let exact = WaveFunction::from_fn(&g, hbar, |q: f64, p: f64| {
            if g.contains(q - t * p, p) {
                pk.eval(q - t * p, p) * Complex64::from_polar(1.0, t * p * p / (2.0 * hbar))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .unwrap();
        assert!(max_diff(&o.value, &exact) < 1e-9);
        let o0 = characteristics_oracle(&HamiltonianSpec::free(), &pk, &g, hbar, 0.0, 1e-3, ExitPolicy::Error).unwrap();
        assert_eq!(max_diff(&o0.value, &pk.sample(&g).unwrap()), 0.0);
    }

    #[test]
    fn oracle_exit_policies() {
        let g = grid64();
        let pk = packet(1.0);
        let r = characteristics_oracle(&HamiltonianSpec::free(), &pk, &g, 1.0, 1.0, 1e-2, ExitPolicy::Error);
        assert!(matches!(r, Err(Error::DomainExit { .. })));
        let r = characteristics_oracle(&HamiltonianSpec::free(), &pk, &g, 1.0, 1.0, 1e-2, ExitPolicy::Wrap).unwrap();
        assert!(matches!(r.warnings[..], [Warning::DomainExits { .. }]));
    }

    #[test]
    fn harmonic_oracle_full_period() {
        // after one period |Ψ| returns; phase advanced by -∮L/ħ, and ∮ L dt = 0
        // for the rotation, so Ψ itself returns
        let g = grid64();
        let pk = packet(1.0);
        let interp = BicubicInterpolator::new(pk.sample(&g).unwrap().field());
        let o = characteristics_oracle(&HamiltonianSpec::harmonic(), &interp, &g, 1.0, 2.0 * PI, 1e-3, ExitPolicy::Zero)
            .unwrap();
        let psi0 = pk.sample(&g).unwrap();
        let amp = o.value.field().map(|v| Complex64::new(v.norm(), 0.0));
        let amp0 = psi0.field().map(|v| Complex64::new(v.norm(), 0.0));
        assert!(amp.sub(&amp0).max_abs() < 1e-6);
        assert!(max_diff(&o.value, &psi0) < 1e-6);
    }

    #[test]
    fn free_oracle_derivative_matches_rhs() {
        let g = grid64();
        let pk = GaussianPacket::new((0.0, 0.0), 0.8, 1.0).with_linear_phase(0.3, 0.0);
        let h = HamiltonianSpec::free();
        let rhs = kvh_rhs(&h, &pk.sample(&g).unwrap()).value;
        let mut prev = f64::INFINITY;
        for dt in [1e-2, 5e-3] {
            let plus = characteristics_oracle(&h, &pk, &g, 1.0, dt, dt / 4.0, ExitPolicy::Zero).unwrap().value;
            let minus = characteristics_oracle(&h, &pk, &g, 1.0, -dt, dt / 4.0, ExitPolicy::Zero).unwrap().value;
            let fd = plus.field().sub(minus.field()).scale(Complex64::new(0.5 / dt, 0.0));
            let err = fd.sub(rhs.field()).max_abs();
            assert!(err < 2.0 * dt * dt, "{err}");
            assert!(err < prev / 3.0);
            prev = err;
        }
    }

    #[test]
    fn midpoint_scheme_converges_second_order() {
        let g = grid64();
        let pk = packet(1.0);
        let h = HamiltonianSpec::harmonic();
        let exact = characteristics_oracle(&h, &pk, &g, 1.0, 0.5, 1e-4, ExitPolicy::Zero).unwrap().value;
        let err = |dt: f64| {
            let tr = evolve(&h, &pk.sample(&g).unwrap(), &EvolveOptions::new(0.5, dt).scheme(Scheme::Midpoint)).unwrap();
            tr.last().field().sub(exact.field()).norm_l2()
        };
        let ratio = err(2e-3) / err(1e-3);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn evolution_is_linear(a_re in -1.0f64..1.0, a_im in -1.0f64..1.0, b_re in -1.0f64..1.0) {
            let g = PhaseGrid::periodic_square(6.0, 32).unwrap();
            let h = HamiltonianSpec::harmonic();
            let p1 = GaussianPacket::new((0.5, 0.0), 0.6, 1.0).sample(&g).unwrap();
            let p2 = GaussianPacket::new((-0.5, 0.4), 0.7, 1.0).with_linear_phase(0.2, 0.1).sample(&g).unwrap();
            let (a, b) = (Complex64::new(a_re, a_im), Complex64::new(b_re, 0.3));
            let mix = p1.with_values(p1.values().mapv(|v| v * a) + p2.values().mapv(|v| v * b));
            let opts = EvolveOptions::new(0.3, 1e-2);
            let e1 = evolve(&h, &p1, &opts).unwrap().last();
            let e2 = evolve(&h, &p2, &opts).unwrap().last();
            let em = evolve(&h, &mix, &opts).unwrap().last();
            let lin = e1.values().mapv(|v| v * a) + e2.values().mapv(|v| v * b);
            let err = (em.values() - &lin).iter().map(|v| v.norm()).fold(0.0, f64::max);
            prop_assert!(err < 1e-9);
        }

        #[test]
        fn energy_and_norm_conserved(cq in -1.0f64..1.0, cp in -1.0f64..1.0) {
            let g = PhaseGrid::periodic_square(7.0, 48).unwrap();
            let h = HamiltonianSpec::harmonic();
            let psi = GaussianPacket::new((cq, cp), 0.7, 1.0).with_quadratic_phase(0.1, 0.0, 0.0).sample(&g).unwrap();
            let tr = evolve(&h, &psi, &EvolveOptions::new(1.0, 5e-3).stride(20)).unwrap();
            prop_assert!(tr.norm_drift() < 1e-8);
            prop_assert!(tr.energy_drift() < 1e-7);
        }
    }
}
