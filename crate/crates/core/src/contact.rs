//! Strict contact transformations obtained by lifting Hamiltonian flows, and
//! their unitary (van Hove) action on Koopman wavefunctions.

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::diag::{Outcome, Warning};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::PhaseGrid;
use crate::hamiltonian::{flow_with_action, rk4_flow, HamiltonianSpec};
use crate::interp::{BicubicInterpolator, PhaseSpaceFn, SpectralInterpolator};
use crate::kvh::{resolve_exit, ExitPolicy, PrequantumOperator, WaveFunction};
use crate::par::map_nodes;

/// Offset used for the central differences of the flow.
const FLOW_FD_STEP: f64 = 1e-5;

/// End point, action and Jacobian of one flow evaluation.
#[derive(Clone, Copy, Debug, Default)]
pub struct FlowSample {
    pub q: f64,
    pub p: f64,
    /// `∫_0^t L_G(η_s z) ds`.
    pub action: f64,
    /// `[∂Q/∂q, ∂Q/∂p, ∂P/∂q, ∂P/∂p]`.
    pub jac: [f64; 4],
    /// `[∂a/∂q, ∂a/∂p]` of the action.
    pub d_action: [f64; 2],
}

impl FlowSample {
    pub fn det(&self) -> f64 {
        self.jac[0] * self.jac[3] - self.jac[1] * self.jac[2]
    }
}

fn sample_flow(g: &HamiltonianSpec, n: usize, step: f64, z: (f64, f64)) -> FlowSample {
    if n == 0 {
        return FlowSample { q: z.0, p: z.1, action: 0.0, jac: [1.0, 0.0, 0.0, 1.0], d_action: [0.0, 0.0] };
    }
    let d = FLOW_FD_STEP;
    let c = rk4_flow(g, n, step, z, None);
    let qp = rk4_flow(g, n, step, (z.0 + d, z.1), None);
    let qm = rk4_flow(g, n, step, (z.0 - d, z.1), None);
    let pp = rk4_flow(g, n, step, (z.0, z.1 + d), None);
    let pm = rk4_flow(g, n, step, (z.0, z.1 - d), None);
    let s = 0.5 / d;
    FlowSample {
        q: c.q,
        p: c.p,
        action: c.action,
        jac: [(qp.q - qm.q) * s, (pp.q - pm.q) * s, (qp.p - qm.p) * s, (pp.p - pm.p) * s],
        d_action: [(qp.action - qm.action) * s, (pp.action - pm.action) * s],
    }
}

fn steps(t: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite() && t.is_finite()) {
        return Err(Error::InvalidParameter(format!("need finite t and dt > 0, got t = {t}, dt = {dt}")));
    }
    let n = if t == 0.0 { 0 } else { (t.abs() / dt).ceil().max(1.0) as usize };
    Ok((n, if n == 0 { 0.0 } else { t / n as f64 }))
}

/// The lift `(η, φ)` of the time-`t` flow of a generator `G`, tabulated on a
/// grid: `η` forward from every node (with its Jacobian and phase) and
/// `η⁻¹` by reversed-time flow from every node.
#[derive(Clone, Debug)]
pub struct ContactTransform {
    generator: HamiltonianSpec,
    t: f64,
    theta: f64,
    dt: f64,
    grid: PhaseGrid,
    policy: ExitPolicy,
    forward: Array2<FlowSample>,
    backward: Array2<FlowSample>,
}

/// Lifts the time-`t` flow of `g` to a strict contact transformation with
/// phase `φ(z) = θ - ∫_0^t L_G(η_s z) ds`. Characteristics are integrated
/// with RK4 at step ≤ `dt`. With [`ExitPolicy::Error`] any node whose
/// image or preimage leaves the box is an error.
pub fn lift_hamiltonian_flow(
    g: &HamiltonianSpec,
    grid: &PhaseGrid,
    t: f64,
    theta: f64,
    dt: f64,
    policy: ExitPolicy,
) -> Result<Outcome<ContactTransform>> {
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("theta must be finite, got {theta}")));
    }
    let (n, step) = steps(t, dt)?;
    let forward = map_nodes(grid, |i, j| sample_flow(g, n, step, grid.node(i, j)));
    let backward = map_nodes(grid, |i, j| sample_flow(g, n, -step, grid.node(i, j)));
    let mut exits = 0;
    for arr in [&forward, &backward] {
        for ((i, j), s) in arr.indexed_iter() {
            if !grid.contains(s.q, s.p) {
                if policy == ExitPolicy::Error {
                    return Err(Error::DomainExit { i, j, q: s.q, p: s.p });
                }
                exits += 1;
            }
        }
    }
    let warnings = if exits > 0 { vec![Warning::DomainExits { count: exits }] } else { Vec::new() };
    Ok(Outcome {
        value: ContactTransform { generator: g.clone(), t, theta, dt, grid: grid.clone(), policy, forward, backward },
        warnings,
    })
}

impl ContactTransform {
    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }
    pub fn time(&self) -> f64 {
        self.t
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn generator(&self) -> &HamiltonianSpec {
        &self.generator
    }

    /// `η(z)` at an arbitrary point.
    pub fn eta(&self, q: f64, p: f64) -> Result<(f64, f64)> {
        if self.t == 0.0 {
            return Ok((q, p));
        }
        let r = flow_with_action(&self.generator, self.t, (q, p), self.dt.min(self.t.abs()), None)?;
        Ok((r.q, r.p))
    }

    /// `η` at the nodes, with Jacobians and actions.
    pub fn forward_samples(&self) -> &Array2<FlowSample> {
        &self.forward
    }

    /// `η⁻¹` at the nodes.
    pub fn backward_samples(&self) -> &Array2<FlowSample> {
        &self.backward
    }

    /// The phase function `φ` at the nodes.
    pub fn phi(&self) -> ScalarField {
        ScalarField::from_real(&self.grid, &self.forward.mapv(|s| self.theta - s.action))
    }

    /// `det Dη` at the nodes.
    pub fn jacobian(&self) -> ScalarField {
        ScalarField::from_real(&self.grid, &self.forward.mapv(|s| s.det()))
    }

    /// `max |det Dη - 1|` over the nodes.
    pub fn symplecticity_residual(&self) -> f64 {
        self.forward.iter().map(|s| (s.det() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `max |η*𝒜 + dφ - 𝒜|` over the nodes, componentwise.
    pub fn membership_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ((_, j), s) in self.forward.indexed_iter() {
            let p = self.grid.p(j);
            // η*𝒜 = P dQ; dφ = -da
            let rq = s.p * s.jac[0] - s.d_action[0] - p;
            let rp = s.p * s.jac[1] - s.d_action[1];
            worst = worst.max(rq.abs()).max(rp.abs());
        }
        worst
    }

    /// The lift of the reversed flow with phase offset `-θ`.
    pub fn inverse(&self) -> ContactTransform {
        ContactTransform {
            generator: self.generator.clone(),
            t: -self.t,
            theta: -self.theta,
            dt: self.dt,
            grid: self.grid.clone(),
            policy: self.policy,
            forward: self.backward.clone(),
            backward: self.forward.clone(),
        }
    }
}

fn interpolate(psi: &ScalarField) -> Box<dyn PhaseSpaceFn + Sync> {
    match SpectralInterpolator::new(psi) {
        Ok(s) => Box::new(s),
        Err(_) => Box::new(BicubicInterpolator::new(psi)),
    }
}

/// `UΨ = √(det Dη⁻¹) · (e^{-iφ/ħ} Ψ) ∘ η⁻¹`. Off-node values of Ψ come from
/// trigonometric interpolation on periodic grids and bicubic otherwise.
pub fn apply_van_hove(tr: &ContactTransform, psi: &WaveFunction) -> Result<Outcome<WaveFunction>> {
    if psi.grid() != &tr.grid {
        return Err(Error::GridMismatch);
    }
    let f = interpolate(psi.field());
    apply_van_hove_fn(tr, &*f, psi.hbar())
}

/// [`apply_van_hove`] for initial data given as a function.
pub fn apply_van_hove_fn(
    tr: &ContactTransform,
    psi: &(impl PhaseSpaceFn + Sync + ?Sized),
    hbar: f64,
) -> Result<Outcome<WaveFunction>> {
    // φ(η⁻¹z) = θ + ∫_0^{-t} L_G(η_s z) ds, the action of the backward trace
    act(tr, &tr.backward, tr.theta, psi, hbar)
}

/// `U⁻¹Ψ = U†Ψ`, using the forward images stored in `tr`.
pub fn apply_van_hove_inverse(tr: &ContactTransform, psi: &WaveFunction) -> Result<Outcome<WaveFunction>> {
    if psi.grid() != &tr.grid {
        return Err(Error::GridMismatch);
    }
    let f = interpolate(psi.field());
    act(tr, &tr.forward, -tr.theta, &*f, psi.hbar())
}

fn act(
    tr: &ContactTransform,
    feet: &Array2<FlowSample>,
    theta: f64,
    psi: &(impl PhaseSpaceFn + Sync + ?Sized),
    hbar: f64,
) -> Result<Outcome<WaveFunction>> {
    let g = &tr.grid;
    let mut exits = 0;
    let mut resolved = Array2::from_elem(g.shape(), None);
    for ((i, j), s) in feet.indexed_iter() {
        let r = crate::hamiltonian::FlowResult { q: s.q, p: s.p, action: s.action, left_domain: false };
        resolved[[i, j]] = resolve_exit(g, tr.policy, (i, j), &r, &mut exits)?;
    }
    let values = map_nodes(g, |i, j| match resolved[[i, j]] {
        Some((q, p)) => {
            let s = &feet[[i, j]];
            let amp = s.det().abs().sqrt();
            psi.eval(q, p) * Complex64::from_polar(amp, -(theta + s.action) / hbar)
        }
        None => Complex64::new(0.0, 0.0),
    });
    let wf = WaveFunction::new(ScalarField::new(g.clone(), values), hbar)?;
    let warnings = if exits > 0 { vec![Warning::DomainExits { count: exits }] } else { Vec::new() };
    Ok(Outcome { value: wf, warnings })
}

/// The prequantum operator of `H∘η`, built from `Dηᵀ ∇H(η)` at the nodes.
pub fn composed_operator(tr: &ContactTransform, h: &HamiltonianSpec) -> Result<PrequantumOperator> {
    let f = &tr.forward;
    let hv = f.mapv(|s| h.h(s.q, s.p));
    let hq = f.mapv(|s| h.dhdq(s.q, s.p) * s.jac[0] + h.dhdp(s.q, s.p) * s.jac[2]);
    let hp = f.mapv(|s| h.dhdq(s.q, s.p) * s.jac[1] + h.dhdp(s.q, s.p) * s.jac[3]);
    PrequantumOperator::from_samples(&tr.grid, hq, hp, &hv)
}

/// `‖U†L̂_H(UΨ) - L̂_{H∘η}Ψ‖ / ‖Ψ‖`.
pub fn equivariance_residual(tr: &ContactTransform, h: &HamiltonianSpec, psi: &WaveFunction) -> Result<f64> {
    let hbar = psi.hbar();
    let u = apply_van_hove(tr, psi)?.value;
    let lh = PrequantumOperator::new(h, &tr.grid);
    let lu = u.with_values(lh.apply(u.values(), hbar));
    let back = apply_van_hove_inverse(tr, &lu)?.value;
    let direct = composed_operator(tr, h)?.apply(psi.values(), hbar);
    let mut diff = back.values().clone();
    Zip::from(&mut diff).and(&direct).for_each(|a, &b| *a -= b);
    Ok(ScalarField::new(tr.grid.clone(), diff).norm_l2() / psi.norm())
}
