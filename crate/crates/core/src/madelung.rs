//! Polar (Madelung) form of classical wavefunctions and the hydrodynamic
//! variables `σ = D∇S`, `D = |Ψ|²`.

use std::collections::VecDeque;

use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::diag::{Outcome, Warning};
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::{Direction, PhaseGrid, Stencil};
use crate::hamiltonian::{canonical_one_form, HamiltonianSpec, OneForm};
use crate::kvh::{explicit_step, EvolveOptions, GaussianPacket, WaveFunction};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn real(v: f64) -> Complex64 {
    Complex64::new(v, 0.0)
}

/// Hydrodynamic variables: momentum one-form `σ` and density `D`.
#[derive(Clone, Debug)]
pub struct HydroState {
    pub sigma: OneForm,
    pub d: ScalarField,
}

impl HydroState {
    pub fn new(sigma: OneForm, d: ScalarField) -> Result<Self> {
        if sigma.grid() != d.grid() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { sigma, d })
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.d.grid()
    }

    pub fn mass(&self) -> f64 {
        crate::grid::integrate(&self.d).re
    }

    /// `max |σ - D𝒜| / max D`: how far σ is from the point-particle relation.
    pub fn sigma_defect(&self) -> f64 {
        let g = self.grid();
        let mut worst: f64 = 0.0;
        let mut dmax: f64 = 0.0;
        for ((i, j), d) in self.d.values().indexed_iter() {
            let p = g.p(j);
            let dq = self.sigma.a_q.at(i, j) - d * p;
            let dp = self.sigma.a_p.at(i, j);
            worst = worst.max(dq.norm()).max(dp.norm());
            dmax = dmax.max(d.re);
        }
        worst / dmax
    }

    /// `max ‖(σ,D) - (σ',D')‖_L²` over the three components.
    pub fn distance_l2(&self, other: &HydroState) -> f64 {
        let a = self.sigma.a_q.sub(&other.sigma.a_q).norm_l2();
        let b = self.sigma.a_p.sub(&other.sigma.a_p).norm_l2();
        let c = self.d.sub(&other.d).norm_l2();
        a.max(b).max(c)
    }
}

/// `σ = ħ Im(Ψ̄ ∇Ψ)`, `D = |Ψ|²`.
pub fn hydro_from_wavefunction(psi: &WaveFunction) -> HydroState {
    let g = psi.grid();
    let v = psi.values();
    let hbar = psi.hbar();
    let im_part = |d: Array2<Complex64>| {
        let mut out = d;
        Zip::from(&mut out)
            .and(v)
            .for_each(|o, &x| *o = real(hbar * (x.conj() * *o).im));
        ScalarField::new(g.clone(), out)
    };
    HydroState {
        sigma: OneForm {
            a_q: im_part(g.d_q(v)),
            a_p: im_part(g.d_p(v)),
        },
        d: ScalarField::new(g.clone(), v.mapv(|x| real(x.norm_sqr()))),
    }
}

/// One connected region of unmasked nodes and the phase assigned to its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseComponent {
    pub seed: (usize, usize),
    pub offset: f64,
    pub nodes: usize,
}

/// Phase `S` (units of action) and density `D` with `Ψ = √D e^{iS/ħ}`.
#[derive(Clone, Debug)]
pub struct PolarPair {
    pub s: ScalarField,
    pub d: ScalarField,
    pub hbar: f64,
    /// `true` where `D` was below the unwrapping threshold and `S` was set to 0.
    pub mask: Array2<bool>,
    pub components: Vec<PhaseComponent>,
}

impl PolarPair {
    /// A smooth, unmasked pair from sampled functions.
    pub fn from_fns(
        grid: &PhaseGrid,
        hbar: f64,
        s: impl Fn(f64, f64) -> f64,
        d: impl Fn(f64, f64) -> f64,
    ) -> Self {
        Self {
            s: ScalarField::from_real_fn(grid, s),
            d: ScalarField::from_real_fn(grid, d),
            hbar,
            mask: Array2::from_elem(grid.shape(), false),
            components: Vec::new(),
        }
    }

    /// The polar pair of a Gaussian packet, with its closed-form phase.
    pub fn from_packet(grid: &PhaseGrid, packet: &GaussianPacket) -> Self {
        Self::from_fns(grid, packet.hbar, |q, p| packet.phase(q, p), |q, p| packet.density(q, p))
    }

    pub fn grid(&self) -> &PhaseGrid {
        self.s.grid()
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// `√D e^{iS/ħ}` (negative `D` is clipped to 0 for the amplitude).
    pub fn reconstruct(&self) -> Result<WaveFunction> {
        let values = Zip::from(self.s.values())
            .and(self.d.values())
            .map_collect(|s, d| Complex64::from_polar(d.re.max(0.0).sqrt(), s.re / self.hbar));
        WaveFunction::new(ScalarField::new(self.grid().clone(), values), self.hbar)
    }
}

/// Splits Ψ into density and unwrapped phase. Nodes with
/// `D ≤ eps_rel · max D` are masked; every connected unmasked region is
/// unwrapped by breadth-first flood fill from its densest node.
pub fn polar_decompose(psi: &WaveFunction, eps_rel: f64) -> Result<Outcome<PolarPair>> {
    let g = psi.grid();
    let (nq, np) = g.shape();
    let hbar = psi.hbar();
    let v = psi.values();
    let d = v.mapv(|x| x.norm_sqr());
    let dmax = d.iter().copied().fold(0.0, f64::max);
    let threshold = eps_rel * dmax;
    let mask = d.mapv(|x| !(x > threshold));
    if mask.iter().all(|m| *m) {
        return Err(Error::EverythingMasked);
    }
    let mut s = Array2::<f64>::zeros((nq, np));
    let mut visited = mask.clone();
    let mut components = Vec::new();
    loop {
        // densest node not yet assigned
        let seed = d
            .indexed_iter()
            .filter(|(ij, _)| !visited[*ij])
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(ij, _)| ij);
        let Some(seed) = seed else { break };
        let offset = hbar * v[seed].arg();
        s[seed] = offset;
        visited[seed] = true;
        let mut count = 1;
        let mut queue = VecDeque::from([seed]);
        while let Some((i, j)) = queue.pop_front() {
            let here = v[[i, j]];
            let neighbours = [
                (i.wrapping_sub(1), j),
                (i + 1, j),
                (i, j.wrapping_sub(1)),
                (i, j + 1),
            ];
            for (a, b) in neighbours {
                if a >= nq || b >= np || visited[[a, b]] {
                    continue;
                }
                // phase increment taken in (-π, π]
                s[[a, b]] = s[[i, j]] + hbar * (v[[a, b]] * here.conj()).arg();
                visited[[a, b]] = true;
                count += 1;
                queue.push_back((a, b));
            }
        }
        components.push(PhaseComponent { seed, offset, nodes: count });
    }
    let masked = mask.iter().filter(|m| **m).count();
    let pair = PolarPair {
        s: ScalarField::from_real(g, &s),
        d: ScalarField::from_real(g, &d),
        hbar,
        mask,
        components,
    };
    let warnings = if masked > 0 { vec![Warning::MaskedNodes { count: masked }] } else { Vec::new() };
    Ok(Outcome { value: pair, warnings })
}

/// Classical density `𝒥(Ψ) = |Ψ|² + ∂_p(p|Ψ|²) + iħ{Ψ, Ψ̄}` (complex, with
/// round-off imaginary part).
pub fn classical_density(psi: &WaveFunction) -> ScalarField {
    let g = psi.grid();
    let v = psi.values();
    let hbar = psi.hbar();
    let d = v.mapv(|x| real(x.norm_sqr()));
    let mut pd = d.clone();
    for ((_, j), x) in pd.indexed_iter_mut() {
        *x *= g.p(j);
    }
    let transport = g.d_p(&pd);
    let vq = g.d_q(v);
    let vp = g.d_p(v);
    let mut out = d;
    Zip::from(&mut out)
        .and(&transport)
        .and(&vq)
        .and(&vp)
        .for_each(|o, &t, &a, &b| {
            // {Ψ, Ψ̄} = Ψ_q conj(Ψ_p) - Ψ_p conj(Ψ_q)
            let br = a * b.conj() - b * a.conj();
            *o += t + I * hbar * br;
        });
    ScalarField::new(g.clone(), out)
}

/// `ρ = D + div(𝕁σ - 𝕁𝒜 D) = D + ∂_q σ_p - ∂_p σ_q + ∂_p(pD)`.
pub fn classical_density_from_hydro(h: &HydroState) -> ScalarField {
    let g = h.grid();
    let mut pd = h.d.values().clone();
    for ((_, j), x) in pd.indexed_iter_mut() {
        *x *= g.p(j);
    }
    let out = h.d.values() + &g.d_q(h.sigma.a_p.values()) - g.d_p(h.sigma.a_q.values()) + g.d_p(&pd);
    ScalarField::new(g.clone(), out)
}

fn bracket_fd4(g: &PhaseGrid, f: &Array2<Complex64>, hq: &Array2<f64>, hp: &Array2<f64>, stencil: Stencil) -> Array2<Complex64> {
    // {f, H} = f_q H_p - f_p H_q
    let fq = g.derivative(&f.view(), Direction::Q, stencil);
    let mut out = g.derivative(&f.view(), Direction::P, stencil);
    Zip::from(&mut out)
        .and(&fq)
        .and(hq)
        .and(hp)
        .for_each(|o, &a, &b, &c| *o = a * c - *o * b);
    out
}

/// Sampled partials and Lagrangian of a Hamiltonian, shared by the
/// hydrodynamic right-hand sides.
struct Sampled {
    hq: Array2<f64>,
    hp: Array2<f64>,
    l: Array2<f64>,
}

impl Sampled {
    fn new(h: &HamiltonianSpec, g: &PhaseGrid) -> Self {
        Self {
            hq: g.sample_real(|q, p| h.dhdq(q, p)),
            hp: g.sample_real(|q, p| h.dhdp(q, p)),
            l: g.sample_real(|q, p| h.lagrangian_at(q, p)),
        }
    }
}

fn madelung_arrays(g: &PhaseGrid, s: &Array2<Complex64>, d: &Array2<Complex64>, hs: &Sampled) -> (Array2<Complex64>, Array2<Complex64>) {
    // S is not periodic, so it always takes the FD4 stencil
    let sb = bracket_fd4(g, s, &hs.hq, &hs.hp, Stencil::Fd4);
    let ds = Zip::from(&hs.l).and(&sb).map_collect(|&l, &b| real(l) - b);
    let db = bracket_fd4(g, d, &hs.hq, &hs.hp, g.default_stencil());
    (ds, db.mapv(|x| -x))
}

/// `(∂_t S, ∂_t D) = (L_H - {S,H}, -{D,H})`.
pub fn madelung_rhs(pair: &PolarPair, h: &HamiltonianSpec) -> Result<(ScalarField, ScalarField)> {
    let masked = pair.masked_count();
    if masked > 0 {
        return Err(Error::MaskedPhase(masked));
    }
    let g = pair.grid();
    let hs = Sampled::new(h, g);
    let (ds, dd) = madelung_arrays(g, pair.s.values(), pair.d.values(), &hs);
    Ok((ScalarField::new(g.clone(), ds), ScalarField::new(g.clone(), dd)))
}

/// Time-steps the polar system. Returns `(t, pair)` at kept steps.
pub fn evolve_madelung(pair: &PolarPair, h: &HamiltonianSpec, opts: &EvolveOptions) -> Result<Vec<(f64, PolarPair)>> {
    let masked = pair.masked_count();
    if masked > 0 {
        return Err(Error::MaskedPhase(masked));
    }
    let (n, step) = opts.steps()?;
    let g = pair.grid().clone();
    let (nq, np) = g.shape();
    let hs = Sampled::new(h, &g);
    // stack S and D along axis 0 so one explicit step handles both
    let mut state = ndarray::concatenate![ndarray::Axis(0), pair.s.values().view(), pair.d.values().view()];
    let rhs = |y: &Array2<Complex64>| {
        let s = y.slice(ndarray::s![..nq, ..]).to_owned();
        let d = y.slice(ndarray::s![nq.., ..]).to_owned();
        let (a, b) = madelung_arrays(&g, &s, &d, &hs);
        ndarray::concatenate![ndarray::Axis(0), a.view(), b.view()]
    };
    let split = |y: &Array2<Complex64>| PolarPair {
        s: ScalarField::new(g.clone(), y.slice(ndarray::s![..nq, ..]).mapv(|x| real(x.re))),
        d: ScalarField::new(g.clone(), y.slice(ndarray::s![nq.., ..]).mapv(|x| real(x.re))),
        hbar: pair.hbar,
        mask: Array2::from_elem((nq, np), false),
        components: Vec::new(),
    };
    let mut out = vec![(0.0, pair.clone())];
    for k in 1..=n {
        state = explicit_step(opts.scheme, &state, step, rhs);
        if state.iter().any(|x| !x.re.is_finite()) {
            return Err(Error::NonFiniteState(k as f64 * step));
        }
        if opts.keeps(k, n) {
            let t = if k == n { opts.t_final } else { k as f64 * step };
            out.push((t, split(&state)));
        }
    }
    Ok(out)
}

/// Relative density below which `S` carries no information and the
/// transport residual is not measured.
pub const TRANSPORT_SUPPORT: f64 = 1e-6;

/// L² norm, per snapshot, of `(∂_t + £_{X_H})(dS - 𝒜)` over the support
/// `D ≥ TRANSPORT_SUPPORT · max D`. The time derivative
/// is a fourth-order finite difference across snapshots, which must be
/// equally spaced (at least five of them); spatial derivatives use FD4 since
/// `S` is not periodic. The Lie derivative uses Cartan's formula
/// `£_X α = d(i_X α) + i_X dα`.
pub fn one_form_transport_residual(traj: &[(f64, PolarPair)], h: &HamiltonianSpec) -> Result<Vec<f64>> {
    let m = traj.len();
    if m < 5 {
        return Err(Error::InvalidParameter(format!("need at least 5 snapshots, got {m}")));
    }
    let dt = traj[1].0 - traj[0].0;
    for w in traj.windows(2) {
        if ((w[1].0 - w[0].0) - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::InvalidParameter("snapshots must be equally spaced".into()));
        }
    }
    for (_, p) in traj {
        if p.masked_count() > 0 {
            return Err(Error::MaskedPhase(p.masked_count()));
        }
    }
    let g = traj[0].1.grid().clone();
    let fd = Stencil::Fd4;
    let (xq, xp) = (
        g.sample_real(|q, p| h.dhdp(q, p)),
        g.sample_real(|q, p| -h.dhdq(q, p)),
    );
    let alpha = |pair: &PolarPair| -> (Array2<Complex64>, Array2<Complex64>) {
        let s = pair.s.values();
        let mut aq = g.derivative(&s.view(), Direction::Q, fd);
        for ((_, j), x) in aq.indexed_iter_mut() {
            *x -= g.p(j);
        }
        (aq, g.derivative(&s.view(), Direction::P, fd))
    };
    let alphas: Vec<_> = traj.iter().map(|(_, p)| alpha(p)).collect();
    // five-point first-derivative weights at offsets 0..4 for each position
    const W: [[f64; 5]; 5] = [
        [-25.0, 48.0, -36.0, 16.0, -3.0],
        [-3.0, -10.0, 18.0, -6.0, 1.0],
        [1.0, -8.0, 0.0, 8.0, -1.0],
        [-1.0, 6.0, -18.0, 10.0, 3.0],
        [3.0, -16.0, 36.0, -48.0, 25.0],
    ];
    let mut out = Vec::with_capacity(m);
    for k in 0..m {
        let (start, row) = if k < 2 {
            (0, k)
        } else if k + 2 >= m {
            (m - 5, k + 5 - m)
        } else {
            (k - 2, 2)
        };
        let mut tq = Array2::<Complex64>::zeros(g.shape());
        let mut tp = Array2::<Complex64>::zeros(g.shape());
        for (o, w) in W[row].iter().enumerate() {
            let c = real(w / (12.0 * dt));
            tq.scaled_add(c, &alphas[start + o].0);
            tp.scaled_add(c, &alphas[start + o].1);
        }
        let (aq, ap) = &alphas[k];
        // i_X α and the curl c = ∂_q α_p - ∂_p α_q
        let contr = Zip::from(aq).and(ap).and(&xq).and(&xp).map_collect(|&a, &b, &u, &v| a * u + b * v);
        let curl = g.derivative(&ap.view(), Direction::Q, fd) - g.derivative(&aq.view(), Direction::P, fd);
        let lie_q = g.derivative(&contr.view(), Direction::Q, fd)
            - Zip::from(&curl).and(&xp).map_collect(|&c, &v| c * v);
        let lie_p = g.derivative(&contr.view(), Direction::P, fd)
            + Zip::from(&curl).and(&xq).map_collect(|&c, &u| c * u);
        let d = traj[k].1.d.values();
        let floor = TRANSPORT_SUPPORT * d.iter().map(|x| x.re).fold(0.0, f64::max);
        let sum: f64 = Zip::from(&(tq + lie_q))
            .and(&(tp + lie_p))
            .and(d)
            .fold(0.0, |acc, rq, rp, dk| if dk.re >= floor { acc + rq.norm_sqr() + rp.norm_sqr() } else { acc });
        out.push((sum * g.cell_area()).sqrt());
    }
    Ok(out)
}

/// Right-hand side of the hydrodynamic system: `τ = σ - D𝒜` is transported
/// by `∂_t τ = -£_{X_H} τ` and `∂_t D = -div(D X_H)`; returns `(∂_t σ, ∂_t D)`
/// assembled as a [`HydroState`].
pub fn hydro_rhs(state: &HydroState, h: &HamiltonianSpec) -> HydroState {
    let g = state.grid();
    let hs = Sampled::new(h, g);
    let (a, b, c) = hydro_arrays(g, state.sigma.a_q.values(), state.sigma.a_p.values(), state.d.values(), &hs);
    HydroState {
        sigma: OneForm {
            a_q: ScalarField::new(g.clone(), a),
            a_p: ScalarField::new(g.clone(), b),
        },
        d: ScalarField::new(g.clone(), c),
    }
}

fn hydro_arrays(
    g: &PhaseGrid,
    sq: &Array2<Complex64>,
    sp: &Array2<Complex64>,
    d: &Array2<Complex64>,
    hs: &Sampled,
) -> (Array2<Complex64>, Array2<Complex64>, Array2<Complex64>) {
    let (nq, np) = g.shape();
    let xq = &hs.hp;
    let xp = hs.hq.mapv(|v| -v);
    // τ_q = σ_q - p D, τ_p = σ_p
    let mut tq = Array2::zeros((nq, np));
    Zip::indexed(&mut tq).and(sq).and(d).for_each(|(_, j), t, &s, &dd| *t = s - dd * g.p(j));
    let tp = sp;
    let contr = Zip::from(&tq).and(tp).and(xq).and(&xp).map_collect(|&a, &b, &u, &v| a * u + b * v);
    let curl = g.d_q(tp) - g.d_p(&tq);
    let dcq = g.d_q(&contr);
    let dcp = g.d_p(&contr);
    // -£_X τ
    let rq = Zip::from(&dcq).and(&curl).and(&xp).map_collect(|&a, &c, &v| -(a - c * v));
    let rp = Zip::from(&dcp).and(&curl).and(xq).map_collect(|&a, &c, &u| -(a + c * u));
    // ∂_t D = -div(D X)
    let fq = Zip::from(d).and(xq).map_collect(|&a, &u| a * u);
    let fp = Zip::from(d).and(&xp).map_collect(|&a, &v| a * v);
    let dd = -(g.d_q(&fq) + g.d_p(&fp));
    // ∂_t σ = ∂_t τ + 𝒜 ∂_t D
    let mut dsq = rq;
    Zip::indexed(&mut dsq).and(&dd).for_each(|(_, j), o, &x| *o += x * g.p(j));
    (dsq, rp, dd)
}

/// `h(σ, D) = ∫ (X_H·σ - D L_H) dz`.
pub fn hydro_energy(state: &HydroState, h: &HamiltonianSpec) -> f64 {
    let g = state.grid();
    let mut acc = 0.0;
    for ((i, j), d) in state.d.values().indexed_iter() {
        let (q, p) = g.node(i, j);
        let (xq, xp) = h.vector_field_at(q, p);
        acc += xq * state.sigma.a_q.at(i, j).re + xp * state.sigma.a_p.at(i, j).re - d.re * h.lagrangian_at(q, p);
    }
    acc * g.cell_area()
}

/// Time-steps the hydrodynamic system. Returns `(t, state)` at kept steps.
pub fn evolve_hydro(state: &HydroState, h: &HamiltonianSpec, opts: &EvolveOptions) -> Result<Vec<(f64, HydroState)>> {
    let (n, step) = opts.steps()?;
    let g = state.grid().clone();
    let nq = g.n_q();
    let hs = Sampled::new(h, &g);
    let mut y = ndarray::concatenate![
        ndarray::Axis(0),
        state.sigma.a_q.values().view(),
        state.sigma.a_p.values().view(),
        state.d.values().view()
    ];
    let rhs = |y: &Array2<Complex64>| {
        let a = y.slice(ndarray::s![..nq, ..]).to_owned();
        let b = y.slice(ndarray::s![nq..2 * nq, ..]).to_owned();
        let c = y.slice(ndarray::s![2 * nq.., ..]).to_owned();
        let (x, z, w) = hydro_arrays(&g, &a, &b, &c, &hs);
        ndarray::concatenate![ndarray::Axis(0), x.view(), z.view(), w.view()]
    };
    let split = |y: &Array2<Complex64>| HydroState {
        sigma: OneForm {
            a_q: ScalarField::new(g.clone(), y.slice(ndarray::s![..nq, ..]).to_owned()),
            a_p: ScalarField::new(g.clone(), y.slice(ndarray::s![nq..2 * nq, ..]).to_owned()),
        },
        d: ScalarField::new(g.clone(), y.slice(ndarray::s![2 * nq.., ..]).to_owned()),
    };
    let mut out = vec![(0.0, state.clone())];
    for k in 1..=n {
        y = explicit_step(opts.scheme, &y, step, rhs);
        if y.iter().any(|x| !x.re.is_finite()) {
            return Err(Error::NonFiniteState(k as f64 * step));
        }
        if opts.keeps(k, n) {
            let t = if k == n { opts.t_final } else { k as f64 * step };
            out.push((t, split(&y)));
        }
    }
    Ok(out)
}

/// `σ = D𝒜`, the hydrodynamic state of a point-particle-like density.
pub fn point_particle_state(d: &ScalarField) -> HydroState {
    let a = canonical_one_form(d.grid());
    HydroState {
        sigma: OneForm {
            a_q: a.a_q.mul(d),
            a_p: ScalarField::zeros(d.grid()),
        },
        d: d.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::integrate;
    use crate::kvh::evolve;
    use proptest::prelude::*;

    fn grid() -> PhaseGrid {
        PhaseGrid::periodic_square(8.0, 96).unwrap()
    }

    fn packet(hbar: f64) -> GaussianPacket {
        GaussianPacket::new((1.0, -0.5), 0.7, hbar).with_quadratic_phase(0.2, -0.1, 0.15)
    }

    #[test]
    fn hydro_of_real_and_linear_phase() {
        let g = grid();
        let real_psi = GaussianPacket::new((0.0, 0.5), 0.8, 1.0).sample(&g).unwrap();
        let h = hydro_from_wavefunction(&real_psi);
        assert!(h.sigma.a_q.max_abs() < 1e-14 && h.sigma.a_p.max_abs() < 1e-14);
        let c = 0.6;
        let hbar = 0.5;
        let lin = GaussianPacket::new((0.0, 0.5), 0.8, hbar).with_linear_phase(c, 0.0);
        let h = hydro_from_wavefunction(&lin.sample(&g).unwrap());
        let expect = h.d.scale(real(c));
        assert!(h.sigma.a_q.sub(&expect).max_abs() < 1e-10);
        assert!(h.sigma.a_p.max_abs() < 1e-10);
        assert!((h.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hydro_matches_polar_gradient() {
        let g = grid();
        let pk = packet(0.7);
        let h = hydro_from_wavefunction(&pk.sample(&g).unwrap());
        // D∇S with S analytic
        let (x0, y0) = pk.center;
        let sq = |q: f64, p: f64| pk.k.0 + 2.0 * pk.a_qq * (q - x0) + pk.a_qp * (p - y0);
        let sp = |q: f64, p: f64| pk.k.1 + pk.a_qp * (q - x0) + 2.0 * pk.a_pp * (p - y0);
        for ((i, j), d) in h.d.values().indexed_iter() {
            if d.re > 1e-8 {
                let (q, p) = g.node(i, j);
                assert!((h.sigma.a_q.at(i, j).re - d.re * sq(q, p)).abs() < 1e-8);
                assert!((h.sigma.a_p.at(i, j).re - d.re * sp(q, p)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn polar_decompose_examples() {
        let g = grid();
        let hbar = 0.8;
        let lin = GaussianPacket::new((0.5, 0.0), 0.9, hbar).with_linear_phase(1.0, 0.0);
        let out = polar_decompose(&lin.sample(&g).unwrap(), 1e-8).unwrap();
        let pair = out.value;
        assert_eq!(pair.components.len(), 1);
        // S = q + const on the support
        let c0 = pair.s.at(48, 48).re - g.q(48);
        for ((i, j), m) in pair.mask.indexed_iter() {
            if !m {
                assert!((pair.s.at(i, j).re - g.q(i) - c0).abs() < 1e-9);
            } else {
                assert_eq!(pair.s.at(i, j).re, 0.0);
            }
        }
        assert!(out.warnings.iter().any(|w| matches!(w, Warning::MaskedNodes { .. })));
        let real_psi = GaussianPacket::new((0.0, 0.0), 0.9, hbar).sample(&g).unwrap();
        let pair = polar_decompose(&real_psi, 1e-8).unwrap().value;
        assert!(pair.s.max_abs() < 1e-14);
    }

    #[test]
    fn polar_round_trip() {
        let g = grid();
        let psi = packet(0.3).sample(&g).unwrap();
        let pair = polar_decompose(&psi, 1e-8).unwrap().value;
        let back = pair.reconstruct().unwrap();
        // global phase from the seed
        let k = pair.components[0].seed;
        let alpha = back.values()[k] / psi.values()[k];
        let alpha = alpha / alpha.norm();
        for ((i, j), m) in pair.mask.indexed_iter() {
            if !m {
                assert!((back.values()[[i, j]] - psi.values()[[i, j]] * alpha).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn polar_components_and_empty() {
        let g = grid();
        let a = GaussianPacket::new((-4.0, 0.0), 0.3, 1.0).with_linear_phase(0.5, 0.0);
        let b = GaussianPacket::new((4.0, 0.0), 0.3, 1.0).with_linear_phase(-0.5, 0.0);
        let psi = WaveFunction::from_fn(&g, 1.0, |q, p| {
            use crate::PhaseSpaceFn;
            (a.eval(q, p) + b.eval(q, p) * 0.5) / 1.25f64.sqrt()
        })
        .unwrap();
        let pair = polar_decompose(&psi, 1e-8).unwrap().value;
        assert_eq!(pair.components.len(), 2);
        let zero = WaveFunction::new(ScalarField::zeros(&g), 1.0).unwrap();
        assert!(matches!(polar_decompose(&zero, 1e-8), Err(Error::EverythingMasked)));
    }

    #[test]
    fn classical_density_examples() {
        let g = grid();
        let hbar = 0.6;
        let pk = packet(hbar);
        let psi = pk.sample(&g).unwrap();
        let rho = classical_density(&psi);
        assert!(rho.max_imag() < 1e-10);
        assert!((integrate(&rho).re - 1.0).abs() < 1e-8);
        // symbolic oracle: with Ψ = √D e^{iS/ħ}, iħ{Ψ,Ψ̄} = {D,S}, so
        // ρ = D + ∂_p(pD) + D_q S_p - D_p S_q
        let (x0, y0) = pk.center;
        let s2 = pk.width * pk.width;
        let exact = ScalarField::from_real_fn(&g, |q, p| {
            let d = pk.density(q, p);
            let dq = -d * (q - x0) / s2;
            let dp = -d * (p - y0) / s2;
            let sq = pk.k.0 + 2.0 * pk.a_qq * (q - x0) + pk.a_qp * (p - y0);
            let sp = pk.k.1 + pk.a_qp * (q - x0) + 2.0 * pk.a_pp * (p - y0);
            d + d + p * dp + dq * sp - dp * sq
        });
        assert!(rho.sub(&exact).max_abs() < 1e-8);
        // real Ψ: the bracket vanishes
        let real_pk = GaussianPacket::new((0.3, 0.2), 0.8, hbar);
        let rho = classical_density(&real_pk.sample(&g).unwrap());
        let exact = ScalarField::from_real_fn(&g, |q, p| {
            let d = real_pk.density(q, p);
            d + d - p * d * (p - 0.2) / 0.64
        });
        assert!(rho.sub(&exact).max_abs() < 1e-9);
    }

    #[test]
    fn density_from_hydro_examples() {
        let g = grid();
        let d = ScalarField::from_real_fn(&g, |q, p| packet(1.0).density(q, p));
        let st = point_particle_state(&d);
        assert!(classical_density_from_hydro(&st).sub(&d).max_abs() < 1e-12);
        let zero_sigma = HydroState::new(OneForm { a_q: ScalarField::zeros(&g), a_p: ScalarField::zeros(&g) }, d.clone()).unwrap();
        let rho = classical_density_from_hydro(&zero_sigma);
        let exact = ScalarField::from_real_fn(&g, |q, p| {
            let dd = packet(1.0).density(q, p);
            dd + dd - p * dd * (p + 0.5) / 0.49
        });
        assert!(rho.sub(&exact).max_abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(5))]
        #[test]
        fn two_density_formulas_agree(
            cq in -1.5f64..1.5, cp in -1.5f64..1.5, s in 0.5f64..0.8,
            a in -0.3f64..0.3, b in -0.3f64..0.3, c in -0.3f64..0.3, kq in -1.0f64..1.0,
        ) {
            // |Ψ| must be below round-off at the box edge
            let g = PhaseGrid::periodic_square(10.0, 128).unwrap();
            let pk = GaussianPacket::new((cq, cp), s, 0.8).with_quadratic_phase(a, b, c).with_linear_phase(kq, 0.2);
            let psi = pk.sample(&g).unwrap();
            let r1 = classical_density(&psi);
            let r2 = classical_density_from_hydro(&hydro_from_wavefunction(&psi));
            let e = r1.sub(&r2).max_abs();
            prop_assert!(e < 1e-8, "{e}");
        }
    }

    #[test]
    fn madelung_rhs_examples() {
        let g = grid();
        let zero = HamiltonianSpec::constant(0.0);
        let pair = PolarPair::from_packet(&g, &packet(1.0));
        let (ds, dd) = madelung_rhs(&pair, &zero).unwrap();
        assert_eq!(ds.max_abs(), 0.0);
        assert_eq!(dd.max_abs(), 0.0);
        // S a function of H: dS/dt = L_H
        let h = HamiltonianSpec::harmonic();
        let pair = PolarPair::from_fns(&g, 1.0, |q, p| 0.3 * (q * q + p * p), |q, p| packet(1.0).density(q, p));
        let (ds, _) = madelung_rhs(&pair, &h).unwrap();
        let l = crate::hamiltonian::phase_space_lagrangian(&h, &g);
        assert!(ds.sub(&l).max_abs() < 1e-10);
        let psi = GaussianPacket::new((7.0, 0.0), 0.3, 1.0).sample(&g).unwrap();
        let masked = polar_decompose(&psi, 1e-8).unwrap().value;
        assert!(matches!(madelung_rhs(&masked, &h), Err(Error::MaskedPhase(_))));
    }

    #[test]
    fn madelung_tracks_kvh() {
        let g = PhaseGrid::periodic_square(8.0, 64).unwrap();
        let pk = packet(1.0);
        let h = HamiltonianSpec::harmonic();
        let opts = EvolveOptions::new(1.0, 2e-3).stride(50);
        let polar = evolve_madelung(&PolarPair::from_packet(&g, &pk), &h, &opts).unwrap();
        let kvh = evolve(&h, &pk.sample(&g).unwrap(), &opts).unwrap();
        let a = polar.last().unwrap().1.reconstruct().unwrap();
        let b = kvh.last();
        assert!(a.field().sub(b.field()).norm_l2() < 1e-4);
    }

    #[test]
    fn transport_residual_small() {
        let g = PhaseGrid::periodic_square(8.0, 64).unwrap();
        for (h, pk) in [
            (HamiltonianSpec::constant(0.0), packet(1.0)),
            (HamiltonianSpec::free(), GaussianPacket::new((0.0, 0.5), 0.7, 1.0)),
            (HamiltonianSpec::harmonic(), packet(1.0)),
        ] {
            // snapshot spacing 0.01 keeps the time stencil error below 1e-5
            let opts = EvolveOptions::new(1.0, 1e-3).stride(10);
            let traj = evolve_madelung(&PolarPair::from_packet(&g, &pk), &h, &opts).unwrap();
            let r = one_form_transport_residual(&traj, &h).unwrap();
            let worst = r.iter().copied().fold(0.0, f64::max);
            assert!(worst < 1e-5, "{}: {worst}", h.name());
        }
    }

    #[test]
    fn hydro_rhs_examples() {
        let g = grid();
        let d = ScalarField::from_real_fn(&g, |q, p| packet(1.0).density(q, p));
        let st = point_particle_state(&d);
        let h = HamiltonianSpec::harmonic();
        let r = hydro_rhs(&st, &h);
        // τ stays zero: ∂_t σ = 𝒜 ∂_t D
        let expect = r.d.mul(&canonical_one_form(&g).a_q);
        assert!(r.sigma.a_q.sub(&expect).max_abs() < 1e-10);
        assert!(r.sigma.a_p.max_abs() < 1e-10);
        let st = hydro_from_wavefunction(&packet(1.0).sample(&g).unwrap());
        let r = hydro_rhs(&st, &HamiltonianSpec::constant(0.0));
        assert!(r.sigma.a_q.max_abs() == 0.0 && r.d.max_abs() == 0.0);
    }

    #[test]
    fn hydro_commutes_with_kvh() {
        let g = PhaseGrid::periodic_square(8.0, 64).unwrap();
        let pk = packet(1.0);
        let h = HamiltonianSpec::harmonic();
        let opts = EvolveOptions::new(1.0, 2e-3).stride(100);
        let psi0 = pk.sample(&g).unwrap();
        let hy = evolve_hydro(&hydro_from_wavefunction(&psi0), &h, &opts).unwrap();
        let kv = evolve(&h, &psi0, &opts).unwrap();
        let a = &hy.last().unwrap().1;
        let b = hydro_from_wavefunction(&kv.last());
        assert!(a.distance_l2(&b) < 1e-4);
        let e0 = hydro_energy(&hy[0].1, &h);
        for (_, s) in &hy {
            assert!((hydro_energy(s, &h) - e0).abs() < 1e-7);
            assert!((s.mass() - 1.0).abs() < 1e-8);
        }
    }
}
