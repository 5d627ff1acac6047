//! Rectangular phase-space grids and the derivative / quadrature machinery
//! every solver in the crate is built on.
//!
//! Nodes sit at `q_i = q_min + i*dq`, `p_j = p_min + j*dp` with
//! `dq = (q_max - q_min)/n_q`. Arrays are indexed `[i_q, i_p]`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2, Axis, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// How derivatives are taken at the edges of the box.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Fourier differentiation on a periodic box.
    PeriodicSpectral,
    /// Centred fourth-order differences with one-sided fourth-order closures.
    FiniteDifference4,
}

/// Derivative discretisation, chosen per call when a field is known not to
/// be periodic (phases, polynomial coefficients).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    Spectral,
    Fd4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Q,
    P,
}

struct SpectralPlans {
    fft_q: Arc<dyn Fft<f64>>,
    ifft_q: Arc<dyn Fft<f64>>,
    fft_p: Arc<dyn Fft<f64>>,
    ifft_p: Arc<dyn Fft<f64>>,
    /// Derivative multipliers; the Nyquist entry is zero so that the
    /// discrete derivative stays real and skew-symmetric.
    kq: Vec<f64>,
    kp: Vec<f64>,
    keep_q: Vec<bool>,
    keep_p: Vec<bool>,
}

fn wavenumbers(n: usize, length: f64) -> (Vec<f64>, Vec<bool>) {
    let mut k = Vec::with_capacity(n);
    let mut keep = Vec::with_capacity(n);
    for m in 0..n {
        let signed = if m <= n / 2 { m as i64 } else { m as i64 - n as i64 };
        let nyquist = n.is_multiple_of(2) && m == n / 2;
        k.push(if nyquist { 0.0 } else { 2.0 * PI * signed as f64 / length });
        keep.push(3 * signed.unsigned_abs() as usize <= n);
    }
    (k, keep)
}

/// Discretisation of a rectangle of phase space `[q_min, q_max) x [p_min, p_max)`.
#[derive(Clone)]
pub struct PhaseGrid {
    q_min: f64,
    q_max: f64,
    p_min: f64,
    p_max: f64,
    n_q: usize,
    n_p: usize,
    bc: BoundaryMode,
    dealias: bool,
    plans: Arc<SpectralPlans>,
}

impl fmt::Debug for PhaseGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhaseGrid")
            .field("q", &(self.q_min, self.q_max, self.n_q))
            .field("p", &(self.p_min, self.p_max, self.n_p))
            .field("bc", &self.bc)
            .field("dealias", &self.dealias)
            .finish()
    }
}

impl PartialEq for PhaseGrid {
    fn eq(&self, other: &Self) -> bool {
        self.q_min == other.q_min
            && self.q_max == other.q_max
            && self.p_min == other.p_min
            && self.p_max == other.p_max
            && self.n_q == other.n_q
            && self.n_p == other.n_p
            && self.bc == other.bc
    }
}

impl PhaseGrid {
    pub fn new(
        q_range: (f64, f64),
        p_range: (f64, f64),
        n_q: usize,
        n_p: usize,
        bc: BoundaryMode,
    ) -> Result<Self> {
        let (q_min, q_max) = q_range;
        let (p_min, p_max) = p_range;
        let finite = [q_min, q_max, p_min, p_max].iter().all(|v| v.is_finite());
        if !finite || q_max <= q_min || p_max <= p_min {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be finite and increasing, got q {q_range:?}, p {p_range:?}"
            )));
        }
        let min_nodes = if bc == BoundaryMode::FiniteDifference4 { 5 } else { 2 };
        if n_q < min_nodes || n_p < min_nodes {
            return Err(Error::InvalidParameter(format!(
                "need at least {min_nodes} nodes per axis, got {n_q} x {n_p}"
            )));
        }
        let mut planner = FftPlanner::new();
        let (kq, keep_q) = wavenumbers(n_q, q_max - q_min);
        let (kp, keep_p) = wavenumbers(n_p, p_max - p_min);
        let plans = SpectralPlans {
            fft_q: planner.plan_fft_forward(n_q),
            ifft_q: planner.plan_fft_inverse(n_q),
            fft_p: planner.plan_fft_forward(n_p),
            ifft_p: planner.plan_fft_inverse(n_p),
            kq,
            kp,
            keep_q,
            keep_p,
        };
        Ok(Self {
            q_min,
            q_max,
            p_min,
            p_max,
            n_q,
            n_p,
            bc,
            dealias: false,
            plans: Arc::new(plans),
        })
    }

    /// Square periodic grid `[-half, half)^2` with `n` nodes per axis.
    pub fn periodic_square(half: f64, n: usize) -> Result<Self> {
        Self::new((-half, half), (-half, half), n, n, BoundaryMode::PeriodicSpectral)
    }

    /// Enables the 2/3-rule mask on spectral derivatives.
    pub fn with_dealias(mut self, on: bool) -> Self {
        self.dealias = on;
        self
    }

    pub fn q_range(&self) -> (f64, f64) {
        (self.q_min, self.q_max)
    }
    pub fn p_range(&self) -> (f64, f64) {
        (self.p_min, self.p_max)
    }
    pub fn n_q(&self) -> usize {
        self.n_q
    }
    pub fn n_p(&self) -> usize {
        self.n_p
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.n_q, self.n_p)
    }
    pub fn len(&self) -> usize {
        self.n_q * self.n_p
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn bc(&self) -> BoundaryMode {
        self.bc
    }
    pub fn dealias(&self) -> bool {
        self.dealias
    }
    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / self.n_q as f64
    }
    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / self.n_p as f64
    }
    /// Liouville measure of one cell.
    pub fn cell_area(&self) -> f64 {
        self.dq() * self.dp()
    }
    pub fn q(&self, i: usize) -> f64 {
        self.q_min + i as f64 * self.dq()
    }
    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }
    pub fn node(&self, i: usize, j: usize) -> (f64, f64) {
        (self.q(i), self.p(j))
    }
    pub fn is_periodic(&self) -> bool {
        self.bc == BoundaryMode::PeriodicSpectral
    }

    pub fn default_stencil(&self) -> Stencil {
        match self.bc {
            BoundaryMode::PeriodicSpectral => Stencil::Spectral,
            BoundaryMode::FiniteDifference4 => Stencil::Fd4,
        }
    }

    /// Whether `(q, p)` lies in the half-open box.
    pub fn contains(&self, q: f64, p: f64) -> bool {
        q >= self.q_min && q < self.q_max && p >= self.p_min && p < self.p_max
    }

    /// Maps a point back into the periodic box.
    pub fn wrap(&self, q: f64, p: f64) -> (f64, f64) {
        let lq = self.q_max - self.q_min;
        let lp = self.p_max - self.p_min;
        (
            self.q_min + (q - self.q_min).rem_euclid(lq),
            self.p_min + (p - self.p_min).rem_euclid(lp),
        )
    }

    /// Samples a real function at the nodes.
    pub fn sample_real(&self, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.q(i), self.p(j)))
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> Complex64) -> Array2<Complex64> {
        Array2::from_shape_fn(self.shape(), |(i, j)| f(self.q(i), self.p(j)))
    }

    // ----- array-level derivatives -------------------------------------

    /// Derivative of a node array along `dir` with the requested stencil.
    pub fn derivative(
        &self,
        values: &ArrayView2<Complex64>,
        dir: Direction,
        stencil: Stencil,
    ) -> Array2<Complex64> {
        debug_assert_eq!(values.dim(), self.shape());
        match stencil {
            Stencil::Spectral => self.spectral_derivative(values, dir),
            Stencil::Fd4 => self.fd4_derivative(values, dir),
        }
    }

    pub fn d_q(&self, values: &Array2<Complex64>) -> Array2<Complex64> {
        self.derivative(&values.view(), Direction::Q, self.default_stencil())
    }

    pub fn d_p(&self, values: &Array2<Complex64>) -> Array2<Complex64> {
        self.derivative(&values.view(), Direction::P, self.default_stencil())
    }

    fn spectral_derivative(&self, values: &ArrayView2<Complex64>, dir: Direction) -> Array2<Complex64> {
        let (nq, np) = self.shape();
        let plans = &*self.plans;
        match dir {
            Direction::P => {
                let mut buf: Vec<Complex64> = values.iter().copied().collect();
                plans.fft_p.process(&mut buf);
                let scale = 1.0 / np as f64;
                for row in buf.chunks_exact_mut(np) {
                    for (m, c) in row.iter_mut().enumerate() {
                        let keep = !self.dealias || plans.keep_p[m];
                        let k = if keep { plans.kp[m] } else { 0.0 };
                        *c *= Complex64::new(0.0, k * scale);
                    }
                }
                plans.ifft_p.process(&mut buf);
                Array2::from_shape_vec((nq, np), buf).expect("shape preserved")
            }
            Direction::Q => {
                // transpose so that q-lanes are contiguous
                let mut buf = vec![Complex64::new(0.0, 0.0); nq * np];
                for ((i, j), v) in values.indexed_iter() {
                    buf[j * nq + i] = *v;
                }
                plans.fft_q.process(&mut buf);
                let scale = 1.0 / nq as f64;
                for col in buf.chunks_exact_mut(nq) {
                    for (m, c) in col.iter_mut().enumerate() {
                        let keep = !self.dealias || plans.keep_q[m];
                        let k = if keep { plans.kq[m] } else { 0.0 };
                        *c *= Complex64::new(0.0, k * scale);
                    }
                }
                plans.ifft_q.process(&mut buf);
                Array2::from_shape_fn((nq, np), |(i, j)| buf[j * nq + i])
            }
        }
    }

    fn fd4_derivative(&self, values: &ArrayView2<Complex64>, dir: Direction) -> Array2<Complex64> {
        let (axis, h) = match dir {
            Direction::Q => (Axis(0), self.dq()),
            Direction::P => (Axis(1), self.dp()),
        };
        let mut out = Array2::zeros(values.dim());
        Zip::from(out.lanes_mut(axis))
            .and(values.lanes(axis))
            .for_each(|mut o, f| {
                let n = f.len();
                let c = 1.0 / (12.0 * h);
                for i in 0..n {
                    o[i] = if i >= 2 && i + 2 < n {
                        (f[i - 2] - f[i - 1] * 8.0 + f[i + 1] * 8.0 - f[i + 2]) * c
                    } else if i == 0 {
                        (f[0] * -25.0 + f[1] * 48.0 - f[2] * 36.0 + f[3] * 16.0 - f[4] * 3.0) * c
                    } else if i == 1 {
                        (f[0] * -3.0 - f[1] * 10.0 + f[2] * 18.0 - f[3] * 6.0 + f[4]) * c
                    } else if i == n - 2 {
                        -(f[n - 1] * -3.0 - f[n - 2] * 10.0 + f[n - 3] * 18.0 - f[n - 4] * 6.0
                            + f[n - 5])
                            * c
                    } else {
                        -(f[n - 1] * -25.0 + f[n - 2] * 48.0 - f[n - 3] * 36.0
                            + f[n - 4] * 16.0
                            - f[n - 5] * 3.0)
                            * c
                    };
                }
            });
        out
    }

    /// Sum of `|F_k|^2` over Fourier space, scaled to equal the node-space
    /// quadrature of `|f|^2`.
    pub fn spectral_power(&self, values: &Array2<Complex64>) -> f64 {
        let (nq, np) = self.shape();
        let mut buf: Vec<Complex64> = values.iter().copied().collect();
        self.plans.fft_p.process(&mut buf);
        let mut t = vec![Complex64::new(0.0, 0.0); nq * np];
        for i in 0..nq {
            for j in 0..np {
                t[j * nq + i] = buf[i * np + j];
            }
        }
        self.plans.fft_q.process(&mut t);
        let s: f64 = t.iter().map(|c| c.norm_sqr()).sum();
        s * self.cell_area() / (nq * np) as f64
    }

    /// Fourier refinement onto the grid with twice the resolution per axis
    /// (node `(2i, 2j)` of the result is node `(i, j)` of the input).
    /// Exact for band-limited periodic data.
    pub fn refine_twice(&self, values: &Array2<Complex64>) -> Array2<Complex64> {
        let (nq, np) = self.shape();
        let (mq, mp) = (2 * nq, 2 * np);
        let mut planner = FftPlanner::new();
        let up_q = planner.plan_fft_inverse(mq);
        let up_p = planner.plan_fft_inverse(mp);
        // forward along p
        let mut buf: Vec<Complex64> = values.iter().copied().collect();
        self.plans.fft_p.process(&mut buf);
        // zero-pad along p: (nq, mp)
        let mut padded_p = vec![Complex64::new(0.0, 0.0); nq * mp];
        for i in 0..nq {
            for m in 0..np {
                let target = pad_index(m, np, mp);
                let v = buf[i * np + m];
                match target {
                    PadTarget::One(t) => padded_p[i * mp + t] += v,
                    PadTarget::Split(a, b) => {
                        padded_p[i * mp + a] += v * 0.5;
                        padded_p[i * mp + b] += v * 0.5;
                    }
                }
            }
        }
        up_p.process(&mut padded_p);
        // now transform along q: transpose to (mp, nq)
        let mut tq = vec![Complex64::new(0.0, 0.0); mp * nq];
        for i in 0..nq {
            for j in 0..mp {
                tq[j * nq + i] = padded_p[i * mp + j];
            }
        }
        self.plans.fft_q.process(&mut tq);
        let mut padded_q = vec![Complex64::new(0.0, 0.0); mp * mq];
        for j in 0..mp {
            for m in 0..nq {
                let v = tq[j * nq + m];
                match pad_index(m, nq, mq) {
                    PadTarget::One(t) => padded_q[j * mq + t] += v,
                    PadTarget::Split(a, b) => {
                        padded_q[j * mq + a] += v * 0.5;
                        padded_q[j * mq + b] += v * 0.5;
                    }
                }
            }
        }
        up_q.process(&mut padded_q);
        let scale = 1.0 / (nq * np) as f64;
        Array2::from_shape_fn((mq, mp), |(i, j)| padded_q[j * mq + i] * scale)
    }

    /// Grid with twice as many nodes on the same box.
    pub fn refined_twice(&self) -> Result<PhaseGrid> {
        PhaseGrid::new(
            self.q_range(),
            self.p_range(),
            2 * self.n_q,
            2 * self.n_p,
            self.bc,
        )
    }
}

enum PadTarget {
    One(usize),
    Split(usize, usize),
}

fn pad_index(m: usize, n: usize, big: usize) -> PadTarget {
    if n.is_multiple_of(2) && m == n / 2 {
        // Nyquist mode is shared between +n/2 and -n/2
        PadTarget::Split(n / 2, big - n / 2)
    } else if m < n / 2 + n % 2 {
        PadTarget::One(m)
    } else {
        PadTarget::One(big - (n - m))
    }
}

// ----- field-level operations ------------------------------------------

fn check_finite(f: &ScalarField, context: &'static str) -> Result<()> {
    if let Some(((i, j), _)) = f
        .values()
        .indexed_iter()
        .find(|(_, v)| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(Error::NonFinite { context, i, j });
    }
    Ok(())
}

fn same_grid(a: &ScalarField, b: &ScalarField) -> Result<()> {
    if a.grid() != b.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

pub fn partial_q(f: &ScalarField) -> Result<ScalarField> {
    check_finite(f, "partial_q")?;
    let g = f.grid();
    Ok(ScalarField::new(g.clone(), g.d_q(f.values())))
}

pub fn partial_p(f: &ScalarField) -> Result<ScalarField> {
    check_finite(f, "partial_p")?;
    let g = f.grid();
    Ok(ScalarField::new(g.clone(), g.d_p(f.values())))
}

/// Partial derivative with an explicit stencil (FD4 for non-periodic data
/// such as phases, regardless of the grid's default).
pub fn partial_with(f: &ScalarField, dir: Direction, stencil: Stencil) -> Result<ScalarField> {
    check_finite(f, "partial_with")?;
    let g = f.grid();
    Ok(ScalarField::new(
        g.clone(),
        g.derivative(&f.values().view(), dir, stencil),
    ))
}

/// Canonical Poisson bracket `{f,g} = f_q g_p - f_p g_q`.
pub fn poisson_bracket(f: &ScalarField, g: &ScalarField) -> Result<ScalarField> {
    same_grid(f, g)?;
    check_finite(f, "poisson_bracket")?;
    check_finite(g, "poisson_bracket")?;
    let grid = f.grid();
    let out = bracket_arrays(grid, f.values(), g.values());
    Ok(ScalarField::new(grid.clone(), out))
}

pub(crate) fn bracket_arrays(
    grid: &PhaseGrid,
    f: &Array2<Complex64>,
    g: &Array2<Complex64>,
) -> Array2<Complex64> {
    let fq = grid.d_q(f);
    let fp = grid.d_p(f);
    let gq = grid.d_q(g);
    let gp = grid.d_p(g);
    let mut out = Array2::zeros(grid.shape());
    Zip::from(&mut out)
        .and(&fq)
        .and(&fp)
        .and(&gq)
        .and(&gp)
        .for_each(|o, &a, &b, &c, &d| *o = a * d - b * c);
    out
}

/// `∫ f dz` with weight `dq*dp` per node.
pub fn integrate(f: &ScalarField) -> Complex64 {
    f.values().sum() * f.grid().cell_area()
}

/// `div v = ∂_q v_q + ∂_p v_p`.
pub fn divergence(v_q: &ScalarField, v_p: &ScalarField) -> Result<ScalarField> {
    same_grid(v_q, v_p)?;
    check_finite(v_q, "divergence")?;
    check_finite(v_p, "divergence")?;
    let g = v_q.grid();
    let out = g.d_q(v_q.values()) + g.d_p(v_p.values());
    Ok(ScalarField::new(g.clone(), out))
}
