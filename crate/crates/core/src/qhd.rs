//! One-dimensional Schrödinger evolution and its Madelung fluid.
//!
//! Everything here lives on configuration space, a periodic line, so the
//! phase-space machinery is not used. Derivatives are spectral.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Density below which Bohm residuals are not evaluated.
pub const BOHM_MASK: f64 = 1e-6;

/// Periodic line `[lo, lo + len)` with `n` nodes.
#[derive(Clone)]
pub struct Line {
    lo: f64,
    len: f64,
    n: usize,
    k: Arc<Vec<f64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Line {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Line").field("lo", &self.lo).field("len", &self.len).field("n", &self.n).finish()
    }
}

impl PartialEq for Line {
    fn eq(&self, o: &Self) -> bool {
        self.lo == o.lo && self.len == o.len && self.n == o.n
    }
}

impl Line {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && hi > lo) || n < 8 {
            return Err(Error::InvalidParameter(format!("bad line [{lo}, {hi}) with {n} nodes")));
        }
        let len = hi - lo;
        let k = (0..n)
            .map(|i| {
                let m = if i <= n / 2 { i as f64 } else { i as f64 - n as f64 };
                2.0 * PI * m / len
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            lo,
            len,
            n,
            k: Arc::new(k),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn dx(&self) -> f64 {
        self.len / self.n as f64
    }
    pub fn x(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.dx()
    }
    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.len)
    }
    pub fn nodes(&self) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |i| self.x(i))
    }
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Array1<f64> {
        Array1::from_shape_fn(self.n, |i| f(self.x(i)))
    }
    pub fn integrate(&self, f: &Array1<f64>) -> f64 {
        f.sum() * self.dx()
    }

    fn spectrum(&self, f: &Array1<Complex64>) -> Vec<Complex64> {
        let mut buf = f.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    fn synthesize(&self, mut buf: Vec<Complex64>) -> Array1<Complex64> {
        self.inv.process(&mut buf);
        let s = 1.0 / self.n as f64;
        Array1::from_iter(buf.into_iter().map(|z| z * s))
    }

    /// `order`-th spectral derivative. Odd orders drop the Nyquist mode.
    pub fn derivative(&self, f: &Array1<Complex64>, order: u32) -> Array1<Complex64> {
        let mut buf = self.spectrum(f);
        let nyq = self.n.is_multiple_of(2).then_some(self.n / 2);
        for (i, z) in buf.iter_mut().enumerate() {
            if order % 2 == 1 && Some(i) == nyq {
                *z = Complex64::new(0.0, 0.0);
                continue;
            }
            *z *= Complex64::new(0.0, self.k[i]).powu(order);
        }
        self.synthesize(buf)
    }

    pub fn derivative_real(&self, f: &Array1<f64>, order: u32) -> Array1<f64> {
        self.derivative(&f.mapv(|v| Complex64::new(v, 0.0)), order).mapv(|z| z.re)
    }

    /// Trigonometric interpolant of `f` at an arbitrary point.
    pub fn interpolate(&self, coeffs: &[Complex64], x: f64) -> Complex64 {
        let t = x - self.lo;
        let nyq = self.n.is_multiple_of(2).then_some(self.n / 2);
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, c) in coeffs.iter().enumerate() {
            acc += if Some(i) == nyq {
                c * (self.k[i] * t).cos()
            } else {
                c * Complex64::from_polar(1.0, self.k[i] * t)
            };
        }
        acc / self.n as f64
    }
}

/// Normalised wavefunction on a periodic line.
#[derive(Clone, Debug)]
pub struct QWaveFunction {
    line: Line,
    values: Array1<Complex64>,
    hbar: f64,
    mass: f64,
}

impl QWaveFunction {
    pub fn new(line: Line, values: Array1<Complex64>, hbar: f64, mass: f64) -> Result<Self> {
        if values.len() != line.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values on a {}-node line",
                values.len(),
                line.len()
            )));
        }
        if !(hbar > 0.0 && mass > 0.0) {
            return Err(Error::InvalidParameter(format!("hbar = {hbar}, mass = {mass}")));
        }
        if let Some(i) = values.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite { context: "wavefunction", i, j: 0 });
        }
        let w = Self { line, values, hbar, mass };
        let n2 = w.norm_sqr();
        if (n2 - 1.0).abs() > 1e-10 {
            return Err(Error::Unnormalized(n2));
        }
        Ok(w)
    }

    /// Samples `f` and rescales to unit norm.
    pub fn from_fn(line: Line, f: impl Fn(f64) -> Complex64, hbar: f64, mass: f64) -> Result<Self> {
        let mut v = Array1::from_shape_fn(line.len(), |i| f(line.x(i)));
        let n2 = v.iter().map(|z| z.norm_sqr()).sum::<f64>() * line.dx();
        if !(n2 > 0.0 && n2.is_finite()) {
            return Err(Error::Unnormalized(n2));
        }
        v.mapv_inplace(|z| z / n2.sqrt());
        Self::new(line, v, hbar, mass)
    }

    /// Minimum-uncertainty packet `exp(-(x-x0)²/4s² + i p0 x/ħ)`.
    pub fn coherent(line: Line, x0: f64, p0: f64, s: f64, hbar: f64, mass: f64) -> Result<Self> {
        Self::from_fn(
            line,
            |x| {
                let d = x - x0;
                Complex64::from_polar((-d * d / (4.0 * s * s)).exp(), p0 * x / hbar)
            },
            hbar,
            mass,
        )
    }

    pub fn line(&self) -> &Line {
        &self.line
    }
    pub fn values(&self) -> &Array1<Complex64> {
        &self.values
    }
    pub fn hbar(&self) -> f64 {
        self.hbar
    }
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.line.dx()
    }

    pub fn density(&self) -> Array1<f64> {
        self.values.mapv(|z| z.norm_sqr())
    }

    /// `⟨ψ| -ħ²Δ/2m + V |ψ⟩`.
    pub fn energy(&self, v: &Array1<f64>) -> f64 {
        let lap = self.line.derivative(&self.values, 2);
        let c = -self.hbar * self.hbar / (2.0 * self.mass);
        let mut e = 0.0;
        for i in 0..self.values.len() {
            let hpsi = lap[i] * c + self.values[i] * v[i];
            e += (self.values[i].conj() * hpsi).re;
        }
        e * self.line.dx()
    }

    pub fn mean_position(&self) -> f64 {
        let d = self.density();
        d.iter().enumerate().map(|(i, w)| w * self.line.x(i)).sum::<f64>() * self.line.dx()
    }

    pub fn mean_momentum(&self) -> f64 {
        self.line.integrate(&quantum_madelung_momap(self).0)
    }

    /// Distance in the discrete L² norm.
    pub fn distance(&self, other: &Self) -> f64 {
        let s: f64 = Zip::from(&self.values).and(&other.values).fold(0.0, |a, x, y| a + (x - y).norm_sqr());
        (s * self.line.dx()).sqrt()
    }
}

fn landing(t: f64, dt: f64) -> Result<(usize, f64)> {
    if !(t >= 0.0 && t.is_finite() && dt > 0.0) {
        return Err(Error::InvalidParameter(format!("t = {t}, dt = {dt}")));
    }
    if t == 0.0 {
        return Ok((0, dt));
    }
    let n = (t / dt - 1e-9).ceil().max(1.0) as usize;
    Ok((n, t / n as f64))
}

// fourth-order triple jump: weights w1, w0, w1 with w1 = 1/(2 - 2^{1/3})
const YOSHIDA: [f64; 3] = [1.351_207_191_959_657_6, -1.702_414_383_919_315_3, 1.351_207_191_959_657_6];

/// Split-step evolution. Each step is a fourth-order composition of three
/// Strang steps (half potential kick, exact kinetic drift in Fourier space,
/// half kick).
pub fn schrodinger_evolve(psi0: &QWaveFunction, v: &Array1<f64>, t: f64, dt: f64) -> Result<QWaveFunction> {
    let traj = schrodinger_trajectory(psi0, v, t, dt, usize::MAX)?;
    Ok(traj.into_iter().last().expect("initial state is kept").1)
}

/// As [`schrodinger_evolve`] but keeps every `stride`-th step, plus the last.
pub fn schrodinger_trajectory(
    psi0: &QWaveFunction,
    v: &Array1<f64>,
    t: f64,
    dt: f64,
    stride: usize,
) -> Result<Vec<(f64, QWaveFunction)>> {
    let line = psi0.line.clone();
    if v.len() != line.len() {
        return Err(Error::InvalidParameter("potential and wavefunction sizes differ".into()));
    }
    let (n, h) = landing(t, dt)?;
    let (hb, m) = (psi0.hbar, psi0.mass);
    // Strang substeps of length c·h for the triple-jump composition
    let stages: Vec<_> = YOSHIDA
        .iter()
        .map(|c| {
            let kick = v.mapv(|vi| Complex64::from_polar(1.0, -vi * c * h / (2.0 * hb)));
            let drift: Vec<Complex64> =
                line.k.iter().map(|k| Complex64::from_polar(1.0, -hb * k * k * c * h / (2.0 * m))).collect();
            (kick, drift)
        })
        .collect();
    let stride = stride.max(1);
    let mut out = vec![(0.0, psi0.clone())];
    let mut psi = psi0.values.clone();
    for step in 1..=n {
        for (kick, drift) in &stages {
            psi *= kick;
            let mut buf = line.spectrum(&psi);
            for (z, d) in buf.iter_mut().zip(drift) {
                *z *= d;
            }
            psi = line.synthesize(buf);
            psi *= kick;
        }
        if psi.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFiniteState(step as f64 * h));
        }
        if step % stride == 0 || step == n {
            let w = QWaveFunction { line: line.clone(), values: psi.clone(), hbar: hb, mass: m };
            out.push((step as f64 * h, w));
        }
    }
    Ok(out)
}

/// `𝒥(ψ) = (ħ Im(ψ̄ ψ'), |ψ|²)`, the momentum density `m D v` and the density.
pub fn quantum_madelung_momap(psi: &QWaveFunction) -> (Array1<f64>, Array1<f64>) {
    let d1 = psi.line.derivative(&psi.values, 1);
    let mu = Zip::from(&psi.values).and(&d1).map_collect(|z, dz| psi.hbar * (z.conj() * dz).im);
    (mu, psi.density())
}

/// Affine diffeomorphism `x ↦ a x + b` with constant phase, acting unitarily:
/// `ψ ↦ |a|^{-1/2} e^{iφ/ħ} ψ((x - b)/a)`. Off-node values use the
/// trigonometric interpolant, so the image should stay inside the box.
pub fn affine_action(psi: &QWaveFunction, a: f64, b: f64, phi: f64) -> Result<QWaveFunction> {
    if a == 0.0 || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidParameter(format!("affine map {a} x + {b} is not invertible")));
    }
    let line = &psi.line;
    let coeffs = line.spectrum(&psi.values);
    let pref = Complex64::from_polar(a.abs().powf(-0.5), phi / psi.hbar);
    let values = Array1::from_shape_fn(line.len(), |i| pref * line.interpolate(&coeffs, (line.x(i) - b) / a));
    Ok(QWaveFunction { line: line.clone(), values, hbar: psi.hbar, mass: psi.mass })
}

// five-point central first derivative
const FD5: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];

fn spacing(traj: &[(f64, QWaveFunction)]) -> Result<f64> {
    if traj.len() < 5 {
        return Err(Error::InvalidParameter(format!("need at least 5 snapshots, got {}", traj.len())));
    }
    let h = traj[1].0 - traj[0].0;
    for w in traj.windows(2) {
        if ((w[1].0 - w[0].0) - h).abs() > 1e-9 * h.max(1.0) {
            return Err(Error::InvalidParameter("snapshots must be equally spaced".into()));
        }
    }
    Ok(h)
}

fn time_derivative(fields: &[Array1<f64>], c: usize, h: f64) -> Array1<f64> {
    let mut out = Array1::zeros(fields[c].len());
    for (w, f) in FD5.iter().zip(&fields[c - 2..=c + 2]) {
        out.scaled_add(*w / h, f);
    }
    out
}

/// L² norm of `∂_t D + ∂_x(μ/m)` at every snapshot with two neighbours on each side.
pub fn continuity_residual(traj: &[(f64, QWaveFunction)]) -> Result<Vec<(f64, f64)>> {
    let h = spacing(traj)?;
    let line = traj[0].1.line.clone();
    let m = traj[0].1.mass;
    let maps: Vec<_> = traj.iter().map(|(_, w)| quantum_madelung_momap(w)).collect();
    let ds: Vec<_> = maps.iter().map(|(_, d)| d.clone()).collect();
    let mut out = Vec::new();
    for c in 2..traj.len() - 2 {
        let dt_d = time_derivative(&ds, c, h);
        let flux = line.derivative_real(&maps[c].0, 1) / m;
        let r = dt_d + flux;
        out.push((traj[c].0, line.integrate(&r.mapv(|x| x * x)).sqrt()));
    }
    Ok(out)
}

/// Pointwise `v`, `∂_x v` and `∂_x Q` from spectral derivatives of ψ, with
/// `Q = -(ħ²/2m) Δ√D/√D`. Writing `u = ψ'/ψ`, `Δ√D/√D = Re(ψ''/ψ) + (Im u)²`.
struct Bohm {
    v: Array1<f64>,
    dv: Array1<f64>,
    dq: Array1<f64>,
}

fn bohm_fields(w: &QWaveFunction) -> Bohm {
    let l = &w.line;
    let (d1, d2, d3) = (l.derivative(&w.values, 1), l.derivative(&w.values, 2), l.derivative(&w.values, 3));
    let (hb, m) = (w.hbar, w.mass);
    let n = l.len();
    let (mut v, mut dv, mut dq) = (Array1::zeros(n), Array1::zeros(n), Array1::zeros(n));
    for i in 0..n {
        let z = w.values[i];
        if z.norm_sqr() == 0.0 {
            continue;
        }
        let u = d1[i] / z;
        let r2 = d2[i] / z;
        let r3 = d3[i] / z;
        let du = r2 - u * u;
        v[i] = hb / m * u.im;
        dv[i] = hb / m * du.im;
        // d/dx [Re(ψ''/ψ) + (Im u)²]
        let dr = (r3 - r2 * u).re + 2.0 * u.im * du.im;
        dq[i] = -hb * hb / (2.0 * m) * dr;
    }
    Bohm { v, dv, dq }
}

/// Fourth-order finite-difference gradient, one-sided at the ends. Potentials
/// such as `x²` are not periodic, so spectral differentiation would ring.
pub fn fd4_gradient(f: &Array1<f64>, h: f64) -> Array1<f64> {
    let n = f.len();
    Array1::from_shape_fn(n, |i| {
        let at = |o: isize| f[(i as isize + o) as usize];
        let s = if i >= 2 && i + 2 < n {
            (at(-2) - 8.0 * at(-1) + 8.0 * at(1) - at(2)) / 12.0
        } else if i < 2 {
            let b = -(i as isize);
            let c: [f64; 5] = if i == 0 {
                [-25.0, 48.0, -36.0, 16.0, -3.0]
            } else {
                [-3.0, -10.0, 18.0, -6.0, 1.0]
            };
            c.iter().enumerate().map(|(k, w)| w * at(b + k as isize)).sum::<f64>() / 12.0
        } else {
            let b = (n - 1 - i) as isize;
            let c: [f64; 5] = if i == n - 1 {
                [-25.0, 48.0, -36.0, 16.0, -3.0]
            } else {
                [-3.0, -10.0, 18.0, -6.0, 1.0]
            };
            -c.iter().enumerate().map(|(k, w)| w * at(b - k as isize)).sum::<f64>() / 12.0
        };
        s / h
    })
}

/// L² norm, over nodes where `D ≥ 1e-6` throughout the time stencil, of
/// `∂_t v + v ∂_x v + (1/m) ∂_x(V + Q)`.
pub fn bohm_potential_residual(traj: &[(f64, QWaveFunction)], pot: &Array1<f64>) -> Result<Vec<(f64, f64)>> {
    let h = spacing(traj)?;
    let line = traj[0].1.line.clone();
    let m = traj[0].1.mass;
    let dv_pot = fd4_gradient(pot, line.dx());
    let fields: Vec<_> = traj.iter().map(|(_, w)| bohm_fields(w)).collect();
    let vs: Vec<_> = fields.iter().map(|b| b.v.clone()).collect();
    let dens: Vec<_> = traj.iter().map(|(_, w)| w.density()).collect();
    let mut out = Vec::new();
    for c in 2..traj.len() - 2 {
        let dt_v = time_derivative(&vs, c, h);
        let b = &fields[c];
        let mut acc = 0.0;
        let mut kept = 0;
        for i in 0..line.len() {
            if dens[c - 2..=c + 2].iter().any(|d| d[i] < BOHM_MASK) {
                continue;
            }
            kept += 1;
            let r = dt_v[i] + b.v[i] * b.dv[i] + (dv_pot[i] + b.dq[i]) / m;
            acc += r * r;
        }
        if kept == 0 {
            return Err(Error::EverythingMasked);
        }
        out.push((traj[c].0, (acc * line.dx()).sqrt()));
    }
    Ok(out)
}
