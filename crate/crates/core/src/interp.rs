//! Off-grid evaluation of sampled fields.

use ndarray::Array2;
use num_complex::Complex64;

use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::grid::PhaseGrid;

/// Anything that can be evaluated at an arbitrary phase-space point.
///
/// Closures implement it directly, which lets analytic initial data skip
/// interpolation altogether.
pub trait PhaseSpaceFn {
    fn eval(&self, q: f64, p: f64) -> Complex64;
}

impl<F> PhaseSpaceFn for F
where
    F: Fn(f64, f64) -> Complex64,
{
    fn eval(&self, q: f64, p: f64) -> Complex64 {
        self(q, p)
    }
}

/// Bicubic Hermite interpolation built from the node values and the grid's
/// own derivatives `f_q`, `f_p`, `f_qp`. Reproduces the sampled values at the
/// nodes and is C^1 across cells.
#[derive(Clone, Debug)]
pub struct BicubicInterpolator {
    grid: PhaseGrid,
    f: Array2<Complex64>,
    fq: Array2<Complex64>,
    fp: Array2<Complex64>,
    fqp: Array2<Complex64>,
}

impl BicubicInterpolator {
    pub fn new(field: &ScalarField) -> Self {
        let grid = field.grid().clone();
        let f = field.values().clone();
        let fq = grid.d_q(&f);
        let fp = grid.d_p(&f);
        let fqp = grid.d_p(&fq);
        Self { grid, f, fq, fp, fqp }
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }

    /// Cell index and local coordinate along one axis. Periodic axes wrap;
    /// otherwise the outermost cell is used, extrapolating slightly past the
    /// last node.
    fn locate(&self, x: f64, x_min: f64, h: f64, n: usize) -> (usize, usize, f64) {
        let s = (x - x_min) / h;
        if self.grid.is_periodic() {
            let s = s.rem_euclid(n as f64);
            let i = (s.floor() as usize).min(n - 1);
            (i, (i + 1) % n, s - i as f64)
        } else {
            let i = (s.floor().max(0.0) as usize).min(n - 2);
            (i, i + 1, s - i as f64)
        }
    }
}

impl PhaseSpaceFn for BicubicInterpolator {
    fn eval(&self, q: f64, p: f64) -> Complex64 {
        let g = &self.grid;
        let (hq, hp) = (g.dq(), g.dp());
        let (i0, i1, u) = self.locate(q, g.q_range().0, hq, g.n_q());
        let (j0, j1, v) = self.locate(p, g.p_range().0, hp, g.n_p());
        let bu = hermite_basis(u);
        let bv = hermite_basis(v);
        let idx = [(i0, 0usize), (i1, 1usize)];
        let jdx = [(j0, 0usize), (j1, 1usize)];
        let mut acc = Complex64::new(0.0, 0.0);
        for &(i, a) in &idx {
            for &(j, b) in &jdx {
                // value basis index 2a (h00/h01), slope basis 2a+1 (h10/h11)
                let (vu, du) = (bu[2 * a], bu[2 * a + 1] * hq);
                let (vv, dv) = (bv[2 * b], bv[2 * b + 1] * hp);
                acc += self.f[[i, j]] * (vu * vv)
                    + self.fq[[i, j]] * (du * vv)
                    + self.fp[[i, j]] * (vu * dv)
                    + self.fqp[[i, j]] * (du * dv);
            }
        }
        acc
    }
}

/// Trigonometric interpolation on a periodic grid: evaluates the discrete
/// Fourier series of the samples at any point. Exact at the nodes and
/// spectrally accurate for band-limited data; each evaluation costs
/// `n_q·n_p` operations.
#[derive(Clone, Debug)]
pub struct SpectralInterpolator {
    origin: (f64, f64),
    period: (f64, f64),
    modes_q: Vec<Mode>,
    modes_p: Vec<Mode>,
    coeffs: Array2<Complex64>,
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    Wave(f64),
    /// Nyquist frequency, evaluated as a cosine so real data stay real.
    Cosine(f64),
}

impl Mode {
    fn at(self, x: f64) -> Complex64 {
        match self {
            Mode::Wave(k) => Complex64::from_polar(1.0, k * x),
            Mode::Cosine(k) => Complex64::new((k * x).cos(), 0.0),
        }
    }
}

fn modes(n: usize) -> Vec<Mode> {
    (0..n)
        .map(|k| {
            let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            if n.is_multiple_of(2) && k == n / 2 { Mode::Cosine(signed) } else { Mode::Wave(signed) }
        })
        .collect()
}

impl SpectralInterpolator {
    pub fn new(field: &ScalarField) -> Result<Self> {
        let g = field.grid();
        if !g.is_periodic() {
            return Err(Error::InvalidParameter("spectral interpolation needs a periodic grid".into()));
        }
        let (nq, np) = g.shape();
        let mut planner = FftPlanner::new();
        let fq = planner.plan_fft_forward(nq);
        let fp = planner.plan_fft_forward(np);
        let mut c = field.values().clone();
        for mut row in c.rows_mut() {
            let mut buf = row.to_vec();
            fp.process(&mut buf);
            row.iter_mut().zip(buf).for_each(|(o, v)| *o = v);
        }
        for mut col in c.columns_mut() {
            let mut buf = col.to_vec();
            fq.process(&mut buf);
            col.iter_mut().zip(buf).for_each(|(o, v)| *o = v);
        }
        c.mapv_inplace(|v| v / (nq * np) as f64);
        let (q0, q1) = g.q_range();
        let (p0, p1) = g.p_range();
        Ok(Self {
            origin: (q0, p0),
            period: (q1 - q0, p1 - p0),
            modes_q: modes(nq),
            modes_p: modes(np),
            coeffs: c,
        })
    }
}

impl PhaseSpaceFn for SpectralInterpolator {
    fn eval(&self, q: f64, p: f64) -> Complex64 {
        let tau = std::f64::consts::TAU;
        let x = tau * (q - self.origin.0) / self.period.0;
        let y = tau * (p - self.origin.1) / self.period.1;
        let ep: Vec<Complex64> = self.modes_p.iter().map(|m| m.at(y)).collect();
        let mut acc = Complex64::new(0.0, 0.0);
        for (row, m) in self.coeffs.rows().into_iter().zip(&self.modes_q) {
            let inner = row.iter().zip(&ep).fold(Complex64::new(0.0, 0.0), |a, (c, e)| a + c * e);
            acc += m.at(x) * inner;
        }
        acc
    }
}

/// `[h00, h10, h01, h11]` at local coordinate `t`.
fn hermite_basis(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [
        2.0 * t3 - 3.0 * t2 + 1.0,
        t3 - 2.0 * t2 + t,
        -2.0 * t3 + 3.0 * t2,
        t3 - t2,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryMode;

    #[test]
    fn reproduces_nodes() {
        let g = PhaseGrid::periodic_square(3.0, 32).unwrap();
        let f = ScalarField::from_real_fn(&g, |q, p| (-(q * q + 2.0 * p * p)).exp());
        let it = BicubicInterpolator::new(&f);
        for (i, j) in [(0, 0), (5, 17), (31, 31), (16, 3)] {
            let (q, p) = g.node(i, j);
            assert!((it.eval(q, p) - f.at(i, j)).norm() < 1e-13);
        }
    }

    #[test]
    fn exact_for_bicubic_polynomials_fd4() {
        let g = PhaseGrid::new((-1.0, 1.0), (-1.0, 1.0), 12, 12, BoundaryMode::FiniteDifference4).unwrap();
        let poly = |q: f64, p: f64| q.powi(3) - 2.0 * q * p * p + p - 0.5;
        let f = ScalarField::from_real_fn(&g, poly);
        let it = BicubicInterpolator::new(&f);
        for (q, p) in [(0.013, -0.41), (-0.97, 0.72), (0.5, 0.5), (0.8, -0.83)] {
            assert!((it.eval(q, p).re - poly(q, p)).abs() < 1e-11);
        }
    }

    #[test]
    fn smooth_periodic_accuracy() {
        let g = PhaseGrid::periodic_square(6.0, 96).unwrap();
        let gauss = |q: f64, p: f64| (-((q - 0.3).powi(2) + p * p) / 2.0).exp();
        let f = ScalarField::from_real_fn(&g, gauss);
        let it = BicubicInterpolator::new(&f);
        let mut worst: f64 = 0.0;
        for k in 0..50 {
            let q = -2.0 + 0.0791 * k as f64;
            let p = 1.7 - 0.0653 * k as f64;
            worst = worst.max((it.eval(q, p).re - gauss(q, p)).abs());
        }
        assert!(worst < 1e-5, "{worst}");
        // wraps
        let (q, p) = (5.9 + 12.0, -5.0 - 24.0);
        assert!((it.eval(q, p) - it.eval(5.9, -5.0)).norm() < 1e-12);
    }

    #[test]
    fn spectral_interpolation() {
        let g = PhaseGrid::periodic_square(6.0, 48).unwrap();
        let f = |q: f64, p: f64| Complex64::from_polar((-((q - 0.3).powi(2) + p * p)).exp(), 0.4 * q - 0.2 * p * p);
        let field = ScalarField::new(g.clone(), g.sample(f));
        let it = SpectralInterpolator::new(&field).unwrap();
        for (i, j) in [(0, 0), (5, 17), (47, 47)] {
            let (q, p) = g.node(i, j);
            assert!((it.eval(q, p) - field.at(i, j)).norm() < 1e-13);
        }
        let mut worst: f64 = 0.0;
        for k in 0..40 {
            let (q, p) = (-2.0 + 0.0913 * k as f64, 1.7 - 0.0671 * k as f64);
            worst = worst.max((it.eval(q, p) - f(q, p)).norm());
        }
        assert!(worst < 1e-10, "{worst}");
        // real data stay real off the nodes
        let re = ScalarField::from_real_fn(&g, |q, p| (-(q * q + p * p)).exp() + 0.1);
        let it = SpectralInterpolator::new(&re).unwrap();
        assert!(it.eval(0.123, -0.77).im.abs() < 1e-14);
        let fd = PhaseGrid::new((-1.0, 1.0), (-1.0, 1.0), 8, 8, BoundaryMode::FiniteDifference4).unwrap();
        assert!(SpectralInterpolator::new(&ScalarField::zeros(&fd)).is_err());
    }
}
