use ndarray::{Array2, Zip};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::PhaseGrid;

/// Complex samples of a function on a [`PhaseGrid`]. Real fields simply
/// carry zero imaginary parts.
#[derive(Clone, Debug)]
pub struct ScalarField {
    grid: PhaseGrid,
    values: Array2<Complex64>,
}

impl ScalarField {
    pub fn new(grid: PhaseGrid, values: Array2<Complex64>) -> Self {
        assert_eq!(values.dim(), grid.shape(), "values do not match grid shape");
        Self { grid, values }
    }

    pub fn try_new(grid: PhaseGrid, values: Array2<Complex64>) -> Result<Self> {
        if values.dim() != grid.shape() {
            return Err(Error::InvalidParameter(format!(
                "array shape {:?} does not match grid {:?}",
                values.dim(),
                grid.shape()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &PhaseGrid) -> Self {
        Self::new(grid.clone(), Array2::zeros(grid.shape()))
    }

    pub fn constant(grid: &PhaseGrid, c: Complex64) -> Self {
        Self::new(grid.clone(), Array2::from_elem(grid.shape(), c))
    }

    pub fn from_fn(grid: &PhaseGrid, f: impl Fn(f64, f64) -> Complex64) -> Self {
        Self::new(grid.clone(), grid.sample(f))
    }

    pub fn from_real_fn(grid: &PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(grid.clone(), grid.sample(|q, p| Complex64::new(f(q, p), 0.0)))
    }

    pub fn from_real(grid: &PhaseGrid, values: &Array2<f64>) -> Self {
        Self::new(grid.clone(), values.mapv(|v| Complex64::new(v, 0.0)))
    }

    pub fn grid(&self) -> &PhaseGrid {
        &self.grid
    }
    pub fn values(&self) -> &Array2<Complex64> {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.values
    }
    pub fn into_values(self) -> Array2<Complex64> {
        self.values
    }
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[[i, j]]
    }

    pub fn re(&self) -> Array2<f64> {
        self.values.mapv(|v| v.re)
    }
    pub fn im(&self) -> Array2<f64> {
        self.values.mapv(|v| v.im)
    }

    pub fn conj(&self) -> Self {
        self.map(|v| v.conj())
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self::new(self.grid.clone(), self.values.mapv(f))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }
    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }
    pub fn mul(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a * b)
    }
    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|v| v * c)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex64, Complex64) -> Complex64) -> Self {
        assert_eq!(self.values.dim(), other.values.dim(), "field shapes differ");
        let mut out = self.values.clone();
        Zip::from(&mut out).and(&other.values).for_each(|a, &b| *a = f(*a, b));
        Self::new(self.grid.clone(), out)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest imaginary magnitude, for checking that a field is real.
    pub fn max_imag(&self) -> f64 {
        self.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max)
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).sum::<f64>() * self.grid.cell_area()
    }
    pub fn norm_l2(&self) -> f64 {
        self.norm_sq().sqrt()
    }
    pub fn norm_linf(&self) -> f64 {
        self.max_abs()
    }

    /// `∫ |f|^2 dz`.
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.cell_area()
    }

    /// `⟨self|other⟩ = ∫ conj(self) other dz`.
    pub fn inner(&self, other: &Self) -> Complex64 {
        let s: Complex64 = self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        s * self.grid.cell_area()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}
