//! Fourier differentiation and trapezoidal quadrature on uniform periodic grids.
//!
//! Every grid covers `[0, 2π)^n` with `N` nodes per axis, so wavenumbers are
//! integers. For even `N` the Nyquist mode is dropped by first-derivative
//! operators, which keeps the real differentiation matrix antisymmetric.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

/// Sum in fixed pairwise order so reductions do not depend on scheduling.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 16;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[derive(Clone)]
pub struct Spectral1d {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral1d {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral1d").field("len", &self.len).finish()
    }
}

impl Spectral1d {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Signed integer wavenumber of FFT bin `j`; `None` for the Nyquist bin.
    pub fn wavenumber(&self, j: usize) -> Option<f64> {
        let n = self.len;
        if n % 2 == 0 && j == n / 2 {
            None
        } else if j <= n / 2 {
            Some(j as f64)
        } else {
            Some(j as f64 - n as f64)
        }
    }

    fn apply_symbol(&self, data: &mut [Complex64], symbol: impl Fn(usize) -> Complex64) {
        self.forward.process(data);
        let scale = 1.0 / self.len as f64;
        for (j, c) in data.iter_mut().enumerate() {
            *c *= symbol(j) * scale;
        }
        self.inverse.process(data);
    }

    pub fn derivative_complex(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut data = f.to_vec();
        self.apply_symbol(&mut data, |j| match self.wavenumber(j) {
            Some(k) => Complex64::new(0.0, k),
            None => Complex64::new(0.0, 0.0),
        });
        data
    }

    pub fn derivative(&self, f: &[f64]) -> Vec<f64> {
        let data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.derivative_complex(&data).into_iter().map(|c| c.re).collect()
    }

    /// Drop every Fourier mode with `|k| > max_mode`.
    pub fn low_pass(&self, f: &[f64], max_mode: usize) -> Vec<f64> {
        let mut data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply_symbol(&mut data, |j| match self.wavenumber(j) {
            Some(k) if k.abs() <= max_mode as f64 => Complex64::new(1.0, 0.0),
            _ => Complex64::new(0.0, 0.0),
        });
        data.into_iter().map(|c| c.re).collect()
    }

    /// Mean-zero antiderivative of a mean-zero periodic function.
    pub fn antiderivative(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mean = pairwise_sum(f) / self.len as f64;
        let scale = f.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1.0);
        if mean.abs() > 1e-10 * scale {
            return Err(GeometryError::InvalidInput(format!(
                "antiderivative of a function with nonzero mean {mean:.3e}"
            )));
        }
        let mut data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.apply_symbol(&mut data, |j| match self.wavenumber(j) {
            Some(k) if k != 0.0 => Complex64::new(0.0, -1.0 / k),
            _ => Complex64::new(0.0, 0.0),
        });
        Ok(data.into_iter().map(|c| c.re).collect())
    }

    /// Dense differentiation matrix (antisymmetric).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.len;
        let mut m = DMatrix::zeros(n, n);
        let mut unit = vec![0.0; n];
        for col in 0..n {
            unit.iter_mut().for_each(|x| *x = 0.0);
            unit[col] = 1.0;
            let d = self.derivative(&unit);
            for (row, value) in d.into_iter().enumerate() {
                m[(row, col)] = value;
            }
        }
        m
    }
}

/// Uniform periodic grid on the torus `[0, 2π)^dims` (dims = 1 or 2).
///
/// Node index layout is row-major with axis 0 slowest.
#[derive(Clone, Debug)]
pub struct PeriodicGrid {
    dims: usize,
    size: usize,
    spectral: Spectral1d,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: usize,
    pub size: usize,
}

impl PeriodicGrid {
    pub fn new(dims: usize, size: usize) -> Result<Self> {
        if !(1..=2).contains(&dims) {
            return Err(GeometryError::InvalidInput(format!(
                "grid dimension {dims} not supported (1 or 2)"
            )));
        }
        if size < 4 {
            return Err(GeometryError::InvalidInput(format!("grid size {size} too small")));
        }
        Ok(Self { dims, size, spectral: Spectral1d::new(size) })
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec { dims: self.dims, size: self.size }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn spectral(&self) -> &Spectral1d {
        &self.spectral
    }

    pub fn node_count(&self) -> usize {
        self.size.pow(self.dims as u32)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.size as f64
    }

    /// Trapezoidal weight per node.
    pub fn weight(&self) -> f64 {
        self.spacing().powi(self.dims as i32)
    }

    pub fn multi_index(&self, node: usize) -> Vec<usize> {
        match self.dims {
            1 => vec![node],
            _ => vec![node / self.size, node % self.size],
        }
    }

    pub fn param(&self, node: usize) -> Vec<f64> {
        self.multi_index(node).into_iter().map(|i| i as f64 * self.spacing()).collect()
    }

    fn line_nodes(&self, axis: usize, line: usize) -> Vec<usize> {
        let n = self.size;
        match (self.dims, axis) {
            (1, _) => (0..n).collect(),
            (_, 0) => (0..n).map(|i| i * n + line).collect(),
            _ => (0..n).map(|j| line * n + j).collect(),
        }
    }

    fn line_count(&self) -> usize {
        self.node_count() / self.size
    }

    pub fn derivative(&self, f: &[f64], axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for line in 0..self.line_count() {
            let nodes = self.line_nodes(axis, line);
            let vals: Vec<f64> = nodes.iter().map(|&k| f[k]).collect();
            for (k, d) in nodes.iter().zip(self.spectral.derivative(&vals)) {
                out[*k] = d;
            }
        }
        out
    }

    /// Tensor-product low-pass filter, `|k_a| <= max_mode` on every axis.
    pub fn low_pass(&self, f: &[f64], max_mode: usize) -> Vec<f64> {
        let mut out = f.to_vec();
        for axis in 0..self.dims() {
            for line in 0..self.line_count() {
                let nodes = self.line_nodes(axis, line);
                let vals: Vec<f64> = nodes.iter().map(|&k| out[k]).collect();
                for (k, v) in nodes.iter().zip(self.spectral.low_pass(&vals, max_mode)) {
                    out[*k] = v;
                }
            }
        }
        out
    }

    pub fn derivative_complex(&self, f: &[Complex64], axis: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); f.len()];
        for line in 0..self.line_count() {
            let nodes = self.line_nodes(axis, line);
            let vals: Vec<Complex64> = nodes.iter().map(|&k| f[k]).collect();
            for (k, d) in nodes.iter().zip(self.spectral.derivative_complex(&vals)) {
                out[*k] = d;
            }
        }
        out
    }

    /// Componentwise derivative of a vector-valued field.
    pub fn derivative_vectors(&self, field: &[DVector<f64>], axis: usize) -> Vec<DVector<f64>> {
        let dim = field.first().map_or(0, |v| v.len());
        let mut out = vec![DVector::zeros(dim); field.len()];
        for c in 0..dim {
            let comp: Vec<f64> = field.iter().map(|v| v[c]).collect();
            for (k, d) in self.derivative(&comp, axis).into_iter().enumerate() {
                out[k][c] = d;
            }
        }
        out
    }

    /// Dense matrix of the derivative along `axis` acting on all nodes.
    pub fn derivative_matrix(&self, axis: usize) -> DMatrix<f64> {
        let d = self.spectral.matrix();
        match self.dims {
            1 => d,
            _ => {
                let id = DMatrix::identity(self.size, self.size);
                if axis == 0 {
                    d.kronecker(&id)
                } else {
                    id.kronecker(&d)
                }
            }
        }
    }

    /// Trapezoidal integral of nodal values (pairwise summed).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weight() * pairwise_sum(values)
    }
}
