//! Hard-wall grids and the wavefunction algebra on them.
//!
//! Only interior points are stored. The wavefunction vanishes on the walls,
//! so the plain sum `Σ f·h^dim` is the trapezoidal rule with zero endpoint
//! terms, and it is exact for products of sine modes.

use std::io::{Read, Write};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One axis of a hard-wall box centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub length: f64,
    pub points: usize,
}

impl Axis {
    pub fn new(length: f64, points: usize) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "axis length must be positive, got {length}"
            )));
        }
        if points == 0 {
            return Err(Error::InvalidParameter("axis needs interior points".into()));
        }
        Ok(Self { length, points })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.length / (self.points + 1) as f64
    }

    /// Coordinate of interior point `i`, `-L/2 + (i+1)h`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 * self.length + (i + 1) as f64 * self.spacing()
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.points).map(|i| self.coord(i)).collect()
    }

    /// Index of the interior point closest to `x`.
    pub fn nearest_index(&self, x: f64) -> usize {
        let i = ((x + 0.5 * self.length) / self.spacing()).round() as i64 - 1;
        i.clamp(0, self.points as i64 - 1) as usize
    }
}

/// A 1D or 2D grid. Points are stored x-major: `index = ix * ny + iy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    axes: [Axis; 2],
}

impl Grid {
    pub fn line(length: f64, points: usize) -> Result<Self> {
        let axis = Axis::new(length, points)?;
        Ok(Self {
            dim: 1,
            axes: [axis, axis],
        })
    }

    pub fn square(length: f64, points: usize) -> Result<Self> {
        let axis = Axis::new(length, points)?;
        Ok(Self {
            dim: 2,
            axes: [axis, axis],
        })
    }

    pub fn rect(x: Axis, y: Axis) -> Result<Self> {
        let x = Axis::new(x.length, x.points)?;
        let y = Axis::new(y.length, y.points)?;
        Ok(Self { dim: 2, axes: [x, y] })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes[..self.dim]
    }

    #[inline]
    pub fn axis(&self, i: usize) -> &Axis {
        &self.axes()[i]
    }

    /// Total number of interior points.
    pub fn len(&self) -> usize {
        self.axes().iter().map(|a| a.points).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Quadrature weight `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.axes().iter().map(Axis::spacing).product()
    }

    /// Per-axis point counts.
    pub fn shape(&self) -> Vec<usize> {
        self.axes().iter().map(|a| a.points).collect()
    }

    /// Coordinates of the point with flat index `idx`.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.axes[0].coord(idx), 0.0],
            _ => {
                let ny = self.axes[1].points;
                [self.axes[0].coord(idx / ny), self.axes[1].coord(idx % ny)]
            }
        }
    }

    /// Flat coordinate table for axis `c`, one entry per grid point.
    pub fn coordinate_field(&self, c: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.point(i)[c]).collect()
    }

    pub(crate) fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// Complex amplitudes on the interior points of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amps: Vec<Complex64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes for a grid of {} points",
                amps.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, amps })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            amps: vec![Complex64::new(0.0, 0.0); grid.len()],
            grid,
        }
    }

    /// Samples `f(x, y)` at every interior point (`y` is 0 in 1D).
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let amps = (0..grid.len())
            .map(|i| {
                let [x, y] = grid.point(i);
                f(x, y)
            })
            .collect();
        Self { grid, amps }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    #[inline]
    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn into_amplitudes(self) -> Vec<Complex64> {
        self.amps
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.amps.iter().all(|a| a.re.is_finite() && a.im.is_finite())
    }

    /// Returns the unit-norm copy. States already normalized to 1e-12 are
    /// returned untouched, so the operation is exactly idempotent.
    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cannot normalize a state of norm {norm}"
            )));
        }
        if (norm - 1.0).abs() <= 1e-12 {
            return Ok(self.clone());
        }
        Ok(self.scaled(Complex64::new(1.0 / norm, 0.0)))
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            amps: self.amps.iter().map(|a| a * factor).collect(),
        }
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, factor: Complex64, other: &WaveFunction) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            amps: self
                .amps
                .iter()
                .zip(&other.amps)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    /// Largest pointwise distance to `other`.
    pub fn max_abs_diff(&self, other: &WaveFunction) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }

    /// `⟨ψ|r_c|ψ⟩`-style expectation of a multiplicative real field.
    pub fn expectation_local(&self, field: &[f64]) -> f64 {
        self.amps
            .iter()
            .zip(field)
            .map(|(a, v)| a.norm_sqr() * v)
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    /// Writes a little-endian binary dump: magic, grid, then (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        w.write_all(&(self.grid.dim() as u32).to_le_bytes())?;
        for axis in self.grid.axes() {
            w.write_all(&axis.length.to_le_bytes())?;
            w.write_all(&(axis.points as u64).to_le_bytes())?;
        }
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(Error::Format("not a wavefunction dump".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u32buf)?;
        let dim = u32::from_le_bytes(u32buf) as usize;
        let mut axes = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut u64buf)?;
            let length = f64::from_le_bytes(u64buf);
            r.read_exact(&mut u64buf)?;
            let points = u64::from_le_bytes(u64buf) as usize;
            axes.push(Axis::new(length, points)?);
        }
        let grid = match axes.as_slice() {
            [x] => Grid::line(x.length, x.points)?,
            [x, y] => Grid::rect(*x, *y)?,
            _ => return Err(Error::Format(format!("unsupported dimension {dim}"))),
        };
        let mut amps = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut u64buf)?;
            let re = f64::from_le_bytes(u64buf);
            r.read_exact(&mut u64buf)?;
            let im = f64::from_le_bytes(u64buf);
            amps.push(Complex64::new(re, im));
        }
        Ok(Self { grid, amps })
    }
}

const STATE_MAGIC: &[u8; 4] = b"WFN1";

/// `⟨a|b⟩ = Σ conj(a)·b·h^dim`.
pub fn inner_product(a: &WaveFunction, b: &WaveFunction) -> Result<Complex64> {
    a.grid.check_same(&b.grid)?;
    Ok(raw_inner(&a.amps, &b.amps) * a.grid.cell_volume())
}

/// `|⟨a|b⟩|²`.
pub fn overlap_sq(a: &WaveFunction, b: &WaveFunction) -> Result<f64> {
    Ok(inner_product(a, b)?.norm_sqr())
}

#[inline]
pub(crate) fn raw_inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter()
        .zip(b)
        .fold(Complex64::new(0.0, 0.0), |acc, (x, y)| acc + x.conj() * y)
}

/// Nonnegative real values on a grid, e.g. `|ψ|²`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} density values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "density values must be finite and nonnegative, found {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Flat index of the largest value.
    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                if v > best.1 {
                    (i, v)
                } else {
                    best
                }
            })
            .0
    }
}

pub fn density_of(psi: &WaveFunction) -> DensityField {
    DensityField {
        grid: psi.grid,
        values: psi.amps.iter().map(|a| a.norm_sqr()).collect(),
    }
}
