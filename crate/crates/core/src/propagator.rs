//! Strang split-operator propagation under a dipole-coupled control field.
//!
//! One step of length `dt` is `A·K·A` with the real-space half step
//! `A = exp(−i(V + r·ε)dt/2)` and the kinetic step `K = exp(−iT dt)` applied
//! in the sine basis. Stepping backward applies the exact inverse `A*·K*·A*`
//! with the same field sample, so forward and backward sweeps retrace each
//! other to roundoff.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, WaveFunction};
use crate::model::{PhysicalParams, PotentialSpec};
use crate::spectral::{kinetic_phase_factors, SineBasis};

/// Uniform time mesh `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeMesh {
    total: f64,
    steps: usize,
}

impl TimeMesh {
    pub fn new(total: f64, steps: usize) -> Result<Self> {
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "total time must be positive, got {total}"
            )));
        }
        if steps < 2 {
            return Err(Error::InvalidParameter(format!(
                "a time mesh needs at least 2 steps, got {steps}"
            )));
        }
        Ok(Self { total, steps })
    }

    /// Smallest step count whose step does not exceed `max_dt`.
    pub fn with_max_step(total: f64, max_dt: f64) -> Result<Self> {
        if !(max_dt > 0.0 && max_dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive, got {max_dt}"
            )));
        }
        let steps = ((total / max_dt) * (1.0 - 1e-12)).ceil().max(2.0) as usize;
        Self::new(total, steps)
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.total
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.total / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.total
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }

    /// Recording stride giving about 1024 snapshots.
    pub fn default_stride(&self) -> usize {
        (self.steps / 1024).max(1)
    }
}

/// Real field samples on the mesh points, one series per polarization axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    mesh: TimeMesh,
    components: Vec<Vec<f64>>,
}

impl ControlField {
    pub fn new(mesh: TimeMesh, components: Vec<Vec<f64>>) -> Result<Self> {
        if components.is_empty() || components.len() > 2 {
            return Err(Error::InvalidParameter(format!(
                "a field has 1 or 2 components, got {}",
                components.len()
            )));
        }
        for c in &components {
            if c.len() != mesh.steps + 1 {
                return Err(Error::InvalidParameter(format!(
                    "field component has {} samples, mesh needs {}",
                    c.len(),
                    mesh.steps + 1
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("field samples must be finite".into()));
            }
        }
        Ok(Self { mesh, components })
    }

    pub fn constant(mesh: TimeMesh, n_components: usize, amplitude: f64) -> Result<Self> {
        Self::new(mesh, vec![vec![amplitude; mesh.steps + 1]; n_components])
    }

    pub fn zero(mesh: TimeMesh, n_components: usize) -> Result<Self> {
        Self::constant(mesh, n_components, 0.0)
    }

    pub fn mesh(&self) -> &TimeMesh {
        &self.mesh
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Vec<f64>] {
        &self.components
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.components[c]
    }

    /// `Σ_c ∫ ε_c² dt` by the trapezoidal rule.
    pub fn fluence(&self) -> f64 {
        let dt = self.mesh.dt();
        self.components
            .iter()
            .map(|c| {
                let ends = 0.5 * (c[0] * c[0] + c[c.len() - 1] * c[c.len() - 1]);
                let inner: f64 = c[1..c.len() - 1].iter().map(|v| v * v).sum();
                (inner + ends) * dt
            })
            .sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mesh: self.mesh,
            components: self
                .components
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
        }
    }

    /// Field applied during step `k` (interval `[t_k, t_{k+1}]`): the
    /// midpoint average of the neighbouring samples.
    #[inline]
    pub fn step_value(&self, k: usize) -> [f64; 2] {
        let mut out = [0.0; 2];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = 0.5 * (c[k] + c[k + 1]);
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|v| *v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Precomputed split-operator tables for one potential and step size.
#[derive(Clone)]
pub struct SplitOperator {
    grid: Grid,
    dt: f64,
    axis_coords: Vec<Vec<f64>>,
    potential_half: [Vec<Complex64>; 2],
    kinetic: [Vec<Complex64>; 2],
    basis: SineBasis,
    half: Vec<Complex64>,
    axis_factor: [Vec<Complex64>; 2],
}

impl SplitOperator {
    pub fn new(spec: &PotentialSpec, params: &PhysicalParams, dt: f64) -> Self {
        let grid = spec.grid;
        let v = spec.evaluate();
        let fwd_pot: Vec<Complex64> = v
            .iter()
            .map(|v| Complex64::from_polar(1.0, -0.5 * v * dt))
            .collect();
        let bwd_pot = fwd_pot.iter().map(|z| z.conj()).collect();
        let fwd_kin = kinetic_phase_factors(dt, params.mass, &grid);
        let bwd_kin = fwd_kin.iter().map(|z| z.conj()).collect();
        let axis_coords: Vec<Vec<f64>> = grid.axes().iter().map(|a| a.coords()).collect();
        let axis_factor = [
            vec![Complex64::default(); grid.axis(0).points],
            vec![Complex64::default(); grid.axes().last().map_or(0, |a| a.points)],
        ];
        Self {
            grid,
            dt,
            axis_coords,
            potential_half: [fwd_pot, bwd_pot],
            kinetic: [fwd_kin, bwd_kin],
            basis: SineBasis::new(grid),
            half: vec![Complex64::default(); grid.len()],
            axis_factor,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances raw amplitudes by one step; `field` holds one value per
    /// grid axis (missing components count as zero).
    pub fn step(&mut self, psi: &mut [Complex64], field: [f64; 2], dir: Direction) {
        let d = match dir {
            Direction::Forward => 0,
            Direction::Backward => 1,
        };
        self.build_half(field, d);
        for (a, f) in psi.iter_mut().zip(&self.half) {
            *a *= f;
        }
        self.basis.forward_in_place(psi);
        for (a, k) in psi.iter_mut().zip(&self.kinetic[d]) {
            *a *= k;
        }
        self.basis.inverse_in_place(psi);
        for (a, f) in psi.iter_mut().zip(&self.half) {
            *a *= f;
        }
    }

    fn build_half(&mut self, field: [f64; 2], d: usize) {
        let sign = if d == 0 { -1.0 } else { 1.0 };
        let pot = &self.potential_half[d];
        let dim = self.grid.dim();
        if field[..dim].iter().all(|e| *e == 0.0) {
            self.half.copy_from_slice(pot);
            return;
        }
        for ((factor, coords), e) in self.axis_factor.iter_mut().zip(&self.axis_coords).zip(&field[..dim]) {
            for (f, x) in factor.iter_mut().zip(coords) {
                *f = Complex64::from_polar(1.0, sign * 0.5 * x * e * self.dt);
            }
        }
        if dim == 1 {
            for ((h, p), f) in self.half.iter_mut().zip(pot).zip(&self.axis_factor[0]) {
                *h = p * f;
            }
        } else {
            let ny = self.grid.axis(1).points;
            let [fx, fy] = &self.axis_factor;
            for (ix, (hrow, prow)) in self
                .half
                .chunks_exact_mut(ny)
                .zip(pot.chunks_exact(ny))
                .enumerate()
            {
                let ax = fx[ix];
                for ((h, p), by) in hrow.iter_mut().zip(prow).zip(fy) {
                    *h = p * ax * by;
                }
            }
        }
    }
}

/// One forward step of `ψ` (convenience wrapper over [`SplitOperator`]).
pub fn step(
    psi: &WaveFunction,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    field: &[f64],
    dt: f64,
) -> Result<WaveFunction> {
    spec.grid.check_same(psi.grid())?;
    let mut op = SplitOperator::new(spec, params, dt);
    let mut amps = psi.amplitudes().to_vec();
    op.step(&mut amps, pad_field(field), Direction::Forward);
    WaveFunction::new(spec.grid, amps)
}

pub(crate) fn pad_field(field: &[f64]) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (o, v) in out.iter_mut().zip(field) {
        *o = *v;
    }
    out
}

/// Snapshots of a propagation, in ascending time order.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub states: Vec<WaveFunction>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    fn push(&mut self, step: usize, time: f64, state: WaveFunction) {
        self.steps.push(step);
        self.times.push(time);
        self.states.push(state);
    }

    fn reverse(&mut self) {
        self.steps.reverse();
        self.times.reverse();
        self.states.reverse();
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub trajectory: Trajectory,
    /// State at `t = T` for forward runs, at `t = 0` for backward runs.
    pub final_state: WaveFunction,
}

fn check_field(spec: &PotentialSpec, field: &ControlField) -> Result<()> {
    if field.n_components() > spec.grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "{} field components on a {}D grid",
            field.n_components(),
            spec.grid.dim()
        )));
    }
    Ok(())
}

/// Solves `i∂_tψ = H(t)ψ` from `t = 0` to `T`. With `stride > 0` every
/// `stride`-th mesh state (and the last) is recorded; `stride = 0` records
/// only the endpoints.
pub fn propagate_forward(
    psi0: &WaveFunction,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    field: &ControlField,
    stride: usize,
) -> Result<Propagation> {
    check_field(spec, field)?;
    let mut op = SplitOperator::new(spec, params, field.mesh().dt());
    run(&mut op, psi0, field, stride, Direction::Forward)
}

/// Solves the same equation backward from `t = T` to `0`, starting from an
/// arbitrary (not necessarily normalized) terminal state.
pub fn propagate_backward(
    chi_t: &WaveFunction,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    field: &ControlField,
    stride: usize,
) -> Result<Propagation> {
    check_field(spec, field)?;
    let mut op = SplitOperator::new(spec, params, field.mesh().dt());
    run(&mut op, chi_t, field, stride, Direction::Backward)
}

pub(crate) fn run(
    op: &mut SplitOperator,
    start: &WaveFunction,
    field: &ControlField,
    stride: usize,
    dir: Direction,
) -> Result<Propagation> {
    op.grid().check_same(start.grid())?;
    let mesh = *field.mesh();
    let s = mesh.steps();
    let grid = *start.grid();
    let mut amps = start.amplitudes().to_vec();
    let mut traj = Trajectory::default();
    let start_k = if dir == Direction::Forward { 0 } else { s };
    traj.push(start_k, mesh.time(start_k), start.clone());
    for n in 0..s {
        let (k, next) = match dir {
            Direction::Forward => (n, n + 1),
            Direction::Backward => (s - 1 - n, s - 1 - n),
        };
        op.step(&mut amps, field.step_value(k), dir);
        if !(amps[0].re.is_finite() && amps[0].im.is_finite()) {
            return Err(Error::NonFinite { step: k });
        }
        let last = n + 1 == s;
        if last || (stride > 0 && (n + 1) % stride == 0) {
            let state = WaveFunction::new(grid, amps.clone())?;
            if !state.is_finite() {
                return Err(Error::NonFinite { step: k });
            }
            traj.push(next, mesh.time(next), state);
        }
    }
    if dir == Direction::Backward {
        traj.reverse();
    }
    let final_state = WaveFunction::new(grid, amps)?;
    Ok(Propagation {
        trajectory: traj,
        final_state,
    })
}
