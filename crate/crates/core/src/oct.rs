//! Forward–backward optimal control of the revival.
//!
//! Each iteration propagates `ψ` forward under the current field, builds the
//! adjoint terminal state `χ(T) = Ôψ(T)`, and sweeps back to `t = 0` while
//! the new field `ε_c(t) = Im⟨χ(t)|r_c|ψ(t)⟩/α` is generated on the fly and
//! immediately drives `χ`. The swept field is then band-limited and
//! projected back onto the fluence sphere `∫ε² = F₀`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{inner_product, overlap_sq, DensityField, WaveFunction};
use crate::model::{PhysicalParams, PotentialSpec};
use crate::propagator::{run, ControlField, Direction, SplitOperator, TimeMesh, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub enum TargetOperator {
    /// `Ô = |Φ_F⟩⟨Φ_F|`
    Projection(WaveFunction),
    /// `Ô = ρ_F(r)`
    Density(DensityField),
}

impl TargetOperator {
    pub fn projection(state: &WaveFunction) -> Result<Self> {
        Ok(TargetOperator::Projection(state.normalized()?))
    }

    pub fn density(rho: DensityField) -> Result<Self> {
        let total = rho.integral();
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "target density integrates to {total}, expected 1"
            )));
        }
        Ok(TargetOperator::Density(rho))
    }

    pub fn grid(&self) -> &crate::grid::Grid {
        match self {
            TargetOperator::Projection(s) => s.grid(),
            TargetOperator::Density(d) => d.grid(),
        }
    }
}

/// `J₁ = ⟨ψ(T)|Ô|ψ(T)⟩`.
pub fn j1(psi_t: &WaveFunction, target: &TargetOperator) -> Result<f64> {
    match target {
        TargetOperator::Projection(phi) => overlap_sq(phi, psi_t),
        TargetOperator::Density(rho) => {
            rho.grid().check_same(psi_t.grid())?;
            Ok(psi_t.expectation_local(rho.values()))
        }
    }
}

/// Adjoint terminal condition `χ(T) = Ôψ(T)`.
pub fn apply_target(target: &TargetOperator, psi_t: &WaveFunction) -> Result<WaveFunction> {
    match target {
        TargetOperator::Projection(phi) => Ok(phi.scaled(inner_product(phi, psi_t)?)),
        TargetOperator::Density(rho) => {
            rho.grid().check_same(psi_t.grid())?;
            let amps = psi_t
                .amplitudes()
                .iter()
                .zip(rho.values())
                .map(|(a, r)| a * r)
                .collect();
            WaveFunction::new(*psi_t.grid(), amps)
        }
    }
}

/// Pass band `f(ω)`: 1 up to `omega_max`, raised-cosine roll-off over
/// `edge_width`, 0 beyond.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub omega_max: f64,
    #[serde(default)]
    pub edge_width: f64,
}

impl SpectralFilter {
    pub fn sharp(omega_max: f64) -> Self {
        Self {
            omega_max,
            edge_width: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_max >= 0.0) || !(self.edge_width >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "filter needs omega_max >= 0 and edge_width >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn response(&self, omega: f64) -> f64 {
        let w = omega.abs();
        if w <= self.omega_max {
            1.0
        } else if w < self.omega_max + self.edge_width {
            let u = (w - self.omega_max) / self.edge_width;
            0.5 * (1.0 + (std::f64::consts::PI * u).cos())
        } else {
            0.0
        }
    }

    /// Frequency above which the response vanishes.
    pub fn stop_edge(&self) -> f64 {
        self.omega_max + self.edge_width
    }
}

/// Signed angular frequency of each DFT bin for `m` samples spaced `dt`.
pub fn bin_frequencies(m: usize, dt: f64) -> Vec<f64> {
    let base = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    (0..m)
        .map(|j| {
            if j <= m / 2 {
                j as f64 * base
            } else {
                (j as f64 - m as f64) * base
            }
        })
        .collect()
}

/// Reusable FFT plans for filtering fields on one mesh.
struct FilterPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    gains: Vec<f64>,
}

impl FilterPlan {
    fn new(mesh: &TimeMesh, filter: &SpectralFilter) -> Self {
        let m = mesh.steps() + 1;
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(m),
            inverse: planner.plan_fft_inverse(m),
            gains: bin_frequencies(m, mesh.dt())
                .into_iter()
                .map(|w| filter.response(w))
                .collect(),
        }
    }

    fn apply(&self, field: &ControlField) -> ControlField {
        let m = self.gains.len();
        let components = field
            .components()
            .iter()
            .map(|c| {
                let mut buf: Vec<Complex64> = c.iter().map(|v| Complex64::new(*v, 0.0)).collect();
                self.forward.process(&mut buf);
                for (b, g) in buf.iter_mut().zip(&self.gains) {
                    *b *= *g;
                }
                self.inverse.process(&mut buf);
                buf.iter().map(|b| b.re / m as f64).collect()
            })
            .collect();
        ControlField::new(*field.mesh(), components).expect("filtering keeps the mesh")
    }
}

/// Band-limits every component: DFT over the mesh samples, multiply by
/// `f(|ω|)`, inverse DFT, keep the real part.
pub fn apply_filter(field: &ControlField, filter: &SpectralFilter) -> ControlField {
    FilterPlan::new(field.mesh(), filter).apply(field)
}

/// Rescales `field` onto `∫ε² = F₀`. Returns the scaled field and the
/// factor `s`; a multiplier `α` that produced `field` becomes `α/s`.
pub fn enforce_fluence(field: &ControlField, target_fluence: f64) -> Result<(ControlField, f64)> {
    if !(target_fluence >= 0.0 && target_fluence.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "fluence must be nonnegative, got {target_fluence}"
        )));
    }
    let current = field.fluence();
    if target_fluence == 0.0 {
        return Ok((field.scaled(0.0), 0.0));
    }
    if !(current > 0.0) {
        return Err(Error::ZeroField(target_fluence));
    }
    let s = (target_fluence / current).sqrt();
    Ok((field.scaled(s), s))
}

/// Dipole coordinate tables `r_c` at every grid point.
fn dipole_tables(grid: &crate::grid::Grid) -> Vec<Vec<f64>> {
    (0..grid.dim()).map(|c| grid.coordinate_field(c)).collect()
}

/// `Im⟨χ|r_c|ψ⟩` for raw amplitude slices.
fn dipole_im(chi: &[Complex64], psi: &[Complex64], r: &[f64], weight: f64) -> f64 {
    chi.iter()
        .zip(psi)
        .zip(r)
        .map(|((c, p), x)| (c.conj() * p).im * x)
        .sum::<f64>()
        * weight
}

/// Non-immediate field `ε_c(t_k) = Im⟨χ(t_k)|r_c|ψ(t_k)⟩/α` from two
/// trajectories recorded at every mesh point.
pub fn field_update(
    chi_traj: &Trajectory,
    psi_traj: &Trajectory,
    mesh: &TimeMesh,
    alpha: f64,
) -> Result<ControlField> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let expected: Vec<usize> = (0..=mesh.steps()).collect();
    if chi_traj.steps != expected || psi_traj.steps != expected {
        return Err(Error::InvalidParameter(
            "field_update needs both trajectories sampled at every mesh point".into(),
        ));
    }
    let grid = *psi_traj.states[0].grid();
    let r = dipole_tables(&grid);
    let w = grid.cell_volume();
    let components = r
        .iter()
        .map(|rc| {
            chi_traj
                .states
                .iter()
                .zip(&psi_traj.states)
                .map(|(chi, psi)| dipole_im(chi.amplitudes(), psi.amplitudes(), rc, w) / alpha)
                .collect()
        })
        .collect();
    ControlField::new(*mesh, components)
}

/// Which sweep generates the new field point by point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateScheme {
    /// `ψ` is driven by the new field as it is generated; `χ` follows the
    /// previous field.
    #[default]
    Forward,
    /// `χ` is driven by the new field during the backward sweep; `ψ` is
    /// retraced under the previous field.
    Backward,
}

#[derive(Debug, Clone)]
pub struct OctConfig {
    pub target: TargetOperator,
    pub mesh: TimeMesh,
    /// Fixed fluence `F₀`.
    pub fluence: f64,
    pub filter: Option<SpectralFilter>,
    /// Amplitude of the constant starting field, per component.
    pub initial_amplitude: f64,
    /// Polarization components (1 in 1D, 1 or 2 in 2D).
    pub components: usize,
    pub max_iterations: usize,
    pub scheme: UpdateScheme,
    /// Stop once `|ΔJ₁|` between consecutive iterations drops below this.
    pub tolerance: f64,
}

pub const DEFAULT_MAX_ITERATIONS: usize = 300;
const MAX_ALPHA_REFINEMENTS: usize = 4;
const ALPHA_FLUENCE_TOLERANCE: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-7;

impl OctConfig {
    /// Starts from a constant field `ε₀`; the fluence is `components·ε₀²·T`.
    pub fn from_amplitude(
        target: TargetOperator,
        mesh: TimeMesh,
        components: usize,
        initial_amplitude: f64,
    ) -> Self {
        Self {
            target,
            mesh,
            fluence: components as f64 * initial_amplitude * initial_amplitude * mesh.total(),
            filter: None,
            initial_amplitude,
            components,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            scheme: UpdateScheme::default(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }

    /// Starts from the constant field carrying fluence `F₀`.
    pub fn from_fluence(target: TargetOperator, mesh: TimeMesh, components: usize, fluence: f64) -> Self {
        let amp = (fluence / (components as f64 * mesh.total())).sqrt();
        Self {
            fluence,
            ..Self::from_amplitude(target, mesh, components, amp)
        }
    }

    pub fn with_filter(mut self, filter: Option<SpectralFilter>) -> Self {
        self.filter = filter;
        self
    }

    pub fn with_scheme(mut self, scheme: UpdateScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_iterations(mut self, max_iterations: usize, tolerance: f64) -> Self {
        self.max_iterations = max_iterations;
        self.tolerance = tolerance;
        self
    }

    pub fn validate(&self, spec: &PotentialSpec) -> Result<()> {
        if !(self.fluence > 0.0 && self.fluence.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fluence must be positive, got {}",
                self.fluence
            )));
        }
        if self.components == 0 || self.components > spec.grid.dim() {
            return Err(Error::InvalidParameter(format!(
                "{} field components on a {}D grid",
                self.components,
                spec.grid.dim()
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidParameter("tolerance must be nonnegative".into()));
        }
        if let Some(f) = &self.filter {
            f.validate()?;
        }
        self.target.grid().check_same(&spec.grid)?;
        let initial = self.components as f64 * self.initial_amplitude.powi(2) * self.mesh.total();
        if (initial - self.fluence).abs() > 1e-9 * self.fluence {
            return Err(Error::InvalidParameter(format!(
                "initial field carries fluence {initial}, configured F0 is {}",
                self.fluence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OctResult {
    /// Field of the best iterate.
    pub field: ControlField,
    /// `J₁` of the field entering each iteration; entry 0 is the start field.
    pub j1_history: Vec<f64>,
    /// Lagrange multiplier `α` of each history entry (NaN for the start field).
    pub alpha_history: Vec<f64>,
    pub fluence_history: Vec<f64>,
    /// Overlap of each history entry, measured like `final_overlap`.
    pub overlap_history: Vec<f64>,
    pub final_yield: f64,
    /// `|⟨ψ(T)|Φ⟩|²` against the target state, or the initial state for
    /// density targets.
    pub final_overlap: f64,
    pub final_state: WaveFunction,
    pub best_iteration: usize,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the forward–backward optimization.
pub fn optimize(
    cfg: &OctConfig,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi0: &WaveFunction,
) -> Result<OctResult> {
    Optimizer::new(cfg, spec, params)?.run(psi0)
}

struct Optimizer<'a> {
    cfg: &'a OctConfig,
    op: SplitOperator,
    dipoles: Vec<Vec<f64>>,
    filter: Option<FilterPlan>,
}

impl<'a> Optimizer<'a> {
    fn new(cfg: &'a OctConfig, spec: &PotentialSpec, params: &PhysicalParams) -> Result<Self> {
        cfg.validate(spec)?;
        let dipoles = dipole_tables(&spec.grid)
            .into_iter()
            .take(cfg.components)
            .collect();
        Ok(Self {
            cfg,
            op: SplitOperator::new(spec, params, cfg.mesh.dt()),
            dipoles,
            filter: cfg.filter.as_ref().map(|f| FilterPlan::new(&cfg.mesh, f)),
        })
    }

    fn run(mut self, psi0: &WaveFunction) -> Result<OctResult> {
        let cfg = self.cfg;
        self.op.grid().check_same(psi0.grid())?;
        let reference = match &cfg.target {
            TargetOperator::Projection(phi) => phi.clone(),
            TargetOperator::Density(_) => psi0.clone(),
        };

        let start = ControlField::constant(cfg.mesh, cfg.components, cfg.initial_amplitude)?;
        let (mut field, _) = enforce_fluence(&self.constrain(&start), cfg.fluence)?;
        let mut alpha: Option<f64> = None;

        let mut j1_history = Vec::new();
        let mut alpha_history = Vec::new();
        let mut fluence_history = Vec::new();
        let mut overlap_history = Vec::new();
        let mut best: Option<(f64, usize, ControlField, WaveFunction)> = None;
        let mut converged = false;
        let mut iteration = 0;

        loop {
            let psi_t = run(&mut self.op, psi0, &field, 0, Direction::Forward)?.final_state;
            let yield_now = j1(&psi_t, &cfg.target)?;
            if !yield_now.is_finite() {
                return Err(Error::NonFiniteYield {
                    iteration,
                    history: j1_history,
                });
            }
            let delta = j1_history.last().map(|prev| yield_now - prev);
            j1_history.push(yield_now);
            alpha_history.push(alpha.unwrap_or(f64::NAN));
            fluence_history.push(field.fluence());
            overlap_history.push(overlap_sq(&psi_t, &reference)?);
            log::debug!(
                "oct iteration {iteration}: J1 = {yield_now:.12}, overlap = {:.12}",
                overlap_history[iteration]
            );
            if best.as_ref().is_none_or(|b| yield_now > b.0) {
                best = Some((yield_now, iteration, field.clone(), psi_t.clone()));
            }
            if delta.is_some_and(|d| d.abs() < cfg.tolerance) {
                converged = true;
                break;
            }
            if iteration == cfg.max_iterations {
                break;
            }

            let chi_t = apply_target(&cfg.target, &psi_t)?;
            let chi0 = match cfg.scheme {
                UpdateScheme::Forward => Some(run(&mut self.op, &chi_t, &field, 0, Direction::Backward)?.final_state),
                UpdateScheme::Backward => None,
            };
            let sweep = |this: &mut Self, a: Option<f64>| match &chi0 {
                Some(chi0) => this.forward_sweep(psi0, chi0, &field, a),
                None => this.sweep(&psi_t, &chi_t, &field, a),
            };
            let a = match alpha {
                Some(a) => a,
                // Bootstrap α from the plain gradient of the start field.
                None => {
                    let raw = sweep(&mut self, None)?;
                    bootstrap_alpha(&self.constrain(&raw), cfg.fluence)?
                }
            };
            let (swept, a) = self.fit_alpha(a, |this, a| sweep(this, Some(a)))?;
            let (next, s) = enforce_fluence(&swept, cfg.fluence)?;
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::ZeroField(cfg.fluence));
            }
            alpha = Some(a / s);
            field = next;
            iteration += 1;
        }

        let (final_yield, best_iteration, field, final_state) = best.expect("at least one iterate");
        Ok(OctResult {
            final_overlap: overlap_sq(&final_state, &reference)?,
            field,
            j1_history,
            alpha_history,
            fluence_history,
            overlap_history,
            final_yield,
            final_state,
            best_iteration,
            iterations: iteration,
            converged,
        })
    }

    /// Forward sweep from 0 to `T`; `χ` is retraced under the old field from
    /// `χ(0)`. With `Some(α)` each new sample `Im⟨χ|r|ψ⟩/α` drives `ψ`
    /// over the following step; with `None` `ψ` follows the old field and
    /// the raw gradient is returned.
    fn forward_sweep(
        &mut self,
        psi0: &WaveFunction,
        chi0: &WaveFunction,
        old: &ControlField,
        alpha: Option<f64>,
    ) -> Result<ControlField> {
        let mesh = self.cfg.mesh;
        let s = mesh.steps();
        let w = psi0.grid().cell_volume();
        let scale = alpha.map_or(1.0, |a| 1.0 / a);
        let mut psi = psi0.amplitudes().to_vec();
        let mut chi = chi0.amplitudes().to_vec();
        let mut new = vec![vec![0.0; s + 1]; self.dipoles.len()];
        for k in 0..=s {
            for (c, r) in self.dipoles.iter().enumerate() {
                new[c][k] = dipole_im(&chi, &psi, r, w) * scale;
            }
            if new.iter().any(|c| !c[k].is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
            if k == s {
                break;
            }
            let psi_field = match alpha {
                Some(_) => {
                    let mut e = [0.0; 2];
                    for (c, comp) in new.iter().enumerate() {
                        e[c] = comp[k];
                    }
                    e
                }
                None => old.step_value(k),
            };
            self.op.step(&mut psi, psi_field, Direction::Forward);
            self.op.step(&mut chi, old.step_value(k), Direction::Forward);
        }
        ControlField::new(mesh, new)
    }

    /// Re-sweeps with a corrected `α` until the band-limited swept field
    /// lands within `ALPHA_FLUENCE_TOLERANCE` of `F₀` (log-secant on
    /// `F(α)`), so the final rescaling is a small correction. Returns the
    /// filtered field.
    fn fit_alpha(
        &mut self,
        mut a: f64,
        mut sweep: impl FnMut(&mut Self, f64) -> Result<ControlField>,
    ) -> Result<(ControlField, f64)> {
        let target = self.cfg.fluence.ln();
        let raw = sweep(self, a)?;
        let mut swept = self.constrain(&raw);
        let mut prev: Option<(f64, f64)> = None;
        for _ in 0..MAX_ALPHA_REFINEMENTS {
            let f = swept.fluence();
            if !(f > 0.0) {
                return Err(Error::ZeroField(self.cfg.fluence));
            }
            let lf = f.ln();
            if (0.5 * (lf - target)).abs() < ALPHA_FLUENCE_TOLERANCE {
                break;
            }
            let slope = prev
                .map(|(la, lf0)| (lf - lf0) / (a.ln() - la))
                .filter(|s| s.is_finite() && *s < -0.1)
                .unwrap_or(-2.0);
            prev = Some((a.ln(), lf));
            a = (a.ln() + (target - lf) / slope).exp();
            let raw = sweep(self, a)?;
            swept = self.constrain(&raw);
        }
        Ok((swept, a))
    }

    fn constrain(&self, field: &ControlField) -> ControlField {
        match &self.filter {
            Some(plan) => plan.apply(field),
            None => field.clone(),
        }
    }

    /// Backward sweep from `T` to 0. `ψ` is retraced under the old field.
    /// With `Some(α)` the new field `Im⟨χ|r|ψ⟩/α` drives `χ` as soon as it
    /// is generated; with `None` `χ` follows the old field and the raw
    /// gradient `Im⟨χ|r|ψ⟩` is returned.
    fn sweep(
        &mut self,
        psi_t: &WaveFunction,
        chi_t: &WaveFunction,
        old: &ControlField,
        alpha: Option<f64>,
    ) -> Result<ControlField> {
        let mesh = self.cfg.mesh;
        let s = mesh.steps();
        let w = psi_t.grid().cell_volume();
        let scale = alpha.map_or(1.0, |a| 1.0 / a);
        let mut psi = psi_t.amplitudes().to_vec();
        let mut chi = chi_t.amplitudes().to_vec();
        let mut new = vec![vec![0.0; s + 1]; self.dipoles.len()];

        let sample = |new: &mut [Vec<f64>], k: usize, chi: &[Complex64], psi: &[Complex64]| {
            for (c, r) in self.dipoles.iter().enumerate() {
                new[c][k] = dipole_im(chi, psi, r, w) * scale;
            }
        };
        sample(&mut new, s, &chi, &psi);
        for k in (0..s).rev() {
            let chi_field = match alpha {
                Some(_) => {
                    let mut e = [0.0; 2];
                    for (c, comp) in new.iter().enumerate() {
                        e[c] = comp[k + 1];
                    }
                    e
                }
                None => old.step_value(k),
            };
            self.op.step(&mut chi, chi_field, Direction::Backward);
            self.op.step(&mut psi, old.step_value(k), Direction::Backward);
            sample(&mut new, k, &chi, &psi);
            if new.iter().any(|c| !c[k].is_finite()) {
                return Err(Error::NonFinite { step: k });
            }
        }
        ControlField::new(mesh, new)
    }
}

/// `α` that puts the plain gradient `raw` on the fluence sphere.
fn bootstrap_alpha(raw: &ControlField, fluence: f64) -> Result<f64> {
    let f = raw.fluence();
    if !(f > 0.0) {
        return Err(Error::ZeroField(fluence));
    }
    Ok((f / fluence).sqrt())
}

/// Yield of a field without optimizing: one forward propagation.
pub fn evaluate_field(
    field: &ControlField,
    target: &TargetOperator,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi0: &WaveFunction,
) -> Result<f64> {
    let mut op = SplitOperator::new(spec, params, field.mesh().dt());
    let psi_t = run(&mut op, psi0, field, 0, Direction::Forward)?.final_state;
    j1(&psi_t, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{density_of, Grid};
    use crate::model::{well_eigenstate, GaussianImpurity};
    use crate::propagator::{propagate_backward, propagate_forward};
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    fn line() -> Grid {
        Grid::line(20.0, 255).unwrap()
    }

    #[test]
    fn projection_yield_and_adjoint() {
        let g = line();
        let p1 = well_eigenstate(&g, &[1]).unwrap();
        let p2 = well_eigenstate(&g, &[2]).unwrap();
        let t = TargetOperator::projection(&p1).unwrap();
        assert!((j1(&p1, &t).unwrap() - 1.0).abs() < 1e-12);
        assert!(j1(&p2, &t).unwrap() < 1e-20);
        assert!(apply_target(&t, &p1).unwrap().max_abs_diff(&p1).unwrap() < 1e-12);
        assert!(apply_target(&t, &p2).unwrap().norm() < 1e-10);
        let sup = p1.scaled(FRAC_1_SQRT_2.into()).add_scaled(FRAC_1_SQRT_2.into(), &p2).unwrap();
        assert!((apply_target(&t, &sup).unwrap().norm() - FRAC_1_SQRT_2).abs() < 1e-10);
    }

    #[test]
    fn density_yield_of_ground_state() {
        let g = line();
        let p1 = well_eigenstate(&g, &[1]).unwrap();
        let t = TargetOperator::density(density_of(&p1)).unwrap();
        // ∫(2/L)² sin⁴ = 3/(2L)
        assert!((j1(&p1, &t).unwrap() - 0.075).abs() < 1e-10);
    }

    #[test]
    fn uniform_density_target_scales_state() {
        let g = line();
        let c = 1.0 / (255.0 * g.cell_volume());
        let rho = DensityField::new(g, vec![c; 255]).unwrap();
        let t = TargetOperator::density(rho.clone()).unwrap();
        let psi = well_eigenstate(&g, &[3]).unwrap();
        let chi = apply_target(&t, &psi).unwrap();
        assert!(chi.max_abs_diff(&psi.scaled(c.into())).unwrap() < 1e-15);
        assert!(TargetOperator::density(DensityField::new(g, vec![1.0; 255]).unwrap()).is_err());
    }

    #[test]
    fn filter_response_shape() {
        let f = SpectralFilter {
            omega_max: 0.2,
            edge_width: 0.1,
        };
        assert_eq!(f.response(0.0), 1.0);
        assert_eq!(f.response(-0.2), 1.0);
        assert!((f.response(0.25) - 0.5).abs() < 1e-12);
        assert_eq!(f.response(0.3), 0.0);
        for w in [0.21, 0.23, 0.27, 0.29] {
            assert_eq!(f.response(w), f.response(-w));
            assert!((0.0..=1.0).contains(&f.response(w)));
        }
    }

    /// Mesh whose DFT period `(S+1)·dt` is `2π·100`, so ω = 0.03 and 0.3
    /// fall exactly on bins 3 and 30.
    fn periodic_mesh() -> TimeMesh {
        let m = 4000;
        let dt = 2.0 * PI * 100.0 / m as f64;
        TimeMesh::new(dt * (m - 1) as f64, m - 1).unwrap()
    }

    fn sinusoids(mesh: TimeMesh, parts: &[(f64, f64)]) -> ControlField {
        let vals = mesh
            .times()
            .iter()
            .map(|t| parts.iter().map(|(a, w)| a * (w * t).cos()).sum())
            .collect();
        ControlField::new(mesh, vec![vals]).unwrap()
    }

    #[test]
    fn filter_passes_constant_and_blocks_stop_band() {
        let mesh = periodic_mesh();
        let c = ControlField::constant(mesh, 1, 0.002).unwrap();
        let out = apply_filter(&c, &SpectralFilter::sharp(0.01));
        assert!(out.component(0).iter().all(|v| (v - 0.002).abs() < 1e-12));

        let fast = sinusoids(mesh, &[(1.0, 0.3)]);
        let out = apply_filter(&fast, &SpectralFilter::sharp(0.15));
        assert!(out.component(0).iter().all(|v| v.abs() < 1e-10));

        let mixed = sinusoids(mesh, &[(0.7, 0.03), (1.0, 0.3)]);
        let out = apply_filter(&mixed, &SpectralFilter::sharp(0.15));
        let slow = sinusoids(mesh, &[(0.7, 0.03)]);
        let err = out
            .component(0)
            .iter()
            .zip(slow.component(0))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "max deviation {err}");
    }

    #[test]
    fn sharp_filter_is_idempotent() {
        let mesh = TimeMesh::new(50.0, 999).unwrap();
        let vals = mesh
            .times()
            .iter()
            .map(|t| (0.1 * t).sin() + 0.3 * (2.1 * t).cos() + 0.01 * t)
            .collect();
        let f = ControlField::new(mesh, vec![vals]).unwrap();
        let filter = SpectralFilter::sharp(0.8);
        let once = apply_filter(&f, &filter);
        let twice = apply_filter(&once, &filter);
        for (a, b) in once.component(0).iter().zip(twice.component(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fluence_rescaling() {
        let t = 1600.0 / PI;
        let mesh = TimeMesh::with_max_step(t, 0.05).unwrap();
        let f = ControlField::constant(mesh, 1, 0.002).unwrap();
        assert!((f.fluence() - 0.002037).abs() < 1e-6);
        let (scaled, s) = enforce_fluence(&f, 0.00073).unwrap();
        assert!(((scaled.fluence() - 0.00073) / 0.00073).abs() < 1e-10);
        let amp = scaled.component(0)[7];
        assert!((amp - 0.001_197_226_648_634_394).abs() < 1e-15);
        assert!((amp - 1.2e-3).abs() < 1.2e-5);
        assert!((s - scaled.component(0)[0] / 0.002).abs() < 1e-15);
        let (zero, _) = enforce_fluence(&f, 0.0).unwrap();
        assert!(zero.is_zero());
        let nothing = ControlField::zero(mesh, 1).unwrap();
        assert!(matches!(enforce_fluence(&nothing, 1e-3), Err(Error::ZeroField(_))));
    }

    fn every_step(traj_len: usize) -> Vec<usize> {
        (0..traj_len).collect()
    }

    #[test]
    fn field_update_algebra() {
        let g = line();
        let spec = PotentialSpec::clean(g);
        let p = PhysicalParams::default();
        let mesh = TimeMesh::new(5.0, 20).unwrap();
        let zero = ControlField::zero(mesh, 1).unwrap();
        let psi0 = well_eigenstate(&g, &[1])
            .unwrap()
            .add_scaled(Complex64::new(0.5, 0.1), &well_eigenstate(&g, &[2]).unwrap())
            .unwrap()
            .normalized()
            .unwrap();
        let psi = propagate_forward(&psi0, &spec, &p, &zero, 1).unwrap().trajectory;
        assert_eq!(psi.steps, every_step(21));
        let same = field_update(&psi, &psi, &mesh, 2.0).unwrap();
        assert!(same.component(0).iter().all(|v| v.abs() < 1e-14));

        let mut rotated = psi.clone();
        rotated.states = psi.states.iter().map(|s| s.scaled(Complex64::new(0.0, 1.0))).collect();
        let f = field_update(&rotated, &psi, &mesh, 2.0).unwrap();
        let x = g.coordinate_field(0);
        for (v, s) in f.component(0).iter().zip(&psi.states) {
            let dipole = s.expectation_local(&x);
            assert!((v + dipole / 2.0).abs() < 1e-12);
        }
        assert!(field_update(&psi, &psi, &mesh, 0.0).is_err());
    }

    /// Adjoint gradient against central finite differences of J₁ on a
    /// three-point (three-mode) well over ten steps.
    #[test]
    fn update_direction_matches_finite_differences() {
        let g = Grid::line(4.0, 3).unwrap();
        let spec = PotentialSpec::new(g, vec![GaussianImpurity::new(0.3, 0.8, vec![0.4]).unwrap()]).unwrap();
        let p = PhysicalParams::default();
        let mesh = TimeMesh::new(1.0, 10).unwrap();
        let base: Vec<f64> = mesh.times().iter().map(|t| 0.2 + 0.1 * (3.0 * t).sin()).collect();
        let field = ControlField::new(mesh, vec![base.clone()]).unwrap();
        let psi0 = well_eigenstate(&g, &[1]).unwrap();
        let target = TargetOperator::projection(&well_eigenstate(&g, &[2]).unwrap()).unwrap();

        let yield_of = |vals: &[f64]| {
            let f = ControlField::new(mesh, vec![vals.to_vec()]).unwrap();
            evaluate_field(&f, &target, &spec, &p, &psi0).unwrap()
        };
        let h = 1e-6;
        let fd: Vec<f64> = (0..=mesh.steps())
            .map(|k| {
                let mut up = base.clone();
                let mut dn = base.clone();
                up[k] += h;
                dn[k] -= h;
                (yield_of(&up) - yield_of(&dn)) / (2.0 * h)
            })
            .collect();

        let fwd = propagate_forward(&psi0, &spec, &p, &field, 1).unwrap();
        let chi_t = apply_target(&target, &fwd.final_state).unwrap();
        let bwd = propagate_backward(&chi_t, &spec, &p, &field, 1).unwrap();
        let eps = field_update(&bwd.trajectory, &fwd.trajectory, &mesh, 1.0).unwrap();
        // dJ/dε_k ≈ 2·Im⟨χ|x|ψ⟩ times the trapezoid weight of sample k.
        let dt = mesh.dt();
        let analytic: Vec<f64> = eps
            .component(0)
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let w = if k == 0 || k == mesh.steps() { 0.5 * dt } else { dt };
                2.0 * v * w
            })
            .collect();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = fd.iter().zip(&analytic).map(|(a, b)| a - b).collect();
        let rel = norm(&diff) / norm(&fd);
        assert!(rel < 0.02, "relative gradient mismatch {rel}");
    }

    fn superposition_setup(n: usize) -> (PotentialSpec, WaveFunction, TimeMesh) {
        let g = Grid::line(20.0, n).unwrap();
        let spec = PotentialSpec::new(g, vec![GaussianImpurity::new(0.1, 1.0, vec![2.5]).unwrap()]).unwrap();
        let psi0 = well_eigenstate(&g, &[1])
            .unwrap()
            .add_scaled((-1.0).into(), &well_eigenstate(&g, &[2]).unwrap())
            .unwrap()
            .normalized()
            .unwrap();
        let mesh = TimeMesh::with_max_step(1600.0 / (3.0 * PI), 0.1).unwrap();
        (spec, psi0, mesh)
    }

    #[test]
    fn zero_iterations_returns_start_field() {
        let (spec, psi0, mesh) = superposition_setup(63);
        let p = PhysicalParams::default();
        let target = TargetOperator::projection(&psi0).unwrap();
        let cfg = OctConfig::from_fluence(target, mesh, 1, 2e-3).with_iterations(0, 1e-7);
        let r = optimize(&cfg, &spec, &p, &psi0).unwrap();
        assert_eq!(r.j1_history.len(), 1);
        assert_eq!(r.iterations, 0);
        let amp = cfg.initial_amplitude;
        assert!(r.field.component(0).iter().all(|v| (v - amp).abs() < 1e-15));
        assert!(((r.field.fluence() - 2e-3) / 2e-3).abs() < 1e-10);
    }

    #[test]
    fn short_optimization_improves_and_keeps_fluence() {
        let (spec, psi0, mesh) = superposition_setup(63);
        let p = PhysicalParams::default();
        let target = TargetOperator::projection(&psi0).unwrap();
        let cfg = OctConfig::from_fluence(target, mesh, 1, 2e-3).with_iterations(15, 0.0);
        let r = optimize(&cfg, &spec, &p, &psi0).unwrap();
        assert!(r.final_yield > r.j1_history[0]);
        assert!(((r.field.fluence() - 2e-3) / 2e-3).abs() < 1e-8);
        assert!(r.j1_history.iter().all(|j| (0.0..=1.0).contains(j)));
        assert!((r.final_overlap - r.final_yield).abs() < 1e-12);
        // Deterministic.
        let again = optimize(&cfg, &spec, &p, &psi0).unwrap();
        assert_eq!(r.j1_history, again.j1_history);
    }

    #[test]
    fn filtered_optimization_stays_band_limited() {
        let (spec, psi0, mesh) = superposition_setup(63);
        let p = PhysicalParams::default();
        let target = TargetOperator::projection(&psi0).unwrap();
        let filter = SpectralFilter::sharp(0.2);
        let cfg = OctConfig::from_fluence(target, mesh, 1, 2e-3)
            .with_filter(Some(filter))
            .with_iterations(5, 0.0);
        let r = optimize(&cfg, &spec, &p, &psi0).unwrap();
        assert!(r.final_yield >= r.j1_history[0]);
        let refiltered = apply_filter(&r.field, &filter);
        for (a, b) in r.field.component(0).iter().zip(refiltered.component(0)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let (spec, psi0, mesh) = superposition_setup(63);
        let p = PhysicalParams::default();
        let target = TargetOperator::projection(&psi0).unwrap();
        let mut cfg = OctConfig::from_fluence(target.clone(), mesh, 1, 2e-3);
        cfg.fluence = 0.0;
        assert!(optimize(&cfg, &spec, &p, &psi0).is_err());
        let two = OctConfig::from_fluence(target.clone(), mesh, 2, 2e-3);
        assert!(optimize(&two, &spec, &p, &psi0).is_err());
        let mut mismatch = OctConfig::from_fluence(target, mesh, 1, 2e-3);
        mismatch.initial_amplitude *= 2.0;
        assert!(optimize(&mismatch, &spec, &p, &psi0).is_err());
    }
}
