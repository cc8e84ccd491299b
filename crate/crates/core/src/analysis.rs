//! Diagnostics derived from propagations and optimized fields.

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{overlap_sq, WaveFunction};
use crate::model::{PhysicalParams, PotentialSpec};
use crate::oct::{bin_frequencies, optimize, OctConfig, SpectralFilter};
use crate::propagator::{ControlField, Trajectory};
use crate::spectral::EigenBasis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// `|⟨ψ_ref|ψ(t)⟩|²` at every recorded snapshot.
pub fn overlap_trace(trajectory: &Trajectory, reference: &WaveFunction) -> Result<OverlapTrace> {
    let values = trajectory
        .states
        .iter()
        .map(|s| overlap_sq(reference, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(OverlapTrace {
        times: trajectory.times.clone(),
        values,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumWindow {
    #[default]
    None,
    Hann,
}

/// One-sided power spectrum of a control field.
///
/// Samples enter with their trapezoid weights, so without a window the
/// power summed over bins and components equals the fluence. A window
/// reshapes the distribution; the total is renormalized to the fluence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpectrum {
    pub omegas: Vec<f64>,
    /// `power[c][j]` for component `c`, bin `j`.
    pub power: Vec<Vec<f64>>,
    pub window: SpectrumWindow,
}

impl FieldSpectrum {
    pub fn total(&self) -> f64 {
        self.power.iter().flatten().sum()
    }

    /// Power summed over components in bin `j`.
    pub fn combined(&self, j: usize) -> f64 {
        self.power.iter().map(|p| p[j]).sum()
    }

    /// Fraction of the total power with `lo ≤ ω ≤ hi`.
    pub fn band_fraction(&self, lo: f64, hi: f64) -> f64 {
        let total = self.total();
        if total == 0.0 {
            return 0.0;
        }
        let band: f64 = (0..self.omegas.len())
            .filter(|&j| self.omegas[j] >= lo && self.omegas[j] <= hi)
            .map(|j| self.combined(j))
            .sum();
        band / total
    }

    /// Bin with the largest combined power inside `[lo, hi]`.
    pub fn peak_in(&self, lo: f64, hi: f64) -> Option<(f64, f64)> {
        (0..self.omegas.len())
            .filter(|&j| self.omegas[j] >= lo && self.omegas[j] <= hi)
            .map(|j| (self.omegas[j], self.combined(j)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Spectral magnitude `√P` per component.
    pub fn magnitude(&self) -> Vec<Vec<f64>> {
        self.power
            .iter()
            .map(|p| p.iter().map(|v| v.sqrt()).collect())
            .collect()
    }
}

pub fn field_spectrum(field: &ControlField, window: SpectrumWindow) -> FieldSpectrum {
    let mesh = field.mesh();
    let m = mesh.steps() + 1;
    let dt = mesh.dt();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let taper: Vec<f64> = (0..m)
        .map(|k| {
            let trap = if k == 0 || k == m - 1 { 0.5 } else { 1.0 };
            let w = match window {
                SpectrumWindow::None => 1.0,
                SpectrumWindow::Hann => {
                    let x = std::f64::consts::PI * k as f64 / (m - 1) as f64;
                    x.sin().powi(2)
                }
            };
            (trap * dt).sqrt() * w
        })
        .collect();
    let half = m / 2;
    let mut power: Vec<Vec<f64>> = field
        .components()
        .iter()
        .map(|c| {
            let mut buf: Vec<Complex64> = c
                .iter()
                .zip(&taper)
                .map(|(v, w)| Complex64::new(v * w, 0.0))
                .collect();
            fft.process(&mut buf);
            (0..=half)
                .map(|j| {
                    let p = buf[j].norm_sqr() / m as f64;
                    if j == 0 || (m.is_multiple_of(2) && j == half) {
                        p
                    } else {
                        2.0 * p
                    }
                })
                .collect()
        })
        .collect();
    if window != SpectrumWindow::None {
        let total: f64 = power.iter().flatten().sum();
        if total > 0.0 {
            let s = field.fluence() / total;
            power.iter_mut().flatten().for_each(|p| *p *= s);
        }
    }
    let base = 2.0 * std::f64::consts::PI / (m as f64 * dt);
    FieldSpectrum {
        omegas: (0..=half).map(|j| j as f64 * base).collect(),
        power,
        window,
    }
}

/// Fraction of the field power above `omega_max`, measured with the plain
/// DFT of the mesh samples (the transform the spectral filter acts on).
pub fn band_limit_residue(field: &ControlField, omega_max: f64) -> f64 {
    let m = field.mesh().steps() + 1;
    let fft = FftPlanner::new().plan_fft_forward(m);
    let omegas = bin_frequencies(m, field.mesh().dt());
    let (mut above, mut total) = (0.0, 0.0);
    for c in field.components() {
        let mut buf: Vec<Complex64> = c.iter().map(|v| Complex64::new(*v, 0.0)).collect();
        fft.process(&mut buf);
        for (b, w) in buf.iter().zip(&omegas) {
            let p = b.norm_sqr();
            total += p;
            if w.abs() > omega_max {
                above += p;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        above / total
    }
}

/// Largest tolerated uncaptured norm before a projection trace is flagged.
pub const PROJECTION_DEFICIENCY_FLAG: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionTrace {
    pub times: Vec<f64>,
    /// `populations[k][n] = |⟨φ_n|ψ(t_k)⟩|²`.
    pub populations: Vec<Vec<f64>>,
    /// Norm outside the first `n_max` levels, per sample.
    pub deficiency: Vec<f64>,
    pub flagged: bool,
}

/// Level populations of every snapshot against `basis`, truncated to the
/// lowest `n_max` states.
pub fn projection_trace(trajectory: &Trajectory, basis: &EigenBasis, n_max: usize) -> Result<ProjectionTrace> {
    if n_max == 0 || n_max > basis.len() {
        return Err(Error::InvalidParameter(format!(
            "n_max = {n_max} with a basis of {} states",
            basis.len()
        )));
    }
    let mut populations = Vec::with_capacity(trajectory.len());
    let mut deficiency = Vec::with_capacity(trajectory.len());
    for state in &trajectory.states {
        let pops: Vec<f64> = basis.states[..n_max]
            .iter()
            .map(|phi| overlap_sq(phi, state))
            .collect::<Result<_>>()?;
        deficiency.push((state.norm_sq() - pops.iter().sum::<f64>()).max(0.0));
        populations.push(pops);
    }
    let flagged = deficiency.iter().any(|d| *d > PROJECTION_DEFICIENCY_FLAG);
    if flagged {
        log::warn!("projection onto {n_max} levels misses more than {PROJECTION_DEFICIENCY_FLAG} of the norm");
    }
    Ok(ProjectionTrace {
        times: trajectory.times.clone(),
        populations,
        deficiency,
        flagged,
    })
}

/// Axes of a yield surface. A cutoff of `None` leaves the field unfiltered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPlan {
    pub strengths: Vec<f64>,
    pub cutoffs: Vec<Option<f64>>,
    #[serde(default)]
    pub edge_width: f64,
}

impl ScanPlan {
    pub fn validate(&self) -> Result<()> {
        if self.strengths.is_empty() || self.cutoffs.is_empty() {
            return Err(Error::InvalidParameter("scan axes must be nonempty".into()));
        }
        if self.strengths.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidParameter("scan strengths must be positive".into()));
        }
        for c in self.cutoffs.iter().flatten() {
            SpectralFilter {
                omega_max: *c,
                edge_width: self.edge_width,
            }
            .validate()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.strengths.len() * self.cutoffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(strength index, cutoff index)` of cell `k`, row-major in strength.
    pub fn cell_index(&self, k: usize) -> (usize, usize) {
        (k / self.cutoffs.len(), k % self.cutoffs.len())
    }

    /// Optimization settings of one cell: `base` with a constant start field
    /// of amplitude `ε₀` (`F₀ = components·ε₀²·T`) and the cell's cutoff.
    pub fn cell_config(&self, base: &OctConfig, k: usize) -> OctConfig {
        let (i, j) = self.cell_index(k);
        let cfg = OctConfig::from_amplitude(base.target.clone(), base.mesh, base.components, self.strengths[i]);
        OctConfig {
            filter: self.cutoffs[j].map(|omega_max| SpectralFilter {
                omega_max,
                edge_width: self.edge_width,
            }),
            max_iterations: base.max_iterations,
            tolerance: base.tolerance,
            scheme: base.scheme,
            ..cfg
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCell {
    pub strength: f64,
    pub cutoff: Option<f64>,
    /// `final_overlap` of the optimization.
    pub yield_value: f64,
    pub j1: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Failure message; the numeric fields are NaN/zero when set.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldSurface {
    pub plan: ScanPlan,
    /// Row-major in strength, see [`ScanPlan::cell_index`].
    pub cells: Vec<ScanCell>,
}

impl YieldSurface {
    pub fn cell(&self, i: usize, j: usize) -> &ScanCell {
        &self.cells[i * self.plan.cutoffs.len() + j]
    }
}

pub fn run_cell(
    plan: &ScanPlan,
    k: usize,
    base: &OctConfig,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi0: &WaveFunction,
) -> ScanCell {
    let cfg = plan.cell_config(base, k);
    let (i, j) = plan.cell_index(k);
    let (strength, cutoff) = (plan.strengths[i], plan.cutoffs[j]);
    match optimize(&cfg, spec, params, psi0) {
        Ok(r) => ScanCell {
            strength,
            cutoff,
            yield_value: r.final_overlap,
            j1: r.final_yield,
            converged: r.converged,
            iterations: r.iterations,
            error: None,
        },
        Err(e) => {
            log::warn!("scan cell ε₀={strength}, ω_max={cutoff:?} failed: {e}");
            ScanCell {
                strength,
                cutoff,
                yield_value: f64::NAN,
                j1: f64::NAN,
                converged: false,
                iterations: 0,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Optimizes every cell of `plan` on at most `workers` threads. Cells for
/// which `resume` returns a stored result are not recomputed; `on_done` is
/// called as each fresh cell finishes.
#[allow(clippy::too_many_arguments)]
pub fn yield_scan_with(
    plan: &ScanPlan,
    base: &OctConfig,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi0: &WaveFunction,
    workers: usize,
    resume: impl Fn(usize) -> Option<ScanCell> + Sync,
    on_done: impl Fn(usize, &ScanCell) + Sync,
) -> Result<YieldSurface> {
    plan.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        (0..plan.len())
            .into_par_iter()
            .map(|k| {
                resume(k).unwrap_or_else(|| {
                    let cell = run_cell(plan, k, base, spec, params, psi0);
                    on_done(k, &cell);
                    cell
                })
            })
            .collect()
    });
    Ok(YieldSurface {
        plan: plan.clone(),
        cells,
    })
}

pub fn yield_scan(
    plan: &ScanPlan,
    base: &OctConfig,
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi0: &WaveFunction,
    workers: usize,
) -> Result<YieldSurface> {
    yield_scan_with(plan, base, spec, params, psi0, workers, |_| None, |_, _| {})
}
