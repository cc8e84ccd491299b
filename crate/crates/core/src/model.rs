//! Static potentials, initial states and the analytic square-well formulas.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, WaveFunction};

/// Particle constants in Hartree atomic units (ħ = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub mass: f64,
}

impl PhysicalParams {
    pub fn new(mass: f64) -> Result<Self> {
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mass must be positive, got {mass}"
            )));
        }
        Ok(Self { mass })
    }
}

impl Default for PhysicalParams {
    fn default() -> Self {
        Self { mass: 1.0 }
    }
}

/// `E_n = π²n²/(2mL²)` for the infinite square well.
pub fn well_eigen_energy(n: usize, length: f64, mass: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("well levels start at n = 1".into()));
    }
    let n = n as f64;
    Ok(PI * PI * n * n / (2.0 * mass * length * length))
}

/// Energy of a product sine mode `(n_x[, n_y])` of a clean box.
pub fn mode_energy(grid: &Grid, mode: &[usize], mass: f64) -> Result<f64> {
    check_mode(grid, mode)?;
    grid.axes()
        .iter()
        .zip(mode)
        .map(|(axis, &n)| well_eigen_energy(n, axis.length, mass))
        .sum()
}

/// Universal revival time `4mL²/π` of the hard-wall well.
pub fn revival_time(length: f64, mass: f64) -> f64 {
    4.0 * mass * length * length / PI
}

/// First full revival of a two-level superposition, `2π/|E_m − E_n|`.
pub fn two_state_revival_time(e_m: f64, e_n: f64) -> Result<f64> {
    let gap = (e_m - e_n).abs();
    if gap == 0.0 || !gap.is_finite() {
        return Err(Error::DegenerateEnergies(e_m, e_n));
    }
    Ok(2.0 * PI / gap)
}

/// `β·exp(−|r − r₀|²/γ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianImpurity {
    pub height: f64,
    pub width: f64,
    pub center: Vec<f64>,
}

impl GaussianImpurity {
    pub fn new(height: f64, width: f64, center: Vec<f64>) -> Result<Self> {
        let imp = Self {
            height,
            width,
            center,
        };
        imp.validate()?;
        Ok(imp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "impurity width must be positive, got {}",
                self.width
            )));
        }
        if !self.height.is_finite() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("impurity parameters must be finite".into()));
        }
        Ok(())
    }

    pub fn value_at(&self, point: &[f64]) -> f64 {
        let r2: f64 = point
            .iter()
            .zip(&self.center)
            .map(|(x, c)| (x - c) * (x - c))
            .sum();
        self.height * (-r2 / (self.width * self.width)).exp()
    }
}

/// Seeded generator for a random impurity landscape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomImpurities {
    pub count: usize,
    pub seed: u64,
    #[serde(default = "default_height_range")]
    pub height: [f64; 2],
    #[serde(default = "default_width_range")]
    pub width: [f64; 2],
    /// Minimum distance between an impurity center and any wall.
    #[serde(default)]
    pub margin: f64,
}

fn default_height_range() -> [f64; 2] {
    [0.1, 0.3]
}

fn default_width_range() -> [f64; 2] {
    [0.5, 1.5]
}

impl RandomImpurities {
    pub fn generate(&self, grid: &Grid) -> Result<Vec<GaussianImpurity>> {
        let ordered = |r: [f64; 2]| r[0] <= r[1] && r.iter().all(|v| v.is_finite());
        if !ordered(self.height) || !ordered(self.width) || self.width[0] <= 0.0 {
            return Err(Error::InvalidParameter(
                "random impurity ranges must be ordered, finite, with positive widths".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sample = |r: [f64; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.random_range(r[0]..r[1])
            }
        };
        let mut out = Vec::with_capacity(self.count);
        for _ in 0..self.count {
            let mut center = Vec::with_capacity(grid.dim());
            for axis in grid.axes() {
                let half = 0.5 * axis.length - self.margin;
                if half <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "impurity margin leaves no interior".into(),
                    ));
                }
                center.push(sample([-half, half]));
            }
            let height = sample(self.height);
            let width = sample(self.width);
            out.push(GaussianImpurity::new(height, width, center)?);
        }
        Ok(out)
    }
}

/// A grid together with the impurities sitting in it.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    pub grid: Grid,
    pub impurities: Vec<GaussianImpurity>,
}

impl PotentialSpec {
    pub fn clean(grid: Grid) -> Self {
        Self {
            grid,
            impurities: Vec::new(),
        }
    }

    pub fn new(grid: Grid, impurities: Vec<GaussianImpurity>) -> Result<Self> {
        for imp in &impurities {
            imp.validate()?;
            if imp.center.len() != grid.dim() {
                return Err(Error::InvalidParameter(format!(
                    "impurity center has {} coordinates on a {}D grid",
                    imp.center.len(),
                    grid.dim()
                )));
            }
        }
        Ok(Self { grid, impurities })
    }

    pub fn is_clean(&self) -> bool {
        self.impurities.is_empty()
    }

    /// The static potential at every interior point.
    pub fn evaluate(&self) -> Vec<f64> {
        let dim = self.grid.dim();
        (0..self.grid.len())
            .map(|i| {
                let p = self.grid.point(i);
                self.impurities.iter().map(|imp| imp.value_at(&p[..dim])).sum()
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionTerm {
    /// Sine-mode quantum numbers, one per axis, starting at 1.
    pub mode: Vec<usize>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// Combination of clean-well eigenstates.
    Superposition { terms: Vec<SuperpositionTerm> },
    /// `exp(−|r + offset|²/(2δ²))`, renormalized on the grid.
    GaussianPacket { offset: Vec<f64>, delta: f64 },
}

impl InitialState {
    /// Equal-weight two-level superposition `(φ_a + e^{iθ} φ_b)/√2`.
    pub fn two_level(a: usize, b: usize, relative_phase: f64) -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        InitialState::Superposition {
            terms: vec![
                SuperpositionTerm {
                    mode: vec![a],
                    re: s,
                    im: 0.0,
                },
                SuperpositionTerm {
                    mode: vec![b],
                    re: s * relative_phase.cos(),
                    im: s * relative_phase.sin(),
                },
            ],
        }
    }
}

/// A realized initial state plus anything suspicious noticed on the way.
#[derive(Debug, Clone)]
pub struct Realized {
    pub state: WaveFunction,
    pub warnings: Vec<String>,
}

/// Analytic clean-well eigenstate sampled on the grid.
pub fn well_eigenstate(grid: &Grid, mode: &[usize]) -> Result<WaveFunction> {
    check_mode(grid, mode)?;
    let axes: Vec<_> = grid.axes().to_vec();
    let factor = |c: usize, x: f64| {
        let l = axes[c].length;
        (2.0 / l).sqrt() * (mode[c] as f64 * PI * (x + 0.5 * l) / l).sin()
    };
    Ok(WaveFunction::from_fn(*grid, |x, y| {
        let v = if grid.dim() == 1 {
            factor(0, x)
        } else {
            factor(0, x) * factor(1, y)
        };
        Complex64::new(v, 0.0)
    }))
}

fn check_mode(grid: &Grid, mode: &[usize]) -> Result<()> {
    if mode.len() != grid.dim() {
        return Err(Error::InvalidParameter(format!(
            "mode {mode:?} does not match a {}D grid",
            grid.dim()
        )));
    }
    for (axis, &n) in grid.axes().iter().zip(mode) {
        if n == 0 || n > axis.points {
            return Err(Error::InvalidParameter(format!(
                "mode {mode:?} not resolvable with {} points per axis",
                axis.points
            )));
        }
    }
    Ok(())
}

/// Relative packet amplitude on the walls above which a warning is issued.
pub const WALL_TOLERANCE: f64 = 1e-6;

/// Samples and normalizes the initial state. Superpositions always use the
/// clean-well eigenstates, whatever impurities `spec` carries.
pub fn realize_initial_state(init: &InitialState, spec: &PotentialSpec) -> Result<Realized> {
    let grid = spec.grid;
    let mut warnings = Vec::new();
    let state = match init {
        InitialState::Superposition { terms } => {
            if terms.is_empty() {
                return Err(Error::InvalidParameter("empty superposition".into()));
            }
            let mut psi = WaveFunction::zeros(grid);
            for term in terms {
                let phi = well_eigenstate(&grid, &term.mode)?;
                psi = psi.add_scaled(Complex64::new(term.re, term.im), &phi)?;
            }
            psi
        }
        InitialState::GaussianPacket { offset, delta } => {
            if offset.len() != grid.dim() {
                return Err(Error::InvalidParameter(format!(
                    "packet offset has {} coordinates on a {}D grid",
                    offset.len(),
                    grid.dim()
                )));
            }
            if !(*delta > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "packet width must be positive, got {delta}"
                )));
            }
            let two_d2 = 2.0 * delta * delta;
            // Largest wall value of the separable Gaussian relative to its peak.
            let wall = grid
                .axes()
                .iter()
                .zip(offset)
                .map(|(axis, x0)| {
                    let near = 0.5 * axis.length - x0.abs();
                    (-(near * near) / two_d2).exp()
                })
                .fold(0.0, f64::max);
            if wall > WALL_TOLERANCE {
                warnings.push(format!(
                    "packet amplitude on the walls is {wall:.3e} of its peak (> {WALL_TOLERANCE:e})"
                ));
            }
            let dim = grid.dim();
            WaveFunction::from_fn(grid, |x, y| {
                let p = [x, y];
                let r2: f64 = (0..dim).map(|c| (p[c] + offset[c]).powi(2)).sum();
                Complex64::new((-r2 / two_d2).exp(), 0.0)
            })
        }
    };
    Ok(Realized {
        state: state.normalized()?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{density_of, overlap_sq};

    #[test]
    fn square_well_energies() {
        let e1 = well_eigen_energy(1, 20.0, 1.0).unwrap();
        let e2 = well_eigen_energy(2, 20.0, 1.0).unwrap();
        let e5 = well_eigen_energy(5, 20.0, 1.0).unwrap();
        let e6 = well_eigen_energy(6, 20.0, 1.0).unwrap();
        assert!((e1 - PI * PI / 800.0).abs() < 1e-15);
        assert!((e1 - 0.012337).abs() < 1e-6);
        assert!((e2 - e1 - 0.03701).abs() < 1e-5);
        assert!((e6 - e5 - 0.1357).abs() < 1e-4);
        assert!(well_eigen_energy(0, 20.0, 1.0).is_err());
    }

    #[test]
    fn revival_times() {
        assert!((revival_time(20.0, 1.0) - 1600.0 / PI).abs() < 1e-12);
        assert!((revival_time(12.0, 1.0) - 576.0 / PI).abs() < 1e-12);
        assert!((revival_time(20.0, 2.0) - 3200.0 / PI).abs() < 1e-12);
        let e = |n| well_eigen_energy(n, 20.0, 1.0).unwrap();
        let t12 = two_state_revival_time(e(2), e(1)).unwrap();
        assert!((t12 - 1600.0 / (3.0 * PI)).abs() < 1e-10);
        // 2π/(8π²/800) = 200/π, cross-checked by scanning the two-level phase.
        let t31 = two_state_revival_time(e(3), e(1)).unwrap();
        assert!((t31 - 200.0 / PI).abs() < 1e-10);
        let revisit = |t: f64| (0.5 * (1.0 + ((e(3) - e(1)) * t).cos())).abs();
        let first = (1..200_000)
            .map(|k| k as f64 * 1e-3)
            .find(|&t| t > 1.0 && revisit(t) > 1.0 - 1e-8)
            .unwrap();
        assert!((first - t31).abs() < 2e-3);
        assert!((two_state_revival_time(0.3, 0.3 + 2.0 * PI).unwrap() - 1.0).abs() < 1e-15);
        assert!(two_state_revival_time(0.3, 0.3).is_err());
    }

    #[test]
    fn revival_identity_holds_for_many_wells() {
        for &(l, m) in &[(20.0, 1.0), (12.0, 1.0), (7.5, 0.3), (31.0, 4.0)] {
            let t12 = two_state_revival_time(
                well_eigen_energy(2, l, m).unwrap(),
                well_eigen_energy(1, l, m).unwrap(),
            )
            .unwrap();
            let t = revival_time(l, m);
            assert!(((3.0 * t12) - t).abs() <= 1e-12 * t);
        }
    }

    #[test]
    fn impurity_values() {
        let g = Grid::line(20.0, 255).unwrap();
        let imp = GaussianImpurity::new(0.1, 1.0, vec![2.5]).unwrap();
        assert!((imp.value_at(&[2.5]) - 0.1).abs() < 1e-15);
        assert!((imp.value_at(&[3.5]) - 0.1 * (-1f64).exp()).abs() < 1e-15);
        assert!(PotentialSpec::clean(g).evaluate().iter().all(|v| *v == 0.0));
        assert!(GaussianImpurity::new(0.1, 0.0, vec![0.0]).is_err());
        assert!(PotentialSpec::new(g, vec![GaussianImpurity::new(0.1, 1.0, vec![0.0, 1.0]).unwrap()]).is_err());
    }

    #[test]
    fn potential_is_additive() {
        let g = Grid::square(12.0, 31).unwrap();
        let a = GaussianImpurity::new(0.2, 0.8, vec![1.0, -2.0]).unwrap();
        let b = GaussianImpurity::new(0.15, 1.3, vec![-3.0, 0.5]).unwrap();
        let va = PotentialSpec::new(g, vec![a.clone()]).unwrap().evaluate();
        let vb = PotentialSpec::new(g, vec![b.clone()]).unwrap().evaluate();
        let vab = PotentialSpec::new(g, vec![a, b]).unwrap().evaluate();
        for i in 0..g.len() {
            assert!((vab[i] - va[i] - vb[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn random_impurities_are_seeded() {
        let g = Grid::square(12.0, 31).unwrap();
        let gen = RandomImpurities {
            count: 10,
            seed: 7,
            height: [0.1, 0.3],
            width: [0.5, 1.5],
            margin: 1.0,
        };
        let a = gen.generate(&g).unwrap();
        assert_eq!(a, gen.generate(&g).unwrap());
        assert_eq!(a.len(), 10);
        for imp in &a {
            assert!((0.1..0.3).contains(&imp.height));
            assert!((0.5..1.5).contains(&imp.width));
            assert!(imp.center.iter().all(|c| c.abs() < 5.0));
        }
        let other = RandomImpurities { seed: 8, ..gen }.generate(&g).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn superposition_state() {
        let g = Grid::line(20.0, 255).unwrap();
        let spec = PotentialSpec::clean(g);
        let psi = realize_initial_state(&InitialState::two_level(1, 2, 0.0), &spec)
            .unwrap()
            .state;
        let phi1 = well_eigenstate(&g, &[1]).unwrap();
        assert!((overlap_sq(&phi1, &psi).unwrap() - 0.5).abs() < 1e-12);
        // Impurities do not change the eigenstates used for superpositions.
        let dirty = PotentialSpec::new(g, vec![GaussianImpurity::new(0.1, 1.0, vec![2.5]).unwrap()])
            .unwrap();
        let psi2 = realize_initial_state(&InitialState::two_level(1, 2, 0.0), &dirty)
            .unwrap()
            .state;
        assert_eq!(psi, psi2);
        let bad = InitialState::Superposition {
            terms: vec![SuperpositionTerm {
                mode: vec![256],
                re: 1.0,
                im: 0.0,
            }],
        };
        assert!(realize_initial_state(&bad, &spec).is_err());
    }

    #[test]
    fn packet_1d_peak_position() {
        let g = Grid::line(20.0, 255).unwrap();
        let x0 = -3.0 * 3f64.sqrt();
        let init = InitialState::GaussianPacket {
            offset: vec![x0],
            delta: std::f64::consts::FRAC_1_SQRT_2,
        };
        let r = realize_initial_state(&init, &PotentialSpec::clean(g)).unwrap();
        assert!(r.warnings.is_empty());
        assert!((r.state.norm_sq() - 1.0).abs() < 1e-12);
        let peak = g.axis(0).coord(density_of(&r.state).argmax());
        assert!((peak - 3.0 * 3f64.sqrt()).abs() <= g.axis(0).spacing());
        assert!((peak - 5.196).abs() <= g.axis(0).spacing());
    }

    #[test]
    fn packet_2d_peak_position() {
        let g = Grid::square(12.0, 127).unwrap();
        let init = InitialState::GaussianPacket {
            offset: vec![1.0, 2.0],
            delta: 0.7,
        };
        let r = realize_initial_state(&init, &PotentialSpec::clean(g)).unwrap();
        assert!(r.warnings.is_empty());
        assert!((r.state.norm_sq() - 1.0).abs() < 1e-12);
        let [x, y] = g.point(density_of(&r.state).argmax());
        let h = g.axis(0).spacing();
        assert!((x + 1.0).abs() <= h && (y + 2.0).abs() <= h);
    }

    #[test]
    fn packet_touching_wall_warns() {
        let g = Grid::line(20.0, 255).unwrap();
        let init = InitialState::GaussianPacket {
            offset: vec![-8.0],
            delta: 1.0,
        };
        let r = realize_initial_state(&init, &PotentialSpec::clean(g)).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }
}
