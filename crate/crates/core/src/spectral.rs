//! Sine-basis machinery for hard-wall boxes.
//!
//! The interior grid of `N` points carries exactly `N` sine modes per axis,
//! and the type-I discrete sine transform maps between the two
//! representations without loss. Kinetic energy is diagonal in that basis,
//! which makes clean-well evolution exact.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::grid::{inner_product, Grid, WaveFunction};
use crate::model::{well_eigenstate, PhysicalParams, PotentialSpec};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Orthonormal sine-mode transform on a hard-wall grid.
///
/// Coefficients use the same flat layout as grid points, with mode
/// `(n_x, n_y)` at `(n_x − 1)·N_y + (n_y − 1)`.
pub struct SineBasis {
    grid: Grid,
    plans: Vec<Arc<dyn Fft<f64>>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
    line: Vec<Complex64>,
    forward_scale: f64,
    inverse_scale: f64,
}

impl Clone for SineBasis {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            plans: self.plans.clone(),
            buf: vec![Complex64::default(); self.buf.len()],
            scratch: vec![Complex64::default(); self.scratch.len()],
            line: vec![Complex64::default(); self.line.len()],
            forward_scale: self.forward_scale,
            inverse_scale: self.inverse_scale,
        }
    }
}

impl SineBasis {
    pub fn new(grid: Grid) -> Self {
        let mut planner = FftPlanner::new();
        let plans: Vec<_> = grid
            .axes()
            .iter()
            .map(|a| planner.plan_fft_forward(2 * (a.points + 1)))
            .collect();
        let longest = grid.axes().iter().map(|a| a.points).max().unwrap_or(0);
        let scratch_len = plans
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        let inverse_scale: f64 = grid.axes().iter().map(|a| (2.0 / a.length).sqrt()).product();
        Self {
            grid,
            plans,
            buf: vec![Complex64::default(); 2 * (longest + 1)],
            scratch: vec![Complex64::default(); scratch_len],
            line: vec![Complex64::default(); longest],
            forward_scale: inverse_scale * grid.cell_volume(),
            inverse_scale,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Wavenumbers `nπ/L`, `n = 1..=N`, along axis `c`.
    pub fn wavenumbers(&self, c: usize) -> Vec<f64> {
        let a = self.grid.axis(c);
        (1..=a.points).map(|n| n as f64 * PI / a.length).collect()
    }

    /// Grid values → mode coefficients `⟨φ_n|ψ⟩`, in place.
    pub fn forward_in_place(&mut self, data: &mut [Complex64]) {
        self.dst_all_axes(data);
        let s = self.forward_scale;
        data.iter_mut().for_each(|v| *v *= s);
    }

    /// Mode coefficients → grid values, in place.
    pub fn inverse_in_place(&mut self, data: &mut [Complex64]) {
        self.dst_all_axes(data);
        let s = self.inverse_scale;
        data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn forward(&mut self, psi: &WaveFunction) -> Vec<Complex64> {
        let mut data = psi.amplitudes().to_vec();
        self.forward_in_place(&mut data);
        data
    }

    pub fn inverse(&mut self, coeffs: &[Complex64]) -> Result<WaveFunction> {
        let mut data = coeffs.to_vec();
        if data.len() != self.grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} coefficients for {} modes",
                data.len(),
                self.grid.len()
            )));
        }
        self.inverse_in_place(&mut data);
        WaveFunction::new(self.grid, data)
    }

    fn dst_all_axes(&mut self, data: &mut [Complex64]) {
        debug_assert_eq!(data.len(), self.grid.len());
        match self.grid.dim() {
            1 => self.dst_line(0, data),
            _ => {
                let nx = self.grid.axis(0).points;
                let ny = self.grid.axis(1).points;
                for row in data.chunks_exact_mut(ny) {
                    self.dst_line(1, row);
                }
                let mut line = std::mem::take(&mut self.line);
                for iy in 0..ny {
                    for ix in 0..nx {
                        line[ix] = data[ix * ny + iy];
                    }
                    self.dst_line(0, &mut line[..nx]);
                    for ix in 0..nx {
                        data[ix * ny + iy] = line[ix];
                    }
                }
                self.line = line;
            }
        }
    }

    /// Unscaled DST-I, `s_k = Σ_j v_j sin(π j k/(N+1))`, through an odd
    /// extension of length `2(N+1)`.
    fn dst_line(&mut self, axis: usize, v: &mut [Complex64]) {
        let n = v.len();
        let m = 2 * (n + 1);
        let buf = &mut self.buf[..m];
        let zero = Complex64::default();
        buf[0] = zero;
        buf[n + 1] = zero;
        for j in 0..n {
            buf[j + 1] = v[j];
            buf[m - 1 - j] = -v[j];
        }
        self.plans[axis].process_with_scratch(buf, &mut self.scratch);
        // FFT of the odd extension is −2i·s_k.
        for k in 0..n {
            v[k] = 0.5 * I * buf[k + 1];
        }
    }
}

/// Grid values → sine coefficients.
pub fn sine_transform(psi: &WaveFunction) -> Vec<Complex64> {
    SineBasis::new(*psi.grid()).forward(psi)
}

/// Sine coefficients → grid values.
pub fn inverse_sine_transform(grid: Grid, coeffs: &[Complex64]) -> Result<WaveFunction> {
    SineBasis::new(grid).inverse(coeffs)
}

/// Kinetic energy `Σ_c k_c²/2m` of every sine mode, in coefficient layout.
pub fn kinetic_energies(grid: &Grid, mass: f64) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = grid
        .axes()
        .iter()
        .map(|a| {
            (1..=a.points)
                .map(|n| {
                    let k = n as f64 * PI / a.length;
                    k * k / (2.0 * mass)
                })
                .collect()
        })
        .collect();
    match grid.dim() {
        1 => per_axis[0].clone(),
        _ => {
            let mut out = Vec::with_capacity(grid.len());
            for ex in &per_axis[0] {
                for ey in &per_axis[1] {
                    out.push(ex + ey);
                }
            }
            out
        }
    }
}

/// `exp(−i·(k²/2m)·dt)` per sine mode. Negative `dt` gives the inverse.
pub fn kinetic_phase_factors(dt: f64, mass: f64, grid: &Grid) -> Vec<Complex64> {
    kinetic_energies(grid, mass)
        .into_iter()
        .map(|e| Complex64::from_polar(1.0, -e * dt))
        .collect()
}

/// Applies the static Hamiltonian `T + V` pseudo-spectrally.
pub fn apply_static_hamiltonian(
    spec: &PotentialSpec,
    params: &PhysicalParams,
    psi: &WaveFunction,
) -> Result<WaveFunction> {
    spec.grid.check_same(psi.grid())?;
    let mut basis = SineBasis::new(spec.grid);
    let mut kin = basis.forward(psi);
    for (c, e) in kin.iter_mut().zip(kinetic_energies(&spec.grid, params.mass)) {
        *c *= e;
    }
    basis.inverse_in_place(&mut kin);
    let v = spec.evaluate();
    for ((k, a), v) in kin.iter_mut().zip(psi.amplitudes()).zip(v) {
        *k += a * v;
    }
    WaveFunction::new(spec.grid, kin)
}

/// Lowest eigenpairs of a static Hamiltonian.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    pub energies: Vec<f64>,
    pub states: Vec<WaveFunction>,
}

/// Default product-basis size for 2D diagonalization.
pub const DEFAULT_2D_MODES: usize = 400;

impl EigenBasis {
    /// Analytic clean-well eigenstates ordered by energy.
    pub fn clean_well(grid: &Grid, params: &PhysicalParams, count: usize) -> Result<Self> {
        let modes = lowest_modes(grid, params.mass, count)?;
        let mut energies = Vec::with_capacity(count);
        let mut states = Vec::with_capacity(count);
        for (mode, e) in modes {
            energies.push(e);
            states.push(well_eigenstate(grid, &mode)?);
        }
        Ok(Self { energies, states })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Expansion coefficients `⟨φ_n|ψ⟩` together with the uncaptured norm.
    pub fn project(&self, psi: &WaveFunction) -> Result<(Vec<Complex64>, f64)> {
        let coeffs = self
            .states
            .iter()
            .map(|phi| inner_product(phi, psi))
            .collect::<Result<Vec<_>>>()?;
        let captured: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        Ok((coeffs, (psi.norm_sq() - captured).max(0.0)))
    }

    /// `Σ c_n e^{−iE_n t} φ_n`.
    pub fn evolve(&self, coeffs: &[Complex64], t: f64) -> WaveFunction {
        let grid = *self.states[0].grid();
        let mut amps = vec![Complex64::default(); grid.len()];
        for ((c, e), phi) in coeffs.iter().zip(&self.energies).zip(&self.states) {
            let w = c * Complex64::from_polar(1.0, -e * t);
            for (a, p) in amps.iter_mut().zip(phi.amplitudes()) {
                *a += w * p;
            }
        }
        WaveFunction::new(grid, amps).expect("basis states share a grid")
    }
}

/// Sine modes sorted by kinetic energy, lowest `count`.
fn lowest_modes(grid: &Grid, mass: f64, count: usize) -> Result<Vec<(Vec<usize>, f64)>> {
    if count == 0 || count > grid.len() {
        return Err(Error::InvalidParameter(format!(
            "requested {count} states from a grid of {} points",
            grid.len()
        )));
    }
    let energies = kinetic_energies(grid, mass);
    let shape = grid.shape();
    let mut idx: Vec<usize> = (0..energies.len()).collect();
    idx.sort_by(|a, b| energies[*a].total_cmp(&energies[*b]).then(a.cmp(b)));
    Ok(idx
        .into_iter()
        .take(count)
        .map(|i| {
            let mode = match shape.as_slice() {
                [_] => vec![i + 1],
                [_, ny] => vec![i / ny + 1, i % ny + 1],
                _ => unreachable!(),
            };
            (mode, energies[i])
        })
        .collect())
}

/// Lowest `count` eigenpairs of `T + V`. 1D uses the complete sine basis;
/// 2D uses the [`DEFAULT_2D_MODES`] lowest product modes.
pub fn eigensolve(spec: &PotentialSpec, params: &PhysicalParams, count: usize) -> Result<EigenBasis> {
    let modes = if spec.grid.dim() == 1 {
        spec.grid.len()
    } else {
        DEFAULT_2D_MODES.max(count).min(spec.grid.len())
    };
    eigensolve_truncated(spec, params, count, modes)
}

/// As [`eigensolve`] with an explicit product-basis size.
pub fn eigensolve_truncated(
    spec: &PotentialSpec,
    params: &PhysicalParams,
    count: usize,
    modes: usize,
) -> Result<EigenBasis> {
    let grid = spec.grid;
    if count == 0 || count > modes || modes > grid.len() {
        return Err(Error::InvalidParameter(format!(
            "need 0 < count ({count}) <= modes ({modes}) <= grid points ({})",
            grid.len()
        )));
    }
    let basis_modes = lowest_modes(&grid, params.mass, modes)?;
    let points = grid.len();
    // Φ[p, m] = φ_m(r_p)
    let mut phi = DMatrix::<f64>::zeros(points, modes);
    for (m, (mode, _)) in basis_modes.iter().enumerate() {
        let state = well_eigenstate(&grid, mode)?;
        for (p, a) in state.amplitudes().iter().enumerate() {
            phi[(p, m)] = a.re;
        }
    }
    let v = spec.evaluate();
    let w = grid.cell_volume();
    let mut h = if spec.is_clean() {
        DMatrix::<f64>::zeros(modes, modes)
    } else {
        let mut weighted = phi.clone();
        for (p, mut row) in weighted.row_iter_mut().enumerate() {
            row *= v[p] * w;
        }
        phi.transpose() * weighted
    };
    for (m, (_, e)) in basis_modes.iter().enumerate() {
        h[(m, m)] += e;
    }
    // Symmetrize away roundoff from the product.
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::try_new(h, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigensolver("symmetric QR iteration did not converge".into()))?;

    let mut order: Vec<usize> = (0..modes).collect();
    order.sort_by(|a, b| eig.eigenvalues[*a].total_cmp(&eig.eigenvalues[*b]));
    let mut energies = Vec::with_capacity(count);
    let mut states = Vec::with_capacity(count);
    for &j in order.iter().take(count) {
        energies.push(eig.eigenvalues[j]);
        let col = &phi * eig.eigenvectors.column(j);
        let amps = col.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        states.push(WaveFunction::new(grid, amps)?);
    }
    Ok(EigenBasis { energies, states })
}

/// Largest projection deficiency accepted by [`static_propagate_exact`].
pub const PROJECTION_TOLERANCE: f64 = 1e-8;

/// Field-free evolution by spectral decomposition.
pub fn static_propagate_exact(psi0: &WaveFunction, basis: &EigenBasis, t: f64) -> Result<WaveFunction> {
    if basis.is_empty() {
        return Err(Error::InvalidParameter("empty eigenbasis".into()));
    }
    let (coeffs, deficiency) = basis.project(psi0)?;
    if deficiency > PROJECTION_TOLERANCE {
        return Err(Error::ProjectionDeficiency {
            captured: psi0.norm_sq() - deficiency,
            deficiency,
        });
    }
    Ok(basis.evolve(&coeffs, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::overlap_sq;
    use crate::model::{
        realize_initial_state, two_state_revival_time, well_eigen_energy, GaussianImpurity,
        InitialState,
    };

    fn impurity_spec(grid: Grid) -> PotentialSpec {
        PotentialSpec::new(grid, vec![GaussianImpurity::new(0.1, 1.0, vec![2.5]).unwrap()]).unwrap()
    }

    #[test]
    fn transform_of_eigenstates() {
        let g = Grid::line(20.0, 255).unwrap();
        let p1 = well_eigenstate(&g, &[1]).unwrap();
        let c = sine_transform(&p1);
        assert!((c[0] - 1.0).norm() < 1e-10);
        assert!(c[1..].iter().all(|v| v.norm() < 1e-10));

        let p2 = well_eigenstate(&g, &[2]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sup = p1.scaled(s.into()).add_scaled(s.into(), &p2).unwrap();
        let c = sine_transform(&sup);
        assert!((c[0] - s).norm() < 1e-10 && (c[1] - s).norm() < 1e-10);
        assert!(c[2..].iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn transform_matches_direct_sum_2d() {
        let g = Grid::rect(
            crate::grid::Axis::new(12.0, 9).unwrap(),
            crate::grid::Axis::new(8.0, 6).unwrap(),
        )
        .unwrap();
        let psi = WaveFunction::from_fn(g, |x, y| Complex64::new((x * 0.7).cos() + y, x * y));
        let c = sine_transform(&psi);
        for nx in 1..=9 {
            for ny in 1..=6 {
                let phi = well_eigenstate(&g, &[nx, ny]).unwrap();
                let direct = inner_product(&phi, &psi).unwrap();
                assert!((c[(nx - 1) * 6 + ny - 1] - direct).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn kinetic_phases() {
        let g = Grid::line(20.0, 255).unwrap();
        let ph = kinetic_phase_factors(1.0, 1.0, &g);
        assert!((ph[0] - Complex64::from_polar(1.0, -PI * PI / 800.0)).norm() < 1e-15);
        assert!(ph.iter().all(|p| (p.norm() - 1.0).abs() < 1e-15));
        let tiny = kinetic_phase_factors(1e-14, 1.0, &g);
        assert!(tiny.iter().all(|p| (p - 1.0).norm() < 1e-9));
    }

    #[test]
    fn clean_spectrum_matches_formula() {
        let g = Grid::line(20.0, 255).unwrap();
        let p = PhysicalParams::default();
        let b = eigensolve(&PotentialSpec::clean(g), &p, 20).unwrap();
        for (n, e) in b.energies.iter().enumerate() {
            let exact = well_eigen_energy(n + 1, 20.0, 1.0).unwrap();
            assert!(((e - exact) / exact).abs() < 1e-9);
        }
    }

    #[test]
    fn repulsive_impurity_raises_levels() {
        let g = Grid::line(20.0, 255).unwrap();
        let p = PhysicalParams::default();
        let spec = impurity_spec(g);
        let b = eigensolve(&spec, &p, 30).unwrap();
        for (n, e) in b.energies.iter().enumerate() {
            assert!(*e >= well_eigen_energy(n + 1, 20.0, 1.0).unwrap());
        }
        // Perturbation estimate by quadrature. The ground-state gap is only
        // ~3.6x the coupling, so the second-order term is needed for 20%.
        let v = spec.evaluate();
        let clean: Vec<_> = (1..=255).map(|n| well_eigenstate(&g, &[n]).unwrap()).collect();
        let e0 = |n: usize| well_eigen_energy(n, 20.0, 1.0).unwrap();
        let coupling = |a: &WaveFunction, c: &WaveFunction| {
            a.amplitudes()
                .iter()
                .zip(c.amplitudes())
                .zip(&v)
                .map(|((x, y), v)| x.re * v * y.re)
                .sum::<f64>()
                * g.cell_volume()
        };
        let first_order = coupling(&clean[0], &clean[0]);
        let second_order: f64 = (1..255)
            .map(|m| coupling(&clean[m], &clean[0]).powi(2) / (e0(1) - e0(m + 1)))
            .sum();
        let estimate = first_order + second_order;
        let shift = b.energies[0] - e0(1);
        assert!(((shift - estimate) / estimate).abs() < 0.2);
        // Higher levels sit far enough from their neighbours for first order.
        let shift3 = b.energies[2] - e0(3);
        let first3 = coupling(&clean[2], &clean[2]);
        assert!(((shift3 - first3) / first3).abs() < 0.2);
    }

    #[test]
    fn eigenbasis_is_orthonormal_with_small_residuals() {
        let g = Grid::line(20.0, 255).unwrap();
        let p = PhysicalParams::default();
        let spec = impurity_spec(g);
        let b = eigensolve(&spec, &p, 12).unwrap();
        for (i, a) in b.states.iter().enumerate() {
            for (j, c) in b.states.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((inner_product(a, c).unwrap() - expect).norm() < 1e-8);
            }
            let hphi = apply_static_hamiltonian(&spec, &p, a).unwrap();
            let resid = hphi.add_scaled((-b.energies[i]).into(), a).unwrap().norm();
            assert!(resid < 1e-6, "residual {resid}");
        }
    }

    #[test]
    fn clean_revival_is_exact() {
        let g = Grid::line(20.0, 255).unwrap();
        let p = PhysicalParams::default();
        let spec = PotentialSpec::clean(g);
        let b = eigensolve(&spec, &p, 255).unwrap();
        let psi0 = realize_initial_state(&InitialState::two_level(1, 2, 0.0), &spec)
            .unwrap()
            .state;
        let e = |n| well_eigen_energy(n, 20.0, 1.0).unwrap();
        let t12 = two_state_revival_time(e(2), e(1)).unwrap();
        let back = static_propagate_exact(&psi0, &b, t12).unwrap();
        assert!((overlap_sq(&psi0, &back).unwrap() - 1.0).abs() < 1e-10);
        let half = static_propagate_exact(&psi0, &b, 0.5 * t12).unwrap();
        assert!(overlap_sq(&psi0, &half).unwrap() < 1e-8);
    }

    #[test]
    fn truncated_basis_reports_deficiency() {
        let g = Grid::line(20.0, 255).unwrap();
        let p = PhysicalParams::default();
        let b = EigenBasis::clean_well(&g, &p, 3).unwrap();
        let packet = realize_initial_state(
            &InitialState::GaussianPacket {
                offset: vec![-3.0 * 3f64.sqrt()],
                delta: std::f64::consts::FRAC_1_SQRT_2,
            },
            &PotentialSpec::clean(g),
        )
        .unwrap()
        .state;
        assert!(matches!(
            static_propagate_exact(&packet, &b, 1.0),
            Err(Error::ProjectionDeficiency { .. })
        ));
    }

    #[test]
    fn eigensolve_2d_clean() {
        let g = Grid::square(12.0, 31).unwrap();
        let p = PhysicalParams::default();
        let b = eigensolve_truncated(&PotentialSpec::clean(g), &p, 6, 40).unwrap();
        let e = |n| well_eigen_energy(n, 12.0, 1.0).unwrap();
        let expect = [e(1) + e(1), e(1) + e(2), e(1) + e(2), e(2) + e(2), e(1) + e(3), e(1) + e(3)];
        for (a, b) in b.energies.iter().zip(expect) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
