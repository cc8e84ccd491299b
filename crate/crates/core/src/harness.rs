//! Declarative experiments: TOML config, resolution into numerical inputs,
//! and the drivers behind the command-line subcommands.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    field_spectrum, overlap_trace, projection_trace, yield_scan_with, FieldSpectrum, ScanCell, ScanPlan,
    SpectrumWindow, YieldSurface,
};
use crate::error::{Error, Result};
use crate::grid::{density_of, Axis, Grid, WaveFunction};
use crate::model::{
    realize_initial_state, revival_time, two_state_revival_time, GaussianImpurity, InitialState, PhysicalParams,
    PotentialSpec, RandomImpurities,
};
use crate::oct::{
    optimize, OctConfig, OctResult, SpectralFilter, TargetOperator, UpdateScheme, DEFAULT_MAX_ITERATIONS,
    DEFAULT_TOLERANCE,
};
use crate::propagator::{propagate_forward, ControlField, TimeMesh};
use crate::spectral::{eigensolve, EigenBasis};

/// A scalar for every axis, or one value per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerAxis<T> {
    One(T),
    Each(Vec<T>),
}

impl<T: Copy> PerAxis<T> {
    fn resolve(&self, dim: usize, field: &str) -> Result<Vec<T>> {
        match self {
            PerAxis::One(v) => Ok(vec![*v; dim]),
            PerAxis::Each(v) if v.len() == dim => Ok(v.clone()),
            PerAxis::Each(v) => Err(Error::config(
                field,
                format!("expected {dim} values, got {}", v.len()),
            )),
        }
    }
}

fn default_mass() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub dimension: usize,
    pub length: PerAxis<f64>,
    pub points: PerAxis<usize>,
    #[serde(default = "default_mass")]
    pub mass: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpurityConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub list: Vec<GaussianImpurity>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomImpurities>,
}

/// `T` as a literal, `"revival"`, or `"two_state_revival(n,m)"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeExpr {
    Value(f64),
    Expr(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub total: TimeExpr,
    pub dt: f64,
}

/// A cutoff frequency or `"none"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cutoff {
    Value(f64),
    Keyword(String),
}

impl Default for Cutoff {
    fn default() -> Self {
        Cutoff::Keyword("none".into())
    }
}

impl Cutoff {
    fn resolve(&self, field: &str) -> Result<Option<f64>> {
        match self {
            Cutoff::Value(v) if *v >= 0.0 && v.is_finite() => Ok(Some(*v)),
            Cutoff::Value(v) => Err(Error::config(field, format!("cutoff must be nonnegative, got {v}"))),
            Cutoff::Keyword(k) if k == "none" => Ok(None),
            Cutoff::Keyword(k) => Err(Error::config(field, format!("expected a number or \"none\", got {k:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// Project onto the initial state.
    Projection,
    /// Local operator `|ψ₀(r)|²`.
    Density,
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OctSection {
    pub target: TargetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default)]
    pub omega_max: Cutoff,
    #[serde(default)]
    pub edge_width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub scheme: UpdateScheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub strengths: Vec<f64>,
    pub cutoffs: Vec<Cutoff>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_levels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    /// Snapshot stride for traces; 0 picks about a thousand samples.
    #[serde(default)]
    pub stride: usize,
    #[serde(default)]
    pub spectrum_window: SpectrumWindow,
    #[serde(default = "default_levels")]
    pub projection_levels: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: default_directory(),
            stride: 0,
            spectrum_window: SpectrumWindow::None,
            projection_levels: default_levels(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub impurities: ImpurityConfig,
    pub initial: InitialState,
    pub time: TimeConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oct: Option<OctSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<ScanSection>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Numerical inputs of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub spec: PotentialSpec,
    pub params: PhysicalParams,
    pub psi0: WaveFunction,
    pub mesh: TimeMesh,
    pub warnings: Vec<String>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" at bytes {}..{}", s.start, s.end)).unwrap_or_default();
            Error::config("config", format!("{}{span}", e.message()))
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    /// Replaces the seed of a random impurity block.
    pub fn override_seed(&mut self, seed: u64) -> Result<()> {
        match &mut self.impurities.random {
            Some(r) => {
                r.seed = seed;
                Ok(())
            }
            None => Err(Error::config("impurities.random", "--seed-override needs a random impurity block")),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        let s = &self.system;
        if !(1..=2).contains(&s.dimension) {
            return Err(Error::config("system.dimension", format!("must be 1 or 2, got {}", s.dimension)));
        }
        let lengths = s.length.resolve(s.dimension, "system.length")?;
        let points = s.points.resolve(s.dimension, "system.points")?;
        let axes = lengths
            .iter()
            .zip(&points)
            .map(|(l, n)| Axis::new(*l, *n).map_err(|e| Error::config("system", e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        match axes.as_slice() {
            [x] => Grid::line(x.length, x.points),
            [x, y] => Grid::rect(*x, *y),
            _ => unreachable!(),
        }
        .map_err(|e| Error::config("system", e.to_string()))
    }

    pub fn params(&self) -> Result<PhysicalParams> {
        PhysicalParams::new(self.system.mass).map_err(|e| Error::config("system.mass", e.to_string()))
    }

    pub fn potential(&self, grid: Grid) -> Result<PotentialSpec> {
        let imp = &self.impurities;
        let list = match (&imp.random, imp.list.is_empty()) {
            (Some(_), false) => {
                return Err(Error::config("impurities", "give either `list` or `random`, not both"));
            }
            (Some(r), true) => r.generate(&grid).map_err(|e| Error::config("impurities.random", e.to_string()))?,
            (None, _) => imp.list.clone(),
        };
        PotentialSpec::new(grid, list).map_err(|e| Error::config("impurities.list", e.to_string()))
    }

    /// Resolves the `time.total` expression.
    pub fn total_time(&self, grid: &Grid, params: &PhysicalParams) -> Result<f64> {
        let field = "time.total";
        let t = match &self.time.total {
            TimeExpr::Value(v) => *v,
            TimeExpr::Expr(e) => {
                let e: String = e.chars().filter(|c| !c.is_whitespace()).collect();
                if e == "revival" {
                    let l = grid.axis(0).length;
                    if grid.axes().iter().any(|a| a.length != l) {
                        return Err(Error::config(field, "\"revival\" needs equal side lengths"));
                    }
                    revival_time(l, params.mass)
                } else if let Some(args) = e.strip_prefix("two_state_revival(").and_then(|r| r.strip_suffix(')')) {
                    let levels: Vec<usize> = args
                        .split(',')
                        .map(|a| a.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::config(field, format!("bad level list {args:?}")))?;
                    let [n, m] = levels[..] else {
                        return Err(Error::config(field, "two_state_revival takes two levels"));
                    };
                    if n == 0 || m == 0 {
                        return Err(Error::config(field, "levels are numbered from 1"));
                    }
                    let basis = EigenBasis::clean_well(grid, params, n.max(m))
                        .map_err(|err| Error::config(field, err.to_string()))?;
                    two_state_revival_time(basis.energies[m - 1], basis.energies[n - 1])
                        .map_err(|err| Error::config(field, err.to_string()))?
                } else {
                    return Err(Error::config(
                        field,
                        format!("expected a number, \"revival\" or \"two_state_revival(n,m)\", got {e:?}"),
                    ));
                }
            }
        };
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::config(field, format!("must be positive, got {t}")));
        }
        Ok(t)
    }

    pub fn mesh(&self, grid: &Grid, params: &PhysicalParams) -> Result<TimeMesh> {
        let dt = self.time.dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("time.dt", format!("must be positive, got {dt}")));
        }
        let total = self.total_time(grid, params)?;
        TimeMesh::with_max_step(total, dt).map_err(|e| Error::config("time", e.to_string()))
    }

    /// Parses everything, builds the initial state, and checks the OCT and
    /// scan blocks without running anything.
    pub fn resolve(&self) -> Result<Experiment> {
        let grid = self.grid()?;
        let params = self.params()?;
        let spec = self.potential(grid)?;
        let mesh = self.mesh(&grid, &params)?;
        let realized = realize_initial_state(&self.initial, &spec).map_err(|e| Error::config("initial", e.to_string()))?;
        let exp = Experiment {
            config: self.clone(),
            spec,
            params,
            psi0: realized.state,
            mesh,
            warnings: realized.warnings,
        };
        if self.oct.is_some() {
            exp.oct_config()?;
        }
        if self.scan.is_some() {
            exp.scan_plan()?;
        }
        if self.output.projection_levels == 0 || self.output.projection_levels > grid.len() {
            return Err(Error::config(
                "output.projection_levels",
                format!("must be between 1 and {}", grid.len()),
            ));
        }
        Ok(exp)
    }
}

impl Experiment {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::from_path(path)?.resolve()
    }

    fn oct_section(&self) -> Result<&OctSection> {
        self.config.oct.as_ref().ok_or_else(|| Error::config("oct", "this command needs an [oct] block"))
    }

    pub fn components(&self) -> Result<usize> {
        let dim = self.spec.grid.dim();
        let c = self.oct_section()?.components.unwrap_or(dim);
        if c == 0 || c > dim {
            return Err(Error::config("oct.components", format!("must be between 1 and {dim}, got {c}")));
        }
        Ok(c)
    }

    pub fn target(&self) -> Result<TargetOperator> {
        match self.oct_section()?.target {
            TargetKind::Projection => TargetOperator::projection(&self.psi0),
            TargetKind::Density => TargetOperator::density(density_of(&self.psi0)),
        }
    }

    pub fn oct_config(&self) -> Result<OctConfig> {
        let s = self.oct_section()?;
        let components = self.components()?;
        let base = match (s.fluence, s.amplitude) {
            (Some(f), None) if f > 0.0 && f.is_finite() => {
                OctConfig::from_fluence(self.target()?, self.mesh, components, f)
            }
            (None, Some(a)) if a > 0.0 && a.is_finite() => {
                OctConfig::from_amplitude(self.target()?, self.mesh, components, a)
            }
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::config("oct", "give exactly one of `fluence` and `amplitude`"));
            }
            (Some(v), None) => return Err(Error::config("oct.fluence", format!("must be positive, got {v}"))),
            (None, Some(v)) => return Err(Error::config("oct.amplitude", format!("must be positive, got {v}"))),
        };
        let filter = s.omega_max.resolve("oct.omega_max")?.map(|omega_max| SpectralFilter {
            omega_max,
            edge_width: s.edge_width,
        });
        if let Some(f) = &filter {
            f.validate().map_err(|e| Error::config("oct.edge_width", e.to_string()))?;
        }
        if !(s.tolerance >= 0.0) {
            return Err(Error::config("oct.tolerance", "must be nonnegative"));
        }
        let cfg = base
            .with_filter(filter)
            .with_iterations(s.max_iterations, s.tolerance)
            .with_scheme(s.scheme);
        cfg.validate(&self.spec).map_err(|e| Error::config("oct", e.to_string()))?;
        Ok(cfg)
    }

    pub fn scan_plan(&self) -> Result<ScanPlan> {
        let s = self
            .config
            .scan
            .as_ref()
            .ok_or_else(|| Error::config("scan", "this command needs a [scan] block"))?;
        let cutoffs = s
            .cutoffs
            .iter()
            .map(|c| c.resolve("scan.cutoffs"))
            .collect::<Result<Vec<_>>>()?;
        let plan = ScanPlan {
            strengths: s.strengths.clone(),
            cutoffs,
            edge_width: self.config.oct.as_ref().map_or(0.0, |o| o.edge_width),
        };
        plan.validate().map_err(|e| Error::config("scan", e.to_string()))?;
        Ok(plan)
    }

    pub fn stride(&self) -> usize {
        match self.config.output.stride {
            0 => self.mesh.default_stride(),
            s => s,
        }
    }

    /// The constant start field of the OCT block, or no field at all.
    pub fn start_field(&self) -> Result<ControlField> {
        match &self.config.oct {
            Some(_) => {
                let cfg = self.oct_config()?;
                ControlField::constant(self.mesh, cfg.components, cfg.initial_amplitude)
            }
            None => ControlField::zero(self.mesh, 1),
        }
    }
}

/// Full round-trip precision.
fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_table(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().map(num))?;
    }
    w.flush()?;
    Ok(())
}

fn component_names(prefix: &str, n: usize) -> Vec<String> {
    ["x", "y"][..n].iter().map(|c| format!("{prefix}_{c}")).collect()
}

pub fn write_field_csv(path: &Path, field: &ControlField) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend(component_names("eps", field.n_components()));
    let times = field.mesh().times();
    write_table(
        path,
        &header,
        times.iter().enumerate().map(|(k, t)| {
            let mut row = vec![*t];
            row.extend(field.components().iter().map(|c| c[k]));
            row
        }),
    )
}

/// Reads a field written by [`write_field_csv`]; the mesh is rebuilt from
/// the time column, which must be uniform and start at 0.
pub fn read_field_csv(path: &Path) -> Result<ControlField> {
    let mut r = csv::Reader::from_path(path)?;
    let width = r.headers()?.len();
    if !(2..=3).contains(&width) {
        return Err(Error::Format(format!("{}: expected t plus 1 or 2 field columns", path.display())));
    }
    let mut times = Vec::new();
    let mut comps = vec![Vec::new(); width - 1];
    for rec in r.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        times.push(vals[0]);
        for (c, v) in comps.iter_mut().zip(&vals[1..]) {
            c.push(*v);
        }
    }
    if times.len() < 3 || times[0] != 0.0 {
        return Err(Error::Format(format!("{}: need at least 3 samples starting at t = 0", path.display())));
    }
    let steps = times.len() - 1;
    let mesh = TimeMesh::new(times[steps], steps)?;
    let dt = mesh.dt();
    if times.iter().enumerate().any(|(k, t)| (t - mesh.time(k)).abs() > 1e-9 * dt.max(1.0)) {
        return Err(Error::Format(format!("{}: time column is not uniform", path.display())));
    }
    ControlField::new(mesh, comps)
}

pub fn write_spectrum_csv(path: &Path, s: &FieldSpectrum) -> Result<()> {
    let mut header = vec!["omega".to_string()];
    header.extend(component_names("power", s.power.len()));
    write_table(
        path,
        &header,
        s.omegas.iter().enumerate().map(|(j, w)| {
            let mut row = vec![*w];
            row.extend(s.power.iter().map(|p| p[j]));
            row
        }),
    )
}

pub fn write_history_csv(path: &Path, r: &OctResult) -> Result<()> {
    let header = ["iteration", "j1", "alpha", "fluence", "overlap"].map(String::from);
    write_table(
        path,
        &header,
        (0..r.j1_history.len()).map(|k| {
            vec![
                k as f64,
                r.j1_history[k],
                r.alpha_history[k],
                r.fluence_history[k],
                r.overlap_history[k],
            ]
        }),
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshInfo {
    pub total: f64,
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub run_id: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub grid_shape: Vec<usize>,
    pub mesh: MeshInfo,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub started: u64,
    pub elapsed_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
    pub warnings: Vec<String>,
    pub summary: serde_json::Value,
}

struct Recorder {
    command: &'static str,
    started: u64,
    clock: Instant,
}

impl Recorder {
    fn start(command: &'static str) -> Self {
        Self {
            command,
            started: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            clock: Instant::now(),
        }
    }

    fn finish(
        self,
        exp: &Experiment,
        out: &Path,
        converged: Option<bool>,
        summary: serde_json::Value,
    ) -> Result<Manifest> {
        let config_hash = exp.config.hash();
        let run_id = hex::encode(&Sha256::digest(format!("{}:{config_hash}", self.command).as_bytes())[..6]);
        let m = Manifest {
            command: self.command.into(),
            run_id,
            config_hash,
            config: exp.config.clone(),
            grid_shape: exp.spec.grid.shape(),
            mesh: MeshInfo {
                total: exp.mesh.total(),
                steps: exp.mesh.steps(),
                dt: exp.mesh.dt(),
            },
            started: self.started,
            elapsed_seconds: self.clock.elapsed().as_secs_f64(),
            converged,
            warnings: exp.warnings.clone(),
            summary,
        };
        fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        Ok(m)
    }
}

/// Overlap and level-population traces of one propagation.
fn write_traces(exp: &Experiment, out: &Path, field: &ControlField, with_free: bool) -> Result<(f64, f64)> {
    let stride = exp.stride();
    let prop = propagate_forward(&exp.psi0, &exp.spec, &exp.params, field, stride)?;
    let trace = overlap_trace(&prop.trajectory, &exp.psi0)?;
    let norm_drift = (prop.final_state.norm() - exp.psi0.norm()).abs();
    let free = if with_free {
        let zero = ControlField::zero(exp.mesh, 1)?;
        let p = propagate_forward(&exp.psi0, &exp.spec, &exp.params, &zero, stride)?;
        Some(overlap_trace(&p.trajectory, &exp.psi0)?)
    } else {
        None
    };
    let mut header = vec!["t".to_string(), "overlap".to_string()];
    if free.is_some() {
        header.push("overlap_field_free".into());
    }
    write_table(
        &out.join("overlap.csv"),
        &header,
        (0..trace.times.len()).map(|k| {
            let mut row = vec![trace.times[k], trace.values[k]];
            if let Some(f) = &free {
                row.push(f.values[k]);
            }
            row
        }),
    )?;

    let levels = exp.config.output.projection_levels;
    let basis = EigenBasis::clean_well(&exp.spec.grid, &exp.params, levels)?;
    let proj = projection_trace(&prop.trajectory, &basis, levels)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=levels).map(|n| format!("p{n}")));
    header.push("deficiency".into());
    write_table(
        &out.join("projections.csv"),
        &header,
        (0..proj.times.len()).map(|k| {
            let mut row = vec![proj.times[k]];
            row.extend(&proj.populations[k]);
            row.push(proj.deficiency[k]);
            row
        }),
    )?;
    let mut f = fs::File::create(out.join("final_state.wfn"))?;
    prop.final_state.write_binary(&mut f)?;
    Ok((*trace.values.last().expect("endpoint recorded"), norm_drift))
}

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// Field-free overlap at `T`.
pub fn baseline_overlap(exp: &Experiment) -> Result<f64> {
    let zero = ControlField::zero(exp.mesh, 1)?;
    let p = propagate_forward(&exp.psi0, &exp.spec, &exp.params, &zero, 0)?;
    crate::grid::overlap_sq(&exp.psi0, &p.final_state)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub baseline_overlap: f64,
    pub final_overlap: f64,
    pub final_yield: f64,
    pub initial_yield: f64,
    pub iterations: usize,
    pub best_iteration: usize,
    pub converged: bool,
    pub fluence: f64,
    pub norm_drift: f64,
    pub spectrum_total: f64,
}

/// Optimizes the control field and writes field, history, spectrum,
/// traces, and manifest into `out`.
pub fn run(exp: &Experiment, out: &Path) -> Result<(RunSummary, OctResult)> {
    let cfg = exp.oct_config()?;
    let rec = Recorder::start("run");
    prepare(out)?;
    let baseline = baseline_overlap(exp)?;
    let result = optimize(&cfg, &exp.spec, &exp.params, &exp.psi0)?;
    write_field_csv(&out.join("field.csv"), &result.field)?;
    write_history_csv(&out.join("history.csv"), &result)?;
    let spectrum = field_spectrum(&result.field, exp.config.output.spectrum_window);
    write_spectrum_csv(&out.join("spectrum.csv"), &spectrum)?;
    let (_, norm_drift) = write_traces(exp, out, &result.field, true)?;
    let summary = RunSummary {
        baseline_overlap: baseline,
        final_overlap: result.final_overlap,
        final_yield: result.final_yield,
        initial_yield: result.j1_history[0],
        iterations: result.iterations,
        best_iteration: result.best_iteration,
        converged: result.converged,
        fluence: result.field.fluence(),
        norm_drift,
        spectrum_total: spectrum.total(),
    };
    rec.finish(exp, out, Some(result.converged), serde_json::to_value(&summary)?)?;
    Ok((summary, result))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagateSummary {
    pub field_free: bool,
    pub final_overlap: f64,
    pub norm_drift: f64,
}

/// Propagates under the constant start field (or none) and writes traces.
pub fn propagate(exp: &Experiment, out: &Path, no_field: bool) -> Result<PropagateSummary> {
    let field = if no_field {
        ControlField::zero(exp.mesh, 1)?
    } else {
        exp.start_field()?
    };
    let rec = Recorder::start("propagate");
    prepare(out)?;
    let (final_overlap, norm_drift) = write_traces(exp, out, &field, false)?;
    let summary = PropagateSummary {
        field_free: field.is_zero(),
        final_overlap,
        norm_drift,
    };
    rec.finish(exp, out, None, serde_json::to_value(&summary)?)?;
    Ok(summary)
}

/// Lowest `count` levels of the distorted well next to the clean ones.
pub fn eigen(exp: &Experiment, out: &Path, count: usize) -> Result<EigenBasis> {
    let rec = Recorder::start("eigen");
    let basis = eigensolve(&exp.spec, &exp.params, count)?;
    let clean = EigenBasis::clean_well(&exp.spec.grid, &exp.params, count)?;
    prepare(out)?;
    let header = ["level", "energy", "clean_energy"].map(String::from);
    write_table(
        &out.join("eigen.csv"),
        &header,
        (0..count).map(|n| vec![(n + 1) as f64, basis.energies[n], clean.energies[n]]),
    )?;
    rec.finish(
        exp,
        out,
        None,
        serde_json::json!({ "count": count, "ground": basis.energies[0] }),
    )?;
    Ok(basis)
}

/// Spectrum of a field file.
pub fn spectrum(field_path: &Path, out: &Path, window: SpectrumWindow) -> Result<FieldSpectrum> {
    let field = read_field_csv(field_path)?;
    let s = field_spectrum(&field, window);
    prepare(out)?;
    write_spectrum_csv(&out.join("spectrum.csv"), &s)?;
    Ok(s)
}

fn marker_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("cell_{k:04}.json"))
}

/// Runs the yield surface of the `[scan]` block. Finished cells leave a
/// marker under `out/cells`; a rerun only computes cells without one.
pub fn scan(exp: &Experiment, out: &Path, workers: usize) -> Result<YieldSurface> {
    let plan = exp.scan_plan()?;
    let base = exp.oct_config()?;
    let rec = Recorder::start("scan");
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let hash = exp.config.hash();
    let stamp = cells_dir.join("config_hash");
    match fs::read_to_string(&stamp) {
        Ok(h) if h.trim() != hash => {
            return Err(Error::config(
                "output.directory",
                format!("{} holds cells of a different config", out.display()),
            ));
        }
        Ok(_) => {}
        Err(_) => fs::write(&stamp, &hash)?,
    }
    let surface = yield_scan_with(
        &plan,
        &base,
        &exp.spec,
        &exp.params,
        &exp.psi0,
        workers,
        |k| {
            let text = fs::read_to_string(marker_path(&cells_dir, k)).ok()?;
            serde_json::from_str::<ScanCell>(&text).ok()
        },
        |k, cell| {
            log::info!("cell {k}: ε₀={}, ω_max={:?}, yield {:.6}", cell.strength, cell.cutoff, cell.yield_value);
            let path = marker_path(&cells_dir, k);
            let tmp = path.with_extension("tmp");
            let written = serde_json::to_string(cell)
                .map_err(Error::from)
                .and_then(|s| fs::write(&tmp, s).map_err(Error::from))
                .and_then(|_| fs::rename(&tmp, &path).map_err(Error::from));
            if let Err(e) = written {
                log::warn!("could not store scan cell {k}: {e}");
            }
        },
    )?;
    let mut w = csv::Writer::from_path(out.join("surface.csv"))?;
    w.write_record(["eps0", "omega_max", "yield", "j1", "converged", "iterations", "error"])?;
    for c in &surface.cells {
        w.write_record([
            num(c.strength),
            c.cutoff.map_or_else(|| "none".into(), num),
            num(c.yield_value),
            num(c.j1),
            c.converged.to_string(),
            c.iterations.to_string(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let failed = surface.cells.iter().filter(|c| c.error.is_some()).count();
    let all_converged = surface.cells.iter().all(|c| c.converged);
    rec.finish(
        exp,
        out,
        Some(all_converged),
        serde_json::json!({ "cells": surface.cells.len(), "failed": failed }),
    )?;
    Ok(surface)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const SUPERPOSITION: &str = r#"
[system]
dimension = 1
length = 20.0
points = 63

[impurities]
list = [{ height = 0.1, width = 1.0, center = [2.5] }]

[initial]
kind = "superposition"
terms = [{ mode = [1], re = 1.0 }, { mode = [2], re = -1.0 }]

[time]
total = "two_state_revival(1,2)"
dt = 0.1

[oct]
target = "projection"
fluence = 2e-3
max_iterations = 2
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ExperimentConfig::from_toml_str(SUPERPOSITION).unwrap();
        let exp = cfg.resolve().unwrap();
        assert!((exp.mesh.total() - 1600.0 / (3.0 * PI)).abs() < 1e-9);
        assert!(exp.mesh.dt() <= 0.1);
        let oct = exp.oct_config().unwrap();
        assert_eq!(oct.components, 1);
        assert!(oct.filter.is_none());
        assert!((oct.fluence - 2e-3).abs() < 1e-15);
        assert!((exp.psi0.norm() - 1.0).abs() < 1e-12);
        // Round trip through the canonical form.
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn time_expressions() {
        let mut cfg = ExperimentConfig::from_toml_str(SUPERPOSITION).unwrap();
        let g = cfg.grid().unwrap();
        let p = cfg.params().unwrap();
        cfg.time.total = TimeExpr::Expr("revival".into());
        assert!((cfg.total_time(&g, &p).unwrap() - 1600.0 / PI).abs() < 1e-9);
        cfg.time.total = TimeExpr::Expr("two_state_revival( 3 , 1 )".into());
        assert!((cfg.total_time(&g, &p).unwrap() - 200.0 / PI).abs() < 1e-9);
        cfg.time.total = TimeExpr::Value(12.5);
        assert_eq!(cfg.total_time(&g, &p).unwrap(), 12.5);
        for bad in ["forever", "two_state_revival(1)", "two_state_revival(0,2)", "two_state_revival(2,2)"] {
            cfg.time.total = TimeExpr::Expr(bad.into());
            assert!(matches!(cfg.total_time(&g, &p), Err(Error::Config { .. })), "{bad}");
        }
        cfg.time.total = TimeExpr::Value(-1.0);
        assert!(cfg.total_time(&g, &p).is_err());
    }

    fn config_error_field(text: &str) -> String {
        match ExperimentConfig::from_toml_str(text).and_then(|c| c.resolve()) {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(config_error_field(&SUPERPOSITION.replace("dt = 0.1", "dt = 0.0")), "time.dt");
        assert_eq!(config_error_field(&SUPERPOSITION.replace("dimension = 1", "dimension = 3")), "system.dimension");
        assert_eq!(
            config_error_field(&SUPERPOSITION.replace("fluence = 2e-3", "fluence = 2e-3\namplitude = 1e-3")),
            "oct"
        );
        assert_eq!(
            config_error_field(&SUPERPOSITION.replace("fluence = 2e-3", "fluence = 2e-3\nomega_max = \"all\"")),
            "oct.omega_max"
        );
        assert_eq!(
            config_error_field(&SUPERPOSITION.replace("fluence = 2e-3", "fluence = 2e-3\ncomponents = 2")),
            "oct.components"
        );
        assert_eq!(config_error_field(&SUPERPOSITION.replace("points = 63", "points = [63, 63]")), "system.points");
        assert_eq!(config_error_field(&SUPERPOSITION.replace("center = [2.5]", "center = [2.5, 1.0]")), "impurities.list");
        assert_eq!(config_error_field(&SUPERPOSITION.replace("[time]", "[clock]")), "config");
    }

    #[test]
    fn random_impurities_and_seed_override() {
        let text = SUPERPOSITION.replace(
            "list = [{ height = 0.1, width = 1.0, center = [2.5] }]",
            "random = { count = 4, seed = 3 }",
        );
        let mut cfg = ExperimentConfig::from_toml_str(&text).unwrap();
        let a = cfg.resolve().unwrap().spec;
        assert_eq!(a.impurities.len(), 4);
        assert_eq!(cfg.resolve().unwrap().spec, a);
        cfg.override_seed(4).unwrap();
        assert_ne!(cfg.resolve().unwrap().spec, a);
        let both = text.replace("random =", "list = [{ height = 0.1, width = 1.0, center = [2.5] }]\nrandom =");
        assert_eq!(config_error_field(&both), "impurities");
        let mut plain = ExperimentConfig::from_toml_str(SUPERPOSITION).unwrap();
        assert!(plain.override_seed(1).is_err());
    }

    #[test]
    fn field_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TimeMesh::new(3.7, 37).unwrap();
        let x = mesh.times().iter().map(|t| (1.3 * t).sin() / 7.0).collect();
        let y = mesh.times().iter().map(|t| t.cos() * 1e-3).collect();
        let f = ControlField::new(mesh, vec![x, y]).unwrap();
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &f).unwrap();
        let back = read_field_csv(&path).unwrap();
        assert_eq!(back.components(), f.components());
        assert!((back.mesh().dt() - mesh.dt()).abs() < 1e-15);
    }

    #[test]
    fn run_writes_outputs_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let exp = ExperimentConfig::from_toml_str(SUPERPOSITION).unwrap().resolve().unwrap();
        let (a, _) = run(&exp, &dir.path().join("a")).unwrap();
        let (b, _) = run(&exp, &dir.path().join("b")).unwrap();
        for name in ["field.csv", "history.csv", "spectrum.csv", "overlap.csv", "projections.csv", "final_state.wfn"] {
            let x = fs::read(dir.path().join("a").join(name)).unwrap();
            let y = fs::read(dir.path().join("b").join(name)).unwrap();
            assert_eq!(x, y, "{name} differs");
        }
        assert_eq!(a.final_overlap, b.final_overlap);
        assert!(a.norm_drift < 1e-10);
        assert!(((a.fluence - 2e-3) / 2e-3).abs() < 1e-8);
        assert!(((a.spectrum_total - a.fluence) / a.fluence).abs() < 1e-8);
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("a/manifest.json")).unwrap()).unwrap();
        assert_eq!(m.config, exp.config);
        assert_eq!(m.config_hash, exp.config.hash());
        assert_eq!(m.converged, Some(false));
    }
}
