//! Experiment configuration.
//!
//! Configs are TOML. Unknown keys are rejected at every level. After parsing,
//! [`Config::resolve`] fills every optional value, so the resolved config
//! written next to the results reproduces the run on its own.

use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use shg_core::data::Pattern;
use shg_core::helmholtz::{Admissibility, MediumBounds, MediumSet};
use shg_core::opt::{Experiment, RegParams};
use shg_core::phantom::{make_phantom, Bounds, Inclusion};
use shg_core::{BoundaryTrace, Complex64, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Forward,
    Synth,
    CertifyLinearization,
    ReconDirect,
    ReconGamma,
    ReconOpt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentName {
    I,
    II,
    III,
    IV,
}

impl From<ExperimentName> for Experiment {
    fn from(e: ExperimentName) -> Self {
        match e {
            ExperimentName::I => Experiment::I,
            ExperimentName::II => Experiment::II,
            ExperimentName::III => Experiment::III,
            ExperimentName::IV => Experiment::IV,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub kind: TaskKind,
    /// Required for `recon_opt`, rejected otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    /// Defaults to `nx`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub y0: f64,
    #[serde(default = "one")]
    pub lx: f64,
    #[serde(default = "one")]
    pub ly: f64,
}

impl GridConfig {
    pub fn spec(&self) -> shg_core::Result<GridSpec> {
        GridSpec::new(self.nx, self.ny.unwrap_or(self.nx), self.x0, self.y0, self.lx, self.ly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum InclusionConfig {
    Disk { center: [f64; 2], radius: f64, amplitude: f64 },
    Square { center: [f64; 2], half_width: f64, amplitude: f64 },
    Gaussian { center: [f64; 2], width: f64, amplitude: f64 },
}

impl From<InclusionConfig> for Inclusion {
    fn from(c: InclusionConfig) -> Self {
        match c {
            InclusionConfig::Disk { center, radius, amplitude } => Inclusion::Disk {
                center: (center[0], center[1]),
                radius,
                amplitude,
            },
            InclusionConfig::Square { center, half_width, amplitude } => Inclusion::Square {
                center: (center[0], center[1]),
                half_width,
                amplitude,
            },
            InclusionConfig::Gaussian { center, width, amplitude } => Inclusion::Gaussian {
                center: (center[0], center[1]),
                width,
                amplitude,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientConfig {
    pub background: f64,
    /// `[lower, upper]`, used for admissibility and as the optimizer box.
    pub bounds: [f64; 2],
    #[serde(default)]
    pub inclusions: Vec<InclusionConfig>,
}

impl CoefficientConfig {
    fn constant(background: f64, lower: f64, upper: f64) -> Self {
        Self {
            background,
            bounds: [lower, upper],
            inclusions: Vec::new(),
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::new(self.bounds[0], self.bounds[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaConfig {
    #[serde(default = "default_gamma_g")]
    pub gamma_g: CoefficientConfig,
    #[serde(default = "default_eta")]
    pub eta: CoefficientConfig,
    #[serde(default = "default_sigma")]
    pub sigma: CoefficientConfig,
    #[serde(default = "default_chi2")]
    pub chi2: CoefficientConfig,
}

impl Default for MediaConfig {
    fn default() -> Self {
        Self {
            gamma_g: default_gamma_g(),
            eta: default_eta(),
            sigma: default_sigma(),
            chi2: default_chi2(),
        }
    }
}

fn default_gamma_g() -> CoefficientConfig {
    CoefficientConfig::constant(1.0, 0.5, 2.0)
}
fn default_eta() -> CoefficientConfig {
    CoefficientConfig::constant(0.2, 0.05, 1.0)
}
fn default_sigma() -> CoefficientConfig {
    CoefficientConfig::constant(0.5, 0.1, 1.5)
}
fn default_chi2() -> CoefficientConfig {
    CoefficientConfig::constant(1.0, 0.5, 3.0)
}

impl MediaConfig {
    fn entries(&self) -> [(&'static str, &CoefficientConfig); 4] {
        [
            ("gamma_g", &self.gamma_g),
            ("eta", &self.eta),
            ("sigma", &self.sigma),
            ("chi2", &self.chi2),
        ]
    }

    pub fn bounds(&self) -> MediumBounds {
        MediumBounds {
            gamma_g: self.gamma_g.bounds(),
            eta: self.eta.bounds(),
            sigma: self.sigma.bounds(),
            chi2: self.chi2.bounds(),
        }
    }

    /// Sample the phantoms; fails naming the first inadmissible coefficient.
    pub fn build(&self, grid: GridSpec) -> shg_core::Result<MediumSet> {
        let field = |name: &'static str, c: &CoefficientConfig| {
            let inc: Vec<Inclusion> = c.inclusions.iter().map(|&i| i.into()).collect();
            make_phantom(grid, name, c.background, &inc, c.bounds())
        };
        MediumSet::new(
            field("gamma_g", &self.gamma_g)?,
            field("eta", &self.eta)?,
            field("sigma", &self.sigma)?,
            field("chi2", &self.chi2)?,
            self.bounds(),
            Admissibility::Strict,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    #[default]
    PlaneWave,
    Bump,
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Harmonic {
    /// `h_j = 0`.
    #[default]
    Zero,
    /// `h_j = e^{iφ} g_j²` for plane waves, i.e. the same direction at `2k`.
    PhaseMatched,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IlluminationConfig {
    #[serde(default)]
    pub pattern: PatternKind,
    #[serde(default = "default_count")]
    pub count: usize,
    /// Plane-wave directions; defaults to `2π j / count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    /// Bump centers, one per illumination.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_bump_width")]
    pub width: f64,
    /// Complex amplitude `[re, im]`; the value itself for `constant`.
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    #[serde(default)]
    pub harmonic: Harmonic,
    /// Phase `φ` of the harmonic source.
    #[serde(default)]
    pub harmonic_phase: f64,
}

impl Default for IlluminationConfig {
    fn default() -> Self {
        Self {
            pattern: PatternKind::PlaneWave,
            count: default_count(),
            angles: None,
            centers: None,
            width: default_bump_width(),
            amplitude: default_amplitude(),
            harmonic: Harmonic::Zero,
            harmonic_phase: 0.0,
        }
    }
}

fn default_count() -> usize {
    4
}
fn default_bump_width() -> f64 {
    0.2
}
fn default_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

impl IlluminationConfig {
    fn amplitude(&self) -> Complex64 {
        Complex64::new(self.amplitude[0], self.amplitude[1])
    }

    pub fn patterns(&self) -> Vec<Pattern> {
        let a = self.amplitude();
        match self.pattern {
            PatternKind::PlaneWave => self
                .angles
                .clone()
                .unwrap_or_else(|| even_angles(self.count))
                .into_iter()
                .map(|angle| Pattern::PlaneWave { angle, amplitude: a })
                .collect(),
            PatternKind::Bump => self
                .centers
                .iter()
                .flatten()
                .map(|c| Pattern::Bump {
                    center: (c[0], c[1]),
                    width: self.width,
                    amplitude: a,
                })
                .collect(),
            PatternKind::Constant => (0..self.count).map(|_| Pattern::Constant(a)).collect(),
        }
    }

    /// `(g_j, h_j)` on `grid`.
    pub fn traces(&self, grid: GridSpec, k: f64) -> Vec<(BoundaryTrace, Option<BoundaryTrace>)> {
        let rot = Complex64::from_polar(1.0, self.harmonic_phase);
        self.patterns()
            .into_iter()
            .map(|p| {
                let g = p.trace(grid, k);
                let h = match self.harmonic {
                    Harmonic::Zero => None,
                    Harmonic::PhaseMatched => Some(BoundaryTrace::from_fn(grid, |x, y| match p {
                        Pattern::PlaneWave { angle, amplitude } => {
                            let d = k * (angle.cos() * x + angle.sin() * y);
                            rot * amplitude * amplitude * Complex64::new(0.0, 2.0 * d).exp()
                        }
                        _ => Complex64::new(0.0, 0.0),
                    })),
                };
                (g, h)
            })
            .collect()
    }
}

fn even_angles(n: usize) -> Vec<f64> {
    (0..n).map(|j| TAU * j as f64 / n as f64).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Coupled,
    #[default]
    OneWay,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Multiplicative Gaussian level on every intensity.
    #[serde(default)]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "one_usize")]
    pub fine_factor: usize,
    /// Also synthesize the polarization products `E_j`.
    #[serde(default)]
    pub polarized: bool,
    /// Also synthesize Neumann traces.
    #[serde(default)]
    pub neumann: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            fine_factor: 1,
            polarized: false,
            neumann: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_res_tol")]
    pub res_tol: f64,
    #[serde(default = "default_small_data_cap")]
    pub small_data_cap: f64,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    #[serde(default = "default_fp_res_tol")]
    pub fp_res_tol: f64,
    #[serde(default = "default_stall_limit")]
    pub stall_limit: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            res_tol: default_res_tol(),
            small_data_cap: default_small_data_cap(),
            fp_tol: default_fp_tol(),
            fp_max_iter: default_fp_max_iter(),
            fp_res_tol: default_fp_res_tol(),
            stall_limit: default_stall_limit(),
        }
    }
}

fn default_res_tol() -> f64 {
    1e-8
}
fn default_small_data_cap() -> f64 {
    0.1
}
fn default_fp_tol() -> f64 {
    1e-12
}
fn default_fp_max_iter() -> usize {
    200
}
fn default_fp_res_tol() -> f64 {
    1e-10
}
fn default_stall_limit() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_min_slope_field")]
    pub min_slope_field: f64,
    #[serde(default = "default_min_slope_remainder")]
    pub min_slope_data_remainder: f64,
    #[serde(default = "default_min_slope_data")]
    pub min_slope_data: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            eps: default_eps(),
            min_slope_field: default_min_slope_field(),
            min_slope_data_remainder: default_min_slope_remainder(),
            min_slope_data: default_min_slope_data(),
        }
    }
}

fn default_eps() -> Vec<f64> {
    vec![0.08, 0.04, 0.02, 0.01]
}
fn default_min_slope_field() -> f64 {
    2.7
}
fn default_min_slope_remainder() -> f64 {
    3.7
}
fn default_min_slope_data() -> f64 {
    1.9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Auto,
    Upwind,
    BoxLeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectConfig {
    #[serde(default)]
    pub scheme: SchemeName,
    /// Streamline diffusion `δ` for the upwind scheme.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub streamline: Option<f64>,
    #[serde(default = "one")]
    pub smoothing: f64,
    #[serde(default = "default_xi_threshold")]
    pub xi_threshold: f64,
    /// Absolute `E1` floor; defaults to `1e-8 max E1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_floor: Option<f64>,
    #[serde(default = "default_beta_rel")]
    pub beta_floor_rel: f64,
    #[serde(default = "yes")]
    pub require_conditions: bool,
}

impl Default for DirectConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeName::Auto,
            streamline: None,
            smoothing: 1.0,
            xi_threshold: default_xi_threshold(),
            alpha_floor: None,
            beta_floor_rel: default_beta_rel(),
            require_conditions: true,
        }
    }
}

fn default_xi_threshold() -> f64 {
    1e-6
}
fn default_beta_rel() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    #[serde(default = "one")]
    pub pde_weight: f64,
    /// Defaults to `1/h`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_weight: Option<f64>,
    #[serde(default = "one")]
    pub neumann_weight: f64,
    #[serde(default)]
    pub tikhonov: f64,
    #[serde(default = "default_ellipticity_floor")]
    pub ellipticity_floor: f64,
    /// Rotate `h1` when the minimum margin is below this value.
    #[serde(default = "default_target_margin")]
    pub target_margin: f64,
    #[serde(default = "default_phase_steps")]
    pub phase_steps: usize,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            pde_weight: 1.0,
            data_weight: None,
            neumann_weight: 1.0,
            tikhonov: 0.0,
            ellipticity_floor: default_ellipticity_floor(),
            target_margin: default_target_margin(),
            phase_steps: default_phase_steps(),
        }
    }
}

fn default_ellipticity_floor() -> f64 {
    1e-3
}
fn default_target_margin() -> f64 {
    0.5
}
fn default_phase_steps() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub eta: f64,
    pub sigma: f64,
    pub chi2: f64,
}

impl From<RegConfig> for RegParams {
    fn from(r: RegConfig) -> Self {
        RegParams {
            eta: r.eta,
            sigma: r.sigma,
            chi2: r.chi2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_memory")]
    pub memory: usize,
    #[serde(default = "default_gtol")]
    pub gtol: f64,
    #[serde(default = "default_ftol")]
    pub ftol: f64,
    #[serde(default = "default_c1")]
    pub c1: f64,
    #[serde(default = "default_c2")]
    pub c2: f64,
    #[serde(default = "default_max_line_search")]
    pub max_line_search: usize,
    #[serde(default = "one")]
    pub initial_step: f64,
    /// Per-coefficient `β`; defaults to `1e-7` on the active coefficients.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegConfig>,
    #[serde(default = "default_guard_probes")]
    pub guard_probes: usize,
    #[serde(default = "default_guard_step")]
    pub guard_step: f64,
    #[serde(default = "default_guard_tolerance")]
    pub guard_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            max_iter: default_max_iter(),
            memory: default_memory(),
            gtol: default_gtol(),
            ftol: default_ftol(),
            c1: default_c1(),
            c2: default_c2(),
            max_line_search: default_max_line_search(),
            initial_step: 1.0,
            reg: None,
            guard_probes: default_guard_probes(),
            guard_step: default_guard_step(),
            guard_tolerance: default_guard_tolerance(),
        }
    }
}

fn default_max_iter() -> usize {
    500
}
fn default_memory() -> usize {
    10
}
fn default_gtol() -> f64 {
    1e-8
}
fn default_ftol() -> f64 {
    1e-12
}
fn default_c1() -> f64 {
    1e-4
}
fn default_c2() -> f64 {
    0.9
}
fn default_max_line_search() -> usize {
    40
}
fn default_guard_probes() -> usize {
    3
}
fn default_guard_step() -> f64 {
    1e-5
}
fn default_guard_tolerance() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    /// Boundary layers excluded from error metrics.
    #[serde(default = "one_usize")]
    pub error_band: usize,
    /// Write PNG previews of every real field.
    #[serde(default)]
    pub png: bool,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            error_band: 1,
            png: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub task: TaskConfig,
    pub k: f64,
    pub grid: GridConfig,
    #[serde(default)]
    pub model: ModelKind,
    #[serde(default)]
    pub media: MediaConfig,
    #[serde(default)]
    pub illumination: IlluminationConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub certify: CertifyConfig,
    #[serde(default)]
    pub direct: DirectConfig,
    #[serde(default)]
    pub gamma: GammaConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub report: ReportConfig,
    /// Output directory; `--out` takes precedence.
    #[serde(default = "default_output")]
    pub output: String,
}

fn default_output() -> String {
    "out".into()
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Parse(String),
    #[error("{}", .0.join("\n"))]
    Invalid(Vec<String>),
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn experiment(&self) -> Option<Experiment> {
        self.task.experiment.map(Into::into)
    }

    /// Check everything, then fill every default. All problems are reported
    /// together.
    pub fn resolve(mut self) -> Result<Self, ConfigError> {
        let errors = self.problems();
        if !errors.is_empty() {
            return Err(ConfigError::Invalid(errors));
        }
        self.grid.ny.get_or_insert(self.grid.nx);
        if self.illumination.pattern == PatternKind::PlaneWave {
            let n = self.illumination.count;
            self.illumination.angles.get_or_insert_with(|| even_angles(n));
        }
        if let Some(e) = self.experiment() {
            let d = e.default_reg();
            self.optimizer.reg.get_or_insert(RegConfig {
                eta: d.eta,
                sigma: d.sigma,
                chi2: d.chi2,
            });
        }
        Ok(self)
    }

    fn problems(&self) -> Vec<String> {
        let mut e = Problems::default();
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;

        match (self.task.kind, self.task.experiment) {
            (TaskKind::ReconOpt, None) => e.need(false, "task.experiment is required for recon_opt".into()),
            (TaskKind::ReconOpt, Some(_)) | (_, None) => {}
            (k, Some(_)) => e.need(false, format!("task.experiment is only valid for recon_opt (task is {k:?})")),
        }
        e.need(finite_pos(self.k), format!("k must be positive and finite (got {})", self.k));

        let grid = self.grid.spec();
        if let Err(err) = &grid {
            e.need(false, format!("grid: {err}"));
        }

        for (name, c) in self.media.entries() {
            let [lo, hi] = c.bounds;
            e.need(
                lo.is_finite() && hi.is_finite() && lo <= hi,
                format!("media.{name}.bounds must be finite with lower <= upper (got [{lo}, {hi}])"),
            );
            e.need(c.background.is_finite(), format!("media.{name}.background must be finite"));
            for (i, inc) in c.inclusions.iter().enumerate() {
                let (size, amp) = match *inc {
                    InclusionConfig::Disk { radius, amplitude, .. } => (radius, amplitude),
                    InclusionConfig::Square { half_width, amplitude, .. } => (half_width, amplitude),
                    InclusionConfig::Gaussian { width, amplitude, .. } => (width, amplitude),
                };
                e.need(
                    size.is_finite() && size >= 0.0 && amp.is_finite(),
                    format!("media.{name}.inclusions[{i}] needs a finite non-negative size and finite amplitude"),
                );
            }
        }
        if let Ok(g) = grid {
            if e.0.is_empty() {
                if let Err(err) = self.media.build(g) {
                    e.need(false, format!("media: {err}"));
                }
            }
        }

        let il = &self.illumination;
        e.need(il.count >= 1, "illumination.count must be at least 1".into());
        if let Some(a) = &il.angles {
            e.need(il.pattern == PatternKind::PlaneWave, "illumination.angles only applies to plane_wave".into());
            e.need(
                a.len() == il.count,
                format!("illumination.angles has {} entries, count is {}", a.len(), il.count),
            );
        }
        match (&il.centers, il.pattern) {
            (Some(c), PatternKind::Bump) => e.need(
                c.len() == il.count,
                format!("illumination.centers has {} entries, count is {}", c.len(), il.count),
            ),
            (None, PatternKind::Bump) => e.need(false, "illumination.centers is required for bump".into()),
            (Some(_), _) => e.need(false, "illumination.centers only applies to bump".into()),
            (None, _) => {}
        }
        e.need(finite_pos(il.width), "illumination.width must be positive".into());
        e.need(
            il.harmonic == Harmonic::Zero || il.pattern == PatternKind::PlaneWave,
            "illumination.harmonic = phase_matched needs plane_wave".into(),
        );

        e.need(
            self.noise.level.is_finite() && self.noise.level >= 0.0,
            "noise.level must be non-negative".into(),
        );
        e.need(self.synth.fine_factor >= 1, "synth.fine_factor must be at least 1".into());
        for (name, v) in [
            ("solver.res_tol", self.solver.res_tol),
            ("solver.small_data_cap", self.solver.small_data_cap),
            ("solver.fp_tol", self.solver.fp_tol),
            ("solver.fp_res_tol", self.solver.fp_res_tol),
            ("direct.xi_threshold", self.direct.xi_threshold),
            ("gamma.pde_weight", self.gamma.pde_weight),
            ("gamma.neumann_weight", self.gamma.neumann_weight),
            ("optimizer.gtol", self.optimizer.gtol),
            ("optimizer.initial_step", self.optimizer.initial_step),
            ("optimizer.guard_step", self.optimizer.guard_step),
            ("optimizer.guard_tolerance", self.optimizer.guard_tolerance),
        ] {
            e.need(finite_pos(v), format!("{name} must be positive (got {v})"));
        }
        e.need(self.certify.eps.len() >= 2, "certify.eps needs at least two values".into());
        e.need(
            self.certify.eps.iter().all(|&x| finite_pos(x)),
            "certify.eps values must be positive".into(),
        );
        e.need(
            0.0 < self.optimizer.c1 && self.optimizer.c1 < self.optimizer.c2 && self.optimizer.c2 < 1.0,
            "optimizer needs 0 < c1 < c2 < 1".into(),
        );
        e.need(self.optimizer.memory >= 1, "optimizer.memory must be at least 1".into());
        if let Some(r) = self.optimizer.reg {
            e.need(
                [r.eta, r.sigma, r.chi2].iter().all(|b| b.is_finite() && *b >= 0.0),
                "optimizer.reg weights must be non-negative".into(),
            );
        }
        e.need(self.gamma.tikhonov >= 0.0, "gamma.tikhonov must be non-negative".into());
        if let Some(w) = self.gamma.data_weight {
            e.need(finite_pos(w), "gamma.data_weight must be positive".into());
        }
        if self.task.kind == TaskKind::ReconDirect {
            e.need(il.count >= 2, "recon_direct needs at least two illuminations".into());
        }
        if self.task.kind == TaskKind::ReconGamma {
            e.need(
                il.harmonic == Harmonic::PhaseMatched,
                "recon_gamma needs illumination.harmonic = \"phase_matched\"".into(),
            );
        }
        if let Some(exp) = self.experiment() {
            e.need(
                exp.misfit() == shg_core::opt::Misfit::Absolute || il.count >= 2,
                "experiments III and IV need at least two illuminations".into(),
            );
        }
        e.0
    }
}

#[derive(Default)]
struct Problems(Vec<String>);

impl Problems {
    fn need(&mut self, ok: bool, msg: String) {
        if !ok {
            self.0.push(msg);
        }
    }
}
