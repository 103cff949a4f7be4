//! Task orchestration: build media and sources from a resolved config, run
//! the requested pipeline, write artifacts, and summarize them in a report.
//!
//! `report.json` holds only quantities that are reproducible from the config
//! and seed. Wall-clock times go to `timings.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use shg_core::data::{add_noise, synthesize, DataSet, ForwardModel, IlluminationSet, SynthOptions};
use shg_core::direct::{
    pipeline, stability_ratio, ConditionFloors, DirectOptions, DirectReconResult, PolarizedPair, TransportOptions,
    TransportScheme,
};
use shg_core::gamma::{
    assemble_and_solve, best_phase, check_ellipticity, GammaOptions, GammaSystemInput, RowWeights,
};
use shg_core::helmholtz::{
    residuals, solve_coupled, solve_one_way, CoupledOptions, MediumSet, ResidualBcs, ScalarOptions, VBoundary,
};
use shg_core::linearize::{certify_expansion, CertifyOptions, EpsFamilySpec, LinearizedBundle};
use shg_core::ops::{interior_mask, normal_derivative, rel_l2_masked};
use shg_core::opt::{reconstruct, Coefficient, Experiment, GuardOptions, LbfgsOptions, Misfit, OptProblem};
use shg_core::{BoundaryTrace, Complex64, ComplexField, GridSpec, RealField, TraceKind};

use crate::config::{Config, ModelKind, SchemeName, TaskKind};
use crate::dataset;
use crate::fgrid::Fgrid;
use crate::png::{export_png, Colormap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Config,
    Solver,
    Contract,
}

impl FailureKind {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureKind::Config => 2,
            FailureKind::Solver => 3,
            FailureKind::Contract => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct RunError {
    pub stage: String,
    pub kind: FailureKind,
    pub message: String,
}

impl RunError {
    fn new(stage: &str, kind: FailureKind, message: impl Into<String>) -> Self {
        Self {
            stage: stage.into(),
            kind,
            message: message.into(),
        }
    }

    fn core(stage: &str, e: shg_core::Error) -> Self {
        use shg_core::Error as E;
        let kind = match e {
            E::Condition(_) | E::GradientCheck { .. } | E::Residual { .. } => FailureKind::Contract,
            E::Admissibility { .. } | E::InvalidGrid(_) => FailureKind::Config,
            _ => FailureKind::Solver,
        };
        Self::new(stage, kind, e.to_string())
    }

    fn io(stage: &str, e: impl std::fmt::Display) -> Self {
        Self::new(stage, FailureKind::Solver, format!("writing artifacts: {e}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorMetrics {
    pub rel_l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<RunError>,
    pub errors: BTreeMap<String, ErrorMetrics>,
    pub diagnostics: BTreeMap<String, Value>,
    pub artifacts: Vec<Artifact>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn error(&self, name: &str) -> Option<f64> {
        self.errors.get(name).map(|e| e.rel_l2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Timings {
    pub stages: Vec<(String, f64)>,
    pub total: f64,
    pub threads: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub png: bool,
    pub threads: usize,
}

/// Result of a run: the report is written even when a stage fails.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    pub timings: Timings,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        self.report.failure.as_ref().map_or(0, |f| f.kind.exit_code())
    }
}

/// Writes artifacts and remembers them for the report.
struct Sink {
    root: PathBuf,
    png: bool,
    files: Vec<PathBuf>,
}

impl Sink {
    fn path(&self, rel: &str) -> Result<PathBuf, RunError> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir).map_err(|e| RunError::io(rel, e))?;
        }
        Ok(p)
    }

    fn real(&mut self, rel: &str, f: &RealField) -> Result<(), RunError> {
        let p = self.path(&format!("{rel}.fgrd"))?;
        Fgrid::from_real(f).write(&p).map_err(|e| RunError::io(rel, e))?;
        self.files.push(p);
        if self.png {
            let p = self.path(&format!("png/{rel}.png"))?;
            let written = export_png(f, Colormap::Viridis, &p).map_err(|e| RunError::io(rel, e))?;
            self.files.extend(written);
        }
        Ok(())
    }

    fn complex(&mut self, rel: &str, f: &ComplexField) -> Result<(), RunError> {
        let p = self.path(&format!("{rel}.fgrd"))?;
        Fgrid::from_complex(f).write(&p).map_err(|e| RunError::io(rel, e))?;
        self.files.push(p);
        if self.png {
            let p = self.path(&format!("png/{rel}_abs.png"))?;
            let written = export_png(&f.abs(), Colormap::Viridis, &p).map_err(|e| RunError::io(rel, e))?;
            self.files.extend(written);
        }
        Ok(())
    }

    fn text(&mut self, rel: &str, s: &str) -> Result<(), RunError> {
        let p = self.path(rel)?;
        fs::write(&p, s).map_err(|e| RunError::io(rel, e))?;
        self.files.push(p);
        Ok(())
    }

    fn artifacts(&self) -> Vec<Artifact> {
        let mut out: Vec<Artifact> = self
            .files
            .iter()
            .filter_map(|p| {
                let bytes = fs::read(p).ok()?;
                let rel = p.strip_prefix(&self.root).unwrap_or(p);
                Some(Artifact {
                    path: rel.to_string_lossy().replace('\\', "/"),
                    sha256: hex::encode(Sha256::digest(&bytes)),
                })
            })
            .collect();
        out.sort_by(|a, b| a.path.cmp(&b.path));
        out.dedup_by(|a, b| a.path == b.path);
        out
    }
}

struct Ctx<'a> {
    cfg: &'a Config,
    grid: GridSpec,
    media: MediumSet,
    sink: Sink,
    errors: BTreeMap<String, ErrorMetrics>,
    diag: BTreeMap<String, Value>,
    timings: Vec<(String, f64)>,
}

impl Ctx<'_> {
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T, RunError>) -> Result<T, RunError> {
        let t = Instant::now();
        let r = f(self);
        self.timings.push((name.into(), t.elapsed().as_secs_f64()));
        r
    }

    fn note(&mut self, key: &str, v: Value) {
        self.diag.insert(key.into(), v);
    }

    fn band_mask(&self) -> Vec<bool> {
        interior_mask(&self.grid, self.cfg.report.error_band)
    }

    fn record_error(&mut self, name: &str, rec: &RealField, truth: &RealField, mask: Option<&[bool]>) -> Result<(), RunError> {
        let band = self.band_mask();
        let m: Vec<bool> = match mask {
            Some(m) => band.iter().zip(m).map(|(&a, &b)| a && b).collect(),
            None => band,
        };
        let rel = rel_l2_masked(rec, truth, Some(&m)).map_err(|e| RunError::core("report", e))?;
        let linf = rec
            .values()
            .iter()
            .zip(truth.values())
            .zip(&m)
            .filter(|(_, &keep)| keep)
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max);
        self.errors.insert(name.into(), ErrorMetrics { rel_l2: rel, linf });
        Ok(())
    }

    fn scalar_opts(&self) -> ScalarOptions {
        ScalarOptions {
            res_tol: self.cfg.solver.res_tol,
            allow_lossless: false,
        }
    }

    fn coupled_opts(&self) -> CoupledOptions {
        let s = &self.cfg.solver;
        CoupledOptions {
            small_data_cap: s.small_data_cap,
            fp_tol: s.fp_tol,
            max_iter: s.fp_max_iter,
            res_tol: s.fp_res_tol,
            stall_limit: s.stall_limit,
            scalar: self.scalar_opts(),
        }
    }

    fn sources(&self) -> Vec<(BoundaryTrace, Option<BoundaryTrace>)> {
        self.cfg.illumination.traces(self.grid, self.cfg.k)
    }

    fn synth(&mut self, polarized: bool, neumann: bool) -> Result<DataSet, RunError> {
        let ill = IlluminationSet::new(self.sources()).map_err(|e| RunError::core("synth", e))?;
        let opts = SynthOptions {
            model: match self.cfg.model {
                ModelKind::Coupled => ForwardModel::Coupled,
                ModelKind::OneWay => ForwardModel::OneWay,
            },
            noise_level: self.cfg.noise.level,
            seed: self.cfg.noise.seed,
            fine_factor: self.cfg.synth.fine_factor,
            polarized: polarized || self.cfg.synth.polarized,
            neumann: neumann || self.cfg.synth.neumann,
            coupled: self.coupled_opts(),
        };
        let d = synthesize(&self.media, self.cfg.k, &ill, &opts).map_err(|e| RunError::core("synth", e))?;
        let dir = self.sink.root.join("dataset");
        let files = dataset::write(&d, &self.grid, &dir).map_err(|e| RunError::io("synth", e))?;
        self.sink.files.extend(files);
        self.note("n_s", json!(d.h.len()));
        self.note("max_h", json!(d.h.iter().map(|h| h.max()).fold(f64::NEG_INFINITY, f64::max)));
        Ok(d)
    }
}

/// Execute a resolved config. Artifacts land in `opts.out`.
pub fn run(cfg: &Config, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let grid = cfg.grid.spec().map_err(|e| RunError::core("config", e))?;
    let media = cfg.media.build(grid).map_err(|e| RunError::core("config", e))?;
    fs::create_dir_all(&opts.out).map_err(|e| RunError::io("output", e))?;
    let mut ctx = Ctx {
        cfg,
        grid,
        media,
        sink: Sink {
            root: opts.out.clone(),
            png: opts.png || cfg.report.png,
            files: Vec::new(),
        },
        errors: BTreeMap::new(),
        diag: BTreeMap::new(),
        timings: Vec::new(),
    };
    ctx.sink.text("manifest.toml", &cfg.to_toml())?;
    let truth = ctx.media.clone();
    for (name, f) in [
        ("gamma_g", &truth.gamma_g),
        ("eta", &truth.eta),
        ("sigma", &truth.sigma),
        ("chi2", &truth.chi2),
    ] {
        ctx.sink.real(&format!("truth/{name}"), f)?;
    }

    let result = match cfg.task.kind {
        TaskKind::Forward => ctx.stage("forward", forward),
        TaskKind::Synth => ctx.stage("synth", |c| c.synth(false, false).map(|_| ())),
        TaskKind::CertifyLinearization => ctx.stage("certify", certify),
        TaskKind::ReconDirect => ctx.stage("recon_direct", recon_direct),
        TaskKind::ReconGamma => ctx.stage("recon_gamma", recon_gamma),
        TaskKind::ReconOpt => ctx.stage("recon_opt", recon_opt),
    };

    let failure = result.err();
    let report = RunReport {
        task: cfg.task.kind,
        experiment: cfg.task.experiment.map(|e| format!("{e:?}")),
        status: if failure.is_some() { "failed" } else { "ok" }.into(),
        failure,
        errors: ctx.errors,
        diagnostics: ctx.diag,
        artifacts: ctx.sink.artifacts(),
    };
    let timings = Timings {
        stages: ctx.timings,
        total: start.elapsed().as_secs_f64(),
        threads: opts.threads,
    };
    fs::write(opts.out.join("report.json"), report.to_json()).map_err(|e| RunError::io("report", e))?;
    fs::write(
        opts.out.join("timings.json"),
        serde_json::to_string_pretty(&timings).expect("timings serialize") + "\n",
    )
    .map_err(|e| RunError::io("report", e))?;
    Ok(RunOutcome { report, timings })
}

fn forward(c: &mut Ctx) -> Result<(), RunError> {
    let sources = c.sources();
    let trivial = sources
        .iter()
        .all(|(g, h)| g.sup_norm() == 0.0 && h.as_ref().is_none_or(|h| h.sup_norm() == 0.0));
    c.note("trivial", json!(trivial));
    let mut per = Vec::new();
    for (j, (g, h)) in sources.iter().enumerate() {
        let zero = BoundaryTrace::zeros(c.grid, TraceKind::Dirichlet);
        let (sol, bcs) = match c.cfg.model {
            ModelKind::Coupled => {
                let h = h.as_ref().unwrap_or(&zero);
                let s = solve_coupled(&c.media, c.cfg.k, g, h, &c.coupled_opts()).map_err(|e| RunError::core("forward", e))?;
                (s, ResidualBcs::Coupled { g, h })
            }
            ModelKind::OneWay => {
                let s = solve_one_way(&c.media, c.cfg.k, g, VBoundary::Robin, c.scalar_opts())
                    .map_err(|e| RunError::core("forward", e))?;
                (s, ResidualBcs::OneWay { g, v: VBoundary::Robin })
            }
        };
        let (ru, rv) = residuals(&sol, &c.media, c.cfg.k, bcs).map_err(|e| RunError::core("forward", e))?;
        c.sink.complex(&format!("fields/u_{j:03}"), &sol.u)?;
        c.sink.complex(&format!("fields/v_{j:03}"), &sol.v)?;
        per.push(json!({
            "iterations": sol.iterations,
            "contraction": sol.contraction,
            "residual_u": ru,
            "residual_v": rv,
            "sup_u": sol.u.sup_norm(),
            "sup_v": sol.v.sup_norm(),
        }));
    }
    c.note("illuminations", Value::Array(per));
    Ok(())
}

fn certify(c: &mut Ctx) -> Result<(), RunError> {
    let (g1, h1) = c.sources().swap_remove(0);
    let family = EpsFamilySpec {
        g1,
        g2: None,
        h1,
        h2: None,
        eps: c.cfg.certify.eps.clone(),
    };
    let base = CertifyOptions {
        coupled: c.coupled_opts(),
        ..Default::default()
    };
    let opts = CertifyOptions {
        min_slope_field: c.cfg.certify.min_slope_field,
        min_slope_data_remainder: c.cfg.certify.min_slope_data_remainder,
        min_slope_data: c.cfg.certify.min_slope_data,
        ..base
    };
    let r = certify_expansion(&c.media, c.cfg.k, &family, &opts).map_err(|e| RunError::core("certify", e))?;
    c.sink.text("convergence.csv", &r.to_csv())?;
    c.sink.text("convergence.txt", &r.summary())?;
    c.note("slope_mu", json!(r.slope_mu));
    c.note("slope_nu", json!(r.slope_nu));
    c.note("slope_rho", json!(r.slope_rho));
    c.note("slope_data", json!(r.slope_data));
    c.note("exact_linearity", json!(r.exact_linearity));
    c.note("pass", json!(r.pass));
    if !r.pass {
        return Err(RunError::new("certify", FailureKind::Contract, "fitted orders below the configured thresholds"));
    }
    Ok(())
}

fn direct_options(c: &Ctx) -> DirectOptions {
    let d = &c.cfg.direct;
    DirectOptions {
        floors: ConditionFloors {
            alpha: d.alpha_floor,
            beta_rel: d.beta_floor_rel,
        },
        transport: TransportOptions {
            scheme: match d.scheme {
                SchemeName::Auto => TransportScheme::Auto,
                SchemeName::Upwind => TransportScheme::Upwind,
                SchemeName::BoxLeastSquares => TransportScheme::BoxLeastSquares,
            },
            streamline: d.streamline,
            smoothing: d.smoothing,
            ..Default::default()
        },
        xi_threshold: d.xi_threshold,
        require_conditions: d.require_conditions,
    }
}

/// `E1` doubles as `H1`: both are the first-order intensity of `g1`.
fn polarized_pair(d: &DataSet) -> Result<PolarizedPair, RunError> {
    let e = d
        .e
        .as_ref()
        .filter(|e| e.len() >= 2)
        .ok_or_else(|| RunError::new("recon_direct", FailureKind::Config, "need two polarized data sets"))?;
    Ok(PolarizedPair {
        e1: e[0].re(),
        e2: e[1].clone(),
        h1: e[0].re(),
    })
}

fn recon_direct(c: &mut Ctx) -> Result<(), RunError> {
    let data = c.synth(true, false)?;
    let pair = polarized_pair(&data)?;
    let g1 = c.sources().swap_remove(0).0;
    let opts = direct_options(c);
    let r = pipeline(&pair, c.cfg.k, &g1, &opts).map_err(|e| RunError::core("recon_direct", e))?;
    write_direct(c, &r)?;
    let truth = c.media.clone();
    c.record_error("sigma", &r.sigma, &truth.sigma, Some(&r.mask))?;
    c.record_error("eta", &r.eta, &truth.eta, Some(&r.mask))?;
    c.record_error("gamma_g", &r.gamma_g, &truth.gamma_g, Some(&r.mask))?;
    if c.cfg.noise.level > 0.0 {
        // Stability surrogate against the noise-free reconstruction.
        let ill = IlluminationSet::new(c.sources()).map_err(|e| RunError::core("recon_direct", e))?;
        let clean = synthesize(
            &c.media,
            c.cfg.k,
            &ill,
            &SynthOptions {
                polarized: true,
                fine_factor: c.cfg.synth.fine_factor,
                coupled: c.coupled_opts(),
                ..Default::default()
            },
        )
        .map_err(|e| RunError::core("recon_direct", e))?;
        let pc = polarized_pair(&clean)?;
        let rc = pipeline(&pc, c.cfg.k, &g1, &opts).map_err(|e| RunError::core("recon_direct", e))?;
        let (num, ratio) = stability_ratio(&r, &rc, &pair, &pc).map_err(|e| RunError::core("recon_direct", e))?;
        c.note("stability_numerator", json!(num));
        c.note("stability_ratio", json!(ratio));
    }
    Ok(())
}

fn write_direct(c: &mut Ctx, r: &DirectReconResult) -> Result<(), RunError> {
    let masked = |f: &RealField| {
        let mut f = f.clone();
        for (v, &keep) in f.values_mut().iter_mut().zip(&r.mask) {
            if !keep {
                *v = f64::NAN;
            }
        }
        f
    };
    c.sink.complex("recon/xi", &r.xi)?;
    c.sink.complex("recon/q", &r.q)?;
    for (name, f) in [("eta", &r.eta), ("sigma", &r.sigma), ("gamma_g", &r.gamma_g)] {
        c.sink.real(&format!("recon/{name}"), &masked(f))?;
    }
    let d = &r.diagnostics;
    let text = format!(
        "alpha0 {:e}\nbeta0 {:e}\nbeta_sup {:e}\ne2e1_sup {:e}\nconditions_pass {}\nscheme {:?}\ntransport_residual {:e}\ntransport_flagged {}\nboundary_error {:e}\nmasked {}\nnegative_sigma {}\n",
        d.conditions.alpha0,
        d.conditions.beta0,
        d.conditions.beta_sup,
        d.conditions.e2e1_sup,
        d.conditions.pass(),
        d.scheme,
        d.transport_residual,
        d.transport_flagged,
        d.boundary_error,
        d.masked,
        d.negative_sigma,
    );
    c.sink.text("diagnostics.txt", &text)?;
    c.note("alpha0", json!(d.conditions.alpha0));
    c.note("beta0", json!(d.conditions.beta0));
    c.note("beta_sup", json!(d.conditions.beta_sup));
    c.note("e2e1_sup", json!(d.conditions.e2e1_sup));
    c.note("transport_residual", json!(d.transport_residual));
    c.note("transport_flagged", json!(d.transport_flagged));
    c.note("scheme", json!(format!("{:?}", d.scheme)));
    c.note("masked_nodes", json!(d.masked));
    c.note("negative_sigma", json!(d.negative_sigma));
    Ok(())
}

fn recon_gamma(c: &mut Ctx) -> Result<(), RunError> {
    let err = |e| RunError::core("recon_gamma", e);
    let (g1, h1) = c.sources().swap_remove(0);
    let h1 = h1.unwrap_or_else(|| BoundaryTrace::zeros(c.grid, TraceKind::Dirichlet));
    let bundle = |h1: &BoundaryTrace| {
        LinearizedBundle::compute(&c.media, c.cfg.k, &g1, Some(h1), None, None, c.scalar_opts())
    };
    let mut b = bundle(&h1).map_err(err)?;
    let mut phase = 0.0;
    let first = check_ellipticity(&b.u1, &b.v1, c.cfg.gamma.ellipticity_floor).map_err(err)?;
    if first.min_margin < c.cfg.gamma.target_margin {
        let (theta, _) = best_phase(&b.u1, &b.v1, c.cfg.gamma.phase_steps).map_err(err)?;
        if theta != 0.0 {
            phase = theta;
            b = bundle(&h1.scale(Complex64::from_polar(1.0, theta))).map_err(err)?;
        }
    }
    c.note("h1_phase_rotation", json!(phase));
    let h3 = add_noise(&b.h3, c.cfg.noise.level, c.cfg.noise.seed, 0).map_err(err)?;
    let input = GammaSystemInput {
        u1: b.u1.clone(),
        v1: b.v1.clone(),
        h3,
        j_u2: normal_derivative(&b.u2).map_err(err)?,
        j_v2: normal_derivative(&b.v2).map_err(err)?,
        gamma_g: c.media.gamma_g.clone(),
        eta: c.media.eta.clone(),
        sigma: c.media.sigma.clone(),
        k: c.cfg.k,
    };
    let g = &c.cfg.gamma;
    let opts = GammaOptions {
        weights: RowWeights {
            pde: g.pde_weight,
            data: g.data_weight,
            neumann: g.neumann_weight,
            tikhonov: g.tikhonov,
        },
        ellipticity_floor: g.ellipticity_floor,
        require_ellipticity: true,
    };
    let r = assemble_and_solve(&input, &opts).map_err(err)?;
    c.sink.real("recon/chi2", &r.gamma)?;
    c.sink.complex("recon/u2", &r.u2)?;
    c.sink.complex("recon/v2", &r.v2)?;
    c.sink.real("ellipticity_margin", &r.ellipticity.margin)?;
    let mut csv = String::from("block,l2,linf\n");
    for br in &r.residuals {
        csv.push_str(&format!("{:?},{:e},{:e}\n", br.block, br.l2, br.linf));
    }
    c.sink.text("residuals.csv", &csv)?;
    c.note("min_margin", json!(r.ellipticity.min_margin));
    c.note("masked_nodes", json!(r.ellipticity.masked));
    let truth = c.media.chi2.clone();
    c.record_error("chi2", &r.gamma, &truth, None)?;
    Ok(())
}

fn name(c: Coefficient) -> &'static str {
    match c {
        Coefficient::Eta => "eta",
        Coefficient::Sigma => "sigma",
        Coefficient::Chi2 => "chi2",
    }
}

fn recon_opt(c: &mut Ctx) -> Result<(), RunError> {
    let err = |e| RunError::core("recon_opt", e);
    let exp: Experiment = c.cfg.experiment().expect("resolved recon_opt has an experiment");
    let data = c.synth(false, false)?;
    let gs: Vec<BoundaryTrace> = c.sources().into_iter().map(|(g, _)| g).collect();

    // Unknowns start from the box midpoints; nothing of the truth leaks in.
    let mut known = c.media.clone();
    let mid = |b: shg_core::phantom::Bounds| RealField::constant(c.grid, b.midpoint());
    for &coef in exp.active() {
        match coef {
            Coefficient::Eta => known.eta = mid(known.bounds.eta),
            Coefficient::Sigma => known.sigma = mid(known.bounds.sigma),
            Coefficient::Chi2 => known.chi2 = mid(known.bounds.chi2),
        }
    }
    if exp.misfit() == Misfit::Ratio {
        known.gamma_g = mid(known.bounds.gamma_g);
    }
    let reg = c.cfg.optimizer.reg.expect("resolved config has reg").into();
    let problem = OptProblem::experiment(exp, known, c.cfg.k, gs, data.h, reg, c.scalar_opts()).map_err(err)?;
    let o = &c.cfg.optimizer;
    let opts = LbfgsOptions {
        memory: o.memory,
        c1: o.c1,
        c2: o.c2,
        max_line_search: o.max_line_search,
        gtol: o.gtol,
        ftol: o.ftol,
        max_iter: o.max_iter,
        initial_step: o.initial_step,
        guard: Some(GuardOptions {
            probes: o.guard_probes,
            step: o.guard_step,
            tolerance: o.guard_tolerance,
            seed: c.cfg.noise.seed,
        }),
    };
    let r = reconstruct(&problem, None, &opts).map_err(err)?;
    c.sink.text("trace.csv", &r.trace.to_csv())?;
    let truth = c.media.clone();
    let mut active: Vec<(&str, &RealField, &RealField)> = exp
        .active()
        .iter()
        .map(|&coef| {
            let (rec, tru) = match coef {
                Coefficient::Eta => (&r.media.eta, &truth.eta),
                Coefficient::Sigma => (&r.media.sigma, &truth.sigma),
                Coefficient::Chi2 => (&r.media.chi2, &truth.chi2),
            };
            (name(coef), rec, tru)
        })
        .collect();
    if exp.recovers_gamma_g() {
        active.push(("gamma_g", &r.media.gamma_g, &truth.gamma_g));
    }
    for (n, rec, tru) in &active {
        c.sink.real(&format!("recon/{n}"), rec)?;
        c.record_error(n, rec, tru, None)?;
    }
    if exp == Experiment::IV {
        // Where the Γ error sits relative to the σ error.
        let band = c.band_mask();
        let eg: Vec<f64> = diff(&r.media.gamma_g, &truth.gamma_g, &band);
        let es: Vec<f64> = diff(&r.media.sigma, &truth.sigma, &band);
        c.note("gamma_sigma_error_correlation", json!(correlation(&eg, &es)));
    }
    let t = &r.trace;
    c.note("iterations", json!(t.iterations()));
    c.note("evaluations", json!(t.evaluations));
    c.note("stop", json!(format!("{:?}", t.stop)));
    c.note("initial_objective", json!(t.records.first().map(|r| r.objective)));
    c.note("final_objective", json!(t.final_objective()));
    c.note("monotone", json!(t.monotone()));
    c.note("guard_max_rel_error", json!(t.guard.as_ref().map(|g| g.max_rel_error)));
    if t.failed() {
        return Err(RunError::new("recon_opt", FailureKind::Solver, "line search failed"));
    }
    Ok(())
}

fn diff(a: &RealField, b: &RealField, mask: &[bool]) -> Vec<f64> {
    a.values()
        .iter()
        .zip(b.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (x - y).abs())
        .collect()
}

/// Pearson correlation; `None` for constant inputs.
pub fn correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}

/// Read a run directory's report back as JSON.
pub fn read_report(dir: &Path) -> std::io::Result<Value> {
    let s = fs::read_to_string(dir.join("report.json"))?;
    serde_json::from_str(&s).map_err(std::io::Error::other)
}
