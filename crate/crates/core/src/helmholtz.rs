//! Scalar Helmholtz solves and the two second-harmonic forward models.
//!
//! The coupled model is
//!
//! ```text
//! Δu + q1 u = -k²γ u* v,     u = g on ∂Ω
//! Δv + q2 v = -4k²γ u²,      v = h on ∂Ω
//! ```
//!
//! with `q1 = k²(1+η) + ikσ` and `q2 = 4k²(1+η) + 2ikσ`. The one-way model
//! drops the back-coupling in the `u` equation and closes `v` with the Robin
//! condition `v + 2ik ∂ν v = 0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField};
use crate::grid::GridSpec;
use crate::ops::normal_taps;
use crate::phantom::Bounds;
use crate::sparse::{Assembly, Factorization};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// How strictly [`MediumSet::validate`] enforces the coefficient bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Admissibility {
    /// Every coefficient inside its bounds, lower bounds positive.
    #[default]
    Strict,
    /// As `Strict`, except `chi2` may drop to zero.
    RelaxChi2Lower,
    /// No bound checks. Test oracles only (e.g. `sigma ≡ 0` or `chi2 ≡ 0`).
    Override,
}

/// Per-coefficient admissibility intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumBounds {
    pub gamma_g: Bounds,
    pub eta: Bounds,
    pub sigma: Bounds,
    pub chi2: Bounds,
}

impl MediumBounds {
    pub const fn uniform(lower: f64, upper: f64) -> Self {
        let b = Bounds::new(lower, upper);
        Self {
            gamma_g: b,
            eta: b,
            sigma: b,
            chi2: b,
        }
    }
}

/// The coefficient quadruple `(Γ, η, σ, γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumSet {
    pub gamma_g: RealField,
    pub eta: RealField,
    pub sigma: RealField,
    pub chi2: RealField,
    pub bounds: MediumBounds,
    pub policy: Admissibility,
}

impl MediumSet {
    pub fn new(
        gamma_g: RealField,
        eta: RealField,
        sigma: RealField,
        chi2: RealField,
        bounds: MediumBounds,
        policy: Admissibility,
    ) -> Result<Self> {
        let m = Self {
            gamma_g,
            eta,
            sigma,
            chi2,
            bounds,
            policy,
        };
        m.validate()?;
        Ok(m)
    }

    /// Constant coefficients, mostly for tests.
    pub fn constant(
        grid: GridSpec,
        gamma_g: f64,
        eta: f64,
        sigma: f64,
        chi2: f64,
        bounds: MediumBounds,
        policy: Admissibility,
    ) -> Result<Self> {
        Self::new(
            RealField::constant(grid, gamma_g),
            RealField::constant(grid, eta),
            RealField::constant(grid, sigma),
            RealField::constant(grid, chi2),
            bounds,
            policy,
        )
    }

    pub fn grid(&self) -> &GridSpec {
        self.eta.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.eta.grid();
        same_grid(g, self.gamma_g.grid())?;
        same_grid(g, self.sigma.grid())?;
        same_grid(g, self.chi2.grid())?;
        if self.policy == Admissibility::Override {
            return Ok(());
        }
        let b = &self.bounds;
        for (name, bounds) in [
            ("gamma_g", b.gamma_g),
            ("eta", b.eta),
            ("sigma", b.sigma),
            ("chi2", b.chi2),
        ] {
            let relaxed = name == "chi2" && self.policy == Admissibility::RelaxChi2Lower;
            if !(bounds.lower > 0.0 || relaxed && bounds.lower >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "lower bound for {name} must be positive (got {})",
                    bounds.lower
                )));
            }
        }
        b.gamma_g.check("gamma_g", &self.gamma_g)?;
        b.eta.check("eta", &self.eta)?;
        b.sigma.check("sigma", &self.sigma)?;
        if self.policy == Admissibility::RelaxChi2Lower {
            Bounds::new(0.0, b.chi2.upper).check("chi2", &self.chi2)
        } else {
            b.chi2.check("chi2", &self.chi2)
        }
    }
}

/// Wavenumber of the incident field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    pub k: f64,
}

impl WaveParams {
    pub fn new(k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "wavenumber must be positive (got {k})"
            )));
        }
        Ok(Self { k })
    }
}

/// Boundary condition of a scalar problem.
#[derive(Debug, Clone, PartialEq)]
pub enum BcSpec {
    Dirichlet(BoundaryTrace),
    /// `w + i m k ∂ν w = 0`.
    RobinZero { multiplier: f64 },
}

impl BcSpec {
    pub fn kind(&self) -> BcKind {
        match self {
            BcSpec::Dirichlet(_) => BcKind::Dirichlet,
            BcSpec::RobinZero { multiplier } => BcKind::Robin {
                multiplier: *multiplier,
            },
        }
    }

    fn data(&self) -> Option<&BoundaryTrace> {
        match self {
            BcSpec::Dirichlet(g) => Some(g),
            BcSpec::RobinZero { .. } => None,
        }
    }
}

/// Shape of the boundary rows, independent of their data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BcKind {
    Dirichlet,
    Robin { multiplier: f64 },
}

/// `q1 = k²(1+η) + ikσ`, `q2 = 4k²(1+η) + 2ikσ` from raw fields.
pub fn potentials_from(eta: &RealField, sigma: &RealField, k: f64) -> Result<(ComplexField, ComplexField)> {
    same_grid(eta.grid(), sigma.grid())?;
    let k2 = k * k;
    let g = *eta.grid();
    let (a, b): (Vec<_>, Vec<_>) = eta
        .values()
        .iter()
        .zip(sigma.values())
        .map(|(&e, &s)| {
            (
                Complex64::new(k2 * (1.0 + e), k * s),
                Complex64::new(4.0 * k2 * (1.0 + e), 2.0 * k * s),
            )
        })
        .unzip();
    Ok((ComplexField::new(g, a)?, ComplexField::new(g, b)?))
}

/// Potentials of an admissible medium.
pub fn potentials(media: &MediumSet, k: f64) -> Result<(ComplexField, ComplexField)> {
    media.validate()?;
    WaveParams::new(k)?;
    potentials_from(&media.eta, &media.sigma, k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarOptions {
    /// Relative interior residual tolerance.
    pub res_tol: f64,
    /// Permit `Im q <= 0` (plane-wave oracles only).
    pub allow_lossless: bool,
}

impl Default for ScalarOptions {
    fn default() -> Self {
        Self {
            res_tol: 1e-8,
            allow_lossless: false,
        }
    }
}

/// Factorized discrete operator `Δ_h + q` with its boundary rows.
///
/// Interior rows hold the 5-point Laplacian plus `q`; Dirichlet rows are
/// identity rows; Robin rows discretize `w + i m k ∂ν w` with the same
/// one-sided stencil as [`crate::ops::normal_derivative`].
pub struct ScalarOperator {
    grid: GridSpec,
    q: ComplexField,
    bc: BcKind,
    k: f64,
    matrix: Assembly<Complex64>,
    lu: Factorization<Complex64>,
    opts: ScalarOptions,
}

impl core::fmt::Debug for ScalarOperator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ScalarOperator")
            .field("grid", &self.grid)
            .field("bc", &self.bc)
            .field("k", &self.k)
            .finish()
    }
}

/// Matrix of `Δ_h + q` with the given boundary rows.
pub fn assemble_operator(q: &ComplexField, bc: BcKind, k: f64) -> Assembly<Complex64> {
    let g = *q.grid();
    let n = g.len();
    let mut a = Assembly::with_capacity(n, n, 5 * n + 6 * g.boundary_len());
    for p in 0..n {
        let (i, j) = g.ij(p);
        if !g.is_boundary(i, j) {
            let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
            a.push(p, p - 1, Complex64::new(1.0 / hx2, 0.0));
            a.push(p, p + 1, Complex64::new(1.0 / hx2, 0.0));
            a.push(p, p - g.nx, Complex64::new(1.0 / hy2, 0.0));
            a.push(p, p + g.nx, Complex64::new(1.0 / hy2, 0.0));
            a.push(p, p, q.values()[p] - Complex64::new(2.0 / hx2 + 2.0 / hy2, 0.0));
            continue;
        }
        match bc {
            BcKind::Dirichlet => a.push(p, p, Complex64::new(1.0, 0.0)),
            BcKind::Robin { multiplier } => {
                a.push(p, p, Complex64::new(1.0, 0.0));
                let c = I * (multiplier * k);
                for (t, w) in normal_taps(&g, i, j) {
                    a.push(p, t, c * w);
                }
            }
        }
    }
    a
}

impl ScalarOperator {
    pub fn new(q: &ComplexField, bc: BcKind, k: f64, opts: ScalarOptions) -> Result<Self> {
        if !opts.allow_lossless {
            if let Some(index) = q.values().iter().position(|z| !(z.im > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "potential must have positive imaginary part (node {index})"
                )));
            }
        }
        if let BcKind::Robin { multiplier } = bc {
            if !(multiplier.is_finite() && k.is_finite()) {
                return Err(Error::InvalidArgument("non-finite Robin coefficient".into()));
            }
        }
        let matrix = assemble_operator(q, bc, k);
        let lu = matrix.lu()?;
        Ok(Self {
            grid: *q.grid(),
            q: q.clone(),
            bc,
            k,
            matrix,
            lu,
            opts,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn potential(&self) -> &ComplexField {
        &self.q
    }

    pub fn bc(&self) -> BcKind {
        self.bc
    }

    pub fn matrix(&self) -> &Assembly<Complex64> {
        &self.matrix
    }

    fn rhs(&self, f: &ComplexField, boundary: Option<&BoundaryTrace>) -> Result<Vec<Complex64>> {
        same_grid(&self.grid, f.grid())?;
        let mut b = f.values().to_vec();
        let zero = Complex64::new(0.0, 0.0);
        let nodes = self.grid.boundary_nodes();
        match boundary {
            Some(t) => {
                same_grid(&self.grid, t.grid())?;
                for (&p, &v) in nodes.iter().zip(t.values()) {
                    b[p] = v;
                }
            }
            None => {
                for &p in &nodes {
                    b[p] = zero;
                }
            }
        }
        Ok(b)
    }

    /// Solve with interior source `f` and boundary-row data (Dirichlet values
    /// or the Robin right-hand side; `None` means zero).
    pub fn solve(&self, f: &ComplexField, boundary: Option<&BoundaryTrace>) -> Result<ComplexField> {
        let b = self.rhs(f, boundary)?;
        let x = self.lu.solve(&b)?;
        let u = ComplexField::from_vec(self.grid, x);
        let (ri, rb) = self.residual(&u, f, boundary)?;
        let scale = f.sup_norm() + boundary.map_or(0.0, |t| t.sup_norm());
        let tol = self.opts.res_tol * scale.max(f64::MIN_POSITIVE);
        let r = ri.max(rb);
        if r > tol && r > 0.0 {
            return Err(Error::Residual {
                residual: r,
                tolerance: tol,
            });
        }
        Ok(u)
    }

    /// Solve `Aᵀ x = b` for a full-length right-hand side (adjoint solves).
    pub fn solve_transpose(&self, b: &[Complex64]) -> Result<Vec<Complex64>> {
        self.lu.solve_transpose(b)
    }

    /// Sup-norm residuals on interior rows and boundary rows.
    pub fn residual(
        &self,
        u: &ComplexField,
        f: &ComplexField,
        boundary: Option<&BoundaryTrace>,
    ) -> Result<(f64, f64)> {
        same_grid(&self.grid, u.grid())?;
        let b = self.rhs(f, boundary)?;
        let au = self.matrix.mul_vec(u.values());
        let mut ri: f64 = 0.0;
        let mut rb: f64 = 0.0;
        for (p, (x, y)) in au.iter().zip(&b).enumerate() {
            let r = (x - y).norm();
            if self.grid.is_boundary_index(p) {
                rb = rb.max(r);
            } else {
                ri = ri.max(r);
            }
        }
        Ok((ri, rb))
    }
}

/// One scalar solve of `Δu + q u = f` with the given boundary condition.
pub fn solve_scalar(
    q: &ComplexField,
    f: &ComplexField,
    bc: &BcSpec,
    k_for_robin: f64,
    opts: ScalarOptions,
) -> Result<ComplexField> {
    same_grid(q.grid(), f.grid())?;
    ScalarOperator::new(q, bc.kind(), k_for_robin, opts)?.solve(f, bc.data())
}

/// A solved field pair with fixed-point telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct ShgSolution {
    pub u: ComplexField,
    pub v: ComplexField,
    pub iterations: usize,
    pub final_update_norm: f64,
    /// Sup-norm update per iteration (relative to the iterate's size).
    pub update_history: Vec<f64>,
    /// Geometric mean of consecutive update ratios above the rounding floor.
    pub contraction: Option<f64>,
}

impl ShgSolution {
    fn direct(u: ComplexField, v: ComplexField) -> Self {
        Self {
            u,
            v,
            iterations: 1,
            final_update_norm: 0.0,
            update_history: Vec::new(),
            contraction: None,
        }
    }

    /// `(‖u‖∞ + ‖v‖∞) / (‖g‖∞ + ‖h‖∞)`, the monitored stability ratio.
    pub fn amplification(&self, g: &BoundaryTrace, h: Option<&BoundaryTrace>) -> Option<f64> {
        let d = g.sup_norm() + h.map_or(0.0, |t| t.sup_norm());
        (d > 0.0).then(|| (self.u.sup_norm() + self.v.sup_norm()) / d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledOptions {
    pub small_data_cap: f64,
    /// Relative sup-norm update at which the iteration stops.
    pub fp_tol: f64,
    pub max_iter: usize,
    /// Absolute interior residual required on return.
    pub res_tol: f64,
    /// Iterations without decrease before the run is declared divergent.
    pub stall_limit: usize,
    pub scalar: ScalarOptions,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self {
            small_data_cap: 0.1,
            fp_tol: 1e-12,
            max_iter: 200,
            res_tol: 1e-10,
            stall_limit: 10,
            scalar: ScalarOptions::default(),
        }
    }
}

/// Pointwise sources of the coupled system for the iterate `(u, v)`.
fn coupled_sources(k: f64, chi2: &RealField, u: &[Complex64], v: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let k2 = k * k;
    chi2.values()
        .iter()
        .zip(u.iter().zip(v))
        .map(|(&c, (&a, &b))| (-(a.conj() * b) * (k2 * c), -(a * a) * (4.0 * k2 * c)))
        .unzip()
}

/// Picard iteration of the coupled system from `(0, 0)`.
pub fn solve_coupled(
    media: &MediumSet,
    k: f64,
    g: &BoundaryTrace,
    h: &BoundaryTrace,
    opts: &CoupledOptions,
) -> Result<ShgSolution> {
    let (q1, q2) = potentials(media, k)?;
    let grid = *media.grid();
    same_grid(&grid, g.grid())?;
    same_grid(&grid, h.grid())?;
    let norm = g.sup_norm().max(h.sup_norm());
    if norm > opts.small_data_cap * (1.0 + 1e-12) {
        return Err(Error::DataTooLarge {
            norm,
            cap: opts.small_data_cap,
        });
    }
    let a1 = ScalarOperator::new(&q1, BcKind::Dirichlet, k, opts.scalar)?;
    let a2 = ScalarOperator::new(&q2, BcKind::Dirichlet, k, opts.scalar)?;
    let zero = vec![Complex64::new(0.0, 0.0); grid.len()];
    let mut u = ComplexField::from_vec(grid, zero.clone());
    let mut v = ComplexField::from_vec(grid, zero);
    let mut history = Vec::new();
    let mut stalled = 0;
    let mut best = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let (su, sv) = coupled_sources(k, &media.chi2, u.values(), v.values());
        let un = a1.solve(&ComplexField::from_vec(grid, su), Some(g))?;
        let vn = a2.solve(&ComplexField::from_vec(grid, sv), Some(h))?;
        let diff = sup_diff(&un, &u).max(sup_diff(&vn, &v));
        let size = un.sup_norm().max(vn.sup_norm());
        let update = if size > 0.0 { diff / size } else { 0.0 };
        history.push(update);
        u = un;
        v = vn;
        if update < best {
            best = update;
            stalled = 0;
        } else {
            stalled += 1;
        }
        let at_floor = stalled >= opts.stall_limit;
        if update <= opts.fp_tol || at_floor {
            let (ru, rv) = coupled_residuals(media, k, &q1, &q2, &u, &v, g, h)?;
            let r = ru.max(rv);
            if at_floor && r > opts.res_tol {
                // A stall away from a solution is divergence.
                return Err(Error::Diverged {
                    reason: "update norm stopped decreasing",
                    history,
                });
            }
            if r > opts.res_tol {
                return Err(Error::Residual {
                    residual: r,
                    tolerance: opts.res_tol,
                });
            }
            // Large grids stall at the rounding level of the solves, above
            // `fp_tol`; the residual check above decides acceptance.
            let floor = if at_floor { best } else { opts.fp_tol };
            return Ok(ShgSolution {
                u,
                v,
                iterations: it,
                final_update_norm: update,
                contraction: contraction(&history, floor),
                update_history: history,
            });
        }
    }
    Err(Error::Diverged {
        reason: "iteration limit reached",
        history,
    })
}

fn sup_diff(a: &ComplexField, b: &ComplexField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Geometric mean of `d[n+1] / d[n]`, skipping the first step (which is the
/// linear solution itself) and anything near the stopping floor.
fn contraction(history: &[f64], floor: f64) -> Option<f64> {
    let mut s = 0.0;
    let mut n = 0;
    for w in history.windows(2).skip(1) {
        if w[1] > 1e2 * floor.max(1e-15) && w[0] > 0.0 {
            s += libm::log(w[1] / w[0]);
            n += 1;
        }
    }
    (n > 0).then(|| libm::exp(s / n as f64))
}

#[allow(clippy::too_many_arguments)]
fn coupled_residuals(
    media: &MediumSet,
    k: f64,
    q1: &ComplexField,
    q2: &ComplexField,
    u: &ComplexField,
    v: &ComplexField,
    g: &BoundaryTrace,
    h: &BoundaryTrace,
) -> Result<(f64, f64)> {
    let grid = *u.grid();
    let (su, sv) = coupled_sources(k, &media.chi2, u.values(), v.values());
    let ru = pointwise_residual(q1, u, &su)?;
    let rv = pointwise_residual(q2, v, &sv)?;
    let bu = boundary_mismatch(&grid, u, g);
    let bv = boundary_mismatch(&grid, v, h);
    Ok((ru.max(bu), rv.max(bv)))
}

/// Interior sup-norm of `Δ_h w + q w − s`.
fn pointwise_residual(q: &ComplexField, w: &ComplexField, s: &[Complex64]) -> Result<f64> {
    let g = *w.grid();
    same_grid(&g, q.grid())?;
    let a = assemble_operator(q, BcKind::Dirichlet, 0.0);
    let aw = a.mul_vec(w.values());
    Ok(g.interior_nodes()
        .iter()
        .map(|&p| (aw[p] - s[p]).norm())
        .fold(0.0, f64::max))
}

fn boundary_mismatch(grid: &GridSpec, w: &ComplexField, t: &BoundaryTrace) -> f64 {
    grid.boundary_nodes()
        .iter()
        .zip(t.values())
        .map(|(&p, &x)| (w.values()[p] - x).norm())
        .fold(0.0, f64::max)
}

/// Boundary closure of the `v` equation in the one-way model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VBoundary {
    /// `v + 2ik ∂ν v = 0`.
    #[default]
    Robin,
    /// `v = 0`, used to compare against the linearized hierarchy.
    DirichletZero,
}

/// Factorized operators of the one-way model for a fixed `(η, σ)`.
#[derive(Debug)]
pub struct OneWayOperators {
    pub a1: ScalarOperator,
    pub a2: ScalarOperator,
    pub k: f64,
}

impl OneWayOperators {
    pub fn new(eta: &RealField, sigma: &RealField, k: f64, vb: VBoundary, opts: ScalarOptions) -> Result<Self> {
        WaveParams::new(k)?;
        let (q1, q2) = potentials_from(eta, sigma, k)?;
        let a1 = ScalarOperator::new(&q1, BcKind::Dirichlet, k, opts)?;
        let b2 = match vb {
            VBoundary::Robin => BcKind::Robin { multiplier: 2.0 },
            VBoundary::DirichletZero => BcKind::Dirichlet,
        };
        let a2 = ScalarOperator::new(&q2, b2, k, opts)?;
        Ok(Self { a1, a2, k })
    }

    /// `u` from `g`, then `v` from the source `-4k²γu²`.
    pub fn solve(&self, chi2: &RealField, g: &BoundaryTrace) -> Result<(ComplexField, ComplexField)> {
        let grid = *self.a1.grid();
        same_grid(&grid, chi2.grid())?;
        let zero = ComplexField::zeros(grid);
        let u = self.a1.solve(&zero, Some(g))?;
        let v = self.a2.solve(&self.v_source(chi2, &u), None)?;
        Ok((u, v))
    }

    pub fn v_source(&self, chi2: &RealField, u: &ComplexField) -> ComplexField {
        let c = -4.0 * self.k * self.k;
        ComplexField::from_vec(
            *u.grid(),
            u.values()
                .iter()
                .zip(chi2.values())
                .map(|(&a, &x)| a * a * (c * x))
                .collect(),
        )
    }
}

/// One-way model: two sequential linear solves.
pub fn solve_one_way(
    media: &MediumSet,
    k: f64,
    g: &BoundaryTrace,
    vb: VBoundary,
    opts: ScalarOptions,
) -> Result<ShgSolution> {
    media.validate()?;
    same_grid(media.grid(), g.grid())?;
    let ops = OneWayOperators::new(&media.eta, &media.sigma, k, vb, opts)?;
    let (u, v) = ops.solve(&media.chi2, g)?;
    Ok(ShgSolution::direct(u, v))
}

/// Boundary data the residual check compares against.
#[derive(Debug, Clone, Copy)]
pub enum ResidualBcs<'a> {
    /// Coupled model with Dirichlet data `(g, h)`.
    Coupled { g: &'a BoundaryTrace, h: &'a BoundaryTrace },
    /// One-way model with Dirichlet `g` and the given `v` closure.
    OneWay { g: &'a BoundaryTrace, v: VBoundary },
}

/// Interior sup-norm residuals of the two discrete equations (boundary
/// mismatch folded in).
pub fn residuals(sol: &ShgSolution, media: &MediumSet, k: f64, bcs: ResidualBcs<'_>) -> Result<(f64, f64)> {
    same_grid(media.grid(), sol.u.grid())?;
    same_grid(media.grid(), sol.v.grid())?;
    let (q1, q2) = potentials_from(&media.eta, &media.sigma, k)?;
    match bcs {
        ResidualBcs::Coupled { g, h } => coupled_residuals(media, k, &q1, &q2, &sol.u, &sol.v, g, h),
        ResidualBcs::OneWay { g, v: vb } => {
            let grid = *sol.u.grid();
            let zero = vec![Complex64::new(0.0, 0.0); grid.len()];
            let ru = pointwise_residual(&q1, &sol.u, &zero)?.max(boundary_mismatch(&grid, &sol.u, g));
            let c = -4.0 * k * k;
            let sv: Vec<Complex64> = sol
                .u
                .values()
                .iter()
                .zip(media.chi2.values())
                .map(|(&a, &x)| a * a * (c * x))
                .collect();
            let mut rv = pointwise_residual(&q2, &sol.v, &sv)?;
            let bc = match vb {
                VBoundary::Robin => BcKind::Robin { multiplier: 2.0 },
                VBoundary::DirichletZero => BcKind::Dirichlet,
            };
            let a = assemble_operator(&q2, bc, k);
            let av = a.mul_vec(sol.v.values());
            for p in grid.boundary_nodes() {
                rv = rv.max(av[p].norm());
            }
            Ok((ru, rv))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{l2, rel_l2};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn bounds() -> MediumBounds {
        MediumBounds::uniform(0.01, 10.0)
    }

    fn media(n: usize, chi2: f64) -> MediumSet {
        let g = GridSpec::unit_square(n).unwrap();
        let policy = if chi2 == 0.0 {
            Admissibility::Override
        } else {
            Admissibility::Strict
        };
        MediumSet::new(
            RealField::constant(g, 1.0),
            RealField::from_fn(g, |x, y| 0.2 + 0.1 * x * y),
            RealField::from_fn(g, |x, _| 0.5 + 0.2 * x),
            RealField::constant(g, chi2),
            bounds(),
            policy,
        )
        .unwrap()
    }

    #[test]
    fn potentials_by_substitution() {
        let g = GridSpec::unit_square(5).unwrap();
        let m = MediumSet::constant(g, 1.0, 0.0, 1.0, 1.0, bounds(), Admissibility::Override).unwrap();
        let (q1, q2) = potentials(&m, 1.0).unwrap();
        assert!(q1.values().iter().all(|&z| z == c(1.0, 1.0)));
        assert!(q2.values().iter().all(|&z| z == c(4.0, 2.0)));
    }

    #[test]
    fn zero_absorption_is_rejected() {
        let g = GridSpec::unit_square(5).unwrap();
        let r = MediumSet::constant(g, 1.0, 0.5, 0.0, 1.0, bounds(), Admissibility::Strict);
        assert!(matches!(r, Err(Error::Admissibility { coefficient: "sigma", .. })));
    }

    #[test]
    fn relaxed_chi2_allows_zero() {
        let g = GridSpec::unit_square(5).unwrap();
        let ok = MediumSet::constant(g, 1.0, 0.5, 0.5, 0.0, bounds(), Admissibility::RelaxChi2Lower);
        assert!(ok.is_ok());
        let bad = MediumSet::constant(g, 1.0, 0.5, 0.5, -0.1, bounds(), Admissibility::RelaxChi2Lower);
        assert!(bad.is_err());
    }

    #[test]
    fn imaginary_part_of_potential_is_k_sigma() {
        let m = media(9, 1.0);
        let k = 2.5;
        let (q1, q2) = potentials(&m, k).unwrap();
        for p in 0..m.grid().len() {
            assert_eq!(q1.values()[p].im, k * m.sigma.values()[p]);
            assert_eq!(q2.values()[p].im, 2.0 * k * m.sigma.values()[p]);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let g = GridSpec::unit_square(11).unwrap();
        let q = ComplexField::constant(g, c(1.0, 1.0));
        let bc = BcSpec::Dirichlet(BoundaryTrace::zeros(g, crate::TraceKind::Dirichlet));
        let u = solve_scalar(&q, &ComplexField::zeros(g), &bc, 1.0, ScalarOptions::default()).unwrap();
        assert!(u.values().iter().all(|z| z.norm() == 0.0));
    }

    fn manufactured(n: usize, robin: bool) -> f64 {
        let g = GridSpec::unit_square(n).unwrap();
        let (a, b) = (2.0, -1.5);
        let k = 1.3;
        let exact = |x: f64, y: f64| (I * (a * x + b * y)).exp();
        let q = ComplexField::constant(g, c(1.0, 1.0));
        let us = ComplexField::from_fn(g, exact);
        let f = us.map(|z| z * (c(1.0, 1.0) - (a * a + b * b)));
        let (bc, data) = if robin {
            // w + i m k ∂ν w with the analytic normal derivative.
            let m = 2.0;
            let t = BoundaryTrace::from_fn(g, |x, y| {
                let (i, j) = (
                    libm::round(x / g.hx()) as usize,
                    libm::round(y / g.hy()) as usize,
                );
                let (nx, ny) = g.outward_normal(i, j);
                let z = exact(x, y);
                z + I * (m * k) * (I * (a * nx + b * ny)) * z
            });
            (BcKind::Robin { multiplier: m }, t)
        } else {
            (BcKind::Dirichlet, us.trace())
        };
        let op = ScalarOperator::new(&q, bc, k, ScalarOptions::default()).unwrap();
        let u = op.solve(&f, Some(&data)).unwrap();
        rel_l2(&u, &us).unwrap()
    }

    #[test]
    fn manufactured_dirichlet_second_order() {
        let (e1, e2) = (manufactured(21, false), manufactured(41, false));
        assert!((e1 / e2 - 4.0).abs() < 0.5, "{e1} {e2}");
    }

    #[test]
    fn manufactured_robin_second_order() {
        let (e1, e2) = (manufactured(21, true), manufactured(41, true));
        assert!((e1 / e2 - 4.0).abs() < 0.6, "{e1} {e2}");
    }

    #[test]
    fn plane_wave_with_lossless_override() {
        let k = 3.0;
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let q = ComplexField::constant(g, c(k * k, 0.0));
            let exact = ComplexField::from_fn(g, |x, _| (I * (k * x)).exp());
            let opts = ScalarOptions {
                allow_lossless: true,
                ..Default::default()
            };
            let bc = BcSpec::Dirichlet(exact.trace());
            let u = solve_scalar(&q, &ComplexField::zeros(g), &bc, k, opts).unwrap();
            rel_l2(&u, &exact).unwrap()
        };
        let (a, b) = (err(21), err(41));
        assert!(a < 1e-2 && a / b > 3.5, "{a} {b}");
        let g = GridSpec::unit_square(5).unwrap();
        let q = ComplexField::constant(g, c(k * k, 0.0));
        assert!(ScalarOperator::new(&q, BcKind::Dirichlet, k, ScalarOptions::default()).is_err());
    }

    fn plane(g: GridSpec, k: f64, amp: f64) -> BoundaryTrace {
        BoundaryTrace::from_fn(g, |x, _| (I * (k * x)).exp() * amp)
    }

    #[test]
    fn coupled_zero_data_is_zero_in_one_iteration() {
        let m = media(15, 1.0);
        let z = BoundaryTrace::zeros(*m.grid(), crate::TraceKind::Dirichlet);
        let s = solve_coupled(&m, 2.0, &z, &z, &CoupledOptions::default()).unwrap();
        assert_eq!(s.iterations, 1);
        assert_eq!(s.u.sup_norm() + s.v.sup_norm(), 0.0);
    }

    #[test]
    fn coupled_decouples_without_chi2() {
        let m = media(15, 0.0);
        let g = *m.grid();
        let gt = plane(g, 2.0, 0.05);
        let ht = BoundaryTrace::from_fn(g, |_, y| c(0.02 * y, 0.01));
        let s = solve_coupled(&m, 2.0, &gt, &ht, &CoupledOptions::default()).unwrap();
        let (q1, q2) = potentials_from(&m.eta, &m.sigma, 2.0).unwrap();
        let o = ScalarOptions::default();
        let zero = ComplexField::zeros(g);
        let u = solve_scalar(&q1, &zero, &BcSpec::Dirichlet(gt), 2.0, o).unwrap();
        let v = solve_scalar(&q2, &zero, &BcSpec::Dirichlet(ht), 2.0, o).unwrap();
        assert_eq!(s.u, u);
        assert_eq!(s.v, v);
    }

    #[test]
    fn coupled_contracts_and_reports_ratio() {
        let m = media(21, 1.0);
        let g = *m.grid();
        let mut ratios = Vec::new();
        let mut iters = Vec::new();
        for eps in [0.1, 0.05, 0.025] {
            let gt = plane(g, 2.0, eps);
            let ht = BoundaryTrace::from_fn(g, |x, y| c(0.5 * (x - y), 0.5) * eps);
            let s = solve_coupled(&m, 2.0, &gt, &ht, &CoupledOptions::default()).unwrap();
            let (ru, rv) = residuals(&s, &m, 2.0, ResidualBcs::Coupled { g: &gt, h: &ht }).unwrap();
            assert!(ru <= 1e-10 && rv <= 1e-10, "{ru} {rv}");
            ratios.push(s.contraction.unwrap());
            iters.push(s.iterations);
        }
        assert!(iters.windows(2).all(|w| w[1] <= w[0]), "{iters:?}");
        for w in ratios.windows(2) {
            assert!((w[0] / w[1] - 2.0).abs() < 0.5, "{ratios:?}");
        }
    }

    #[test]
    fn coupled_rejects_large_data() {
        let m = media(9, 1.0);
        let gt = plane(*m.grid(), 2.0, 1.0);
        let r = solve_coupled(&m, 2.0, &gt, &gt, &CoupledOptions::default());
        assert!(matches!(r, Err(Error::DataTooLarge { .. })));
    }

    #[test]
    fn one_way_zero_and_chi2_linearity() {
        let m = media(17, 1.0);
        let g = *m.grid();
        let z = BoundaryTrace::zeros(g, crate::TraceKind::Dirichlet);
        let s = solve_one_way(&m, 2.0, &z, VBoundary::Robin, ScalarOptions::default()).unwrap();
        assert_eq!(s.u.sup_norm() + s.v.sup_norm(), 0.0);

        let gt = plane(g, 2.0, 1.0);
        let a = solve_one_way(&m, 2.0, &gt, VBoundary::Robin, ScalarOptions::default()).unwrap();
        let mut m2 = m.clone();
        m2.chi2 = m.chi2.map(|x| 2.0 * x);
        let b = solve_one_way(&m2, 2.0, &gt, VBoundary::Robin, ScalarOptions::default()).unwrap();
        assert_eq!(a.u, b.u);
        let d = b.v.zip_map(&a.v, |x, y| x - y * 2.0).unwrap();
        assert!(l2(&d) <= 1e-12 * l2(&a.v));
        let (ru, rv) = residuals(&a, &m, 2.0, ResidualBcs::OneWay { g: &gt, v: VBoundary::Robin }).unwrap();
        assert!(ru < 1e-9 && rv < 1e-9, "{ru} {rv}");
    }

    #[test]
    fn conjugate_potentials_give_conjugate_fields() {
        let m = media(15, 1.0);
        let g = *m.grid();
        let k = 2.0;
        let gt = plane(g, k, 1.0);
        let (q1, _) = potentials(&m, k).unwrap();
        let opts = ScalarOptions {
            allow_lossless: true,
            ..Default::default()
        };
        let zero = ComplexField::zeros(g);
        let u = ScalarOperator::new(&q1, BcKind::Dirichlet, k, opts)
            .unwrap()
            .solve(&zero, Some(&gt))
            .unwrap();
        let uc = ScalarOperator::new(&q1.conj(), BcKind::Dirichlet, k, opts)
            .unwrap()
            .solve(&zero, Some(&gt.conj()))
            .unwrap();
        let d = uc.zip_map(&u, |a, b| a - b.conj()).unwrap();
        assert!(d.sup_norm() < 1e-12);
    }
}
