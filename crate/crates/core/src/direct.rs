//! Direct reconstruction of `(Γ, η, σ)` from polarized internal data.
//!
//! `β = ∇(E2/E1)` drives the conservation law `∇·(ξβ) = 0` for `ξ = u1²`.
//! The potential follows from `ξ` without square roots,
//! `q = −(2ξΔξ − ∇ξ·∇ξ) / (4ξ²)`, then `σ = Im q / k`, `η = Re q / k² − 1`
//! and `Γ = H1 / (σ|ξ|)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField, VectorField};
use crate::grid::GridSpec;
use crate::ops::{gradient, l2_masked, laplacian};
use crate::sparse::Assembly;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// `E1 = Γσ|u1|²`, `E2 = Γσ u2 u1*` and the plain data `H1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizedPair {
    pub e1: RealField,
    pub e2: ComplexField,
    pub h1: RealField,
}

/// Floor on `E1`: absolute if given, else `rel · max E1`.
fn alpha_floor(e1: &RealField, floor: Option<f64>) -> f64 {
    floor.unwrap_or(1e-8 * e1.max())
}

/// `∇(E2/E1)`; fails if `E1` drops below the floor anywhere.
pub fn build_beta(e1: &RealField, e2: &ComplexField, floor: Option<f64>) -> Result<VectorField> {
    same_grid(e1.grid(), e2.grid())?;
    let a = alpha_floor(e1, floor);
    let min = e1.min();
    if !(min >= a && min > 0.0) {
        return Err(Error::Condition(format!(
            "E1 has minimum {min:e}, below the floor {a:e}"
        )));
    }
    let ratio = e2.zip_map(&e1.to_complex(), |a, b| a / b.re)?;
    gradient(&ratio)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionFloors {
    /// Absolute floor on `E1` (default `1e−8 · max E1`).
    pub alpha: Option<f64>,
    /// Floor on `|β|` relative to `sup |β|`.
    pub beta_rel: f64,
}

impl Default for ConditionFloors {
    fn default() -> Self {
        Self {
            alpha: None,
            beta_rel: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionReport {
    pub alpha0: f64,
    pub beta0: f64,
    pub beta_sup: f64,
    pub e2e1_sup: f64,
    pub positivity_ok: bool,
    pub gradient_ok: bool,
}

impl ConditionReport {
    pub fn pass(&self) -> bool {
        self.positivity_ok && self.gradient_ok
    }
}

/// Positivity of `E1` and non-degeneracy of `β`, as numbers and flags.
pub fn check_conditions(
    e1: &RealField,
    e2: Option<&ComplexField>,
    beta: &VectorField,
    floors: &ConditionFloors,
) -> Result<ConditionReport> {
    same_grid(e1.grid(), beta.grid())?;
    let mag = beta.magnitude();
    let (beta0, beta_sup) = (mag.min(), mag.max());
    let alpha0 = e1.min();
    let e2e1_sup = match e2 {
        Some(e2) => {
            same_grid(e1.grid(), e2.grid())?;
            e2.values()
                .iter()
                .zip(e1.values())
                .map(|(a, &b)| a.norm() / b)
                .fold(0.0, f64::max)
        }
        None => f64::NAN,
    };
    Ok(ConditionReport {
        alpha0,
        beta0,
        beta_sup,
        e2e1_sup,
        positivity_ok: alpha0 > 0.0 && alpha0 >= alpha_floor(e1, floors.alpha),
        gradient_ok: beta_sup > 0.0 && beta0 >= floors.beta_rel * beta_sup,
    })
}

/// Discretization of the conservation law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportScheme {
    /// Upwind for real `β`, box least squares otherwise.
    #[default]
    Auto,
    /// Conservative first-order upwind with inflow data. Needs real `β`.
    Upwind,
    /// Cell-centred box differences plus fourth-difference smoothing rows,
    /// solved in least squares with `ξ = g1²` on the whole boundary.
    BoxLeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    pub scheme: TransportScheme,
    /// Streamline diffusion `δ` for the upwind scheme (`δ h |β|`).
    pub streamline: Option<f64>,
    /// Weight `c` of the smoothing rows, scaled by `mean|β| / h`.
    pub smoothing: f64,
    /// `|Im β| / |β|` below which `β` counts as real.
    pub real_tol: f64,
    /// `|β·ν| / |β|` below which a boundary node counts as tangential.
    pub tangential_tol: f64,
    /// Relative residual above which the result is flagged.
    pub flag_tol: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            scheme: TransportScheme::Auto,
            streamline: None,
            smoothing: 1.0,
            real_tol: 1e-12,
            tangential_tol: 1e-12,
            flag_tol: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub xi: ComplexField,
    pub scheme: TransportScheme,
    /// Sup-norm of the discrete conservation rows, relative to
    /// `sup|β| sup|ξ| / h`.
    pub residual: f64,
    /// Largest `|ξ − g1²|` over the nodes carrying boundary data.
    pub boundary_error: f64,
    pub inflow_nodes: usize,
    pub flagged: bool,
}

/// Solve `∇·(ξβ) = 0` with `ξ = g1²` on the inflow boundary.
pub fn solve_transport(beta: &VectorField, g1: &BoundaryTrace, opts: &TransportOptions) -> Result<TransportResult> {
    let grid = *beta.grid();
    same_grid(&grid, g1.grid())?;
    let data: Vec<Complex64> = g1.values().iter().map(|z| z * z).collect();
    let real = beta.imaginary_fraction() <= opts.real_tol;
    let scheme = match opts.scheme {
        TransportScheme::Auto if real => TransportScheme::Upwind,
        TransportScheme::Auto => TransportScheme::BoxLeastSquares,
        TransportScheme::Upwind if !real => {
            return Err(Error::InvalidArgument(
                "upwinding needs a real drift; use the box scheme".into(),
            ))
        }
        s => s,
    };
    match scheme {
        TransportScheme::Upwind => upwind(beta, &data, opts),
        _ => box_least_squares(beta, &data, opts),
    }
}

/// Per-node classification of the boundary under a real drift.
fn inflow_set(grid: &GridSpec, bx: &[f64], by: &[f64], tol: f64) -> Vec<bool> {
    let mut inflow = vec![false; grid.len()];
    for p in grid.boundary_nodes() {
        let (i, j) = grid.ij(p);
        let (nx, ny) = grid.outward_normal(i, j);
        let bn = bx[p] * nx + by[p] * ny;
        let mag = libm::sqrt(bx[p] * bx[p] + by[p] * by[p]);
        inflow[p] = bn < -tol * mag && mag > 0.0;
    }
    inflow
}

/// Net outward flux row of the (half-)cell around node `p` for the upwind
/// scheme; `boundary` supplies `ξ` on inflowing boundary faces.
struct UpwindCells<'a> {
    grid: GridSpec,
    bx: &'a [f64],
    by: &'a [f64],
}

/// One flux contribution: node index (or boundary data) and coefficient.
enum Tap {
    Node(usize, f64),
    Data(usize, f64),
}

impl UpwindCells<'_> {
    fn taps(&self, p: usize) -> Vec<Tap> {
        let g = &self.grid;
        let (i, j) = g.ij(p);
        let (hx, hy) = (g.hx(), g.hy());
        let wy = if j == 0 || j == g.ny - 1 { 0.5 * hy } else { hy };
        let wx = if i == 0 || i == g.nx - 1 { 0.5 * hx } else { hx };
        let mut t = Vec::with_capacity(6);
        // Interior faces: flux along +axis from p to q, upwinded.
        let mut face = |q: usize, b: f64, len: f64, sign: f64| {
            let f = sign * b * len;
            if f >= 0.0 {
                t.push(Tap::Node(p, f));
            } else {
                t.push(Tap::Node(q, f));
            }
        };
        if i + 1 < g.nx {
            let q = g.index(i + 1, j);
            face(q, 0.5 * (self.bx[p] + self.bx[q]), wy, 1.0);
        }
        if i > 0 {
            let q = g.index(i - 1, j);
            face(q, 0.5 * (self.bx[p] + self.bx[q]), wy, -1.0);
        }
        if j + 1 < g.ny {
            let q = g.index(i, j + 1);
            face(q, 0.5 * (self.by[p] + self.by[q]), wx, 1.0);
        }
        if j > 0 {
            let q = g.index(i, j - 1);
            face(q, 0.5 * (self.by[p] + self.by[q]), wx, -1.0);
        }
        // Boundary faces of half cells.
        let mut bface = |bn: f64, len: f64| {
            let f = bn * len;
            if f >= 0.0 {
                t.push(Tap::Node(p, f));
            } else {
                t.push(Tap::Data(p, f));
            }
        };
        if i == 0 {
            bface(-self.bx[p], wy);
        }
        if i == g.nx - 1 {
            bface(self.bx[p], wy);
        }
        if j == 0 {
            bface(-self.by[p], wx);
        }
        if j == g.ny - 1 {
            bface(self.by[p], wx);
        }
        t
    }
}

fn upwind(beta: &VectorField, data: &[Complex64], opts: &TransportOptions) -> Result<TransportResult> {
    let grid = *beta.grid();
    let bx: Vec<f64> = beta.vx.iter().map(|z| z.re).collect();
    let by: Vec<f64> = beta.vy.iter().map(|z| z.re).collect();
    let inflow = inflow_set(&grid, &bx, &by, opts.tangential_tol);
    let n_in = inflow.iter().filter(|&&b| b).count();
    if n_in == 0 {
        return Err(Error::DegenerateInflow);
    }
    let bnodes = grid.boundary_nodes();
    let mut bdata = vec![ZERO; grid.len()];
    for (&p, &d) in bnodes.iter().zip(data) {
        bdata[p] = d;
    }
    let cells = UpwindCells {
        grid,
        bx: &bx,
        by: &by,
    };
    let n = grid.len();
    let mut a = Assembly::<Complex64>::with_capacity(n, n, 7 * n);
    let mut rhs = vec![ZERO; n];
    for p in 0..n {
        if inflow[p] {
            a.push(p, p, Complex64::new(1.0, 0.0));
            rhs[p] = bdata[p];
            continue;
        }
        for t in cells.taps(p) {
            match t {
                Tap::Node(q, w) => a.push(p, q, Complex64::new(w, 0.0)),
                Tap::Data(q, w) => rhs[p] -= bdata[q] * w,
            }
        }
        if let Some(delta) = opts.streamline {
            streamline_taps(&grid, &bx, &by, p, delta, &mut a);
        }
    }
    let xi = a.lu()?.solve(&rhs)?;
    let r = a.mul_vec(&xi);
    let scale = bx
        .iter()
        .zip(&by)
        .map(|(x, y)| libm::sqrt(x * x + y * y))
        .fold(0.0, f64::max)
        * xi.iter().map(|z| z.norm()).fold(0.0, f64::max)
        * grid.hx().max(grid.hy());
    let mut res: f64 = 0.0;
    let mut berr: f64 = 0.0;
    for p in 0..n {
        let e = (r[p] - rhs[p]).norm();
        if inflow[p] {
            berr = berr.max((xi[p] - bdata[p]).norm());
        } else {
            res = res.max(e);
        }
    }
    let residual = if scale > 0.0 { res / scale } else { res };
    Ok(TransportResult {
        xi: ComplexField::new(grid, xi)?,
        scheme: TransportScheme::Upwind,
        residual,
        boundary_error: berr,
        inflow_nodes: n_in,
        flagged: residual > opts.flag_tol,
    })
}

/// `−∇·(δh|β| diag(β̂x², β̂y²) ∇ξ)` integrated over the cell of `p`
/// (axis-aligned part of streamline diffusion).
fn streamline_taps(g: &GridSpec, bx: &[f64], by: &[f64], p: usize, delta: f64, a: &mut Assembly<Complex64>) {
    let (i, j) = g.ij(p);
    let (hx, hy) = (g.hx(), g.hy());
    let h = hx.max(hy);
    let coef = |q: usize, axis: usize| {
        let (x, y) = (0.5 * (bx[p] + bx[q]), 0.5 * (by[p] + by[q]));
        let m = libm::sqrt(x * x + y * y);
        if m == 0.0 {
            return 0.0;
        }
        let c = if axis == 0 { x / m } else { y / m };
        delta * h * m * c * c
    };
    let wy = if j == 0 || j == g.ny - 1 { 0.5 * hy } else { hy };
    let wx = if i == 0 || i == g.nx - 1 { 0.5 * hx } else { hx };
    let mut push = |q: usize, axis: usize, len: f64, d: f64| {
        let w = coef(q, axis) * len / d;
        a.push(p, p, Complex64::new(w, 0.0));
        a.push(p, q, Complex64::new(-w, 0.0));
    };
    if i + 1 < g.nx {
        push(g.index(i + 1, j), 0, wy, hx);
    }
    if i > 0 {
        push(g.index(i - 1, j), 0, wy, hx);
    }
    if j + 1 < g.ny {
        push(g.index(i, j + 1), 1, wx, hy);
    }
    if j > 0 {
        push(g.index(i, j - 1), 1, wx, hy);
    }
}

/// Net outward upwind flux summed over the cells of the node box
/// `[i0, i1] × [j0, j1]`, and the flux through the box boundary computed
/// face by face. The two agree to rounding (discrete conservation).
pub fn upwind_flux_balance(
    beta: &VectorField,
    xi: &ComplexField,
    g1: &BoundaryTrace,
    (i0, i1, j0, j1): (usize, usize, usize, usize),
) -> Result<(Complex64, Complex64)> {
    let grid = *beta.grid();
    same_grid(&grid, xi.grid())?;
    let bx: Vec<f64> = beta.vx.iter().map(|z| z.re).collect();
    let by: Vec<f64> = beta.vy.iter().map(|z| z.re).collect();
    let mut bdata = vec![ZERO; grid.len()];
    for (&p, &d) in grid.boundary_nodes().iter().zip(g1.values()) {
        bdata[p] = d * d;
    }
    let cells = UpwindCells {
        grid,
        bx: &bx,
        by: &by,
    };
    let val = |t: &Tap| match *t {
        Tap::Node(q, w) => xi.values()[q] * w,
        Tap::Data(q, w) => bdata[q] * w,
    };
    let inside = |i: usize, j: usize| i >= i0 && i <= i1 && j >= j0 && j <= j1;
    let mut total = ZERO;
    let mut through = ZERO;
    for j in j0..=j1 {
        for i in i0..=i1 {
            let p = grid.index(i, j);
            let taps = cells.taps(p);
            total += taps.iter().map(val).sum::<Complex64>();
            // Faces towards nodes outside the box survive the telescoping sum.
            for (qi, qj) in neighbours(&grid, i, j).into_iter().flatten() {
                if !inside(qi, qj) {
                    through += face_flux(&cells, p, grid.index(qi, qj), xi);
                }
            }
            through += boundary_face_flux(&cells, p, xi, &bdata);
        }
    }
    Ok((total, through))
}

fn neighbours(g: &GridSpec, i: usize, j: usize) -> [Option<(usize, usize)>; 4] {
    [
        (i + 1 < g.nx).then_some((i + 1, j)),
        (i > 0).then(|| (i - 1, j)),
        (j + 1 < g.ny).then_some((i, j + 1)),
        (j > 0).then(|| (i, j - 1)),
    ]
}

fn face_flux(c: &UpwindCells<'_>, p: usize, q: usize, xi: &ComplexField) -> Complex64 {
    let g = &c.grid;
    let (i, j) = g.ij(p);
    let (qi, qj) = g.ij(q);
    let (hx, hy) = (g.hx(), g.hy());
    let wy = if j == 0 || j == g.ny - 1 { 0.5 * hy } else { hy };
    let wx = if i == 0 || i == g.nx - 1 { 0.5 * hx } else { hx };
    let f = if qj == j {
        let sign = if qi > i { 1.0 } else { -1.0 };
        sign * 0.5 * (c.bx[p] + c.bx[q]) * wy
    } else {
        let sign = if qj > j { 1.0 } else { -1.0 };
        sign * 0.5 * (c.by[p] + c.by[q]) * wx
    };
    if f >= 0.0 {
        xi.values()[p] * f
    } else {
        xi.values()[q] * f
    }
}

fn boundary_face_flux(c: &UpwindCells<'_>, p: usize, xi: &ComplexField, bdata: &[Complex64]) -> Complex64 {
    c.taps(p)
        .into_iter()
        .filter_map(|t| match t {
            Tap::Data(q, w) => Some(bdata[q] * w),
            _ => None,
        })
        .sum::<Complex64>()
        + boundary_outflow(c, p, xi)
}

/// Outflowing boundary-face terms of node `p` (those appearing as `Node(p, _)`
/// from a boundary face rather than an interior face).
fn boundary_outflow(c: &UpwindCells<'_>, p: usize, xi: &ComplexField) -> Complex64 {
    let g = &c.grid;
    let (i, j) = g.ij(p);
    let (hx, hy) = (g.hx(), g.hy());
    let wy = if j == 0 || j == g.ny - 1 { 0.5 * hy } else { hy };
    let wx = if i == 0 || i == g.nx - 1 { 0.5 * hx } else { hx };
    let mut s = ZERO;
    let mut add = |bn: f64, len: f64| {
        let f = bn * len;
        if f >= 0.0 {
            s += xi.values()[p] * f;
        }
    };
    if i == 0 {
        add(-c.bx[p], wy);
    }
    if i == g.nx - 1 {
        add(c.bx[p], wy);
    }
    if j == 0 {
        add(-c.by[p], wx);
    }
    if j == g.ny - 1 {
        add(c.by[p], wx);
    }
    s
}

fn box_least_squares(beta: &VectorField, data: &[Complex64], opts: &TransportOptions) -> Result<TransportResult> {
    let grid = *beta.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (grid.hx(), grid.hy());
    let bnodes = grid.boundary_nodes();
    let mut bdata = vec![ZERO; grid.len()];
    for (&p, &d) in bnodes.iter().zip(data) {
        bdata[p] = d;
    }
    let interior = grid.interior_nodes();
    let mut col = vec![usize::MAX; grid.len()];
    for (c, &p) in interior.iter().enumerate() {
        col[p] = c;
    }
    let ncols = interior.len();
    if ncols == 0 {
        return Err(Error::InvalidGrid("no interior nodes".into()));
    }
    let mag: f64 = beta.magnitude().values().iter().sum::<f64>() / grid.len() as f64;
    let n_box = (nx - 1) * (ny - 1);
    let n_sx = if nx >= 5 { ny * (nx - 4) } else { 0 };
    let n_sy = if ny >= 5 { nx * (ny - 4) } else { 0 };
    let nrows = n_box + n_sx + n_sy;
    let mut a = Assembly::<Complex64>::with_capacity(nrows, ncols, 4 * n_box + 5 * (n_sx + n_sy));
    let mut rhs = vec![ZERO; nrows];
    let put = |a: &mut Assembly<Complex64>, rhs: &mut [Complex64], r: usize, p: usize, w: Complex64| {
        if col[p] == usize::MAX {
            rhs[r] -= w * bdata[p];
        } else {
            a.push(r, col[p], w);
        }
    };
    let mut r = 0;
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            for (di, dj, cx, cy) in [(0, 0, -1.0, -1.0), (1, 0, 1.0, -1.0), (0, 1, -1.0, 1.0), (1, 1, 1.0, 1.0)] {
                let p = grid.index(i + di, j + dj);
                let w = beta.vx[p] * (cx / (2.0 * hx)) + beta.vy[p] * (cy / (2.0 * hy));
                put(&mut a, &mut rhs, r, p, w);
            }
            r += 1;
        }
    }
    let stencil = [1.0, -4.0, 6.0, -4.0, 1.0];
    if nx >= 5 {
        let w = opts.smoothing * mag / hx;
        for j in 0..ny {
            for i in 2..nx - 2 {
                for (o, s) in stencil.iter().enumerate() {
                    put(&mut a, &mut rhs, r, grid.index(i + o - 2, j), Complex64::new(w * s, 0.0));
                }
                r += 1;
            }
        }
    }
    if ny >= 5 {
        let w = opts.smoothing * mag / hy;
        for j in 2..ny - 2 {
            for i in 0..nx {
                for (o, s) in stencil.iter().enumerate() {
                    put(&mut a, &mut rhs, r, grid.index(i, j + o - 2), Complex64::new(w * s, 0.0));
                }
                r += 1;
            }
        }
    }
    debug_assert_eq!(r, nrows);
    let x = a.normal_equations()?.solve(&a.adjoint_mul_vec(&rhs))?;
    let mut xi = bdata.clone();
    for (c, &p) in interior.iter().enumerate() {
        xi[p] = x[c];
    }
    let ax = a.mul_vec(&x);
    let res = (0..n_box).map(|r| (ax[r] - rhs[r]).norm()).fold(0.0, f64::max);
    let bsup = beta.magnitude().max();
    let xsup = xi.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let scale = bsup * xsup / hx.min(hy);
    let residual = if scale > 0.0 { res / scale } else { res };
    Ok(TransportResult {
        xi: ComplexField::new(grid, xi)?,
        scheme: TransportScheme::BoxLeastSquares,
        residual,
        boundary_error: 0.0,
        inflow_nodes: bnodes.len(),
        flagged: residual > opts.flag_tol,
    })
}

/// Recovered potential and the coefficients read off from it.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialResult {
    /// `k²(1+η) + ikσ`, reassembled from the returned `η, σ`.
    pub q: ComplexField,
    pub eta: RealField,
    pub sigma: RealField,
    /// `true` where `|ξ|` is large enough to divide by.
    pub mask: Vec<bool>,
    pub negative_sigma: usize,
}

/// `q = −(2ξΔξ − ∇ξ·∇ξ)/(4ξ²)` on nodes with `|ξ| ≥ rel_threshold · max|ξ|`.
/// Masked nodes hold zeros.
pub fn recover_potential(xi: &ComplexField, k: f64, rel_threshold: f64) -> Result<PotentialResult> {
    let grid = *xi.grid();
    let lap = laplacian(xi)?;
    let grad = gradient(xi)?;
    let cut = rel_threshold * xi.sup_norm();
    let k2 = k * k;
    let n = grid.len();
    let (mut q, mut eta, mut sigma, mut mask) = (vec![ZERO; n], vec![0.0; n], vec![0.0; n], vec![false; n]);
    for p in 0..n {
        let z = xi.values()[p];
        if !(z.norm() >= cut && z.norm() > 0.0) {
            continue;
        }
        let gg = grad.vx[p] * grad.vx[p] + grad.vy[p] * grad.vy[p];
        let raw = -(z * lap.values()[p] * 2.0 - gg) / (z * z * 4.0);
        if !(raw.re.is_finite() && raw.im.is_finite()) {
            continue;
        }
        let s = raw.im / k;
        let e = raw.re / k2 - 1.0;
        sigma[p] = s;
        eta[p] = e;
        q[p] = Complex64::new(k2 * (1.0 + e), k * s);
        mask[p] = true;
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    let negative_sigma = (0..n).filter(|&p| mask[p] && sigma[p] <= 0.0).count();
    Ok(PotentialResult {
        q: ComplexField::new(grid, q)?,
        eta: RealField::new(grid, eta)?,
        sigma: RealField::new(grid, sigma)?,
        mask,
        negative_sigma,
    })
}

/// `Γ = H1 / (σ|ξ|)` on the unmasked nodes with `σ > 0`; zero elsewhere.
/// Returns the field and the updated mask.
pub fn recover_grueneisen(
    h1: &RealField,
    sigma: &RealField,
    xi: &ComplexField,
    mask: &[bool],
) -> Result<(RealField, Vec<bool>)> {
    let grid = *h1.grid();
    same_grid(&grid, sigma.grid())?;
    same_grid(&grid, xi.grid())?;
    if mask.len() != grid.len() {
        return Err(Error::Length {
            what: "mask",
            expected: grid.len(),
            got: mask.len(),
        });
    }
    let mut out = vec![0.0; grid.len()];
    let mut m = mask.to_vec();
    for p in 0..grid.len() {
        let d = sigma.values()[p] * xi.values()[p].norm();
        if m[p] && d > 0.0 {
            out[p] = h1.values()[p] / d;
        } else {
            m[p] = false;
        }
    }
    if !m.iter().any(|&b| b) {
        return Err(Error::AllMasked);
    }
    Ok((RealField::new(grid, out)?, m))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectOptions {
    pub floors: ConditionFloors,
    pub transport: TransportOptions,
    /// `|ξ|` mask threshold relative to `max|ξ|`.
    pub xi_threshold: f64,
    /// Refuse to proceed when the data conditions fail.
    pub require_conditions: bool,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            floors: ConditionFloors::default(),
            transport: TransportOptions::default(),
            xi_threshold: 1e-6,
            require_conditions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectDiagnostics {
    pub conditions: ConditionReport,
    pub transport_residual: f64,
    pub transport_flagged: bool,
    pub boundary_error: f64,
    pub scheme: TransportScheme,
    pub masked: usize,
    pub negative_sigma: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectReconResult {
    pub xi: ComplexField,
    pub q: ComplexField,
    pub eta: RealField,
    pub sigma: RealField,
    pub gamma_g: RealField,
    /// Nodes where every recovered coefficient is defined.
    pub mask: Vec<bool>,
    pub diagnostics: DirectDiagnostics,
}

/// `build_beta → solve_transport → recover_potential → recover_grueneisen`.
pub fn pipeline(pair: &PolarizedPair, k: f64, g1: &BoundaryTrace, opts: &DirectOptions) -> Result<DirectReconResult> {
    let grid = *pair.e1.grid();
    same_grid(&grid, pair.h1.grid())?;
    let beta = build_beta(&pair.e1, &pair.e2, opts.floors.alpha)?;
    let conditions = check_conditions(&pair.e1, Some(&pair.e2), &beta, &opts.floors)?;
    if opts.require_conditions && !conditions.pass() {
        return Err(Error::Condition(format!(
            "data conditions fail (min E1 = {:e}, min |β| = {:e}, sup |β| = {:e})",
            conditions.alpha0, conditions.beta0, conditions.beta_sup
        )));
    }
    let t = solve_transport(&beta, g1, &opts.transport)?;
    let pot = recover_potential(&t.xi, k, opts.xi_threshold)?;
    let (gamma_g, mask) = recover_grueneisen(&pair.h1, &pot.sigma, &t.xi, &pot.mask)?;
    let masked = mask.iter().filter(|&&m| !m).count();
    Ok(DirectReconResult {
        xi: t.xi,
        q: pot.q,
        eta: pot.eta,
        sigma: pot.sigma,
        gamma_g,
        mask,
        diagnostics: DirectDiagnostics {
            conditions,
            transport_residual: t.residual,
            transport_flagged: t.flagged,
            boundary_error: t.boundary_error,
            scheme: t.scheme,
            masked,
            negative_sigma: pot.negative_sigma,
        },
    })
}

/// `‖Γσ − Γ̃σ̃‖ / (‖H1 − H̃1‖ + ‖E2 − Ẽ2‖)` over nodes unmasked in both
/// reconstructions. `None` when the data coincide.
pub fn stability_ratio(
    a: &DirectReconResult,
    b: &DirectReconResult,
    pa: &PolarizedPair,
    pb: &PolarizedPair,
) -> Result<(f64, Option<f64>)> {
    let grid = *a.sigma.grid();
    same_grid(&grid, b.sigma.grid())?;
    let mask: Vec<bool> = a.mask.iter().zip(&b.mask).map(|(&x, &y)| x && y).collect();
    let gs = |r: &DirectReconResult| r.gamma_g.zip_map(&r.sigma, |x, y| x * y);
    let num = l2_masked(&gs(a)?.zip_map(&gs(b)?, |x, y| x - y)?, Some(&mask));
    let dh = pa.h1.zip_map(&pb.h1, |x, y| x - y)?;
    let de = pa.e2.zip_map(&pb.e2, |x, y| x - y)?;
    let den = l2_masked(&dh, None) + l2_masked(&de, None);
    Ok((num, (den > 0.0).then(|| num / den)))
}

/// Relative masked `l2` error restricted to nodes `band` or more cells from
/// the boundary.
pub fn interior_error(rec: &RealField, truth: &RealField, mask: &[bool], band: usize) -> Result<f64> {
    let g = *rec.grid();
    same_grid(&g, truth.grid())?;
    let m: Vec<bool> = crate::ops::interior_mask(&g, band)
        .iter()
        .zip(mask)
        .map(|(&a, &b)| a && b)
        .collect();
    crate::ops::rel_l2_masked(rec, truth, Some(&m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::TraceKind;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn beta_of_proportional_data_vanishes() {
        let g = GridSpec::unit_square(9).unwrap();
        let e1 = RealField::from_fn(g, |x, y| 1.0 + x * y);
        let e2 = e1.to_complex().scale(c(0.3, -2.0));
        let b = build_beta(&e1, &e2, None).unwrap();
        assert!(b.magnitude().max() < 1e-12);
        let r = check_conditions(&e1, Some(&e2), &b, &ConditionFloors::default()).unwrap();
        assert!(!r.gradient_ok);
    }

    #[test]
    fn beta_of_linear_quotient_is_exact() {
        let g = GridSpec::unit_square(9).unwrap();
        let e1 = RealField::from_fn(g, |x, y| 2.0 + x + y * y);
        let e2 = ComplexField::from_fn(g, |x, y| c(x * (2.0 + x + y * y), 0.0));
        let b = build_beta(&e1, &e2, None).unwrap();
        for p in 0..g.len() {
            assert!((b.vx[p] - c(1.0, 0.0)).norm() < 1e-12 && b.vy[p].norm() < 1e-12);
        }
        let r = check_conditions(&e1, Some(&e2), &b, &ConditionFloors::default()).unwrap();
        assert!((r.beta0 - 1.0).abs() < 1e-12 && r.pass());
    }

    #[test]
    fn nonpositive_e1_is_rejected() {
        let g = GridSpec::unit_square(5).unwrap();
        let e1 = RealField::from_fn(g, |x, _| x);
        assert!(matches!(build_beta(&e1, &ComplexField::zeros(g), None), Err(Error::Condition(_))));
    }

    fn axis_flow(g: GridSpec) -> VectorField {
        VectorField::from_fn(g, |_, _| (c(1.0, 0.0), c(0.0, 0.0)))
    }

    #[test]
    fn upwind_transports_constants_and_profiles() {
        let g = GridSpec::new(13, 9, 0.0, 0.0, 1.5, 1.0).unwrap();
        let beta = axis_flow(g);
        let one = BoundaryTrace::from_fn(g, |_, _| c(1.0, 0.0));
        let t = solve_transport(&beta, &one, &TransportOptions::default()).unwrap();
        assert_eq!(t.scheme, TransportScheme::Upwind);
        assert!(t.xi.values().iter().all(|z| (z - c(1.0, 0.0)).norm() < 1e-12));
        // g1² = φ(y) on the inflow edge; other boundary values are irrelevant.
        let phi = |y: f64| c(1.0 + y, 0.5 * y * y);
        let g1 = BoundaryTrace::from_fn(g, |x, y| if x == 0.0 { phi(y).sqrt() } else { c(7.0, 0.0) });
        let t = solve_transport(&beta, &g1, &TransportOptions::default()).unwrap();
        for p in 0..g.len() {
            let (_, y) = g.coords(p);
            assert!((t.xi.values()[p] - phi(y)).norm() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inflow_is_an_error() {
        let g = GridSpec::unit_square(7).unwrap();
        let zero = VectorField::from_fn(g, |_, _| (c(0.0, 0.0), c(0.0, 0.0)));
        let one = BoundaryTrace::from_fn(g, |_, _| c(1.0, 0.0));
        assert_eq!(
            solve_transport(&zero, &one, &TransportOptions::default()),
            Err(Error::DegenerateInflow)
        );
    }

    #[test]
    fn upwind_flux_is_conservative_on_sub_boxes() {
        let g = GridSpec::unit_square(12).unwrap();
        let beta = VectorField::from_fn(g, |x, y| (c(1.0 + y, 0.0), c(0.5 - x, 0.0)));
        let g1 = BoundaryTrace::from_fn(g, |x, y| c(1.0 + x, y));
        let xi = ComplexField::from_fn(g, |x, y| c(x * y, 1.0 - x));
        for bx in [(0, 11, 0, 11), (2, 7, 3, 9), (0, 4, 5, 11), (5, 5, 5, 5)] {
            let (a, b) = upwind_flux_balance(&beta, &xi, &g1, bx).unwrap();
            assert!((a - b).norm() < 1e-12, "{bx:?} {a} {b}");
        }
    }

    #[test]
    fn plane_wave_potential() {
        let k = 3.0;
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let xi = ComplexField::from_fn(g, |x, _| c(0.0, 2.0 * k * x).exp());
            let r = recover_potential(&xi, k, 1e-6).unwrap();
            r.q.values().iter().map(|z| (z - c(k * k, 0.0)).norm()).fold(0.0, f64::max)
        };
        let (a, b) = (err(21), err(41));
        assert!(a / b > 3.5, "{a} {b}");
    }

    #[test]
    fn constant_xi_gives_inadmissible_output() {
        let g = GridSpec::unit_square(7).unwrap();
        let r = recover_potential(&ComplexField::constant(g, c(2.0, 1.0)), 2.0, 1e-6).unwrap();
        for p in 0..g.len() {
            assert!((r.eta.values()[p] + 1.0).abs() < 1e-12);
            assert!(r.sigma.values()[p].abs() < 1e-12);
        }
        assert_eq!(r.negative_sigma, g.len());
    }

    #[test]
    fn reassembly_is_bit_exact() {
        let g = GridSpec::unit_square(15).unwrap();
        let k = 1.7;
        let xi = ComplexField::from_fn(g, |x, y| c(1.0 + x, 0.3 * y + x * x).exp());
        let r = recover_potential(&xi, k, 1e-6).unwrap();
        for p in 0..g.len() {
            if r.mask[p] {
                let q = Complex64::new(k * k * (1.0 + r.eta.values()[p]), k * r.sigma.values()[p]);
                assert_eq!(q, r.q.values()[p]);
            }
        }
    }

    #[test]
    fn grueneisen_identity_and_homogeneity() {
        let g = GridSpec::unit_square(7).unwrap();
        let gam = RealField::from_fn(g, |x, y| 1.0 + x * y);
        let sig = RealField::from_fn(g, |x, _| 0.5 + x);
        let xi = ComplexField::from_fn(g, |x, y| c(1.0 + y, x));
        let h1 = RealField::new(
            g,
            (0..g.len())
                .map(|p| gam.values()[p] * sig.values()[p] * xi.values()[p].norm())
                .collect(),
        )
        .unwrap();
        let mask = vec![true; g.len()];
        let (r, _) = recover_grueneisen(&h1, &sig, &xi, &mask).unwrap();
        for (a, b) in r.values().iter().zip(gam.values()) {
            assert!((a - b).abs() < 1e-14 * b);
        }
        let (r3, _) = recover_grueneisen(&h1.map(|x| 3.0 * x), &sig, &xi, &mask).unwrap();
        for (a, b) in r3.values().iter().zip(r.values()) {
            assert!((a - 3.0 * b).abs() < 1e-14 * b);
        }
        let _ = TraceKind::Dirichlet;
    }

    #[test]
    fn box_scheme_recovers_smooth_transport() {
        // ξ = exp(i a·x) with β ∝ complex constant direction: ∇·(ξβ) = 0 needs
        // β·∇ξ = 0, so pick β ⟂ a.
        let err = |n: usize| {
            let g = GridSpec::unit_square(n).unwrap();
            let a = (1.0, 2.0);
            let s = c(1.0, 0.4);
            let beta = VectorField::from_fn(g, |_, _| (s * 2.0, -s));
            let exact = ComplexField::from_fn(g, |x, y| c(0.0, a.0 * x + a.1 * y).exp());
            let g1 = BoundaryTrace::from_fn(g, |x, y| c(0.0, 0.5 * (a.0 * x + a.1 * y)).exp());
            let t = solve_transport(&beta, &g1, &TransportOptions::default()).unwrap();
            assert_eq!(t.scheme, TransportScheme::BoxLeastSquares);
            crate::ops::rel_l2(&t.xi, &exact).unwrap()
        };
        let (e1, e2) = (err(21), err(41));
        assert!(e1 < 1e-2 && e2 < e1, "{e1} {e2}");
    }
}
