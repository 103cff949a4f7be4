//! Recovery of the second-order susceptibility `γ` from third-order internal
//! data and second-order boundary fluxes.
//!
//! With zero second-order Dirichlet data the unknowns `(u2, v2, γ)` satisfy
//!
//! ```text
//! (Δ + q1) u2 + 2k²γ u1* v1 = 0
//! (Δ + q2) v2 + 8k²γ u1²    = 0
//! u1* u2 + u1 u2* + v1* v2 + v1 v2* = H3 / (3Γσ)
//! ∂ν u2 = J_u2,  ∂ν v2 = J_v2,  u2 = v2 = 0 on ∂Ω
//! ```
//!
//! The conjugate equations are the real and imaginary parts of the first
//! two, so the system is assembled in the real unknowns
//! `(Re u2, Im u2, Re v2, Im v2, γ)` at interior nodes and solved in least
//! squares.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField};
use crate::grid::GridSpec;
use crate::helmholtz::potentials_from;
use crate::ops::{laplacian, normal_taps};
use crate::sparse::Assembly;

/// Pointwise `|u1²/(u1*)² + v1/v1*|` and its minimum.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticityReport {
    pub margin: RealField,
    pub min_margin: f64,
    /// Nodes where `u1` or `v1` vanishes.
    pub masked: usize,
    pub pass: bool,
}

/// Rank margin of the principal symbol of the `γ` system.
pub fn check_ellipticity(u1: &ComplexField, v1: &ComplexField, floor: f64) -> Result<EllipticityReport> {
    let g = *u1.grid();
    same_grid(&g, v1.grid())?;
    let mut min = f64::INFINITY;
    let mut masked = 0;
    let values = u1
        .values()
        .iter()
        .zip(v1.values())
        .map(|(&u, &v)| {
            if u.norm() == 0.0 || v.norm() == 0.0 {
                masked += 1;
                return 0.0;
            }
            let m = ((u * u) / (u.conj() * u.conj()) + v / v.conj()).norm();
            min = min.min(m);
            m
        })
        .collect();
    if masked == g.len() {
        return Err(Error::AllMasked);
    }
    Ok(EllipticityReport {
        margin: RealField::new(g, values)?,
        min_margin: min,
        masked,
        pass: min >= floor,
    })
}

/// Phase `θ` on a uniform grid of `steps` values in `[0, π)` maximizing the
/// minimum margin when `v1` is replaced by `e^{iθ} v1` (the effect of
/// rotating `h1` by `e^{iθ}`). Returns `(θ, min margin)`.
pub fn best_phase(u1: &ComplexField, v1: &ComplexField, steps: usize) -> Result<(f64, f64)> {
    same_grid(u1.grid(), v1.grid())?;
    let mut best = (0.0, f64::NEG_INFINITY);
    for s in 0..steps.max(1) {
        let theta = core::f64::consts::PI * s as f64 / steps.max(1) as f64;
        let rot = Complex64::from_polar(1.0, theta);
        let r = check_ellipticity(u1, &v1.scale(rot), 0.0)?;
        if r.min_margin > best.1 {
            best = (theta, r.min_margin);
        }
    }
    Ok(best)
}

/// Soft-row weights of the least-squares system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowWeights {
    pub pde: f64,
    /// `None` means `1/h`.
    pub data: Option<f64>,
    pub neumann: f64,
    /// Tikhonov weight `λ` on `‖∇γ‖²`.
    pub tikhonov: f64,
}

impl Default for RowWeights {
    fn default() -> Self {
        Self {
            pde: 1.0,
            data: None,
            neumann: 1.0,
            tikhonov: 0.0,
        }
    }
}

/// Inputs of the `γ` system.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaSystemInput {
    pub u1: ComplexField,
    pub v1: ComplexField,
    pub h3: RealField,
    pub j_u2: BoundaryTrace,
    pub j_v2: BoundaryTrace,
    pub gamma_g: RealField,
    pub eta: RealField,
    pub sigma: RealField,
    pub k: f64,
}

impl GammaSystemInput {
    fn validate(&self) -> Result<GridSpec> {
        let g = *self.u1.grid();
        same_grid(&g, self.v1.grid())?;
        same_grid(&g, self.h3.grid())?;
        same_grid(&g, self.j_u2.grid())?;
        same_grid(&g, self.j_v2.grid())?;
        same_grid(&g, self.gamma_g.grid())?;
        same_grid(&g, self.eta.grid())?;
        same_grid(&g, self.sigma.grid())?;
        Ok(g)
    }
}

/// Column layout: five blocks of interior unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub grid: GridSpec,
    /// Column offset of interior node `p` within a block, or `usize::MAX`.
    pub col: Vec<usize>,
    pub n: usize,
}

impl Layout {
    pub fn new(grid: GridSpec) -> Self {
        let mut col = vec![usize::MAX; grid.len()];
        let interior = grid.interior_nodes();
        for (c, &p) in interior.iter().enumerate() {
            col[p] = c;
        }
        Self {
            grid,
            col,
            n: interior.len(),
        }
    }

    pub const RE_U: usize = 0;
    pub const IM_U: usize = 1;
    pub const RE_V: usize = 2;
    pub const IM_V: usize = 3;
    pub const GAMMA: usize = 4;

    #[inline]
    pub fn at(&self, block: usize, p: usize) -> Option<usize> {
        let c = self.col[p];
        (c != usize::MAX).then(|| block * self.n + c)
    }

    pub fn ncols(&self) -> usize {
        5 * self.n
    }
}

/// Row blocks, in assembly order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowBlock {
    PdeU,
    PdeV,
    Data,
    NeumannU,
    NeumannV,
    Tikhonov,
}

/// Assembled real system with its row bookkeeping.
#[derive(Debug, Clone)]
pub struct GammaSystem {
    pub layout: Layout,
    pub matrix: Assembly<f64>,
    pub rhs: Vec<f64>,
    pub blocks: Vec<(RowBlock, core::ops::Range<usize>)>,
}

/// Build the real least-squares system.
pub fn assemble(input: &GammaSystemInput, w: &RowWeights) -> Result<GammaSystem> {
    let g = input.validate()?;
    let (q1, q2) = potentials_from(&input.eta, &input.sigma, input.k)?;
    let lay = Layout::new(g);
    let k2 = input.k * input.k;
    let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
    let wd = w.data.unwrap_or(1.0 / g.hx().min(g.hy()));
    let interior = g.interior_nodes();
    let bnodes = g.boundary_nodes();
    let ni = interior.len();
    let nb = bnodes.len();
    let n_tik = if w.tikhonov > 0.0 { 2 * ni } else { 0 };
    let nrows = 5 * ni + 4 * nb + n_tik;
    let mut a = Assembly::<f64>::with_capacity(nrows, lay.ncols(), 30 * ni + 12 * nb);
    let mut rhs = vec![0.0; nrows];
    let mut blocks = Vec::new();

    // PDE rows: real and imaginary parts of (Δ + q) w + γ s = 0.
    let mut r = 0;
    for (eq, q, re_b, im_b) in [
        (RowBlock::PdeU, &q1, Layout::RE_U, Layout::IM_U),
        (RowBlock::PdeV, &q2, Layout::RE_V, Layout::IM_V),
    ] {
        let start = r;
        for &p in &interior {
            let s = if eq == RowBlock::PdeU {
                input.u1.values()[p].conj() * input.v1.values()[p] * (2.0 * k2)
            } else {
                input.u1.values()[p] * input.u1.values()[p] * (8.0 * k2)
            };
            let qp = q.values()[p];
            let lap = [
                (p - 1, 1.0 / hx2),
                (p + 1, 1.0 / hx2),
                (p - g.nx, 1.0 / hy2),
                (p + g.nx, 1.0 / hy2),
                (p, -2.0 / hx2 - 2.0 / hy2),
            ];
            // Real row: Δa + Re q a − Im q b + γ Re s.
            for &(t, c) in &lap {
                if let Some(col) = lay.at(re_b, t) {
                    a.push(r, col, w.pde * c);
                }
            }
            a.push(r, lay.at(re_b, p).unwrap(), w.pde * qp.re);
            a.push(r, lay.at(im_b, p).unwrap(), -w.pde * qp.im);
            a.push(r, lay.at(Layout::GAMMA, p).unwrap(), w.pde * s.re);
            // Imaginary row: Δb + Im q a + Re q b + γ Im s.
            for &(t, c) in &lap {
                if let Some(col) = lay.at(im_b, t) {
                    a.push(r + 1, col, w.pde * c);
                }
            }
            a.push(r + 1, lay.at(re_b, p).unwrap(), w.pde * qp.im);
            a.push(r + 1, lay.at(im_b, p).unwrap(), w.pde * qp.re);
            a.push(r + 1, lay.at(Layout::GAMMA, p).unwrap(), w.pde * s.im);
            r += 2;
        }
        blocks.push((eq, start..r));
    }

    // Data rows: 2 Re(u1* u2) + 2 Re(v1* v2) = H3 / (3Γσ).
    let start = r;
    for &p in &interior {
        let (u, v) = (input.u1.values()[p], input.v1.values()[p]);
        a.push(r, lay.at(Layout::RE_U, p).unwrap(), wd * 2.0 * u.re);
        a.push(r, lay.at(Layout::IM_U, p).unwrap(), wd * 2.0 * u.im);
        a.push(r, lay.at(Layout::RE_V, p).unwrap(), wd * 2.0 * v.re);
        a.push(r, lay.at(Layout::IM_V, p).unwrap(), wd * 2.0 * v.im);
        let gs = input.gamma_g.values()[p] * input.sigma.values()[p];
        rhs[r] = wd * input.h3.values()[p] / (3.0 * gs);
        r += 1;
    }
    blocks.push((RowBlock::Data, start..r));

    // Neumann rows on the boundary; boundary values of u2, v2 are zero.
    for (blk, trace, re_b, im_b) in [
        (RowBlock::NeumannU, &input.j_u2, Layout::RE_U, Layout::IM_U),
        (RowBlock::NeumannV, &input.j_v2, Layout::RE_V, Layout::IM_V),
    ] {
        let start = r;
        for (&p, &j) in bnodes.iter().zip(trace.values()) {
            let (i, jj) = g.ij(p);
            for (t, c) in normal_taps(&g, i, jj) {
                if let Some(col) = lay.at(re_b, t) {
                    a.push(r, col, w.neumann * c);
                }
                if let Some(col) = lay.at(im_b, t) {
                    a.push(r + 1, col, w.neumann * c);
                }
            }
            rhs[r] = w.neumann * j.re;
            rhs[r + 1] = w.neumann * j.im;
            r += 2;
        }
        blocks.push((blk, start..r));
    }

    if n_tik > 0 {
        // Forward differences of γ between interior nodes.
        let start = r;
        let s = libm::sqrt(w.tikhonov);
        for &p in &interior {
            let (i, j) = g.ij(p);
            for (q, h) in [(g.index(i + 1, j), g.hx()), (g.index(i, j + 1), g.hy())] {
                if let (Some(c0), Some(c1)) = (lay.at(Layout::GAMMA, p), lay.at(Layout::GAMMA, q)) {
                    a.push(r, c0, -s / h);
                    a.push(r, c1, s / h);
                }
                r += 1;
            }
        }
        blocks.push((RowBlock::Tikhonov, start..r));
    }
    debug_assert_eq!(r, nrows);
    Ok(GammaSystem {
        layout: lay,
        matrix: a,
        rhs,
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockResidual {
    pub block: RowBlock,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaRecon {
    /// `γ` at interior nodes; boundary nodes copy their nearest interior
    /// neighbour (the data carry no information there).
    pub gamma: RealField,
    pub u2: ComplexField,
    pub v2: ComplexField,
    pub residuals: Vec<BlockResidual>,
    pub ellipticity: EllipticityReport,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaOptions {
    pub weights: RowWeights,
    pub ellipticity_floor: f64,
    /// Refuse to solve when the ellipticity check fails.
    pub require_ellipticity: bool,
}

impl Default for GammaOptions {
    fn default() -> Self {
        Self {
            weights: RowWeights::default(),
            ellipticity_floor: 1e-3,
            require_ellipticity: true,
        }
    }
}

const REFINE_STEPS: usize = 2;

/// Assemble and solve the `γ` system.
pub fn assemble_and_solve(input: &GammaSystemInput, opts: &GammaOptions) -> Result<GammaRecon> {
    let ell = check_ellipticity(&input.u1, &input.v1, opts.ellipticity_floor)?;
    if opts.require_ellipticity && !ell.pass {
        return Err(Error::Condition(alloc::format!(
            "ellipticity margin {:e} below floor {:e}",
            ell.min_margin, opts.ellipticity_floor
        )));
    }
    let sys = assemble(input, &opts.weights)?;
    let qr = sys.matrix.qr()?;
    let mut x = qr.solve(&sys.rhs)?;
    // Refinement on the residual recovers digits lost to row scaling.
    for _ in 0..REFINE_STEPS {
        let ax = sys.matrix.mul_vec(&x);
        let r: Vec<f64> = sys.rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = qr.solve(&r)?;
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    let ax = sys.matrix.mul_vec(&x);
    let residuals = sys
        .blocks
        .iter()
        .map(|(b, range)| {
            let (mut s, mut m) = (0.0f64, 0.0f64);
            for r in range.clone() {
                let e = ax[r] - sys.rhs[r];
                s += e * e;
                m = m.max(e.abs());
            }
            BlockResidual {
                block: *b,
                l2: libm::sqrt(s),
                linf: m,
            }
        })
        .collect();
    let (gamma, u2, v2) = unpack(&sys.layout, &x)?;
    Ok(GammaRecon {
        gamma,
        u2,
        v2,
        residuals,
        ellipticity: ell,
    })
}

/// Split a solution vector into `(γ, u2, v2)`.
pub fn unpack(lay: &Layout, x: &[f64]) -> Result<(RealField, ComplexField, ComplexField)> {
    let g = lay.grid;
    let mut gam = vec![0.0; g.len()];
    let mut u2 = vec![Complex64::new(0.0, 0.0); g.len()];
    let mut v2 = vec![Complex64::new(0.0, 0.0); g.len()];
    for p in 0..g.len() {
        if let Some(c) = lay.at(Layout::GAMMA, p) {
            gam[p] = x[c];
            u2[p] = Complex64::new(x[lay.at(Layout::RE_U, p).unwrap()], x[lay.at(Layout::IM_U, p).unwrap()]);
            v2[p] = Complex64::new(x[lay.at(Layout::RE_V, p).unwrap()], x[lay.at(Layout::IM_V, p).unwrap()]);
        }
    }
    for p in g.boundary_nodes() {
        let (i, j) = g.ij(p);
        let ii = i.clamp(1, g.nx - 2);
        let jj = j.clamp(1, g.ny - 2);
        gam[p] = gam[g.index(ii, jj)];
    }
    Ok((RealField::new(g, gam)?, ComplexField::new(g, u2)?, ComplexField::new(g, v2)?))
}

/// Pointwise elimination `γ = −(Δ + q1) u2 / (2k² u1* v1)` at interior nodes
/// with `|u1 v1| ≥ rel_threshold · max|u1 v1|`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGamma {
    pub gamma: RealField,
    pub mask: Vec<bool>,
    /// Largest `|Im γ| / |γ|` over the unmasked set.
    pub imaginary_residue: f64,
}

pub fn gamma_from_u2(
    u2: &ComplexField,
    u1: &ComplexField,
    v1: &ComplexField,
    q1: &ComplexField,
    k: f64,
    rel_threshold: f64,
) -> Result<PointwiseGamma> {
    let g = *u2.grid();
    for f in [u1, v1, q1] {
        same_grid(&g, f.grid())?;
    }
    let lap = laplacian(u2)?;
    let prod: Vec<Complex64> = u1.values().iter().zip(v1.values()).map(|(a, b)| a.conj() * b).collect();
    let cut = rel_threshold * prod.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let mut gam = vec![0.0; g.len()];
    let mut mask = vec![false; g.len()];
    let mut residue: f64 = 0.0;
    for p in g.interior_nodes() {
        let d = prod[p] * (2.0 * k * k);
        if !(prod[p].norm() >= cut && prod[p].norm() > 0.0) {
            continue;
        }
        let z = -(lap.values()[p] + q1.values()[p] * u2.values()[p]) / d;
        gam[p] = z.re;
        mask[p] = true;
        if z.norm() > 0.0 {
            residue = residue.max(z.im.abs() / z.norm());
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    Ok(PointwiseGamma {
        gamma: RealField::new(g, gam)?,
        mask,
        imaginary_residue: residue,
    })
}
