//! Second-order finite-difference operators on nodal fields.
//!
//! Interior nodes use central differences (5-point Laplacian). Along an axis
//! where a node sits on the boundary, derivatives switch to one-sided
//! second-order formulas.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField, TraceKind, VectorField};
use crate::grid::{GridSpec, Side};

/// Stencil entry: node index and weight.
pub type Tap = (usize, f64);

/// One-sided/central first-derivative taps along one grid line.
fn first_taps(n: usize, k: usize, h: f64) -> [(usize, f64); 3] {
    if k == 0 {
        [(0, -1.5 / h), (1, 2.0 / h), (2, -0.5 / h)]
    } else if k == n - 1 {
        [(n - 1, 1.5 / h), (n - 2, -2.0 / h), (n - 3, 0.5 / h)]
    } else {
        [(k + 1, 0.5 / h), (k - 1, -0.5 / h), (k, 0.0)]
    }
}

/// Second-derivative taps along one grid line; one-sided 4-point at the ends
/// (3-point first-order fallback when the line has only three nodes).
fn second_taps(n: usize, k: usize, h: f64) -> ([(usize, f64); 4], usize) {
    let h2 = h * h;
    let end = |o: &dyn Fn(usize) -> usize| -> ([(usize, f64); 4], usize) {
        if n >= 4 {
            (
                [
                    (o(0), 2.0 / h2),
                    (o(1), -5.0 / h2),
                    (o(2), 4.0 / h2),
                    (o(3), -1.0 / h2),
                ],
                4,
            )
        } else {
            (
                [(o(0), 1.0 / h2), (o(1), -2.0 / h2), (o(2), 1.0 / h2), (0, 0.0)],
                3,
            )
        }
    };
    if k == 0 {
        end(&|d| d)
    } else if k == n - 1 {
        end(&|d| n - 1 - d)
    } else {
        (
            [(k - 1, 1.0 / h2), (k, -2.0 / h2), (k + 1, 1.0 / h2), (0, 0.0)],
            3,
        )
    }
}

/// Taps of `d/dx` at node `(i, j)`.
pub fn dx_taps(g: &GridSpec, i: usize, j: usize) -> [Tap; 3] {
    first_taps(g.nx, i, g.hx()).map(|(k, w)| (g.index(k, j), w))
}

/// Taps of `d/dy` at node `(i, j)`.
pub fn dy_taps(g: &GridSpec, i: usize, j: usize) -> [Tap; 3] {
    first_taps(g.ny, j, g.hy()).map(|(k, w)| (g.index(i, k), w))
}

/// Taps of the discrete Laplacian at node `(i, j)`.
pub fn laplacian_taps(g: &GridSpec, i: usize, j: usize) -> Vec<Tap> {
    let mut taps = Vec::with_capacity(8);
    let (tx, nx) = second_taps(g.nx, i, g.hx());
    taps.extend(tx[..nx].iter().map(|&(k, w)| (g.index(k, j), w)));
    let (ty, ny) = second_taps(g.ny, j, g.hy());
    taps.extend(ty[..ny].iter().map(|&(k, w)| (g.index(i, k), w)));
    taps
}

/// Outward 3-point normal derivative taps at a boundary node; corners take the
/// mean of their two edge formulas. Empty for interior nodes.
pub fn normal_taps(g: &GridSpec, i: usize, j: usize) -> Vec<Tap> {
    let (sides, n) = g.sides(i, j);
    let mut taps = Vec::with_capacity(6);
    let scale = if n > 0 { 1.0 / n as f64 } else { 0.0 };
    for side in sides.iter().flatten() {
        let edge = match side {
            Side::Left => dx_taps(g, i, j).map(|(p, w)| (p, -w)),
            Side::Right => dx_taps(g, i, j),
            Side::Bottom => dy_taps(g, i, j).map(|(p, w)| (p, -w)),
            Side::Top => dy_taps(g, i, j),
        };
        taps.extend(edge.iter().map(|&(p, w)| (p, w * scale)));
    }
    taps
}

#[inline]
fn apply(taps: &[Tap], f: &[Complex64]) -> Complex64 {
    taps.iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &(p, w)| acc + f[p] * w)
}

fn check_finite(f: &ComplexField) -> Result<()> {
    if let Some(index) = f
        .values()
        .iter()
        .position(|v| !(v.re.is_finite() && v.im.is_finite()))
    {
        return Err(Error::NonFinite {
            what: "operand",
            index,
        });
    }
    Ok(())
}

/// Discrete Laplacian at every node.
pub fn laplacian(f: &ComplexField) -> Result<ComplexField> {
    check_finite(f)?;
    let g = *f.grid();
    let v = f.values();
    let out = (0..g.len())
        .map(|p| {
            let (i, j) = g.ij(p);
            if g.is_boundary(i, j) {
                apply(&laplacian_taps(&g, i, j), v)
            } else {
                let (hx2, hy2) = (g.hx() * g.hx(), g.hy() * g.hy());
                (v[p - 1] - v[p] * 2.0 + v[p + 1]) / hx2
                    + (v[p - g.nx] - v[p] * 2.0 + v[p + g.nx]) / hy2
            }
        })
        .collect();
    Ok(ComplexField::from_vec(g, out))
}

pub fn gradient(f: &ComplexField) -> Result<VectorField> {
    check_finite(f)?;
    let g = *f.grid();
    let v = f.values();
    let (vx, vy) = (0..g.len())
        .map(|p| {
            let (i, j) = g.ij(p);
            (apply(&dx_taps(&g, i, j), v), apply(&dy_taps(&g, i, j), v))
        })
        .unzip();
    VectorField::new(g, vx, vy)
}

pub fn divergence(w: &VectorField) -> Result<ComplexField> {
    let g = *w.grid();
    let out = (0..g.len())
        .map(|p| {
            let (i, j) = g.ij(p);
            apply(&dx_taps(&g, i, j), &w.vx) + apply(&dy_taps(&g, i, j), &w.vy)
        })
        .collect();
    Ok(ComplexField::from_vec(g, out))
}

/// Outward normal derivative on the boundary ring.
pub fn normal_derivative(f: &ComplexField) -> Result<BoundaryTrace> {
    check_finite(f)?;
    let g = *f.grid();
    let v = f.values();
    let out = g
        .boundary_nodes()
        .iter()
        .map(|&p| {
            let (i, j) = g.ij(p);
            apply(&normal_taps(&g, i, j), v)
        })
        .collect();
    Ok(BoundaryTrace::from_vec(g, out, TraceKind::Neumann))
}

/// Anything with a magnitude per node.
pub trait NodalField {
    fn grid(&self) -> &GridSpec;
    fn magnitude_at(&self, p: usize) -> f64;
    fn distance_at(&self, other: &Self, p: usize) -> f64;
}

impl NodalField for RealField {
    fn grid(&self) -> &GridSpec {
        RealField::grid(self)
    }
    fn magnitude_at(&self, p: usize) -> f64 {
        self.values()[p].abs()
    }
    fn distance_at(&self, other: &Self, p: usize) -> f64 {
        (self.values()[p] - other.values()[p]).abs()
    }
}

impl NodalField for ComplexField {
    fn grid(&self) -> &GridSpec {
        ComplexField::grid(self)
    }
    fn magnitude_at(&self, p: usize) -> f64 {
        self.values()[p].norm()
    }
    fn distance_at(&self, other: &Self, p: usize) -> f64 {
        (self.values()[p] - other.values()[p]).norm()
    }
}

/// `l2`, `linf` and (optionally) relative `l2` against a reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub linf: f64,
    pub rel_l2: Option<f64>,
}

/// Grid-weighted `L2` norm with trapezoidal node weights.
pub fn l2<F: NodalField>(f: &F) -> f64 {
    l2_masked(f, None)
}

pub fn l2_masked<F: NodalField>(f: &F, mask: Option<&[bool]>) -> f64 {
    let g = f.grid();
    let s: f64 = (0..g.len())
        .filter(|&p| mask.is_none_or(|m| m[p]))
        .map(|p| {
            let (i, j) = g.ij(p);
            let a = f.magnitude_at(p);
            g.weight(i, j) * a * a
        })
        .sum();
    libm::sqrt(s)
}

pub fn linf<F: NodalField>(f: &F) -> f64 {
    (0..f.grid().len())
        .map(|p| f.magnitude_at(p))
        .fold(0.0, f64::max)
}

/// `l2(f - reference) / l2(reference)`.
pub fn rel_l2<F: NodalField>(f: &F, reference: &F) -> Result<f64> {
    rel_l2_masked(f, reference, None)
}

/// Relative `L2` error restricted to nodes where `mask` is true.
pub fn rel_l2_masked<F: NodalField>(f: &F, reference: &F, mask: Option<&[bool]>) -> Result<f64> {
    same_grid(f.grid(), reference.grid())?;
    let g = f.grid();
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..g.len() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        let (i, j) = g.ij(p);
        let w = g.weight(i, j);
        let d = f.distance_at(reference, p);
        let r = reference.magnitude_at(p);
        num += w * d * d;
        den += w * r * r;
    }
    if den == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(libm::sqrt(num / den))
}

pub fn norms<F: NodalField>(f: &F, reference: Option<&F>) -> Result<Norms> {
    Ok(Norms {
        l2: l2(f),
        linf: linf(f),
        rel_l2: reference.map(|r| rel_l2(f, r)).transpose()?,
    })
}

/// Mask excluding a band of `width` nodes next to the boundary.
pub fn interior_mask(g: &GridSpec, width: usize) -> Vec<bool> {
    (0..g.len())
        .map(|p| {
            let (i, j) = g.ij(p);
            i >= width && j >= width && i + width < g.nx && j + width < g.ny
        })
        .collect()
}
