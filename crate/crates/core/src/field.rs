//! Nodal scalar, vector and boundary fields.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::GridSpec;

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Length {
            what,
            expected,
            got,
        });
    }
    Ok(())
}

/// Real scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        check_len("real field", grid.len(), values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "real field",
                index,
            });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|p| {
                let (x, y) = grid.coords(p);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    /// Unchecked constructor for values computed internally from finite data.
    pub(crate) fn from_vec(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn to_complex(&self) -> ComplexField {
        ComplexField::from_vec(
            self.grid,
            self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        )
    }

    /// Restriction to a coarser grid whose nodes are a subset of this grid's nodes.
    pub fn restrict(&self, coarse: &GridSpec) -> Result<Self> {
        let idx = restriction_indices(&self.grid, coarse)?;
        Ok(Self::from_vec(*coarse, idx.iter().map(|&p| self.values[p]).collect()))
    }
}

/// Complex scalar per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        check_len("complex field", grid.len(), values.len())?;
        if let Some(index) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "complex field",
                index,
            });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, Complex64::new(0.0, 0.0))
    }

    pub fn constant(grid: GridSpec, c: Complex64) -> Self {
        Self {
            grid,
            values: vec![c; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = (0..grid.len())
            .map(|p| {
                let (x, y) = grid.coords(p);
                f(x, y)
            })
            .collect();
        Self { grid, values }
    }

    pub(crate) fn from_vec(grid: GridSpec, values: Vec<Complex64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self::from_vec(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn conj(&self) -> Self {
        self.map(|z| z.conj())
    }

    pub fn scale(&self, c: Complex64) -> Self {
        self.map(|z| z * c)
    }

    pub fn abs(&self) -> RealField {
        RealField::from_vec(self.grid, self.values.iter().map(|z| z.norm()).collect())
    }

    pub fn abs_sqr(&self) -> RealField {
        RealField::from_vec(self.grid, self.values.iter().map(|z| z.norm_sqr()).collect())
    }

    pub fn re(&self) -> RealField {
        RealField::from_vec(self.grid, self.values.iter().map(|z| z.re).collect())
    }

    pub fn im(&self) -> RealField {
        RealField::from_vec(self.grid, self.values.iter().map(|z| z.im).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Dirichlet trace (restriction to the boundary ring).
    pub fn trace(&self) -> BoundaryTrace {
        BoundaryTrace::from_vec(
            self.grid,
            self.grid
                .boundary_nodes()
                .iter()
                .map(|&p| self.values[p])
                .collect(),
            TraceKind::Dirichlet,
        )
    }

    pub fn restrict(&self, coarse: &GridSpec) -> Result<Self> {
        let idx = restriction_indices(&self.grid, coarse)?;
        Ok(Self::from_vec(*coarse, idx.iter().map(|&p| self.values[p]).collect()))
    }
}

/// Complex vector per node.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    pub vx: Vec<Complex64>,
    pub vy: Vec<Complex64>,
}

impl VectorField {
    pub fn new(grid: GridSpec, vx: Vec<Complex64>, vy: Vec<Complex64>) -> Result<Self> {
        check_len("vector field x", grid.len(), vx.len())?;
        check_len("vector field y", grid.len(), vy.len())?;
        Ok(Self { grid, vx, vy })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> (Complex64, Complex64)) -> Self {
        let (vx, vy) = (0..grid.len())
            .map(|p| {
                let (x, y) = grid.coords(p);
                f(x, y)
            })
            .unzip();
        Self { grid, vx, vy }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Euclidean magnitude `sqrt(|vx|^2 + |vy|^2)` per node.
    pub fn magnitude(&self) -> RealField {
        RealField::from_vec(
            self.grid,
            self.vx
                .iter()
                .zip(&self.vy)
                .map(|(a, b)| libm::sqrt(a.norm_sqr() + b.norm_sqr()))
                .collect(),
        )
    }

    /// Largest ratio `|Im v| / |v|` over nodes with nonzero vectors.
    pub fn imaginary_fraction(&self) -> f64 {
        self.vx
            .iter()
            .zip(&self.vy)
            .filter_map(|(a, b)| {
                let m = libm::sqrt(a.norm_sqr() + b.norm_sqr());
                (m > 0.0).then(|| libm::sqrt(a.im * a.im + b.im * b.im) / m)
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceKind {
    Dirichlet,
    Neumann,
}

/// Complex value per boundary node, in the grid's canonical boundary order.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    grid: GridSpec,
    values: Vec<Complex64>,
    kind: TraceKind,
}

impl BoundaryTrace {
    pub fn new(grid: GridSpec, values: Vec<Complex64>, kind: TraceKind) -> Result<Self> {
        check_len("boundary trace", grid.boundary_len(), values.len())?;
        if let Some(index) = values
            .iter()
            .position(|v| !(v.re.is_finite() && v.im.is_finite()))
        {
            return Err(Error::NonFinite {
                what: "boundary trace",
                index,
            });
        }
        Ok(Self { grid, values, kind })
    }

    pub fn zeros(grid: GridSpec, kind: TraceKind) -> Self {
        Self::from_vec(grid, vec![Complex64::new(0.0, 0.0); grid.boundary_len()], kind)
    }

    /// Dirichlet trace sampled from a function of position.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> Complex64) -> Self {
        let values = grid
            .boundary_nodes()
            .iter()
            .map(|&p| {
                let (x, y) = grid.coords(p);
                f(x, y)
            })
            .collect();
        Self::from_vec(grid, values, TraceKind::Dirichlet)
    }

    pub(crate) fn from_vec(grid: GridSpec, values: Vec<Complex64>, kind: TraceKind) -> Self {
        debug_assert_eq!(grid.boundary_len(), values.len());
        Self { grid, values, kind }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    #[inline]
    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, c: Complex64) -> Self {
        Self::from_vec(
            self.grid,
            self.values.iter().map(|&z| z * c).collect(),
            self.kind,
        )
    }

    pub fn conj(&self) -> Self {
        Self::from_vec(
            self.grid,
            self.values.iter().map(|z| z.conj()).collect(),
            self.kind,
        )
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: Complex64, other: &Self, b: Complex64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        Ok(Self::from_vec(
            self.grid,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
            self.kind,
        ))
    }

    /// Value at the boundary node with storage index `p`.
    pub fn at_node(&self, p: usize) -> Option<Complex64> {
        self.grid
            .boundary_nodes()
            .iter()
            .position(|&q| q == p)
            .map(|k| self.values[k])
    }

    /// Scatter the trace into a full-grid vector (zero in the interior).
    pub fn scatter(&self) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        for (&p, &v) in self.grid.boundary_nodes().iter().zip(&self.values) {
            out[p] = v;
        }
        out
    }

    /// Piecewise-linear resampling along the boundary onto another grid of the
    /// same rectangle.
    pub fn resample(&self, target: &GridSpec) -> Result<Self> {
        let src = &self.grid;
        if (src.x0 - target.x0).abs() > 1e-12 * src.lx.max(1.0)
            || (src.y0 - target.y0).abs() > 1e-12 * src.ly.max(1.0)
            || (src.lx - target.lx).abs() > 1e-12 * src.lx
            || (src.ly - target.ly).abs() > 1e-12 * src.ly
        {
            return Err(Error::GridMismatch);
        }
        if src == target {
            return Ok(self.clone());
        }
        // Arc-length parameter of each source node around the perimeter.
        let perimeter = 2.0 * (src.lx + src.ly);
        let arc = |g: &GridSpec, p: usize| -> f64 {
            let (x, y) = g.coords(p);
            let (i, j) = g.ij(p);
            let (dx, dy) = (x - g.x0, y - g.y0);
            if j == 0 {
                dx
            } else if i == g.nx - 1 {
                g.lx + dy
            } else if j == g.ny - 1 {
                g.lx + g.ly + (g.lx - dx)
            } else {
                2.0 * g.lx + g.ly + (g.ly - dy)
            }
        };
        let src_nodes = src.boundary_nodes();
        let s: Vec<f64> = src_nodes.iter().map(|&p| arc(src, p)).collect();
        let m = s.len();
        let values = target
            .boundary_nodes()
            .iter()
            .map(|&p| {
                let t = arc(target, p);
                // s is increasing; find the bracketing segment (wrapping at the end).
                let k = match s.iter().position(|&sk| sk > t + 1e-14 * perimeter) {
                    Some(0) | None => m - 1,
                    Some(k) => k - 1,
                };
                let (s0, v0) = (s[k], self.values[k]);
                let (s1, v1) = if k + 1 < m {
                    (s[k + 1], self.values[k + 1])
                } else {
                    (perimeter, self.values[0])
                };
                let w = if s1 > s0 { (t - s0) / (s1 - s0) } else { 0.0 };
                v0 * (1.0 - w) + v1 * w
            })
            .collect();
        Ok(Self::from_vec(*target, values, self.kind))
    }
}

pub(crate) fn same_grid(a: &GridSpec, b: &GridSpec) -> Result<()> {
    if a != b {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

fn restriction_indices(fine: &GridSpec, coarse: &GridSpec) -> Result<Vec<usize>> {
    if fine.x0 != coarse.x0 || fine.y0 != coarse.y0 || fine.lx != coarse.lx || fine.ly != coarse.ly
    {
        return Err(Error::GridMismatch);
    }
    let fx = fine.nx - 1;
    let fy = fine.ny - 1;
    let cx = coarse.nx - 1;
    let cy = coarse.ny - 1;
    if fx % cx != 0 || fy % cy != 0 {
        return Err(Error::GridMismatch);
    }
    let (rx, ry) = (fx / cx, fy / cy);
    Ok((0..coarse.len())
        .map(|p| {
            let (i, j) = coarse.ij(p);
            fine.index(i * rx, j * ry)
        })
        .collect())
}
