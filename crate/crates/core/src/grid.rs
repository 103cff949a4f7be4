//! Uniform tensor grid on an axis-aligned rectangle.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Edge of the rectangle, used to orient outward normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    /// Outward unit normal.
    pub fn normal(self) -> (f64, f64) {
        match self {
            Side::Bottom => (0.0, -1.0),
            Side::Right => (1.0, 0.0),
            Side::Top => (0.0, 1.0),
            Side::Left => (-1.0, 0.0),
        }
    }
}

/// Node layout of a rectangular domain `[x0, x0+lx] x [y0, y0+ly]`.
///
/// Values are stored row-major with `x` running fastest: node `(i, j)`
/// lives at `j * nx + i`. The boundary is the outermost ring of nodes,
/// enumerated counterclockwise from `(x0, y0)`: bottom edge left to right,
/// right edge upwards, top edge right to left, left edge downwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, lx: f64, ly: f64) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(Error::InvalidGrid(format!(
                "node counts must be at least 3 (got {nx} x {ny})"
            )));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "edge lengths must be positive and finite (got {lx}, {ly})"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self {
            nx,
            ny,
            x0,
            y0,
            lx,
            ly,
        })
    }

    /// `n x n` nodes on the unit square.
    pub fn unit_square(n: usize) -> Result<Self> {
        Self::new(n, n, 0.0, 0.0, 1.0, 1.0)
    }

    #[inline]
    pub fn hx(&self) -> f64 {
        self.lx / (self.nx - 1) as f64
    }

    #[inline]
    pub fn hy(&self) -> f64 {
        self.ly / (self.ny - 1) as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, p: usize) -> (usize, usize) {
        (p % self.nx, p / self.nx)
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.hx()
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.hy()
    }

    #[inline]
    pub fn coords(&self, p: usize) -> (f64, f64) {
        let (i, j) = self.ij(p);
        (self.x(i), self.y(j))
    }

    #[inline]
    pub fn is_boundary(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx - 1 || j == self.ny - 1
    }

    #[inline]
    pub fn is_boundary_index(&self, p: usize) -> bool {
        let (i, j) = self.ij(p);
        self.is_boundary(i, j)
    }

    pub fn boundary_len(&self) -> usize {
        2 * (self.nx + self.ny) - 4
    }

    pub fn interior_len(&self) -> usize {
        (self.nx - 2) * (self.ny - 2)
    }

    /// Boundary node indices in canonical (counterclockwise) order.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        let (nx, ny) = (self.nx, self.ny);
        let mut out = Vec::with_capacity(self.boundary_len());
        for i in 0..nx {
            out.push(self.index(i, 0));
        }
        for j in 1..ny {
            out.push(self.index(nx - 1, j));
        }
        for i in (0..nx - 1).rev() {
            out.push(self.index(i, ny - 1));
        }
        for j in (1..ny - 1).rev() {
            out.push(self.index(0, j));
        }
        out
    }

    /// Interior node indices in storage order.
    pub fn interior_nodes(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.interior_len());
        for j in 1..self.ny - 1 {
            for i in 1..self.nx - 1 {
                out.push(self.index(i, j));
            }
        }
        out
    }

    /// Edges a boundary node belongs to; two for corners, none for interior nodes.
    pub fn sides(&self, i: usize, j: usize) -> ([Option<Side>; 2], usize) {
        let mut sides = [None, None];
        let mut n = 0;
        let mut push = |s: Side| {
            sides[n] = Some(s);
            n += 1;
        };
        if j == 0 {
            push(Side::Bottom);
        }
        if i == self.nx - 1 {
            push(Side::Right);
        }
        if j == self.ny - 1 {
            push(Side::Top);
        }
        if i == 0 {
            push(Side::Left);
        }
        (sides, n)
    }

    /// Mean outward normal at a boundary node (corners average their two edges).
    pub fn outward_normal(&self, i: usize, j: usize) -> (f64, f64) {
        let (sides, n) = self.sides(i, j);
        if n == 0 {
            return (0.0, 0.0);
        }
        let mut nx = 0.0;
        let mut ny = 0.0;
        for s in sides.iter().flatten() {
            let (a, b) = s.normal();
            nx += a;
            ny += b;
        }
        (nx / n as f64, ny / n as f64)
    }

    /// Grid with `factor` times as many cells per axis over the same domain.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("refinement factor must be positive".into()));
        }
        Self::new(
            (self.nx - 1) * factor + 1,
            (self.ny - 1) * factor + 1,
            self.x0,
            self.y0,
            self.lx,
            self.ly,
        )
    }

    /// Trapezoidal quadrature weight of node `(i, j)`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let wx = if i == 0 || i == self.nx - 1 { 0.5 } else { 1.0 };
        let wy = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
        wx * wy * self.hx() * self.hy()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len())
            .map(|p| {
                let (i, j) = self.ij(p);
                self.weight(i, j)
            })
            .collect()
    }
}
