//! FGRID v1 binary fields and CSV export.
//!
//! Layout, all little-endian: magic `FGRD`, version `u32`, `nx u32`, `ny u32`,
//! dtype `u8` (0 real64, 1 complex128), then `x0 y0 lx ly` as `f64`, then the
//! node values row by row (`x` fastest). Complex values are stored `re, im`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use shg_core::{BoundaryTrace, Complex64, ComplexField, GridSpec, RealField, TraceKind};

pub const MAGIC: &[u8; 4] = b"FGRD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 1 + 4 * 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    Real64 = 0,
    Complex128 = 1,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Values {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Values {
    pub fn dtype(&self) -> Dtype {
        match self {
            Values::Real(_) => Dtype::Real64,
            Values::Complex(_) => Dtype::Complex128,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Values::Real(v) => v.len(),
            Values::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded file. The header is kept raw because boundary traces are stored
/// as `m × 1` strips that are not valid computational grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Fgrid {
    pub nx: u32,
    pub ny: u32,
    pub x0: f64,
    pub y0: f64,
    pub lx: f64,
    pub ly: f64,
    pub values: Values,
}

#[derive(Debug, thiserror::Error)]
pub enum FgridError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not an FGRID file")]
    Magic,
    #[error("unsupported FGRID version {0}")]
    Version(u32),
    #[error("unknown dtype {0}")]
    Dtype(u8),
    #[error("payload has {got} bytes, header implies {expected}")]
    Payload { expected: usize, got: usize },
    #[error("expected {expected:?} data, found {found:?}")]
    WrongDtype { expected: Dtype, found: Dtype },
    #[error(transparent)]
    Core(#[from] shg_core::Error),
}

impl Fgrid {
    pub fn from_real(f: &RealField) -> Self {
        Self::with_grid(f.grid(), Values::Real(f.values().to_vec()))
    }

    pub fn from_complex(f: &ComplexField) -> Self {
        Self::with_grid(f.grid(), Values::Complex(f.values().to_vec()))
    }

    /// Trace as an `m × 1` strip parameterized by arc length around the boundary.
    pub fn from_trace(t: &BoundaryTrace) -> Self {
        let g = t.grid();
        Self {
            nx: t.values().len() as u32,
            ny: 1,
            x0: 0.0,
            y0: 0.0,
            lx: 2.0 * (g.lx + g.ly),
            ly: 0.0,
            values: Values::Complex(t.values().to_vec()),
        }
    }

    fn with_grid(g: &GridSpec, values: Values) -> Self {
        Self {
            nx: g.nx as u32,
            ny: g.ny as u32,
            x0: g.x0,
            y0: g.y0,
            lx: g.lx,
            ly: g.ly,
            values,
        }
    }

    pub fn grid(&self) -> Result<GridSpec, FgridError> {
        Ok(GridSpec::new(
            self.nx as usize,
            self.ny as usize,
            self.x0,
            self.y0,
            self.lx,
            self.ly,
        )?)
    }

    pub fn into_real(self) -> Result<RealField, FgridError> {
        let g = self.grid()?;
        match self.values {
            Values::Real(v) => Ok(RealField::new(g, v)?),
            Values::Complex(_) => Err(FgridError::WrongDtype {
                expected: Dtype::Real64,
                found: Dtype::Complex128,
            }),
        }
    }

    /// Real values, or moduli of complex ones, for display. NaN marks
    /// masked nodes and is kept.
    pub fn display_field(&self) -> Result<RealField, FgridError> {
        let mut f = RealField::zeros(self.grid()?);
        match &self.values {
            Values::Real(v) => f.values_mut().copy_from_slice(v),
            Values::Complex(v) => {
                for (o, z) in f.values_mut().iter_mut().zip(v) {
                    *o = z.norm();
                }
            }
        }
        Ok(f)
    }

    pub fn into_complex(self) -> Result<ComplexField, FgridError> {
        let g = self.grid()?;
        match self.values {
            Values::Complex(v) => Ok(ComplexField::new(g, v)?),
            Values::Real(_) => Err(FgridError::WrongDtype {
                expected: Dtype::Complex128,
                found: Dtype::Real64,
            }),
        }
    }

    /// Rebuild a trace on `grid`, whose boundary order the strip follows.
    pub fn into_trace(self, grid: GridSpec, kind: TraceKind) -> Result<BoundaryTrace, FgridError> {
        match self.values {
            Values::Complex(v) => Ok(BoundaryTrace::new(grid, v, kind)?),
            Values::Real(_) => Err(FgridError::WrongDtype {
                expected: Dtype::Complex128,
                found: Dtype::Real64,
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let width = match self.values.dtype() {
            Dtype::Real64 => 8,
            Dtype::Complex128 => 16,
        };
        let mut out = Vec::with_capacity(HEADER_LEN + width * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.nx.to_le_bytes());
        out.extend_from_slice(&self.ny.to_le_bytes());
        out.push(self.values.dtype() as u8);
        for v in [self.x0, self.y0, self.lx, self.ly] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.values {
            Values::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Values::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, FgridError> {
        if b.len() < HEADER_LEN || &b[..4] != MAGIC {
            return Err(FgridError::Magic);
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(FgridError::Version(version));
        }
        let (nx, ny) = (u32_at(8), u32_at(12));
        let dtype = b[16];
        let (x0, y0, lx, ly) = (f64_at(17), f64_at(25), f64_at(33), f64_at(41));
        let n = nx as usize * ny as usize;
        let body = &b[HEADER_LEN..];
        let values = match dtype {
            0 => {
                check_payload(n * 8, body.len())?;
                Values::Real(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
            }
            1 => {
                check_payload(n * 16, body.len())?;
                Values::Complex(
                    body.chunks_exact(16)
                        .map(|c| {
                            Complex64::new(
                                f64::from_le_bytes(c[..8].try_into().unwrap()),
                                f64::from_le_bytes(c[8..].try_into().unwrap()),
                            )
                        })
                        .collect(),
                )
            }
            d => return Err(FgridError::Dtype(d)),
        };
        Ok(Self { nx, ny, x0, y0, lx, ly, values })
    }

    pub fn write(&self, path: &Path) -> Result<(), FgridError> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, FgridError> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }

    /// One row per node: `x,y,re` or `x,y,re,im`.
    pub fn to_csv(&self) -> String {
        let nx = self.nx as usize;
        let step = |l: f64, n: u32| if n > 1 { l / (n - 1) as f64 } else { 0.0 };
        let (hx, hy) = (step(self.lx, self.nx), step(self.ly, self.ny));
        let coord = |p: usize| (self.x0 + (p % nx) as f64 * hx, self.y0 + (p / nx) as f64 * hy);
        let mut s = String::new();
        match &self.values {
            Values::Real(v) => {
                s.push_str("x,y,re\n");
                for (p, a) in v.iter().enumerate() {
                    let (x, y) = coord(p);
                    s.push_str(&format!("{x},{y},{a}\n"));
                }
            }
            Values::Complex(v) => {
                s.push_str("x,y,re,im\n");
                for (p, z) in v.iter().enumerate() {
                    let (x, y) = coord(p);
                    s.push_str(&format!("{x},{y},{},{}\n", z.re, z.im));
                }
            }
        }
        s
    }
}

fn check_payload(expected: usize, got: usize) -> Result<(), FgridError> {
    if expected != got {
        return Err(FgridError::Payload { expected, got });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn masked_values_survive_for_display() {
        let g = GridSpec::unit_square(4).unwrap();
        let mut f = RealField::constant(g, 2.0);
        f.values_mut()[5] = f64::NAN;
        let back = Fgrid::from_bytes(&Fgrid::from_real(&f).to_bytes()).unwrap();
        assert!(back.clone().into_real().is_err());
        let d = back.display_field().unwrap();
        assert!(d.values()[5].is_nan());
        assert_eq!(d.values()[4], 2.0);
    }

    #[test]
    fn header_layout() {
        let g = GridSpec::new(5, 3, 0.5, -1.0, 2.0, 1.0).unwrap();
        let f = RealField::from_fn(g, |x, y| x + 10.0 * y);
        let b = Fgrid::from_real(&f).to_bytes();
        assert_eq!(&b[..4], b"FGRD");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 3);
        assert_eq!(b[16], 0);
        assert_eq!(f64::from_le_bytes(b[17..25].try_into().unwrap()), 0.5);
        assert_eq!(b.len(), HEADER_LEN + 15 * 8);
        // Second node is (x0 + hx, y0).
        let second = f64::from_le_bytes(b[HEADER_LEN + 8..HEADER_LEN + 16].try_into().unwrap());
        assert_eq!(second, 1.0 - 10.0);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let g = GridSpec::unit_square(4).unwrap();
        let mut b = Fgrid::from_real(&RealField::zeros(g)).to_bytes();
        assert!(matches!(Fgrid::from_bytes(&b[..10]), Err(FgridError::Magic)));
        b.pop();
        assert!(matches!(Fgrid::from_bytes(&b), Err(FgridError::Payload { .. })));
        b[16] = 7;
        assert!(matches!(Fgrid::from_bytes(&b), Err(FgridError::Dtype(7))));
    }

    #[test]
    fn csv_columns() {
        let g = GridSpec::unit_square(3).unwrap();
        let c = Fgrid::from_complex(&ComplexField::constant(g, Complex64::new(1.0, -2.0))).to_csv();
        let lines: Vec<_> = c.lines().collect();
        assert_eq!(lines[0], "x,y,re,im");
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[2], "0.5,0,1,-2");
    }

    #[test]
    fn trace_strip_roundtrip() {
        let g = GridSpec::unit_square(5).unwrap();
        let t = BoundaryTrace::from_fn(g, |x, y| Complex64::new(x, y));
        let back = Fgrid::from_bytes(&Fgrid::from_trace(&t).to_bytes())
            .unwrap()
            .into_trace(g, TraceKind::Dirichlet)
            .unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(nx in 3usize..9, ny in 3usize..9, seed in any::<u64>(), complex in any::<bool>()) {
            let g = GridSpec::new(nx, ny, -0.25, 0.75, 1.5, 0.5).unwrap();
            let val = |p: usize| ((seed ^ p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) >> 11) as f64 * 1e-10 - 3.0;
            let f = if complex {
                Fgrid::from_complex(&ComplexField::new(g, (0..g.len()).map(|p| Complex64::new(val(p), -val(p + 99))).collect()).unwrap())
            } else {
                Fgrid::from_real(&RealField::new(g, (0..g.len()).map(val).collect()).unwrap())
            };
            let back = Fgrid::from_bytes(&f.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), f.to_bytes());
            prop_assert_eq!(back.grid().unwrap(), g);
        }
    }
}
