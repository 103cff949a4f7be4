//! Piecewise-constant and smooth test coefficients.

use crate::error::{Error, Result};
use crate::field::RealField;
use crate::grid::GridSpec;

/// Closed admissibility interval `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn check(&self, coefficient: &'static str, f: &RealField) -> Result<()> {
        let (min, max) = (f.min(), f.max());
        if min < self.lower || max > self.upper {
            return Err(Error::Admissibility {
                coefficient,
                lower: self.lower,
                upper: self.upper,
                min,
                max,
            });
        }
        Ok(())
    }
}

/// Additive inclusion on top of a constant background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inclusion {
    Disk {
        center: (f64, f64),
        radius: f64,
        amplitude: f64,
    },
    /// Axis-aligned square of side `2 * half_width`.
    Square {
        center: (f64, f64),
        half_width: f64,
        amplitude: f64,
    },
    /// `amplitude * exp(-|x - center|^2 / width^2)`.
    Gaussian {
        center: (f64, f64),
        width: f64,
        amplitude: f64,
    },
}

impl Inclusion {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        match *self {
            Inclusion::Disk {
                center: (cx, cy),
                radius,
                amplitude,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy < radius * radius {
                    amplitude
                } else {
                    0.0
                }
            }
            Inclusion::Square {
                center: (cx, cy),
                half_width,
                amplitude,
            } => {
                if (x - cx).abs() <= half_width && (y - cy).abs() <= half_width {
                    amplitude
                } else {
                    0.0
                }
            }
            Inclusion::Gaussian {
                center: (cx, cy),
                width,
                amplitude,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                amplitude * libm::exp(-(dx * dx + dy * dy) / (width * width))
            }
        }
    }
}

/// Background plus inclusions, rejected (not clamped) if it leaves `bounds`.
pub fn make_phantom(
    grid: GridSpec,
    coefficient: &'static str,
    background: f64,
    inclusions: &[Inclusion],
    bounds: Bounds,
) -> Result<RealField> {
    let f = RealField::from_fn(grid, |x, y| {
        background + inclusions.iter().map(|inc| inc.value(x, y)).sum::<f64>()
    });
    RealField::new(grid, f.into_values())
        .and_then(|f| bounds.check(coefficient, &f).map(|_| f))
}
