#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod data;
pub mod direct;
pub mod error;
pub mod field;
pub mod gamma;
pub mod grid;
pub mod helmholtz;
pub mod linearize;
pub mod ops;
pub mod opt;
pub mod phantom;
pub mod sparse;

pub use error::{Error, Result};
pub use field::{BoundaryTrace, ComplexField, RealField, TraceKind, VectorField};
pub use grid::GridSpec;
pub use num_complex::Complex64;
