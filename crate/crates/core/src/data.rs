//! Synthetic measurements: internal data, boundary traces, polarized data
//! and noise.

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField, TraceKind};
use crate::grid::GridSpec;
use crate::helmholtz::{
    potentials, solve_coupled, BcKind, CoupledOptions, MediumSet, OneWayOperators, ScalarOperator,
    ScalarOptions, VBoundary,
};
use crate::ops::normal_derivative;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// `H = Γσ(|u|² + |v|²)`.
pub fn internal_data(
    u: &ComplexField,
    v: &ComplexField,
    gamma_g: &RealField,
    sigma: &RealField,
) -> Result<RealField> {
    let g = u.grid();
    same_grid(g, v.grid())?;
    same_grid(g, gamma_g.grid())?;
    same_grid(g, sigma.grid())?;
    let values = (0..g.len())
        .map(|p| {
            gamma_g.values()[p]
                * sigma.values()[p]
                * (u.values()[p].norm_sqr() + v.values()[p].norm_sqr())
        })
        .collect();
    RealField::new(*g, values)
}

/// Outward normal derivatives `(∂ν u, ∂ν v)`.
pub fn neumann_data(u: &ComplexField, v: &ComplexField) -> Result<(BoundaryTrace, BoundaryTrace)> {
    same_grid(u.grid(), v.grid())?;
    Ok((normal_derivative(u)?, normal_derivative(v)?))
}

/// Cross term from four intensity measurements.
///
/// With `h1, h2, h_sum, h_isum` the intensities for `g1, g2, g1 + g2` and
/// `g1 + i g2`, the combination `½(h_sum + i h_isum − (1+i)(h1 + h2))` equals
/// `c u1 u2*` for the common factor `c`. The conjugate `c u2 u1*` is returned,
/// so `polarize(h1, h1, ..)` is `c|u1|²`. Passing the factor divides it out.
pub fn polarize(
    h1: &RealField,
    h2: &RealField,
    h_sum: &RealField,
    h_isum: &RealField,
    gamma_sigma: Option<&RealField>,
) -> Result<ComplexField> {
    let g = h1.grid();
    for f in [h2, h_sum, h_isum] {
        same_grid(g, f.grid())?;
    }
    if let Some(c) = gamma_sigma {
        same_grid(g, c.grid())?;
    }
    let one_i = Complex64::new(1.0, 1.0);
    let values = (0..g.len())
        .map(|p| {
            let w = (Complex64::new(h_sum.values()[p], h_isum.values()[p])
                - one_i * (h1.values()[p] + h2.values()[p]))
                * 0.5;
            let e = w.conj();
            match gamma_sigma {
                Some(c) => e / c.values()[p],
                None => e,
            }
        })
        .collect();
    ComplexField::new(*g, values)
}

/// `H (1 + level ζ)` with i.i.d. standard normal `ζ`, drawn from the ChaCha
/// stream `stream` of `seed`.
pub fn add_noise(h: &RealField, level: f64, seed: u64, stream: u64) -> Result<RealField> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative (got {level})"
        )));
    }
    if level == 0.0 {
        return Ok(h.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let values = h
        .values()
        .iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(&mut rng);
            x * (1.0 + level * z)
        })
        .collect();
    RealField::new(*h.grid(), values)
}

/// Boundary source shapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// `a exp(ik d·x)` with `d = (cos θ, sin θ)`.
    PlaneWave { angle: f64, amplitude: Complex64 },
    /// `a exp(−|x − c|² / w²)` restricted to the boundary.
    Bump {
        center: (f64, f64),
        width: f64,
        amplitude: Complex64,
    },
    Constant(Complex64),
}

impl Pattern {
    pub fn trace(&self, grid: GridSpec, k: f64) -> BoundaryTrace {
        match *self {
            Pattern::PlaneWave { angle, amplitude } => {
                let (s, c) = (libm::sin(angle), libm::cos(angle));
                BoundaryTrace::from_fn(grid, |x, y| amplitude * (I * (k * (c * x + s * y))).exp())
            }
            Pattern::Bump {
                center: (cx, cy),
                width,
                amplitude,
            } => BoundaryTrace::from_fn(grid, |x, y| {
                let d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
                amplitude * libm::exp(-d2 / (width * width))
            }),
            Pattern::Constant(c) => BoundaryTrace::from_fn(grid, |_, _| c),
        }
    }
}

/// Boundary sources `(g_j, h_j)`; `h_j = None` means zero.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationSet {
    pub entries: Vec<(BoundaryTrace, Option<BoundaryTrace>)>,
}

impl IlluminationSet {
    pub fn new(entries: Vec<(BoundaryTrace, Option<BoundaryTrace>)>) -> Result<Self> {
        let Some((g0, _)) = entries.first() else {
            return Err(Error::InvalidArgument("at least one illumination is required".into()));
        };
        let grid = *g0.grid();
        for (g, h) in &entries {
            same_grid(&grid, g.grid())?;
            if let Some(h) = h {
                same_grid(&grid, h.grid())?;
            }
        }
        Ok(Self { entries })
    }

    /// Illuminations from `g` only.
    pub fn from_g(gs: Vec<BoundaryTrace>) -> Result<Self> {
        Self::new(gs.into_iter().map(|g| (g, None)).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn grid(&self) -> &GridSpec {
        self.entries[0].0.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardModel {
    Coupled,
    #[default]
    OneWay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub model: ForwardModel,
    pub noise_level: f64,
    pub seed: u64,
    /// Solve on a grid refined by this factor and restrict (1 disables).
    pub fine_factor: usize,
    /// Also produce `E_j` from the four-pattern protocol.
    pub polarized: bool,
    /// Also produce Neumann traces.
    pub neumann: bool,
    pub coupled: CoupledOptions,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            model: ForwardModel::OneWay,
            noise_level: 0.0,
            seed: 0,
            fine_factor: 1,
            polarized: false,
            neumann: false,
            coupled: CoupledOptions::default(),
        }
    }
}

/// Measurements for one illumination set.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub h: Vec<RealField>,
    pub e: Option<Vec<ComplexField>>,
    pub j_u: Option<Vec<BoundaryTrace>>,
    pub j_v: Option<Vec<BoundaryTrace>>,
    pub noise_level: f64,
    pub seed: u64,
    pub model: ForwardModel,
    pub fine_factor: usize,
}

/// Noise stream of the `m`-th polarization intensity of illumination `j`.
/// Plain `H_j` use stream `j`.
fn polar_stream(j: usize, m: usize) -> u64 {
    (1u64 << 32) + 4 * j as u64 + m as u64
}

/// Solve every illumination and collect the requested measurements.
pub fn synthesize(media: &MediumSet, k: f64, ill: &IlluminationSet, opts: &SynthOptions) -> Result<DataSet> {
    let coarse = *media.grid();
    same_grid(&coarse, ill.grid())?;
    if opts.fine_factor == 0 {
        return Err(Error::InvalidArgument("fine_factor must be at least 1".into()));
    }
    let fine = coarse.refine(opts.fine_factor)?;
    let fm = if opts.fine_factor == 1 {
        media.clone()
    } else {
        refine_media(media, &fine)?
    };
    let up = |t: &BoundaryTrace| t.resample(&fine);
    let down_trace = |t: &BoundaryTrace| t.resample(&coarse);

    let mut h = Vec::with_capacity(ill.len());
    let mut j_u = Vec::new();
    let mut j_v = Vec::new();
    let one_way = match opts.model {
        ForwardModel::OneWay => Some(OneWayOperators::new(
            &fm.eta,
            &fm.sigma,
            k,
            VBoundary::Robin,
            opts.coupled.scalar,
        )?),
        ForwardModel::Coupled => None,
    };
    for (j, (g, hj)) in ill.entries.iter().enumerate() {
        let gf = up(g)?;
        let (u, v) = match &one_way {
            Some(ops) => ops.solve(&fm.chi2, &gf)?,
            None => {
                let hf = match hj {
                    Some(t) => up(t)?,
                    None => BoundaryTrace::zeros(fine, TraceKind::Dirichlet),
                };
                let s = solve_coupled(&fm, k, &gf, &hf, &opts.coupled)?;
                (s.u, s.v)
            }
        };
        let hval = internal_data(&u, &v, &fm.gamma_g, &fm.sigma)?.restrict(&coarse)?;
        h.push(add_noise(&hval, opts.noise_level, opts.seed, j as u64)?);
        if opts.neumann {
            let (a, b) = neumann_data(&u, &v)?;
            j_u.push(down_trace(&a)?);
            j_v.push(down_trace(&b)?);
        }
    }

    let e = if opts.polarized {
        Some(polarized_data(&fm, k, ill, &coarse, opts)?)
    } else {
        None
    };
    Ok(DataSet {
        h,
        e,
        j_u: opts.neumann.then_some(j_u),
        j_v: opts.neumann.then_some(j_v),
        noise_level: opts.noise_level,
        seed: opts.seed,
        model: opts.model,
        fine_factor: opts.fine_factor,
    })
}

/// `E_j = Γσ u_j u_1*` under the linear `u` model, via four intensities each.
fn polarized_data(
    fm: &MediumSet,
    k: f64,
    ill: &IlluminationSet,
    coarse: &GridSpec,
    opts: &SynthOptions,
) -> Result<Vec<ComplexField>> {
    let fine = *fm.grid();
    let (q1, _) = potentials(fm, k)?;
    let a1 = ScalarOperator::new(&q1, BcKind::Dirichlet, k, opts.coupled.scalar)?;
    let zero = ComplexField::zeros(fine);
    let none = ComplexField::zeros(fine);
    let intensity = |g: &BoundaryTrace, j: usize, m: usize| -> Result<RealField> {
        let u = a1.solve(&zero, Some(&g.resample(&fine)?))?;
        let h = internal_data(&u, &none, &fm.gamma_g, &fm.sigma)?.restrict(coarse)?;
        add_noise(&h, opts.noise_level, opts.seed, polar_stream(j, m))
    };
    let one = Complex64::new(1.0, 0.0);
    let g1 = &ill.entries[0].0;
    let h1 = intensity(g1, 0, 0)?;
    let mut out = Vec::with_capacity(ill.len());
    for (j, (gj, _)) in ill.entries.iter().enumerate() {
        if j == 0 {
            out.push(h1.to_complex());
            continue;
        }
        let hj = intensity(gj, j, 0)?;
        let hs = intensity(&g1.combine(one, gj, one)?, j, 1)?;
        let hi = intensity(&g1.combine(one, gj, I)?, j, 2)?;
        out.push(polarize(&h1, &hj, &hs, &hi, None)?);
    }
    Ok(out)
}

/// Coefficients sampled onto a refined grid by bilinear interpolation.
pub fn refine_media(media: &MediumSet, fine: &GridSpec) -> Result<MediumSet> {
    let f = |r: &RealField| interpolate(r, fine);
    MediumSet::new(
        f(&media.gamma_g)?,
        f(&media.eta)?,
        f(&media.sigma)?,
        f(&media.chi2)?,
        media.bounds,
        media.policy,
    )
}

/// Bilinear interpolation of a nodal field onto another grid of the same
/// rectangle.
pub fn interpolate(r: &RealField, target: &GridSpec) -> Result<RealField> {
    let s = r.grid();
    if s.x0 != target.x0 || s.y0 != target.y0 || s.lx != target.lx || s.ly != target.ly {
        return Err(Error::GridMismatch);
    }
    let values = (0..target.len())
        .map(|p| {
            let (x, y) = target.coords(p);
            let fx = ((x - s.x0) / s.hx()).clamp(0.0, (s.nx - 1) as f64);
            let fy = ((y - s.y0) / s.hy()).clamp(0.0, (s.ny - 1) as f64);
            let i = (libm::floor(fx) as usize).min(s.nx - 2);
            let j = (libm::floor(fy) as usize).min(s.ny - 2);
            let (tx, ty) = (fx - i as f64, fy - j as f64);
            r.at(i, j) * (1.0 - tx) * (1.0 - ty)
                + r.at(i + 1, j) * tx * (1.0 - ty)
                + r.at(i, j + 1) * (1.0 - tx) * ty
                + r.at(i + 1, j + 1) * tx * ty
        })
        .collect();
    RealField::new(*target, values)
}

/// Forward solutions for every illumination of the one-way model.
pub fn one_way_fields(
    media: &MediumSet,
    k: f64,
    gs: &[BoundaryTrace],
    opts: ScalarOptions,
) -> Result<Vec<(ComplexField, ComplexField)>> {
    let ops = OneWayOperators::new(&media.eta, &media.sigma, k, VBoundary::Robin, opts)?;
    gs.iter().map(|g| ops.solve(&media.chi2, g)).collect()
}
