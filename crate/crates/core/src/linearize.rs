//! First and second order linearization in the boundary amplitude `ε`.
//!
//! For data `(εg1 + ½ε²g2, εh1 + ½ε²h2)` the coupled solution expands as
//! `u_ε = εu1 + ½ε²u2 + O(ε³)` and the internal data as
//! `H_ε = ½ε²H2 + ⅙ε³H3 + O(ε⁴)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField, TraceKind};
use crate::helmholtz::{potentials, solve_coupled, BcKind, CoupledOptions, MediumSet, ScalarOperator, ScalarOptions};

/// The factorized Dirichlet operators `Δ + q1` and `Δ + q2`.
#[derive(Debug)]
pub struct LinearOps {
    pub a1: ScalarOperator,
    pub a2: ScalarOperator,
    pub k: f64,
}

impl LinearOps {
    pub fn new(media: &MediumSet, k: f64, opts: ScalarOptions) -> Result<Self> {
        let (q1, q2) = potentials(media, k)?;
        Ok(Self {
            a1: ScalarOperator::new(&q1, BcKind::Dirichlet, k, opts)?,
            a2: ScalarOperator::new(&q2, BcKind::Dirichlet, k, opts)?,
            k,
        })
    }

    pub fn first_order(
        &self,
        g1: &BoundaryTrace,
        h1: Option<&BoundaryTrace>,
    ) -> Result<(ComplexField, ComplexField)> {
        let zero = ComplexField::zeros(*self.a1.grid());
        Ok((self.a1.solve(&zero, Some(g1))?, self.a2.solve(&zero, h1)?))
    }

    pub fn second_order(
        &self,
        chi2: &RealField,
        u1: &ComplexField,
        v1: &ComplexField,
        g2: Option<&BoundaryTrace>,
        h2: Option<&BoundaryTrace>,
    ) -> Result<(ComplexField, ComplexField)> {
        let (su, sv) = second_order_sources(self.k, chi2, u1, v1)?;
        Ok((self.a1.solve(&su, g2)?, self.a2.solve(&sv, h2)?))
    }
}

/// `(−2k²γ u1* v1, −8k²γ u1²)`.
pub fn second_order_sources(
    k: f64,
    chi2: &RealField,
    u1: &ComplexField,
    v1: &ComplexField,
) -> Result<(ComplexField, ComplexField)> {
    let g = *u1.grid();
    same_grid(&g, v1.grid())?;
    same_grid(&g, chi2.grid())?;
    let k2 = k * k;
    let (a, b): (Vec<_>, Vec<_>) = (0..g.len())
        .map(|p| {
            let (u, v, c) = (u1.values()[p], v1.values()[p], chi2.values()[p]);
            (-(u.conj() * v) * (2.0 * k2 * c), -(u * u) * (8.0 * k2 * c))
        })
        .unzip();
    Ok((ComplexField::new(g, a)?, ComplexField::new(g, b)?))
}

pub fn solve_first_order(
    media: &MediumSet,
    k: f64,
    g1: &BoundaryTrace,
    h1: Option<&BoundaryTrace>,
) -> Result<(ComplexField, ComplexField)> {
    LinearOps::new(media, k, ScalarOptions::default())?.first_order(g1, h1)
}

pub fn solve_second_order(
    media: &MediumSet,
    k: f64,
    u1: &ComplexField,
    v1: &ComplexField,
    g2: Option<&BoundaryTrace>,
    h2: Option<&BoundaryTrace>,
) -> Result<(ComplexField, ComplexField)> {
    LinearOps::new(media, k, ScalarOptions::default())?.second_order(&media.chi2, u1, v1, g2, h2)
}

/// `u1, v1, u2, v2` with the data derivatives `H2, H3`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedBundle {
    pub u1: ComplexField,
    pub v1: ComplexField,
    pub u2: ComplexField,
    pub v2: ComplexField,
    pub h2: RealField,
    pub h3: RealField,
}

impl LinearizedBundle {
    #[allow(clippy::too_many_arguments)]
    pub fn compute(
        media: &MediumSet,
        k: f64,
        g1: &BoundaryTrace,
        h1: Option<&BoundaryTrace>,
        g2: Option<&BoundaryTrace>,
        h2: Option<&BoundaryTrace>,
        opts: ScalarOptions,
    ) -> Result<Self> {
        let ops = LinearOps::new(media, k, opts)?;
        let (u1, v1) = ops.first_order(g1, h1)?;
        let (u2, v2) = ops.second_order(&media.chi2, &u1, &v1, g2, h2)?;
        let (h2f, h3f) = data_orders_fields(&u1, &v1, &u2, &v2, &media.gamma_g, &media.sigma)?;
        Ok(Self {
            u1,
            v1,
            u2,
            v2,
            h2: h2f,
            h3: h3f,
        })
    }
}

/// Largest tolerated imaginary part in `H3` relative to its size.
const REALNESS_TOL: f64 = 1e-12;

fn data_orders_fields(
    u1: &ComplexField,
    v1: &ComplexField,
    u2: &ComplexField,
    v2: &ComplexField,
    gamma_g: &RealField,
    sigma: &RealField,
) -> Result<(RealField, RealField)> {
    let g = *u1.grid();
    for f in [v1, u2, v2] {
        same_grid(&g, f.grid())?;
    }
    same_grid(&g, gamma_g.grid())?;
    same_grid(&g, sigma.grid())?;
    let mut h2 = Vec::with_capacity(g.len());
    let mut h3 = Vec::with_capacity(g.len());
    for p in 0..g.len() {
        let gs = gamma_g.values()[p] * sigma.values()[p];
        let (a1, b1, a2, b2) = (u1.values()[p], v1.values()[p], u2.values()[p], v2.values()[p]);
        h2.push(2.0 * gs * (a1.norm_sqr() + b1.norm_sqr()));
        let z: Complex64 =
            (a1.conj() * a2 + a1 * a2.conj() + b1.conj() * b2 + b1 * b2.conj()) * (3.0 * gs);
        if z.im.abs() > REALNESS_TOL * z.norm().max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidArgument(format!(
                "third-order data has an imaginary residue {:e} at node {p}",
                z.im
            )));
        }
        h3.push(z.re);
    }
    Ok((RealField::new(g, h2)?, RealField::new(g, h3)?))
}

/// `(H1, H2, H3)` with `H1 ≡ 0`.
pub fn data_orders(
    bundle: &LinearizedBundle,
    gamma_g: &RealField,
    sigma: &RealField,
) -> Result<(RealField, RealField, RealField)> {
    let (h2, h3) = data_orders_fields(&bundle.u1, &bundle.v1, &bundle.u2, &bundle.v2, gamma_g, sigma)?;
    Ok((RealField::zeros(*gamma_g.grid()), h2, h3))
}

/// Boundary data and amplitudes of an `ε` family.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsFamilySpec {
    pub g1: BoundaryTrace,
    pub g2: Option<BoundaryTrace>,
    pub h1: Option<BoundaryTrace>,
    pub h2: Option<BoundaryTrace>,
    pub eps: Vec<f64>,
}

impl EpsFamilySpec {
    pub fn validate(&self, cap: f64) -> Result<()> {
        if self.eps.is_empty() {
            return Err(Error::InvalidArgument("empty ε list".into()));
        }
        if !self.eps.windows(2).all(|w| w[1] < w[0]) || !self.eps.iter().all(|&e| e > 0.0) {
            return Err(Error::InvalidArgument("ε list must be positive and strictly decreasing".into()));
        }
        if self.eps[0] >= cap {
            return Err(Error::InvalidArgument(format!(
                "largest ε {} is not below the small-data cap {cap}",
                self.eps[0]
            )));
        }
        Ok(())
    }
}

/// One row of the remainder table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemainderRow {
    pub eps: f64,
    pub mu: f64,
    pub nu: f64,
    pub rho: f64,
    pub data: f64,
    /// Whether each of `mu, nu, rho` sits on the discrete floor.
    pub floored: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<RemainderRow>,
    pub slope_mu: Option<f64>,
    pub slope_nu: Option<f64>,
    pub slope_rho: Option<f64>,
    /// Order of `‖H_ε‖∞` in `ε`.
    pub slope_data: Option<f64>,
    /// Every remainder at the floor: the map is linear to rounding.
    pub exact_linearity: bool,
    pub pass: bool,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eps,mu_inf,nu_inf,rho_inf,h_inf\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:e},{:e},{:e},{:e},{:e}", r.eps, r.mu, r.nu, r.rho, r.data);
        }
        s
    }

    pub fn summary(&self) -> String {
        let f = |x: Option<f64>| x.map_or(String::from("n/a"), |v| format!("{v:.3}"));
        format!(
            "slope(mu) = {}\nslope(nu) = {}\nslope(rho) = {}\nslope(|H|) = {}\nexact linearity: {}\npass: {}\n",
            f(self.slope_mu),
            f(self.slope_nu),
            f(self.slope_rho),
            f(self.slope_data),
            self.exact_linearity,
            self.pass
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertifyOptions {
    pub coupled: CoupledOptions,
    pub min_slope_field: f64,
    pub min_slope_data_remainder: f64,
    pub min_slope_data: f64,
    /// Relative level below which a remainder counts as floored.
    pub floor: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        let coupled = CoupledOptions::default();
        Self {
            coupled,
            min_slope_field: 2.7,
            min_slope_data_remainder: 3.7,
            min_slope_data: 1.9,
            floor: 10.0 * coupled.scalar.res_tol.max(coupled.fp_tol),
        }
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (libm::log(x), libm::log(y));
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let d = n * sxx - sx * sx;
    (d > 0.0).then(|| (n * sxy - sx * sy) / d)
}

fn sup(f: &[Complex64]) -> f64 {
    f.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Remainder table and fitted orders for an `ε` family of coupled solves.
pub fn certify_expansion(
    media: &MediumSet,
    k: f64,
    family: &EpsFamilySpec,
    opts: &CertifyOptions,
) -> Result<ConvergenceReport> {
    family.validate(opts.coupled.small_data_cap)?;
    let grid = *media.grid();
    let bundle = LinearizedBundle::compute(
        media,
        k,
        &family.g1,
        family.h1.as_ref(),
        family.g2.as_ref(),
        family.h2.as_ref(),
        opts.coupled.scalar,
    )?;
    let zero = BoundaryTrace::zeros(grid, TraceKind::Dirichlet);
    let one = Complex64::new(1.0, 0.0);
    let combine = |a: Option<&BoundaryTrace>, b: Option<&BoundaryTrace>, e: f64| -> Result<BoundaryTrace> {
        let a = a.unwrap_or(&zero);
        let b = b.unwrap_or(&zero);
        a.combine(one * e, b, one * (0.5 * e * e))
    };
    let mut rows = Vec::with_capacity(family.eps.len());
    for &e in &family.eps {
        let g = combine(Some(&family.g1), family.g2.as_ref(), e)?;
        let h = combine(family.h1.as_ref(), family.h2.as_ref(), e)?;
        let s = solve_coupled(media, k, &g, &h, &opts.coupled)?;
        let h_eps = crate::data::internal_data(&s.u, &s.v, &media.gamma_g, &media.sigma)?;
        let (mut mu, mut nu) = (Vec::with_capacity(grid.len()), Vec::with_capacity(grid.len()));
        let mut rho: f64 = 0.0;
        for p in 0..grid.len() {
            mu.push(s.u.values()[p] - bundle.u1.values()[p] * e - bundle.u2.values()[p] * (0.5 * e * e));
            nu.push(s.v.values()[p] - bundle.v1.values()[p] * e - bundle.v2.values()[p] * (0.5 * e * e));
            let r = h_eps.values()[p]
                - 0.5 * e * e * bundle.h2.values()[p]
                - e * e * e / 6.0 * bundle.h3.values()[p];
            rho = rho.max(r.abs());
        }
        let (mu, nu) = (sup(&mu), sup(&nu));
        let data = h_eps.values().iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let floored = [
            mu <= opts.floor * s.u.sup_norm(),
            nu <= opts.floor * s.v.sup_norm(),
            rho <= opts.floor * data,
        ];
        rows.push(RemainderRow {
            eps: e,
            mu,
            nu,
            rho,
            data,
            floored,
        });
    }
    let fit = |idx: usize, get: fn(&RemainderRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| !r.floored[idx] && get(r) > 0.0)
            .map(|r| (r.eps, get(r)))
            .collect();
        loglog_slope(&pts)
    };
    let slope_mu = fit(0, |r| r.mu);
    let slope_nu = fit(1, |r| r.nu);
    let slope_rho = fit(2, |r| r.rho);
    let data_pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.data > 0.0).map(|r| (r.eps, r.data)).collect();
    let slope_data = loglog_slope(&data_pts);
    let exact_linearity = rows.iter().all(|r| r.floored[0] && r.floored[1]);
    let ok = |s: Option<f64>, min: f64| s.is_none_or(|v| v >= min);
    let pass = ok(slope_mu, opts.min_slope_field)
        && ok(slope_nu, opts.min_slope_field)
        && ok(slope_rho, opts.min_slope_data_remainder)
        && slope_data.is_some_and(|v| v >= opts.min_slope_data)
        && (exact_linearity || slope_mu.is_some());
    Ok(ConvergenceReport {
        rows,
        slope_mu,
        slope_nu,
        slope_rho,
        slope_data,
        exact_linearity,
        pass,
    })
}
