//! Least-squares reconstructions on the one-way Robin model with adjoint
//! gradients.
//!
//! Everything is discretize-then-optimize: the objective is the discrete
//! functional on nodal values and the gradient is its exact derivative,
//! obtained from transpose solves with the forward factorizations.
//!
//! With `S = |u|² + |v|²` and a misfit whose derivative in `S_j` is `c_j`,
//! the adjoints are
//!
//! ```text
//! A2ᵀ λ_j = c_j v_j*
//! A1ᵀ μ_j = c_j u_j* − 8k²γ u_j λ_j      (last term on interior rows)
//! ```
//!
//! and at interior nodes
//!
//! ```text
//! ∂γ = 2 Re Σ −4k² λ_j u_j²
//! ∂η = 2 Re Σ (−k² μ_j u_j − 4k² λ_j v_j)
//! ∂σ = 2 Re Σ (−ik μ_j u_j − 2ik λ_j v_j)
//! ```

pub mod check;
pub mod lbfgs;

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{same_grid, BoundaryTrace, ComplexField, RealField};
use crate::grid::GridSpec;
use crate::helmholtz::{MediumSet, OneWayOperators, ScalarOptions, VBoundary};
use crate::phantom::Bounds;

pub use check::{gradient_check, GradientCheckReport, Probe};
pub use lbfgs::{bfgs_minimize, FnObjective, GuardOptions, IterRecord, LbfgsOptions, Objective, OptTrace, StopReason};

/// Coefficients that can be optimization variables. `Γ` never is; it is
/// recovered afterwards by averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coefficient {
    Eta,
    Sigma,
    Chi2,
}

impl Coefficient {
    pub fn name(self) -> &'static str {
        match self {
            Coefficient::Eta => "eta",
            Coefficient::Sigma => "sigma",
            Coefficient::Chi2 => "chi2",
        }
    }

    fn field(self, m: &MediumSet) -> &RealField {
        match self {
            Coefficient::Eta => &m.eta,
            Coefficient::Sigma => &m.sigma,
            Coefficient::Chi2 => &m.chi2,
        }
    }

    fn field_mut(self, m: &mut MediumSet) -> &mut RealField {
        match self {
            Coefficient::Eta => &mut m.eta,
            Coefficient::Sigma => &mut m.sigma,
            Coefficient::Chi2 => &mut m.chi2,
        }
    }

    fn bounds(self, m: &MediumSet) -> Bounds {
        match self {
            Coefficient::Eta => m.bounds.eta,
            Coefficient::Sigma => m.bounds.sigma,
            Coefficient::Chi2 => m.bounds.chi2,
        }
    }
}

/// Data misfit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Misfit {
    /// `½Σ_j ‖Γσ S_j − H_j‖²` with `Γ` known.
    Absolute,
    /// `½Σ_{j≥2} ‖S_j/S_1 − H_j/H_1‖²`, independent of `Γ`.
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    /// `γ` alone.
    I,
    /// `(η, σ, γ)` with `Γ` known.
    II,
    /// `(η, γ)` from ratios, then `Γ`.
    III,
    /// `(η, σ, γ)` from ratios, then `Γ`.
    IV,
}

impl Experiment {
    pub fn active(self) -> &'static [Coefficient] {
        use Coefficient::*;
        match self {
            Experiment::I => &[Chi2],
            Experiment::II | Experiment::IV => &[Eta, Sigma, Chi2],
            Experiment::III => &[Eta, Chi2],
        }
    }

    pub fn misfit(self) -> Misfit {
        match self {
            Experiment::I | Experiment::II => Misfit::Absolute,
            Experiment::III | Experiment::IV => Misfit::Ratio,
        }
    }

    pub fn recovers_gamma_g(self) -> bool {
        self.misfit() == Misfit::Ratio
    }

    /// `β = 1e-7` on every active coefficient.
    pub fn default_reg(self) -> RegParams {
        let mut r = RegParams::default();
        for &c in self.active() {
            r.set(c, 1e-7);
        }
        r
    }
}

/// Weights of `½β‖∇f‖²` per coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegParams {
    pub eta: f64,
    pub sigma: f64,
    pub chi2: f64,
}

impl RegParams {
    pub fn get(&self, c: Coefficient) -> f64 {
        match c {
            Coefficient::Eta => self.eta,
            Coefficient::Sigma => self.sigma,
            Coefficient::Chi2 => self.chi2,
        }
    }

    pub fn set(&mut self, c: Coefficient, beta: f64) {
        match c {
            Coefficient::Eta => self.eta = beta,
            Coefficient::Sigma => self.sigma = beta,
            Coefficient::Chi2 => self.chi2 = beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for b in [self.eta, self.sigma, self.chi2] {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(alloc::format!("regularization weight {b}")));
            }
        }
        Ok(())
    }
}

/// `½‖∇f‖²` on grid edges with trapezoidal weights; its discrete gradient
/// carries no boundary term.
pub fn gradient_energy(f: &RealField) -> (f64, Vec<f64>) {
    let g = *f.grid();
    let v = f.values();
    let (hx, hy) = (g.hx(), g.hy());
    let mut e = 0.0;
    let mut grad = vec![0.0; g.len()];
    let mut edge = |p: usize, q: usize, w: f64| {
        let d = v[q] - v[p];
        e += 0.5 * w * d * d;
        grad[q] += w * d;
        grad[p] -= w * d;
    };
    for j in 0..g.ny {
        let wj = if j == 0 || j == g.ny - 1 { 0.5 } else { 1.0 };
        for i in 0..g.nx - 1 {
            edge(g.index(i, j), g.index(i + 1, j), wj * hy / hx);
        }
    }
    for i in 0..g.nx {
        let wi = if i == 0 || i == g.nx - 1 { 0.5 } else { 1.0 };
        for j in 0..g.ny - 1 {
            edge(g.index(i, j), g.index(i, j + 1), wi * hx / hy);
        }
    }
    (e, grad)
}

/// Per-illumination forward fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardFields {
    pub u: Vec<ComplexField>,
    pub v: Vec<ComplexField>,
}

/// A reconstruction problem: known media, data and the active unknowns.
pub struct OptProblem {
    known: MediumSet,
    k: f64,
    vb: VBoundary,
    scalar: ScalarOptions,
    g: Vec<BoundaryTrace>,
    h: Vec<RealField>,
    active: Vec<Coefficient>,
    misfit: Misfit,
    reg: RegParams,
    weights: Vec<f64>,
    ratios: Vec<Vec<f64>>,
    /// Operators and `u_j` when neither `η` nor `σ` is active.
    cached: Option<(OneWayOperators, Vec<ComplexField>)>,
}

impl OptProblem {
    /// `known` supplies the fixed coefficients and the box for every
    /// coefficient; its values for active coefficients are ignored.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        known: MediumSet,
        k: f64,
        illuminations: Vec<BoundaryTrace>,
        data: Vec<RealField>,
        active: &[Coefficient],
        misfit: Misfit,
        reg: RegParams,
        scalar: ScalarOptions,
    ) -> Result<Self> {
        let grid = *known.grid();
        if illuminations.is_empty() || illuminations.len() != data.len() {
            return Err(Error::Length {
                what: "data sets",
                expected: illuminations.len(),
                got: data.len(),
            });
        }
        for (g, h) in illuminations.iter().zip(&data) {
            same_grid(&grid, g.grid())?;
            same_grid(&grid, h.grid())?;
        }
        if active.is_empty() {
            return Err(Error::InvalidArgument("no active coefficient".into()));
        }
        reg.validate()?;
        let mut ratios = Vec::new();
        if misfit == Misfit::Ratio {
            if data.len() < 2 {
                return Err(Error::InvalidArgument("the ratio misfit needs at least two data sets".into()));
            }
            if let Some(p) = data[0].values().iter().position(|&x| !(x > 0.0)) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "reference data must be positive (node {p})"
                )));
            }
            let h1 = data[0].values();
            ratios = data[1..]
                .iter()
                .map(|h| h.values().iter().zip(h1).map(|(a, b)| a / b).collect())
                .collect();
        }
        let mut p = Self {
            known,
            k,
            vb: VBoundary::Robin,
            scalar,
            g: illuminations,
            h: data,
            active: active.to_vec(),
            misfit,
            reg,
            weights: grid.weights(),
            ratios,
            cached: None,
        };
        if !p.is_active(Coefficient::Eta) && !p.is_active(Coefficient::Sigma) {
            let ops = OneWayOperators::new(&p.known.eta, &p.known.sigma, k, p.vb, scalar)?;
            let zero = ComplexField::zeros(grid);
            let u = p.g.iter().map(|g| ops.a1.solve(&zero, Some(g))).collect::<Result<Vec<_>>>()?;
            p.cached = Some((ops, u));
        }
        Ok(p)
    }

    pub fn experiment(
        exp: Experiment,
        known: MediumSet,
        k: f64,
        illuminations: Vec<BoundaryTrace>,
        data: Vec<RealField>,
        reg: RegParams,
        scalar: ScalarOptions,
    ) -> Result<Self> {
        Self::new(known, k, illuminations, data, exp.active(), exp.misfit(), reg, scalar)
    }

    pub fn grid(&self) -> &GridSpec {
        self.known.grid()
    }

    pub fn active(&self) -> &[Coefficient] {
        &self.active
    }

    pub fn misfit(&self) -> Misfit {
        self.misfit
    }

    fn is_active(&self, c: Coefficient) -> bool {
        self.active.contains(&c)
    }

    fn n(&self) -> usize {
        self.grid().len()
    }

    /// Stack the active coefficients of `m`.
    pub fn pack(&self, m: &MediumSet) -> Vec<f64> {
        self.active.iter().flat_map(|&c| c.field(m).values().iter().copied()).collect()
    }

    /// Known media with the active coefficients replaced from `x`.
    pub fn unpack(&self, x: &[f64]) -> Result<MediumSet> {
        if x.len() != self.dim() {
            return Err(Error::Length {
                what: "parameter vector",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut m = self.known.clone();
        let n = self.n();
        for (b, &c) in self.active.iter().enumerate() {
            *c.field_mut(&mut m) = RealField::new(*self.grid(), x[b * n..(b + 1) * n].to_vec())?;
        }
        Ok(m)
    }

    /// Box midpoint for each active coefficient.
    pub fn midpoint(&self) -> Vec<f64> {
        let n = self.n();
        self.active
            .iter()
            .flat_map(|&c| core::iter::repeat_n(c.bounds(&self.known).midpoint(), n))
            .collect()
    }

    /// One-way forward solves at the media encoded by `x`.
    pub fn forward(&self, m: &MediumSet) -> Result<(Option<OneWayOperators>, ForwardFields)> {
        let grid = *self.grid();
        let zero = ComplexField::zeros(grid);
        let (built, ops_ref, u): (Option<OneWayOperators>, Option<&OneWayOperators>, Vec<ComplexField>) =
            match &self.cached {
                Some((ops, u)) => (None, Some(ops), u.clone()),
                None => {
                    let ops = OneWayOperators::new(&m.eta, &m.sigma, self.k, self.vb, self.scalar)?;
                    let u = self.g.iter().map(|g| ops.a1.solve(&zero, Some(g))).collect::<Result<Vec<_>>>()?;
                    (Some(ops), None, u)
                }
            };
        let ops = ops_ref.or(built.as_ref()).expect("operators available");
        let v = u
            .iter()
            .map(|u| ops.a2.solve(&ops.v_source(&m.chi2, u), None))
            .collect::<Result<Vec<_>>>()?;
        Ok((built, ForwardFields { u, v }))
    }

    /// Objective value and, optionally, the discrete gradient.
    fn eval(&self, x: &[f64], want_grad: bool) -> Result<(f64, Vec<f64>)> {
        let m = self.unpack(x)?;
        let (built, fields) = self.forward(&m)?;
        let ops = match (&self.cached, &built) {
            (Some((ops, _)), _) => ops,
            (None, Some(ops)) => ops,
            _ => unreachable!(),
        };
        let n = self.n();
        let w = &self.weights;
        let s: Vec<Vec<f64>> = fields
            .u
            .iter()
            .zip(&fields.v)
            .map(|(u, v)| u.values().iter().zip(v.values()).map(|(a, b)| a.norm_sqr() + b.norm_sqr()).collect())
            .collect();
        let nj = s.len();
        let mut c = vec![vec![0.0; n]; nj];
        let mut explicit_sigma = vec![0.0; n];
        let mut value = 0.0;
        match self.misfit {
            Misfit::Absolute => {
                for j in 0..nj {
                    for p in 0..n {
                        let gs = m.gamma_g.values()[p] * m.sigma.values()[p];
                        let r = gs * s[j][p] - self.h[j].values()[p];
                        value += 0.5 * w[p] * r * r;
                        c[j][p] = w[p] * r * gs;
                        explicit_sigma[p] += w[p] * r * m.gamma_g.values()[p] * s[j][p];
                    }
                }
            }
            Misfit::Ratio => {
                for j in 1..nj {
                    for p in 0..n {
                        let s1 = s[0][p];
                        if !(s1 > 0.0) {
                            return Err(Error::InvalidArgument(alloc::format!(
                                "reference intensity vanishes at node {p}"
                            )));
                        }
                        let r = s[j][p] / s1 - self.ratios[j - 1][p];
                        value += 0.5 * w[p] * r * r;
                        c[j][p] = w[p] * r / s1;
                        c[0][p] -= w[p] * r * s[j][p] / (s1 * s1);
                    }
                }
            }
        }
        let mut grad = if want_grad { vec![0.0; self.dim()] } else { Vec::new() };
        for (b, &coef) in self.active.iter().enumerate() {
            let beta = self.reg.get(coef);
            if beta > 0.0 {
                let (e, g) = gradient_energy(coef.field(&m));
                value += beta * e;
                if want_grad {
                    for (dst, v) in grad[b * n..(b + 1) * n].iter_mut().zip(g) {
                        *dst += beta * v;
                    }
                }
            }
        }
        if !want_grad {
            return Ok((value, grad));
        }

        let block = |c: Coefficient| self.active.iter().position(|&a| a == c);
        let (be, bs, bc) = (block(Coefficient::Eta), block(Coefficient::Sigma), block(Coefficient::Chi2));
        if let (Some(b), Misfit::Absolute) = (bs, self.misfit) {
            for p in 0..n {
                grad[b * n + p] += explicit_sigma[p];
            }
        }
        let k = self.k;
        let k2 = k * k;
        let i = Complex64::i();
        let grid = *self.grid();
        let interior: Vec<bool> = (0..n).map(|p| !grid.is_boundary_index(p)).collect();
        for j in 0..nj {
            if c[j].iter().all(|&x| x == 0.0) {
                continue;
            }
            let (u, v) = (fields.u[j].values(), fields.v[j].values());
            let rhs: Vec<Complex64> = v.iter().zip(&c[j]).map(|(v, &c)| v.conj() * c).collect();
            let lam = ops.a2.solve_transpose(&rhs)?;
            let mu = if be.is_some() || bs.is_some() {
                let r1: Vec<Complex64> = (0..n)
                    .map(|p| {
                        let mut z = u[p].conj() * c[j][p];
                        if interior[p] {
                            z -= u[p] * lam[p] * (8.0 * k2 * m.chi2.values()[p]);
                        }
                        z
                    })
                    .collect();
                Some(ops.a1.solve_transpose(&r1)?)
            } else {
                None
            };
            for p in (0..n).filter(|&p| interior[p]) {
                if let Some(b) = bc {
                    grad[b * n + p] += 2.0 * (lam[p] * u[p] * u[p] * (-4.0 * k2)).re;
                }
                if let (Some(mu), Some(b)) = (&mu, be) {
                    grad[b * n + p] += 2.0 * (mu[p] * u[p] * (-k2) + lam[p] * v[p] * (-4.0 * k2)).re;
                }
                if let (Some(mu), Some(b)) = (&mu, bs) {
                    grad[b * n + p] += 2.0 * (mu[p] * u[p] * (-i * k) + lam[p] * v[p] * (-2.0 * i * k)).re;
                }
            }
        }
        Ok((value, grad))
    }

    /// Objective at the media `m` (only its active coefficients matter).
    pub fn objective(&self, m: &MediumSet) -> Result<f64> {
        Ok(self.eval(&self.pack(m), false)?.0)
    }

    /// Discrete gradient split per active coefficient.
    pub fn gradient(&self, m: &MediumSet) -> Result<Vec<(Coefficient, RealField)>> {
        let (_, g) = self.eval(&self.pack(m), true)?;
        let n = self.n();
        self.active
            .iter()
            .enumerate()
            .map(|(b, &c)| Ok((c, RealField::new(*self.grid(), g[b * n..(b + 1) * n].to_vec())?)))
            .collect()
    }

    pub fn data(&self) -> &[RealField] {
        &self.h
    }

    pub fn known(&self) -> &MediumSet {
        &self.known
    }
}

impl Objective for OptProblem {
    fn dim(&self) -> usize {
        self.active.len() * self.n()
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(x, true)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.eval(x, false)?.0)
    }

    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for &c in &self.active {
            let b = c.bounds(&self.known);
            lo.extend(core::iter::repeat_n(b.lower, n));
            hi.extend(core::iter::repeat_n(b.upper, n));
        }
        Some((lo, hi))
    }
}

/// `Γ = (1/N) Σ_j H_j / (σ S_j)`; nodes with a non-positive denominator are
/// masked and set to zero.
pub fn recover_gamma_g_avg(
    h: &[RealField],
    sigma: &RealField,
    fields: &ForwardFields,
) -> Result<(RealField, Vec<bool>)> {
    let g = *sigma.grid();
    if h.is_empty() || h.len() != fields.u.len() || h.len() != fields.v.len() {
        return Err(Error::Length {
            what: "data sets",
            expected: fields.u.len(),
            got: h.len(),
        });
    }
    for (j, hj) in h.iter().enumerate() {
        same_grid(&g, hj.grid())?;
        same_grid(&g, fields.u[j].grid())?;
        same_grid(&g, fields.v[j].grid())?;
    }
    let nj = h.len() as f64;
    let mut out = vec![0.0; g.len()];
    let mut mask = vec![true; g.len()];
    for p in 0..g.len() {
        let mut acc = 0.0;
        for j in 0..h.len() {
            let d = sigma.values()[p] * (fields.u[j].values()[p].norm_sqr() + fields.v[j].values()[p].norm_sqr());
            if !(d > 0.0) {
                mask[p] = false;
                break;
            }
            acc += h[j].values()[p] / d;
        }
        if mask[p] {
            out[p] = acc / nj;
        }
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllMasked);
    }
    Ok((RealField::new(g, out)?, mask))
}

/// Outcome of a reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub media: MediumSet,
    pub gamma_g: Option<(RealField, Vec<bool>)>,
    pub trace: OptTrace,
}

/// `obj` in box-normalized variables `z = (x − lo)/(hi − lo) ∈ [0, 1]`.
/// This is a diagonal preconditioner that puts coefficients of different
/// magnitude on a common footing.
pub struct BoxScaled<'a, O: Objective> {
    inner: &'a O,
    lo: Vec<f64>,
    width: Vec<f64>,
}

impl<'a, O: Objective> BoxScaled<'a, O> {
    pub fn new(inner: &'a O) -> Result<Self> {
        let (lo, hi) = inner
            .bounds()
            .ok_or_else(|| Error::InvalidArgument("box scaling needs bounds".into()))?;
        let width: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| h - l).collect();
        if width.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidArgument("box scaling needs finite, nonempty bounds".into()));
        }
        Ok(Self { inner, lo, width })
    }

    pub fn to_inner(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.lo).zip(&self.width).map(|((z, l), w)| l + w * z).collect()
    }

    pub fn to_scaled(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.lo).zip(&self.width).map(|((x, l), w)| (x - l) / w).collect()
    }
}

impl<O: Objective> Objective for BoxScaled<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value_grad(&self, z: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, g) = self.inner.value_grad(&self.to_inner(z))?;
        Ok((f, g.iter().zip(&self.width).map(|(g, w)| g * w).collect()))
    }

    fn value(&self, z: &[f64]) -> Result<f64> {
        self.inner.value(&self.to_inner(z))
    }

    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.dim();
        Some((vec![0.0; n], vec![1.0; n]))
    }
}

/// Minimize from `x0` (box midpoint when `None`) in box-normalized
/// variables; recover `Γ` by averaging for ratio misfits.
pub fn reconstruct(problem: &OptProblem, x0: Option<&[f64]>, opts: &LbfgsOptions) -> Result<OptResult> {
    let start = x0.map_or_else(|| problem.midpoint(), |x| x.to_vec());
    let scaled = BoxScaled::new(problem)?;
    let (z, trace) = bfgs_minimize(&scaled, &scaled.to_scaled(&start), opts)?;
    let mut media = problem.unpack(&scaled.to_inner(&z))?;
    let gamma_g = if problem.misfit == Misfit::Ratio {
        let (_, fields) = problem.forward(&media)?;
        let r = recover_gamma_g_avg(&problem.h, &media.sigma, &fields)?;
        media.gamma_g = r.0.clone();
        Some(r)
    } else {
        None
    };
    Ok(OptResult { media, gamma_g, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::helmholtz::{Admissibility, MediumBounds};

    fn media(n: usize) -> MediumSet {
        let g = GridSpec::unit_square(n).unwrap();
        MediumSet::new(
            RealField::from_fn(g, |x, _| 1.0 + 0.2 * x),
            RealField::from_fn(g, |x, y| 0.2 + 0.1 * x * y),
            RealField::from_fn(g, |_, y| 0.5 + 0.2 * y),
            RealField::from_fn(g, |x, y| 1.0 + 0.3 * x - 0.2 * y),
            MediumBounds::uniform(0.05, 3.0),
            Admissibility::Strict,
        )
        .unwrap()
    }

    #[test]
    fn gradient_energy_of_a_linear_ramp() {
        let g = GridSpec::unit_square(11).unwrap();
        let f = RealField::from_fn(g, |x, y| 2.0 * x + 3.0 * y);
        let (e, grad) = gradient_energy(&f);
        // ½∫|∇f|² on the unit square.
        assert!((e - 0.5 * 13.0).abs() < 1e-12);
        // Interior of a linear function: the discrete Laplacian vanishes.
        assert!(grad[g.index(5, 5)].abs() < 1e-12);
    }

    #[test]
    fn zero_illumination_leaves_only_regularization() {
        let m = media(9);
        let g = *m.grid();
        let zero = BoundaryTrace::zeros(g, crate::field::TraceKind::Dirichlet);
        let reg = RegParams { chi2: 1e-3, ..Default::default() };
        let p = OptProblem::new(
            m.clone(),
            2.0,
            vec![zero],
            vec![RealField::zeros(g)],
            &[Coefficient::Chi2],
            Misfit::Absolute,
            reg,
            ScalarOptions::default(),
        )
        .unwrap();
        let (e, ge) = gradient_energy(&m.chi2);
        assert!((p.objective(&m).unwrap() - 1e-3 * e).abs() < 1e-15);
        let grad = &p.gradient(&m).unwrap()[0].1;
        for (a, b) in grad.values().iter().zip(ge) {
            assert_eq!(*a, 1e-3 * b);
        }
    }

    #[test]
    fn ratio_misfit_needs_two_data_sets() {
        let m = media(7);
        let g = *m.grid();
        let t = BoundaryTrace::from_fn(g, |_, _| Complex64::new(1.0, 0.0));
        let e = OptProblem::new(
            m,
            1.0,
            vec![t],
            vec![RealField::constant(g, 1.0)],
            &[Coefficient::Eta],
            Misfit::Ratio,
            RegParams::default(),
            ScalarOptions::default(),
        );
        assert!(matches!(e, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn experiment_defaults() {
        assert_eq!(Experiment::III.active(), &[Coefficient::Eta, Coefficient::Chi2]);
        assert_eq!(Experiment::IV.default_reg().sigma, 1e-7);
        assert_eq!(Experiment::I.default_reg().eta, 0.0);
        assert!(Experiment::III.recovers_gamma_g() && !Experiment::II.recovers_gamma_g());
    }
}
