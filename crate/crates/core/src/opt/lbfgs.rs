//! Limited-memory BFGS with a strong-Wolfe line search and box projection.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

use super::check::{gradient_check, GradientCheckReport};

/// A smooth objective on `R^n`, optionally restricted to a box.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_grad(x)?.0)
    }

    /// Elementwise `(lower, upper)`.
    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

/// Closure adapter, mostly for tests and small problems.
pub struct FnObjective<F> {
    pub dim: usize,
    pub f: F,
    pub bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl<F: Fn(&[f64]) -> (f64, Vec<f64>)> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.f)(x))
    }

    fn bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        self.bounds.clone()
    }
}

/// Finite-difference guard run before the first iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuardOptions {
    pub probes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GuardOptions {
    fn default() -> Self {
        Self {
            probes: 3,
            step: 1e-5,
            tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
    /// Projected-gradient tolerance relative to the initial one.
    pub gtol: f64,
    /// Relative objective decrease tolerance.
    pub ftol: f64,
    pub max_iter: usize,
    /// Largest change of any variable on the first step.
    pub initial_step: f64,
    pub guard: Option<GuardOptions>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
            gtol: 1e-8,
            ftol: 1e-12,
            max_iter: 500,
            initial_step: 1.0,
            guard: Some(GuardOptions::default()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveStall,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub step: f64,
    pub evaluations: usize,
    /// The step hit a bound or was clipped by the projection.
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptTrace {
    pub records: Vec<IterRecord>,
    pub stop: StopReason,
    pub evaluations: usize,
    pub guard: Option<GradientCheckReport>,
}

impl OptTrace {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn failed(&self) -> bool {
        self.stop == StopReason::LineSearchFailed
    }

    /// Objective never increases across accepted steps.
    pub fn monotone(&self) -> bool {
        self.records.windows(2).all(|w| w[1].objective <= w[0].objective)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,objective,grad_norm,step,evaluations,projected\n");
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{},{}",
                r.iter, r.objective, r.grad_norm, r.step, r.evaluations, r.projected as u8
            );
        }
        s
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

struct Box {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Box {
    fn new(n: usize, b: Option<(Vec<f64>, Vec<f64>)>) -> Result<Self> {
        let (lo, hi) = b.unwrap_or_else(|| (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n]));
        if lo.len() != n || hi.len() != n {
            return Err(Error::Length {
                what: "bounds",
                expected: n,
                got: lo.len().min(hi.len()),
            });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidArgument("empty box".into()));
        }
        Ok(Self { lo, hi })
    }

    fn clamp(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            let c = v.clamp(*l, *h);
            moved |= c != *v;
            *v = c;
        }
        moved
    }

    fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(g)
            .zip(self.lo.iter().zip(&self.hi))
            .map(|((&x, &g), (&l, &h))| x - (x - g).clamp(l, h))
            .collect()
    }

    /// Variables held at a bound by the sign of the gradient.
    fn pinned(&self, x: &[f64], g: &[f64]) -> Vec<bool> {
        x.iter()
            .zip(g)
            .zip(self.lo.iter().zip(&self.hi))
            .map(|((&x, &g), (&l, &h))| (x <= l && g > 0.0) || (x >= h && g < 0.0))
            .collect()
    }

    /// Step beyond which every moving variable sits at a bound.
    fn last_breakpoint(&self, x: &[f64], d: &[f64]) -> f64 {
        let mut a: f64 = 0.0;
        for i in 0..x.len() {
            let t = if d[i] > 0.0 {
                (self.hi[i] - x[i]) / d[i]
            } else if d[i] < 0.0 {
                (self.lo[i] - x[i]) / d[i]
            } else {
                continue;
            };
            a = a.max(t);
        }
        a
    }
}

struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    dphi: f64,
}

/// Search along the projected path `P(x + αd)`; slopes count only the
/// components that are not clamped.
struct LineSearch<'a, O: Objective> {
    obj: &'a O,
    bx: &'a Box,
    x: &'a [f64],
    d: &'a [f64],
    f0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals: usize,
    max_evals: usize,
    best: Option<Point>,
}

impl<O: Objective> LineSearch<'_, O> {
    fn eval(&mut self, alpha: f64) -> Option<Point> {
        if self.evals >= self.max_evals {
            return None;
        }
        self.evals += 1;
        let mut xt: Vec<f64> = self.x.iter().zip(self.d).map(|(x, d)| x + alpha * d).collect();
        let raw = xt.clone();
        self.bx.clamp(&mut xt);
        let p = match self.obj.value_grad(&xt) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let dphi = g
                    .iter()
                    .zip(self.d)
                    .zip(xt.iter().zip(&raw))
                    .filter(|(_, (a, b))| a == b)
                    .map(|((g, d), _)| g * d)
                    .sum();
                Point { alpha, f, g, dphi }
            }
            // Failed evaluations behave like an infinite objective.
            _ => Point {
                alpha,
                f: f64::INFINITY,
                g: Vec::new(),
                dphi: f64::NAN,
            },
        };
        if p.f < self.best.as_ref().map_or(self.f0, |b| b.f) {
            self.best = Some(Point {
                alpha: p.alpha,
                f: p.f,
                g: p.g.clone(),
                dphi: p.dphi,
            });
        }
        Some(p)
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.c1 * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Strong-Wolfe search on `(0, alpha_max]`. Returns the accepted point,
    /// or `None` when the evaluation budget runs out.
    fn run(&mut self, alpha0: f64, alpha_max: f64) -> Option<Point> {
        let mut prev = Point {
            alpha: 0.0,
            f: self.f0,
            g: Vec::new(),
            dphi: self.dphi0,
        };
        let mut alpha = alpha0.min(alpha_max);
        let mut first = true;
        loop {
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || (!first && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.dphi >= 0.0 {
                return self.zoom(p, prev);
            }
            if alpha >= alpha_max {
                // Still descending at the bound: stop there.
                return Some(p);
            }
            first = false;
            alpha = (2.0 * alpha).min(alpha_max);
            prev = p;
        }
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Option<Point> {
        loop {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b.max(1e-300) {
                return None;
            }
            let mut alpha = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
            if !(alpha > a + 0.1 * width && alpha < b - 0.1 * width) {
                alpha = 0.5 * (a + b);
            }
            let p = self.eval(alpha)?;
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
    }
}

/// Minimizer of the cubic matching values and slopes at two points.
fn cubic_min(p: &Point, q: &Point) -> Option<f64> {
    if !(p.f.is_finite() && q.f.is_finite() && p.dphi.is_finite() && q.dphi.is_finite()) {
        return None;
    }
    let d1 = p.dphi + q.dphi - 3.0 * (p.f - q.f) / (p.alpha - q.alpha);
    let disc = d1 * d1 - p.dphi * q.dphi;
    if disc < 0.0 {
        return None;
    }
    let d2 = (q.alpha - p.alpha).signum() * libm::sqrt(disc);
    let a = q.alpha - (q.alpha - p.alpha) * (q.dphi + d2 - d1) / (q.dphi - p.dphi + 2.0 * d2);
    a.is_finite().then_some(a)
}

/// Minimize `obj` from `x0` (projected onto the box first).
pub fn bfgs_minimize<O: Objective>(obj: &O, x0: &[f64], opts: &LbfgsOptions) -> Result<(Vec<f64>, OptTrace)> {
    let n = obj.dim();
    if x0.len() != n {
        return Err(Error::Length {
            what: "initial point",
            expected: n,
            got: x0.len(),
        });
    }
    let bx = Box::new(n, obj.bounds())?;
    let mut x = x0.to_vec();
    bx.clamp(&mut x);

    let guard = match opts.guard {
        Some(gopts) => {
            let report = gradient_check(obj, &x, gopts.probes, gopts.step, gopts.seed)?;
            if report.max_rel_error > gopts.tolerance {
                return Err(Error::GradientCheck {
                    rel_error: report.max_rel_error,
                    tolerance: gopts.tolerance,
                });
            }
            Some(report)
        }
        None => None,
    };

    let (mut f, mut g) = obj.value_grad(&x)?;
    let mut evaluations = 1;
    let pg0 = norm(&bx.projected_gradient(&x, &g));
    let mut records = vec![IterRecord {
        iter: 0,
        objective: f,
        grad_norm: pg0,
        step: 0.0,
        evaluations: 1,
        projected: false,
    }];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut stop = StopReason::MaxIterations;
    if pg0 == 0.0 {
        stop = StopReason::GradientTolerance;
    }

    let mut iter = 0;
    while stop == StopReason::MaxIterations && iter < opts.max_iter {
        iter += 1;
        let pinned = bx.pinned(&x, &g);
        let q: Vec<f64> = g.iter().zip(&pinned).map(|(&v, &p)| if p { 0.0 } else { v }).collect();
        let mut d = two_loop(&q, &mem);
        for (di, &p) in d.iter_mut().zip(&pinned) {
            if p {
                *di = 0.0;
            }
        }
        let mut dphi0 = dot(&g, &d);
        let mut fresh = mem.is_empty();
        if !(dphi0 < 0.0) {
            mem.clear();
            d = q.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
            fresh = true;
        }
        if !(dphi0 < 0.0) {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut alpha_max = bx.last_breakpoint(&x, &d);
        if !(alpha_max > 0.0) && !fresh {
            // Every moving variable leaves the box: fall back to the
            // projected steepest descent.
            mem.clear();
            d = q.iter().map(|v| -v).collect();
            dphi0 = dot(&g, &d);
            alpha_max = bx.last_breakpoint(&x, &d);
            fresh = true;
        }
        let alpha0 = if fresh {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (opts.initial_step / dmax).min(1.0)
        } else {
            1.0
        };
        let mut ls = LineSearch {
            obj,
            bx: &bx,
            x: &x,
            d: &d,
            f0: f,
            dphi0,
            c1: opts.c1,
            c2: opts.c2,
            evals: 0,
            max_evals: opts.max_line_search,
            best: None,
        };
        let accepted = ls.run(alpha0, alpha_max);
        let ls_evals = ls.evals;
        evaluations += ls_evals;
        let point = match accepted {
            Some(p) if p.f.is_finite() => p,
            _ => match ls.best.take() {
                // Keep the best decrease found, then report the failure.
                Some(b) if b.f < f && b.f.is_finite() => {
                    stop = StopReason::LineSearchFailed;
                    b
                }
                _ => {
                    stop = StopReason::LineSearchFailed;
                    break;
                }
            },
        };
        let mut xn: Vec<f64> = x.iter().zip(&d).map(|(x, d)| x + point.alpha * d).collect();
        let clipped = bx.clamp(&mut xn);
        let (fnew, gnew) = (point.f, point.g);
        if fnew > f {
            stop = StopReason::LineSearchFailed;
            break;
        }
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gnew.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - fnew;
        let fscale = f.abs().max(fnew.abs()).max(f64::MIN_POSITIVE);
        x = xn;
        f = fnew;
        g = gnew;
        let pg = norm(&bx.projected_gradient(&x, &g));
        records.push(IterRecord {
            iter,
            objective: f,
            grad_norm: pg,
            step: point.alpha,
            evaluations: ls_evals,
            projected: clipped,
        });
        if stop == StopReason::LineSearchFailed {
            break;
        }
        if pg <= opts.gtol * pg0 {
            stop = StopReason::GradientTolerance;
        } else if decrease <= opts.ftol * fscale {
            stop = StopReason::ObjectiveStall;
        }
    }
    Ok((
        x,
        OptTrace {
            records,
            stop,
            evaluations,
            guard,
        },
    ))
}

fn two_loop(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let scale = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= scale;
        }
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
