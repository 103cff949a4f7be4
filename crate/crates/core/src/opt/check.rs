//! Central finite-difference checks of directional derivatives.

use alloc::vec::Vec;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::lbfgs::Objective;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub step: f64,
    pub probes: Vec<Probe>,
    pub max_rel_error: f64,
}

/// Uniform direction in `[-1, 1]^n`.
pub fn random_direction(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| 2.0 * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64) - 1.0)
        .collect()
}

/// Compare `∇f(x)·d` with `(f(x+td) − f(x−td)) / 2t` along `probes` random
/// directions. `t` is scaled by `max(1, ‖x‖∞)`.
pub fn gradient_check<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<GradientCheckReport> {
    let (_, g) = obj.value_grad(x)?;
    let t = step * x.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(probes);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let d = random_direction(x.len(), &mut rng);
        let analytic: f64 = g.iter().zip(&d).map(|(a, b)| a * b).sum();
        let shift = |s: f64| -> Vec<f64> { x.iter().zip(&d).map(|(x, d)| x + s * d).collect() };
        let fp = obj.value(&shift(t))?;
        let fm = obj.value(&shift(-t))?;
        let fd = (fp - fm) / (2.0 * t);
        let scale = analytic.abs().max(fd.abs()).max(f64::MIN_POSITIVE);
        let rel = (analytic - fd).abs() / scale;
        worst = worst.max(rel);
        out.push(Probe {
            analytic,
            finite_difference: fd,
            rel_error: rel,
        });
    }
    Ok(GradientCheckReport {
        step: t,
        probes: out,
        max_rel_error: worst,
    })
}
