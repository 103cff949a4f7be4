//! End-to-end acceptance run. One line per criterion; the process fails if
//! any hard check fails. Soft targets are reported in the detail text only.

#[path = "../../core/tests/support/complex_gamma.rs"]
#[allow(dead_code)]
mod complex_gamma;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use shg::config::Config;
use shg::fgrid::Fgrid;
use shg::run::{run, RunOptions, RunOutcome};
use shg_core::data::{polarize, synthesize, IlluminationSet, SynthOptions};
use shg_core::gamma::gamma_from_u2;
use shg_core::helmholtz::*;
use shg_core::linearize::LinearizedBundle;
use shg_core::ops::{interior_mask, rel_l2, rel_l2_masked};
use shg_core::opt::check::random_direction;
use shg_core::opt::*;
use shg_core::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Config {
    Config::load(&configs().join(name)).unwrap().resolve().unwrap()
}

fn exec(cfg: &Config, out: &Path) -> RunOutcome {
    run(cfg, &RunOptions { out: out.to_path_buf(), png: false, threads: 1 }).unwrap()
}

fn diag(o: &RunOutcome, key: &str) -> Value {
    o.report.diagnostics.get(key).cloned().unwrap_or(Value::Null)
}

fn err_of(o: &RunOutcome, name: &str) -> f64 {
    o.report.error(name).unwrap_or(f64::NAN)
}

fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

// 1

fn manufactured(n: usize, robin: bool) -> (f64, f64) {
    let g = GridSpec::unit_square(n).unwrap();
    let (a, b, k) = (2.0, -1.5, 2.0);
    let i = Complex64::i();
    let exact = |x: f64, y: f64| (i * (a * x + b * y)).exp();
    let q = ComplexField::from_fn(g, |x, y| {
        Complex64::new(k * k * (1.2 + 0.1 * (3.0 * x).sin() * y), k * (0.5 + 0.2 * x * y))
    });
    let us = ComplexField::from_fn(g, exact);
    let f = ComplexField::new(
        g,
        (0..g.len()).map(|p| us.values()[p] * (q.values()[p] - (a * a + b * b))).collect(),
    )
    .unwrap();
    let (bc, data) = if robin {
        let m = 2.0;
        let t = BoundaryTrace::from_fn(g, |x, y| {
            let (ii, jj) = ((x / g.hx()).round() as usize, (y / g.hy()).round() as usize);
            let (nx, ny) = g.outward_normal(ii, jj);
            let z = exact(x, y);
            z + i * (m * k) * (i * (a * nx + b * ny)) * z
        });
        (BcKind::Robin { multiplier: m }, t)
    } else {
        (BcKind::Dirichlet, us.trace())
    };
    let t = Instant::now();
    let op = ScalarOperator::new(&q, bc, k, ScalarOptions::default()).unwrap();
    let u = op.solve(&f, Some(&data)).unwrap();
    let secs = t.elapsed().as_secs_f64();
    (rel_l2(&u, &us).unwrap(), secs)
}

fn c1_scalar_order() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, robin) in [("dirichlet", false), ("robin", true)] {
        let (e1, t1) = manufactured(101, robin);
        let (e2, t2) = manufactured(201, robin);
        let ratio = e1 / e2;
        ok &= (ratio - 4.0).abs() <= 0.5 && t1 <= 5.0 && t2 <= 5.0;
        parts.push(format!("{label} ratio {ratio:.3} ({t1:.2}s, {t2:.2}s)"));
    }
    verdict(ok, parts.join("; "))
}

// 2

fn c2_coupled_contraction() -> Verdict {
    let cfg = load("certify.toml");
    let grid = cfg.grid.spec().unwrap();
    let media = cfg.media.build(grid).unwrap();
    let (g, h) = cfg.illumination.traces(grid, cfg.k).swap_remove(0);
    let h = h.unwrap();
    let mut ok = true;
    let mut rates = Vec::new();
    let mut parts = Vec::new();
    for eps in [0.1, 0.05, 0.025] {
        let ge = g.scale(Complex64::new(eps, 0.0));
        let he = h.scale(Complex64::new(eps, 0.0));
        let s = solve_coupled(&media, cfg.k, &ge, &he, &CoupledOptions::default()).unwrap();
        let (ru, rv) = residuals(&s, &media, cfg.k, ResidualBcs::Coupled { g: &ge, h: &he }).unwrap();
        let c = s.contraction.unwrap_or(f64::NAN);
        ok &= ru.max(rv) <= 1e-10;
        rates.push(c);
        parts.push(format!("eps {eps}: {} it, residual {:.1e}, contraction {c:.3e}", s.iterations, ru.max(rv)));
    }
    // Halving ε should halve the rate.
    for w in rates.windows(2) {
        let r = w[0] / w[1];
        ok &= (1.5..=2.5).contains(&r);
        parts.push(format!("ratio {r:.3}"));
    }
    verdict(ok, parts.join("; "))
}

// 3

fn c3_certify(dir: &Path) -> Verdict {
    let t = Instant::now();
    let o = exec(&load("certify.toml"), &dir.join("certify"));
    let secs = t.elapsed().as_secs_f64();
    let s = |k: &str| diag(&o, k).as_f64().unwrap_or(f64::NAN);
    let (mu, nu, rho, h) = (s("slope_mu"), s("slope_nu"), s("slope_rho"), s("slope_data"));
    let ok = o.report.status == "ok" && mu >= 2.7 && nu >= 2.7 && rho >= 3.7 && h >= 1.9 && secs <= 120.0;
    verdict(ok, format!("slopes mu {mu:.3} nu {nu:.3} remainder {rho:.3} H1 {h:.3}; {secs:.1}s"))
}

// 4

fn c4_polarization() -> Verdict {
    let g = GridSpec::new(40, 25, 0.0, 0.0, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut draw = |lo: f64, hi: f64| lo + (hi - lo) * unit(&mut rng);
    let n = g.len();
    let mut u1 = Vec::with_capacity(n);
    let mut uj = Vec::with_capacity(n);
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        u1.push(Complex64::from_polar(draw(0.1, 10.0), draw(0.0, std::f64::consts::TAU)));
        uj.push(Complex64::from_polar(draw(0.1, 10.0), draw(0.0, std::f64::consts::TAU)));
        gs.push(draw(0.05, 5.0));
    }
    let h = |f: &dyn Fn(usize) -> Complex64| RealField::new(g, (0..n).map(|p| gs[p] * f(p).norm_sqr()).collect()).unwrap();
    let i = Complex64::i();
    let h1 = h(&|p| u1[p]);
    let hj = h(&|p| uj[p]);
    let hs = h(&|p| u1[p] + uj[p]);
    let hi = h(&|p| u1[p] + i * uj[p]);
    let raw = polarize(&h1, &hj, &hs, &hi, None).unwrap();
    let worst = (0..n)
        .map(|p| {
            let want = uj[p] * u1[p].conj() * gs[p];
            (raw.values()[p] - want).norm() / want.norm()
        })
        .fold(0.0, f64::max);
    verdict(worst <= 1e-12, format!("{n} pairs, max relative error {worst:.2e}"))
}

// 5 and 6

fn direct_run(dir: &Path, n: usize) -> RunOutcome {
    let mut cfg = load("direct.toml");
    cfg.grid.nx = n;
    cfg.grid.ny = Some(n);
    cfg.report.error_band = (n - 1) / 20;
    exec(&cfg, &dir.join(format!("direct_{n}")))
}

fn c5_direct(runs: &[(usize, RunOutcome)]) -> Verdict {
    let mut ok = runs.iter().all(|(_, o)| o.report.status == "ok");
    let names = ["sigma", "eta", "gamma_g"];
    let table: Vec<[f64; 3]> = runs.iter().map(|(_, o)| names.map(|c| err_of(o, c))).collect();
    let at201 = runs.iter().position(|(n, _)| *n == 201).map(|i| table[i]).unwrap();
    ok &= at201[0] <= 0.10 && at201[1] <= 0.10 && at201[2] <= 0.15;
    for c in 0..3 {
        ok &= table.windows(2).all(|w| w[1][c] <= w[0][c]);
    }
    let rows: Vec<String> = runs
        .iter()
        .zip(&table)
        .map(|((n, _), e)| format!("n={n}: sigma {:.2}% eta {:.2}% Gamma {:.2}%", 100.0 * e[0], 100.0 * e[1], 100.0 * e[2]))
        .collect();
    verdict(ok, rows.join("; "))
}

fn read_display(path: &Path) -> RealField {
    Fgrid::read(path).unwrap().display_field().unwrap()
}

fn c6_reassembly(dir: &Path, k: f64) -> Verdict {
    let q = Fgrid::read(&dir.join("recon/q.fgrd")).unwrap().into_complex().unwrap();
    let eta = read_display(&dir.join("recon/eta.fgrd"));
    let sigma = read_display(&dir.join("recon/sigma.fgrd"));
    let mut checked = 0;
    let mut mismatched = 0;
    for p in 0..q.grid().len() {
        let (e, s) = (eta.values()[p], sigma.values()[p]);
        if e.is_nan() {
            continue;
        }
        checked += 1;
        let z = Complex64::new(k * k * (1.0 + e), k * s);
        if z.re.to_bits() != q.values()[p].re.to_bits() || z.im.to_bits() != q.values()[p].im.to_bits() {
            mismatched += 1;
        }
    }
    verdict(checked > 0 && mismatched == 0, format!("{checked} unmasked nodes, {mismatched} mismatches"))
}

// 7

fn c7_gamma(dir: &Path) -> Verdict {
    let cfg = load("gamma.toml");
    let out = dir.join("gamma");
    let o = exec(&cfg, &out);
    let err = err_of(&o, "chi2");
    let margin = diag(&o, "min_margin").as_f64().unwrap_or(f64::NAN);
    let grid = cfg.grid.spec().unwrap();
    let media = cfg.media.build(grid).unwrap();
    let ls = read_display(&out.join("recon/chi2.fgrd"));

    // Pointwise elimination from fields of a twice finer grid.
    let mut fine_cfg = cfg.clone();
    fine_cfg.grid.nx = 2 * cfg.grid.nx - 1;
    fine_cfg.grid.ny = Some(2 * cfg.grid.nx - 1);
    let fine = fine_cfg.grid.spec().unwrap();
    let fm = fine_cfg.media.build(fine).unwrap();
    let (g1, h1) = fine_cfg.illumination.traces(fine, cfg.k).swap_remove(0);
    let b = LinearizedBundle::compute(&fm, cfg.k, &g1, h1.as_ref(), None, None, ScalarOptions::default()).unwrap();
    let (q1, _) = potentials_from(&media.eta, &media.sigma, cfg.k).unwrap();
    let pw = gamma_from_u2(
        &b.u2.restrict(&grid).unwrap(),
        &b.u1.restrict(&grid).unwrap(),
        &b.v1.restrict(&grid).unwrap(),
        &q1,
        cfg.k,
        1e-3,
    )
    .unwrap();
    let band = interior_mask(&grid, (grid.nx - 1) / 10);
    let mask: Vec<bool> = band.iter().zip(&pw.mask).map(|(a, b)| *a && *b).collect();
    let disc = rel_l2_masked(&pw.gamma, &media.chi2, Some(&mask)).unwrap();
    let agree = rel_l2_masked(&pw.gamma, &ls, Some(&mask)).unwrap();
    let ok = o.report.status == "ok" && err <= 0.02 && margin >= 0.5 && agree <= 2.0 * disc;
    verdict(
        ok,
        format!("rel_l2 {err:.2e}, margin {margin:.3}; pointwise vs least squares {agree:.2e} (discretization {disc:.2e})"),
    )
}

// 8

fn c8_assembly() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = complex_gamma::equivalence_deviation(7, 15, 15);
    let cases = 40;
    for _ in 0..cases {
        let seed = rng.next_u64();
        let nx = 4 + (rng.next_u64() % 12) as usize;
        let ny = 4 + (rng.next_u64() % 12) as usize;
        worst = worst.max(complex_gamma::equivalence_deviation(seed, nx, ny));
    }
    verdict(worst <= 1e-12, format!("{} grids up to 15x15, max deviation {worst:.2e}", cases + 1))
}

// 9

fn gradient_truth(n: usize) -> MediumSet {
    let g = GridSpec::unit_square(n).unwrap();
    MediumSet::new(
        RealField::from_fn(g, |x, y| 1.0 + 0.3 * x * y),
        RealField::from_fn(g, |x, y| 0.2 + 0.1 * (3.0 * x).sin() * y),
        RealField::from_fn(g, |x, y| 0.5 + 0.2 * x - 0.1 * y),
        RealField::from_fn(g, |x, y| 1.0 + 0.4 * (-((x - 0.5).powi(2) + (y - 0.4).powi(2)) / 0.05).exp()),
        MediumBounds {
            gamma_g: shg_core::phantom::Bounds::new(0.5, 2.0),
            eta: shg_core::phantom::Bounds::new(0.05, 1.0),
            sigma: shg_core::phantom::Bounds::new(0.1, 1.0),
            chi2: shg_core::phantom::Bounds::new(0.5, 2.0),
        },
        Admissibility::Strict,
    )
    .unwrap()
}

fn worst_gradient_error(exp: Experiment) -> f64 {
    let k = 3.0;
    let m = gradient_truth(13);
    let g = *m.grid();
    let ill: Vec<BoundaryTrace> = (0..3)
        .map(|j| {
            let a = std::f64::consts::PI * j as f64 / 3.0;
            BoundaryTrace::from_fn(g, move |x, y| Complex64::new(0.0, k * (x * a.cos() + y * a.sin())).exp())
        })
        .collect();
    let data = synthesize(&m, k, &IlluminationSet::from_g(ill.clone()).unwrap(), &SynthOptions::default()).unwrap();
    let p = OptProblem::experiment(exp, m.clone(), k, ill, data.h, exp.default_reg(), ScalarOptions::default()).unwrap();
    let x0 = p.pack(&m);
    let (lo, hi) = p.bounds().unwrap();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_direction(x0.len(), &mut rng);
        let x: Vec<f64> = (0..x0.len()).map(|i| (x0[i] + 0.05 * d[i]).clamp(lo[i], hi[i])).collect();
        let r = gradient_check(&p, &x, 1, 1e-5, 100 + seed).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    worst
}

fn c9_gradients(opt_runs: &[(&str, RunOutcome)], tolerance: f64) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for exp in [Experiment::I, Experiment::II, Experiment::III, Experiment::IV] {
        let w = worst_gradient_error(exp);
        ok &= w <= 1e-4;
        parts.push(format!("{exp:?} {w:.1e}"));
    }
    let guards: Vec<f64> = opt_runs
        .iter()
        .map(|(_, o)| diag(o, "guard_max_rel_error").as_f64().unwrap_or(f64::NAN))
        .collect();
    ok &= guards.iter().all(|&g| g <= tolerance);
    let gmax = guards.iter().copied().fold(0.0, f64::max);
    parts.push(format!("guard ran in {} runs, worst {gmax:.1e}", guards.len()));
    verdict(ok, parts.join("; "))
}

// 10

fn c10_experiment_i(clean: &RunOutcome, noisy: &RunOutcome) -> Verdict {
    let e0 = err_of(clean, "chi2");
    let e1 = err_of(noisy, "chi2");
    let its = diag(clean, "iterations").as_u64().unwrap_or(u64::MAX);
    let secs = clean.timings.total;
    let ok = clean.report.status == "ok" && noisy.report.status == "ok" && e0 <= 0.10 && its <= 500 && secs <= 600.0;
    let factor = e1 / e0;
    let soft = if factor <= 3.0 { "met" } else { "missed" };
    verdict(
        ok,
        format!("noise-free {:.2}% in {its} it, {secs:.0}s; 1% noise {:.2}% ({factor:.2}x, soft 3x target {soft})", 100.0 * e0, 100.0 * e1),
    )
}

// 11

fn gamma_exactness() -> f64 {
    let cfg = load("exp3.toml");
    let grid = cfg.grid.spec().unwrap();
    let truth = cfg.media.build(grid).unwrap();
    let gs: Vec<BoundaryTrace> = cfg.illumination.traces(grid, cfg.k).into_iter().map(|(g, _)| g).collect();
    let data = synthesize(&truth, cfg.k, &IlluminationSet::from_g(gs.clone()).unwrap(), &SynthOptions::default()).unwrap();
    let p = OptProblem::experiment(Experiment::III, truth.clone(), cfg.k, gs, data.h.clone(), RegParams::default(), ScalarOptions::default())
        .unwrap();
    let (_, fields) = p.forward(&truth).unwrap();
    let (gamma, mask) = recover_gamma_g_avg(&data.h, &truth.sigma, &fields).unwrap();
    rel_l2_masked(&gamma, &truth.gamma_g, Some(&mask)).unwrap()
}

fn c11_experiments(runs: &[(&str, RunOutcome)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, o) in runs.iter().filter(|(n, _)| n.starts_with("exp") && *n != "exp1" && *n != "exp1_noise") {
        ok &= o.report.status == "ok" && !o.report.errors.is_empty();
        let errs: Vec<String> = o
            .report
            .errors
            .iter()
            .map(|(c, e)| {
                ok &= e.rel_l2 <= 0.15;
                format!("{c} {:.1}%", 100.0 * e.rel_l2)
            })
            .collect();
        parts.push(format!("{name}: {}", errs.join(" ")));
        if let Some(c) = diag(o, "gamma_sigma_error_correlation").as_f64() {
            parts.push(format!("IV Gamma/sigma error correlation {c:.2}"));
        }
    }
    let exact = gamma_exactness();
    ok &= exact <= 1e-13;
    parts.push(format!("Gamma from exact inputs {exact:.1e}"));
    verdict(ok, parts.join("; "))
}

// 12

fn same_bytes(a: &Path, b: &Path, o: &RunOutcome) -> std::result::Result<usize, String> {
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    if read(a.join("report.json"))? != read(b.join("report.json"))? {
        return Err("report.json differs".into());
    }
    for art in &o.report.artifacts {
        if read(a.join(&art.path))? != read(b.join(&art.path))? {
            return Err(format!("{} differs", art.path));
        }
    }
    Ok(o.report.artifacts.len())
}

fn c12_determinism(dir: &Path, first: &[(&str, PathBuf, &RunOutcome)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, path, o) in first {
        let again = dir.join(format!("{name}_again"));
        let cfg = load(&format!("{}.toml", name.trim_end_matches("_101")));
        let cfg = if name.ends_with("_101") {
            let mut c = cfg;
            c.grid.nx = 101;
            c.grid.ny = Some(101);
            c.report.error_band = 5;
            c
        } else {
            cfg
        };
        exec(&cfg, &again);
        match same_bytes(path, &again, o) {
            Ok(n) => parts.push(format!("{name}: {n} artifacts identical")),
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        }
    }
}

fn main() -> ExitCode {
    let keep = std::env::var_os("SHG_ACCEPTANCE_OUT").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let dir = keep.unwrap_or_else(|| tmp.path().to_path_buf());
    let start = Instant::now();
    let mut lines: Vec<(u32, &str, Verdict)> = Vec::new();
    let mut report = |id: u32, name: &'static str, v: Verdict| {
        println!("{} {id:>2} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        lines.push((id, name, v));
    };

    report(1, "scalar solver order", guarded(c1_scalar_order));
    report(2, "coupled fixed point", guarded(c2_coupled_contraction));
    report(3, "linearization certificate", guarded(|| c3_certify(&dir)));
    report(4, "polarization identity", guarded(c4_polarization));

    let direct: Vec<(usize, RunOutcome)> = [101, 201, 401].map(|n| (n, direct_run(&dir, n))).into();
    report(5, "direct pipeline", guarded(|| c5_direct(&direct)));
    let k_direct = load("direct.toml").k;
    report(6, "potential reassembly", guarded(|| c6_reassembly(&dir.join("direct_101"), k_direct)));
    report(7, "gamma linear system", guarded(|| c7_gamma(&dir)));
    report(8, "real/complex assembly", guarded(c8_assembly));

    let names = ["exp1", "exp1_noise", "exp2", "exp3", "exp4"];
    let opt: Vec<(&str, RunOutcome)> = names.iter().map(|&n| (n, exec(&load(&format!("{n}.toml")), &dir.join(n)))).collect();
    let tolerance = load("exp1.toml").optimizer.guard_tolerance;
    report(9, "adjoint gradients and guard", guarded(|| c9_gradients(&opt, tolerance)));
    report(10, "experiment I", guarded(|| c10_experiment_i(&opt[0].1, &opt[1].1)));
    report(11, "experiments II-IV", guarded(|| c11_experiments(&opt)));
    let first = [
        ("exp1_noise", dir.join("exp1_noise"), &opt[1].1),
        ("direct_101", dir.join("direct_101"), &direct[0].1),
    ];
    report(12, "determinism", guarded(|| c12_determinism(&dir, &first)));

    let failed: Vec<u32> = lines.iter().filter(|(_, _, v)| !v.pass).map(|(id, _, _)| *id).collect();
    println!("acceptance: {} of {} passed in {:.0}s", lines.len() - failed.len(), lines.len(), start.elapsed().as_secs_f64());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {failed:?}");
        ExitCode::FAILURE
    }
}
