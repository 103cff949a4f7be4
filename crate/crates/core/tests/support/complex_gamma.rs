//! Dense complex assembly of the four-equation γ system in
//! `(u2, u2*, v2, v2*, γ)`, used as an oracle for the real-unknown system.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shg_core::field::TraceKind;
use shg_core::gamma::*;
use shg_core::*;

pub type C = Complex64;

pub fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn cplx(rng: &mut ChaCha8Rng) -> C {
    C::new(2.0 * unit(rng) - 1.0, 2.0 * unit(rng) - 1.0)
}

pub struct Case {
    pub g: GridSpec,
    pub input: GammaSystemInput,
    pub weights: RowWeights,
}

pub fn random_case(seed: u64, nx: usize, ny: usize) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lx = 0.5 + unit(&mut rng);
    let ly = 0.5 + unit(&mut rng);
    let g = GridSpec::new(nx, ny, 0.0, 0.0, lx, ly).unwrap();
    let n = g.len();
    let cf = |rng: &mut ChaCha8Rng| ComplexField::new(g, (0..n).map(|_| cplx(rng) + 1.5).collect()).unwrap();
    let rf = |rng: &mut ChaCha8Rng, lo: f64| RealField::new(g, (0..n).map(|_| lo + unit(rng)).collect()).unwrap();
    let tr = |rng: &mut ChaCha8Rng| {
        BoundaryTrace::new(g, (0..g.boundary_len()).map(|_| cplx(rng)).collect(), TraceKind::Neumann).unwrap()
    };
    let input = GammaSystemInput {
        u1: cf(&mut rng),
        v1: cf(&mut rng),
        h3: RealField::new(g, (0..n).map(|_| 2.0 * unit(&mut rng) - 1.0).collect()).unwrap(),
        j_u2: tr(&mut rng),
        j_v2: tr(&mut rng),
        gamma_g: rf(&mut rng, 0.5),
        eta: rf(&mut rng, 0.0),
        sigma: rf(&mut rng, 0.1),
        k: 0.5 + 2.0 * unit(&mut rng),
    };
    let weights = RowWeights {
        pde: 0.5 + unit(&mut rng),
        data: None,
        neumann: 0.5 + unit(&mut rng),
        tikhonov: 0.0,
    };
    Case { g, input, weights }
}

/// Dense complex system: unknown blocks `u2, u2*, v2, v2*, γ` over interior
/// nodes; rows `E1..E4` per interior node, the data row per interior node,
/// then four Neumann rows per boundary node.
struct ComplexSystem {
    m: Vec<Vec<C>>,
    b: Vec<C>,
    ni: usize,
    nb: usize,
}

fn complex_assembly(case: &Case) -> ComplexSystem {
    let g = case.g;
    let inp = &case.input;
    let (nx, ny) = (g.nx, g.ny);
    let (hx, hy) = (g.hx(), g.hy());
    let mut col = vec![None; g.len()];
    let mut interior = Vec::new();
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            col[j * nx + i] = Some(interior.len());
            interior.push(j * nx + i);
        }
    }
    let ni = interior.len();
    let nb = g.len() - ni;
    let ncols = 5 * ni;
    let k = inp.k;
    let k2 = k * k;
    let q = |p: usize, f: f64| {
        C::new(f * f * k2 * (1.0 + inp.eta.values()[p]), f * k * inp.sigma.values()[p])
    };
    let mut m = Vec::new();
    let mut b = Vec::new();
    let wp = case.weights.pde;
    let wd = 1.0 / hx.min(hy);
    let wn = case.weights.neumann;
    let row = || vec![C::new(0.0, 0.0); ncols];

    for &p in &interior {
        let (u1, v1) = (inp.u1.values()[p], inp.v1.values()[p]);
        let gcol = 4 * ni + col[p].unwrap();
        // (block, potential, conjugated, γ coefficient)
        let eqs = [
            (0, q(p, 1.0), 2.0 * k2 * u1.conj() * v1),
            (1, q(p, 1.0).conj(), 2.0 * k2 * u1 * v1.conj()),
            (2, q(p, 2.0), 8.0 * k2 * u1 * u1),
            (3, q(p, 2.0).conj(), 8.0 * k2 * u1.conj() * u1.conj()),
        ];
        for (blk, qq, s) in eqs {
            let mut r = row();
            let stencil = [
                (p - 1, 1.0 / (hx * hx)),
                (p + 1, 1.0 / (hx * hx)),
                (p - nx, 1.0 / (hy * hy)),
                (p + nx, 1.0 / (hy * hy)),
            ];
            for (t, c) in stencil {
                if let Some(ct) = col[t] {
                    r[blk * ni + ct] += wp * c;
                }
            }
            r[blk * ni + col[p].unwrap()] += wp * (qq - 2.0 / (hx * hx) - 2.0 / (hy * hy));
            r[gcol] += wp * s;
            m.push(r);
            b.push(C::new(0.0, 0.0));
        }
    }
    for &p in &interior {
        let (u1, v1) = (inp.u1.values()[p], inp.v1.values()[p]);
        let c = col[p].unwrap();
        let mut r = row();
        r[c] = wd * u1.conj();
        r[ni + c] = wd * u1;
        r[2 * ni + c] = wd * v1.conj();
        r[3 * ni + c] = wd * v1;
        m.push(r);
        let gs = inp.gamma_g.values()[p] * inp.sigma.values()[p];
        b.push(C::new(wd * inp.h3.values()[p] / (3.0 * gs), 0.0));
    }
    // One-sided second-order normal derivative; corners average two edges.
    let one_sided = |i: usize, j: usize, dir: (i64, i64), h: f64| {
        let at = |s: i64| ((j as i64 + s * dir.1) as usize) * nx + (i as i64 + s * dir.0) as usize;
        [(at(0), 1.5 / h), (at(1), -2.0 / h), (at(2), 0.5 / h)]
    };
    let bnodes = g.boundary_nodes();
    for (bi, &p) in bnodes.iter().enumerate() {
        let (i, j) = (p % nx, p / nx);
        let mut edges = Vec::new();
        if i == 0 {
            edges.push(one_sided(i, j, (1, 0), hx));
        }
        if i == nx - 1 {
            edges.push(one_sided(i, j, (-1, 0), hx));
        }
        if j == 0 {
            edges.push(one_sided(i, j, (0, 1), hy));
        }
        if j == ny - 1 {
            edges.push(one_sided(i, j, (0, -1), hy));
        }
        let scale = 1.0 / edges.len() as f64;
        let ju = inp.j_u2.values()[bi];
        let jv = inp.j_v2.values()[bi];
        for (blk, rhs) in [(0, ju), (1, ju.conj()), (2, jv), (3, jv.conj())] {
            let mut r = row();
            for e in &edges {
                for &(t, c) in e {
                    if let Some(ct) = col[t] {
                        r[blk * ni + ct] += wn * c * scale;
                    }
                }
            }
            m.push(r);
            b.push(wn * rhs);
        }
    }
    ComplexSystem { m, b, ni, nb }
}

/// Largest deviation, relative to the largest complex residual, between the
/// real assembly and the complex one at three random conjugate-consistent
/// points. Conjugate rows are checked against their partner rows too.
pub fn equivalence_deviation(seed: u64, nx: usize, ny: usize) -> f64 {
    let case = random_case(seed, nx, ny);
    let sys = assemble(&case.input, &case.weights).unwrap();
    let cs = complex_assembly(&case);
    let (ni, nb) = (cs.ni, cs.nb);
    assert_eq!(sys.layout.n, ni);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..3 {
        let x: Vec<f64> = (0..5 * ni).map(|_| 2.0 * unit(&mut rng) - 1.0).collect();
        let mut z = vec![C::new(0.0, 0.0); 5 * ni];
        for c in 0..ni {
            let u = C::new(x[c], x[ni + c]);
            let v = C::new(x[2 * ni + c], x[3 * ni + c]);
            z[c] = u;
            z[ni + c] = u.conj();
            z[2 * ni + c] = v;
            z[3 * ni + c] = v.conj();
            z[4 * ni + c] = C::new(x[4 * ni + c], 0.0);
        }
        let rc: Vec<C> = cs
            .m
            .iter()
            .zip(&cs.b)
            .map(|(r, b)| r.iter().zip(&z).map(|(a, b)| a * b).sum::<C>() - b)
            .collect();
        let ax = sys.matrix.mul_vec(&x);
        let rr: Vec<f64> = ax.iter().zip(&sys.rhs).map(|(a, b)| a - b).collect();
        let scale = rc.iter().map(|z| z.norm()).fold(1.0, f64::max);
        let mut dev = |d: f64| worst = worst.max(d / scale);

        let block = |b: RowBlock| sys.blocks.iter().find(|(k, _)| *k == b).unwrap().1.clone();
        let (pu, pv, dd, nu, nv) = (
            block(RowBlock::PdeU),
            block(RowBlock::PdeV),
            block(RowBlock::Data),
            block(RowBlock::NeumannU),
            block(RowBlock::NeumannV),
        );
        let mut pair = |e: &[C], real: &[f64], at: (usize, usize)| {
            dev((e[1] - e[0].conj()).norm());
            dev((e[3] - e[2].conj()).norm());
            dev((real[at.0] - e[0].re).abs().max((real[at.0 + 1] - e[0].im).abs()));
            dev((real[at.1] - e[2].re).abs().max((real[at.1 + 1] - e[2].im).abs()));
        };
        for c in 0..ni {
            pair(&rc[4 * c..4 * c + 4], &rr, (pu.start + 2 * c, pv.start + 2 * c));
        }
        for bi in 0..nb {
            let e = &rc[5 * ni + 4 * bi..5 * ni + 4 * bi + 4];
            pair(e, &rr, (nu.start + 2 * bi, nv.start + 2 * bi));
        }
        for c in 0..ni {
            let d = rc[4 * ni + c];
            dev(d.im.abs());
            dev((rr[dd.start + c] - d.re).abs());
        }
    }
    worst
}
