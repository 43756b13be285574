//! Shared fixtures and brute-force oracles for the integration tests.
#![allow(dead_code)]

use mfplan::grid::{Density, SpaceGrid};
use mfplan::model::{CouplingSpec, HamiltonianSpec, ModelSpec, SpatialFn};
use rand::Rng;

pub fn gaussian(space: SpaceGrid, center: f64, sigma: f64) -> Density {
    Density::from_fn(space, |x| (-(x[0] - center).powi(2) / (2.0 * sigma * sigma)).exp()).unwrap()
}

/// Model with constant coefficients; `z` has `d` components.
pub fn const_model(p: f64, g: f64, z: [f64; 2], v_h: f64, a: f64, v_f: f64) -> ModelSpec {
    let mut m = ModelSpec::quadratic(p);
    m.hamiltonian = HamiltonianSpec {
        g: SpatialFn::Const(g),
        z: vec![SpatialFn::Const(z[0]), SpatialFn::Const(z[1])],
        v_h: SpatialFn::Const(v_h),
    };
    m.coupling = CouplingSpec { a: SpatialFn::Const(a), v_f: SpatialFn::Const(v_f) };
    m
}

pub fn random_model(rng: &mut impl Rng) -> ModelSpec {
    const_model(
        rng.gen_range(1.5..4.0),
        rng.gen_range(0.5..2.0),
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
        rng.gen_range(0.0..1.0),
        rng.gen_range(0.5..2.0),
        rng.gen_range(-1.0..1.0),
    )
}

/// `sup_p (-v.p - H(p))` over `[-20, 20]^2`: a coarse lattice scan followed by
/// two finer scans around the best node.
pub fn legendre_oracle(h: impl Fn([f64; 2]) -> f64, v: [f64; 2]) -> f64 {
    let obj = |p: [f64; 2]| -v[0] * p[0] - v[1] * p[1] - h(p);
    let mut best = ([0.0, 0.0], f64::NEG_INFINITY);
    let scan = |center: [f64; 2], half: f64, n: i32, best: &mut ([f64; 2], f64)| {
        let step = half / n as f64;
        for i in -n..=n {
            for j in -n..=n {
                let p = [
                    (center[0] + i as f64 * step).clamp(-20.0, 20.0),
                    (center[1] + j as f64 * step).clamp(-20.0, 20.0),
                ];
                let val = obj(p);
                if val > best.1 {
                    *best = (p, val);
                }
            }
        }
    };
    scan([0.0, 0.0], 20.0, 200, &mut best);
    scan(best.0, 0.2, 100, &mut best);
    scan(best.0, 0.004, 100, &mut best);
    best.1
}

/// `sup_{m in [0, 50]} (alpha m - F(m))` by a uniform scan with step `1e-4`.
pub fn conjugate_oracle(f: impl Fn(f64) -> f64, alpha: f64) -> f64 {
    let mut best = 0.0f64 - f(0.0);
    for i in 0..=500_000 {
        let m = i as f64 * 1e-4;
        best = best.max(alpha * m - f(m));
    }
    best
}

/// Random smooth positive 1-D density: a few bumps over a small floor.
pub fn random_density(space: SpaceGrid, rng: &mut impl Rng) -> Density {
    let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(1..4))
        .map(|_| {
            (
                rng.gen_range(-0.6..0.6) * space.r,
                rng.gen_range(0.05..0.3) * space.r,
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let floor = rng.gen_range(0.0..0.05);
    Density::from_fn(space, |x| {
        floor + bumps.iter().map(|(c, s, w)| w * (-(x[0] - c).powi(2) / (2.0 * s * s)).exp()).sum::<f64>()
    })
    .unwrap()
}

/// `W_2` by numerically inverting the CDF at `n` midpoint quantile levels.
pub fn w2_by_sampling(m0: &Density, m1: &Density, n: usize) -> f64 {
    let q = |m: &Density, s: f64| -> f64 {
        let dx = m.space.dx();
        let mut acc = 0.0;
        for (i, v) in m.values.iter().enumerate() {
            let next = acc + v * dx;
            if next >= s && *v > 0.0 {
                return m.space.face_coord(i) + (s - acc) / v;
            }
            acc = next;
        }
        m.space.r
    };
    let sum: f64 = (0..n)
        .map(|k| {
            let s = (k as f64 + 0.5) / n as f64;
            (q(m0, s) - q(m1, s)).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}
