//! Heat semigroup `S_t` on the box with reflecting walls.
//!
//! Cell averages are propagated exactly: the transfer from cell `j` to cell `i`
//! is the double integral of the Gaussian kernel of variance `2t` over the two
//! cells, summed over the mirror images of `j`. With `Psi(u) = u Phi(u) + phi(u)`
//! the double integral over cells `n` apart is a second difference of `Psi`.
//! The kernel is a product over axes, so the transfer is applied axis by axis.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Density, SpaceGrid};

fn phi(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
}

/// `Psi(-u)` for `u >= 0`, i.e. `phi(u) - u Phi^c(u)`, without cancellation
/// against the linear part of `Psi`.
fn psi_neg(u: f64) -> f64 {
    let tail = 0.5 * libm::erfc(u / std::f64::consts::SQRT_2);
    (phi(u) - u * tail).max(0.0)
}

/// `K(n)`: fraction of a cell's mass landing in the cell `n` steps away, for
/// the free-space kernel.
fn cell_kernel(n: i64, h_over_sigma: f64) -> f64 {
    let r = 1.0 / h_over_sigma;
    let n = n.unsigned_abs() as f64;
    if n == 0.0 {
        1.0 + 2.0 * r * (psi_neg(h_over_sigma) - phi(0.0))
    } else {
        r * (psi_neg((n + 1.0) * h_over_sigma) - 2.0 * psi_neg(n * h_over_sigma)
            + psi_neg((n - 1.0) * h_over_sigma))
    }
}

/// 1-D transfer matrix with reflection at both walls; columns sum to one.
fn transfer_matrix(nx: usize, dx: f64, t: f64) -> Vec<f64> {
    let sigma = (2.0 * t).sqrt();
    let hs = dx / sigma;
    let period = 2 * nx as i64;
    // beyond this many cells the kernel is below underflow
    let reach = ((40.0 / hs).ceil() as i64 + 2).min(64 * period);
    let kernel: Vec<f64> = (0..=reach).map(|n| cell_kernel(n, hs)).collect();
    let k = |n: i64| -> f64 {
        let n = n.abs();
        if n > reach {
            0.0
        } else {
            kernel[n as usize]
        }
    };
    let wraps = reach / period + 2;
    let mut out = vec![0.0; nx * nx];
    for j in 0..nx as i64 {
        let mut col_sum = 0.0;
        for i in 0..nx as i64 {
            let mut v = 0.0;
            for w in -wraps..=wraps {
                v += k(i - j + period * w) + k(i + j + 1 + period * w);
            }
            out[i as usize * nx + j as usize] = v;
            col_sum += v;
        }
        for i in 0..nx {
            out[i * nx + j as usize] /= col_sum;
        }
    }
    out
}

/// `S_t m` with reflecting walls; mass is conserved to rounding.
pub fn heat_connector(m: &Density, t: f64) -> Result<Density> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat time must be positive, got {t}")));
    }
    let space = m.space;
    let nx = space.nx;
    let tm = transfer_matrix(nx, space.dx(), t);
    let mut values = m.values.clone();
    let mut line = vec![0.0; nx];
    for axis in 0..space.d {
        let stride = if axis == space.d - 1 { 1 } else { nx };
        let lines = space.n_cells() / nx;
        for l in 0..lines {
            let base = if stride == 1 { l * nx } else { l };
            for (i, o) in line.iter_mut().enumerate() {
                *o = (0..nx).map(|j| tm[i * nx + j] * values[base + j * stride]).sum();
            }
            for (i, v) in line.iter().enumerate() {
                values[base + i * stride] = *v;
            }
        }
    }
    Density::new(space, values)
}

/// `int |D m|^2 / m` with face differences and face-averaged densities.
pub fn fisher_information(m: &Density) -> f64 {
    let space = m.space;
    let dx = space.dx();
    let mut total = 0.0;
    for c in 0..space.n_cells() {
        let idx = space.multi_index(c);
        for a in 0..space.d {
            if idx[a] + 1 == space.nx {
                continue;
            }
            let mut next = idx;
            next[a] += 1;
            let (u, v) = (m.values[c], m.values[space.flat_index(next)]);
            let avg = 0.5 * (u + v);
            if avg > 0.0 {
                total += ((v - u) / dx).powi(2) / avg;
            }
        }
    }
    total * space.cell_volume()
}

fn lp_norm(space: &SpaceGrid, values: &[f64], p: f64) -> f64 {
    (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * space.cell_volume()).powf(1.0 / p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatSample {
    pub t: f64,
    pub lp_norm: f64,
    pub fisher: f64,
    /// `d / (8 pi t)`.
    pub fisher_bound: f64,
    /// `d / (2t)`, the Fisher information of the Gaussian kernel itself.
    pub gaussian_fisher: f64,
    pub boundary_mass: f64,
    pub mass_error: f64,
    /// Kernel width at least four cells and less than 1% of the mass at the walls.
    pub resolved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatReport {
    pub p: f64,
    pub samples: Vec<HeatSample>,
    /// Least-squares slope of `log |S_t m|_p` against `log t` over resolved samples.
    pub slope: f64,
    /// `-(1 - 1/p) d / 2`.
    pub expected_slope: f64,
    pub fisher_ok: bool,
}

/// Lp decay and Fisher information of `S_t m` at the given times.
pub fn heat_path_estimates(m: &Density, p: f64, times: &[f64]) -> Result<HeatReport> {
    if p <= 1.0 {
        return Err(Error::Domain(format!("exponent p = {p} must exceed 1")));
    }
    if times.is_empty() {
        return Err(Error::Invalid("no heat times".into()));
    }
    let space = m.space;
    let d = space.d as f64;
    let mass = m.mass();
    let mut samples = Vec::with_capacity(times.len());
    for &t in times {
        let mt = heat_connector(m, t)?;
        let boundary_mass = space.boundary_mass(&mt.values);
        samples.push(HeatSample {
            t,
            lp_norm: lp_norm(&space, &mt.values, p),
            fisher: fisher_information(&mt),
            fisher_bound: d / (8.0 * PI * t),
            gaussian_fisher: d / (2.0 * t),
            boundary_mass,
            mass_error: (mt.mass() - mass).abs(),
            resolved: (2.0 * t).sqrt() >= 4.0 * space.dx() && boundary_mass < 0.01 * mass,
        });
    }
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.resolved)
        .map(|s| (s.t.ln(), s.lp_norm.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    } else {
        f64::NAN
    };
    let fisher_ok = samples.iter().filter(|s| s.resolved).all(|s| s.fisher <= 1.1 * s.fisher_bound);
    Ok(HeatReport {
        p,
        samples,
        slope,
        expected_slope: -(1.0 - 1.0 / p) * d / 2.0,
        fisher_ok,
    })
}
