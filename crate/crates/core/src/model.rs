//! Hamiltonian, Lagrangian and coupling of a planning instance.
//!
//! The supported family is
//!
//! ```text
//! H(x, p) = g(x)/2 |p|^2 + z(x).p - V_H(x)
//! L(x, v) = sup_p [-v.p - H(x, p)] = |v + z(x)|^2 / (2 g(x)) + V_H(x)
//! f(x, m) = a(x) m^(p-1) + V_f(x),   F(x, m) = a(x) m^p / p + V_f(x) m
//! ```
//!
//! with spatial coefficients given as constants or as sampled fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{read_density_slice, SpaceGrid};

/// A coefficient sampled on cell centers of its own grid, interpolated bilinearly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledFn {
    pub d: usize,
    pub nx: usize,
    #[serde(rename = "R")]
    pub r: f64,
    pub values: Vec<f64>,
}

impl SampledFn {
    fn space(&self) -> Result<SpaceGrid> {
        let s = SpaceGrid::new(self.d, self.nx, self.r)?;
        if self.values.len() != s.n_cells() {
            return Err(Error::Shape(format!(
                "sampled coefficient has {} values for {} cells",
                self.values.len(),
                s.n_cells()
            )));
        }
        Ok(s)
    }
}

/// A spatial coefficient: a number, an inline sampled field, or a reference to
/// a single-slice field file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SpatialFn {
    Const(f64),
    Sampled(SampledFn),
    File { file: PathBuf },
}

impl Default for SpatialFn {
    fn default() -> Self {
        SpatialFn::Const(0.0)
    }
}

impl SpatialFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            SpatialFn::Const(c) => *c,
            SpatialFn::Sampled(s) => {
                let space = SpaceGrid { d: s.d, nx: s.nx, r: s.r };
                space.interpolate(&s.values, x)
            }
            SpatialFn::File { file } => {
                panic!("coefficient file {} was not resolved", file.display())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, SpatialFn::Const(_))
    }

    fn resolve(&mut self, base: &Path) -> Result<()> {
        match self {
            SpatialFn::File { file } => {
                let path = if file.is_relative() { base.join(&*file) } else { file.clone() };
                let m = read_density_slice(&path)?;
                *self = SpatialFn::Sampled(SampledFn {
                    d: m.space.d,
                    nx: m.space.nx,
                    r: m.space.r,
                    values: m.values,
                });
                Ok(())
            }
            SpatialFn::Sampled(s) => s.space().map(|_| ()),
            SpatialFn::Const(c) if !c.is_finite() => Err(Error::Invalid(format!("coefficient {c}"))),
            SpatialFn::Const(_) => Ok(()),
        }
    }
}

fn one() -> SpatialFn {
    SpatialFn::Const(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    #[serde(default = "one")]
    pub g: SpatialFn,
    /// Drift components; missing components are zero.
    #[serde(default)]
    pub z: Vec<SpatialFn>,
    #[serde(rename = "V_H", default)]
    pub v_h: SpatialFn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    #[serde(default = "one")]
    pub a: SpatialFn,
    #[serde(rename = "V_f", default)]
    pub v_f: SpatialFn,
}

/// Structural constants of the growth bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    #[serde(rename = "c_H")]
    pub c_h: f64,
    #[serde(rename = "c_H_plus")]
    pub c_h_plus: f64,
    #[serde(rename = "c_H_minus")]
    pub c_h_minus: f64,
    pub c_f: f64,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { c_h: 1.0, c_h_plus: 1.0, c_h_minus: 1.0, c_f: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub p: f64,
    pub hamiltonian: HamiltonianSpec,
    pub coupling: CouplingSpec,
    #[serde(default)]
    pub constants: Constants,
}

impl ModelSpec {
    /// `H = |p|^2 / 2`, `f = m^(p-1)`.
    pub fn quadratic(p: f64) -> Self {
        ModelSpec {
            p,
            hamiltonian: HamiltonianSpec { g: one(), z: Vec::new(), v_h: SpatialFn::Const(0.0) },
            coupling: CouplingSpec { a: one(), v_f: SpatialFn::Const(0.0) },
            constants: Constants::default(),
        }
    }

    /// `H = |p|^2 / 2` and `F(m) = eps m^p`.
    pub fn transport(p: f64, eps: f64) -> Self {
        let mut m = Self::quadratic(p);
        m.coupling.a = SpatialFn::Const(p * eps);
        m.constants.c_f = (p * eps).max(1.0 / (p * eps)).powf(1.0 / p);
        m
    }

    /// Model whose action is the Kantorovich-Lebesgue cost with weight `a`:
    /// `H = |p|^2 / (2a)`, `F(m) = (m + m^p) / (2a)`.
    pub fn kl(a: f64, p: f64) -> Self {
        let coef = p / (2.0 * a);
        ModelSpec {
            p,
            hamiltonian: HamiltonianSpec {
                g: SpatialFn::Const(1.0 / a),
                z: Vec::new(),
                v_h: SpatialFn::Const(0.0),
            },
            coupling: CouplingSpec {
                a: SpatialFn::Const(coef),
                v_f: SpatialFn::Const(1.0 / (2.0 * a)),
            },
            constants: Constants {
                c_h: a.max(1.0 / a),
                c_h_plus: 1.0,
                c_h_minus: 1.0,
                c_f: coef.max(1.0 / coef).powf(1.0 / p),
            },
        }
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    /// Reads a model file; `{"file": ...}` coefficients are resolved relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut spec: ModelSpec = serde_json::from_str(&text)?;
        spec.resolve(path.parent().unwrap_or(Path::new(".")))?;
        Ok(spec)
    }

    /// Loads referenced coefficient files and validates the scalar data.
    pub fn resolve(&mut self, base: &Path) -> Result<()> {
        self.hamiltonian.g.resolve(base)?;
        self.hamiltonian.v_h.resolve(base)?;
        for z in self.hamiltonian.z.iter_mut() {
            z.resolve(base)?;
        }
        self.coupling.a.resolve(base)?;
        self.coupling.v_f.resolve(base)?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Invalid(format!("p = {} must exceed 1", self.p)));
        }
        if self.hamiltonian.z.len() > 2 {
            return Err(Error::Invalid("drift has more than 2 components".into()));
        }
        let c = self.constants;
        if !(c.c_h >= 1.0 && c.c_f >= 1.0 && c.c_h_plus >= 0.0 && c.c_h_minus >= 0.0) {
            return Err(Error::Invalid(format!("structural constants {c:?}")));
        }
        if let SpatialFn::Const(g) = self.hamiltonian.g {
            if g <= 0.0 {
                return Err(Error::Domain(format!("g = {g} must be positive")));
            }
        }
        if let SpatialFn::Const(a) = self.coupling.a {
            if a <= 0.0 {
                return Err(Error::Domain(format!("a = {a} must be positive")));
            }
        }
        Ok(())
    }

    /// True when no coefficient depends on `x`.
    pub fn is_x_independent(&self) -> bool {
        let h = &self.hamiltonian;
        h.g.is_constant()
            && h.v_h.is_constant()
            && h.z.iter().all(SpatialFn::is_constant)
            && self.coupling.a.is_constant()
            && self.coupling.v_f.is_constant()
    }

    /// True when the drift vanishes identically (then the action is time-reversible).
    pub fn has_zero_drift(&self) -> bool {
        self.hamiltonian.z.iter().all(|z| *z == SpatialFn::Const(0.0))
    }

    /// Coefficients frozen at `x`.
    pub fn at(&self, x: &[f64]) -> LocalModel {
        let mut z = [0.0; 2];
        for (a, zf) in self.hamiltonian.z.iter().enumerate().take(x.len()) {
            z[a] = zf.eval(x);
        }
        LocalModel {
            d: x.len(),
            p: self.p,
            g: self.hamiltonian.g.eval(x),
            z,
            v_h: self.hamiltonian.v_h.eval(x),
            a: self.coupling.a.eval(x),
            v_f: self.coupling.v_f.eval(x),
        }
    }

    /// Coefficients at every cell center of `space`.
    pub fn sample(&self, space: &SpaceGrid) -> Vec<LocalModel> {
        (0..space.n_cells())
            .map(|c| self.at(&space.cell_center(c)[..space.d]))
            .collect()
    }

    /// Whether `V_H >= 0` and `V_f >= 0` on the given cells, so that `L >= 0`
    /// and `f >= 0`.
    pub fn is_nonnegative_on(&self, space: &SpaceGrid) -> bool {
        self.sample(space).iter().all(|l| l.v_h >= 0.0 && l.v_f >= 0.0)
    }
}

/// Model coefficients at one point; all evaluations are closed form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalModel {
    pub d: usize,
    pub p: f64,
    pub g: f64,
    pub z: [f64; 2],
    pub v_h: f64,
    pub a: f64,
    pub v_f: f64,
}

fn dot(d: usize, a: &[f64], b: &[f64]) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

impl LocalModel {
    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn hamiltonian(&self, p: &[f64]) -> f64 {
        0.5 * self.g * dot(self.d, p, p) + dot(self.d, &self.z, p) - self.v_h
    }

    pub fn hamiltonian_grad_p(&self, p: &[f64]) -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..self.d {
            out[i] = self.g * p[i] + self.z[i];
        }
        out
    }

    pub fn lagrangian(&self, v: &[f64]) -> f64 {
        let s: f64 = (0..self.d).map(|i| (v[i] + self.z[i]).powi(2)).sum();
        0.5 * s / self.g + self.v_h
    }

    fn check_m(m: f64) -> Result<()> {
        if m >= 0.0 {
            Ok(())
        } else {
            Err(Error::Domain(format!("density m = {m} is negative")))
        }
    }

    pub fn coupling_f(&self, m: f64) -> Result<f64> {
        Self::check_m(m)?;
        Ok(self.f_unchecked(m))
    }

    pub(crate) fn f_unchecked(&self, m: f64) -> f64 {
        self.a * m.powf(self.p - 1.0) + self.v_f
    }

    /// `df/dm`; infinite at `m = 0` when `p < 2`.
    pub(crate) fn f_prime(&self, m: f64) -> f64 {
        self.a * (self.p - 1.0) * m.powf(self.p - 2.0)
    }

    pub fn big_f(&self, m: f64) -> Result<f64> {
        Self::check_m(m)?;
        Ok(self.big_f_unchecked(m))
    }

    pub(crate) fn big_f_unchecked(&self, m: f64) -> f64 {
        self.a * m.powf(self.p) / self.p + self.v_f * m
    }

    pub fn big_f_star(&self, alpha: f64) -> f64 {
        let q = self.q();
        let excess = (alpha - self.v_f).max(0.0);
        self.a.powf(-q / self.p) * excess.powf(q) / q
    }

    /// `m L(w/m)` extended by `0` at `(0, 0)` and `+inf` at `(0, w != 0)`.
    pub fn perspective_l(&self, m: f64, w: &[f64]) -> f64 {
        if m > 0.0 {
            let s: f64 = (0..self.d).map(|i| (w[i] + m * self.z[i]).powi(2)).sum();
            0.5 * s / (self.g * m) + self.v_h * m
        } else if m == 0.0 && w[..self.d].iter().all(|v| *v == 0.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `H(p) + p.v + L(v)`, written as the nonnegative square it equals.
    pub fn gap_yh(&self, p: &[f64], v: &[f64]) -> f64 {
        let s: f64 = (0..self.d)
            .map(|i| (self.g * p[i] + v[i] + self.z[i]).powi(2))
            .sum();
        0.5 * s / self.g
    }

    /// `F(m) - alpha m + F*(alpha)`.
    pub fn gap_yf(&self, m: f64, alpha: f64) -> Result<f64> {
        Self::check_m(m)?;
        Ok(self.gap_yf_unchecked(m, alpha))
    }

    pub(crate) fn gap_yf_unchecked(&self, m: f64, alpha: f64) -> f64 {
        (self.big_f_unchecked(m) - alpha * m + self.big_f_star(alpha)).max(0.0)
    }
}

pub fn hamiltonian(model: &ModelSpec, x: &[f64], p: &[f64]) -> f64 {
    model.at(x).hamiltonian(p)
}

pub fn hamiltonian_grad_p(model: &ModelSpec, x: &[f64], p: &[f64]) -> [f64; 2] {
    model.at(x).hamiltonian_grad_p(p)
}

pub fn lagrangian(model: &ModelSpec, x: &[f64], v: &[f64]) -> f64 {
    model.at(x).lagrangian(v)
}

pub fn coupling_f(model: &ModelSpec, x: &[f64], m: f64) -> Result<f64> {
    model.at(x).coupling_f(m)
}

#[allow(non_snake_case)]
pub fn F_value(model: &ModelSpec, x: &[f64], m: f64) -> Result<f64> {
    model.at(x).big_f(m)
}

#[allow(non_snake_case)]
pub fn F_star_value(model: &ModelSpec, x: &[f64], alpha: f64) -> f64 {
    model.at(x).big_f_star(alpha)
}

#[allow(non_snake_case)]
pub fn perspective_L(model: &ModelSpec, x: &[f64], m: f64, w: &[f64]) -> Result<f64> {
    LocalModel::check_m(m)?;
    Ok(model.at(x).perspective_l(m, w))
}

#[allow(non_snake_case)]
pub fn gap_YH(model: &ModelSpec, x: &[f64], p: &[f64], v: &[f64]) -> f64 {
    model.at(x).gap_yh(p, v)
}

#[allow(non_snake_case)]
pub fn gap_YF(model: &ModelSpec, x: &[f64], m: f64, alpha: f64) -> Result<f64> {
    model.at(x).gap_yf(m, alpha)
}

/// Smallest slack per bound over all samples (negative would mean a violation).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub h_lower: f64,
    pub h_upper: f64,
    pub f_lower: f64,
    pub f_upper: f64,
    pub g_range: f64,
    pub a_range: f64,
    pub f_increasing: f64,
    pub h_convexity: f64,
}

/// Checks the quadratic sandwich on `H`, the power sandwich on `f`, the ranges
/// of `g` and `a`, monotonicity of `f` and midpoint convexity of `H` at every
/// sample, over a lattice of covectors `[-10, 10]^d` and densities `[0, 50]`.
pub fn growth_check(model: &ModelSpec, samples: &[Vec<f64>]) -> Result<GrowthReport> {
    model.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("growth_check needs at least one sample".into()));
    }
    let c = model.constants;
    let cfp = c.c_f.powf(model.p);
    let mut rep = GrowthReport {
        samples: samples.len(),
        h_lower: f64::INFINITY,
        h_upper: f64::INFINITY,
        f_lower: f64::INFINITY,
        f_upper: f64::INFINITY,
        g_range: f64::INFINITY,
        a_range: f64::INFINITY,
        f_increasing: f64::INFINITY,
        h_convexity: f64::INFINITY,
    };
    let lattice: Vec<f64> = (-10..=10).map(|k| k as f64).collect();
    let densities: Vec<f64> = (0..=50).map(|k| k as f64).chain([1e-3, 0.25, 0.5]).collect();

    let fail = |bound: &str, x: &[f64], slack: f64| Error::GrowthViolation {
        bound: bound.to_string(),
        point: x.to_vec(),
        slack,
    };
    let tol = 1e-12;
    for x in samples {
        let d = x.len();
        let l = model.at(x);
        let r1 = 1.0 + x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r2 = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
        let gamma_plus = c.c_h_plus * r1;
        let gamma_minus = c.c_h_minus * r2;
        let gamma_f = l.v_f.abs();

        let covectors: Vec<[f64; 2]> = if d == 1 {
            lattice.iter().map(|&p| [p, 0.0]).collect()
        } else {
            lattice
                .iter()
                .flat_map(|&p| lattice.iter().map(move |&q| [p, q]))
                .collect()
        };
        for (i, p) in covectors.iter().enumerate() {
            let h = l.hamiltonian(p);
            let p2 = dot(d, p, p);
            let lo = h - (p2 / (2.0 * c.c_h) - gamma_minus);
            let hi = 0.5 * c.c_h * p2 + gamma_plus - h;
            rep.h_lower = rep.h_lower.min(lo);
            rep.h_upper = rep.h_upper.min(hi);
            if lo < -tol {
                return Err(fail("H >= |p|^2/(2 c_H) - gamma_H^-", x, lo));
            }
            if hi < -tol {
                return Err(fail("H <= c_H/2 |p|^2 + gamma_H^+", x, hi));
            }
            let other = covectors[(i * 7 + 3) % covectors.len()];
            let mid = [(p[0] + other[0]) / 2.0, (p[1] + other[1]) / 2.0];
            let conv = 0.5 * h + 0.5 * l.hamiltonian(&other) - l.hamiltonian(&mid);
            rep.h_convexity = rep.h_convexity.min(conv);
            if conv < -1e-9 {
                return Err(fail("H convex in p", x, conv));
            }
        }
        let mut prev: Option<(f64, f64)> = None;
        let mut sorted = densities.clone();
        sorted.sort_by(f64::total_cmp);
        for &m in &sorted {
            let f = l.f_unchecked(m);
            let mp = m.powf(model.p - 1.0);
            let lo = f - (mp / cfp - gamma_f);
            let hi = cfp * mp + gamma_f - f;
            rep.f_lower = rep.f_lower.min(lo);
            rep.f_upper = rep.f_upper.min(hi);
            if lo < -tol {
                return Err(fail("f >= m^(p-1)/c_f^p - gamma_f", x, lo));
            }
            if hi < -tol {
                return Err(fail("f <= c_f^p m^(p-1) + gamma_f", x, hi));
            }
            if let Some((pm, pf)) = prev {
                let inc = f - pf;
                rep.f_increasing = rep.f_increasing.min(inc);
                if inc <= 0.0 {
                    return Err(fail("f strictly increasing", x, inc));
                }
                debug_assert!(m > pm);
            }
            prev = Some((m, f));
        }

        let g_slack = (l.g - 1.0 / c.c_h).min(c.c_h - l.g);
        rep.g_range = rep.g_range.min(g_slack);
        if g_slack < -tol {
            return Err(fail("1/c_H <= g <= c_H", x, g_slack));
        }
        let a_slack = (l.a - 1.0 / cfp).min(cfp - l.a);
        rep.a_range = rep.a_range.min(a_slack);
        if a_slack < -tol {
            return Err(fail("1/c_f^p <= a <= c_f^p", x, a_slack));
        }
    }
    Ok(rep)
}
