//! One-dimensional transport through quantile functions.
//!
//! A piecewise-constant density has a piecewise-linear CDF, so its quantile
//! function is piecewise linear in `s`. Merging the CDF breakpoints of two
//! densities gives pieces on which both quantiles are affine, and every quantity
//! below is integrated exactly piece by piece.

use crate::error::{Error, Result};
use crate::grid::{Density, SpaceGrid};

/// Quantile function of a unit-mass 1-D density.
#[derive(Clone, Debug)]
pub struct QuantileFn {
    space: SpaceGrid,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl QuantileFn {
    pub fn new(m: &Density) -> Result<Self> {
        let space = m.space;
        if space.d != 1 {
            return Err(Error::Unsupported("quantile functions require d = 1".into()));
        }
        if m.values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(Error::Domain("density has negative or non-finite entries".into()));
        }
        let mass = m.mass();
        if mass <= 0.0 {
            return Err(Error::Domain("density has zero total mass".into()));
        }
        let dx = space.dx();
        let density: Vec<f64> = m.values.iter().map(|v| v / mass).collect();
        let mut cdf = Vec::with_capacity(space.nx + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for v in &density {
            acc += v * dx;
            cdf.push(acc);
        }
        // pin the top so that pieces cover [0, 1] exactly
        let last = cdf.len() - 1;
        cdf[last] = 1.0;
        Ok(QuantileFn { space, cdf, density })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.cdf
    }

    /// Cell whose CDF range contains `s` in its interior (always a cell of positive mass).
    fn cell_at(&self, s: f64) -> usize {
        let j = self.cdf.partition_point(|c| *c <= s);
        let mut cell = j.clamp(1, self.cdf.len() - 1) - 1;
        while self.density[cell] == 0.0 && cell > 0 {
            cell -= 1;
        }
        cell
    }

    /// Affine branch of `Q` on the cell containing `s_mid`, evaluated at `s`.
    fn branch(&self, cell: usize, s: f64) -> f64 {
        let x = self.space.face_coord(cell);
        let rho = self.density[cell];
        if rho > 0.0 {
            (x + (s - self.cdf[cell]) / rho).clamp(x, self.space.face_coord(cell + 1))
        } else {
            x
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, 1.0);
        self.branch(self.cell_at(s), s)
    }
}

/// A piece `[sa, sb]` of the merged quantile partition with both quantiles at its ends.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantilePiece {
    pub sa: f64,
    pub sb: f64,
    pub q0: [f64; 2],
    pub q1: [f64; 2],
}

impl QuantilePiece {
    /// End points of the piece under `(1-t) Q0 + t Q1`.
    pub fn at(&self, t: f64) -> [f64; 2] {
        [
            (1.0 - t) * self.q0[0] + t * self.q1[0],
            (1.0 - t) * self.q0[1] + t * self.q1[1],
        ]
    }

    pub fn mass(&self) -> f64 {
        self.sb - self.sa
    }
}

pub fn quantile_pieces(q0: &QuantileFn, q1: &QuantileFn) -> Vec<QuantilePiece> {
    let mut s: Vec<f64> = q0.breakpoints().iter().chain(q1.breakpoints()).copied().collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut pieces = Vec::with_capacity(s.len());
    for pair in s.windows(2) {
        let (sa, sb) = (pair[0], pair[1]);
        if sb <= sa {
            continue;
        }
        let mid = 0.5 * (sa + sb);
        let (c0, c1) = (q0.cell_at(mid), q1.cell_at(mid));
        pieces.push(QuantilePiece {
            sa,
            sb,
            q0: [q0.branch(c0, sa), q0.branch(c0, sb)],
            q1: [q1.branch(c1, sa), q1.branch(c1, sb)],
        });
    }
    pieces
}

fn pieces_of(m0: &Density, m1: &Density) -> Result<Vec<QuantilePiece>> {
    if m0.space != m1.space {
        return Err(Error::Shape("densities live on different grids".into()));
    }
    Ok(quantile_pieces(&QuantileFn::new(m0)?, &QuantileFn::new(m1)?))
}

/// `int_a^b |D|` for `D` affine with end values `da`, `db`, over a length `len`.
fn abs_affine_integral(len: f64, da: f64, db: f64) -> f64 {
    if da * db >= 0.0 {
        0.5 * len * (da.abs() + db.abs())
    } else {
        0.5 * len * (da * da + db * db) / (da.abs() + db.abs())
    }
}

/// Quadratic Wasserstein distance `W_2^2 = int_0^1 |Q0 - Q1|^2 ds`.
pub fn w2_1d(m0: &Density, m1: &Density) -> Result<f64> {
    let total: f64 = pieces_of(m0, m1)?
        .iter()
        .map(|p| {
            let (da, db) = (p.q0[0] - p.q1[0], p.q0[1] - p.q1[1]);
            p.mass() * (da * da + da * db + db * db) / 3.0
        })
        .sum();
    Ok(total.max(0.0).sqrt())
}

/// `W_1 = int_0^1 |Q0 - Q1| ds`.
pub fn w1_1d(m0: &Density, m1: &Density) -> Result<f64> {
    Ok(pieces_of(m0, m1)?
        .iter()
        .map(|p| abs_affine_integral(p.mass(), p.q0[0] - p.q1[0], p.q0[1] - p.q1[1]))
        .sum())
}

/// `W_1` between the empirical measure of `samples` and `m`, computed as
/// `int |F_emp - F|` with breakpoints at the cell faces and the samples.
pub fn w1_empirical(samples: &[f64], m: &Density) -> Result<f64> {
    let q = QuantileFn::new(m)?;
    if samples.is_empty() {
        return Err(Error::Invalid("no samples".into()));
    }
    let space = m.space;
    let lo = space.face_coord(0);
    let hi = space.face_coord(space.nx);
    let mut xs: Vec<f64> = samples.iter().map(|x| x.clamp(lo, hi)).collect();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let dx = space.dx();
    let cdf = |x: f64| -> f64 {
        let c = (((x - lo) / dx).floor() as usize).min(space.nx - 1);
        q.cdf[c] + (x - space.face_coord(c)) * q.density[c]
    };

    let mut total = 0.0;
    let mut face = 1;
    let mut next_sample = 0;
    let mut x = lo;
    let mut emp = 0.0;
    while x < hi {
        while next_sample < xs.len() && xs[next_sample] <= x {
            next_sample += 1;
            emp = next_sample as f64 / n;
        }
        while face <= space.nx && space.face_coord(face) <= x {
            face += 1;
        }
        let mut end = if face <= space.nx { space.face_coord(face) } else { hi };
        if next_sample < xs.len() {
            end = end.min(xs[next_sample]);
        }
        if end <= x {
            break;
        }
        total += abs_affine_integral(end - x, cdf(x) - emp, cdf(end) - emp);
        x = end;
    }
    Ok(total)
}

/// McCann interpolation `((1-t) Q0 + t Q1)_# ds` rendered as cell averages.
pub fn displacement_interpolation_1d(m0: &Density, m1: &Density, t: f64) -> Result<Density> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("interpolation time {t} outside [0, 1]")));
    }
    let pieces = pieces_of(m0, m1)?;
    if t == 0.0 {
        return Ok(m0.clone());
    }
    if t == 1.0 {
        return Ok(m1.clone());
    }
    let space = m0.space;
    let lo = space.face_coord(0);
    let dx = space.dx();
    let nx = space.nx;
    let cell = |x: f64| (((x - lo) / dx).floor().max(0.0) as usize).min(nx - 1);
    let mut mass = vec![0.0; nx];
    for p in &pieces {
        let [xa, xb] = p.at(t);
        let len = xb - xa;
        if len <= 1e-14 * dx {
            mass[cell(0.5 * (xa + xb))] += p.mass();
            continue;
        }
        let (ca, cb) = (cell(xa), cell(xb));
        for c in ca..=cb {
            let overlap = xb.min(space.face_coord(c + 1)) - xa.max(space.face_coord(c));
            if overlap > 0.0 {
                mass[c] += p.mass() * overlap / len;
            }
        }
    }
    Density::new(space, mass.into_iter().map(|v| v / dx).collect())
}

/// `int |x|^2 d mu_t` of the continuum displacement interpolant.
pub fn displacement_moment(m0: &Density, m1: &Density, t: f64) -> Result<f64> {
    Ok(pieces_of(m0, m1)?
        .iter()
        .map(|p| {
            let [a, b] = p.at(t);
            p.mass() * (a * a + a * b + b * b) / 3.0
        })
        .sum())
}

/// `int rho_t^p` of the continuum displacement interpolant; infinite when a
/// piece collapses to a point.
pub fn displacement_lp_power(m0: &Density, m1: &Density, t: f64, p: f64) -> Result<f64> {
    let mut total = 0.0;
    for piece in pieces_of(m0, m1)? {
        let [a, b] = piece.at(t);
        let len = b - a;
        if len <= 0.0 {
            return Ok(f64::INFINITY);
        }
        total += piece.mass().powf(p) * len.powf(1.0 - p);
    }
    Ok(total)
}
