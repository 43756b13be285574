use crate::model::LocalModel;

/// Iteration budget of the scalar root solve.
pub const PROX_MAX_ITERS: usize = 100;

/// Newton failure inside [`prox_action`]; carries the iteration count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxFailure {
    pub iterations: usize,
}

/// Proximal map of `(m, w) -> L~(x, m, w) + F(x, m)` with step `tau`.
///
/// For fixed `m > 0` the optimal momentum is `w = m (g w~ - tau z) / (tau + g m)`
/// and `xi = (w~ + m z) / (tau + g m)`; substituting leaves the scalar equation
/// `psi(m) = m - m~ + tau (f(m) - H(x, -xi(m))) = 0` with `psi' > 0`, solved by
/// Newton steps kept inside a bisection bracket. If `psi(0+) >= 0` the minimizer
/// is the origin.
pub fn prox_action(
    m_tilde: f64,
    w_tilde: &[f64],
    model: &LocalModel,
    tau: f64,
) -> Result<(f64, [f64; 2]), ProxFailure> {
    let d = model.d;
    let g = model.g;
    let z = model.z;
    let xi = |m: f64| -> [f64; 2] {
        let mut out = [0.0; 2];
        for i in 0..d {
            out[i] = (w_tilde[i] + m * z[i]) / (tau + g * m);
        }
        out
    };
    let psi = |m: f64| -> f64 {
        let x = xi(m);
        let h = model.hamiltonian(&[-x[0], -x[1]]);
        m - m_tilde + tau * (model.f_unchecked(m) - h)
    };
    let dpsi = |m: f64| -> f64 {
        let x = xi(m);
        let s: f64 = (0..d).map(|i| (z[i] - g * x[i]).powi(2)).sum();
        1.0 + tau * model.f_prime(m) + tau * s / (tau + g * m)
    };

    let psi0 = psi(0.0);
    if psi0 >= 0.0 {
        return Ok((0.0, [0.0; 2]));
    }
    let (mut lo, mut psi_lo) = (0.0, psi0);
    let mut hi = m_tilde.abs().max(1.0);
    let mut psi_hi = psi(hi);
    let mut iterations = 0;
    while psi_hi < 0.0 {
        lo = hi;
        psi_lo = psi_hi;
        hi *= 2.0;
        psi_hi = psi(hi);
        iterations += 1;
        if iterations > PROX_MAX_ITERS || !hi.is_finite() {
            return Err(ProxFailure { iterations });
        }
    }

    // Newton, falling back to false position (Illinois variant) and then
    // bisection when a step leaves the bracket. False position handles roots far
    // below the bracket width, where Newton from the top lands in rounding noise;
    // the Illinois weights stop it from stalling on one side when psi is steep
    // near zero.
    let mut m = lo - psi_lo * (hi - lo) / (psi_hi - psi_lo);
    if !(m > lo && m < hi) {
        m = 0.5 * (lo + hi);
    }
    let (mut w_lo, mut w_hi) = (psi_lo, psi_hi);
    let mut last_side = 0i8;
    let mut converged = false;
    while iterations < PROX_MAX_ITERS {
        iterations += 1;
        let r = psi(m);
        if r == 0.0 {
            converged = true;
            break;
        }
        if r < 0.0 {
            lo = m;
            w_lo = r;
            if last_side < 0 {
                w_hi *= 0.5;
            }
            last_side = -1;
        } else {
            hi = m;
            w_hi = r;
            if last_side > 0 {
                w_lo *= 0.5;
            }
            last_side = 1;
        }
        let step = r / dpsi(m);
        if step.abs() <= 1e-15 * m {
            m -= step;
            converged = true;
            break;
        }
        let mut next = m - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = lo - w_lo * (hi - lo) / (w_hi - w_lo);
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
        }
        if (next - m).abs() <= 1e-15 * m.max(1e-300) || hi - lo <= 4.0 * f64::EPSILON * hi {
            m = next;
            converged = true;
            break;
        }
        m = next;
    }
    if !converged {
        return Err(ProxFailure { iterations });
    }

    let mut w = [0.0; 2];
    for i in 0..d {
        w[i] = m * (g * w_tilde[i] - tau * z[i]) / (tau + g * m);
    }
    Ok((m, w))
}

/// Residual of the first-order conditions at `(m, w)`, relative to the input
/// scale. At `m = 0` it measures the violation of `psi(0+) >= 0`.
pub fn prox_stationarity(m_tilde: f64, w_tilde: &[f64], model: &LocalModel, tau: f64, m: f64, w: &[f64]) -> f64 {
    let d = model.d;
    let scale = 1.0 + m_tilde.abs() + (0..d).map(|i| w_tilde[i].abs()).sum::<f64>();
    if m == 0.0 {
        let w_norm: f64 = (0..d).map(|i| w[i].abs()).sum();
        let mut xi = [0.0; 2];
        for i in 0..d {
            xi[i] = w_tilde[i] / tau;
        }
        let psi0 = -m_tilde + tau * (model.f_unchecked(0.0) - model.hamiltonian(&[-xi[0], -xi[1]]));
        return (w_norm + (-psi0).max(0.0)) / scale;
    }
    // d/dw: (w + m z) / (g m) + (w - w~) / tau
    let mut res: f64 = 0.0;
    let mut xi = [0.0; 2];
    for i in 0..d {
        xi[i] = (w[i] + m * model.z[i]) / (model.g * m);
        res = res.max((xi[i] + (w[i] - w_tilde[i]) / tau).abs() * tau);
    }
    // d/dm: -H(x, -xi) + f(m) + (m - m~) / tau
    let dm = -model.hamiltonian(&[-xi[0], -xi[1]]) + model.f_unchecked(m) + (m - m_tilde) / tau;
    res.max((dm * tau).abs()) / scale
}
