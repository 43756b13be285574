use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_endpoint_masses, project_continuity, Density, DensityField, GridSpec, MomentumField};
use crate::metrics::{displacement_interpolation_1d, heat_connector};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    LinearBlend,
    Displacement,
    HeatConnector,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-blend" => Ok(InitStrategy::LinearBlend),
            "displacement" => Ok(InitStrategy::Displacement),
            "heat-connector" => Ok(InitStrategy::HeatConnector),
            other => Err(Error::Invalid(format!("unknown init strategy `{other}`"))),
        }
    }
}

/// Feasible starting flow joining `m0` to `m1`.
///
/// * `LinearBlend`: `m(t) = (1-t) m0 + t m1`, momentum from the projection.
/// * `Displacement` (`d = 1`): McCann interpolation rendered per cell with the
///   momentum read off the transported cumulative mass, which satisfies the
///   discrete continuity equation exactly.
/// * `HeatConnector`: both endpoints diffused for time `heat_time * 4t(1-t)` and
///   blended, so interior slices are strictly positive; momentum from the projection.
pub fn initialize_flow(
    strategy: InitStrategy,
    grid: GridSpec,
    m0: &Density,
    m1: &Density,
    heat_time: f64,
) -> Result<(DensityField, MomentumField)> {
    let space = grid.space();
    if m0.space != space || m1.space != space {
        return Err(Error::Shape("endpoint densities do not match the grid".into()));
    }
    check_endpoint_masses(&space, &m0.values, &m1.values)?;
    let mut m = DensityField::zeros(grid);
    let mut w = MomentumField::zeros(grid);
    match strategy {
        InitStrategy::LinearBlend => {
            for k in 0..=grid.nt {
                let t = grid.node_time(k);
                for (o, (a, b)) in m.slice_mut(k).iter_mut().zip(m0.values.iter().zip(&m1.values)) {
                    *o = (1.0 - t) * a + t * b;
                }
            }
        }
        InitStrategy::Displacement => {
            if grid.d != 1 {
                return Err(Error::Unsupported("displacement initialization requires d = 1".into()));
            }
            let dx = grid.dx();
            let dt = grid.dt();
            let mut cdf_prev: Option<Vec<f64>> = None;
            for k in 0..=grid.nt {
                let slice = displacement_interpolation_1d(m0, m1, grid.node_time(k))?;
                let mut cdf = vec![0.0; grid.nx + 1];
                for i in 0..grid.nx {
                    cdf[i + 1] = cdf[i] + slice.values[i] * dx;
                }
                m.slice_mut(k).copy_from_slice(&slice.values);
                if let Some(prev) = cdf_prev {
                    let faces = w.faces_mut(0, k - 1);
                    for f in 1..grid.nx {
                        faces[f] = -(cdf[f] - prev[f]) / dt;
                    }
                }
                cdf_prev = Some(cdf);
            }
        }
        InitStrategy::HeatConnector => {
            if heat_time <= 0.0 {
                return Err(Error::Invalid("heat_time must be positive".into()));
            }
            for k in 0..=grid.nt {
                let t = grid.node_time(k);
                let s = heat_time * 4.0 * t * (1.0 - t);
                let (a, b) = if s > 0.0 {
                    (heat_connector(m0, s)?, heat_connector(m1, s)?)
                } else {
                    (m0.clone(), m1.clone())
                };
                for (o, (x, y)) in m.slice_mut(k).iter_mut().zip(a.values.iter().zip(&b.values)) {
                    *o = (1.0 - t) * x + t * y;
                }
            }
        }
    }
    project_continuity(&m, &w, &m0.values, &m1.values)
}
