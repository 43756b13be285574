use super::{continuity_residual, DensityField, GridSpec, MomentumField, NeumannPoisson, ScalarField, SpaceGrid};
use crate::error::{Error, Result};

/// Endpoint masses must agree to this absolute tolerance.
const MASS_TOLERANCE: f64 = 1e-12;

pub fn check_endpoint_masses(space: &SpaceGrid, m0: &[f64], m1: &[f64]) -> Result<()> {
    if m0.len() != space.n_cells() || m1.len() != space.n_cells() {
        return Err(Error::Shape("endpoint slices do not match the grid".into()));
    }
    if m0.iter().chain(m1).any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::Domain("endpoint densities must be nonnegative and finite".into()));
    }
    let (mass0, mass1) = (space.mass(m0), space.mass(m1));
    if (mass0 - mass1).abs() > MASS_TOLERANCE {
        return Err(Error::InfeasibleEndpoints { mass0, mass1 });
    }
    Ok(())
}

/// Euclidean projection onto the discrete continuity constraint.
///
/// The free unknowns are the interior density slices `1..nt` and the interior
/// faces; the endpoint slices are pinned and boundary faces stay at zero. The
/// normal equations `A A^T lambda = A U - b` are a cell-centered Neumann
/// Laplacian in space-time, solved by cosine transforms.
pub struct ContinuityProjector {
    grid: GridSpec,
    poisson: NeumannPoisson,
}

impl ContinuityProjector {
    pub fn new(grid: GridSpec) -> Self {
        let mut shape = vec![grid.nt];
        let mut spacing = vec![grid.dt()];
        for _ in 0..grid.d {
            shape.push(grid.nx);
            spacing.push(grid.dx());
        }
        ContinuityProjector {
            grid,
            poisson: NeumannPoisson::new(&shape, &spacing),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Projects `(m, w)` in place and returns the multiplier `lambda`, so that the
    /// free unknowns moved by `-A^T lambda`.
    pub fn project(
        &self,
        m: &mut DensityField,
        w: &mut MomentumField,
        m0: &[f64],
        m1: &[f64],
    ) -> Result<ScalarField> {
        let grid = self.grid;
        if m.grid != grid || w.grid != grid {
            return Err(Error::Shape("fields do not match the projector grid".into()));
        }
        let space = grid.space();
        check_endpoint_masses(&space, m0, m1)?;
        m.slice_mut(0).copy_from_slice(m0);
        m.slice_mut(grid.nt).copy_from_slice(m1);
        w.zero_boundary();

        let residual = continuity_residual(m, w)?;
        let lambda = ScalarField {
            grid,
            data: self.poisson.solve(&residual.data),
        };
        self.apply_adjoint_step(m, w, &lambda);
        Ok(lambda)
    }

    /// `U <- U - A^T lambda` on the free unknowns.
    fn apply_adjoint_step(&self, m: &mut DensityField, w: &mut MomentumField, lambda: &ScalarField) {
        let grid = self.grid;
        let space = grid.space();
        let n = grid.n_cells();
        let (dt, dx) = (grid.dt(), grid.dx());
        for k in 1..grid.nt {
            let before = lambda.slice(k - 1);
            let after = lambda.slice(k);
            let slice = m.slice_mut(k);
            for c in 0..n {
                slice[c] -= (before[c] - after[c]) / dt;
            }
        }
        for k in 0..grid.nt {
            let lam = lambda.slice(k);
            for a in 0..grid.d {
                let faces = w.faces_mut(a, k);
                for c in 0..n {
                    let mut idx = space.multi_index(c);
                    if idx[a] + 1 == space.nx {
                        continue;
                    }
                    let (_, hi) = space.cell_faces(a, c);
                    idx[a] += 1;
                    let right = space.flat_index(idx);
                    faces[hi] -= (lam[c] - lam[right]) / dx;
                }
            }
        }
    }
}

/// Projects `(m, w)` onto `{continuity residual = 0, m(0) = m0, m(1) = m1, no boundary flux}`.
pub fn project_continuity(
    m: &DensityField,
    w: &MomentumField,
    m0: &[f64],
    m1: &[f64],
) -> Result<(DensityField, MomentumField)> {
    let projector = ContinuityProjector::new(m.grid);
    let (mut m, mut w) = (m.clone(), w.clone());
    projector.project(&mut m, &mut w, m0, m1)?;
    Ok((m, w))
}
