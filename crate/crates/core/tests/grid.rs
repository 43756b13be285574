mod common;

use mfplan::grid::{
    centered_density, centered_density_adjoint, continuity_residual, interp_center_to_face, interp_face_to_center,
    project_continuity, read_density, write_density, CellVectorField, Density, DensityField, GridSpec,
    MomentumField, ScalarField,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_flow(grid: GridSpec, seed: u64) -> (DensityField, MomentumField) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DensityField::zeros(grid);
    m.data.iter_mut().for_each(|v| *v = rng.gen_range(0.0..2.0));
    let mut w = MomentumField::zeros(grid);
    for c in w.comps.iter_mut() {
        c.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    (m, w)
}

fn endpoints(grid: GridSpec, seed: u64) -> (Density, Density) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = grid.space();
    let mut a: Vec<f64> = (0..s.n_cells()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let mut b: Vec<f64> = (0..s.n_cells()).map(|_| rng.gen_range(0.1..1.0)).collect();
    let (ma, mb) = (s.mass(&a), s.mass(&b));
    a.iter_mut().for_each(|v| *v /= ma);
    b.iter_mut().for_each(|v| *v /= mb);
    (Density::new(s, a).unwrap(), Density::new(s, b).unwrap())
}

fn grid_strategy() -> impl Strategy<Value = GridSpec> {
    (1usize..=2, 2usize..12, 4usize..12, 0.5f64..3.0)
        .prop_map(|(d, nt, nx, r)| GridSpec::new(d, nt, nx, r).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_is_feasible_and_idempotent(grid in grid_strategy(), seed in any::<u64>()) {
        let (m, w) = random_flow(grid, seed);
        let (m0, m1) = endpoints(grid, seed ^ 1);
        let (pm, pw) = project_continuity(&m, &w, &m0.values, &m1.values).unwrap();
        prop_assert!(continuity_residual(&pm, &pw).unwrap().max_abs() <= 1e-10);
        prop_assert_eq!(pm.slice(0), &m0.values[..]);
        prop_assert_eq!(pm.slice(grid.nt), &m1.values[..]);
        prop_assert_eq!(pw.max_boundary_flux(), 0.0);
        for mass in pm.slice_masses() {
            prop_assert!((mass - 1.0).abs() <= 1e-10);
        }
        let (qm, qw) = project_continuity(&pm, &pw, &m0.values, &m1.values).unwrap();
        let dm = qm.data.iter().zip(&pm.data).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        let dw = qw.comps.iter().zip(&pw.comps).flat_map(|(a, b)| a.iter().zip(b)).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        prop_assert!(dm <= 1e-10 && dw <= 1e-10, "{dm} {dw}");
    }

    #[test]
    fn projection_is_orthogonal(grid in grid_strategy(), seed in any::<u64>()) {
        // <U - P U, V - P U> = 0 for any feasible V, here V = P(random)
        let (m, w) = random_flow(grid, seed);
        let (m0, m1) = endpoints(grid, seed ^ 2);
        let (pm, pw) = project_continuity(&m, &w, &m0.values, &m1.values).unwrap();
        let (m2, w2) = random_flow(grid, seed ^ 3);
        let (vm, vw) = project_continuity(&m2, &w2, &m0.values, &m1.values).unwrap();
        let mut inner = 0.0;
        let mut scale = 0.0;
        for i in 0..m.data.len() {
            inner += (m.data[i] - pm.data[i]) * (vm.data[i] - pm.data[i]);
            scale += (m.data[i] - pm.data[i]).powi(2) + (vm.data[i] - pm.data[i]).powi(2);
        }
        for a in 0..grid.d {
            for i in 0..w.comps[a].len() {
                inner += (w.comps[a][i] - pw.comps[a][i]) * (vw.comps[a][i] - pw.comps[a][i]);
                scale += (w.comps[a][i] - pw.comps[a][i]).powi(2) + (vw.comps[a][i] - pw.comps[a][i]).powi(2);
            }
        }
        prop_assert!(inner.abs() <= 1e-9 * (1.0 + scale), "{inner} {scale}");
    }

    #[test]
    fn averaging_adjoints(grid in grid_strategy(), seed in any::<u64>()) {
        let (m, mut w) = random_flow(grid, seed);
        // the face averaging is adjoint on zero-flux momenta
        w.zero_boundary();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let mut s = ScalarField::zeros(grid);
        s.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let lhs: f64 = centered_density(&m).data.iter().zip(&s.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = m.data.iter().zip(&centered_density_adjoint(&s).data).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));

        let mut v = CellVectorField::zeros(grid);
        for c in v.comps.iter_mut() {
            c.data.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
        let fw = interp_face_to_center(&w);
        let lhs: f64 = (0..grid.d).map(|a| fw.comps[a].data.iter().zip(&v.comps[a].data).map(|(x, y)| x * y).sum::<f64>()).sum();
        let back = interp_center_to_face(&v);
        let rhs: f64 = (0..grid.d).map(|a| w.comps[a].iter().zip(&back.comps[a]).map(|(x, y)| x * y).sum::<f64>()).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
    }
}

#[test]
fn feasible_flow_is_preserved() {
    // a uniform stationary flow already satisfies every constraint
    let grid = GridSpec::new(2, 6, 9, 1.0).unwrap();
    let u = Density::uniform(grid.space());
    let mut m = DensityField::zeros(grid);
    for k in 0..=grid.nt {
        m.slice_mut(k).copy_from_slice(&u.values);
    }
    let w = MomentumField::zeros(grid);
    let (pm, pw) = project_continuity(&m, &w, &u.values, &u.values).unwrap();
    assert!(pm.data.iter().zip(&m.data).all(|(a, b)| (a - b).abs() < 1e-13));
    assert!(pw.comps.iter().flatten().all(|v| v.abs() < 1e-13));
}

#[test]
fn unequal_masses_are_rejected() {
    let grid = GridSpec::new(1, 4, 8, 1.0).unwrap();
    let (m, w) = random_flow(grid, 1);
    let a = Density::uniform(grid.space());
    let b: Vec<f64> = a.values.iter().map(|v| 2.0 * v).collect();
    assert!(project_continuity(&m, &w, &a.values, &b).is_err());
}

#[test]
fn density_field_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let grid = GridSpec::new(1, 5, 7, 1.5).unwrap();
    let (m, _) = random_flow(grid, 11);
    let path = dir.path().join("m.bin");
    write_density(&path, &m).unwrap();
    let back = read_density(&path).unwrap();
    assert_eq!(back, m);
}
