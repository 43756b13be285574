use std::sync::Arc;

use rustdct::{DctPlanner, TransformType2And3};

/// Direct solver for the cell-centered Neumann Laplacian on a tensor grid.
///
/// Solves `L x = b` where `L = sum_a (second difference along a) / h_a^2` with
/// reflecting (zero-flux) ends on every axis; `L` is positive semidefinite with
/// the constants as its kernel. The returned solution has zero mean and the mean
/// of `b` is ignored.
pub struct NeumannPoisson {
    shape: Vec<usize>,
    eigs: Vec<Vec<f64>>,
    plans: Vec<Arc<dyn TransformType2And3<f64>>>,
}

impl NeumannPoisson {
    pub fn new(shape: &[usize], spacing: &[f64]) -> Self {
        assert_eq!(shape.len(), spacing.len());
        let mut planner = DctPlanner::new();
        let plans = shape.iter().map(|&n| planner.plan_dct2(n)).collect();
        let eigs = shape
            .iter()
            .zip(spacing)
            .map(|(&n, &h)| {
                (0..n)
                    .map(|k| {
                        let theta = std::f64::consts::PI * k as f64 / n as f64;
                        (2.0 - 2.0 * theta.cos()) / (h * h)
                    })
                    .collect()
            })
            .collect();
        NeumannPoisson {
            shape: shape.to_vec(),
            eigs,
            plans,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Applies `L` directly (finite differences); used to check solves.
    pub fn apply(&self, x: &[f64], spacing: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        let strides = self.strides();
        for (idx, o) in out.iter_mut().enumerate() {
            for (a, &n) in self.shape.iter().enumerate() {
                let pos = (idx / strides[a]) % n;
                let h2 = spacing[a] * spacing[a];
                if pos > 0 {
                    *o += (x[idx] - x[idx - strides[a]]) / h2;
                }
                if pos + 1 < n {
                    *o += (x[idx] - x[idx + strides[a]]) / h2;
                }
            }
        }
        out
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.shape.len()];
        for a in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * self.shape[a + 1];
        }
        strides
    }

    fn along_axis(&self, data: &mut [f64], axis: usize, inverse: bool) {
        let n = self.shape[axis];
        let stride = self.strides()[axis];
        let plan = &self.plans[axis];
        let mut line = vec![0.0; n];
        let mut scratch = vec![0.0; plan.get_scratch_len()];
        let block = n * stride;
        for outer in (0..data.len()).step_by(block) {
            for inner in 0..stride {
                let base = outer + inner;
                for (i, l) in line.iter_mut().enumerate() {
                    *l = data[base + i * stride];
                }
                if inverse {
                    plan.process_dct3_with_scratch(&mut line, &mut scratch);
                } else {
                    plan.process_dct2_with_scratch(&mut line, &mut scratch);
                }
                for (i, l) in line.iter().enumerate() {
                    data[base + i * stride] = *l;
                }
            }
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.len());
        let mut data = rhs.to_vec();
        for a in 0..self.shape.len() {
            self.along_axis(&mut data, a, false);
        }
        let strides = self.strides();
        for (idx, v) in data.iter_mut().enumerate() {
            let mut lambda = 0.0;
            for (a, &n) in self.shape.iter().enumerate() {
                lambda += self.eigs[a][(idx / strides[a]) % n];
            }
            *v = if idx == 0 { 0.0 } else { *v / lambda };
        }
        for a in 0..self.shape.len() {
            self.along_axis(&mut data, a, true);
        }
        // DCT-III(DCT-II(x)) = (n/2) x per axis.
        let scale: f64 = self.shape.iter().map(|&n| 2.0 / n as f64).product();
        data.iter_mut().for_each(|v| *v *= scale);
        data
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_neumann_systems_to_roundoff() {
        for (shape, spacing) in [
            (vec![16usize], vec![0.1]),
            (vec![8, 12], vec![0.125, 0.05]),
            (vec![6, 5, 7], vec![0.2, 0.3, 0.1]),
        ] {
            let solver = NeumannPoisson::new(&shape, &spacing);
            let n = solver.len();
            let mut rhs: Vec<f64> = (0..n).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect();
            let mean = rhs.iter().sum::<f64>() / n as f64;
            rhs.iter_mut().for_each(|v| *v -= mean);
            let x = solver.solve(&rhs);
            let back = solver.apply(&x, &spacing);
            let err = back.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
            assert!(err < 1e-12 * scale.max(1.0), "shape {shape:?}: err {err}");
            let xmean = x.iter().sum::<f64>() / n as f64;
            assert!(xmean.abs() < 1e-12);
        }
    }
}
