//! Discrete fragmentation operator `2∫_x^∞ B(y)κ(y,x)u(y)dy − B(x)u(x)`.
//!
//! `G_ij` is the gain in cell `i` per unit density in source cell `j`, with
//! the quadrature weight of the source folded in, so the gain is `Σ_j G_ij u_j`.
//! Raw entries integrate `2B(x_j)κ(x_j, ·)` over cell `i`. Each column is then
//! rescaled so that the mass it redistributes equals the mass it removes,
//! which makes `Σ x_i (apply u)_i Δx = 0` hold to rounding for every `u`.
//! The number of fragments carries the remaining quadrature error.

use crate::error::{Error, Result};
use crate::rates::{FragProfile, Kernel};
use crate::state::SizeGrid;

#[derive(Debug, Clone)]
pub struct FragOperator {
    grid: SizeGrid,
    kernel: Kernel,
    /// `G_ij` for `i < j` (uniform kernel: constant down each column).
    off_diag: Vec<f64>,
    /// `G_jj`.
    diag: Vec<f64>,
    /// `L_j = B(x_j)`.
    loss: Vec<f64>,
}

impl FragOperator {
    pub fn assemble(grid: SizeGrid, frag: &FragProfile) -> Result<Self> {
        let n = grid.len();
        let dx = grid.dx();
        let mut off_diag = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let loss: Vec<f64> = grid.centers().map(|x| frag.rate(x)).collect();

        for j in 0..n {
            let b = loss[j];
            if b == 0.0 {
                continue;
            }
            let y = grid.center(j);
            // integrals of 2Bκ(y, ·) over a full cell below j and over the
            // half cell [x_j - Δx/2, x_j]
            let below = frag.kernel_partial_moment(y, grid.face(1).min(y), 0)?;
            let own = frag.kernel_partial_moment(y, y, 0)?
                - frag.kernel_partial_moment(y, grid.face(j), 0)?;
            let raw_off = 2.0 * b * below;
            let raw_diag = 2.0 * b * own;
            let raw_mass = match frag.kernel {
                Kernel::Uniform => {
                    let sum_x_below: f64 = dx * (j * j) as f64 / 2.0;
                    raw_off * sum_x_below + raw_diag * y
                }
            };
            if raw_mass <= 0.0 {
                if y > dx {
                    return Err(Error::EmptyColumn { column: j });
                }
                continue;
            }
            let scale = y * b / raw_mass;
            off_diag[j] = raw_off * scale;
            diag[j] = raw_diag * scale;
        }
        Ok(FragOperator { grid, kernel: frag.kernel, off_diag, diag, loss })
    }

    pub fn grid(&self) -> &SizeGrid {
        &self.grid
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    /// Largest loss rate, which bounds the explicit step.
    /// `(G_{i>j}, G_jj, b_j)` columns, for callers that fuse the sweep.
    pub(crate) fn columns(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.off_diag, &self.diag, &self.loss)
    }

    pub fn max_loss(&self) -> f64 {
        self.loss.iter().cloned().fold(0.0, f64::max)
    }

    pub fn is_zero(&self) -> bool {
        self.loss.iter().all(|&b| b == 0.0)
    }

    /// Entry `G_ij`.
    #[inline]
    pub fn gain_entry(&self, i: usize, j: usize) -> f64 {
        match self.kernel {
            Kernel::Uniform => match i.cmp(&j) {
                std::cmp::Ordering::Less => self.off_diag[j],
                std::cmp::Ordering::Equal => self.diag[j],
                std::cmp::Ordering::Greater => 0.0,
            },
        }
    }

    /// Off-diagonal column value `G_ij` (`i < j`) and diagonal `G_jj`.
    pub fn column(&self, j: usize) -> (f64, f64) {
        (self.off_diag[j], self.diag[j])
    }

    /// Dense `n × n` gain matrix, row-major.
    pub fn dense_gain(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                g[i * n + j] = self.gain_entry(i, j);
            }
        }
        g
    }

    /// `(G u)_i - L_i u_i` in O(N) using suffix sums.
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out)?;
        Ok(out)
    }

    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.grid.len();
        if u.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: u.len() });
        }
        if out.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: out.len() });
        }
        let mut suffix = 0.0;
        for i in (0..n).rev() {
            out[i] = suffix + (self.diag[i] - self.loss[i]) * u[i];
            suffix += self.off_diag[i] * u[i];
        }
        Ok(())
    }

    /// Dense O(N²) evaluation of the same operator.
    pub fn apply_dense(&self, u: &[f64]) -> Result<Vec<f64>> {
        let n = self.grid.len();
        if u.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: u.len() });
        }
        let g = self.dense_gain();
        Ok((0..n)
            .map(|i| {
                let row = &g[i * n..(i + 1) * n];
                row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() - self.loss[i] * u[i]
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_op(n: usize) -> FragOperator {
        let grid = SizeGrid::new(10.0, n).unwrap();
        FragOperator::assemble(grid, &FragProfile::constant(1.0)).unwrap()
    }

    #[test]
    fn column_mass_balance_is_exact() {
        let op = unit_op(256);
        let g = op.grid;
        for j in 0..g.len() {
            let mass: f64 = (0..g.len()).map(|i| g.center(i) * op.gain_entry(i, j)).sum::<f64>();
            assert_relative_eq!(mass, g.center(j) * 1.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn column_number_production_is_one_extra_fragment() {
        let op = unit_op(256);
        let g = op.grid;
        for j in [1usize, 4, 16, 64, 255] {
            let number: f64 = (0..g.len()).map(|i| op.gain_entry(i, j)).sum::<f64>() - 1.0;
            let err = (number - 1.0).abs();
            assert!(err <= 2.0 * g.dx() / g.center(j), "column {j}: {number}");
        }
    }

    #[test]
    fn zero_rate_gives_zero_operator() {
        let grid = SizeGrid::new(1.0, 32).unwrap();
        let op = FragOperator::assemble(grid, &FragProfile::NONE).unwrap();
        assert!(op.is_zero());
        let out = op.apply(&vec![1.0; 32]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_mass_in_one_cell() {
        let op = unit_op(128);
        let g = op.grid;
        let j = 77;
        let mut u = vec![0.0; 128];
        u[j] = 1.0 / g.dx();
        let r = op.apply(&u).unwrap();
        let mass: f64 = r.iter().enumerate().map(|(i, ri)| g.center(i) * ri).sum::<f64>() * g.dx();
        let number: f64 = r.iter().sum::<f64>() * g.dx();
        assert!(mass.abs() < 1e-12);
        assert!((number - 1.0).abs() <= 2.0 * g.dx() / g.center(j));
    }

    #[test]
    fn dimension_mismatch() {
        let op = unit_op(16);
        assert!(matches!(op.apply(&[1.0; 3]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn fast_path_matches_dense() {
        let grid = SizeGrid::new(7.0, 512).unwrap();
        let op = FragOperator::assemble(grid, &FragProfile::saturated_power(1.3, 1.5, 4.0)).unwrap();
        // deterministic pseudo-random input
        let mut state = 0x2545f4914f6cdd1du64;
        let u: Vec<f64> = (0..512)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let fast = op.apply(&u).unwrap();
        let dense = op.apply_dense(&u).unwrap();
        let scale = dense.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for (a, b) in fast.iter().zip(&dense) {
            assert!((a - b).abs() <= 1e-12 * scale, "{a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn conserves_mass_and_creates_number(u in proptest::collection::vec(0.0f64..5.0, 64)) {
            let grid = SizeGrid::new(3.0, 64).unwrap();
            let op = FragOperator::assemble(grid, &FragProfile::saturated_power(2.0, 1.0, 1.5)).unwrap();
            let r = op.apply(&u).unwrap();
            let dx = grid.dx();
            let mass: f64 = r.iter().enumerate().map(|(i, ri)| grid.center(i) * ri).sum::<f64>() * dx;
            let scale: f64 = u.iter().enumerate().map(|(i, ui)| grid.center(i) * op.loss()[i] * ui).sum::<f64>() * dx;
            prop_assert!(mass.abs() <= 1e-13 * scale.max(1e-300) + 1e-300);
            let number: f64 = r.iter().sum::<f64>() * dx;
            prop_assert!(number >= -1e-14 * scale);
        }

        #[test]
        fn linear(u in proptest::collection::vec(0.0f64..5.0, 40), v in proptest::collection::vec(0.0f64..5.0, 40)) {
            let grid = SizeGrid::new(2.0, 40).unwrap();
            let op = FragOperator::assemble(grid, &FragProfile::constant(0.7)).unwrap();
            let sum: Vec<f64> = u.iter().zip(&v).map(|(a, b)| a + b).collect();
            let lhs = op.apply(&sum).unwrap();
            let ru = op.apply(&u).unwrap();
            let rv = op.apply(&v).unwrap();
            for i in 0..40 {
                prop_assert!((lhs[i] - (ru[i] + rv[i])).abs() <= 1e-12 * (1.0 + lhs[i].abs()));
            }
        }
    }
}
