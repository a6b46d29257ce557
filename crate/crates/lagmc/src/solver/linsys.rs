//! Direct factorization of the Newton systems.
//!
//! The linearized system couples nodal values ring to ring (block
//! tridiagonal, dense blocks from the spectral angular derivatives) plus one
//! dense border: the column of the unknown constant `c` and the row of the
//! mean constraint. Blocks are eliminated forward with partially pivoted
//! dense LU; the border is folded into the final block so the constant-mode
//! near-kernel of the pure PDE part never becomes a pivot on its own.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinSysError {
    #[error("entry ({row}, {col}) outside the block-tridiagonal-plus-border pattern")]
    Pattern { row: usize, col: usize },
    #[error("singular pivot block {0}")]
    SingularBlock(usize),
}

/// Block tridiagonal matrix with one trailing dense border row/column.
pub struct BlockArrowMatrix {
    /// Start offset of each block; `starts[b]..starts[b+1]` are block `b` rows.
    starts: Vec<usize>,
    /// Block id and in-block offset per scalar index.
    lookup: Vec<(usize, usize)>,
    diag: Vec<DMatrix<f64>>,
    lower: Vec<DMatrix<f64>>, // lower[b]: block (b, b-1), empty matrix for b = 0
    upper: Vec<DMatrix<f64>>, // upper[b]: block (b, b+1), empty for the last
    border_col: Vec<DVector<f64>>,
    border_row: Vec<DVector<f64>>, // stored transposed
    corner: f64,
    n: usize,
}

impl BlockArrowMatrix {
    /// `sizes` partitions the `n` non-border unknowns into consecutive blocks.
    pub fn new(sizes: &[usize]) -> Self {
        let n: usize = sizes.iter().sum();
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        let mut lookup = Vec::with_capacity(n);
        let mut acc = 0;
        for (b, &s) in sizes.iter().enumerate() {
            starts.push(acc);
            for k in 0..s {
                let _ = k;
                lookup.push((b, lookup.len() - acc));
            }
            acc += s;
        }
        starts.push(acc);
        let nb = sizes.len();
        Self {
            starts,
            lookup,
            diag: sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect(),
            lower: (0..nb)
                .map(|b| {
                    if b == 0 {
                        DMatrix::zeros(0, 0)
                    } else {
                        DMatrix::zeros(sizes[b], sizes[b - 1])
                    }
                })
                .collect(),
            upper: (0..nb)
                .map(|b| {
                    if b + 1 == nb {
                        DMatrix::zeros(0, 0)
                    } else {
                        DMatrix::zeros(sizes[b], sizes[b + 1])
                    }
                })
                .collect(),
            border_col: sizes.iter().map(|&s| DVector::zeros(s)).collect(),
            border_row: sizes.iter().map(|&s| DVector::zeros(s)).collect(),
            corner: 0.0,
            n,
        }
    }

    /// Adds `v` at scalar position (`row`, `col`); index `n` is the border.
    pub fn add(&mut self, row: usize, col: usize, v: f64) -> Result<(), LinSysError> {
        if row == self.n && col == self.n {
            self.corner += v;
            return Ok(());
        }
        if row == self.n {
            let (bc, oc) = self.lookup[col];
            self.border_row[bc][oc] += v;
            return Ok(());
        }
        if col == self.n {
            let (br, or) = self.lookup[row];
            self.border_col[br][or] += v;
            return Ok(());
        }
        let (br, or) = self.lookup[row];
        let (bc, oc) = self.lookup[col];
        if br == bc {
            self.diag[br][(or, oc)] += v;
        } else if bc + 1 == br {
            self.lower[br][(or, oc)] += v;
        } else if br + 1 == bc {
            self.upper[br][(or, oc)] += v;
        } else {
            return Err(LinSysError::Pattern { row, col });
        }
        Ok(())
    }

    /// Matrix-vector product (before factorization); used by the
    /// finite-difference Jacobian oracle.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n + 1);
        let nb = self.diag.len();
        let xb: Vec<DVector<f64>> = (0..nb)
            .map(|b| DVector::from_column_slice(&x[self.starts[b]..self.starts[b + 1]]))
            .collect();
        let xc = x[self.n];
        let mut out = vec![0.0; self.n + 1];
        for b in 0..nb {
            let mut y = &self.diag[b] * &xb[b] + &self.border_col[b] * xc;
            if b > 0 {
                y += &self.lower[b] * &xb[b - 1];
            }
            if b + 1 < nb {
                y += &self.upper[b] * &xb[b + 1];
            }
            out[self.starts[b]..self.starts[b + 1]].copy_from_slice(y.as_slice());
            out[self.n] += self.border_row[b].dot(&xb[b]);
        }
        out[self.n] += self.corner * xc;
        out
    }

    /// Factorizes in place and solves for one right-hand side.
    pub fn solve(mut self, rhs: &[f64]) -> Result<Vec<f64>, LinSysError> {
        assert_eq!(rhs.len(), self.n + 1);
        let nb = self.diag.len();
        let mut r: Vec<DVector<f64>> = (0..nb)
            .map(|b| DVector::from_column_slice(&rhs[self.starts[b]..self.starts[b + 1]]))
            .collect();
        let mut r_border = rhs[self.n];

        let mut lus = Vec::with_capacity(nb - 1);
        let mut uprimes = Vec::with_capacity(nb - 1);
        let mut bprimes = Vec::with_capacity(nb - 1);
        let mut rows_at_elim = Vec::with_capacity(nb - 1);

        // forward block elimination; the last block is handled together with
        // the border
        for b in 0..nb - 1 {
            let lu = self.diag[b].clone().lu();
            let uprime = lu
                .solve(&self.upper[b])
                .ok_or(LinSysError::SingularBlock(b))?;
            let bprime = lu
                .solve(&self.border_col[b])
                .ok_or(LinSysError::SingularBlock(b))?;
            let y = lu.solve(&r[b]).ok_or(LinSysError::SingularBlock(b))?;

            let low = &self.lower[b + 1];
            self.diag[b + 1] -= low * &uprime;
            self.border_col[b + 1] -= low * &bprime;
            let rb1 = &mut r[b + 1];
            *rb1 -= low * &y;

            let brow = self.border_row[b].clone();
            self.corner -= brow.dot(&bprime);
            r_border -= brow.dot(&y);
            let upd = uprime.transpose() * &brow;
            self.border_row[b + 1] -= upd;

            lus.push(lu);
            uprimes.push(uprime);
            bprimes.push(bprime);
            rows_at_elim.push(brow);
            r[b] = y;
        }

        // final dense block augmented with the border unknown
        let last = nb - 1;
        let s = self.diag[last].nrows();
        let mut aug = DMatrix::zeros(s + 1, s + 1);
        aug.view_mut((0, 0), (s, s)).copy_from(&self.diag[last]);
        aug.view_mut((0, s), (s, 1))
            .copy_from(&self.border_col[last]);
        aug.view_mut((s, 0), (1, s))
            .copy_from(&self.border_row[last].transpose());
        aug[(s, s)] = self.corner;
        let mut rl = DVector::zeros(s + 1);
        rl.view_mut((0, 0), (s, 1)).copy_from(&r[last]);
        rl[s] = r_border;
        let sol = aug
            .lu()
            .solve(&rl)
            .ok_or(LinSysError::SingularBlock(last))?;
        let border_val = sol[s];
        r[last] = DVector::from_column_slice(&sol.as_slice()[..s]);

        // back substitution
        for b in (0..nb - 1).rev() {
            let next = r[b + 1].clone();
            let corr = &uprimes[b] * next + &bprimes[b] * border_val;
            r[b] -= corr;
        }

        let mut out = vec![0.0; self.n + 1];
        for b in 0..nb {
            out[self.starts[b]..self.starts[b + 1]].copy_from_slice(r[b].as_slice());
        }
        out[self.n] = border_val;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Dense reference solve for randomized consistency checks.
    fn dense_solve(a: &DMatrix<f64>, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        a.clone().lu().solve(&b).unwrap().as_slice().to_vec()
    }

    #[test]
    fn matches_dense_on_random_block_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for trial in 0..20 {
            let sizes = vec![3 + trial % 3, 4, 5, 4, 3];
            let n: usize = sizes.iter().sum();
            let mut arrow = BlockArrowMatrix::new(&sizes);
            let mut dense = DMatrix::zeros(n + 1, n + 1);
            let starts: Vec<usize> = {
                let mut v = vec![0];
                for &s in &sizes {
                    v.push(v.last().unwrap() + s);
                }
                v
            };
            let block_of = |i: usize| starts.iter().rposition(|&s| s <= i).unwrap();
            for row in 0..n {
                for col in 0..n {
                    let (br, bc) = (block_of(row), block_of(col));
                    if br.abs_diff(bc) <= 1 {
                        let v: f64 = rng.gen_range(-1.0..1.0) + if row == col { 6.0 } else { 0.0 };
                        arrow.add(row, col, v).unwrap();
                        dense[(row, col)] += v;
                    }
                }
                let v: f64 = rng.gen_range(-1.0..1.0);
                arrow.add(row, n, v).unwrap();
                dense[(row, n)] += v;
                let w: f64 = rng.gen_range(-1.0..1.0);
                arrow.add(n, row, w).unwrap();
                dense[(n, row)] += w;
            }
            let rhs: Vec<f64> = (0..=n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let got = arrow.solve(&rhs).unwrap();
            let want = dense_solve(&dense, &rhs);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn handles_constant_kernel_in_pde_block() {
        // rows of the u-block annihilate constants (like the discrete
        // operator); the border row fixes the constant
        let sizes = vec![3, 3];
        let mut arrow = BlockArrowMatrix::new(&sizes);
        let mut dense = DMatrix::zeros(7, 7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for row in 0usize..6 {
            let mut coeffs = [0.0; 6];
            let lo = row.saturating_sub(2);
            let hi = (row + 3).min(6);
            let mut sum = 0.0;
            for col in lo..hi {
                if col == row {
                    continue;
                }
                let v: f64 = rng.gen_range(0.5..1.5);
                coeffs[col] = v;
                sum += v;
            }
            coeffs[row] = -sum; // row sum zero: constants in the kernel
            for (col, v) in coeffs.iter().enumerate() {
                if *v != 0.0 {
                    arrow.add(row, col, *v).unwrap();
                    dense[(row, col)] = *v;
                }
            }
            arrow.add(row, 6, -1.0).unwrap();
            dense[(row, 6)] = -1.0;
        }
        for col in 0..6 {
            arrow.add(6, col, 1.0 / 6.0).unwrap();
            dense[(6, col)] = 1.0 / 6.0;
        }
        let rhs: Vec<f64> = (0..7).map(|i| (i as f64 * 0.77).sin()).collect();
        let got = arrow.solve(&rhs).unwrap();
        let want = dense_solve(&dense, &rhs);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9, "{g} vs {w}");
        }
    }

    #[test]
    fn rejects_out_of_pattern_entries() {
        let mut arrow = BlockArrowMatrix::new(&[2, 2, 2]);
        assert!(matches!(
            arrow.add(0, 5, 1.0),
            Err(LinSysError::Pattern { .. })
        ));
    }
}
