use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// One upper-triangle entry of a symmetric coefficient matrix.
///
/// An entry with `row != col` stands for the pair `A[row, col] = A[col, row] = value`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// `Σ_blocks trace(A_block · X_block) = rhs`, with `A` stored sparsely.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Constraint {
    entries: Vec<Entry>,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(rhs: f64) -> Self {
        Self {
            entries: Vec::new(),
            rhs,
        }
    }

    /// Adds `value` to `A[row, col]` and `A[col, row]` of `block`.
    ///
    /// For `row == col` this adds `value` to the diagonal entry once.
    pub fn add(&mut self, block: usize, row: usize, col: usize, value: f64) -> &mut Self {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.block == block && e.row == row && e.col == col)
        {
            e.value += value;
        } else {
            self.entries.push(Entry {
                block,
                row,
                col,
                value,
            });
        }
        self
    }

    /// Adds `value·(X[r,c] + X[c,r])/2` to the linear form, i.e. the
    /// symmetrized coefficient of a possibly off-diagonal position.
    pub fn add_sym(&mut self, block: usize, row: usize, col: usize, value: f64) -> &mut Self {
        if row == col {
            self.add(block, row, col, value)
        } else {
            self.add(block, row, col, value * 0.5)
        }
    }

    pub fn with_entry(mut self, block: usize, row: usize, col: usize, value: f64) -> Self {
        self.add(block, row, col, value);
        self
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn prune(&mut self) {
        self.entries.retain(|e| e.value != 0.0);
        self.entries
            .sort_by(|a, b| (a.block, a.row, a.col).cmp(&(b.block, b.row, b.col)));
    }

    /// `Σ trace(A_b X_b)` for symmetric `X`.
    pub fn apply(&self, blocks: &[DMatrix<f64>]) -> f64 {
        self.entries
            .iter()
            .map(|e| {
                let x = &blocks[e.block];
                if e.row == e.col {
                    e.value * x[(e.row, e.col)]
                } else {
                    e.value * (x[(e.row, e.col)] + x[(e.col, e.row)])
                }
            })
            .sum()
    }

    /// Dense copy of the coefficient matrix for `block`.
    pub fn dense_block(&self, block: usize, size: usize) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(size, size);
        for e in self.entries.iter().filter(|e| e.block == block) {
            a[(e.row, e.col)] += e.value;
            if e.row != e.col {
                a[(e.col, e.row)] += e.value;
            }
        }
        a
    }
}

/// `min Σ_b ⟨C_b, X_b⟩  s.t.  Σ_b ⟨A_jb, X_b⟩ = b_j,  X_b ⪰ 0`.
#[derive(Debug, Clone)]
pub struct BlockSdpProblem {
    block_sizes: Vec<usize>,
    cost_blocks: Vec<DMatrix<f64>>,
    constraints: Vec<Constraint>,
}

impl BlockSdpProblem {
    /// Validates shapes, symmetry and linear independence of the constraints.
    pub fn new(cost_blocks: Vec<DMatrix<f64>>, constraints: Vec<Constraint>) -> Result<Self> {
        let problem = Self::new_unchecked(cost_blocks, constraints)?;
        problem.check_independence()?;
        Ok(problem)
    }

    /// Like [`BlockSdpProblem::new`] but skips the rank test.
    pub fn new_unchecked(
        cost_blocks: Vec<DMatrix<f64>>,
        mut constraints: Vec<Constraint>,
    ) -> Result<Self> {
        if cost_blocks.is_empty() {
            return Err(Error::InvalidProblem("no blocks".into()));
        }
        let mut block_sizes = Vec::with_capacity(cost_blocks.len());
        for (b, c) in cost_blocks.iter().enumerate() {
            if !c.is_square() || c.nrows() == 0 {
                return Err(Error::InvalidProblem(format!(
                    "cost block {b} is {}x{}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            let asym = (c - c.transpose()).abs().max();
            if !(asym <= SYMMETRY_TOL) {
                return Err(Error::InvalidProblem(format!(
                    "cost block {b} not symmetric (max asymmetry {asym:.3e})"
                )));
            }
            block_sizes.push(c.nrows());
        }
        if constraints.is_empty() {
            return Err(Error::InvalidProblem("no constraints".into()));
        }
        for (j, con) in constraints.iter_mut().enumerate() {
            con.prune();
            if con.entries.is_empty() {
                return Err(Error::InvalidProblem(format!("constraint {j} is empty")));
            }
            if !con.rhs.is_finite() {
                return Err(Error::InvalidProblem(format!("constraint {j} rhs not finite")));
            }
            for e in &con.entries {
                let Some(&n) = block_sizes.get(e.block) else {
                    return Err(Error::InvalidProblem(format!(
                        "constraint {j} references block {}",
                        e.block
                    )));
                };
                if e.col >= n || !e.value.is_finite() {
                    return Err(Error::InvalidProblem(format!(
                        "constraint {j} entry ({}, {}) invalid for block {} of size {n}",
                        e.row, e.col, e.block
                    )));
                }
            }
        }
        Ok(Self {
            block_sizes,
            cost_blocks,
            constraints,
        })
    }

    pub fn block_sizes(&self) -> &[usize] {
        &self.block_sizes
    }

    pub fn cost_blocks(&self) -> &[DMatrix<f64>] {
        &self.cost_blocks
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn rhs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.rhs),
        )
    }

    /// `A(X)`.
    pub fn apply(&self, blocks: &[DMatrix<f64>]) -> DVector<f64> {
        DVector::from_iterator(
            self.constraints.len(),
            self.constraints.iter().map(|c| c.apply(blocks)),
        )
    }

    /// `Σ_j y_j A_j`, per block.
    pub fn adjoint(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out: Vec<DMatrix<f64>> = self
            .block_sizes
            .iter()
            .map(|&n| DMatrix::zeros(n, n))
            .collect();
        for (con, &yj) in self.constraints.iter().zip(y.iter()) {
            if yj == 0.0 {
                continue;
            }
            for e in &con.entries {
                let m = &mut out[e.block];
                m[(e.row, e.col)] += yj * e.value;
                if e.row != e.col {
                    m[(e.col, e.row)] += yj * e.value;
                }
            }
        }
        out
    }

    /// `H(y) = C - Σ_j y_j A_j`, per block.
    pub fn slack(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.adjoint(y)
            .into_iter()
            .zip(&self.cost_blocks)
            .map(|(a, c)| c - a)
            .collect()
    }

    pub fn objective(&self, blocks: &[DMatrix<f64>]) -> f64 {
        self.cost_blocks
            .iter()
            .zip(blocks)
            .map(|(c, x)| c.dot(x))
            .sum()
    }

    /// Gram matrix of the constraints under the Frobenius inner product.
    pub fn constraint_gram(&self) -> DMatrix<f64> {
        let m = self.constraints.len();
        let mut by_pos: BTreeMap<(usize, usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
        for (j, con) in self.constraints.iter().enumerate() {
            for e in &con.entries {
                // Off-diagonal entries appear twice in the full matrix.
                let w = if e.row == e.col { 1.0 } else { 2f64.sqrt() };
                by_pos
                    .entry((e.block, e.row, e.col))
                    .or_default()
                    .push((j, e.value * w));
            }
        }
        let mut gram = DMatrix::zeros(m, m);
        for list in by_pos.values() {
            for &(i, vi) in list {
                for &(j, vj) in list {
                    gram[(i, j)] += vi * vj;
                }
            }
        }
        gram
    }

    fn check_independence(&self) -> Result<()> {
        let gram = self.constraint_gram();
        let scale = gram.diagonal().max().max(1e-300);
        let eig = gram.symmetric_eigenvalues();
        let min = eig.min();
        if min <= 1e-10 * scale {
            return Err(Error::InvalidProblem(format!(
                "constraints are linearly dependent (smallest Gram eigenvalue {min:.3e})"
            )));
        }
        Ok(())
    }
}
