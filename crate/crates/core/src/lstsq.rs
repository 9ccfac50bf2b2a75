//! Dense linear least squares with several right-hand sides, solved through a
//! Householder QR factorization that is accumulated block by block so the
//! full design matrix never has to be held in memory.

use nalgebra::DMatrix;

/// Rows folded into the factorization per QR call.
const BLOCK_ROWS: usize = 4096;

pub struct StreamingQr {
    cols: usize,
    rhs: usize,
    /// Upper-triangular factor of the augmented matrix `[A | B]`.
    r: Option<DMatrix<f64>>,
    pending: Vec<f64>,
    rows_seen: usize,
}

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    /// `solutions[j]` holds the coefficients for right-hand side `j`.
    pub solutions: Vec<Vec<f64>>,
    pub effective_rank: usize,
    /// Ratio of the largest to the smallest retained diagonal entry of R.
    pub condition_estimate: f64,
}

impl StreamingQr {
    pub fn new(cols: usize, rhs: usize) -> Self {
        Self { cols, rhs, r: None, pending: Vec::with_capacity(BLOCK_ROWS * (cols + rhs)), rows_seen: 0 }
    }

    pub fn rows(&self) -> usize {
        self.rows_seen
    }

    /// Appends one row: `a` has `cols` entries, `b` has `rhs` entries.
    pub fn push_row(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.cols);
        debug_assert_eq!(b.len(), self.rhs);
        self.pending.extend_from_slice(a);
        self.pending.extend_from_slice(b);
        self.rows_seen += 1;
        if self.pending.len() >= BLOCK_ROWS * (self.cols + self.rhs) {
            self.flush();
        }
    }

    fn flush(&mut self) {
        let width = self.cols + self.rhs;
        let new_rows = self.pending.len() / width;
        if new_rows == 0 {
            return;
        }
        let prev_rows = self.r.as_ref().map_or(0, |r| r.nrows());
        let mut m = DMatrix::<f64>::zeros(prev_rows + new_rows, width);
        if let Some(r) = &self.r {
            m.view_mut((0, 0), (prev_rows, width)).copy_from(r);
        }
        for (i, row) in self.pending.chunks_exact(width).enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(prev_rows + i, j)] = v;
            }
        }
        self.pending.clear();
        self.r = Some(m.qr().r());
    }

    /// Solves every right-hand side. Columns whose pivot falls below
    /// `rank_tol` times the largest pivot are treated as dependent and get a
    /// zero coefficient.
    pub fn solve(mut self, rank_tol: f64) -> LstsqSolution {
        self.flush();
        let p = self.cols;
        let Some(r) = self.r else {
            return LstsqSolution {
                solutions: vec![vec![0.0; p]; self.rhs],
                effective_rank: 0,
                condition_estimate: f64::INFINITY,
            };
        };
        let k = r.nrows().min(p);
        let max_diag = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        let keep: Vec<bool> = (0..p).map(|i| i < k && r[(i, i)].abs() > rank_tol * max_diag).collect();
        let effective_rank = keep.iter().filter(|&&b| b).count();
        let min_diag = (0..k).filter(|&i| keep[i]).map(|i| r[(i, i)].abs()).fold(f64::INFINITY, f64::min);
        let solutions = (0..self.rhs)
            .map(|j| {
                let mut x = vec![0.0; p];
                for i in (0..k).rev() {
                    if !keep[i] {
                        continue;
                    }
                    let mut s = r[(i, p + j)];
                    for c in i + 1..p {
                        s -= r[(i, c)] * x[c];
                    }
                    x[i] = s / r[(i, i)];
                }
                x
            })
            .collect();
        LstsqSolution { solutions, effective_rank, condition_estimate: max_diag / min_diag }
    }
}
