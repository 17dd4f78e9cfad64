//! Sparse symmetric linear algebra for the FE subproblems: triplet assembly,
//! CSR storage, Jacobi-preconditioned conjugate gradients, and a small dense
//! LU used as an oracle and for tiny systems.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinSolveError {
    #[error(
        "conjugate gradients did not converge in {iters} iterations (residual {residual:.3e})"
    )]
    CgDiverged { iters: usize, residual: f64 },
    #[error("singular matrix (pivot {pivot:.3e} at row {row})")]
    Singular { row: usize, pivot: f64 },
}

/// Symmetric sparse matrix assembled from (row, col, value) triplets.
/// Duplicate entries are summed. Only structurally needed entries are kept.
#[derive(Debug, Clone)]
pub struct SparseSym {
    pub n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; n + 1];
        for &(r, _, _) in triplets {
            counts[r + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0f64; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            let k = next[r];
            next[r] += 1;
            cols[k] = c;
            vals[k] = v;
        }
        // Sort each row, merge duplicates.
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        for r in 0..n {
            let lo = counts[r];
            let hi = counts[r + 1];
            let mut row: Vec<(usize, f64)> = (lo..hi).map(|k| (cols[k], vals[k])).collect();
            row.sort_unstable_by_key(|e| e.0);
            let mut i = 0;
            while i < row.len() {
                let c = row[i].0;
                let mut v = row[i].1;
                let mut j = i + 1;
                while j < row.len() && row[j].0 == c {
                    v += row[j].1;
                    j += 1;
                }
                col_idx.push(c);
                values.push(v);
                i = j;
            }
            row_ptr[r + 1] = col_idx.len();
        }
        SparseSym {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; self.n]; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                a[r][self.col_idx[k]] = self.values[k];
            }
        }
        a
    }
}

/// Jacobi-preconditioned conjugate gradients for SPD systems. Convergence on
/// the preconditioned residual relative to the right-hand side.
pub fn solve_cg(
    a: &SparseSym,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, LinSolveError> {
    let n = a.n;
    if n == 0 {
        return Ok(vec![]);
    }
    let diag = a.diagonal();
    let inv_d: Vec<f64> = diag
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut z: Vec<f64> = r.iter().zip(&inv_d).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..max_iters {
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            return Ok(x);
        }
        a.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            // Semidefinite direction; bail out to the caller.
            return Err(LinSolveError::CgDiverged {
                iters: 0,
                residual: rnorm / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_d[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rnorm <= tol * bnorm {
        Ok(x)
    } else {
        Err(LinSolveError::CgDiverged {
            iters: max_iters,
            residual: rnorm / bnorm,
        })
    }
}

/// Dense LU with partial pivoting; `a` is row-major `n x n`.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>, LinSolveError> {
    let n = b.len();
    for k in 0..n {
        let (mut piv, mut best) = (k, a[k][k].abs());
        for r in k + 1..n {
            if a[r][k].abs() > best {
                best = a[r][k].abs();
                piv = r;
            }
        }
        if best < 1e-300 {
            return Err(LinSolveError::Singular {
                row: k,
                pivot: best,
            });
        }
        if piv != k {
            a.swap(k, piv);
            b.swap(k, piv);
        }
        for r in k + 1..n {
            let f = a[r][k] / a[k][k];
            if f == 0.0 {
                continue;
            }
            for c in k..n {
                a[r][c] -= f * a[k][c];
            }
            b[r] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let mut acc = b[k];
        for c in k + 1..n {
            acc -= a[k][c] * x[c];
        }
        x[k] = acc / a[k][k];
    }
    Ok(x)
}
