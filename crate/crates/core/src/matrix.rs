use serde::{Deserialize, Serialize};

/// Dense row-major matrix of samples: one row per point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    /// Wraps row-major `data`. Panics if the length is not `nrows * ncols`.
    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), nrows * ncols, "matrix data length");
        Self { nrows, ncols, data }
    }

    /// Builds a matrix from equally long rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * ncols);
        for r in rows {
            assert_eq!(r.as_ref().len(), ncols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            nrows: rows.len(),
            ncols,
            data,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty column count would panic
        (0..self.nrows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Copies the rows listed in `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.ncols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: idx.len(),
            ncols: self.ncols,
            data,
        }
    }
}

/// Least-squares solution of a full-rank overdetermined system.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastSquares {
    pub coefficients: Vec<f64>,
    /// Diagonal of the hat matrix, for leave-one-out residuals.
    pub leverage: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl LeastSquares {
    /// Mean squared leave-one-out residual, e_i / (1 − h_i).
    pub fn loo_mse(&self) -> f64 {
        let n = self.residuals.len() as f64;
        self.residuals
            .iter()
            .zip(&self.leverage)
            .map(|(e, h)| (e / (1.0 - h).max(1e-12)).powi(2))
            .sum::<f64>()
            / n
    }
}

/// Solves min ||A c − b|| by Householder QR. Rank deficiency (a pivot below
/// 1e-12 relative to the largest column norm) is reported as an error.
pub fn least_squares(a: &Matrix, b: &[f64]) -> crate::Result<LeastSquares> {
    let (n, p) = (a.nrows, a.ncols);
    if b.len() != n {
        return Err(crate::Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if n < p {
        return Err(crate::Error::Precondition(format!(
            "least squares needs at least as many rows ({n}) as columns ({p})"
        )));
    }
    // column-major working copy
    let mut q: Vec<Vec<f64>> = (0..p).map(|j| a.column(j)).collect();
    let scale = q
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut r = vec![vec![0.0; p]; p];
    let mut rhs = b.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(p);
    for k in 0..p {
        let norm = q[k][k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(crate::Error::Degenerate(format!(
                "design matrix is rank deficient at column {k}"
            )));
        }
        let alpha = if q[k][k] > 0.0 { -norm } else { norm };
        let mut v = q[k][k..].to_vec();
        v[0] -= alpha;
        let vn = v.iter().map(|x| x * x).sum::<f64>();
        let apply = |col: &mut [f64]| {
            let t = 2.0 * v.iter().zip(col.iter()).map(|(a, b)| a * b).sum::<f64>() / vn;
            col.iter_mut().zip(&v).for_each(|(c, vi)| *c -= t * vi);
        };
        for col in q.iter_mut().skip(k) {
            apply(&mut col[k..]);
        }
        apply(&mut rhs[k..]);
        for (j, col) in q.iter().enumerate().skip(k) {
            r[k][j] = col[k];
        }
        reflectors.push(v);
    }
    let mut c = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|j| r[k][j] * c[j]).sum();
        c[k] = (rhs[k] - s) / r[k][k];
    }
    // leverage: squared row norms of the thin Q factor
    let mut leverage = vec![0.0; n];
    let mut e = vec![0.0; n];
    for j in 0..p {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        for k in (0..p).rev() {
            let v = &reflectors[k];
            let vn: f64 = v.iter().map(|x| x * x).sum();
            let t = 2.0 * v.iter().zip(&e[k..]).map(|(a, b)| a * b).sum::<f64>() / vn;
            e[k..].iter_mut().zip(v).for_each(|(x, vi)| *x -= t * vi);
        }
        leverage.iter_mut().zip(&e).for_each(|(h, q)| *h += q * q);
    }
    let residuals = a
        .rows()
        .zip(b)
        .map(|(row, bi)| bi - row.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    Ok(LeastSquares {
        coefficients: c,
        leverage,
        residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fit_recovers_coefficients() {
        let rows: Vec<[f64; 3]> = (0..10)
            .map(|i| {
                let t = i as f64;
                [1.0, t, t * t]
            })
            .collect();
        let a = Matrix::from_rows(&rows);
        let b: Vec<f64> = rows.iter().map(|r| 2.0 - r[1] + 0.5 * r[2]).collect();
        let ls = least_squares(&a, &b).unwrap();
        for (g, w) in ls.coefficients.iter().zip([2.0, -1.0, 0.5]) {
            assert!((g - w).abs() < 1e-10);
        }
        assert!((ls.leverage.iter().sum::<f64>() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn loo_matches_brute_force() {
        let rows: Vec<[f64; 2]> = (0..8).map(|i| [1.0, (i as f64).sin()]).collect();
        let b: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).cos()).collect();
        let a = Matrix::from_rows(&rows);
        let ls = least_squares(&a, &b).unwrap();
        let mut brute = 0.0;
        for k in 0..8 {
            let idx: Vec<usize> = (0..8).filter(|&i| i != k).collect();
            let sub = least_squares(&a.select_rows(&idx), &idx.iter().map(|&i| b[i]).collect::<Vec<_>>()).unwrap();
            let pred: f64 = rows[k].iter().zip(&sub.coefficients).map(|(x, c)| x * c).sum();
            brute += (b[k] - pred).powi(2) / 8.0;
        }
        assert!((ls.loo_mse() - brute).abs() < 1e-12);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]]);
        assert!(least_squares(&a, &[1.0, 2.0, 3.0]).is_err());
    }
}
