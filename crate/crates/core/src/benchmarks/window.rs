//! Moving-window empirical statistics of a one-input dataset.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{invalid, Error, Result};

/// Statistics of the responses whose input lies in [u − Δ, u + Δ].
/// Windows with fewer than two points are flagged and carry no statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub u: f64,
    pub n_w: usize,
    pub flagged: bool,
    pub mean: Option<f64>,
    /// Unbiased (n_w − 1) variance.
    pub variance: Option<f64>,
    /// Order-statistic quantiles, one per requested level.
    pub quantiles: Option<Vec<f64>>,
}

/// Moving-window mean, variance, and quantiles along `u_grid`.
///
/// The α-quantile of a window of n_w sorted values is the value at the
/// 1-based position ⌊α·n_w⌋, clamped to [1, n_w].
pub fn moving_window_stats(data: &Dataset, delta: f64, u_grid: &[f64], levels: &[f64]) -> Result<Vec<WindowStats>> {
    if data.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: data.dim(),
        });
    }
    if !(delta > 0.0) {
        return Err(invalid("delta", "must be positive"));
    }
    if levels.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(invalid("quantile_levels", "levels must lie in (0, 1)"));
    }
    let mut pairs: Vec<(f64, f64)> = data.x.as_slice().iter().copied().zip(data.y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let us: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    Ok(u_grid
        .iter()
        .map(|&u| {
            let lo = us.partition_point(|&v| v < u - delta);
            let hi = us.partition_point(|&v| v <= u + delta);
            let n_w = hi - lo;
            if n_w < 2 {
                return WindowStats {
                    u,
                    n_w,
                    flagged: true,
                    mean: None,
                    variance: None,
                    quantiles: None,
                };
            }
            let mut ys: Vec<f64> = pairs[lo..hi].iter().map(|p| p.1).collect();
            // shifted by the first value: exact for constant windows
            let y0 = ys[0];
            let mean = y0 + ys.iter().map(|y| y - y0).sum::<f64>() / n_w as f64;
            let variance = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n_w - 1) as f64;
            ys.sort_by(f64::total_cmp);
            let quantiles = levels
                .iter()
                .map(|&a| {
                    let k = ((a * n_w as f64).floor() as usize).clamp(1, n_w);
                    ys[k - 1]
                })
                .collect();
            WindowStats {
                u,
                n_w,
                flagged: false,
                mean: Some(mean),
                variance: Some(variance),
                quantiles: Some(quantiles),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    #[test]
    fn constant_responses() {
        let x: Vec<f64> = (0..100).map(|i| i as f64 / 10.0).collect();
        let d = Dataset::new(Matrix::from_vec(100, 1, x), vec![4.2; 100]).unwrap();
        let s = moving_window_stats(&d, 0.5, &[3.0, 5.0], &[0.025, 0.5, 0.975]).unwrap();
        for w in s {
            assert!(!w.flagged);
            assert_eq!(w.mean, Some(4.2));
            assert_eq!(w.variance, Some(0.0));
            assert_eq!(w.quantiles, Some(vec![4.2; 3]));
        }
    }

    #[test]
    fn sparse_window_is_flagged() {
        let d = Dataset::new(Matrix::from_vec(3, 1, vec![0.0, 1.0, 2.0]), vec![1.0, 2.0, 3.0]).unwrap();
        let s = moving_window_stats(&d, 0.1, &[1.0], &[0.5]).unwrap();
        assert_eq!(s[0].n_w, 1);
        assert!(s[0].flagged && s[0].mean.is_none());
    }

    #[test]
    fn floor_index_quantile() {
        // window holds 1..=10; ⌊0.25·10⌋ = 2 → second value; ⌊0.05·10⌋ = 0 → clamped to first
        let x = vec![0.0; 10];
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let d = Dataset::new(Matrix::from_vec(10, 1, x), y).unwrap();
        let s = moving_window_stats(&d, 1.0, &[0.0], &[0.05, 0.25, 0.999]).unwrap();
        assert_eq!(s[0].quantiles, Some(vec![1.0, 2.0, 9.0]));
    }
}
