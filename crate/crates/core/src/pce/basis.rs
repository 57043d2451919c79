use serde::{Deserialize, Serialize};

use super::{generate_multi_indices, MultiIndex, PolyFamily};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A truncated tensor-product orthonormal basis.
///
/// The explicit index list is serialized so that model files stay
/// self-describing even if the generation rule changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub families: Vec<PolyFamily>,
    pub degree: u32,
    pub q_norm: f64,
    pub indices: Vec<MultiIndex>,
}

impl BasisSpec {
    pub fn new(families: Vec<PolyFamily>, degree: u32, q_norm: f64) -> Self {
        let indices = generate_multi_indices(families.len(), degree, q_norm);
        Self {
            families,
            degree,
            q_norm,
            indices,
        }
    }

    pub fn dim(&self) -> usize {
        self.families.len()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of `alpha` in the index list.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    fn max_degrees(&self) -> Vec<usize> {
        (0..self.dim())
            .map(|i| self.indices.iter().map(|a| a.0[i] as usize).max().unwrap_or(0))
            .collect()
    }

    /// Evaluates every ψ_α at a point of the standardized space.
    pub fn eval(&self, x_std: &[f64]) -> Result<Vec<f64>> {
        if x_std.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x_std.len(),
            });
        }
        let mut out = vec![0.0; self.len()];
        let mut ev = Evaluator::new(self);
        ev.eval_into(x_std, &mut out);
        Ok(out)
    }

    /// Design matrix Ψ with Ψ[i][k] = ψ_k(row i of `points_std`).
    pub fn design_matrix(&self, points_std: &Matrix) -> Result<DesignMatrix> {
        if points_std.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: points_std.ncols(),
            });
        }
        let mut ev = Evaluator::new(self);
        let p = self.len();
        let mut data = vec![0.0; points_std.nrows() * p];
        for (i, row) in points_std.rows().enumerate() {
            ev.eval_into(row, &mut data[i * p..(i + 1) * p]);
        }
        Ok(DesignMatrix(Matrix::from_vec(points_std.nrows(), p, data)))
    }
}

/// Reusable scratch space for repeated basis evaluation.
pub(crate) struct Evaluator<'a> {
    spec: &'a BasisSpec,
    univariate: Vec<Vec<f64>>,
}

impl<'a> Evaluator<'a> {
    pub(crate) fn new(spec: &'a BasisSpec) -> Self {
        let univariate = spec.max_degrees().iter().map(|&d| vec![0.0; d + 1]).collect();
        Self { spec, univariate }
    }

    pub(crate) fn eval_into(&mut self, x_std: &[f64], out: &mut [f64]) {
        for (i, fam) in self.spec.families.iter().enumerate() {
            fam.eval_all(x_std[i], &mut self.univariate[i]);
        }
        for (o, alpha) in out.iter_mut().zip(&self.spec.indices) {
            *o = alpha
                .0
                .iter()
                .enumerate()
                .map(|(i, &a)| self.univariate[i][a as usize])
                .product();
        }
    }
}

/// Row-major design matrix of basis evaluations.
#[derive(Clone, Debug)]
pub struct DesignMatrix(pub Matrix);

impl DesignMatrix {
    pub fn nrows(&self) -> usize {
        self.0.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    /// Ψ c.
    pub fn mul_vec(&self, c: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.0.rows()) {
            *o = dot(row, c);
        }
    }

    /// Adds Ψᵀ g to `out`.
    pub fn add_transpose_mul(&self, g: &[f64], out: &mut [f64]) {
        for (row, &gi) in self.0.rows().zip(g) {
            if gi != 0.0 {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o += gi * v;
                }
            }
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> DesignMatrix {
        DesignMatrix(self.0.select_rows(idx))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pce::gauss_nodes;

    #[test]
    fn constant_term_is_one() {
        let spec = BasisSpec::new(vec![PolyFamily::Hermite, PolyFamily::Legendre], 3, 1.0);
        let v = spec.eval(&[0.7, -0.2]).unwrap();
        assert_eq!(spec.indices[0], MultiIndex::zero(2));
        assert_eq!(v[0], 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let spec = BasisSpec::new(vec![PolyFamily::Hermite; 2], 2, 1.0);
        assert!(matches!(spec.eval(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    fn gram_error(spec: &BasisSpec, order: usize) -> f64 {
        let rules: Vec<_> = spec.families.iter().map(|&f| gauss_nodes(f, order).unwrap()).collect();
        let p = spec.len();
        let mut gram = vec![0.0; p * p];
        let dim = spec.dim();
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        loop {
            let mut w = 1.0;
            for d in 0..dim {
                point[d] = rules[d].nodes[idx[d]];
                w *= rules[d].weights[idx[d]];
            }
            let v = spec.eval(&point).unwrap();
            for a in 0..p {
                for b in 0..p {
                    gram[a * p + b] += w * v[a] * v[b];
                }
            }
            let mut d = 0;
            loop {
                if d == dim {
                    let mut worst: f64 = 0.0;
                    for a in 0..p {
                        for b in 0..p {
                            let target = if a == b { 1.0 } else { 0.0 };
                            worst = worst.max((gram[a * p + b] - target).abs());
                        }
                    }
                    return worst;
                }
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    #[test]
    fn hermite_gram_matrix_is_identity() {
        let spec = BasisSpec::new(vec![PolyFamily::Hermite; 2], 3, 1.0);
        assert!(gram_error(&spec, 40) < 1e-8);
    }

    #[test]
    fn mixed_gram_matrices_up_to_degree_six() {
        for dim in 1..=4 {
            for p in [2, 4, 6] {
                let fams: Vec<_> = (0..dim)
                    .map(|i| {
                        if i % 2 == 0 {
                            PolyFamily::Hermite
                        } else {
                            PolyFamily::Legendre
                        }
                    })
                    .collect();
                let spec = BasisSpec::new(fams, p, 0.8);
                assert!(gram_error(&spec, 8) < 1e-8, "dim={dim} p={p}");
            }
        }
    }
}
