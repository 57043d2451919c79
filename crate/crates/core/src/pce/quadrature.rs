//! Gauss quadrature for the probability measures of the polynomial families.
//!
//! Nodes are the eigenvalues of the symmetric tridiagonal Jacobi matrix
//! (Golub–Welsch), computed with implicit QL and polished by Newton steps on
//! ψₙ. Weights use the Christoffel form w = 1 / Σₖ ψₖ(x)², which keeps full
//! relative accuracy for the tiny tail weights of high-order Hermite rules.

use serde::{Deserialize, Serialize};

use super::PolyFamily;
use crate::error::{invalid, Result};

/// Nodes and weights of a quadrature rule normalized to a probability measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Σ wⱼ f(xⱼ).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn tridiagonal_eigenvalues(d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 100, "QL iteration did not converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut i = m;
            let mut deflated = false;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
}

/// Gauss rule with `n` points for the measure of `family`
/// (N(0,1) for Hermite, Uniform(−1,1) for Legendre). Weights sum to one.
pub fn gauss_nodes(family: PolyFamily, n: usize) -> Result<QuadratureRule> {
    if !(1..=512).contains(&n) {
        return Err(invalid("n", format!("quadrature order must be in 1..=512, got {n}")));
    }
    let mut d = vec![0.0; n];
    let mut e: Vec<f64> = (1..=n)
        .map(|k| if k < n { family.recurrence(k) } else { 0.0 })
        .collect();
    tridiagonal_eigenvalues(&mut d, &mut e);
    d.sort_by(f64::total_cmp);

    let mut vals = vec![0.0; n + 1];
    let mut ders = vec![0.0; n + 1];
    let mut weights = Vec::with_capacity(n);
    for x in d.iter_mut() {
        for _ in 0..3 {
            family.eval_with_derivative(*x, &mut vals, &mut ders);
            if ders[n] == 0.0 {
                break;
            }
            let step = vals[n] / ders[n];
            *x -= step;
            if step.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        family.eval_all(*x, &mut vals[..n]);
        let christoffel: f64 = vals[..n].iter().map(|v| v * v).sum();
        weights.push(1.0 / christoffel);
    }
    // Both measures are symmetric about zero.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (d[j] - d[i]);
        d[i] = -x;
        d[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        d[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(QuadratureRule { nodes: d, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn single_point_rules() {
        let r = gauss_nodes(PolyFamily::Hermite, 1).unwrap();
        assert_eq!(r.nodes, vec![0.0]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn weights_sum_to_one() {
        for fam in [PolyFamily::Hermite, PolyFamily::Legendre] {
            for n in [1, 2, 3, 7, 10, 40, 100, 257, 512] {
                let r = gauss_nodes(fam, n).unwrap();
                let s: f64 = r.weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "{fam:?} n={n}: {s}");
                // Far-tail Hermite weights (|x| > ~37) underflow to zero.
                assert!(r.weights.iter().all(|&w| w >= 0.0 && w.is_finite()));
            }
        }
    }

    #[test]
    fn hermite_ten_points_integrate_moments_exactly() {
        let r = gauss_nodes(PolyFamily::Hermite, 10).unwrap();
        for k in 0..=19u32 {
            let got = r.integrate(|x| x.powi(k as i32));
            let want = if k % 2 == 1 {
                0.0
            } else {
                double_factorial(k.saturating_sub(1))
            };
            let scale = r.integrate(|x| x.abs().powi(k as i32)).max(1.0);
            assert!((got - want).abs() <= 1e-12 * scale, "k={k}: {got} vs {want}");
        }
    }

    #[test]
    fn legendre_integrates_uniform_moments() {
        let r = gauss_nodes(PolyFamily::Legendre, 12).unwrap();
        for k in 0..=23 {
            let got = r.integrate(|x| x.powi(k));
            let want = if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) };
            assert!((got - want).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn known_two_point_rules() {
        let h = gauss_nodes(PolyFamily::Hermite, 2).unwrap();
        assert!((h.nodes[1] - 1.0).abs() < 1e-15 && (h.weights[0] - 0.5).abs() < 1e-15);
        let l = gauss_nodes(PolyFamily::Legendre, 2).unwrap();
        assert!((l.nodes[1] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn order_out_of_range() {
        assert!(gauss_nodes(PolyFamily::Hermite, 0).is_err());
        assert!(gauss_nodes(PolyFamily::Legendre, 513).is_err());
    }
}
