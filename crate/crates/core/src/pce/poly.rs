use serde::{Deserialize, Serialize};

/// Univariate orthonormal polynomial family.
///
/// `Hermite` is orthonormal under N(0, 1): ψ₁(ξ) = ξ, ψ₂(ξ) = (ξ² − 1)/√2.
/// `Legendre` is orthonormal under Uniform(−1, 1): ψₖ = √(2k+1) Pₖ.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyFamily {
    Hermite,
    Legendre,
}

impl PolyFamily {
    /// Off-diagonal entry bₖ of the Jacobi matrix, k ≥ 1:
    /// ξ ψₖ = bₖ₊₁ ψₖ₊₁ + bₖ ψₖ₋₁. Both families have zero diagonal.
    #[inline]
    pub(crate) fn recurrence(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            PolyFamily::Hermite => k.sqrt(),
            PolyFamily::Legendre => k / (4.0 * k * k - 1.0).sqrt(),
        }
    }

    /// Writes ψ₀(x) … ψ_{out.len()-1}(x).
    pub fn eval_all(self, x: f64, out: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        out[0] = 1.0;
        if out.len() == 1 {
            return;
        }
        out[1] = x / self.recurrence(1);
        for k in 1..out.len() - 1 {
            out[k + 1] = (x * out[k] - self.recurrence(k) * out[k - 1]) / self.recurrence(k + 1);
        }
    }

    /// ψₖ(x) for a single degree.
    pub fn eval(self, k: usize, x: f64) -> f64 {
        let mut buf = vec![0.0; k + 1];
        self.eval_all(x, &mut buf);
        buf[k]
    }

    /// Values and first derivatives of ψ₀ … ψₙ₋₁.
    pub(crate) fn eval_with_derivative(self, x: f64, vals: &mut [f64], ders: &mut [f64]) {
        let n = vals.len();
        if n == 0 {
            return;
        }
        vals[0] = 1.0;
        ders[0] = 0.0;
        if n == 1 {
            return;
        }
        let b1 = self.recurrence(1);
        vals[1] = x / b1;
        ders[1] = 1.0 / b1;
        for k in 1..n - 1 {
            let bk = self.recurrence(k);
            let bk1 = self.recurrence(k + 1);
            vals[k + 1] = (x * vals[k] - bk * vals[k - 1]) / bk1;
            ders[k + 1] = (vals[k] + x * ders[k] - bk * ders[k - 1]) / bk1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_low_degrees() {
        for &x in &[-2.0, -0.3, 0.0, 1.7] {
            assert!((PolyFamily::Hermite.eval(0, x) - 1.0).abs() < 1e-15);
            assert!((PolyFamily::Hermite.eval(1, x) - x).abs() < 1e-15);
            let h2 = (x * x - 1.0) / 2f64.sqrt();
            assert!((PolyFamily::Hermite.eval(2, x) - h2).abs() < 1e-14);
            let h3 = (x * x * x - 3.0 * x) / 6f64.sqrt();
            assert!((PolyFamily::Hermite.eval(3, x) - h3).abs() < 1e-14);
        }
    }

    #[test]
    fn legendre_low_degrees() {
        for &x in &[-1.0, -0.3, 0.0, 0.8] {
            assert!((PolyFamily::Legendre.eval(1, x) - 3f64.sqrt() * x).abs() < 1e-15);
            let p2 = 5f64.sqrt() * 0.5 * (3.0 * x * x - 1.0);
            assert!((PolyFamily::Legendre.eval(2, x) - p2).abs() < 1e-14);
        }
        // ψₖ(1) = √(2k+1)
        assert!((PolyFamily::Legendre.eval(7, 1.0) - 15f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn recurrence_is_stable_for_moderate_arguments() {
        let mut buf = vec![0.0; 31];
        for fam in [PolyFamily::Hermite, PolyFamily::Legendre] {
            for i in -100..=100 {
                fam.eval_all(i as f64 / 10.0, &mut buf);
                assert!(buf.iter().all(|v| v.is_finite()));
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut v = vec![0.0; 8];
        let mut d = vec![0.0; 8];
        let mut vp = vec![0.0; 8];
        let mut vm = vec![0.0; 8];
        let h = 1e-6;
        for fam in [PolyFamily::Hermite, PolyFamily::Legendre] {
            let x = 0.37;
            fam.eval_with_derivative(x, &mut v, &mut d);
            fam.eval_all(x + h, &mut vp);
            fam.eval_all(x - h, &mut vm);
            for k in 0..8 {
                let fd = (vp[k] - vm[k]) / (2.0 * h);
                assert!((fd - d[k]).abs() < 1e-6 * (1.0 + d[k].abs()));
            }
        }
    }
}
