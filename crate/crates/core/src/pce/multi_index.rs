use serde::{Deserialize, Serialize};

/// Degrees of a multivariate polynomial, one entry per coordinate.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        Self(vec![0; dim])
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Hyperbolic q-norm (Σ αᵢ^q)^(1/q).
pub fn q_norm(alpha: &[u32], q: f64) -> f64 {
    let s: f64 = alpha.iter().filter(|&&a| a > 0).map(|&a| f64::from(a).powf(q)).sum();
    s.powf(1.0 / q)
}

fn push_total_degree(dim: usize, prefix: &mut Vec<u32>, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if prefix.len() == dim {
        out.push(prefix.clone());
        return;
    }
    for a in 0..=remaining {
        prefix.push(a);
        push_total_degree(dim, prefix, remaining - a, out);
        prefix.pop();
    }
}

/// All multi-indices of dimension `dim` whose q-norm is at most `p`, in
/// graded order (total degree, then descending lexicographic so that
/// (1,0) precedes (0,1)).
pub fn generate_multi_indices(dim: usize, p: u32, q: f64) -> Vec<MultiIndex> {
    assert!(dim >= 1, "dimension must be at least 1");
    assert!(q > 0.0 && q <= 1.0, "q-norm must lie in (0, 1]");
    let mut all = Vec::new();
    // Any q ≤ 1 norm dominates the 1-norm, so the total-degree set is a superset.
    push_total_degree(dim, &mut Vec::with_capacity(dim), p, &mut all);
    let mut set: Vec<MultiIndex> = all
        .into_iter()
        .filter(|a| q_norm(a, q) <= f64::from(p) + 1e-12)
        .map(MultiIndex)
        .collect();
    set.sort_by(|a, b| a.total_degree().cmp(&b.total_degree()).then_with(|| b.0.cmp(&a.0)));
    set
}
