//! Path complexity scores and the top-j / last-j grouping used by the
//! complexity-ranked attention.

use crate::error::{Error, Result};

/// Weights of the two complexity features: path length (`tau1`) and number
/// of distinct token types (`tau2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for ComplexityWeights {
    fn default() -> Self {
        ComplexityWeights { lambda1: 1.0, lambda2: 1.0 }
    }
}

/// `κ = λ₁·τ₁ + λ₂·τ₂`
pub fn complexity_score(tau1: usize, tau2: usize, w: ComplexityWeights) -> f64 {
    w.lambda1 * tau1 as f64 + w.lambda2 * tau2 as f64
}

/// Indices (into the original bag) of the most and least complex paths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComplexityGroups {
    /// Most complex first.
    pub complex: Vec<usize>,
    /// Least complex last, i.e. the tail of the descending ranking.
    pub simple: Vec<usize>,
}

/// Ranks paths by κ descending (ties by original index) and returns the
/// first and last `min(j, m)` of the ranking. When `m < 2j` the groups overlap.
pub fn rank_and_group(taus: &[(usize, usize)], j: usize, w: ComplexityWeights) -> Result<ComplexityGroups> {
    if taus.is_empty() {
        return Err(Error::Empty("path bag"));
    }
    if j == 0 {
        return Err(Error::InvalidArgument("j must be at least 1".into()));
    }
    let scores: Vec<f64> = taus.iter().map(|&(t1, t2)| complexity_score(t1, t2, w)).collect();
    let mut order: Vec<usize> = (0..taus.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let k = j.min(order.len());
    Ok(ComplexityGroups { complex: order[..k].to_vec(), simple: order[order.len() - k..].to_vec() })
}
