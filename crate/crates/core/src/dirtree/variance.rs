//! Prior variance of a complete ballot's probability, and matching a flat
//! Dirichlet to a Dirichlet-tree by that variance.

use super::{leaf_count, PriorConfig, PriorKind, TreeError};

/// Branch counts along a complete ballot's path, root first.
fn path_branches(k: usize, allow_partial: bool) -> impl Iterator<Item = f64> {
    (0..k.saturating_sub(1)).map(move |depth| {
        let remaining = k - depth;
        let term = allow_partial && depth > 0;
        (remaining + term as usize) as f64
    })
}

/// Variance under the prior of the probability of one complete ballot.
///
/// For the tree the probability is a product of independent Beta marginals,
/// one per node on the path, so
/// `Var = E[p]^2 * (prod_d c_d (a0 + 1) / (c_d a0 + 1) - 1)` with
/// `E[p] = prod_d 1 / c_d`. The product is accumulated in log space.
pub fn complete_ballot_prior_variance(config: &PriorConfig, k: usize) -> Result<f64, TreeError> {
    config.validate()?;
    let a0 = config.a0;
    if a0 == 0.0 {
        return Err(TreeError::ZeroA0Variance);
    }
    match config.kind {
        PriorKind::DirichletTree => {
            let mut ln_mean = 0.0;
            let mut ln_ratio = 0.0;
            for c in path_branches(k, config.allow_partial) {
                ln_mean -= c.ln();
                ln_ratio += (c * (a0 + 1.0) / (c * a0 + 1.0)).ln();
            }
            Ok((2.0 * ln_mean).exp() * ln_ratio.exp_m1())
        }
        PriorKind::Dirichlet => {
            let kk = leaf_count(k, config.allow_partial);
            Ok((kk - 1.0) / (kk * kk * (kk * a0 + 1.0)))
        }
    }
}

/// The flat Dirichlet concentration whose complete-ballot prior variance, over
/// the same leaf set, equals the tree's. Zero maps to zero.
pub fn match_dirichlet_a0(tree_a0: f64, k: usize, allow_partial: bool) -> Result<f64, TreeError> {
    let tree = PriorConfig::tree(tree_a0, allow_partial);
    tree.validate()?;
    if tree_a0 == 0.0 {
        return Ok(0.0);
    }
    let v = complete_ballot_prior_variance(&tree, k)?;
    let kk = leaf_count(k, allow_partial);
    let a = ((kk - 1.0) / (kk * kk * v) - 1.0) / kk;
    if a.is_finite() && a > 0.0 {
        Ok(a)
    } else {
        Err(TreeError::NoMatchingA0(v))
    }
}
