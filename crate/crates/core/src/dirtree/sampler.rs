//! Posterior-predictive sampling of unseen ballots.
//!
//! Draws propagate counts down the tree: a node holding `m` ballots splits
//! them among its branches with a Dirichlet-multinomial draw whose parameters
//! are `a0` plus the observed branch counts, and each branch that receives
//! ballots recurses. Only the nodes on the paths of drawn ballot types are
//! visited.

use super::{leaf_rankings, leaves_below, Node, PosteriorTree, PriorKind, TreeError};
use crate::ballots::{BallotMultiset, Candidate, Ranking};
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};
use std::collections::HashMap;

/// Log of a Gamma(shape, 1) variate. Shapes below one use the
/// `Gamma(shape + 1) * U^(1/shape)` identity so tiny shapes do not underflow.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).unwrap().sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).unwrap().sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Splits `m` among categories with a Dirichlet-multinomial draw.
///
/// Proportions come from normalized gamma variates; categories with zero
/// concentration get proportion exactly zero. The multinomial step is a
/// sequence of conditional binomials. When there are no more ballots than
/// categories the split is drawn as a sequential urn instead, which has the
/// same law. `work` is scratch space.
pub(crate) fn split_dirichlet_multinomial<R: Rng + ?Sized>(
    m: u64,
    alpha: &[f64],
    rng: &mut R,
    out: &mut Vec<u64>,
    work: &mut Vec<f64>,
) {
    out.clear();
    out.resize(alpha.len(), 0);
    if m == 0 {
        return;
    }
    let mut active = 0usize;
    let mut last = 0usize;
    let mut total = 0.0;
    for (i, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            active += 1;
            last = i;
            total += a;
        }
    }
    assert!(active > 0, "no category with positive concentration");
    if active == 1 {
        out[last] = m;
        return;
    }
    if m as usize <= active {
        // Sequential Pólya urn: each ballot picks a category with weight
        // alpha + ballots already placed there.
        for _ in 0..m {
            let mut u = rng.random::<f64>() * total;
            let mut pick = last;
            for (i, &a) in alpha.iter().enumerate() {
                if a > 0.0 {
                    u -= a + out[i] as f64;
                    if u < 0.0 {
                        pick = i;
                        break;
                    }
                }
            }
            out[pick] += 1;
            total += 1.0;
        }
        return;
    }
    let len = alpha.len();
    work.clear();
    work.resize(2 * len + 1, 0.0);
    let (weights, suffix) = work.split_at_mut(len);
    let mut max = f64::NEG_INFINITY;
    for (w, &a) in weights.iter_mut().zip(alpha) {
        *w = if a > 0.0 {
            ln_gamma_variate(a, rng)
        } else {
            f64::NEG_INFINITY
        };
        max = max.max(*w);
    }
    for w in weights.iter_mut() {
        *w = (*w - max).exp();
    }
    for i in (0..len).rev() {
        suffix[i] = suffix[i + 1] + weights[i];
    }
    let mut rem = m;
    for i in 0..len {
        if rem == 0 {
            break;
        }
        if alpha[i] <= 0.0 {
            continue;
        }
        if i == last {
            out[i] = rem;
            break;
        }
        let p = (weights[i] / suffix[i]).clamp(0.0, 1.0);
        let x = Binomial::new(rem, p).unwrap().sample(rng);
        out[i] = x;
        rem -= x;
    }
}

/// Ballot types produced by one draw, stored contiguously so that repeated
/// draws reuse the same allocation.
#[derive(Clone, Debug, Default)]
pub struct DrawBuffer {
    prefs: Vec<Candidate>,
    spans: Vec<(u32, u32, u64)>,
}

impl DrawBuffer {
    pub fn clear(&mut self) {
        self.prefs.clear();
        self.spans.clear();
    }

    fn push(&mut self, prefs: &[Candidate], count: u64) {
        let start = self.prefs.len() as u32;
        self.prefs.extend_from_slice(prefs);
        self.spans.push((start, prefs.len() as u32, count));
    }

    fn push_with(&mut self, prefix: &[Candidate], last: Candidate, count: u64) {
        let start = self.prefs.len() as u32;
        self.prefs.extend_from_slice(prefix);
        self.prefs.push(last);
        self.spans.push((start, prefix.len() as u32 + 1, count));
    }

    /// Distinct ballot types with their counts.
    pub fn iter(&self) -> impl Iterator<Item = (&[Candidate], u64)> + '_ {
        self.spans.iter().map(|&(s, l, c)| {
            let s = s as usize;
            (&self.prefs[s..s + l as usize], c)
        })
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.spans.iter().map(|s| s.2).sum()
    }

    pub fn to_multiset(&self) -> BallotMultiset {
        let mut v: Vec<(Ranking, u64)> = self
            .iter()
            .map(|(p, c)| (Ranking::from_vec_unchecked(p.to_vec()), c))
            .collect();
        if !v.windows(2).all(|w| w[0].0 < w[1].0) {
            v.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        }
        BallotMultiset::from_sorted_unique(v)
    }
}

/// How the flat Dirichlet baseline is sampled.
enum FlatPlan {
    /// Small leaf sets: one split over every ballot type.
    Explicit { leaves: DrawBuffer, alpha: Vec<f64> },
    /// Large leaf sets: split between the observed types and the pooled
    /// unobserved mass, then spread the pool with a symmetric urn.
    Pooled {
        observed: Vec<Ranking>,
        alpha: Vec<f64>,
        unobserved: f64,
    },
}

/// A posterior snapshot prepared for repeated draws.
pub struct PosteriorSampler<'a> {
    tree: &'a PosteriorTree,
    flat: Option<FlatPlan>,
}

impl<'a> PosteriorSampler<'a> {
    /// `max_draw` is the largest `m` the sampler will be asked for; it only
    /// steers the choice of flat-Dirichlet strategy.
    pub(super) fn new(tree: &'a PosteriorTree, max_draw: u64) -> Result<Self, TreeError> {
        let cfg = tree.config;
        if cfg.is_bootstrap() && tree.n() == 0 {
            return Err(TreeError::EmptyBootstrap);
        }
        // With a0 = 0 the flat Dirichlet and the tree have the same law
        // (branch parameters are sums of leaf counts), so both use the tree.
        let flat = if cfg.kind == PriorKind::Dirichlet && !cfg.is_bootstrap() {
            let k_leaves = tree.leaf_count();
            let budget = 4.0 * (tree.n() + max_draw) as f64 + 1024.0;
            Some(if k_leaves <= budget {
                let mut leaves = DrawBuffer::default();
                let mut alpha = Vec::new();
                for l in leaf_rankings(tree.k(), cfg.allow_partial) {
                    alpha.push(cfg.a0 + tree.type_count(&l) as f64);
                    leaves.push(l.prefs(), 0);
                }
                FlatPlan::Explicit { leaves, alpha }
            } else {
                let observed = tree.observed();
                let unobserved = k_leaves - observed.len() as f64;
                let (observed, alpha) = observed
                    .iter()
                    .map(|(r, c)| (r.clone(), cfg.a0 + c as f64))
                    .unzip();
                FlatPlan::Pooled {
                    observed,
                    alpha,
                    unobserved,
                }
            })
        } else {
            None
        };
        Ok(PosteriorSampler { tree, flat })
    }

    /// One joint draw of `m` ballots.
    pub fn sample<R: Rng + ?Sized>(&self, m: u64, rng: &mut R) -> BallotMultiset {
        let mut buf = DrawBuffer::default();
        self.sample_into(m, rng, &mut buf);
        buf.to_multiset()
    }

    /// One joint draw of `m` ballots written into `buf`, replacing its
    /// contents. Types are distinct; they are sorted except under the pooled
    /// flat strategy.
    pub fn sample_into<R: Rng + ?Sized>(&self, m: u64, rng: &mut R, buf: &mut DrawBuffer) {
        buf.clear();
        if m == 0 {
            return;
        }
        let mut split = Vec::new();
        let mut work = Vec::new();
        match &self.flat {
            None => {
                let k = self.tree.k();
                let mut walker = Walker {
                    k,
                    a0: self.tree.config.a0,
                    partial: self.tree.config.allow_partial,
                    prefix: Vec::with_capacity(k),
                    used: vec![false; k],
                    scratch: (0..k).map(|_| Scratch::default()).collect(),
                    work,
                    out: buf,
                };
                walker.descend(Some(&self.tree.root), m, rng);
            }
            Some(FlatPlan::Explicit { leaves, alpha }) => {
                split_dirichlet_multinomial(m, alpha, rng, &mut split, &mut work);
                for ((prefs, _), &c) in leaves.iter().zip(&split) {
                    if c > 0 {
                        buf.push(prefs, c);
                    }
                }
            }
            Some(FlatPlan::Pooled {
                observed,
                alpha,
                unobserved,
            }) => {
                let mut params = alpha.clone();
                params.push(unobserved * self.tree.config.a0);
                split_dirichlet_multinomial(m, &params, rng, &mut split, &mut work);
                for (l, &c) in observed.iter().zip(&split) {
                    if c > 0 {
                        buf.push(l.prefs(), c);
                    }
                }
                let pooled = *split.last().unwrap();
                self.spread_pool(pooled, *unobserved, rng, buf);
            }
        }
    }

    /// Symmetric Dirichlet-multinomial over the unobserved types, drawn as a
    /// Pólya urn: each ballot joins an already-drawn type with weight
    /// `a0 + count` or opens a fresh type with the remaining mass.
    fn spread_pool<R: Rng + ?Sized>(
        &self,
        m: u64,
        unobserved: f64,
        rng: &mut R,
        out: &mut DrawBuffer,
    ) {
        let a0 = self.tree.config.a0;
        let mut types: Vec<(Ranking, u64)> = Vec::new();
        let mut index: HashMap<Ranking, usize> = HashMap::new();
        let mut balls: Vec<u32> = Vec::with_capacity(m as usize);
        for t in 0..m {
            let drawn = t as f64;
            let used = types.len() as f64;
            let u = rng.random::<f64>() * (drawn + unobserved * a0);
            let slot = if u < drawn {
                balls[rng.random_range(0..balls.len())] as usize
            } else if u < drawn + used * a0 {
                rng.random_range(0..types.len())
            } else {
                let fresh = loop {
                    let cand = self.uniform_leaf(rng);
                    if self.tree.type_count(&cand) == 0 && !index.contains_key(&cand) {
                        break cand;
                    }
                };
                index.insert(fresh.clone(), types.len());
                types.push((fresh, 0));
                types.len() - 1
            };
            types[slot].1 += 1;
            balls.push(slot as u32);
        }
        for (r, c) in &types {
            out.push(r.prefs(), *c);
        }
    }

    /// A ballot type drawn uniformly from the whole leaf set.
    fn uniform_leaf<R: Rng + ?Sized>(&self, rng: &mut R) -> Ranking {
        let k = self.tree.k();
        let partial = self.tree.config.allow_partial;
        let mut remaining: Vec<Candidate> = (0..k as Candidate).collect();
        let mut prefix = Vec::with_capacity(k);
        while remaining.len() > 1 {
            if partial && !prefix.is_empty() {
                let leaves = leaves_below(remaining.len(), true, false);
                if rng.random::<f64>() * leaves < 1.0 {
                    return Ranking::from_vec_unchecked(prefix);
                }
            }
            let i = rng.random_range(0..remaining.len());
            prefix.push(remaining.remove(i));
        }
        prefix.push(remaining[0]);
        Ranking::from_vec_unchecked(prefix)
    }
}

#[derive(Default)]
struct Scratch {
    branches: Vec<Candidate>,
    alpha: Vec<f64>,
    split: Vec<u64>,
}

/// Recursive count propagation over the preference tree.
struct Walker<'o> {
    k: usize,
    a0: f64,
    partial: bool,
    prefix: Vec<Candidate>,
    used: Vec<bool>,
    /// One per depth, reused across siblings.
    scratch: Vec<Scratch>,
    work: Vec<f64>,
    out: &'o mut DrawBuffer,
}

impl Walker<'_> {
    fn first_unused(&self) -> Candidate {
        self.used.iter().position(|u| !u).unwrap() as Candidate
    }

    /// Emits branches in sorted order: termination first, then candidates
    /// ascending.
    fn descend<R: Rng + ?Sized>(&mut self, node: Option<&Node>, m: u64, rng: &mut R) {
        let depth = self.prefix.len();
        let remaining = self.k - depth;
        if remaining == 1 {
            let last = self.first_unused();
            self.out.push_with(&self.prefix, last, m);
            return;
        }
        if node.is_none() && m == 1 {
            self.walk_unobserved(rng);
            return;
        }
        let term = self.partial && depth > 0;
        let mut s = std::mem::take(&mut self.scratch[depth]);
        s.branches.clear();
        s.alpha.clear();
        if term {
            s.alpha.push(self.a0 + node.map_or(0, |n| n.terminated) as f64);
        }
        for c in 0..self.k {
            if !self.used[c] {
                let c = c as Candidate;
                s.branches.push(c);
                let count = node.and_then(|n| n.child(c)).map_or(0, |n| n.total);
                s.alpha.push(self.a0 + count as f64);
            }
        }
        split_dirichlet_multinomial(m, &s.alpha, rng, &mut s.split, &mut self.work);
        let offset = term as usize;
        if term && s.split[0] > 0 {
            self.out.push(&self.prefix, s.split[0]);
        }
        for (j, &c) in s.branches.iter().enumerate() {
            let share = s.split[j + offset];
            if share == 0 {
                continue;
            }
            self.prefix.push(c);
            self.used[c as usize] = true;
            self.descend(node.and_then(|n| n.child(c)), share, rng);
            self.used[c as usize] = false;
            self.prefix.pop();
        }
        self.scratch[depth] = s;
    }

    /// A single ballot in an unobserved subtree: every branch has weight
    /// `a0`, so each step is uniform over the node's branches.
    fn walk_unobserved<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let start = self.prefix.len();
        loop {
            let remaining = self.k - self.prefix.len();
            if remaining == 1 {
                let last = self.first_unused();
                self.prefix.push(last);
                break;
            }
            let term = self.partial && !self.prefix.is_empty();
            let pick = rng.random_range(0..remaining + term as usize);
            if term && pick == 0 {
                break;
            }
            let nth = pick - term as usize;
            let c = (0..self.k).filter(|&c| !self.used[c]).nth(nth).unwrap();
            self.used[c] = true;
            self.prefix.push(c as Candidate);
        }
        self.out.push(&self.prefix, 1);
        for &c in &self.prefix[start..] {
            self.used[c as usize] = false;
        }
        self.prefix.truncate(start);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballots::Roster;
    use crate::dirtree::PriorConfig;
    use crate::rng::RandomStream;

    fn r(v: &[Candidate]) -> Ranking {
        Ranking::from_vec_unchecked(v.to_vec())
    }

    fn tree(k: usize, cfg: PriorConfig) -> PosteriorTree {
        PosteriorTree::new(Roster::new((0..k).map(|i| format!("C{i}"))).unwrap(), cfg).unwrap()
    }

    #[test]
    fn split_respects_total_and_zero_alpha() {
        let mut rng = RandomStream::new(1, 0).rng();
        let mut out = Vec::new();
        let mut work = Vec::new();
        for m in [0u64, 1, 2, 17, 1000] {
            split_dirichlet_multinomial(m, &[0.5, 0.0, 3.0, 1e-9], &mut rng, &mut out, &mut work);
            assert_eq!(out.iter().sum::<u64>(), m);
            assert_eq!(out[1], 0);
        }
    }

    #[test]
    fn tiny_concentrations_do_not_underflow() {
        let mut rng = RandomStream::new(2, 0).rng();
        let mut out = Vec::new();
        split_dirichlet_multinomial(50, &[1e-300, 1e-300, 1e-300], &mut rng, &mut out, &mut Vec::new());
        assert_eq!(out.iter().sum::<u64>(), 50);
    }

    #[test]
    fn zero_draws_is_empty() {
        let t = tree(3, PriorConfig::tree(1.0, true));
        assert!(t.sample_remaining(0, RandomStream::new(0, 0)).unwrap().is_empty());
    }

    #[test]
    fn bootstrap_resamples_observed_only() {
        let mut t = tree(2, PriorConfig::tree(0.0, true));
        assert_eq!(
            t.sample_remaining(3, RandomStream::new(0, 0)).unwrap_err(),
            TreeError::EmptyBootstrap
        );
        t.update(&r(&[0, 1]), 5).unwrap();
        for s in 0..20 {
            let d = t.sample_remaining(7, RandomStream::new(s, 1)).unwrap();
            assert_eq!(d.entries(), &[(r(&[0, 1]), 7)]);
        }
    }

    #[test]
    fn output_is_canonical_and_sums_to_m() {
        for cfg in [
            PriorConfig::tree(1.0, true),
            PriorConfig::tree(0.3, false),
            PriorConfig::dirichlet(0.7, true),
            PriorConfig::dirichlet(0.0, true),
        ] {
            let mut t = tree(5, cfg);
            if cfg.allow_partial {
                t.update(&r(&[1, 2]), 3).unwrap();
            }
            t.update(&r(&[0, 1, 2, 3, 4]), 2).unwrap();
            for s in 0..10 {
                let d = t.sample_remaining(500, RandomStream::new(s, 0)).unwrap();
                assert_eq!(d.total(), 500);
                assert!(d.entries().windows(2).all(|w| w[0].0 < w[1].0));
                for (rk, _) in d.iter() {
                    assert!(rk.is_canonical(5));
                    if !cfg.allow_partial {
                        assert!(rk.is_complete(5));
                    }
                }
            }
        }
    }

    #[test]
    fn pooled_flat_sampler_on_large_roster() {
        let mut t = tree(12, PriorConfig::dirichlet(1e-3, true));
        t.update(&r(&[3]), 4).unwrap();
        let d = t.sample_remaining(2000, RandomStream::new(5, 0)).unwrap();
        assert_eq!(d.total(), 2000);
        assert!(d.iter().all(|(rk, _)| rk.is_canonical(12)));
    }

    #[test]
    fn same_stream_same_draw() {
        let mut t = tree(4, PriorConfig::tree(1.0, true));
        t.update(&r(&[0, 3]), 2).unwrap();
        let a = t.sample_remaining(100, RandomStream::new(3, 9)).unwrap();
        let b = t.sample_remaining(100, RandomStream::new(3, 9)).unwrap();
        assert_eq!(a, b);
    }
}
