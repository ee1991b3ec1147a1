//! Dirichlet-tree priors and posteriors over ranked ballots.
//!
//! The tree follows the preference order: the root branches on the first
//! preference, each child on the next preference among the remaining
//! candidates, and so on. With partial ballots enabled, every non-root node
//! with at least two remaining candidates also has a termination branch. A
//! node with a single remaining candidate is a leaf, so a ranking of `k - 1`
//! candidates is the same ballot type as the completed ranking.
//!
//! Every branch carries the same prior concentration `a0`. Only prefixes that
//! have been observed are stored; an unobserved branch contributes `a0` and
//! nothing else. The flat Dirichlet baseline uses the same trie for its
//! counts and treats the whole leaf set as the branches of a single node.

mod sampler;
mod variance;

pub use sampler::{DrawBuffer, PosteriorSampler};
pub use variance::{complete_ballot_prior_variance, match_dirichlet_a0};

use crate::ballots::{BallotMultiset, Candidate, Ranking, Roster};
use crate::rng::RandomStream;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Depth beyond which path probabilities are accumulated in log space.
const LOG_SPACE_DEPTH: usize = 25;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum TreeError {
    #[error("concentration a0 must be a finite non-negative number, got {0}")]
    InvalidA0(f64),
    #[error("ranking {0:?} is not canonical for this roster")]
    NonCanonical(Vec<Candidate>),
    #[error("partial ranking {0:?} but the prior has no termination branches")]
    PartialNotAllowed(Vec<Candidate>),
    #[error("update count must be positive")]
    ZeroCount,
    #[error("posterior predictive is undefined for a0 = 0 with no observations")]
    EmptyBootstrap,
    #[error("prior variance is undefined for a0 = 0")]
    ZeroA0Variance,
    #[error("no non-negative flat Dirichlet concentration matches variance {0}")]
    NoMatchingA0(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    DirichletTree,
    Dirichlet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorConfig {
    pub kind: PriorKind,
    /// Per-branch concentration for the tree, per-leaf for the flat Dirichlet.
    pub a0: f64,
    pub allow_partial: bool,
}

impl PriorConfig {
    pub fn tree(a0: f64, allow_partial: bool) -> Self {
        PriorConfig {
            kind: PriorKind::DirichletTree,
            a0,
            allow_partial,
        }
    }

    pub fn dirichlet(a0: f64, allow_partial: bool) -> Self {
        PriorConfig {
            kind: PriorKind::Dirichlet,
            a0,
            allow_partial,
        }
    }

    pub fn validate(&self) -> Result<(), TreeError> {
        if self.a0.is_finite() && self.a0 >= 0.0 {
            Ok(())
        } else {
            Err(TreeError::InvalidA0(self.a0))
        }
    }

    pub fn is_bootstrap(&self) -> bool {
        self.a0 == 0.0
    }
}

/// Number of leaves below a node with `remaining` candidates left to rank.
fn leaves_below(remaining: usize, allow_partial: bool, is_root: bool) -> f64 {
    let mut leaves = 1.0;
    for r in 2..=remaining {
        let term = if allow_partial && !(is_root && r == remaining) {
            1.0
        } else {
            0.0
        };
        leaves = r as f64 * leaves + term;
    }
    leaves
}

/// Number of ballot types K (leaves of the tree) for `k` candidates.
pub fn leaf_count(k: usize, allow_partial: bool) -> f64 {
    leaves_below(k, allow_partial, true)
}

/// Every ballot type, in sorted order. Intended for small `k`.
pub fn leaf_rankings(k: usize, allow_partial: bool) -> Vec<Ranking> {
    fn walk(
        k: usize,
        allow_partial: bool,
        prefix: &mut Vec<Candidate>,
        used: &mut [bool],
        out: &mut Vec<Ranking>,
    ) {
        let r = k - prefix.len();
        if r == 1 {
            let last = used.iter().position(|u| !u).unwrap() as Candidate;
            let mut v = prefix.clone();
            v.push(last);
            out.push(Ranking::from_vec_unchecked(v));
            return;
        }
        if allow_partial && !prefix.is_empty() {
            out.push(Ranking::from_vec_unchecked(prefix.clone()));
        }
        for c in 0..k {
            if !used[c] {
                used[c] = true;
                prefix.push(c as Candidate);
                walk(k, allow_partial, prefix, used, out);
                prefix.pop();
                used[c] = false;
            }
        }
    }
    let mut out = Vec::new();
    walk(k, allow_partial, &mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Observation counts at one trie node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub(crate) struct Node {
    /// Ballots whose ranking passes through this node.
    total: u64,
    /// Ballots ending here on the termination branch.
    terminated: u64,
    children: BTreeMap<Candidate, Node>,
}

impl Node {
    fn child(&self, c: Candidate) -> Option<&Node> {
        self.children.get(&c)
    }
}

/// One step of a ranking's path through the tree: the chosen branch's count,
/// the number of sibling branches (itself included), and the node's total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathFactor {
    pub count: u64,
    pub branches: f64,
    pub node_total: u64,
}

/// A Dirichlet-tree (or flat Dirichlet) posterior over ballot types.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorTree {
    roster: Roster,
    config: PriorConfig,
    root: Node,
}

impl PosteriorTree {
    /// The prior: no observations.
    pub fn new(roster: Roster, config: PriorConfig) -> Result<Self, TreeError> {
        config.validate()?;
        Ok(PosteriorTree {
            roster,
            config,
            root: Node::default(),
        })
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn config(&self) -> &PriorConfig {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.roster.k()
    }

    /// Total observed ballots.
    pub fn n(&self) -> u64 {
        self.root.total
    }

    pub fn leaf_count(&self) -> f64 {
        leaf_count(self.k(), self.config.allow_partial)
    }

    /// Number of materialized trie nodes, root included.
    pub fn node_count(&self) -> usize {
        fn count(n: &Node) -> usize {
            1 + n.children.values().map(count).sum::<usize>()
        }
        count(&self.root)
    }

    fn check(&self, ranking: &Ranking) -> Result<(), TreeError> {
        let k = self.k();
        let prefs = ranking.prefs();
        let mut seen = vec![false; k];
        let valid = ranking.is_canonical(k)
            && prefs
                .iter()
                .all(|&c| (c as usize) < k && !std::mem::replace(&mut seen[c as usize], true));
        if !valid {
            return Err(TreeError::NonCanonical(prefs.to_vec()));
        }
        if !self.config.allow_partial && !ranking.is_complete(k) {
            return Err(TreeError::PartialNotAllowed(prefs.to_vec()));
        }
        Ok(())
    }

    /// Conjugate update: adds `count` observations of `ranking` to every
    /// branch on its path.
    pub fn update(&mut self, ranking: &Ranking, count: u64) -> Result<(), TreeError> {
        self.check(ranking)?;
        if count == 0 {
            return Err(TreeError::ZeroCount);
        }
        let k = self.k();
        let prefs = ranking.prefs();
        // A complete ranking ends at the leaf reached after k - 1 choices.
        let steps = if ranking.is_complete(k) { k - 1 } else { prefs.len() };
        let mut node = &mut self.root;
        node.total += count;
        for &c in &prefs[..steps] {
            node = node.children.entry(c).or_default();
            node.total += count;
        }
        if !ranking.is_complete(k) {
            node.terminated += count;
        }
        Ok(())
    }

    /// Applies every entry of a multiset, validating all of them first so a
    /// bad entry leaves the tree untouched.
    pub fn update_all(&mut self, ballots: &BallotMultiset) -> Result<(), TreeError> {
        for (r, _) in ballots.iter() {
            self.check(r)?;
        }
        for (r, c) in ballots.iter() {
            self.update(r, c)?;
        }
        Ok(())
    }

    /// Observed count of exactly this ballot type.
    pub fn type_count(&self, ranking: &Ranking) -> u64 {
        let k = self.k();
        let prefs = ranking.prefs();
        let complete = ranking.is_complete(k);
        let steps = if complete { k - 1 } else { prefs.len() };
        let mut node = &self.root;
        for &c in &prefs[..steps.min(prefs.len())] {
            match node.child(c) {
                Some(n) => node = n,
                None => return 0,
            }
        }
        if complete {
            node.total
        } else {
            node.terminated
        }
    }

    /// The per-branch factors of this ranking's predictive probability.
    /// For the flat Dirichlet there is a single factor over all leaves.
    pub fn path_factors(&self, ranking: &Ranking) -> Result<Vec<PathFactor>, TreeError> {
        self.check(ranking)?;
        if self.config.kind == PriorKind::Dirichlet {
            return Ok(vec![PathFactor {
                count: self.type_count(ranking),
                branches: self.leaf_count(),
                node_total: self.n(),
            }]);
        }
        let k = self.k();
        let prefs = ranking.prefs();
        let mut out = Vec::with_capacity(prefs.len());
        let mut node = Some(&self.root);
        for depth in 0.. {
            let remaining = k - depth;
            if remaining == 1 {
                break;
            }
            let term = self.config.allow_partial && depth > 0;
            let branches = (remaining + term as usize) as f64;
            let node_total = node.map_or(0, |n| n.total);
            if depth == prefs.len() {
                out.push(PathFactor {
                    count: node.map_or(0, |n| n.terminated),
                    branches,
                    node_total,
                });
                break;
            }
            node = node.and_then(|n| n.child(prefs[depth]));
            out.push(PathFactor {
                count: node.map_or(0, |n| n.total),
                branches,
                node_total,
            });
        }
        Ok(out)
    }

    /// Posterior predictive probability that the next ballot is `ranking`.
    pub fn predictive_probability(&self, ranking: &Ranking) -> Result<f64, TreeError> {
        if self.config.is_bootstrap() && self.n() == 0 {
            return Err(TreeError::EmptyBootstrap);
        }
        let factors = self.path_factors(ranking)?;
        let a0 = self.config.a0;
        let ratio = |f: &PathFactor| {
            let den = f.branches * a0 + f.node_total as f64;
            if den == 0.0 {
                0.0
            } else {
                (a0 + f.count as f64) / den
            }
        };
        if factors.len() > LOG_SPACE_DEPTH {
            let mut log_p = 0.0;
            for f in &factors {
                let r = ratio(f);
                if r == 0.0 {
                    return Ok(0.0);
                }
                log_p += r.ln();
            }
            Ok(log_p.exp())
        } else {
            Ok(factors.iter().map(ratio).product())
        }
    }

    /// Observed ballot types with their counts, sorted.
    pub fn observed(&self) -> BallotMultiset {
        fn walk(
            node: &Node,
            k: usize,
            prefix: &mut Vec<Candidate>,
            used: &mut [bool],
            out: &mut Vec<(Ranking, u64)>,
        ) {
            if k - prefix.len() == 1 {
                if node.total > 0 {
                    let last = used.iter().position(|u| !u).unwrap() as Candidate;
                    let mut v = prefix.clone();
                    v.push(last);
                    out.push((Ranking::from_vec_unchecked(v), node.total));
                }
                return;
            }
            if node.terminated > 0 {
                out.push((Ranking::from_vec_unchecked(prefix.clone()), node.terminated));
            }
            for (&c, child) in &node.children {
                prefix.push(c);
                used[c as usize] = true;
                walk(child, k, prefix, used, out);
                used[c as usize] = false;
                prefix.pop();
            }
        }
        let k = self.k();
        let mut out = Vec::new();
        walk(&self.root, k, &mut Vec::new(), &mut vec![false; k], &mut out);
        BallotMultiset::from_sorted_unique(out)
    }

    /// Prepares a sampler for repeated posterior-predictive draws.
    pub fn sampler(&self, max_draw: u64) -> Result<PosteriorSampler<'_>, TreeError> {
        PosteriorSampler::new(self, max_draw)
    }

    /// One joint draw of `m` unseen ballots from the posterior predictive.
    pub fn sample_remaining(&self, m: u64, stream: RandomStream) -> Result<BallotMultiset, TreeError> {
        let sampler = self.sampler(m)?;
        Ok(sampler.sample(m, &mut stream.rng()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roster(k: usize) -> Roster {
        Roster::new((0..k).map(|i| format!("C{i}"))).unwrap()
    }

    fn r(v: &[Candidate]) -> Ranking {
        Ranking::from_vec_unchecked(v.to_vec())
    }

    fn tree(k: usize, a0: f64, partial: bool) -> PosteriorTree {
        PosteriorTree::new(roster(k), PriorConfig::tree(a0, partial)).unwrap()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-14
    }

    #[test]
    fn leaf_counts() {
        assert_eq!(leaf_count(1, true), 1.0);
        assert_eq!(leaf_count(2, true), 2.0);
        assert_eq!(leaf_count(3, false), 6.0);
        assert_eq!(leaf_count(3, true), 9.0);
        assert_eq!(leaf_count(4, true), 40.0);
        assert_eq!(leaf_count(5, true), 205.0);
        for k in 1..=5 {
            for p in [false, true] {
                assert_eq!(leaf_rankings(k, p).len() as f64, leaf_count(k, p));
            }
        }
        let leaves = leaf_rankings(4, true);
        assert!(leaves.windows(2).all(|w| w[0] < w[1]));
        assert!(leaves.iter().all(|l| l.is_canonical(4)));
    }

    #[test]
    fn prior_is_symmetric() {
        let t = tree(3, 1.0, false);
        for l in leaf_rankings(3, false) {
            assert!(close(t.predictive_probability(&l).unwrap(), 1.0 / 6.0));
        }
        let t = tree(3, 1.0, true);
        assert!(close(t.predictive_probability(&r(&[0, 1, 2])).unwrap(), 1.0 / 9.0));
        let t = tree(1, 1.0, true);
        assert_eq!(t.predictive_probability(&r(&[0])).unwrap(), 1.0);
    }

    #[test]
    fn negative_a0_rejected() {
        assert_eq!(
            PosteriorTree::new(roster(3), PriorConfig::tree(-1.0, true)).unwrap_err(),
            TreeError::InvalidA0(-1.0)
        );
        assert!(PosteriorTree::new(roster(3), PriorConfig::tree(f64::NAN, true)).is_err());
    }

    #[test]
    fn update_examples() {
        let mut t = tree(3, 1.0, false);
        t.update(&r(&[0, 1, 2]), 1).unwrap();
        assert!(close(t.predictive_probability(&r(&[0, 1, 2])).unwrap(), 1.0 / 3.0));
        assert_eq!(t.n(), 1);

        let mut b = tree(3, 0.0, false);
        assert_eq!(
            b.predictive_probability(&r(&[0, 1, 2])),
            Err(TreeError::EmptyBootstrap)
        );
        b.update(&r(&[0, 1, 2]), 1).unwrap();
        assert_eq!(b.predictive_probability(&r(&[0, 1, 2])).unwrap(), 1.0);
        assert_eq!(b.predictive_probability(&r(&[1, 0, 2])).unwrap(), 0.0);

        let mut three = tree(4, 1.0, true);
        three.update(&r(&[2, 0]), 3).unwrap();
        let mut ones = tree(4, 1.0, true);
        for _ in 0..3 {
            ones.update(&r(&[2, 0]), 1).unwrap();
        }
        assert_eq!(three, ones);
    }

    #[test]
    fn partial_predictive() {
        let mut t = tree(3, 1.0, true);
        t.update(&r(&[0]), 1).unwrap();
        assert!(close(t.predictive_probability(&r(&[0])).unwrap(), 0.25));

        let mut t = tree(2, 1.0, true);
        t.update(&r(&[0, 1]), 1).unwrap();
        t.update(&r(&[1, 0]), 1).unwrap();
        assert!(close(t.predictive_probability(&r(&[0, 1])).unwrap(), 0.5));
    }

    #[test]
    fn update_rejects_bad_rankings() {
        let mut t = tree(3, 1.0, false);
        assert_eq!(
            t.update(&r(&[0, 1]), 1),
            Err(TreeError::NonCanonical(vec![0, 1]))
        );
        assert_eq!(
            t.update(&r(&[0]), 1),
            Err(TreeError::PartialNotAllowed(vec![0]))
        );
        assert_eq!(t.update(&r(&[0, 0, 1]), 1), Err(TreeError::NonCanonical(vec![0, 0, 1])));
        assert_eq!(t.update(&r(&[0, 1, 2]), 0), Err(TreeError::ZeroCount));
        assert_eq!(t.n(), 0);
    }

    #[test]
    fn update_all_is_atomic() {
        let mut t = tree(3, 1.0, false);
        let bad = BallotMultiset::from_entries([(r(&[0, 1, 2]), 2), (r(&[1]), 1)]);
        assert!(t.update_all(&bad).is_err());
        assert_eq!(t, tree(3, 1.0, false));
    }

    #[test]
    fn flat_dirichlet_predictive() {
        let mut t = PosteriorTree::new(roster(3), PriorConfig::dirichlet(0.5, true)).unwrap();
        t.update(&r(&[1]), 2).unwrap();
        t.update(&r(&[0, 2, 1]), 1).unwrap();
        let p = t.predictive_probability(&r(&[1])).unwrap();
        assert!(close(p, 2.5 / (9.0 * 0.5 + 3.0)));
        let q = t.predictive_probability(&r(&[2, 0, 1])).unwrap();
        assert!(close(q, 0.5 / 7.5));
    }

    #[test]
    fn observed_lists_types() {
        let mut t = tree(4, 1.0, true);
        let obs = BallotMultiset::from_entries([
            (r(&[2, 0]), 3),
            (r(&[2]), 1),
            (r(&[0, 1, 2, 3]), 2),
            (r(&[3, 2, 1, 0]), 5),
        ]);
        t.update_all(&obs).unwrap();
        assert_eq!(t.observed(), obs);
        for (rk, c) in obs.iter() {
            assert_eq!(t.type_count(rk), c);
        }
        assert_eq!(t.type_count(&r(&[2, 0, 1, 3])), 0);
    }

    #[test]
    fn deep_rankings_use_log_space() {
        let k = 30;
        let t = tree(k, 1.0, false);
        let full: Vec<Candidate> = (0..k as Candidate).collect();
        let p = t.predictive_probability(&r(&full)).unwrap();
        let expect: f64 = (2..=k).map(|c| 1.0 / c as f64).product();
        assert!((p / expect - 1.0).abs() < 1e-12);
    }
}
