//! Synthetic ranked elections for desk-scale experiments.

use crate::ballots::{BallotMultiset, Candidate, Ranking};
use crate::rng::RandomStream;
use crate::social_choice::TallyResult;
use rand::Rng;
use std::collections::HashMap;

/// Plackett-Luce ballots with random truncation.
///
/// Each preference is drawn among the remaining candidates with probability
/// proportional to `weights`; after each preference the voter continues with
/// probability `continue_prob`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub total: u64,
    pub weights: Vec<f64>,
    pub continue_prob: f64,
}

impl SyntheticSpec {
    pub fn k(&self) -> usize {
        self.weights.len()
    }
}

pub fn synthetic_election(spec: &SyntheticSpec, seed: u64) -> BallotMultiset {
    let k = spec.k();
    let mut rng = RandomStream::new(seed, 0).rng();
    let mut counts: HashMap<Vec<Candidate>, u64> = HashMap::new();
    let mut remaining: Vec<Candidate> = Vec::with_capacity(k);
    for _ in 0..spec.total {
        remaining.clear();
        remaining.extend(0..k as Candidate);
        let mut prefs = Vec::with_capacity(k);
        loop {
            let mass: f64 = remaining.iter().map(|&c| spec.weights[c as usize]).sum();
            let mut u = rng.random::<f64>() * mass;
            let mut pick = remaining.len() - 1;
            for (i, &c) in remaining.iter().enumerate() {
                u -= spec.weights[c as usize];
                if u < 0.0 {
                    pick = i;
                    break;
                }
            }
            prefs.push(remaining.remove(pick));
            if remaining.is_empty() || rng.random::<f64>() >= spec.continue_prob {
                break;
            }
        }
        *counts.entry(prefs).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .map(|(p, c)| (Ranking::from_vec_unchecked(p).canonicalize(k), c))
        .collect()
}

/// Fraction of all ballots that would have to switch from the winner to the
/// runner-up to tie the final round: half the final-round gap over `total`.
pub fn final_round_margin(tally: &TallyResult, total: u64) -> f64 {
    let Some(last) = tally.elimination_order.last() else {
        return 1.0;
    };
    let final_round = &tally.rounds[tally.rounds.len() - 2];
    let gap = final_round[tally.winner as usize] - final_round[*last as usize];
    gap as f64 / (2.0 * total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballots::Roster;
    use crate::social_choice::{tally_irv, TiePolicy};

    #[test]
    fn generates_requested_total() {
        let spec = SyntheticSpec {
            total: 1000,
            weights: vec![3.0, 2.0, 1.0, 1.0],
            continue_prob: 0.7,
        };
        let a = synthetic_election(&spec, 11);
        assert_eq!(a.total(), 1000);
        assert!(a.iter().all(|(r, _)| r.is_canonical(4)));
        assert_eq!(a, synthetic_election(&spec, 11));
    }

    #[test]
    fn margin_of_simple_contest() {
        let roster = Roster::new(["A", "B"]).unwrap();
        let b = BallotMultiset::from_entries([
            (Ranking::canonical(vec![0], 2).unwrap(), 60),
            (Ranking::canonical(vec![1], 2).unwrap(), 40),
        ]);
        let t = tally_irv(&b, &roster, TiePolicy::RosterOrder).unwrap();
        assert!((final_round_margin(&t, 100) - 0.1).abs() < 1e-15);
    }
}
