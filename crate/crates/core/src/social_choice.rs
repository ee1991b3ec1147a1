//! Instant-runoff tallying behind a pluggable social choice interface.

use crate::ballots::{BallotMultiset, Candidate, Roster};
use crate::rng::RandomStream;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum TallyError {
    #[error("no ballots to tally")]
    Empty,
    #[error("ranking references candidate index {index} but the roster has {k} candidates")]
    CandidateOutOfRange { index: Candidate, k: usize },
}

/// How to choose among candidates tied for elimination.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TiePolicy {
    /// Eliminate the tied candidate that comes last in roster order.
    #[default]
    RosterOrder,
    /// Draw the eliminated candidate uniformly among the tied, from a stream
    /// keyed by `seed`.
    SeededRandom { seed: u64 },
}

/// Ballots that rank no continuing candidate leave the count entirely.
pub const EXHAUSTED_LEAVE_DENOMINATOR: bool = true;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TallyResult {
    pub winner: Candidate,
    /// Earliest-eliminated first.
    pub elimination_order: Vec<Candidate>,
    /// Continuing-vote count per candidate, one vector per round. Candidates
    /// already eliminated show zero.
    pub rounds: Vec<Vec<u64>>,
    /// Exhausted ballots at the start of each round.
    pub exhausted: Vec<u64>,
}

/// A single-winner ranked social choice function.
///
/// `parts` are pooled: the function sees the union of the given multisets.
pub trait SocialChoice: Send + Sync {
    /// Winner over `(ranking, count)` entries for a roster of `k`
    /// candidates. The same ranking may appear in several entries.
    fn winner_of(&self, entries: &[(&[Candidate], u64)], k: usize) -> Result<Candidate, TallyError>;

    fn winner(&self, parts: &[&BallotMultiset], roster: &Roster) -> Result<Candidate, TallyError> {
        self.winner_of(&pooled(parts), roster.k())
    }
}

fn pooled<'a>(parts: &[&'a BallotMultiset]) -> Vec<(&'a [Candidate], u64)> {
    parts
        .iter()
        .flat_map(|m| m.iter().map(|(r, c)| (r.prefs(), c)))
        .collect()
}

/// Instant-runoff voting with a fixed tie policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Irv {
    pub tie: TiePolicy,
}

impl SocialChoice for Irv {
    fn winner_of(&self, entries: &[(&[Candidate], u64)], k: usize) -> Result<Candidate, TallyError> {
        Ok(tally_entries(entries, k, self.tie, false)?.winner)
    }
}

pub fn tally_irv(
    ballots: &BallotMultiset,
    roster: &Roster,
    tie: TiePolicy,
) -> Result<TallyResult, TallyError> {
    tally_parts(&[ballots], roster.k(), tie, true)
}

/// Runs IRV over the union of `parts`. Every round is played out, even once a
/// candidate holds a majority. Round vectors are only filled in when
/// `record_rounds` is set.
pub fn tally_parts(
    parts: &[&BallotMultiset],
    k: usize,
    tie: TiePolicy,
    record_rounds: bool,
) -> Result<TallyResult, TallyError> {
    tally_entries(&pooled(parts), k, tie, record_rounds)
}

/// As [`tally_parts`], over raw `(ranking, count)` entries.
pub fn tally_entries(
    entries: &[(&[Candidate], u64)],
    k: usize,
    tie: TiePolicy,
    record_rounds: bool,
) -> Result<TallyResult, TallyError> {
    if entries.iter().all(|e| e.1 == 0) {
        return Err(TallyError::Empty);
    }
    for (prefs, _) in entries {
        if let Some(&index) = prefs.iter().find(|&&c| c as usize >= k) {
            return Err(TallyError::CandidateOutOfRange { index, k });
        }
    }

    let mut continuing = vec![true; k];
    let mut votes = vec![0u64; k];
    let mut piles: Vec<Vec<u32>> = vec![Vec::new(); k];
    let mut pos: Vec<u16> = vec![0; entries.len()];
    let mut exhausted = 0u64;
    for (i, (prefs, count)) in entries.iter().enumerate() {
        match prefs.first() {
            Some(&c) => {
                votes[c as usize] += count;
                piles[c as usize].push(i as u32);
            }
            None => exhausted += count,
        }
    }

    let mut rng = match tie {
        TiePolicy::SeededRandom { seed } => Some(RandomStream::new(seed, 0).rng()),
        TiePolicy::RosterOrder => None,
    };
    let mut result = TallyResult {
        winner: 0,
        elimination_order: Vec::with_capacity(k.saturating_sub(1)),
        rounds: Vec::new(),
        exhausted: Vec::new(),
    };
    let mut tied = Vec::new();
    for _ in 1..k {
        if record_rounds {
            result.rounds.push(votes.clone());
            result.exhausted.push(exhausted);
        }
        let min = (0..k)
            .filter(|&c| continuing[c])
            .map(|c| votes[c])
            .min()
            .expect("at least two continuing");
        tied.clear();
        tied.extend((0..k).filter(|&c| continuing[c] && votes[c] == min));
        let out = match (&mut rng, tied.len()) {
            (Some(rng), n) if n > 1 => tied[rng.random_range(0..n)],
            _ => *tied.last().unwrap(),
        };
        continuing[out] = false;
        votes[out] = 0;
        result.elimination_order.push(out as Candidate);
        for idx in std::mem::take(&mut piles[out]) {
            let (prefs, count) = entries[idx as usize];
            let mut p = pos[idx as usize] as usize + 1;
            while p < prefs.len() && !continuing[prefs[p] as usize] {
                p += 1;
            }
            pos[idx as usize] = p as u16;
            match prefs.get(p) {
                Some(&next) => {
                    votes[next as usize] += count;
                    piles[next as usize].push(idx);
                }
                None => exhausted += count,
            }
        }
    }
    result.winner = continuing.iter().position(|&c| c).unwrap() as Candidate;
    if record_rounds {
        result.rounds.push(votes);
        result.exhausted.push(exhausted);
    }
    Ok(result)
}
