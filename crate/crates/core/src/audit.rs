//! Ballot-polling Bayesian audit sessions.
//!
//! A session holds the posterior over ballot types given the ballots sampled
//! so far. Each estimate imputes the unseen ballots from the posterior
//! predictive a fixed number of times, tallies every completed election, and
//! reports the fraction of draws won by each candidate.

use crate::ballots::{BallotMultiset, Candidate, Roster};
use crate::dirtree::{DrawBuffer, PosteriorTree, PriorConfig, TreeError};
use crate::rng::RandomStream;
use crate::social_choice::{tally_irv, Irv, SocialChoice, TallyError, TiePolicy};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const DEFAULT_THRESHOLD: f64 = 0.95;
pub const DEFAULT_DRAWS: u32 = 100;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum AuditError {
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("draws per estimate must be positive")]
    ZeroDraws,
    #[error("total ballots must be positive")]
    ZeroBallots,
    #[error("reported winner index {0} is not in the roster")]
    UnknownWinner(Candidate),
    #[error("sample of {observed} + {adding} ballots exceeds the {total} cast")]
    Overflow { observed: u64, adding: u64, total: u64 },
    #[error("session is no longer accepting ballots ({0:?})")]
    NotInProgress(AuditStatus),
    #[error("no estimate has been made yet")]
    EmptyHistory,
    #[error("bootstrap prior (a0 = 0) needs at least one sampled ballot")]
    EmptyBootstrap,
    #[error(transparent)]
    Tree(TreeError),
    #[error(transparent)]
    Tally(#[from] TallyError),
}

impl From<TreeError> for AuditError {
    fn from(e: TreeError) -> Self {
        match e {
            TreeError::EmptyBootstrap => AuditError::EmptyBootstrap,
            other => AuditError::Tree(other),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ElectionMeta {
    pub roster: Roster,
    pub total_ballots: u64,
    pub reported_winner: Candidate,
}

impl ElectionMeta {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.total_ballots == 0 {
            return Err(AuditError::ZeroBallots);
        }
        if self.reported_winner as usize >= self.roster.k() {
            return Err(AuditError::UnknownWinner(self.reported_winner));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditConfig {
    pub prior: PriorConfig,
    pub threshold: f64,
    pub draws_per_estimate: u32,
    pub tie: TiePolicy,
    pub seed: u64,
    /// Optional floor on the sample size before the audit may stop.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_sample: Option<u64>,
}

impl AuditConfig {
    pub fn new(prior: PriorConfig, seed: u64) -> Self {
        AuditConfig {
            prior,
            threshold: DEFAULT_THRESHOLD,
            draws_per_estimate: DEFAULT_DRAWS,
            tie: TiePolicy::RosterOrder,
            seed,
            min_sample: None,
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(AuditError::InvalidThreshold(self.threshold));
        }
        if self.draws_per_estimate == 0 {
            return Err(AuditError::ZeroDraws);
        }
        self.prior.validate()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditStatus {
    InProgress,
    StoppedConfirmed,
    CensusComplete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Decision {
    ContinueSampling,
    StopConfirm,
    CensusComplete,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::ContinueSampling => "continue-sampling",
            Decision::StopConfirm => "stop-confirm",
            Decision::CensusComplete => "census-complete",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PosteriorEstimate {
    pub prob_reported_winner: f64,
    pub prob_by_candidate: Vec<f64>,
    /// Draws won by each candidate.
    pub wins: Vec<u64>,
    pub sample_size: u64,
    pub draws: u32,
    pub seed_used: u64,
}

/// Stream id of draw `draw` within the `estimate`-th estimate of a session.
pub fn draw_stream_id(estimate: usize, draw: u32) -> u64 {
    ((estimate as u64) << 32) | draw as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "SessionSnapshot", try_from = "SessionSnapshot")]
pub struct AuditSession {
    meta: ElectionMeta,
    config: AuditConfig,
    tree: PosteriorTree,
    observed: BallotMultiset,
    history: Vec<PosteriorEstimate>,
    status: AuditStatus,
}

/// The persisted form of a session; the posterior is rebuilt from the
/// observed ballots.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSnapshot {
    pub meta: ElectionMeta,
    pub config: AuditConfig,
    pub observed: BallotMultiset,
    pub history: Vec<PosteriorEstimate>,
    pub status: AuditStatus,
}

impl From<AuditSession> for SessionSnapshot {
    fn from(s: AuditSession) -> Self {
        SessionSnapshot {
            meta: s.meta,
            config: s.config,
            observed: s.observed,
            history: s.history,
            status: s.status,
        }
    }
}

impl TryFrom<SessionSnapshot> for AuditSession {
    type Error = AuditError;
    fn try_from(s: SessionSnapshot) -> Result<Self, AuditError> {
        let mut session = AuditSession::start(s.meta, s.config)?;
        if s.observed.total() > session.meta.total_ballots {
            return Err(AuditError::Overflow {
                observed: 0,
                adding: s.observed.total(),
                total: session.meta.total_ballots,
            });
        }
        session.tree.update_all(&s.observed)?;
        session.observed = s.observed;
        session.history = s.history;
        session.status = s.status;
        Ok(session)
    }
}

impl AuditSession {
    pub fn start(meta: ElectionMeta, config: AuditConfig) -> Result<Self, AuditError> {
        meta.validate()?;
        config.validate()?;
        let tree = PosteriorTree::new(meta.roster.clone(), config.prior)?;
        Ok(AuditSession {
            meta,
            config,
            tree,
            observed: BallotMultiset::new(),
            history: Vec::new(),
            status: AuditStatus::InProgress,
        })
    }

    pub fn meta(&self) -> &ElectionMeta {
        &self.meta
    }

    pub fn config(&self) -> &AuditConfig {
        &self.config
    }

    pub fn tree(&self) -> &PosteriorTree {
        &self.tree
    }

    pub fn observed(&self) -> &BallotMultiset {
        &self.observed
    }

    pub fn history(&self) -> &[PosteriorEstimate] {
        &self.history
    }

    pub fn status(&self) -> AuditStatus {
        self.status
    }

    pub fn sample_size(&self) -> u64 {
        self.observed.total()
    }

    pub fn remaining(&self) -> u64 {
        self.meta.total_ballots - self.observed.total()
    }

    /// Adds sampled ballots. Either every entry is applied or none is.
    pub fn observe(&mut self, ballots: &BallotMultiset) -> Result<(), AuditError> {
        if self.status != AuditStatus::InProgress {
            return Err(AuditError::NotInProgress(self.status));
        }
        if ballots.total() > self.remaining() {
            return Err(AuditError::Overflow {
                observed: self.observed.total(),
                adding: ballots.total(),
                total: self.meta.total_ballots,
            });
        }
        self.tree.update_all(ballots)?;
        self.observed = self.observed.merged(ballots);
        if self.remaining() == 0 {
            self.status = AuditStatus::CensusComplete;
        }
        Ok(())
    }

    /// Estimates the posterior winner distribution under IRV with the
    /// configured tie policy and appends it to the history.
    pub fn estimate_posterior(&mut self) -> Result<&PosteriorEstimate, AuditError> {
        let scf = Irv {
            tie: self.config.tie,
        };
        self.estimate_posterior_with(&scf, self.config.draws_per_estimate)
    }

    /// As [`estimate_posterior`](Self::estimate_posterior), with an explicit
    /// social choice function and draw count. Draws may run in parallel; the
    /// result depends only on the seed, the history length and the draw
    /// index.
    pub fn estimate_posterior_with(
        &mut self,
        scf: &dyn SocialChoice,
        draws: u32,
    ) -> Result<&PosteriorEstimate, AuditError> {
        if draws == 0 {
            return Err(AuditError::ZeroDraws);
        }
        let k = self.meta.roster.k();
        let mut wins = vec![0u64; k];
        let remaining = self.remaining();
        if remaining == 0 {
            let winner = scf.winner(&[&self.observed], &self.meta.roster)?;
            wins[winner as usize] = draws as u64;
        } else {
            let sampler = self.tree.sampler(remaining)?;
            let index = self.history.len();
            let seed = self.config.seed;
            let observed: Vec<(&[Candidate], u64)> =
                self.observed.iter().map(|(r, c)| (r.prefs(), c)).collect();
            let winners = (0..draws)
                .into_par_iter()
                .map_init(DrawBuffer::default, |buf, d| {
                    let mut rng = RandomStream::new(seed, draw_stream_id(index, d)).rng();
                    sampler.sample_into(remaining, &mut rng, buf);
                    let mut entries = Vec::with_capacity(observed.len() + buf.len());
                    entries.extend_from_slice(&observed);
                    entries.extend(buf.iter());
                    scf.winner_of(&entries, k)
                })
                .collect::<Result<Vec<_>, _>>()?;
            for w in winners {
                wins[w as usize] += 1;
            }
        }
        let prob_by_candidate: Vec<f64> = wins.iter().map(|&w| w as f64 / draws as f64).collect();
        self.history.push(PosteriorEstimate {
            prob_reported_winner: prob_by_candidate[self.meta.reported_winner as usize],
            prob_by_candidate,
            wins,
            sample_size: self.observed.total(),
            draws,
            seed_used: self.config.seed,
        });
        Ok(self.history.last().unwrap())
    }

    /// Applies the stopping rule to the latest estimate.
    pub fn decide(&mut self) -> Result<Decision, AuditError> {
        let latest = self.history.last().ok_or(AuditError::EmptyHistory)?;
        if self.remaining() == 0 {
            self.status = AuditStatus::CensusComplete;
            return Ok(Decision::CensusComplete);
        }
        let enough = self
            .config
            .min_sample
            .is_none_or(|min| self.observed.total() >= min);
        if enough && latest.prob_reported_winner >= self.config.threshold {
            self.status = AuditStatus::StoppedConfirmed;
            return Ok(Decision::StopConfirm);
        }
        Ok(Decision::ContinueSampling)
    }

    /// Exact IRV result over the observed ballots, once every ballot is in.
    pub fn census_winner(&self) -> Result<Option<Candidate>, AuditError> {
        if self.remaining() > 0 {
            return Ok(None);
        }
        Ok(Some(tally_irv(&self.observed, &self.meta.roster, self.config.tie)?.winner))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballots::Ranking;

    fn roster(names: &[&str]) -> Roster {
        Roster::new(names.iter().copied()).unwrap()
    }

    fn meta(k: usize, n: u64, winner: Candidate) -> ElectionMeta {
        let names: Vec<String> = (0..k).map(|i| format!("C{i}")).collect();
        ElectionMeta {
            roster: Roster::new(names).unwrap(),
            total_ballots: n,
            reported_winner: winner,
        }
    }

    fn ms(k: usize, e: &[(&[Candidate], u64)]) -> BallotMultiset {
        e.iter()
            .map(|(p, c)| (Ranking::canonical(p.to_vec(), k).unwrap(), *c))
            .collect()
    }

    #[test]
    fn start_validates() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 1);
        let s = AuditSession::start(meta(5, 46_357, 0), cfg.clone()).unwrap();
        assert_eq!(s.sample_size(), 0);
        assert_eq!(s.status(), AuditStatus::InProgress);

        let mut bad = cfg.clone();
        bad.threshold = 1.5;
        assert_eq!(
            AuditSession::start(meta(3, 10, 0), bad).unwrap_err(),
            AuditError::InvalidThreshold(1.5)
        );
        let mut neg = cfg.clone();
        neg.prior.a0 = -0.5;
        assert!(matches!(
            AuditSession::start(meta(3, 10, 0), neg),
            Err(AuditError::Tree(TreeError::InvalidA0(_)))
        ));
        assert_eq!(
            AuditSession::start(meta(3, 10, 3), cfg.clone()).unwrap_err(),
            AuditError::UnknownWinner(3)
        );
        assert_eq!(
            AuditSession::start(meta(3, 0, 0), cfg).unwrap_err(),
            AuditError::ZeroBallots
        );
    }

    #[test]
    fn single_candidate_always_wins() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 1);
        let mut s = AuditSession::start(meta(1, 10, 0), cfg).unwrap();
        let e = s.estimate_posterior().unwrap();
        assert_eq!(e.prob_reported_winner, 1.0);
    }

    #[test]
    fn observe_accumulates_and_completes() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 1);
        let mut s = AuditSession::start(meta(3, 4, 0), cfg).unwrap();
        s.observe(&ms(3, &[(&[0], 1)])).unwrap();
        assert_eq!(s.tree().n(), 1);
        assert_eq!(
            s.observe(&ms(3, &[(&[1], 4)])).unwrap_err(),
            AuditError::Overflow {
                observed: 1,
                adding: 4,
                total: 4
            }
        );
        assert_eq!(s.tree().n(), 1);
        s.observe(&ms(3, &[(&[1, 0], 3)])).unwrap();
        assert_eq!(s.status(), AuditStatus::CensusComplete);
        assert!(matches!(
            s.observe(&ms(3, &[(&[1], 1)])),
            Err(AuditError::NotInProgress(AuditStatus::CensusComplete))
        ));
    }

    #[test]
    fn batches_equal_single_observation() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 1);
        let a = ms(4, &[(&[0, 1], 10), (&[2], 15)]);
        let b = ms(4, &[(&[3, 2, 1, 0], 20), (&[2], 5)]);
        let mut one = AuditSession::start(meta(4, 100, 0), cfg.clone()).unwrap();
        one.observe(&a).unwrap();
        one.observe(&b).unwrap();
        let mut two = AuditSession::start(meta(4, 100, 0), cfg).unwrap();
        two.observe(&a.merged(&b)).unwrap();
        assert_eq!(one.tree(), two.tree());
        assert_eq!(one, two);
    }

    #[test]
    fn census_is_exact() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 3);
        let ballots = ms(3, &[(&[0], 4), (&[1, 2], 3), (&[2, 1], 2)]);
        let mut s = AuditSession::start(meta(3, 9, 0), cfg).unwrap();
        s.observe(&ballots).unwrap();
        let e = s.estimate_posterior().unwrap().clone();
        assert_eq!(e.prob_by_candidate, vec![0.0, 1.0, 0.0]);
        assert_eq!(e.prob_reported_winner, 0.0);
        assert_eq!(s.decide().unwrap(), Decision::CensusComplete);
        assert_eq!(s.census_winner().unwrap(), Some(1));
    }

    #[test]
    fn bootstrap_follows_sample() {
        let ros = roster(&["A", "B"]);
        let m = ElectionMeta {
            roster: ros,
            total_ballots: 3,
            reported_winner: 0,
        };
        let mut s = AuditSession::start(m, AuditConfig::new(PriorConfig::tree(0.0, true), 5)).unwrap();
        assert_eq!(s.estimate_posterior().unwrap_err(), AuditError::EmptyBootstrap);
        s.observe(&ms(2, &[(&[0, 1], 2)])).unwrap();
        assert_eq!(s.estimate_posterior().unwrap().prob_reported_winner, 1.0);
    }

    #[test]
    fn decide_rules() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 1);
        let mut s = AuditSession::start(meta(2, 10, 0), cfg).unwrap();
        assert_eq!(s.decide().unwrap_err(), AuditError::EmptyHistory);
        let push = |s: &mut AuditSession, p: f64| {
            s.history.push(PosteriorEstimate {
                prob_reported_winner: p,
                prob_by_candidate: vec![p, 1.0 - p],
                wins: vec![0, 0],
                sample_size: 0,
                draws: 100,
                seed_used: 1,
            });
        };
        push(&mut s, 0.94);
        assert_eq!(s.decide().unwrap(), Decision::ContinueSampling);
        s.config.min_sample = Some(1);
        push(&mut s, 0.96);
        assert_eq!(s.decide().unwrap(), Decision::ContinueSampling);
        s.config.min_sample = None;
        push(&mut s, 0.95);
        assert_eq!(s.decide().unwrap(), Decision::StopConfirm);
        assert_eq!(s.status(), AuditStatus::StoppedConfirmed);
    }

    #[test]
    fn repeated_estimates_are_reproducible() {
        let cfg = AuditConfig::new(PriorConfig::tree(1.0, true), 42);
        let mut a = AuditSession::start(meta(4, 500, 0), cfg.clone()).unwrap();
        let mut b = AuditSession::start(meta(4, 500, 0), cfg).unwrap();
        let obs = ms(4, &[(&[0, 1], 10), (&[1], 6), (&[2, 3, 0, 1], 4)]);
        for s in [&mut a, &mut b] {
            s.observe(&obs).unwrap();
            s.estimate_posterior().unwrap();
            s.estimate_posterior().unwrap();
        }
        assert_eq!(a.history(), b.history());
        assert_eq!(a.history()[0].sample_size, a.history()[1].sample_size);
        for e in a.history() {
            assert_eq!(e.wins.iter().sum::<u64>(), 100);
        }
    }

    #[test]
    fn snapshot_round_trip() {
        let cfg = AuditConfig::new(PriorConfig::dirichlet(0.25, true), 8);
        let mut s = AuditSession::start(meta(3, 50, 1), cfg).unwrap();
        s.observe(&ms(3, &[(&[1], 3), (&[0, 2], 2)])).unwrap();
        s.estimate_posterior().unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let back: AuditSession = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
