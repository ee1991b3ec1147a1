//! Bayesian ballot-polling audits for instant-runoff elections.
//!
//! The posterior over ballot types is a Dirichlet-tree whose shape follows the
//! preference order, with a flat Dirichlet over the same ballot types as a
//! baseline. Audit sessions impute the unsampled ballots from the posterior
//! predictive, tally each imputed election, and stop once the reported winner
//! wins a large enough share of the draws.

pub mod audit;
pub mod ballots;
pub mod dirtree;
pub mod rng;
pub mod simulate;
pub mod social_choice;

pub use audit::{AuditConfig, AuditError, AuditSession, AuditStatus, Decision, ElectionMeta, PosteriorEstimate};
pub use ballots::{parse_ballots, BallotError, BallotMultiset, Candidate, Ranking, Roster};
pub use dirtree::{
    complete_ballot_prior_variance, match_dirichlet_a0, DrawBuffer, PosteriorTree, PriorConfig, PriorKind, TreeError,
};
pub use rng::RandomStream;
pub use social_choice::{tally_entries, tally_irv, Irv, SocialChoice, TallyError, TallyResult, TiePolicy};
