//! Request and response bodies. Candidates always appear as
//! `{"index": ..., "name": ...}` pairs.

use crate::error::ApiError;
use crate::store::SessionRecord;
use dirtree_audit::{
    match_dirichlet_a0, AuditConfig, AuditStatus, BallotMultiset, Candidate, Decision, ElectionMeta,
    PriorConfig, PriorKind, Ranking, Roster, TiePolicy,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct CreateSession {
    pub roster: Vec<String>,
    pub total_ballots: u64,
    pub reported_winner: String,
    pub prior: PriorRequest,
    pub threshold: Option<f64>,
    pub draws_per_estimate: Option<u32>,
    pub tie: Option<TiePolicy>,
    pub seed: Option<u64>,
    pub min_sample: Option<u64>,
}

/// A prior given directly, or a flat Dirichlet given by the tree `a0` whose
/// prior variance it should match.
#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PriorRequest {
    pub kind: PriorKind,
    pub a0: Option<f64>,
    pub match_tree_a0: Option<f64>,
    #[serde(default = "default_true")]
    pub allow_partial: bool,
}

fn default_true() -> bool {
    true
}

/// A validated creation request.
pub struct Resolved {
    pub meta: ElectionMeta,
    pub config: AuditConfig,
    pub matched_from_tree_a0: Option<f64>,
}

impl CreateSession {
    pub fn resolve(self, default_seed: u64) -> Result<Resolved, ApiError> {
        let roster = Roster::new(self.roster)?;
        let reported_winner = roster.lookup(self.reported_winner.trim()).ok_or_else(|| {
            ApiError::unprocessable(
                "invalid-config",
                format!("reported winner {:?} is not in the roster", self.reported_winner),
            )
        })?;
        let p = self.prior;
        let (a0, matched) = match (p.kind, p.a0, p.match_tree_a0) {
            (_, Some(a0), None) => (a0, None),
            (PriorKind::Dirichlet, None, Some(tree_a0)) => {
                (match_dirichlet_a0(tree_a0, roster.k(), p.allow_partial)?, Some(tree_a0))
            }
            (PriorKind::DirichletTree, _, Some(_)) => {
                return Err(ApiError::unprocessable(
                    "invalid-prior",
                    "matchTreeA0 applies to the dirichlet kind only",
                ))
            }
            (_, Some(_), Some(_)) | (_, None, None) => {
                return Err(ApiError::unprocessable(
                    "invalid-prior",
                    "give exactly one of a0 and matchTreeA0",
                ))
            }
        };
        let prior = PriorConfig {
            kind: p.kind,
            a0,
            allow_partial: p.allow_partial,
        };
        let mut config = AuditConfig::new(prior, self.seed.unwrap_or(default_seed));
        if let Some(t) = self.threshold {
            config.threshold = t;
        }
        if let Some(d) = self.draws_per_estimate {
            config.draws_per_estimate = d;
        }
        config.tie = self.tie.unwrap_or_default();
        config.min_sample = self.min_sample;
        let meta = ElectionMeta {
            roster,
            total_ballots: self.total_ballots,
            reported_winner,
        };
        meta.validate()?;
        config.validate()?;
        Ok(Resolved {
            meta,
            config,
            matched_from_tree_a0: matched,
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PostBallots {
    pub ballots: Vec<BallotEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BallotEntry {
    /// Candidate names, most preferred first.
    pub ranking: Vec<String>,
    #[serde(default = "one")]
    pub count: u64,
}

fn one() -> u64 {
    1
}

impl PostBallots {
    /// Resolves names and canonicalizes each ranking.
    pub fn to_multiset(&self, roster: &Roster) -> Result<BallotMultiset, ApiError> {
        if self.ballots.is_empty() {
            return Err(ApiError::unprocessable("invalid-ballot", "empty batch"));
        }
        let mut entries = Vec::with_capacity(self.ballots.len());
        for (i, b) in self.ballots.iter().enumerate() {
            let bad = |m: String| ApiError::unprocessable("invalid-ballot", format!("ballot {i}: {m}"));
            if b.count == 0 {
                return Err(bad("count must be positive".into()));
            }
            let prefs = b
                .ranking
                .iter()
                .map(|n| roster.lookup(n.trim()).ok_or_else(|| bad(format!("unknown candidate {n:?}"))))
                .collect::<Result<Vec<Candidate>, _>>()?;
            let ranking = Ranking::canonical(prefs, roster.k()).map_err(|e| bad(e.to_string()))?;
            entries.push((ranking, b.count));
        }
        Ok(BallotMultiset::from_entries(entries))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EstimateRequest {
    pub draws: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRef {
    pub index: Candidate,
    pub name: String,
}

fn cand(roster: &Roster, c: Candidate) -> CandidateRef {
    CandidateRef {
        index: c,
        name: roster.name(c).to_string(),
    }
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MetaView {
    pub roster: Vec<CandidateRef>,
    pub total_ballots: u64,
    pub reported_winner: CandidateRef,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PriorView {
    pub kind: PriorKind,
    pub a0: f64,
    pub allow_partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub matched_from_tree_a0: Option<f64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConfigView {
    pub prior: PriorView,
    pub threshold: f64,
    pub draws_per_estimate: u32,
    pub tie: TiePolicy,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_sample: Option<u64>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CandidateProb {
    pub index: Candidate,
    pub name: String,
    pub prob: f64,
    pub wins: u64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct HistoryEntry {
    pub n: u64,
    pub prob_winner: f64,
    pub prob_by_candidate: Vec<CandidateProb>,
    pub draws: u32,
    pub seed_used: u64,
    pub decision: Decision,
    pub at: String,
}

#[derive(Debug, Serialize)]
pub struct ObservedEntry {
    pub ranking: Vec<CandidateRef>,
    pub count: u64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub id: String,
    pub created_at: String,
    pub updated_at: String,
    pub meta: MetaView,
    pub config: ConfigView,
    pub n: u64,
    pub remaining: u64,
    pub status: AuditStatus,
    pub observed: Vec<ObservedEntry>,
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LatestView {
    pub n: u64,
    pub prob_winner: f64,
    pub decision: Decision,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionSummary {
    pub id: String,
    pub created_at: String,
    pub updated_at: String,
    pub candidates: usize,
    pub total_ballots: u64,
    pub reported_winner: CandidateRef,
    pub n: u64,
    pub status: AuditStatus,
    pub latest: Option<LatestView>,
}

#[derive(Debug, Serialize)]
pub struct SessionList {
    pub sessions: Vec<SessionSummary>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BallotsAccepted {
    pub added: u64,
    pub n: u64,
    pub remaining: u64,
    pub status: AuditStatus,
    pub updated_at: String,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EstimateView {
    pub estimate: HistoryEntry,
    pub decision: Decision,
    pub status: AuditStatus,
}

pub fn history_entry(rec: &SessionRecord, i: usize) -> HistoryEntry {
    let roster = &rec.session.meta().roster;
    let e = &rec.session.history()[i];
    let d = &rec.decisions[i];
    HistoryEntry {
        n: e.sample_size,
        prob_winner: e.prob_reported_winner,
        prob_by_candidate: e
            .prob_by_candidate
            .iter()
            .zip(&e.wins)
            .enumerate()
            .map(|(c, (&prob, &wins))| CandidateProb {
                index: c as Candidate,
                name: roster.name(c as Candidate).to_string(),
                prob,
                wins,
            })
            .collect(),
        draws: e.draws,
        seed_used: e.seed_used,
        decision: d.decision,
        at: crate::store::timestamp(&d.at),
    }
}

pub fn session_view(rec: &SessionRecord) -> SessionView {
    let s = &rec.session;
    let roster = &s.meta().roster;
    let cfg = s.config();
    SessionView {
        id: rec.id.clone(),
        created_at: crate::store::timestamp(&rec.created_at),
        updated_at: crate::store::timestamp(&rec.updated_at),
        meta: MetaView {
            roster: (0..roster.k()).map(|c| cand(roster, c as Candidate)).collect(),
            total_ballots: s.meta().total_ballots,
            reported_winner: cand(roster, s.meta().reported_winner),
        },
        config: ConfigView {
            prior: PriorView {
                kind: cfg.prior.kind,
                a0: cfg.prior.a0,
                allow_partial: cfg.prior.allow_partial,
                matched_from_tree_a0: rec.matched_from_tree_a0,
            },
            threshold: cfg.threshold,
            draws_per_estimate: cfg.draws_per_estimate,
            tie: cfg.tie,
            seed: cfg.seed,
            min_sample: cfg.min_sample,
        },
        n: s.sample_size(),
        remaining: s.remaining(),
        status: s.status(),
        observed: s
            .observed()
            .iter()
            .map(|(r, count)| ObservedEntry {
                ranking: r.prefs().iter().map(|&c| cand(roster, c)).collect(),
                count,
            })
            .collect(),
        history: (0..s.history().len()).map(|i| history_entry(rec, i)).collect(),
    }
}

pub fn session_summary(rec: &SessionRecord) -> SessionSummary {
    let s = &rec.session;
    SessionSummary {
        id: rec.id.clone(),
        created_at: crate::store::timestamp(&rec.created_at),
        updated_at: crate::store::timestamp(&rec.updated_at),
        candidates: s.meta().roster.k(),
        total_ballots: s.meta().total_ballots,
        reported_winner: cand(&s.meta().roster, s.meta().reported_winner),
        n: s.sample_size(),
        status: s.status(),
        latest: s.history().last().map(|e| LatestView {
            n: e.sample_size,
            prob_winner: e.prob_reported_winner,
            decision: rec.decisions.last().unwrap().decision,
        }),
    }
}
