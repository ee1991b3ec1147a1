//! Repeated simulated audits over a fixed ballot file.
//!
//! Each trial shuffles the ballots, feeds them one at a time into a fresh
//! audit session per prior, and records the posterior probability of the true
//! winner at every evaluation point. Audits never stop early, so every trial
//! contributes a full trajectory.

mod emit;
mod synthetic;

pub use emit::{emit, read_trials_csv, render_svg, EmitError};
pub use synthetic::{final_round_margin, synthetic_election, SyntheticSpec};

use crate::audit::{AuditConfig, AuditError, AuditSession, ElectionMeta};
use crate::ballots::{parse_ballots, BallotError, BallotMultiset, Candidate, Ranking, Roster};
use crate::dirtree::{match_dirichlet_a0, PriorConfig, PriorKind, TreeError};
use crate::rng::{derive_seed, RandomStream};
use crate::social_choice::{tally_irv, TallyError, TiePolicy};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::PathBuf;

const SHUFFLE_PURPOSE: u64 = 1;
const AUDIT_PURPOSE: u64 = 2;

#[derive(thiserror::Error, Debug)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Ballots(#[from] BallotError),
    #[error(transparent)]
    Tally(#[from] TallyError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

impl SimError {
    /// Configuration problems, as opposed to problems with the data.
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_) | SimError::Tree(_))
    }
}

/// A prior together with the label it is reported under.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPrior {
    pub label: String,
    pub config: PriorConfig,
}

fn fmt_a0(a0: f64) -> String {
    if a0.fract() == 0.0 && a0.abs() < 1e15 {
        return format!("{a0}");
    }
    let s = format!("{a0:.6}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl LabeledPrior {
    pub fn new(config: PriorConfig) -> Self {
        let label = match config.kind {
            PriorKind::DirichletTree => format!("tree(a0={})", fmt_a0(config.a0)),
            PriorKind::Dirichlet => format!("dirichlet(a0′={})", fmt_a0(config.a0)),
        };
        LabeledPrior { label, config }
    }
}

/// Labels each prior and, on request, appends a variance-matched flat
/// Dirichlet companion for every tree prior.
pub fn expand_priors(
    priors: &[PriorConfig],
    with_matched_dirichlet: bool,
    k: usize,
) -> Result<Vec<LabeledPrior>, SimError> {
    let mut out: Vec<LabeledPrior> = priors.iter().copied().map(LabeledPrior::new).collect();
    if with_matched_dirichlet {
        for p in priors.iter().filter(|p| p.kind == PriorKind::DirichletTree) {
            let a = match_dirichlet_a0(p.a0, k, p.allow_partial)?;
            out.push(LabeledPrior::new(PriorConfig::dirichlet(a, p.allow_partial)));
        }
    }
    let mut seen = std::collections::HashSet::new();
    for p in &out {
        if !seen.insert(p.label.clone()) {
            return Err(SimError::Config(format!("prior {} listed twice", p.label)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrialPlan {
    pub priors: Vec<LabeledPrior>,
    pub trials: u32,
    pub max_sample: u64,
    /// Estimate after every `eval_step` ballots.
    pub eval_step: u64,
    pub draws: u32,
    pub base_seed: u64,
    pub tie: TiePolicy,
}

impl TrialPlan {
    pub fn new(priors: Vec<LabeledPrior>, max_sample: u64, base_seed: u64) -> Self {
        TrialPlan {
            priors,
            trials: 100,
            max_sample,
            eval_step: 1,
            draws: 100,
            base_seed,
            tie: TiePolicy::RosterOrder,
        }
    }

    pub fn eval_points(&self) -> impl Iterator<Item = u64> + '_ {
        (1..=self.max_sample / self.eval_step.max(1)).map(|i| i * self.eval_step)
    }

    fn validate(&self, total: u64) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.priors.is_empty() {
            return bad("no priors given".into());
        }
        if self.eval_step == 0 || self.draws == 0 || self.max_sample == 0 {
            return bad("max sample, eval step and draws must be positive".into());
        }
        if self.eval_step > self.max_sample {
            return bad("eval step exceeds max sample".into());
        }
        if self.max_sample > total {
            return bad(format!(
                "max sample {} exceeds the {total} ballots in the file",
                self.max_sample
            ));
        }
        for p in &self.priors {
            p.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub prior: String,
    pub trial: u32,
    pub n: u64,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialTable {
    pub true_winner: Candidate,
    /// Ordered by prior (plan order), then trial, then sample size.
    pub rows: Vec<TrialRow>,
}

/// Reads a roster file and a ballot file.
pub fn load_election(
    roster_file: &std::path::Path,
    ballot_file: &std::path::Path,
) -> Result<(Roster, BallotMultiset), SimError> {
    let read = |p: &std::path::Path| {
        std::fs::read_to_string(p).map_err(|source| SimError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let roster = Roster::parse(&read(roster_file)?)?;
    let ballots = parse_ballots(&read(ballot_file)?, &roster)?;
    Ok((roster, ballots))
}

/// The first `take` ballots of trial `trial`'s random permutation.
pub fn trial_prefix(ballots: &[Ranking], take: usize, base_seed: u64, trial: u32) -> Vec<Ranking> {
    let mut idx: Vec<u32> = (0..ballots.len() as u32).collect();
    let mut rng = RandomStream::new(derive_seed(base_seed, SHUFFLE_PURPOSE, trial as u64), 0).rng();
    let (head, _) = idx.partial_shuffle(&mut rng, take);
    head.iter().map(|&i| ballots[i as usize].clone()).collect()
}

/// Runs every trial of the plan against `ballots`.
pub fn run_trials(
    roster: &Roster,
    ballots: &BallotMultiset,
    plan: &TrialPlan,
) -> Result<TrialTable, SimError> {
    plan.validate(ballots.total())?;
    let true_winner = tally_irv(ballots, roster, plan.tie)?.winner;
    let expanded = ballots.expand();
    let meta = ElectionMeta {
        roster: roster.clone(),
        total_ballots: ballots.total(),
        reported_winner: true_winner,
    };
    let points: Vec<u64> = plan.eval_points().collect();

    let per_trial: Vec<Vec<Vec<f64>>> = (0..plan.trials)
        .into_par_iter()
        .map(|t| {
            let sample = trial_prefix(&expanded, plan.max_sample as usize, plan.base_seed, t);
            let seed = derive_seed(plan.base_seed, AUDIT_PURPOSE, t as u64);
            plan.priors
                .iter()
                .map(|p| trajectory(&meta, p.config, plan, seed, &sample, &points))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, SimError>>()?;

    let mut rows = Vec::with_capacity(plan.priors.len() * plan.trials as usize * points.len());
    for (pi, prior) in plan.priors.iter().enumerate() {
        for (t, per_prior) in per_trial.iter().enumerate() {
            for (&n, &prob) in points.iter().zip(&per_prior[pi]) {
                rows.push(TrialRow {
                    prior: prior.label.clone(),
                    trial: t as u32,
                    n,
                    prob,
                });
            }
        }
    }
    Ok(TrialTable { true_winner, rows })
}

fn trajectory(
    meta: &ElectionMeta,
    prior: PriorConfig,
    plan: &TrialPlan,
    seed: u64,
    sample: &[Ranking],
    points: &[u64],
) -> Result<Vec<f64>, SimError> {
    let mut cfg = AuditConfig::new(prior, seed);
    cfg.draws_per_estimate = plan.draws;
    cfg.tie = plan.tie;
    let mut session = AuditSession::start(meta.clone(), cfg)?;
    let mut out = Vec::with_capacity(points.len());
    let mut next = points.iter().peekable();
    for (i, ballot) in sample.iter().enumerate() {
        session.observe(&BallotMultiset::from_entries([(ballot.clone(), 1)]))?;
        if next.peek() == Some(&&(i as u64 + 1)) {
            next.next();
            out.push(session.estimate_posterior()?.prob_reported_winner);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub prior: String,
    pub n: u64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantileSummary {
    /// Ordered by prior (first appearance in the table), then sample size.
    pub rows: Vec<SummaryRow>,
}

impl QuantileSummary {
    pub fn get(&self, prior: &str, n: u64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.prior == prior && r.n == n)
    }

    pub fn priors(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.prior.as_str()) {
                out.push(&r.prior);
            }
        }
        out
    }
}

/// Nearest-rank quantile of sorted values: the smallest value with at least a
/// fraction `q` of the values at or below it.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

pub fn summarize(table: &TrialTable) -> QuantileSummary {
    let mut order: Vec<(String, u64)> = Vec::new();
    let mut groups: HashMap<(String, u64), Vec<f64>> = HashMap::new();
    for row in &table.rows {
        let key = (row.prior.clone(), row.n);
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row.prob);
    }
    let prior_rank: HashMap<String, usize> = {
        let mut m = HashMap::new();
        for (p, _) in &order {
            let len = m.len();
            m.entry(p.clone()).or_insert(len);
        }
        m
    };
    order.sort_by_key(|(p, n)| (prior_rank[p], *n));
    let rows = order
        .into_iter()
        .map(|key| {
            let mut v = groups.remove(&key).unwrap();
            v.sort_by(f64::total_cmp);
            SummaryRow {
                q05: nearest_rank(&v, 0.05),
                q50: nearest_rank(&v, 0.5),
                q95: nearest_rank(&v, 0.95),
                prior: key.0,
                n: key.1,
            }
        })
        .collect();
    QuantileSummary { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: &[f64]) -> TrialTable {
        TrialTable {
            true_winner: 0,
            rows: values
                .iter()
                .enumerate()
                .map(|(t, &p)| TrialRow {
                    prior: "p".into(),
                    trial: t as u32,
                    n: 1,
                    prob: p,
                })
                .collect(),
        }
    }

    #[test]
    fn quantiles_of_constant() {
        let s = summarize(&table(&[0.3; 7]));
        let r = &s.rows[0];
        assert_eq!((r.q05, r.q50, r.q95), (0.3, 0.3, 0.3));
    }

    #[test]
    fn median_of_three() {
        let s = summarize(&table(&[1.0, 0.0, 0.5]));
        assert_eq!(s.rows[0].q50, 0.5);
        assert_eq!(s.rows[0].q05, 0.0);
        assert_eq!(s.rows[0].q95, 1.0);
    }

    #[test]
    fn nearest_rank_on_hundred() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(nearest_rank(&v, 0.05), 5.0);
        assert_eq!(nearest_rank(&v, 0.5), 50.0);
        assert_eq!(nearest_rank(&v, 0.95), 95.0);
        assert_eq!(nearest_rank(&[2.0], 0.05), 2.0);
    }

    #[test]
    fn labels() {
        assert_eq!(LabeledPrior::new(PriorConfig::tree(10.0, true)).label, "tree(a0=10)");
        assert_eq!(
            LabeledPrior::new(PriorConfig::dirichlet(2.0 / 3.0, true)).label,
            "dirichlet(a0′=0.666667)"
        );
        assert_eq!(LabeledPrior::new(PriorConfig::tree(0.5, true)).label, "tree(a0=0.5)");
    }

    #[test]
    fn expand_adds_matched_companions() {
        let p = expand_priors(
            &[PriorConfig::tree(0.0, false), PriorConfig::tree(1.0, false)],
            true,
            3,
        )
        .unwrap();
        let labels: Vec<&str> = p.iter().map(|p| p.label.as_str()).collect();
        assert_eq!(
            labels,
            ["tree(a0=0)", "tree(a0=1)", "dirichlet(a0′=0)", "dirichlet(a0′=0.666667)"]
        );
        assert!(expand_priors(&[PriorConfig::tree(1.0, true); 2], false, 3).is_err());
    }

    #[test]
    fn plan_validation() {
        let roster = Roster::new(["A", "B"]).unwrap();
        let ballots = BallotMultiset::from_entries([(Ranking::canonical(vec![0], 2).unwrap(), 5)]);
        let priors = expand_priors(&[PriorConfig::tree(1.0, true)], false, 2).unwrap();
        let mut plan = TrialPlan::new(priors, 6, 1);
        assert!(matches!(run_trials(&roster, &ballots, &plan), Err(SimError::Config(_))));
        plan.max_sample = 5;
        plan.trials = 0;
        assert!(run_trials(&roster, &ballots, &plan).unwrap_err().is_config());
    }

    #[test]
    fn shuffle_is_seeded() {
        let ballots: Vec<Ranking> = (0..50u16)
            .map(|i| Ranking::from_vec_unchecked(vec![i % 3]))
            .collect();
        assert_eq!(trial_prefix(&ballots, 10, 4, 2), trial_prefix(&ballots, 10, 4, 2));
        assert_eq!(trial_prefix(&ballots, 10, 4, 2).len(), 10);
    }

    #[test]
    fn rows_are_shaped_by_plan() {
        let roster = Roster::new(["A", "B", "C"]).unwrap();
        let ballots = BallotMultiset::from_entries([
            (Ranking::canonical(vec![0], 3).unwrap(), 12),
            (Ranking::canonical(vec![1, 0], 3).unwrap(), 6),
            (Ranking::canonical(vec![2], 3).unwrap(), 4),
        ]);
        let priors = expand_priors(&[PriorConfig::tree(1.0, true)], true, 3).unwrap();
        let mut plan = TrialPlan::new(priors, 10, 9);
        plan.trials = 3;
        plan.eval_step = 3;
        plan.draws = 20;
        let t = run_trials(&roster, &ballots, &plan).unwrap();
        assert_eq!(t.rows.len(), 2 * 3 * 3);
        assert_eq!(t.true_winner, 0);
        assert!(t.rows.iter().all(|r| (0.0..=1.0).contains(&r.prob)));
        assert_eq!(t.rows[0].n, 3);
        assert_eq!(t.rows[2].n, 9);
    }
}
