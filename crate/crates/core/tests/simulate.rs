use dirtree_audit::dirtree::leaf_rankings;
use dirtree_audit::simulate::{
    emit, expand_priors, final_round_margin, read_trials_csv, run_trials, summarize, synthetic_election,
    trial_prefix, LabeledPrior, SimError, SyntheticSpec, TrialPlan,
};
use dirtree_audit::{tally_irv, BallotMultiset, PriorConfig, Roster, TiePolicy};

fn small_election() -> (Roster, BallotMultiset) {
    let spec = SyntheticSpec {
        total: 300,
        weights: vec![0.5, 0.3, 0.2],
        continue_prob: 0.5,
    };
    (Roster::new(["A", "B", "C"]).unwrap(), synthetic_election(&spec, 2))
}

fn plan(max_sample: u64, seed: u64) -> TrialPlan {
    let priors = expand_priors(&[PriorConfig::tree(0.0, true), PriorConfig::tree(1.0, true)], true, 3).unwrap();
    let mut p = TrialPlan::new(priors, max_sample, seed);
    p.trials = 5;
    p.eval_step = 4;
    p.draws = 30;
    p
}

#[test]
fn outputs_are_deterministic_and_round_trip() {
    let (roster, ballots) = small_election();
    let p = plan(20, 9);
    let table = run_trials(&roster, &ballots, &p).unwrap();
    assert_eq!(p.priors.len(), 4);
    assert_eq!(table.rows.len(), 4 * 5 * 5);
    assert!(table.rows.iter().all(|r| (0.0..=1.0).contains(&r.prob)));

    let summary = summarize(&table);
    assert_eq!(summary.rows.len(), 4 * 5);
    for row in &summary.rows {
        assert!(row.q05 <= row.q50 && row.q50 <= row.q95);
    }

    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let written = emit(&table, &summary, a.path()).unwrap();
    assert_eq!(written.len(), 3);
    let again = run_trials(&roster, &ballots, &p).unwrap();
    emit(&again, &summarize(&again), b.path()).unwrap();
    for f in ["trials.csv", "summary.csv", "posterior_paths.svg"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    assert_eq!(read_trials_csv(&a.path().join("trials.csv")).unwrap(), table.rows);
    let svg = std::fs::read_to_string(a.path().join("posterior_paths.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));

    let other = run_trials(&roster, &ballots, &plan(20, 10)).unwrap();
    assert_ne!(other.rows, table.rows);
}

#[test]
fn plans_are_validated() {
    let (roster, ballots) = small_election();
    let mut p = plan(301, 0);
    assert!(matches!(run_trials(&roster, &ballots, &p), Err(SimError::Config(_))));
    p.max_sample = 10;
    p.trials = 0;
    assert!(run_trials(&roster, &ballots, &p).is_err());
    let dup = expand_priors(&[PriorConfig::tree(1.0, true), PriorConfig::tree(1.0, true)], false, 3);
    assert!(dup.is_err());
    assert_eq!(LabeledPrior::new(PriorConfig::tree(10.0, true)).label, "tree(a0=10)");
}

#[test]
fn shuffled_prefixes_are_uniform() {
    // 20 distinct ballots; tally which one each trial samples first.
    let leaves = leaf_rankings(4, true);
    let ballots: Vec<_> = leaves.into_iter().take(20).collect();
    let trials = 4000u32;
    let mut counts = vec![0u64; ballots.len()];
    for t in 0..trials {
        let head = trial_prefix(&ballots, 3, 1234, t);
        assert_eq!(head.len(), 3);
        assert!(head[0] != head[1] && head[1] != head[2] && head[0] != head[2]);
        counts[ballots.iter().position(|b| *b == head[0]).unwrap()] += 1;
    }
    let expected = trials as f64 / ballots.len() as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = (ballots.len() - 1) as f64;
    assert!(chi2 <= df + 3.0 * (2.0 * df).sqrt(), "chi2 {chi2}");
}

#[test]
fn stronger_priors_respond_more_slowly() {
    let spec = SyntheticSpec {
        total: 2000,
        weights: vec![0.6, 0.2, 0.12, 0.08],
        continue_prob: 0.5,
    };
    let roster = Roster::new(["A", "B", "C", "D"]).unwrap();
    let ballots = synthetic_election(&spec, 44);
    let labeled: Vec<LabeledPrior> = [1.0, 10.0, 100.0]
        .into_iter()
        .map(|a| LabeledPrior::new(PriorConfig::tree(a, true)))
        .collect();
    let mut p = TrialPlan::new(labeled, 20, 8);
    p.trials = 30;
    p.eval_step = 5;
    let table = run_trials(&roster, &ballots, &p).unwrap();
    assert_eq!(table.true_winner, 0);
    let summary = summarize(&table);
    for n in [5, 10, 20] {
        let m: Vec<f64> = ["tree(a0=1)", "tree(a0=10)", "tree(a0=100)"]
            .iter()
            .map(|l| summary.get(l, n).unwrap().q50)
            .collect();
        assert!(m[1] <= m[0] + 0.05 && m[2] <= m[1] + 0.05, "n={n}: {m:?}");
    }
}

#[test]
fn synthetic_elections_are_seeded() {
    let spec = SyntheticSpec {
        total: 1000,
        weights: vec![3.0, 2.0, 1.0],
        continue_prob: 0.0,
    };
    let a = synthetic_election(&spec, 1);
    assert_eq!(a, synthetic_election(&spec, 1));
    assert_ne!(a, synthetic_election(&spec, 2));
    assert_eq!(a.total(), 1000);
    // Without continuation every ballot is a bullet vote.
    assert!(a.iter().all(|(r, _)| r.len() == 1));
    let roster = Roster::new(["A", "B", "C"]).unwrap();
    let t = tally_irv(&a, &roster, TiePolicy::RosterOrder).unwrap();
    let last = t.rounds.len() - 2;
    let mut finalists: Vec<u64> = t.rounds[last].iter().copied().filter(|&v| v > 0).collect();
    finalists.sort_unstable();
    let gap = finalists[1] - finalists[0];
    assert_eq!(final_round_margin(&t, 1000), gap as f64 / 2000.0);
}
