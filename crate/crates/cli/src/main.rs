//! `dirtree-audit`: tally, audit and simulate ranked-choice elections with
//! Dirichlet-tree posteriors.
//!
//! Exit status: 0 on success, 2 for configuration errors (bad flags or
//! plans), 3 for data errors (unreadable or malformed input files).

use clap::{Args, Parser, Subcommand, ValueEnum};
use dirtree_audit::simulate::{
    emit, expand_priors, load_election, run_trials, summarize, synthetic_election, SimError,
    SyntheticSpec, TrialPlan,
};
use dirtree_audit::{
    complete_ballot_prior_variance, match_dirichlet_a0, parse_ballots, AuditConfig, AuditSession,
    BallotMultiset, Decision, ElectionMeta, PriorConfig, PriorKind, Roster, TiePolicy,
};
use serde::Serialize;
use std::io::{BufRead, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dirtree-audit", version, about = "Bayesian ballot-polling audits for instant-runoff elections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count an election by instant runoff and print the rounds as JSON.
    Tally {
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        ballots: PathBuf,
        #[command(flatten)]
        tie: TieArgs,
    },
    /// Flat Dirichlet concentration matching a tree prior's ballot variance.
    MatchA0 {
        /// Number of candidates.
        #[arg(long)]
        k: usize,
        /// Tree prior concentration.
        #[arg(long)]
        a0: f64,
        /// Leaf set of complete rankings only (no termination branches).
        #[arg(long)]
        complete_only: bool,
    },
    /// Run an audit session over sampled ballots read from standard input.
    Audit {
        #[command(subcommand)]
        action: AuditAction,
    },
    /// Repeated simulated audits of a ballot file under several priors.
    Simulate(SimulateArgs),
    /// Write a synthetic election (roster.txt and ballots.txt).
    Synthesize(SynthesizeArgs),
    /// Serve the HTTP API (and optionally a static UI bundle).
    Serve(ServeArgs),
}

#[derive(Args)]
struct TieArgs {
    /// Break elimination ties at random from this seed instead of
    /// eliminating the tied candidate latest in the roster.
    #[arg(long)]
    tie_seed: Option<u64>,
}

impl TieArgs {
    fn policy(&self) -> TiePolicy {
        match self.tie_seed {
            Some(seed) => TiePolicy::SeededRandom { seed },
            None => TiePolicy::RosterOrder,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    Tree,
    Dirichlet,
}

#[derive(Subcommand)]
enum AuditAction {
    /// Reads one ballot record per line (`[count,]name,name,...`); after
    /// each record prints `{"n":..,"probWinner":..,"decision":..}`. Stops at
    /// the first stop-confirm or census-complete decision.
    Run(AuditArgs),
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    roster: PathBuf,
    /// Total ballots cast (N).
    #[arg(long = "total")]
    total: u64,
    /// Reported winner's name.
    #[arg(long)]
    winner: String,
    #[arg(long, value_enum, default_value = "tree")]
    prior: PriorArg,
    /// Prior concentration.
    #[arg(long, conflicts_with = "match_tree_a0", required_unless_present = "match_tree_a0")]
    a0: Option<f64>,
    /// With `--prior dirichlet`: use the concentration whose ballot variance
    /// matches a tree prior with this a0.
    #[arg(long)]
    match_tree_a0: Option<f64>,
    #[arg(long)]
    complete_only: bool,
    #[arg(long, default_value_t = dirtree_audit::audit::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = dirtree_audit::audit::DEFAULT_DRAWS)]
    draws: u32,
    #[arg(long)]
    seed: u64,
    /// Do not stop before this many ballots have been sampled.
    #[arg(long)]
    min_sample: Option<u64>,
    #[command(flatten)]
    tie: TieArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    roster: PathBuf,
    #[arg(long)]
    ballots: PathBuf,
    /// Comma-separated `kind:a0` list; kind is `tree` or `dirichlet`.
    #[arg(long, default_value = "tree:0,tree:1,tree:10,tree:100")]
    priors: String,
    /// Add a variance-matched flat Dirichlet for every tree prior.
    #[arg(long)]
    with_matched_dirichlet: bool,
    #[arg(long, default_value_t = 100)]
    trials: u32,
    #[arg(long, default_value_t = 200)]
    max_sample: u64,
    #[arg(long, default_value_t = 1)]
    eval_step: u64,
    #[arg(long, default_value_t = 100)]
    draws: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    complete_only: bool,
    /// Output directory for trials.csv, summary.csv and posterior_paths.svg.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tie: TieArgs,
}

#[derive(Args)]
struct SynthesizeArgs {
    /// Comma-separated Plackett-Luce weights, one per candidate.
    #[arg(long)]
    weights: String,
    /// Comma-separated candidate names; defaults to A, B, C, ...
    #[arg(long)]
    names: Option<String>,
    /// Probability of ranking one more candidate after each preference.
    #[arg(long, default_value_t = 0.5)]
    continue_prob: f64,
    #[arg(long)]
    total: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory holding one JSON snapshot per session.
    #[arg(long)]
    data_dir: PathBuf,
    /// Derive default session seeds from this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Static UI bundle to serve at `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
        }
    }
}

fn config<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            config(e)
        } else {
            data(e)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("reading {}: {e}", path.display())))
}

fn load_roster(path: &Path) -> Result<Roster, Failure> {
    Roster::parse(&read(path)?).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(out: &mut impl Write, value: &T) -> Result<(), Failure> {
    serde_json::to_writer(&mut *out, value).map_err(data)?;
    writeln!(out).map_err(data)
}

#[derive(Serialize)]
struct RoundCount<'a> {
    name: &'a str,
    votes: u64,
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct TallyReport<'a> {
    winner: &'a str,
    elimination_order: Vec<&'a str>,
    /// Continuing candidates' votes in each round, in roster order.
    rounds: Vec<Vec<RoundCount<'a>>>,
    exhausted: Vec<u64>,
}

fn tally(roster: &Path, ballots: &Path, tie: TiePolicy) -> Result<(), Failure> {
    let roster = load_roster(roster)?;
    let ballots = parse_ballots(&read(ballots)?, &roster).map_err(data)?;
    let t = dirtree_audit::tally_irv(&ballots, &roster, tie).map_err(data)?;
    let mut out_so_far: Vec<bool> = vec![false; roster.k()];
    let mut rounds = Vec::with_capacity(t.rounds.len());
    for (i, votes) in t.rounds.iter().enumerate() {
        if i > 0 {
            out_so_far[t.elimination_order[i - 1] as usize] = true;
        }
        rounds.push(
            votes
                .iter()
                .enumerate()
                .filter(|(c, _)| !out_so_far[*c])
                .map(|(c, &v)| RoundCount {
                    name: roster.name(c as u16),
                    votes: v,
                })
                .collect(),
        );
    }
    let report = TallyReport {
        winner: roster.name(t.winner),
        elimination_order: t.elimination_order.iter().map(|&c| roster.name(c)).collect(),
        rounds,
        exhausted: t.exhausted.clone(),
    };
    let out = serde_json::to_string_pretty(&report).map_err(data)?;
    println!("{out}");
    Ok(())
}

fn match_a0(k: usize, a0: f64, complete_only: bool) -> Result<(), Failure> {
    let partial = !complete_only;
    let matched = match_dirichlet_a0(a0, k, partial).map_err(config)?;
    let tree_var = complete_ballot_prior_variance(&PriorConfig::tree(a0, partial), k).map_err(config)?;
    let flat_var =
        complete_ballot_prior_variance(&PriorConfig::dirichlet(matched, partial), k).map_err(config)?;
    println!("a0_prime={matched}");
    println!("tree_variance={tree_var}");
    println!("dirichlet_variance={flat_var}");
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct AuditLine {
    n: u64,
    prob_winner: f64,
    decision: Decision,
}

fn audit_run(args: &AuditArgs) -> Result<(), Failure> {
    let roster = load_roster(&args.roster)?;
    let winner = roster
        .lookup(args.winner.trim())
        .ok_or_else(|| Failure::Config(format!("reported winner {:?} is not in the roster", args.winner)))?;
    let partial = !args.complete_only;
    let prior = match (args.prior, args.a0, args.match_tree_a0) {
        (PriorArg::Tree, Some(a0), _) => PriorConfig::tree(a0, partial),
        (PriorArg::Dirichlet, Some(a0), _) => PriorConfig::dirichlet(a0, partial),
        (PriorArg::Dirichlet, None, Some(t)) => {
            PriorConfig::dirichlet(match_dirichlet_a0(t, roster.k(), partial).map_err(config)?, partial)
        }
        (PriorArg::Tree, None, Some(_)) => {
            return Err(Failure::Config("--match-tree-a0 needs --prior dirichlet".into()))
        }
        (_, None, None) => return Err(Failure::Config("give --a0 or --match-tree-a0".into())),
    };
    let mut cfg = AuditConfig::new(prior, args.seed);
    cfg.threshold = args.threshold;
    cfg.draws_per_estimate = args.draws;
    cfg.tie = args.tie.policy();
    cfg.min_sample = args.min_sample;
    let meta = ElectionMeta {
        roster: roster.clone(),
        total_ballots: args.total,
        reported_winner: winner,
    };
    let mut session = AuditSession::start(meta, cfg).map_err(config)?;

    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (i, line) in stdin.lock().lines().enumerate() {
        let line = line.map_err(data)?;
        let Some((ranking, count)) =
            dirtree_audit::ballots::parse_record(&line, &roster, i + 1, true).map_err(data)?
        else {
            continue;
        };
        session
            .observe(&BallotMultiset::from_entries([(ranking, count)]))
            .map_err(|e| Failure::Data(format!("line {}: {e}", i + 1)))?;
        let prob_winner = session
            .estimate_posterior()
            .map_err(|e| Failure::Data(format!("line {}: {e}", i + 1)))?
            .prob_reported_winner;
        let decision = session.decide().map_err(data)?;
        print_json(
            &mut out,
            &AuditLine {
                n: session.sample_size(),
                prob_winner,
                decision,
            },
        )?;
        out.flush().map_err(data)?;
        if decision != Decision::ContinueSampling {
            break;
        }
    }
    Ok(())
}

fn parse_priors(spec: &str, partial: bool) -> Result<Vec<PriorConfig>, Failure> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let (kind, a0) = item
                .split_once(':')
                .ok_or_else(|| Failure::Config(format!("prior {item:?} is not kind:a0")))?;
            let a0: f64 = a0
                .trim()
                .parse()
                .map_err(|_| Failure::Config(format!("prior {item:?}: a0 is not a number")))?;
            let kind = match kind.trim() {
                "tree" => PriorKind::DirichletTree,
                "dirichlet" => PriorKind::Dirichlet,
                other => return Err(Failure::Config(format!("unknown prior kind {other:?}"))),
            };
            let p = PriorConfig {
                kind,
                a0,
                allow_partial: partial,
            };
            p.validate().map_err(config)?;
            Ok(p)
        })
        .collect()
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let priors = parse_priors(&args.priors, !args.complete_only)?;
    let (roster, ballots) = load_election(&args.roster, &args.ballots)?;
    let labeled = expand_priors(&priors, args.with_matched_dirichlet, roster.k())?;
    let mut plan = TrialPlan::new(labeled, args.max_sample, args.seed);
    plan.trials = args.trials;
    plan.eval_step = args.eval_step;
    plan.draws = args.draws;
    plan.tie = args.tie.policy();
    let table = run_trials(&roster, &ballots, &plan)?;
    let summary = summarize(&table);
    for path in emit(&table, &summary, &args.out).map_err(data)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Failure::Config(format!("bad {what} {x:?}"))))
        .collect()
}

fn synthesize(args: &SynthesizeArgs) -> Result<(), Failure> {
    let weights: Vec<f64> = parse_list(&args.weights, "weight")?;
    if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Failure::Config("weights must be positive".into()));
    }
    if !(0.0..=1.0).contains(&args.continue_prob) {
        return Err(Failure::Config("continue probability must lie in [0, 1]".into()));
    }
    let names: Vec<String> = match &args.names {
        Some(n) => n.split(',').map(|s| s.trim().to_string()).collect(),
        None if weights.len() <= 26 => (0..weights.len()).map(|i| ((b'A' + i as u8) as char).to_string()).collect(),
        None => (0..weights.len()).map(|i| format!("C{}", i + 1)).collect(),
    };
    if names.len() != weights.len() {
        return Err(Failure::Config("one name per weight".into()));
    }
    let roster = Roster::new(names).map_err(config)?;
    let spec = SyntheticSpec {
        total: args.total,
        weights,
        continue_prob: args.continue_prob,
    };
    let ballots = synthetic_election(&spec, args.seed);
    std::fs::create_dir_all(&args.out).map_err(data)?;
    for (file, text) in [("roster.txt", roster.to_text()), ("ballots.txt", ballots.to_text(&roster))] {
        let path = args.out.join(file);
        std::fs::write(&path, text).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> Result<(), Failure> {
    let cfg = dirtree_audit_service::ServeConfig {
        addr: SocketAddr::new(args.host, args.port),
        data_dir: args.data_dir.clone(),
        seed: args.seed,
        ui_dir: args.ui_dir.clone(),
    };
    dirtree_audit_service::serve_blocking(cfg).map_err(|e| match e {
        dirtree_audit_service::ServeError::Store(e) => data(e),
        other => config(other),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Tally { roster, ballots, tie } => tally(roster, ballots, tie.policy()),
        Command::MatchA0 { k, a0, complete_only } => match_a0(*k, *a0, *complete_only),
        Command::Audit {
            action: AuditAction::Run(args),
        } => audit_run(args),
        Command::Simulate(args) => simulate(args),
        Command::Synthesize(args) => synthesize(args),
        Command::Serve(args) => serve(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(m) | Failure::Data(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
