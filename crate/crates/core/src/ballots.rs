//! Candidates, rankings and ballot files.
//!
//! Past the parse boundary a candidate is identified only by its index in the
//! [`Roster`]. Rankings are stored in canonical form: a ranking that lists all
//! but one candidate is completed with the forced last preference.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;

/// Index of a candidate in its roster.
pub type Candidate = u16;

#[derive(thiserror::Error, Debug, Clone, PartialEq, Eq)]
pub enum BallotError {
    #[error("roster is empty")]
    EmptyRoster,
    #[error("roster line {line}: empty candidate name")]
    EmptyName { line: usize },
    #[error("duplicate candidate name {0:?} in roster")]
    DuplicateName(String),
    #[error("roster has {0} candidates, more than supported")]
    TooManyCandidates(usize),
    #[error("line {line}: unknown candidate {name:?}")]
    UnknownCandidate { line: usize, name: String },
    #[error("line {line}: candidate {name:?} ranked more than once")]
    DuplicateCandidate { line: usize, name: String },
    #[error("line {line}: count {value:?} is not a positive integer")]
    InvalidCount { line: usize, value: String },
    #[error("line {line}: empty preference list")]
    EmptyRanking { line: usize },
    #[error("invalid ranking: {0}")]
    InvalidRanking(String),
}

/// The ordered list of candidates in an election.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Roster {
    names: Vec<String>,
    index: HashMap<String, Candidate>,
}

impl Roster {
    pub fn new<I, S>(names: I) -> Result<Self, BallotError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        for (i, name) in names.into_iter().enumerate() {
            let name = name.as_ref().trim_matches(|c: char| c.is_ascii_whitespace());
            if name.is_empty() {
                return Err(BallotError::EmptyName { line: i + 1 });
            }
            if out.len() >= Candidate::MAX as usize {
                return Err(BallotError::TooManyCandidates(out.len() + 1));
            }
            if index.insert(name.to_string(), out.len() as Candidate).is_some() {
                return Err(BallotError::DuplicateName(name.to_string()));
            }
            out.push(name.to_string());
        }
        if out.is_empty() {
            return Err(BallotError::EmptyRoster);
        }
        Ok(Roster { names: out, index })
    }

    /// Parses a roster file: one candidate name per line, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self, BallotError> {
        Self::new(text.lines().filter(|l| !l.trim().is_empty()))
    }

    pub fn to_text(&self) -> String {
        let mut s = self.names.join("\n");
        s.push('\n');
        s
    }

    /// Number of candidates.
    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, c: Candidate) -> &str {
        &self.names[c as usize]
    }

    pub fn lookup(&self, name: &str) -> Option<Candidate> {
        self.index
            .get(name.trim_matches(|c: char| c.is_ascii_whitespace()))
            .copied()
    }
}

impl fmt::Debug for Roster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Roster").field(&self.names).finish()
    }
}

impl TryFrom<Vec<String>> for Roster {
    type Error = BallotError;
    fn try_from(names: Vec<String>) -> Result<Self, Self::Error> {
        Roster::new(names)
    }
}

impl From<Roster> for Vec<String> {
    fn from(r: Roster) -> Self {
        r.names
    }
}

/// An ordered, duplicate-free list of candidate preferences.
///
/// The derived ordering is lexicographic, so a partial ranking sorts
/// immediately before every ranking that extends it.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ranking(Vec<Candidate>);

impl Ranking {
    /// Validates `prefs` against a roster of `k` candidates. The result is not
    /// canonicalized.
    pub fn new(prefs: Vec<Candidate>, k: usize) -> Result<Self, BallotError> {
        if prefs.is_empty() {
            return Err(BallotError::InvalidRanking("empty ranking".into()));
        }
        if prefs.len() > k {
            return Err(BallotError::InvalidRanking(format!(
                "{} preferences for {k} candidates",
                prefs.len()
            )));
        }
        let mut seen = vec![false; k];
        for &c in &prefs {
            let slot = seen.get_mut(c as usize).ok_or_else(|| {
                BallotError::InvalidRanking(format!("candidate index {c} out of range"))
            })?;
            if *slot {
                return Err(BallotError::InvalidRanking(format!(
                    "candidate index {c} appears twice"
                )));
            }
            *slot = true;
        }
        Ok(Ranking(prefs))
    }

    /// Validates and canonicalizes in one step.
    pub fn canonical(prefs: Vec<Candidate>, k: usize) -> Result<Self, BallotError> {
        Ok(Self::new(prefs, k)?.canonicalize(k))
    }

    pub(crate) fn from_vec_unchecked(prefs: Vec<Candidate>) -> Self {
        Ranking(prefs)
    }

    /// Appends the forced last preference when exactly one candidate is
    /// unranked; otherwise returns the ranking unchanged.
    pub fn canonicalize(mut self, k: usize) -> Self {
        if k >= 2 && self.0.len() == k - 1 {
            let mut seen = vec![false; k];
            for &c in &self.0 {
                seen[c as usize] = true;
            }
            let last = seen.iter().position(|s| !s).expect("one candidate unranked");
            self.0.push(last as Candidate);
        }
        self
    }

    pub fn is_canonical(&self, k: usize) -> bool {
        let len = self.0.len();
        len >= 1 && len <= k && (k < 2 || len != k - 1)
    }

    pub fn is_complete(&self, k: usize) -> bool {
        self.0.len() == k
    }

    pub fn prefs(&self) -> &[Candidate] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Candidate {
        self.0[0]
    }
}

/// Free-function form of [`Ranking::canonicalize`].
pub fn canonicalize(ranking: Ranking, k: usize) -> Ranking {
    ranking.canonicalize(k)
}

/// A multiset of canonical rankings, kept sorted by ranking with no
/// zero-count entries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<(Ranking, u64)>", into = "Vec<(Ranking, u64)>")]
pub struct BallotMultiset {
    entries: Vec<(Ranking, u64)>,
    total: u64,
}

impl BallotMultiset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a multiset, merging repeated rankings and dropping zero counts.
    pub fn from_entries<I>(entries: I) -> Self
    where
        I: IntoIterator<Item = (Ranking, u64)>,
    {
        let mut map: BTreeMap<Ranking, u64> = BTreeMap::new();
        for (r, c) in entries {
            if c > 0 {
                *map.entry(r).or_insert(0) += c;
            }
        }
        let total = map.values().sum();
        BallotMultiset {
            entries: map.into_iter().collect(),
            total,
        }
    }

    /// Caller guarantees entries are strictly increasing with positive counts.
    pub(crate) fn from_sorted_unique(entries: Vec<(Ranking, u64)>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        debug_assert!(entries.iter().all(|e| e.1 > 0));
        let total = entries.iter().map(|e| e.1).sum();
        BallotMultiset { entries, total }
    }

    pub fn insert(&mut self, ranking: Ranking, count: u64) {
        if count == 0 {
            return;
        }
        match self.entries.binary_search_by(|e| e.0.cmp(&ranking)) {
            Ok(i) => self.entries[i].1 += count,
            Err(i) => self.entries.insert(i, (ranking, count)),
        }
        self.total += count;
    }

    /// Union of two multisets, as a linear merge.
    pub fn merged(&self, other: &BallotMultiset) -> BallotMultiset {
        let mut out = Vec::with_capacity(self.entries.len() + other.entries.len());
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        loop {
            match (a.peek(), b.peek()) {
                (Some(x), Some(y)) => match x.0.cmp(&y.0) {
                    std::cmp::Ordering::Less => out.push(a.next().unwrap().clone()),
                    std::cmp::Ordering::Greater => out.push(b.next().unwrap().clone()),
                    std::cmp::Ordering::Equal => {
                        let (r, c) = a.next().unwrap();
                        out.push((r.clone(), c + b.next().unwrap().1));
                    }
                },
                (Some(_), None) => out.push(a.next().unwrap().clone()),
                (None, Some(_)) => out.push(b.next().unwrap().clone()),
                (None, None) => break,
            }
        }
        BallotMultiset {
            entries: out,
            total: self.total + other.total,
        }
    }

    pub fn entries(&self) -> &[(Ranking, u64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ranking, u64)> + '_ {
        self.entries.iter().map(|(r, c)| (r, *c))
    }

    pub fn count_of(&self, ranking: &Ranking) -> u64 {
        self.entries
            .binary_search_by(|e| e.0.cmp(ranking))
            .map(|i| self.entries[i].1)
            .unwrap_or(0)
    }

    /// Total number of ballots.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Number of distinct rankings.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// One ranking per ballot, in multiset order.
    pub fn expand(&self) -> Vec<Ranking> {
        let mut out = Vec::with_capacity(self.total as usize);
        for (r, c) in &self.entries {
            out.extend(std::iter::repeat_n(r, *c as usize).cloned());
        }
        out
    }

    /// Serializes in the ballot file format.
    pub fn to_text(&self, roster: &Roster) -> String {
        let mut s = String::new();
        for (r, c) in &self.entries {
            s.push_str(&c.to_string());
            for &p in r.prefs() {
                s.push(',');
                s.push_str(roster.name(p));
            }
            s.push('\n');
        }
        s
    }
}

impl From<Vec<(Ranking, u64)>> for BallotMultiset {
    fn from(v: Vec<(Ranking, u64)>) -> Self {
        BallotMultiset::from_entries(v)
    }
}

impl From<BallotMultiset> for Vec<(Ranking, u64)> {
    fn from(m: BallotMultiset) -> Self {
        m.entries
    }
}

impl FromIterator<(Ranking, u64)> for BallotMultiset {
    fn from_iter<T: IntoIterator<Item = (Ranking, u64)>>(iter: T) -> Self {
        BallotMultiset::from_entries(iter)
    }
}

fn trim_ascii(s: &str) -> &str {
    s.trim_matches(|c: char| c.is_ascii_whitespace())
}

fn parse_count(field: &str, line: usize) -> Result<u64, BallotError> {
    let bad = || BallotError::InvalidCount {
        line,
        value: field.to_string(),
    };
    if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    match field.parse::<u64>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(bad()),
    }
}

/// Parses one ballot record. Returns `Ok(None)` for blank and comment lines.
///
/// With `count_optional`, a leading field that is not a roster name is read as
/// the count; otherwise the count defaults to 1. `line` is only used in error
/// messages.
pub fn parse_record(
    text: &str,
    roster: &Roster,
    line: usize,
    count_optional: bool,
) -> Result<Option<(Ranking, u64)>, BallotError> {
    let text = trim_ascii(text);
    if text.is_empty() || text.starts_with('#') {
        return Ok(None);
    }
    let mut fields: Vec<&str> = text.split(',').map(trim_ascii).collect();
    while fields.len() > 1 && fields.last() == Some(&"") {
        fields.pop();
    }
    let (count, names) = if count_optional && roster.lookup(fields[0]).is_some() {
        (1, &fields[..])
    } else {
        (parse_count(fields[0], line)?, &fields[1..])
    };
    if names.is_empty() {
        return Err(BallotError::EmptyRanking { line });
    }
    let k = roster.k();
    let mut seen = vec![false; k];
    let mut prefs = Vec::with_capacity(names.len());
    for &name in names {
        let c = roster.lookup(name).ok_or_else(|| BallotError::UnknownCandidate {
            line,
            name: name.to_string(),
        })?;
        if std::mem::replace(&mut seen[c as usize], true) {
            return Err(BallotError::DuplicateCandidate {
                line,
                name: name.to_string(),
            });
        }
        prefs.push(c);
    }
    Ok(Some((Ranking(prefs).canonicalize(k), count)))
}

/// Parses a ballot file into a canonical multiset.
pub fn parse_ballots(text: &str, roster: &Roster) -> Result<BallotMultiset, BallotError> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(rec) = parse_record(line, roster, i + 1, false)? {
            records.push(rec);
        }
    }
    Ok(BallotMultiset::from_entries(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> Roster {
        Roster::new(["A", "B", "C"]).unwrap()
    }

    fn r(v: &[Candidate]) -> Ranking {
        Ranking(v.to_vec())
    }

    #[test]
    fn parses_single_line() {
        let m = parse_ballots("1,A,B,C\n", &abc()).unwrap();
        assert_eq!(m.entries(), &[(r(&[0, 1, 2]), 1)]);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn merges_and_completes() {
        let ab = Roster::new(["A", "B"]).unwrap();
        let m = parse_ballots("2,A\n3,A\n", &ab).unwrap();
        assert_eq!(m.entries(), &[(r(&[0, 1]), 5)]);
    }

    #[test]
    fn rejects_duplicate_in_ranking() {
        let err = parse_ballots("1,A,A", &abc()).unwrap_err();
        assert!(matches!(err, BallotError::DuplicateCandidate { line: 1, .. }));
    }

    #[test]
    fn reports_line_numbers() {
        let text = "# header\n\n1,A\n2,B,D\n";
        assert_eq!(
            parse_ballots(text, &abc()).unwrap_err(),
            BallotError::UnknownCandidate {
                line: 4,
                name: "D".into()
            }
        );
    }

    #[test]
    fn rejects_bad_counts_and_empty_rankings() {
        for bad in ["0,A", "-1,A", "x,A", "1.5,A", ",A", "+3,A"] {
            assert!(
                matches!(
                    parse_ballots(bad, &abc()),
                    Err(BallotError::InvalidCount { .. })
                ),
                "{bad}"
            );
        }
        assert_eq!(
            parse_ballots("3", &abc()).unwrap_err(),
            BallotError::EmptyRanking { line: 1 }
        );
        assert_eq!(
            parse_ballots("3,,", &abc()).unwrap_err(),
            BallotError::EmptyRanking { line: 1 }
        );
    }

    #[test]
    fn trims_ascii_whitespace() {
        let m = parse_ballots("  4 , B ,C  \n", &abc()).unwrap();
        assert_eq!(m.entries(), &[(r(&[1, 2, 0]), 4)]);
    }

    #[test]
    fn count_optional_records() {
        let ros = abc();
        assert_eq!(
            parse_record("B,A", &ros, 1, true).unwrap(),
            Some((r(&[1, 0, 2]), 1))
        );
        assert_eq!(
            parse_record("3,C", &ros, 1, true).unwrap(),
            Some((r(&[2]), 3))
        );
    }

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize(r(&[0, 1]), 3), r(&[0, 1, 2]));
        assert_eq!(canonicalize(r(&[2]), 3), r(&[2]));
        assert_eq!(canonicalize(r(&[0, 1, 2]), 3), r(&[0, 1, 2]));
        assert_eq!(canonicalize(r(&[0]), 1), r(&[0]));
    }

    #[test]
    fn roster_validation() {
        assert_eq!(
            Roster::new(["A", " A "]).unwrap_err(),
            BallotError::DuplicateName("A".into())
        );
        assert!(matches!(
            Roster::new(["A", "  "]),
            Err(BallotError::EmptyName { line: 2 })
        ));
        assert_eq!(
            Roster::new(Vec::<String>::new()).unwrap_err(),
            BallotError::EmptyRoster
        );
        let ros = Roster::parse("A\n\nB\nC\n").unwrap();
        assert_eq!(ros.k(), 3);
        assert_eq!(Roster::parse(&ros.to_text()).unwrap(), ros);
    }

    #[test]
    fn ranking_validation() {
        assert!(Ranking::new(vec![], 3).is_err());
        assert!(Ranking::new(vec![3], 3).is_err());
        assert!(Ranking::new(vec![1, 1], 3).is_err());
        assert!(!r(&[0, 1]).is_canonical(3));
        assert!(r(&[0]).is_canonical(3));
        assert!(!r(&[0]).is_canonical(2));
    }

    #[test]
    fn merged_matches_from_entries() {
        let a = BallotMultiset::from_entries([(r(&[0]), 2), (r(&[1, 0, 2]), 1)]);
        let b = BallotMultiset::from_entries([(r(&[0]), 1), (r(&[0, 2, 1]), 4)]);
        let m = a.merged(&b);
        let expect = BallotMultiset::from_entries(
            a.entries().iter().chain(b.entries()).cloned(),
        );
        assert_eq!(m, expect);
        assert_eq!(m.total(), 8);
    }
}
