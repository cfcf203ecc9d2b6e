//! Blind side-by-side judging: building comparison items from two
//! responders, per-judge presentation order, and 3-of-4 vote aggregation.

use std::collections::{BTreeMap, HashSet};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::math::rng_from_seed;

use super::EvalError;

pub const JUDGES_PER_ITEM: usize = 4;
/// Votes one category needs before an item counts for it.
pub const AGREEMENT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgeVote {
    pub item_id: String,
    pub judge_id: String,
    pub choice: Choice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonItem {
    pub item_id: String,
    pub question: String,
    pub answer_a: String,
    pub answer_b: String,
    pub source_a: String,
    pub source_b: String,
}

/// What judges see: no responder labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportRecord {
    pub item_id: String,
    pub question: String,
    pub answer_a: String,
    pub answer_b: String,
}

impl From<&ComparisonItem> for ExportRecord {
    fn from(item: &ComparisonItem) -> Self {
        ExportRecord {
            item_id: item.item_id.clone(),
            question: item.question.clone(),
            answer_a: item.answer_a.clone(),
            answer_b: item.answer_b.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTally {
    pub preferred_a: usize,
    pub preferred_b: usize,
    pub ties: usize,
    pub disagreements: usize,
}

impl ComparisonTally {
    pub fn total(&self) -> usize {
        self.preferred_a + self.preferred_b + self.ties + self.disagreements
    }

    fn record(&mut self, outcome: Outcome) {
        match outcome {
            Outcome::Agreed(Choice::A) => self.preferred_a += 1,
            Outcome::Agreed(Choice::B) => self.preferred_b += 1,
            Outcome::Agreed(Choice::Tie) => self.ties += 1,
            Outcome::Disagreement => self.disagreements += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Agreed(Choice),
    Disagreement,
}

/// The category named by at least three of the votes, if any.
pub fn resolve_item(votes: &[Choice]) -> Outcome {
    for c in [Choice::A, Choice::B, Choice::Tie] {
        if votes.iter().filter(|&&v| v == c).count() >= AGREEMENT {
            return Outcome::Agreed(c);
        }
    }
    Outcome::Disagreement
}

fn group_votes(votes: &[JudgeVote]) -> Result<BTreeMap<&str, Vec<Choice>>, EvalError> {
    let mut seen = HashSet::new();
    let mut by_item: BTreeMap<&str, Vec<Choice>> = BTreeMap::new();
    for v in votes {
        if !seen.insert((v.item_id.as_str(), v.judge_id.as_str())) {
            return Err(EvalError::DuplicateVote {
                item_id: v.item_id.clone(),
                judge_id: v.judge_id.clone(),
            });
        }
        by_item.entry(&v.item_id).or_default().push(v.choice);
    }
    Ok(by_item)
}

/// Tally over `item_ids`; each item needs exactly four votes from distinct judges.
pub fn aggregate_judgments<S: AsRef<str>>(
    item_ids: &[S],
    votes: &[JudgeVote],
) -> Result<ComparisonTally, EvalError> {
    let by_item = group_votes(votes)?;
    let known: HashSet<&str> = item_ids.iter().map(AsRef::as_ref).collect();
    if let Some(stray) = by_item.keys().find(|k| !known.contains(*k)) {
        return Err(EvalError::UnknownItem(stray.to_string()));
    }
    let mut tally = ComparisonTally::default();
    for id in &known {
        let item_votes = by_item.get(id).map_or(&[][..], Vec::as_slice);
        if item_votes.len() != JUDGES_PER_ITEM {
            return Err(EvalError::VoteCount {
                item_id: id.to_string(),
                found: item_votes.len(),
            });
        }
        tally.record(resolve_item(item_votes));
    }
    Ok(tally)
}

/// Tally over every item that appears in `votes`.
pub fn aggregate_votes(votes: &[JudgeVote]) -> Result<ComparisonTally, EvalError> {
    let ids: Vec<String> = group_votes(votes)?.keys().map(|s| s.to_string()).collect();
    aggregate_judgments(&ids, votes)
}

/// Tally over items that already have all four votes; the rest are pending.
pub fn partial_tally(votes: &[JudgeVote]) -> Result<(ComparisonTally, usize), EvalError> {
    let by_item = group_votes(votes)?;
    let mut tally = ComparisonTally::default();
    let mut pending = 0;
    for (item_id, item_votes) in &by_item {
        match item_votes.len() {
            JUDGES_PER_ITEM => tally.record(resolve_item(item_votes)),
            n if n < JUDGES_PER_ITEM => pending += 1,
            n => {
                return Err(EvalError::VoteCount {
                    item_id: item_id.to_string(),
                    found: n,
                })
            }
        }
    }
    Ok((tally, pending))
}

/// Which answer a judge sees on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Tie,
}

/// Recorded presentation order of one item for one judge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Presentation {
    pub item_id: String,
    pub judge_id: String,
    /// `true` when answer B is shown on the left.
    pub swapped: bool,
}

impl Presentation {
    /// Deterministic coin flip keyed by `(seed, item, judge)`.
    pub fn for_judge(item_id: &str, judge_id: &str, seed: u64) -> Self {
        let key = fnv1a(item_id.as_bytes(), fnv1a(judge_id.as_bytes(), seed));
        let swapped = rng_from_seed(key).next_u32() & 1 == 1;
        Presentation {
            item_id: item_id.to_string(),
            judge_id: judge_id.to_string(),
            swapped,
        }
    }

    pub fn resolve(&self, side: Side) -> Choice {
        match (side, self.swapped) {
            (Side::Tie, _) => Choice::Tie,
            (Side::Left, false) | (Side::Right, true) => Choice::A,
            (Side::Left, true) | (Side::Right, false) => Choice::B,
        }
    }

    pub fn present(&self, choice: Choice) -> Side {
        match (choice, self.swapped) {
            (Choice::Tie, _) => Side::Tie,
            (Choice::A, false) | (Choice::B, true) => Side::Left,
            (Choice::A, true) | (Choice::B, false) => Side::Right,
        }
    }

    /// `(left, right)` answers of `item` as this judge sees them.
    pub fn arrange<'a>(&self, item: &'a ComparisonItem) -> (&'a str, &'a str) {
        if self.swapped {
            (&item.answer_b, &item.answer_a)
        } else {
            (&item.answer_a, &item.answer_b)
        }
    }
}

fn fnv1a(bytes: &[u8], seed: u64) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Anything that answers a question: the local model, a remote bot, a fixture.
pub trait Responder {
    fn label(&self) -> &str;
    fn respond(&self, question: &str) -> Result<String, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unavailable {
    pub question_index: usize,
    pub question: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonSet {
    pub items: Vec<ComparisonItem>,
    pub unavailable: Vec<Unavailable>,
}

/// Asks both responders once per question and freezes the answers.
///
/// A question where either responder fails, or returns an empty answer, is
/// reported as unavailable instead of producing an item.
pub fn build_comparison<S: AsRef<str>>(
    questions: &[S],
    responder_a: &dyn Responder,
    responder_b: &dyn Responder,
) -> ComparisonSet {
    let mut set = ComparisonSet::default();
    for (index, q) in questions.iter().enumerate() {
        let q = q.as_ref();
        let answer = |r: &dyn Responder| -> Result<String, String> {
            let a = r.respond(q).map_err(|e| format!("{}: {e}", r.label()))?;
            if a.trim().is_empty() {
                return Err(format!("{}: empty answer", r.label()));
            }
            Ok(a)
        };
        match answer(responder_a).and_then(|a| Ok((a, answer(responder_b)?))) {
            Ok((answer_a, answer_b)) => set.items.push(ComparisonItem {
                item_id: format!("q{index:04}"),
                question: q.to_string(),
                answer_a,
                answer_b,
                source_a: responder_a.label().to_string(),
                source_b: responder_b.label().to_string(),
            }),
            Err(reason) => set.unavailable.push(Unavailable {
                question_index: index,
                question: q.to_string(),
                reason,
            }),
        }
    }
    set
}

/// Serializes records as one JSON object per line.
pub fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("plain records serialize"));
        s.push('\n');
    }
    s
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Record {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}
