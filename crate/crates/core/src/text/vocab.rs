use std::collections::HashMap;
use std::fmt::Write as _;

use super::TextError;

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const EOS: TokenId = 2;
pub const TURN: TokenId = 3;
pub const ACTOR_A: TokenId = 4;
pub const ACTOR_B: TokenId = 5;

/// Surface forms of the reserved ids, in id order.
pub const SPECIALS: [&str; 6] = [
    "<pad>",
    "<unk>",
    "<eos>",
    "<turn>",
    "<actor_a>",
    "<actor_b>",
];
pub const NUM_SPECIALS: usize = SPECIALS.len();

/// Bidirectional token ↔ id map with the six reserved ids first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_word: Vec<String>,
    word_to_id: HashMap<String, TokenId>,
}

impl Vocabulary {
    pub fn specials_only() -> Self {
        Self::from_words(std::iter::empty::<String>()).expect("specials are valid")
    }

    /// Builds a vocabulary from the non-special words, in id order after the specials.
    pub fn from_words<I, S>(words: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut id_to_word: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_word.extend(words.into_iter().map(Into::into));
        let mut word_to_id = HashMap::with_capacity(id_to_word.len());
        for (id, w) in id_to_word.iter().enumerate() {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(TextError::InvalidToken(w.clone()));
            }
            if word_to_id.insert(w.clone(), id as TokenId).is_some() {
                return Err(TextError::DuplicateToken(w.clone()));
            }
        }
        Ok(Vocabulary {
            id_to_word,
            word_to_id,
        })
    }

    /// Keeps the `cap − 6` most frequent tokens; ties go to the
    /// lexicographically smaller token.
    pub fn build<I, S>(tokens: I, cap: usize) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if cap <= NUM_SPECIALS {
            return Err(TextError::VocabCap(cap));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for t in tokens {
            let t = t.as_ref();
            if SPECIALS.contains(&t) {
                continue;
            }
            *counts.entry(t.to_string()).or_insert(0) += 1;
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cap - NUM_SPECIALS);
        Self::from_words(ranked.into_iter().map(|(w, _)| w))
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.word_to_id.get(token).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.id_to_word.get(id as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.id_to_word
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Result<Vec<String>, TextError> {
        ids.iter()
            .map(|&id| {
                self.word(id)
                    .map(str::to_string)
                    .ok_or(TextError::IdOutOfRange {
                        id,
                        size: self.len(),
                    })
            })
            .collect()
    }

    /// One token per line; line number − 1 is the id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.id_to_word {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, TextError> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < NUM_SPECIALS {
            return Err(TextError::VocabFile(format!(
                "expected at least {NUM_SPECIALS} lines, found {}",
                lines.len()
            )));
        }
        for (i, (&found, expected)) in lines.iter().zip(SPECIALS).enumerate() {
            if found != expected {
                return Err(TextError::VocabFile(format!(
                    "line {} must be {expected}, found {found:?}",
                    i + 1
                )));
            }
        }
        Self::from_words(lines[NUM_SPECIALS..].iter().copied())
    }
}
