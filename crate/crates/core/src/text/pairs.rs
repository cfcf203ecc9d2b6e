//! Training-pair construction and document-level train/validation split.

use rand::seq::SliceRandom;

use super::corpus::{Actor, Conversation};
use super::tokenize::Tokenizer;
use super::vocab::{TokenId, Vocabulary, ACTOR_A, ACTOR_B, PAD, SPECIALS, TURN};
use super::TextError;
use crate::math::rng_from_seed;

/// Default left-truncation cap for helpdesk contexts, in tokens.
pub const DEFAULT_CONTEXT_CAP: usize = 256;

/// A context/reply pair at token level, before vocabulary encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPair {
    pub source_doc: String,
    pub context: Vec<String>,
    pub reply: Vec<String>,
}

impl TextPair {
    pub fn encode(&self, vocab: &Vocabulary) -> Result<TrainingPair, TextError> {
        TrainingPair::new(
            vocab.encode(&self.context),
            vocab.encode(&self.reply),
            self.source_doc.clone(),
        )
    }

    /// `doc \t context \t reply`, tokens space-separated.
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}",
            self.source_doc,
            self.context.join(" "),
            self.reply.join(" ")
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, TextError> {
        let mut fields = line.split('\t');
        let (Some(doc), Some(ctx), Some(reply), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(TextError::PairLine(line.to_string()));
        };
        let context: Vec<String> = ctx.split_whitespace().map(str::to_string).collect();
        let reply: Vec<String> = reply.split_whitespace().map(str::to_string).collect();
        if context.is_empty() || reply.is_empty() {
            return Err(TextError::PairLine(line.to_string()));
        }
        Ok(TextPair {
            source_doc: doc.to_string(),
            context,
            reply,
        })
    }
}

pub fn parse_pairs_file(text: &str) -> Result<Vec<TextPair>, TextError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(TextPair::parse_line)
        .collect()
}

pub fn pairs_to_file_string(pairs: &[TextPair]) -> String {
    let mut s = String::new();
    for p in pairs {
        s.push_str(&p.to_line());
        s.push('\n');
    }
    s
}

/// The unit of supervision: context ids and reply ids.
///
/// The reply's terminating eos is added by the model, not stored here.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrainingPair {
    pub context: Vec<TokenId>,
    pub reply: Vec<TokenId>,
    pub source_doc: String,
}

impl TrainingPair {
    pub fn new(
        context: Vec<TokenId>,
        reply: Vec<TokenId>,
        source_doc: impl Into<String>,
    ) -> Result<Self, TextError> {
        if context.is_empty() || reply.is_empty() {
            return Err(TextError::EmptySequence);
        }
        if context.contains(&PAD) || reply.contains(&PAD) {
            return Err(TextError::PadInPair);
        }
        Ok(TrainingPair {
            context,
            reply,
            source_doc: source_doc.into(),
        })
    }
}

/// Sentence `i` → sentence `i + 1` for every consecutive pair.
pub fn pair_consecutive(conversation: &Conversation, tokenizer: &Tokenizer) -> Vec<TextPair> {
    let sentences: Vec<Vec<String>> = conversation
        .utterances
        .iter()
        .map(|u| tokenizer.tokenize(&u.text))
        .collect();
    sentences
        .windows(2)
        .filter(|w| !w[0].is_empty() && !w[1].is_empty())
        .map(|w| TextPair {
            source_doc: conversation.id.clone(),
            context: w[0].clone(),
            reply: w[1].clone(),
        })
        .collect()
}

fn actor_marker(actor: Actor) -> Option<&'static str> {
    match actor {
        Actor::Client => Some(SPECIALS[ACTOR_A as usize]),
        Actor::Agent => Some(SPECIALS[ACTOR_B as usize]),
        Actor::Unknown => None,
    }
}

/// Appends one turn as `[actor] tokens <turn>`.
pub fn push_turn(stream: &mut Vec<String>, actor: Actor, tokens: &[String]) {
    if let Some(m) = actor_marker(actor) {
        stream.push(m.to_string());
    }
    stream.extend(tokens.iter().cloned());
    stream.push(SPECIALS[TURN as usize].to_string());
}

/// One pair per agent turn; context is every earlier turn with actor and
/// turn markers, keeping only the newest `context_cap` tokens.
pub fn build_helpdesk_pairs(
    conversation: &Conversation,
    tokenizer: &Tokenizer,
    context_cap: usize,
) -> Vec<TextPair> {
    let mut pairs = Vec::new();
    let mut stream: Vec<String> = Vec::new();
    for utt in &conversation.utterances {
        let tokens = tokenizer.tokenize(&utt.text);
        if tokens.is_empty() {
            continue;
        }
        if utt.actor == Actor::Agent && !stream.is_empty() && context_cap > 0 {
            let start = stream.len().saturating_sub(context_cap);
            pairs.push(TextPair {
                source_doc: conversation.id.clone(),
                context: stream[start..].to_vec(),
                reply: tokens.clone(),
            });
        }
        push_turn(&mut stream, utt.actor, &tokens);
    }
    pairs
}

/// Pairs of one document, the unit that [`split_documents`] assigns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentPairs<P> {
    pub doc_id: String,
    pub pairs: Vec<P>,
}

/// Seeded shuffle of whole documents into (train, valid).
///
/// The validation side receives `round(n · fraction)` documents, clamped so
/// both sides are non-empty.
pub fn split_documents<T>(
    mut docs: Vec<T>,
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>), TextError> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(TextError::SplitFraction(valid_fraction));
    }
    if docs.len() < 2 {
        return Err(TextError::TooFewDocuments(docs.len()));
    }
    let n = docs.len();
    let n_valid = ((n as f64 * valid_fraction).round() as usize).clamp(1, n - 1);
    docs.shuffle(&mut rng_from_seed(seed));
    let train = docs.split_off(n_valid);
    Ok((train, docs))
}

/// Document-granular split of pairs; no document contributes to both sides.
pub fn split_pairs<P>(
    docs: Vec<DocumentPairs<P>>,
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<P>, Vec<P>), TextError> {
    let (train, valid) = split_documents(docs, valid_fraction, seed)?;
    let flatten = |side: Vec<DocumentPairs<P>>| side.into_iter().flat_map(|d| d.pairs).collect();
    Ok((flatten(train), flatten(valid)))
}
