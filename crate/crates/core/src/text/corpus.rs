//! Corpus ingestion: the dialogue file format, subtitle markup stripping,
//! and helpdesk-style anonymization.

use std::collections::HashSet;

use super::tokenize::{is_marker, Tokenizer};
use super::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Actor {
    Client,
    Agent,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub actor: Actor,
    pub text: String,
}

impl Utterance {
    pub fn new(actor: Actor, text: impl Into<String>) -> Self {
        Utterance {
            actor,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

/// Parses the dialogue corpus format: conversations separated by blank
/// lines, one utterance per line, optional `A:` (client) / `B:` (agent)
/// prefix, `#` lines are comments. Ids are `{source}:{index}`.
pub fn parse_dialogue_corpus(source: &str, text: &str) -> Result<Vec<Conversation>, TextError> {
    let mut conversations = Vec::new();
    let mut current: Vec<Utterance> = Vec::new();
    let flush = |current: &mut Vec<Utterance>, out: &mut Vec<Conversation>| {
        if !current.is_empty() {
            out.push(Conversation {
                id: format!("{source}:{}", out.len()),
                utterances: std::mem::take(current),
            });
        }
    };
    for line in text.lines() {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        if line.is_empty() {
            flush(&mut current, &mut conversations);
            continue;
        }
        let (actor, body) = if let Some(rest) = line.strip_prefix("A:") {
            (Actor::Client, rest.trim())
        } else if let Some(rest) = line.strip_prefix("B:") {
            (Actor::Agent, rest.trim())
        } else {
            (Actor::Unknown, line)
        };
        if !body.is_empty() {
            current.push(Utterance::new(actor, body));
        }
    }
    flush(&mut current, &mut conversations);
    Ok(conversations)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarkupStats {
    pub malformed_tags: usize,
    pub url_lines_dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StrippedDocument {
    pub sentences: Vec<String>,
    pub stats: MarkupStats,
}

/// Removes `<...>` tags, drops lines containing a `scheme://` URL, and
/// returns one sentence per non-empty line.
///
/// An unclosed `<` drops the rest of its line and is counted in the stats.
pub fn strip_markup(raw: &str) -> StrippedDocument {
    let mut doc = StrippedDocument::default();
    for line in raw.lines() {
        let mut visible = String::with_capacity(line.len());
        let mut rest = line;
        while let Some(open) = rest.find('<') {
            visible.push_str(&rest[..open]);
            match rest[open..].find('>') {
                Some(close) => {
                    // tags separate words, as line breaks would
                    visible.push(' ');
                    rest = &rest[open + close + 1..];
                }
                None => {
                    doc.stats.malformed_tags += 1;
                    rest = "";
                }
            }
        }
        visible.push_str(rest);
        if contains_url(&visible) {
            doc.stats.url_lines_dropped += 1;
            continue;
        }
        let sentence = visible.split_whitespace().collect::<Vec<_>>().join(" ");
        if !sentence.is_empty() {
            doc.sentences.push(sentence);
        }
    }
    doc
}

/// Subtitle file → single conversation of its sentences.
pub fn subtitle_conversation(id: impl Into<String>, raw: &str) -> (Conversation, MarkupStats) {
    let doc = strip_markup(raw);
    let utterances = doc
        .sentences
        .into_iter()
        .map(|s| Utterance::new(Actor::Unknown, s))
        .collect();
    (
        Conversation {
            id: id.into(),
            utterances,
        },
        doc.stats,
    )
}

/// `scheme://` with an ASCII-alphabetic scheme, or a `www.` prefix.
pub fn is_url(chunk: &str) -> bool {
    let lower = chunk.to_ascii_lowercase();
    if lower.starts_with("www.") && lower.len() > 4 {
        return true;
    }
    match lower.find("://") {
        Some(pos) if pos > 0 => {
            let scheme = &lower[..pos];
            let scheme = scheme.trim_start_matches(|c: char| !c.is_ascii_alphabetic());
            !scheme.is_empty()
                && scheme
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-'))
        }
        _ => false,
    }
}

fn contains_url(text: &str) -> bool {
    text.split_whitespace().any(is_url)
}

pub const NAME_MARKER: &str = "<name>";
pub const NUMBER_MARKER: &str = "<number>";
pub const URL_MARKER: &str = "<url>";

/// Word set of names to replace, matched case-insensitively.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NameLexicon {
    names: HashSet<String>,
}

impl NameLexicon {
    pub fn new<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        NameLexicon {
            names: names
                .into_iter()
                .map(|s| s.as_ref().trim().to_lowercase())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// One name per line; blank lines and `#` comments ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(text.lines().filter(|l| !l.trim_start().starts_with('#')))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.names.contains(token)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Replaces names, standalone digit runs and URLs with markers.
///
/// Works chunk by chunk: URL chunks become `<url>`; other chunks are
/// tokenized and, only if some token matches, re-emitted as tokens with the
/// replacements applied. Chunks without matches are kept verbatim.
pub fn anonymize(text: &str, names: &NameLexicon, tokenizer: &Tokenizer) -> String {
    let mut out: Vec<String> = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(URL_MARKER.to_string());
            continue;
        }
        if is_marker(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let tokens = tokenizer.tokenize(chunk);
        let mut changed = false;
        let replaced: Vec<String> = tokens
            .into_iter()
            .map(|t| {
                if names.contains(&t) {
                    changed = true;
                    NAME_MARKER.to_string()
                } else if t.chars().all(|c| c.is_ascii_digit()) {
                    changed = true;
                    NUMBER_MARKER.to_string()
                } else {
                    t
                }
            })
            .collect();
        if changed {
            out.extend(replaced);
        } else {
            out.push(chunk.to_string());
        }
    }
    out.join(" ")
}
