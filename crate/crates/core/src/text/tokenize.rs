//! Transcript-style tokenizer.
//!
//! Rules, applied per whitespace-delimited chunk of the lowercased input:
//!
//! 1. A chunk of the form `<word>` (ASCII letters, digits, `_`) is a special
//!    marker and stays whole: `<name>`, `<url>`, `<eos>`.
//! 2. Runs of alphanumeric characters form word tokens.
//! 3. An apostrophe between two alphanumerics starts a clitic token that
//!    carries the apostrophe: `i'm` → `i` `'m`, `don't` → `don` `'t`.
//! 4. A chunk-initial apostrophe followed by a known clitic (`'s 'm 't 're
//!    've 'll 'd`) stays attached, so already-tokenized text round-trips.
//! 5. Every other character is a standalone punctuation token.
//!
//! With `split_digits` enabled, each digit is its own token (`15` → `1` `5`).

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer {
    pub split_digits: bool,
}

const CLITICS: &[&str] = &["s", "m", "t", "re", "ve", "ll", "d"];

impl Tokenizer {
    pub fn new(split_digits: bool) -> Self {
        Tokenizer { split_digits }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let lower = text.to_lowercase();
        let mut out = Vec::new();
        for chunk in lower.split_whitespace() {
            if is_marker(chunk) {
                out.push(chunk.to_string());
            } else {
                self.split_chunk(chunk, &mut out);
            }
        }
        out
    }

    fn split_chunk(&self, chunk: &str, out: &mut Vec<String>) {
        let chars: Vec<char> = chunk.chars().collect();
        let mut word = String::new();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if c.is_alphanumeric() {
                if self.split_digits && c.is_numeric() {
                    flush(&mut word, out);
                    out.push(c.to_string());
                } else {
                    word.push(c);
                }
                i += 1;
                continue;
            }
            if c == '\'' {
                let run_end = (i + 1..chars.len())
                    .find(|&j| !chars[j].is_alphanumeric())
                    .unwrap_or(chars.len());
                let follows_word = i > 0 && chars[i - 1].is_alphanumeric();
                let has_tail = run_end > i + 1;
                let tail: String = chars[i + 1..run_end].iter().collect();
                let clitic =
                    has_tail && (follows_word || (i == 0 && CLITICS.contains(&tail.as_str())));
                if clitic {
                    flush(&mut word, out);
                    word.push('\'');
                    // the clitic body goes through the normal word path so
                    // digit splitting still applies
                    i += 1;
                    continue;
                }
            }
            flush(&mut word, out);
            out.push(c.to_string());
            i += 1;
        }
        flush(&mut word, out);
    }
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if !word.is_empty() {
        out.push(std::mem::take(word));
    }
}

/// `<word>` markers produced by anonymization and used for special tokens.
pub fn is_marker(chunk: &str) -> bool {
    chunk.len() > 2
        && chunk.starts_with('<')
        && chunk.ends_with('>')
        && chunk[1..chunk.len() - 1]
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

/// Tokens joined by single spaces, the rendering used in printed transcripts.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}
