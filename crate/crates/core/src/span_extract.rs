//! Entity and sentiment span extraction from whitespace tokens.
//!
//! Sentiment spans are lexicon-driven windows rather than parser output:
//! every token found in the polarity lexicon contributes the window of
//! `window` tokens centred on it, clipped to the sentence.

use std::collections::BTreeSet;
use std::fmt;

use crate::corpus::tokenize;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 3;
pub const DEFAULT_MAX_SPANS: usize = 5;

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SpanKind {
    Entity,
    Sentiment,
}

/// Half-open token range `start..end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: SpanKind,
}

impl Span {
    pub fn new(start: usize, end: usize, kind: SpanKind, sentence_len: usize) -> Result<Self> {
        if start >= end || end > sentence_len {
            return Err(Error::contract(format!("span {start}..{end} invalid for sentence of length {sentence_len}")));
        }
        Ok(Self { start, end, kind })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, i: usize) -> bool {
        (self.start..self.end).contains(&i)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.start, self.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Polarity {
    Negative,
    Neutral,
    Positive,
}

impl Polarity {
    fn tag(self) -> &'static str {
        match self {
            Polarity::Positive => "pos",
            Polarity::Negative => "neg",
            Polarity::Neutral => "neu",
        }
    }
}

/// Three pairwise-disjoint word sets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PolarityLexicon {
    positive: BTreeSet<String>,
    negative: BTreeSet<String>,
    neutral: BTreeSet<String>,
}

impl PolarityLexicon {
    /// The lexicon shipped with the crate (60 positive, 60 negative,
    /// 20 neutral-cue words).
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("builtin lexicon is well formed")
    }

    /// Parse `<word>\t<pos|neg|neu>` lines. Blank lines and lines starting
    /// with `#` are skipped. Words are lowercased.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line
                .split_once('\t')
                .ok_or_else(|| Error::format(format!("lexicon line {}: expected `word<TAB>tag`", i + 1)))?;
            let word = word.trim().to_lowercase();
            if word.is_empty() || word.contains(char::is_whitespace) {
                return Err(Error::format(format!("lexicon line {}: bad word `{word}`", i + 1)));
            }
            let polarity = match tag.trim() {
                "pos" => Polarity::Positive,
                "neg" => Polarity::Negative,
                "neu" => Polarity::Neutral,
                other => return Err(Error::format(format!("lexicon line {}: unknown tag `{other}`", i + 1))),
            };
            if let Some(prev) = lex.polarity(&word) {
                if prev != polarity {
                    return Err(Error::format(format!(
                        "lexicon line {}: `{word}` listed as both {} and {}",
                        i + 1,
                        prev.tag(),
                        polarity.tag()
                    )));
                }
            }
            lex.set_mut(polarity).insert(word);
        }
        Ok(lex)
    }

    fn set_mut(&mut self, p: Polarity) -> &mut BTreeSet<String> {
        match p {
            Polarity::Positive => &mut self.positive,
            Polarity::Negative => &mut self.negative,
            Polarity::Neutral => &mut self.neutral,
        }
    }

    pub fn words(&self, p: Polarity) -> &BTreeSet<String> {
        match p {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
            Polarity::Neutral => &self.neutral,
        }
    }

    pub fn polarity(&self, word: &str) -> Option<Polarity> {
        if self.positive.contains(word) {
            Some(Polarity::Positive)
        } else if self.negative.contains(word) {
            Some(Polarity::Negative)
        } else if self.neutral.contains(word) {
            Some(Polarity::Neutral)
        } else {
            None
        }
    }

    pub fn contains(&self, word: &str) -> bool {
        self.polarity(word).is_some()
    }

    /// Render in the on-disk format, sorted within each tag.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in [Polarity::Positive, Polarity::Negative, Polarity::Neutral] {
            for w in self.words(p) {
                out.push_str(&format!("{w}\t{}\n", p.tag()));
            }
        }
        out
    }
}

/// Entity span located in a sentence. `placeholder` is set when the surface
/// form was not found and token 0 stands in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AlignedEntity {
    pub span: Span,
    pub placeholder: bool,
}

/// First left-to-right whole-token match of `surface` (tokenized like the
/// sentence text) in `tokens`.
pub fn align_entity(tokens: &[String], surface: &str) -> Result<AlignedEntity> {
    if tokens.is_empty() {
        return Err(Error::contract("align_entity on an empty token list"));
    }
    let needle = tokenize(surface);
    if !needle.is_empty() && needle.len() <= tokens.len() {
        for start in 0..=tokens.len() - needle.len() {
            if tokens[start..start + needle.len()] == needle[..] {
                return Ok(AlignedEntity {
                    span: Span { start, end: start + needle.len(), kind: SpanKind::Entity },
                    placeholder: false,
                });
            }
        }
    }
    Ok(AlignedEntity { span: Span { start: 0, end: 1, kind: SpanKind::Entity }, placeholder: true })
}

/// Windows of `window` tokens centred on lexicon hits, deduplicated, first
/// `max_spans` kept. Never empty: with no hits, one span over the first
/// `min(window, len)` tokens is returned.
pub fn sentiment_spans(
    tokens: &[String],
    lexicon: &PolarityLexicon,
    window: usize,
    max_spans: usize,
) -> Result<Vec<Span>> {
    if tokens.is_empty() {
        return Err(Error::contract("sentiment_spans on an empty token list"));
    }
    if window == 0 || window % 2 == 0 {
        return Err(Error::contract(format!("window must be odd and >= 1, got {window}")));
    }
    if max_spans == 0 {
        return Err(Error::contract("max_spans must be >= 1"));
    }
    let half = window / 2;
    let mut spans: Vec<Span> = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if !lexicon.contains(tok) {
            continue;
        }
        let span =
            Span { start: i.saturating_sub(half), end: (i + half + 1).min(tokens.len()), kind: SpanKind::Sentiment };
        if spans.last() != Some(&span) {
            spans.push(span);
        }
        if spans.len() == max_spans {
            break;
        }
    }
    if spans.is_empty() {
        spans.push(fallback_span(tokens.len(), window));
    }
    Ok(spans)
}

/// The single span used when no sentiment word is present (or spans are
/// ablated).
pub fn fallback_span(len: usize, window: usize) -> Span {
    Span { start: 0, end: window.min(len).max(1), kind: SpanKind::Sentiment }
}

/// Per-token 0/1 membership in any of `spans`.
pub fn span_membership(len: usize, spans: &[Span]) -> Vec<f64> {
    (0..len).map(|i| if spans.iter().any(|s| s.contains(i)) { 1.0 } else { 0.0 }).collect()
}
