//! Annotated sentence/entity examples, CSV ingest, vocabulary, class
//! weights and a synthetic corpus generator.

mod csv_io;
mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use csv_io::{load_csv, parse_csv, save_csv, write_csv, LoadedCorpus, SkippedRow, CSV_COLUMNS};
pub use synth::{lexicon_majority_label, synth_corpus, synth_corpus_with_tally, ENTITY_POOL};
pub use vocab::{Vocabulary, CLS_ID, PAD_ID, SEP_ID, SPECIALS, UNK_ID};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;

/// Sentiment class. Integer ids are fixed: negative 0, neutral 1, positive 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sentiment {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Sentiment::Negative => "negative",
            Sentiment::Neutral => "neutral",
            Sentiment::Positive => "positive",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Sentiment::Negative => "Negative",
            Sentiment::Neutral => "Neutral",
            Sentiment::Positive => "Positive",
        }
    }
}

impl FromStr for Sentiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" | "neg" | "0" => Ok(Sentiment::Negative),
            "neutral" | "neu" | "1" => Ok(Sentiment::Neutral),
            "positive" | "pos" | "2" => Ok(Sentiment::Positive),
            other => Err(Error::format(format!("unmappable label `{other}`"))),
        }
    }
}

impl fmt::Display for Sentiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedExample {
    pub tokens: Vec<String>,
    pub entity_surface: String,
    pub entity_type: String,
    pub coref_id: u64,
    pub label: Sentiment,
}

/// Ticker-like tokens (2 to 5 ASCII uppercase letters) are kept verbatim;
/// everything else is lowercased. Edge punctuation is stripped.
pub fn normalize_token(raw: &str) -> String {
    let t = raw.trim_matches(|c: char| c.is_ascii_punctuation() && c != '$');
    let is_ticker = (2..=5).contains(&t.len()) && t.bytes().all(|b| b.is_ascii_uppercase());
    if is_ticker {
        t.to_string()
    } else {
        t.to_lowercase()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(normalize_token).filter(|t| !t.is_empty()).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights(pub [f64; NUM_CLASSES]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; NUM_CLASSES])
    }

    pub fn get(&self, label: Sentiment) -> f64 {
        self.0[label.id()]
    }

    /// `w_c = N / (C * n_c)`.
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> Result<Self> {
        if let Some(c) = counts.iter().position(|&n| n == 0) {
            return Err(Error::contract(format!(
                "class {} has no examples; inverse-frequency weight undefined",
                Sentiment::ALL[c]
            )));
        }
        let total: usize = counts.iter().sum();
        let mut w = [0.0; NUM_CLASSES];
        for (wi, &n) in w.iter_mut().zip(&counts) {
            *wi = total as f64 / (NUM_CLASSES as f64 * n as f64);
        }
        Ok(ClassWeights(w))
    }
}

pub fn class_counts(examples: &[AnnotatedExample]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for ex in examples {
        counts[ex.label.id()] += 1;
    }
    counts
}

pub fn class_weights(examples: &[AnnotatedExample]) -> Result<ClassWeights> {
    ClassWeights::from_counts(class_counts(examples))
}

/// Per-class and per-entity-type counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StatsReport {
    pub class_counts: [usize; NUM_CLASSES],
    pub type_counts: BTreeMap<String, usize>,
}

pub fn stats(examples: &[AnnotatedExample]) -> StatsReport {
    let mut type_counts = BTreeMap::new();
    for ex in examples {
        *type_counts.entry(ex.entity_type.clone()).or_insert(0) += 1;
    }
    StatsReport { class_counts: class_counts(examples), type_counts }
}

impl StatsReport {
    pub fn count(&self, label: Sentiment) -> usize {
        self.class_counts[label.id()]
    }
}

impl fmt::Display for StatsReport {
    /// One `name<TAB>count` line per class and per entity type
    /// (`type:<TAG>`), sorted by name.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut lines: Vec<(String, usize)> =
            Sentiment::ALL.iter().map(|s| (s.display_name().to_string(), self.class_counts[s.id()])).collect();
        lines.extend(self.type_counts.iter().map(|(t, &c)| (format!("type:{t}"), c)));
        lines.sort();
        for (name, count) in lines {
            writeln!(f, "{name}\t{count}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(label: Sentiment) -> AnnotatedExample {
        AnnotatedExample {
            tokens: vec!["a".into()],
            entity_surface: "a".into(),
            entity_type: "ORG".into(),
            coref_id: 0,
            label,
        }
    }

    #[test]
    fn baru_class_weights() {
        // airline-review class counts: negative 3345, positive 11652, neutral 1857; N = 16854
        let w = ClassWeights::from_counts([3345, 1857, 11652]).unwrap();
        let oracle = |n: f64| 16854.0 / (3.0 * n);
        assert!((w.0[0] - oracle(3345.0)).abs() < 1e-12);
        assert!((w.0[1] - oracle(1857.0)).abs() < 1e-12);
        assert!((w.0[2] - oracle(11652.0)).abs() < 1e-12);
        assert!((w.0[0] - 1.6796).abs() < 1e-3);
        assert!((w.0[1] - 3.0253).abs() < 1e-3);
        assert!((w.0[2] - 0.4822).abs() < 1e-3);
    }

    #[test]
    fn balanced_and_skewed_weights() {
        assert_eq!(ClassWeights::from_counts([10, 10, 10]).unwrap().0, [1.0, 1.0, 1.0]);
        // hand computation: N = 1000, 1000 / 3 = 333.333...
        let w = ClassWeights::from_counts([1, 1, 998]).unwrap();
        assert!((w.0[0] - 333.333_333_333_333_3).abs() < 1e-9);
        assert!((w.0[2] - 1000.0 / 2994.0).abs() < 1e-15);
    }

    #[test]
    fn empty_class_is_a_contract_error() {
        let examples = vec![ex(Sentiment::Negative), ex(Sentiment::Positive)];
        assert!(matches!(class_weights(&examples), Err(Error::Contract(_))));
    }

    #[test]
    fn weights_are_scale_invariant() {
        let examples: Vec<_> = [0, 0, 1, 2, 2, 2, 1].iter().map(|&i| ex(Sentiment::ALL[i])).collect();
        let doubled: Vec<_> = examples.iter().chain(&examples).cloned().collect();
        let (a, b) = (class_weights(&examples).unwrap(), class_weights(&doubled).unwrap());
        for k in 0..3 {
            assert!((a.0[k] - b.0[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_stats_are_zero() {
        let s = stats(&[]);
        assert_eq!(s.class_counts, [0, 0, 0]);
        assert_eq!(s.to_string(), "Negative\t0\nNeutral\t0\nPositive\t0\n");
    }

    #[test]
    fn stats_render_is_sorted() {
        let mut e = vec![ex(Sentiment::Positive), ex(Sentiment::Negative)];
        e[1].entity_type = "GPE".into();
        assert_eq!(stats(&e).to_string(), "Negative\t1\nNeutral\t0\nPositive\t1\ntype:GPE\t1\ntype:ORG\t1\n");
    }

    #[test]
    fn label_mapping() {
        assert_eq!("positive".parse::<Sentiment>().unwrap().id(), 2);
        assert_eq!("Neutral".parse::<Sentiment>().unwrap().id(), 1);
        assert_eq!("0".parse::<Sentiment>().unwrap(), Sentiment::Negative);
        assert!("meh".parse::<Sentiment>().is_err());
    }

    #[test]
    fn tickers_survive_normalization() {
        assert_eq!(tokenize("AAPL Stock surges."), vec!["AAPL", "stock", "surges"]);
        assert_eq!(tokenize("I  A ABCDEF"), vec!["i", "a", "abcdef"]);
    }
}
