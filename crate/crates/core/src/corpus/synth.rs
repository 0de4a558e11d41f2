//! Templated synthetic corpus whose labels follow the polarity lexicon.
//!
//! Sentences look like `<entity> <verb> <sentiment phrase> [<connector>
//! <sentiment phrase>] [<filler>]`. The label is the majority polarity of
//! the positive/negative lexicon words present (ties and neutral-cue-only
//! sentences are neutral). Classes are stratified: label `i % 3` for the
//! i-th example before a seeded shuffle.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{tokenize, AnnotatedExample, Sentiment, NUM_CLASSES};
use crate::span_extract::{Polarity, PolarityLexicon};

/// `(surface, type)`; the coreference id is the pool index.
pub const ENTITY_POOL: [(&str, &str); 12] = [
    ("apple", "ORG"),
    ("netflix", "ORG"),
    ("tesla", "ORG"),
    ("british airways", "ORG"),
    ("amazon", "ORG"),
    ("google", "ORG"),
    ("angela merkel", "PERSON"),
    ("elon musk", "PERSON"),
    ("london", "GPE"),
    ("paris", "GPE"),
    ("SPY", "ORG"),
    ("heathrow", "FAC"),
];

const VERBS: [&str; 9] = ["shares", "reported", "announced", "posted", "showed", "delivered", "saw", "had", "got"];
const NOUNS: [&str; 10] =
    ["results", "earnings", "service", "sales", "performance", "quarter", "news", "flight", "staff", "outlook"];
const CONNECTORS: [&str; 4] = ["and", "but", "while", "with"];
const FILLERS: [&str; 6] = ["today", "this week", "on monday", "last quarter", "again", "overall"];

/// Majority polarity over positive/negative lexicon hits; ties are neutral.
pub fn lexicon_majority_label(tokens: &[String], lexicon: &PolarityLexicon) -> Sentiment {
    let (mut pos, mut neg) = (0usize, 0usize);
    for t in tokens {
        match lexicon.polarity(t) {
            Some(Polarity::Positive) => pos += 1,
            Some(Polarity::Negative) => neg += 1,
            _ => {}
        }
    }
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Sentiment::Positive,
        std::cmp::Ordering::Less => Sentiment::Negative,
        std::cmp::Ordering::Equal => Sentiment::Neutral,
    }
}

pub fn synth_corpus(n: usize, seed: u64) -> Vec<AnnotatedExample> {
    synth_corpus_with_tally(n, seed).0
}

/// Generate `n` examples and the generator's own per-class tally.
pub fn synth_corpus_with_tally(n: usize, seed: u64) -> (Vec<AnnotatedExample>, [usize; NUM_CLASSES]) {
    let lexicon = PolarityLexicon::builtin();
    let pick = |p: Polarity| -> Vec<&str> { lexicon.words(p).iter().map(String::as_str).collect() };
    let (pos, neg, neu) = (pick(Polarity::Positive), pick(Polarity::Negative), pick(Polarity::Neutral));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = [0usize; NUM_CLASSES];
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let target = Sentiment::ALL[i % NUM_CLASSES];
        let (ent_idx, &(surface, ty)) = {
            let k = rng.gen_range(0..ENTITY_POOL.len());
            (k, &ENTITY_POOL[k])
        };

        // sentiment words: (majority pool, count), (minority pool, count)
        let words: Vec<&str> = match target {
            Sentiment::Neutral => {
                let k = rng.gen_range(1..=2);
                (0..k).map(|_| *neu.choose(&mut rng).unwrap()).collect()
            }
            Sentiment::Positive | Sentiment::Negative => {
                let (major, minor) = if target == Sentiment::Positive { (&pos, &neg) } else { (&neg, &pos) };
                let mixed = rng.gen_bool(0.2);
                let n_major = if mixed { 2 } else { rng.gen_range(1..=2) };
                let mut w: Vec<&str> = (0..n_major).map(|_| *major.choose(&mut rng).unwrap()).collect();
                if mixed {
                    let at = rng.gen_range(0..=w.len());
                    w.insert(at, minor.choose(&mut rng).unwrap());
                }
                w
            }
        };

        let mut parts: Vec<&str> = vec![surface, VERBS.choose(&mut rng).unwrap()];
        for (k, w) in words.iter().enumerate() {
            if k > 0 {
                parts.push(CONNECTORS.choose(&mut rng).unwrap());
            }
            parts.push(w);
            if rng.gen_bool(0.5) {
                parts.push(NOUNS.choose(&mut rng).unwrap());
            }
        }
        if rng.gen_bool(0.5) {
            parts.push(FILLERS.choose(&mut rng).unwrap());
        }

        let tokens = tokenize(&parts.join(" "));
        let label = lexicon_majority_label(&tokens, &lexicon);
        debug_assert_eq!(label, target);
        tally[label.id()] += 1;
        examples.push(AnnotatedExample {
            tokens,
            entity_surface: surface.to_string(),
            entity_type: ty.to_string(),
            coref_id: ent_idx as u64,
            label,
        });
    }
    examples.shuffle(&mut rng);
    (examples, tally)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::stats;

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(synth_corpus(4, 42), synth_corpus(4, 42));
        assert_ne!(synth_corpus(30, 1), synth_corpus(30, 2));
    }

    #[test]
    fn template_words_are_outside_the_lexicon() {
        let lex = PolarityLexicon::builtin();
        let filler_tokens = VERBS
            .iter()
            .chain(&NOUNS)
            .chain(&CONNECTORS)
            .chain(&FILLERS)
            .chain(ENTITY_POOL.iter().map(|(s, _)| s))
            .flat_map(|s| tokenize(s));
        for t in filler_tokens {
            assert!(!lex.contains(&t), "{t} is a lexicon word");
        }
    }

    #[test]
    fn stratified_counts() {
        let (ex, tally) = synth_corpus_with_tally(300, 7);
        let s = stats(&ex);
        assert_eq!(s.class_counts, tally);
        assert!(tally.iter().all(|&c| c >= 30));
    }

    #[test]
    fn labels_match_an_independent_recount() {
        let lex = PolarityLexicon::builtin();
        for ex in synth_corpus(500, 11) {
            let pos = ex.tokens.iter().filter(|t| lex.words(Polarity::Positive).contains(*t)).count();
            let neg = ex.tokens.iter().filter(|t| lex.words(Polarity::Negative).contains(*t)).count();
            let expected = if pos > neg {
                2
            } else if neg > pos {
                0
            } else {
                1
            };
            assert_eq!(ex.label.id(), expected, "{:?}", ex.tokens);
            if pos > 0 && neg == 0 {
                assert_eq!(ex.label, Sentiment::Positive);
            }
        }
    }

    #[test]
    fn same_surface_same_cluster() {
        let mut seen = std::collections::HashMap::new();
        for ex in synth_corpus(200, 3) {
            let id = *seen.entry(ex.entity_surface.clone()).or_insert(ex.coref_id);
            assert_eq!(id, ex.coref_id);
        }
    }
}
