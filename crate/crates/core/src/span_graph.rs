//! Token/span graphs: a syntactic edge set (token adjacency plus span
//! membership), a semantic edge set (entity span to sentiment span), and
//! their union as seen by graph attention.
//!
//! Node ids: tokens `0..n`, then span nodes `n..n+m` with the entity span
//! first followed by the sentiment spans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::corpus::{tokenize, AnnotatedExample};
use crate::error::{Error, Result};
use crate::span_extract::{PolarityLexicon, Span};

pub const DEFAULT_TAU: u64 = 1;

/// Counts of `(entity surface, lexicon word)` pairs seen in the same
/// training sentence. Each distinct word counts once per sentence.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CooccurrenceTable {
    counts: BTreeMap<(String, String), u64>,
}

impl CooccurrenceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, example: &AnnotatedExample, lexicon: &PolarityLexicon) {
        let entity = entity_key(&example.entity_surface);
        let words: BTreeSet<&String> = example.tokens.iter().filter(|t| lexicon.contains(t)).collect();
        for w in words {
            *self.counts.entry((entity.clone(), w.clone())).or_insert(0) += 1;
        }
    }

    pub fn count(&self, entity_surface: &str, word: &str) -> u64 {
        self.counts.get(&(entity_key(entity_surface), word.to_string())).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.counts.iter().map(|((e, w), &c)| (e.as_str(), w.as_str(), c))
    }

    pub(crate) fn insert_raw(&mut self, entity: String, word: String, count: u64) {
        self.counts.insert((entity, word), count);
    }
}

fn entity_key(surface: &str) -> String {
    tokenize(surface).join(" ")
}

/// Accumulate co-occurrence counts. Only ever call this on the training
/// split.
pub fn build_cooccurrence(train: &[AnnotatedExample], lexicon: &PolarityLexicon) -> CooccurrenceTable {
    let mut table = CooccurrenceTable::new();
    for ex in train {
        table.add(ex, lexicon);
    }
    table
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpanGraph {
    pub n_token_nodes: usize,
    pub span_nodes: Vec<Span>,
    /// Undirected edges stored as `(min, max)`.
    pub edges_syn: BTreeSet<(usize, usize)>,
    pub edges_sem: BTreeSet<(usize, usize)>,
    /// `ln(1 + count)` for each semantic edge (best-supported word in the
    /// sentiment span). Recorded for inspection; attention does not use it.
    pub sem_weights: BTreeMap<(usize, usize), f64>,
    /// Semantic edges whose corpus count reaches `tau`.
    pub sem_corpus_backed: BTreeSet<(usize, usize)>,
}

fn undirected(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

/// Which edge sets feed attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EdgeSelection {
    pub syntactic: bool,
    pub semantic: bool,
}

impl Default for EdgeSelection {
    fn default() -> Self {
        Self { syntactic: true, semantic: true }
    }
}

impl SpanGraph {
    pub fn num_nodes(&self) -> usize {
        self.n_token_nodes + self.span_nodes.len()
    }

    /// Node id of the entity span.
    pub fn entity_node(&self) -> usize {
        self.n_token_nodes
    }

    /// Node ids of the sentiment spans.
    pub fn sentiment_nodes(&self) -> std::ops::Range<usize> {
        self.n_token_nodes + 1..self.num_nodes()
    }

    pub fn union_edges(&self, sel: EdgeSelection) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        if sel.syntactic {
            out.extend(self.edges_syn.iter().copied());
        }
        if sel.semantic {
            out.extend(self.edges_sem.iter().copied());
        }
        out
    }

    /// Sorted neighbor lists over the selected edges, optionally with self
    /// loops.
    pub fn neighbors(&self, sel: EdgeSelection, include_self: bool) -> Vec<Vec<usize>> {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.num_nodes()];
        for (a, b) in self.union_edges(sel) {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        if include_self {
            for (i, set) in adj.iter_mut().enumerate() {
                set.insert(i);
            }
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// `SYN u v` / `SEM u v` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (u, v) in &self.edges_syn {
            let _ = writeln!(out, "SYN {u} {v}");
        }
        for (u, v) in &self.edges_sem {
            let _ = writeln!(out, "SEM {u} {v}");
        }
        out
    }
}

/// Build the graph for one sentence.
pub fn build_graph(
    tokens: &[String],
    entity_surface: &str,
    entity_span: Span,
    sentiment_spans: &[Span],
    cooc: &CooccurrenceTable,
    tau: u64,
) -> Result<SpanGraph> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::contract("build_graph on an empty sentence"));
    }
    if tau == 0 {
        return Err(Error::contract("tau must be >= 1"));
    }
    for s in std::iter::once(&entity_span).chain(sentiment_spans) {
        if s.start >= s.end || s.end > n {
            return Err(Error::contract(format!("span {s} out of bounds for {n} tokens")));
        }
    }

    let mut span_nodes = Vec::with_capacity(1 + sentiment_spans.len());
    span_nodes.push(entity_span);
    span_nodes.extend_from_slice(sentiment_spans);

    let mut edges_syn = BTreeSet::new();
    for i in 1..n {
        edges_syn.insert((i - 1, i));
    }
    for (k, s) in span_nodes.iter().enumerate() {
        for t in s.start..s.end {
            edges_syn.insert(undirected(n + k, t));
        }
    }

    let ent = n;
    let mut edges_sem = BTreeSet::new();
    let mut sem_weights = BTreeMap::new();
    let mut sem_corpus_backed = BTreeSet::new();
    for (k, s) in sentiment_spans.iter().enumerate() {
        let node = n + 1 + k;
        let best = tokens[s.start..s.end].iter().map(|w| cooc.count(entity_surface, w)).max().unwrap_or(0);
        // in-sentence pairs are always kept, so tau only decides which
        // edges the corpus also backs
        let e = undirected(ent, node);
        edges_sem.insert(e);
        if best >= tau {
            sem_corpus_backed.insert(e);
        }
        sem_weights.insert(e, (1.0 + best as f64).ln());
    }

    Ok(SpanGraph { n_token_nodes: n, span_nodes, edges_syn, edges_sem, sem_weights, sem_corpus_backed })
}
