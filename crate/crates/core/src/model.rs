//! The full classifier: encoder, span graph attention, entity/span
//! interaction, cluster memory and the fused head, with ablation switches.

use std::ops::Range;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::config::ModelConfig;
use crate::corpus::{tokenize, AnnotatedExample, ClassWeights, Vocabulary, CLS_ID, SEP_ID, SPECIALS};
use crate::encoder::{encode, init_encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::gat::{gat_forward, init_gat, Adjacency, EdgeAttention, GatConfig};
use crate::head::{self, AuxLosses};
use crate::interaction_memory::{
    entity_to_sentence, init_entity_sentence, init_entity_span, init_memory, memory_read_update, sentiment_to_entity,
    MemoryBank,
};
use crate::span_extract::{align_entity, fallback_span, sentiment_spans, span_membership, PolarityLexicon, Span};
use crate::span_graph::{build_graph, CooccurrenceTable, EdgeSelection, SpanGraph};

/// One example turned into model inputs.
#[derive(Clone, Debug)]
pub struct PreparedExample {
    /// `[CLS] sentence [SEP] entity [SEP]` ids.
    pub framed_ids: Vec<usize>,
    pub framed_tokens: Vec<String>,
    /// Sentence tokens after truncation.
    pub tokens: Vec<String>,
    /// Positions of the entity copy inside the framed sequence.
    pub entity_frame: Range<usize>,
    pub entity_span: Span,
    pub entity_placeholder: bool,
    pub sentiment_spans: Vec<Span>,
    pub graph: SpanGraph,
    pub adjacency: Adjacency,
    pub span_targets: Vec<f64>,
    pub label: usize,
    pub coref_id: u64,
}

impl PreparedExample {
    pub fn n_tokens(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `[1, 3]`.
    pub logits: Var,
    pub aux: AuxLosses,
    pub span_logits: Option<Var>,
    pub pair_logits: Option<Var>,
    pub rel_logits: Option<Var>,
    /// `encoder_attn[layer][head]`: `[L, L]` over the framed sequence.
    pub encoder_attn: Vec<Vec<Tensor>>,
    pub gat_attn: Vec<Vec<EdgeAttention>>,
    /// Per head `[1, k]` over sentiment spans.
    pub entity_span_attn: Vec<Tensor>,
    pub entity_sentence_attn: Vec<Tensor>,
    /// `[1, d]` memory state fed to the classifier.
    pub memory: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub struct SpanEit {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub cooc: CooccurrenceTable,
    pub lexicon: PolarityLexicon,
    pub params: ParamStore,
}

impl SpanEit {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, cooc: CooccurrenceTable, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(&config, vocab.len(), &mut rng)?;
        Ok(Self { config, vocab, cooc, lexicon: PolarityLexicon::builtin(), params })
    }

    /// Assemble from stored parts; parameter names and shapes must match a
    /// fresh model of the same configuration.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        cooc: CooccurrenceTable,
        params: ParamStore,
    ) -> Result<Self> {
        let template = Self::new(config, vocab, cooc, 0)?;
        let expected = &template.params;
        for (name, p) in expected.iter() {
            let found = params.get(name).ok_or_else(|| Error::Shape {
                name: name.to_string(),
                expected: p.value.shape().to_vec(),
                found: vec![],
            })?;
            if found.value.shape() != p.value.shape() {
                return Err(Error::Shape {
                    name: name.to_string(),
                    expected: p.value.shape().to_vec(),
                    found: found.value.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.names().find(|n| expected.get(n).is_none()) {
            return Err(Error::Shape {
                name: extra.to_string(),
                expected: vec![],
                found: params.value(extra)?.shape().to_vec(),
            });
        }
        let mut model = template;
        for (name, p) in model.params.iter_mut() {
            p.value = params.value(name)?.clone();
        }
        Ok(model)
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        encoder_config(&self.config, self.vocab.len())
    }

    pub fn gat_config(&self) -> Result<GatConfig> {
        GatConfig::for_width(self.config.hidden_dim, self.config.gat_layers, self.config.gat_heads)
    }

    pub fn new_memory_bank(&self) -> MemoryBank {
        MemoryBank::new(self.config.memory_size, self.config.hidden_dim).expect("validated memory size")
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn prepare(&self, ex: &AnnotatedExample) -> Result<PreparedExample> {
        let cfg = &self.config;
        if ex.tokens.is_empty() {
            return Err(Error::contract("example has no tokens"));
        }
        let mut ent_tokens = tokenize(&ex.entity_surface);
        if ent_tokens.is_empty() {
            return Err(Error::contract("example has an empty entity surface"));
        }
        // [CLS] x [SEP] e [SEP] with at least one sentence token
        let ent_budget = cfg.max_len - 4;
        if ent_tokens.len() > ent_budget {
            warn!("entity `{}` truncated to {ent_budget} tokens", ex.entity_surface);
            ent_tokens.truncate(ent_budget);
        }
        let sent_budget = cfg.max_len - 3 - ent_tokens.len();
        let mut tokens = ex.tokens.clone();
        if tokens.len() > sent_budget {
            warn!("sentence of {} tokens truncated to {sent_budget}", tokens.len());
            tokens.truncate(sent_budget);
        }
        let n = tokens.len();

        let mut framed_tokens = Vec::with_capacity(n + ent_tokens.len() + 3);
        framed_tokens.push(SPECIALS[CLS_ID].to_string());
        framed_tokens.extend(tokens.iter().cloned());
        framed_tokens.push(SPECIALS[SEP_ID].to_string());
        let ent_start = framed_tokens.len();
        framed_tokens.extend(ent_tokens.iter().cloned());
        let entity_frame = ent_start..framed_tokens.len();
        framed_tokens.push(SPECIALS[SEP_ID].to_string());
        let framed_ids = self.vocab.encode(&framed_tokens);

        let aligned = align_entity(&tokens, &ex.entity_surface)?;
        let spans = if cfg.ablation.use_span {
            sentiment_spans(&tokens, &self.lexicon, cfg.window, cfg.num_spans)?
        } else {
            vec![fallback_span(n, cfg.window)]
        };
        let graph = build_graph(&tokens, &ex.entity_surface, aligned.span, &spans, &self.cooc, cfg.tau)?;
        let adjacency = Adjacency::from_graph(&graph, EdgeSelection::default(), true)?;
        let span_targets = span_membership(n, &spans);
        Ok(PreparedExample {
            framed_ids,
            framed_tokens,
            tokens,
            entity_frame,
            entity_span: aligned.span,
            entity_placeholder: aligned.placeholder,
            sentiment_spans: spans,
            graph,
            adjacency,
            span_targets,
            label: ex.label.id(),
            coref_id: ex.coref_id,
        })
    }

    pub fn prepare_all(&self, examples: &[AnnotatedExample]) -> Result<Vec<PreparedExample>> {
        examples.iter().map(|e| self.prepare(e)).collect()
    }

    /// Forward pass for one example. `bank` is read and updated when memory
    /// is enabled; `step` orders memory writes.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        ex: &PreparedExample,
        bank: &mut MemoryBank,
        step: u64,
        train: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        self.forward_with(tape, &self.params, ex, bank, step, train, rng)
    }

    /// As [`SpanEit::forward`] but reading parameters from `params`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        ex: &PreparedExample,
        bank: &mut MemoryBank,
        step: u64,
        train: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput> {
        let cfg = &self.config;
        let flags = cfg.ablation;
        let d = cfg.hidden_dim;
        let enc = encode(tape, params, &self.encoder_config(), &ex.framed_ids, train, rng)?;
        let h = enc.hidden;

        if flags.only_text {
            let cls = tape.gather_rows(h, &[0])?;
            let logits = head::classify(tape, params, &[cls], cfg.dropout, train, rng)?;
            return Ok(ForwardOutput {
                logits,
                aux: AuxLosses::default(),
                span_logits: None,
                pair_logits: None,
                rel_logits: None,
                encoder_attn: enc.attn,
                gat_attn: vec![],
                entity_span_attn: vec![],
                entity_sentence_attn: vec![],
                memory: None,
            });
        }

        let n = ex.n_tokens();
        let rows: Vec<usize> = (1..=n).collect();
        let tokens = tape.gather_rows(h, &rows)?;
        let mut node_parts = vec![tokens];
        let entity_row = if flags.use_entities {
            tape.mean_rows(tokens, ex.entity_span.start, ex.entity_span.end)?
        } else {
            tape.gather_rows(h, &[0])?
        };
        node_parts.push(entity_row);
        for s in &ex.sentiment_spans {
            node_parts.push(tape.mean_rows(tokens, s.start, s.end)?);
        }
        let nodes = tape.concat_rows(&node_parts)?;

        let (g, gat_attn) = if flags.use_gat {
            let out = gat_forward(tape, params, &self.gat_config()?, nodes, &ex.adjacency)?;
            (out.hidden, out.attention)
        } else {
            (nodes, vec![])
        };

        let ent_node = ex.graph.entity_node();
        let sent_nodes: Vec<usize> = ex.graph.sentiment_nodes().collect();
        let h_e = tape.gather_rows(g, &[ent_node])?;
        let h_s = tape.gather_rows(g, &sent_nodes)?;

        let (z, e2s_attn) = sentiment_to_entity(tape, params, h_e, h_s, cfg.heads)?;
        let (z_sent, sent_attn) = if flags.use_entities {
            entity_to_sentence(tape, params, h_e, cfg.heads)?
        } else {
            (tape.leaf(Tensor::zeros(&[1, d])), vec![])
        };
        let (m, memory) = if flags.use_memory {
            let m = memory_read_update(tape, params, bank, ex.coref_id, h_e, step)?;
            (m, Some(tape.value(m).clone()))
        } else {
            (tape.leaf(Tensor::zeros(&[1, d])), None)
        };
        let logits = head::fuse_classify(tape, params, h_e, z, z_sent, m, cfg.dropout, train, rng)?;

        let span_logits = if flags.use_span {
            let tok_rows: Vec<usize> = (0..n).collect();
            let t = tape.gather_rows(g, &tok_rows)?;
            Some(head::span_logits(tape, params, t)?)
        } else {
            None
        };
        let pair_logits = head::pair_logits(tape, params, h_e, h_s)?;
        let rel_logits = head::rel_logits(tape, params, h_s)?;
        let aux = head::aux_losses(
            tape,
            span_logits.map(|l| (l, ex.span_targets.as_slice())),
            Some(pair_logits),
            Some(rel_logits),
        )?;
        Ok(ForwardOutput {
            logits,
            aux,
            span_logits,
            pair_logits: Some(pair_logits),
            rel_logits: Some(rel_logits),
            encoder_attn: enc.attn,
            gat_attn,
            entity_span_attn: e2s_attn,
            entity_sentence_attn: sent_attn,
            memory,
        })
    }

    /// Weighted cross-entropy plus the ablation-adjusted auxiliary terms.
    pub fn loss(&self, tape: &mut Tape, out: &ForwardOutput, label: usize, weights: &ClassWeights) -> Result<Var> {
        head::total_loss(tape, out.logits, label, weights, &out.aux, &self.config.effective_loss())
    }
}

pub fn encoder_config(cfg: &ModelConfig, vocab_size: usize) -> EncoderConfig {
    EncoderConfig {
        vocab_size,
        d_model: cfg.hidden_dim,
        n_layers: cfg.enc_layers,
        n_heads: cfg.heads,
        max_len: cfg.max_len,
        dropout_p: cfg.dropout,
    }
}

/// Parameters for the blocks enabled in `cfg`, in a fixed order.
pub fn init_params<R: Rng + ?Sized>(cfg: &ModelConfig, vocab_size: usize, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let d = cfg.hidden_dim;
    let flags = cfg.ablation;
    let mut store = ParamStore::new();
    init_encoder(&mut store, &encoder_config(cfg, vocab_size), rng)?;
    if flags.only_text {
        head::init_classifier(&mut store, d, 1, rng)?;
        return Ok(store);
    }
    if flags.use_gat {
        init_gat(&mut store, &GatConfig::for_width(d, cfg.gat_layers, cfg.gat_heads)?, rng)?;
    }
    init_entity_span(&mut store, d, rng)?;
    if flags.use_entities {
        init_entity_sentence(&mut store, d, rng)?;
    }
    if flags.use_memory {
        init_memory(&mut store, d, rng)?;
    }
    head::init_classifier(&mut store, d, 4, rng)?;
    if flags.use_span {
        head::init_span_head(&mut store, d, rng)?;
    }
    head::init_pair_head(&mut store, d, rng)?;
    head::init_rel_head(&mut store, d, rng)?;
    Ok(store)
}

/// Index of the largest logit; the first wins ties.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AblationFlags;
    use crate::corpus::{synth_corpus, Sentiment};

    fn small(flags: AblationFlags) -> ModelConfig {
        ModelConfig { hidden_dim: 8, heads: 2, gat_heads: 2, ablation: flags, ..ModelConfig::default() }
    }

    fn model(flags: AblationFlags) -> SpanEit {
        let data = synth_corpus(30, 1);
        let vocab = Vocabulary::build(&data, 1);
        let cooc = crate::span_graph::build_cooccurrence(&data, &PolarityLexicon::builtin());
        SpanEit::new(small(flags), vocab, cooc, 7).unwrap()
    }

    fn example(text: &str, ent: &str) -> AnnotatedExample {
        AnnotatedExample {
            tokens: tokenize(text),
            entity_surface: ent.into(),
            entity_type: "ORG".into(),
            coref_id: 3,
            label: Sentiment::Positive,
        }
    }

    #[test]
    fn framing_layout() {
        let m = model(AblationFlags::FULL);
        let p = m.prepare(&example("netflix gains subscribers", "netflix")).unwrap();
        assert_eq!(p.framed_tokens, ["[CLS]", "netflix", "gains", "subscribers", "[SEP]", "netflix", "[SEP]"]);
        assert_eq!(p.entity_frame, 5..6);
        assert_eq!(p.framed_ids[0], CLS_ID);
        assert_eq!(p.span_targets.len(), 3);
    }

    #[test]
    fn long_sentences_are_truncated() {
        let m = model(AblationFlags::FULL);
        let long = vec!["apple"; 80].join(" ");
        let p = m.prepare(&example(&long, "apple")).unwrap();
        assert_eq!(p.framed_ids.len(), m.config.max_len);
        assert_eq!(p.n_tokens(), m.config.max_len - 4);
    }

    #[test]
    fn every_variant_produces_finite_logits() {
        for (name, flags) in AblationFlags::variants() {
            let m = model(flags);
            let p = m.prepare(&example("apple shares surge strong", "apple")).unwrap();
            let mut tape = Tape::new();
            let mut bank = m.new_memory_bank();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let out = m.forward(&mut tape, &p, &mut bank, 0, false, &mut rng).unwrap();
            assert_eq!(tape.shape(out.logits), &[1, 3], "{name}");
            assert!(tape.value(out.logits).is_finite(), "{name}");
            let loss = m.loss(&mut tape, &out, p.label, &ClassWeights::uniform()).unwrap();
            assert!(tape.value(loss).item() >= 0.0);
            assert_eq!(bank.len(), usize::from(flags.use_memory), "{name}");
        }
    }

    #[test]
    fn removing_blocks_removes_parameters() {
        let full = model(AblationFlags::FULL).param_count();
        for (name, flags) in AblationFlags::variants().into_iter().skip(1) {
            assert!(model(flags).param_count() < full, "{name}");
        }
    }

    #[test]
    fn from_parts_names_the_first_mismatch() {
        let a = model(AblationFlags::FULL);
        let mut cfg = a.config.clone();
        cfg.hidden_dim = 4;
        let err = SpanEit::from_parts(cfg, a.vocab.clone(), a.cooc.clone(), a.params.clone()).unwrap_err();
        match err {
            Error::Shape { name, .. } => assert_eq!(name, "encoder.embed.tokens"),
            e => panic!("{e}"),
        }
        let same = SpanEit::from_parts(a.config.clone(), a.vocab.clone(), a.cooc.clone(), a.params.clone()).unwrap();
        assert_eq!(same.param_count(), a.param_count());
    }

    #[test]
    fn argmax_is_shift_invariant() {
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
        assert_eq!(argmax(&[0.1 + 7.0, 0.5 + 7.0, 0.2 + 7.0]), 1);
    }
}
