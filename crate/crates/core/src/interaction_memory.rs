//! Entity/span cross-attention and the coreference-indexed memory bank.
//!
//! The bank maps a coreference cluster to a GRU state. Each example reads
//! its cluster's state (zero on a cold start), runs one GRU step with the
//! entity embedding as input and stores the result, which is also what the
//! classifier consumes. Stored states are detached constants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::autodiff::{gru_cell, init_gru, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{init_mha, mha};

pub const E2S_PREFIX: &str = "interact.entity_span";
pub const SENT_PREFIX: &str = "interact.entity_sentence";
pub const GRU_PREFIX: &str = "memory.gru";
pub const DEFAULT_MEMORY_SIZE: usize = 100;

pub fn init_entity_span<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_mha(store, E2S_PREFIX, d, rng)
}

pub fn init_entity_sentence<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_mha(store, SENT_PREFIX, d, rng)
}

/// GRU over entity embeddings with the update-gate bias at +1.
pub fn init_memory<R: Rng + ?Sized>(store: &mut ParamStore, d: usize, rng: &mut R) -> Result<()> {
    init_gru(store, GRU_PREFIX, d, d, 1.0, rng)
}

/// Entity query over sentiment-span keys and values.
///
/// `h_e` is `[1, d]`, `h_s` is `[k, d]`; returns `z: [1, d]` and one `[1, k]`
/// attention row per head.
pub fn sentiment_to_entity(
    tape: &mut Tape,
    store: &ParamStore,
    h_e: Var,
    h_s: Var,
    heads: usize,
) -> Result<(Var, Vec<Tensor>)> {
    if tape.shape(h_e)[0] != 1 {
        return Err(Error::dim(format!("entity query must be one row, got {:?}", tape.shape(h_e))));
    }
    let o = mha(tape, store, E2S_PREFIX, h_e, h_s, heads)?;
    Ok((o.out, o.attn))
}

/// Self-attention over the entity rows `[m, d]`, mean-pooled to `[1, d]`.
pub fn entity_to_sentence(
    tape: &mut Tape,
    store: &ParamStore,
    h_entities: Var,
    heads: usize,
) -> Result<(Var, Vec<Tensor>)> {
    let m = tape.shape(h_entities)[0];
    let o = mha(tape, store, SENT_PREFIX, h_entities, h_entities, heads)?;
    let pooled = if m == 1 { o.out } else { tape.mean_rows(o.out, 0, m)? };
    Ok((pooled, o.attn))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemorySlot {
    pub vector: Vec<f64>,
    pub last_used: u64,
}

/// Capacity-bounded cluster memory with least-recently-used eviction (ties
/// go to the smaller cluster id).
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    slots: BTreeMap<u64, MemorySlot>,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("memory size must be >= 1"));
        }
        Ok(Self { capacity, dim, slots: BTreeMap::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, coref_id: u64) -> Option<&MemorySlot> {
        self.slots.get(&coref_id)
    }

    pub fn keys(&self) -> impl Iterator<Item = u64> + '_ {
        self.slots.keys().copied()
    }

    /// Stored state for `coref_id`, or zeros.
    pub fn read(&self, coref_id: u64) -> Vec<f64> {
        self.slots.get(&coref_id).map(|s| s.vector.clone()).unwrap_or_else(|| vec![0.0; self.dim])
    }

    pub fn write(&mut self, coref_id: u64, vector: Vec<f64>, step: u64) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::dim(format!("memory vector of width {} in a bank of width {}", vector.len(), self.dim)));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!("non-finite memory state for cluster {coref_id}")));
        }
        if !self.slots.contains_key(&coref_id) && self.slots.len() >= self.capacity {
            let victim = self
                .slots
                .iter()
                .min_by_key(|(&id, s)| (s.last_used, id))
                .map(|(&id, _)| id)
                .expect("bank is full so non-empty");
            self.slots.remove(&victim);
        }
        self.slots.insert(coref_id, MemorySlot { vector, last_used: step });
        Ok(())
    }

    pub fn reset(&mut self) {
        self.slots.clear();
    }

    /// `coref_id,last_used,v0,...` rows in cluster order.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, s) in &self.slots {
            let _ = write!(out, "{id},{}", s.last_used);
            for v in &s.vector {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// One GRU step for `coref_id` with input `h_e: [1, d]`; stores and returns
/// the new state.
pub fn memory_read_update(
    tape: &mut Tape,
    store: &ParamStore,
    bank: &mut MemoryBank,
    coref_id: u64,
    h_e: Var,
    step: u64,
) -> Result<Var> {
    let d = bank.dim();
    let prev = tape.leaf(Tensor::matrix(1, d, bank.read(coref_id))?);
    let m_new = gru_cell(tape, store, GRU_PREFIX, h_e, prev)?;
    bank.write(coref_id, tape.value(m_new).data().to_vec(), step)?;
    Ok(m_new)
}
